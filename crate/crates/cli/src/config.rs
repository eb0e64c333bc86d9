//! Flat `key = value` configuration with `[section]` headers.
//!
//! Precedence: built-in defaults, then `RFML_SEED`, then the config file,
//! then command-line overrides. Unknown sections or keys are rejected, and
//! every run writes a manifest echoing the fully resolved configuration in
//! the same format, so a manifest is itself a valid config file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rfml_core::attack::AttackFamily;
use rfml_core::classifier::NormMode;
use rfml_core::experiments::SweepConfig;
use rfml_core::modem::ModScheme;

use crate::CliError;

#[derive(Debug, Clone)]
pub struct DatasetSettings {
    pub input_size: usize,
    pub examples_per_class_per_snr: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ModelSettings {
    pub norm_mode: NormMode,
    pub dropout_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

/// Experiment overrides; `None` falls back to the per-experiment defaults.
#[derive(Debug, Clone, Default)]
pub struct ExperimentSettings {
    pub seed: Option<u64>,
    pub trials_per_point: Option<usize>,
    pub families: Option<Vec<AttackFamily>>,
    pub include_baseline: Option<bool>,
    pub es_ej_grid_db: Option<Vec<f64>>,
    pub es_n0_grid_db: Option<Vec<f64>>,
    pub cfo_grid: Option<Vec<f64>>,
    pub time_offsets: Option<Vec<usize>>,
    pub schemes: Option<Vec<ModScheme>>,
    pub span_symbols: Option<usize>,
    pub rolloff: Option<f64>,
    pub dither_es_n0_db: Option<Option<f64>>,
    pub max_examples: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub dataset: DatasetSettings,
    pub model: ModelSettings,
    pub train: TrainSettings,
    pub experiment: ExperimentSettings,
}

impl Default for Settings {
    fn default() -> Self {
        let seed = std::env::var("RFML_SEED")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(0);
        Settings {
            dataset: DatasetSettings {
                input_size: 128,
                examples_per_class_per_snr: 220,
                seed,
            },
            model: ModelSettings {
                norm_mode: NormMode::BatchNorm,
                dropout_rate: 0.5,
            },
            train: TrainSettings {
                learning_rate: 0.001,
                batch_size: 512,
                max_epochs: 50,
                patience: 5,
                seed,
            },
            experiment: ExperimentSettings {
                seed: Some(seed),
                ..ExperimentSettings::default()
            },
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("invalid value '{value}' for {key}")))
}

fn parse_f64_list(key: &str, value: &str) -> Result<Vec<f64>, CliError> {
    value
        .split(',')
        .map(|v| parse::<f64>(key, v.trim()))
        .collect()
}

/// Usize lists accept `a..b` ranges (half-open) alongside plain entries.
fn parse_usize_list(key: &str, value: &str) -> Result<Vec<usize>, CliError> {
    let mut out = Vec::new();
    for item in value.split(',') {
        let item = item.trim();
        if let Some((a, b)) = item.split_once("..") {
            let lo: usize = parse(key, a.trim())?;
            let hi: usize = parse(key, b.trim())?;
            if lo >= hi {
                return Err(CliError::Config(format!("empty range '{item}' for {key}")));
            }
            out.extend(lo..hi);
        } else {
            out.push(parse(key, item)?);
        }
    }
    Ok(out)
}

fn parse_schemes(value: &str) -> Result<Vec<ModScheme>, CliError> {
    value
        .split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|e| CliError::Config(format!("{e}")))
        })
        .collect()
}

fn parse_families(value: &str) -> Result<Vec<AttackFamily>, CliError> {
    value
        .split(',')
        .map(|v| match v.trim() {
            "fgsm" => Ok(AttackFamily::Fgsm),
            "gaussian" => Ok(AttackFamily::Gaussian),
            other => Err(CliError::Config(format!("unknown attack family '{other}'"))),
        })
        .collect()
}

impl Settings {
    /// Apply one `section.key = value` assignment.
    pub fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<(), CliError> {
        let full = format!("{section}.{key}");
        match (section, key) {
            ("dataset", "input_size") => self.dataset.input_size = parse(&full, value)?,
            ("dataset", "examples_per_class_per_snr") => {
                self.dataset.examples_per_class_per_snr = parse(&full, value)?
            }
            ("dataset", "seed") => self.dataset.seed = parse(&full, value)?,
            ("model", "norm_mode") => {
                self.model.norm_mode = match value {
                    "batchnorm" => NormMode::BatchNorm,
                    "dropout" => NormMode::Dropout,
                    other => {
                        return Err(CliError::Config(format!("unknown norm mode '{other}'")))
                    }
                }
            }
            ("model", "dropout_rate") => self.model.dropout_rate = parse(&full, value)?,
            ("train", "learning_rate") => self.train.learning_rate = parse(&full, value)?,
            ("train", "batch_size") => self.train.batch_size = parse(&full, value)?,
            ("train", "max_epochs") => self.train.max_epochs = parse(&full, value)?,
            ("train", "patience") => self.train.patience = parse(&full, value)?,
            ("train", "seed") => self.train.seed = parse(&full, value)?,
            ("experiment", "seed") => self.experiment.seed = Some(parse(&full, value)?),
            ("experiment", "trials_per_point") => {
                self.experiment.trials_per_point = Some(parse(&full, value)?)
            }
            ("experiment", "families") => {
                self.experiment.families = Some(parse_families(value)?)
            }
            ("experiment", "include_baseline") => {
                self.experiment.include_baseline = Some(parse(&full, value)?)
            }
            ("experiment", "es_ej_grid_db") => {
                self.experiment.es_ej_grid_db = Some(parse_f64_list(&full, value)?)
            }
            ("experiment", "es_n0_grid_db") => {
                self.experiment.es_n0_grid_db = Some(parse_f64_list(&full, value)?)
            }
            ("experiment", "cfo_grid") => {
                self.experiment.cfo_grid = Some(parse_f64_list(&full, value)?)
            }
            ("experiment", "time_offsets") => {
                self.experiment.time_offsets = Some(parse_usize_list(&full, value)?)
            }
            ("experiment", "schemes") => self.experiment.schemes = Some(parse_schemes(value)?),
            ("experiment", "span_symbols") => {
                self.experiment.span_symbols = Some(parse(&full, value)?)
            }
            ("experiment", "rolloff") => self.experiment.rolloff = Some(parse(&full, value)?),
            ("experiment", "dither_es_n0_db") => {
                self.experiment.dither_es_n0_db = Some(if value == "off" {
                    None
                } else {
                    Some(parse(&full, value)?)
                })
            }
            ("experiment", "max_examples") => {
                self.experiment.max_examples = Some(parse(&full, value)?)
            }
            _ => return Err(CliError::Config(format!("unknown setting '{full}'"))),
        }
        Ok(())
    }

    /// Parse and apply a config file.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        let mut section = String::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!(
                    "{}:{}: expected 'key = value'",
                    path.display(),
                    line_no + 1
                ))
            })?;
            if section.is_empty() {
                return Err(CliError::Config(format!(
                    "{}:{}: setting outside any [section]",
                    path.display(),
                    line_no + 1
                )));
            }
            self.apply(&section, key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Apply one `--set section.key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), CliError> {
        let (path, value) = assignment.split_once('=').ok_or_else(|| {
            CliError::Config(format!("--set expects section.key=value, got '{assignment}'"))
        })?;
        let (section, key) = path.trim().split_once('.').ok_or_else(|| {
            CliError::Config(format!("--set expects section.key=value, got '{assignment}'"))
        })?;
        self.apply(section, key, value.trim())
    }

    /// Resolve the sweep configuration for a named experiment: start from
    /// that experiment's defaults and overlay explicit settings.
    pub fn sweep_for(&self, experiment: &str, input_size: usize) -> Result<SweepConfig, CliError> {
        let seed = self.experiment.seed.unwrap_or(0);
        let mut sweep = match experiment {
            "direct-access" => SweepConfig::direct_access(seed),
            "input-size" => SweepConfig::input_size_study(seed),
            "logit-sweep" => SweepConfig::logit_sweep(seed),
            "mutation" => SweepConfig::mutation(seed),
            "self-protect" => SweepConfig::self_protect(seed),
            "freq-offset" => SweepConfig::freq_offset(seed),
            "time-offset" => SweepConfig::time_offset(seed, input_size),
            other => {
                return Err(CliError::Config(format!(
                    "unknown experiment '{other}' (expected one of: direct-access, input-size, \
                     logit-sweep, mutation, self-protect, freq-offset, time-offset)"
                )))
            }
        };
        let e = &self.experiment;
        if let Some(v) = e.trials_per_point {
            sweep.trials_per_point = v;
        }
        if let Some(v) = &e.families {
            sweep.families = v.clone();
        }
        if let Some(v) = e.include_baseline {
            sweep.include_baseline = v;
        }
        if let Some(v) = &e.es_ej_grid_db {
            sweep.es_ej_grid_db = v.clone();
        }
        if let Some(v) = &e.es_n0_grid_db {
            sweep.es_n0_grid_db = v.clone();
        }
        if let Some(v) = &e.cfo_grid {
            sweep.cfo_grid = v.clone();
        }
        if let Some(v) = &e.time_offsets {
            sweep.time_offsets = v.clone();
        }
        if let Some(v) = &e.schemes {
            sweep.schemes = v.clone();
        }
        if let Some(v) = e.span_symbols {
            sweep.span_symbols = v;
        }
        if let Some(v) = e.rolloff {
            sweep.rolloff = v;
        }
        if let Some(v) = e.dither_es_n0_db {
            sweep.dither_es_n0_db = v;
        }
        if let Some(v) = e.max_examples {
            sweep.max_examples = v;
        }
        Ok(sweep)
    }
}

fn fmt_f64_list(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Render a fully resolved run description. The output is a valid config
/// file; feeding it back via `--config` reproduces the run.
pub struct Manifest {
    sections: BTreeMap<String, Vec<(String, String)>>,
    header: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Manifest {
            sections: BTreeMap::new(),
            header: Vec::new(),
        };
        m.header.push(format!("# rfml {} run manifest", command));
        m.header
            .push(format!("# code version: {}", env!("CARGO_PKG_VERSION")));
        m
    }

    pub fn note(&mut self, text: &str) {
        self.header.push(format!("# {text}"));
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl ToString) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .push((key.to_string(), value.to_string()));
    }

    pub fn set_dataset(&mut self, d: &DatasetSettings) {
        self.set("dataset", "input_size", d.input_size);
        self.set(
            "dataset",
            "examples_per_class_per_snr",
            d.examples_per_class_per_snr,
        );
        self.set("dataset", "seed", d.seed);
    }

    pub fn set_train(&mut self, m: &ModelSettings, t: &TrainSettings) {
        self.set(
            "model",
            "norm_mode",
            match m.norm_mode {
                NormMode::BatchNorm => "batchnorm",
                NormMode::Dropout => "dropout",
            },
        );
        self.set("model", "dropout_rate", m.dropout_rate);
        self.set("train", "learning_rate", t.learning_rate);
        self.set("train", "batch_size", t.batch_size);
        self.set("train", "max_epochs", t.max_epochs);
        self.set("train", "patience", t.patience);
        self.set("train", "seed", t.seed);
    }

    pub fn set_sweep(&mut self, s: &SweepConfig) {
        self.set("experiment", "seed", s.seed);
        self.set("experiment", "trials_per_point", s.trials_per_point);
        self.set(
            "experiment",
            "families",
            s.families
                .iter()
                .map(|f| f.name())
                .collect::<Vec<_>>()
                .join(","),
        );
        self.set("experiment", "include_baseline", s.include_baseline);
        self.set("experiment", "es_ej_grid_db", fmt_f64_list(&s.es_ej_grid_db));
        self.set("experiment", "es_n0_grid_db", fmt_f64_list(&s.es_n0_grid_db));
        self.set("experiment", "cfo_grid", fmt_f64_list(&s.cfo_grid));
        self.set(
            "experiment",
            "time_offsets",
            s.time_offsets
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        self.set(
            "experiment",
            "schemes",
            s.schemes
                .iter()
                .map(|m| m.name())
                .collect::<Vec<_>>()
                .join(","),
        );
        self.set("experiment", "span_symbols", s.span_symbols);
        self.set("experiment", "rolloff", s.rolloff);
        self.set(
            "experiment",
            "dither_es_n0_db",
            s.dither_es_n0_db
                .map_or("off".to_string(), |v| v.to_string()),
        );
        self.set("experiment", "max_examples", s.max_examples);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for line in &self.header {
            let _ = writeln!(out, "{line}");
        }
        for (section, entries) in &self.sections {
            let _ = writeln!(out, "\n[{section}]");
            for (key, value) in entries {
                let _ = writeln!(out, "{key} = {value}");
            }
        }
        out
    }
}
