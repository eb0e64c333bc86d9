//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rfml_core::classifier::{self, Example, ModelConfig, TrainConfig};
use rfml_core::dataset::{self, Dataset, DatasetSpec};
use rfml_core::experiments::{
    records_to_csv, run_direct_access_sweep, run_freq_offset_sweep, run_input_size_study,
    run_logit_sweep, run_mutation_test, run_self_protect_grid, run_time_offset_sweep,
    TrialRecord, TRIAL_CSV_HEADER,
};
use rfml_core::metrics::percentile_summary;
use rfml_core::modem::ModScheme;

use crate::config::{Manifest, Settings};
use crate::CliError;

/// Reporting threshold below which measured bit error rates are treated as
/// unresolvable and omitted from plot data.
const BER_CENSOR: f64 = 1e-6;

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    dataset::load(path).map_err(CliError::from)
}

pub fn gen_dataset(settings: &Settings, out: &Path) -> Result<(), CliError> {
    let spec = DatasetSpec::standard(
        settings.dataset.input_size,
        settings.dataset.examples_per_class_per_snr,
        settings.dataset.seed,
    );
    let ds = dataset::generate(&spec)?;
    dataset::save(&ds, out).map_err(CliError::from)?;

    let mut manifest = Manifest::new("gen-dataset");
    manifest.note(&format!("output: {}", out.display()));
    manifest.set_dataset(&settings.dataset);
    write_file(&out.with_extension("manifest.txt"), &manifest.render())?;

    println!(
        "wrote {}: {} examples ({} schemes x {} SNRs x {} per cell, N={})",
        out.display(),
        ds.len(),
        spec.schemes.len(),
        spec.es_n0_grid_db.len(),
        spec.examples_per_class_per_snr,
        spec.input_size
    );
    Ok(())
}

/// Split with the training seed; experiments evaluate on the same held-out
/// third the trainer never saw.
fn standard_split(ds: &Dataset, seed: u64) -> Result<(Dataset, Dataset, Dataset), CliError> {
    dataset::split(ds, 0.30, 0.05, seed).map_err(CliError::from)
}

pub fn train(settings: &Settings, dataset_path: &Path, out: &Path) -> Result<(), CliError> {
    let ds = load_dataset(dataset_path)?;
    let (train_set, val_set, test_set) = standard_split(&ds, settings.train.seed)?;

    let mut config = ModelConfig::standard(ds.spec.input_size, ds.spec.num_classes());
    config.norm_mode = settings.model.norm_mode;
    config.dropout_rate = settings.model.dropout_rate;
    let tcfg = TrainConfig {
        learning_rate: settings.train.learning_rate,
        batch_size: settings.train.batch_size,
        early_stop_patience: settings.train.patience,
        max_epochs: settings.train.max_epochs,
        seed: settings.train.seed,
        ..TrainConfig::default()
    };

    let (params, history) =
        classifier::train(&train_set.examples, &val_set.examples, &config, &tcfg)?;
    classifier::save_params(&params, out)?;

    let mut history_csv = String::from("epoch,train_loss,val_loss,val_accuracy\n");
    for h in &history {
        let _ = writeln!(
            history_csv,
            "{},{},{},{}",
            h.epoch, h.train_loss, h.val_loss, h.val_accuracy
        );
    }
    write_file(&out.with_extension("history.csv"), &history_csv)?;

    // Held-out accuracy per SNR bin.
    let mut acc_csv = String::from("es_n0_db,accuracy,count\n");
    for &snr in &ds.spec.es_n0_grid_db {
        let slice: Vec<Example> = test_set
            .examples
            .iter()
            .filter(|e| e.es_n0_db == snr)
            .cloned()
            .collect();
        if !slice.is_empty() {
            let (_, acc) = classifier::evaluate(&params, &slice)?;
            let _ = writeln!(acc_csv, "{},{},{}", snr, acc, slice.len());
        }
    }
    write_file(&out.with_extension("acc_vs_snr.csv"), &acc_csv)?;

    let mut manifest = Manifest::new("train");
    manifest.note(&format!("dataset: {}", dataset_path.display()));
    manifest.note(&format!("model out: {}", out.display()));
    manifest.set_train(&settings.model, &settings.train);
    write_file(&out.with_extension("manifest.txt"), &manifest.render())?;

    let (_, test_acc) = classifier::evaluate(&params, &test_set.examples)?;
    println!(
        "trained {} epochs; test accuracy {:.3} over {} held-out examples",
        history.len(),
        test_acc,
        test_set.len()
    );
    println!("model: {}", out.display());
    Ok(())
}

pub struct ExperimentArgs {
    pub name: String,
    pub models: Vec<PathBuf>,
    pub datasets: Vec<PathBuf>,
    pub out_dir: PathBuf,
    pub scheme: Option<String>,
    pub example_index: usize,
    pub attack_es_ej_db: f64,
}

fn single<'a, T>(items: &'a [T], what: &str) -> Result<&'a T, CliError> {
    match items {
        [one] => Ok(one),
        _ => Err(CliError::Config(format!(
            "this experiment takes exactly one {what}"
        ))),
    }
}

/// Pick one held-out example by scheme and index for the per-example
/// studies; the manifest records the selection.
fn select_example(
    test_set: &Dataset,
    scheme: Option<&str>,
    index: usize,
) -> Result<(Example, String), CliError> {
    let scheme: ModScheme = scheme
        .unwrap_or("bpsk")
        .parse()
        .map_err(|e| CliError::Config(format!("{e}")))?;
    let matching: Vec<&Example> = test_set
        .examples
        .iter()
        .filter(|e| e.meta.scheme == scheme)
        .collect();
    let example = matching.get(index).ok_or_else(|| {
        CliError::Validation(format!(
            "scheme {scheme} has only {} held-out examples, index {index} out of range",
            matching.len()
        ))
    })?;
    let provenance = format!("example: scheme={scheme} held_out_index={index}");
    Ok(((*example).clone(), provenance))
}

pub fn experiment(settings: &Settings, args: &ExperimentArgs) -> Result<(), CliError> {
    fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", args.out_dir.display())))?;
    let csv_path = args.out_dir.join(format!("{}.csv", args.name));
    let manifest_path = args.out_dir.join(format!("{}.manifest.txt", args.name));

    let mut manifest = Manifest::new(&args.name);
    for m in &args.models {
        manifest.note(&format!("model: {}", m.display()));
    }
    for d in &args.datasets {
        manifest.note(&format!("dataset: {}", d.display()));
    }
    manifest.set("train", "seed", settings.train.seed);

    let records: Vec<TrialRecord> = match args.name.as_str() {
        "direct-access" => {
            let params = classifier::load_params(single(&args.models, "model")?)?;
            let ds = load_dataset(single(&args.datasets, "dataset")?)?;
            let (_, _, test_set) = standard_split(&ds, settings.train.seed)?;
            let sweep = settings.sweep_for(&args.name, params.config.input_size)?;
            manifest.set_sweep(&sweep);
            run_direct_access_sweep(&params, &test_set.examples, &sweep)?
        }
        "input-size" => {
            if args.models.len() != args.datasets.len() || args.models.len() < 2 {
                return Err(CliError::Config(
                    "input-size needs matched --model/--dataset pairs (two or more)".into(),
                ));
            }
            let mut loaded = Vec::new();
            for (m, d) in args.models.iter().zip(&args.datasets) {
                let params = classifier::load_params(m)?;
                let ds = load_dataset(d)?;
                let (_, _, test_set) = standard_split(&ds, settings.train.seed)?;
                loaded.push((params, test_set));
            }
            let sweep = settings.sweep_for(&args.name, loaded[0].0.config.input_size)?;
            manifest.set_sweep(&sweep);
            let refs: Vec<(&classifier::ModelParams, &[Example])> = loaded
                .iter()
                .map(|(p, t)| (p, t.examples.as_slice()))
                .collect();
            let study = run_input_size_study(&refs, &sweep)?;

            let mut ranking_csv = String::from("es_ej_db,rank,input_size,accuracy\n");
            for row in &study.rankings {
                for (rank, (size, acc)) in row.entries.iter().enumerate() {
                    let _ = writeln!(ranking_csv, "{},{},{},{}", row.es_ej_db, rank, size, acc);
                }
            }
            write_file(&args.out_dir.join("input-size.rankings.csv"), &ranking_csv)?;

            study
                .records_by_model
                .into_iter()
                .flat_map(|(_, records)| records)
                .collect()
        }
        "logit-sweep" => {
            let params = classifier::load_params(single(&args.models, "model")?)?;
            let ds = load_dataset(single(&args.datasets, "dataset")?)?;
            let (_, _, test_set) = standard_split(&ds, settings.train.seed)?;
            let (example, provenance) =
                select_example(&test_set, args.scheme.as_deref(), args.example_index)?;
            manifest.note(&provenance);
            let sweep = settings.sweep_for(&args.name, params.config.input_size)?;
            manifest.set_sweep(&sweep);
            let rows = run_logit_sweep(&params, &example, &sweep)?;

            let num_classes = params.config.num_classes;
            let mut csv = String::from("es_ej_db,delta_logits,predicted");
            for k in 0..num_classes {
                let _ = write!(csv, ",logit_{k}");
            }
            csv.push('\n');
            for row in &rows {
                let _ = write!(csv, "{},{},{}", row.es_ej_db, row.delta_logits, row.predicted);
                for v in &row.logits {
                    let _ = write!(csv, ",{v}");
                }
                csv.push('\n');
            }
            write_file(&csv_path, &csv)?;
            write_file(&manifest_path, &manifest.render())?;
            println!("wrote {} ({} rows)", csv_path.display(), rows.len());
            return Ok(());
        }
        "mutation" => {
            let params = classifier::load_params(single(&args.models, "model")?)?;
            let ds = load_dataset(single(&args.datasets, "dataset")?)?;
            let (_, _, test_set) = standard_split(&ds, settings.train.seed)?;
            let (example, provenance) =
                select_example(&test_set, args.scheme.as_deref(), args.example_index)?;
            manifest.note(&provenance);
            manifest.note(&format!("attack es_ej_db: {}", args.attack_es_ej_db));
            let sweep = settings.sweep_for(&args.name, params.config.input_size)?;
            manifest.set_sweep(&sweep);
            let (records, _) = run_mutation_test(&params, &example, args.attack_es_ej_db, &sweep)?;
            records
        }
        "self-protect" => {
            let params = classifier::load_params(single(&args.models, "model")?)?;
            let sweep = settings.sweep_for(&args.name, params.config.input_size)?;
            manifest.set_sweep(&sweep);
            run_self_protect_grid(&params, &sweep)?
        }
        "freq-offset" => {
            let params = classifier::load_params(single(&args.models, "model")?)?;
            let sweep = settings.sweep_for(&args.name, params.config.input_size)?;
            manifest.set_sweep(&sweep);
            run_freq_offset_sweep(&params, &sweep)?
        }
        "time-offset" => {
            let params = classifier::load_params(single(&args.models, "model")?)?;
            let sweep = settings.sweep_for(&args.name, params.config.input_size)?;
            manifest.set_sweep(&sweep);
            run_time_offset_sweep(&params, &sweep)?
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown experiment '{other}' (expected one of: direct-access, input-size, \
                 logit-sweep, mutation, self-protect, freq-offset, time-offset)"
            )))
        }
    };

    write_file(&csv_path, &records_to_csv(&records))?;
    write_file(&manifest_path, &manifest.render())?;
    println!("wrote {} ({} records)", csv_path.display(), records.len());
    Ok(())
}

fn parse_records(path: &Path) -> Result<Vec<TrialRecord>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != TRIAL_CSV_HEADER {
        return Err(CliError::Validation(format!(
            "{} does not look like a trial record CSV (unexpected header)",
            path.display()
        )));
    }
    let mut records = Vec::new();
    for (line_no, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            return Err(CliError::Validation(format!(
                "{}:{}: expected 12 fields",
                path.display(),
                line_no + 2
            )));
        }
        let bad = |what: &str| {
            CliError::Validation(format!("{}:{}: bad {what}", path.display(), line_no + 2))
        };
        records.push(TrialRecord {
            scheme: fields[0].parse().map_err(|_| bad("scheme"))?,
            es_n0_db: fields[1].parse().map_err(|_| bad("es_n0_db"))?,
            es_ej_db: fields[2].parse().map_err(|_| bad("es_ej_db"))?,
            cfo: fields[3].parse().map_err(|_| bad("cfo"))?,
            time_offset: fields[4].parse().map_err(|_| bad("time_offset"))?,
            family: match fields[5] {
                "none" => None,
                "fgsm" => Some(rfml_core::attack::AttackFamily::Fgsm),
                "gaussian" => Some(rfml_core::attack::AttackFamily::Gaussian),
                _ => return Err(bad("family")),
            },
            predicted: fields[6].parse().map_err(|_| bad("predicted"))?,
            delta_logits: fields[7].parse().map_err(|_| bad("delta_logits"))?,
            bit_errors: fields[8].parse().map_err(|_| bad("bit_errors"))?,
            bits_total: fields[9].parse().map_err(|_| bad("bits_total"))?,
            trial: fields[10].parse().map_err(|_| bad("trial"))?,
            seed: fields[11].parse().map_err(|_| bad("seed"))?,
        });
    }
    Ok(records)
}

fn family_name(family: Option<rfml_core::attack::AttackFamily>) -> &'static str {
    family.map_or("none", |f| f.name())
}

/// Aggregate a runner CSV into the tidy series behind each figure.
pub fn plotdata(experiment: &str, input: &Path, out_dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out_dir.display())))?;
    let records = parse_records(input)?;
    if records.is_empty() {
        return Err(CliError::Validation("no records to aggregate".into()));
    }

    let out = match experiment {
        "direct-access" | "input-size" => {
            let mut groups: BTreeMap<(String, u64), (usize, usize)> = BTreeMap::new();
            for r in &records {
                let key = (family_name(r.family).to_string(), r.es_ej_db.to_bits());
                let entry = groups.entry(key).or_default();
                entry.1 += 1;
                if r.correct() {
                    entry.0 += 1;
                }
            }
            let mut csv = String::from("family,es_ej_db,accuracy,count\n");
            for ((family, es_ej_bits), (hit, total)) in groups {
                let _ = writeln!(
                    csv,
                    "{},{},{},{}",
                    family,
                    f64::from_bits(es_ej_bits),
                    hit as f64 / total as f64,
                    total
                );
            }
            ("accuracy_vs_es_ej.csv", csv)
        }
        "mutation" => {
            let mut order: Vec<u64> = Vec::new();
            let mut groups: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
            for r in &records {
                let key = r.es_n0_db.to_bits();
                if !groups.contains_key(&key) {
                    order.push(key);
                }
                groups.entry(key).or_default().push(r.delta_logits);
            }
            let mut csv = String::from("es_n0_db,mean,p25,p75\n");
            for key in order {
                let deltas = &groups[&key];
                let s = percentile_summary(deltas)?;
                let _ = writeln!(
                    csv,
                    "{},{},{},{}",
                    f64::from_bits(key),
                    s.mean,
                    s.p25,
                    s.p75
                );
            }
            ("delta_logits_vs_es_n0.csv", csv)
        }
        "self-protect" => {
            type Acc = (usize, usize, u64, u64);
            let mut groups: BTreeMap<(String, String, u64, u64), Acc> = BTreeMap::new();
            for r in &records {
                let key = (
                    r.scheme.name().to_string(),
                    family_name(r.family).to_string(),
                    r.es_ej_db.to_bits(),
                    r.es_n0_db.to_bits(),
                );
                let entry = groups.entry(key).or_default();
                entry.1 += 1;
                if r.correct() {
                    entry.0 += 1;
                }
                entry.2 += r.bit_errors;
                entry.3 += r.bits_total;
            }
            // Rows with BER below the reporting floor are omitted: they are
            // not empirically resolvable at these trial counts.
            let mut csv = String::from("scheme,family,es_ej_db,es_n0_db,accuracy,ber\n");
            for ((scheme, family, es_ej_bits, es_n0_bits), (hit, total, errs, bits)) in groups {
                let ber = errs as f64 / bits as f64;
                if ber < BER_CENSOR {
                    continue;
                }
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{}",
                    scheme,
                    family,
                    f64::from_bits(es_ej_bits),
                    f64::from_bits(es_n0_bits),
                    hit as f64 / total as f64,
                    ber
                );
            }
            ("ber_vs_accuracy.csv", csv)
        }
        "freq-offset" | "time-offset" => {
            let time = experiment == "time-offset";
            let mut groups: BTreeMap<(String, u64, u64, u64), (usize, usize)> = BTreeMap::new();
            for r in &records {
                let axis = if time {
                    r.time_offset as u64
                } else {
                    r.cfo.to_bits()
                };
                let key = (
                    family_name(r.family).to_string(),
                    r.es_ej_db.to_bits(),
                    r.es_n0_db.to_bits(),
                    axis,
                );
                let entry = groups.entry(key).or_default();
                entry.1 += 1;
                if r.correct() {
                    entry.0 += 1;
                }
            }
            let axis_name = if time { "time_offset" } else { "cfo" };
            let mut csv = format!("family,es_ej_db,es_n0_db,{axis_name},accuracy,count\n");
            for ((family, es_ej_bits, es_n0_bits, axis), (hit, total)) in groups {
                let axis_str = if time {
                    axis.to_string()
                } else {
                    f64::from_bits(axis).to_string()
                };
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{}",
                    family,
                    f64::from_bits(es_ej_bits),
                    f64::from_bits(es_n0_bits),
                    axis_str,
                    hit as f64 / total as f64,
                    total
                );
            }
            ("accuracy_vs_offset.csv", csv)
        }
        other => {
            return Err(CliError::Config(format!(
                "no plot aggregation defined for '{other}'"
            )))
        }
    };

    let path = out_dir.join(out.0);
    write_file(&path, &out.1)?;
    println!("wrote {}", path.display());
    Ok(())
}
