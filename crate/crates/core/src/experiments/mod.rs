//! Seeded Monte Carlo sweeps that reproduce the evaluation scenarios:
//! direct-access attacks, input-size comparisons, per-example logit and
//! mutation studies, the self-protect BER/accuracy grid, and the frequency
//! and time offset sweeps.
//!
//! Every runner derives all randomness from (root seed, grid coordinates,
//! trial index) and emits records in a fixed coordinate-major order, so a
//! re-run with the same config produces byte-identical CSV output no
//! matter how many threads execute it.

mod runners;

pub use runners::{
    run_direct_access_sweep, run_freq_offset_sweep, run_input_size_study, run_logit_sweep,
    run_mutation_test, run_self_protect_grid, run_time_offset_sweep, InputSizeStudy,
    LogitSweepRow, MutationRow, RankingRow,
};

use crate::attack::AttackFamily;
use crate::modem::ModScheme;

/// One Monte Carlo outcome. Axes that an experiment does not vary hold
/// neutral values (`inf` for "no noise"/"no attack", zeros elsewhere).
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub scheme: ModScheme,
    pub es_n0_db: f64,
    pub es_ej_db: f64,
    pub cfo: f64,
    pub time_offset: usize,
    pub family: Option<AttackFamily>,
    pub predicted: usize,
    pub delta_logits: f64,
    pub bit_errors: u64,
    pub bits_total: u64,
    pub trial: usize,
    pub seed: u64,
}

impl TrialRecord {
    /// Whether the classifier recovered the true class.
    pub fn correct(&self) -> bool {
        self.predicted == scheme_index(self.scheme)
    }
}

/// Class index of a scheme within the standard five-class catalog.
pub fn scheme_index(scheme: ModScheme) -> usize {
    ModScheme::ALL
        .iter()
        .position(|&s| s == scheme)
        .expect("scheme is in the catalog")
}

/// Grid and budget settings shared by the runners; each runner documents
/// which fields it reads.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub seed: u64,
    pub trials_per_point: usize,
    pub families: Vec<AttackFamily>,
    pub include_baseline: bool,
    pub es_ej_grid_db: Vec<f64>,
    pub es_n0_grid_db: Vec<f64>,
    pub cfo_grid: Vec<f64>,
    pub time_offsets: Vec<usize>,
    pub schemes: Vec<ModScheme>,
    pub sps: usize,
    pub span_symbols: usize,
    pub rolloff: f64,
    pub dither_es_n0_db: Option<f64>,
    pub max_examples: usize,
}

impl SweepConfig {
    fn base(seed: u64) -> Self {
        SweepConfig {
            seed,
            trials_per_point: 100,
            families: vec![AttackFamily::Fgsm, AttackFamily::Gaussian],
            include_baseline: true,
            es_ej_grid_db: (0..=5).map(|k| (4 * k) as f64).collect(),
            es_n0_grid_db: vec![10.0, 20.0],
            cfo_grid: vec![0.0],
            time_offsets: vec![0],
            schemes: ModScheme::ALL.to_vec(),
            sps: 8,
            span_symbols: 8,
            rolloff: 0.35,
            dither_es_n0_db: Some(crate::attack::DEFAULT_DITHER_ES_N0_DB),
            max_examples: 1000,
        }
    }

    /// Attack held-out examples with both families, no channel.
    pub fn direct_access(seed: u64) -> Self {
        SweepConfig::base(seed)
    }

    /// Sign-gradient sweep repeated per input size, with high-ratio anchor
    /// points where the clean ranking should hold.
    pub fn input_size_study(seed: u64) -> Self {
        SweepConfig {
            families: vec![AttackFamily::Fgsm],
            es_ej_grid_db: vec![0.0, 4.0, 8.0, 12.0, 16.0, 20.0, 30.0, 40.0, 55.0, 60.0],
            ..SweepConfig::base(seed)
        }
    }

    /// Per-example logits across a fine attack-intensity grid (40 down to
    /// 0 dB, 1 dB steps).
    pub fn logit_sweep(seed: u64) -> Self {
        SweepConfig {
            families: vec![AttackFamily::Fgsm],
            es_ej_grid_db: (0..=40).rev().map(|k| k as f64).collect(),
            ..SweepConfig::base(seed)
        }
    }

    /// Repeated noise mutations of one adversarial example, Es/N0 swept
    /// from 20 down to 0 dB.
    pub fn mutation(seed: u64) -> Self {
        SweepConfig {
            trials_per_point: 1000,
            es_n0_grid_db: (0..=20).rev().map(|k| k as f64).collect(),
            ..SweepConfig::base(seed)
        }
    }

    /// Transmitter-side attack evaluated for both bit errors and evasion,
    /// including a noiseless column for the high-ratio BER anchors.
    pub fn self_protect(seed: u64) -> Self {
        let mut es_n0: Vec<f64> = (0..=10).map(|k| (2 * k) as f64).collect();
        es_n0.push(f64::INFINITY);
        SweepConfig {
            trials_per_point: 2000,
            families: vec![AttackFamily::Fgsm],
            es_n0_grid_db: es_n0,
            ..SweepConfig::base(seed)
        }
    }

    /// Carrier-offset robustness sweep, -2.5%..2.5% in 0.1% steps.
    pub fn freq_offset(seed: u64) -> Self {
        SweepConfig {
            families: vec![AttackFamily::Fgsm],
            es_ej_grid_db: vec![4.0, 8.0, 12.0, 16.0, 20.0],
            cfo_grid: (-25..=25).map(|k| k as f64 * 0.001).collect(),
            ..SweepConfig::base(seed)
        }
    }

    /// Window-alignment sweep over a full input period.
    pub fn time_offset(seed: u64, input_size: usize) -> Self {
        SweepConfig {
            families: vec![AttackFamily::Fgsm],
            es_ej_grid_db: vec![4.0, 8.0, 12.0, 16.0, 20.0],
            time_offsets: (0..input_size).collect(),
            ..SweepConfig::base(seed)
        }
    }
}

/// RFC 4180 field quoting: quote when a field contains a comma, quote, or
/// line break.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub const TRIAL_CSV_HEADER: &str =
    "scheme,es_n0_db,es_ej_db,cfo,time_offset,family,predicted,delta_logits,bit_errors,bits_total,trial,seed";

/// Render records as CSV, header included. Formatting is the shortest
/// round-trip decimal form, so equal records always render to equal bytes.
pub fn records_to_csv(records: &[TrialRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(TRIAL_CSV_HEADER);
    out.push('\n');
    for r in records {
        let family = r.family.map_or("none", |f| f.name());
        let row = [
            csv_field(r.scheme.name()),
            r.es_n0_db.to_string(),
            r.es_ej_db.to_string(),
            r.cfo.to_string(),
            r.time_offset.to_string(),
            csv_field(family),
            r.predicted.to_string(),
            r.delta_logits.to_string(),
            r.bit_errors.to_string(),
            r.bits_total.to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
        ];
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Mean accuracy of a subset of records selected by a predicate.
pub fn accuracy_where<F: Fn(&TrialRecord) -> bool>(records: &[TrialRecord], pred: F) -> f64 {
    let mut hit = 0usize;
    let mut total = 0usize;
    for r in records.iter().filter(|r| pred(r)) {
        total += 1;
        if r.correct() {
            hit += 1;
        }
    }
    if total == 0 {
        f64::NAN
    } else {
        hit as f64 / total as f64
    }
}

/// Pooled bit error rate of a subset of records.
pub fn ber_where<F: Fn(&TrialRecord) -> bool>(records: &[TrialRecord], pred: F) -> f64 {
    let mut errors = 0u64;
    let mut bits = 0u64;
    for r in records.iter().filter(|r| pred(r)) {
        errors += r.bit_errors;
        bits += r.bits_total;
    }
    if bits == 0 {
        f64::NAN
    } else {
        errors as f64 / bits as f64
    }
}

#[cfg(test)]
mod tests;
