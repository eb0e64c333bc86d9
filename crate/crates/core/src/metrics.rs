//! Evaluation quantities: top-1 accuracy, the difference-in-logits margin,
//! the derived jamming-to-noise ratio, and percentile summaries.

use crate::error::{Error, Result};

/// Logits of one classification together with the margin of the true class
/// over the best competitor. A negative margin means untargeted evasion
/// succeeded.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitRecord {
    pub logits: Vec<f64>,
    pub source_class: usize,
    pub delta_logits: f64,
}

impl LogitRecord {
    pub fn new(logits: Vec<f64>, source_class: usize) -> Result<Self> {
        let delta_logits = difference_in_logits(&logits, source_class)?;
        Ok(LogitRecord {
            logits,
            source_class,
            delta_logits,
        })
    }
}

/// True-class logit minus the maximum over all other classes.
pub fn difference_in_logits(logits: &[f64], source: usize) -> Result<f64> {
    if logits.len() < 2 {
        return Err(Error::invalid(
            "difference in logits needs at least two classes",
        ));
    }
    if source >= logits.len() {
        return Err(Error::invalid(format!(
            "source class {source} out of range for {} classes",
            logits.len()
        )));
    }
    let best_other = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != source)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(logits[source] - best_other)
}

/// Jamming-to-noise ratio in dB: Ej/N0 = Es/N0 - Es/Ej.
pub fn ej_n0_db(es_n0_db: f64, es_ej_db: f64) -> f64 {
    es_n0_db - es_ej_db
}

/// Fraction of predictions equal to their labels.
pub fn top1_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(Error::invalid(
            "predictions and labels must pair up, nonempty",
        ));
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// Mean plus interpolated quartiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PercentileSummary {
    pub mean: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
}

/// Linear-interpolation quantile of already collected values.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("cannot take a quantile of no values"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid("quantile must lie in [0, 1]"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Mean and the 25th/50th/75th percentiles.
pub fn percentile_summary(values: &[f64]) -> Result<PercentileSummary> {
    if values.is_empty() {
        return Err(Error::invalid("cannot summarize an empty sample"));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(PercentileSummary {
        mean,
        p25: quantile(values, 0.25)?,
        p50: quantile(values, 0.50)?,
        p75: quantile(values, 0.75)?,
    })
}
