//! Complex-baseband signal containers and the energy/ratio algebra used to
//! calibrate perturbation power.
//!
//! Energy bookkeeping is done per symbol: a signal at `sps` samples per
//! symbol with samples `s_i` has average energy per symbol
//! `(sps / N) * sum |s_i|^2`. Jamming intensity is expressed as the ratio
//! Es/Ej between the (unit) signal energy per symbol and the perturbation
//! energy per symbol, in dB.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// A complex baseband sample sequence plus its samples-per-symbol metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct IqSignal {
    samples: Vec<Complex64>,
    sps: usize,
}

impl IqSignal {
    /// Build a signal, validating the container invariants: at least one
    /// sample, `sps >= 1`, and every sample finite.
    pub fn new(samples: Vec<Complex64>, sps: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("signal must contain at least one sample"));
        }
        if sps == 0 {
            return Err(Error::invalid("samples per symbol must be >= 1"));
        }
        if samples.iter().any(|s| !s.re.is_finite() || !s.im.is_finite()) {
            return Err(Error::invalid("signal contains non-finite samples"));
        }
        Ok(IqSignal { samples, sps })
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [Complex64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn sps(&self) -> usize {
        self.sps
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Which power ratio a dB value refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioKind {
    /// Signal energy per symbol over jamming energy per symbol.
    EsEj,
    /// Signal energy per symbol over noise energy.
    EsN0,
    /// Jamming energy per symbol over noise energy.
    EjN0,
}

/// A tagged decibel power ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerRatioDb {
    pub kind: RatioKind,
    pub db: f64,
}

impl PowerRatioDb {
    pub fn new(kind: RatioKind, db: f64) -> Result<Self> {
        if !db.is_finite() {
            return Err(Error::invalid("power ratio must be finite"));
        }
        Ok(PowerRatioDb { kind, db })
    }

    pub fn es_ej(db: f64) -> Result<Self> {
        Self::new(RatioKind::EsEj, db)
    }

    pub fn es_n0(db: f64) -> Result<Self> {
        Self::new(RatioKind::EsN0, db)
    }
}

/// Average energy per symbol: `(sps / N) * sum |s_i|^2`.
pub fn avg_energy_per_symbol(sig: &IqSignal) -> f64 {
    let sum: f64 = sig.samples.iter().map(|s| s.norm_sqr()).sum();
    sig.sps as f64 * sum / sig.len() as f64
}

/// Linear jamming energy Ej for a given Es/Ej in dB, with Es fixed at 1:
/// `Ej = 10^(-es_ej_db / 10)`.
pub fn es_ej_linear(ratio: PowerRatioDb) -> f64 {
    debug_assert_eq!(ratio.kind, RatioKind::EsEj);
    10f64.powf(-ratio.db / 10.0)
}

/// Scaling factor applied to a unit sign-gradient so the perturbation meets
/// a target Es/Ej.
///
/// A sign pattern has per-sample complex magnitude sqrt(2), hence energy per
/// symbol `2 * sps`; scaling by `eps = sqrt(10^(-es_ej_db/10) / (2 * sps))`
/// makes the perturbation energy per symbol exactly `10^(-es_ej_db/10)`.
pub fn epsilon_for(es_ej_db: f64, sps: usize) -> Result<f64> {
    if sps == 0 {
        return Err(Error::invalid("samples per symbol must be >= 1"));
    }
    Ok((10f64.powf(-es_ej_db / 10.0) / (2.0 * sps as f64)).sqrt())
}

/// Scale a signal so its average per-sample power `(1/N) * sum |s_i|^2` is
/// exactly 1, preserving the direction of every sample.
pub fn normalize_avg_power(sig: &IqSignal) -> Result<IqSignal> {
    let power: f64 = sig.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / sig.len() as f64;
    if power == 0.0 {
        return Err(Error::DegenerateInput(
            "cannot normalize an all-zero signal".into(),
        ));
    }
    let scale = 1.0 / power.sqrt();
    let samples = sig.samples.iter().map(|s| s * scale).collect();
    IqSignal::new(samples, sig.sps)
}

/// A real `[1, 2, N]` view of an IQ window: row 0 holds I, row 1 holds Q.
/// This is the classifier's unit of input.
#[derive(Debug, Clone, PartialEq)]
pub struct IqTensor {
    pub i: Vec<f64>,
    pub q: Vec<f64>,
}

impl IqTensor {
    pub fn new(i: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        if i.len() != q.len() {
            return Err(Error::shape(format!(
                "I/Q rows differ in length: {} vs {}",
                i.len(),
                q.len()
            )));
        }
        if i.is_empty() {
            return Err(Error::invalid("tensor must contain at least one sample"));
        }
        if i.iter().chain(q.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("tensor contains non-finite values"));
        }
        Ok(IqTensor { i, q })
    }

    pub fn from_complex(samples: &[Complex64]) -> Result<Self> {
        Self::new(
            samples.iter().map(|s| s.re).collect(),
            samples.iter().map(|s| s.im).collect(),
        )
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        self.i
            .iter()
            .zip(&self.q)
            .map(|(&re, &im)| Complex64::new(re, im))
            .collect()
    }

    /// Number of complex samples N.
    pub fn len(&self) -> usize {
        self.i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i.is_empty()
    }

    /// Mean of I^2 + Q^2 over samples.
    pub fn avg_power(&self) -> f64 {
        let sum: f64 = self
            .i
            .iter()
            .zip(&self.q)
            .map(|(&re, &im)| re * re + im * im)
            .sum();
        sum / self.len() as f64
    }

    /// Average energy per symbol of the window, per the same accounting as
    /// [`avg_energy_per_symbol`].
    pub fn energy_per_symbol(&self, sps: usize) -> f64 {
        sps as f64 * self.avg_power()
    }

    /// Scale to unit average power. Errors on an all-zero window.
    pub fn normalized(&self) -> Result<IqTensor> {
        let power = self.avg_power();
        if power == 0.0 {
            return Err(Error::DegenerateInput(
                "cannot normalize an all-zero window".into(),
            ));
        }
        let scale = 1.0 / power.sqrt();
        Ok(IqTensor {
            i: self.i.iter().map(|v| v * scale).collect(),
            q: self.q.iter().map(|v| v * scale).collect(),
        })
    }

    /// Elementwise sum, used to apply perturbations.
    pub fn add(&self, other: &IqTensor) -> Result<IqTensor> {
        if self.len() != other.len() {
            return Err(Error::shape(format!(
                "tensor lengths differ: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(IqTensor {
            i: self.i.iter().zip(&other.i).map(|(a, b)| a + b).collect(),
            q: self.q.iter().zip(&other.q).map(|(a, b)| a + b).collect(),
        })
    }

    /// Elementwise scale.
    pub fn scaled(&self, factor: f64) -> IqTensor {
        IqTensor {
            i: self.i.iter().map(|v| v * factor).collect(),
            q: self.q.iter().map(|v| v * factor).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn constant_signal(value: Complex64, n: usize, sps: usize) -> IqSignal {
        IqSignal::new(vec![value; n], sps).unwrap()
    }

    #[test]
    fn energy_of_constant_magnitude_signal() {
        let sig = constant_signal(Complex64::new(1.0, 0.0), 16, 8);
        assert_eq!(avg_energy_per_symbol(&sig), 8.0);
    }

    #[test]
    fn energy_of_sign_pattern_is_two_sps() {
        // Entries in {+-1 +-1j} have |s|^2 = 2 regardless of the sign
        // pattern, so the energy per symbol is 2 * sps.
        let mut rng = Rng::new(3);
        let samples: Vec<Complex64> = (0..64)
            .map(|_| {
                let re = if rng.next_bit() == 1 { 1.0 } else { -1.0 };
                let im = if rng.next_bit() == 1 { 1.0 } else { -1.0 };
                Complex64::new(re, im)
            })
            .collect();
        let sig = IqSignal::new(samples, 8).unwrap();
        assert_eq!(avg_energy_per_symbol(&sig), 16.0);
    }

    #[test]
    fn energy_of_unit_energy_normalization() {
        let mag = (1.0f64 / 8.0).sqrt();
        let sig = constant_signal(Complex64::new(mag, 0.0), 40, 8);
        assert!((avg_energy_per_symbol(&sig) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_signal_rejected() {
        assert!(matches!(
            IqSignal::new(vec![], 8),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn non_finite_sample_rejected() {
        assert!(IqSignal::new(vec![Complex64::new(f64::NAN, 0.0)], 8).is_err());
    }

    #[test]
    fn es_ej_linear_values() {
        assert_eq!(es_ej_linear(PowerRatioDb::es_ej(0.0).unwrap()), 1.0);
        assert!((es_ej_linear(PowerRatioDb::es_ej(10.0).unwrap()) - 0.1).abs() < 1e-15);
        assert!((es_ej_linear(PowerRatioDb::es_ej(20.0).unwrap()) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn epsilon_reference_values() {
        let eps10 = epsilon_for(10.0, 8).unwrap();
        assert!((eps10 - 0.07905694).abs() / 0.07905694 < 1e-6);
        let eps55 = epsilon_for(55.0, 8).unwrap();
        assert!((eps55 - 4.4457e-4).abs() / 4.4457e-4 < 1e-4);
        assert_eq!(epsilon_for(0.0, 8).unwrap(), 0.25);
    }

    #[test]
    fn epsilon_rejects_zero_sps() {
        assert!(epsilon_for(10.0, 0).is_err());
    }

    #[test]
    fn epsilon_strictly_decreasing() {
        let mut rng = Rng::new(11);
        for _ in 0..200 {
            let db = rng.next_f64() * 60.0 - 10.0;
            let step = rng.next_f64() * 5.0 + 1e-3;
            let sps = 1 + rng.next_below(16);
            assert!(epsilon_for(db + step, sps).unwrap() < epsilon_for(db, sps).unwrap());
            assert!(epsilon_for(db, sps + 1).unwrap() < epsilon_for(db, sps).unwrap());
        }
    }

    #[test]
    fn scaled_sign_pattern_energy_composition() {
        // avg_energy_per_symbol(eps * sign_pattern) == eps^2 * 2 * sps.
        let mut rng = Rng::new(4);
        for _ in 0..50 {
            let sps = 1 + rng.next_below(12);
            let eps = rng.next_f64() + 1e-3;
            let samples: Vec<Complex64> = (0..96)
                .map(|_| {
                    let re = if rng.next_bit() == 1 { eps } else { -eps };
                    let im = if rng.next_bit() == 1 { eps } else { -eps };
                    Complex64::new(re, im)
                })
                .collect();
            let sig = IqSignal::new(samples, sps).unwrap();
            let expect = eps * eps * 2.0 * sps as f64;
            assert!((avg_energy_per_symbol(&sig) - expect).abs() <= 1e-12 * expect);
        }
    }

    #[test]
    fn normalize_uniform_scale() {
        let sig = constant_signal(Complex64::new(2.0, 0.0), 10, 4);
        let normed = normalize_avg_power(&sig).unwrap();
        for s in normed.samples() {
            assert!((s - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn normalize_idempotent_on_random_signals() {
        let mut rng = Rng::new(5);
        for _ in 0..20 {
            let samples: Vec<Complex64> = (0..128)
                .map(|_| Complex64::new(rng.next_normal() * 3.0, rng.next_normal() * 3.0))
                .collect();
            let sig = IqSignal::new(samples, 8).unwrap();
            let once = normalize_avg_power(&sig).unwrap();
            let power: f64 =
                once.samples().iter().map(|s| s.norm_sqr()).sum::<f64>() / once.len() as f64;
            assert!((power - 1.0).abs() < 1e-12);
            let twice = normalize_avg_power(&once).unwrap();
            for (a, b) in once.samples().iter().zip(twice.samples()) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn normalize_rejects_zero_signal() {
        let sig = constant_signal(Complex64::new(0.0, 0.0), 8, 2);
        assert!(matches!(
            normalize_avg_power(&sig),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn tensor_round_trip_and_power() {
        let samples = vec![Complex64::new(1.0, -2.0), Complex64::new(0.5, 0.25)];
        let t = IqTensor::from_complex(&samples).unwrap();
        assert_eq!(t.to_complex(), samples);
        let expect = (5.0 + 0.3125) / 2.0;
        assert!((t.avg_power() - expect).abs() < 1e-15);
    }
}
