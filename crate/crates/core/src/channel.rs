//! Receiver-effect models: additive white Gaussian noise, carrier frequency
//! offset, and the rectangular windowing used to cut signals into
//! classifier-sized examples.
//!
//! The received signal is `out[t] = exp(-j*2*pi*f_o*t) * in[t] + n[t]` with
//! `t` counted in samples from the start of the block and `f_o` normalized
//! to the sample rate. Noise is complex Gaussian, independent per sample,
//! with total variance chosen so that `Es/N0 = Es_measured / sigma^2`:
//! the matched filter has unit-energy taps, so the per-sample noise
//! variance is exactly the noise power that reaches each symbol decision,
//! and measured bit error rates land on the textbook Q-function curves.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::signal::{avg_energy_per_symbol, IqSignal, IqTensor};

/// One channel realization: noise level, carrier offset, and the seed that
/// makes it reproducible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSpec {
    /// Symbol-energy to noise ratio in dB; `f64::INFINITY` means noiseless.
    pub es_n0_db: f64,
    /// Carrier frequency offset as a fraction of the sample rate.
    pub freq_offset_norm: f64,
    pub seed: u64,
}

impl ChannelSpec {
    pub fn new(es_n0_db: f64, freq_offset_norm: f64, seed: u64) -> Result<Self> {
        if es_n0_db.is_nan() {
            return Err(Error::invalid("Es/N0 must not be NaN"));
        }
        if !(freq_offset_norm.is_finite() && freq_offset_norm.abs() < 0.5) {
            return Err(Error::invalid(format!(
                "frequency offset must satisfy |f_o| < 0.5, got {freq_offset_norm}"
            )));
        }
        Ok(ChannelSpec {
            es_n0_db,
            freq_offset_norm,
            seed,
        })
    }

    /// Noiseless spec with only a frequency rotation.
    pub fn rotation_only(freq_offset_norm: f64) -> Result<Self> {
        ChannelSpec::new(f64::INFINITY, freq_offset_norm, 0)
    }
}

/// Apply carrier rotation and calibrated AWGN. Deterministic given the
/// spec's seed. The noise level is calibrated against the input's measured
/// energy per symbol.
pub fn apply_channel(sig: &IqSignal, spec: &ChannelSpec) -> IqSignal {
    let es = if spec.es_n0_db.is_infinite() {
        0.0
    } else {
        avg_energy_per_symbol(sig)
    };
    apply_channel_ref(sig, spec, es)
}

/// Like [`apply_channel`] but calibrating the noise against a fixed
/// reference symbol energy. Used when the input carries a perturbation
/// whose energy must not count toward the signal power.
pub fn apply_channel_ref(sig: &IqSignal, spec: &ChannelSpec, reference_es: f64) -> IqSignal {
    let f_o = spec.freq_offset_norm;
    let sigma_sq = if spec.es_n0_db.is_infinite() {
        0.0
    } else {
        reference_es * 10f64.powf(-spec.es_n0_db / 10.0)
    };
    // sigma^2 / 2 on each of I and Q.
    let axis_sigma = (sigma_sq / 2.0).sqrt();

    let mut rng = Rng::from_tags(spec.seed, &[0x6368616e]);
    let out: Vec<Complex64> = sig
        .samples()
        .iter()
        .enumerate()
        .map(|(t, &s)| {
            let rotated = if f_o == 0.0 {
                s
            } else {
                let theta = -2.0 * PI * f_o * t as f64;
                s * Complex64::new(theta.cos(), theta.sin())
            };
            if sigma_sq == 0.0 {
                rotated
            } else {
                let (g_re, g_im) = rng.next_normal_pair();
                rotated + Complex64::new(axis_sigma * g_re, axis_sigma * g_im)
            }
        })
        .collect();
    IqSignal::new(out, sig.sps()).expect("channel preserves signal validity")
}

/// Cut non-overlapping consecutive windows of `input_size` complex samples
/// starting at `start_offset`, each converted to a `[1, 2, input_size]`
/// real tensor. The trailing remainder is discarded.
pub fn slice_examples(
    sig: &IqSignal,
    input_size: usize,
    start_offset: usize,
) -> Result<Vec<IqTensor>> {
    if input_size == 0 {
        return Err(Error::invalid("window size must be positive"));
    }
    if start_offset >= input_size {
        return Err(Error::invalid(format!(
            "start offset {start_offset} must be less than window size {input_size}"
        )));
    }
    if sig.len() < start_offset + input_size {
        return Err(Error::invalid(format!(
            "signal of {} samples is too short for one window of {input_size} at offset {start_offset}",
            sig.len()
        )));
    }
    let samples = sig.samples();
    let count = (sig.len() - start_offset) / input_size;
    (0..count)
        .map(|w| {
            let lo = start_offset + w * input_size;
            IqTensor::from_complex(&samples[lo..lo + input_size])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::normalize_avg_power;

    fn test_signal(n: usize, seed: u64) -> IqSignal {
        let mut rng = Rng::new(seed);
        let samples: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.next_normal(), rng.next_normal()))
            .collect();
        normalize_avg_power(&IqSignal::new(samples, 8).unwrap()).unwrap()
    }

    #[test]
    fn noiseless_zero_offset_is_identity() {
        let sig = test_signal(256, 1);
        let spec = ChannelSpec::new(f64::INFINITY, 0.0, 9).unwrap();
        let out = apply_channel(&sig, &spec);
        assert_eq!(sig.samples(), out.samples());
    }

    #[test]
    fn rotation_inverse_restores_signal() {
        let sig = test_signal(512, 2);
        let fwd = apply_channel(&sig, &ChannelSpec::rotation_only(0.01).unwrap());
        let back = apply_channel(&fwd, &ChannelSpec::rotation_only(-0.01).unwrap());
        for (a, b) in sig.samples().iter().zip(back.samples()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn rotation_preserves_energy() {
        let sig = test_signal(512, 3);
        let out = apply_channel(&sig, &ChannelSpec::rotation_only(0.013).unwrap());
        let before = avg_energy_per_symbol(&sig);
        let after = avg_energy_per_symbol(&out);
        assert!((before - after).abs() < 1e-12);
    }

    #[test]
    fn noise_calibration_within_tenth_db() {
        let sig = test_signal(100_000, 4);
        let es = avg_energy_per_symbol(&sig);
        for &es_n0_db in &[0.0, 10.0, 20.0] {
            let spec = ChannelSpec::new(es_n0_db, 0.0, 31 + es_n0_db as u64).unwrap();
            let out = apply_channel(&sig, &spec);
            let noise_power: f64 = out
                .samples()
                .iter()
                .zip(sig.samples())
                .map(|(y, x)| (y - x).norm_sqr())
                .sum::<f64>()
                / sig.len() as f64;
            let realized_db = 10.0 * (es / noise_power).log10();
            assert!(
                (realized_db - es_n0_db).abs() < 0.1,
                "requested {es_n0_db} dB, realized {realized_db} dB"
            );
        }
    }

    #[test]
    fn equal_seeds_equal_outputs() {
        let sig = test_signal(1024, 5);
        let spec = ChannelSpec::new(10.0, 0.005, 77).unwrap();
        let a = apply_channel(&sig, &spec);
        let b = apply_channel(&sig, &spec);
        assert_eq!(a.samples(), b.samples());
        let other = ChannelSpec::new(10.0, 0.005, 78).unwrap();
        let c = apply_channel(&sig, &other);
        assert_ne!(a.samples(), c.samples());
    }

    #[test]
    fn super_nyquist_offset_rejected() {
        assert!(ChannelSpec::new(10.0, 0.5, 0).is_err());
        assert!(ChannelSpec::new(10.0, -0.7, 0).is_err());
    }

    #[test]
    fn slice_counts_and_offsets() {
        let sig = test_signal(256, 6);
        assert_eq!(slice_examples(&sig, 128, 0).unwrap().len(), 2);
        let offset = slice_examples(&sig, 128, 4).unwrap();
        assert_eq!(offset.len(), 1);
        let expected = IqTensor::from_complex(&sig.samples()[4..132]).unwrap();
        assert_eq!(offset[0], expected);
    }

    #[test]
    fn slice_windows_are_periodic_in_window_size() {
        // Windows of the signal advanced by one window equal windows 1.. of
        // the original: the slicing grid is periodic in the input size.
        let sig = test_signal(512, 7);
        let full = slice_examples(&sig, 128, 0).unwrap();
        let advanced =
            IqSignal::new(sig.samples()[128..].to_vec(), sig.sps()).unwrap();
        let shifted = slice_examples(&advanced, 128, 0).unwrap();
        assert_eq!(&full[1..], &shifted[..]);
    }

    #[test]
    fn slice_rejects_bad_inputs() {
        let sig = test_signal(100, 8);
        assert!(slice_examples(&sig, 128, 0).is_err());
        assert!(slice_examples(&sig, 50, 50).is_err());
        assert!(slice_examples(&sig, 50, 51).is_err());
    }
}
