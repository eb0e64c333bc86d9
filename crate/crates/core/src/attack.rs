//! Jamming-signal crafting: the power-constrained sign-gradient attack and
//! a Gaussian jammer baseline at matched energy.
//!
//! A sign-gradient perturbation scaled by `epsilon_for(es_ej_db, sps)` has
//! energy per symbol of exactly `10^(-es_ej_db/10)` because every complex
//! sample has magnitude `sqrt(2) * eps`. Full waveforms are attacked by the
//! slice -> dither -> perturb -> concatenate -> scale pipeline in
//! [`craft_jamming_signal`].

use num_complex::Complex64;
use rayon::prelude::*;

use crate::classifier::{input_gradient, Example, ModelParams};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::signal::{epsilon_for, IqSignal, IqTensor};

/// Dither level applied during gradient computation when a spec does not
/// choose one: small enough to be negligible in the energy accounting.
pub const DEFAULT_DITHER_ES_N0_DB: f64 = 40.0;

const TAG_DITHER: u64 = 0x6474_0001;
const TAG_JAM: u64 = 0x6a61_0001;

/// Attack family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttackFamily {
    Fgsm,
    Gaussian,
}

impl AttackFamily {
    pub fn name(self) -> &'static str {
        match self {
            AttackFamily::Fgsm => "fgsm",
            AttackFamily::Gaussian => "gaussian",
        }
    }
}

/// How to craft a jamming signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackSpec {
    pub family: AttackFamily,
    pub es_ej_db: f64,
    /// Dither noise level during gradient computation, or `None` for off.
    pub dither_es_n0_db: Option<f64>,
    pub seed: u64,
}

impl AttackSpec {
    pub fn fgsm(es_ej_db: f64, seed: u64) -> Self {
        AttackSpec {
            family: AttackFamily::Fgsm,
            es_ej_db,
            dither_es_n0_db: Some(DEFAULT_DITHER_ES_N0_DB),
            seed,
        }
    }

    pub fn fgsm_no_dither(es_ej_db: f64, seed: u64) -> Self {
        AttackSpec {
            dither_es_n0_db: None,
            ..AttackSpec::fgsm(es_ej_db, seed)
        }
    }

    pub fn gaussian(es_ej_db: f64, seed: u64) -> Self {
        AttackSpec {
            family: AttackFamily::Gaussian,
            es_ej_db,
            dither_es_n0_db: None,
            seed,
        }
    }
}

/// A perturbed classifier input: `adversarial` is `clean + perturbation`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialExample {
    pub clean: Example,
    pub perturbation: IqTensor,
    pub adversarial: IqTensor,
    pub spec: AttackSpec,
}

/// Elementwise sign on the I and Q rows independently, with sign(0) = +1,
/// so every complex sample of the output has magnitude sqrt(2).
pub fn sign_complex(grad: &IqTensor) -> IqTensor {
    let sign = |v: &f64| if *v < 0.0 { -1.0 } else { 1.0 };
    IqTensor {
        i: grad.i.iter().map(sign).collect(),
        q: grad.q.iter().map(sign).collect(),
    }
}

/// Single-step untargeted sign-gradient attack on one example:
/// `x* = x + eps * sign(grad_x loss)`. The example is expected to be
/// power-normalized so the unit-signal-energy calibration of `eps` holds.
pub fn fgsm_untargeted(
    params: &ModelParams,
    example: &Example,
    label: usize,
    es_ej_db: f64,
    sps: usize,
) -> Result<AdversarialExample> {
    if label >= params.config.num_classes {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            params.config.num_classes
        )));
    }
    let grads = input_gradient(params, std::slice::from_ref(&example.tensor), &[label])?;
    let eps = epsilon_for(es_ej_db, sps)?;
    let perturbation = sign_complex(&grads[0]).scaled(eps);
    let adversarial = example.tensor.add(&perturbation)?;
    Ok(AdversarialExample {
        clean: example.clone(),
        perturbation,
        adversarial,
        spec: AttackSpec::fgsm_no_dither(es_ej_db, 0),
    })
}

/// White complex Gaussian jammer scaled so the measured perturbation energy
/// per symbol equals the target exactly (scale-to-measured, not
/// expectation).
pub fn gaussian_jam(
    example: &Example,
    es_ej_db: f64,
    sps: usize,
    seed: u64,
) -> Result<AdversarialExample> {
    if sps == 0 {
        return Err(Error::invalid("samples per symbol must be >= 1"));
    }
    let n = example.tensor.len();
    let mut rng = Rng::from_tags(seed, &[TAG_JAM]);
    let mut i = Vec::with_capacity(n);
    let mut q = Vec::with_capacity(n);
    for _ in 0..n {
        let (a, b) = rng.next_normal_pair();
        i.push(a);
        q.push(b);
    }
    let raw = IqTensor::new(i, q)?;
    let target = 10f64.powf(-es_ej_db / 10.0);
    let measured = raw.energy_per_symbol(sps);
    let factor = if target == 0.0 {
        0.0
    } else {
        (target / measured).sqrt()
    };
    let perturbation = raw.scaled(factor);
    let adversarial = example.tensor.add(&perturbation)?;
    Ok(AdversarialExample {
        clean: example.clone(),
        perturbation,
        adversarial,
        spec: AttackSpec::gaussian(es_ej_db, seed),
    })
}

/// The unscaled sign-gradient pattern for a full signal: slice into
/// windows, power-normalize (and optionally dither) each, take the sign of
/// the per-window input gradient, and concatenate. Entries are +-1 per real
/// coordinate, with a zero tail where a trailing remainder did not fill a
/// window. Scaling by `epsilon_for(es_ej_db, sps)` yields the jamming
/// signal; callers sweeping attack intensity can reuse one pattern.
pub fn craft_sign_pattern(
    params: &ModelParams,
    sig: &IqSignal,
    label: usize,
    input_size: usize,
    dither_es_n0_db: Option<f64>,
    seed: u64,
) -> Result<IqSignal> {
    if sig.len() < input_size {
        return Err(Error::invalid(format!(
            "signal of {} samples is shorter than one window of {input_size}",
            sig.len()
        )));
    }
    if label >= params.config.num_classes {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            params.config.num_classes
        )));
    }
    let sps = sig.sps();
    let windows = crate::channel::slice_examples(sig, input_size, 0)?;

    let pattern: Vec<IqTensor> = windows
        .par_iter()
        .enumerate()
        .map(|(w, window)| {
            let mut normalized = window.normalized()?;
            if let Some(dither_db) = dither_es_n0_db {
                let sigma_sq = normalized.energy_per_symbol(sps) * 10f64.powf(-dither_db / 10.0);
                let axis_sigma = (sigma_sq / 2.0).sqrt();
                let mut rng = Rng::from_tags(seed, &[TAG_DITHER, w as u64]);
                for k in 0..normalized.len() {
                    let (gi, gq) = rng.next_normal_pair();
                    normalized.i[k] += axis_sigma * gi;
                    normalized.q[k] += axis_sigma * gq;
                }
            }
            let grads = input_gradient(params, &[normalized], &[label])?;
            Ok(sign_complex(&grads[0]))
        })
        .collect::<Result<_>>()?;

    let mut samples = Vec::with_capacity(sig.len());
    for tensor in &pattern {
        for k in 0..tensor.len() {
            samples.push(Complex64::new(tensor.i[k], tensor.q[k]));
        }
    }
    samples.resize(sig.len(), Complex64::new(0.0, 0.0));
    IqSignal::new(samples, sps)
}

/// Craft a jamming waveform for a full signal at a target Es/Ej. The
/// returned signal has the same length as the input; a trailing remainder
/// that does not fill a window gets a zero perturbation.
pub fn craft_jamming_signal(
    params: &ModelParams,
    sig: &IqSignal,
    label: usize,
    input_size: usize,
    spec: &AttackSpec,
) -> Result<IqSignal> {
    let sps = sig.sps();
    match spec.family {
        AttackFamily::Fgsm => {
            let pattern = craft_sign_pattern(
                params,
                sig,
                label,
                input_size,
                spec.dither_es_n0_db,
                spec.seed,
            )?;
            let eps = epsilon_for(spec.es_ej_db, sps)?;
            let samples = pattern.samples().iter().map(|s| s * eps).collect();
            IqSignal::new(samples, sps)
        }
        AttackFamily::Gaussian => {
            if sig.len() < input_size {
                return Err(Error::invalid(format!(
                    "signal of {} samples is shorter than one window of {input_size}",
                    sig.len()
                )));
            }
            let windowed = sig.len() / input_size * input_size;
            let mut rng = Rng::from_tags(spec.seed, &[TAG_JAM]);
            let mut samples = Vec::with_capacity(sig.len());
            for _ in 0..windowed {
                let (a, b) = rng.next_normal_pair();
                samples.push(Complex64::new(a, b));
            }
            let target = 10f64.powf(-spec.es_ej_db / 10.0);
            let measured =
                sps as f64 * samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / windowed as f64;
            let factor = if target == 0.0 {
                0.0
            } else {
                (target / measured).sqrt()
            };
            for s in &mut samples {
                *s *= factor;
            }
            samples.resize(sig.len(), Complex64::new(0.0, 0.0));
            IqSignal::new(samples, sps)
        }
    }
}
