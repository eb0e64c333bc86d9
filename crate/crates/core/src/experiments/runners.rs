//! The scenario runners.
//!
//! Shared structure: an outer coordinate list is mapped in parallel
//! (order-preserving) and flattened, per-trial randomness comes from
//! substreams derived off (seed, experiment tag, coordinates), and within a
//! trial the attack variants share the bit stream and noise realization so
//! baseline/attacked comparisons are paired.

use num_complex::Complex64;
use rayon::prelude::*;

use super::{scheme_index, SweepConfig, TrialRecord};
use crate::attack::{
    craft_sign_pattern, fgsm_untargeted, gaussian_jam, sign_complex, AttackFamily,
};
use crate::channel::{apply_channel, apply_channel_ref, slice_examples, ChannelSpec};
use crate::classifier::{forward, input_gradient, Example, ModelParams};
use crate::error::{Error, Result};
use crate::metrics::{difference_in_logits, percentile_summary};
use crate::modem::{demodulate, modulate, random_bits, ModScheme, PulseShape};
use crate::rng::{derive_seed, Rng};
use crate::signal::{avg_energy_per_symbol, epsilon_for, IqSignal, IqTensor};

const TAG_DIRECT: u64 = 0x6578_0001;
const TAG_MUTATE: u64 = 0x6578_0002;
const TAG_SELF: u64 = 0x6578_0003;
const TAG_SELF_NOISE: u64 = 0x6578_0004;
const TAG_FREQ: u64 = 0x6578_0005;
const TAG_FREQ_NOISE: u64 = 0x6578_0006;
const TAG_TIME: u64 = 0x6578_0007;
const TAG_TIME_NOISE: u64 = 0x6578_0008;

fn classify(params: &ModelParams, tensor: &IqTensor, label: usize) -> Result<(usize, f64)> {
    let logits = forward(params, std::slice::from_ref(tensor))?;
    let delta = difference_in_logits(&logits[0], label)?;
    Ok((crate::classifier::argmax(&logits[0]), delta))
}

fn check_labels(params: &ModelParams, schemes: &[ModScheme]) -> Result<()> {
    for &s in schemes {
        if scheme_index(s) >= params.config.num_classes {
            return Err(Error::invalid(format!(
                "model with {} classes cannot score scheme {s}",
                params.config.num_classes
            )));
        }
    }
    Ok(())
}

/// Evenly spaced selection of at most `max` example indices.
fn select_examples(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        (0..max).map(|k| k * len / max).collect()
    }
}

/// Direct-access sweep: attack held-out examples with the sign-gradient and
/// Gaussian jammers at each Es/Ej, no channel between attack and
/// classifier. Reads `es_ej_grid_db`, `families`, `include_baseline`,
/// `max_examples`, `sps`.
pub fn run_direct_access_sweep(
    params: &ModelParams,
    examples: &[Example],
    cfg: &SweepConfig,
) -> Result<Vec<TrialRecord>> {
    if examples.is_empty() {
        return Err(Error::invalid("no examples to attack"));
    }
    let selected = select_examples(examples.len(), cfg.max_examples);

    let per_example: Vec<Vec<TrialRecord>> = selected
        .par_iter()
        .enumerate()
        .map(|(trial, &idx)| {
            let ex = &examples[idx];
            let mut records = Vec::new();

            if cfg.include_baseline {
                let (predicted, delta) = classify(params, &ex.tensor, ex.label)?;
                records.push(TrialRecord {
                    scheme: ex.meta.scheme,
                    es_n0_db: ex.es_n0_db,
                    es_ej_db: f64::INFINITY,
                    cfo: 0.0,
                    time_offset: 0,
                    family: None,
                    predicted,
                    delta_logits: delta,
                    bit_errors: 0,
                    bits_total: 0,
                    trial,
                    seed: cfg.seed,
                });
            }

            // One gradient per example; the sign pattern is shared across
            // the intensity grid.
            let sign = if cfg.families.contains(&AttackFamily::Fgsm) {
                let grads =
                    input_gradient(params, std::slice::from_ref(&ex.tensor), &[ex.label])?;
                Some(sign_complex(&grads[0]))
            } else {
                None
            };

            for (j, &es_ej_db) in cfg.es_ej_grid_db.iter().enumerate() {
                for &family in &cfg.families {
                    let (adversarial, seed) = match family {
                        AttackFamily::Fgsm => {
                            let eps = epsilon_for(es_ej_db, cfg.sps)?;
                            let pert = sign.as_ref().expect("sign cached").scaled(eps);
                            (ex.tensor.add(&pert)?, cfg.seed)
                        }
                        AttackFamily::Gaussian => {
                            let seed =
                                derive_seed(cfg.seed, &[TAG_DIRECT, trial as u64, j as u64]);
                            let adv = gaussian_jam(ex, es_ej_db, cfg.sps, seed)?;
                            (adv.adversarial, seed)
                        }
                    };
                    let (predicted, delta) = classify(params, &adversarial, ex.label)?;
                    records.push(TrialRecord {
                        scheme: ex.meta.scheme,
                        es_n0_db: ex.es_n0_db,
                        es_ej_db,
                        cfo: 0.0,
                        time_offset: 0,
                        family: Some(family),
                        predicted,
                        delta_logits: delta,
                        bit_errors: 0,
                        bits_total: 0,
                        trial,
                        seed,
                    });
                }
            }
            Ok(records)
        })
        .collect::<Result<_>>()?;

    Ok(per_example.into_iter().flatten().collect())
}

/// Accuracy ranking of the studied input sizes at one attack intensity,
/// best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingRow {
    pub es_ej_db: f64,
    /// (input_size, accuracy) pairs, most accurate first.
    pub entries: Vec<(usize, f64)>,
}

/// Outcome of the input-size study.
#[derive(Debug, Clone)]
pub struct InputSizeStudy {
    /// Per-model records, keyed by input size.
    pub records_by_model: Vec<(usize, Vec<TrialRecord>)>,
    pub rankings: Vec<RankingRow>,
}

/// Repeat the direct-access sign-gradient sweep for models that differ only
/// in input size and rank their accuracy at every intensity.
pub fn run_input_size_study(
    models: &[(&ModelParams, &[Example])],
    cfg: &SweepConfig,
) -> Result<InputSizeStudy> {
    if models.len() < 2 {
        return Err(Error::invalid("input-size study needs at least two models"));
    }
    let mut sizes: Vec<usize> = models.iter().map(|(p, _)| p.config.input_size).collect();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.len() != models.len() {
        return Err(Error::invalid("models must have distinct input sizes"));
    }
    for (params, examples) in models {
        if examples
            .iter()
            .any(|e| e.tensor.len() != params.config.input_size)
        {
            return Err(Error::shape(
                "examples do not match their model's input size",
            ));
        }
    }

    let mut records_by_model = Vec::new();
    for (params, examples) in models {
        let records = run_direct_access_sweep(params, examples, cfg)?;
        records_by_model.push((params.config.input_size, records));
    }

    let rankings = cfg
        .es_ej_grid_db
        .iter()
        .map(|&es_ej_db| {
            let mut entries: Vec<(usize, f64)> = records_by_model
                .iter()
                .map(|(size, records)| {
                    let acc = super::accuracy_where(records, |r| {
                        r.family == Some(AttackFamily::Fgsm) && r.es_ej_db == es_ej_db
                    });
                    (*size, acc)
                })
                .collect();
            entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            RankingRow { es_ej_db, entries }
        })
        .collect();

    Ok(InputSizeStudy {
        records_by_model,
        rankings,
    })
}

/// Pre-softmax outputs of one example at one attack intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitSweepRow {
    pub es_ej_db: f64,
    pub logits: Vec<f64>,
    pub delta_logits: f64,
    pub predicted: usize,
}

/// Capture the classifier's logits for one example across the Es/Ej grid.
/// Reads `es_ej_grid_db`, `sps`.
pub fn run_logit_sweep(
    params: &ModelParams,
    example: &Example,
    cfg: &SweepConfig,
) -> Result<Vec<LogitSweepRow>> {
    let grads = input_gradient(params, std::slice::from_ref(&example.tensor), &[example.label])?;
    let sign = sign_complex(&grads[0]);
    cfg.es_ej_grid_db
        .par_iter()
        .map(|&es_ej_db| {
            let eps = epsilon_for(es_ej_db, cfg.sps)?;
            let adversarial = example.tensor.add(&sign.scaled(eps))?;
            let logits = forward(params, &[adversarial])?.pop().expect("one row");
            let delta_logits = difference_in_logits(&logits, example.label)?;
            let predicted = crate::classifier::argmax(&logits);
            Ok(LogitSweepRow {
                es_ej_db,
                logits,
                delta_logits,
                predicted,
            })
        })
        .collect()
}

/// Margin summary of one mutation-test SNR row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MutationRow {
    pub es_n0_db: f64,
    pub mean: f64,
    pub p25: f64,
    pub p75: f64,
}

/// Mutate one adversarial example with repeated AWGN draws per SNR and
/// summarize the margin distribution. Reads `es_n0_grid_db`,
/// `trials_per_point`, `sps`.
pub fn run_mutation_test(
    params: &ModelParams,
    example: &Example,
    es_ej_db: f64,
    cfg: &SweepConfig,
) -> Result<(Vec<TrialRecord>, Vec<MutationRow>)> {
    let adv = fgsm_untargeted(params, example, example.label, es_ej_db, cfg.sps)?;
    let adv_signal = IqSignal::new(adv.adversarial.to_complex(), cfg.sps)?;

    let mut coords = Vec::new();
    for snr_idx in 0..cfg.es_n0_grid_db.len() {
        for trial in 0..cfg.trials_per_point {
            coords.push((snr_idx, trial));
        }
    }
    let records: Vec<TrialRecord> = coords
        .par_iter()
        .map(|&(snr_idx, trial)| {
            let es_n0_db = cfg.es_n0_grid_db[snr_idx];
            let seed = derive_seed(cfg.seed, &[TAG_MUTATE, snr_idx as u64, trial as u64]);
            let noisy = apply_channel(&adv_signal, &ChannelSpec::new(es_n0_db, 0.0, seed)?);
            let tensor = IqTensor::from_complex(noisy.samples())?.normalized()?;
            let (predicted, delta) = classify(params, &tensor, example.label)?;
            Ok(TrialRecord {
                scheme: example.meta.scheme,
                es_n0_db,
                es_ej_db,
                cfo: 0.0,
                time_offset: 0,
                family: Some(AttackFamily::Fgsm),
                predicted,
                delta_logits: delta,
                bit_errors: 0,
                bits_total: 0,
                trial,
                seed,
            })
        })
        .collect::<Result<_>>()?;

    let rows = cfg
        .es_n0_grid_db
        .iter()
        .enumerate()
        .map(|(snr_idx, &es_n0_db)| {
            let deltas: Vec<f64> = records
                [snr_idx * cfg.trials_per_point..(snr_idx + 1) * cfg.trials_per_point]
                .iter()
                .map(|r| r.delta_logits)
                .collect();
            let summary = percentile_summary(&deltas)?;
            Ok(MutationRow {
                es_n0_db,
                mean: summary.mean,
                p25: summary.p25,
                p75: summary.p75,
            })
        })
        .collect::<Result<_>>()?;

    Ok((records, rows))
}

/// The attack variants evaluated inside one trial: the no-attack baseline
/// (when enabled) followed by the Es/Ej grid.
fn attack_variants(cfg: &SweepConfig) -> Vec<Option<f64>> {
    let mut variants = Vec::new();
    if cfg.include_baseline {
        variants.push(None);
    }
    variants.extend(cfg.es_ej_grid_db.iter().map(|&v| Some(v)));
    variants
}

fn add_perturbation(clean: &IqSignal, pattern: &IqSignal, eps: f64) -> IqSignal {
    let samples: Vec<Complex64> = clean
        .samples()
        .iter()
        .zip(pattern.samples())
        .map(|(c, p)| c + p * eps)
        .collect();
    IqSignal::new(samples, clean.sps()).expect("perturbed signal stays valid")
}

/// Transmitter-side attack: modulate, craft and add the perturbation, pass
/// the sum through the channel, then demodulate for BER and classify the
/// received window. Noise is calibrated against the clean signal's energy,
/// and all variants of a trial share bits and noise. Reads `schemes`,
/// `es_ej_grid_db`, `es_n0_grid_db`, `trials_per_point`,
/// `include_baseline`, `dither_es_n0_db`, modem fields.
pub fn run_self_protect_grid(params: &ModelParams, cfg: &SweepConfig) -> Result<Vec<TrialRecord>> {
    check_labels(params, &cfg.schemes)?;
    let input_size = params.config.input_size;
    if !input_size.is_multiple_of(cfg.sps) {
        return Err(Error::invalid("input size must be a multiple of sps"));
    }
    let shape = PulseShape::new(cfg.sps, cfg.span_symbols, cfg.rolloff)?;
    let num_symbols = input_size / cfg.sps;
    let variants = attack_variants(cfg);

    let mut coords = Vec::new();
    for scheme_idx in 0..cfg.schemes.len() {
        for snr_idx in 0..cfg.es_n0_grid_db.len() {
            for trial in 0..cfg.trials_per_point {
                coords.push((scheme_idx, snr_idx, trial));
            }
        }
    }

    let nested: Vec<Vec<TrialRecord>> = coords
        .par_iter()
        .map(|&(scheme_idx, snr_idx, trial)| {
            let scheme = cfg.schemes[scheme_idx];
            let label = scheme_index(scheme);
            let es_n0_db = cfg.es_n0_grid_db[snr_idx];
            let tags = [TAG_SELF, scheme_idx as u64, snr_idx as u64, trial as u64];
            let mut rng = Rng::from_tags(cfg.seed, &tags);
            let bits = random_bits(num_symbols * scheme.bits_per_symbol(), &mut rng);
            let clean = modulate(&bits, scheme, &shape)?;
            let es_ref = avg_energy_per_symbol(&clean);
            let pattern = craft_sign_pattern(
                params,
                &clean,
                label,
                input_size,
                cfg.dither_es_n0_db,
                derive_seed(cfg.seed, &tags),
            )?;
            let noise_seed = derive_seed(
                cfg.seed,
                &[TAG_SELF_NOISE, scheme_idx as u64, snr_idx as u64, trial as u64],
            );
            let channel = ChannelSpec::new(es_n0_db, 0.0, noise_seed)?;

            let mut records = Vec::with_capacity(variants.len());
            for &variant in &variants {
                let tx = match variant {
                    None => clean.clone(),
                    Some(es_ej_db) => {
                        add_perturbation(&clean, &pattern, epsilon_for(es_ej_db, cfg.sps)?)
                    }
                };
                let rx = apply_channel_ref(&tx, &channel, es_ref);
                let rx_bits = demodulate(&rx, scheme, &shape)?;
                let ber_errors = bits
                    .iter()
                    .zip(&rx_bits)
                    .filter(|(a, b)| a != b)
                    .count() as u64;
                let window = slice_examples(&rx, input_size, 0)?
                    .into_iter()
                    .next()
                    .expect("one full window");
                let tensor = window.normalized()?;
                let (predicted, delta) = classify(params, &tensor, label)?;
                records.push(TrialRecord {
                    scheme,
                    es_n0_db,
                    es_ej_db: variant.unwrap_or(f64::INFINITY),
                    cfo: 0.0,
                    time_offset: 0,
                    family: variant.map(|_| AttackFamily::Fgsm),
                    predicted,
                    delta_logits: delta,
                    bit_errors: ber_errors,
                    bits_total: bits.len() as u64,
                    trial,
                    seed: noise_seed,
                })
            }
            Ok(records)
        })
        .collect::<Result<_>>()?;

    Ok(nested.into_iter().flatten().collect())
}

/// Carrier-offset sweep: self-protect trials re-received at each frequency
/// offset. Schemes round-robin across trials. Reads `cfo_grid`,
/// `es_n0_grid_db`, `es_ej_grid_db`, `trials_per_point`,
/// `include_baseline`, modem fields.
pub fn run_freq_offset_sweep(params: &ModelParams, cfg: &SweepConfig) -> Result<Vec<TrialRecord>> {
    check_labels(params, &cfg.schemes)?;
    let input_size = params.config.input_size;
    let shape = PulseShape::new(cfg.sps, cfg.span_symbols, cfg.rolloff)?;
    let num_symbols = input_size / cfg.sps;
    let variants = attack_variants(cfg);

    let nested: Vec<Vec<TrialRecord>> = (0..cfg.trials_per_point)
        .into_par_iter()
        .map(|trial| {
            let scheme = cfg.schemes[trial % cfg.schemes.len()];
            let label = scheme_index(scheme);
            let tags = [TAG_FREQ, trial as u64];
            let mut rng = Rng::from_tags(cfg.seed, &tags);
            let bits = random_bits(num_symbols * scheme.bits_per_symbol(), &mut rng);
            let clean = modulate(&bits, scheme, &shape)?;
            let es_ref = avg_energy_per_symbol(&clean);
            let pattern = craft_sign_pattern(
                params,
                &clean,
                label,
                input_size,
                cfg.dither_es_n0_db,
                derive_seed(cfg.seed, &tags),
            )?;

            let mut records = Vec::new();
            for &variant in &variants {
                let tx = match variant {
                    None => clean.clone(),
                    Some(es_ej_db) => {
                        add_perturbation(&clean, &pattern, epsilon_for(es_ej_db, cfg.sps)?)
                    }
                };
                for (cfo_idx, &cfo) in cfg.cfo_grid.iter().enumerate() {
                    for (snr_idx, &es_n0_db) in cfg.es_n0_grid_db.iter().enumerate() {
                        // Noise is shared across variants: comparisons at
                        // one (trial, cfo, snr) point are paired.
                        let noise_seed = derive_seed(
                            cfg.seed,
                            &[
                                TAG_FREQ_NOISE,
                                trial as u64,
                                cfo_idx as u64,
                                snr_idx as u64,
                            ],
                        );
                        let rx = apply_channel_ref(
                            &tx,
                            &ChannelSpec::new(es_n0_db, cfo, noise_seed)?,
                            es_ref,
                        );
                        let tensor = slice_examples(&rx, input_size, 0)?
                            .into_iter()
                            .next()
                            .expect("one full window")
                            .normalized()?;
                        let (predicted, delta) = classify(params, &tensor, label)?;
                        records.push(TrialRecord {
                            scheme,
                            es_n0_db,
                            es_ej_db: variant.unwrap_or(f64::INFINITY),
                            cfo,
                            time_offset: 0,
                            family: variant.map(|_| AttackFamily::Fgsm),
                            predicted,
                            delta_logits: delta,
                            bit_errors: 0,
                            bits_total: 0,
                            trial,
                            seed: noise_seed,
                        });
                    }
                }
            }
            Ok(records)
        })
        .collect::<Result<_>>()?;

    Ok(nested.into_iter().flatten().collect())
}

/// Window-alignment sweep: one received waveform per (trial, variant, SNR)
/// is re-sliced at every start offset, classifying the first full window
/// each time. Reads `time_offsets`, `es_n0_grid_db`, `es_ej_grid_db`,
/// `trials_per_point`, `include_baseline`, modem fields.
pub fn run_time_offset_sweep(params: &ModelParams, cfg: &SweepConfig) -> Result<Vec<TrialRecord>> {
    check_labels(params, &cfg.schemes)?;
    let input_size = params.config.input_size;
    let shape = PulseShape::new(cfg.sps, cfg.span_symbols, cfg.rolloff)?;
    let max_offset = cfg.time_offsets.iter().copied().max().unwrap_or(0);
    if max_offset >= input_size {
        return Err(Error::invalid(
            "time offsets must be smaller than the input size",
        ));
    }
    // Enough windows that every offset still yields one full window.
    let num_windows = max_offset / input_size + 2;
    let num_symbols = num_windows * input_size / cfg.sps;
    let variants = attack_variants(cfg);

    let nested: Vec<Vec<TrialRecord>> = (0..cfg.trials_per_point)
        .into_par_iter()
        .map(|trial| {
            let scheme = cfg.schemes[trial % cfg.schemes.len()];
            let label = scheme_index(scheme);
            let tags = [TAG_TIME, trial as u64];
            let mut rng = Rng::from_tags(cfg.seed, &tags);
            let bits = random_bits(num_symbols * scheme.bits_per_symbol(), &mut rng);
            let clean = modulate(&bits, scheme, &shape)?;
            let es_ref = avg_energy_per_symbol(&clean);
            let pattern = craft_sign_pattern(
                params,
                &clean,
                label,
                input_size,
                cfg.dither_es_n0_db,
                derive_seed(cfg.seed, &tags),
            )?;

            let mut records = Vec::new();
            for &variant in &variants {
                let tx = match variant {
                    None => clean.clone(),
                    Some(es_ej_db) => {
                        add_perturbation(&clean, &pattern, epsilon_for(es_ej_db, cfg.sps)?)
                    }
                };
                for (snr_idx, &es_n0_db) in cfg.es_n0_grid_db.iter().enumerate() {
                    let noise_seed = derive_seed(
                        cfg.seed,
                        &[TAG_TIME_NOISE, trial as u64, snr_idx as u64],
                    );
                    let rx = apply_channel_ref(
                        &tx,
                        &ChannelSpec::new(es_n0_db, 0.0, noise_seed)?,
                        es_ref,
                    );
                    for &offset in &cfg.time_offsets {
                        let tensor = slice_examples(&rx, input_size, offset)?
                            .into_iter()
                            .next()
                            .expect("window fits by construction")
                            .normalized()?;
                        let (predicted, delta) = classify(params, &tensor, label)?;
                        records.push(TrialRecord {
                            scheme,
                            es_n0_db,
                            es_ej_db: variant.unwrap_or(f64::INFINITY),
                            cfo: 0.0,
                            time_offset: offset,
                            family: variant.map(|_| AttackFamily::Fgsm),
                            predicted,
                            delta_logits: delta,
                            bit_errors: 0,
                            bits_total: 0,
                            trial,
                            seed: noise_seed,
                        });
                    }
                }
            }
            Ok(records)
        })
        .collect::<Result<_>>()?;

    Ok(nested.into_iter().flatten().collect())
}
