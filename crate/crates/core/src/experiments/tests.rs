use super::*;
use crate::classifier::{Example, ExampleMeta, ModelConfig, ModelParams, NormMode};
use crate::rng::Rng;
use crate::signal::IqTensor;

fn tiny_params() -> ModelParams {
    let config = ModelConfig {
        input_size: 32,
        num_classes: 5,
        conv1_channels: 6,
        conv2_channels: 4,
        kernel_width: 7,
        fc1_units: 8,
        norm_mode: NormMode::BatchNorm,
        dropout_rate: 0.5,
    };
    ModelParams::init(&config, 99).unwrap()
}

fn synthetic_examples(count: usize, n: usize, seed: u64) -> Vec<Example> {
    let mut rng = Rng::new(seed);
    (0..count)
        .map(|k| {
            let scheme = ModScheme::ALL[k % 5];
            let tensor = IqTensor::new(
                (0..n).map(|_| rng.next_normal()).collect(),
                (0..n).map(|_| rng.next_normal()).collect(),
            )
            .unwrap()
            .normalized()
            .unwrap();
            Example {
                tensor,
                label: k % 5,
                es_n0_db: 10.0,
                meta: ExampleMeta {
                    scheme,
                    cfo: 0.0,
                    span_symbols: 8,
                    rolloff: 0.35,
                },
            }
        })
        .collect()
}

fn tiny_sweep(seed: u64) -> SweepConfig {
    SweepConfig {
        trials_per_point: 3,
        es_ej_grid_db: vec![0.0, 10.0, 20.0],
        es_n0_grid_db: vec![10.0, f64::INFINITY],
        cfo_grid: vec![-0.001, 0.0, 0.001],
        time_offsets: vec![0, 1, 5],
        span_symbols: 4,
        max_examples: 6,
        ..SweepConfig::direct_access(seed)
    }
}

#[test]
fn direct_access_counts_and_determinism() {
    let params = tiny_params();
    let examples = synthetic_examples(10, 32, 1);
    let cfg = tiny_sweep(7);
    let records = run_direct_access_sweep(&params, &examples, &cfg).unwrap();
    // 6 selected examples x (1 baseline + 3 ratios x 2 families).
    assert_eq!(records.len(), 6 * 7);
    let again = run_direct_access_sweep(&params, &examples, &cfg).unwrap();
    assert_eq!(records, again);
}

#[test]
fn csv_bytes_identical_across_thread_counts() {
    let params = tiny_params();
    let examples = synthetic_examples(8, 32, 2);
    let cfg = tiny_sweep(8);
    let csv_from = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let records = run_direct_access_sweep(&params, &examples, &cfg).unwrap();
            records_to_csv(&records)
        })
    };
    let single = csv_from(1);
    let multi = csv_from(4);
    assert_eq!(single, multi);
    assert!(single.starts_with(TRIAL_CSV_HEADER));
}

#[test]
fn csv_quotes_only_when_needed() {
    assert_eq!(super::csv_field("plain"), "plain");
    assert_eq!(super::csv_field("a,b"), "\"a,b\"");
    assert_eq!(super::csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
}

#[test]
fn input_size_study_rankings_are_permutations() {
    let params_a = tiny_params();
    let config_b = ModelConfig {
        input_size: 64,
        ..params_a.config.clone()
    };
    let params_b = ModelParams::init(&config_b, 101).unwrap();
    let ex_a = synthetic_examples(6, 32, 3);
    let ex_b = synthetic_examples(6, 64, 4);
    let cfg = SweepConfig {
        families: vec![crate::attack::AttackFamily::Fgsm],
        ..tiny_sweep(9)
    };
    let study =
        run_input_size_study(&[(&params_a, &ex_a), (&params_b, &ex_b)], &cfg).unwrap();
    assert_eq!(study.rankings.len(), 3);
    for row in &study.rankings {
        let mut sizes: Vec<usize> = row.entries.iter().map(|e| e.0).collect();
        sizes.sort();
        assert_eq!(sizes, vec![32, 64]);
        assert!(row.entries[0].1 >= row.entries[1].1);
    }

    // Mismatched example sizes are rejected.
    assert!(run_input_size_study(&[(&params_a, &ex_b), (&params_b, &ex_a)], &cfg).is_err());
}

#[test]
fn logit_sweep_has_one_row_per_ratio() {
    let params = tiny_params();
    let examples = synthetic_examples(1, 32, 5);
    let cfg = SweepConfig {
        es_ej_grid_db: (0..=40).rev().map(|k| k as f64).collect(),
        ..tiny_sweep(10)
    };
    let rows = run_logit_sweep(&params, &examples[0], &cfg).unwrap();
    assert_eq!(rows.len(), 41);
    assert_eq!(rows[0].es_ej_db, 40.0);
    assert!(rows.iter().all(|r| r.logits.len() == 5));
    // At 40 dB the perturbation is vanishing, so the margin is close to
    // the clean example's.
    let clean = crate::classifier::forward(&params, &[examples[0].tensor.clone()]).unwrap();
    let clean_delta =
        crate::metrics::difference_in_logits(&clean[0], examples[0].label).unwrap();
    assert!(
        (rows[0].delta_logits - clean_delta).abs() < 0.05 * clean_delta.abs().max(1.0),
        "delta at 40 dB {} vs clean {clean_delta}",
        rows[0].delta_logits
    );
    // Discrete zero crossing: if the endpoints disagree in sign, some
    // adjacent pair must change sign.
    let first = rows.first().unwrap().delta_logits;
    let last = rows.last().unwrap().delta_logits;
    if first > 0.0 && last < 0.0 {
        assert!(rows.windows(2).any(|w| w[0].delta_logits > 0.0 && w[1].delta_logits <= 0.0));
    }
}

#[test]
fn mutation_rows_summarize_each_snr() {
    let params = tiny_params();
    let examples = synthetic_examples(1, 32, 6);
    let cfg = SweepConfig {
        trials_per_point: 10,
        es_n0_grid_db: (0..=20).rev().step_by(2).map(|k| k as f64).collect(),
        ..tiny_sweep(11)
    };
    let (records, rows) = run_mutation_test(&params, &examples[0], 10.0, &cfg).unwrap();
    assert_eq!(records.len(), 11 * 10);
    assert_eq!(rows.len(), 11);
    for row in &rows {
        assert!(row.p25 <= row.p75);
    }
    let (again, _) = run_mutation_test(&params, &examples[0], 10.0, &cfg).unwrap();
    assert_eq!(records, again);
}

#[test]
fn self_protect_counts_and_noiseless_baseline() {
    let params = tiny_params();
    let cfg = SweepConfig {
        schemes: vec![ModScheme::Bpsk, ModScheme::Qam16],
        trials_per_point: 2,
        es_ej_grid_db: vec![20.0],
        es_n0_grid_db: vec![f64::INFINITY],
        ..tiny_sweep(12)
    };
    let records = run_self_protect_grid(&params, &cfg).unwrap();
    // 2 schemes x 1 snr x 2 trials x (baseline + 1 ratio).
    assert_eq!(records.len(), 2 * 2 * 2);
    for r in &records {
        assert_eq!(r.bits_total as usize, 32 / 8 * r.scheme.bits_per_symbol());
    }
    // Noiseless, unattacked transmission decodes perfectly.
    let baseline_errors: u64 = records
        .iter()
        .filter(|r| r.family.is_none())
        .map(|r| r.bit_errors)
        .sum();
    assert_eq!(baseline_errors, 0);
    // A 20 dB ratio perturbation is far too weak to flip bits either.
    assert!(records.iter().all(|r| r.bit_errors == 0));
}

#[test]
fn freq_offset_counts() {
    let params = tiny_params();
    let cfg = SweepConfig {
        trials_per_point: 2,
        es_ej_grid_db: vec![8.0],
        es_n0_grid_db: vec![20.0],
        ..tiny_sweep(13)
    };
    let records = run_freq_offset_sweep(&params, &cfg).unwrap();
    // 2 trials x (baseline + 1 ratio) x 3 offsets x 1 snr.
    assert_eq!(records.len(), 2 * 2 * 3);
    assert!(records.iter().any(|r| r.cfo == 0.0));
    let again = run_freq_offset_sweep(&params, &cfg).unwrap();
    assert_eq!(records, again);
}

#[test]
fn time_offset_counts_and_zero_offset_alignment() {
    let params = tiny_params();
    let cfg = SweepConfig {
        trials_per_point: 2,
        es_ej_grid_db: vec![8.0],
        es_n0_grid_db: vec![20.0],
        ..tiny_sweep(14)
    };
    let records = run_time_offset_sweep(&params, &cfg).unwrap();
    // 2 trials x (baseline + 1 ratio) x 1 snr x 3 offsets.
    assert_eq!(records.len(), 2 * 2 * 3);
    assert!(records.iter().any(|r| r.time_offset == 5));
    let again = run_time_offset_sweep(&params, &cfg).unwrap();
    assert_eq!(records, again);
}

#[test]
fn accuracy_and_ber_helpers() {
    let records = vec![
        TrialRecord {
            scheme: ModScheme::Bpsk,
            es_n0_db: 10.0,
            es_ej_db: 4.0,
            cfo: 0.0,
            time_offset: 0,
            family: Some(crate::attack::AttackFamily::Fgsm),
            predicted: 0,
            delta_logits: 1.0,
            bit_errors: 2,
            bits_total: 10,
            trial: 0,
            seed: 0,
        },
        TrialRecord {
            scheme: ModScheme::Qpsk,
            es_n0_db: 10.0,
            es_ej_db: 4.0,
            cfo: 0.0,
            time_offset: 0,
            family: Some(crate::attack::AttackFamily::Fgsm),
            predicted: 0,
            delta_logits: -1.0,
            bit_errors: 3,
            bits_total: 10,
            trial: 1,
            seed: 0,
        },
    ];
    assert_eq!(accuracy_where(&records, |_| true), 0.5);
    assert_eq!(ber_where(&records, |_| true), 0.25);
    assert!(accuracy_where(&records, |r| r.es_ej_db == 99.0).is_nan());
}
