use rfml_core::classifier::{evaluate, save_params, train, ModelConfig, TrainConfig};
use rfml_core::dataset::{generate, save, split, DatasetSpec};
use std::path::Path;
use std::time::Instant;

fn build(n: usize, per_cell: usize, seed: u64, dir: &Path) {
    let model_path = dir.join(format!("m{n}_{per_cell}.rfml"));
    if model_path.exists() {
        eprintln!("N={n} per_cell={per_cell}: already built");
        return;
    }
    let spec = DatasetSpec::standard(n, per_cell, seed);
    let ds = generate(&spec).unwrap();
    save(&ds, &dir.join(format!("d{n}_{per_cell}.rfds"))).unwrap();
    let (tr, va, te) = split(&ds, 0.30, 0.05, seed ^ 5).unwrap();
    let config = ModelConfig::standard(n, 5);
    let tcfg = TrainConfig { max_epochs: 25, seed: seed ^ 7, ..TrainConfig::default() };
    let t = Instant::now();
    let (params, hist) = train(&tr.examples, &va.examples, &config, &tcfg).unwrap();
    let (_, acc) = evaluate(&params, &te.examples).unwrap();
    let high: Vec<_> = te.examples.iter().filter(|e| e.es_n0_db >= 16.0).cloned().collect();
    let (_, acc_high) = evaluate(&params, &high).unwrap();
    eprintln!(
        "N={n} per_cell={per_cell}: {} epochs in {:?}, test acc {acc:.3}, >=16dB acc {acc_high:.3}",
        hist.len(), t.elapsed()
    );
    save_params(&params, &model_path).unwrap();
}

#[test]
#[ignore]
fn build_fixture_models() {
    let dir = Path::new("/tmp/rfml-fixtures");
    std::fs::create_dir_all(dir).unwrap();
    for spec in std::env::var("SPIKE_BUILD").unwrap_or_else(|_| "128:220".into()).split(',') {
        let (n, per_cell) = spec.split_once(':').unwrap();
        let n: usize = n.parse().unwrap();
        let per_cell: usize = per_cell.parse().unwrap();
        build(n, per_cell, 1000 + n as u64 + per_cell as u64, dir);
    }
    eprintln!("fixture build complete");
}
