use rfml_core::classifier::{evaluate, train, ModelConfig, TrainConfig};
use rfml_core::dataset::{generate, split, DatasetSpec};
use std::time::Instant;

#[test]
#[ignore]
fn spike_data_scaling() {
    let spec = DatasetSpec::standard(128, 120, 7);
    let ds = generate(&spec).unwrap();
    let (train_set, val_set, test_set) = split(&ds, 0.30, 0.05, 1).unwrap();
    println!("train {} val {} test {}", train_set.len(), val_set.len(), test_set.len());

    let config = ModelConfig::standard(128, 5);
    let tcfg = TrainConfig { max_epochs: 25, seed: 3, ..TrainConfig::default() };
    let t = Instant::now();
    let (params, history) = train(&train_set.examples, &val_set.examples, &config, &tcfg).unwrap();
    println!("training took {:?} over {} epochs", t.elapsed(), history.len());
    for h in &history {
        println!("epoch {:2}: train {:.4} val {:.4} acc {:.3}", h.epoch, h.train_loss, h.val_loss, h.val_accuracy);
    }
    let (_, test_acc) = evaluate(&params, &test_set.examples).unwrap();
    println!("TEST ACC {test_acc:.3}");
    for snr in [0.0, 10.0, 16.0, 20.0] {
        let slice: Vec<_> = test_set.examples.iter().filter(|e| e.es_n0_db == snr).cloned().collect();
        let (_, acc) = evaluate(&params, &slice).unwrap();
        println!("  snr {snr:4} dB: acc {acc:.3} ({} ex)", slice.len());
    }
    // Per-class accuracy at high SNR.
    for class in 0..5 {
        let slice: Vec<_> = test_set.examples.iter()
            .filter(|e| e.label == class && e.es_n0_db >= 16.0).cloned().collect();
        let (_, acc) = evaluate(&params, &slice).unwrap();
        println!("  class {class} (>=16dB): acc {acc:.3} ({} ex)", slice.len());
    }
}
