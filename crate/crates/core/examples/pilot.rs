use scanlab_core::dataset::{build_injected_split, DatasetSpec, ORIGINAL_SCAN_CAP};
use scanlab_core::eval::exact_match_accuracy;
use scanlab_core::model::ModelConfig;
use scanlab_core::train::{fit_config, max_decode_len, split_vocabs, train, TrainConfig};
use scanlab_core::model::Seq2SeqModel;
use std::time::Instant;

fn main() {
    let arch = std::env::args().nth(1).unwrap_or_else(|| "transformer".into());
    let n_prims: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(100);
    let epochs_per_stage: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(4);
    let stages: usize = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(6);

    let spec = DatasetSpec::scan_uniform(n_prims - 3, ORIGINAL_SCAN_CAP, 0);
    let t0 = Instant::now();
    let split = build_injected_split(&spec).unwrap();
    eprintln!("split built in {:.1}s: train={} test={}", t0.elapsed().as_secs_f64(), split.train.len(), split.test.len());

    let (sv, tv) = split_vocabs(&split);
    let template = if arch == "lstm" {
        ModelConfig::scan_lstm(0, 0)
    } else {
        ModelConfig::scan_transformer(0, 0)
    };
    let cfg = fit_config(&template, &sv, &tv);
    let mut model = Seq2SeqModel::build(cfg, sv, tv, 0).unwrap();
    let (lr, batch) = if arch == "lstm" { (8e-3, 256) } else { (5e-4, 128) };

    for stage in 0..stages {
        let tcfg = TrainConfig::new(lr, batch, epochs_per_stage, 0.1).with_seed(1000 + stage as u64);
        let t1 = Instant::now();
        let rec = train(&mut model, &split, &tcfg).unwrap();
        let train_time = t1.elapsed().as_secs_f64();
        let t2 = Instant::now();
        let acc = exact_match_accuracy(&model, &split.test, max_decode_len(&split));
        eprintln!(
            "{arch} n={n_prims} epochs {}..{}: {:.1}s/epoch loss={:.4} acc={:.4} (eval {:.1}s)",
            stage * epochs_per_stage,
            (stage + 1) * epochs_per_stage,
            train_time / epochs_per_stage as f64,
            rec.per_epoch_loss.last().unwrap(),
            acc,
            t2.elapsed().as_secs_f64()
        );
    }
}
