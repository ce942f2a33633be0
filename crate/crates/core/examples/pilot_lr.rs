use scanlab_core::dataset::{build_injected_split, DatasetSpec, ORIGINAL_SCAN_CAP};
use scanlab_core::eval::exact_match_accuracy;
use scanlab_core::model::{ModelConfig, Seq2SeqModel};
use scanlab_core::train::{fit_config, max_decode_len, split_vocabs, train, TrainConfig};
use std::time::Instant;

fn main() {
    let lr: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8e-4);
    let n: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(100);
    let arch = std::env::args().nth(3).unwrap_or_else(|| "transformer".into());
    let stages: usize = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(5);
    let per: usize = std::env::args().nth(5).and_then(|s| s.parse().ok()).unwrap_or(12);

    let spec = DatasetSpec::scan_uniform(n - 3, ORIGINAL_SCAN_CAP, 0);
    let split = build_injected_split(&spec).unwrap();
    let (sv, tv) = split_vocabs(&split);
    let template = if arch == "lstm" { ModelConfig::scan_lstm(0, 0) } else { ModelConfig::scan_transformer(0, 0) };
    let cfg = fit_config(&template, &sv, &tv);
    let mut model = Seq2SeqModel::build(cfg, sv, tv, 0).unwrap();
    let batch = if arch == "lstm" { 256 } else { 128 };

    for stage in 0..stages {
        let tcfg = TrainConfig::new(lr, batch, per, 0.1).with_seed(2000 + stage as u64);
        let t1 = Instant::now();
        let rec = train(&mut model, &split, &tcfg).unwrap();
        let dt = t1.elapsed().as_secs_f64() / per as f64;
        let acc = exact_match_accuracy(&model, &split.test, max_decode_len(&split));
        println!(
            "{arch} lr={lr} n={n} epochs {}: {:.1}s/ep loss={:.4} acc={:.4}",
            (stage + 1) * per, dt, rec.per_epoch_loss.last().unwrap(), acc
        );
    }
}
