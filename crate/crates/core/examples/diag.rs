use scanlab_core::dataset::{build_injected_split, DatasetSpec, ORIGINAL_SCAN_CAP};
use scanlab_core::eval::exact_match_accuracy;
use scanlab_core::model::{ModelConfig, Seq2SeqModel, BOS, EOS};
use scanlab_core::train::{fit_config, max_decode_len, split_vocabs, train, TrainConfig};

fn main() {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(12);
    let spec = DatasetSpec::scan_uniform(97, ORIGINAL_SCAN_CAP, 0);
    let split = build_injected_split(&spec).unwrap();
    let (sv, tv) = split_vocabs(&split);
    let cfg = fit_config(&ModelConfig::scan_transformer(0, 0), &sv, &tv);
    let mut model = Seq2SeqModel::build(cfg, sv.clone(), tv.clone(), 0).unwrap();
    let tcfg = TrainConfig::new(5e-4, 128, epochs, 0.1).with_seed(0);
    let rec = train(&mut model, &split, &tcfg).unwrap();
    println!("final loss {:.4}, recorded test acc {:?}", rec.per_epoch_loss.last().unwrap(), rec.final_test_accuracy);

    let max_len = max_decode_len(&split);
    let train_sub: Vec<_> = split.train.iter().filter(|e| e.input.tokens().len() > 1).take(300).cloned().collect();
    let train_acc = exact_match_accuracy(&model, &train_sub, max_len);
    println!("train-subset exact match: {train_acc:.4}");

    for (name, examples) in [("TRAIN", &split.train[100..105]), ("TEST", &split.test[0..5])] {
        println!("--- {name} ---");
        for e in examples {
            let mut src = sv.encode(e.input.tokens()).unwrap();
            src.push(EOS);
            let got = scanlab_core::model::greedy_decode(&model, &src, max_len).unwrap();
            let got_tokens: Vec<String> = got.iter().filter_map(|&id| tv.token(id).map(|s| s.to_string())).collect();
            println!("IN: {}\n  gold: {}\n  got:  {}", e.input, e.output, got_tokens.join(" "));
        }
    }
    let _ = BOS;
}
