use scanlab_core::dataset::{build_injected_split, DatasetSpec, ORIGINAL_SCAN_CAP};
use scanlab_core::model::{Batch, ModelConfig, Seq2SeqModel, BOS, EOS};
use scanlab_core::train::{fit_config, split_vocabs};
use std::time::Instant;

fn main() {
    let spec = DatasetSpec::scan_uniform(97, ORIGINAL_SCAN_CAP, 0);
    let split = build_injected_split(&spec).unwrap();
    let (sv, tv) = split_vocabs(&split);
    let cfg = fit_config(&ModelConfig::scan_transformer(0, 0), &sv, &tv);
    let model = Seq2SeqModel::build(cfg, sv.clone(), tv.clone(), 0).unwrap();

    // One batch of 128 real examples.
    let mut batch = Batch::default();
    for e in split.train.iter().filter(|e| e.input.tokens().len() > 1).take(128) {
        let mut src = sv.encode(e.input.tokens()).unwrap();
        src.push(EOS);
        let out = tv.encode(e.output.tokens()).unwrap();
        let mut tgt_in = vec![BOS];
        tgt_in.extend(&out);
        let mut tgt_out = out;
        tgt_out.push(EOS);
        batch.src.push(src);
        batch.tgt_in.push(tgt_in);
        batch.tgt_out.push(tgt_out);
    }
    let n_tok: usize = batch.tgt_out.iter().map(|t| t.len()).sum();
    println!("batch: 128 seqs, {} target tokens", n_tok);

    // Forward only.
    let t0 = Instant::now();
    let mut iters = 0;
    while t0.elapsed().as_secs_f64() < 5.0 {
        let pass = model.forward_batch(&batch, false, None).unwrap();
        std::hint::black_box(pass.tape.value(pass.loss.unwrap()).item());
        iters += 1;
    }
    let fwd = t0.elapsed().as_secs_f64() / iters as f64;
    println!("forward: {:.1} ms ({} iters)", fwd * 1e3, iters);

    // Forward + backward via compute_gradients.
    let t0 = Instant::now();
    let mut iters = 0;
    while t0.elapsed().as_secs_f64() < 5.0 {
        let (g, l) = model.compute_gradients(&batch, false, None).unwrap();
        std::hint::black_box((g.by_param.len(), l));
        iters += 1;
    }
    let fb = t0.elapsed().as_secs_f64() / iters as f64;
    println!("forward+backward: {:.1} ms ({} iters) -> est {:.0} s/epoch", fb * 1e3, iters, fb * 104.0);

    // Decode 256 sequences.
    let srcs: Vec<Vec<u32>> = batch.src.iter().cloned().cycle().take(256).collect();
    let t0 = Instant::now();
    let out = scanlab_core::model::greedy_decode_batch(&model, &srcs, 74).unwrap();
    std::hint::black_box(out.len());
    let dt = t0.elapsed().as_secs_f64();
    println!("decode: {:.1} seqs/s -> 7706 in {:.0} s", 256.0 / dt, 7706.0 * dt / 256.0);
}
