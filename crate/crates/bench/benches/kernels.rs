use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use scanlab_core::dataset::{build_add_jump_split, build_injected_split, DatasetSpec};
use scanlab_core::grammar::{enumerate_commands, interpret_scan, Command, Grammar};
use scanlab_core::model::{Batch, ModelConfig, Seq2SeqModel, Vocab, BOS, EOS};
use scanlab_core::tensor::{matmul, Tensor};

fn grammar_benches(c: &mut Criterion) {
    let g = Grammar::scan();
    c.bench_function("enumerate_scan_k4", |b| {
        b.iter(|| enumerate_commands(&g).unwrap().len())
    });
    let cmd = Command::from_str("jump around left thrice after walk opposite right twice");
    c.bench_function("interpret_scan", |b| b.iter(|| interpret_scan(&g, &cmd).unwrap()));
    c.bench_function("build_add_jump_split", |b| {
        b.iter(|| build_add_jump_split().unwrap().train.len())
    });
    c.bench_function("build_injected_n100", |b| {
        b.iter_batched(
            || DatasetSpec::scan_uniform(97, 13_204, 0),
            |spec| build_injected_split(&spec).unwrap().train.len(),
            BatchSize::PerIteration,
        )
    });
}

fn engine_benches(c: &mut Criterion) {
    let m = 512;
    let a = Tensor::from_vec(m, 128, (0..m * 128).map(|i| (i % 13) as f64 * 0.03).collect());
    let b2 = Tensor::from_vec(128, 256, (0..128 * 256).map(|i| (i % 7) as f64 * 0.05).collect());
    c.bench_function("gemm_512x128x256", |b| b.iter(|| matmul(&a, false, &b2, false)));

    let src_vocab = Vocab::from_tokens(["a", "b", "c", "d", "e"]);
    let tgt_vocab = Vocab::from_tokens(["P", "Q", "R", "S"]);
    let cfg = ModelConfig {
        src_vocab: src_vocab.len(),
        tgt_vocab: tgt_vocab.len(),
        ..ModelConfig::scan_transformer(src_vocab.len(), tgt_vocab.len())
    };
    let model = Seq2SeqModel::build(cfg, src_vocab, tgt_vocab, 0).unwrap();
    let batch = Batch {
        src: (0..32).map(|i| vec![3 + (i % 5) as u32, 4, 5, EOS]).collect(),
        tgt_in: (0..32).map(|i| vec![BOS, 3 + (i % 4) as u32, 4, 5, 3]).collect(),
        tgt_out: (0..32).map(|i| vec![3 + (i % 4) as u32, 4, 5, 3, EOS]).collect(),
    };
    c.bench_function("transformer_fwd_bwd_batch32", |b| {
        b.iter(|| model.compute_gradients(&batch, false, None).unwrap().1)
    });
}

criterion_group!(benches, grammar_benches, engine_benches);
criterion_main!(benches);
