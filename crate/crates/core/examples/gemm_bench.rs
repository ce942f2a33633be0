use scanlab_core::tensor::{matmul, Tensor};
use std::time::Instant;

fn main() {
    for (m, k, n) in [(1920, 128, 128), (1920, 128, 384), (1920, 128, 256), (128, 192, 256), (20, 128, 128)] {
        let a = Tensor::from_vec(m, k, (0..m * k).map(|i| (i % 7) as f64 * 0.1).collect());
        let b = Tensor::from_vec(k, n, (0..k * n).map(|i| (i % 5) as f64 * 0.1).collect());
        let mut c = Tensor::zeros(m, n);
        let flops = 2.0 * m as f64 * k as f64 * n as f64;
        let t0 = Instant::now();
        let mut iters = 0u64;
        while t0.elapsed().as_secs_f64() < 1.0 {
            c = matmul(&a, false, &b, false);
            iters += 1;
        }
        let dt = t0.elapsed().as_secs_f64() / iters as f64;
        println!("{}x{}x{}: {:.1} GFLOP/s ({} iters) sink={}", m, k, n, flops / dt / 1e9, iters, c.at(0,0));
    }
}
