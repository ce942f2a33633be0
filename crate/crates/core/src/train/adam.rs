//! Adam. Standard update with bias correction:
//!
//! ```text
//! m <- b1 m + (1 - b1) g        mhat = m / (1 - b1^t)
//! v <- b2 v + (1 - b2) g^2      vhat = v / (1 - b2^t)
//! p <- p - lr * mhat / (sqrt(vhat) + eps)
//! ```

use super::super::model::{GradSet, Param};
use crate::tensor::Tensor;

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64, params: &[Param]) -> Self {
        let m = params
            .iter()
            .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
            .collect();
        let v = params
            .iter()
            .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
            .collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m,
            v,
        }
    }

    /// One update over all trainable parameters with gradients.
    pub fn step(&mut self, params: &mut [Param], grads: &GradSet) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, param) in params.iter_mut().enumerate() {
            let Some(grad) = &grads.by_param[i] else {
                continue;
            };
            if !param.trainable {
                continue;
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = param.value.data_mut();
            for ((pv, g), (mv, vv)) in p
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * g;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * g * g;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GradSet, Param, ParamGroup};

    /// Independent scalar reference of the update equations, stepped in
    /// lockstep with the implementation on a 3-parameter quadratic bowl.
    #[test]
    fn matches_reference_for_100_steps() {
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let targets = [3.0, -1.5, 0.25];
        let mut params = vec![Param {
            name: "theta".into(),
            group: ParamGroup::Encoder,
            value: Tensor::from_vec(1, 3, vec![0.0, 0.0, 0.0]),
            trainable: true,
        }];
        let mut adam = Adam::new(lr, b1, b2, eps, &params);

        let mut theta_ref = [0.0f64; 3];
        let mut m_ref = [0.0f64; 3];
        let mut v_ref = [0.0f64; 3];

        for t in 1..=100u32 {
            // Loss 0.5 * sum (theta - target)^2, gradient theta - target.
            let grad: Vec<f64> = params[0]
                .value
                .data()
                .iter()
                .zip(targets)
                .map(|(p, t)| p - t)
                .collect();
            let grads = GradSet {
                by_param: vec![Some(Tensor::from_vec(1, 3, grad))],
            };
            adam.step(&mut params, &grads);

            #[allow(clippy::needless_range_loop)]
            for k in 0..3 {
                let g = theta_ref[k] - targets[k];
                m_ref[k] = b1 * m_ref[k] + (1.0 - b1) * g;
                v_ref[k] = b2 * v_ref[k] + (1.0 - b2) * g * g;
                let mhat = m_ref[k] / (1.0 - b1.powi(t as i32));
                let vhat = v_ref[k] / (1.0 - b2.powi(t as i32));
                theta_ref[k] -= lr * mhat / (vhat.sqrt() + eps);
            }
            for (k, want) in theta_ref.iter().enumerate() {
                assert!(
                    (params[0].value.data()[k] - want).abs() < 1e-12,
                    "step {t} param {k}: {} vs {}",
                    params[0].value.data()[k],
                    want
                );
            }
        }
        // After 100 steps on a quadratic bowl the iterate approaches the
        // targets.
        for (k, target) in targets.iter().enumerate() {
            assert!((params[0].value.data()[k] - target).abs() < 1.0);
        }
    }

    #[test]
    fn frozen_parameters_never_move() {
        let mut params = vec![Param {
            name: "frozen".into(),
            group: ParamGroup::Encoder,
            value: Tensor::from_vec(1, 2, vec![1.0, 2.0]),
            trainable: false,
        }];
        let mut adam = Adam::new(0.5, 0.9, 0.999, 1e-8, &params);
        let grads = GradSet {
            by_param: vec![Some(Tensor::from_vec(1, 2, vec![10.0, 10.0]))],
        };
        adam.step(&mut params, &grads);
        assert_eq!(params[0].value.data(), &[1.0, 2.0]);
    }
}
