//! Adam optimizer with bias correction.

use serde::{Deserialize, Serialize};

use super::{DenseNet, Gradients, Layer, Scalar};
use crate::error::{CoreError, Result};

/// Optimizer constants. The moment coefficients default to the community
/// standard 0.9 / 0.999 / 1e-8.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        AdamParams {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators for one network. Shapes mirror the
/// network's layers; the step count increases by one per update.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub params: AdamParams,
    step: u64,
    m: Vec<Layer<T>>,
    v: Vec<Layer<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(net: &DenseNet<T>, params: AdamParams) -> Self {
        let zeros: Vec<Layer<T>> = net
            .layers
            .iter()
            .map(|l| Layer {
                weights: ndarray::Array2::zeros(l.weights.raw_dim()),
                bias: ndarray::Array1::zeros(l.bias.raw_dim()),
            })
            .collect();
        AdamState {
            params,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update. Rejects non-finite gradients so a diverging run
    /// fails at the first bad update rather than poisoning the parameters.
    pub fn apply(&mut self, net: &mut DenseNet<T>, grads: &Gradients<T>) -> Result<()> {
        if !grads.is_finite() {
            return Err(CoreError::NonFinite {
                quantity: "gradient".into(),
                context: "adam update".into(),
            });
        }
        self.step += 1;
        let b1 = T::of_f64(self.params.beta1);
        let b2 = T::of_f64(self.params.beta2);
        let lr = T::of_f64(self.params.lr);
        let eps = T::of_f64(self.params.eps);
        let corr1 = T::of_f64(1.0 - self.params.beta1.powi(self.step as i32));
        let corr2 = T::of_f64(1.0 - self.params.beta2.powi(self.step as i32));
        let one = T::one();

        for (l, g) in grads.layers.iter().enumerate() {
            update_tensor(
                &mut net.layers[l].weights,
                &g.weights,
                &mut self.m[l].weights,
                &mut self.v[l].weights,
                b1, b2, lr, eps, corr1, corr2, one,
            );
            update_tensor(
                &mut net.layers[l].bias,
                &g.bias,
                &mut self.m[l].bias,
                &mut self.v[l].bias,
                b1, b2, lr, eps, corr1, corr2, one,
            );
        }
        Ok(())
    }

    /// Flattened moment state, used by checkpoints.
    pub fn export_moments(&self) -> (u64, Vec<f64>, Vec<f64>) {
        let flat = |layers: &[Layer<T>]| {
            let mut out = Vec::new();
            for l in layers {
                out.extend(l.weights.iter().map(|v| v.to_f64_()));
                out.extend(l.bias.iter().map(|v| v.to_f64_()));
            }
            out
        };
        (self.step, flat(&self.m), flat(&self.v))
    }

    pub fn import_moments(&mut self, step: u64, m: &[f64], v: &[f64]) -> Result<()> {
        let expected: usize = self
            .m
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum();
        if m.len() != expected || v.len() != expected {
            return Err(CoreError::Snapshot(format!(
                "moment length mismatch: expected {expected}, got {}/{}",
                m.len(),
                v.len()
            )));
        }
        self.step = step;
        let fill = |layers: &mut Vec<Layer<T>>, src: &[f64]| {
            let mut i = 0;
            for l in layers.iter_mut() {
                for w in l.weights.iter_mut() {
                    *w = T::of_f64(src[i]);
                    i += 1;
                }
                for b in l.bias.iter_mut() {
                    *b = T::of_f64(src[i]);
                    i += 1;
                }
            }
        };
        fill(&mut self.m, m);
        fill(&mut self.v, v);
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn update_tensor<T: Scalar, D: ndarray::Dimension>(
    params: &mut ndarray::Array<T, D>,
    grads: &ndarray::Array<T, D>,
    m: &mut ndarray::Array<T, D>,
    v: &mut ndarray::Array<T, D>,
    b1: T,
    b2: T,
    lr: T,
    eps: T,
    corr1: T,
    corr2: T,
    one: T,
) {
    ndarray::Zip::from(params)
        .and(grads)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseNet};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_net(seed: u64) -> DenseNet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseNet::new(&[2, 3, 1], Activation::Tanh, Activation::Identity, &mut rng)
    }

    fn grads_filled(net: &DenseNet<f64>, value: f64) -> Gradients<f64> {
        let layers = net
            .layers
            .iter()
            .map(|l| Layer {
                weights: ndarray::Array2::from_elem(l.weights.raw_dim(), value),
                bias: ndarray::Array1::from_elem(l.bias.raw_dim(), value),
            })
            .collect();
        Gradients { layers }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut net = small_net(0);
        let before = net.clone();
        let mut adam = AdamState::new(&net, AdamParams::with_lr(1e-2));
        adam.apply(&mut net, &grads_filled(&before, 0.0)).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_learning_rate() {
        // Closed form: m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
        let mut net = small_net(1);
        let before = net.clone();
        let lr = 1e-3;
        let mut adam = AdamState::new(&net, AdamParams::with_lr(lr));
        adam.apply(&mut net, &grads_filled(&before, 1.0)).unwrap();
        let expected = lr / (1.0 + 1e-8);
        for (l, l0) in net.layers.iter().zip(&before.layers) {
            for (w, w0) in l.weights.iter().zip(l0.weights.iter()) {
                assert!((w0 - w - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identical_calls_from_identical_state_agree() {
        let mut a = small_net(2);
        let mut b = a.clone();
        let g = grads_filled(&a, 0.37);
        let mut adam_a = AdamState::new(&a, AdamParams::with_lr(1e-2));
        let mut adam_b = AdamState::new(&b, AdamParams::with_lr(1e-2));
        for _ in 0..5 {
            adam_a.apply(&mut a, &g).unwrap();
            adam_b.apply(&mut b, &g).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut net = small_net(3);
        let mut g = grads_filled(&net, 1.0);
        g.layers[0].weights[[0, 0]] = f64::NAN;
        let mut adam = AdamState::new(&net, AdamParams::with_lr(1e-2));
        assert!(adam.apply(&mut net, &g).is_err());
    }

    #[test]
    fn moment_roundtrip_preserves_state() {
        let mut net = small_net(4);
        let g = grads_filled(&net, 0.5);
        let mut adam = AdamState::new(&net, AdamParams::with_lr(1e-2));
        adam.apply(&mut net, &g).unwrap();
        adam.apply(&mut net, &g).unwrap();
        let (step, m, v) = adam.export_moments();
        let mut restored = AdamState::new(&net, AdamParams::with_lr(1e-2));
        restored.import_moments(step, &m, &v).unwrap();
        let mut net2 = net.clone();
        adam.apply(&mut net, &g).unwrap();
        restored.apply(&mut net2, &g).unwrap();
        assert_eq!(net, net2);
    }
}
