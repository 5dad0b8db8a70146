//! Fully-connected networks with cached forward passes and exact
//! reverse-mode gradients.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::{Activation, Scalar};

/// One affine layer. Weights are stored input-major (`in_width x out_width`)
/// so a forward pass is `x.dot(&weights) + bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Layer<T> {
    fn zeros_like(&self) -> Layer<T> {
        Layer {
            weights: Array2::zeros(self.weights.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }
}

/// Input to a batched forward pass. `OneHot` carries only the hot index per
/// row; the first layer then gathers weight rows, which is exactly the
/// product with the corresponding indicator vectors.
#[derive(Clone, Copy, Debug)]
pub enum BatchInput<'a, T> {
    Dense(ArrayView2<'a, T>),
    OneHot { indices: &'a [usize], dim: usize },
}

impl<'a, T: Scalar> BatchInput<'a, T> {
    pub fn rows(&self) -> usize {
        match self {
            BatchInput::Dense(m) => m.nrows(),
            BatchInput::OneHot { indices, .. } => indices.len(),
        }
    }

    pub fn width(&self) -> usize {
        match self {
            BatchInput::Dense(m) => m.ncols(),
            BatchInput::OneHot { dim, .. } => *dim,
        }
    }

    fn to_stored(self) -> StoredInput<T> {
        match self {
            BatchInput::Dense(m) => StoredInput::Dense(m.to_owned()),
            BatchInput::OneHot { indices, .. } => StoredInput::OneHot {
                indices: indices.to_vec(),
            },
        }
    }
}

#[derive(Clone, Debug)]
enum StoredInput<T> {
    Dense(Array2<T>),
    OneHot { indices: Vec<usize> },
}

/// Activations recorded during a forward pass, needed for backprop.
#[derive(Clone, Debug)]
pub struct BatchCache<T> {
    input: StoredInput<T>,
    /// Post-activation output of every layer, last entry is the net output.
    acts: Vec<Array2<T>>,
}

impl<T: Scalar> BatchCache<T> {
    pub fn output(&self) -> &Array2<T> {
        self.acts.last().expect("cache holds at least one layer")
    }
}

/// Per-layer parameter gradients, shaped exactly like the network.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn scale(&mut self, c: T) {
        for l in &mut self.layers {
            l.weights.mapv_inplace(|v| v * c);
            l.bias.mapv_inplace(|v| v * c);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }
}

/// A multilayer perceptron: `widths[0]` inputs through hidden layers to
/// `widths.last()` outputs. The hidden activation applies after every layer
/// except the last, which uses the output activation.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet<T> {
    pub layers: Vec<Layer<T>>,
    hidden: Activation,
    output: Activation,
    widths: Vec<usize>,
}

impl<T: Scalar> DenseNet<T> {
    /// Build a network with uniform fan-in-scaled initialization:
    /// Glorot-style for tanh hidden units, He-style for relu.
    pub fn new<R: Rng + ?Sized>(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2, "need at least input and output widths");
        assert!(widths.iter().all(|&w| w > 0), "zero-width layer");
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = match hidden {
                Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            let lo = T::of_f64(-limit);
            let hi = T::of_f64(limit);
            let weights =
                Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(lo..hi));
            layers.push(Layer {
                weights,
                bias: Array1::zeros(fan_out),
            });
        }
        DenseNet {
            layers,
            hidden,
            output,
            widths: widths.to_vec(),
        }
    }

    /// Assemble a network from explicit layers (snapshot restore).
    pub fn from_parts(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        layers: Vec<Layer<T>>,
    ) -> crate::error::Result<Self> {
        if widths.len() < 2 || layers.len() != widths.len() - 1 {
            return Err(crate::error::CoreError::Snapshot(format!(
                "layer count {} does not match widths {:?}",
                layers.len(),
                widths
            )));
        }
        for (l, w) in layers.iter().zip(widths.windows(2)) {
            if l.weights.dim() != (w[0], w[1]) || l.bias.len() != w[1] {
                return Err(crate::error::CoreError::Snapshot(
                    "layer shape does not match widths".into(),
                ));
            }
        }
        Ok(DenseNet {
            layers,
            hidden,
            output,
            widths: widths.to_vec(),
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// FNV-1a hash over the parameter bits; equal hashes across time mean
    /// the parameters were left untouched.
    pub fn params_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut mix = |bits: u64| {
            h ^= bits;
            h = h.wrapping_mul(0x100000001b3);
        };
        for l in &self.layers {
            for v in l.weights.iter().chain(l.bias.iter()) {
                mix(v.to_f64_().to_bits());
            }
        }
        h
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn activation_for(&self, layer_idx: usize) -> Activation {
        if layer_idx + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    /// Batched forward pass; rows are samples.
    pub fn forward_batch(&self, input: BatchInput<'_, T>) -> Array2<T> {
        self.run_forward(input).1
    }

    /// Forward pass that also records per-layer activations for backprop.
    pub fn forward_cached(&self, input: BatchInput<'_, T>) -> BatchCache<T> {
        let (acts, _) = self.run_forward_all(input);
        BatchCache {
            input: input.to_stored(),
            acts,
        }
    }

    /// Single-sample convenience wrapper.
    pub fn forward(&self, input: ArrayView1<'_, T>) -> Array1<T> {
        let m = input.insert_axis(Axis(0));
        let out = self.forward_batch(BatchInput::Dense(m));
        out.index_axis(Axis(0), 0).to_owned()
    }

    /// Single-sample forward for a one-hot input given by its hot index.
    pub fn forward_onehot(&self, index: usize) -> Array1<T> {
        let out = self.forward_batch(BatchInput::OneHot {
            indices: std::slice::from_ref(&index),
            dim: self.input_width(),
        });
        out.index_axis(Axis(0), 0).to_owned()
    }

    fn run_forward(&self, input: BatchInput<'_, T>) -> (usize, Array2<T>) {
        let (acts, rows) = self.run_forward_all(input);
        (rows, acts.into_iter().last().unwrap())
    }

    fn run_forward_all(&self, input: BatchInput<'_, T>) -> (Vec<Array2<T>>, usize) {
        assert_eq!(
            input.width(),
            self.input_width(),
            "input width does not match first layer"
        );
        let rows = input.rows();
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut cur = self.affine_first(input);
        self.activation_for(0).apply(&mut cur);
        acts.push(cur);
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            let mut z = acts[i - 1].dot(&layer.weights);
            z += &layer.bias;
            self.activation_for(i).apply(&mut z);
            acts.push(z);
        }
        (acts, rows)
    }

    fn affine_first(&self, input: BatchInput<'_, T>) -> Array2<T> {
        let layer = &self.layers[0];
        match input {
            BatchInput::Dense(x) => {
                let mut z = x.dot(&layer.weights);
                z += &layer.bias;
                z
            }
            BatchInput::OneHot { indices, .. } => {
                let mut z = Array2::zeros((indices.len(), layer.weights.ncols()));
                for (r, &i) in indices.iter().enumerate() {
                    let mut row = z.row_mut(r);
                    row.assign(&layer.weights.row(i));
                    row += &layer.bias;
                }
                z
            }
        }
    }

    /// Reverse-mode gradients given `dL/d(output)` (post output activation).
    /// Returns parameter gradients and, for dense inputs, `dL/d(input)`.
    pub fn backward_batch(
        &self,
        cache: &BatchCache<T>,
        d_output: &Array2<T>,
    ) -> (Gradients<T>, Option<Array2<T>>) {
        let n_layers = self.layers.len();
        assert_eq!(d_output.dim(), cache.acts[n_layers - 1].dim());
        let mut grads: Vec<Layer<T>> = self.layers.iter().map(Layer::zeros_like).collect();

        // delta = dL/d(pre-activation) of the current layer
        let mut delta = d_output.clone();
        apply_activation_derivative(&mut delta, &cache.acts[n_layers - 1], self.activation_for(n_layers - 1));

        let mut d_input = None;
        for l in (0..n_layers).rev() {
            grads[l].bias = delta.sum_axis(Axis(0));
            if l > 0 {
                let prev = &cache.acts[l - 1];
                grads[l].weights = prev.t().dot(&delta);
                let mut prev_delta = delta.dot(&self.layers[l].weights.t());
                apply_activation_derivative(&mut prev_delta, prev, self.activation_for(l - 1));
                delta = prev_delta;
            } else {
                match &cache.input {
                    StoredInput::Dense(x) => {
                        grads[0].weights = x.t().dot(&delta);
                        d_input = Some(delta.dot(&self.layers[0].weights.t()));
                    }
                    StoredInput::OneHot { indices } => {
                        for (r, &i) in indices.iter().enumerate() {
                            let mut row = grads[0].weights.row_mut(i);
                            row += &delta.row(r);
                        }
                    }
                }
            }
        }
        (Gradients { layers: grads }, d_input)
    }
}

fn apply_activation_derivative<T: Scalar>(
    delta: &mut Array2<T>,
    output: &Array2<T>,
    act: Activation,
) {
    if act == Activation::Identity {
        return;
    }
    ndarray::Zip::from(delta)
        .and(output)
        .for_each(|d, &y| *d = *d * act.derivative_from_output(y));
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand_chacha::ChaCha8Rng;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zeroed_final_layer_outputs_zero() {
        let mut net = DenseNet::<f64>::new(&[3, 5, 2], Activation::Tanh, Activation::Identity, &mut rng(0));
        net.layers.last_mut().unwrap().weights.fill(0.0);
        net.layers.last_mut().unwrap().bias.fill(0.0);
        let out = net.forward(array![0.3, -0.7, 1.1].view());
        assert_eq!(out, array![0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer_passes_input_through() {
        let mut net = DenseNet::<f64>::new(&[3, 3], Activation::Tanh, Activation::Identity, &mut rng(1));
        net.layers[0].weights = Array2::eye(3);
        net.layers[0].bias.fill(0.0);
        let x = array![0.25, -1.5, 2.0];
        assert_eq!(net.forward(x.view()), x);
    }

    #[test]
    fn two_layer_tanh_matches_hand_computation() {
        // 1 -> 2 -> 1 with fixed weights; expected value computed with
        // scalar arithmetic, independent of the matrix path.
        let mut net = DenseNet::<f64>::new(&[1, 2, 1], Activation::Tanh, Activation::Identity, &mut rng(2));
        net.layers[0].weights = array![[0.5, -1.0]];
        net.layers[0].bias = array![0.1, 0.2];
        net.layers[1].weights = array![[2.0], [-0.5]];
        net.layers[1].bias = array![0.3];
        let x = 0.8_f64;
        let h1 = (x * 0.5 + 0.1).tanh();
        let h2 = (x * -1.0 + 0.2).tanh();
        let expected = 2.0 * h1 - 0.5 * h2 + 0.3;
        let out = net.forward(array![x].view());
        assert!((out[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn onehot_and_dense_paths_agree_exactly() {
        let net = DenseNet::<f64>::new(&[7, 4, 3], Activation::Tanh, Activation::Identity, &mut rng(3));
        for i in 0..7 {
            let mut dense = Array1::zeros(7);
            dense[i] = 1.0;
            let a = net.forward(dense.view());
            let b = net.forward_onehot(i);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn scaling_loss_scales_gradients_linearly() {
        let net = DenseNet::<f64>::new(&[2, 4, 2], Activation::Tanh, Activation::Identity, &mut rng(4));
        let x = array![[0.2, -0.4], [1.0, 0.5]];
        let cache = net.forward_cached(BatchInput::Dense(x.view()));
        let d_out = array![[0.3, -0.1], [0.7, 0.2]];
        let (g1, _) = net.backward_batch(&cache, &d_out);
        let (g3, _) = net.backward_batch(&cache, &(&d_out * 3.0));
        for (a, b) in g1.layers.iter().zip(&g3.layers) {
            let diff = (&b.weights - &(&a.weights * 3.0)).iter().map(|v| v.abs()).fold(0.0, f64::max);
            assert!(diff < 1e-12);
        }
    }
}
