//! Central-difference verification of analytic gradients.

use ndarray::Array2;
use rand::Rng;

use super::{BatchInput, DenseNet};

/// Owned input for repeated forward evaluations while parameters are
/// perturbed.
#[derive(Clone, Debug)]
pub enum GradCheckInput {
    Dense(Array2<f64>),
    OneHot { indices: Vec<usize>, dim: usize },
}

impl GradCheckInput {
    fn view(&self) -> BatchInput<'_, f64> {
        match self {
            GradCheckInput::Dense(m) => BatchInput::Dense(m.view()),
            GradCheckInput::OneHot { indices, dim } => BatchInput::OneHot {
                indices,
                dim: *dim,
            },
        }
    }
}

/// Outcome of a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter coordinate with the largest relative error.
    pub worst: String,
    pub probes: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

#[derive(Clone, Copy)]
enum Coord {
    Weight(usize, usize, usize),
    Bias(usize, usize),
}

/// Compare reverse-mode gradients against central differences on randomly
/// probed parameter coordinates. `loss` maps the network output batch to a
/// scalar loss and its gradient with respect to that output.
pub fn grad_check<L, R>(
    net: &mut DenseNet<f64>,
    input: &GradCheckInput,
    loss: L,
    probes: usize,
    step: f64,
    tolerance: f64,
    rng: &mut R,
) -> GradCheckReport
where
    L: Fn(&Array2<f64>) -> (f64, Array2<f64>),
    R: Rng + ?Sized,
{
    let cache = net.forward_cached(input.view());
    let (_, d_out) = loss(cache.output());
    let (grads, _) = net.backward_batch(&cache, &d_out);

    let mut coords = Vec::new();
    for (l, layer) in net.layers.iter().enumerate() {
        let (r, c) = layer.weights.dim();
        for i in 0..r {
            for j in 0..c {
                coords.push(Coord::Weight(l, i, j));
            }
        }
        for j in 0..layer.bias.len() {
            coords.push(Coord::Bias(l, j));
        }
    }
    let picked: Vec<Coord> = if coords.len() <= probes {
        coords
    } else {
        (0..probes)
            .map(|_| coords[rng.random_range(0..coords.len())])
            .collect()
    };

    let mut max_rel_err = 0.0;
    let mut worst = String::from("none");
    for coord in &picked {
        let analytic = match *coord {
            Coord::Weight(l, i, j) => grads.layers[l].weights[[i, j]],
            Coord::Bias(l, j) => grads.layers[l].bias[j],
        };
        let eval_at = |net: &mut DenseNet<f64>, delta: f64| {
            write_coord(net, *coord, delta);
            let out = net.forward_batch(input.view());
            write_coord(net, *coord, -delta);
            loss(&out).0
        };
        let plus = eval_at(net, step);
        let minus = eval_at(net, -step);
        let numeric = (plus - minus) / (2.0 * step);
        let rel = (analytic - numeric).abs() / f64::max(analytic.abs() + numeric.abs(), 1e-6);
        if rel > max_rel_err {
            max_rel_err = rel;
            worst = match *coord {
                Coord::Weight(l, i, j) => format!("layer{l}.weights[{i},{j}]"),
                Coord::Bias(l, j) => format!("layer{l}.bias[{j}]"),
            };
        }
    }
    GradCheckReport {
        max_rel_err,
        worst,
        probes: picked.len(),
        tolerance,
    }
}

fn write_coord(net: &mut DenseNet<f64>, coord: Coord, delta: f64) {
    match coord {
        Coord::Weight(l, i, j) => net.layers[l].weights[[i, j]] += delta,
        Coord::Bias(l, j) => net.layers[l].bias[j] += delta,
    }
}

/// Mean-squared-error head used by several gradient-check call sites:
/// loss = mean over rows of the squared L2 distance to `target`.
pub fn mse_loss(output: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    let n = output.nrows() as f64;
    let diff = output - target;
    let loss = diff.iter().map(|v| v * v).sum::<f64>() / n;
    (loss, diff * (2.0 / n))
}
