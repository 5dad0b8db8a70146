//! Minimal dense-network substrate.
//!
//! Multilayer perceptrons with tanh/relu hidden units, exact reverse-mode
//! gradients, Adam optimization and central-difference gradient
//! verification. Networks are plain value objects parameterized over the
//! float type: production code runs `f32`, gradient checks run `f64`.

mod adam;
mod dense;
mod gradcheck;
mod snapshot;

pub use adam::{AdamParams, AdamState};
pub use dense::{BatchCache, BatchInput, DenseNet, Gradients, Layer};
pub use gradcheck::{grad_check, mse_loss, GradCheckInput, GradCheckReport};
pub use snapshot::NetSnapshot;

use ndarray::{Array2, NdFloat};
use num_traits::{FromPrimitive, ToPrimitive};
use rand::distr::uniform::SampleUniform;
use serde::{Deserialize, Serialize};

/// Float types the network substrate is instantiated with.
pub trait Scalar:
    NdFloat + FromPrimitive + ToPrimitive + SampleUniform + Send + Sync + 'static
{
    fn of_f64(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 converts")
    }
    fn to_f64_(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("float converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Elementwise nonlinearity. `Identity` and `Sigmoid` are used on output
/// layers, `Tanh` and `Relu` on hidden layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply<T: Scalar>(self, z: &mut Array2<T>) {
        match self {
            Activation::Identity => {}
            Activation::Tanh => z.mapv_inplace(|v| v.tanh()),
            Activation::Relu => z.mapv_inplace(|v| v.max(T::zero())),
            Activation::Sigmoid => {
                z.mapv_inplace(|v| T::one() / (T::one() + (-v).exp()));
            }
        }
    }

    /// Derivative expressed through the activation's own output value.
    pub fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Tanh => T::one() - y * y,
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

/// A batch of encoded observations ready to feed a network. One-hot batches
/// keep only the hot indices so the first layer can gather rows instead of
/// multiplying by a mostly-zero matrix.
#[derive(Clone, Debug)]
pub enum EncodedBatch {
    Dense(Array2<f32>),
    OneHot { indices: Vec<usize>, dim: usize },
}

impl EncodedBatch {
    pub fn len(&self) -> usize {
        match self {
            EncodedBatch::Dense(m) => m.nrows(),
            EncodedBatch::OneHot { indices, .. } => indices.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        match self {
            EncodedBatch::Dense(m) => m.ncols(),
            EncodedBatch::OneHot { dim, .. } => *dim,
        }
    }

    pub fn as_input(&self) -> BatchInput<'_, f32> {
        match self {
            EncodedBatch::Dense(m) => BatchInput::Dense(m.view()),
            EncodedBatch::OneHot { indices, dim } => BatchInput::OneHot {
                indices,
                dim: *dim,
            },
        }
    }

    /// Materialize as a dense matrix (used for regression targets).
    pub fn to_dense(&self) -> Array2<f32> {
        match self {
            EncodedBatch::Dense(m) => m.clone(),
            EncodedBatch::OneHot { indices, dim } => {
                let mut out = Array2::zeros((indices.len(), *dim));
                for (r, &i) in indices.iter().enumerate() {
                    out[[r, i]] = 1.0;
                }
                out
            }
        }
    }
}
