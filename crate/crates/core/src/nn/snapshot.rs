//! Parameter snapshots for freeze/restore.
//!
//! Layout: a JSON document with the layer widths, the two activation names
//! and a single flat `f64` array holding, for each layer in order, the
//! row-major weight matrix followed by the bias vector. `f64` serialization
//! round-trips exactly, so saving and reloading reproduces parameters
//! bit for bit.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Activation, DenseNet, Layer, Scalar};
use crate::error::{CoreError, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetSnapshot {
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
    pub params: Vec<f64>,
}

impl NetSnapshot {
    pub fn from_net<T: Scalar>(net: &DenseNet<T>) -> Self {
        let mut params = Vec::with_capacity(net.param_count());
        for l in &net.layers {
            params.extend(l.weights.iter().map(|v| v.to_f64_()));
            params.extend(l.bias.iter().map(|v| v.to_f64_()));
        }
        NetSnapshot {
            widths: net.widths().to_vec(),
            hidden: net.hidden_activation(),
            output: net.output_activation(),
            params,
        }
    }

    pub fn into_net<T: Scalar>(&self) -> Result<DenseNet<T>> {
        let expected: usize = self
            .widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum();
        if self.params.len() != expected {
            return Err(CoreError::Snapshot(format!(
                "parameter count {} does not match widths {:?} (expected {expected})",
                self.params.len(),
                self.widths
            )));
        }
        let mut layers = Vec::with_capacity(self.widths.len().saturating_sub(1));
        let mut i = 0;
        for w in self.widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = Array2::from_shape_fn((fan_in, fan_out), |(r, c)| {
                T::of_f64(self.params[i + r * fan_out + c])
            });
            i += fan_in * fan_out;
            let bias = Array1::from_shape_fn(fan_out, |j| T::of_f64(self.params[i + j]));
            i += fan_out;
            layers.push(Layer { weights, bias });
        }
        DenseNet::from_parts(&self.widths, self.hidden, self.output, layers)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
