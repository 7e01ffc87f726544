use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f32 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Relu,
    Tanh,
    Sigmoid,
    None,
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Tensor {
        match self {
            Activation::LeakyRelu => x.map(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v }),
            Activation::Relu => x.map(|v| v.max(0.0)),
            Activation::Tanh => x.map(f32::tanh),
            Activation::Sigmoid => x.map(sigmoid),
            Activation::None => x.clone(),
        }
    }

    /// Gradient through the activation, expressed in terms of its output.
    pub fn backward(self, y: &Tensor, dy: &Tensor) -> Tensor {
        let f: fn(f32, f32) -> f32 = match self {
            Activation::LeakyRelu => |y, g| if y > 0.0 { g } else { LEAKY_SLOPE * g },
            Activation::Relu => |y, g| if y > 0.0 { g } else { 0.0 },
            Activation::Tanh => |y, g| g * (1.0 - y * y),
            Activation::Sigmoid => |y, g| g * y * (1.0 - y),
            Activation::None => |_, g| g,
        };
        y.zip_map(dy, f).expect("activation gradient shape")
    }
}

pub fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)`.
/// Returns the output and the per-element multiplier used.
pub fn dropout<R: Rng>(x: &Tensor, rate: f32, rng: &mut R) -> (Tensor, Vec<f32>) {
    let keep = 1.0 - rate;
    let scale = if keep > 0.0 { 1.0 / keep } else { 0.0 };
    let mask: Vec<f32> = (0..x.len())
        .map(|_| if rng.random::<f32>() < keep { scale } else { 0.0 })
        .collect();
    let mut out = x.clone();
    for (v, m) in out.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    (out, mask)
}
