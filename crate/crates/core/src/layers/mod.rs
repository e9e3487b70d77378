//! Layer forward/backward passes.
//!
//! Each layer kind exposes a forward function returning the output plus a
//! cache, and a backward function that turns an upstream gradient and that
//! cache into exact gradients for the layer inputs and parameters. Recurrent
//! kinds backpropagate through time over the cached state sequences.

mod conv;
mod dense;
mod lstm;
mod rnn;

pub use conv::{conv1d_backward, conv1d_forward, Conv1dParams, ConvCache, ConvGrads};
pub use dense::{dense_backward, dense_forward, DenseCache, DenseGrads, DenseParams};
pub use lstm::{lstm_backward, lstm_forward, GateGrads, GateParams, LstmCache, LstmGrads, LstmParams};
pub use rnn::{rnn_backward, rnn_forward, RecurrentParams, RnnCache, RnnGrads};

use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

/// Hidden activations. Gate activations inside the LSTM are always sigmoid
/// and are not part of this enum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative at pre-activation `z`. The ReLU subgradient at exactly 0
    /// is 0.
    #[inline]
    pub fn grad(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Bounded uniform init on [-L, L] with L = sqrt(6 / (fan_in + fan_out)).
pub(crate) fn glorot_uniform(
    rng: &mut ChaCha20Rng,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape, data).expect("glorot_uniform: invalid shape")
}

/// As [`glorot_uniform`], but with signs balanced across units: entry
/// `(i, u)` is positive iff `i + u` is even, with magnitude drawn uniform
/// on (0, L]. For a single always-positive input channel an iid sign draw
/// can leave every ReLU unit dead at initialization; balancing guarantees
/// live units regardless of seed.
pub(crate) fn glorot_uniform_balanced(
    rng: &mut ChaCha20Rng,
    shape: [usize; 2],
    fan_in: usize,
    fan_out: usize,
) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let [rows, cols] = shape;
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for u in 0..cols {
            let magnitude = limit * (1.0 - rng.gen::<f64>());
            let sign = if (i + u) % 2 == 0 { 1.0 } else { -1.0 };
            data.push(sign * magnitude);
        }
    }
    Tensor::new(&shape, data).expect("glorot_uniform_balanced: invalid shape")
}

fn standard_normal(rng: &mut ChaCha20Rng) -> f64 {
    // Box-Muller on (0, 1] uniforms.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Random orthogonal square matrix: Gram-Schmidt over a Gaussian draw.
/// Norm-preserving recurrent kernels keep ReLU recurrences from collapsing
/// to zero over long sequences.
pub(crate) fn orthogonal(rng: &mut ChaCha20Rng, units: usize) -> Tensor {
    let mut cols: Vec<Vec<f64>> = (0..units)
        .map(|_| (0..units).map(|_| standard_normal(rng)).collect())
        .collect();
    for j in 0..units {
        for k in 0..j {
            let dot: f64 = (0..units).map(|i| cols[k][i] * cols[j][i]).sum();
            for i in 0..units {
                cols[j][i] -= dot * cols[k][i];
            }
        }
        let norm: f64 = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in cols[j].iter_mut() {
            *v /= norm;
        }
    }
    let mut out = Tensor::zeros(&[units, units]);
    for j in 0..units {
        for i in 0..units {
            out.set2(i, j, cols[j][i]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_grad_is_zero_at_zero() {
        assert_eq!(Activation::Relu.grad(0.0), 0.0);
        assert_eq!(Activation::Relu.grad(1e-300), 1.0);
        assert_eq!(Activation::Relu.grad(-1e-300), 0.0);
    }

    #[test]
    fn tanh_grad_matches_identity() {
        for z in [-2.0, -0.5, 0.0, 0.3, 1.7] {
            let t = f64::tanh(z);
            assert!((Activation::Tanh.grad(z) - (1.0 - t * t)).abs() < 1e-15);
        }
    }

    #[test]
    fn sigmoid_at_zero() {
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
