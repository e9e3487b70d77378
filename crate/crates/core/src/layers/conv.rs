use crate::error::{Error, Result};
use crate::layers::{glorot_uniform, Activation};
use crate::tensor::Tensor;
use rand_chacha::ChaCha20Rng;

/// One-dimensional convolution, stride 1, valid padding.
#[derive(Debug, Clone)]
pub struct Conv1dParams {
    /// Kernels, `[filters, width, in_channels]`.
    pub kernels: Tensor,
    /// Bias, `[filters]`.
    pub b: Tensor,
    pub activation: Activation,
}

impl Conv1dParams {
    pub fn new(kernels: Tensor, b: Tensor, activation: Activation) -> Result<Self> {
        if kernels.rank() != 3 || b.rank() != 1 || kernels.shape()[0] != b.shape()[0] {
            return Err(Error::Shape(format!(
                "conv1d params: kernels {:?}, b {:?}",
                kernels.shape(),
                b.shape()
            )));
        }
        Ok(Conv1dParams {
            kernels,
            b,
            activation,
        })
    }

    pub fn init(
        filters: usize,
        width: usize,
        in_channels: usize,
        activation: Activation,
        rng: &mut ChaCha20Rng,
    ) -> Self {
        Conv1dParams {
            kernels: glorot_uniform(
                rng,
                &[filters, width, in_channels],
                width * in_channels,
                filters,
            ),
            b: Tensor::zeros(&[filters]),
            activation,
        }
    }

    pub fn filters(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[2]
    }
}

/// Input and pre-activation saved by [`conv1d_forward`].
#[derive(Debug, Clone)]
pub struct ConvCache {
    /// `[batch, T, in_channels]`
    seq: Tensor,
    /// `[batch, T - width + 1, filters]`
    z: Tensor,
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub dseq: Tensor,
    pub dkernels: Tensor,
    pub db: Tensor,
}

/// Valid cross-correlation over the time axis, then bias and activation.
/// Output length is `T - width + 1`.
pub fn conv1d_forward(seq: &Tensor, p: &Conv1dParams) -> Result<(Tensor, ConvCache)> {
    if seq.rank() != 3 || seq.shape()[2] != p.in_channels() {
        return Err(Error::Shape(format!(
            "conv1d_forward: sequence {:?} vs kernels {:?}",
            seq.shape(),
            p.kernels.shape()
        )));
    }
    let (batch, steps) = (seq.shape()[0], seq.shape()[1]);
    let (filters, width, channels) = (p.filters(), p.width(), p.in_channels());
    if steps < width {
        return Err(Error::Domain(format!(
            "conv1d_forward: sequence length {steps} shorter than kernel width {width}"
        )));
    }
    let out_len = steps - width + 1;
    let mut z = Tensor::zeros(&[batch, out_len, filters]);
    for row in 0..batch {
        for t in 0..out_len {
            for f in 0..filters {
                let mut acc = p.b.data()[f];
                for w in 0..width {
                    for c in 0..channels {
                        acc += seq.at3(row, t + w, c) * p.kernels.at3(f, w, c);
                    }
                }
                z.set3(row, t, f, acc);
            }
        }
    }
    let y = z.map(|v| p.activation.apply(v));
    y.ensure_finite("conv1d_forward output")?;
    Ok((
        y,
        ConvCache {
            seq: seq.clone(),
            z,
        },
    ))
}

pub fn conv1d_backward(dy: &Tensor, p: &Conv1dParams, cache: &ConvCache) -> Result<ConvGrads> {
    if cache.seq.shape()[2] != p.in_channels() || cache.z.shape()[2] != p.filters() {
        return Err(Error::Contract(
            "conv1d_backward: cache does not match parameters".into(),
        ));
    }
    if dy.shape() != cache.z.shape() {
        return Err(Error::Contract(format!(
            "conv1d_backward: upstream gradient {:?} vs cached output {:?}",
            dy.shape(),
            cache.z.shape()
        )));
    }
    let (batch, out_len, filters) = (
        cache.z.shape()[0],
        cache.z.shape()[1],
        cache.z.shape()[2],
    );
    let (width, channels) = (p.width(), p.in_channels());
    let dz = dy.zip(&cache.z, |g, z| g * p.activation.grad(z))?;

    let mut dkernels = Tensor::zeros(p.kernels.shape());
    let mut db = Tensor::zeros(p.b.shape());
    let mut dseq = Tensor::zeros(cache.seq.shape());
    for row in 0..batch {
        for t in 0..out_len {
            for f in 0..filters {
                let g = dz.at3(row, t, f);
                if g == 0.0 {
                    continue;
                }
                db.data_mut()[f] += g;
                for w in 0..width {
                    for c in 0..channels {
                        let dk = dkernels.at3(f, w, c) + g * cache.seq.at3(row, t + w, c);
                        dkernels.set3(f, w, c, dk);
                        let ds = dseq.at3(row, t + w, c) + g * p.kernels.at3(f, w, c);
                        dseq.set3(row, t + w, c, ds);
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        dseq,
        dkernels,
        db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_seq(rng: &mut ChaCha20Rng, batch: usize, steps: usize, dim: usize) -> Tensor {
        Tensor::new(
            &[batch, steps, dim],
            (0..batch * steps * dim)
                .map(|_| rng.gen_range(-1.5..1.5))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn delta_kernel_picks_middle_sample() {
        // Kernel [0, 1, 0] reproduces positions 2..T-1 of the input.
        let p = Conv1dParams::new(
            Tensor::new(&[1, 3, 1], vec![0.0, 1.0, 0.0]).unwrap(),
            Tensor::zeros(&[1]),
            Activation::Linear,
        )
        .unwrap();
        let steps = 7;
        let seq = Tensor::new(&[1, steps, 1], (0..steps).map(|v| v as f64).collect()).unwrap();
        let (y, _) = conv1d_forward(&seq, &p).unwrap();
        assert_eq!(y.shape(), &[1, steps - 2, 1]);
        for t in 0..steps - 2 {
            assert_eq!(y.at3(0, t, 0), (t + 1) as f64);
        }
    }

    #[test]
    fn output_length_formula() {
        let mut rng = ChaCha20Rng::seed_from_u64(51);
        let p = Conv1dParams::init(4, 3, 1, Activation::Relu, &mut rng);
        let seq = random_seq(&mut rng, 2, 14, 1);
        let (y, _) = conv1d_forward(&seq, &p).unwrap();
        assert_eq!(y.shape(), &[2, 12, 4]);
    }

    #[test]
    fn too_short_sequence_is_domain_error() {
        let mut rng = ChaCha20Rng::seed_from_u64(52);
        let p = Conv1dParams::init(2, 5, 1, Activation::Relu, &mut rng);
        let seq = random_seq(&mut rng, 1, 4, 1);
        assert!(matches!(
            conv1d_forward(&seq, &p),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn forward_matches_scalar_loop() {
        let mut rng = ChaCha20Rng::seed_from_u64(53);
        for _ in 0..20 {
            let (batch, channels, filters) = (
                rng.gen_range(1..=3),
                rng.gen_range(1..=2),
                rng.gen_range(1..=4),
            );
            let width = rng.gen_range(1..=4);
            let steps = rng.gen_range(width..=10);
            let p = Conv1dParams::init(filters, width, channels, Activation::Relu, &mut rng);
            let seq = random_seq(&mut rng, batch, steps, channels);
            let (y, _) = conv1d_forward(&seq, &p).unwrap();
            for row in 0..batch {
                for t in 0..steps - width + 1 {
                    for f in 0..filters {
                        let mut acc = p.b.data()[f];
                        for w in 0..width {
                            for c in 0..channels {
                                acc += seq.at3(row, t + w, c) * p.kernels.at3(f, w, c);
                            }
                        }
                        assert!((y.at3(row, t, f) - acc.max(0.0)).abs() <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_upstream_gradient() {
        let mut rng = ChaCha20Rng::seed_from_u64(54);
        let p = Conv1dParams::init(3, 3, 1, Activation::Relu, &mut rng);
        let seq = random_seq(&mut rng, 2, 8, 1);
        let (y, cache) = conv1d_forward(&seq, &p).unwrap();
        let g = conv1d_backward(&y.map(|_| 0.0), &p, &cache).unwrap();
        assert!(g.dseq.data().iter().all(|&v| v == 0.0));
        assert!(g.dkernels.data().iter().all(|&v| v == 0.0));
        assert!(g.db.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn width_one_reduces_to_per_position_dense() {
        // Single filter of width 1: dkernel accumulates x * dy per position.
        let p = Conv1dParams::new(
            Tensor::new(&[1, 1, 1], vec![0.9]).unwrap(),
            Tensor::zeros(&[1]),
            Activation::Linear,
        )
        .unwrap();
        let seq = Tensor::new(&[1, 4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, cache) = conv1d_forward(&seq, &p).unwrap();
        assert_eq!(y.shape(), &[1, 4, 1]);
        let dy = Tensor::new(&[1, 4, 1], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let g = conv1d_backward(&dy, &p, &cache).unwrap();
        let want: f64 = 1.0 * 0.1 + 2.0 * 0.2 + 3.0 * 0.3 + 4.0 * 0.4;
        assert!((g.dkernels.data()[0] - want).abs() <= 1e-12);
        for t in 0..4 {
            assert!((g.dseq.at3(0, t, 0) - 0.9 * dy.at3(0, t, 0)).abs() <= 1e-12);
        }
    }

    #[test]
    fn backward_linear_in_upstream() {
        let mut rng = ChaCha20Rng::seed_from_u64(55);
        let p = Conv1dParams::init(4, 3, 1, Activation::Relu, &mut rng);
        let seq = random_seq(&mut rng, 2, 9, 1);
        let (y, cache) = conv1d_forward(&seq, &p).unwrap();
        let dy = y.map(|_| rng.gen_range(-1.0..1.0));
        let g1 = conv1d_backward(&dy, &p, &cache).unwrap();
        let g2 = conv1d_backward(&dy.scale(0.5), &p, &cache).unwrap();
        for (a, b) in g1.dkernels.data().iter().zip(g2.dkernels.data()) {
            assert!((0.5 * a - b).abs() <= 1e-12);
        }
    }
}
