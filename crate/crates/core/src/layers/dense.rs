use crate::error::{Error, Result};
use crate::layers::{glorot_uniform, Activation};
use crate::tensor::Tensor;
use rand_chacha::ChaCha20Rng;

/// Fully connected layer: `y = act(x W + b)`.
#[derive(Debug, Clone)]
pub struct DenseParams {
    /// Weights, `[in, out]`.
    pub w: Tensor,
    /// Bias, `[out]`.
    pub b: Tensor,
    pub activation: Activation,
}

impl DenseParams {
    pub fn new(w: Tensor, b: Tensor, activation: Activation) -> Result<Self> {
        if w.rank() != 2 || b.rank() != 1 || w.shape()[1] != b.shape()[0] {
            return Err(Error::Shape(format!(
                "dense params: w {:?}, b {:?}",
                w.shape(),
                b.shape()
            )));
        }
        Ok(DenseParams { w, b, activation })
    }

    pub fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut ChaCha20Rng) -> Self {
        DenseParams {
            w: glorot_uniform(rng, &[in_dim, out_dim], in_dim, out_dim),
            b: Tensor::zeros(&[out_dim]),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[1]
    }
}

/// Values saved by [`dense_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct DenseCache {
    /// Layer input, `[batch, in]`.
    x: Tensor,
    /// Pre-activation `x W + b`, `[batch, out]`.
    z: Tensor,
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    pub db: Tensor,
}

pub fn dense_forward(x: &Tensor, p: &DenseParams) -> Result<(Tensor, DenseCache)> {
    if x.rank() != 2 || x.shape()[1] != p.in_dim() {
        return Err(Error::Shape(format!(
            "dense_forward: input {:?} vs weights {:?}",
            x.shape(),
            p.w.shape()
        )));
    }
    let z = x.matmul(&p.w)?.add_row(&p.b)?;
    let y = z.map(|v| p.activation.apply(v));
    y.ensure_finite("dense_forward output")?;
    Ok((
        y,
        DenseCache {
            x: x.clone(),
            z,
        },
    ))
}

pub fn dense_backward(dy: &Tensor, p: &DenseParams, cache: &DenseCache) -> Result<DenseGrads> {
    if cache.x.shape()[1] != p.in_dim() || cache.z.shape()[1] != p.out_dim() {
        return Err(Error::Contract(
            "dense_backward: cache does not match parameters".into(),
        ));
    }
    if dy.shape() != cache.z.shape() {
        return Err(Error::Contract(format!(
            "dense_backward: upstream gradient {:?} vs cached output {:?}",
            dy.shape(),
            cache.z.shape()
        )));
    }
    let dz = dy.zip(&cache.z, |g, z| g * p.activation.grad(z))?;
    let dw = cache.x.transpose()?.matmul(&dz)?;
    let db = dz.col_sum()?;
    let dx = dz.matmul(&p.w.transpose()?)?;
    Ok(DenseGrads { dx, dw, db })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_relu() {
        let p = DenseParams::new(
            Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            Tensor::zeros(&[2]),
            Activation::Relu,
        )
        .unwrap();
        let x = Tensor::from_rows(&[vec![1.0, -2.0]]).unwrap();
        let (y, _) = dense_forward(&x, &p).unwrap();
        assert_eq!(y.data(), &[1.0, 0.0]);
    }

    #[test]
    fn scalar_affine() {
        let p = DenseParams::new(
            Tensor::from_rows(&[vec![2.0]]).unwrap(),
            Tensor::from_vec(vec![1.0]),
            Activation::Linear,
        )
        .unwrap();
        let x = Tensor::from_rows(&[vec![3.0]]).unwrap();
        let (y, _) = dense_forward(&x, &p).unwrap();
        assert_eq!(y.data(), &[7.0]);
    }

    #[test]
    fn forward_matches_scalar_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        for _ in 0..20 {
            let (batch, din, dout) = (
                rng.gen_range(1..=4),
                rng.gen_range(1..=6),
                rng.gen_range(1..=6),
            );
            let p = DenseParams::init(din, dout, Activation::Relu, &mut rng);
            let x = Tensor::new(
                &[batch, din],
                (0..batch * din).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            )
            .unwrap();
            let (y, _) = dense_forward(&x, &p).unwrap();
            for i in 0..batch {
                for j in 0..dout {
                    let mut z = p.b.data()[j];
                    for k in 0..din {
                        z += x.at2(i, k) * p.w.at2(k, j);
                    }
                    let want = z.max(0.0);
                    assert!((y.at2(i, j) - want).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_upstream_gradient() {
        let mut rng = rand::SeedableRng::seed_from_u64(22);
        let p = DenseParams::init(3, 2, Activation::Relu, &mut rng);
        let x = Tensor::from_rows(&[vec![0.4, -0.2, 1.1]]).unwrap();
        let (y, cache) = dense_forward(&x, &p).unwrap();
        let grads = dense_backward(&y.map(|_| 0.0), &p, &cache).unwrap();
        assert!(grads.dx.data().iter().all(|&g| g == 0.0));
        assert!(grads.dw.data().iter().all(|&g| g == 0.0));
        assert!(grads.db.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn scalar_chain_rule() {
        // Linear 1x1 layer: dW = x * dY.
        let p = DenseParams::new(
            Tensor::from_rows(&[vec![-0.7]]).unwrap(),
            Tensor::from_vec(vec![0.3]),
            Activation::Linear,
        )
        .unwrap();
        let x = Tensor::from_rows(&[vec![2.5]]).unwrap();
        let (_, cache) = dense_forward(&x, &p).unwrap();
        let dy = Tensor::from_rows(&[vec![1.25]]).unwrap();
        let grads = dense_backward(&dy, &p, &cache).unwrap();
        assert!((grads.dw.data()[0] - 2.5 * 1.25).abs() <= 1e-15);
        assert!((grads.db.data()[0] - 1.25).abs() <= 1e-15);
        assert!((grads.dx.data()[0] - (-0.7 * 1.25)).abs() <= 1e-15);
    }

    #[test]
    fn backward_linear_in_upstream() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let p = DenseParams::init(4, 3, Activation::Relu, &mut rng);
        let x = Tensor::new(&[2, 4], (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let (y, cache) = dense_forward(&x, &p).unwrap();
        let dy = y.map(|_| rng.gen_range(-1.0..1.0));
        let g1 = dense_backward(&dy, &p, &cache).unwrap();
        let g2 = dense_backward(&dy.scale(3.0), &p, &cache).unwrap();
        for (a, b) in g1.dw.data().iter().zip(g2.dw.data().iter()) {
            assert!((3.0 * a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn mismatched_cache_is_contract_error() {
        let mut rng = rand::SeedableRng::seed_from_u64(24);
        let p = DenseParams::init(3, 2, Activation::Relu, &mut rng);
        let x = Tensor::from_rows(&[vec![0.1, 0.2, 0.3]]).unwrap();
        let (_, cache) = dense_forward(&x, &p).unwrap();
        let bad_dy = Tensor::from_rows(&[vec![1.0, 1.0, 1.0]]).unwrap();
        assert!(matches!(
            dense_backward(&bad_dy, &p, &cache),
            Err(Error::Contract(_))
        ));
    }
}
