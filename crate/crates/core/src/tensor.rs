//! Dense row-major tensors of rank 1 to 3.
//!
//! Every value the library moves around (windows, weights, hidden states,
//! gradients) is one of these. Shapes are checked at operation boundaries;
//! there is no broadcasting beyond row-wise bias addition.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from a shape and row-major data.
    ///
    /// Extents must be positive, rank must be 1..=3 and the data length must
    /// equal the product of the extents.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::Shape(format!(
                "rank must be 1..=3, got {}",
                shape.len()
            )));
        }
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::Shape(format!("zero extent in shape {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} wants {} elements, data has {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// All-zero tensor. Panics on an invalid shape; callers pass shapes they
    /// already validated.
    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor::new(shape, vec![0.0; n]).expect("zeros: invalid shape")
    }

    /// Rank-1 tensor from a non-empty vector.
    pub fn from_vec(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "from_vec: empty data");
        let n = data.len();
        Tensor {
            shape: vec![n],
            data,
        }
    }

    /// Rank-2 tensor from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Shape("from_rows: no rows".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("from_rows: ragged rows".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Tensor::new(&[rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    #[inline]
    pub fn at3(&self, i: usize, j: usize, k: usize) -> f64 {
        debug_assert_eq!(self.rank(), 3);
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    #[inline]
    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j] = v;
    }

    #[inline]
    pub fn set3(&mut self, i: usize, j: usize, k: usize, v: f64) {
        debug_assert_eq!(self.rank(), 3);
        self.data[(i * self.shape[1] + j) * self.shape[2] + k] = v;
    }

    /// Standard matrix product of two rank-2 tensors.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || rhs.rank() != 2 {
            return Err(Error::Shape(format!(
                "matmul needs rank-2 inputs, got {:?} x {:?}",
                self.shape, rhs.shape
            )));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (rhs.shape[0], rhs.shape[1]);
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner extents disagree: {:?} x {:?}",
                self.shape, rhs.shape
            )));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let row = &rhs.data[p * n..(p + 1) * n];
                let dst = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    dst[j] += a * row[j];
                }
            }
        }
        Tensor::new(&[m, n], out)
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::Shape(format!(
                "transpose needs rank 2, got {:?}",
                self.shape
            )));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::new(&[n, m], out)
    }

    /// Elementwise map.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Elementwise combination of two identically shaped tensors.
    pub fn zip(&self, other: &Tensor, mut f: impl FnMut(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "zip shapes disagree: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a + b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|x| c * x)
    }

    /// Arithmetic mean of all elements.
    pub fn mean(&self) -> Result<f64> {
        if self.data.is_empty() {
            return Err(Error::Domain("mean of empty tensor".into()));
        }
        let sum: f64 = self.data.iter().sum();
        Ok(sum / self.data.len() as f64)
    }

    /// Adds a rank-1 bias to every row of a rank-2 tensor. The one permitted
    /// broadcast in the library.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || bias.rank() != 1 || self.shape[1] != bias.shape[0] {
            return Err(Error::Shape(format!(
                "add_row: {:?} + row {:?}",
                self.shape, bias.shape
            )));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut data = self.data.clone();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += bias.data[j];
            }
        }
        Tensor::new(&[m, n], data)
    }

    /// Sum over rows of a rank-2 tensor, yielding one value per column.
    pub fn col_sum(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::Shape(format!(
                "col_sum needs rank 2, got {:?}",
                self.shape
            )));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += self.data[i * n + j];
            }
        }
        Tensor::new(&[n], out)
    }

    /// Extracts timestep `t` of a rank-3 `[batch, T, channels]` tensor as a
    /// rank-2 `[batch, channels]` tensor.
    pub fn time_slice(&self, t: usize) -> Result<Tensor> {
        if self.rank() != 3 {
            return Err(Error::Shape(format!(
                "time_slice needs rank 3, got {:?}",
                self.shape
            )));
        }
        let (b, steps, c) = (self.shape[0], self.shape[1], self.shape[2]);
        if t >= steps {
            return Err(Error::Domain(format!(
                "time_slice index {t} out of range 0..{steps}"
            )));
        }
        let mut out = vec![0.0; b * c];
        for i in 0..b {
            let src = (i * steps + t) * c;
            out[i * c..(i + 1) * c].copy_from_slice(&self.data[src..src + c]);
        }
        Tensor::new(&[b, c], out)
    }

    /// Reshapes `[batch, a, b]` to `[batch, a*b]`. Row-major storage makes
    /// this a relabel of the same data.
    pub fn flatten_batch(&self) -> Result<Tensor> {
        if self.rank() != 3 {
            return Err(Error::Shape(format!(
                "flatten_batch needs rank 3, got {:?}",
                self.shape
            )));
        }
        Tensor::new(
            &[self.shape[0], self.shape[1] * self.shape[2]],
            self.data.clone(),
        )
    }

    /// Inverse of [`flatten_batch`](Self::flatten_batch).
    pub fn unflatten_batch(&self, a: usize, b: usize) -> Result<Tensor> {
        if self.rank() != 2 || self.shape[1] != a * b {
            return Err(Error::Shape(format!(
                "unflatten_batch: {:?} into [_, {a}, {b}]",
                self.shape
            )));
        }
        Tensor::new(&[self.shape[0], a, b], self.data.clone())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Errors when any element is NaN or infinite.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(context.to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_tensor(rng: &mut ChaCha20Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        Tensor::new(shape, data).unwrap()
    }

    // Independent oracle: naive triple loop, no shortcuts.
    fn matmul_oracle(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a.at2(i, p) * b.at2(p, j);
                }
                out[i * n + j] = acc;
            }
        }
        out
    }

    #[test]
    fn matmul_identity() {
        let eye = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let v = Tensor::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let out = eye.matmul(&v).unwrap();
        assert_eq!(out.data(), &[5.0, 6.0]);
    }

    #[test]
    fn matmul_hand_example() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let out = a.matmul(&b).unwrap();
        assert_eq!(out.shape(), &[2, 1]);
        assert_eq!(out.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..100 {
            let (m, k, n) = (
                rng.gen_range(1..=8),
                rng.gen_range(1..=8),
                rng.gen_range(1..=8),
            );
            let a = random_tensor(&mut rng, &[m, k]);
            let b = random_tensor(&mut rng, &[k, n]);
            let got = a.matmul(&b).unwrap();
            let want = matmul_oracle(&a, &b);
            for (g, w) in got.data().iter().zip(want.iter()) {
                assert!((g - w).abs() <= 1e-12, "got {g}, want {w}");
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn relu_and_sigmoid_map() {
        let x = Tensor::from_vec(vec![1.0, -2.0, 0.0]);
        let relu = x.map(|v| v.max(0.0));
        assert_eq!(relu.data(), &[1.0, 0.0, 0.0]);

        let z = Tensor::from_vec(vec![0.0]);
        let sig = z.map(|v| 1.0 / (1.0 + (-v).exp()));
        assert_eq!(sig.data(), &[0.5]);
    }

    #[test]
    fn zip_add_matches_scalar_loop() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let a = random_tensor(&mut rng, &[3, 4, 2]);
        let b = random_tensor(&mut rng, &[3, 4, 2]);
        let got = a.add(&b).unwrap();
        for i in 0..a.len() {
            assert_eq!(got.data()[i], a.data()[i] + b.data()[i]);
        }
    }

    #[test]
    fn zip_shape_mismatch() {
        let a = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[4]);
        assert!(matches!(a.add(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn mean_examples() {
        assert_eq!(Tensor::from_vec(vec![1.0, 2.0, 3.0]).mean().unwrap(), 2.0);
        assert_eq!(Tensor::from_vec(vec![7.5; 9]).mean().unwrap(), 7.5);
    }

    #[test]
    fn mean_matches_compensated_summation() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let x = random_tensor(&mut rng, &[7, 5, 3]);
        // Kahan compensated summation as the independent route.
        let (mut sum, mut c) = (0.0, 0.0);
        for &v in x.data() {
            let y = v - c;
            let t = sum + y;
            c = (t - sum) - y;
            sum = t;
        }
        let want = sum / x.len() as f64;
        assert!((x.mean().unwrap() - want).abs() <= 1e-12);
    }

    #[test]
    fn constructor_rejects_bad_shapes() {
        assert!(Tensor::new(&[2, 0], vec![]).is_err());
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(&[1, 1, 1, 1], vec![1.0]).is_err());
    }

    #[test]
    fn flatten_row_major_order() {
        let x = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let flat = x.flatten_batch().unwrap();
        assert_eq!(flat.shape(), &[1, 4]);
        assert_eq!(flat.data(), &[1.0, 2.0, 3.0, 4.0]);
        let back = flat.unflatten_batch(2, 2).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn flatten_matches_index_map() {
        let mut rng = ChaCha20Rng::seed_from_u64(14);
        for _ in 0..20 {
            let shape = [
                rng.gen_range(1..=4),
                rng.gen_range(1..=5),
                rng.gen_range(1..=5),
            ];
            let x = random_tensor(&mut rng, &shape);
            let flat = x.flatten_batch().unwrap();
            for i in 0..shape[0] {
                for j in 0..shape[1] {
                    for k in 0..shape[2] {
                        assert_eq!(flat.at2(i, j * shape[2] + k), x.at3(i, j, k));
                    }
                }
            }
        }
    }

    #[test]
    fn matmul_associativity() {
        let mut rng = ChaCha20Rng::seed_from_u64(15);
        for _ in 0..50 {
            let (m, k, n, p) = (
                rng.gen_range(1..=6),
                rng.gen_range(1..=6),
                rng.gen_range(1..=6),
                rng.gen_range(1..=6),
            );
            let a = random_tensor(&mut rng, &[m, k]);
            let b = random_tensor(&mut rng, &[k, n]);
            let c = random_tensor(&mut rng, &[n, p]);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            for (l, r) in left.data().iter().zip(right.data().iter()) {
                let scale = l.abs().max(r.abs()).max(1.0);
                assert!((l - r).abs() / scale <= 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn add_commutes(xs in proptest::collection::vec(-1e6f64..1e6, 1..32)) {
            let a = Tensor::from_vec(xs.clone());
            let b = Tensor::from_vec(xs.iter().rev().cloned().collect());
            let ab = a.add(&b).unwrap();
            let ba = b.add(&a).unwrap();
            prop_assert_eq!(ab.data(), ba.data());
        }

        #[test]
        fn mean_is_linear(xs in proptest::collection::vec(-1e3f64..1e3, 1..32), alpha in -8.0f64..8.0) {
            let x = Tensor::from_vec(xs);
            let lhs = x.scale(alpha).mean().unwrap();
            let rhs = alpha * x.mean().unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
        }
    }
}
