use rand::Rng;

use crate::scalar::Scalar;

/// Dense row-major matrix. All graph operations work on two-dimensional
/// tensors; vectors are represented as single-row matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
    requires_grad: bool,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
            requires_grad: false,
        }
    }

    pub fn filled(rows: usize, cols: usize, value: S) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
            requires_grad: false,
        }
    }

    /// Builds from a row-major buffer. Panics if the buffer length does not
    /// match `rows * cols`; constructors are programming contracts, not
    /// runtime inputs.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "tensor buffer length {} does not match shape [{rows}, {cols}]",
            data.len()
        );
        Tensor {
            rows,
            cols,
            data,
            requires_grad: false,
        }
    }

    pub fn row_vector(data: Vec<S>) -> Self {
        let cols = data.len();
        Tensor::from_vec(1, cols, data)
    }

    /// Uniform draw in `[lo, hi)`, elements filled in row-major order so the
    /// RNG consumption order is part of the determinism contract.
    pub fn uniform<R: Rng>(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| S::lit(lo + (hi - lo) * rng.gen::<f64>()))
            .collect();
        Tensor::from_vec(rows, cols, data)
    }

    pub fn with_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> S {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: S) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
        }
    }

    /// Quantizes every element through f32, the checkpoint storage width.
    pub fn round_f32(&mut self) {
        for v in &mut self.data {
            *v = v.round_f32();
        }
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.data.iter().map(|v| v.as_f64() as f32).collect()
    }

    pub fn from_f32_vec(rows: usize, cols: usize, data: &[f32]) -> Self {
        Tensor::from_vec(rows, cols, data.iter().map(|&v| S::lit(v as f64)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_f32_is_idempotent() {
        let mut t = Tensor::<f64>::from_vec(1, 3, vec![0.1, -2.5, 1.0 / 3.0]);
        t.round_f32();
        let once = t.clone();
        t.round_f32();
        assert_eq!(t, once);
        let stored = once.to_f32_vec();
        let back = Tensor::<f64>::from_f32_vec(1, 3, &stored);
        assert_eq!(back.data(), once.data());
    }

    #[test]
    #[should_panic(expected = "does not match shape")]
    fn from_vec_rejects_wrong_length() {
        let _ = Tensor::<f64>::from_vec(2, 2, vec![1.0, 2.0, 3.0]);
    }
}
