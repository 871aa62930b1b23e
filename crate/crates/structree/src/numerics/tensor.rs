use serde::{Deserialize, Serialize};

/// Dense row-major matrix of f64. Vectors are `n x 1`.
///
/// All math in this crate runs on f64; reductions walk indices in ascending
/// order so results are bit-reproducible run to run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Column vector from raw entries.
    pub fn vector(data: Vec<f64>) -> Self {
        let rows = data.len();
        Tensor { rows, cols: 1, data }
    }

    /// Matrix from row-major entries. Panics if `data.len() != rows * cols`.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Tensor { rows, cols, data }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![value] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise sum of a slice of same-shape tensors, left to right.
    pub fn sum_of(parts: &[&Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "sum_of needs at least one tensor");
        let mut out = parts[0].clone();
        for t in &parts[1..] {
            assert!(out.same_shape(t), "sum_of shape mismatch");
            for (o, v) in out.data.iter_mut().zip(t.data.iter()) {
                *o += v;
            }
        }
        out
    }

    /// Elementwise mean of a slice of same-shape tensors.
    pub fn mean_of(parts: &[&Tensor]) -> Tensor {
        let mut out = Tensor::sum_of(parts);
        let k = 1.0 / parts.len() as f64;
        for v in out.data.iter_mut() {
            *v *= k;
        }
        out
    }
}

pub(crate) fn shape_str(t: &Tensor) -> String {
    format!("{}x{}", t.rows(), t.cols())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vector_is_column() {
        let v = Tensor::vector(vec![1.0, 2.0, 3.0]);
        assert_eq!(v.shape(), (3, 1));
        assert_eq!(v.get(1, 0), 2.0);
    }

    #[test]
    fn mean_of_averages_elementwise() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        let b = Tensor::vector(vec![3.0, 6.0]);
        let m = Tensor::mean_of(&[&a, &b]);
        assert_eq!(m.data(), &[2.0, 4.0]);
    }

    #[test]
    fn serde_round_trip_preserves_bits() {
        let t = Tensor::matrix(2, 2, vec![0.1, -0.25, 1.0 / 3.0, 5e-324]);
        let json = serde_json::to_string(&t).unwrap();
        let back: Tensor = serde_json::from_str(&json).unwrap();
        assert_eq!(t, back);
    }
}
