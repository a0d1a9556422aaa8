//! Dense row-major arrays, the storage type for every numeric quantity.

use crate::error::{Error, Result};

/// Scalar element type. Binary64 by default; the `f32` feature narrows it.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

pub const PI: Real = std::f64::consts::PI as Real;

/// Dense array with a row-major data buffer.
///
/// Rank 1 (`[n]`) and rank 2 (`[rows, cols]`) cover everything the models
/// need; scalars are rank-1 arrays of length one.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<Real>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<Real>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "Array::new",
                format!("shape {:?} implies {} elements, got {}", shape, numel, data.len()),
            ));
        }
        Ok(Array { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Array { shape, data: vec![0.0; numel] }
    }

    pub fn scalar(v: Real) -> Self {
        Array { shape: vec![1], data: vec![v] }
    }

    pub fn vector(data: Vec<Real>) -> Self {
        Array { shape: vec![data.len()], data }
    }

    /// Rank-2 array from a flat row-major buffer.
    pub fn matrix(rows: usize, cols: usize, data: Vec<Real>) -> Result<Self> {
        Array::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Real> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single element of a scalar array.
    pub fn item(&self) -> Real {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar array");
        self.data[0]
    }

    pub fn is_vector(&self) -> bool {
        self.shape.len() == 1
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Index of the first non-finite element, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn map(&self, f: impl Fn(Real) -> Real) -> Array {
        Array {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Array, f: impl Fn(Real, Real) -> Real) -> Array {
        debug_assert_eq!(self.shape, other.shape);
        Array {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_in_place(&mut self, other: &Array) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    pub fn scale_in_place(&mut self, c: Real) {
        for a in self.data.iter_mut() {
            *a *= c;
        }
    }
}

/// Matrix product. `a` is `[m, k]`; `b` is `[k, n]` or a `[k]` vector.
/// The result has rank matching `b`.
pub fn matmul(a: &Array, b: &Array) -> Array {
    assert!(a.is_matrix(), "matmul lhs must be rank 2, got {:?}", a.shape());
    let (m, k) = (a.rows(), a.cols());
    match b.shape() {
        [bk] => {
            assert_eq!(*bk, k, "matmul: lhs [{m}, {k}] incompatible with rhs [{bk}]");
            let mut out = vec![0.0; m];
            for i in 0..m {
                let row = &a.data[i * k..(i + 1) * k];
                let mut acc = 0.0;
                for (x, y) in row.iter().zip(b.data.iter()) {
                    acc += x * y;
                }
                out[i] = acc;
            }
            Array::vector(out)
        }
        [bk, n] => {
            assert_eq!(*bk, k, "matmul: lhs [{m}, {k}] incompatible with rhs [{bk}, {n}]");
            let n = *n;
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for p in 0..k {
                    let av = a.data[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &b.data[p * n..(p + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for (o, bv) in orow.iter_mut().zip(brow.iter()) {
                        *o += av * bv;
                    }
                }
            }
            Array { shape: vec![m, n], data: out }
        }
        other => panic!("matmul rhs must be rank 1 or 2, got {:?}", other),
    }
}

/// `out[i][j] = u[i] * v[j]`
pub fn outer(u: &[Real], v: &[Real]) -> Array {
    let mut data = Vec::with_capacity(u.len() * v.len());
    for &a in u {
        for &b in v {
            data.push(a * b);
        }
    }
    Array { shape: vec![u.len(), v.len()], data }
}

/// `a^T @ v` for `a: [m, k]`, `v: [m]` -> `[k]`.
pub fn matvec_transposed(a: &Array, v: &[Real]) -> Array {
    let (m, k) = (a.rows(), a.cols());
    debug_assert_eq!(v.len(), m);
    let mut out = vec![0.0; k];
    for i in 0..m {
        let row = &a.data[i * k..(i + 1) * k];
        let vi = v[i];
        for (o, x) in out.iter_mut().zip(row.iter()) {
            *o += vi * x;
        }
    }
    Array::vector(out)
}

/// Numerically stable logistic function.
pub fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Overflow-safe `log(1 + exp(x))`.
pub fn softplus(x: Real) -> Real {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matrix_vector() {
        let a = Array::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let x = Array::vector(vec![1.0, 1.0]);
        let y = matmul(&a, &x);
        assert_eq!(y.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_matrix_matrix() {
        let a = Array::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Array::matrix(2, 1, vec![1.0, 1.0]).unwrap();
        let y = matmul(&a, &b);
        assert_eq!(y.shape(), &[2, 1]);
        assert_eq!(y.data(), &[3.0, 7.0]);
    }

    #[test]
    fn shape_data_length_checked() {
        assert!(Array::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn stable_activations() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
        assert!(softplus(-800.0) >= 0.0);
        assert!((softplus(800.0) - 800.0).abs() < 1e-9);
        assert!((softplus(0.0) - (2.0 as Real).ln()).abs() < 1e-12);
    }
}
