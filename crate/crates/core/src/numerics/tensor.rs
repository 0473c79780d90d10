//! Dense vectors and row-major matrices.
//!
//! Shape metadata is kept consistent with element count by construction; ops
//! on mismatched shapes return [`Error::ShapeMismatch`] with a diagnostic.

use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::{Error, Result};

/// Inner product with four independent accumulators, so the reduction is
/// not a serial dependency chain. The summation order is fixed and
/// deterministic.
pub fn dot_product<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (T::zero(), T::zero(), T::zero(), T::zero());
    for i in 0..chunks {
        let j = i * 4;
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
    }
    let mut tail = T::zero();
    for j in chunks * 4..n {
        tail += a[j] * b[j];
    }
    ((s0 + s1) + (s2 + s3)) + tail
}

/// Dense 1-D array of scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vector<T> {
    data: Vec<T>,
}

impl<T: Scalar> Vector<T> {
    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![T::zero(); len],
        }
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        Self { data }
    }

    pub fn from_fn(len: usize, mut f: impl FnMut(usize) -> T) -> Self {
        Self {
            data: (0..len).map(|i| f(i)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    pub fn fill(&mut self, v: T) {
        self.data.fill(v);
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        if self.len() != other.len() {
            return Err(shape_err("dot", self.len().to_string(), other.len()));
        }
        Ok(dot_product(&self.data, &other.data))
    }

    /// `self += scale * other`, used for gradient accumulation.
    pub fn add_scaled(&mut self, other: &Self, scale: T) -> Result<()> {
        if self.len() != other.len() {
            return Err(shape_err("add_scaled", self.len().to_string(), other.len()));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    /// Concatenate segments into one vector.
    pub fn concat(parts: &[&[T]]) -> Self {
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for p in parts {
            data.extend_from_slice(p);
        }
        Self { data }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<T: Scalar> std::ops::Index<usize> for Vector<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.data[i]
    }
}

impl<T: Scalar> std::ops::IndexMut<usize> for Vector<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.data[i]
    }
}

impl<T: Scalar> From<Vec<T>> for Vector<T> {
    fn from(data: Vec<T>) -> Self {
        Self { data }
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::ShapeMismatch {
                context: "from_rows",
                expected: format!("every row of length {ncols}"),
                got: "ragged rows".to_string(),
            });
        }
        Ok(Self {
            rows: nrows,
            cols: ncols,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { T::one() } else { T::zero() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn fill(&mut self, v: T) {
        self.data.fill(v);
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &Vector<T>) -> Result<Vector<T>> {
        if x.len() != self.cols {
            return Err(shape_err(
                "matvec",
                format!("input of length {}", self.cols),
                x.len(),
            ));
        }
        let xs = x.as_slice();
        let mut out = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            out.push(dot_product(self.row(r), xs));
        }
        Ok(Vector::from_vec(out))
    }

    /// `y = Aᵀ x`, the adjoint pass used by backprop.
    pub fn matvec_transposed(&self, x: &Vector<T>) -> Result<Vector<T>> {
        if x.len() != self.rows {
            return Err(shape_err(
                "matvec_transposed",
                format!("input of length {}", self.rows),
                x.len(),
            ));
        }
        let mut out = vec![T::zero(); self.cols];
        for r in 0..self.rows {
            let xv = x[r];
            if xv == T::zero() {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += *w * xv;
            }
        }
        Ok(Vector::from_vec(out))
    }

    /// Rank-one accumulation `A += u vᵀ`, used for weight gradients.
    pub fn add_outer(&mut self, u: &Vector<T>, v: &Vector<T>) -> Result<()> {
        if u.len() != self.rows || v.len() != self.cols {
            return Err(Error::ShapeMismatch {
                context: "add_outer",
                expected: format!("{}x{}", self.rows, self.cols),
                got: format!("{}x{}", u.len(), v.len()),
            });
        }
        for r in 0..self.rows {
            let uv = u[r];
            if uv == T::zero() {
                continue;
            }
            for (a, b) in self.row_mut(r).iter_mut().zip(v.as_slice()) {
                *a += uv * *b;
            }
        }
        Ok(())
    }
}

/// `W x + b` with shape diagnostics.
pub fn affine_forward<T: Scalar>(x: &Vector<T>, w: &Matrix<T>, b: &Vector<T>) -> Result<Vector<T>> {
    if b.len() != w.rows() {
        return Err(shape_err(
            "affine_forward bias",
            format!("length {}", w.rows()),
            b.len(),
        ));
    }
    let mut y = w.matvec(x)?;
    y.add_scaled(b, T::one())?;
    Ok(y)
}

fn shape_err(context: &'static str, expected: String, got: usize) -> Error {
    Error::ShapeMismatch {
        context,
        expected,
        got: got.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_identity_passes_input_through() {
        let w = Matrix::<f64>::identity(2);
        let b = Vector::zeros(2);
        let x = Vector::from_vec(vec![1.0, 2.0]);
        let y = affine_forward(&x, &w, &b).unwrap();
        assert_eq!(y.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn affine_scalar_case() {
        let w = Matrix::from_rows(vec![vec![2.0_f64]]).unwrap();
        let b = Vector::from_vec(vec![3.0]);
        let x = Vector::from_vec(vec![1.0]);
        let y = affine_forward(&x, &w, &b).unwrap();
        assert_eq!(y.as_slice(), &[5.0]);
    }

    #[test]
    fn affine_matches_triple_loop_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let (rows, cols) = (4, 3);
        let w = Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
        let b = Vector::from_fn(rows, |_| rng.random_range(-1.0..1.0));
        let x = Vector::from_fn(cols, |_| rng.random_range(-1.0..1.0));

        // independent triple-loop oracle
        let mut expected = vec![0.0_f64; rows];
        for r in 0..rows {
            expected[r] = b[r];
            for c in 0..cols {
                expected[r] += w.get(r, c) * x[c];
            }
        }

        let y = affine_forward(&x, &w, &b).unwrap();
        for r in 0..rows {
            assert!((y[r] - expected[r]).abs() < 1e-14);
        }
    }

    #[test]
    fn affine_rejects_dimension_mismatch() {
        let w = Matrix::<f64>::zeros(2, 3);
        let b = Vector::zeros(2);
        let x = Vector::zeros(4);
        let err = affine_forward(&x, &w, &b).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
        assert!(err.to_string().contains("expected"));
    }

    #[test]
    fn matvec_transposed_is_adjoint() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let w = Matrix::<f64>::from_fn(5, 4, |_, _| rng.random_range(-1.0..1.0));
        let x = Vector::from_fn(4, |_| rng.random_range(-1.0..1.0));
        let y = Vector::from_fn(5, |_| rng.random_range(-1.0..1.0));
        // <Wx, y> == <x, Wᵀy>
        let lhs = w.matvec(&x).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&w.matvec_transposed(&y).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn works_at_f32_too() {
        let w = Matrix::<f32>::identity(2);
        let b = Vector::from_vec(vec![0.5_f32, -0.5]);
        let x = Vector::from_vec(vec![1.0_f32, 2.0]);
        let y = affine_forward(&x, &w, &b).unwrap();
        assert_eq!(y.as_slice(), &[1.5_f32, 1.5]);
    }
}
