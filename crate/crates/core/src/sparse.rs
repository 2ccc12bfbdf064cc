//! Sparse Hermitian matrices stored by their upper triangle.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Hermitian `n x n` matrix holding only `(i, j)` with `i <= j`.
///
/// Diagonal entries are real by construction; the lower triangle is implied by
/// conjugation, so the Hermitian property holds exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct HermitianSparse<T: Scalar> {
    n: usize,
    diag: BTreeMap<usize, T>,
    upper: BTreeMap<(usize, usize), Complex<T>>,
}

impl<T: Scalar> HermitianSparse<T> {
    pub fn zeros(n: usize) -> Self {
        Self { n, diag: BTreeMap::new(), upper: BTreeMap::new() }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for k in 0..n {
            m.add_diag(k, T::one());
        }
        m
    }

    /// Single-entry matrix `e_k e_k^T`.
    pub fn unit(n: usize, k: usize) -> Self {
        let mut m = Self::zeros(n);
        m.add_diag(k, T::one());
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn add_diag(&mut self, k: usize, value: T) {
        assert!(k < self.n, "diagonal index {k} out of range {}", self.n);
        *self.diag.entry(k).or_insert_with(T::zero) += value;
    }

    /// Adds `value` at `(i, j)` and its conjugate at `(j, i)`; `i != j`.
    pub fn add_offdiag(&mut self, i: usize, j: usize, value: Complex<T>) {
        assert!(i < self.n && j < self.n && i != j, "bad off-diagonal index ({i}, {j})");
        let (key, v) = if i < j { ((i, j), value) } else { ((j, i), value.conj()) };
        *self.upper.entry(key).or_insert_with(Complex::default) += v;
    }

    /// Entry `(i, j)` of the full matrix.
    pub fn get(&self, i: usize, j: usize) -> Complex<T> {
        if i == j {
            Complex::new(self.diag.get(&i).copied().unwrap_or_else(T::zero), T::zero())
        } else if i < j {
            self.upper.get(&(i, j)).copied().unwrap_or_default()
        } else {
            self.upper.get(&(j, i)).map(|z| z.conj()).unwrap_or_default()
        }
    }

    pub fn diagonal(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        self.diag.iter().map(|(&k, &v)| (k, v))
    }

    /// Upper off-diagonal entries `((i, j), value)` with `i < j`.
    pub fn upper(&self) -> impl Iterator<Item = ((usize, usize), Complex<T>)> + '_ {
        self.upper.iter().map(|(&k, &v)| (k, v))
    }

    /// Off-diagonal positions `(i, j)`, `i < j`, holding a nonzero value.
    pub fn support(&self) -> Vec<(usize, usize)> {
        self.upper.iter().filter(|(_, v)| **v != Complex::default()).map(|(&k, _)| k).collect()
    }

    pub fn scale(&mut self, s: T) {
        for v in self.diag.values_mut() {
            *v *= s;
        }
        for v in self.upper.values_mut() {
            *v = v.scale(s);
        }
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &Self, s: T) {
        assert_eq!(self.n, other.n);
        for (k, v) in other.diagonal() {
            self.add_diag(k, v * s);
        }
        for ((i, j), v) in other.upper() {
            self.add_offdiag(i, j, v.scale(s));
        }
    }

    /// `v* M v`, real by construction.
    pub fn quad_form(&self, v: &[Complex<T>]) -> T {
        assert_eq!(v.len(), self.n);
        let two = T::lit(2.0);
        let mut acc = T::zero();
        for (k, d) in self.diagonal() {
            acc += d * v[k].norm_sqr();
        }
        for ((i, j), m) in self.upper() {
            acc += two * (v[i].conj() * m * v[j]).re;
        }
        acc
    }

    /// `Tr(M X)` for a Hermitian `X` given through an entry accessor.
    pub fn trace_with(&self, x: impl Fn(usize, usize) -> Complex<T>) -> T {
        let two = T::lit(2.0);
        let mut acc = T::zero();
        for (k, d) in self.diagonal() {
            acc += d * x(k, k).re;
        }
        for ((i, j), m) in self.upper() {
            // M_ij X_ji + M_ji X_ij = 2 Re(M_ij conj(X_ij))
            acc += two * (m * x(i, j).conj()).re;
        }
        acc
    }

    /// `M v`.
    pub fn mul_vec(&self, v: &[Complex<T>]) -> Vec<Complex<T>> {
        let mut out = vec![Complex::default(); self.n];
        for (k, d) in self.diagonal() {
            out[k] += v[k].scale(d);
        }
        for ((i, j), m) in self.upper() {
            out[i] += m * v[j];
            out[j] += m.conj() * v[i];
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<Complex<T>> {
        let mut d = DMatrix::from_element(self.n, self.n, Complex::default());
        for (k, v) in self.diagonal() {
            d[(k, k)] = Complex::new(v, T::zero());
        }
        for ((i, j), v) in self.upper() {
            d[(i, j)] = v;
            d[(j, i)] = v.conj();
        }
        d
    }

    pub fn frobenius_norm(&self) -> T {
        let two = T::lit(2.0);
        let mut acc = T::zero();
        for (_, v) in self.diagonal() {
            acc += v * v;
        }
        for (_, v) in self.upper() {
            acc += two * v.norm_sqr();
        }
        acc.sqrt()
    }

    pub fn cast<U: Scalar>(&self) -> HermitianSparse<U> {
        let c = |x: T| U::lit(x.as_f64());
        HermitianSparse {
            n: self.n,
            diag: self.diag.iter().map(|(&k, &v)| (k, c(v))).collect(),
            upper: self.upper.iter().map(|(&k, v)| (k, Complex::new(c(v.re), c(v.im)))).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_is_exactly_hermitian() {
        let mut m = HermitianSparse::<f64>::zeros(3);
        m.add_diag(0, 2.0);
        m.add_offdiag(2, 0, Complex::new(0.3, -1.1));
        m.add_offdiag(0, 1, Complex::new(-0.5, 0.25));
        let d = m.to_dense();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(d[(i, j)], d[(j, i)].conj());
            }
        }
        assert_eq!(m.get(2, 0), Complex::new(0.3, -1.1));
    }

    #[test]
    fn quad_form_and_trace_match_dense() {
        let mut m = HermitianSparse::<f64>::zeros(3);
        m.add_diag(1, -0.7);
        m.add_offdiag(0, 1, Complex::new(0.2, 0.9));
        m.add_offdiag(1, 2, Complex::new(-1.3, 0.4));
        let v = [Complex::new(1.0, 0.5), Complex::new(-0.3, 0.8), Complex::new(0.1, -0.6)];
        let d = m.to_dense();
        let mut dense_q = Complex::<f64>::default();
        for i in 0..3 {
            for j in 0..3 {
                dense_q += v[i].conj() * d[(i, j)] * v[j];
            }
        }
        assert!((m.quad_form(&v) - dense_q.re).abs() < 1e-14);
        assert!(dense_q.im.abs() < 1e-14);
        let x = |i: usize, j: usize| v[i] * v[j].conj();
        assert!((m.trace_with(x) - dense_q.re).abs() < 1e-14);
        let mv = m.mul_vec(&v);
        for i in 0..3 {
            let mut e = Complex::default();
            for j in 0..3 {
                e += d[(i, j)] * v[j];
            }
            assert!((mv[i] - e).norm() < 1e-14);
        }
    }
}
