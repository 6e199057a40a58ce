//! Dense complex linear algebra on small square matrices.
//!
//! Sizes are a run-time parameter. The spin-boson problem only ever uses
//! `dim == 2`, and the hot loops in [`crate::hierarchy`] work on raw slices
//! instead of going through [`Operator`].

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Add, AddAssign, Mul, Sub};

use num_complex::Complex64;
// Unused when another crate in the build links std.
#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OperatorError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("expected {expected} entries, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("dimension must be at least 1")]
    EmptyDimension,
}

/// Square complex matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct Operator {
    dim: usize,
    data: Vec<Complex64>,
}

impl fmt::Debug for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.data.chunks(self.dim)).finish()
    }
}

impl Operator {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "operator dimension must be at least 1");
        Self {
            dim,
            data: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut op = Self::zeros(dim);
        for i in 0..dim {
            op.data[i * dim + i] = ONE;
        }
        op
    }

    /// Builds an operator from `dim * dim` row-major entries.
    pub fn from_row_major(dim: usize, data: Vec<Complex64>) -> Result<Self, OperatorError> {
        if dim == 0 {
            return Err(OperatorError::EmptyDimension);
        }
        if data.len() != dim * dim {
            return Err(OperatorError::WrongLength {
                expected: dim * dim,
                got: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    pub fn from_2x2(entries: [[Complex64; 2]; 2]) -> Self {
        Self {
            dim: 2,
            data: vec![entries[0][0], entries[0][1], entries[1][0], entries[1][1]],
        }
    }

    pub fn sigma_x() -> Self {
        Self::from_2x2([[ZERO, ONE], [ONE, ZERO]])
    }

    pub fn sigma_y() -> Self {
        Self::from_2x2([[ZERO, -I], [I, ZERO]])
    }

    /// `diag(1, -1)`: basis state 0 is the excited state.
    pub fn sigma_z() -> Self {
        Self::from_2x2([[ONE, ZERO], [ZERO, -ONE]])
    }

    /// Lowering operator `|1><0|` taking the excited state to the ground state.
    pub fn sigma_minus() -> Self {
        Self::from_2x2([[ZERO, ZERO], [ONE, ZERO]])
    }

    pub fn sigma_plus() -> Self {
        Self::from_2x2([[ZERO, ONE], [ZERO, ZERO]])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.dim + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: Complex64) {
        self.data[row * self.dim + col] = value;
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|z| *z == ZERO)
    }

    /// Largest absolute value of any entry.
    pub fn max_abs_entry(&self) -> f64 {
        max_abs(&self.data)
    }

    fn check_dim(&self, other: &Self) -> Result<(), OperatorError> {
        if self.dim != other.dim {
            return Err(OperatorError::DimensionMismatch {
                left: self.dim,
                right: other.dim,
            });
        }
        Ok(())
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self, OperatorError> {
        self.check_dim(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self {
            dim: self.dim,
            data,
        })
    }

    pub fn checked_sub(&self, other: &Self) -> Result<Self, OperatorError> {
        self.check_dim(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            dim: self.dim,
            data,
        })
    }

    pub fn checked_mul(&self, other: &Self) -> Result<Self, OperatorError> {
        self.check_dim(other)?;
        let mut out = Self::zeros(self.dim);
        matmul_into(&mut out.data, &self.data, &other.data, self.dim);
        Ok(out)
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|z| z * factor).collect(),
        }
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let d = self.dim;
        let mut out = Self::zeros(d);
        for r in 0..d {
            for c in 0..d {
                out.data[c * d + r] = self.data[r * d + c].conj();
            }
        }
        out
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    /// Largest entrywise deviation from Hermiticity.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for r in 0..d {
            for c in r..d {
                let dev = (self.data[r * d + c] - self.data[c * d + r].conj()).norm();
                worst = worst.max(dev);
            }
        }
        worst
    }

    pub fn apply(&self, psi: &StateVector) -> Result<StateVector, OperatorError> {
        if psi.dim() != self.dim {
            return Err(OperatorError::DimensionMismatch {
                left: self.dim,
                right: psi.dim(),
            });
        }
        let mut out = vec![ZERO; self.dim];
        apply_into(&mut out, &self.data, &psi.amps, self.dim);
        Ok(StateVector { amps: out })
    }

    /// Sum of singular values, `Tr sqrt(A^dagger A)`.
    pub fn trace_norm(&self) -> f64 {
        trace_norm_slice(&self.data, self.dim)
    }
}

/// `AB - BA`.
pub fn commutator(a: &Operator, b: &Operator) -> Result<Operator, OperatorError> {
    a.check_dim(b)?;
    let d = a.dim;
    let mut out = Operator::zeros(d);
    commutator_acc(&mut out.data, &a.data, &b.data, d, ONE);
    Ok(out)
}

pub fn adjoint(a: &Operator) -> Operator {
    a.adjoint()
}

/// `<psi|A|psi>`. No normalization is applied.
pub fn expectation(a: &Operator, psi: &StateVector) -> Result<Complex64, OperatorError> {
    if psi.dim() != a.dim {
        return Err(OperatorError::DimensionMismatch {
            left: a.dim,
            right: psi.dim(),
        });
    }
    Ok(expectation_slice(&a.data, &psi.amps, a.dim))
}

pub fn trace_norm(a: &Operator) -> f64 {
    a.trace_norm()
}

impl<'a> Add<&'a Operator> for &'a Operator {
    type Output = Operator;

    /// Panics on mismatched dimensions; use [`Operator::checked_add`] otherwise.
    fn add(self, rhs: &'a Operator) -> Operator {
        self.checked_add(rhs).expect("operator addition")
    }
}

impl<'a> Sub<&'a Operator> for &'a Operator {
    type Output = Operator;

    fn sub(self, rhs: &'a Operator) -> Operator {
        self.checked_sub(rhs).expect("operator subtraction")
    }
}

impl<'a> Mul<&'a Operator> for &'a Operator {
    type Output = Operator;

    fn mul(self, rhs: &'a Operator) -> Operator {
        self.checked_mul(rhs).expect("operator multiplication")
    }
}

impl AddAssign<&Operator> for Operator {
    fn add_assign(&mut self, rhs: &Operator) {
        assert_eq!(self.dim, rhs.dim, "operator dimension mismatch");
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

/// Pure state amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amps: Vec<Complex64>,
}

impl StateVector {
    pub fn new(amps: Vec<Complex64>) -> Result<Self, OperatorError> {
        if amps.is_empty() {
            return Err(OperatorError::EmptyDimension);
        }
        Ok(Self { amps })
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "state dimension must be at least 1");
        Self {
            amps: vec![ZERO; dim],
        }
    }

    pub fn basis(dim: usize, index: usize) -> Self {
        let mut psi = Self::zeros(dim);
        psi.amps[index] = ONE;
        psi
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &Self) -> Complex64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Rescales to unit norm. Returns the norm before rescaling.
    pub fn normalize(&mut self) -> f64 {
        let n = self.norm_sqr().sqrt();
        if n > 0.0 {
            let inv = 1.0 / n;
            for z in &mut self.amps {
                *z *= inv;
            }
        }
        n
    }

    pub fn is_finite(&self) -> bool {
        self.amps
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `|self><self|` as an operator.
    pub fn projector(&self) -> Operator {
        let d = self.dim();
        let mut op = Operator::zeros(d);
        for r in 0..d {
            for c in 0..d {
                op.data[r * d + c] = self.amps[r] * self.amps[c].conj();
            }
        }
        op
    }
}

// Slice kernels shared with the hierarchy and trajectory code.

pub(crate) fn max_abs(data: &[Complex64]) -> f64 {
    data.iter().fold(0.0f64, |acc, z| acc.max(z.norm()))
}

/// `dst = a b`.
pub(crate) fn matmul_into(dst: &mut [Complex64], a: &[Complex64], b: &[Complex64], d: usize) {
    for r in 0..d {
        for c in 0..d {
            let mut s = ZERO;
            for k in 0..d {
                s += a[r * d + k] * b[k * d + c];
            }
            dst[r * d + c] = s;
        }
    }
}

/// `dst += w (a b - b a)`.
pub(crate) fn commutator_acc(
    dst: &mut [Complex64],
    a: &[Complex64],
    b: &[Complex64],
    d: usize,
    w: Complex64,
) {
    for r in 0..d {
        for c in 0..d {
            let mut s = ZERO;
            for k in 0..d {
                s += a[r * d + k] * b[k * d + c] - b[r * d + k] * a[k * d + c];
            }
            dst[r * d + c] += w * s;
        }
    }
}

pub(crate) fn apply_into(dst: &mut [Complex64], a: &[Complex64], psi: &[Complex64], d: usize) {
    for r in 0..d {
        let mut s = ZERO;
        for c in 0..d {
            s += a[r * d + c] * psi[c];
        }
        dst[r] = s;
    }
}

pub(crate) fn expectation_slice(a: &[Complex64], psi: &[Complex64], d: usize) -> Complex64 {
    let mut s = ZERO;
    for r in 0..d {
        let mut row = ZERO;
        for c in 0..d {
            row += a[r * d + c] * psi[c];
        }
        s += psi[r].conj() * row;
    }
    s
}

pub(crate) fn trace_norm_slice(a: &[Complex64], d: usize) -> f64 {
    if d == 1 {
        return a[0].norm();
    }
    if d == 2 {
        // s1 + s2 = sqrt(s1^2 + s2^2 + 2 s1 s2) = sqrt(|A|_F^2 + 2 |det A|)
        let frob: f64 = a.iter().map(|z| z.norm_sqr()).sum();
        let det = (a[0] * a[3] - a[1] * a[2]).norm();
        return (frob + 2.0 * det).sqrt();
    }
    // Eigenvalues of A^dagger A via the real symmetric embedding
    // [[X, -Y], [Y, X]] of X + iY; each eigenvalue appears twice.
    let mut gram = vec![ZERO; d * d];
    for r in 0..d {
        for c in 0..d {
            let mut s = ZERO;
            for k in 0..d {
                s += a[k * d + r].conj() * a[k * d + c];
            }
            gram[r * d + c] = s;
        }
    }
    let n = 2 * d;
    let mut sym = vec![0.0f64; n * n];
    for r in 0..d {
        for c in 0..d {
            let z = gram[r * d + c];
            sym[r * n + c] = z.re;
            sym[(r + d) * n + (c + d)] = z.re;
            sym[r * n + (c + d)] = -z.im;
            sym[(r + d) * n + c] = z.im;
        }
    }
    let eig = symmetric_eigenvalues(&mut sym, n);
    eig.iter().map(|&l| l.max(0.0).sqrt()).sum::<f64>() / 2.0
}

/// Cyclic Jacobi sweeps on a real symmetric matrix; destroys `a`.
fn symmetric_eigenvalues(a: &mut [f64], n: usize) -> Vec<f64> {
    const MAX_SWEEPS: usize = 100;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|r| (0..n).filter(move |&c| c != r).map(move |c| (r, c)))
            .map(|(r, c)| a[r * n + c] * a[r * n + c])
            .sum();
        let diag: f64 = (0..n).map(|i| a[i * n + i] * a[i * n + i]).sum();
        if off <= f64::EPSILON * f64::EPSILON * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn assert_close(a: &Operator, b: &Operator, tol: f64) {
        assert_eq!(a.dim(), b.dim());
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).norm() <= tol, "{a:?} != {b:?}");
        }
    }

    fn op_strategy(dim: usize) -> impl Strategy<Value = Operator> {
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), dim * dim).prop_map(move |v| {
            Operator::from_row_major(dim, v.into_iter().map(|(r, i)| c(r, i)).collect()).unwrap()
        })
    }

    #[test]
    fn pauli_commutators() {
        let x = Operator::sigma_x();
        let y = Operator::sigma_y();
        let z = Operator::sigma_z();
        assert!(commutator(&x, &x).unwrap().is_zero());
        assert_close(&commutator(&x, &y).unwrap(), &z.scale(c(0.0, 2.0)), 0.0);
    }

    #[test]
    fn commutator_rejects_mixed_dims() {
        let err = commutator(&Operator::sigma_x(), &Operator::identity(3)).unwrap_err();
        assert_eq!(err, OperatorError::DimensionMismatch { left: 2, right: 3 });
    }

    #[test]
    fn commutator_matches_entrywise_product() {
        let a = Operator::from_2x2([[c(0.3, -0.1), c(1.2, 0.5)], [c(-0.7, 0.2), c(0.05, 0.9)]]);
        let b = Operator::from_2x2([[c(-0.4, 0.8), c(0.1, -0.3)], [c(0.6, 0.6), c(-1.1, 0.0)]]);
        let mut expected = Operator::zeros(2);
        for r in 0..2 {
            for col in 0..2 {
                let ab = a.get(r, 0) * b.get(0, col) + a.get(r, 1) * b.get(1, col);
                let ba = b.get(r, 0) * a.get(0, col) + b.get(r, 1) * a.get(1, col);
                expected.set(r, col, ab - ba);
            }
        }
        assert_close(&commutator(&a, &b).unwrap(), &expected, 1e-15);
    }

    #[test]
    fn adjoints() {
        assert_eq!(adjoint(&Operator::sigma_z()), Operator::sigma_z());
        assert_eq!(adjoint(&Operator::sigma_minus()), Operator::sigma_plus());
    }

    #[test]
    fn basis_expectations() {
        let z = Operator::sigma_z();
        let x = Operator::sigma_x();
        let e = StateVector::basis(2, 0);
        let g = StateVector::basis(2, 1);
        assert_eq!(expectation(&z, &e).unwrap(), c(1.0, 0.0));
        assert_eq!(expectation(&z, &g).unwrap(), c(-1.0, 0.0));
        let s = 1.0 / 2f64.sqrt();
        let plus = StateVector::new(vec![c(s, 0.0), c(s, 0.0)]).unwrap();
        assert!((expectation(&x, &plus).unwrap() - c(1.0, 0.0)).norm() < 1e-15);
        assert!(expectation(&z, &StateVector::basis(3, 0)).is_err());
    }

    #[test]
    fn trace_norm_simple_cases() {
        assert_eq!(trace_norm(&Operator::zeros(2)), 0.0);
        assert!((trace_norm(&Operator::sigma_z()) - 2.0).abs() < 1e-15);
        assert!((trace_norm(&Operator::sigma_minus()) - 1.0).abs() < 1e-15);
    }

    /// Singular values from the eigenvalues of the 2x2 Hermitian `A^dagger A`
    /// via the quadratic formula.
    fn trace_norm_quadratic_oracle(a: &Operator) -> f64 {
        let g = a.adjoint().checked_mul(a).unwrap();
        let p = g.get(0, 0).re;
        let q = g.get(1, 1).re;
        let off = g.get(0, 1).norm_sqr();
        let mean = 0.5 * (p + q);
        let disc = (0.25 * (p - q) * (p - q) + off).sqrt();
        (mean + disc).max(0.0).sqrt() + (mean - disc).max(0.0).sqrt()
    }

    #[test]
    fn trace_norm_dense_path_on_unitary_rotation() {
        // U diag(3, 1, 0.5) V with unitary U, V has singular values {3, 1, 0.5}.
        let h = 1.0 / 2f64.sqrt();
        let u = Operator::from_row_major(
            3,
            vec![
                c(h, 0.0),
                c(0.0, h),
                c(0.0, 0.0),
                c(0.0, h),
                c(h, 0.0),
                c(0.0, 0.0),
                c(0.0, 0.0),
                c(0.0, 0.0),
                c(0.0, 1.0),
            ],
        )
        .unwrap();
        let mut d = Operator::zeros(3);
        d.set(0, 0, c(3.0, 0.0));
        d.set(1, 1, c(1.0, 0.0));
        d.set(2, 2, c(0.5, 0.0));
        let a = &(&u * &d) * &u.adjoint();
        assert!((a.trace_norm() - 4.5).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn commutator_is_antisymmetric(a in op_strategy(2), b in op_strategy(2)) {
            let ab = commutator(&a, &b).unwrap();
            let ba = commutator(&b, &a).unwrap();
            assert_close(&ab, &ba.scale(c(-1.0, 0.0)), 1e-14);
        }

        #[test]
        fn adjoint_is_involution(a in op_strategy(3)) {
            prop_assert_eq!(a.adjoint().adjoint(), a);
        }

        #[test]
        fn trace_norm_matches_quadratic_oracle(a in op_strategy(2)) {
            let got = a.trace_norm();
            let want = trace_norm_quadratic_oracle(&a);
            prop_assert!((got - want).abs() <= 1e-12 * (1.0 + want), "{} vs {}", got, want);
        }

        #[test]
        fn dense_trace_norm_agrees_with_closed_form(a in op_strategy(2)) {
            // Embed in 3x3 with a zero row/column: singular values unchanged.
            let mut big = Operator::zeros(3);
            for r in 0..2 {
                for col in 0..2 {
                    big.set(r, col, a.get(r, col));
                }
            }
            prop_assert!((big.trace_norm() - a.trace_norm()).abs() < 1e-10);
        }

        #[test]
        fn trace_norm_is_subadditive(a in op_strategy(2), b in op_strategy(2)) {
            let lhs = (&a + &b).trace_norm();
            prop_assert!(lhs <= a.trace_norm() + b.trace_norm() + 1e-12);
        }

        #[test]
        fn identity_expectation_is_one(
            v in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2)
        ) {
            let mut psi = StateVector::new(v.into_iter().map(|(r, i)| c(r, i)).collect()).unwrap();
            prop_assume!(psi.norm_sqr() > 1e-6);
            psi.normalize();
            let e = expectation(&Operator::identity(2), &psi).unwrap();
            prop_assert!((e - c(1.0, 0.0)).norm() < 1e-12);
        }
    }
}
