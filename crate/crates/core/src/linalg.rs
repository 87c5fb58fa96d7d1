//! Thin dense linear algebra layer over faer.
//!
//! All routines run single-threaded inside faer so results are bit-reproducible;
//! callers parallelize over independent jobs instead.

use std::sync::Once;

use faer::linalg::solvers::DenseSolveCore;
use faer::{Mat, Par, Side};
pub use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub type CMat = Mat<C64>;
pub type RMat = Mat<f64>;

static INIT: Once = Once::new();

/// Pin faer to sequential kernels. Called implicitly by every routine here.
pub fn init() {
    INIT.call_once(|| faer::set_global_parallelism(Par::Seq));
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn inverse(a: &CMat) -> Result<CMat> {
    init();
    let inv = a.partial_piv_lu().inverse();
    if inv.as_ref().is_all_finite() {
        Ok(inv)
    } else {
        Err(Error::Numeric("matrix is singular to working precision".into()))
    }
}

/// (H - w)^{-1}.
pub fn shifted_inverse(h: &CMat, w: C64) -> Result<CMat> {
    let n = h.nrows();
    let mut a = h.clone();
    for i in 0..n {
        a[(i, i)] -= w;
    }
    inverse(&a)
}

pub fn matmul(a: &CMat, b: &CMat) -> CMat {
    init();
    a * b
}

pub fn rmatmul(a: &RMat, b: &RMat) -> RMat {
    init();
    a * b
}

/// Eigenvalues (ascending) and unit eigenvectors (columns) of a Hermitian matrix.
pub fn hermitian_eigen(h: &CMat) -> Result<(Vec<f64>, CMat)> {
    init();
    let e = h
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numeric(format!("eigendecomposition failed: {e:?}")))?;
    let vals: Vec<f64> = e.S().column_vector().iter().map(|v| v.re).collect();
    Ok((vals, e.U().to_owned()))
}

pub fn to_complex(a: &RMat) -> CMat {
    CMat::from_fn(a.nrows(), a.ncols(), |i, j| C64::new(a[(i, j)], 0.0))
}

pub fn real_part(a: &CMat) -> RMat {
    RMat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)].re)
}

pub fn adjoint(a: &CMat) -> CMat {
    CMat::from_fn(a.ncols(), a.nrows(), |i, j| a[(j, i)].conj())
}

pub fn conj(a: &CMat) -> CMat {
    CMat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)].conj())
}

/// y += a·x.
pub fn raxpy(y: &mut RMat, a: f64, x: &RMat) {
    assert_eq!(y.shape(), x.shape());
    for j in 0..y.ncols() {
        for i in 0..y.nrows() {
            y[(i, j)] += a * x[(i, j)];
        }
    }
}

/// y += a·x.
pub fn caxpy(y: &mut CMat, a: C64, x: &CMat) {
    assert_eq!(y.shape(), x.shape());
    for j in 0..y.ncols() {
        for i in 0..y.nrows() {
            y[(i, j)] += a * x[(i, j)];
        }
    }
}

pub fn max_abs(a: &CMat) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].norm());
        }
    }
    m
}

pub fn rmax_abs(a: &RMat) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].abs());
        }
    }
    m
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    m
}

pub fn rmax_abs_diff(a: &RMat, b: &RMat) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max((a[(i, j)] - b[(i, j)]).abs());
        }
    }
    m
}

/// Largest singular value, via the top eigenvalue of A* A.
pub fn op_norm(a: &CMat) -> Result<f64> {
    let g = matmul(&adjoint(a), a);
    let (vals, _) = hermitian_eigen(&g)?;
    Ok(vals.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}

/// Spectral norm of a Hermitian matrix.
pub fn hermitian_op_norm(a: &CMat) -> Result<f64> {
    let (vals, _) = hermitian_eigen(a)?;
    Ok(vals.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

/// max |(H - w) G - I|.
pub fn resolvent_residual(h: &CMat, w: C64, g: &CMat) -> f64 {
    let mut r = matmul(h, g);
    let n = h.nrows();
    for j in 0..n {
        for i in 0..n {
            r[(i, j)] -= w * g[(i, j)];
        }
        r[(j, j)] -= C64::new(1.0, 0.0);
    }
    max_abs(&r)
}
