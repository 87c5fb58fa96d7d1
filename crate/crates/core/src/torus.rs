//! Circulant variance profiles on the discrete torus Z/NZ and the spectral
//! calculus of functions of them.
//!
//! A symmetric circulant is stored by its first row `c` with `c[k] = c[N-k]`;
//! entry (x, y) is `c[(y - x) mod N]`. Its eigenvalues are the DFT of `c`.

use std::sync::Arc;

use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMat, RMat, C64};

const DUST: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    /// f = indicator of [-1, 1]: S is flat on |d| <= W.
    Uniform,
    /// Triangular f(u) = (1 - |u|)_+, built as the square of a flat box of
    /// half-width floor(W/2), so the box is an exact nonnegative root.
    #[default]
    Fejer,
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Shape::Uniform => write!(f, "uniform"),
            Shape::Fejer => write!(f, "fejer"),
        }
    }
}

impl std::str::FromStr for Shape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Shape::Uniform),
            "fejer" => Ok(Shape::Fejer),
            other => Err(Error::Domain(format!("unknown shape '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileSpec {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "W")]
    pub w: usize,
    pub shape: Shape,
}

impl ProfileSpec {
    pub fn new(n: usize, w: usize, shape: Shape) -> Result<Self> {
        let spec = ProfileSpec { n, w, shape };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.w == 0 {
            return Err(Error::Domain("band width W must be at least 1".into()));
        }
        if 2 * self.w >= self.n {
            return Err(Error::Overlap { n: self.n, w: self.w });
        }
        Ok(())
    }

    /// Half-width of the flat box whose square is the fejer profile.
    pub fn fejer_half_width(&self) -> usize {
        self.w / 2
    }

    /// Unnormalized weights f(|d|_N / W) indexed by lag d = 0..N.
    pub fn weights(&self) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|k| {
                let d = lag_distance(k, n) as f64;
                match self.shape {
                    Shape::Uniform => {
                        if d <= self.w as f64 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Shape::Fejer => {
                        let scale = (2 * self.fejer_half_width() + 1) as f64;
                        (1.0 - d / scale).max(0.0)
                    }
                }
            })
            .collect()
    }

    /// Z_{N,W}, summed exactly over the torus.
    pub fn normalizer(&self) -> f64 {
        self.weights().iter().sum()
    }
}

/// |x - y|_N for 1-based indices.
pub fn periodic_distance(x: usize, y: usize, n: usize) -> Result<usize> {
    if n == 0 || x == 0 || y == 0 || x > n || y > n {
        return Err(Error::Domain(format!("indices ({x}, {y}) out of range 1..={n}")));
    }
    Ok(lag_distance((x + n - y) % n, n))
}

/// Torus length of a lag k in 0..N.
pub fn lag_distance(k: usize, n: usize) -> usize {
    let k = k % n;
    k.min(n - k)
}

struct Plan {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    n: usize,
}

impl Plan {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Plan { fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n), n }
    }

    fn forward(&self, buf: &mut [C64]) {
        self.fwd.process(buf);
    }

    fn inverse(&self, buf: &mut [C64]) {
        self.inv.process(buf);
        let s = 1.0 / self.n as f64;
        for v in buf.iter_mut() {
            *v *= s;
        }
    }
}

fn dft_real(row: &[f64]) -> Vec<C64> {
    let plan = Plan::new(row.len());
    let mut buf: Vec<C64> = row.iter().map(|&v| C64::new(v, 0.0)).collect();
    plan.forward(&mut buf);
    buf
}

fn idft(spec: &[C64]) -> Vec<C64> {
    let plan = Plan::new(spec.len());
    let mut buf = spec.to_vec();
    plan.inverse(&mut buf);
    buf
}

fn symmetrize<T: Copy + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>>(v: &mut [T]) {
    let n = v.len();
    for k in 1..n {
        let j = n - k;
        if k < j {
            let a = (v[k] + v[j]) * 0.5;
            v[k] = a;
            v[j] = a;
        }
    }
}

/// Real symmetric circulant operator.
#[derive(Clone, Debug)]
pub struct CirculantOperator {
    n: usize,
    first_row: Vec<f64>,
    eigenvalues: Vec<f64>,
}

impl CirculantOperator {
    pub fn from_first_row(first_row: Vec<f64>) -> Result<Self> {
        let n = first_row.len();
        if n == 0 {
            return Err(Error::Domain("empty circulant".into()));
        }
        let scale = first_row.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for k in 1..n {
            if (first_row[k] - first_row[n - k]).abs() > 1e-12 * scale {
                return Err(Error::Domain(format!("first row is not symmetric at lag {k}")));
            }
        }
        let mut row = first_row;
        symmetrize(&mut row);
        let eigenvalues = dft_real(&row).iter().map(|v| v.re).collect();
        Ok(CirculantOperator { n, first_row: row, eigenvalues })
    }

    /// Circulant with prescribed (real, symmetric in k) eigenvalues.
    pub fn from_eigenvalues(eigenvalues: Vec<f64>) -> Self {
        let mut eig = eigenvalues;
        symmetrize(&mut eig);
        let spec: Vec<C64> = eig.iter().map(|&v| C64::new(v, 0.0)).collect();
        let mut row: Vec<f64> = idft(&spec).iter().map(|v| v.re).collect();
        symmetrize(&mut row);
        CirculantOperator { n: row.len(), first_row: row, eigenvalues: eig }
    }

    pub fn identity(n: usize) -> Self {
        let mut row = vec![0.0; n];
        row[0] = 1.0;
        CirculantOperator { n, first_row: row, eigenvalues: vec![1.0; n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn first_row(&self) -> &[f64] {
        &self.first_row
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn entry(&self, x: usize, y: usize) -> f64 {
        self.first_row[(y + self.n - x % self.n) % self.n]
    }

    pub fn to_dense(&self) -> RMat {
        RMat::from_fn(self.n, self.n, |i, j| self.entry(i, j))
    }

    pub fn to_dense_complex(&self) -> CMat {
        CMat::from_fn(self.n, self.n, |i, j| C64::new(self.entry(i, j), 0.0))
    }

    /// Real spectral map f(S).
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        CirculantOperator::from_eigenvalues(self.eigenvalues.iter().map(|&l| f(l)).collect())
    }

    /// Complex spectral map f(S).
    pub fn map_complex(&self, f: impl Fn(f64) -> C64) -> ComplexCirculant {
        ComplexCirculant::from_eigenvalues(self.eigenvalues.iter().map(|&l| f(l)).collect())
    }

    /// Product of two commuting circulants.
    pub fn compose(&self, other: &CirculantOperator) -> Self {
        assert_eq!(self.n, other.n);
        CirculantOperator::from_eigenvalues(
            self.eigenvalues.iter().zip(&other.eigenvalues).map(|(a, b)| a * b).collect(),
        )
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        let plan = Plan::new(self.n);
        let mut buf: Vec<C64> = v.iter().map(|&x| C64::new(x, 0.0)).collect();
        plan.forward(&mut buf);
        for (b, l) in buf.iter_mut().zip(&self.eigenvalues) {
            *b *= l;
        }
        plan.inverse(&mut buf);
        buf.iter().map(|c| c.re).collect()
    }

    /// C · M, column by column through the FFT.
    pub fn apply_left(&self, m: &RMat) -> RMat {
        assert_eq!(m.nrows(), self.n);
        let plan = Plan::new(self.n);
        let mut out = RMat::zeros(m.nrows(), m.ncols());
        let mut buf = vec![C64::new(0.0, 0.0); self.n];
        for j in 0..m.ncols() {
            for i in 0..self.n {
                buf[i] = C64::new(m[(i, j)], 0.0);
            }
            plan.forward(&mut buf);
            for (b, l) in buf.iter_mut().zip(&self.eigenvalues) {
                *b *= l;
            }
            plan.inverse(&mut buf);
            for i in 0..self.n {
                out[(i, j)] = buf[i].re;
            }
        }
        out
    }

    /// M · C (C is symmetric, so this is (C Mᵀ)ᵀ).
    pub fn apply_right(&self, m: &RMat) -> RMat {
        self.apply_left(&m.transpose().to_owned()).transpose().to_owned()
    }

    /// C · M · C.
    pub fn sandwich(&self, m: &RMat) -> RMat {
        self.apply_right(&self.apply_left(m))
    }

    /// C · M for complex M.
    pub fn apply_left_complex(&self, m: &CMat) -> CMat {
        assert_eq!(m.nrows(), self.n);
        let plan = Plan::new(self.n);
        let mut out = CMat::zeros(m.nrows(), m.ncols());
        let mut buf = vec![C64::new(0.0, 0.0); self.n];
        for j in 0..m.ncols() {
            for i in 0..self.n {
                buf[i] = m[(i, j)];
            }
            plan.forward(&mut buf);
            for (b, l) in buf.iter_mut().zip(&self.eigenvalues) {
                *b *= l;
            }
            plan.inverse(&mut buf);
            for i in 0..self.n {
                out[(i, j)] = buf[i];
            }
        }
        out
    }

    pub fn row_sum(&self) -> f64 {
        self.first_row.iter().sum()
    }

    pub fn abs_row_sum(&self) -> f64 {
        self.first_row.iter().map(|v| v.abs()).sum()
    }

    pub fn max_entry(&self) -> f64 {
        self.first_row.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_entry(&self) -> f64 {
        self.first_row.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn is_stochastic(&self, tol: f64) -> bool {
        self.min_entry() >= -tol
            && (self.eigenvalues[0] - 1.0).abs() <= tol
            && self.eigenvalues.iter().all(|&l| (-1.0 - tol..=1.0 + tol).contains(&l))
    }

    /// Zero entries in [-DUST, 0); fail on anything more negative.
    fn clip_dust(mut self) -> Result<Self> {
        let min = self.min_entry();
        if min < -DUST {
            return Err(Error::NoNonnegativeRoot { min });
        }
        for v in self.first_row.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Ok(self)
    }
}

/// Complex symmetric circulant, e.g. B_s = (1 - s m² S)^{-1}.
#[derive(Clone, Debug)]
pub struct ComplexCirculant {
    n: usize,
    first_row: Vec<C64>,
    eigenvalues: Vec<C64>,
}

impl ComplexCirculant {
    pub fn from_eigenvalues(eigenvalues: Vec<C64>) -> Self {
        let mut eig = eigenvalues;
        symmetrize(&mut eig);
        let mut row = idft(&eig);
        symmetrize(&mut row);
        ComplexCirculant { n: row.len(), first_row: row, eigenvalues: eig }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn first_row(&self) -> &[C64] {
        &self.first_row
    }

    pub fn eigenvalues(&self) -> &[C64] {
        &self.eigenvalues
    }

    pub fn entry(&self, x: usize, y: usize) -> C64 {
        self.first_row[(y + self.n - x % self.n) % self.n]
    }

    pub fn to_dense(&self) -> CMat {
        CMat::from_fn(self.n, self.n, |i, j| self.entry(i, j))
    }

    pub fn abs_row_sum(&self) -> f64 {
        self.first_row.iter().map(|v| v.norm()).sum()
    }
}

pub fn build_variance_profile(spec: &ProfileSpec) -> Result<CirculantOperator> {
    spec.validate()?;
    let weights = spec.weights();
    let z = spec.normalizer();
    CirculantOperator::from_first_row(weights.iter().map(|w| w / z).collect())
}

/// Entrywise nonnegative symmetric square root R with R·R = S.
///
/// The positive spectral root is tried first. When it has negative entries
/// (it does for the fejer profile) the flat box of half the support is tried,
/// which is the exact root of a discrete Fejér kernel.
pub fn sqrt_profile(s: &CirculantOperator) -> Result<CirculantOperator> {
    let min = s.eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
    let top = s.eigenvalues().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if min < -DUST * top.max(1.0) {
        return Err(Error::NegativeSpectrum { min });
    }
    let spectral = s.map(|l| l.max(0.0).sqrt());
    if spectral.min_entry() >= -DUST {
        return spectral.clip_dust();
    }
    let n = s.n();
    let support = (0..=n / 2).rev().find(|&k| s.first_row()[k].abs() > DUST).unwrap_or(0);
    if support % 2 == 0 && 2 * support < n {
        let h = support / 2;
        let row: Vec<f64> =
            (0..n).map(|k| if lag_distance(k, n) <= h { 1.0 / (2 * h + 1) as f64 } else { 0.0 }).collect();
        let r = CirculantOperator::from_first_row(row)?;
        let sq = r.compose(&r);
        let err = sq.first_row().iter().zip(s.first_row()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if err < 1e-12 {
            return Ok(r);
        }
    }
    Err(Error::NoNonnegativeRoot { min: spectral.min_entry() })
}

/// Θ_t = |m|² S (1 - t|m|² S)^{-1}.
pub fn diffusion_profile(s: &CirculantOperator, m: C64, t: f64) -> Result<CirculantOperator> {
    let a = m.norm_sqr();
    check_denominators(s.eigenvalues().iter().map(|&l| 1.0 - t * a * l))?;
    Ok(s.map(|l| a * l / (1.0 - t * a * l)))
}

/// B_s = (1 - s m² S)^{-1}.
pub fn b_matrix(s_op: &CirculantOperator, m: C64, s: f64) -> Result<ComplexCirculant> {
    let m2 = m * m;
    for &l in s_op.eigenvalues() {
        let d = C64::new(1.0, 0.0) - m2 * (s * l);
        if d.norm() < 1e-14 {
            return Err(Error::SingularProfile { denom: d.norm() });
        }
    }
    Ok(s_op.map_complex(|l| C64::new(1.0, 0.0) / (C64::new(1.0, 0.0) - m2 * (s * l))))
}

/// exp{r t |m|² (S - Id)}.
pub fn heat_kernel(s: &CirculantOperator, m: C64, t: f64, r: f64) -> Result<CirculantOperator> {
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::Domain(format!("heat kernel time r = {r} must be finite and >= 0")));
    }
    let k = r * t * m.norm_sqr();
    s.map(|l| (k * (l - 1.0)).exp()).clip_dust()
}

/// Id + (t - s) Θ_t.
pub fn propagator(theta_t: &CirculantOperator, t: f64, s: f64) -> CirculantOperator {
    theta_t.map(|l| 1.0 + (t - s) * l)
}

fn check_denominators(ds: impl Iterator<Item = f64>) -> Result<()> {
    for d in ds {
        if d <= 1e-12 {
            return Err(Error::SingularProfile { denom: d });
        }
    }
    Ok(())
}

/// Serialized profile: {N, W, shape, first_row}.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ProfileRecord {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "W")]
    pub w: usize,
    pub shape: Shape,
    pub first_row: Vec<f64>,
}

impl ProfileRecord {
    pub fn new(spec: &ProfileSpec, s: &CirculantOperator) -> Self {
        ProfileRecord { n: spec.n, w: spec.w, shape: spec.shape, first_row: s.first_row().to_vec() }
    }

    pub fn to_operator(&self) -> Result<CirculantOperator> {
        if self.first_row.len() != self.n {
            return Err(Error::Domain("first_row length differs from N".into()));
        }
        CirculantOperator::from_first_row(self.first_row.clone())
    }
}
