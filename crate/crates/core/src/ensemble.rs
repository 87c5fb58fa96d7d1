//! Seeded Gaussian band matrices and their Brownian flow.
//!
//! Randomness is counter based: the Gaussian for entry (x, y) of step k is
//! read from ChaCha8 stream k at a fixed word offset derived from x*N + y,
//! so any entry of any step can be regenerated independently of the others.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::linalg::{CMat, C64};
use crate::torus::CirculantOperator;

/// Stream reserved for single-time samples, disjoint from every flow step.
pub const SAMPLE_STREAM: u64 = u64::MAX;

/// Two standard normals from two uniform words.
fn box_muller(a: u64, b: u64) -> (f64, f64) {
    let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    let r = (-2.0 * u1.ln()).sqrt();
    let (sin, cos) = (std::f64::consts::TAU * u2).sin_cos();
    (r * cos, r * sin)
}

/// Hermitian Gaussian matrix with E|X_xy|² = var·S_xy (complex off the
/// diagonal, real on it). This is the only place the diagonal convention lives.
pub fn gaussian_hermitian(s: &CirculantOperator, var: f64, seed: u64, stream: u64) -> CMat {
    let n = s.n();
    let mut h = CMat::zeros(n, n);
    if var == 0.0 {
        return h;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    for x in 0..n {
        // Two u64 = four 32-bit words per entry.
        rng.set_word_pos(((x * n + x) as u128) * 4);
        for y in x..n {
            let a = rng.next_u64();
            let b = rng.next_u64();
            let sxy = s.entry(x, y);
            if sxy == 0.0 {
                continue;
            }
            let (g1, g2) = box_muller(a, b);
            if x == y {
                h[(x, x)] = C64::new((var * sxy).sqrt() * g1, 0.0);
            } else {
                let sd = (0.5 * var * sxy).sqrt();
                let v = C64::new(sd * g1, sd * g2);
                h[(x, y)] = v;
                h[(y, x)] = v.conj();
            }
        }
    }
    h
}

#[derive(Clone, Debug)]
pub struct BandSample {
    pub h: CMat,
    pub t: f64,
    pub seed: u64,
}

/// H with E|H_xy|² = t·S_xy.
pub fn sample_band_matrix(s: &CirculantOperator, t: f64, seed: u64) -> Result<BandSample> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("time t = {t} must be nonnegative")));
    }
    Ok(BandSample { h: gaussian_hermitian(s, t, seed, SAMPLE_STREAM), t, seed })
}

/// Grid 0 = t_0 < ... < t_K = 1 with t_i = 1 - (1 - i/K)^p.
///
/// p > 1 packs points near t = 1. Grids with K | K' are nested.
pub fn graded_grid(k: usize, p: f64) -> Vec<f64> {
    (0..=k)
        .map(|i| {
            if i == k {
                1.0
            } else {
                1.0 - (1.0 - i as f64 / k as f64).powf(p)
            }
        })
        .collect()
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::Domain("grid needs at least two points".into()));
    }
    if grid[0] != 0.0 {
        return Err(Error::Domain("grid must start at 0".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("grid must be strictly increasing".into()));
    }
    if *grid.last().unwrap() > 1.0 {
        return Err(Error::Domain("grid must end at or before 1".into()));
    }
    Ok(())
}

/// Matrix Brownian motion H_t with dH_xy = sqrt(S_xy) dB_xy and H_0 = 0.
///
/// Increments are generated on demand. A flow produced by `subsample` sums the
/// fine increments, so coarse and fine flows share one sample path.
#[derive(Clone, Debug)]
pub struct BrownianFlow {
    s: CirculantOperator,
    seed: u64,
    fine_grid: Vec<f64>,
    /// Indices into `fine_grid` of the visible grid points.
    nodes: Vec<usize>,
}

impl BrownianFlow {
    pub fn new(s: &CirculantOperator, grid: &[f64], seed: u64) -> Result<Self> {
        validate_grid(grid)?;
        Ok(BrownianFlow { s: s.clone(), seed, fine_grid: grid.to_vec(), nodes: (0..grid.len()).collect() })
    }

    /// Keep every `stride`-th grid point of this flow.
    pub fn subsample(&self, stride: usize) -> Result<Self> {
        if stride == 0 || (self.nodes.len() - 1) % stride != 0 {
            return Err(Error::Domain(format!("stride {stride} does not divide {} steps", self.nodes.len() - 1)));
        }
        let nodes = self.nodes.iter().step_by(stride).cloned().collect();
        Ok(BrownianFlow { s: self.s.clone(), seed: self.seed, fine_grid: self.fine_grid.clone(), nodes })
    }

    pub fn profile(&self) -> &CirculantOperator {
        &self.s
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn times(&self) -> Vec<f64> {
        self.nodes.iter().map(|&i| self.fine_grid[i]).collect()
    }

    /// H(t_{k+1}) - H(t_k).
    pub fn increment(&self, k: usize) -> CMat {
        let n = self.s.n();
        let mut acc = CMat::zeros(n, n);
        for j in self.nodes[k]..self.nodes[k + 1] {
            let dt = self.fine_grid[j + 1] - self.fine_grid[j];
            crate::linalg::caxpy(&mut acc, C64::new(1.0, 0.0), &gaussian_hermitian(&self.s, dt, self.seed, j as u64));
        }
        acc
    }

    /// Visit every grid point in order with (k, t_k, H(t_k), increment to the
    /// next point). The increment is `None` at the last point.
    pub fn walk<E>(&self, mut visit: impl FnMut(usize, f64, &CMat, Option<&CMat>) -> std::result::Result<(), E>) -> std::result::Result<(), E> {
        let n = self.s.n();
        let times = self.times();
        let mut h = CMat::zeros(n, n);
        for k in 0..=self.steps() {
            if k < self.steps() {
                let dh = self.increment(k);
                visit(k, times[k], &h, Some(&dh))?;
                crate::linalg::caxpy(&mut h, C64::new(1.0, 0.0), &dh);
            } else {
                visit(k, times[k], &h, None)?;
            }
        }
        Ok(())
    }

    /// H at the final grid point.
    pub fn terminal(&self) -> CMat {
        let n = self.s.n();
        let mut h = CMat::zeros(n, n);
        for k in 0..self.steps() {
            crate::linalg::caxpy(&mut h, C64::new(1.0, 0.0), &self.increment(k));
        }
        h
    }
}

/// Convenience: `BrownianFlow::new`.
pub fn brownian_path(s: &CirculantOperator, grid: &[f64], seed: u64) -> Result<BrownianFlow> {
    BrownianFlow::new(s, grid, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::{build_variance_profile, ProfileSpec, Shape};

    fn profile(n: usize, w: usize) -> CirculantOperator {
        build_variance_profile(&ProfileSpec::new(n, w, Shape::Fejer).unwrap()).unwrap()
    }

    fn is_hermitian(h: &CMat) -> bool {
        (0..h.nrows()).all(|i| (0..h.ncols()).all(|j| h[(i, j)] == h[(j, i)].conj()))
    }

    #[test]
    fn zero_time_is_zero() {
        let s = profile(12, 3);
        let b = sample_band_matrix(&s, 0.0, 5).unwrap();
        assert!(crate::linalg::max_abs(&b.h) == 0.0);
        assert!(sample_band_matrix(&s, -1.0, 5).is_err());
    }

    #[test]
    fn deterministic_and_hermitian() {
        let s = profile(24, 5);
        let a = sample_band_matrix(&s, 1.0, 42).unwrap();
        let b = sample_band_matrix(&s, 1.0, 42).unwrap();
        let c = sample_band_matrix(&s, 1.0, 43).unwrap();
        assert!(is_hermitian(&a.h));
        for i in 0..24 {
            for j in 0..24 {
                assert_eq!(a.h[(i, j)].re.to_bits(), b.h[(i, j)].re.to_bits());
                assert_eq!(a.h[(i, j)].im.to_bits(), b.h[(i, j)].im.to_bits());
                if s.entry(i, j) == 0.0 {
                    assert_eq!(a.h[(i, j)], C64::new(0.0, 0.0));
                }
            }
        }
        assert!(crate::linalg::max_abs_diff(&a.h, &c.h) > 0.0);
    }

    #[test]
    fn entry_variance_matches_profile() {
        let s = profile(10, 4);
        let t = 0.7;
        let draws = 10_000;
        let (x, y) = (2, 4);
        let mut v = Vec::with_capacity(draws);
        let mut dv = Vec::with_capacity(draws);
        for seed in 0..draws as u64 {
            let h = sample_band_matrix(&s, t, seed).unwrap().h;
            v.push(h[(x, y)].norm_sqr());
            dv.push(h[(x, x)].re.powi(2));
        }
        for (vals, target) in [(v, t * s.entry(x, y)), (dv, t * s.entry(x, x))] {
            let mean = vals.iter().sum::<f64>() / draws as f64;
            let var = vals.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (draws as f64 - 1.0);
            let se = (var / draws as f64).sqrt();
            assert!((mean - target).abs() < 5.0 * se, "mean {mean} target {target} se {se}");
        }
    }

    #[test]
    fn grid_validation() {
        assert!(validate_grid(&[0.0, 0.5, 1.0]).is_ok());
        assert!(validate_grid(&[0.0, 0.5, 0.5]).is_err());
        assert!(validate_grid(&[0.1, 0.5]).is_err());
        assert!(validate_grid(&[0.0, 1.5]).is_err());
        let g = graded_grid(8, 2.0);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[8], 1.0);
        assert!(validate_grid(&g).is_ok());
        let coarse = graded_grid(4, 2.0);
        for (i, t) in coarse.iter().enumerate() {
            assert_eq!(*t, g[2 * i]);
        }
    }

    #[test]
    fn subsampled_flow_shares_the_path() {
        let s = profile(12, 3);
        let fine = BrownianFlow::new(&s, &graded_grid(8, 2.0), 9).unwrap();
        let coarse = fine.subsample(4).unwrap();
        assert_eq!(coarse.steps(), 2);
        assert!(crate::linalg::max_abs_diff(&fine.terminal(), &coarse.terminal()) < 1e-14);
        assert!(fine.subsample(3).is_err());
    }

    #[test]
    fn walk_starts_at_zero_and_stays_hermitian() {
        let s = profile(12, 3);
        let flow = BrownianFlow::new(&s, &graded_grid(5, 1.5), 2).unwrap();
        flow.walk(|k, _t, h, _dh| {
            if k == 0 {
                assert_eq!(crate::linalg::max_abs(h), 0.0);
            }
            assert!(is_hermitian(h));
            Ok::<(), ()>(())
        })
        .unwrap();
    }
}
