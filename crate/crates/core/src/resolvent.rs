//! Resolvents, T-matrices, Ward and minor identities, local-law ratios and
//! eigenvector delocalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, RMat, C64};
use crate::torus::CirculantOperator;

/// G = (H - w)^{-1}.
pub fn resolvent(h: &CMat, w: C64) -> Result<CMat> {
    if !(w.im > 0.0) {
        return Err(Error::Domain(format!("Im w = {} must be positive", w.im)));
    }
    linalg::shifted_inverse(h, w)
}

/// F = |G|∘².
pub fn abs_sq(g: &CMat) -> RMat {
    RMat::from_fn(g.nrows(), g.ncols(), |i, j| g[(i, j)].norm_sqr())
}

/// T = S^{1/2} F S^{1/2}.
pub fn t_matrix(f: &RMat, s_half: &CirculantOperator) -> RMat {
    s_half.sandwich(f)
}

#[derive(Clone, Debug)]
pub struct ResolventBundle {
    pub g: CMat,
    pub w: C64,
    pub f: RMat,
    pub t: RMat,
}

impl ResolventBundle {
    pub fn compute(h: &CMat, w: C64, s_half: &CirculantOperator) -> Result<Self> {
        let g = resolvent(h, w)?;
        Ok(Self::from_resolvent(g, w, s_half))
    }

    pub fn from_resolvent(g: CMat, w: C64, s_half: &CirculantOperator) -> Self {
        let f = abs_sq(&g);
        let t = t_matrix(&f, s_half);
        ResolventBundle { g, w, f, t }
    }

    pub fn n(&self) -> usize {
        self.g.nrows()
    }

    /// max_x |Σ_y F_xy - Im G_xx / Im w| relative to Im G_xx / Im w.
    pub fn ward_residual(&self) -> f64 {
        ward_residual(&self.g, self.w)
    }
}

pub fn ward_residual(g: &CMat, w: C64) -> f64 {
    let n = g.nrows();
    let mut worst = 0.0f64;
    for x in 0..n {
        let lhs: f64 = (0..n).map(|y| g[(x, y)].norm_sqr()).sum();
        let rhs = g[(x, x)].im / w.im;
        worst = worst.max((lhs - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE));
    }
    worst
}

/// (max |T - Θ|, that divided by max Θ).
pub fn qd_error(t: &RMat, theta: &CirculantOperator) -> (f64, f64) {
    let n = t.nrows();
    let mut err = 0.0f64;
    for x in 0..n {
        for y in 0..n {
            err = err.max((t[(x, y)] - theta.entry(x, y)).abs());
        }
    }
    let peak = theta.max_entry();
    (err, if peak > 0.0 { err / peak } else { 0.0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalLaw {
    /// max_ab |G_ab - m δ_ab|² / ((S^{1/2} T S^{1/2})_ab + S^{1/2}_ab + W^{-D}).
    pub stop_ratio: f64,
    /// max_ab |G_ab - m δ_ab|².
    pub entry_max: f64,
    /// entry_max / (W^{-1} η^{-1/2}).
    pub entry_ratio: f64,
}

pub fn local_law_ratios(
    bundle: &ResolventBundle,
    m: C64,
    s_half: &CirculantOperator,
    w_band: usize,
    d_exp: f64,
    eta: f64,
) -> LocalLaw {
    let n = bundle.n();
    let sts = s_half.sandwich(&bundle.t);
    let floor = (w_band as f64).powf(-d_exp);
    let mut stop_ratio = 0.0f64;
    let mut entry_max = 0.0f64;
    for x in 0..n {
        for y in 0..n {
            let mut d = bundle.g[(x, y)];
            if x == y {
                d -= m;
            }
            let num = d.norm_sqr();
            let den = sts[(x, y)] + s_half.entry(x, y) + floor;
            stop_ratio = stop_ratio.max(num / den);
            entry_max = entry_max.max(num);
        }
    }
    let scale = 1.0 / (w_band as f64 * eta.sqrt());
    LocalLaw { stop_ratio, entry_max, entry_ratio: entry_max / scale }
}

/// Max discrepancy between the resolvent of H with row and column x removed
/// and G_kl - G_kx G_xl / G_xx.
pub fn minor_identity_check(h: &CMat, w: C64, x: usize) -> Result<f64> {
    let n = h.nrows();
    if x >= n {
        return Err(Error::Domain(format!("index {x} out of range for N = {n}")));
    }
    let g = resolvent(h, w)?;
    let gxx = g[(x, x)];
    if gxx.norm() < 1e-12 {
        return Err(Error::Numeric(format!("|G_xx| = {:.2e} is too small for the minor identity", gxx.norm())));
    }
    let keep: Vec<usize> = (0..n).filter(|&i| i != x).collect();
    let hm = CMat::from_fn(n - 1, n - 1, |i, j| h[(keep[i], keep[j])]);
    let gm = resolvent(&hm, w)?;
    let mut worst = 0.0f64;
    for (i, &k) in keep.iter().enumerate() {
        for (j, &l) in keep.iter().enumerate() {
            let via = g[(k, l)] - g[(k, x)] * g[(x, l)] / gxx;
            worst = worst.max((gm[(i, j)] - via).norm());
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelocReport {
    pub density: f64,
    /// (eigenvalue, Σ_x |u(x)| ||P_{x,ℓ} u||) for every eigenvector.
    pub functionals: Vec<(f64, f64)>,
    pub bulk_count: usize,
    pub localized_count: usize,
}

/// Σ_x |u(x)| · ||P_{x,ℓ} u|| where P_{x,ℓ} keeps coordinates at distance ≥ ℓ from x.
pub fn localization_functional(u: &[C64], ell: usize, periodic: bool) -> f64 {
    let n = u.len();
    let mass: Vec<f64> = u.iter().map(|c| c.norm_sqr()).collect();
    let total: f64 = mass.iter().sum();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + mass[i];
    }
    let range = |lo: usize, hi: usize| prefix[hi] - prefix[lo];
    let mut acc = 0.0;
    for x in 0..n {
        // Mass at distance < ℓ from x.
        let near = if ell == 0 {
            0.0
        } else if periodic {
            if 2 * ell > n {
                total
            } else {
                let r = ell - 1;
                let lo = x as isize - r as isize;
                let hi = x + r;
                let mut s = 0.0;
                if lo < 0 {
                    s += range(0, x + 1) + range((n as isize + lo) as usize, n);
                } else {
                    s += range(lo as usize, x + 1);
                }
                if hi >= n {
                    s += range(x + 1, n) + range(0, hi - n + 1);
                } else {
                    s += range(x + 1, hi + 1);
                }
                s
            }
        } else {
            let lo = x.saturating_sub(ell - 1);
            let hi = (x + ell - 1).min(n - 1);
            range(lo, hi + 1)
        };
        acc += u[x].norm() * (total - near).max(0.0).sqrt();
    }
    acc
}

/// Fraction of eigenvectors (out of N) with eigenvalue in [-2+κ, 2-κ] whose
/// localization functional is at most ε.
pub fn eigen_delocalization(h: &CMat, kappa: f64, ell: usize, eps: f64, periodic: bool) -> Result<DelocReport> {
    let n = h.nrows();
    if ell == 0 || ell > n {
        return Err(Error::Domain(format!("length scale ell = {ell} must lie in 1..={n}")));
    }
    let (vals, vecs) = linalg::hermitian_eigen(h)?;
    let mut functionals = Vec::with_capacity(n);
    let mut bulk_count = 0;
    let mut localized_count = 0;
    let mut col = vec![C64::new(0.0, 0.0); n];
    for (k, &lam) in vals.iter().enumerate() {
        for i in 0..n {
            col[i] = vecs[(i, k)];
        }
        let f = localization_functional(&col, ell, periodic);
        functionals.push((lam, f));
        if lam.abs() <= 2.0 - kappa {
            bulk_count += 1;
            if f <= eps {
                localized_count += 1;
            }
        }
    }
    Ok(DelocReport { density: localized_count as f64 / n as f64, functionals, bulk_count, localized_count })
}

/// Translation average of T_{a,a+d} over a, for each lag d.
pub fn lag_profile(t: &RMat) -> Vec<f64> {
    let n = t.nrows();
    (0..n).map(|d| (0..n).map(|a| t[(a, (a + d) % n)]).sum::<f64>() / n as f64).collect()
}

/// Σ_b T_ab, expected to equal (S^{1/2} v)_a with v_y = Im G_yy / Im w.
pub fn t_row_sum_check(bundle: &ResolventBundle, s_half: &CirculantOperator) -> f64 {
    let n = bundle.n();
    let v: Vec<f64> = (0..n).map(|y| bundle.g[(y, y)].im / bundle.w.im).collect();
    let want = s_half.apply(&v);
    let mut worst = 0.0f64;
    for a in 0..n {
        let got: f64 = (0..n).map(|b| bundle.t[(a, b)]).sum();
        worst = worst.max((got - want[a]).abs() / want[a].abs().max(f64::MIN_POSITIVE));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::sample_band_matrix;
    use crate::semicircle::SpectralPoint;
    use crate::torus::{build_variance_profile, diffusion_profile, sqrt_profile, ProfileSpec, Shape};

    fn setup(n: usize, w: usize) -> (CirculantOperator, CirculantOperator) {
        let s = build_variance_profile(&ProfileSpec::new(n, w, Shape::Fejer).unwrap()).unwrap();
        let r = sqrt_profile(&s).unwrap();
        (s, r)
    }

    #[test]
    fn zero_matrix_resolvent() {
        let w = C64::new(0.3, 0.7);
        let g = resolvent(&CMat::zeros(5, 5), w).unwrap();
        for i in 0..5 {
            assert!((g[(i, i)] + 1.0 / w).norm() < 1e-15);
        }
        let h = CMat::from_fn(1, 1, |_, _| C64::new(0.4, 0.0));
        let g1 = resolvent(&h, w).unwrap();
        assert!((g1[(0, 0)] - 1.0 / (C64::new(0.4, 0.0) - w)).norm() < 1e-15);
        assert!(resolvent(&h, C64::new(0.0, 0.0)).is_err());
    }

    #[test]
    fn ward_on_random_draw() {
        let (s, r) = setup(128, 12);
        let h = sample_band_matrix(&s, 1.0, 3).unwrap().h;
        let w = C64::new(0.2, 0.05);
        let b = ResolventBundle::compute(&h, w, &r).unwrap();
        assert!(b.ward_residual() < 1e-9);
        assert!(linalg::resolvent_residual(&h, w, &b.g) < 1e-9);
        assert!(t_row_sum_check(&b, &r) < 1e-9);
    }

    #[test]
    fn t_matrix_matches_triple_sum() {
        let (s, r) = setup(8, 3);
        let h = sample_band_matrix(&s, 1.0, 11).unwrap().h;
        let b = ResolventBundle::compute(&h, C64::new(-0.5, 0.3), &r).unwrap();
        let rd = r.to_dense();
        for a in 0..8 {
            for bb in 0..8 {
                let mut acc = 0.0;
                for x in 0..8 {
                    for y in 0..8 {
                        acc += rd[(a, x)] * b.g[(x, y)].norm_sqr() * rd[(y, bb)];
                    }
                }
                assert!((acc - b.t[(a, bb)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn t_equals_theta_at_origin() {
        let (s, r) = setup(32, 6);
        let p = SpectralPoint::new(0.3, 0.1).unwrap();
        let b = ResolventBundle::compute(&CMat::zeros(32, 32), p.w(0.0), &r).unwrap();
        let th = diffusion_profile(&s, p.m, 0.0).unwrap();
        let (err, ratio) = qd_error(&b.t, &th);
        assert!(err < 1e-12 && ratio < 1e-11);
        let ll = local_law_ratios(&b, p.m, &r, 6, 10.0, p.eta);
        assert!(ll.stop_ratio < 1e-20);
    }

    #[test]
    fn minor_identity() {
        // 2x2 closed form: the minor is the scalar h_11, so G^(0) = 1/(h11 - w).
        let h = CMat::from_fn(2, 2, |i, j| match (i, j) {
            (0, 0) => C64::new(0.3, 0.0),
            (1, 1) => C64::new(-0.2, 0.0),
            (0, 1) => C64::new(0.1, 0.4),
            _ => C64::new(0.1, -0.4),
        });
        let w = C64::new(0.1, 0.2);
        assert!(minor_identity_check(&h, w, 0).unwrap() < 1e-14);
        let (s, _) = setup(64, 8);
        let h = sample_band_matrix(&s, 1.0, 7).unwrap().h;
        assert!(minor_identity_check(&h, C64::new(0.1, 0.05), 17).unwrap() < 1e-8);
    }

    #[test]
    fn delta_and_flat_vectors() {
        let n = 64;
        let mut e = vec![C64::new(0.0, 0.0); n];
        e[0] = C64::new(1.0, 0.0);
        assert_eq!(localization_functional(&e, 1, true), 0.0);
        assert_eq!(localization_functional(&e, 5, false), 0.0);
        let flat = vec![C64::new(1.0 / (n as f64).sqrt(), 0.0); n];
        let ell = n / 8;
        let want = n as f64 * (n as f64).powf(-0.5) * (((n - 2 * ell + 1) as f64) / n as f64).sqrt();
        assert!((localization_functional(&flat, ell, true) - want).abs() < 1e-12);
        assert_eq!(localization_functional(&flat, n / 2 + 1, true), 0.0);
    }

    #[test]
    fn degenerate_scale_counts_bulk() {
        let (s, _) = setup(40, 6);
        let h = sample_band_matrix(&s, 1.0, 1).unwrap().h;
        let rep = eigen_delocalization(&h, 0.2, 21, 0.1, true).unwrap();
        assert_eq!(rep.localized_count, rep.bulk_count);
        assert!((rep.density - rep.bulk_count as f64 / 40.0).abs() < 1e-15);
        assert!(eigen_delocalization(&h, 0.2, 0, 0.1, true).is_err());
    }
}
