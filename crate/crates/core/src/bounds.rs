//! Measured versions of the deterministic profile bounds: heat kernel decay,
//! Θ_t entries and row sums, B_s row sums and off-diagonal decay.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::semicircle::SpectralPoint;
use crate::torus::{self, lag_distance, CirculantOperator};

#[derive(Clone, Debug, Serialize)]
pub struct FitRow {
    pub x: f64,
    pub value: f64,
    pub bound: f64,
    pub ratio: f64,
}

/// Rows plus the smallest constant C with value <= C·bound on every row.
#[derive(Clone, Debug, Serialize)]
pub struct BoundFit {
    pub rows: Vec<FitRow>,
    pub constant: f64,
}

impl BoundFit {
    fn from_rows(rows: Vec<FitRow>) -> Self {
        let constant = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
        BoundFit { rows, constant }
    }
}

/// Log-spaced r values with r t |m|² running from `lo` to `hi` diffusion
/// times. Below about one step the walk has not spread yet and the bound
/// is not meant to apply.
pub fn heat_kernel_r_grid(m_abs_sq: f64, t: f64, lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && count >= 2 && t > 0.0 && m_abs_sq > 0.0) {
        return Err(Error::Domain("invalid heat kernel grid".into()));
    }
    let scale = t * m_abs_sq;
    Ok((0..count)
        .map(|i| {
            let u = i as f64 / (count - 1) as f64;
            lo * (hi / lo).powf(u) / scale
        })
        .collect())
}

/// max entry of exp{r t|m|²(S - Id)} against W^{-1}(rt)^{-1/2} + N^{-1}.
pub fn heat_kernel_fit(s: &CirculantOperator, w_band: usize, m: crate::linalg::C64, t: f64, r_grid: &[f64]) -> Result<BoundFit> {
    let n = s.n() as f64;
    let w = w_band as f64;
    let mut rows = Vec::with_capacity(r_grid.len());
    for &r in r_grid {
        let k = torus::heat_kernel(s, m, t, r)?;
        let value = k.max_entry();
        let bound = 1.0 / (w * (r * t).sqrt()) + 1.0 / n;
        rows.push(FitRow { x: r, value, bound, ratio: value / bound });
    }
    Ok(BoundFit::from_rows(rows))
}

/// max_a Σ_b (Θ_t)_ab against |Im w_t|^{-1} over a grid of (point, t).
pub fn theta_row_sum_fit(s: &CirculantOperator, points: &[SpectralPoint], times: &[f64]) -> Result<BoundFit> {
    let mut rows = Vec::new();
    for p in points {
        for &t in times {
            let th = torus::diffusion_profile(s, p.m, t)?;
            let value = th.abs_row_sum();
            let bound = 1.0 / p.im_w(t);
            rows.push(FitRow { x: t, value, bound, ratio: value / bound });
        }
    }
    Ok(BoundFit::from_rows(rows))
}

/// max entry of Θ_t against W^{-1}|Im w_t|^{-1/2}.
pub fn theta_entry_fit(s: &CirculantOperator, w_band: usize, points: &[SpectralPoint], times: &[f64]) -> Result<BoundFit> {
    let w = w_band as f64;
    let mut rows = Vec::new();
    for p in points {
        for &t in times {
            let th = torus::diffusion_profile(s, p.m, t)?;
            let value = th.max_entry();
            let bound = 1.0 / (w * p.im_w(t).sqrt());
            rows.push(FitRow { x: t, value, bound, ratio: value / bound });
        }
    }
    Ok(BoundFit::from_rows(rows))
}

/// max_a Σ_b |(B_s)_ab| over a grid of (point, s); the bound is 1.
pub fn b_row_sum_fit(s_op: &CirculantOperator, points: &[SpectralPoint], s_grid: &[f64]) -> Result<BoundFit> {
    let mut rows = Vec::new();
    for p in points {
        for &s in s_grid {
            let value = torus::b_matrix(s_op, p.m, s)?.abs_row_sum();
            rows.push(FitRow { x: s, value, bound: 1.0, ratio: value });
        }
    }
    Ok(BoundFit::from_rows(rows))
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayReport {
    /// (S^{1/2} Θ_t S^{1/2})_{0,d} for d = 0..=N/2.
    pub profile: Vec<f64>,
    /// d = 0 entry over W^{-1}|Im w_t|^{-1/2}.
    pub peak_ratio: f64,
    /// Fitted exponential decay length, from the lags where the profile lies
    /// between 1e-2 and 1e-12 of the peak. None if fewer than two such lags.
    pub decay_length: Option<f64>,
    /// W^{1+ε}|Im w_t|^{-1/2}.
    pub scale: f64,
    pub length_ratio: Option<f64>,
    /// max over d > 10·scale of profile/peak. None when no lag on the torus is
    /// that far, so the far-field statement is vacuous.
    pub far_field: Option<f64>,
    pub symmetric: bool,
}

pub fn offdiag_decay_check(s: &CirculantOperator, w_band: usize, p: &SpectralPoint, t: f64, eps: f64) -> Result<DecayReport> {
    let n = s.n();
    let half = torus::sqrt_profile(s)?;
    let th = torus::diffusion_profile(s, p.m, t)?;
    let k = half.compose(&th).compose(&half);
    let row = k.first_row();
    let symmetric = (1..n).all(|d| (row[d] - row[n - d]).abs() <= 1e-14 * row[0].abs().max(1e-300));
    let profile: Vec<f64> = (0..=n / 2).map(|d| row[d]).collect();
    let w = w_band as f64;
    let im_w = p.im_w(t);
    let peak = profile[0];
    let peak_ratio = peak * w * im_w.sqrt();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (d, &v) in profile.iter().enumerate() {
        let rel = v / peak;
        if rel < 1e-2 && rel > 1e-12 {
            xs.push(d as f64);
            ys.push(rel.ln());
        }
    }
    let decay_length = crate::experiments::fit_line(&xs, &ys).and_then(|f| if f.slope < 0.0 { Some(-1.0 / f.slope) } else { None });
    let scale = w.powf(1.0 + eps) / im_w.sqrt();
    let far: Vec<f64> = (0..n).filter(|&d| lag_distance(d, n) as f64 > 10.0 * scale).map(|d| row[d].abs() / peak).collect();
    let far_field = if far.is_empty() { None } else { Some(far.into_iter().fold(0.0, f64::max)) };
    Ok(DecayReport { profile, peak_ratio, decay_length, scale, length_ratio: decay_length.map(|l| l / scale), far_field, symmetric })
}

/// One profile-check CSV row.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ProfileCheckRow {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "W")]
    pub w: usize,
    pub eta: f64,
    pub t: f64,
    pub max_entry: f64,
    pub row_sum: f64,
    pub bound_ratio: f64,
}

/// Θ_t at energy E over (eta, t): max entry, row sum, and the entry bound
/// ratio max_entry · W |Im w_t|^{1/2}.
pub fn profile_check(s: &CirculantOperator, w_band: usize, e: f64, etas: &[f64], times: &[f64]) -> Result<Vec<ProfileCheckRow>> {
    let mut rows = Vec::new();
    for &eta in etas {
        let p = SpectralPoint::new(e, eta)?;
        for &t in times {
            let th = torus::diffusion_profile(s, p.m, t)?;
            let max_entry = th.max_entry();
            rows.push(ProfileCheckRow {
                n: s.n(),
                w: w_band,
                eta,
                t,
                max_entry,
                row_sum: th.row_sum(),
                bound_ratio: max_entry * w_band as f64 * p.im_w(t).sqrt(),
            });
        }
    }
    Ok(rows)
}
