//! Least-squares line and power-law fits.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Standard error of the slope (0 for two points or an exact fit).
    pub slope_se: f64,
}

/// Ordinary least squares y = slope·x + intercept. None for fewer than two
/// points or no spread in x.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let k = n as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    let slope_se = if n > 2 { (sse / (k - 2.0) / sxx).sqrt() } else { 0.0 };
    Some(LineFit { slope, intercept, r2, slope_se })
}

/// Fit log y = slope·log x + intercept.
pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() {
        return Err(Error::Domain("x and y lengths differ".into()));
    }
    if let Some(v) = xs.iter().chain(ys).find(|v| !(**v > 0.0)) {
        return Err(Error::Domain(format!("power-law fit needs positive data, got {v}")));
    }
    let mut distinct = xs.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Domain(format!("need at least 3 distinct x values, got {}", distinct.len())));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    fit_line(&lx, &ly).ok_or_else(|| Error::Numeric("degenerate fit".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    #[test]
    fn exact_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| x.powi(-2)).collect();
        let f = fit_power_law(&xs, &ys).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-9);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_has_zero_slope() {
        let f = fit_power_law(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]).unwrap();
        assert!(f.slope.abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_power_law(&[1.0, 2.0, 3.0], &[1.0, 0.0, 1.0]).is_err());
        assert!(fit_power_law(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(fit_line(&[1.0], &[1.0]).is_none());
    }

    #[test]
    fn noisy_slope_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let xs: Vec<f64> = (1..=40).map(|i| i as f64 * 5.0).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| {
                let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
                x.powf(-0.75) * (0.1 * u).exp()
            })
            .collect();
        let f = fit_power_law(&xs, &ys).unwrap();
        assert!((f.slope + 0.75).abs() < 3.0 * f.slope_se, "{f:?}");
    }
}
