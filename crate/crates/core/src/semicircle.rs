//! Semicircle Stieltjes transform and the characteristic path w_t.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;

/// Default half-width of the bulk window: |E| <= 2 - BULK_MARGIN.
pub const BULK_MARGIN: f64 = 0.2;

/// m(z) = (-z + sqrt(z² - 4)) / 2 on the branch with Im m > 0.
pub fn stieltjes_semicircle(z: C64) -> Result<C64> {
    if !(z.im > 0.0) {
        return Err(Error::Domain(format!("Im z = {} must be positive", z.im)));
    }
    let root = (z * z - 4.0).sqrt();
    let mut m = (-z + root) * 0.5;
    if m.im <= 0.0 {
        m = (-z - root) * 0.5;
    }
    // One Newton step on m² + z m + 1 = 0 polishes the cancellation at large |z|.
    let f = m * m + z * m + 1.0;
    let df = 2.0 * m + z;
    if df.norm() > 0.0 {
        m -= f / df;
    }
    Ok(m)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralPoint {
    #[serde(rename = "E")]
    pub e: f64,
    pub eta: f64,
    pub z: C64,
    pub m: C64,
    pub bulk: bool,
}

impl SpectralPoint {
    pub fn new(e: f64, eta: f64) -> Result<Self> {
        Self::with_margin(e, eta, BULK_MARGIN)
    }

    pub fn with_margin(e: f64, eta: f64, margin: f64) -> Result<Self> {
        let z = C64::new(e, eta);
        let m = stieltjes_semicircle(z)?;
        Ok(SpectralPoint { e, eta, z, m, bulk: e.abs() <= 2.0 - margin })
    }

    /// |z + m + 1/m|.
    pub fn residual(&self) -> f64 {
        (self.z + self.m + 1.0 / self.m).norm()
    }

    pub fn w(&self, t: f64) -> C64 {
        characteristic_path(self, t)
    }

    pub fn im_w(&self, t: f64) -> f64 {
        self.eta + (1.0 - t) * self.m.im
    }
}

/// w_t = z + (1 - t) m.
pub fn characteristic_path(p: &SpectralPoint, t: f64) -> C64 {
    p.z + p.m * (1.0 - t)
}

/// w_t = -1/m - t m.
pub fn characteristic_path_alt(p: &SpectralPoint, t: f64) -> C64 {
    -1.0 / p.m - p.m * t
}

/// (1 - t|m|², |m|² Im w_t / Im m); equal for every t.
pub fn gap_equivalence(p: &SpectralPoint, t: f64) -> (f64, f64) {
    let a = p.m.norm_sqr();
    (1.0 - t * a, a * p.im_w(t) / p.m.im)
}
