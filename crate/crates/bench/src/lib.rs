//! Fixtures shared by the benchmarks.

use bandflow::diagrams::{random_context, EvalContext};
use bandflow::torus::{build_variance_profile, sqrt_profile};
use bandflow::{sample_band_matrix, CMat, CirculantOperator, ProfileSpec, Shape, SpectralPoint};

pub fn profile(n: usize, w: usize) -> CirculantOperator {
    build_variance_profile(&ProfileSpec::new(n, w, Shape::Fejer).unwrap()).unwrap()
}

pub fn half(s: &CirculantOperator) -> CirculantOperator {
    sqrt_profile(s).unwrap()
}

pub fn sample(s: &CirculantOperator, seed: u64) -> CMat {
    sample_band_matrix(s, 1.0, seed).unwrap().h
}

pub fn bulk(n: usize, w: usize) -> SpectralPoint {
    SpectralPoint::new(0.0, (w as f64 / n as f64).powi(2)).unwrap()
}

pub fn context(n: usize, w: usize) -> EvalContext {
    let s = profile(n, w);
    random_context(&s, &SpectralPoint::new(0.2, 0.4).unwrap(), 0.5, 0.8, 1.0, 7).unwrap()
}
