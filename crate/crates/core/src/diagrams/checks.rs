//! Numerical checks of the expansion identities and diagram magnitudes.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::ensemble::{gaussian_hermitian, BrownianFlow, SAMPLE_STREAM};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat, C64};
use crate::semicircle::SpectralPoint;
use crate::torus::CirculantOperator;

use super::eval::{evaluate_sum, EvalContext};
use super::library::{first_fluctuation, first_unfolding, loop_expansion, second_unfolding, vertex_expansion, Expansion};
use super::term::{renormalize, Factor, Label, Term};

/// Test functions f used with the expansions; indices are pinned to fixed
/// labels p, q.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FSpec {
    One,
    /// G_pq.
    G(usize, usize),
    /// conj(G)_pq.
    ConjG(usize, usize),
    /// |G_pq|² = G_pq conj(G)_pq.
    AbsSq(usize, usize),
}

impl FSpec {
    pub fn terms(&self) -> (Vec<Term>, BTreeMap<Label, usize>) {
        let mut fixed = BTreeMap::new();
        let factors = match *self {
            FSpec::One => vec![],
            FSpec::G(p, q) => {
                fixed.extend([("p", p), ("q", q)]);
                vec![Factor::g("p", "q")]
            }
            FSpec::ConjG(p, q) => {
                fixed.extend([("p", p), ("q", q)]);
                vec![Factor::gc("p", "q")]
            }
            FSpec::AbsSq(p, q) => {
                fixed.extend([("p", p), ("q", q)]);
                vec![Factor::g("p", "q"), Factor::gc("p", "q")]
            }
        };
        (vec![Term::new(factors)], fixed)
    }
}

/// Context with H = Gaussian of variance var·S, independent of s.
pub fn random_context(s_op: &CirculantOperator, point: &SpectralPoint, s: f64, t: f64, var: f64, seed: u64) -> Result<EvalContext> {
    EvalContext::new(gaussian_hermitian(s_op, var, seed, SAMPLE_STREAM), s_op, point, s, t)
}

pub fn zero_context(s_op: &CirculantOperator, point: &SpectralPoint, s: f64, t: f64) -> Result<EvalContext> {
    let n = s_op.n();
    EvalContext::new(CMat::zeros(n, n), s_op, point, s, t)
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentityResidual {
    pub lhs: C64,
    pub rhs: C64,
    pub groups: Vec<(String, C64)>,
    /// |lhs - rhs|.
    pub residual: f64,
    /// |lhs| + Σ |group|, the size of the cancelling quantities.
    pub scale: f64,
}

pub fn identity_residual(e: &Expansion, ctx: &EvalContext, fixed: &BTreeMap<Label, usize>) -> Result<IdentityResidual> {
    let lhs = evaluate_sum(&e.lhs, ctx, fixed)?;
    let mut rhs = C64::new(0.0, 0.0);
    let mut groups = Vec::new();
    let mut scale = lhs.norm();
    for (name, terms) in &e.groups {
        let v = evaluate_sum(terms, ctx, fixed)?;
        rhs += v;
        scale += v.norm();
        groups.push((name.to_string(), v));
    }
    Ok(IdentityResidual { lhs, rhs, groups, residual: (lhs - rhs).norm(), scale })
}

fn check_index(ctx: &EvalContext, idx: &[usize]) -> Result<()> {
    match idx.iter().find(|&&i| i >= ctx.n()) {
        Some(i) => Err(Error::Domain(format!("index {i} out of range 0..{}", ctx.n()))),
        None => Ok(()),
    }
}

pub fn loop_expansion_check(ctx: &EvalContext, v: usize, f: FSpec) -> Result<IdentityResidual> {
    check_index(ctx, &[v])?;
    let (terms, mut fixed) = f.terms();
    check_index(ctx, &fixed.values().cloned().collect::<Vec<_>>())?;
    fixed.insert("v", v);
    let e = loop_expansion("v", &terms, ["al", "be", "k"])?;
    identity_residual(&e, ctx, &fixed)
}

pub fn vertex_expansion_check(ctx: &EvalContext, x: usize, y: usize, u: usize, f: FSpec) -> Result<IdentityResidual> {
    check_index(ctx, &[x, y, u])?;
    let (terms, mut fixed) = f.terms();
    check_index(ctx, &fixed.values().cloned().collect::<Vec<_>>())?;
    fixed.extend([("x", x), ("y", y), ("u", u)]);
    let e = vertex_expansion("x", "u", "y", &terms, ["ga", "de", "l"])?;
    identity_residual(&e, ctx, &fixed)
}

fn outer(ctx: &EvalContext, a: usize, b: usize) -> Result<BTreeMap<Label, usize>> {
    check_index(ctx, &[a, b])?;
    Ok([("a", a), ("b", b)].into_iter().collect())
}

/// Drift graph minus [𝒢_1 + sm(𝒢_2 + 𝒢_3 + 𝒢_4) + ℱ_0].
pub fn expand1_check(ctx: &EvalContext, a: usize, b: usize) -> Result<IdentityResidual> {
    identity_residual(&first_unfolding(false)?, ctx, &outer(ctx, a, b)?)
}

/// Same, with the G_βα loop edge conjugated as drawn in the pictures.
pub fn expand1_check_picture_colours(ctx: &EvalContext, a: usize, b: usize) -> Result<IdentityResidual> {
    identity_residual(&first_unfolding(true)?, ctx, &outer(ctx, a, b)?)
}

/// 𝒢_i minus [m𝒢_i0 + sm(𝒢_i1 + 𝒢_i2) - sm𝒢_i3 - mℱ_i].
pub fn level2_check(ctx: &EvalContext, i: usize, a: usize, b: usize) -> Result<IdentityResidual> {
    identity_residual(&second_unfolding(i, false)?.expansion(), ctx, &outer(ctx, a, b)?)
}

/// Monte Carlo mean of underline(H_αβ f) at time s, H of variance s·S.
#[derive(Clone, Debug, Serialize)]
pub struct MeanEstimate {
    pub mean: C64,
    /// Standard error of the mean, per component.
    pub se: (f64, f64),
    pub draws: usize,
    /// max(|Re mean|/se_re, |Im mean|/se_im).
    pub z: f64,
}

pub fn renormalize_expectation_check(
    s_op: &CirculantOperator,
    point: &SpectralPoint,
    s: f64,
    alpha: usize,
    beta: usize,
    f: FSpec,
    draws: usize,
    seed: u64,
) -> Result<MeanEstimate> {
    if draws < 2 {
        return Err(Error::Domain("need at least two draws".into()));
    }
    if !(s > 0.0) {
        return Err(Error::Domain("renormalization check needs s > 0".into()));
    }
    let n = s_op.n();
    if alpha >= n || beta >= n {
        return Err(Error::Domain(format!("indices ({alpha}, {beta}) out of range 0..{n}")));
    }
    let (terms, mut fixed) = f.terms();
    fixed.extend([("al", alpha), ("be", beta)]);
    let mut under = Vec::new();
    for t in terms {
        under.extend(renormalize(&t.times([Factor::H { i: "al", j: "be" }]))?);
    }
    let base = zero_context(s_op, point, s, s)?;
    let (mut sr, mut si, mut sr2, mut si2) = (0.0, 0.0, 0.0, 0.0);
    for d in 0..draws {
        let h = gaussian_hermitian(s_op, s, seed, d as u64);
        let g = linalg::shifted_inverse(&h, base.w)?;
        let ctx = EvalContext { h, g, ..base.clone() };
        let v = evaluate_sum(&under, &ctx, &fixed)?;
        sr += v.re;
        si += v.im;
        sr2 += v.re * v.re;
        si2 += v.im * v.im;
    }
    let k = draws as f64;
    let mean = C64::new(sr / k, si / k);
    let se = |s1: f64, s2: f64| ((s2 / k - (s1 / k).powi(2)).max(0.0) * k / (k - 1.0) / k).sqrt();
    let se = (se(sr, sr2), se(si, si2));
    let ratio = |m: f64, e: f64| if e > 0.0 { m.abs() / e } else if m == 0.0 { 0.0 } else { f64::INFINITY };
    let z = ratio(mean.re, se.0).max(ratio(mean.im, se.1));
    Ok(MeanEstimate { mean, se, draws, z })
}

/// Relative error between ∂_{H_βα} G_xy = -G_xβ G_αy and a central
/// difference of the resolvent in the single entry H_βα.
pub fn derivative_fd_check(ctx: &EvalContext, beta: usize, alpha: usize, x: usize, y: usize, eps: f64) -> Result<f64> {
    check_index(ctx, &[beta, alpha, x, y])?;
    let mut plus = ctx.h.clone();
    let mut minus = ctx.h.clone();
    plus[(beta, alpha)] += eps;
    minus[(beta, alpha)] -= eps;
    let gp = linalg::shifted_inverse(&plus, ctx.w)?;
    let gm = linalg::shifted_inverse(&minus, ctx.w)?;
    let fd = (gp[(x, y)] - gm[(x, y)]) / (2.0 * eps);
    let exact = -ctx.g[(x, beta)] * ctx.g[(alpha, y)];
    Ok((fd - exact).norm() / exact.norm().max(f64::MIN_POSITIVE))
}

#[derive(Clone, Debug, Serialize)]
pub struct MagnitudeRow {
    /// "G" for 𝒢_ij, "F" for ℱ_i (i = 0 is the first-level fluctuation).
    pub kind: String,
    pub i: usize,
    pub j: usize,
    /// |∫_0^t family(s) ds|, trapezoid on the flow grid.
    pub integral: f64,
    pub ratio: f64,
}

/// W^{-3/4} |Im w_t|^{-1} · W^{-1} |Im w_t|^{-1/2}.
pub fn magnitude_target(w_band: usize, im_w: f64) -> f64 {
    let w = w_band as f64;
    w.powf(-1.75) * im_w.powf(-1.5)
}

/// Time-integrated second-level families at (a, b) along a flow, up to the
/// grid point closest to t from below. Families are evaluated without their
/// m, sm prefactors.
pub fn diagram_magnitudes(
    flow: &BrownianFlow,
    point: &SpectralPoint,
    t: f64,
    a: usize,
    b: usize,
    w_band: usize,
) -> Result<Vec<MagnitudeRow>> {
    let s_op = flow.profile();
    if a >= s_op.n() || b >= s_op.n() {
        return Err(Error::Domain(format!("indices ({a}, {b}) out of range")));
    }
    let fixed: BTreeMap<Label, usize> = [("a", a), ("b", b)].into_iter().collect();
    let mut families: Vec<(String, usize, usize, Vec<Term>)> = vec![("F".into(), 0, 0, first_fluctuation()?)];
    for i in 1..=4 {
        let su = second_unfolding(i, false)?;
        for (j, (_, terms)) in su.families().iter().enumerate().take(4) {
            families.push(("G".into(), i, j, terms.to_vec()));
        }
        families.push(("F".into(), i, 0, su.f.clone()));
    }
    let mut samples: Vec<(f64, Vec<C64>)> = Vec::new();
    flow.walk(|_, s, h, _| {
        if s > t + 1e-15 {
            return Ok(());
        }
        let ctx = EvalContext::new(h.clone(), s_op, point, s, t)?;
        let vals = families.iter().map(|(_, _, _, terms)| evaluate_sum(terms, &ctx, &fixed)).collect::<Result<Vec<_>>>()?;
        samples.push((s, vals));
        Ok::<(), Error>(())
    })?;
    let target = magnitude_target(w_band, point.im_w(t));
    Ok(families
        .iter()
        .enumerate()
        .map(|(k, (kind, i, j, _))| {
            let mut acc = C64::new(0.0, 0.0);
            for w in samples.windows(2) {
                acc += (w[0].1[k] + w[1].1[k]) * (0.5 * (w[1].0 - w[0].0));
            }
            let integral = acc.norm();
            MagnitudeRow { kind: kind.clone(), i: *i, j: *j, integral, ratio: integral / target }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagrams::eval::brute_force;
    use crate::diagrams::library::drift_graph;
    use crate::torus::{build_variance_profile, ProfileSpec, Shape};

    fn setup(n: usize, w: usize) -> (CirculantOperator, SpectralPoint) {
        let s = build_variance_profile(&ProfileSpec::new(n, w, Shape::Fejer).unwrap()).unwrap();
        (s, SpectralPoint::new(0.2, 0.1).unwrap())
    }

    #[test]
    fn loop_identity_pathwise() {
        let (s, p) = setup(8, 2);
        for seed in 0..5 {
            let ctx = random_context(&s, &p, 0.5, 0.8, 1.0, seed).unwrap();
            for f in [FSpec::One, FSpec::G(1, 3), FSpec::ConjG(2, 2), FSpec::AbsSq(0, 5)] {
                let r = loop_expansion_check(&ctx, 3, f).unwrap();
                assert!(r.residual < 1e-9, "{f:?}: {r:?}");
            }
        }
    }

    #[test]
    fn vertex_identity_pathwise() {
        let (s, p) = setup(10, 3);
        for seed in 0..5 {
            let ctx = random_context(&s, &p, 0.7, 0.9, 1.0, seed).unwrap();
            for f in [FSpec::One, FSpec::ConjG(1, 4), FSpec::AbsSq(2, 7)] {
                let r = vertex_expansion_check(&ctx, 1, 6, 4, f).unwrap();
                assert!(r.residual < 1e-9, "{f:?}: {r:?}");
            }
        }
    }

    #[test]
    fn zero_h_at_time_zero_is_trivial() {
        let (s, p) = setup(8, 2);
        let ctx = zero_context(&s, &p, 0.0, 0.5).unwrap();
        assert!((ctx.g[(0, 0)] - p.m).norm() < 1e-14);
        let r = loop_expansion_check(&ctx, 2, FSpec::One).unwrap();
        assert!(r.lhs.norm() < 1e-14 && r.residual < 1e-14);
        let r = vertex_expansion_check(&ctx, 3, 3, 3, FSpec::One).unwrap();
        assert!(r.residual < 1e-14, "{r:?}");
        assert!((r.lhs - p.m * p.m).norm() < 1e-14);
    }

    #[test]
    fn drift_graph_matches_explicit_sum() {
        let (s, p) = setup(6, 2);
        let ctx = random_context(&s, &p, 0.4, 0.8, 1.0, 11).unwrap();
        let fixed: BTreeMap<Label, usize> = [("a", 1), ("b", 4)].into_iter().collect();
        let fast = evaluate_sum(&[drift_graph()], &ctx, &fixed).unwrap();
        let slow = brute_force(&drift_graph(), &ctx, &fixed).unwrap();
        assert!((fast - slow).norm() < 1e-12);
    }

    #[test]
    fn first_and_second_unfoldings() {
        let (s, p) = setup(8, 2);
        let ctx = random_context(&s, &p, 0.6, 0.9, 1.0, 2).unwrap();
        let r = expand1_check(&ctx, 0, 3).unwrap();
        assert!(r.residual < 1e-8, "{r:?}");
        for i in 1..=4 {
            let r = level2_check(&ctx, i, 0, 3).unwrap();
            assert!(r.residual < 1e-8, "i={i}: {r:?}");
        }
    }

    #[test]
    fn picture_colours_break_the_first_unfolding() {
        let (s, p) = setup(8, 2);
        let ctx = random_context(&s, &p, 0.6, 0.9, 1.0, 2).unwrap();
        let r = expand1_check_picture_colours(&ctx, 0, 3).unwrap();
        assert!(r.residual > 1e-6 * r.scale, "{r:?}");
    }

    #[test]
    fn finite_difference_derivative() {
        let (s, p) = setup(8, 2);
        let ctx = random_context(&s, &p, 0.5, 0.5, 1.0, 4).unwrap();
        assert!(derivative_fd_check(&ctx, 2, 5, 1, 6, 1e-6).unwrap() < 1e-6);
    }
}
