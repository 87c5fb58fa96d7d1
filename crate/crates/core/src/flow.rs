//! The error process E_t = T_t - Θ_t along the Brownian flow: drift and
//! martingale terms, the discretized Duhamel decomposition, stopping-time
//! functionals, quadratic variations and the operator-norm probe.

use serde::{Deserialize, Serialize};

use crate::ensemble::{graded_grid, BrownianFlow};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat, RMat, C64};
use crate::resolvent::{local_law_ratios, resolvent, ResolventBundle};
use crate::semicircle::SpectralPoint;
use crate::torus::{diffusion_profile, propagator, CirculantOperator};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingConfig {
    pub delta_stop: f64,
    #[serde(rename = "D")]
    pub d: f64,
}

impl Default for StoppingConfig {
    fn default() -> Self {
        StoppingConfig { delta_stop: 0.05, d: 10.0 }
    }
}

impl StoppingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_stop > 0.0 && self.delta_stop <= 0.1) {
            return Err(Error::Config(format!("delta_stop = {} must lie in (0, 0.1]", self.delta_stop)));
        }
        if !(self.d >= 5.0) {
            return Err(Error::Config(format!("D = {} must be at least 5", self.d)));
        }
        Ok(())
    }

    /// W^δ · W^{-3/4} |Im w|^{-1} · W^{-1} |Im w|^{-1/2}.
    pub fn tau1_threshold(&self, w_band: usize, im_w: f64) -> f64 {
        let w = w_band as f64;
        w.powf(self.delta_stop) * w.powf(-0.75) / im_w * w.powf(-1.0) / im_w.sqrt()
    }

    /// W^{δ/10}.
    pub fn tau2_threshold(&self, w_band: usize) -> f64 {
        (w_band as f64).powf(self.delta_stop / 10.0)
    }
}

/// E_t = T_t - Θ_t.
pub fn theta_error(t: &RMat, theta: &CirculantOperator) -> RMat {
    RMat::from_fn(t.nrows(), t.ncols(), |i, j| t[(i, j)] - theta.entry(i, j))
}

/// Diagonal of 𝒮[G]: Σ_k S_ik G_kk.
pub fn s_average(g: &CMat, s: &CirculantOperator) -> Vec<C64> {
    let n = g.nrows();
    (0..n).map(|i| (0..n).map(|k| g[(k, k)] * s.entry(i, k)).sum()).collect()
}

/// G {𝒮[G] - m} G.
pub fn drift_core(g: &CMat, m: C64, s: &CirculantOperator) -> CMat {
    let d = s_average(g, s);
    let n = g.nrows();
    let scaled = CMat::from_fn(n, n, |i, j| (d[i] - m) * g[(i, j)]);
    linalg::matmul(g, &scaled)
}

/// conj(A) ⊙ X + conj(X) ⊙ A = 2 Re(conj(A) ⊙ X).
fn hermitian_pair(a: &CMat, x: &CMat) -> RMat {
    RMat::from_fn(a.nrows(), a.ncols(), |i, j| 2.0 * (a[(i, j)].conj() * x[(i, j)]).re)
}

/// Ω = conj(G) ⊙ (G{𝒮[G]-m}G) + conj(G{𝒮[G]-m}G) ⊙ G.
pub fn omega_term(g: &CMat, m: C64, s: &CirculantOperator) -> RMat {
    hermitian_pair(g, &drift_core(g, m, s))
}

/// dM = conj(G) ⊙ (G dH G) + conj(G dH G) ⊙ G.
pub fn martingale_increment(g: &CMat, dh: &CMat) -> RMat {
    let gdhg = linalg::matmul(&linalg::matmul(g, dh), g);
    hermitian_pair(g, &gdhg)
}

/// Martingale increment over one step with the second-order (Milstein)
/// correction. With K = G ΔH G, the stochastic double integral is symmetric
/// in its two slots, so no Lévy area is needed:
/// dM ≈ pair(G, K - KΔHG + Δt G𝒮[G]G) - |K|² + Δt |G|² S |G|².
pub fn martingale_increment_milstein(g: &CMat, dh: &CMat, s: &CirculantOperator, dt: f64) -> RMat {
    let n = g.nrows();
    let k = linalg::matmul(&linalg::matmul(g, dh), g);
    let kdhg = linalg::matmul(&linalg::matmul(&k, dh), g);
    let d = s_average(g, s);
    let scaled = CMat::from_fn(n, n, |i, j| d[i] * g[(i, j)]);
    let gdg = linalg::matmul(g, &scaled);
    let x = CMat::from_fn(n, n, |i, j| k[(i, j)] - kdhg[(i, j)] + gdg[(i, j)] * dt);
    let f = RMat::from_fn(n, n, |i, j| g[(i, j)].norm_sqr());
    let fsf = linalg::rmatmul(&f, &s.apply_left(&f));
    let mut out = hermitian_pair(g, &x);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] += dt * fsf[(i, j)] - k[(i, j)].norm_sqr();
        }
    }
    out
}

/// Central difference of t ↦ (H - w_t)^{-1} against -m G², relative max error.
pub fn frozen_drift_check(h: &CMat, p: &SpectralPoint, t: f64, dt: f64) -> Result<f64> {
    let gp = resolvent(h, p.w(t + dt))?;
    let gm = resolvent(h, p.w(t - dt))?;
    let g = resolvent(h, p.w(t))?;
    let g2 = linalg::matmul(&g, &g);
    let n = g.nrows();
    let mut err = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let fd = (gp[(i, j)] - gm[(i, j)]) / (2.0 * dt);
            let exact = -p.m * g2[(i, j)];
            err = err.max((fd - exact).norm());
            scale = scale.max(exact.norm());
        }
    }
    Ok(err / scale)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItoReport {
    pub steps: usize,
    pub mean_dt: f64,
    /// Mean over steps of max |ΔG - (-G ΔH G + G{𝒮[G]-m}G Δt)|.
    pub mean_residual: f64,
    /// Sample mean and standard error of Re (G ΔH G)_{00} over steps.
    pub martingale_mean: f64,
    pub martingale_se: f64,
}

/// One-step Euler–Maruyama consistency of the G SDE along a flow.
pub fn ito_drift_residual(flow: &BrownianFlow, p: &SpectralPoint) -> Result<ItoReport> {
    let s = flow.profile().clone();
    let times = flow.times();
    let mut prev: Option<(CMat, CMat, f64)> = None;
    let mut residuals = Vec::new();
    let mut mart = Vec::new();
    flow.walk(|_k, t, h, dh| -> Result<()> {
        let g = resolvent(h, p.w(t))?;
        if let Some((g0, dh0, dt)) = prev.take() {
            let lin = linalg::matmul(&linalg::matmul(&g0, &dh0), &g0);
            let drift = drift_core(&g0, p.m, &s);
            let n = g.nrows();
            let mut worst = 0.0f64;
            for i in 0..n {
                for j in 0..n {
                    let pred = -lin[(i, j)] + drift[(i, j)] * dt;
                    worst = worst.max((g[(i, j)] - g0[(i, j)] - pred).norm());
                }
            }
            residuals.push(worst);
            mart.push(lin[(0, 0)].re);
        }
        if let Some(dh) = dh {
            let k = residuals.len();
            prev = Some((g, dh.clone(), times[k + 1] - times[k]));
        }
        Ok(())
    })?;
    let steps = residuals.len();
    let mean_residual = residuals.iter().sum::<f64>() / steps as f64;
    let mm = mart.iter().sum::<f64>() / steps as f64;
    let var = mart.iter().map(|v| (v - mm).powi(2)).sum::<f64>() / (steps.max(2) - 1) as f64;
    Ok(ItoReport {
        steps,
        mean_dt: times.last().unwrap() / steps as f64,
        mean_residual,
        martingale_mean: mm,
        martingale_se: (var / steps as f64).sqrt(),
    })
}

/// Which grid times get a full Duhamel residual.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Targets {
    Final,
    All,
}

/// Quadrature of the stochastic integral in E^M. Both are Itô-consistent;
/// Euler has strong order 1/2, Milstein order 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    #[default]
    Milstein,
}

#[derive(Clone, Debug)]
pub struct FlowOptions {
    pub w_band: usize,
    pub scheme: Scheme,
    pub stopping: StoppingConfig,
    pub targets: Targets,
    /// Entry (a, b) whose martingale quadratic variations are tallied.
    pub qv_entry: Option<(usize, usize)>,
}

impl FlowOptions {
    pub fn new(w_band: usize) -> Self {
        FlowOptions { w_band, scheme: Scheme::default(), stopping: StoppingConfig::default(), targets: Targets::Final, qv_entry: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QvReport {
    /// [E^{M,11}], ..., [E^{M,14}] at entry (a, b) and the final time.
    pub qv: [f64; 4],
    /// W^{-3/2}|Im w_t|^{-2} · W^{-2}|Im w_t|^{-1}.
    pub target: f64,
    pub ratios: [f64; 4],
}

/// Per-node inputs of the stopping times.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StopSeries {
    pub times: Vec<f64>,
    pub im_w: Vec<f64>,
    /// max_ab |E_t|.
    pub e_max: Vec<f64>,
    /// τ_stop,2 functional per time.
    pub stop_ratio: Vec<f64>,
    pub w_band: usize,
    pub max_resolvent_residual: f64,
    pub max_ward_residual: f64,
}

impl StopSeries {
    fn new(w_band: usize) -> Self {
        StopSeries { w_band, ..Default::default() }
    }

    /// Record node (t, H) and return the resolvent bundle and E_t.
    fn push(
        &mut self,
        h: &CMat,
        t: f64,
        p: &SpectralPoint,
        s_half: &CirculantOperator,
        theta: &CirculantOperator,
        d_exp: f64,
    ) -> Result<(ResolventBundle, RMat)> {
        let w = p.w(t);
        let bundle = ResolventBundle::compute(h, w, s_half)?;
        self.max_resolvent_residual = self.max_resolvent_residual.max(linalg::resolvent_residual(h, w, &bundle.g));
        self.max_ward_residual = self.max_ward_residual.max(bundle.ward_residual());
        let e = theta_error(&bundle.t, theta);
        self.times.push(t);
        self.im_w.push(w.im);
        self.e_max.push(linalg::rmax_abs(&e));
        self.stop_ratio.push(local_law_ratios(&bundle, p.m, s_half, self.w_band, d_exp, p.eta).stop_ratio);
        Ok((bundle, e))
    }
}

/// Stopping series along a flow, without the Duhamel accumulators.
pub fn monitor_flow(flow: &BrownianFlow, p: &SpectralPoint, s_half: &CirculantOperator, w_band: usize, cfg: &StoppingConfig) -> Result<StopSeries> {
    cfg.validate()?;
    let s = flow.profile();
    let mut series = StopSeries::new(w_band);
    flow.walk(|_, t, h, _| -> Result<()> {
        let theta = diffusion_profile(s, p.m, t)?;
        series.push(h, t, p, s_half, &theta, cfg.d)?;
        Ok(())
    })?;
    Ok(series)
}

#[derive(Clone, Debug)]
pub struct FlowTrace {
    pub series: StopSeries,
    /// (t, ||E_t - (E^M + E^D + E^S)||_max) at the target times.
    pub residuals: Vec<(f64, f64)>,
    /// Accumulators at the final time.
    pub e_final: RMat,
    pub e_m: RMat,
    pub e_d: RMat,
    pub e_s: RMat,
    pub qv: Option<QvReport>,
}

struct Accumulator {
    node: usize,
    e_m: RMat,
    e_d: RMat,
    e_s: RMat,
}

/// Run the flow on its grid and assemble the discretized Duhamel pieces.
///
/// Stochastic integrals are anchored at the left point (with the Milstein
/// correction by default), the drift and quadratic integrals use the
/// trapezoid rule on the same nodes.
pub fn duhamel_decomposition(
    flow: &BrownianFlow,
    p: &SpectralPoint,
    s_half: &CirculantOperator,
    opts: &FlowOptions,
) -> Result<FlowTrace> {
    opts.stopping.validate()?;
    let s = flow.profile().clone();
    let n = s.n();
    let times = flow.times();
    let k_last = times.len() - 1;
    let target_nodes: Vec<usize> = match opts.targets {
        Targets::Final => vec![k_last],
        Targets::All => (0..=k_last).collect(),
    };
    let thetas: Vec<CirculantOperator> =
        times.iter().map(|&t| diffusion_profile(&s, p.m, t)).collect::<Result<_>>()?;
    let mut accs: Vec<Accumulator> = target_nodes
        .iter()
        .map(|&j| Accumulator { node: j, e_m: RMat::zeros(n, n), e_d: RMat::zeros(n, n), e_s: RMat::zeros(n, n) })
        .collect();

    let t_end = times[k_last];
    let theta_end = &thetas[k_last];
    let ts = theta_end.compose(s_half);
    let im_w_end = p.im_w(t_end);

    let mut series = StopSeries::new(opts.w_band);
    let mut e_nodes: Vec<Option<RMat>> = vec![None; times.len()];
    let mut qv = [0.0f64; 4];
    let mut e_final = RMat::zeros(n, n);

    flow.walk(|k, t, h, dh| -> Result<()> {
        let (bundle, e) = series.push(h, t, p, s_half, &thetas[k], opts.stopping.d)?;

        let drift = omega_term(&bundle.g, p.m, &s);
        let sq = linalg::rmatmul(&e, &e);
        let dm = dh.map(|dh| {
            let gdhg = linalg::matmul(&linalg::matmul(&bundle.g, dh), &bundle.g);
            let inc = match opts.scheme {
                Scheme::Euler => hermitian_pair(&bundle.g, &gdhg),
                Scheme::Milstein => martingale_increment_milstein(&bundle.g, dh, &s, times[k + 1] - t),
            };
            (inc, gdhg)
        });

        for acc in accs.iter_mut() {
            let j = acc.node;
            if k > j {
                continue;
            }
            let tj = times[j];
            let v = propagator(&thetas[j], tj, t).compose(s_half);
            let u = propagator(&thetas[j], tj, t);
            // Trapezoid weight of node k on [t_0, t_j].
            let lo = if k == 0 { t } else { 0.5 * (t + times[k - 1]) };
            let hi = if k == j { t } else { 0.5 * (t + times[k + 1]) };
            let wgt = hi - lo;
            if wgt > 0.0 {
                linalg::raxpy(&mut acc.e_d, wgt, &v.sandwich(&drift));
                linalg::raxpy(&mut acc.e_s, wgt, &u.sandwich(&sq));
            }
            if k < j {
                if let Some((dm, _)) = &dm {
                    linalg::raxpy(&mut acc.e_m, -1.0, &v.sandwich(dm));
                }
            }
        }

        if let (Some((a, b)), Some((_, gdhg))) = (opts.qv_entry, &dm) {
            // X = conj(G) ⊙ (G dH G); increments of E^{M,1j} at (a, b).
            let x = CMat::from_fn(n, n, |i, j| bundle.g[(i, j)].conj() * gdhg[(i, j)]);
            let lag = t_end - t;
            let ra: Vec<f64> = (0..n).map(|i| ts.entry(a, i)).collect();
            let cb: Vec<f64> = (0..n).map(|i| ts.entry(i, b)).collect();
            let ha: Vec<f64> = (0..n).map(|i| s_half.entry(a, i)).collect();
            let hb: Vec<f64> = (0..n).map(|i| s_half.entry(i, b)).collect();
            let bil = |l: &[f64], r: &[f64]| -> C64 {
                let mut acc = C64::new(0.0, 0.0);
                for i in 0..n {
                    if l[i] == 0.0 {
                        continue;
                    }
                    let mut row = C64::new(0.0, 0.0);
                    for j in 0..n {
                        row += x[(i, j)] * r[j];
                    }
                    acc += row * l[i];
                }
                acc
            };
            let incs = [lag * lag * bil(&ra, &cb), lag * bil(&ra, &hb), lag * bil(&ha, &cb), bil(&ha, &hb)];
            for (q, inc) in qv.iter_mut().zip(incs) {
                *q += inc.norm_sqr();
            }
        }

        if target_nodes.contains(&k) {
            e_nodes[k] = Some(e.clone());
        }
        if k == k_last {
            e_final = e;
        }
        Ok(())
    })?;

    let mut residuals = Vec::with_capacity(accs.len());
    for acc in &accs {
        let e = e_nodes[acc.node].as_ref().expect("target node visited");
        let mut r = e.clone();
        linalg::raxpy(&mut r, -1.0, &acc.e_m);
        linalg::raxpy(&mut r, -1.0, &acc.e_d);
        linalg::raxpy(&mut r, -1.0, &acc.e_s);
        residuals.push((times[acc.node], linalg::rmax_abs(&r)));
    }
    let last = accs.pop().expect("final target present");

    let qv = opts.qv_entry.map(|_| {
        let w = opts.w_band as f64;
        let target = w.powf(-1.5) * im_w_end.powi(-2) * w.powf(-2.0) / im_w_end;
        QvReport { qv, target, ratios: qv.map(|q| q / target) }
    });

    Ok(FlowTrace {
        series,
        residuals,
        e_final,
        e_m: last.e_m,
        e_d: last.e_d,
        e_s: last.e_s,
        qv,
    })
}

/// First grid times at which τ_stop,1 and τ_stop,2 fire, if any.
pub fn stopping_monitor(trace: &StopSeries, cfg: &StoppingConfig) -> (Option<f64>, Option<f64>) {
    let tau1 = trace
        .times
        .iter()
        .zip(trace.e_max.iter().zip(&trace.im_w))
        .find(|(_, (e, iw))| **e >= cfg.tau1_threshold(trace.w_band, **iw))
        .map(|(t, _)| *t);
    let thr2 = cfg.tau2_threshold(trace.w_band);
    let tau2 = trace.times.iter().zip(&trace.stop_ratio).find(|(_, r)| **r >= thr2).map(|(t, _)| *t);
    (tau1, tau2)
}

/// Largest ratio of each stopping functional to its threshold over the trace.
pub fn stopping_margins(trace: &StopSeries, cfg: &StoppingConfig) -> (f64, f64) {
    let m1 = trace
        .e_max
        .iter()
        .zip(&trace.im_w)
        .map(|(e, iw)| e / cfg.tau1_threshold(trace.w_band, *iw))
        .fold(0.0f64, f64::max);
    let thr2 = cfg.tau2_threshold(trace.w_band);
    let m2 = trace.stop_ratio.iter().map(|r| r / thr2).fold(0.0f64, f64::max);
    (m1, m2)
}

/// Quadratic variations of E^{M,11..14} at (a, b) along a flow.
pub fn martingale_qv(
    flow: &BrownianFlow,
    p: &SpectralPoint,
    s_half: &CirculantOperator,
    w_band: usize,
    a: usize,
    b: usize,
) -> Result<QvReport> {
    let mut opts = FlowOptions::new(w_band);
    opts.qv_entry = Some((a, b));
    Ok(duhamel_decomposition(flow, p, s_half, &opts)?.qv.expect("qv requested"))
}

/// Row sums of Id + (t-s)Θ_t against 1 + |Im w_t|^{-1}|Im w_s|: returns the
/// largest (rowsum - 1) / (Im w_s / Im w_t) over the given s values.
pub fn propagator_row_sum_ratio(s_op: &CirculantOperator, p: &SpectralPoint, t: f64, s_values: &[f64]) -> Result<f64> {
    let theta = diffusion_profile(s_op, p.m, t)?;
    let mut worst = 0.0f64;
    for &s in s_values {
        let u = propagator(&theta, t, s);
        let excess = u.row_sum() - 1.0;
        worst = worst.max(excess / (p.im_w(s) / p.im_w(t)));
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// ||G S^u G*||_op.
    pub gsg: f64,
    /// |Im w|^{-1} ||√S^u Im G √S^u||_op, equal to `gsg` by Ward.
    pub ward_form: f64,
    /// |Im w|^{-1} ||√S^{1/2,u} Im G √S^{1/2,u}||_op.
    pub half_form: f64,
    /// (gsg + half_form) / (W^{-1/2} |Im w|^{-5/4}).
    pub ratio_proved: f64,
    /// (gsg + half_form) / (W^{-1} |Im w|^{-3/2}).
    pub ratio_conjectured: f64,
}

pub fn conjecture_probe(
    g: &CMat,
    w: C64,
    s: &CirculantOperator,
    s_half: &CirculantOperator,
    u: usize,
    w_band: usize,
) -> Result<ProbeReport> {
    let n = g.nrows();
    if u >= n {
        return Err(Error::Domain(format!("vertex {u} out of range")));
    }
    let d: Vec<f64> = (0..n).map(|x| s.entry(u, x)).collect();
    let dh: Vec<f64> = (0..n).map(|x| s_half.entry(u, x)).collect();
    let gs = CMat::from_fn(n, n, |i, j| g[(i, j)] * d[j]);
    let gsg = linalg::hermitian_op_norm(&linalg::matmul(&gs, &linalg::adjoint(g)))?;
    let im_g = CMat::from_fn(n, n, |i, j| (g[(i, j)] - g[(j, i)].conj()) / C64::new(0.0, 2.0));
    let sandwich = |v: &[f64]| {
        let r: Vec<f64> = v.iter().map(|x| x.max(0.0).sqrt()).collect();
        CMat::from_fn(n, n, |i, j| im_g[(i, j)] * r[i] * r[j])
    };
    let ward_form = linalg::hermitian_op_norm(&sandwich(&d))? / w.im;
    let half_form = linalg::hermitian_op_norm(&sandwich(&dh))? / w.im;
    let wb = w_band as f64;
    let total = gsg + half_form;
    Ok(ProbeReport {
        gsg,
        ward_form,
        half_form,
        ratio_proved: total / (wb.powf(-0.5) * w.im.powf(-1.25)),
        ratio_conjectured: total / (wb.powf(-1.0) * w.im.powf(-1.5)),
    })
}

/// Default flow grid: K steps graded towards t = 1 with exponent 2.
pub fn default_grid(k: usize) -> Vec<f64> {
    graded_grid(k, 2.0)
}
