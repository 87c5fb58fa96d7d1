//! Command line driver. `run` returns the process exit code: 0 on success,
//! 1 on a runtime failure or partial sweep, 2 on usage errors.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use bandflow::bounds::{b_row_sum_fit, heat_kernel_fit, heat_kernel_r_grid, profile_check, theta_entry_fit, theta_row_sum_fit, BoundFit};
use bandflow::diagrams::{expand1_check, level2_check, loop_expansion_check, random_context, vertex_expansion_check, FSpec, IdentityResidual};
use bandflow::ensemble::{sample_band_matrix, BrownianFlow};
use bandflow::experiments::{run_sweep, EtaRule, Point, Seeds, SweepConfig, MAX_N};
use bandflow::flow::{conjecture_probe, default_grid, duhamel_decomposition, stopping_margins, stopping_monitor, FlowOptions, Scheme, StoppingConfig, Targets};
use bandflow::resolvent::{eigen_delocalization, resolvent};
use bandflow::torus::{build_variance_profile, sqrt_profile};
use bandflow::{Error, ProfileSpec, Shape, SpectralPoint};

#[derive(Parser, Debug)]
#[command(name = "bandflow", version, arg_required_else_help = true, about = "Gaussian band matrices and resolvent flows on the discrete torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Θ_t entry and row-sum table over (eta, t), as CSV.
    ProfileCheck(ProfileCheckArgs),
    /// Pass/fail table of the expansion identities on random contexts.
    IdentityCheck(IdentityArgs),
    /// Run one flow and print a JSON summary of the Duhamel residuals and stopping times.
    FlowRun(FlowArgs),
    /// Run a parameter sweep from a JSON config.
    Sweep(SweepArgs),
    /// Eigenvector delocalization density per seed, as CSV.
    Deloc(DelocArgs),
    /// Fitted constants of the deterministic profile bounds, as CSV.
    AppendixBounds(BoundsArgs),
    /// Operator-norm probe of G S G* at one vertex, as JSON.
    ConjectureProbe(ProbeArgs),
}

#[derive(Args, Debug)]
struct Band {
    #[arg(long = "n")]
    n: usize,
    /// Band width; defaults to ⌈N^gamma⌉.
    #[arg(long = "w")]
    w: Option<usize>,
    #[arg(long, default_value_t = 0.8)]
    gamma: f64,
    #[arg(long, value_enum, default_value_t = ShapeArg::Fejer)]
    shape: ShapeArg,
    #[arg(long)]
    force: bool,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum ShapeArg {
    Fejer,
    Uniform,
}

impl Band {
    fn width(&self) -> usize {
        self.w.unwrap_or_else(|| Point { n: self.n, gamma: self.gamma }.band_width())
    }

    fn spec(&self) -> bandflow::Result<ProfileSpec> {
        if self.n > MAX_N && !self.force {
            return Err(Error::TooLarge { n: self.n, limit: MAX_N });
        }
        let shape = match self.shape {
            ShapeArg::Fejer => Shape::Fejer,
            ShapeArg::Uniform => Shape::Uniform,
        };
        ProfileSpec::new(self.n, self.width(), shape)
    }

    /// W²/N² unless given.
    fn eta(&self, eta: Option<f64>) -> f64 {
        eta.unwrap_or_else(|| EtaRule::Thouless.eta(self.n, self.width()))
    }
}

#[derive(Args, Debug)]
struct ProfileCheckArgs {
    #[command(flatten)]
    band: Band,
    #[arg(long, default_value_t = 0.0)]
    e: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.1])]
    eta: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.5, 0.9, 1.0])]
    t: Vec<f64>,
}

#[derive(Args, Debug)]
struct IdentityArgs {
    #[arg(long = "n", default_value_t = 8)]
    n: usize,
    /// Band width; defaults to max(1, (N-1)/3).
    #[arg(long = "w")]
    w: Option<usize>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

#[derive(Args, Debug)]
struct FlowArgs {
    #[command(flatten)]
    band: Band,
    #[arg(long, default_value_t = 0.0)]
    e: f64,
    /// Defaults to W²/N².
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, default_value_t = 32)]
    grid: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Martingale quadrature.
    #[arg(long, value_enum, default_value_t = SchemeArg::Milstein)]
    scheme: SchemeArg,
    /// Report the residual at every grid time, not just the last.
    #[arg(long)]
    all_times: bool,
    /// Entry (a,b) whose martingale quadratic variations are reported.
    #[arg(long, value_delimiter = ',')]
    qv_entry: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.05)]
    delta_stop: f64,
    #[arg(long = "D", default_value_t = 10.0)]
    d: f64,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum SchemeArg {
    Euler,
    Milstein,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the seed list with 0..seeds.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    record_runtime: bool,
    /// Allow N above the desk-scale limit.
    #[arg(long)]
    force: bool,
    /// Stop after this many new rows (the sweep resumes on the next call).
    #[arg(long)]
    stop_after: Option<usize>,
}

#[derive(Args, Debug)]
struct DelocArgs {
    #[command(flatten)]
    band: Band,
    #[arg(long, default_value_t = 0.2)]
    kappa: f64,
    /// Localization length in sites; defaults to N/8.
    #[arg(long)]
    ell: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 1)]
    seeds: u64,
}

#[derive(Args, Debug)]
struct BoundsArgs {
    #[command(flatten)]
    band: Band,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.5, 1.5])]
    e: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.05])]
    eta: Vec<f64>,
    #[arg(long, default_value_t = 16)]
    r_points: usize,
}

#[derive(Args, Debug)]
struct ProbeArgs {
    #[command(flatten)]
    band: Band,
    #[arg(long, default_value_t = 0.0)]
    e: f64,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    t: f64,
    /// Vertex u.
    #[arg(long, default_value_t = 0)]
    u: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Domain(_) | Error::Overlap { .. } | Error::Config(_) | Error::TooLarge { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = std::result::Result<i32, Failure>;

/// Parse `argv` (program name first) and run the subcommand, writing
/// results to `out`.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::ProfileCheck(a) => cmd_profile_check(&a, out),
        Command::IdentityCheck(a) => cmd_identity_check(&a, out),
        Command::FlowRun(a) => cmd_flow_run(&a, out),
        Command::Sweep(a) => cmd_sweep(&a, out),
        Command::Deloc(a) => cmd_deloc(&a, out),
        Command::AppendixBounds(a) => cmd_bounds(&a, out),
        Command::ConjectureProbe(a) => cmd_probe(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

/// `run_with` writing to stdout.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    run_with(argv, &mut lock)
}

fn csv_out(out: &mut dyn Write) -> csv::Writer<&mut dyn Write> {
    csv::Writer::from_writer(out)
}

fn cmd_profile_check(a: &ProfileCheckArgs, out: &mut dyn Write) -> Outcome {
    let s = build_variance_profile(&a.band.spec()?)?;
    let rows = profile_check(&s, a.band.width(), a.e, &a.eta, &a.t)?;
    let mut w = csv_out(out);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(0)
}

#[derive(Serialize)]
struct IdentityRow {
    identity: String,
    checks: usize,
    max_residual: f64,
    pass: bool,
}

fn cmd_identity_check(a: &IdentityArgs, out: &mut dyn Write) -> Outcome {
    let n = a.n;
    let w = a.w.unwrap_or(((n.saturating_sub(1)) / 3).max(1));
    if n < 3 || n > 16 {
        return Err(Failure::Usage(format!("identity-check needs 3 <= N <= 16, got {n}")));
    }
    let s_op = build_variance_profile(&ProfileSpec::new(n, w, Shape::Fejer)?)?;
    let p = SpectralPoint::new(0.2, 0.4)?;
    let names = ["loop", "vertex", "first_unfolding", "second_unfolding_1", "second_unfolding_2", "second_unfolding_3", "second_unfolding_4"];
    let mut worst = [0.0f64; 7];
    let mut counts = [0usize; 7];
    let mut note = |i: usize, r: IdentityResidual| {
        worst[i] = worst[i].max(r.residual);
        counts[i] += 1;
    };
    for trial in 0..a.trials {
        let s = [0.0, 0.3, 1.0][trial % 3];
        let ctx = random_context(&s_op, &p, s, 0.8, 1.0, a.seed.wrapping_add(trial as u64))?;
        let (x, y, u) = (trial % n, (3 * trial + 1) % n, (5 * trial + 2) % n);
        note(0, loop_expansion_check(&ctx, x, FSpec::AbsSq(y, u))?);
        note(1, vertex_expansion_check(&ctx, x, y, u, FSpec::G(u, x))?);
        note(2, expand1_check(&ctx, x, y)?);
        for i in 1..=4 {
            note(2 + i, level2_check(&ctx, i, x, y)?);
        }
    }
    let mut wtr = csv_out(out);
    let mut all = true;
    for i in 0..names.len() {
        let pass = worst[i] < a.tol;
        all &= pass;
        wtr.serialize(IdentityRow { identity: names[i].into(), checks: counts[i], max_residual: worst[i], pass })?;
    }
    wtr.flush()?;
    Ok(if all { 0 } else { 1 })
}

#[derive(Serialize)]
struct FlowSummary {
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "W")]
    w: usize,
    #[serde(rename = "E")]
    e: f64,
    eta: f64,
    grid_size: usize,
    seed: u64,
    times: Vec<f64>,
    duhamel_residuals: Vec<f64>,
    tau1: Option<f64>,
    tau2: Option<f64>,
    tau1_margin: f64,
    tau2_margin: f64,
    max_ward_residual: f64,
    qv_ratios: serde_json::Map<String, serde_json::Value>,
}

fn cmd_flow_run(a: &FlowArgs, out: &mut dyn Write) -> Outcome {
    if a.grid == 0 {
        return Err(Failure::Usage("grid must be at least 1".into()));
    }
    let s = build_variance_profile(&a.band.spec()?)?;
    let half = sqrt_profile(&s)?;
    let w = a.band.width();
    let eta = a.band.eta(a.eta);
    let p = SpectralPoint::new(a.e, eta)?;
    let flow = BrownianFlow::new(&s, &default_grid(a.grid), a.seed)?;
    let stopping = StoppingConfig { delta_stop: a.delta_stop, d: a.d };
    let mut opts = FlowOptions::new(w);
    opts.stopping = stopping;
    opts.scheme = match a.scheme {
        SchemeArg::Euler => Scheme::Euler,
        SchemeArg::Milstein => Scheme::Milstein,
    };
    if a.all_times {
        opts.targets = Targets::All;
    }
    if let Some(q) = &a.qv_entry {
        if q.len() != 2 || q.iter().any(|&i| i >= a.band.n) {
            return Err(Failure::Usage(format!("qv entry {q:?} out of range")));
        }
        opts.qv_entry = Some((q[0], q[1]));
    }
    let trace = duhamel_decomposition(&flow, &p, &half, &opts)?;
    let (tau1, tau2) = stopping_monitor(&trace.series, &stopping);
    let (m1, m2) = stopping_margins(&trace.series, &stopping);
    let mut qv_ratios = serde_json::Map::new();
    if let Some(q) = &trace.qv {
        for (i, r) in q.ratios.iter().enumerate() {
            qv_ratios.insert(format!("M1{}", i + 1), serde_json::json!(r));
        }
    }
    let summary = FlowSummary {
        n: a.band.n,
        w,
        e: a.e,
        eta,
        grid_size: a.grid,
        seed: a.seed,
        times: trace.residuals.iter().map(|r| r.0).collect(),
        duhamel_residuals: trace.residuals.iter().map(|r| r.1).collect(),
        tau1,
        tau2,
        tau1_margin: m1,
        tau2_margin: m2,
        max_ward_residual: trace.series.max_ward_residual,
        qv_ratios,
    };
    serde_json::to_writer_pretty(&mut *out, &summary)?;
    writeln!(out)?;
    Ok(0)
}

fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> Outcome {
    let mut cfg = SweepConfig::load(&a.config)?;
    if let Some(k) = a.seeds {
        cfg.seeds = Seeds::Count(k);
    }
    if let Some(g) = a.grid {
        cfg.grid = g;
    }
    if let Some(d) = &a.out_dir {
        cfg.out_dir = d.clone();
    }
    if a.record_runtime {
        cfg.record_runtime = true;
    }
    let outcome = run_sweep(&cfg, a.force, a.stop_after)?;
    let meta = &outcome.metadata;
    writeln!(
        out,
        "{} rows ({} resumed) -> {}\nmetadata -> {}",
        meta.rows,
        meta.resumed_rows,
        outcome.csv_path.display(),
        outcome.metadata_path.display()
    )?;
    for f in &meta.failures {
        eprintln!("failed job N={} gamma={} E={} seed={}: {}", f.job.point.n, f.job.point.gamma, f.job.e, f.job.seed, f.error);
    }
    let expected = bandflow::experiments::jobs(&cfg).len();
    Ok(if outcome.complete() && outcome.rows.len() == expected { 0 } else { 1 })
}

#[derive(Serialize)]
struct DelocRow {
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "W")]
    w: usize,
    eta: f64,
    kappa: f64,
    ell: usize,
    eps: f64,
    seed: u64,
    density: f64,
}

fn cmd_deloc(a: &DelocArgs, out: &mut dyn Write) -> Outcome {
    let s = build_variance_profile(&a.band.spec()?)?;
    let n = a.band.n;
    let ell = a.ell.unwrap_or((n / 8).max(1));
    let mut wtr = csv_out(out);
    for seed in 0..a.seeds {
        let h = sample_band_matrix(&s, 1.0, seed)?.h;
        let rep = eigen_delocalization(&h, a.kappa, ell, a.eps, true)?;
        wtr.serialize(DelocRow { n, w: a.band.width(), eta: a.band.eta(None), kappa: a.kappa, ell, eps: a.eps, seed, density: rep.density })?;
    }
    wtr.flush()?;
    Ok(0)
}

#[derive(Serialize)]
struct BoundRow<'a> {
    bound: &'a str,
    x: f64,
    value: f64,
    reference: f64,
    ratio: f64,
}

fn cmd_bounds(a: &BoundsArgs, out: &mut dyn Write) -> Outcome {
    let s = build_variance_profile(&a.band.spec()?)?;
    let w = a.band.width();
    let mut points = Vec::new();
    for &e in &a.e {
        for &eta in &a.eta {
            points.push(SpectralPoint::new(e, eta)?);
        }
    }
    let first = points.first().ok_or_else(|| Failure::Usage("need at least one (E, eta) point".into()))?;
    let grid = heat_kernel_r_grid(first.m.norm_sqr(), 1.0, 4.0, 1e5, a.r_points.max(2))?;
    let times = [0.0, 0.25, 0.5, 0.75, 0.9, 1.0];
    let fits: [(&str, BoundFit); 4] = [
        ("heat_kernel", heat_kernel_fit(&s, w, first.m, 1.0, &grid)?),
        ("theta_row_sum", theta_row_sum_fit(&s, &points, &times)?),
        ("theta_entry", theta_entry_fit(&s, w, &points, &times)?),
        ("b_row_sum", b_row_sum_fit(&s, &points, &times)?),
    ];
    let mut wtr = csv_out(out);
    for (name, fit) in &fits {
        for r in &fit.rows {
            wtr.serialize(BoundRow { bound: name, x: r.x, value: r.value, reference: r.bound, ratio: r.ratio })?;
        }
    }
    wtr.flush()?;
    drop(wtr);
    for (name, fit) in &fits {
        eprintln!("{name}: C = {:.4}", fit.constant);
    }
    Ok(0)
}

fn cmd_probe(a: &ProbeArgs, out: &mut dyn Write) -> Outcome {
    let s = build_variance_profile(&a.band.spec()?)?;
    let half = sqrt_profile(&s)?;
    let p = SpectralPoint::new(a.e, a.band.eta(a.eta))?;
    if !(0.0..=1.0).contains(&a.t) {
        return Err(Failure::Usage(format!("t = {} must lie in [0, 1]", a.t)));
    }
    let h = sample_band_matrix(&s, a.t, a.seed)?.h;
    let w = p.w(a.t);
    let g = resolvent(&h, w)?;
    let rep = conjecture_probe(&g, w, &s, &half, a.u, a.band.width())?;
    serde_json::to_writer_pretty(&mut *out, &rep)?;
    writeln!(out)?;
    Ok(0)
}
