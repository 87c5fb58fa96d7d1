//! Sweep jobs, the result table and its on-disk form.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{sample_band_matrix, BrownianFlow};
use crate::error::{Error, Result};
use crate::flow::{default_grid, monitor_flow, stopping_monitor};
use crate::resolvent::{eigen_delocalization, local_law_ratios, qd_error, ResolventBundle};
use crate::semicircle::SpectralPoint;
use crate::torus::{build_variance_profile, diffusion_profile, sqrt_profile, ProfileSpec};

use super::config::{Point, SweepConfig};
use super::fit::{fit_power_law, LineFit};

pub const CSV_HEADER: [&str; 13] = [
    "N",
    "W",
    "gamma",
    "E",
    "eta",
    "seed",
    "qd_max_err",
    "qd_ratio",
    "local_law_max",
    "deloc_density",
    "tau1",
    "tau2",
    "runtime_s",
];

pub const RESULTS_FILE: &str = "results.csv";
pub const METADATA_FILE: &str = "metadata.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "W")]
    pub w: usize,
    pub gamma: f64,
    #[serde(rename = "E")]
    pub e: f64,
    pub eta: f64,
    pub seed: u64,
    pub qd_max_err: f64,
    pub qd_ratio: f64,
    pub local_law_max: f64,
    pub deloc_density: f64,
    /// First grid time at which the stopping functional crossed, if any.
    pub tau1: Option<f64>,
    pub tau2: Option<f64>,
    pub runtime_s: Option<f64>,
}

impl ResultRow {
    /// Numeric column by CSV name; τ columns read 0 when empty.
    pub fn get(&self, key: &str) -> Option<f64> {
        Some(match key {
            "N" => self.n as f64,
            "W" => self.w as f64,
            "gamma" => self.gamma,
            "E" => self.e,
            "eta" => self.eta,
            "seed" => self.seed as f64,
            "qd_max_err" => self.qd_max_err,
            "qd_ratio" => self.qd_ratio,
            "local_law_max" => self.local_law_max,
            "deloc_density" => self.deloc_density,
            "tau1" => self.tau1.unwrap_or(0.0),
            "tau2" => self.tau2.unwrap_or(0.0),
            "runtime_s" => self.runtime_s?,
            _ => return None,
        })
    }

    fn key(&self) -> JobKey {
        JobKey::new(self.n, self.gamma, self.e, self.seed)
    }
}

/// Log-log fit of one column against another.
pub fn fit_exponent(table: &[ResultRow], x_key: &str, y_key: &str) -> Result<LineFit> {
    let col = |k: &str| -> Result<Vec<f64>> {
        table.iter().map(|r| r.get(k).ok_or_else(|| Error::Domain(format!("unknown or empty column '{k}'")))).collect()
    };
    fit_power_law(&col(x_key)?, &col(y_key)?)
}

/// Identity of a job; floats compared by bit pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct JobKey(usize, u64, u64, u64);

impl JobKey {
    fn new(n: usize, gamma: f64, e: f64, seed: u64) -> Self {
        JobKey(n, gamma.to_bits(), e.to_bits(), seed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Job {
    pub point: Point,
    pub e: f64,
    pub seed: u64,
}

impl Job {
    fn key(&self) -> JobKey {
        JobKey::new(self.point.n, self.point.gamma, self.e, self.seed)
    }
}

/// Jobs in their canonical order: points, then energies, then seeds.
pub fn jobs(cfg: &SweepConfig) -> Vec<Job> {
    let seeds = cfg.seeds.values();
    let mut out = Vec::new();
    for &point in &cfg.points {
        for &e in &cfg.energies {
            for &seed in &seeds {
                out.push(Job { point, e, seed });
            }
        }
    }
    out
}

/// Run one job: sample H at t = 1 (the flow endpoint when a grid is set),
/// then measure quantum diffusion, the local law and delocalization.
pub fn run_job(cfg: &SweepConfig, job: &Job) -> Result<(ResultRow, f64)> {
    let start = Instant::now();
    let n = job.point.n;
    let w = job.point.band_width();
    let spec = ProfileSpec::new(n, w, cfg.shape)?;
    let s = build_variance_profile(&spec)?;
    let s_half = sqrt_profile(&s)?;
    let eta = cfg.eta_rule.eta(n, w);
    let p = SpectralPoint::new(job.e, eta)?;
    let th = &cfg.thresholds;
    let (h, tau1, tau2) = if cfg.grid > 0 {
        let flow = BrownianFlow::new(&s, &default_grid(cfg.grid), job.seed)?;
        let series = monitor_flow(&flow, &p, &s_half, w, &th.stopping())?;
        let (t1, t2) = stopping_monitor(&series, &th.stopping());
        (flow.terminal(), t1, t2)
    } else {
        (sample_band_matrix(&s, 1.0, job.seed)?.h, None, None)
    };
    let bundle = ResolventBundle::compute(&h, p.w(1.0), &s_half)?;
    let theta = diffusion_profile(&s, p.m, 1.0)?;
    let (qd_max_err, qd_ratio) = qd_error(&bundle.t, &theta);
    let ll = local_law_ratios(&bundle, p.m, &s_half, w, th.d, eta);
    let deloc = eigen_delocalization(&h, th.kappa, th.ell_sites(n), th.eps, true)?;
    let runtime = start.elapsed().as_secs_f64();
    let row = ResultRow {
        n,
        w,
        gamma: job.point.gamma,
        e: job.e,
        eta,
        seed: job.seed,
        qd_max_err,
        qd_ratio,
        local_law_max: ll.entry_ratio,
        deloc_density: deloc.density,
        tau1,
        tau2,
        runtime_s: if cfg.record_runtime { Some(runtime) } else { None },
    };
    Ok((row, runtime))
}

#[derive(Clone, Debug, Serialize)]
pub struct PointMeta {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "W")]
    pub w: usize,
    pub gamma: f64,
    pub above_8_11: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Failure {
    pub job: Job,
    pub error: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Metadata {
    pub version: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub points: Vec<PointMeta>,
    pub flow_grid: usize,
    pub rows: usize,
    pub resumed_rows: usize,
    pub failures: Vec<Failure>,
    /// Wall time of this invocation and of each job it ran, in job order.
    pub wall_time_s: f64,
    pub job_runtimes_s: Vec<f64>,
    pub finished_unix_s: u64,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub rows: Vec<ResultRow>,
    pub metadata: Metadata,
    pub csv_path: PathBuf,
    pub metadata_path: PathBuf,
}

impl SweepOutcome {
    pub fn complete(&self) -> bool {
        self.metadata.failures.is_empty()
    }
}

/// Rows of an existing results file. A truncated or malformed tail (from an
/// interrupted write) is dropped.
pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        None => return Ok(vec![]),
        Some(h) if h == CSV_HEADER.join(",") => {}
        Some(h) => return Err(Error::Config(format!("unexpected results header '{h}'"))),
    }
    let mut rows = Vec::new();
    let body: Vec<&str> = lines.collect();
    let complete = if text.ends_with('\n') { body.len() } else { body.len().saturating_sub(1) };
    for line in &body[..complete] {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(line.as_bytes());
        let mut rec = csv::StringRecord::new();
        if !rdr.read_record(&mut rec)? || rec.len() != CSV_HEADER.len() {
            break;
        }
        match rec.deserialize::<ResultRow>(Some(&csv::StringRecord::from(CSV_HEADER.to_vec()))) {
            Ok(r) => rows.push(r),
            Err(_) => break,
        }
    }
    Ok(rows)
}

pub fn write_rows(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Numeric(e.to_string()))?;
    fs::write(path, bytes)?;
    Ok(())
}

fn append_row(path: &Path, row: &ResultRow) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.serialize(row)?;
    let bytes = w.into_inner().map_err(|e| Error::Numeric(e.to_string()))?;
    let mut f = fs::OpenOptions::new().append(true).open(path)?;
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

/// Run every job not already present in `out_dir/results.csv`, appending rows
/// as they finish, then rewrite the file in canonical job order.
///
/// `stop_after` limits how many new jobs run (for exercising resume).
pub fn run_sweep(cfg: &SweepConfig, force: bool, stop_after: Option<usize>) -> Result<SweepOutcome> {
    let start = Instant::now();
    cfg.validate(force)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let csv_path = cfg.out_dir.join(RESULTS_FILE);
    let metadata_path = cfg.out_dir.join(METADATA_FILE);
    let all = jobs(cfg);
    let order: HashMap<JobKey, usize> = all.iter().enumerate().map(|(i, j)| (j.key(), i)).collect();

    let mut existing = if csv_path.exists() { read_rows(&csv_path)? } else { vec![] };
    existing.retain(|r| order.contains_key(&r.key()));
    write_rows(&csv_path, &existing)?;
    let resumed_rows = existing.len();
    let done: std::collections::HashSet<JobKey> = existing.iter().map(|r| r.key()).collect();
    let mut todo: Vec<Job> = all.iter().filter(|j| !done.contains(&j.key())).cloned().collect();
    if let Some(k) = stop_after {
        todo.truncate(k);
    }

    let mut rows = existing;
    let mut failures = Vec::new();
    let mut runtimes = Vec::new();
    let chunk = rayon::current_num_threads().max(1);
    for batch in todo.chunks(chunk) {
        let results: Vec<Result<(ResultRow, f64)>> = batch.par_iter().map(|j| run_job(cfg, j)).collect();
        for (job, res) in batch.iter().zip(results) {
            match res {
                Ok((row, rt)) => {
                    append_row(&csv_path, &row)?;
                    runtimes.push(rt);
                    rows.push(row);
                }
                Err(e) => failures.push(Failure { job: *job, error: e.to_string() }),
            }
        }
    }
    rows.sort_by_key(|r| order[&r.key()]);
    write_rows(&csv_path, &rows)?;

    let metadata = Metadata {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        seeds: cfg.seeds.values(),
        points: cfg
            .points
            .iter()
            .map(|p| PointMeta { n: p.n, w: p.band_width(), gamma: p.gamma, above_8_11: p.above_threshold() })
            .collect(),
        flow_grid: cfg.grid,
        rows: rows.len(),
        resumed_rows,
        failures,
        wall_time_s: start.elapsed().as_secs_f64(),
        job_runtimes_s: runtimes,
        finished_unix_s: std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    };
    fs::write(&metadata_path, serde_json::to_vec_pretty(&metadata)?)?;
    Ok(SweepOutcome { rows, metadata, csv_path, metadata_path })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::config::Seeds;

    fn small(dir: &Path) -> SweepConfig {
        SweepConfig {
            points: vec![Point { n: 32, gamma: 0.6 }],
            seeds: Seeds::Count(3),
            grid: 2,
            out_dir: dir.to_path_buf(),
            ..Default::default()
        }
    }

    #[test]
    fn empty_sweep_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SweepConfig { out_dir: dir.path().to_path_buf(), ..Default::default() };
        let out = run_sweep(&cfg, false, None).unwrap();
        assert!(out.rows.is_empty());
        assert_eq!(fs::read_to_string(out.csv_path).unwrap(), CSV_HEADER.join(",") + "\n");
    }

    #[test]
    fn rows_per_seed_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        let full = run_sweep(&cfg, false, None).unwrap();
        assert_eq!(full.rows.len(), 3);
        let golden = fs::read(&full.csv_path).unwrap();

        let dir2 = tempfile::tempdir().unwrap();
        let cfg2 = small(dir2.path());
        let part = run_sweep(&cfg2, false, Some(1)).unwrap();
        assert_eq!(part.rows.len(), 1);
        // Simulate a torn write.
        let mut f = fs::OpenOptions::new().append(true).open(&part.csv_path).unwrap();
        f.write_all(b"32,8,0.6,0").unwrap();
        let rest = run_sweep(&cfg2, false, None).unwrap();
        assert_eq!(rest.metadata.resumed_rows, 1);
        assert_eq!(fs::read(&rest.csv_path).unwrap(), golden);
    }

    #[test]
    fn failed_jobs_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        // W = 10 at N = 16 wraps the band.
        let cfg = SweepConfig { points: vec![Point { n: 16, gamma: 0.8 }, Point { n: 32, gamma: 0.6 }], out_dir: dir.path().to_path_buf(), ..Default::default() };
        let out = run_sweep(&cfg, false, None).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.metadata.failures.len(), 1);
        assert!(!out.complete());
    }

    #[test]
    fn fit_exponent_by_column() {
        let rows: Vec<ResultRow> = [64usize, 128, 256]
            .iter()
            .map(|&n| ResultRow {
                n,
                w: n / 4,
                gamma: 0.8,
                e: 0.0,
                eta: 0.1,
                seed: 0,
                qd_max_err: 1.0,
                qd_ratio: (n as f64).powf(-0.5),
                local_law_max: 1.0,
                deloc_density: 0.0,
                tau1: None,
                tau2: None,
                runtime_s: None,
            })
            .collect();
        let f = fit_exponent(&rows, "N", "qd_ratio").unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12);
        assert!(fit_exponent(&rows, "N", "nope").is_err());
        assert!(fit_exponent(&rows, "N", "runtime_s").is_err());
    }
}
