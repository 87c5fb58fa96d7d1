//! Sweep configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flow::StoppingConfig;
use crate::torus::Shape;

/// Largest N a sweep accepts without `force`.
pub const MAX_N: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    #[serde(rename = "N")]
    pub n: usize,
    pub gamma: f64,
}

impl Point {
    /// W = ⌈N^γ⌉, with a relative tolerance so exact powers such as
    /// 1024^0.8 = 256 do not round up.
    pub fn band_width(&self) -> usize {
        let x = (self.n as f64).powf(self.gamma);
        let r = x.round();
        if (x - r).abs() <= 1e-9 * x {
            r as usize
        } else {
            x.ceil() as usize
        }
    }

    /// W ≥ N^{8/11}.
    pub fn above_threshold(&self) -> bool {
        self.band_width() as f64 >= (self.n as f64).powf(8.0 / 11.0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaRule {
    /// η = W²/N².
    #[default]
    Thouless,
    /// η = c·W²/N².
    ThoulessScaled(f64),
    Fixed(f64),
}

impl EtaRule {
    pub fn eta(&self, n: usize, w: usize) -> f64 {
        let base = (w as f64 / n as f64).powi(2);
        match *self {
            EtaRule::Thouless => base,
            EtaRule::ThoulessScaled(c) => c * base,
            EtaRule::Fixed(eta) => eta,
        }
    }
}

/// Either a count (seeds 0..n) or an explicit list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    Count(u64),
    List(Vec<u64>),
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::Count(1)
    }
}

impl Seeds {
    pub fn values(&self) -> Vec<u64> {
        match self {
            Seeds::Count(n) => (0..*n).collect(),
            Seeds::List(v) => v.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub delta_stop: f64,
    #[serde(rename = "D")]
    pub d: f64,
    pub kappa: f64,
    /// Localization length as a fraction of N.
    pub ell: f64,
    pub eps: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        let stop = StoppingConfig::default();
        Thresholds { delta_stop: stop.delta_stop, d: stop.d, kappa: 0.2, ell: 0.125, eps: 0.1 }
    }
}

impl Thresholds {
    pub fn stopping(&self) -> StoppingConfig {
        StoppingConfig { delta_stop: self.delta_stop, d: self.d }
    }

    pub fn ell_sites(&self, n: usize) -> usize {
        ((self.ell * n as f64).round() as usize).max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub points: Vec<Point>,
    #[serde(rename = "E")]
    pub energies: Vec<f64>,
    pub eta_rule: EtaRule,
    pub seeds: Seeds,
    /// Flow grid steps for the stopping monitors; 0 samples H at t = 1 only.
    pub grid: usize,
    pub thresholds: Thresholds,
    pub shape: Shape,
    /// Fill runtime_s in the CSV. Off by default so reruns are byte-identical;
    /// runtimes are always written to the metadata.
    pub record_runtime: bool,
    pub out_dir: PathBuf,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            points: vec![],
            energies: vec![0.0],
            eta_rule: EtaRule::default(),
            seeds: Seeds::default(),
            grid: 0,
            thresholds: Thresholds::default(),
            shape: Shape::Fejer,
            record_runtime: false,
            out_dir: PathBuf::from("results"),
        }
    }
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SweepConfig = serde_json::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self, force: bool) -> Result<()> {
        for p in &self.points {
            if !(p.gamma > 0.5 && p.gamma < 1.0) {
                return Err(Error::Config(format!("gamma = {} must lie in (0.5, 1)", p.gamma)));
            }
            if p.n > MAX_N && !force {
                return Err(Error::TooLarge { n: p.n, limit: MAX_N });
            }
        }
        for &e in &self.energies {
            if !e.is_finite() {
                return Err(Error::Config("energies must be finite".into()));
            }
        }
        match self.eta_rule {
            EtaRule::ThoulessScaled(c) if !(c > 0.0) => return Err(Error::Config("eta scale must be positive".into())),
            EtaRule::Fixed(eta) if !(eta > 0.0) => return Err(Error::Config("fixed eta must be positive".into())),
            _ => {}
        }
        let t = &self.thresholds;
        self.thresholds.stopping().validate()?;
        if !(t.kappa > 0.0 && t.kappa < 2.0) {
            return Err(Error::Config(format!("kappa = {} must lie in (0, 2)", t.kappa)));
        }
        if !(t.ell > 0.0 && t.ell <= 0.5) {
            return Err(Error::Config(format!("ell = {} must be a fraction of N in (0, 1/2]", t.ell)));
        }
        if !(t.eps > 0.0 && t.eps < 1.0) {
            return Err(Error::Config(format!("eps = {} must lie in (0, 1)", t.eps)));
        }
        let seeds = self.seeds.values();
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
