//! Sweep configuration, orchestration, persistence and exponent fits.

pub mod config;
pub mod fit;
pub mod sweep;

pub use config::{EtaRule, Point, Seeds, SweepConfig, Thresholds, MAX_N};
pub use fit::{fit_line, fit_power_law, LineFit};
pub use sweep::{fit_exponent, jobs, read_rows, run_job, run_sweep, write_rows, Job, Metadata, ResultRow, SweepOutcome, CSV_HEADER};
