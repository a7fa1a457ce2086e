//! Sweep configuration, orchestration, fitting and reporting behind the
//! `sde-ep` binary.

pub mod config;
pub mod fit;
pub mod report;
pub mod sweep;

pub use config::{RunLength, Settings, SweepConfig};
pub use fit::{fit_slope, SlopeFit};
pub use report::{emit_report, read_csv, render_summary, CsvRow};
pub use sweep::{run_sweep, run_sweep_with, SweepTable};
