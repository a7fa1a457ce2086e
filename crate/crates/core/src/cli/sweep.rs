//! Fan-out of `(dt, replica)` jobs and per-dt merging.

use crate::cli::config::SweepConfig;
use crate::cli::fit::{fit_slope, SlopeFit};
use crate::error::{Error, Result};
use crate::estimate::{merge_chains, run_chain, ChainConfig, EpEstimate};
use crate::gc::GcVariant;
use crate::integrate::Scheme;
use crate::oracle::TheoryRef;
use crate::parallel::{map_jobs, Execution};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub scheme: Scheme,
    pub model: String,
    pub variant: GcVariant,
    /// One merged estimate per dt, dt descending.
    pub rows: Vec<EpEstimate>,
    /// Over valid rows with `ep > 0`; `None` when fewer than two qualify.
    pub fit: Option<SlopeFit>,
    pub theory: Option<TheoryRef>,
    /// Errors from replicas that could not be run.
    pub notes: Vec<String>,
}

/// RNG stream of replica `replica` at grid position `dt_index`.
pub fn stream_id(dt_index: usize, replica: u32) -> u64 {
    ((dt_index as u64) << 32) | replica as u64
}

pub fn chain_config(cfg: &SweepConfig, dt_index: usize, replica: u32) -> ChainConfig {
    let dt = cfg.dt_grid[dt_index];
    let n = cfg.run.steps(dt);
    ChainConfig {
        scheme: cfg.scheme,
        dt,
        n_steps: n,
        burn_in: (n as f64 * cfg.burn_in_frac).round() as u64,
        seed: cfg.seed,
        stream: stream_id(dt_index, replica),
        variant: cfg.variant,
        n_batches: cfg.n_batches,
        singular_threshold: cfg.singular_threshold,
        init: cfg.init.clone(),
    }
}

fn failed_row(cfg: &SweepConfig, dt: f64, dt_index: usize) -> EpEstimate {
    EpEstimate {
        scheme: cfg.scheme,
        model: cfg.model.label(),
        dt,
        ep: f64::NAN,
        stderr: f64::NAN,
        n_steps: 0,
        n_singular: 0,
        n_wraps: 0,
        wall_seconds: 0.0,
        seed: cfg.seed,
        stream: stream_id(dt_index, 0),
        variant: cfg.variant,
        replicas: 0,
        valid: false,
    }
}

pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepTable> {
    run_sweep_with(cfg, Execution::from_workers(cfg.workers))
}

pub fn run_sweep_with(cfg: &SweepConfig, exec: Execution) -> Result<SweepTable> {
    let jobs: Vec<(usize, u32)> = (0..cfg.dt_grid.len())
        .flat_map(|i| (0..cfg.replicas).map(move |r| (i, r)))
        .collect();
    let results = map_jobs(&jobs, exec, |&(i, r)| run_chain(&cfg.model, &chain_config(cfg, i, r)));

    let mut rows = Vec::with_capacity(cfg.dt_grid.len());
    let mut notes = Vec::new();
    for (i, &dt) in cfg.dt_grid.iter().enumerate() {
        let mut parts = Vec::new();
        let mut failed = false;
        for ((ji, r), res) in jobs.iter().zip(&results) {
            if *ji != i {
                continue;
            }
            match res {
                Ok(e) => parts.push(e.clone()),
                Err(e) => {
                    failed = true;
                    notes.push(format!("dt={dt} replica={r}: {e}"));
                }
            }
        }
        rows.push(if failed || parts.is_empty() {
            failed_row(cfg, dt, i)
        } else {
            merge_chains(&parts)?
        });
    }
    if rows.iter().all(|r| !r.valid) {
        return Err(Error::NoValidRows(format!(
            "every dt failed or exceeded the singular threshold; {}",
            notes.join("; ")
        )));
    }
    let pts: Vec<(f64, f64, f64)> = rows
        .iter()
        .filter(|r| r.valid)
        .map(|r| (r.dt, r.ep, r.stderr))
        .collect();
    Ok(SweepTable {
        scheme: cfg.scheme,
        model: cfg.model.label(),
        variant: cfg.variant,
        rows,
        fit: fit_slope(&pts).ok(),
        theory: cfg.theory()?,
        notes,
    })
}
