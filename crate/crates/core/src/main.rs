use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sde_ep::cli::{emit_report, render_summary, run_sweep, Settings, SweepConfig, SweepTable};
use sde_ep::estimate::{merge_chains, run_chain};
use sde_ep::gc::{em_boundary_term, em_exact_log_ratio, gc_increment_em, log_density_em, log_density_milstein};
use sde_ep::integrate::{chain_rng, em_step, Scheme};
use sde_ep::model::{validate_derivatives, ModelSpec};
use sde_ep::parallel::{map_jobs, Execution};
use sde_ep::{cli::sweep::chain_config, Error, Result};

#[derive(Parser)]
#[command(name = "sde-ep", version, about = "Entropy production of SDE discretizations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate EP at a single dt.
    Simulate(RunArgs),
    /// Estimate EP over a dt grid and fit the log-log slope.
    Sweep(RunArgs),
    /// Print the closed-form reference for the configured model.
    Theory(RunArgs),
    /// Check derivatives, transition densities and the exact-ratio identity.
    Validate(RunArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Named preset (quartic_torus, sigma_eps_em, sigma_eps_milstein, bbk_quadratic, ou_em).
    #[arg(long)]
    preset: Option<String>,
    /// Flat key = value file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scheme: Option<String>,
    /// Time step; repeat for a grid.
    #[arg(long)]
    dt: Vec<f64>,
    /// Accumulated steps per replica per dt.
    #[arg(long, conflicts_with = "time")]
    steps: Option<u64>,
    /// Simulated time per replica per dt.
    #[arg(long)]
    time: Option<f64>,
    #[arg(long)]
    burn_in_frac: Option<f64>,
    #[arg(long)]
    replicas: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["dropped", "exact"])]
    variant: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    /// CSV path; a summary is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra key=value settings.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn settings(&self) -> Result<Settings> {
        let mut s = Settings::new();
        if let Some(p) = &self.preset {
            s.set("preset", p.as_str())?;
        }
        if let Some(path) = &self.config {
            s.merge_file(path)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            s.set(k, v.trim())?;
        }
        if let Some(v) = &self.scheme {
            s.set("scheme", v.as_str())?;
        }
        if !self.dt.is_empty() {
            let list: Vec<String> = self.dt.iter().map(f64::to_string).collect();
            s.set("dt", list.join(","))?;
        }
        if let Some(v) = self.steps {
            s.set("steps", v.to_string())?;
        }
        if let Some(v) = self.time {
            s.set("time", v.to_string())?;
        }
        if let Some(v) = self.burn_in_frac {
            s.set("burn_in_frac", v.to_string())?;
        }
        if let Some(v) = self.replicas {
            s.set("replicas", v.to_string())?;
        }
        if let Some(v) = self.seed {
            s.set("seed", v.to_string())?;
        }
        if let Some(v) = &self.variant {
            s.set("variant", v.as_str())?;
        }
        if let Some(v) = self.workers {
            s.set("workers", v.to_string())?;
        }
        if let Some(v) = &self.out {
            s.set("out", v.display().to_string())?;
        }
        Ok(s)
    }

    fn config(&self) -> Result<SweepConfig> {
        SweepConfig::from_settings(&self.settings()?)
    }
}

fn report(table: &SweepTable, cfg: &SweepConfig) -> Result<()> {
    print!("{}", render_summary(table));
    if let Some(path) = &cfg.out {
        let paths = emit_report(table, path)?;
        println!("wrote {} and {}", paths.csv.display(), paths.summary.display());
    }
    Ok(())
}

fn simulate(args: &RunArgs) -> Result<()> {
    let mut cfg = args.config()?;
    cfg.dt_grid.truncate(1);
    let exec = Execution::from_workers(cfg.workers);
    let replicas: Vec<u32> = (0..cfg.replicas).collect();
    let parts = map_jobs(&replicas, exec, |&r| run_chain(&cfg.model, &chain_config(&cfg, 0, r)));
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    let est = merge_chains(&parts)?;
    let table = SweepTable {
        scheme: cfg.scheme,
        model: cfg.model.label(),
        variant: cfg.variant,
        rows: vec![est],
        fit: None,
        theory: cfg.theory()?,
        notes: vec![],
    };
    report(&table, &cfg)
}

fn sweep(args: &RunArgs) -> Result<()> {
    let cfg = args.config()?;
    if cfg.dt_grid.len() < 2 {
        return Err(Error::InvalidArgument("a sweep needs at least two dt values".into()));
    }
    let table = run_sweep(&cfg)?;
    report(&table, &cfg)
}

fn theory(args: &RunArgs) -> Result<()> {
    let cfg = args.config()?;
    println!("model: {}", cfg.model.label());
    println!("scheme: {}", cfg.scheme);
    match cfg.theory()? {
        None => println!("no theory reference"),
        Some(t) => {
            println!("{}", t.describe());
            println!("expected log-log slope: {}", t.expected_slope());
            for &dt in &cfg.dt_grid {
                if let Some(v) = t.value(dt) {
                    println!("  dt = {dt}: EP = {v:.10e}");
                }
            }
        }
    }
    Ok(())
}

fn grid_points(model: &ModelSpec) -> Vec<Vec<f64>> {
    let d = model.dim();
    let axis: Vec<f64> = (0..=20).map(|i| -2.0 + 0.2 * i as f64).collect();
    if d == 1 {
        return axis.iter().map(|&x| vec![x]).collect();
    }
    // each coordinate swept with the others at a fixed offset
    let mut pts = Vec::new();
    for k in 0..d {
        for &x in &axis {
            let mut p = vec![0.3; d];
            p[k] = x;
            pts.push(p);
        }
    }
    pts
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn validate(args: &RunArgs) -> Result<()> {
    let cfg = args.config()?;
    let model = &cfg.model;
    let mut ok = true;
    let mut line = |name: &str, pass: bool, detail: String| {
        ok &= pass;
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    };

    let rep = validate_derivatives(model, &grid_points(model), 1e-5)?;
    line(
        "derivatives vs central differences",
        rep.passes(1e-5, 1e-7),
        format!(
            "grad {:.2e}, dcov {:.2e}, d2cov {:.2e}, dsigma {:.2e}",
            rep.grad.max_error(),
            rep.dcov.max_error(),
            rep.d2cov.max_error(),
            rep.dsigma.max_error()
        ),
    );

    if let ModelSpec::Overdamped { .. } = model {
        let dt = *cfg.dt_grid.last().expect("non-empty grid");
        if model.dim() == 1 {
            let mut worst: f64 = 0.0;
            for x in [-1.5, -0.4, 0.0, 0.7, 1.2] {
                let spread = 12.0 * dt.sqrt();
                let f = |y: f64| {
                    let v = match cfg.scheme {
                        Scheme::Milstein => log_density_milstein(model, &[x], &[y], dt),
                        _ => log_density_em(model, &[x], &[y], dt),
                    };
                    v.map(f64::exp).unwrap_or(f64::NAN)
                };
                let z = simpson(f, x - spread, x + spread, 200_000);
                worst = worst.max((z - 1.0).abs());
            }
            line(
                "transition density normalization",
                worst < 2e-3,
                format!("max |Z - 1| = {worst:.2e} at dt = {dt}"),
            );
        }
        let mut rng = chain_rng(cfg.seed, u64::MAX);
        let mut x = vec![0.5; model.dim()];
        let mut worst: f64 = 0.0;
        for _ in 0..10_000 {
            let rec = em_step(model, &x, dt, &mut rng)?;
            let lhs = em_exact_log_ratio(model, &rec)?;
            let rhs = gc_increment_em(model, &rec)? + em_boundary_term(model, &rec.x_next, dt)?
                - em_boundary_term(model, &rec.x_prev, dt)?;
            worst = worst.max((lhs - rhs).abs());
            x = rec.x_next;
        }
        line(
            "EM exact ratio = dropped increment + boundary",
            worst < 1e-10,
            format!("max deviation {worst:.2e}"),
        );
    }
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidModel("validation failed".into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
        Command::Theory(a) => theory(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
