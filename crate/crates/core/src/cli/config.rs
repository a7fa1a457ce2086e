//! Flat `key = value` configuration with named presets and overrides.
//!
//! Precedence, lowest first: built-in defaults, preset, config file,
//! command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::estimate::{InitialCondition, DEFAULT_BATCHES, DEFAULT_BURN_IN_FRACTION, DEFAULT_SINGULAR_THRESHOLD};
use crate::gc::GcVariant;
use crate::integrate::{PhaseState, Scheme};
use crate::model::{
    DiffusionModel, Domain, LangevinSpec, ModelSpec, PotentialKind, PotentialModel, DEFAULT_ELLIPTICITY_FLOOR,
};
use crate::oracle::{ep_constant_multiplicative, TheoryRef};

pub const KEYS: &[&str] = &[
    "preset",
    "scheme",
    "potential",
    "dim",
    "beta",
    "scale",
    "diffusion",
    "sigma",
    "eps",
    "floor",
    "domain",
    "half_width",
    "particles",
    "mass",
    "gamma",
    "noise_var",
    "dt",
    "steps",
    "time",
    "burn_in_frac",
    "replicas",
    "seed",
    "variant",
    "workers",
    "batches",
    "singular_threshold",
    "init",
    "out",
];

pub const PRESETS: &[(&str, &str)] = &[
    (
        "quartic_torus",
        "scheme=em\npotential=quartic_radial\ndim=2\nbeta=20\ndiffusion=additive\ndomain=torus\nhalf_width=4\n\
         dt=0.1,0.05,0.025,0.0125\ntime=1000000\nreplicas=4",
    ),
    (
        "sigma_eps_em",
        "scheme=em\npotential=quadratic\ndim=1\ndiffusion=sigma_eps\neps=1\ndt=0.01,0.005,0.002\nsteps=10000000\nreplicas=4",
    ),
    (
        "sigma_eps_milstein",
        "scheme=milstein\npotential=quadratic\ndim=1\ndiffusion=sigma_eps\neps=1\ndt=0.04,0.02,0.01,0.005\n\
         time=500000\nreplicas=4\nvariant=exact",
    ),
    (
        "bbk_quadratic",
        "scheme=bbk\npotential=quadratic\nparticles=5\ndim=1\nmass=1\nnoise_var=0.01\nbeta=800\n\
         dt=0.08,0.04,0.02,0.01\ntime=50000\nreplicas=4",
    ),
    (
        "ou_em",
        "scheme=em\npotential=quadratic\ndim=1\ndiffusion=additive\nsigma=1\ndt=0.1,0.05,0.025,0.0125\ntime=100000\nreplicas=4",
    ),
];

/// Layered string settings before validation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        let key = key.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::InvalidArgument(format!("unknown setting `{key}`")));
        }
        if key == "preset" {
            let name = value.into();
            self.apply_preset(&name)?;
            self.values.insert(key, name);
            return Ok(());
        }
        // steps and time are alternatives; the later one wins
        match key.as_str() {
            "steps" => {
                self.values.remove("time");
            }
            "time" => {
                self.values.remove("steps");
            }
            _ => {}
        }
        self.values.insert(key, value.into());
        Ok(())
    }

    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        let text = PRESETS
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name) || n.replace('_', "-") == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| {
                let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
                Error::InvalidArgument(format!("unknown preset `{name}` (known: {})", names.join(", ")))
            })?;
        self.merge_text(text)
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                msg: format!("expected key = value, got `{line}`"),
            })?;
            self.set(k, v.trim()).map_err(|e| Error::Config {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.merge_text(&text)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| Error::InvalidArgument(format!("{key} = `{v}`: {e}"))),
        }
    }

    fn float_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(v) = self.get(key) else { return Ok(None) };
        v.split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("{key} entry `{t}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }
}

/// Steps per replica per `dt`, or simulated time per replica per `dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunLength {
    Steps(u64),
    Time(f64),
}

impl RunLength {
    pub fn steps(&self, dt: f64) -> u64 {
        match *self {
            RunLength::Steps(n) => n,
            RunLength::Time(t) => (t / dt).round().max(1.0) as u64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub scheme: Scheme,
    pub model: ModelSpec,
    /// Strictly decreasing.
    pub dt_grid: Vec<f64>,
    pub run: RunLength,
    pub burn_in_frac: f64,
    pub replicas: u32,
    pub seed: u64,
    pub variant: GcVariant,
    pub workers: Option<usize>,
    pub n_batches: usize,
    pub singular_threshold: f64,
    pub init: InitialCondition,
    pub out: Option<PathBuf>,
}

pub fn default_dt_grid(scheme: Scheme) -> Vec<f64> {
    match scheme {
        Scheme::Em | Scheme::Milstein => vec![0.1, 0.05, 0.025, 0.0125],
        Scheme::Bbk => vec![0.08, 0.04, 0.02, 0.01, 0.005],
    }
}

/// Sorts descending and rejects duplicates and non-positive entries.
pub fn normalize_dt_grid(mut grid: Vec<f64>) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty dt grid".into()));
    }
    if let Some(bad) = grid.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {bad}")));
    }
    grid.sort_by(|a, b| b.total_cmp(a));
    if grid.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument("dt grid has duplicate entries".into()));
    }
    Ok(grid)
}

fn build_model(s: &Settings, scheme: Scheme) -> Result<ModelSpec> {
    let potential_name = s.get("potential").unwrap_or("quadratic");
    let dim: usize = s.parse("dim")?.unwrap_or(1);
    let half_width: Option<f64> = s.parse("half_width")?;
    let domain = match s
        .get("domain")
        .unwrap_or(if half_width.is_some() { "torus" } else { "euclidean" })
    {
        "euclidean" => Domain::Euclidean,
        "torus" => Domain::torus(half_width.unwrap_or(4.0))?,
        other => return Err(Error::InvalidArgument(format!("unknown domain `{other}`"))),
    };
    let beta: Option<f64> = s.parse("beta")?;
    let scale: f64 = s.parse("scale")?.unwrap_or(1.0);

    if scheme == Scheme::Bbk {
        let particles: usize = s.parse("particles")?.unwrap_or(1);
        let mass: f64 = s.parse("mass")?.unwrap_or(1.0);
        let gamma: Option<f64> = s.parse("gamma")?;
        let sigma: Option<f64> = match (s.parse::<f64>("noise_var")?, s.parse::<f64>("sigma")?) {
            (Some(_), Some(_)) => return Err(Error::InvalidArgument("give noise_var or sigma, not both".into())),
            (Some(v), None) => Some(v.sqrt()),
            (None, v) => v,
        };
        let langevin = match (gamma, sigma, beta) {
            (Some(g), Some(sg), None) => LangevinSpec::from_gamma_sigma(particles, dim, mass, g, sg)?,
            (Some(g), None, Some(b)) => LangevinSpec::from_gamma_beta(particles, dim, mass, g, b)?,
            (None, Some(sg), Some(b)) => LangevinSpec::from_sigma_beta(particles, dim, mass, sg, b)?,
            _ => {
                return Err(Error::InvalidArgument(
                    "BBK needs exactly two of gamma, sigma/noise_var and beta".into(),
                ))
            }
        };
        let n = langevin.dof();
        let potential = match potential_name {
            "quadratic" => PotentialModel::quadratic(scale, n),
            "quartic_radial" => PotentialModel::quartic_radial(s.parse("scale")?.unwrap_or(1.0), n),
            other => return Err(Error::InvalidArgument(format!("unknown potential `{other}`"))),
        };
        return ModelSpec::langevin(potential, langevin, domain);
    }

    let potential = match potential_name {
        "quadratic" => PotentialModel::quadratic(scale, dim),
        "quartic_radial" => PotentialModel::quartic_radial(beta.unwrap_or(1.0), dim),
        other => return Err(Error::InvalidArgument(format!("unknown potential `{other}`"))),
    };
    let floor: f64 = s.parse("floor")?.unwrap_or(DEFAULT_ELLIPTICITY_FLOOR);
    let diffusion = match s.get("diffusion").unwrap_or("additive") {
        "additive" => {
            // quartic wells default to σ = √(2/β): the drift is then β-free
            let default_sigma = match potential.kind {
                PotentialKind::QuarticRadial { beta } => (2.0 / beta).sqrt(),
                _ => 1.0,
            };
            let sigma: f64 = s.parse("sigma")?.unwrap_or(default_sigma);
            DiffusionModel::additive_with_floor(nalgebra::DMatrix::from_diagonal_element(dim, dim, sigma), floor)?
        }
        "sigma_eps" => DiffusionModel::sigma_eps_with_floor(s.parse("eps")?.unwrap_or(1.0), floor)?,
        other => return Err(Error::InvalidArgument(format!("unknown diffusion `{other}`"))),
    };
    ModelSpec::overdamped(potential, diffusion, domain)
}

impl SweepConfig {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let scheme: Scheme = s.parse("scheme")?.unwrap_or(Scheme::Em);
        let model = build_model(s, scheme)?;
        let dt_grid = normalize_dt_grid(s.float_list("dt")?.unwrap_or_else(|| default_dt_grid(scheme)))?;
        let run = match (s.parse::<f64>("steps")?, s.parse::<f64>("time")?) {
            (Some(n), _) if n >= 1.0 && n.fract() == 0.0 => RunLength::Steps(n as u64),
            (Some(n), _) => {
                return Err(Error::InvalidArgument(format!(
                    "steps must be a positive integer, got {n}"
                )))
            }
            (None, Some(t)) if t > 0.0 => RunLength::Time(t),
            (None, Some(t)) => return Err(Error::InvalidArgument(format!("time must be positive, got {t}"))),
            (None, None) => RunLength::Time(1e4),
        };
        let burn_in_frac: f64 = s.parse("burn_in_frac")?.unwrap_or(DEFAULT_BURN_IN_FRACTION);
        if !(0.0..=10.0).contains(&burn_in_frac) {
            return Err(Error::InvalidArgument(format!(
                "burn_in_frac out of range: {burn_in_frac}"
            )));
        }
        let replicas: u32 = s.parse("replicas")?.unwrap_or(4);
        if replicas == 0 {
            return Err(Error::InvalidArgument("replicas must be at least 1".into()));
        }
        let variant = s.parse("variant")?.unwrap_or(GcVariant::default_for(scheme));
        let workers: Option<usize> = s.parse("workers")?;
        if workers == Some(0) {
            return Err(Error::InvalidArgument("workers must be at least 1".into()));
        }
        let init = match s.float_list("init")? {
            None => InitialCondition::Default,
            Some(v) if scheme == Scheme::Bbk => {
                if v.len() % 2 != 0 {
                    return Err(Error::InvalidArgument("BBK init lists q then p".into()));
                }
                let (q, p) = v.split_at(v.len() / 2);
                InitialCondition::Phase(PhaseState::new(q.to_vec(), p.to_vec())?)
            }
            Some(v) => InitialCondition::Point(v),
        };
        let cfg = Self {
            scheme,
            model,
            dt_grid,
            run,
            burn_in_frac,
            replicas,
            seed: s.parse("seed")?.unwrap_or(0),
            variant,
            workers,
            n_batches: s.parse("batches")?.unwrap_or(DEFAULT_BATCHES),
            singular_threshold: s.parse("singular_threshold")?.unwrap_or(DEFAULT_SINGULAR_THRESHOLD),
            init,
            out: s.get("out").map(PathBuf::from),
        };
        // surface scheme/model/variant conflicts before any simulation
        crate::gc::GcEvaluator::new(&cfg.model, cfg.scheme, cfg.variant)?;
        Ok(cfg)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let mut s = Settings::new();
        s.set("preset", name)?;
        Self::from_settings(&s)
    }

    /// The closed form this configuration is compared against, if any.
    pub fn theory(&self) -> Result<Option<TheoryRef>> {
        Ok(match (&self.model, self.scheme) {
            (ModelSpec::Overdamped { diffusion, .. }, Scheme::Em | Scheme::Milstein) if diffusion.is_additive() => {
                Some(TheoryRef::EmAdditiveOrder2)
            }
            (ModelSpec::Overdamped { potential, .. }, Scheme::Em) if potential.dim == 1 => {
                Some(TheoryRef::EmMultiplicativeConstant {
                    c: ep_constant_multiplicative(&self.model)?,
                })
            }
            (ModelSpec::Overdamped { .. }, Scheme::Milstein) => Some(TheoryRef::MilsteinOrder1),
            (
                ModelSpec::Langevin {
                    potential,
                    langevin,
                    domain,
                },
                Scheme::Bbk,
            ) if matches!(potential.kind, PotentialKind::Quadratic { scale } if scale == 1.0)
                && *domain == Domain::Euclidean =>
            {
                Some(TheoryRef::BbkLinear {
                    n_dof: langevin.dof(),
                    gamma: langevin.gamma,
                    mass: langevin.mass,
                })
            }
            _ => None,
        })
    }
}
