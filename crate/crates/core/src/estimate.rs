//! Stationary EP estimation from one long chain, batch-means error bars and
//! replica merging.

use std::time::Instant;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gc::{GcAccumulator, GcEvaluator, GcVariant};
use crate::integrate::{
    bbk_step_into, chain_rng, em_step_into, fill_normal, milstein_step_into, PhaseState, PhaseStepRecord, Scheme,
    StepRecord,
};
use crate::model::{ModelSpec, PotentialKind};

pub const DEFAULT_BATCHES: usize = 100;
pub const DEFAULT_SINGULAR_THRESHOLD: f64 = 1e-6;
pub const DEFAULT_BURN_IN_FRACTION: f64 = 0.1;

/// Where a chain starts before burn-in.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum InitialCondition {
    /// `(1, 0, …)` for the radial quartic, the origin otherwise; Langevin
    /// chains draw `p ~ N(0, m/β)` and, for quadratic wells, `q` from the
    /// Gibbs marginal.
    #[default]
    Default,
    Point(Vec<f64>),
    Phase(PhaseState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub scheme: Scheme,
    pub dt: f64,
    /// Accumulated steps, after burn-in.
    pub n_steps: u64,
    pub burn_in: u64,
    pub seed: u64,
    pub stream: u64,
    pub variant: GcVariant,
    pub n_batches: usize,
    pub singular_threshold: f64,
    pub init: InitialCondition,
}

impl ChainConfig {
    pub fn new(scheme: Scheme, dt: f64, n_steps: u64) -> Self {
        Self {
            scheme,
            dt,
            n_steps,
            burn_in: (n_steps as f64 * DEFAULT_BURN_IN_FRACTION).round() as u64,
            seed: 0,
            stream: 0,
            variant: GcVariant::default_for(scheme),
            n_batches: DEFAULT_BATCHES,
            singular_threshold: DEFAULT_SINGULAR_THRESHOLD,
            init: InitialCondition::Default,
        }
    }

    pub fn seed(mut self, seed: u64, stream: u64) -> Self {
        self.seed = seed;
        self.stream = stream;
        self
    }

    pub fn burn_in(mut self, steps: u64) -> Self {
        self.burn_in = steps;
        self
    }

    pub fn variant(mut self, variant: GcVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn init(mut self, init: InitialCondition) -> Self {
        self.init = init;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "time step must be positive, got {}",
                self.dt
            )));
        }
        if self.n_batches < 10 {
            return Err(Error::InvalidArgument(format!(
                "need at least 10 batches, got {}",
                self.n_batches
            )));
        }
        if self.n_steps < self.n_batches as u64 {
            return Err(Error::SeriesTooShort {
                len: self.n_steps as usize,
                batches: self.n_batches,
            });
        }
        if !(self.singular_threshold >= 0.0) {
            return Err(Error::InvalidArgument("singular threshold must be non-negative".into()));
        }
        Ok(())
    }
}

/// EP estimate for one `(scheme, model, dt)`, from one chain or a merged
/// set of replicas.
#[derive(Debug, Clone, PartialEq)]
pub struct EpEstimate {
    pub scheme: Scheme,
    pub model: String,
    pub dt: f64,
    pub ep: f64,
    pub stderr: f64,
    pub n_steps: u64,
    pub n_singular: u64,
    pub n_wraps: u64,
    pub wall_seconds: f64,
    pub seed: u64,
    pub stream: u64,
    pub variant: GcVariant,
    pub replicas: usize,
    pub valid: bool,
}

/// Streaming batch means over a series of known length.
#[derive(Debug, Clone)]
pub struct BatchMeans {
    batch_len: u64,
    n_batches: usize,
    cur: f64,
    cur_n: u64,
    means: Vec<f64>,
}

impl BatchMeans {
    pub fn new(len: u64, n_batches: usize) -> Result<Self> {
        if n_batches < 10 {
            return Err(Error::InvalidArgument(format!(
                "need at least 10 batches, got {n_batches}"
            )));
        }
        if len < n_batches as u64 {
            return Err(Error::SeriesTooShort {
                len: len as usize,
                batches: n_batches,
            });
        }
        Ok(Self {
            batch_len: len / n_batches as u64,
            n_batches,
            cur: 0.0,
            cur_n: 0,
            means: Vec::with_capacity(n_batches),
        })
    }

    /// Samples past `n_batches · ⌊len/n_batches⌋` are ignored.
    #[inline]
    pub fn push(&mut self, v: f64) {
        if self.means.len() == self.n_batches {
            return;
        }
        self.cur += v;
        self.cur_n += 1;
        if self.cur_n == self.batch_len {
            self.means.push(self.cur / self.batch_len as f64);
            self.cur = 0.0;
            self.cur_n = 0;
        }
    }

    /// Standard error of the overall mean.
    pub fn stderr(&self) -> Result<f64> {
        let b = self.means.len();
        if b < self.n_batches {
            return Err(Error::SeriesTooShort {
                len: (b as u64 * self.batch_len) as usize,
                batches: self.n_batches,
            });
        }
        let mean = self.means.iter().sum::<f64>() / b as f64;
        let var = self.means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (b - 1) as f64;
        Ok((var / b as f64).sqrt())
    }
}

/// Batch-means standard error of the mean of `series`.
pub fn batch_means(series: &[f64], n_batches: usize) -> Result<f64> {
    let mut bm = BatchMeans::new(series.len() as u64, n_batches)?;
    for &v in series {
        bm.push(v);
    }
    bm.stderr()
}

fn default_point(model: &ModelSpec) -> Vec<f64> {
    let mut x = vec![0.0; model.dim()];
    if let PotentialKind::QuarticRadial { .. } = model.potential().kind {
        x[0] = 1.0;
    }
    x
}

fn default_phase<R: Rng + ?Sized>(model: &ModelSpec, rng: &mut R) -> PhaseState {
    let ModelSpec::Langevin {
        potential, langevin, ..
    } = model
    else {
        unreachable!()
    };
    let n = langevin.dof();
    let mut s = PhaseState::zeros(n);
    fill_normal(rng, langevin.mass / langevin.beta, &mut s.p);
    match potential.kind {
        PotentialKind::Quadratic { scale } if scale > 0.0 => fill_normal(rng, 1.0 / (langevin.beta * scale), &mut s.q),
        PotentialKind::QuarticRadial { .. } => s.q[0] = 1.0,
        _ => {}
    }
    s
}

struct Tally {
    acc: GcAccumulator,
    batches: BatchMeans,
    inv_dt: f64,
}

impl Tally {
    #[inline]
    fn push(&mut self, w: f64, wrapped: bool) {
        let finite = self.acc.push(w, wrapped);
        self.batches.push(if finite { w * self.inv_dt } else { 0.0 });
    }
}

/// Runs `burn_in` discarded steps then `n_steps` accumulated steps and
/// returns `EP = Σw / (n_steps · dt)` with a batch-means standard error.
pub fn run_chain(model: &ModelSpec, cfg: &ChainConfig) -> Result<EpEstimate> {
    cfg.validate()?;
    let start = Instant::now();
    let mut eval = GcEvaluator::new(model, cfg.scheme, cfg.variant)?;
    let mut rng = chain_rng(cfg.seed, cfg.stream);
    let mut tally = Tally {
        acc: GcAccumulator::new(cfg.variant),
        batches: BatchMeans::new(cfg.n_steps, cfg.n_batches)?,
        inv_dt: 1.0 / cfg.dt,
    };
    let dt = cfg.dt;
    let d = model.dim();
    let mut grad = vec![0.0; d];

    match cfg.scheme {
        Scheme::Em | Scheme::Milstein => {
            let mut x = match &cfg.init {
                InitialCondition::Default => default_point(model),
                InitialCondition::Point(p) => p.clone(),
                InitialCondition::Phase(_) => {
                    return Err(Error::InvalidArgument(
                        "phase-space start for an overdamped chain".into(),
                    ))
                }
            };
            if x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: x.len(),
                });
            }
            model.domain().wrap(&mut x);
            let ModelSpec::Overdamped { diffusion, .. } = model else {
                unreachable!()
            };
            let mut dw = vec![0.0; diffusion.noise_dim(d)];
            let mut rec = StepRecord::with_dims(d, dw.len());
            let step = if cfg.scheme == Scheme::Em {
                em_step_into
            } else {
                milstein_step_into
            };
            for i in 0..cfg.burn_in + cfg.n_steps {
                fill_normal(&mut rng, dt, &mut dw);
                step(model, &x, dt, &dw, &mut rec, &mut grad)?;
                if i >= cfg.burn_in {
                    let w = eval.overdamped(&rec)?;
                    tally.push(w, rec.wrapped);
                }
                std::mem::swap(&mut x, &mut rec.x_next);
            }
        }
        Scheme::Bbk => {
            let mut s = match &cfg.init {
                InitialCondition::Default => default_phase(model, &mut rng),
                InitialCondition::Phase(s) => s.clone(),
                InitialCondition::Point(_) => {
                    return Err(Error::InvalidArgument("position-only start for a BBK chain".into()))
                }
            };
            if s.q.len() != d || s.p.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: s.q.len(),
                });
            }
            model.domain().wrap(&mut s.q);
            let mut noise = vec![0.0; 2 * d];
            let mut rec = PhaseStepRecord::with_dims(d);
            for i in 0..cfg.burn_in + cfg.n_steps {
                fill_normal(&mut rng, 0.5 * dt, &mut noise);
                bbk_step_into(model, &s, dt, &noise, &mut rec, &mut grad)?;
                if i >= cfg.burn_in {
                    let w = eval.phase(&rec)?;
                    tally.push(w, rec.wrapped);
                }
                std::mem::swap(&mut s, &mut rec.next);
            }
        }
    }

    let acc = tally.acc;
    Ok(EpEstimate {
        scheme: cfg.scheme,
        model: model.label(),
        dt,
        ep: acc.ep(dt),
        stderr: tally.batches.stderr()?,
        n_steps: acc.n_steps,
        n_singular: acc.n_singular,
        n_wraps: acc.n_wraps,
        wall_seconds: start.elapsed().as_secs_f64(),
        seed: cfg.seed,
        stream: cfg.stream,
        variant: cfg.variant,
        replicas: 1,
        valid: acc.singular_fraction() <= cfg.singular_threshold,
    })
}

/// Combines independent replicas of one `(scheme, model, dt, variant)`.
/// The result is independent of input order.
pub fn merge_chains(parts: &[EpEstimate]) -> Result<EpEstimate> {
    let Some(first) = parts.first() else {
        return Err(Error::Merge("no chains to merge".into()));
    };
    for p in parts {
        if p.scheme != first.scheme || p.model != first.model || p.dt != first.dt || p.variant != first.variant {
            return Err(Error::Merge(format!(
                "mismatched chains: {}/{}/dt={}/{} vs {}/{}/dt={}/{}",
                first.scheme, first.model, first.dt, first.variant, p.scheme, p.model, p.dt, p.variant
            )));
        }
    }
    let mut sorted: Vec<&EpEstimate> = parts.iter().collect();
    sorted.sort_by_key(|p| (p.stream, p.seed));
    let total: u64 = sorted.iter().map(|p| p.n_steps).sum();
    if total == 0 {
        return Err(Error::Merge("chains have no steps".into()));
    }
    let mut ep = 0.0;
    let mut var = 0.0;
    for p in &sorted {
        let w = p.n_steps as f64 / total as f64;
        ep += w * p.ep;
        var += w * w * p.stderr * p.stderr;
    }
    Ok(EpEstimate {
        scheme: first.scheme,
        model: first.model.clone(),
        dt: first.dt,
        ep,
        stderr: var.sqrt(),
        n_steps: total,
        n_singular: sorted.iter().map(|p| p.n_singular).sum(),
        n_wraps: sorted.iter().map(|p| p.n_wraps).sum(),
        wall_seconds: sorted.iter().map(|p| p.wall_seconds).sum(),
        seed: sorted[0].seed,
        stream: sorted[0].stream,
        variant: first.variant,
        replicas: sorted.iter().map(|p| p.replicas).sum(),
        valid: sorted.iter().all(|p| p.valid),
    })
}
