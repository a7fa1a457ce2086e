//! One-step maps for explicit Euler–Maruyama, explicit Milstein and the BBK
//! splitting integrator.
//!
//! Noise consumption order is fixed: EM and Milstein draw one increment per
//! noise dimension per step; BBK draws all of `ΔW_i` and then all of
//! `ΔW_{i+½}`. Each `*_into` variant takes the increments explicitly so the
//! maps are pure functions of their inputs.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{Domain, ModelSpec};

/// Discretization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Em,
    Milstein,
    Bbk,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Em => "em",
            Scheme::Milstein => "milstein",
            Scheme::Bbk => "bbk",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "em" | "euler" | "euler-maruyama" => Ok(Scheme::Em),
            "milstein" => Ok(Scheme::Milstein),
            "bbk" => Ok(Scheme::Bbk),
            other => Err(Error::InvalidArgument(format!("unknown scheme `{other}`"))),
        }
    }
}

/// Deterministic generator for chain `stream` under master `seed`.
///
/// ChaCha8 exposes 2⁶⁴ independent streams per seed; Gaussian variates come
/// from the ziggurat sampler in `rand_distr::StandardNormal`, which consumes
/// the stream identically on every platform.
pub fn chain_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fills `out` with `N(0, variance)` draws.
pub fn fill_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64, out: &mut [f64]) {
    let s = variance.sqrt();
    for v in out.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = s * z;
    }
}

/// One overdamped transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub x_prev: Vec<f64>,
    /// Post-step state, wrapped into the domain.
    pub x_next: Vec<f64>,
    /// Displacement before wrapping.
    pub dx_raw: Vec<f64>,
    /// Brownian increments `ΔW` in consumption order.
    pub noise: Vec<f64>,
    pub dt: f64,
    pub wrapped: bool,
}

impl StepRecord {
    pub fn with_dims(dim: usize, noise_dim: usize) -> Self {
        Self {
            x_prev: vec![0.0; dim],
            x_next: vec![0.0; dim],
            dx_raw: vec![0.0; dim],
            noise: vec![0.0; noise_dim],
            dt: 0.0,
            wrapped: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhaseState {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if q.len() != p.len() {
            return Err(Error::DimensionMismatch {
                expected: q.len(),
                got: p.len(),
            });
        }
        if q.iter().chain(&p).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("phase state has non-finite entries".into()));
        }
        Ok(Self { q, p })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            q: vec![0.0; n],
            p: vec![0.0; n],
        }
    }

    /// `(q, -p)`
    pub fn flipped(&self) -> Self {
        Self {
            q: self.q.clone(),
            p: self.p.iter().map(|v| -v).collect(),
        }
    }
}

/// One BBK transition over phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseStepRecord {
    pub prev: PhaseState,
    pub next: PhaseState,
    pub dq_raw: Vec<f64>,
    /// `ΔW_i` followed by `ΔW_{i+½}`, each of length `N·d`.
    pub noise: Vec<f64>,
    pub dt: f64,
    pub wrapped: bool,
}

impl PhaseStepRecord {
    pub fn with_dims(n: usize) -> Self {
        Self {
            prev: PhaseState::zeros(n),
            next: PhaseState::zeros(n),
            dq_raw: vec![0.0; n],
            noise: vec![0.0; 2 * n],
            dt: 0.0,
            wrapped: false,
        }
    }
}

pub fn apply_domain(domain: Domain, x_raw: &[f64]) -> (Vec<f64>, bool) {
    let mut x = x_raw.to_vec();
    let moved = domain.wrap(&mut x);
    (x, moved)
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")))
    }
}

fn overdamped_noise_dim(model: &ModelSpec) -> Result<usize> {
    match model {
        ModelSpec::Overdamped {
            diffusion, potential, ..
        } => Ok(diffusion.noise_dim(potential.dim)),
        ModelSpec::Langevin { .. } => Err(Error::Unsupported {
            scheme: "em/milstein",
            what: "underdamped Langevin models".into(),
        }),
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Correction {
    Euler,
    Milstein,
}

/// Shared EM/Milstein kernel. Writes into `rec`; `grad` is scratch of
/// length `d`.
fn overdamped_step_into(
    model: &ModelSpec,
    x: &[f64],
    dt: f64,
    dw: &[f64],
    rec: &mut StepRecord,
    grad: &mut [f64],
    scheme: Correction,
) -> Result<()> {
    let ModelSpec::Overdamped {
        potential,
        diffusion,
        domain,
    } = model
    else {
        return Err(Error::Unsupported {
            scheme: "em/milstein",
            what: "underdamped Langevin models".into(),
        });
    };
    let d = potential.dim;
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x.len(),
        });
    }
    let m = diffusion.noise_dim(d);
    if dw.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: dw.len(),
        });
    }
    potential.grad_into(x, grad);
    rec.x_prev.clear();
    rec.x_prev.extend_from_slice(x);
    rec.noise.clear();
    rec.noise.extend_from_slice(dw);
    rec.dx_raw.resize(d, 0.0);
    rec.x_next.resize(d, 0.0);
    rec.dt = dt;

    if let Some((sigma, scalar)) = diffusion.additive_sigma() {
        // Constant σ: the Milstein correction vanishes identically.
        match scalar {
            Some(s) => {
                let cov = s * s;
                for k in 0..d {
                    rec.dx_raw[k] = -0.5 * cov * grad[k] * dt + s * dw[k];
                }
            }
            None => {
                let cov = diffusion.additive_cov().expect("additive cache");
                for k in 0..d {
                    let mut drift = 0.0;
                    for l in 0..d {
                        drift += cov[(k, l)] * grad[l];
                    }
                    let noise: f64 = (0..m).map(|j| sigma[(k, j)] * dw[j]).sum();
                    rec.dx_raw[k] = -0.5 * drift * dt + noise;
                }
            }
        }
    } else {
        for k in 0..d {
            let e = diffusion.diag_checked(x, k)?;
            rec.dx_raw[k] = match scheme {
                Correction::Euler => -0.5 * e.cov * grad[k] * dt + 0.5 * e.dcov * dt + e.sigma * dw[k],
                Correction::Milstein => {
                    // Δx = a dt + σ ΔW + ¼ Σ′ ΔW², a = −½ Σ V′ + ¼ Σ′
                    let a = -0.5 * e.cov * grad[k] + 0.25 * e.dcov;
                    a * dt + e.sigma * dw[k] + 0.25 * e.dcov * dw[k] * dw[k]
                }
            };
        }
    }
    for ((y, x0), dx) in rec.x_next.iter_mut().zip(x).zip(&rec.dx_raw) {
        *y = x0 + dx;
    }
    rec.wrapped = domain.wrap(&mut rec.x_next);
    if rec.x_next.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "step from {x:?} produced a non-finite state"
        )));
    }
    Ok(())
}

/// EM step with explicit increments `dw`.
pub fn em_step_into(
    model: &ModelSpec,
    x: &[f64],
    dt: f64,
    dw: &[f64],
    rec: &mut StepRecord,
    grad: &mut [f64],
) -> Result<()> {
    overdamped_step_into(model, x, dt, dw, rec, grad, Correction::Euler)
}

/// Milstein step with explicit increments `dw`.
pub fn milstein_step_into(
    model: &ModelSpec,
    x: &[f64],
    dt: f64,
    dw: &[f64],
    rec: &mut StepRecord,
    grad: &mut [f64],
) -> Result<()> {
    overdamped_step_into(model, x, dt, dw, rec, grad, Correction::Milstein)
}

pub fn em_step_with_noise(model: &ModelSpec, x: &[f64], dt: f64, dw: &[f64]) -> Result<StepRecord> {
    check_dt(dt)?;
    let mut rec = StepRecord::with_dims(x.len(), dw.len());
    let mut grad = vec![0.0; x.len()];
    em_step_into(model, x, dt, dw, &mut rec, &mut grad)?;
    Ok(rec)
}

pub fn milstein_step_with_noise(model: &ModelSpec, x: &[f64], dt: f64, dw: &[f64]) -> Result<StepRecord> {
    check_dt(dt)?;
    let mut rec = StepRecord::with_dims(x.len(), dw.len());
    let mut grad = vec![0.0; x.len()];
    milstein_step_into(model, x, dt, dw, &mut rec, &mut grad)?;
    Ok(rec)
}

/// `x_{i+1} = x − ½Σ∇V dt + ½∇Σ dt + σ ΔW`, `ΔW ~ N(0, dt I)`.
pub fn em_step<R: Rng + ?Sized>(model: &ModelSpec, x: &[f64], dt: f64, rng: &mut R) -> Result<StepRecord> {
    let mut dw = vec![0.0; overdamped_noise_dim(model)?];
    fill_normal(rng, dt, &mut dw);
    em_step_with_noise(model, x, dt, &dw)
}

/// EM plus the `½ σσ′ (ΔW² − dt)` correction, per coordinate.
pub fn milstein_step<R: Rng + ?Sized>(model: &ModelSpec, x: &[f64], dt: f64, rng: &mut R) -> Result<StepRecord> {
    let mut dw = vec![0.0; overdamped_noise_dim(model)?];
    fill_normal(rng, dt, &mut dw);
    milstein_step_with_noise(model, x, dt, &dw)
}

/// BBK step with explicit increments: `noise[..n]` is `ΔW_i`,
/// `noise[n..]` is `ΔW_{i+½}`, both `N(0, dt/2)`.
pub fn bbk_step_into(
    model: &ModelSpec,
    s: &PhaseState,
    dt: f64,
    noise: &[f64],
    rec: &mut PhaseStepRecord,
    grad: &mut [f64],
) -> Result<()> {
    let ModelSpec::Langevin {
        potential,
        langevin,
        domain,
    } = model
    else {
        return Err(Error::Unsupported {
            scheme: "bbk",
            what: "overdamped models".into(),
        });
    };
    let n = langevin.dof();
    if s.q.len() != n || s.p.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: s.q.len(),
        });
    }
    if noise.len() != 2 * n {
        return Err(Error::DimensionMismatch {
            expected: 2 * n,
            got: noise.len(),
        });
    }
    let (m, gamma, sigma) = (langevin.mass, langevin.gamma, langevin.sigma);
    let half = 0.5 * dt;
    let implicit = 1.0 / (1.0 + gamma * half / m);

    rec.prev.clone_from(s);
    rec.noise.clear();
    rec.noise.extend_from_slice(noise);
    rec.dt = dt;
    rec.dq_raw.resize(n, 0.0);
    rec.next.q.resize(n, 0.0);
    rec.next.p.resize(n, 0.0);

    potential.grad_into(&s.q, grad);
    // half-kick, then drift; p_{i+½} is parked in next.p
    for k in 0..n {
        let p_half = s.p[k] - grad[k] * half - gamma * s.p[k] * half / m + sigma * noise[k];
        rec.next.p[k] = p_half;
        rec.dq_raw[k] = p_half * dt / m;
        rec.next.q[k] = s.q[k] + rec.dq_raw[k];
    }
    rec.wrapped = domain.wrap(&mut rec.next.q);
    potential.grad_into(&rec.next.q, grad);
    // implicit half-kick in closed form
    for k in 0..n {
        rec.next.p[k] = implicit * (rec.next.p[k] - grad[k] * half + sigma * noise[n + k]);
    }
    if rec.next.q.iter().chain(&rec.next.p).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("BBK step produced a non-finite state".into()));
    }
    Ok(())
}

pub fn bbk_step_with_noise(model: &ModelSpec, s: &PhaseState, dt: f64, noise: &[f64]) -> Result<PhaseStepRecord> {
    check_dt(dt)?;
    let mut rec = PhaseStepRecord::with_dims(s.q.len());
    let mut grad = vec![0.0; s.q.len()];
    bbk_step_into(model, s, dt, noise, &mut rec, &mut grad)?;
    Ok(rec)
}

pub fn bbk_step<R: Rng + ?Sized>(model: &ModelSpec, s: &PhaseState, dt: f64, rng: &mut R) -> Result<PhaseStepRecord> {
    let mut noise = vec![0.0; 2 * s.q.len()];
    fill_normal(rng, 0.5 * dt, &mut noise);
    bbk_step_with_noise(model, s, dt, &noise)
}
