//! Per-step Gallavotti–Cohen functionals and the one-step transition
//! densities they are built from.
//!
//! All densities take the starting point and the raw displacement, so a
//! step that crossed a torus seam is scored by the distance actually
//! travelled. Forces and diffusion coefficients are evaluated at the wrapped
//! endpoints.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::integrate::{PhaseState, PhaseStepRecord, Scheme, StepRecord};
use crate::model::{DiagEval, DiffusionModel, LangevinSpec, ModelSpec, PotentialModel};

/// Which form of the per-step functional to accumulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GcVariant {
    /// Closed form with terms that telescope over a trajectory removed.
    BoundaryDropped,
    /// `log Π(forward) − log Π(reverse)` evaluated exactly.
    ExactLogRatio,
}

impl GcVariant {
    pub fn name(self) -> &'static str {
        match self {
            GcVariant::BoundaryDropped => "dropped",
            GcVariant::ExactLogRatio => "exact",
        }
    }

    /// The variant a scheme uses when none is requested.
    pub fn default_for(scheme: Scheme) -> Self {
        match scheme {
            Scheme::Em | Scheme::Bbk => GcVariant::BoundaryDropped,
            Scheme::Milstein => GcVariant::ExactLogRatio,
        }
    }
}

impl std::fmt::Display for GcVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for GcVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dropped" | "boundary-dropped" | "boundary_dropped" => Ok(GcVariant::BoundaryDropped),
            "exact" | "exact-log-ratio" | "exact_log_ratio" => Ok(GcVariant::ExactLogRatio),
            other => Err(Error::InvalidArgument(format!("unknown GC variant `{other}`"))),
        }
    }
}

/// Running sums for one chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcAccumulator {
    pub sum_w: f64,
    pub n_steps: u64,
    /// Steps whose reverse move has zero density; excluded from `sum_w`.
    pub n_singular: u64,
    pub n_wraps: u64,
    pub variant: GcVariant,
}

impl GcAccumulator {
    pub fn new(variant: GcVariant) -> Self {
        Self {
            sum_w: 0.0,
            n_steps: 0,
            n_singular: 0,
            n_wraps: 0,
            variant,
        }
    }

    /// Records one increment. Returns whether it was finite.
    pub fn push(&mut self, w: f64, wrapped: bool) -> bool {
        self.n_steps += 1;
        self.n_wraps += u64::from(wrapped);
        if w.is_finite() {
            self.sum_w += w;
            true
        } else {
            self.n_singular += 1;
            false
        }
    }

    pub fn merge(&mut self, other: &GcAccumulator) -> Result<()> {
        if self.variant != other.variant {
            return Err(Error::Merge(format!(
                "cannot merge {} into {}",
                other.variant, self.variant
            )));
        }
        self.sum_w += other.sum_w;
        self.n_steps += other.n_steps;
        self.n_singular += other.n_singular;
        self.n_wraps += other.n_wraps;
        Ok(())
    }

    /// `sum_w / (n_steps · dt)`.
    pub fn ep(&self, dt: f64) -> f64 {
        if self.n_steps == 0 {
            return f64::NAN;
        }
        self.sum_w / (self.n_steps as f64 * dt)
    }

    pub fn singular_fraction(&self) -> f64 {
        if self.n_steps == 0 {
            0.0
        } else {
            self.n_singular as f64 / self.n_steps as f64
        }
    }
}

/// Reusable scratch for evaluating increments along a chain.
pub struct GcEvaluator<'a> {
    model: &'a ModelSpec,
    scheme: Scheme,
    variant: GcVariant,
    g0: Vec<f64>,
    g1: Vec<f64>,
}

impl<'a> GcEvaluator<'a> {
    pub fn new(model: &'a ModelSpec, scheme: Scheme, variant: GcVariant) -> Result<Self> {
        match (model, scheme) {
            (ModelSpec::Overdamped { .. }, Scheme::Em | Scheme::Milstein) => {}
            (ModelSpec::Langevin { .. }, Scheme::Bbk) => {}
            (ModelSpec::Overdamped { .. }, Scheme::Bbk) => {
                return Err(Error::Unsupported {
                    scheme: "bbk",
                    what: "overdamped models".into(),
                })
            }
            (ModelSpec::Langevin { .. }, _) => {
                return Err(Error::Unsupported {
                    scheme: scheme.name(),
                    what: "underdamped Langevin models".into(),
                })
            }
        }
        if scheme == Scheme::Milstein && variant == GcVariant::BoundaryDropped && !is_additive(model) {
            return Err(Error::Unsupported {
                scheme: "milstein",
                what: "the boundary-dropped functional with multiplicative noise; use the exact log ratio".into(),
            });
        }
        let d = model.dim();
        Ok(Self {
            model,
            scheme,
            variant,
            g0: vec![0.0; d],
            g1: vec![0.0; d],
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn variant(&self) -> GcVariant {
        self.variant
    }

    /// Increment for an EM or Milstein step. May be `+∞` for Milstein.
    pub fn overdamped(&mut self, rec: &StepRecord) -> Result<f64> {
        let (potential, diffusion) = overdamped_parts(self.model)?;
        match (self.scheme, self.variant) {
            (Scheme::Em, GcVariant::BoundaryDropped) | (Scheme::Milstein, GcVariant::BoundaryDropped) => {
                em_dropped(potential, diffusion, rec, &mut self.g0, &mut self.g1)
            }
            (Scheme::Em, GcVariant::ExactLogRatio) => {
                let fwd = em_log_density(
                    potential,
                    diffusion,
                    &rec.x_prev,
                    &rec.dx_raw,
                    rec.dt,
                    &mut self.g0,
                    false,
                )?;
                let rev = em_log_density(
                    potential,
                    diffusion,
                    &rec.x_next,
                    &rec.dx_raw,
                    rec.dt,
                    &mut self.g1,
                    true,
                )?;
                Ok(fwd - rev)
            }
            (Scheme::Milstein, GcVariant::ExactLogRatio) => {
                let fwd = milstein_log_density(
                    potential,
                    diffusion,
                    &rec.x_prev,
                    &rec.dx_raw,
                    rec.dt,
                    &mut self.g0,
                    false,
                    true,
                )?;
                let rev = milstein_log_density(
                    potential,
                    diffusion,
                    &rec.x_next,
                    &rec.dx_raw,
                    rec.dt,
                    &mut self.g1,
                    true,
                    true,
                )?;
                Ok(log_ratio(fwd, rev))
            }
            (Scheme::Bbk, _) => Err(Error::Unsupported {
                scheme: "bbk",
                what: "overdamped step records".into(),
            }),
        }
    }

    /// Increment for a BBK step.
    pub fn phase(&mut self, rec: &PhaseStepRecord) -> Result<f64> {
        let ModelSpec::Langevin {
            potential, langevin, ..
        } = self.model
        else {
            return Err(Error::Unsupported {
                scheme: "bbk",
                what: "overdamped models".into(),
            });
        };
        match self.variant {
            GcVariant::BoundaryDropped => bbk_dropped(potential, langevin, rec, &mut self.g0, &mut self.g1),
            GcVariant::ExactLogRatio => {
                let fwd = bbk_log_density(
                    potential,
                    langevin,
                    &rec.prev,
                    &rec.dq_raw,
                    &rec.next,
                    rec.dt,
                    &mut self.g0,
                    false,
                )?;
                let rev = bbk_log_density(
                    potential,
                    langevin,
                    &rec.next.flipped(),
                    &rec.dq_raw,
                    &rec.prev.flipped(),
                    rec.dt,
                    &mut self.g1,
                    true,
                )?;
                Ok(fwd - rev)
            }
        }
    }
}

fn is_additive(model: &ModelSpec) -> bool {
    matches!(model, ModelSpec::Overdamped { diffusion, .. } if diffusion.is_additive())
}

fn overdamped_parts(model: &ModelSpec) -> Result<(&PotentialModel, &DiffusionModel)> {
    match model {
        ModelSpec::Overdamped {
            potential, diffusion, ..
        } => Ok((potential, diffusion)),
        ModelSpec::Langevin { .. } => Err(Error::Unsupported {
            scheme: "em/milstein",
            what: "underdamped Langevin models".into(),
        }),
    }
}

fn check_len(d: usize, v: &[f64]) -> Result<()> {
    if v.len() == d {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: d,
            got: v.len(),
        })
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")))
    }
}

/// `fwd − rev` with `−∞` reverse mapped to `+∞` and an impossible forward
/// move mapped to NaN.
fn log_ratio(fwd: f64, rev: f64) -> f64 {
    if fwd == f64::NEG_INFINITY {
        f64::NAN
    } else if rev == f64::NEG_INFINITY {
        f64::INFINITY
    } else {
        fwd - rev
    }
}

fn em_dropped(
    potential: &PotentialModel,
    diffusion: &DiffusionModel,
    rec: &StepRecord,
    g0: &mut [f64],
    g1: &mut [f64],
) -> Result<f64> {
    let d = potential.dim;
    check_len(d, &rec.x_prev)?;
    check_len(d, &rec.x_next)?;
    check_len(d, &rec.dx_raw)?;
    potential.grad_into(&rec.x_prev, g0);
    potential.grad_into(&rec.x_next, g1);
    let dt = rec.dt;
    let mut w = 0.0;
    if diffusion.is_additive() {
        for k in 0..d {
            w -= 0.5 * rec.dx_raw[k] * (g0[k] + g1[k]);
        }
        return Ok(w);
    }
    for k in 0..d {
        let a = diffusion.diag_checked(&rec.x_prev, k)?;
        let b = diffusion.diag_checked(&rec.x_next, k)?;
        let dx = rec.dx_raw[k];
        w += -0.5 * dx * (g0[k] + g1[k])
            + 0.5 * dx * (b.dcov / b.cov + a.dcov / a.cov)
            + dx * dx / (2.0 * dt) * (1.0 / b.cov - 1.0 / a.cov);
    }
    Ok(w)
}

/// EM density of moving from `x` by `dx` (or by `−dx` when `reverse`).
fn em_log_density(
    potential: &PotentialModel,
    diffusion: &DiffusionModel,
    x: &[f64],
    dx: &[f64],
    dt: f64,
    g: &mut [f64],
    reverse: bool,
) -> Result<f64> {
    let d = potential.dim;
    check_len(d, x)?;
    check_len(d, dx)?;
    check_dt(dt)?;
    let sign = if reverse { -1.0 } else { 1.0 };
    potential.grad_into(x, g);
    let log_2pi_dt = (2.0 * PI * dt).ln();
    if let Some((_, scalar)) = diffusion.additive_sigma() {
        let log_norm = 0.5 * d as f64 * log_2pi_dt;
        if let Some(s) = scalar {
            let cov = s * s;
            let mut q = 0.0;
            for k in 0..d {
                let r = sign * dx[k] + 0.5 * cov * g[k] * dt;
                q += r * r;
            }
            return Ok(-log_norm - 0.5 * d as f64 * cov.ln() - q / (2.0 * dt * cov));
        }
        let cov = diffusion.additive_cov().expect("additive cache");
        let (cov_inv, log_det) = diffusion.additive_inverse().expect("additive cache");
        let r: Vec<f64> = (0..d)
            .map(|k| sign * dx[k] + 0.5 * dt * (0..d).map(|l| cov[(k, l)] * g[l]).sum::<f64>())
            .collect();
        let mut q = 0.0;
        for k in 0..d {
            for l in 0..d {
                q += r[k] * cov_inv[(k, l)] * r[l];
            }
        }
        return Ok(-log_norm - 0.5 * log_det - q / (2.0 * dt));
    }
    let mut out = 0.0;
    for k in 0..d {
        let e = diffusion.diag_checked(x, k)?;
        let r = sign * dx[k] + 0.5 * e.cov * g[k] * dt - 0.5 * e.dcov * dt;
        out += -0.5 * (log_2pi_dt + e.cov.ln()) - r * r / (2.0 * dt * e.cov);
    }
    Ok(out)
}

/// Per-coordinate Milstein density of a displacement `u` given the local
/// coefficients. `V′` enters through `grad_k`.
pub(crate) fn milstein_coordinate_log_density(e: &DiagEval, grad_k: f64, dx: f64, dt: f64, both_branches: bool) -> f64 {
    let a = -0.5 * e.cov * grad_k + 0.25 * e.dcov;
    let u = dx - a * dt;
    let z = e.cov + e.dcov * u;
    if !(z >= 0.0) {
        return f64::NEG_INFINITY;
    }
    let rz = z.sqrt();
    let s = e.sigma;
    let signed_rz = if s < 0.0 { -rz } else { rz };
    // root of ¼Σ′w² + σw − u = 0 that stays finite as Σ′ → 0
    let w1 = 2.0 * u / (s + signed_rz);
    let e1 = -w1 * w1 / (2.0 * dt);
    let log_jac = -0.5 * (2.0 * PI * dt * z).ln();
    if !both_branches || e.dcov.abs() <= 1e-12 {
        return log_jac + e1;
    }
    let w2 = -(s + signed_rz) / (0.5 * e.dcov);
    let e2 = -w2 * w2 / (2.0 * dt);
    let hi = e1.max(e2);
    log_jac + hi + ((e1 - hi).exp() + (e2 - hi).exp()).ln()
}

#[allow(clippy::too_many_arguments)]
fn milstein_log_density(
    potential: &PotentialModel,
    diffusion: &DiffusionModel,
    x: &[f64],
    dx: &[f64],
    dt: f64,
    g: &mut [f64],
    reverse: bool,
    both_branches: bool,
) -> Result<f64> {
    if diffusion.is_additive() {
        return em_log_density(potential, diffusion, x, dx, dt, g, reverse);
    }
    let d = potential.dim;
    check_len(d, x)?;
    check_len(d, dx)?;
    check_dt(dt)?;
    let sign = if reverse { -1.0 } else { 1.0 };
    potential.grad_into(x, g);
    let mut out = 0.0;
    for k in 0..d {
        let e = diffusion.diag_checked(x, k)?;
        out += milstein_coordinate_log_density(&e, g[k], sign * dx[k], dt, both_branches);
        if out == f64::NEG_INFINITY {
            break;
        }
    }
    Ok(out)
}

fn bbk_dropped(
    potential: &PotentialModel,
    l: &LangevinSpec,
    rec: &PhaseStepRecord,
    g0: &mut [f64],
    g1: &mut [f64],
) -> Result<f64> {
    let n = l.dof();
    for v in [&rec.prev.q, &rec.prev.p, &rec.next.q, &rec.next.p, &rec.dq_raw] {
        check_len(n, v)?;
    }
    check_dt(rec.dt)?;
    potential.grad_into(&rec.prev.q, g0);
    potential.grad_into(&rec.next.q, g1);
    let dt = rec.dt;
    let c = dt * dt / (2.0 * l.mass);
    let mut acc = 0.0;
    for k in 0..n {
        let dp = rec.next.p[k] - rec.prev.p[k];
        acc += dp * rec.dq_raw[k] - c * (g0[k] * rec.prev.p[k] + g1[k] * rec.next.p[k]);
    }
    Ok(l.beta / dt * acc)
}

/// BBK density of `s → s1` with position displacement `dq` (`−dq` when
/// `reverse`). Forces at `s.q` and `s1.q`.
#[allow(clippy::too_many_arguments)]
fn bbk_log_density(
    potential: &PotentialModel,
    l: &LangevinSpec,
    s: &PhaseState,
    dq: &[f64],
    s1: &PhaseState,
    dt: f64,
    g: &mut [f64],
    reverse: bool,
) -> Result<f64> {
    let n = l.dof();
    for v in [&s.q, &s.p, &s1.q, &s1.p, dq] {
        check_len(n, v)?;
    }
    check_dt(dt)?;
    if !(l.sigma > 0.0) {
        return Err(Error::InvalidModel("BBK density needs positive noise".into()));
    }
    let sign = if reverse { -1.0 } else { 1.0 };
    let (m, gamma, sigma2) = (l.mass, l.gamma, l.sigma * l.sigma);
    let half = 0.5 * dt;
    let damp = 1.0 + gamma * half / m;
    let var_q = sigma2 * dt * dt * dt / (2.0 * m * m);
    let var_p = sigma2 * half;
    let nf = n as f64;

    potential.grad_into(&s.q, g);
    let mut qq = 0.0;
    for k in 0..n {
        let mean = dt / m * (s.p[k] - g[k] * half - gamma * s.p[k] * half / m);
        let r = sign * dq[k] - mean;
        qq += r * r;
    }
    potential.grad_into(&s1.q, g);
    let mut qp = 0.0;
    for k in 0..n {
        let r = damp * s1.p[k] - (m * sign * dq[k] / dt - g[k] * half);
        qp += r * r;
    }
    let log_q = -0.5 * nf * (2.0 * PI * var_q).ln() - qq / (2.0 * var_q);
    let log_p = nf * damp.ln() - 0.5 * nf * (2.0 * PI * var_p).ln() - qp / (2.0 * var_p);
    Ok(log_q + log_p)
}

/// EM transition log density `log Π(x → y)` over `ℝ^d`.
pub fn log_density_em(model: &ModelSpec, x: &[f64], y: &[f64], dt: f64) -> Result<f64> {
    let (potential, diffusion) = overdamped_parts(model)?;
    check_len(potential.dim, y)?;
    let dx: Vec<f64> = y.iter().zip(x).map(|(b, a)| b - a).collect();
    let mut g = vec![0.0; potential.dim];
    em_log_density(potential, diffusion, x, &dx, dt, &mut g, false)
}

/// Milstein transition log density; `−∞` where `y` is unreachable.
pub fn log_density_milstein(model: &ModelSpec, x: &[f64], y: &[f64], dt: f64) -> Result<f64> {
    let (potential, diffusion) = overdamped_parts(model)?;
    check_len(potential.dim, y)?;
    let dx: Vec<f64> = y.iter().zip(x).map(|(b, a)| b - a).collect();
    let mut g = vec![0.0; potential.dim];
    milstein_log_density(potential, diffusion, x, &dx, dt, &mut g, false, true)
}

/// BBK transition log density over phase space.
pub fn log_density_bbk(model: &ModelSpec, s: &PhaseState, s1: &PhaseState, dt: f64) -> Result<f64> {
    let ModelSpec::Langevin {
        potential, langevin, ..
    } = model
    else {
        return Err(Error::Unsupported {
            scheme: "bbk",
            what: "overdamped models".into(),
        });
    };
    check_len(langevin.dof(), &s1.q)?;
    let dq: Vec<f64> = s1.q.iter().zip(&s.q).map(|(b, a)| b - a).collect();
    let mut g = vec![0.0; potential.dim];
    bbk_log_density(potential, langevin, s, &dq, s1, dt, &mut g, false)
}

/// Boundary-dropped EM increment.
pub fn gc_increment_em(model: &ModelSpec, rec: &StepRecord) -> Result<f64> {
    GcEvaluator::new(model, Scheme::Em, GcVariant::BoundaryDropped)?.overdamped(rec)
}

/// Exact EM log ratio `log Π(x → x′) − log Π(x′ → x)`.
pub fn em_exact_log_ratio(model: &ModelSpec, rec: &StepRecord) -> Result<f64> {
    GcEvaluator::new(model, Scheme::Em, GcVariant::ExactLogRatio)?.overdamped(rec)
}

/// The state function that separates the exact EM log ratio from the
/// boundary-dropped increment:
/// `exact(x → y) = w(x → y) + B(y) − B(x)` with
/// `B = log Z + (dt/2) uᵀ Σ⁻¹ u`, `u = ½Σ∇V − ½∇·Σ`.
pub fn em_boundary_term(model: &ModelSpec, x: &[f64], dt: f64) -> Result<f64> {
    let (potential, diffusion) = overdamped_parts(model)?;
    let d = potential.dim;
    check_len(d, x)?;
    check_dt(dt)?;
    let mut g = vec![0.0; d];
    potential.grad_into(x, &mut g);
    let log_2pi_dt = (2.0 * PI * dt).ln();
    if diffusion.is_additive() {
        let cov = diffusion.additive_cov().expect("additive cache");
        let (_, log_det) = diffusion.additive_inverse().expect("additive cache");
        // u = ½Σ∇V, so uᵀΣ⁻¹u = ¼ ∇VᵀΣ∇V
        let mut q = 0.0;
        for k in 0..d {
            for l in 0..d {
                q += g[k] * cov[(k, l)] * g[l];
            }
        }
        return Ok(0.5 * d as f64 * log_2pi_dt + 0.5 * log_det + dt / 8.0 * q);
    }
    let mut out = 0.0;
    for (k, gk) in g.iter().enumerate() {
        let e = diffusion.diag_checked(x, k)?;
        let u = 0.5 * e.cov * gk - 0.5 * e.dcov;
        out += 0.5 * (log_2pi_dt + e.cov.ln()) + 0.5 * dt * u * u / e.cov;
    }
    Ok(out)
}

/// Exact Milstein log ratio summing both preimage branches. `+∞` when the
/// reverse move is unreachable.
pub fn gc_increment_milstein(model: &ModelSpec, rec: &StepRecord) -> Result<f64> {
    GcEvaluator::new(model, Scheme::Milstein, GcVariant::ExactLogRatio)?.overdamped(rec)
}

/// Log ratio keeping only the branch that survives as `Σ′ → 0`. Kept for
/// comparison with [`gc_increment_milstein`]; not used by the estimator.
pub fn milstein_dominant_branch_ratio(model: &ModelSpec, rec: &StepRecord) -> Result<f64> {
    let (potential, diffusion) = overdamped_parts(model)?;
    let mut g = vec![0.0; potential.dim];
    let fwd = milstein_log_density(
        potential,
        diffusion,
        &rec.x_prev,
        &rec.dx_raw,
        rec.dt,
        &mut g,
        false,
        false,
    )?;
    let rev = milstein_log_density(
        potential,
        diffusion,
        &rec.x_next,
        &rec.dx_raw,
        rec.dt,
        &mut g,
        true,
        false,
    )?;
    Ok(log_ratio(fwd, rev))
}

/// Boundary-dropped BBK increment
/// `(β/dt)[Δp·Δq − (dt²/2m)(∇V(q)·p + ∇V(q′)·p′)]`.
pub fn gc_increment_bbk(model: &ModelSpec, rec: &PhaseStepRecord) -> Result<f64> {
    GcEvaluator::new(model, Scheme::Bbk, GcVariant::BoundaryDropped)?.phase(rec)
}

/// `log Π((q,p) → (q′,p′)) − log Π((q′,−p′) → (q,−p))`.
pub fn bbk_exact_log_ratio(model: &ModelSpec, rec: &PhaseStepRecord) -> Result<f64> {
    GcEvaluator::new(model, Scheme::Bbk, GcVariant::ExactLogRatio)?.phase(rec)
}
