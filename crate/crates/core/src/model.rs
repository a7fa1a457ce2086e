//! SDE systems: potentials, diffusion coefficients, simulation domains and
//! the underdamped Langevin parameter set.
//!
//! Overdamped models follow
//!
//! ```text
//! dX = -½ Σ(X) ∇V(X) dt + ½ ∇·Σ(X) dt + σ(X) dB,    Σ = σ σᵀ
//! ```
//!
//! whose invariant measure is `exp(-V) dx / Z`. Multiplicative noise is
//! diagonal: the same scalar diffusion acts on every coordinate.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type FieldFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// User-supplied potential. `grad` writes ∇V(x) into its second argument.
#[derive(Clone)]
pub struct CustomPotential {
    pub label: String,
    pub value: FieldFn,
    pub grad: GradFn,
}

#[derive(Clone)]
pub enum PotentialKind {
    /// `β (|x|⁴/4 − |x|²/2)`
    QuarticRadial {
        beta: f64,
    },
    /// `scale · |x|²/2`
    Quadratic {
        scale: f64,
    },
    Custom(CustomPotential),
}

#[derive(Clone)]
pub struct PotentialModel {
    pub kind: PotentialKind,
    pub dim: usize,
}

impl PotentialModel {
    pub fn quartic_radial(beta: f64, dim: usize) -> Self {
        Self {
            kind: PotentialKind::QuarticRadial { beta },
            dim,
        }
    }

    pub fn quadratic(scale: f64, dim: usize) -> Self {
        Self {
            kind: PotentialKind::Quadratic { scale },
            dim,
        }
    }

    pub fn custom(potential: CustomPotential, dim: usize) -> Self {
        Self {
            kind: PotentialKind::Custom(potential),
            dim,
        }
    }

    /// Inverse temperature carried by the potential, if any.
    pub fn beta(&self) -> Option<f64> {
        match self.kind {
            PotentialKind::QuarticRadial { beta } => Some(beta),
            _ => None,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match &self.kind {
            PotentialKind::QuarticRadial { beta } => {
                let r2 = norm_sq(x);
                beta * (0.25 * r2 * r2 - 0.5 * r2)
            }
            PotentialKind::Quadratic { scale } => 0.5 * scale * norm_sq(x),
            PotentialKind::Custom(c) => (c.value)(x),
        }
    }

    pub fn grad_into(&self, x: &[f64], g: &mut [f64]) {
        match &self.kind {
            PotentialKind::QuarticRadial { beta } => {
                let f = beta * (norm_sq(x) - 1.0);
                for (gi, xi) in g.iter_mut().zip(x) {
                    *gi = f * xi;
                }
            }
            PotentialKind::Quadratic { scale } => {
                for (gi, xi) in g.iter_mut().zip(x) {
                    *gi = scale * xi;
                }
            }
            PotentialKind::Custom(c) => (c.grad)(x, g),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn label(&self) -> String {
        match &self.kind {
            PotentialKind::QuarticRadial { beta } => {
                format!("quartic_radial[beta={beta};d={}]", self.dim)
            }
            PotentialKind::Quadratic { scale } => format!("quadratic[scale={scale};d={}]", self.dim),
            PotentialKind::Custom(c) => format!("custom[{};d={}]", c.label, self.dim),
        }
    }
}

/// Callback bundle for a scalar state-dependent diffusion. `cov` must equal
/// `sigma²`; `dcov` and `d2cov` are its first two derivatives.
#[derive(Clone)]
pub struct ScalarDiffusion {
    pub label: String,
    pub sigma: ScalarFn,
    pub dsigma: ScalarFn,
    pub cov: ScalarFn,
    pub dcov: ScalarFn,
    pub d2cov: ScalarFn,
}

#[derive(Clone)]
pub enum DiffusionKind {
    /// Constant `d × m` matrix σ.
    Additive { sigma: DMatrix<f64> },
    /// Scalar multiplicative diffusion applied to each coordinate.
    Multiplicative(ScalarDiffusion),
    /// `Σ_ε(x) = 1/(1 + ε x²)` per coordinate.
    SigmaEps { eps: f64 },
}

/// Σ and its derivatives for one coordinate of a diagonal diffusion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagEval {
    pub sigma: f64,
    pub dsigma: f64,
    pub cov: f64,
    pub dcov: f64,
    pub d2cov: f64,
}

#[derive(Clone)]
struct AdditiveCache {
    m: usize,
    cov: DMatrix<f64>,
    cov_inv: DMatrix<f64>,
    log_det: f64,
    /// σ is a multiple of the identity; lets the hot loop skip the mat-vec.
    scalar: Option<f64>,
}

#[derive(Clone)]
pub struct DiffusionModel {
    pub kind: DiffusionKind,
    /// Ellipticity floor `M⁻¹`: every evaluated Σ must stay at or above it.
    pub floor: f64,
    additive: Option<AdditiveCache>,
}

pub const DEFAULT_ELLIPTICITY_FLOOR: f64 = 1e-8;

impl DiffusionModel {
    pub fn additive(sigma: DMatrix<f64>) -> Result<Self> {
        Self::additive_with_floor(sigma, DEFAULT_ELLIPTICITY_FLOOR)
    }

    /// `σ = s · I_d`.
    pub fn isotropic(s: f64, dim: usize) -> Result<Self> {
        Self::additive(DMatrix::from_diagonal_element(dim, dim, s))
    }

    pub fn additive_with_floor(sigma: DMatrix<f64>, floor: f64) -> Result<Self> {
        check_floor(floor)?;
        let cov = &sigma * sigma.transpose();
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidModel("additive Σ = σσᵀ is not positive definite".into()))?;
        let min_eig = cov.symmetric_eigenvalues().min();
        if min_eig < floor {
            return Err(Error::SingularDiffusion {
                x: vec![],
                value: min_eig,
                floor,
            });
        }
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let cov_inv = chol.inverse();
        let scalar = if sigma.is_square() {
            let s = sigma[(0, 0)];
            let iso = sigma.iter().enumerate().all(|(k, v)| {
                if k % (sigma.nrows() + 1) == 0 {
                    *v == s
                } else {
                    *v == 0.0
                }
            });
            iso.then_some(s)
        } else {
            None
        };
        let m = sigma.ncols();
        Ok(Self {
            kind: DiffusionKind::Additive { sigma },
            floor,
            additive: Some(AdditiveCache {
                m,
                cov,
                cov_inv,
                log_det,
                scalar,
            }),
        })
    }

    pub fn sigma_eps(eps: f64) -> Result<Self> {
        Self::sigma_eps_with_floor(eps, DEFAULT_ELLIPTICITY_FLOOR)
    }

    pub fn sigma_eps_with_floor(eps: f64, floor: f64) -> Result<Self> {
        check_floor(floor)?;
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::InvalidModel(format!("sigma_eps needs ε ≥ 0, got {eps}")));
        }
        Ok(Self {
            kind: DiffusionKind::SigmaEps { eps },
            floor,
            additive: None,
        })
    }

    pub fn multiplicative(bundle: ScalarDiffusion, floor: f64) -> Result<Self> {
        check_floor(floor)?;
        Ok(Self {
            kind: DiffusionKind::Multiplicative(bundle),
            floor,
            additive: None,
        })
    }

    pub fn is_additive(&self) -> bool {
        matches!(self.kind, DiffusionKind::Additive { .. })
    }

    /// Dimension of the driving Brownian motion for a state of dimension `d`.
    pub fn noise_dim(&self, d: usize) -> usize {
        self.additive.as_ref().map_or(d, |a| a.m)
    }

    /// Per-coordinate evaluation for diagonal kinds. Additive kinds return
    /// `None`.
    pub fn diag(&self, x: f64) -> Option<DiagEval> {
        match &self.kind {
            DiffusionKind::Additive { .. } => None,
            DiffusionKind::SigmaEps { eps } => Some(sigma_eps_eval(*eps, x)),
            DiffusionKind::Multiplicative(b) => Some(DiagEval {
                sigma: (b.sigma)(x),
                dsigma: (b.dsigma)(x),
                cov: (b.cov)(x),
                dcov: (b.dcov)(x),
                d2cov: (b.d2cov)(x),
            }),
        }
    }

    /// Like [`Self::diag`] but enforces the ellipticity floor.
    pub(crate) fn diag_checked(&self, x: &[f64], k: usize) -> Result<DiagEval> {
        let e = self.diag(x[k]).expect("diagonal diffusion");
        if !(e.cov >= self.floor) {
            return Err(Error::SingularDiffusion {
                x: x.to_vec(),
                value: e.cov,
                floor: self.floor,
            });
        }
        Ok(e)
    }

    pub(crate) fn additive_sigma(&self) -> Option<(&DMatrix<f64>, Option<f64>)> {
        match (&self.kind, &self.additive) {
            (DiffusionKind::Additive { sigma }, Some(c)) => Some((sigma, c.scalar)),
            _ => None,
        }
    }

    pub(crate) fn additive_cov(&self) -> Option<&DMatrix<f64>> {
        self.additive.as_ref().map(|c| &c.cov)
    }

    pub(crate) fn additive_inverse(&self) -> Option<(&DMatrix<f64>, f64)> {
        self.additive.as_ref().map(|c| (&c.cov_inv, c.log_det))
    }

    fn label(&self) -> String {
        match &self.kind {
            DiffusionKind::Additive { sigma } => match self.additive.as_ref().and_then(|c| c.scalar) {
                Some(s) => format!("additive[sigma={s}]"),
                None => format!("additive[{}x{}]", sigma.nrows(), sigma.ncols()),
            },
            DiffusionKind::SigmaEps { eps } => format!("sigma_eps[eps={eps}]"),
            DiffusionKind::Multiplicative(b) => format!("multiplicative[{}]", b.label),
        }
    }
}

fn check_floor(floor: f64) -> Result<()> {
    if floor > 0.0 && floor.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidModel(format!(
            "ellipticity floor must be positive, got {floor}"
        )))
    }
}

pub(crate) fn sigma_eps_eval(eps: f64, x: f64) -> DiagEval {
    let u = 1.0 + eps * x * x;
    let cov = 1.0 / u;
    let sigma = cov.sqrt();
    let dcov = -2.0 * eps * x / (u * u);
    let d2cov = -2.0 * eps / (u * u) + 8.0 * eps * eps * x * x / (u * u * u);
    DiagEval {
        sigma,
        dsigma: dcov / (2.0 * sigma),
        cov,
        dcov,
        d2cov,
    }
}

/// Full diffusion evaluation at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionEval {
    /// σ(x), row-major `d × m`.
    pub sigma: Vec<f64>,
    pub m: usize,
    /// Σ(x), row-major `d × d`.
    pub cov: Vec<f64>,
    pub cov_inv: Vec<f64>,
    /// `∂ₖ Σₖₖ` per coordinate (zero for additive noise).
    pub dcov: Vec<f64>,
    pub d2cov: Vec<f64>,
    /// `log[(2π)^{m/2} |det Σ|^{1/2}]`
    pub log_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    Euclidean,
    /// Periodic box `[-L, L)` in every coordinate.
    Torus {
        half_width: f64,
    },
}

impl Domain {
    pub fn torus(half_width: f64) -> Result<Self> {
        if half_width > 0.0 && half_width.is_finite() {
            Ok(Domain::Torus { half_width })
        } else {
            Err(Error::InvalidModel(format!(
                "torus half-width must be positive, got {half_width}"
            )))
        }
    }

    /// Wraps `x` in place; returns whether any coordinate moved.
    pub fn wrap(&self, x: &mut [f64]) -> bool {
        match *self {
            Domain::Euclidean => false,
            Domain::Torus { half_width } => {
                let period = 2.0 * half_width;
                let mut moved = false;
                for xi in x.iter_mut() {
                    if *xi < -half_width || *xi >= half_width {
                        let mut w = *xi - period * ((*xi + half_width) / period).floor();
                        // floor rounding can land exactly on +L
                        if w >= half_width {
                            w -= period;
                        }
                        *xi = w;
                        moved = true;
                    }
                }
                moved
            }
        }
    }

    fn label(&self) -> String {
        match self {
            Domain::Euclidean => "euclidean".into(),
            Domain::Torus { half_width } => format!("torus[L={half_width}]"),
        }
    }
}

/// Underdamped Langevin parameters with `M = m I`, `γ I`, `σ I`.
/// Construction enforces fluctuation–dissipation `σ² = 2γ/β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LangevinSpec {
    pub particles: usize,
    pub dim: usize,
    pub mass: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub beta: f64,
}

impl LangevinSpec {
    /// β derived from σ.
    pub fn from_gamma_sigma(particles: usize, dim: usize, mass: f64, gamma: f64, sigma: f64) -> Result<Self> {
        Self::check_common(particles, dim, mass, gamma)?;
        if !(sigma > 0.0) {
            return Err(Error::InvalidModel("Langevin σ must be positive".into()));
        }
        Ok(Self {
            particles,
            dim,
            mass,
            gamma,
            sigma,
            beta: 2.0 * gamma / (sigma * sigma),
        })
    }

    /// σ derived from β.
    pub fn from_gamma_beta(particles: usize, dim: usize, mass: f64, gamma: f64, beta: f64) -> Result<Self> {
        Self::check_common(particles, dim, mass, gamma)?;
        if !(beta > 0.0) {
            return Err(Error::InvalidModel("Langevin β must be positive".into()));
        }
        Ok(Self {
            particles,
            dim,
            mass,
            gamma,
            sigma: (2.0 * gamma / beta).sqrt(),
            beta,
        })
    }

    /// γ derived from σ and β.
    pub fn from_sigma_beta(particles: usize, dim: usize, mass: f64, sigma: f64, beta: f64) -> Result<Self> {
        if !(sigma > 0.0 && beta > 0.0) {
            return Err(Error::InvalidModel("Langevin σ and β must be positive".into()));
        }
        let gamma = 0.5 * beta * sigma * sigma;
        Self::check_common(particles, dim, mass, gamma)?;
        Ok(Self {
            particles,
            dim,
            mass,
            gamma,
            sigma,
            beta,
        })
    }

    fn check_common(particles: usize, dim: usize, mass: f64, gamma: f64) -> Result<()> {
        if particles == 0 || dim == 0 {
            return Err(Error::InvalidModel("Langevin system needs N ≥ 1 and d ≥ 1".into()));
        }
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidModel(format!("mass must be positive, got {mass}")));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidModel(format!("friction must be positive, got {gamma}")));
        }
        Ok(())
    }

    /// Number of momentum degrees of freedom, `N·d`.
    pub fn dof(&self) -> usize {
        self.particles * self.dim
    }
}

#[derive(Clone)]
pub enum ModelSpec {
    Overdamped {
        potential: PotentialModel,
        diffusion: DiffusionModel,
        domain: Domain,
    },
    Langevin {
        potential: PotentialModel,
        langevin: LangevinSpec,
        domain: Domain,
    },
}

impl ModelSpec {
    pub fn overdamped(potential: PotentialModel, diffusion: DiffusionModel, domain: Domain) -> Result<Self> {
        if potential.dim == 0 {
            return Err(Error::InvalidModel("dimension must be positive".into()));
        }
        if let DiffusionKind::Additive { sigma } = &diffusion.kind {
            if sigma.nrows() != potential.dim {
                return Err(Error::DimensionMismatch {
                    expected: potential.dim,
                    got: sigma.nrows(),
                });
            }
        }
        Ok(ModelSpec::Overdamped {
            potential,
            diffusion,
            domain,
        })
    }

    pub fn langevin(potential: PotentialModel, langevin: LangevinSpec, domain: Domain) -> Result<Self> {
        if potential.dim != langevin.dof() {
            return Err(Error::DimensionMismatch {
                expected: langevin.dof(),
                got: potential.dim,
            });
        }
        Ok(ModelSpec::Langevin {
            potential,
            langevin,
            domain,
        })
    }

    pub fn potential(&self) -> &PotentialModel {
        match self {
            ModelSpec::Overdamped { potential, .. } | ModelSpec::Langevin { potential, .. } => potential,
        }
    }

    pub fn domain(&self) -> Domain {
        match self {
            ModelSpec::Overdamped { domain, .. } | ModelSpec::Langevin { domain, .. } => *domain,
        }
    }

    /// Position-space dimension.
    pub fn dim(&self) -> usize {
        self.potential().dim
    }

    pub fn label(&self) -> String {
        match self {
            ModelSpec::Overdamped {
                potential,
                diffusion,
                domain,
            } => {
                format!("{}/{}/{}", potential.label(), diffusion.label(), domain.label())
            }
            ModelSpec::Langevin {
                potential,
                langevin,
                domain,
            } => format!(
                "{}/langevin[N={};d={};m={};gamma={};sigma={}]/{}",
                potential.label(),
                langevin.particles,
                langevin.dim,
                langevin.mass,
                langevin.gamma,
                langevin.sigma,
                domain.label()
            ),
        }
    }
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// `V(x)` and `∇V(x)`.
pub fn eval_potential(model: &ModelSpec, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let pot = model.potential();
    pot.check_dim(x)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite position {x:?}")));
    }
    let mut g = vec![0.0; pot.dim];
    pot.grad_into(x, &mut g);
    Ok((pot.value(x), g))
}

pub fn eval_diffusion(model: &ModelSpec, x: &[f64]) -> Result<DiffusionEval> {
    let ModelSpec::Overdamped {
        potential, diffusion, ..
    } = model
    else {
        return Err(Error::InvalidModel("eval_diffusion needs an overdamped model".into()));
    };
    potential.check_dim(x)?;
    let d = potential.dim;
    if let (Some((sigma, _)), Some(c)) = (diffusion.additive_sigma(), diffusion.additive.as_ref()) {
        return Ok(DiffusionEval {
            sigma: row_major(sigma),
            m: c.m,
            cov: row_major(&c.cov),
            cov_inv: row_major(&c.cov_inv),
            dcov: vec![0.0; d],
            d2cov: vec![0.0; d],
            log_norm: 0.5 * (d as f64) * (2.0 * std::f64::consts::PI).ln() + 0.5 * c.log_det,
        });
    }
    let mut out = DiffusionEval {
        sigma: vec![0.0; d * d],
        m: d,
        cov: vec![0.0; d * d],
        cov_inv: vec![0.0; d * d],
        dcov: vec![0.0; d],
        d2cov: vec![0.0; d],
        log_norm: 0.5 * (d as f64) * (2.0 * std::f64::consts::PI).ln(),
    };
    for k in 0..d {
        let e = diffusion.diag_checked(x, k)?;
        out.sigma[k * d + k] = e.sigma;
        out.cov[k * d + k] = e.cov;
        out.cov_inv[k * d + k] = 1.0 / e.cov;
        out.dcov[k] = e.dcov;
        out.d2cov[k] = e.d2cov;
        out.log_norm += 0.5 * e.cov.ln();
    }
    Ok(out)
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            v.push(m[(i, j)]);
        }
    }
    v
}

pub(crate) fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Worst disagreement between one analytic derivative and its central
/// finite difference. `max_rel` covers points where the reference magnitude
/// exceeds [`DerivativeReport::ZERO_TOL`]; `max_abs` covers the rest.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DerivativeError {
    pub max_rel: f64,
    pub max_abs: f64,
    pub checked: usize,
}

impl DerivativeError {
    fn record(&mut self, analytic: f64, reference: f64) {
        let diff = (analytic - reference).abs();
        if reference.abs() > DerivativeReport::ZERO_TOL {
            self.max_rel = self.max_rel.max(diff / reference.abs());
        } else {
            self.max_abs = self.max_abs.max(diff);
        }
        self.checked += 1;
    }

    pub fn max_error(&self) -> f64 {
        self.max_rel.max(self.max_abs)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DerivativeReport {
    pub grad: DerivativeError,
    pub dcov: DerivativeError,
    pub d2cov: DerivativeError,
    pub dsigma: DerivativeError,
}

impl DerivativeReport {
    pub const ZERO_TOL: f64 = 1e-2;

    pub fn max_error(&self) -> f64 {
        [self.grad, self.dcov, self.d2cov, self.dsigma]
            .iter()
            .map(DerivativeError::max_error)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, rel_tol: f64, abs_tol: f64) -> bool {
        [self.grad, self.dcov, self.d2cov, self.dsigma]
            .iter()
            .all(|e| e.max_rel <= rel_tol && e.max_abs <= abs_tol)
    }
}

/// Central difference of `f` at `x`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Compares ∇V, Σ′, Σ″ and σ′ against central differences on `grid`.
pub fn validate_derivatives(model: &ModelSpec, grid: &[Vec<f64>], h: f64) -> Result<DerivativeReport> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let pot = model.potential();
    let mut report = DerivativeReport::default();
    let mut g = vec![0.0; pot.dim];
    for x in grid {
        pot.check_dim(x)?;
        pot.grad_into(x, &mut g);
        let mut probe = x.clone();
        for k in 0..pot.dim {
            let fd = central_difference(
                |t| {
                    probe[k] = t;
                    pot.value(&probe)
                },
                x[k],
                h,
            );
            probe[k] = x[k];
            report.grad.record(g[k], fd);
        }
        if let ModelSpec::Overdamped { diffusion, .. } = model {
            for &xk in x {
                let Some(e) = diffusion.diag(xk) else { break };
                let cov = |t: f64| diffusion.diag(t).unwrap().cov;
                let dcov = |t: f64| diffusion.diag(t).unwrap().dcov;
                let sig = |t: f64| diffusion.diag(t).unwrap().sigma;
                report.dcov.record(e.dcov, central_difference(cov, xk, h));
                report.d2cov.record(e.d2cov, central_difference(dcov, xk, h));
                report.dsigma.record(e.dsigma, central_difference(sig, xk, h));
            }
        }
    }
    Ok(report)
}
