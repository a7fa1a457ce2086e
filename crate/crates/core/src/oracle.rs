//! Independent reference values: Gibbs quadrature, Gaussian moments and the
//! closed-form EP expansions the estimates are compared against.

use crate::error::{Error, Result};
use crate::model::{DiffusionKind, ModelSpec};

const MAX_SIMPSON_INTERVALS: usize = 1 << 22;
const QUADRATURE_REL_TOL: f64 = 1e-8;
const TAIL_TOL: f64 = 1e-12;

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Simpson with interval doubling until successive values agree to 1e-8
/// relative.
fn converged(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n_points: usize) -> Result<f64> {
    let mut n = n_points.max(2);
    let mut prev = simpson(f, a, b, n);
    while n < MAX_SIMPSON_INTERVALS {
        n *= 2;
        let next = simpson(f, a, b, n);
        let scale = next.abs().max(prev.abs());
        if (next - prev).abs() <= QUADRATURE_REL_TOL * scale || scale == 0.0 {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::Quadrature(format!(
        "Simpson rule on [{a}, {b}] did not converge"
    )))
}

/// `E_μ[f]` for the one-dimensional Gibbs measure `μ ∝ exp(−V)`.
///
/// The integral runs over `bounds`; the routine fails if widening the bounds
/// threefold moves more than 1e-12 of the mass of `e^{−V}` or `|f| e^{−V}`.
pub fn gibbs_expectation(
    f: impl Fn(f64) -> f64,
    v: impl Fn(f64) -> f64,
    bounds: (f64, f64),
    n_points: usize,
) -> Result<f64> {
    let (a, b) = bounds;
    if !(a < b && a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidArgument(format!("bad integration bounds [{a}, {b}]")));
    }
    let w = b - a;
    let (ea, eb) = (a - w, b + w);
    // shift by the minimum on a coarse grid so the weights stay finite
    let v_min = (0..=1000)
        .map(|i| v(ea + (eb - ea) * i as f64 / 1000.0))
        .fold(f64::INFINITY, f64::min);
    if !v_min.is_finite() {
        return Err(Error::Quadrature(
            "potential is not finite on the integration range".into(),
        ));
    }
    let weight = |x: f64| (v_min - v(x)).exp();
    let z = converged(&weight, a, b, n_points)?;
    let num = converged(&|x| f(x) * weight(x), a, b, n_points)?;
    let abs_num = converged(&|x| f(x).abs() * weight(x), a, b, n_points)?;

    let tail =
        |g: &dyn Fn(f64) -> f64| -> Result<f64> { Ok(converged(g, ea, a, n_points)? + converged(g, b, eb, n_points)?) };
    let z_tail = tail(&weight)?;
    if z_tail > TAIL_TOL * z {
        return Err(Error::Quadrature(format!(
            "bounds [{a}, {b}] miss {:.3e} of the Gibbs mass",
            z_tail / z
        )));
    }
    if abs_num > 0.0 {
        let f_tail = tail(&|x| f(x).abs() * weight(x))?;
        if f_tail > TAIL_TOL * abs_num {
            return Err(Error::Quadrature(format!(
                "bounds [{a}, {b}] miss {:.3e} of |f| e^-V",
                f_tail / abs_num
            )));
        }
    }
    Ok(num / z)
}

/// `E[∏ ΔW_k^{ν_k}]` for `ΔW ~ N(0, dt·Σ)` by summing over pair partitions.
/// `cov` is `d×d` row-major; `|ν| ≤ 8`.
pub fn gaussian_moment(nu: &[usize], cov: &[f64], dt: f64) -> Result<f64> {
    let d = nu.len();
    if cov.len() != d * d {
        return Err(Error::DimensionMismatch {
            expected: d * d,
            got: cov.len(),
        });
    }
    let order: usize = nu.iter().sum();
    if order > 8 {
        return Err(Error::InvalidArgument(format!("moment order {order} exceeds 8")));
    }
    if order % 2 == 1 {
        return Ok(0.0);
    }
    let idx: Vec<usize> = nu
        .iter()
        .enumerate()
        .flat_map(|(k, &n)| std::iter::repeat_n(k, n))
        .collect();
    fn pairings(rest: &mut Vec<usize>, cov: &[f64], d: usize, dt: f64) -> f64 {
        if rest.is_empty() {
            return 1.0;
        }
        let first = rest.remove(0);
        let mut total = 0.0;
        for j in 0..rest.len() {
            let other = rest.remove(j);
            total += cov[first * d + other] * dt * pairings(rest, cov, d, dt);
            rest.insert(j, other);
        }
        rest.insert(0, first);
        total
    }
    let mut rest = idx;
    Ok(pairings(&mut rest, cov, d, dt))
}

/// Leading EM constant `c = ¾ E_μ[Σ′²/Σ]` for a one-dimensional diagonal
/// model, so that `EP(Δt) → c`. Zero for additive noise.
pub fn ep_constant_multiplicative(model: &ModelSpec) -> Result<f64> {
    let ModelSpec::Overdamped {
        potential, diffusion, ..
    } = model
    else {
        return Err(Error::InvalidModel("needs an overdamped model".into()));
    };
    if let DiffusionKind::Additive { .. } = diffusion.kind {
        return Ok(0.0);
    }
    if potential.dim != 1 {
        return Err(Error::Unsupported {
            scheme: "em",
            what: "the EP constant for dimension > 1".into(),
        });
    }
    let f = |x: f64| {
        let e = diffusion.diag(x).expect("diagonal diffusion");
        e.dcov * e.dcov / e.cov
    };
    let v = |x: f64| potential.value(&[x]);
    let mut half = 8.0;
    loop {
        match gibbs_expectation(f, v, (-half, half), 2000) {
            Ok(e) => return Ok(0.75 * e),
            Err(Error::Quadrature(_)) if half < 1e3 => half *= 2.0,
            Err(e) => return Err(e),
        }
    }
}

/// Exact BBK entropy production for a quadratic well,
/// `γ² N dt / (m (2m + γ dt))`, with `N` the number of degrees of freedom.
pub fn ep_langevin_theory(n_dof: usize, gamma: f64, mass: f64, dt: f64) -> f64 {
    gamma * gamma * n_dof as f64 * dt / (mass * (2.0 * mass + gamma * dt))
}

/// Slope of the BBK expansion at `dt → 0`: `N γ² / (2 m²)`.
pub fn bbk_leading_coefficient(n_dof: usize, gamma: f64, mass: f64) -> f64 {
    n_dof as f64 * gamma * gamma / (2.0 * mass * mass)
}

/// The asymptotic form a sweep is compared against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TheoryRef {
    /// `EP = O(dt²)` for EM with additive noise.
    EmAdditiveOrder2,
    /// `EP → c` for EM with multiplicative noise.
    EmMultiplicativeConstant { c: f64 },
    /// `EP = O(dt)` for Milstein.
    MilsteinOrder1,
    /// `EP = γ² N dt / (m (2m + γ dt))` for BBK on a quadratic well.
    BbkLinear { n_dof: usize, gamma: f64, mass: f64 },
}

impl TheoryRef {
    pub fn expected_slope(&self) -> f64 {
        match self {
            TheoryRef::EmAdditiveOrder2 => 2.0,
            TheoryRef::EmMultiplicativeConstant { .. } => 0.0,
            TheoryRef::MilsteinOrder1 | TheoryRef::BbkLinear { .. } => 1.0,
        }
    }

    /// Closed-form EP at `dt` where one exists.
    pub fn value(&self, dt: f64) -> Option<f64> {
        match *self {
            TheoryRef::EmMultiplicativeConstant { c } => Some(c),
            TheoryRef::BbkLinear { n_dof, gamma, mass } => Some(ep_langevin_theory(n_dof, gamma, mass, dt)),
            _ => None,
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            TheoryRef::EmAdditiveOrder2 => "EM additive noise: EP = O(dt^2)".into(),
            TheoryRef::EmMultiplicativeConstant { c } => format!("EM multiplicative noise: EP -> c = {c:.10}"),
            TheoryRef::MilsteinOrder1 => "Milstein: EP = O(dt)".into(),
            TheoryRef::BbkLinear { n_dof, gamma, mass } => format!(
                "BBK quadratic well: EP = gamma^2 N dt / (m (2m + gamma dt)), N={n_dof} gamma={gamma} m={mass}, \
                 leading coefficient {}",
                bbk_leading_coefficient(n_dof, gamma, mass)
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DiffusionModel, Domain, PotentialModel};
    use approx::assert_relative_eq;

    #[test]
    fn gibbs_gaussian_second_moment() {
        let e = gibbs_expectation(|x| x * x, |x| 0.5 * x * x, (-10.0, 10.0), 200).unwrap();
        assert_relative_eq!(e, 1.0, max_relative = 1e-8);
    }

    #[test]
    fn gibbs_narrow_bounds_fail_tail_check() {
        assert!(matches!(
            gibbs_expectation(|x| x * x, |x| 0.5 * x * x, (-3.0, 3.0), 200),
            Err(Error::Quadrature(_))
        ));
    }

    #[test]
    fn isserlis_moments() {
        let one = [1.0];
        assert_relative_eq!(gaussian_moment(&[2], &one, 0.01).unwrap(), 0.01, max_relative = 1e-15);
        assert_relative_eq!(gaussian_moment(&[4], &one, 0.01).unwrap(), 3e-4, max_relative = 1e-12);
        assert_relative_eq!(gaussian_moment(&[6], &one, 0.01).unwrap(), 15e-6, max_relative = 1e-12);
        assert_relative_eq!(gaussian_moment(&[8], &one, 1.0).unwrap(), 105.0);
        assert_eq!(gaussian_moment(&[3], &one, 0.01).unwrap(), 0.0);
        assert!(gaussian_moment(&[10], &one, 0.01).is_err());
        // E[X²Y²] = Σ₁₁Σ₂₂ + 2Σ₁₂²
        let cov = [2.0, 0.5, 0.5, 1.0];
        assert_relative_eq!(
            gaussian_moment(&[2, 2], &cov, 1.0).unwrap(),
            2.0 + 2.0 * 0.25,
            max_relative = 1e-14
        );
        assert_relative_eq!(gaussian_moment(&[1, 1], &cov, 0.1).unwrap(), 0.05, max_relative = 1e-14);
    }

    #[test]
    fn multiplicative_constant_for_sigma_eps() {
        let m = ModelSpec::overdamped(
            PotentialModel::quadratic(1.0, 1),
            DiffusionModel::sigma_eps(1.0).unwrap(),
            Domain::Euclidean,
        )
        .unwrap();
        let c = ep_constant_multiplicative(&m).unwrap();
        assert_relative_eq!(c, 0.2582403431859012, max_relative = 1e-8);
        let a = ModelSpec::overdamped(
            PotentialModel::quadratic(1.0, 1),
            DiffusionModel::isotropic(1.0, 1).unwrap(),
            Domain::Euclidean,
        )
        .unwrap();
        assert_eq!(ep_constant_multiplicative(&a).unwrap(), 0.0);
    }

    #[test]
    fn langevin_theory() {
        assert_relative_eq!(ep_langevin_theory(5, 1.0, 1.0, 0.01), 0.05 / 2.01, max_relative = 1e-14);
        assert_relative_eq!(bbk_leading_coefficient(5, 1.0, 1.0), 2.5);
        let t = TheoryRef::BbkLinear {
            n_dof: 5,
            gamma: 1.0,
            mass: 1.0,
        };
        assert_relative_eq!(t.value(1e-8).unwrap() / 1e-8, 2.5, max_relative = 1e-7);
        assert_eq!(TheoryRef::MilsteinOrder1.value(0.1), None);
    }
}
