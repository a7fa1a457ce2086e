use std::sync::Arc;

use proptest::prelude::*;

use sde_ep::cli::fit_slope;
use sde_ep::estimate::{merge_chains, EpEstimate};
use sde_ep::gc::{gc_increment_em, log_density_milstein, GcVariant};
use sde_ep::integrate::{em_step_with_noise, Scheme, StepRecord};
use sde_ep::model::{DiffusionModel, Domain, ModelSpec, PotentialModel, ScalarDiffusion, DEFAULT_ELLIPTICITY_FLOOR};
use sde_ep::oracle::{ep_constant_multiplicative, gaussian_moment, gibbs_expectation};

fn sigma_eps_bundle(eps: f64, sign: f64) -> ScalarDiffusion {
    let u = move |x: f64| 1.0 + eps * x * x;
    ScalarDiffusion {
        label: format!("signed_sigma_eps[{sign}]"),
        sigma: Arc::new(move |x| sign / u(x).sqrt()),
        dsigma: Arc::new(move |x| -sign * eps * x / u(x).powf(1.5)),
        cov: Arc::new(move |x| 1.0 / u(x)),
        dcov: Arc::new(move |x| -2.0 * eps * x / (u(x) * u(x))),
        d2cov: Arc::new(move |x| -2.0 * eps / u(x).powi(2) + 8.0 * eps * eps * x * x / u(x).powi(3)),
    }
}

fn one_d(diffusion: DiffusionModel) -> ModelSpec {
    ModelSpec::overdamped(PotentialModel::quadratic(1.0, 1), diffusion, Domain::Euclidean).unwrap()
}

fn estimate(stream: u64, ep: f64, stderr: f64, n: u64) -> EpEstimate {
    EpEstimate {
        scheme: Scheme::Em,
        model: "m".into(),
        dt: 0.1,
        ep,
        stderr,
        n_steps: n,
        n_singular: 0,
        n_wraps: 0,
        wall_seconds: 1.0,
        seed: 0,
        stream,
        variant: GcVariant::BoundaryDropped,
        replicas: 1,
        valid: true,
    }
}

proptest! {
    #[test]
    fn torus_wrap_lands_in_fundamental_domain(x in -1e4f64..1e4, l in 0.1f64..10.0) {
        let d = Domain::torus(l).unwrap();
        let mut y = [x];
        d.wrap(&mut y);
        prop_assert!(y[0] >= -l && y[0] < l);
        let k = (x - y[0]) / (2.0 * l);
        prop_assert!((k - k.round()).abs() < 1e-6);
    }

    #[test]
    fn em_increment_antisymmetric(x in -2.0f64..2.0, z in -3.0f64..3.0, dt in 1e-3f64..0.2, eps in 0.0f64..2.0) {
        let m = one_d(DiffusionModel::sigma_eps(eps).unwrap());
        let rec = em_step_with_noise(&m, &[x], dt, &[z * dt.sqrt()]).unwrap();
        let rev = StepRecord {
            x_prev: rec.x_next.clone(),
            x_next: rec.x_prev.clone(),
            dx_raw: vec![-rec.dx_raw[0]],
            ..rec.clone()
        };
        let (a, b) = (gc_increment_em(&m, &rec).unwrap(), gc_increment_em(&m, &rev).unwrap());
        prop_assert!((a + b).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn milstein_density_depends_on_sigma_only_through_its_square(
        x in -2.0f64..2.0, y in -3.0f64..3.0, dt in 1e-3f64..0.3,
    ) {
        let pos = one_d(DiffusionModel::multiplicative(sigma_eps_bundle(1.0, 1.0), DEFAULT_ELLIPTICITY_FLOOR).unwrap());
        let neg = one_d(DiffusionModel::multiplicative(sigma_eps_bundle(1.0, -1.0), DEFAULT_ELLIPTICITY_FLOOR).unwrap());
        let a = log_density_milstein(&pos, &[x], &[y], dt).unwrap();
        let b = log_density_milstein(&neg, &[x], &[y], dt).unwrap();
        prop_assert!(a == b || (a - b).abs() <= 1e-10 * (1.0 + a.abs()), "{} {}", a, b);
    }

    #[test]
    fn slope_fit_is_scale_equivariant(
        p in 0.2f64..3.0, a in 1e-3f64..1e3, k in 1e-6f64..1e6,
        noise in proptest::collection::vec(-0.05f64..0.05, 4),
    ) {
        let grid = [0.1f64, 0.05, 0.025, 0.0125];
        let rows: Vec<_> = grid.iter().zip(&noise).map(|(&dt, e)| (dt, a * dt.powf(p) * (1.0 + e), 0.02 * a * dt.powf(p))).collect();
        let scaled: Vec<_> = rows.iter().map(|&(d, e, s)| (d, k * e, s)).collect();
        let (f, g) = (fit_slope(&rows).unwrap(), fit_slope(&scaled).unwrap());
        prop_assert!((f.slope - g.slope).abs() < 1e-9);
    }

    #[test]
    fn merge_is_order_independent(
        parts in proptest::collection::vec((0.0f64..1.0, 0.001f64..0.1, 100u64..10_000), 1..8),
        rot in 0usize..8,
    ) {
        let ests: Vec<_> = parts.iter().enumerate().map(|(i, &(e, s, n))| estimate(i as u64, e, s, n)).collect();
        let mut shuffled = ests.clone();
        let r = rot % shuffled.len();
        shuffled.rotate_left(r);
        prop_assert_eq!(merge_chains(&ests).unwrap(), merge_chains(&shuffled).unwrap());
    }

    #[test]
    fn gaussian_moment_symmetric_in_coordinates(a in 0usize..5, b in 0usize..4, c in -0.4f64..0.4) {
        let cov = [1.0, c, c, 0.7];
        let swapped = [0.7, c, c, 1.0];
        let x = gaussian_moment(&[a, b], &cov, 0.3).unwrap();
        let y = gaussian_moment(&[b, a], &swapped, 0.3).unwrap();
        prop_assert!((x - y).abs() <= 1e-14 * (1.0 + x.abs()));
    }
}

#[test]
fn ep_constant_invariant_under_sigma_sign() {
    let pos = one_d(DiffusionModel::multiplicative(sigma_eps_bundle(1.0, 1.0), DEFAULT_ELLIPTICITY_FLOOR).unwrap());
    let neg = one_d(DiffusionModel::multiplicative(sigma_eps_bundle(1.0, -1.0), DEFAULT_ELLIPTICITY_FLOOR).unwrap());
    let builtin = one_d(DiffusionModel::sigma_eps(1.0).unwrap());
    let (a, b, c) = (
        ep_constant_multiplicative(&pos).unwrap(),
        ep_constant_multiplicative(&neg).unwrap(),
        ep_constant_multiplicative(&builtin).unwrap(),
    );
    assert_eq!(a, b);
    assert!((a - c).abs() < 1e-12);
}

#[test]
fn ep_constant_decreases_with_eps() {
    let cs: Vec<f64> = [1.0, 0.5, 0.25, 0.1]
        .iter()
        .map(|&e| ep_constant_multiplicative(&one_d(DiffusionModel::sigma_eps(e).unwrap())).unwrap())
        .collect();
    assert!(cs.windows(2).all(|w| w[0] > w[1]), "{cs:?}");
    assert!(cs[3] > 0.0);
}

#[test]
fn gibbs_expectation_is_bound_stable() {
    for eps in [1.0, 0.25] {
        let f = |x: f64| 4.0 * eps * eps * x * x / (1.0 + eps * x * x).powi(3);
        let v = |x: f64| 0.5 * x * x;
        let a = gibbs_expectation(f, v, (-10.0, 10.0), 2000).unwrap();
        let b = gibbs_expectation(f, v, (-15.0, 15.0), 2000).unwrap();
        assert!((a - b).abs() <= 1e-10 * a.abs(), "{a} {b}");
    }
}
