//! Weighted log–log regression of EP against dt.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    /// NaN when the fit has no degrees of freedom left to estimate it.
    pub slope_stderr: f64,
    /// `log(ep)` at `log(dt) = 0`.
    pub intercept: f64,
    pub n_used: usize,
}

/// Fits `log ep = intercept + slope · log dt` over rows `(dt, ep, stderr)`
/// with weights `(ep/stderr)²`. Rows with non-positive or non-finite `ep`
/// are skipped. If any used row has no usable stderr all weights are 1.
pub fn fit_slope(rows: &[(f64, f64, f64)]) -> Result<SlopeFit> {
    let used: Vec<&(f64, f64, f64)> = rows
        .iter()
        .filter(|(dt, ep, _)| *ep > 0.0 && ep.is_finite() && *dt > 0.0 && dt.is_finite())
        .collect();
    if used.len() < 2 {
        return Err(Error::NoValidRows(format!(
            "{} usable rows, need at least 2",
            used.len()
        )));
    }
    let weighted = used.iter().all(|(_, _, se)| *se > 0.0 && se.is_finite());
    let pts: Vec<(f64, f64, f64)> = used
        .iter()
        .map(|&&(dt, ep, se)| (dt.ln(), ep.ln(), if weighted { (ep / se).powi(2) } else { 1.0 }))
        .collect();
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let xm = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let ym = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - xm).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::NoValidRows("all usable rows share one dt".into()));
    }
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - xm) * (p.1 - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let slope_stderr = if weighted {
        // weights are inverse variances of log ep
        (1.0 / sxx).sqrt()
    } else if pts.len() > 2 {
        let rss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
        (rss / (pts.len() - 2) as f64 / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(SlopeFit {
        slope,
        slope_stderr,
        intercept,
        n_used: pts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::chain_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    const GRID: [f64; 4] = [0.1, 0.05, 0.025, 0.0125];

    #[test]
    fn exact_power_laws() {
        let rows: Vec<_> = GRID.iter().map(|&dt| (dt, 3.0 * dt * dt, 0.01 * dt * dt)).collect();
        let f = fit_slope(&rows).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
        let rows: Vec<_> = GRID.iter().map(|&dt| (dt, 0.26, 0.0)).collect();
        assert!(fit_slope(&rows).unwrap().slope.abs() < 1e-12);
    }

    #[test]
    fn noisy_linear_law() {
        let mut rng = chain_rng(77, 0);
        let mut slopes = Vec::new();
        for _ in 0..200 {
            let rows: Vec<_> = GRID
                .iter()
                .map(|&dt| {
                    let eta: f64 = rng.sample::<f64, _>(StandardNormal) * 0.01;
                    (dt, 2.0 * dt * (1.0 + eta), 0.01 * 2.0 * dt)
                })
                .collect();
            slopes.push(fit_slope(&rows).unwrap().slope);
        }
        assert!(slopes.iter().all(|s| (s - 1.0).abs() < 0.05));
    }

    #[test]
    fn scale_equivariance() {
        let rows: Vec<_> = GRID
            .iter()
            .map(|&dt| (dt, dt.powf(1.7) * (1.0 + dt), 0.1 * dt))
            .collect();
        let scaled: Vec<_> = rows.iter().map(|&(d, e, s)| (d, 42.0 * e, s)).collect();
        let (a, b) = (fit_slope(&rows).unwrap(), fit_slope(&scaled).unwrap());
        assert!((a.slope - b.slope).abs() < 1e-12);
        assert!((b.intercept - a.intercept - 42f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn excludes_nonpositive() {
        let rows = [(0.1, -1.0, 0.1), (0.05, 0.0, 0.1), (0.025, 1.0, 0.1)];
        assert!(matches!(fit_slope(&rows), Err(Error::NoValidRows(_))));
        let rows = [(0.1, 1.0, 0.1), (0.05, -1.0, 0.1), (0.025, 0.25, 0.1)];
        let f = fit_slope(&rows).unwrap();
        assert_eq!(f.n_used, 2);
        assert!((f.slope - 1.0).abs() < 1e-12);
        assert!(f.slope_stderr.is_finite());
    }
}
