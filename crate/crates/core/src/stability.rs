//! Linear growth rates of Fourier modes about a constant state.
//!
//! Perturbations `a(t) cos(k x) cos(l y)` on `[-pi, pi]^2` grow like
//! `exp(sigma t)`. [`growth_rate`] gives `sigma` in closed form;
//! [`measure_growth_rate`] recovers it from a simulation.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField};
use crate::potential::{
    f_double_prime, h_double_prime, h_prime, h_val, HChoice, ModelKind, ModelSpec,
};
use crate::schemes::{bootstrap_step, step, SchemeConfig, SchemeState};

/// Area of the analysis domain `[-pi, pi]^2`.
pub const DOMAIN_AREA: f64 = 4.0 * PI * PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityQuery {
    pub model: ModelSpec,
    pub phiss: f64,
    pub k: u32,
    pub l: u32,
}

/// Closed-form `sigma(k, l)`.
pub fn growth_rate(q: &StabilityQuery) -> Result<f64> {
    let m = &q.model;
    let kappa = (q.k * q.k + q.l * q.l) as f64;
    let zero_mode = q.k == 0 && q.l == 0;
    let fpp = f_double_prime(q.phiss, m.gamma2);
    let local = 2.0 * m.gamma1 * kappa + fpp;
    let sigma = match m.kind {
        ModelKind::AllenCahn => -m.mobility * local,
        ModelKind::CahnHilliard => -m.mobility * kappa * local,
        ModelKind::AllenCahnPenalty => {
            let h = m.volume_h();
            let v0 = m.v0.unwrap_or(DOMAIN_AREA * h_val(q.phiss, h));
            let mut s =
                local + m.eta * h_double_prime(q.phiss, h) * (DOMAIN_AREA * h_val(q.phiss, h) - v0);
            if zero_mode {
                s += m.eta * h_prime(q.phiss, h).powi(2) * DOMAIN_AREA;
            }
            -m.mobility * s
        }
        ModelKind::AllenCahnLagrange => {
            if m.h != HChoice::Identity {
                return Err(Error::Unsupported(
                    "closed-form growth rate for the Lagrange model is available only for h = phi"
                        .into(),
                ));
            }
            let correction = if zero_mode { fpp } else { 0.0 };
            -m.mobility * (local - correction)
        }
    };
    Ok(sigma)
}

/// Settings for [`measure_growth_rate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureOptions {
    /// Cells per direction on `[-pi, pi]^2`.
    pub n: usize,
    pub steps: usize,
    pub amplitude: f64,
    /// Largest perturbation still treated as linear.
    pub limit: f64,
}

impl Default for MeasureOptions {
    fn default() -> Self {
        Self {
            n: 128,
            steps: 100,
            amplitude: 1e-6,
            limit: 1e-3,
        }
    }
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    sxy / sxx
}

/// Evolve `phiss + A cos(k x) cos(l y)` with the scheme in `cfg` and fit the
/// slope of `log max |phi - phiss|` against time.
///
/// The target volume is pinned to that of the unperturbed state, as in the
/// linearization.
pub fn measure_growth_rate(
    cfg: &SchemeConfig,
    phiss: f64,
    k: u32,
    l: u32,
    opts: &MeasureOptions,
) -> Result<f64> {
    if opts.steps < 2 {
        return Err(Error::InvalidParameter(
            "need at least two steps to fit a rate".into(),
        ));
    }
    let grid = Grid2D::with_origin(opts.n, opts.n, -PI, -PI, 2.0 * PI, 2.0 * PI)?;
    let mut cfg = *cfg;
    if cfg.model.v0.is_none() {
        cfg.model.v0 = Some(DOMAIN_AREA * h_val(phiss, cfg.model.volume_h()));
    }
    let (kf, lf) = (k as f64, l as f64);
    let phi0 = ScalarField::from_fn(grid, |x, y| {
        phiss + opts.amplitude * (kf * x).cos() * (lf * y).cos()
    });
    let amp = |s: &SchemeState| {
        s.phi_cur
            .values()
            .iter()
            .fold(0.0f64, |m, v| m.max((v - phiss).abs()))
    };

    let mut state = SchemeState::initial(phi0, &cfg)?;
    let mut ts = vec![0.0];
    let mut logs = vec![amp(&state).ln()];
    for n in 0..opts.steps {
        state = if n == 0 {
            bootstrap_step(&state, &cfg)?
        } else {
            step(&state, &cfg)?
        }
        .state;
        let a = amp(&state);
        if !(a <= opts.limit) {
            return Err(Error::LeftLinearRegime {
                amplitude: a,
                limit: opts.limit,
            });
        }
        ts.push(state.t);
        logs.push(a.ln());
    }
    Ok(ls_slope(&ts, &logs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(kind: ModelKind, phiss: f64, k: u32, l: u32) -> StabilityQuery {
        StabilityQuery {
            model: ModelSpec::new(kind, 5e-2, 10.0, 1.0),
            phiss,
            k,
            l,
        }
    }

    #[test]
    fn closed_form_examples() {
        for phiss in [0.1, 0.5, 0.9] {
            assert_eq!(
                growth_rate(&q(ModelKind::CahnHilliard, phiss, 0, 0)).unwrap(),
                0.0
            );
            assert_eq!(
                growth_rate(&q(ModelKind::AllenCahnLagrange, phiss, 0, 0)).unwrap(),
                0.0
            );
        }
        assert!((growth_rate(&q(ModelKind::AllenCahn, 0.5, 0, 0)).unwrap() - 10.0).abs() < 1e-12);
        // kappa = 8: -(2 * 0.05 * 8 - 10)
        assert!((growth_rate(&q(ModelKind::AllenCahn, 0.5, 2, 2)).unwrap() - 9.2).abs() < 1e-12);
        // kappa = 2: -2 (0.2 - 10)
        assert!(
            (growth_rate(&q(ModelKind::CahnHilliard, 0.5, 1, 1)).unwrap() - 19.6).abs() < 1e-12
        );
    }

    #[test]
    fn penalty_stabilizes_only_the_zero_mode() {
        let mut p = q(ModelKind::AllenCahnPenalty, 0.5, 0, 0);
        p.model.eta = 10.0;
        let s = growth_rate(&p).unwrap();
        assert!((s - -(-10.0 + 10.0 * DOMAIN_AREA)).abs() < 1e-9);
        p.k = 1;
        assert_eq!(
            growth_rate(&p).unwrap(),
            growth_rate(&q(ModelKind::AllenCahn, 0.5, 1, 0)).unwrap()
        );
    }

    #[test]
    fn lagrange_polynomial_is_unsupported() {
        let mut p = q(ModelKind::AllenCahnLagrange, 0.5, 1, 0);
        p.model.h = HChoice::Polynomial(1);
        assert!(matches!(growth_rate(&p), Err(Error::Unsupported(_))));
    }

    #[test]
    fn ch_and_ac_share_instability_window() {
        for phiss in [0.05, 0.2, 0.4, 0.5, 0.75, 0.95] {
            for k in 0..6 {
                for l in 0..6 {
                    if k + l == 0 {
                        continue;
                    }
                    let a = growth_rate(&q(ModelKind::AllenCahn, phiss, k, l)).unwrap();
                    let c = growth_rate(&q(ModelKind::CahnHilliard, phiss, k, l)).unwrap();
                    assert_eq!(a.signum(), c.signum(), "{phiss} {k} {l}");
                }
            }
        }
    }

    #[test]
    fn slope_of_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.5 - 0.75 * v).collect();
        assert!((ls_slope(&x, &y) + 0.75).abs() < 1e-14);
    }

    #[test]
    fn escape_is_reported() {
        let cfg = SchemeConfig::from_label("AC-EQ", 5e-2, 10.0, 1.0, 1e-1).unwrap();
        let opts = MeasureOptions {
            n: 8,
            steps: 20,
            amplitude: 1e-4,
            limit: 1e-3,
        };
        assert!(matches!(
            measure_growth_rate(&cfg, 0.5, 0, 0, &opts),
            Err(Error::LeftLinearRegime { .. })
        ));
    }
}
