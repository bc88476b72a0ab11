//! Discrete energies, volumes, dissipation rates and convergence orders.

use crate::error::{Error, Result};
use crate::grid::{compensated_sum, dot, gradient_energy_slice, ScalarField};
use crate::potential::{Formulation, HChoice, QDefinition};
use crate::schemes::{volume_of, SchemeConfig, SchemeState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRecord {
    pub step: usize,
    pub t: f64,
    pub energy: f64,
    pub volume: f64,
    /// `|F^{n+1} - F^n + dissipation|` for the step ending here; 0 at `t = 0`.
    pub diss_residual: f64,
    pub solver_iters: usize,
}

/// The modified energy the schemes dissipate exactly.
///
/// EQ: `g1 G(phi) + g2 <phi, phi> + <q, q> - C0 |Omega|`; SAV replaces the
/// `q` terms by `r^2 - C0`; the relinearized auxiliary carries the whole bulk
/// potential, `g1 G(phi) + <q, q>`. The penalty model adds `zeta^2 / 2`.
pub fn discrete_energy(state: &SchemeState, cfg: &SchemeConfig) -> f64 {
    let grid = *state.grid();
    let phi = state.phi_cur.values();
    let spec = &cfg.model;
    let mut energy = spec.gamma1 * gradient_energy_slice(&grid, phi);
    match cfg.aux.formulation {
        Formulation::Eq => {
            let q = state.q.as_ref().map(|q| q.values()).unwrap_or(&[]);
            match cfg.aux.q_definition {
                QDefinition::Shifted => {
                    energy += spec.gamma2 * dot(&grid, phi, phi);
                    // per cell, so the large shift cancels before summation
                    energy += grid.cell_area() * compensated_sum(q.iter().map(|v| v * v - spec.c0));
                }
                QDefinition::Relinearized => energy += dot(&grid, q, q),
            }
        }
        Formulation::Sav => {
            let r = state.r.unwrap_or(0.0);
            energy += spec.gamma2 * dot(&grid, phi, phi) + (r * r - spec.c0);
        }
    }
    if let Some(z) = state.zeta {
        energy += 0.5 * z * z;
    }
    energy
}

/// `<h(phi), 1>`
pub fn volume(phi: &ScalarField, h: HChoice) -> f64 {
    volume_of(phi, h)
}

/// Volume of the current level under the model's own functional.
pub fn state_volume(state: &SchemeState, cfg: &SchemeConfig) -> f64 {
    volume_of(&state.phi_cur, cfg.model.volume_h())
}

/// `|F^{n+1} - F^n + dissipation|`
pub fn energy_identity_residual(f_prev: f64, f_new: f64, dissipation: f64) -> f64 {
    (f_new - f_prev + dissipation).abs()
}

/// `(F_cur - F_prev) / (t_cur - t_prev)`
pub fn dissipation_rate(prev: &DiagnosticsRecord, cur: &DiagnosticsRecord) -> Result<f64> {
    let dt = cur.t - prev.t;
    if dt == 0.0 {
        return Err(Error::InvalidParameter(
            "zero time gap between records".into(),
        ));
    }
    Ok((cur.energy - prev.energy) / dt)
}

/// Discrete L2 distance `sqrt(<a - b, a - b>)`.
pub fn l2_error(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    a.grid().check_same(b.grid())?;
    let d = a.lin_comb(1.0, b, -1.0)?;
    Ok(d.norm_l2())
}

/// Observed orders `log(e_{i-1} / e_i) / log(dt_{i-1} / dt_i)`.
pub fn convergence_order(errors: &[f64], dts: &[f64]) -> Result<Vec<f64>> {
    if errors.len() != dts.len() || errors.len() < 2 {
        return Err(Error::InvalidParameter(
            "need matching error and step lists of length >= 2".into(),
        ));
    }
    if let Some(e) = errors.iter().find(|e| !(**e > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "errors must be positive, got {e}"
        )));
    }
    if dts.windows(2).any(|w| !(w[1] < w[0]) || !(w[1] > 0.0)) {
        return Err(Error::InvalidParameter(
            "step sizes must be positive and strictly decreasing".into(),
        ));
    }
    Ok(errors
        .windows(2)
        .zip(dts.windows(2))
        .map(|(e, d)| (e[0] / e[1]).ln() / (d[0] / d[1]).ln())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;
    use crate::potential::AuxiliaryKind;

    fn cfg(label: &str) -> SchemeConfig {
        SchemeConfig::from_label(label, 5e-3, 100.0, 1.0, 1e-3).unwrap()
    }

    #[test]
    fn wells_have_zero_energy() {
        let g = Grid2D::unit_square(6).unwrap();
        for label in ["AC-EQ", "AC-SAV", "AC-P-EQ", "CH-SAV"] {
            for c in [0.0, 1.0] {
                let c = SchemeState::initial(ScalarField::constant(g, c), &cfg(label)).unwrap();
                let e = discrete_energy(&c, &cfg(label));
                assert!(e.abs() < 1e-9, "{label}: {e}");
            }
        }
        let relin = SchemeConfig {
            aux: AuxiliaryKind::eq().with_q_definition(QDefinition::Relinearized),
            ..cfg("AC-EQ")
        };
        let s = SchemeState::initial(ScalarField::constant(g, 1.0), &relin).unwrap();
        assert_eq!(discrete_energy(&s, &relin), 0.0);
    }

    #[test]
    fn constant_state_energy_is_bulk_only() {
        // phi = 1/2: f = g2/16 everywhere, no gradient
        let g = Grid2D::new(4, 4, 2.0, 2.0).unwrap();
        let c = cfg("AC-SAV");
        let s = SchemeState::initial(ScalarField::constant(g, 0.5), &c).unwrap();
        let expected = 100.0 / 16.0 * 4.0;
        assert!((discrete_energy(&s, &c) - expected).abs() < 1e-9);
    }

    #[test]
    fn volume_examples() {
        let g = Grid2D::with_origin(8, 8, -1.0, -1.0, 2.0, 2.0).unwrap();
        assert!((volume(&ScalarField::constant(g, 0.5), HChoice::Identity) - 2.0).abs() < 1e-14);
        for h in [
            HChoice::Identity,
            HChoice::Polynomial(1),
            HChoice::Polynomial(3),
        ] {
            assert!((volume(&ScalarField::constant(g, 1.0), h) - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dissipation_rate_examples() {
        let rec = |t, energy| DiagnosticsRecord {
            step: 0,
            t,
            energy,
            volume: 0.0,
            diss_residual: 0.0,
            solver_iters: 0,
        };
        assert_eq!(
            dissipation_rate(&rec(0.0, 4.0), &rec(1.0, 2.0)).unwrap(),
            -2.0
        );
        assert_eq!(
            dissipation_rate(&rec(0.0, 3.0), &rec(0.5, 3.0)).unwrap(),
            0.0
        );
        assert!(dissipation_rate(&rec(1.0, 3.0), &rec(1.0, 2.0)).is_err());
    }

    #[test]
    fn convergence_order_examples() {
        let o = convergence_order(&[4.0, 1.0], &[0.2, 0.1]).unwrap();
        assert!((o[0] - 2.0).abs() < 1e-14);
        let o = convergence_order(&[9.0, 1.0], &[0.3, 0.1]).unwrap();
        assert!((o[0] - 2.0).abs() < 1e-14);
        // a published pair: 4.88e-8 at 1e-2 and 1.22e-8 at 5e-3
        let o = convergence_order(&[4.88e-8, 1.22e-8], &[1e-2, 5e-3]).unwrap();
        assert!((o[0] - 2.00).abs() < 5e-3);
        assert!(convergence_order(&[1.0, 0.0], &[0.2, 0.1]).is_err());
        assert!(convergence_order(&[1.0, 0.5], &[0.1, 0.2]).is_err());
        assert!(convergence_order(&[1.0], &[0.1]).is_err());
    }
}
