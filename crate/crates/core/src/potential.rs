//! Bulk potential, quadratization auxiliaries and volume functionals.
//!
//! The bulk potential is the double well `f(phi) = g2 phi^2 (1 - phi)^2`, with
//! minima at 0 and 1. The quadratic split `g2 phi^2` is carried by the linear
//! operator of every scheme; the remainder `f1 = f - g2 phi^2` is quadratized
//! either pointwise (EQ, auxiliary field `q`) or globally (SAV, scalar `r`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{compensated_sum, Grid2D, ScalarField};

/// Default quadratization shift.
pub const DEFAULT_C0: f64 = 1e5;
/// Default penalty strength.
pub const DEFAULT_ETA: f64 = 1e5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    AllenCahn,
    AllenCahnPenalty,
    AllenCahnLagrange,
    CahnHilliard,
}

/// Volume functional `V = <h(phi), 1>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HChoice {
    /// `h(phi) = phi`
    Identity,
    /// `h'(phi) = K_m [phi (1 - phi)]^m`, normalized so that `h(1) = 1`.
    Polynomial(u32),
}

/// Model kind and physical parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Gradient-energy coefficient.
    pub gamma1: f64,
    /// Double-well coefficient, also the stabilizing quadratic split.
    pub gamma2: f64,
    /// Constant mobility.
    pub mobility: f64,
    /// Penalty strength (penalty model only).
    pub eta: f64,
    /// Quadratization shift.
    pub c0: f64,
    /// Volume functional (Lagrange model only; the penalty model uses `h = phi`).
    pub h: HChoice,
    /// Target volume; `None` takes it from the initial state.
    pub v0: Option<f64>,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, gamma1: f64, gamma2: f64, mobility: f64) -> Self {
        Self {
            kind,
            gamma1,
            gamma2,
            mobility,
            eta: DEFAULT_ETA,
            c0: DEFAULT_C0,
            h: HChoice::Identity,
            v0: None,
        }
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_c0(mut self, c0: f64) -> Self {
        self.c0 = c0;
        self
    }

    pub fn with_h(mut self, h: HChoice) -> Self {
        self.h = h;
        self
    }

    pub fn with_v0(mut self, v0: f64) -> Self {
        self.v0 = Some(v0);
        self
    }

    /// Volume functional actually used by the model.
    pub fn volume_h(&self) -> HChoice {
        match self.kind {
            ModelKind::AllenCahnLagrange => self.h,
            _ => HChoice::Identity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )))
            }
        };
        positive("gamma1", self.gamma1)?;
        positive("gamma2", self.gamma2)?;
        positive("mobility", self.mobility)?;
        positive("c0", self.c0)?;
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "eta must be nonnegative, got {}",
                self.eta
            )));
        }
        if self.kind == ModelKind::AllenCahnPenalty && self.eta <= 0.0 {
            return Err(Error::InvalidParameter(
                "penalty model requires eta > 0".into(),
            ));
        }
        // sup of g2 phi^2 - f(phi) = g2 phi^3 (2 - phi) over [-0.5, 1.5] is reached at 1.5
        let sup = 27.0 / 16.0 * self.gamma2;
        if self.c0 <= sup {
            return Err(Error::InvalidParameter(format!(
                "c0 = {} must exceed {sup} so the auxiliary variable stays real",
                self.c0
            )));
        }
        if let HChoice::Polynomial(0) = self.h {
            return Err(Error::InvalidParameter(
                "polynomial h requires m >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Formulation {
    Eq,
    Sav,
}

/// Definition of the EQ auxiliary field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QDefinition {
    /// `q = sqrt(f - g2 phi^2 + C0)`
    Shifted,
    /// `q = sqrt(g2) phi (1 - phi)`, so `q^2 = f` and `q'` is linear in `phi`.
    Relinearized,
}

/// How the EQ auxiliary field is advanced after `phi^{n+1}` is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum QUpdatePolicy {
    /// `q^{n+1} = q^n + qbar' (phi^{n+1} - phi^n)`
    CrankNicolsonOde,
    /// `q^{n+1} = q(phi^{n+1})`
    AlgebraicReset,
    /// Keep the ODE value while its integrated drift stays below `threshold`,
    /// otherwise relax towards the algebraic value with rate `alpha`.
    Hybrid { threshold: f64, alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxiliaryKind {
    pub formulation: Formulation,
    pub q_definition: QDefinition,
    pub policy: QUpdatePolicy,
}

impl AuxiliaryKind {
    pub fn eq() -> Self {
        Self {
            formulation: Formulation::Eq,
            q_definition: QDefinition::Shifted,
            policy: QUpdatePolicy::CrankNicolsonOde,
        }
    }

    pub fn sav() -> Self {
        Self {
            formulation: Formulation::Sav,
            ..Self::eq()
        }
    }

    pub fn with_policy(mut self, policy: QUpdatePolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_q_definition(mut self, q_definition: QDefinition) -> Self {
        self.q_definition = q_definition;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let QUpdatePolicy::Hybrid { threshold, alpha } = self.policy {
            if !(threshold > 0.0 && alpha > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "hybrid policy requires threshold > 0 and alpha > 0, got {threshold}, {alpha}"
                )));
            }
        }
        Ok(())
    }
}

#[inline]
pub fn f_val(phi: f64, gamma2: f64) -> f64 {
    let s = phi * (1.0 - phi);
    gamma2 * s * s
}

#[inline]
pub fn f_prime(phi: f64, gamma2: f64) -> f64 {
    gamma2 * (2.0 * phi - 6.0 * phi * phi + 4.0 * phi * phi * phi)
}

#[inline]
pub fn f_double_prime(phi: f64, gamma2: f64) -> f64 {
    gamma2 * (2.0 - 12.0 * phi + 12.0 * phi * phi)
}

/// Non-quadratic part `f1 = f - g2 phi^2`.
#[inline]
pub fn f1_val(phi: f64, gamma2: f64) -> f64 {
    f_val(phi, gamma2) - gamma2 * phi * phi
}

#[inline]
pub fn f1_prime(phi: f64, gamma2: f64) -> f64 {
    f_prime(phi, gamma2) - 2.0 * gamma2 * phi
}

/// Pointwise auxiliary value; `None` when the shifted radicand is not positive.
#[inline]
pub fn q_point(phi: f64, gamma2: f64, c0: f64, def: QDefinition) -> Option<f64> {
    match def {
        QDefinition::Shifted => {
            let rad = f1_val(phi, gamma2) + c0;
            (rad > 0.0).then(|| rad.sqrt())
        }
        QDefinition::Relinearized => Some(gamma2.sqrt() * phi * (1.0 - phi)),
    }
}

#[inline]
pub fn q_prime_point(phi: f64, gamma2: f64, c0: f64, def: QDefinition) -> Option<f64> {
    match def {
        QDefinition::Shifted => {
            q_point(phi, gamma2, c0, def).map(|q| f1_prime(phi, gamma2) / (2.0 * q))
        }
        QDefinition::Relinearized => Some(gamma2.sqrt() * (1.0 - 2.0 * phi)),
    }
}

fn pointwise(
    phi: &ScalarField,
    spec: &ModelSpec,
    def: QDefinition,
    f: fn(f64, f64, f64, QDefinition) -> Option<f64>,
) -> Result<ScalarField> {
    let grid = *phi.grid();
    let mut out = Vec::with_capacity(grid.len());
    for (k, &p) in phi.values().iter().enumerate() {
        match f(p, spec.gamma2, spec.c0, def) {
            Some(v) => out.push(v),
            None => {
                return Err(Error::NonPositiveRadicand {
                    i: k % grid.nx(),
                    j: k / grid.nx(),
                    value: f1_val(p, spec.gamma2) + spec.c0,
                })
            }
        }
    }
    Ok(ScalarField::from_vec_unchecked(grid, out))
}

/// Auxiliary field `q(phi)` at every cell.
pub fn q_of_phi(phi: &ScalarField, spec: &ModelSpec, def: QDefinition) -> Result<ScalarField> {
    pointwise(phi, spec, def, q_point)
}

/// `dq/dphi` at every cell.
pub fn q_prime(phi: &ScalarField, spec: &ModelSpec, def: QDefinition) -> Result<ScalarField> {
    pointwise(phi, spec, def, q_prime_point)
}

/// Scalar auxiliary data of a field.
#[derive(Debug, Clone, PartialEq)]
pub struct SavScalars {
    /// `E1 = <f - g2 phi^2, 1>`
    pub e1: f64,
    /// `r = sqrt(E1 + C0)`
    pub r: f64,
    /// `g = (f'(phi) - 2 g2 phi) / r`
    pub g: ScalarField,
}

pub fn sav_scalars(phi: &ScalarField, spec: &ModelSpec) -> Result<SavScalars> {
    let grid: Grid2D = *phi.grid();
    let e1 =
        grid.cell_area() * compensated_sum(phi.values().iter().map(|&p| f1_val(p, spec.gamma2)));
    let rad = e1 + spec.c0;
    if rad <= 0.0 {
        return Err(Error::SavRadicand(rad));
    }
    let r = rad.sqrt();
    let g = phi.map(|p| f1_prime(p, spec.gamma2) / r);
    Ok(SavScalars { e1, r, g })
}

/// `(2m + 1)! / (m!)^2`, the constant making `int_0^1 h' = 1`.
fn poly_norm(m: u32) -> f64 {
    // (2m+1) * C(2m, m)
    let mut binom = 1.0;
    for k in 1..=m as u64 {
        binom = binom * (m as u64 + k) as f64 / k as f64;
    }
    (2 * m + 1) as f64 * binom
}

/// Antiderivative of `[phi (1 - phi)]^m` vanishing at 0, summed directly.
fn poly_antiderivative(phi: f64, m: u32) -> f64 {
    let mut sum = 0.0;
    let mut binom = 1.0;
    for k in 0..=m {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let p = m + k + 1;
        sum += sign * binom * phi.powi(p as i32) / p as f64;
        binom = binom * (m - k) as f64 / (k + 1) as f64;
    }
    sum
}

pub fn h_val(phi: f64, h: HChoice) -> f64 {
    match h {
        HChoice::Identity => phi,
        HChoice::Polynomial(m) => {
            // h(phi) + h(1 - phi) = 1; sum on the side where terms do not cancel
            if phi <= 0.5 {
                poly_norm(m) * poly_antiderivative(phi, m)
            } else {
                1.0 - poly_norm(m) * poly_antiderivative(1.0 - phi, m)
            }
        }
    }
}

pub fn h_prime(phi: f64, h: HChoice) -> f64 {
    match h {
        HChoice::Identity => 1.0,
        HChoice::Polynomial(m) => poly_norm(m) * (phi * (1.0 - phi)).powi(m as i32),
    }
}

pub fn h_double_prime(phi: f64, h: HChoice) -> f64 {
    match h {
        HChoice::Identity => 0.0,
        HChoice::Polynomial(m) => {
            poly_norm(m) * m as f64 * (phi * (1.0 - phi)).powi(m as i32 - 1) * (1.0 - 2.0 * phi)
        }
    }
}
