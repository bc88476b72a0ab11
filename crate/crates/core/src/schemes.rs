//! Linear, second-order, energy-stable time steppers.
//!
//! All ten schemes share one template. The discrete chemical potential at the
//! half step is affine in the unknown `phi^{n+1}`,
//!
//! ```text
//! mu_hat = L_w phi^{n+1} + sum_j s_j <e_j, phi^{n+1}> + R
//! L_w    = -g1 lap + g2 + w
//! ```
//!
//! where `w = (qbar')^2` for EQ and `0` for SAV, the rank-one terms come from
//! the SAV scalar and the penalty, and `R` collects everything known at level
//! `n`. Each model then turns `mu_hat` into a linear system:
//!
//! * Allen–Cahn and penalty: `phi^{n+1} - phi^n = -dt M mu_hat`
//! * Lagrange: `phi^{n+1} - phi^n = -dt M P mu_hat`, with `P` the projector
//!   removing the `hbar'` component
//! * Cahn–Hilliard: `phi^{n+1} - phi^n = dt M lap mu_hat`
//!
//! Overlined coefficients (`qbar'`, `gbar`, `hbar'`) are extrapolated to the
//! half step from levels `n` and `n - 1`, which keeps every scheme linear.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::grid::{
    apply_operator_into, compensated_sum, dot, gradient_energy_slice, laplacian, laplacian_into,
    Grid2D, ScalarField,
};
use crate::potential::{
    h_prime, h_val, q_of_phi, q_prime, sav_scalars, AuxiliaryKind, Formulation, HChoice, ModelKind,
    ModelSpec, QDefinition, QUpdatePolicy,
};
use crate::solvers::{
    make_preconditioner, woodbury_solve_with, LinearOperator, RankCorrection, SolveReport,
    SolverOptions, SpectralSymbol,
};

/// The ten scheme labels, in a fixed order.
pub const SCHEME_LABELS: [&str; 10] = [
    "AC-EQ",
    "AC-SAV",
    "AC-P-EQ",
    "AC-P-SAV",
    "AC-L1-EQ",
    "AC-L1-SAV",
    "AC-L2-EQ",
    "AC-L2-SAV",
    "CH-EQ",
    "CH-SAV",
];

/// Default `m` for the polynomial volume functional of the `L2` schemes.
pub const DEFAULT_POLY_M: u32 = 1;

/// `(kind, formulation, h)` for a scheme label such as `AC-L1-SAV`.
pub fn parse_label(label: &str) -> Result<(ModelKind, Formulation, HChoice)> {
    let (model, form) = label
        .rsplit_once('-')
        .ok_or_else(|| Error::Config(format!("unknown scheme label `{label}`")))?;
    let formulation = match form {
        "EQ" => Formulation::Eq,
        "SAV" => Formulation::Sav,
        _ => return Err(Error::Config(format!("unknown scheme label `{label}`"))),
    };
    let (kind, h) = match model {
        "AC" => (ModelKind::AllenCahn, HChoice::Identity),
        "AC-P" => (ModelKind::AllenCahnPenalty, HChoice::Identity),
        "AC-L1" => (ModelKind::AllenCahnLagrange, HChoice::Identity),
        "AC-L2" => (
            ModelKind::AllenCahnLagrange,
            HChoice::Polynomial(DEFAULT_POLY_M),
        ),
        "CH" => (ModelKind::CahnHilliard, HChoice::Identity),
        _ => return Err(Error::Config(format!("unknown scheme label `{label}`"))),
    };
    Ok((kind, formulation, h))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig {
    pub model: ModelSpec,
    pub aux: AuxiliaryKind,
    pub dt: f64,
    pub solver: SolverOptions,
}

impl SchemeConfig {
    pub fn new(model: ModelSpec, aux: AuxiliaryKind, dt: f64) -> Self {
        Self {
            model,
            aux,
            dt,
            solver: SolverOptions::default(),
        }
    }

    /// Build from a label with default `eta`, `C0` and polynomial degree.
    pub fn from_label(
        label: &str,
        gamma1: f64,
        gamma2: f64,
        mobility: f64,
        dt: f64,
    ) -> Result<Self> {
        let (kind, formulation, h) = parse_label(label)?;
        let model = ModelSpec::new(kind, gamma1, gamma2, mobility).with_h(h);
        let aux = match formulation {
            Formulation::Eq => AuxiliaryKind::eq(),
            Formulation::Sav => AuxiliaryKind::sav(),
        };
        let cfg = Self::new(model, aux, dt);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_solver(mut self, solver: SolverOptions) -> Self {
        self.solver = solver;
        self
    }

    pub fn label(&self) -> String {
        let model = match (self.model.kind, self.model.h) {
            (ModelKind::AllenCahn, _) => "AC",
            (ModelKind::AllenCahnPenalty, _) => "AC-P",
            (ModelKind::AllenCahnLagrange, HChoice::Identity) => "AC-L1",
            (ModelKind::AllenCahnLagrange, HChoice::Polynomial(_)) => "AC-L2",
            (ModelKind::CahnHilliard, _) => "CH",
        };
        let form = match self.aux.formulation {
            Formulation::Eq => "EQ",
            Formulation::Sav => "SAV",
        };
        format!("{model}-{form}")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.solver.tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "solver tolerance must be positive, got {}",
                self.solver.tol
            )));
        }
        self.model.validate()?;
        self.aux.validate()
    }

    fn relinearized(&self) -> bool {
        self.aux.formulation == Formulation::Eq
            && self.aux.q_definition == QDefinition::Relinearized
    }

    /// Quadratic split carried by the linear operator. The relinearized
    /// auxiliary already squares to the full bulk potential, so no split.
    pub fn gamma2_split(&self) -> f64 {
        if self.relinearized() {
            0.0
        } else {
            self.model.gamma2
        }
    }
}

/// Levels `n - 1` and `n` of a simulation plus auxiliary variables at level `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeState {
    pub phi_prev: ScalarField,
    pub phi_cur: ScalarField,
    /// EQ auxiliary field.
    pub q: Option<ScalarField>,
    /// SAV scalar.
    pub r: Option<f64>,
    /// Penalty scalar `sqrt(eta) (<phi, 1> - V0)`.
    pub zeta: Option<f64>,
    /// Target volume.
    pub v0: f64,
    pub t: f64,
    pub n: usize,
}

impl SchemeState {
    /// Level-0 state with auxiliaries evaluated from `phi0`.
    pub fn initial(phi0: ScalarField, cfg: &SchemeConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = &cfg.model;
        let (q, r) = match cfg.aux.formulation {
            Formulation::Eq => (Some(q_of_phi(&phi0, spec, cfg.aux.q_definition)?), None),
            Formulation::Sav => (None, Some(sav_scalars(&phi0, spec)?.r)),
        };
        let h = spec.volume_h();
        let v0 = spec.v0.unwrap_or_else(|| volume_of(&phi0, h));
        let zeta = (spec.kind == ModelKind::AllenCahnPenalty)
            .then(|| spec.eta.sqrt() * (phi0.integral() - v0));
        Ok(Self {
            phi_prev: phi0.clone(),
            phi_cur: phi0,
            q,
            r,
            zeta,
            v0,
            t: 0.0,
            n: 0,
        })
    }

    pub fn grid(&self) -> &Grid2D {
        self.phi_cur.grid()
    }
}

/// `<h(phi), 1>`
pub(crate) fn volume_of(phi: &ScalarField, h: HChoice) -> f64 {
    phi.grid().cell_area() * compensated_sum(phi.values().iter().map(|&p| h_val(p, h)))
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub state: SchemeState,
    pub report: SolveReport,
    /// Half-step chemical potential, projected for the Lagrange model.
    pub mu_hat: ScalarField,
    /// `dt M <mu, mu>` (Allen–Cahn family) or `dt M G(mu)` (Cahn–Hilliard).
    pub dissipation: f64,
    /// `<hbar', phi^{n+1} - phi^n>`, the secant volume increment (Lagrange only).
    pub secant_volume_change: Option<f64>,
}

/// `(3 u^n - u^{n-1}) / 2`
pub fn extrapolate(ucur: &ScalarField, uprev: &ScalarField) -> Result<ScalarField> {
    ucur.lin_comb(1.5, uprev, -0.5)
}

/// `(u^{n+1} + u^n) / 2`
pub fn midpoint(unew: &ScalarField, ucur: &ScalarField) -> Result<ScalarField> {
    unew.lin_comb(0.5, ucur, 0.5)
}

pub fn extrapolate_scalar(ucur: f64, uprev: f64) -> f64 {
    1.5 * ucur - 0.5 * uprev
}

pub fn midpoint_scalar(unew: f64, ucur: f64) -> f64 {
    0.5 * (unew + ucur)
}

/// `I + a L_w` (Allen–Cahn family) or `I - a lap L_w` (Cahn–Hilliard).
struct StepOperator<'a> {
    grid: Grid2D,
    conserved: bool,
    a: f64,
    gamma1: f64,
    gamma2: f64,
    w: Option<&'a [f64]>,
    scratch: RefCell<Vec<f64>>,
    label: String,
}

impl StepOperator<'_> {
    fn symbol(&self) -> SpectralSymbol {
        let wbar = self
            .w
            .map_or(0.0, |w| w.iter().sum::<f64>() / w.len() as f64);
        if self.conserved {
            SpectralSymbol {
                c0: 1.0,
                c1: self.a * (self.gamma2 + wbar),
                c2: self.a * self.gamma1,
            }
        } else {
            SpectralSymbol {
                c0: 1.0 + self.a * (self.gamma2 + wbar),
                c1: self.a * self.gamma1,
                c2: 0.0,
            }
        }
    }
}

impl LinearOperator for StepOperator<'_> {
    fn grid(&self) -> &Grid2D {
        &self.grid
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        if self.conserved {
            let mut t = self.scratch.borrow_mut();
            apply_operator_into(&self.grid, self.gamma1, self.gamma2, self.w, x, &mut t);
            laplacian_into(&self.grid, &t, y);
            for (yk, xk) in y.iter_mut().zip(x) {
                *yk = xk - self.a * *yk;
            }
        } else {
            apply_operator_into(&self.grid, self.gamma1, self.gamma2, self.w, x, y);
            for (yk, xk) in y.iter_mut().zip(x) {
                *yk = xk + self.a * *yk;
            }
        }
    }

    fn is_symmetric(&self) -> bool {
        // lap and a nonconstant multiplier do not commute
        !(self.conserved && self.w.is_some())
    }

    fn label(&self) -> &str {
        &self.label
    }
}

/// Everything the solve and the auxiliary updates need at one step.
struct Assembly {
    /// `(e_j, s_j)` of the affine chemical potential.
    mu_pairs: Vec<(ScalarField, ScalarField)>,
    /// Known part `R` of the chemical potential.
    rest: ScalarField,
    w: Option<Vec<f64>>,
    qbar_prime: Option<ScalarField>,
    gbar: Option<ScalarField>,
    hbar_prime: Option<ScalarField>,
}

fn assemble(state: &SchemeState, cfg: &SchemeConfig) -> Result<Assembly> {
    let spec = &cfg.model;
    let grid = *state.grid();
    let phi_n = &state.phi_cur;
    let phi_nm1 = &state.phi_prev;
    grid.check_same(phi_nm1.grid())?;
    let g1 = spec.gamma1;
    let g2 = cfg.gamma2_split();
    let n = grid.len();
    let mut mu_pairs = Vec::new();
    let mut rest = vec![0.0; n];
    let (mut w, mut qbar_prime, mut gbar) = (None, None, None);

    match cfg.aux.formulation {
        Formulation::Eq => {
            let q_n = state.q.as_ref().ok_or_else(|| {
                Error::InvalidParameter("EQ state carries no auxiliary field".into())
            })?;
            let def = cfg.aux.q_definition;
            let qb = extrapolate(&q_prime(phi_n, spec, def)?, &q_prime(phi_nm1, spec, def)?)?;
            let wv: Vec<f64> = qb.values().iter().map(|v| v * v).collect();
            // R = (-g1 lap + g2 - w) phi^n + 2 q^n qbar'
            let neg_w: Vec<f64> = wv.iter().map(|v| -v).collect();
            apply_operator_into(&grid, g1, g2, Some(&neg_w), phi_n.values(), &mut rest);
            for k in 0..n {
                rest[k] += 2.0 * q_n.values()[k] * qb.values()[k];
            }
            w = Some(wv);
            qbar_prime = Some(qb);
        }
        Formulation::Sav => {
            let r_n = state
                .r
                .ok_or_else(|| Error::InvalidParameter("SAV state carries no scalar".into()))?;
            let gb = extrapolate(&sav_scalars(phi_n, spec)?.g, &sav_scalars(phi_nm1, spec)?.g)?;
            // R = L0 phi^n + r^n gbar - gbar/4 <gbar, phi^n>
            apply_operator_into(&grid, g1, g2, None, phi_n.values(), &mut rest);
            let gp = dot(&grid, gb.values(), phi_n.values());
            for k in 0..n {
                rest[k] += (r_n - 0.25 * gp) * gb.values()[k];
            }
            mu_pairs.push((gb.clone(), gb.map(|v| 0.25 * v)));
            gbar = Some(gb);
        }
    }

    if spec.kind == ModelKind::AllenCahnPenalty {
        let zeta = state
            .zeta
            .ok_or_else(|| Error::InvalidParameter("penalty state carries no zeta".into()))?;
        let shift = spec.eta.sqrt() * zeta - 0.5 * spec.eta * phi_n.integral();
        for v in rest.iter_mut() {
            *v += shift;
        }
        mu_pairs.push((
            ScalarField::constant(grid, 1.0),
            ScalarField::constant(grid, 0.5 * spec.eta),
        ));
    }

    let hbar_prime = if spec.kind == ModelKind::AllenCahnLagrange {
        let h = spec.volume_h();
        Some(extrapolate(
            &phi_n.map(|p| h_prime(p, h)),
            &phi_nm1.map(|p| h_prime(p, h)),
        )?)
    } else {
        None
    };

    Ok(Assembly {
        mu_pairs,
        rest: ScalarField::from_vec_unchecked(grid, rest),
        w,
        qbar_prime,
        gbar,
        hbar_prime,
    })
}

/// Projector removing the `hbar'` component; `None` when `hbar'` vanishes.
struct Projector<'a> {
    hb: &'a ScalarField,
    norm2: f64,
}

impl Projector<'_> {
    fn apply(&self, v: &ScalarField) -> ScalarField {
        let grid = *v.grid();
        let c = dot(&grid, self.hb.values(), v.values()) / self.norm2;
        v.lin_comb(1.0, self.hb, -c).expect("same grid")
    }
}

fn lap_field(v: &ScalarField) -> ScalarField {
    laplacian(v)
}

/// One step of either formulation.
pub fn step(state: &SchemeState, cfg: &SchemeConfig) -> Result<StepResult> {
    cfg.validate()?;
    let spec = &cfg.model;
    let grid = *state.grid();
    let asm = assemble(state, cfg)?;
    let a = cfg.dt * spec.mobility;
    let conserved = spec.kind == ModelKind::CahnHilliard;
    let g2 = cfg.gamma2_split();

    let op = StepOperator {
        grid,
        conserved,
        a,
        gamma1: spec.gamma1,
        gamma2: g2,
        w: asm.w.as_deref(),
        scratch: RefCell::new(vec![0.0; grid.len()]),
        label: cfg.label(),
    };

    let projector = asm.hbar_prime.as_ref().and_then(|hb| {
        let norm2 = dot(&grid, hb.values(), hb.values());
        (norm2 > 0.0).then_some(Projector { hb, norm2 })
    });

    let mut corr = RankCorrection::none();
    let rhs;
    if conserved {
        for (e, s) in &asm.mu_pairs {
            let mut d = lap_field(s);
            d.scale(-a);
            corr.push(e.clone(), d);
        }
        rhs = state.phi_cur.lin_comb(1.0, &lap_field(&asm.rest), a)?;
    } else if let Some(p) = &projector {
        // P L_w x = L_w x - hbar' <L_w hbar', x> / |hbar'|^2
        let mut lh = vec![0.0; grid.len()];
        apply_operator_into(
            &grid,
            spec.gamma1,
            g2,
            asm.w.as_deref(),
            p.hb.values(),
            &mut lh,
        );
        let c = ScalarField::from_vec_unchecked(grid, lh);
        let mut d = p.hb.clone();
        d.scale(-a / p.norm2);
        corr.push(c, d);
        for (e, s) in &asm.mu_pairs {
            let mut d = p.apply(s);
            d.scale(a);
            corr.push(e.clone(), d);
        }
        rhs = state.phi_cur.lin_comb(1.0, &p.apply(&asm.rest), -a)?;
    } else {
        for (e, s) in &asm.mu_pairs {
            let mut d = s.clone();
            d.scale(a);
            corr.push(e.clone(), d);
        }
        rhs = state.phi_cur.lin_comb(1.0, &asm.rest, -a)?;
    }

    let pc = make_preconditioner(cfg.solver.preconditioner, grid, op.symbol())?;
    let (phi_new, report) = woodbury_solve_with(&op, pc.as_ref(), &corr, &rhs, &cfg.solver)?;

    // mu_hat at the solution
    let mut mu = vec![0.0; grid.len()];
    apply_operator_into(
        &grid,
        spec.gamma1,
        g2,
        asm.w.as_deref(),
        phi_new.values(),
        &mut mu,
    );
    for (e, s) in &asm.mu_pairs {
        let c = dot(&grid, e.values(), phi_new.values());
        for (m, sv) in mu.iter_mut().zip(s.values()) {
            *m += c * sv;
        }
    }
    for (m, r) in mu.iter_mut().zip(asm.rest.values()) {
        *m += r;
    }
    let mut mu_hat = ScalarField::from_vec_unchecked(grid, mu);
    if let Some(p) = &projector {
        mu_hat = p.apply(&mu_hat);
    }
    let dissipation = if conserved {
        a * gradient_energy_slice(&grid, mu_hat.values())
    } else {
        a * dot(&grid, mu_hat.values(), mu_hat.values())
    };

    let delta = phi_new.lin_comb(1.0, &state.phi_cur, -1.0)?;
    let secant_volume_change = asm
        .hbar_prime
        .as_ref()
        .map(|hb| dot(&grid, hb.values(), delta.values()));

    let q = match (&state.q, &asm.qbar_prime) {
        (Some(q_n), Some(qb)) => {
            grid.check_same(q_n.grid())?;
            let mut q_cn = q_n.clone();
            for ((o, &qbv), &d) in q_cn
                .values_mut()
                .iter_mut()
                .zip(qb.values())
                .zip(delta.values())
            {
                *o += qbv * d;
            }
            Some(update_auxiliary(q_n, q_cn, &state.phi_cur, &phi_new, cfg)?)
        }
        _ => None,
    };
    let r = match (state.r, &asm.gbar) {
        (Some(r_n), Some(gb)) => Some(r_n + 0.5 * dot(&grid, gb.values(), delta.values())),
        _ => None,
    };
    let zeta = state.zeta.map(|z| z + spec.eta.sqrt() * delta.integral());

    let new_state = SchemeState {
        phi_prev: state.phi_cur.clone(),
        phi_cur: phi_new,
        q,
        r,
        zeta,
        v0: state.v0,
        t: state.t + cfg.dt,
        n: state.n + 1,
    };
    Ok(StepResult {
        state: new_state,
        report,
        mu_hat,
        dissipation,
        secant_volume_change,
    })
}

/// [`step`] for an EQ configuration.
pub fn step_eq(state: &SchemeState, cfg: &SchemeConfig) -> Result<StepResult> {
    if cfg.aux.formulation != Formulation::Eq {
        return Err(Error::InvalidParameter(
            "step_eq called with a SAV configuration".into(),
        ));
    }
    step(state, cfg)
}

/// [`step`] for a SAV configuration.
pub fn step_sav(state: &SchemeState, cfg: &SchemeConfig) -> Result<StepResult> {
    if cfg.aux.formulation != Formulation::Sav {
        return Err(Error::InvalidParameter(
            "step_sav called with an EQ configuration".into(),
        ));
    }
    step(state, cfg)
}

/// First step from a single level: the same template with every extrapolated
/// coefficient frozen at level 0.
pub fn bootstrap_step(state0: &SchemeState, cfg: &SchemeConfig) -> Result<StepResult> {
    let mut s = state0.clone();
    s.phi_prev = s.phi_cur.clone();
    step(&s, cfg)
}

/// Advance the EQ auxiliary field once `phi^{n+1}` is known.
///
/// `q_cn` is the Crank–Nicolson value `q^n + qbar' (phi^{n+1} - phi^n)`.
pub fn update_auxiliary(
    q_n: &ScalarField,
    q_cn: ScalarField,
    phi_n: &ScalarField,
    phi_np1: &ScalarField,
    cfg: &SchemeConfig,
) -> Result<ScalarField> {
    let spec = &cfg.model;
    let def = cfg.aux.q_definition;
    match cfg.aux.policy {
        QUpdatePolicy::CrankNicolsonOde => Ok(q_cn),
        QUpdatePolicy::AlgebraicReset => q_of_phi(phi_np1, spec, def),
        QUpdatePolicy::Hybrid { threshold, alpha } => {
            let q_alg = q_of_phi(phi_np1, spec, def)?;
            let drift = q_cn.lin_comb(1.0, &q_alg, -1.0)?.integral();
            if drift <= threshold {
                return Ok(q_cn);
            }
            let factor = relaxation_factor(alpha, cfg.dt);
            let q_alg_n = q_of_phi(phi_n, spec, def)?;
            let lag = q_n.lin_comb(1.0, &q_alg_n, -1.0)?;
            q_alg.lin_comb(1.0, &lag, -factor)
        }
    }
}

/// `(2 - alpha dt) / (2 + alpha dt)`
pub fn relaxation_factor(alpha: f64, dt: f64) -> f64 {
    (2.0 - alpha * dt) / (2.0 + alpha * dt)
}
