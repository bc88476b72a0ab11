//! Dense reference constructions shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use phasefield::potential::{Formulation, HChoice, ModelKind};
use phasefield::schemes::{parse_label, SchemeConfig, SchemeState};
use phasefield::{Grid2D, ScalarField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Five-point Neumann Laplacian as a dense matrix. A missing neighbour is the
/// mirror of the cell itself and so contributes nothing.
pub fn dense_laplacian(g: &Grid2D) -> DMatrix<f64> {
    let (nx, ny) = (g.nx(), g.ny());
    let (ax, ay) = (1.0 / (g.hx() * g.hx()), 1.0 / (g.hy() * g.hy()));
    let mut m = DMatrix::zeros(nx * ny, nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let k = j * nx + i;
            let mut link = |other: usize, a: f64| {
                m[(k, other)] += a;
                m[(k, k)] -= a;
            };
            if i > 0 {
                link(k - 1, ax);
            }
            if i + 1 < nx {
                link(k + 1, ax);
            }
            if j > 0 {
                link(k - nx, ay);
            }
            if j + 1 < ny {
                link(k + nx, ay);
            }
        }
    }
    m
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

/// Double well `g2 phi^2 (1 - phi)^2` minus its quadratic split, and derivative.
pub fn f1(phi: f64, g2: f64) -> f64 {
    g2 * phi * phi * (1.0 - phi) * (1.0 - phi) - g2 * phi * phi
}

pub fn f1_prime(phi: f64, g2: f64) -> f64 {
    2.0 * g2 * phi * (1.0 - phi) * (1.0 - 2.0 * phi) - 2.0 * g2 * phi
}

// ---- one step of any scheme as a dense coupled solve ----
//
// Unknowns are phi^{n+1} and the new auxiliaries (q, r, zeta, or the
// Lagrange multiplier); every equation is written from the half-step
// chemical potential, not from the rank-corrected form used by the solver.

pub struct Oracle {
    pub phi: Vec<f64>,
    pub q: Option<Vec<f64>>,
    pub r: Option<f64>,
    pub zeta: Option<f64>,
}

fn extrap(cur: &[f64], prev: &[f64]) -> Vec<f64> {
    cur.iter()
        .zip(prev)
        .map(|(c, p)| 1.5 * c - 0.5 * p)
        .collect()
}

pub fn dense_step(label: &str, cfg: &SchemeConfig, s: &SchemeState) -> Oracle {
    let (kind, form, _) = parse_label(label).unwrap();
    let g = *s.grid();
    let n = g.len();
    let w = g.cell_area();
    let spec = &cfg.model;
    let a = cfg.dt * spec.mobility;
    let c0 = spec.c0;
    let phin = s.phi_cur.values();
    let phim = s.phi_prev.values();
    let lap = dense_laplacian(&g);
    let (g1, g2) = (spec.gamma1, spec.gamma2);
    let l0 = &lap * (-g1) + DMatrix::identity(n, n) * g2;

    // unknown layout: phi, then q (EQ) or r (SAV), then zeta or lambda
    let mut extra = 0;
    let aux_at = n;
    extra += match form {
        Formulation::Eq => n,
        Formulation::Sav => 1,
    };
    let tail = n + extra;
    let has_tail = matches!(
        kind,
        ModelKind::AllenCahnPenalty | ModelKind::AllenCahnLagrange
    );
    if has_tail {
        extra += 1;
    }
    let size = n + extra;

    // mu = mu_x x + mu0
    let mut mu_x = DMatrix::<f64>::zeros(n, size);
    mu_x.view_mut((0, 0), (n, n)).copy_from(&l0);
    let mut mu0 = &l0 * dvec(phin);

    let mut m = DMatrix::<f64>::zeros(size, size);
    let mut rhs = vec![0.0; size];

    match form {
        Formulation::Eq => {
            let qp = |p: &[f64]| -> Vec<f64> {
                p.iter()
                    .map(|&v| f1_prime(v, g2) / (2.0 * (f1(v, g2) + c0).sqrt()))
                    .collect()
            };
            let qb = extrap(&qp(phin), &qp(phim));
            let qn = s.q.as_ref().unwrap().values();
            for k in 0..n {
                // 2 q_half qbar' = (q + q^n) qbar'
                mu_x[(k, aux_at + k)] += qb[k];
                mu0[k] += qn[k] * qb[k];
                // q - qbar' phi = q^n - qbar' phi^n
                m[(aux_at + k, aux_at + k)] = 1.0;
                m[(aux_at + k, k)] = -qb[k];
                rhs[aux_at + k] = qn[k] - qb[k] * phin[k];
            }
        }
        Formulation::Sav => {
            let gfun = |p: &[f64]| -> Vec<f64> {
                let e1: f64 = w * p.iter().map(|&v| f1(v, g2)).sum::<f64>();
                let r = (e1 + c0).sqrt();
                p.iter().map(|&v| f1_prime(v, g2) / r).collect()
            };
            let gb = extrap(&gfun(phin), &gfun(phim));
            let rn = s.r.unwrap();
            for k in 0..n {
                // gbar (r + r^n) / 2
                mu_x[(k, aux_at)] += 0.5 * gb[k];
                mu0[k] += 0.5 * gb[k] * rn;
                m[(aux_at, k)] = -0.5 * w * gb[k];
                rhs[aux_at] -= 0.5 * w * gb[k] * phin[k];
            }
            m[(aux_at, aux_at)] = 1.0;
            rhs[aux_at] += rn;
        }
    }

    match kind {
        ModelKind::AllenCahnPenalty => {
            let se = spec.eta.sqrt();
            let zn = s.zeta.unwrap();
            for k in 0..n {
                mu_x[(k, tail)] += 0.5 * se;
                mu0[k] += 0.5 * se * zn;
                m[(tail, k)] = -se * w;
                rhs[tail] -= se * w * phin[k];
            }
            m[(tail, tail)] = 1.0;
            rhs[tail] += zn;
        }
        ModelKind::AllenCahnLagrange => {
            let hp = |p: &[f64]| -> Vec<f64> {
                match spec.h {
                    HChoice::Identity => vec![1.0; p.len()],
                    // m = 1: h' = 6 phi (1 - phi)
                    _ => p.iter().map(|&v| 6.0 * v * (1.0 - v)).collect(),
                }
            };
            let hb = extrap(&hp(phin), &hp(phim));
            for k in 0..n {
                mu_x[(k, tail)] += hb[k];
                m[(tail, k)] = w * hb[k];
                rhs[tail] += w * hb[k] * phin[k];
            }
        }
        _ => {}
    }

    // phi - phi^n = -a mu (AC) or a lap mu (CH)
    let (op, c): (DMatrix<f64>, f64) = if kind == ModelKind::CahnHilliard {
        (lap.clone(), -a)
    } else {
        (DMatrix::identity(n, n), a)
    };
    let block = &op * &mu_x * c;
    let shift = &op * &mu0 * c;
    for k in 0..n {
        for col in 0..size {
            m[(k, col)] += block[(k, col)];
        }
        m[(k, k)] += 1.0;
        rhs[k] = phin[k] - shift[k];
    }

    let x = m.lu().solve(&dvec(&rhs)).expect("dense system is singular");
    let x = x.as_slice();
    Oracle {
        phi: x[..n].to_vec(),
        q: (form == Formulation::Eq).then(|| x[aux_at..aux_at + n].to_vec()),
        r: (form == Formulation::Sav).then(|| x[aux_at]),
        zeta: (kind == ModelKind::AllenCahnPenalty).then(|| x[tail]),
    }
}

pub fn random_state(cfg: &SchemeConfig, g: Grid2D, seed: u64) -> SchemeState {
    let mut rng = rng(seed);
    let n = g.len();
    let phi_prev = ScalarField::from_values(g, uniform_vec(&mut rng, n, 0.05, 0.95)).unwrap();
    let phi_cur = ScalarField::from_values(g, uniform_vec(&mut rng, n, 0.05, 0.95)).unwrap();
    let mut s = SchemeState::initial(phi_cur, cfg).unwrap();
    s.phi_prev = phi_prev;
    // auxiliaries off their algebraic values, as after Crank-Nicolson drift
    if let Some(q) = s.q.as_mut() {
        for v in q.values_mut() {
            *v += rng.random_range(-1e-2..1e-2);
        }
    }
    if let Some(r) = s.r.as_mut() {
        *r += rng.random_range(-1e-2..1e-2);
    }
    if let Some(z) = s.zeta.as_mut() {
        *z += rng.random_range(-1.0..1.0);
    }
    s.n = 3;
    s
}
