//! Matrix-free Krylov solves and rank-k integral corrections.
//!
//! Every scheme reduces to `A phi + sum_i <c_i, phi> d_i = b` where `A` is a
//! local stencil operator and the sum carries the nonlocal (integral) terms.
//! [`woodbury_solve`] handles the sum with `k + 1` solves against `A` plus a
//! `k x k` dense system.

use std::cell::RefCell;
use std::sync::Arc;

use rustdct::{DctPlanner, TransformType2And3};

use crate::error::{Error, Result};
use crate::grid::{compensated_sum, dot, Grid2D, ScalarField};

/// A linear map on fields of one grid, applied on raw row-major slices.
pub trait LinearOperator {
    fn grid(&self) -> &Grid2D;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    /// Whether the operator is symmetric under the cell inner product.
    fn is_symmetric(&self) -> bool;
    fn label(&self) -> &str;

    fn apply_field(&self, x: &ScalarField) -> ScalarField {
        let mut y = vec![0.0; x.grid().len()];
        self.apply(x.values(), &mut y);
        ScalarField::from_vec_unchecked(*x.grid(), y)
    }
}

/// Wraps a closure as a [`LinearOperator`].
pub struct FnOperator<F> {
    grid: Grid2D,
    symmetric: bool,
    label: String,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64])> FnOperator<F> {
    pub fn new(grid: Grid2D, symmetric: bool, label: impl Into<String>, f: F) -> Self {
        Self {
            grid,
            symmetric,
            label: label.into(),
            f,
        }
    }
}

impl<F: Fn(&[f64], &mut [f64])> LinearOperator for FnOperator<F> {
    fn grid(&self) -> &Grid2D {
        &self.grid
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (self.f)(x, y)
    }
    fn is_symmetric(&self) -> bool {
        self.symmetric
    }
    fn label(&self) -> &str {
        &self.label
    }
}

/// Probe the declared symmetry on a few deterministic vectors.
pub fn check_symmetry(op: &dyn LinearOperator, rel_tol: f64) -> bool {
    let grid = *op.grid();
    let n = grid.len();
    let probe = |seed: u64| -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect()
    };
    let mut au = vec![0.0; n];
    let mut av = vec![0.0; n];
    for k in 0..3 {
        let u = probe(2 * k + 1);
        let v = probe(2 * k + 2);
        op.apply(&u, &mut au);
        op.apply(&v, &mut av);
        let a = dot(&grid, &au, &v);
        let b = dot(&grid, &u, &av);
        let scale = dot(&grid, &au, &au).sqrt() * dot(&grid, &v, &v).sqrt();
        if (a - b).abs() > rel_tol * scale {
            return false;
        }
    }
    true
}

pub trait Preconditioner {
    /// `z = P^{-1} r`
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

/// Constant-coefficient model `c0 I + c1 (-lap) + c2 lap^2` of an operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralSymbol {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl SpectralSymbol {
    fn eval(&self, lambda: f64) -> f64 {
        self.c0 + lambda * (self.c1 + self.c2 * lambda)
    }

    /// Ratio of the largest to the smallest eigenvalue on `grid`.
    pub fn condition_estimate(&self, grid: &Grid2D) -> f64 {
        let lmax = 4.0 / (grid.hx() * grid.hx()) + 4.0 / (grid.hy() * grid.hy());
        self.eval(lmax) / self.eval(0.0)
    }
}

thread_local! {
    static DCT_PLANNER: RefCell<DctPlanner<f64>> = RefCell::new(DctPlanner::new());
}

fn plan(len: usize) -> Arc<dyn TransformType2And3<f64>> {
    DCT_PLANNER.with(|p| p.borrow_mut().plan_dct2(len))
}

/// Exact inverse of a constant-coefficient Neumann operator, applied with
/// DCT-II/III transforms. The cosine modes `cos(pi k (i + 1/2) / n)` are the
/// eigenvectors of the mirror-ghost Laplacian.
pub struct SpectralPreconditioner {
    grid: Grid2D,
    inv_symbol: Vec<f64>,
    dct_x: Arc<dyn TransformType2And3<f64>>,
    dct_y: Arc<dyn TransformType2And3<f64>>,
}

impl SpectralPreconditioner {
    pub fn new(grid: Grid2D, symbol: SpectralSymbol) -> Result<Self> {
        let (nx, ny) = (grid.nx(), grid.ny());
        let eig = |n: usize, h: f64| -> Vec<f64> {
            (0..n)
                .map(|k| {
                    let s = (std::f64::consts::PI * k as f64 / (2.0 * n as f64)).sin();
                    4.0 * s * s / (h * h)
                })
                .collect()
        };
        let ex = eig(nx, grid.hx());
        let ey = eig(ny, grid.hy());
        // DCT-III(DCT-II(x)) = n/2 x in each direction
        let norm = 4.0 / (nx as f64 * ny as f64);
        let mut inv_symbol = Vec::with_capacity(nx * ny);
        for &ly in &ey {
            for &lx in &ex {
                let s = symbol.eval(lx + ly);
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "spectral symbol not positive: {s}"
                    )));
                }
                inv_symbol.push(norm / s);
            }
        }
        Ok(Self {
            grid,
            inv_symbol,
            dct_x: plan(nx),
            dct_y: plan(ny),
        })
    }
}

impl Preconditioner for SpectralPreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        z.copy_from_slice(r);
        for row in z.chunks_exact_mut(nx) {
            self.dct_x.process_dct2(row);
        }
        let mut col = vec![0.0; ny];
        for i in 0..nx {
            for j in 0..ny {
                col[j] = z[j * nx + i];
            }
            self.dct_y.process_dct2(&mut col);
            for j in 0..ny {
                col[j] *= self.inv_symbol[j * nx + i];
            }
            self.dct_y.process_dct3(&mut col);
            for j in 0..ny {
                z[j * nx + i] = col[j];
            }
        }
        for row in z.chunks_exact_mut(nx) {
            self.dct_x.process_dct3(row);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreconditionerKind {
    None,
    Spectral,
    /// Spectral when the constant-coefficient condition estimate exceeds a threshold.
    Auto,
}

const AUTO_SPECTRAL_THRESHOLD: f64 = 20.0;

/// Build a preconditioner for an operator modelled by `symbol`.
pub fn make_preconditioner(
    kind: PreconditionerKind,
    grid: Grid2D,
    symbol: SpectralSymbol,
) -> Result<Box<dyn Preconditioner>> {
    let spectral = match kind {
        PreconditionerKind::None => false,
        PreconditionerKind::Spectral => true,
        PreconditionerKind::Auto => symbol.condition_estimate(&grid) > AUTO_SPECTRAL_THRESHOLD,
    };
    if spectral {
        Ok(Box::new(SpectralPreconditioner::new(grid, symbol)?))
    } else {
        Ok(Box::new(IdentityPreconditioner))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative residual target, `||A x - b|| <= tol ||b||`.
    pub tol: f64,
    /// Iteration cap; `None` means `10 * cells`.
    pub max_iter: Option<usize>,
    pub preconditioner: PreconditionerKind,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: None,
            preconditioner: PreconditionerKind::Auto,
        }
    }
}

impl SolverOptions {
    fn max_iter_for(&self, grid: &Grid2D) -> usize {
        self.max_iter.unwrap_or(10 * grid.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

fn norm2(a: &[f64]) -> f64 {
    edot(a, a).sqrt()
}

fn edot(a: &[f64], b: &[f64]) -> f64 {
    compensated_sum(a.iter().zip(b).map(|(x, y)| x * y))
}

fn true_residual(op: &dyn LinearOperator, x: &[f64], b: &[f64], r: &mut [f64]) -> f64 {
    op.apply(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    norm2(r)
}

fn pcg(
    op: &dyn LinearOperator,
    pc: &dyn Preconditioner,
    b: &[f64],
    tol: f64,
    maxit: usize,
) -> (Vec<f64>, SolveReport) {
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return (
            x,
            SolveReport {
                iterations: 0,
                residual: 0.0,
                converged: true,
            },
        );
    }
    let target = tol * bnorm;
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    let mut q = vec![0.0; n];
    pc.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = edot(&r, &z);
    let mut it = 0;
    let mut rnorm = bnorm;
    let (mut best, mut stalled) = (f64::INFINITY, 0);
    while it < maxit {
        it += 1;
        op.apply(&p, &mut q);
        let pq = edot(&p, &q);
        if !(pq > 0.0) {
            break;
        }
        let alpha = rz / pq;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * q[k];
        }
        rnorm = norm2(&r);
        if rnorm <= target {
            // guard against drift of the recursive residual
            rnorm = true_residual(op, &x, b, &mut r);
            if rnorm <= target {
                return (
                    x,
                    SolveReport {
                        iterations: it,
                        residual: rnorm / bnorm,
                        converged: true,
                    },
                );
            }
            if rnorm < 0.5 * best {
                best = rnorm;
                stalled = 0;
            } else {
                stalled += 1;
                if stalled >= MAX_STALLED_RESTARTS {
                    break;
                }
            }
            pc.apply(&r, &mut z);
            p.copy_from_slice(&z);
            rz = edot(&r, &z);
            continue;
        }
        pc.apply(&r, &mut z);
        let rz_new = edot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    (
        x,
        SolveReport {
            iterations: it,
            residual: rnorm / bnorm,
            converged: false,
        },
    )
}

const MAX_STALLED_RESTARTS: usize = 8;

fn bicgstab(
    op: &dyn LinearOperator,
    pc: &dyn Preconditioner,
    b: &[f64],
    tol: f64,
    maxit: usize,
) -> (Vec<f64>, SolveReport) {
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return (
            x,
            SolveReport {
                iterations: 0,
                residual: 0.0,
                converged: true,
            },
        );
    }
    let target = tol * bnorm;
    let mut r = b.to_vec();
    let mut r0 = r.clone();
    let mut p = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut rnorm = bnorm;
    let mut it = 0;
    let mut restart = false;
    // restarts that fail to improve the true residual; rounding has the last word
    let (mut best, mut stalled) = (f64::INFINITY, 0);
    while it < maxit {
        if restart {
            rnorm = true_residual(op, &x, b, &mut r);
            if rnorm <= target {
                return (
                    x,
                    SolveReport {
                        iterations: it,
                        residual: rnorm / bnorm,
                        converged: true,
                    },
                );
            }
            if rnorm < 0.5 * best {
                best = rnorm;
                stalled = 0;
            } else {
                stalled += 1;
                if stalled >= MAX_STALLED_RESTARTS {
                    break;
                }
            }
            r0.copy_from_slice(&r);
            p.fill(0.0);
            v.fill(0.0);
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            restart = false;
        }
        it += 1;
        let rho_new = edot(&r0, &r);
        if rho_new == 0.0 || !rho_new.is_finite() {
            restart = true;
            continue;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for k in 0..n {
            p[k] = r[k] + beta * (p[k] - omega * v[k]);
        }
        pc.apply(&p, &mut phat);
        op.apply(&phat, &mut v);
        let r0v = edot(&r0, &v);
        if r0v == 0.0 || !r0v.is_finite() {
            restart = true;
            continue;
        }
        alpha = rho / r0v;
        for k in 0..n {
            s[k] = r[k] - alpha * v[k];
        }
        if norm2(&s) <= target {
            for k in 0..n {
                x[k] += alpha * phat[k];
            }
            restart = true;
            continue;
        }
        pc.apply(&s, &mut shat);
        op.apply(&shat, &mut t);
        let tt = edot(&t, &t);
        omega = if tt > 0.0 { edot(&t, &s) / tt } else { 0.0 };
        for k in 0..n {
            x[k] += alpha * phat[k] + omega * shat[k];
            r[k] = s[k] - omega * t[k];
        }
        rnorm = norm2(&r);
        if rnorm <= target || omega == 0.0 {
            restart = true;
        }
    }
    let rnorm_true = true_residual(op, &x, b, &mut r);
    let converged = rnorm_true <= target;
    let _ = rnorm;
    (
        x,
        SolveReport {
            iterations: it,
            residual: rnorm_true / bnorm,
            converged,
        },
    )
}

/// Solve `A x = b` from a zero initial guess.
///
/// Conjugate gradients when `A` is declared symmetric, BiCGStab otherwise.
/// A non-converged solve is reported, not raised; callers decide.
pub fn krylov_solve_with(
    op: &dyn LinearOperator,
    pc: &dyn Preconditioner,
    b: &ScalarField,
    opts: &SolverOptions,
) -> (ScalarField, SolveReport) {
    let grid = *b.grid();
    let maxit = opts.max_iter_for(&grid);
    let (x, rep) = if op.is_symmetric() {
        pcg(op, pc, b.values(), opts.tol, maxit)
    } else {
        bicgstab(op, pc, b.values(), opts.tol, maxit)
    };
    (ScalarField::from_vec_unchecked(grid, x), rep)
}

/// Unpreconditioned [`krylov_solve_with`].
pub fn krylov_solve(
    op: &dyn LinearOperator,
    b: &ScalarField,
    opts: &SolverOptions,
) -> (ScalarField, SolveReport) {
    krylov_solve_with(op, &IdentityPreconditioner, b, opts)
}

/// Low-rank correction `sum_i <c_i, .> d_i`.
#[derive(Debug, Clone, Default)]
pub struct RankCorrection {
    /// `(c_i, d_i)`: functional weight and column.
    pub pairs: Vec<(ScalarField, ScalarField)>,
}

impl RankCorrection {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn push(&mut self, c: ScalarField, d: ScalarField) {
        self.pairs.push((c, d));
    }

    pub fn rank(&self) -> usize {
        self.pairs.len()
    }

    /// `y += sum_i <c_i, x> d_i` on raw slices.
    pub fn apply_add(&self, grid: &Grid2D, x: &[f64], y: &mut [f64]) {
        for (c, d) in &self.pairs {
            let s = dot(grid, c.values(), x);
            for (yk, dk) in y.iter_mut().zip(d.values()) {
                *yk += s * dk;
            }
        }
    }
}

/// Gaussian elimination with partial pivoting; returns the solution and the determinant.
pub(crate) fn dense_solve(mut a: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> (Vec<f64>, f64) {
    let k = rhs.len();
    let mut det = 1.0;
    for col in 0..k {
        let piv = (col..k)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        if piv != col {
            a.swap(piv, col);
            rhs.swap(piv, col);
            det = -det;
        }
        let p = a[col][col];
        det *= p;
        if p == 0.0 {
            return (vec![f64::NAN; k], 0.0);
        }
        for row in col + 1..k {
            let f = a[row][col] / p;
            for c in col..k {
                a[row][c] -= f * a[col][c];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; k];
    for row in (0..k).rev() {
        let mut s = rhs[row];
        for c in row + 1..k {
            s -= a[row][c] * x[c];
        }
        x[row] = s / a[row][row];
    }
    (x, det)
}

/// Solve `A phi + sum_i <c_i, phi> d_i = b` with `k + 1` base solves.
///
/// With `y_j = A^{-1} d_j`, `z = A^{-1} b` and `G_ij = <c_i, y_j>`, the
/// functionals `s = (<c_i, phi>)` solve `(I + G) s = (<c_i, z>)` and
/// `phi = z - sum_j s_j y_j`.
pub fn woodbury_solve_with(
    op: &dyn LinearOperator,
    pc: &dyn Preconditioner,
    corr: &RankCorrection,
    b: &ScalarField,
    opts: &SolverOptions,
) -> Result<(ScalarField, SolveReport)> {
    let grid = *b.grid();
    for (c, d) in &corr.pairs {
        grid.check_same(c.grid())?;
        grid.check_same(d.grid())?;
    }
    let mut iterations = 0;
    let mut solve = |rhs: &ScalarField| -> Result<ScalarField> {
        let (x, rep) = krylov_solve_with(op, pc, rhs, opts);
        iterations += rep.iterations;
        if !rep.converged {
            return Err(Error::NotConverged {
                label: op.label().to_string(),
                iterations: rep.iterations,
                residual: rep.residual,
            });
        }
        Ok(x)
    };
    let z = solve(b)?;
    let ys = corr
        .pairs
        .iter()
        .map(|(_, d)| solve(d))
        .collect::<Result<Vec<_>>>()?;
    let k = corr.rank();
    let mut phi = z;
    if k > 0 {
        let mut m = vec![vec![0.0; k]; k];
        let mut rhs = vec![0.0; k];
        for (i, (c, _)) in corr.pairs.iter().enumerate() {
            for (j, y) in ys.iter().enumerate() {
                m[i][j] = dot(&grid, c.values(), y.values()) + if i == j { 1.0 } else { 0.0 };
            }
            rhs[i] = dot(&grid, c.values(), phi.values());
        }
        let scale: f64 = m
            .iter()
            .map(|row| row.iter().fold(0.0f64, |a, v| a.max(v.abs())))
            .product();
        let (s, det) = dense_solve(m, rhs);
        if !(det.abs() > 1e-14 * scale) || s.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularCorrection { det, scale });
        }
        for (sj, y) in s.iter().zip(&ys) {
            phi.axpy(-sj, y)?;
        }
    }
    // residual of the full corrected system
    let mut res = vec![0.0; grid.len()];
    op.apply(phi.values(), &mut res);
    corr.apply_add(&grid, phi.values(), &mut res);
    for (r, bv) in res.iter_mut().zip(b.values()) {
        *r -= bv;
    }
    let bnorm = norm2(b.values());
    let residual = if bnorm > 0.0 {
        norm2(&res) / bnorm
    } else {
        norm2(&res)
    };
    Ok((
        phi,
        SolveReport {
            iterations,
            residual,
            converged: true,
        },
    ))
}

/// Unpreconditioned [`woodbury_solve_with`].
pub fn woodbury_solve(
    op: &dyn LinearOperator,
    corr: &RankCorrection,
    b: &ScalarField,
    opts: &SolverOptions,
) -> Result<(ScalarField, SolveReport)> {
    woodbury_solve_with(op, &IdentityPreconditioner, corr, b, opts)
}
