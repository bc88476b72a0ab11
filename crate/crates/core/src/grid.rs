//! Uniform cell-centered 2D mesh with homogeneous Neumann difference operators.
//!
//! Values live at cell centers, stored row-major with `i` (the x index)
//! fastest. The Neumann condition is imposed with mirror ghost cells, so the
//! normal flux across every boundary edge vanishes and the discrete Laplacian
//! is symmetric and negative semi-definite under the cell-centered inner
//! product `<f, g> = hx hy sum f_ij g_ij`.

use crate::error::{Error, Result};

/// Uniform rectangular cell-centered mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    x0: f64,
    y0: f64,
}

impl Grid2D {
    /// Grid on `[0, lx] x [0, ly]`.
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        Self::with_origin(nx, ny, 0.0, 0.0, lx, ly)
    }

    /// Grid on `[x0, x0 + lx] x [y0, y0 + ly]`.
    pub fn with_origin(nx: usize, ny: usize, x0: f64, y0: f64, lx: f64, ly: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidGrid(format!(
                "cell counts must be positive, got {nx}x{ny}"
            )));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "extents must be positive, got {lx}x{ly}"
            )));
        }
        if !(x0.is_finite() && y0.is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(Self {
            nx,
            ny,
            lx,
            ly,
            x0,
            y0,
        })
    }

    /// `n x n` cells on the unit square.
    pub fn unit_square(n: usize) -> Result<Self> {
        Self::new(n, n, 1.0, 1.0)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn lx(&self) -> f64 {
        self.lx
    }

    pub fn ly(&self) -> f64 {
        self.ly
    }

    pub fn origin(&self) -> (f64, f64) {
        (self.x0, self.y0)
    }

    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    /// Number of cells.
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Measure of the domain, `lx * ly`.
    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }

    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    /// Flat index of cell `(i, j)`, both zero-based.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// x coordinate of the center of column `i` (zero-based).
    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x0 + (i as f64 + 0.5) * self.hx()
    }

    /// y coordinate of the center of row `j` (zero-based).
    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        self.y0 + (j as f64 + 0.5) * self.hy()
    }

    pub(crate) fn check_same(&self, other: &Grid2D) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// One value per cell of a [`Grid2D`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid2D,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid2D) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid2D, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    /// Wrap raw row-major values. Fails on a length mismatch or a non-finite entry.
    pub fn from_values(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite value at cell ({}, {})",
                k % grid.nx(),
                k / grid.nx()
            )));
        }
        Ok(Self { grid, values })
    }

    /// Sample `f(x, y)` at every cell center.
    pub fn from_fn(grid: Grid2D, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny() {
            let y = grid.y(j);
            for i in 0..grid.nx() {
                values.push(f(grid.x(i), y));
            }
        }
        Self { grid, values }
    }

    pub(crate) fn from_vec_unchecked(grid: Grid2D, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Pointwise map.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_vec_unchecked(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(Self::from_vec_unchecked(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    /// `a * self + b * other`.
    pub fn lin_comb(&self, a: f64, other: &ScalarField, b: f64) -> Result<Self> {
        self.zip_map(other, |x, y| a * x + b * y)
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &ScalarField) -> Result<()> {
        self.grid.check_same(&other.grid)?;
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += a * y;
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        for x in &mut self.values {
            *x *= a;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Integral over the domain, `<self, 1>`.
    pub fn integral(&self) -> f64 {
        self.grid.cell_area() * compensated_sum(self.values.iter().copied())
    }

    /// Discrete L2 norm, `sqrt(<self, self>)`.
    pub fn norm_l2(&self) -> f64 {
        dot(&self.grid, &self.values, &self.values).sqrt()
    }
}

/// Neumaier-compensated sum in iteration order.
///
/// Plain accumulation over nearly uniform fields loses about `N eps`
/// relative, which is enough to break volume identities at 1e-10.
#[inline]
pub(crate) fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Weighted dot product on raw slices, row-major order.
#[inline]
pub(crate) fn dot(grid: &Grid2D, a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    grid.cell_area() * compensated_sum(a.iter().zip(b).map(|(x, y)| x * y))
}

/// Five-point Laplacian with mirror ghost cells, written into `out`.
pub(crate) fn laplacian_into(grid: &Grid2D, u: &[f64], out: &mut [f64]) {
    let nx = grid.nx();
    let ny = grid.ny();
    let ax = 1.0 / (grid.hx() * grid.hx());
    let ay = 1.0 / (grid.hy() * grid.hy());
    debug_assert_eq!(u.len(), nx * ny);
    debug_assert_eq!(out.len(), nx * ny);

    for j in 0..ny {
        let row = &u[j * nx..(j + 1) * nx];
        let out_row = &mut out[j * nx..(j + 1) * nx];
        // x fluxes; the mirrored ghost contributes a zero difference
        if nx == 1 {
            out_row[0] = 0.0;
        } else {
            out_row[0] = ax * (row[1] - row[0]);
            for i in 1..nx - 1 {
                let c = row[i];
                out_row[i] = ax * ((row[i - 1] - c) + (row[i + 1] - c));
            }
            out_row[nx - 1] = ax * (row[nx - 2] - row[nx - 1]);
        }
        if j > 0 {
            let below = &u[(j - 1) * nx..j * nx];
            for i in 0..nx {
                out_row[i] += ay * (below[i] - row[i]);
            }
        }
        if j + 1 < ny {
            let above = &u[(j + 1) * nx..(j + 2) * nx];
            for i in 0..nx {
                out_row[i] += ay * (above[i] - row[i]);
            }
        }
    }
}

/// Discrete Laplacian `d_x D_x u + d_y D_y u` with homogeneous Neumann conditions.
pub fn laplacian(u: &ScalarField) -> ScalarField {
    let mut out = vec![0.0; u.grid.len()];
    laplacian_into(&u.grid, &u.values, &mut out);
    ScalarField::from_vec_unchecked(u.grid, out)
}

/// Cell-centered inner product `hx hy sum f_ij g_ij`.
pub fn inner_product(f: &ScalarField, g: &ScalarField) -> Result<f64> {
    f.grid.check_same(&g.grid)?;
    Ok(dot(&f.grid, &f.values, &g.values))
}

pub(crate) fn gradient_energy_slice(grid: &Grid2D, u: &[f64]) -> f64 {
    let nx = grid.nx();
    let ny = grid.ny();
    let hx = grid.hx();
    let hy = grid.hy();
    let edges = (0..ny).flat_map(move |j| {
        let row = &u[j * nx..(j + 1) * nx];
        let x_edges = (0..nx.saturating_sub(1)).map(move |i| {
            let d = (row[i + 1] - row[i]) / hx;
            d * d
        });
        let y_edges = (0..if j + 1 < ny { nx } else { 0 }).map(move |i| {
            let d = (u[(j + 1) * nx + i] - row[i]) / hy;
            d * d
        });
        x_edges.chain(y_edges)
    });
    hx * hy * compensated_sum(edges)
}

/// `hx hy` times the sum of squared edge differences over interior edges.
///
/// Satisfies `<-laplacian(u), u> = gradient_energy(u)`; boundary edges carry
/// no flux and contribute nothing.
pub fn gradient_energy(u: &ScalarField) -> f64 {
    gradient_energy_slice(&u.grid, &u.values)
}

/// `-g1 * laplacian(u) + g2 * u + w * u` into `out`; `w = None` means zero.
pub(crate) fn apply_operator_into(
    grid: &Grid2D,
    gamma1: f64,
    gamma2: f64,
    w: Option<&[f64]>,
    u: &[f64],
    out: &mut [f64],
) {
    laplacian_into(grid, u, out);
    match w {
        Some(w) => {
            for ((o, &x), &wk) in out.iter_mut().zip(u).zip(w) {
                *o = -gamma1 * *o + (gamma2 + wk) * x;
            }
        }
        None => {
            for (o, &x) in out.iter_mut().zip(u) {
                *o = -gamma1 * *o + gamma2 * x;
            }
        }
    }
}

/// `L u = -gamma1 * laplacian(u) + gamma2 * u + w * u` (pointwise product).
pub fn apply_operator(
    u: &ScalarField,
    gamma1: f64,
    gamma2: f64,
    w: &ScalarField,
) -> Result<ScalarField> {
    u.grid.check_same(&w.grid)?;
    let mut out = vec![0.0; u.grid.len()];
    apply_operator_into(
        &u.grid,
        gamma1,
        gamma2,
        Some(&w.values),
        &u.values,
        &mut out,
    );
    Ok(ScalarField::from_vec_unchecked(u.grid, out))
}
