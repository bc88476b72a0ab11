//! Initial conditions, experiment configuration, the run loop, file output
//! and the time-step refinement harness.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    convergence_order, discrete_energy, energy_identity_residual, l2_error, state_volume,
    DiagnosticsRecord,
};
use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField};
use crate::potential::{
    AuxiliaryKind, Formulation, HChoice, QDefinition, QUpdatePolicy, DEFAULT_C0, DEFAULT_ETA,
};
use crate::schemes::{bootstrap_step, parse_label, step, SchemeConfig, SchemeState};
use crate::solvers::SolverOptions;

/// Magic bytes opening every binary snapshot.
pub const SNAPSHOT_MAGIC: &[u8; 4] = b"PFLD";
pub const SNAPSHOT_HEADER_LEN: usize = 32;

/// Default amplitude of the random initial condition.
pub const DEFAULT_RANDOM_AMPLITUDE: f64 = 0.05;

/// `1/2 + 1/2 cos(pi x) cos(pi y)` on `[-1, 1]^2`.
pub fn init_cosine(grid: Grid2D) -> Result<ScalarField> {
    let (x0, y0) = grid.origin();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    if !(close(x0, -1.0) && close(y0, -1.0) && close(grid.lx(), 2.0) && close(grid.ly(), 2.0)) {
        return Err(Error::Config(format!(
            "cosine initial condition needs the domain [-1, 1]^2, got origin ({x0}, {y0}) extent ({}, {})",
            grid.lx(),
            grid.ly()
        )));
    }
    Ok(ScalarField::from_fn(grid, |x, y| {
        0.5 + 0.5 * (std::f64::consts::PI * x).cos() * (std::f64::consts::PI * y).cos()
    }))
}

/// Two touching drops of radius 0.2 centred at (0.3, 0.5) and (0.7, 0.5).
pub fn init_two_drops(grid: Grid2D, delta: f64) -> Result<ScalarField> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "drop interface width must be positive, got {delta}"
        )));
    }
    let profile = |r: f64| {
        if r <= 0.2 - delta {
            1.0
        } else if r <= 0.2 {
            ((0.2 - r) / delta).tanh()
        } else {
            0.0
        }
    };
    Ok(ScalarField::from_fn(grid, |x, y| {
        let r1 = ((x - 0.3).powi(2) + (y - 0.5).powi(2)).sqrt();
        let r2 = ((x - 0.7).powi(2) + (y - 0.5).powi(2)).sqrt();
        // the drops do not overlap, so at most one branch is nonzero
        profile(r1).max(profile(r2))
    }))
}

/// `1/2 + amplitude * u`, `u` iid uniform on `[-1, 1]`, from a seeded generator.
pub fn init_random(grid: Grid2D, amplitude: f64, seed: u64) -> Result<ScalarField> {
    if !(0.0..0.5).contains(&amplitude) {
        return Err(Error::InvalidParameter(format!(
            "random amplitude must lie in [0, 0.5), got {amplitude}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(ScalarField::from_fn(grid, |_, _| {
        0.5 + amplitude * rng.random_range(-1.0..=1.0)
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    Cosine,
    TwoDrops {
        #[serde(default = "default_delta")]
        delta: f64,
    },
    Random {
        #[serde(default = "default_amplitude")]
        amplitude: f64,
    },
}

fn default_delta() -> f64 {
    0.01
}

fn default_amplitude() -> f64 {
    DEFAULT_RANDOM_AMPLITUDE
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyName {
    Cn,
    Reset,
    Hybrid,
}

impl std::str::FromStr for PolicyName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cn" => Ok(Self::Cn),
            "reset" => Ok(Self::Reset),
            "hybrid" => Ok(Self::Hybrid),
            _ => Err(Error::Config(format!(
                "unknown policy `{s}` (expected cn, reset or hybrid)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QDefinitionName {
    Shifted,
    Relinearized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotFormat {
    Binary,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub origin: [f64; 2],
    pub extent: [f64; 2],
}

impl Default for DomainSpec {
    fn default() -> Self {
        Self {
            origin: [0.0, 0.0],
            extent: [1.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineSpec {
    /// Coarse step sizes.
    pub dts: Vec<f64>,
    pub reference_dt: f64,
}

fn default_one() -> usize {
    1
}

fn default_tol() -> f64 {
    1e-12
}

fn default_policy() -> PolicyName {
    PolicyName::Cn
}

fn default_q_definition() -> QDefinitionName {
    QDefinitionName::Shifted
}

fn default_threshold() -> f64 {
    1.5e-4
}

fn default_alpha() -> f64 {
    1.0
}

fn default_snapshot_format() -> SnapshotFormat {
    SnapshotFormat::Binary
}

/// A complete experiment, as read from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// One of the ten scheme labels, e.g. `AC-L1-SAV`.
    pub scheme: String,
    pub grid: GridSpec,
    #[serde(default)]
    pub domain: DomainSpec,
    pub gamma1: f64,
    pub gamma2: f64,
    pub mobility: f64,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub c0: Option<f64>,
    /// Degree of the polynomial volume functional (`AC-L2` schemes).
    #[serde(default)]
    pub poly_m: Option<u32>,
    pub dt: f64,
    pub t_end: f64,
    pub initial: InitialCondition,
    /// Steps between diagnostics records; the final step is always recorded.
    #[serde(default = "default_one")]
    pub record_every: usize,
    /// Steps between snapshots; 0 disables them.
    #[serde(default)]
    pub snapshot_every: usize,
    #[serde(default = "default_snapshot_format")]
    pub snapshot_format: SnapshotFormat,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_policy")]
    pub policy: PolicyName,
    #[serde(default = "default_threshold")]
    pub hybrid_threshold: f64,
    #[serde(default = "default_alpha")]
    pub hybrid_alpha: f64,
    #[serde(default = "default_q_definition")]
    pub q_definition: QDefinitionName,
    #[serde(default = "default_tol")]
    pub solver_tol: f64,
    #[serde(default)]
    pub solver_max_iter: Option<usize>,
    #[serde(default)]
    pub refine: Option<RefineSpec>,
}

impl ExperimentConfig {
    /// Minimal configuration; optional keys take their defaults.
    pub fn new(
        scheme: &str,
        grid: GridSpec,
        gamma1: f64,
        gamma2: f64,
        mobility: f64,
        dt: f64,
        t_end: f64,
        initial: InitialCondition,
    ) -> Self {
        Self {
            scheme: scheme.to_string(),
            grid,
            domain: DomainSpec::default(),
            gamma1,
            gamma2,
            mobility,
            eta: None,
            c0: None,
            poly_m: None,
            dt,
            t_end,
            initial,
            record_every: 1,
            snapshot_every: 0,
            snapshot_format: SnapshotFormat::Binary,
            seed: 0,
            policy: PolicyName::Cn,
            hybrid_threshold: default_threshold(),
            hybrid_alpha: default_alpha(),
            q_definition: QDefinitionName::Shifted,
            solver_tol: default_tol(),
            solver_max_iter: None,
            refine: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0) {
            return Err(Error::Config(format!(
                "t_end must be positive, got {}",
                self.t_end
            )));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        self.scheme_config()?;
        self.grid()?;
        self.step_count(self.dt)?;
        if let Some(r) = &self.refine {
            if r.dts.is_empty() {
                return Err(Error::Config("refine.dts is empty".into()));
            }
            for &dt in &r.dts {
                if !(dt > r.reference_dt) {
                    return Err(Error::Config(format!(
                        "refinement step {dt} is not coarser than the reference {}",
                        r.reference_dt
                    )));
                }
                self.step_count(dt)?;
            }
            self.step_count(r.reference_dt)?;
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid2D> {
        Grid2D::with_origin(
            self.grid.nx,
            self.grid.ny,
            self.domain.origin[0],
            self.domain.origin[1],
            self.domain.extent[0],
            self.domain.extent[1],
        )
    }

    /// `t_end / dt`, which must be a whole number of steps.
    pub fn step_count(&self, dt: f64) -> Result<usize> {
        if !(dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        let n = (self.t_end / dt).round();
        if n < 1.0 || (n * dt - self.t_end).abs() > 1e-9 * self.t_end {
            return Err(Error::Config(format!(
                "t_end {} is not a whole number of steps of {dt}",
                self.t_end
            )));
        }
        Ok(n as usize)
    }

    pub fn scheme_config(&self) -> Result<SchemeConfig> {
        self.scheme_config_with_dt(self.dt)
    }

    pub fn scheme_config_with_dt(&self, dt: f64) -> Result<SchemeConfig> {
        let mut cfg =
            SchemeConfig::from_label(&self.scheme, self.gamma1, self.gamma2, self.mobility, dt)?;
        let (_, formulation, h) = parse_label(&self.scheme)?;
        cfg.model.eta = self.eta.unwrap_or(DEFAULT_ETA);
        cfg.model.c0 = self.c0.unwrap_or(DEFAULT_C0);
        if let (HChoice::Polynomial(_), Some(m)) = (h, self.poly_m) {
            cfg.model.h = HChoice::Polynomial(m);
        }
        let policy = match self.policy {
            PolicyName::Cn => QUpdatePolicy::CrankNicolsonOde,
            PolicyName::Reset => QUpdatePolicy::AlgebraicReset,
            PolicyName::Hybrid => QUpdatePolicy::Hybrid {
                threshold: self.hybrid_threshold,
                alpha: self.hybrid_alpha,
            },
        };
        let def = match self.q_definition {
            QDefinitionName::Shifted => QDefinition::Shifted,
            QDefinitionName::Relinearized => QDefinition::Relinearized,
        };
        cfg.aux = match formulation {
            Formulation::Eq => AuxiliaryKind::eq(),
            Formulation::Sav => AuxiliaryKind::sav(),
        }
        .with_policy(policy)
        .with_q_definition(def);
        cfg.solver = SolverOptions {
            tol: self.solver_tol,
            max_iter: self.solver_max_iter,
            ..SolverOptions::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn initial_field(&self) -> Result<ScalarField> {
        let grid = self.grid()?;
        match self.initial {
            InitialCondition::Cosine => init_cosine(grid),
            InitialCondition::TwoDrops { delta } => init_two_drops(grid, delta),
            InitialCondition::Random { amplitude } => init_random(grid, amplitude, self.seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub field: ScalarField,
}

/// Receives output as a run progresses.
pub trait RunObserver {
    fn record(&mut self, rec: &DiagnosticsRecord) -> Result<()>;
    fn snapshot(&mut self, snap: &Snapshot) -> Result<()>;
}

/// Keeps everything in memory.
#[derive(Debug, Default)]
pub struct MemoryObserver {
    pub records: Vec<DiagnosticsRecord>,
    pub snapshots: Vec<Snapshot>,
}

impl RunObserver for MemoryObserver {
    fn record(&mut self, rec: &DiagnosticsRecord) -> Result<()> {
        self.records.push(*rec);
        Ok(())
    }
    fn snapshot(&mut self, snap: &Snapshot) -> Result<()> {
        self.snapshots.push(snap.clone());
        Ok(())
    }
}

/// Streams a diagnostics CSV and snapshot files into a directory.
pub struct DirectoryWriter {
    dir: PathBuf,
    csv: BufWriter<File>,
    format: SnapshotFormat,
}

pub const CSV_HEADER: &str = "step,t,energy,volume,diss_residual,solver_iters";

impl DirectoryWriter {
    pub fn create(dir: &Path, format: SnapshotFormat) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let mut csv = BufWriter::new(File::create(dir.join("diagnostics.csv"))?);
        writeln!(csv, "{CSV_HEADER}")?;
        Ok(Self {
            dir: dir.to_path_buf(),
            csv,
            format,
        })
    }

    pub fn finish(mut self) -> Result<()> {
        self.csv.flush()?;
        Ok(())
    }
}

pub fn format_record(rec: &DiagnosticsRecord) -> String {
    format!(
        "{},{:.16e},{:.16e},{:.16e},{:.16e},{}",
        rec.step, rec.t, rec.energy, rec.volume, rec.diss_residual, rec.solver_iters
    )
}

impl RunObserver for DirectoryWriter {
    fn record(&mut self, rec: &DiagnosticsRecord) -> Result<()> {
        writeln!(self.csv, "{}", format_record(rec))?;
        // keep partial output on disk if a later step fails
        self.csv.flush()?;
        Ok(())
    }

    fn snapshot(&mut self, snap: &Snapshot) -> Result<()> {
        match self.format {
            SnapshotFormat::Binary => {
                let path = self.dir.join(format!("snap_{:08}.pfld", snap.step));
                write_snapshot(&path, snap.t, &snap.field)
            }
            SnapshotFormat::Csv => {
                let path = self.dir.join(format!("snap_{:08}.csv", snap.step));
                write_snapshot_csv(&path, &snap.field)
            }
        }
    }
}

/// 32-byte header (magic, `u32` nx, `u32` ny, 4 pad bytes, `f64` t, 8
/// reserved bytes) then little-endian `f64` values, row-major.
pub fn encode_snapshot(t: f64, field: &ScalarField) -> Vec<u8> {
    let g = field.grid();
    let mut out = Vec::with_capacity(SNAPSHOT_HEADER_LEN + 8 * g.len());
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&(g.nx() as u32).to_le_bytes());
    out.extend_from_slice(&(g.ny() as u32).to_le_bytes());
    out.extend_from_slice(&[0u8; 4]);
    out.extend_from_slice(&t.to_le_bytes());
    out.extend_from_slice(&[0u8; 8]);
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Inverse of [`encode_snapshot`]: `(nx, ny, t, values)`.
pub fn decode_snapshot(bytes: &[u8]) -> Result<(usize, usize, f64, Vec<f64>)> {
    if bytes.len() < SNAPSHOT_HEADER_LEN || &bytes[0..4] != SNAPSHOT_MAGIC {
        return Err(Error::Config("not a snapshot file".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let (nx, ny) = (u32_at(4), u32_at(8));
    let t = f64_at(16);
    if bytes.len() != SNAPSHOT_HEADER_LEN + 8 * nx * ny {
        return Err(Error::Config(format!(
            "snapshot of {nx}x{ny} has {} bytes",
            bytes.len()
        )));
    }
    let values = (0..nx * ny)
        .map(|k| f64_at(SNAPSHOT_HEADER_LEN + 8 * k))
        .collect();
    Ok((nx, ny, t, values))
}

pub fn write_snapshot(path: &Path, t: f64, field: &ScalarField) -> Result<()> {
    fs::write(path, encode_snapshot(t, field))?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<(usize, usize, f64, Vec<f64>)> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_snapshot(&bytes)
}

/// One row per `j`, comma separated.
pub fn write_snapshot_csv(path: &Path, field: &ScalarField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let nx = field.grid().nx();
    for row in field.values().chunks(nx) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// A running simulation: state plus the energy of its current level.
pub struct Simulation {
    pub scheme: SchemeConfig,
    pub state: SchemeState,
    pub energy: f64,
}

/// What one [`Simulation::advance`] produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub energy_prev: f64,
    pub energy: f64,
    pub dissipation: f64,
    pub diss_residual: f64,
    pub solver_iters: usize,
    pub secant_volume_change: Option<f64>,
}

impl Simulation {
    pub fn new(scheme: SchemeConfig, phi0: ScalarField) -> Result<Self> {
        let state = SchemeState::initial(phi0, &scheme)?;
        let energy = discrete_energy(&state, &scheme);
        Ok(Self {
            scheme,
            state,
            energy,
        })
    }

    /// One step; the first one is the bootstrap step. On error the state is untouched.
    pub fn advance(&mut self) -> Result<StepInfo> {
        let res = if self.state.n == 0 {
            bootstrap_step(&self.state, &self.scheme)?
        } else {
            step(&self.state, &self.scheme)?
        };
        let energy_prev = self.energy;
        self.state = res.state;
        self.energy = discrete_energy(&self.state, &self.scheme);
        Ok(StepInfo {
            energy_prev,
            energy: self.energy,
            dissipation: res.dissipation,
            diss_residual: energy_identity_residual(energy_prev, self.energy, res.dissipation),
            solver_iters: res.report.iterations,
            secant_volume_change: res.secant_volume_change,
        })
    }

    pub fn volume(&self) -> f64 {
        state_volume(&self.state, &self.scheme)
    }

    pub fn record(&self, diss_residual: f64, solver_iters: usize) -> DiagnosticsRecord {
        DiagnosticsRecord {
            step: self.state.n,
            t: self.state.t,
            energy: self.energy,
            volume: self.volume(),
            diss_residual,
            solver_iters,
        }
    }
}

/// Run `cfg` to `t_end`, reporting records and snapshots to `observer`.
///
/// Returns the final state. Output produced before a failing step has
/// already been handed to the observer.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    observer: &mut dyn RunObserver,
) -> Result<SchemeState> {
    cfg.validate()?;
    let nsteps = cfg.step_count(cfg.dt)?;
    let mut sim = Simulation::new(cfg.scheme_config()?, cfg.initial_field()?)?;
    observer.record(&sim.record(0.0, 0))?;
    let snapshot = |sim: &Simulation| Snapshot {
        step: sim.state.n,
        t: sim.state.t,
        field: sim.state.phi_cur.clone(),
    };
    if cfg.snapshot_every > 0 {
        observer.snapshot(&snapshot(&sim))?;
    }
    for n in 1..=nsteps {
        let info = sim.advance()?;
        if n % cfg.record_every == 0 || n == nsteps {
            observer.record(&sim.record(info.diss_residual, info.solver_iters))?;
        }
        if cfg.snapshot_every > 0 && (n % cfg.snapshot_every == 0 || n == nsteps) {
            observer.snapshot(&snapshot(&sim))?;
        }
    }
    Ok(sim.state)
}

/// [`run_experiment_with`] collecting output in memory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(Vec<DiagnosticsRecord>, Vec<Snapshot>)> {
    let mut obs = MemoryObserver::default();
    run_experiment_with(cfg, &mut obs)?;
    Ok((obs.records, obs.snapshots))
}

/// Final field of `cfg` run with step `dt`.
pub fn final_field(cfg: &ExperimentConfig, dt: f64) -> Result<ScalarField> {
    let nsteps = cfg.step_count(dt)?;
    let mut sim = Simulation::new(cfg.scheme_config_with_dt(dt)?, cfg.initial_field()?)?;
    for _ in 0..nsteps {
        sim.advance()?;
    }
    Ok(sim.state.phi_cur)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinementRow {
    pub dt: f64,
    pub error: f64,
    /// Order against the previous (coarser) row.
    pub order: Option<f64>,
}

/// Self-convergence study: L2 error at `t_end` of each `dt` against the
/// `reference_dt` solution, with observed orders between consecutive rows.
pub fn refinement_harness(
    base: &ExperimentConfig,
    dts: &[f64],
    reference_dt: f64,
) -> Result<Vec<RefinementRow>> {
    let reference = final_field(base, reference_dt)?;
    let mut sorted = dts.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut rows = Vec::with_capacity(sorted.len());
    for &dt in &sorted {
        let error = if dt == reference_dt {
            0.0
        } else {
            l2_error(&final_field(base, dt)?, &reference)?
        };
        rows.push(RefinementRow {
            dt,
            error,
            order: None,
        });
    }
    fill_orders(&mut rows)?;
    Ok(rows)
}

/// Orders between consecutive rows with positive errors.
pub fn fill_orders(rows: &mut [RefinementRow]) -> Result<()> {
    for i in 1..rows.len() {
        let (a, b) = (rows[i - 1], rows[i]);
        rows[i].order = if a.error > 0.0 && b.error > 0.0 {
            Some(convergence_order(&[a.error, b.error], &[a.dt, b.dt])?[0])
        } else {
            None
        };
    }
    Ok(())
}

pub fn write_refinement_csv(path: &Path, rows: &[RefinementRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "dt,l2_error,order")?;
    for r in rows {
        let order = r.order.map(|o| format!("{o:.6}")).unwrap_or_default();
        writeln!(w, "{:.16e},{:.16e},{order}", r.dt, r.error)?;
    }
    w.flush()?;
    Ok(())
}
