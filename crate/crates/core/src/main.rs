use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use phasefield::scenarios::{
    refinement_harness, run_experiment_with, write_refinement_csv, DirectoryWriter,
    ExperimentConfig, MemoryObserver, PolicyName, RunObserver,
};
use phasefield::schemes::SchemeConfig;
use phasefield::stability::{growth_rate, measure_growth_rate, MeasureOptions, StabilityQuery};
use phasefield::{Error, Result};

#[derive(Parser)]
#[command(
    name = "phasefield",
    version,
    about = "Linear energy-stable phase-field solvers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write diagnostics (and snapshots) to a directory.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Temporal self-convergence study driven by the config's `refine` block.
    Refine {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Growth rates of Fourier modes about a constant state, as CSV.
    Stability(StabilityArgs),
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    snapshot_every: Option<usize>,
    #[arg(long)]
    policy: Option<PolicyName>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(n) = self.snapshot_every {
            cfg.snapshot_every = n;
        }
        if let Some(p) = self.policy {
            cfg.policy = p;
        }
    }
}

#[derive(Args)]
struct StabilityArgs {
    /// Scheme label; the model part selects the closed form.
    #[arg(long, default_value = "AC-EQ")]
    scheme: String,
    #[arg(long, default_value_t = 5e-2)]
    gamma1: f64,
    #[arg(long, default_value_t = 10.0)]
    gamma2: f64,
    #[arg(long, default_value_t = 1.0)]
    mobility: f64,
    #[arg(long)]
    eta: Option<f64>,
    /// Comma-separated constant states.
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    phiss: Vec<f64>,
    /// Modes `0 <= k, l <= kmax`.
    #[arg(long, default_value_t = 3)]
    kmax: u32,
    /// Also measure each rate from a simulation.
    #[arg(long)]
    measure: bool,
    #[arg(long, default_value_t = 1e-4)]
    dt: f64,
    #[arg(long, default_value_t = 128)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    steps: usize,
}

fn load(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn run(config: &Path, overrides: &Overrides, out_dir: Option<&Path>) -> Result<()> {
    let cfg = load(config, overrides)?;
    let mut observer: Box<dyn RunObserver> = match out_dir {
        Some(dir) => Box::new(DirectoryWriter::create(dir, cfg.snapshot_format)?),
        None => Box::new(MemoryObserver::default()),
    };
    let state = run_experiment_with(&cfg, observer.as_mut())?;
    eprintln!("{}: {} steps to t = {}", cfg.scheme, state.n, state.t);
    Ok(())
}

fn refine(config: &Path, overrides: &Overrides, out_dir: Option<&Path>) -> Result<()> {
    let cfg = load(config, overrides)?;
    let spec = cfg
        .refine
        .clone()
        .ok_or_else(|| Error::Config("config has no `refine` block".into()))?;
    let rows = refinement_harness(&cfg, &spec.dts, spec.reference_dt)?;
    println!("dt,l2_error,order");
    for r in &rows {
        let order = r.order.map(|o| format!("{o:.4}")).unwrap_or_default();
        println!("{:e},{:e},{order}", r.dt, r.error);
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_refinement_csv(&dir.join("refinement.csv"), &rows)?;
    }
    Ok(())
}

fn stability(a: &StabilityArgs) -> Result<()> {
    let mut cfg = SchemeConfig::from_label(&a.scheme, a.gamma1, a.gamma2, a.mobility, a.dt)?;
    if let Some(eta) = a.eta {
        cfg.model.eta = eta;
    }
    let model = a.scheme.rsplit_once('-').map_or(a.scheme.as_str(), |p| p.0);
    let opts = MeasureOptions {
        n: a.n,
        steps: a.steps,
        ..MeasureOptions::default()
    };
    if a.measure {
        println!("model,phiss,k,l,sigma_analytic,sigma_measured");
    } else {
        println!("model,phiss,k,l,sigma_analytic");
    }
    for &phiss in &a.phiss {
        for k in 0..=a.kmax {
            for l in 0..=a.kmax {
                let query = StabilityQuery {
                    model: cfg.model,
                    phiss,
                    k,
                    l,
                };
                let analytic =
                    growth_rate(&query).map_or_else(|_| "nan".into(), |s| format!("{s:e}"));
                if a.measure {
                    let measured = match measure_growth_rate(&cfg, phiss, k, l, &opts) {
                        Ok(s) => format!("{s:e}"),
                        Err(Error::LeftLinearRegime { .. }) => "nan".into(),
                        Err(e) => return Err(e),
                    };
                    println!("{model},{phiss},{k},{l},{analytic},{measured}");
                } else {
                    println!("{model},{phiss},{k},{l},{analytic}");
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            config,
            overrides,
            out_dir,
        } => run(config, overrides, out_dir.as_deref()),
        Command::Refine {
            config,
            overrides,
            out_dir,
        } => refine(config, overrides, out_dir.as_deref()),
        Command::Stability(a) => stability(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
