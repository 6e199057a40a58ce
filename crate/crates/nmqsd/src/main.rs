use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nmqsd::checks::validation_suite;
use nmqsd::config::{CouplingMode, HierarchyModeKey, RunConfig};
use nmqsd::output::write_outputs;
use nmqsd::runner::{run_ensemble, RunError};
use nmqsd_core::EnsembleError;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_ALL_REJECTED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "nmqsd",
    version,
    about = "Non-Markovian quantum state diffusion for the spin-boson model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file (a previous run_meta.toml also works).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; overrides `threads`.
    #[arg(long)]
    threads: Option<usize>,
    /// Master seed; overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one ensemble and write its outputs.
    Run(Common),
    /// Run a grid of ensembles, one subdirectory each.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Memory rates, comma separated.
        #[arg(long, value_delimiter = ',')]
        gamma: Vec<f64>,
        /// Hierarchy caps, comma separated.
        #[arg(long = "n-max", value_delimiter = ',')]
        n_max: Vec<usize>,
        /// Hierarchy modes: full, bar_O_zero, truncated.
        #[arg(long, value_delimiter = ',')]
        mode: Vec<String>,
        /// Coupling operators: sigma_x, sigma_minus.
        #[arg(long, value_delimiter = ',')]
        coupling: Vec<String>,
    },
    /// Run the built-in reference checks.
    Validate {
        /// Number of noise paths for the correlation check.
        #[arg(long, default_value_t = 100_000)]
        noise_paths: usize,
    },
}

fn load(common: &Common) -> Result<RunConfig, String> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).map_err(|e| e.to_string())?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(t) = common.threads {
        cfg.threads = t;
    }
    if let Some(s) = common.seed {
        cfg.master_seed = s;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn execute(cfg: &RunConfig, dir: &Path) -> Result<(), ExitCode> {
    eprintln!(
        "{}: gamma={} gamma_Gamma={} n_max={} mode={:?} coupling={:?} n_traj={}",
        cfg.label,
        cfg.gamma,
        cfg.gamma_gamma,
        cfg.n_max,
        cfg.hierarchy_mode,
        cfg.coupling_mode,
        cfg.n_traj
    );
    let run = match run_ensemble(cfg) {
        Ok(run) => run,
        Err(RunError::Ensemble(EnsembleError::AllRejected { total })) => {
            eprintln!("error: all {total} trajectories were rejected");
            return Err(ExitCode::from(EXIT_ALL_REJECTED));
        }
        Err(RunError::Config(e)) => {
            eprintln!("error: {e}");
            return Err(ExitCode::from(EXIT_CONFIG));
        }
        Err(e) => {
            eprintln!("error: {e}");
            return Err(ExitCode::from(EXIT_RUNTIME));
        }
    };
    if let Err(e) = write_outputs(&run, dir) {
        eprintln!("error: {e}");
        return Err(ExitCode::from(EXIT_RUNTIME));
    }
    let r = &run.result;
    eprintln!(
        "  accepted {} / {} (R = {:.4}), <N_Q> = {:.2}, E_Nz = {:.2e}, {:.1} s -> {}",
        r.accepted,
        r.total(),
        r.rejection_rate,
        r.mean_final_n_q,
        r.time_averaged_stderr(),
        run.wall_time.as_secs_f64(),
        dir.display()
    );
    Ok(())
}

fn parse_mode(s: &str) -> Result<HierarchyModeKey, String> {
    match s {
        "full" => Ok(HierarchyModeKey::Full),
        "bar_O_zero" => Ok(HierarchyModeKey::BarOZero),
        "truncated" => Ok(HierarchyModeKey::Truncated),
        other => Err(format!("unknown hierarchy mode `{other}`")),
    }
}

fn parse_coupling(s: &str) -> Result<CouplingMode, String> {
    match s {
        "sigma_x" => Ok(CouplingMode::SigmaX),
        "sigma_minus" => Ok(CouplingMode::SigmaMinus),
        other => Err(format!("unknown coupling mode `{other}`")),
    }
}

/// Every combination of the listed values; an empty list keeps the base value.
fn sweep_grid(
    base: &RunConfig,
    gamma: &[f64],
    n_max: &[usize],
    mode: &[String],
    coupling: &[String],
) -> Result<Vec<RunConfig>, String> {
    let gammas = if gamma.is_empty() {
        vec![base.gamma]
    } else {
        gamma.to_vec()
    };
    let caps = if n_max.is_empty() {
        vec![base.n_max]
    } else {
        n_max.to_vec()
    };
    let modes = if mode.is_empty() {
        vec![base.hierarchy_mode]
    } else {
        mode.iter()
            .map(|m| parse_mode(m))
            .collect::<Result<_, _>>()?
    };
    let couplings = if coupling.is_empty() {
        vec![base.coupling_mode]
    } else {
        coupling
            .iter()
            .map(|c| parse_coupling(c))
            .collect::<Result<_, _>>()?
    };
    let mut out = Vec::new();
    for &g in &gammas {
        for &n in &caps {
            for &m in &modes {
                for &c in &couplings {
                    let mode_name = match m {
                        HierarchyModeKey::Full => "full",
                        HierarchyModeKey::BarOZero => "bar_O_zero",
                        HierarchyModeKey::Truncated => "truncated",
                    };
                    let coupling_name = match c {
                        CouplingMode::SigmaX => "sigma_x",
                        CouplingMode::SigmaMinus => "sigma_minus",
                    };
                    let cfg = RunConfig {
                        label: format!("gamma{g}_n{n}_{mode_name}_{coupling_name}"),
                        gamma: g,
                        n_max: n,
                        hierarchy_mode: m,
                        coupling_mode: c,
                        ..base.clone()
                    };
                    cfg.validate().map_err(|e| format!("{}: {e}", cfg.label))?;
                    out.push(cfg);
                }
            }
        }
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(common) => {
            let cfg = match load(&common) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            let dir = cfg.output_dir.clone();
            match execute(&cfg, &dir) {
                Ok(()) => ExitCode::SUCCESS,
                Err(code) => code,
            }
        }
        Command::Sweep {
            common,
            gamma,
            n_max,
            mode,
            coupling,
        } => {
            let grid =
                load(&common).and_then(|base| sweep_grid(&base, &gamma, &n_max, &mode, &coupling));
            let grid = match grid {
                Ok(g) => g,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            let mut status = ExitCode::SUCCESS;
            for cfg in &grid {
                let dir = cfg.output_dir.join(&cfg.label);
                if let Err(code) = execute(cfg, &dir) {
                    status = code;
                }
            }
            status
        }
        Command::Validate { noise_paths } => {
            let outcomes = validation_suite(noise_paths);
            for o in &outcomes {
                println!("{o}");
            }
            if outcomes.iter().all(|o| o.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}
