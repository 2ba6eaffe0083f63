//! `prefview`: drive a preference-guided viewpoint experiment from the shell.

use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use prefview_core::experiment::{ArmReport, Experiment, ExperimentConfig, IterationOutcome, LabelerMode};
use prefview_core::labels::SharedLabels;
use prefview_core::{Error, Result};
use prefview_service::{AppState, DEFAULT_PORT};

#[derive(Parser)]
#[command(name = "prefview", version, about = "Preference-guided active viewpoint selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelerArg {
    Oracle,
    Human,
    Mixed,
}

impl From<LabelerArg> for LabelerMode {
    fn from(l: LabelerArg) -> Self {
        match l {
            LabelerArg::Oracle => LabelerMode::Oracle,
            LabelerArg::Human => LabelerMode::Human,
            LabelerArg::Mixed => LabelerMode::Mixed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Create an experiment directory from a JSON config (defaults fill missing fields).
    Init {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run online iterations: collect, label, refit the reward, train the policy.
    Run {
        #[arg(long)]
        dir: PathBuf,
        /// Number of iterations to run now (default: the rest of the configured total).
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long, value_enum)]
        labeler: Option<LabelerArg>,
        /// Also serve the feedback API on this port while running.
        #[arg(long)]
        serve: Option<u16>,
    },
    /// Compare the current policy with a uniform-random baseline.
    Evaluate {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, value_enum, default_value = "random")]
        against: Baseline,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Write CSV/JSON reports and eval frames under reports/ and frames/.
    Export {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Serve the feedback API and UI.
    Serve {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        /// Directory holding a UI bundle to serve at `/`.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
}

fn init(config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg: ExperimentConfig = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text)?
        }
        None => ExperimentConfig::default(),
    };
    let cfg = cfg.with_env_seed()?;
    let e = Experiment::init(cfg, out)?;
    println!("initialized {} (seed {})", out.display(), e.config().seed);
    Ok(())
}

fn spawn_service(dir: &Path, labels: Arc<SharedLabels>, port: u16) -> Result<()> {
    let app = Arc::new(AppState::open(dir, Some(labels))?);
    let addr = SocketAddr::from((Ipv4Addr::LOCALHOST, port));
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
        if let Err(e) = rt.block_on(prefview_service::serve(app, addr, None)) {
            eprintln!("feedback service stopped: {e}");
        }
    });
    println!("feedback service on http://{addr}");
    Ok(())
}

fn run(dir: &Path, iterations: Option<usize>, labeler: Option<LabelerArg>, serve: Option<u16>) -> Result<()> {
    let mut e = Experiment::open(dir)?;
    if let Some(l) = labeler {
        e.set_labeler(l.into());
    }
    if let Some(port) = serve {
        spawn_service(dir, e.labels(), port)?;
    }
    for outcome in e.run(iterations)? {
        match outcome {
            IterationOutcome::Completed(s) => println!(
                "iteration {}: {} labeled, {} skipped, dataset {}, reward loss {:.4}, final mean reward {:.3}",
                s.iteration, s.labeled, s.skipped, s.dataset_size, s.reward_final_loss, s.final_mean_reward
            ),
            IterationOutcome::Suspended { iteration, open_pairs } => {
                println!("iteration {iteration} suspended with {open_pairs} pairs awaiting labels; rerun to resume");
            }
        }
    }
    Ok(())
}

fn print_arm(name: &str, a: &ArmReport) {
    println!(
        "{name:<8} masked_psnr {:>8}  masked_ssim {:.4}  psnr {:>8}  ssim {:.4}  path_length {:.3}  oracle {:.4}",
        a.masked_psnr, a.masked_ssim, a.psnr, a.ssim, a.path_length, a.oracle_score
    );
}

fn evaluate(dir: &Path, episodes: Option<usize>) -> Result<()> {
    let e = Experiment::open_shared(dir)?;
    let report = match episodes {
        Some(n) => e.evaluate(n)?,
        None => e.evaluate_and_save()?,
    };
    println!("policy version {}", report.policy_version);
    print_arm("learned", &report.policy);
    print_arm("random", &report.random);
    Ok(())
}

fn export(dir: &Path) -> Result<()> {
    let e = Experiment::open_shared(dir)?;
    for p in e.export_report()? {
        println!("{}", p.display());
    }
    Ok(())
}

fn serve(dir: &Path, port: u16, static_dir: Option<PathBuf>) -> Result<()> {
    let app = Arc::new(AppState::open(dir, None)?);
    let addr = SocketAddr::from((Ipv4Addr::LOCALHOST, port));
    println!("feedback service on http://{addr}");
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::State(e.to_string()))?;
    rt.block_on(prefview_service::serve(app, addr, static_dir))
        .map_err(|e| Error::State(format!("service: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Init { config, out } => init(config.as_deref(), &out),
        Command::Run {
            dir,
            iterations,
            labeler,
            serve,
        } => run(&dir, iterations, labeler, serve),
        Command::Evaluate { dir, against: Baseline::Random, episodes } => evaluate(&dir, episodes),
        Command::Export { dir } => export(&dir),
        Command::Serve { dir, port, static_dir } => serve(&dir, port, static_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
