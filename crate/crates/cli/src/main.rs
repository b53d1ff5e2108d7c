use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use damped_mhd_cli::commands::{cmd_lemmas, cmd_run, cmd_twin, info_text};
use damped_mhd_cli::{CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "damped-mhd", version, about = "Damped incompressible MHD solver and energy-inequality checks")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long, global = true, env = "DAMPED_MHD_OUT")]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "DAMPED_MHD_THREADS")]
    threads: Option<usize>,
    /// Overrides the solver seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a configuration and check the energy inequalities.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the twin perturbation experiment of a configuration.
    Twin {
        #[arg(long)]
        config: PathBuf,
        /// Perturbation scale; overrides the config's `eps`.
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Verify the inequalities and constants over a parameter matrix.
    Lemmas {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Describe a configuration without running it.
    Info {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load(path: &Path, common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let (Some(seed), Some(s)) = (common.seed, cfg.solver.as_mut()) {
        s.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let status = match &cli.command {
        Command::Run { config } => cmd_run(&load(config, &cli.common)?)?,
        Command::Twin { config, eps } => {
            let mut cfg = load(config, &cli.common)?;
            if let Some(eps) = eps {
                cfg.eps = *eps;
            }
            cfg.validate()?;
            cmd_twin(&cfg)?
        }
        Command::Lemmas { config } => {
            let mut cfg = match config {
                Some(p) => load(p, &cli.common)?,
                None => ExperimentConfig::lemmas_only(cli.common.out.clone().unwrap_or_else(|| "output/lemmas".into())),
            };
            if let Some(seed) = cli.common.seed {
                cfg.lemmas.seed = seed;
            }
            cmd_lemmas(&cfg)?
        }
        Command::Info { config } => {
            let cfg = config.as_ref().map(|p| load(p, &cli.common)).transpose()?;
            print!("{}", info_text(cfg.as_ref())?);
            return Ok(0);
        }
    };
    Ok(status.code())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { CliError::CODE as u8 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(CliError::CODE as u8)
        }
    }
}
