use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use strainlab_cli::commands;
use strainlab_cli::config::{build, ConfigError, Experiment, Loaded, TolOverrides};
use strainlab_cli::sweep::sweep_cmd;

#[derive(Parser)]
#[command(name = "strainlab", version, about = "Multi-strain age-since-infection epidemic simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct TolArgs {
    /// Final distance tolerance to the predicted set.
    #[arg(long)]
    tol_distance: Option<f64>,
    /// Slack on the susceptible persistence floor.
    #[arg(long)]
    tol_s_floor: Option<f64>,
    /// Lower bound on the forces of surviving strains after the warm-up.
    #[arg(long)]
    tol_force_floor: Option<f64>,
    /// Relative tolerance on Lyapunov increments.
    #[arg(long)]
    tol_lyapunov: Option<f64>,
    /// Warm-up time before floors and the Lyapunov window apply.
    #[arg(long)]
    tol_warmup: Option<f64>,
    /// Mass threshold separating present from absent strains.
    #[arg(long)]
    tol_membership: Option<f64>,
    /// Required separation from alternative sets, as a multiple of the distance tolerance.
    #[arg(long)]
    tol_alternative: Option<f64>,
    /// Slack factor on the decay bound of absent strains.
    #[arg(long)]
    tol_decay_slack: Option<f64>,
}

impl TolArgs {
    fn overrides(&self) -> TolOverrides {
        TolOverrides {
            distance: self.tol_distance,
            s_floor: self.tol_s_floor,
            force_floor: self.tol_force_floor,
            lyapunov: self.tol_lyapunov,
            warmup: self.tol_warmup,
            membership: self.tol_membership,
            alternative: self.tol_alternative,
            decay_slack: self.tol_decay_slack,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment and write the trajectory, snapshots and summary.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Predict the limit set, simulate and verify; exit 0 iff verified.
    Classify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Print the disease-free and endemic equilibria.
    Equilibria {
        #[arg(long)]
        config: PathBuf,
        /// Supercritical block (default: all of them).
        #[arg(long)]
        block: Option<usize>,
        /// Weights on the strains, comma separated, full length.
        #[arg(long, value_delimiter = ',', requires = "block")]
        alpha: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the Lyapunov functionals on the snapshots of a previous run.
    Lyapunov {
        #[arg(long)]
        config: PathBuf,
        /// Output directory of an earlier `simulate` run.
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        block: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        alpha: Option<Vec<f64>>,
        /// Where to write lyapunov.csv (default: the run directory).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Compare a constant-kernel run with the reduced ODE reference.
    OracleCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a parameter sweep.
    Sweep {
        /// Sweep spec: a base config and axes.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        tol: TolArgs,
    },
}

fn load(path: &PathBuf, tol: &TolOverrides) -> Result<Experiment, ConfigError> {
    let loaded = Loaded::read(path)?;
    build(&loaded, tol)
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Simulate { config, out, tol } => commands::simulate_cmd(&load(&config, &tol.overrides())?, &out),
        Command::Classify { config, out, tol } => commands::classify_cmd(&load(&config, &tol.overrides())?, out.as_deref()),
        Command::Equilibria {
            config,
            block,
            alpha,
            out,
        } => commands::equilibria_cmd(
            &load(&config, &TolOverrides::default())?,
            block,
            alpha.as_deref(),
            out.as_deref(),
        ),
        Command::Lyapunov {
            config,
            trajectory,
            block,
            alpha,
            out,
            tol,
        } => commands::lyapunov_cmd(
            &load(&config, &tol.overrides())?,
            &trajectory,
            block,
            alpha.as_deref(),
            out.as_deref(),
        ),
        Command::OracleCheck { config, out } => {
            commands::oracle_check_cmd(&load(&config, &TolOverrides::default())?, out.as_deref())
        }
        Command::Sweep { config, out, jobs, tol } => sweep_cmd(&config, &out, jobs, &tol.overrides()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
