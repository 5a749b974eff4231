use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use entroflow_cli::commands;
use entroflow_cli::config::{parse_list, path_list, RunConfig};
use entroflow_cli::error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "entroflow",
    version,
    about = "Entropic optimal transport and JKO flows on grids"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct PairArgs {
    #[arg(long)]
    mu: PathBuf,
    #[arg(long)]
    nu: PathBuf,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides a config key, e.g. `--set points=128`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(&self.config)?;
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {o:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Entropic transport between two measures; prints cost, entropy and value.
    Transport {
        #[command(flatten)]
        pair: PairArgs,
        #[arg(long)]
        eps: f64,
        /// Writes the dense plan as a CSV matrix.
        #[arg(long)]
        dense_plan: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Regularized values against the exact 1-D cost for decreasing eps.
    GammaSweep {
        #[command(flatten)]
        pair: PairArgs,
        #[arg(long)]
        eps_list: String,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Entropic JKO flow from a config file.
    Flow {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long)]
        save_every: Option<usize>,
    },
    /// L1 errors against the analytic solution at the given times.
    SliceError {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long = "t")]
        times: String,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Total L1 errors over an (eps, tau) grid.
    ErrorTable {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        eps_list: String,
        #[arg(long)]
        tau_list: String,
        #[arg(long = "T")]
        horizon: f64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Entropic barycenter of measures on one grid.
    Barycenter {
        #[arg(long)]
        inputs: String,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        weights: Option<String>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Runs the preset of a figure (3 to 8).
    Figure {
        n: u32,
        /// 128 points in 1-D, 64 per axis in 2-D.
        #[arg(long)]
        reduced: bool,
        /// Prints the resolved configurations without running.
        #[arg(long)]
        print_config: bool,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("ENTROFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        CliError::Config(format!(
            "ENTROFLOW_THREADS must be a positive integer, got {v:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let out = match cli.command {
        Command::Transport {
            pair,
            eps,
            dense_plan,
            out_dir,
        } => commands::transport(
            &pair.mu,
            &pair.nu,
            eps,
            pair.tol,
            pair.max_iter,
            dense_plan.as_deref(),
            &out_dir,
        )?,
        Command::GammaSweep {
            pair,
            eps_list,
            out_dir,
        } => commands::gamma_sweep_csv(
            &pair.mu,
            &pair.nu,
            &parse_list(&eps_list)?,
            pair.tol,
            pair.max_iter,
            &out_dir,
        )?,
        Command::Flow {
            cfg,
            out_dir,
            save_every,
        } => {
            let mut cfg = cfg.load()?;
            if let Some(k) = save_every {
                cfg.set("save_every", &k.to_string())?;
            }
            commands::flow(&cfg, &out_dir)?;
            String::new()
        }
        Command::SliceError {
            cfg,
            times,
            out_dir,
        } => commands::slice_error(&cfg.load()?, &parse_list(&times)?, &out_dir)?,
        Command::ErrorTable {
            cfg,
            eps_list,
            tau_list,
            horizon,
            out_dir,
        } => commands::error_table_csv(
            &cfg.load()?,
            &parse_list(&eps_list)?,
            &parse_list(&tau_list)?,
            horizon,
            &out_dir,
        )?,
        Command::Barycenter {
            inputs,
            eps,
            weights,
            tol,
            max_iter,
            out_dir,
        } => commands::barycenter(
            &path_list(&inputs),
            eps,
            weights.as_deref(),
            tol,
            max_iter,
            &out_dir,
        )?,
        Command::Figure {
            n,
            reduced,
            print_config,
            out_dir,
        } => {
            if print_config {
                commands::print_figure(n, reduced)?
            } else {
                commands::figure(n, reduced, &out_dir)?;
                String::new()
            }
        }
    };
    print!("{out}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
