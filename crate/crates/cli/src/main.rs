use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mfd_cli::config::{Prepared, RunConfig, Task};
use mfd_cli::output::write_artifacts;
use mfd_cli::run::{describe_observable, execute, execute_task};
use mfd_cli::sweep::{sweep, write_sweep, Axis};
use mfd_cli::CliError;

#[derive(Parser)]
#[command(name = "mfd", version, about = "Mean-field expansion, exact oracle and closed-form runs from TOML configs")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Seed override for every stochastic component.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the task named in the config.
    Run { config: PathBuf },
    /// Run the task at each value of one parameter.
    Sweep {
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        values: Vec<f64>,
    },
    /// Check the vanishing-odd-moment condition and the convergence certificate.
    Certify { config: PathBuf },
}

fn out_dir(cli_out: &Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    cli_out.clone().or_else(|| cfg.output.dir.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("mfd-out"))
}

fn header(config: &Path, task: &str, p: &Prepared) -> Vec<String> {
    let species = p.model.particles.len();
    vec![
        format!("config: {}", config.display()),
        format!("task: {task}"),
        format!(
            "model: {species} particle species, reservoir dims {:?}, lambda = {}, symmetric = {}, energy conserving = {}",
            p.model.reservoir.dims(),
            p.model.lambda,
            p.model.symmetric(),
            p.model.energy_conserving()
        ),
        format!("observable: {}", describe_observable(&p.observable)),
        format!("numerics: r_max = {}, nu_max = {}, N = {:?}, {} time points", p.numerics.r_max, p.nu_max, p.n_list, p.times.len()),
    ]
}

fn main_inner(cli: Cli) -> Result<(), CliError> {
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(CliError::Schema("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(k).build_global().map_err(|e| CliError::Numeric(e.to_string()))?;
    }
    match &cli.command {
        Command::Run { config } | Command::Certify { config } => {
            let cfg = RunConfig::from_path(config)?;
            let p = cfg.prepare(cli.seed)?;
            let (task, out) = match cli.command {
                Command::Certify { .. } => (Task::Certify, execute_task(&p, Task::Certify)?),
                _ => (p.task, execute(&p)?),
            };
            let dir = out_dir(&cli.out, &cfg);
            write_artifacts(&dir, &header(config, task.name(), &p), &out)?;
            if let Some(f) = out.failure {
                return Err(CliError::Numeric(f));
            }
        }
        Command::Sweep { config, axis, values } => {
            let cfg = RunConfig::from_path(config)?;
            let p = cfg.prepare(cli.seed)?;
            let out = sweep(&cfg, *axis, values, cli.seed)?;
            let dir = out_dir(&cli.out, &cfg);
            write_sweep(&dir, &header(config, &format!("{} sweep over {}", p.task.name(), axis.name()), &p), &out)?;
            if let Some(f) = out.failure() {
                return Err(CliError::Numeric(f));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
