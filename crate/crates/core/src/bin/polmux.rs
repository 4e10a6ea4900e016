use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use polmux::harness::{
    cmd_converge_trace, cmd_dispersion_check, cmd_profile, cmd_simulate, LinkConfig, Summary, DEFAULT_GRID,
};
use polmux::Error;

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "polmux",
    version,
    about = "Polarization-multiplexed carrier self-homodyne link simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the seed from the configuration.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Directory for CSV output.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Grid points per axis for `profile`.
    #[arg(long, global = true, value_name = "N", default_value_t = DEFAULT_GRID)]
    grid: usize,

    /// Whether `simulate` runs the polarization controller.
    #[arg(long, global = true, value_enum, default_value_t = Switch::On)]
    controller: Switch,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Full link with the controller off and on.
    Simulate,
    /// Objective surface over both controller angles.
    Profile,
    /// Compare the controlled link with and without chromatic dispersion.
    DispersionCheck,
    /// Run the controller and export its trace.
    ConvergeTrace,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Switch {
    On,
    Off,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } => EXIT_CONFIG,
        Error::Io(_) | Error::Csv(_) => EXIT_IO,
        _ => EXIT_CHECK_FAILED,
    }
}

fn load_config(cli: &Cli) -> polmux::Result<LinkConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            LinkConfig::from_toml_str(&text)?
        }
        None => LinkConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(summary: &Summary) {
    print!("{}", summary.render());
}

fn run(cli: &Cli) -> polmux::Result<u8> {
    let cfg = load_config(cli)?;
    let out = cli.out.as_deref();
    let code = match cli.command {
        Command::Simulate => {
            let outcome = cmd_simulate(&cfg, cli.controller == Switch::On, out)?;
            emit(&outcome.summary);
            if outcome.converged() {
                0
            } else {
                EXIT_NOT_CONVERGED
            }
        }
        Command::Profile => {
            let (summary, _) = cmd_profile(&cfg, cli.grid, out)?;
            emit(&summary);
            0
        }
        Command::DispersionCheck => {
            let check = cmd_dispersion_check(&cfg, out)?;
            emit(&check.summary);
            if !(check.dispersed.converged() && check.reference.converged()) {
                EXIT_NOT_CONVERGED
            } else if check.passed {
                0
            } else {
                EXIT_CHECK_FAILED
            }
        }
        Command::ConvergeTrace => {
            let (summary, report) = cmd_converge_trace(&cfg, out)?;
            emit(&summary);
            if report.converged {
                0
            } else {
                EXIT_NOT_CONVERGED
            }
        }
    };
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("polmux: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
