use clap::{Parser, Subcommand};
use kasner_lab::diagnostics::{cmd_evolve, cmd_gen_data, cmd_report, cmd_selftest, cmd_tower, Outcome, RunConfig};
use kasner_lab::Result;
use std::path::PathBuf;
use std::process::ExitCode;

/// Asymptotic data, iterate towers and frame evolution near Kasner-like singularities.
#[derive(Parser, Debug)]
#[command(name = "kasnerlab", version)]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override one config value, e.g. `--override grid.n_pts=24`.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Print nothing on success.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the asymptotic data set and check its constraint residuals.
    GenData,
    /// Build the iterate tower and fit the residual decay rates.
    Tower {
        /// Data file from `gen-data`; rebuilt from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evolve from the tower background and record the energy trace.
    Evolve {
        /// Tower file from `tower`; rebuilt from the config when omitted.
        #[arg(long)]
        tower: Option<PathBuf>,
    },
    /// Summarise tower and trace files into a report and plot data.
    Report {
        /// tower.txt and trace.csv files
        inputs: Vec<PathBuf>,
    },
    /// Run the exact-solution checks.
    Selftest,
}

fn run(cli: &Cli) -> Result<Outcome> {
    let config = || RunConfig::load(cli.config.as_deref(), &cli.overrides);
    match &cli.command {
        Command::GenData => cmd_gen_data(&config()?, &cli.out),
        Command::Tower { data } => cmd_tower(&config()?, data.as_deref(), &cli.out),
        Command::Evolve { tower } => cmd_evolve(&config()?, tower.as_deref(), &cli.out),
        Command::Report { inputs } => cmd_report(inputs, &cli.out),
        Command::Selftest => cmd_selftest(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(4);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let result = run(&cli);
    match &result {
        Ok(outcome) if !cli.quiet || !outcome.pass => print!("{}", outcome.text),
        Ok(_) => {}
        Err(err) => eprintln!("error: {err}"),
    }
    ExitCode::from(status(&result))
}

/// 0 pass, 2 tolerance failure, 3 numerical abort, 4 config error.
fn status(result: &Result<Outcome>) -> u8 {
    match result {
        Ok(o) => o.exit_code() as u8,
        Err(e) => e.exit_code() as u8,
    }
}
