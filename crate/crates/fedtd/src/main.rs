use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedtd::commands;
use fedtd::{ExperimentSpec, HarnessError};

#[derive(Parser)]
#[command(
    name = "fedtd",
    version,
    about = "Federated TD(0) experiments on heterogeneous Markov reward processes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Use this family file instead of generating from the spec.
    #[arg(long)]
    family: Option<PathBuf>,
    /// Output directory; overrides `outputs.dir` in the spec.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an agent family and write family.json.
    Generate(Common),
    /// Run FedTD(0) over every seed in the spec.
    Run(Common),
    /// Sweep the number of agents.
    Sweep(Common),
    /// Check the perturbation bounds on the family.
    VerifyBounds(Common),
    /// Compare two-agent mean-path limits with the closed form.
    BiasCheck(Common),
    /// Mixing times of each agent chain.
    Mixing(Common),
}

fn execute(cmd: &Command) -> Result<(), HarnessError> {
    let (Command::Generate(c)
    | Command::Run(c)
    | Command::Sweep(c)
    | Command::VerifyBounds(c)
    | Command::BiasCheck(c)
    | Command::Mixing(c)) = cmd;
    let spec = ExperimentSpec::load(&c.spec)?;
    let family = c.family.as_deref();
    let out = c.out.as_deref();
    let mut log = std::io::stdout().lock();
    match cmd {
        Command::Generate(_) => commands::cmd_generate(&spec, out, &mut log).map(drop),
        Command::Run(_) => commands::cmd_run(&spec, family, out, &mut log).map(drop),
        Command::Sweep(_) => commands::cmd_sweep(&spec, family, out, &mut log).map(drop),
        Command::VerifyBounds(_) => commands::cmd_verify_bounds(&spec, family, out, &mut log).map(drop),
        Command::BiasCheck(_) => commands::cmd_bias_check(&spec, family, out, &mut log).map(drop),
        Command::Mixing(_) => commands::cmd_mixing(&spec, family, out, &mut log).map(drop),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
