use clap::{Parser, Subcommand};
use rhclab_cli::{cmd_certify, cmd_plan, cmd_rhc, cmd_simulate, run_counterexamples, CommonOpts};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "rhclab",
    about = "Trajectory-optimization and receding-horizon control experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: $RHCLAB_OUT/<command> or runs/<command>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Roll the system out under a control and evaluate the cost.
    Simulate(Common),
    /// Run the first-order planner from a warm start.
    Plan(Common),
    /// Check the decay assumptions over a sampled census.
    Certify(Common),
    /// Run the warm-started receding-horizon loop.
    Rhc(Common),
    /// Reproduce both stuck-equilibrium studies.
    Counterexamples {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => with_opts(c, "simulate", cmd_simulate),
        Command::Plan(c) => with_opts(c, "plan", cmd_plan),
        Command::Certify(c) => with_opts(c, "certify", cmd_certify),
        Command::Rhc(c) => with_opts(c, "rhc", cmd_rhc),
        Command::Counterexamples { out, quiet } => {
            let opts = CommonOpts {
                out_dir: CommonOpts::resolve_out(out.clone(), "counterexamples"),
                seed: None,
                quiet: *quiet,
            };
            run_counterexamples(&opts)
        }
    };
    match result {
        Ok(dir) => {
            if !matches!(&cli.command, Command::Counterexamples { quiet: true, .. })
                && !matches!(&cli.command,
                    Command::Simulate(c) | Command::Plan(c) | Command::Certify(c) | Command::Rhc(c)
                        if c.quiet)
            {
                println!("artifacts: {}", dir.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn with_opts(
    c: &Common,
    name: &str,
    f: impl Fn(&std::path::Path, &CommonOpts) -> Result<PathBuf, rhclab_cli::CliError>,
) -> Result<PathBuf, rhclab_cli::CliError> {
    let opts = CommonOpts {
        out_dir: CommonOpts::resolve_out(c.out.clone(), name),
        seed: c.seed,
        quiet: c.quiet,
    };
    f(&c.config, &opts)
}
