use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use graphon_fbsde_cli::plot::emit_plot;
use graphon_fbsde_cli::{run, CliResult, Mode, RunConfig};

#[derive(Parser)]
#[command(name = "graphon-fbsde", version, about = "Deep FBSDE solver for graphon portfolio games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory; overrides GFBSDE_OUT and the config file.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    no_plots: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train the equilibrium networks.
    Train(RunArgs),
    /// Roll out a checkpoint on the evaluation batch and write metrics.
    Evaluate(RunArgs),
    /// Train (or load) an equilibrium and measure its exploitability.
    Exploitability(RunArgs),
    /// Compare a checkpoint with the closed-form solution.
    OracleCompare(RunArgs),
    /// Repeat training across batch sizes.
    #[command(name = "sweep-m", alias = "sweep-M")]
    SweepM(RunArgs),
    /// Render CSV artifacts as SVG.
    Plot {
        /// One or more CSV files sharing a schema.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, short, value_name = "FILE")]
        output: PathBuf,
    },
}

fn execute(mode: Mode, args: RunArgs) -> CliResult<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.mode = mode;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.no_plots {
        cfg.plots = false;
    }
    let out = cfg.resolve_out(args.out);
    let manifest = run(&cfg, &out)?;
    println!(
        "{}: wrote {} files to {}",
        manifest.mode,
        manifest.files.len(),
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => execute(Mode::Train, a),
        Command::Evaluate(a) => execute(Mode::Evaluate, a),
        Command::Exploitability(a) => execute(Mode::Exploitability, a),
        Command::OracleCompare(a) => execute(Mode::OracleCompare, a),
        Command::SweepM(a) => execute(Mode::SweepM, a),
        Command::Plot { inputs, output } => {
            let refs: Vec<&std::path::Path> = inputs.iter().map(PathBuf::as_path).collect();
            emit_plot(&refs, &output).map(|warning| {
                if let Some(w) = warning {
                    eprintln!("warning: {w}");
                }
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
