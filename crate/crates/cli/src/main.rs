use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lvpanel_harness::diagnose::diagnose;
use lvpanel_harness::{emit_outputs, parse_config, run_experiment, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(
    name = "lvpanel",
    version,
    about = "Monte Carlo experiments for panel GLS bias compression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo experiment described by a config file.
    Run(RunArgs),
    /// Compute theorem and row-sum diagnostics for a config's designs.
    Diagnose(RunArgs),
    /// Parse and validate a config, printing it with defaults filled in.
    Validate { config: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, overrides_with = "no_svg")]
    svg: bool,
    #[arg(long = "no-svg", overrides_with = "svg")]
    no_svg: bool,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = parse_config(&self.config)?;
        if let Some(r) = self.reps {
            cfg.reps = r;
        }
        if let Some(s) = self.seed {
            cfg.base_seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        cfg.validate()?;
        if let Some(t) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global()
                .map_err(|e| HarnessError::Config(vec![format!("threads: {e}")]))?;
        }
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Validate { config } => {
            let cfg = parse_config(&config)?;
            print!("{cfg}");
            Ok(())
        }
        Command::Run(args) => {
            let cfg = args.load()?;
            let summary = run_experiment(&cfg)?;
            for p in emit_outputs(&summary, cfg.experiment, "summary", &cfg.out, !args.no_svg)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Diagnose(args) => {
            let cfg = args.load()?;
            let summary = diagnose(&cfg)?;
            for p in emit_outputs(&summary, cfg.experiment, "diagnostics", &cfg.out, !args.no_svg)? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
