use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use pguide_cli::{ablate, fixtures, run_file, verify, Axis, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "pguide", version, about = "Partial-guidance diffusion sampling runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample one configured task and write image, trace, metrics and config echo.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `sampler.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Writes every output file into this directory instead.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare dynamic weight on/off or N = 1, 2, 3 over seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        axis: Axis,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        /// Writes the JSON report here; otherwise it follows the table on stdout.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write a built-in synthetic fixture (inputs, prior points, config.json) to a directory.
    Fixture {
        #[arg(long, value_parser = ["inpaint", "colorize", "restore"])]
        kind: String,
        #[arg(long)]
        dir: PathBuf,
    },
    /// Run the acceptance suite on built-in fixtures.
    Verify {
        /// Writes the deterministic JSON report here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let outcome = run_file(&config, &Overrides { seed, out_dir: out })?;
            println!("{}", serde_json::to_string_pretty(&outcome.metrics)?);
            eprintln!("wrote {}", outcome.config.output.image.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Ablate {
            config,
            axis,
            seeds,
            json,
        } => {
            let (cfg, base) = RunConfig::load(&config)?;
            let report = ablate(&cfg, &base, axis, seeds)?;
            print!("{}", report.table());
            let text = serde_json::to_string_pretty(&report)?;
            match json {
                Some(path) => fs::write(&path, text + "\n").with_context(|| path.display().to_string())?,
                None => println!("{text}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Fixture { kind, dir } => {
            fs::create_dir_all(&dir).with_context(|| dir.display().to_string())?;
            let config = match kind.as_str() {
                "inpaint" => fixtures::write_inpaint(&dir)?,
                "colorize" => fixtures::write_colorize(&dir)?,
                _ => fixtures::write_restore(&dir)?,
            };
            println!("{}", config.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { json } => {
            let (report, timed) = verify();
            for t in &timed {
                println!("{}", t.line());
            }
            if let Some(path) = json {
                fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")
                    .with_context(|| path.display().to_string())?;
            }
            let ok = report.passed && timed.iter().all(|t| t.within_budget());
            println!(
                "{}",
                if ok {
                    "all criteria passed"
                } else {
                    "some criteria FAILED"
                }
            );
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}
