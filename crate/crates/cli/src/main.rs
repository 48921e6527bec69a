use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaptmh::harness::{self, OUT_DIR_ENV};
use adaptmh::{verify, DiagnosticsReport, ExperimentConfig, Suite};
use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "adaptmh",
    version,
    about = "Adaptive Metropolis-Hastings experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run all seeds of a config and write traces, report and manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the environment and the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the randomized property suites.
    Verify {
        /// spd, lemma9, am_equivalence, stationarity or all.
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 1000)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Rebuild the diagnostics report from an existing trace directory.
    Report {
        #[arg(long)]
        trace_dir: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load(path: &Path) -> Result<adaptmh::Experiment> {
    let cfg =
        ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
    cfg.build()
        .with_context(|| format!("validating {}", path.display()))
}

fn print_flags(report: &DiagnosticsReport) {
    for (name, ok) in &report.flags {
        println!("{} {name}", if *ok { "PASS" } else { "FAIL" });
    }
    for note in &report.notes {
        println!("NOTE {note}");
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, out } => {
            let exp = load(&config)?;
            let dir = harness::resolve_out_dir(out.as_deref(), &exp.config);
            log::debug!(
                "output directory from --out, {OUT_DIR_ENV} or config: {}",
                dir.display()
            );
            let art = harness::run_experiment(&exp, &dir)?;
            print_flags(&art.report);
            println!(
                "wrote {} files to {}",
                art.manifest.files.len() + 1,
                dir.display()
            );
            Ok(art.report.all_passed())
        }
        Command::Verify { suite, cases, seed } => {
            let suite: Suite = suite.parse()?;
            let results = verify(suite, cases, seed)?;
            for r in &results {
                println!("{r}");
                for s in &r.samples {
                    println!("    {s}");
                }
            }
            Ok(results.iter().all(|r| r.passed()))
        }
        Command::Report { trace_dir, config } => {
            let exp = load(&config)?;
            let report = harness::report_from_dir(&trace_dir, &exp)?;
            std::fs::write(trace_dir.join(harness::REPORT_FILE), report.to_json()?)?;
            std::fs::write(
                trace_dir.join(harness::ENVELOPES_FILE),
                report.envelopes_csv()?,
            )?;
            print_flags(&report);
            Ok(report.all_passed())
        }
    }
}
