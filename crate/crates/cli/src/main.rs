//! Command-line front end for the cable-graph simulation experiments.
//!
//! `run` executes a named experiment from a TOML config (JSON-lines records
//! to `--out` or stdout, a human-readable verdict table alongside),
//! `validate` checks and normalizes a config, `list-experiments` prints the
//! catalogue. Exit code 0 means every asserted verdict passed.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use cablesoup::experiment::{
    parse_config, run, validate, ExperimentError, ExperimentKind, ResultRecord, RunOutcome,
};

#[derive(Parser)]
#[command(
    name = "cablesoup",
    version,
    about = "Gaussian free fields and random-walk loop soups on cable graphs of lattice boxes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config file.
    Run {
        config: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the sample count.
        #[arg(long)]
        samples: Option<u64>,
        /// Override the worker-thread count (0 = library default).
        #[arg(long)]
        threads: Option<usize>,
        /// Write JSON-lines records here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the per-sample CSV table here (experiments that have one).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Parse and validate a config, printing the normalized form.
    Validate { config: PathBuf },
    /// List the experiment names the runner understands.
    ListExperiments,
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch() -> anyhow::Result<ExitCode> {
    match Cli::parse().command {
        Command::Run {
            config,
            seed,
            samples,
            threads,
            out,
            csv,
        } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let mut raw = parse_config(&text)?;
            if seed.is_some() {
                raw.seed = seed;
            }
            if samples.is_some() {
                raw.samples = samples;
            }
            if threads.is_some() {
                raw.threads = threads;
            }
            if let Some(path) = out {
                raw.out = Some(path.display().to_string());
            }
            if let Some(path) = csv {
                raw.csv = Some(path.display().to_string());
            }
            let cfg = validate(&raw)?;
            let outcome = match run(&cfg) {
                Ok(o) => o,
                Err(e @ ExperimentError::Calibration { .. }) => {
                    eprintln!("error: {e}");
                    return Ok(ExitCode::from(1));
                }
                Err(e) => return Err(e.into()),
            };

            let jsonl = outcome.to_jsonl()?;
            if let Some(path) = &cfg.out {
                std::fs::write(path, &jsonl).with_context(|| format!("writing {path}"))?;
                print_table(&outcome, &mut std::io::stdout())?;
            } else {
                print!("{jsonl}");
                print_table(&outcome, &mut std::io::stderr())?;
            }
            if let Some(path) = &cfg.csv {
                match &outcome.csv {
                    Some(csv_text) => std::fs::write(path, csv_text)
                        .with_context(|| format!("writing {path}"))?,
                    None => eprintln!(
                        "note: {} emits no per-sample table; nothing written to {path}",
                        cfg.experiment.name()
                    ),
                }
            }
            Ok(if outcome.all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Validate { config } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let raw = parse_config(&text)?;
            match validate(&raw) {
                Ok(cfg) => {
                    println!("config ok: {}", cfg.experiment.name());
                    println!("{}", toml::to_string_pretty(&cfg)?);
                    Ok(ExitCode::SUCCESS)
                }
                Err(e) => {
                    eprintln!("{e}");
                    Ok(ExitCode::from(2))
                }
            }
        }
        Command::ListExperiments => {
            for kind in ExperimentKind::ALL {
                println!("{:<22} {}", kind.name(), kind.describe());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn print_table(outcome: &RunOutcome, w: &mut impl std::io::Write) -> std::io::Result<()> {
    for rec in &outcome.records {
        print_record(rec, w)?;
    }
    writeln!(
        w,
        "overall: {}",
        if outcome.all_pass { "PASS" } else { "FAIL" }
    )
}

fn print_record(rec: &ResultRecord, w: &mut impl std::io::Write) -> std::io::Result<()> {
    writeln!(
        w,
        "{} [{}]  seed={}  samples={}  {} ms",
        rec.experiment, rec.label, rec.config.seed, rec.config.samples, rec.wall_clock_ms
    )?;
    for note in &rec.notices {
        writeln!(w, "  note: {note}")?;
    }
    for q in &rec.summary.quantities {
        let verdict = match &q.verdict {
            Some(v) if v.pass => "PASS",
            Some(_) => "FAIL",
            None => "    ",
        };
        let se = q.se.map(|s| format!(" +- {s:.3e}")).unwrap_or_default();
        let criterion = q
            .verdict
            .as_ref()
            .map(|v| format!("  ({})", v.criterion))
            .unwrap_or_default();
        writeln!(
            w,
            "  {verdict}  {:<28} {:.6}{}{}",
            q.name, q.estimate, se, criterion
        )?;
    }
    Ok(())
}
