use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use phaserelay::harness::{run_scenario, ExperimentKind, ScenarioConfig};

/// Relay-attack experiments on phase-based ranging and TDD radio.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    /// Scenario file; defaults to the shipped scenario of the subcommand.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the repetition count.
    #[arg(long, global = true)]
    reps: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Distance manipulation grid.
    Sweep,
    /// Over-the-air relay with manipulation off and on.
    Ota,
    /// Reciprocity detection arms.
    Reciprocity,
    /// Keyless-entry RSS decisions.
    Rss,
    /// Detector and switch trace of one procedure.
    TddTrace,
}

impl Command {
    fn kind(&self) -> ExperimentKind {
        match self {
            Command::Sweep => ExperimentKind::Sweep,
            Command::Ota => ExperimentKind::Ota,
            Command::Reciprocity => ExperimentKind::Reciprocity,
            Command::Rss => ExperimentKind::Rss,
            Command::TddTrace => ExperimentKind::TddTrace,
        }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let kind = cli.command.kind();
    let mut cfg = match &cli.scenario {
        Some(path) => ScenarioConfig::from_file(path)?,
        None => ScenarioConfig::builtin(kind),
    };
    if cfg.kind != kind {
        bail!(
            "scenario is of kind `{}` but the `{}` subcommand was given",
            cfg.kind.as_str(),
            kind.as_str()
        );
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(reps) = cli.reps {
        cfg.repetitions = reps;
    }
    cfg.validate()?;

    let result = run_scenario(&cfg).with_context(|| format!("running scenario `{}`", cfg.id))?;
    result.write_all(&cli.out, kind.as_str())?;

    for g in result.summary() {
        if kind == ExperimentKind::Rss || kind == ExperimentKind::TddTrace {
            break;
        }
        println!(
            "{:<32} n={:<4} {}: mean={:.3} sd={:.3} min={:.3} max={:.3}",
            g.scenario_id, g.count, g.metric, g.mean, g.sd, g.min, g.max
        );
    }
    for (k, v) in &result.stats {
        if !k.ends_with(".lost_tones") && !k.ends_with(".unlocked_reps") {
            println!("{k} = {v:.4}");
        }
    }
    println!("wrote {} rows to {}", result.rows.len(), cli.out.display());
    Ok(())
}
