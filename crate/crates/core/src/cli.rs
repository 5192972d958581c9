//! Command-line front end.

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::par::Execution;
use crate::scenario::{self, Scenario, ScenarioError, SCENARIO_NAMES};

#[derive(Debug, Parser)]
#[command(name = "rotor-shell", version, about = "Shell kinematics, energy and stereo scenarios")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario file and write its outputs.
    Run {
        /// Scenario JSON file.
        file: PathBuf,
        /// Output directory [default: out/<scenario>].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the analysis grid with N×N points.
        #[arg(long, value_name = "N")]
        grid: Option<usize>,
        /// Override the random seed.
        #[arg(long, value_name = "S")]
        seed: Option<u64>,
        /// Run on a single thread.
        #[arg(long)]
        sequential: bool,
    },
    /// List the built-in scenarios.
    List,
    /// Show the parameters of a scenario with their defaults.
    Describe {
        name: String,
        /// Print a complete scenario file with default values instead.
        #[arg(long)]
        json: bool,
    },
}

pub fn execute(cli: Cli, out: &mut impl Write) -> Result<(), ScenarioError> {
    match cli.command {
        Command::List => {
            for name in SCENARIO_NAMES {
                writeln!(out, "{:<18}{}", name, scenario::describe(name)?.summary)?;
            }
        }
        Command::Describe { name, json } => {
            if json {
                let s = Scenario::default_for(&name)?;
                writeln!(out, "{}", serde_json::to_string_pretty(&s)?)?;
                return Ok(());
            }
            let doc = scenario::describe(&name)?;
            writeln!(out, "{}\n  {}\n", doc.name, doc.summary)?;
            for p in &doc.params {
                writeln!(out, "  {:<20}{:<12}{}", p.name, format!("[{}]", p.unit), p.doc)?;
                writeln!(out, "  {:<20}default: {}", "", p.default)?;
            }
        }
        Command::Run { file, out: dir, grid, seed, sequential } => {
            let mut s = Scenario::load(&file)?;
            if let Some(n) = grid {
                s.set_grid(n);
            }
            if let Some(seed) = seed {
                s.set_seed(seed);
            }
            s.validate()?;
            let exec = if sequential { Execution::Sequential } else { Execution::Parallel };
            let result = scenario::run(&s, exec)?;
            let dir = dir.unwrap_or_else(|| PathBuf::from("out").join(s.name()));
            for path in result.write(&dir)? {
                writeln!(out, "wrote {}", path.display())?;
            }
        }
    }
    Ok(())
}
