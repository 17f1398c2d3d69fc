//! `amla`: accuracy sweeps, pipeline schedules, roofline tables and tiling
//! checks, with JSON and CSV output.

mod accuracy;
mod output;
mod roofline;
mod schedule;
mod tiling;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use output::{Coded, EXIT_INTERNAL, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "amla", version, about = "Integer-rescaled decode attention: numerics, scheduling and performance model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compare Base and AMLA against the FP32 reference over input distributions.
    Accuracy(accuracy::AccuracyArgs),
    /// Build and simulate a Cube/Vector preload pipeline for a chain.
    Schedule(schedule::ScheduleArgs),
    /// Arithmetic intensity, roofline bound and FLOPS utilization.
    Roofline(roofline::RooflineArgs),
    /// Check Cube-core tile sizes against L0/L1 capacities.
    Tiling(tiling::TilingArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(c) = err.downcast_ref::<Coded>() {
        return c.code;
    }
    match err.chain().find_map(|e| e.downcast_ref::<amla_core::Error>()) {
        Some(amla_core::Error::ScheduleInvalid(_)) => EXIT_INTERNAL,
        _ => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Accuracy(a) => accuracy::run(a),
        Command::Schedule(a) => schedule::run(a),
        Command::Roofline(a) => roofline::run(a),
        Command::Tiling(a) => tiling::run(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
