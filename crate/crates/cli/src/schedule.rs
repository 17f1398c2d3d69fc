use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use amla_core::schedule::{
    amla_schedule, brute_force_oracle, max_internal_chains, simulate_pipeline_with, CvChain, CycleSchedule,
    Rotation, SimMode, SimOptions, Timeline, ORACLE_MAX_N,
};
use anyhow::Result;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::output::{coded, read_json, with_manifest, Emission, OutputArgs, RunManifest, EXIT_INTERNAL, EXIT_USAGE};

pub const SCHEDULE_SCHEMA: &str = "amla.schedule.v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Template {
    /// Maximum internal chains (`s = n - 1`).
    Constructive,
    /// The fixed two-pair kernel cycle with only `C2 -> V2` internal.
    Amla,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    SelfTimed,
    TimeTriggered,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    /// Cube durations, comma separated.
    #[arg(long = "c", value_delimiter = ',', requires = "v")]
    pub c: Vec<u64>,
    /// Vector durations, comma separated.
    #[arg(long = "v", value_delimiter = ',', requires = "c")]
    pub v: Vec<u64>,
    /// JSON file `{"c": [...], "v": [...]}` instead of --c/--v.
    #[arg(long, conflicts_with_all = ["c", "v"])]
    pub chain: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Template::Constructive)]
    pub template: Template,
    /// Compare with the exhaustive search (n <= 8).
    #[arg(long)]
    pub oracle: bool,
    /// Steady cycles to simulate.
    #[arg(long, default_value_t = 6)]
    pub cycles: usize,
    #[arg(long, value_enum, default_value_t = Mode::SelfTimed)]
    pub mode: Mode,
    /// Let cycle 1 start before every preload block has finished.
    #[arg(long)]
    pub no_preload_barrier: bool,
    /// Duration of the closing vector block.
    #[arg(long, default_value_t = 0)]
    pub final_vector: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Deserialize)]
struct ChainFile {
    c: Vec<u64>,
    v: Vec<u64>,
}

#[derive(Debug, Serialize)]
struct OracleResult {
    checked: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    s_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    agrees: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

#[derive(Debug, Serialize)]
struct ScheduleResult<'a> {
    chain: &'a CvChain,
    n: usize,
    cube_dominated: bool,
    template: &'static str,
    rotation: Option<Rotation>,
    s: usize,
    preload_count: usize,
    lags: Vec<usize>,
    preload_sequence: Vec<String>,
    internal_edges: Vec<String>,
    cross_cycle_edges: Vec<String>,
    cycle_length: u64,
    cycle_bound: u64,
    steady_cycle_length: Option<u64>,
    steady_stall: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<OracleResult>,
    schedule: &'a CycleSchedule,
    timeline: &'a Timeline,
}

fn template_csv(chain: &CvChain, sched: &CycleSchedule) -> String {
    let mut out = String::from("stage,duration,offset,lag\n");
    for stage in chain.stages() {
        let _ = writeln!(out, "{stage},{},{},{}", chain.duration(stage), sched.offset(stage), sched.lag(stage));
    }
    out
}

pub fn run(args: &ScheduleArgs) -> Result<u8> {
    let (c, v) = match &args.chain {
        Some(path) => {
            let f: ChainFile = read_json(path, "chain")?;
            (f.c, f.v)
        }
        None => (args.c.clone(), args.v.clone()),
    };
    if c.is_empty() {
        return Err(coded(EXIT_USAGE, "give a chain with --c/--v or --chain"));
    }
    let chain = CvChain::new(c, v).map_err(|e| coded(EXIT_USAGE, e.to_string()))?;
    let n = chain.n();

    let (template, sched) = match args.template {
        Template::Constructive => ("constructive", max_internal_chains(&chain).1),
        Template::Amla => ("amla", amla_schedule(&chain).map_err(|e| coded(EXIT_USAGE, e.to_string()))?),
    };
    if !sched.template_feasible(&chain) {
        return Err(coded(EXIT_INTERNAL, "schedule template violates an internal dependency"));
    }
    if args.template == Template::Constructive && sched.s() + 1 != n {
        return Err(coded(EXIT_INTERNAL, format!("constructive schedule has s = {}, expected {}", sched.s(), n - 1)));
    }

    let options = SimOptions {
        mode: match args.mode {
            Mode::SelfTimed => SimMode::SelfTimed,
            Mode::TimeTriggered => SimMode::TimeTriggered,
        },
        preload_barrier: !args.no_preload_barrier,
        final_vector: args.final_vector,
    };
    let timeline = simulate_pipeline_with(&chain, &sched, args.cycles, options)
        .map_err(|e| coded(EXIT_INTERNAL, e.to_string()))?;
    if args.template == Template::Constructive && timeline.report.steady_stall != 0 {
        return Err(coded(
            EXIT_INTERNAL,
            format!("constructive schedule stalled for {} in the steady loop", timeline.report.steady_stall),
        ));
    }

    let oracle = if args.oracle {
        Some(if n <= ORACLE_MAX_N {
            let s_max = brute_force_oracle(&chain)?;
            if s_max < sched.s() {
                return Err(coded(
                    EXIT_INTERNAL,
                    format!("schedule claims s = {} but exhaustive search finds at most {s_max}", sched.s()),
                ));
            }
            OracleResult { checked: true, s_max: Some(s_max), agrees: Some(s_max == sched.s()), note: None }
        } else {
            OracleResult {
                checked: false,
                s_max: None,
                agrees: None,
                note: Some(format!("exhaustive search is limited to n <= {ORACLE_MAX_N}")),
            }
        })
    } else {
        None
    };

    let result = ScheduleResult {
        chain: &chain,
        n,
        cube_dominated: chain.cube_dominated(),
        template,
        rotation: sched.rotation,
        s: sched.s(),
        preload_count: sched.preload_count(),
        lags: sched.lags(),
        preload_sequence: sched.preload_sequence().iter().map(|t| format!("{}#{}", t.stage, t.iteration)).collect(),
        internal_edges: sched.internal_edges.iter().map(|e| e.to_string()).collect(),
        cross_cycle_edges: sched.cross_cycle_edges().iter().map(|e| e.to_string()).collect(),
        cycle_length: sched.cycle_length,
        cycle_bound: chain.cycle_bound(),
        steady_cycle_length: timeline.report.steady_cycle_length,
        steady_stall: timeline.report.steady_stall,
        oracle,
        schedule: &sched,
        timeline: &timeline,
    };

    let mut params = BTreeMap::new();
    params.insert("c".into(), json!(chain.cube()));
    params.insert("v".into(), json!(chain.vector()));
    params.insert("template".into(), json!(template));
    params.insert("oracle".into(), json!(args.oracle));
    params.insert("cycles".into(), json!(args.cycles));
    params.insert("mode".into(), serde_json::to_value(options.mode)?);
    params.insert("preload_barrier".into(), json!(options.preload_barrier));
    params.insert("final_vector".into(), json!(options.final_vector));
    let manifest = RunManifest::new("schedule", params, 0)?;

    Emission {
        stem: "schedule".into(),
        json: with_manifest(&manifest, SCHEDULE_SCHEMA, &result)?,
        csv: vec![("timeline".into(), timeline.to_csv()), ("schedule".into(), template_csv(&chain, &sched))],
        manifest,
    }
    .write(&args.output)?;
    Ok(0)
}
