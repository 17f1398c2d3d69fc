use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use amla_core::perf::{min_block_m, validate_tiling, HardwareProfile, TilingConfig, ValidationReport};
use anyhow::Result;
use clap::Args;
use serde::Serialize;
use serde_json::json;

use crate::output::{coded, read_json, with_manifest, Emission, OutputArgs, RunManifest, EXIT_USAGE, EXIT_VALIDATION};

pub const TILING_SCHEMA: &str = "amla.tiling.v1";

#[derive(Debug, Args)]
pub struct TilingArgs {
    /// Built-in tiling (c1-paper, c2-paper); repeatable. Defaults to both.
    #[arg(long = "preset", conflicts_with = "tiling_file")]
    pub presets: Vec<String>,
    /// JSON tiling config, or a list of them.
    #[arg(long)]
    pub tiling_file: Option<PathBuf>,
    #[arg(long, conflicts_with = "profile_file")]
    pub profile: Option<String>,
    #[arg(long)]
    pub profile_file: Option<PathBuf>,
    #[arg(long)]
    pub m: Option<u64>,
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub k: Option<u64>,
    #[arg(long)]
    pub single_m: Option<u64>,
    #[arg(long)]
    pub single_k: Option<u64>,
    #[arg(long)]
    pub single_n: Option<u64>,
    #[arg(long)]
    pub base_m: Option<u64>,
    #[arg(long)]
    pub base_k: Option<u64>,
    #[arg(long)]
    pub base_n: Option<u64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, serde::Deserialize)]
#[serde(untagged)]
enum TilingFile {
    One(TilingConfig),
    Many(Vec<TilingConfig>),
}

#[derive(Debug, Serialize)]
struct StageReport {
    #[serde(flatten)]
    report: ValidationReport,
    all_pass: bool,
    zero_slack: Vec<String>,
}

#[derive(Debug, Serialize)]
struct TilingResult {
    profile: HardwareProfile,
    min_block_m: u64,
    all_pass: bool,
    reports: Vec<StageReport>,
}

fn apply_overrides(t: &mut TilingConfig, args: &TilingArgs) {
    let set = |dst: &mut u64, v: Option<u64>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut t.m, args.m);
    set(&mut t.n, args.n);
    set(&mut t.k, args.k);
    set(&mut t.single_m, args.single_m);
    set(&mut t.single_k, args.single_k);
    set(&mut t.single_n, args.single_n);
    set(&mut t.base_m, args.base_m);
    set(&mut t.base_k, args.base_k);
    set(&mut t.base_n, args.base_n);
}

fn checks_csv(result: &TilingResult) -> String {
    let mut out = format!("# min_block_m: {}\nstage,constraint,used_bytes,limit_bytes,slack_bytes,pass\n", result.min_block_m);
    for r in &result.reports {
        for c in &r.report.checks {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.report.tiling.stage, c.name, c.used_bytes, c.limit_bytes, c.slack_bytes, c.pass
            );
        }
    }
    out
}

pub fn run(args: &TilingArgs) -> Result<u8> {
    let usage = |e: amla_core::Error| coded(EXIT_USAGE, e.to_string());
    let mut tilings = match &args.tiling_file {
        Some(path) => match read_json::<TilingFile>(path, "tiling config")? {
            TilingFile::One(t) => vec![t],
            TilingFile::Many(ts) => ts,
        },
        None => {
            let names: Vec<&str> = if args.presets.is_empty() {
                vec!["c1-paper", "c2-paper"]
            } else {
                args.presets.iter().map(String::as_str).collect()
            };
            names.into_iter().map(TilingConfig::preset).collect::<Result<Vec<_>, _>>().map_err(usage)?
        }
    };
    for t in &mut tilings {
        apply_overrides(t, args);
    }
    let hw = match &args.profile_file {
        Some(path) => {
            let hw: HardwareProfile = read_json(path, "hardware profile")?;
            hw.validate().map_err(usage)?;
            hw
        }
        None => HardwareProfile::preset(args.profile.as_deref().unwrap_or("ascend910-derived")).map_err(usage)?,
    };

    let mut reports = Vec::with_capacity(tilings.len());
    for t in &tilings {
        let report = validate_tiling(t, &hw).map_err(usage)?;
        reports.push(StageReport {
            all_pass: report.all_pass(),
            zero_slack: report.zero_slack().into_iter().map(String::from).collect(),
            report,
        });
    }
    let all_pass = reports.iter().all(|r| r.all_pass);
    let result = TilingResult { min_block_m: min_block_m(&hw, 2), profile: hw, all_pass, reports };
    eprintln!("min_block_m = {}", result.min_block_m);
    for r in &result.reports {
        for c in r.report.checks.iter().filter(|c| !c.pass) {
            eprintln!("{} {}: {} > {} bytes", r.report.tiling.stage, c.name, c.used_bytes, c.limit_bytes);
        }
    }

    let mut params = BTreeMap::new();
    params.insert("tilings".into(), serde_json::to_value(&tilings)?);
    params.insert("profile".into(), json!(result.profile.name));
    let manifest = RunManifest::new("tiling", params, 0)?;
    Emission {
        stem: "tiling".into(),
        json: with_manifest(&manifest, TILING_SCHEMA, &result)?,
        csv: vec![("tiling".into(), checks_csv(&result))],
        manifest,
    }
    .write(&args.output)?;
    Ok(if all_pass { 0 } else { EXIT_VALIDATION })
}
