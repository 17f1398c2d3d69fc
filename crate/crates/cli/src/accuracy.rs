use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use amla_core::attention::{
    paper_distributions, run_accuracy_sweep_with, AccuracyOptions, AccuracyReport, AmlaOptions,
    AttentionConfig, Compensation, DistributionSpec, ACCURACY_SCHEMA, RNG_ALGORITHM,
};
use amla_core::Precision;
use anyhow::{Context, Result};
use clap::Args;
use serde::Deserialize;
use serde_json::json;

use crate::output::{coded, render_json, with_manifest, read_json, Emission, OutputArgs, RunManifest, EXIT_NUMERIC, EXIT_USAGE};

#[derive(Debug, Args)]
pub struct AccuracyArgs {
    /// JSON config: `attention`, `distributions`, `samples`, `compensation`,
    /// `output_precision`. Flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input distribution, e.g. `gaussian:25` or `uniform:-60:60`; repeatable.
    #[arg(long = "dist")]
    pub dists: Vec<String>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub g: Option<usize>,
    #[arg(long)]
    pub dk: Option<usize>,
    #[arg(long)]
    pub dv: Option<usize>,
    #[arg(long)]
    pub s2: Option<usize>,
    #[arg(long)]
    pub kv_block: Option<usize>,
    /// rounded-over-exact, exact-over-rounded or off.
    #[arg(long)]
    pub compensation: Option<String>,
    /// bf16 or fp32: precision of the kernel outputs before comparison.
    #[arg(long)]
    pub output_precision: Option<String>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum DistEntry {
    Text(String),
    Spec(DistributionSpec),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AccuracyConfigFile {
    attention: Option<AttentionConfig>,
    distributions: Option<Vec<DistEntry>>,
    samples: Option<usize>,
    compensation: Option<String>,
    output_precision: Option<String>,
}

pub const DEFAULT_SAMPLES: usize = 100;

fn parse_precision(s: &str) -> Result<Precision> {
    match s.to_ascii_lowercase().as_str() {
        "bf16" => Ok(Precision::Bf16),
        "fp32" => Ok(Precision::Fp32),
        _ => Err(coded(EXIT_USAGE, format!("unknown output precision {s:?} (expected bf16 or fp32)"))),
    }
}

fn precision_name(p: Precision) -> &'static str {
    match p {
        Precision::Bf16 => "bf16",
        Precision::Fp32 => "fp32",
    }
}

fn compensation_name(c: Compensation) -> &'static str {
    match c {
        Compensation::RoundedOverExact => "rounded-over-exact",
        Compensation::ExactOverRounded => "exact-over-rounded",
        Compensation::Off => "off",
    }
}

struct Resolved {
    cfg: AttentionConfig,
    dists: Vec<DistributionSpec>,
    samples: usize,
    options: AccuracyOptions,
}

fn resolve(args: &AccuracyArgs) -> Result<Resolved> {
    let file: AccuracyConfigFile = match &args.config {
        Some(path) => read_json(path, "accuracy config")?,
        None => AccuracyConfigFile::default(),
    };
    let mut cfg = file.attention.unwrap_or_else(AttentionConfig::paper_default);
    if let Some(x) = args.g {
        cfg.g = x;
    }
    if let Some(x) = args.dk {
        cfg.dk = x;
    }
    if let Some(x) = args.dv {
        cfg.dv = x;
    }
    if let Some(x) = args.s2 {
        cfg.s2 = x;
    }
    if let Some(x) = args.kv_block {
        cfg.kv_block = x;
    }
    if let Some(x) = args.seed {
        cfg.seed = x;
    }
    cfg.validate().map_err(|e| coded(EXIT_USAGE, e.to_string()))?;

    let dists = if !args.dists.is_empty() {
        args.dists
            .iter()
            .map(|s| s.parse::<DistributionSpec>().map_err(|e| coded(EXIT_USAGE, e.to_string())))
            .collect::<Result<Vec<_>>>()?
    } else if let Some(entries) = file.distributions {
        entries
            .into_iter()
            .map(|e| match e {
                DistEntry::Text(s) => s.parse::<DistributionSpec>().map_err(|e| coded(EXIT_USAGE, e.to_string())),
                DistEntry::Spec(d) => Ok(d),
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        paper_distributions()
    };
    if dists.is_empty() {
        return Err(coded(EXIT_USAGE, "no distributions selected"));
    }
    for d in &dists {
        d.validate().map_err(|e| coded(EXIT_USAGE, e.to_string()))?;
    }

    let samples = args.samples.or(file.samples).unwrap_or(DEFAULT_SAMPLES);
    if samples == 0 {
        return Err(coded(EXIT_USAGE, "samples must be at least 1"));
    }
    let compensation = match args.compensation.as_deref().or(file.compensation.as_deref()) {
        Some(s) => s.parse::<Compensation>().map_err(|e| coded(EXIT_USAGE, e.to_string()))?,
        None => Compensation::default(),
    };
    let output = match args.output_precision.as_deref().or(file.output_precision.as_deref()) {
        Some(s) => parse_precision(s)?,
        None => AccuracyOptions::default().output,
    };
    let options = AccuracyOptions { amla: AmlaOptions { compensation, ..AmlaOptions::default() }, output };
    Ok(Resolved { cfg, dists, samples, options })
}

/// Two method rows, one column per distribution: the printed table layout.
pub fn table_csv(report: &AccuracyReport) -> String {
    let mut out = String::from("method");
    for r in &report.results {
        let _ = write!(out, ",{}", r.label);
    }
    out.push('\n');
    for (name, pick) in [("Base", 0), ("AMLA", 1)] {
        out.push_str(name);
        for r in &report.results {
            let stats = if pick == 0 { r.base } else { r.amla };
            let _ = write!(out, ",{:e}", stats.mean);
        }
        out.push('\n');
    }
    out
}

/// Per-distribution mean/min/max rows.
pub fn detail_csv(report: &AccuracyReport) -> String {
    let mut out = String::from(
        "distribution,samples,base_mean,base_min,base_max,amla_mean,amla_min,amla_max,amla_vs_base_mean,clamp_activations,zero_guard_hits,non_finite_outputs\n",
    );
    for r in &report.results {
        let _ = writeln!(
            out,
            "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{},{}",
            r.label,
            r.samples,
            r.base.mean,
            r.base.min,
            r.base.max,
            r.amla.mean,
            r.amla.min,
            r.amla.max,
            r.amla_vs_base.mean,
            r.summary.clamp_activations,
            r.summary.zero_guard_hits,
            r.summary.non_finite_outputs
        );
    }
    out
}

pub fn run(args: &AccuracyArgs) -> Result<u8> {
    let Resolved { cfg, dists, samples, options } = resolve(args)?;
    let mut params = BTreeMap::new();
    params.insert("attention".into(), serde_json::to_value(cfg)?);
    params.insert("distributions".into(), json!(dists.iter().map(|d| d.to_string()).collect::<Vec<_>>()));
    params.insert("samples".into(), json!(samples));
    params.insert("compensation".into(), json!(compensation_name(options.amla.compensation)));
    params.insert("output_precision".into(), json!(precision_name(options.output)));
    params.insert("rng".into(), json!(RNG_ALGORITHM));
    let manifest = RunManifest::new("accuracy", params, cfg.seed)?;

    let report = run_accuracy_sweep_with(&dists, &cfg, samples, options)?;
    let emission = Emission {
        stem: "accuracy".into(),
        json: with_manifest(&manifest, ACCURACY_SCHEMA, &report)?,
        csv: vec![("accuracy".into(), table_csv(&report)), ("accuracy_detail".into(), detail_csv(&report))],
        manifest,
    };

    let blown: usize = report.results.iter().map(|r| r.summary.non_finite_outputs).sum();
    if blown > 0 {
        let dir = args.output.out.clone().unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("accuracy_diagnostics.json");
        fs::write(&path, render_json(&emission.json)?).with_context(|| format!("writing {}", path.display()))?;
        return Err(coded(
            EXIT_NUMERIC,
            format!("{blown} sample(s) produced non-finite output; diagnostics in {}", path.display()),
        ));
    }
    emission.write(&args.output)?;
    Ok(0)
}
