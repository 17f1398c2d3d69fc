use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use amla_core::perf::{
    roofline_row, table1_workloads, table5_runs, HardwareProfile, RooflineRow, Variant, WorkloadSpec,
    ROOFLINE_ASSUMPTIONS,
};
use anyhow::Result;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::output::{coded, read_json, with_manifest, Emission, OutputArgs, RunManifest, EXIT_USAGE};

pub const ROOFLINE_SCHEMA: &str = "amla.roofline.v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WorkloadSet {
    Table1,
    Table5,
}

#[derive(Debug, Args)]
pub struct RooflineArgs {
    /// Built-in workload set.
    #[arg(long, conflicts_with = "workload_file")]
    pub workloads: Option<WorkloadSet>,
    /// JSON list of `{"label", "workload", "duration_us"?}` entries.
    #[arg(long)]
    pub workload_file: Option<PathBuf>,
    /// Hardware profile preset (ascend910-derived, gpu-h800-class).
    #[arg(long, conflicts_with = "profile_file")]
    pub profile: Option<String>,
    /// Hardware profile JSON.
    #[arg(long)]
    pub profile_file: Option<PathBuf>,
    /// Single custom workload: mha, gqa or mla.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub n1: Option<u64>,
    #[arg(long)]
    pub n2: Option<u64>,
    #[arg(long)]
    pub s1: Option<u64>,
    #[arg(long)]
    pub s2: Option<u64>,
    #[arg(long)]
    pub dk: Option<u64>,
    #[arg(long)]
    pub dv: Option<u64>,
    #[arg(long)]
    pub batch: Option<u64>,
    #[arg(long)]
    pub elem_bytes: Option<u64>,
    /// Measured kernel duration for the custom workload, microseconds.
    #[arg(long)]
    pub duration_us: Option<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Deserialize)]
struct WorkloadEntry {
    label: String,
    workload: WorkloadSpec,
    #[serde(default)]
    duration_us: Option<f64>,
}

struct Job {
    label: String,
    workload: WorkloadSpec,
    duration_us: Option<f64>,
    profile: Option<String>,
    reported_fu_percent: Option<f64>,
}

#[derive(Debug, Serialize)]
struct RooflineResult {
    assumptions: Vec<String>,
    profiles: Vec<HardwareProfile>,
    rows: Vec<RooflineRow>,
}

fn custom_workload(args: &RooflineArgs) -> Result<WorkloadSpec> {
    let variant: Variant = args
        .variant
        .as_deref()
        .unwrap_or("mla")
        .parse()
        .map_err(|e: amla_core::Error| coded(EXIT_USAGE, e.to_string()))?;
    let (dk, dv) = if variant == Variant::Mla { (576, 512) } else { (128, 128) };
    let n1 = args.n1.unwrap_or(128);
    let w = WorkloadSpec {
        n1,
        n2: args.n2.unwrap_or(if variant == Variant::Mla { 1 } else { n1 }),
        s1: args.s1.unwrap_or(1),
        s2: args.s2.unwrap_or(4096),
        dk: args.dk.unwrap_or(dk),
        dv: args.dv.unwrap_or(dv),
        batch: args.batch.unwrap_or(1),
        elem_bytes: args.elem_bytes.unwrap_or(2),
        variant,
    };
    w.validate().map_err(|e| coded(EXIT_USAGE, e.to_string()))?;
    Ok(w)
}

fn jobs(args: &RooflineArgs) -> Result<Vec<Job>> {
    let custom_flags = args.variant.is_some()
        || args.n1.is_some()
        || args.n2.is_some()
        || args.s1.is_some()
        || args.s2.is_some()
        || args.dk.is_some()
        || args.dv.is_some()
        || args.batch.is_some()
        || args.elem_bytes.is_some()
        || args.duration_us.is_some();
    if custom_flags && (args.workloads.is_some() || args.workload_file.is_some()) {
        return Err(coded(EXIT_USAGE, "workload flags cannot be combined with --workloads or --workload-file"));
    }
    let plain = |label: String, workload: WorkloadSpec, duration_us: Option<f64>| Job {
        label,
        workload,
        duration_us,
        profile: None,
        reported_fu_percent: None,
    };
    Ok(match (args.workloads, &args.workload_file) {
        (Some(WorkloadSet::Table1), _) => table1_workloads().into_iter().map(|(l, w)| plain(l, w, None)).collect(),
        (Some(WorkloadSet::Table5), _) => table5_runs()
            .into_iter()
            .map(|r| Job {
                label: r.label,
                workload: r.workload,
                duration_us: Some(r.duration_us),
                profile: Some(r.profile),
                reported_fu_percent: Some(r.reported_fu_percent),
            })
            .collect(),
        (None, Some(path)) => {
            let entries: Vec<WorkloadEntry> = read_json(path, "workload list")?;
            entries.into_iter().map(|e| plain(e.label, e.workload, e.duration_us)).collect()
        }
        (None, None) => vec![plain("custom".into(), custom_workload(args)?, args.duration_us)],
    })
}

fn profile_for(args: &RooflineArgs, row_profile: Option<&str>) -> Result<HardwareProfile> {
    let usage = |e: amla_core::Error| coded(EXIT_USAGE, e.to_string());
    if let Some(path) = &args.profile_file {
        let hw: HardwareProfile = read_json(path, "hardware profile")?;
        hw.validate().map_err(usage)?;
        return Ok(hw);
    }
    let name = args.profile.as_deref().or(row_profile).unwrap_or("ascend910-derived");
    HardwareProfile::preset(name).map_err(usage)
}

fn rows_csv(rows: &[RooflineRow]) -> String {
    let timed = rows.iter().any(|r| r.duration_us.is_some());
    let reported = rows.iter().any(|r| r.reported_fu_percent.is_some());
    let mut out = String::from(
        "label,profile,variant,n1,n2,s1,s2,dk,dv,batch,flops,kv_bytes,intensity,bound,attainable_flops",
    );
    if timed {
        out.push_str(",duration_us,achieved_flops,fu");
    }
    if reported {
        out.push_str(",reported_fu_percent");
    }
    out.push('\n');
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        let w = &r.workload;
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.label,
            r.profile,
            w.variant,
            w.n1,
            w.n2,
            w.s1,
            w.s2,
            w.dk,
            w.dv,
            w.batch,
            r.flops,
            r.kv_bytes,
            r.intensity,
            r.bound,
            r.attainable_flops
        );
        if timed {
            let _ = write!(
                out,
                ",{},{},{}",
                opt(r.duration_us),
                opt(r.achieved_flops),
                opt(r.fu)
            );
        }
        if reported {
            let _ = write!(out, ",{}", opt(r.reported_fu_percent));
        }
        out.push('\n');
    }
    out
}

pub fn run(args: &RooflineArgs) -> Result<u8> {
    let jobs = jobs(args)?;
    let mut profiles: Vec<HardwareProfile> = Vec::new();
    let mut rows = Vec::with_capacity(jobs.len());
    for job in &jobs {
        let hw = profile_for(args, job.profile.as_deref())?;
        if let Some(d) = job.duration_us {
            if !(d > 0.0) {
                return Err(coded(EXIT_USAGE, format!("duration must be positive, got {d} us")));
            }
        }
        let mut row = roofline_row(&job.label, &job.workload, &hw, job.duration_us)
            .map_err(|e| coded(EXIT_USAGE, e.to_string()))?;
        row.reported_fu_percent = job.reported_fu_percent;
        rows.push(row);
        if !profiles.iter().any(|p| p.name == hw.name) {
            profiles.push(hw);
        }
    }

    let mut params = BTreeMap::new();
    params.insert(
        "workloads".into(),
        json!(match (args.workloads, &args.workload_file) {
            (Some(WorkloadSet::Table1), _) => "table1".to_string(),
            (Some(WorkloadSet::Table5), _) => "table5".to_string(),
            (None, Some(p)) => p.display().to_string(),
            (None, None) => "custom".to_string(),
        }),
    );
    params.insert("profiles".into(), json!(profiles.iter().map(|p| p.name.clone()).collect::<Vec<_>>()));
    if args.workloads.is_none() && args.workload_file.is_none() {
        params.insert("workload".into(), serde_json::to_value(rows[0].workload)?);
        params.insert("duration_us".into(), json!(args.duration_us));
    }
    let manifest = RunManifest::new("roofline", params, 0)?;

    let result = RooflineResult {
        assumptions: ROOFLINE_ASSUMPTIONS.iter().map(|s| s.to_string()).collect(),
        profiles,
        rows,
    };
    Emission {
        stem: "roofline".into(),
        json: with_manifest(&manifest, ROOFLINE_SCHEMA, &result)?,
        csv: vec![("roofline".into(), rows_csv(&result.rows))],
        manifest,
    }
    .write(&args.output)?;
    Ok(0)
}
