//! Analytical performance model: FLOP and KV-traffic counts, arithmetic
//! intensity, roofline classification, FLOPS utilization and the Cube-core
//! tiling capacity checks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const KIB: u64 = 1024;

/// Bytes of one FP32 accumulator element in L0C.
pub const ACC_BYTES: u64 = 4;

/// One L1 buffer in the seven-buffer plan.
pub const L1_BUFFER_BYTES: u64 = 72 * KIB;
pub const QP_BUFFERS: u64 = 4;
pub const KV_BUFFERS: u64 = 3;

/// Modeling assumptions carried into every roofline report.
pub const ROOFLINE_ASSUMPTIONS: &[&str] = &[
    "memory traffic counts KV cache reads only; Q and P loads are excluded",
    "FLOPs count multiplies and adds of both matmuls",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Variant {
    Mha,
    Gqa,
    Mla,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Mha => "MHA",
            Variant::Gqa => "GQA",
            Variant::Mla => "MLA",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mha" => Ok(Variant::Mha),
            "gqa" => Ok(Variant::Gqa),
            "mla" => Ok(Variant::Mla),
            _ => Err(Error::Config(format!("unknown attention variant {s:?}"))),
        }
    }
}

/// Shape of one decode-attention call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub n1: u64,
    pub n2: u64,
    pub s1: u64,
    pub s2: u64,
    pub dk: u64,
    pub dv: u64,
    pub batch: u64,
    #[serde(default = "default_elem_bytes")]
    pub elem_bytes: u64,
    pub variant: Variant,
}

fn default_elem_bytes() -> u64 {
    2
}

impl WorkloadSpec {
    /// MLA with a single shared latent head (Dk = 576, Dv = 512), BF16.
    pub fn mla(n1: u64, s1: u64, s2: u64, batch: u64) -> Self {
        WorkloadSpec { n1, n2: 1, s1, s2, dk: 576, dv: 512, batch, elem_bytes: 2, variant: Variant::Mla }
    }

    /// MHA (`n2 == n1`) or GQA, BF16, head dim 128.
    pub fn grouped(n1: u64, n2: u64, s1: u64, s2: u64, batch: u64) -> Self {
        let variant = if n1 == n2 { Variant::Mha } else { Variant::Gqa };
        WorkloadSpec { n1, n2, s1, s2, dk: 128, dv: 128, batch, elem_bytes: 2, variant }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("n1", self.n1),
            ("n2", self.n2),
            ("s1", self.s1),
            ("s2", self.s2),
            ("dk", self.dk),
            ("dv", self.dv),
            ("batch", self.batch),
            ("elem_bytes", self.elem_bytes),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("workload field {name} must be >= 1")));
        }
        if self.variant == Variant::Mla && self.n2 != 1 {
            return Err(Error::Config(format!("MLA shares one latent head, got n2 = {}", self.n2)));
        }
        Ok(())
    }
}

/// `batch * 2 * N1 * S1 * S2 * (Dk + Dv)`.
pub fn attention_flops(w: &WorkloadSpec) -> u128 {
    let w128 = |x: u64| x as u128;
    w128(w.batch) * 2 * w128(w.n1) * w128(w.s1) * w128(w.s2) * (w128(w.dk) + w128(w.dv))
}

/// KV-cache bytes read: `elem * N2 * S2 * (Dk + Dv)` for MHA/GQA and
/// `elem * S2 * Dk` for MLA (V is a slice of the cached latent), times batch.
pub fn kv_mem_bytes(w: &WorkloadSpec) -> u128 {
    let w128 = |x: u64| x as u128;
    let per_request = match w.variant {
        Variant::Mha | Variant::Gqa => w128(w.elem_bytes) * w128(w.n2) * w128(w.s2) * (w128(w.dk) + w128(w.dv)),
        Variant::Mla => w128(w.elem_bytes) * w128(w.s2) * w128(w.dk),
    };
    per_request * w128(w.batch)
}

/// Closed-form FLOP per byte: `N1 S1 / N2` for MHA/GQA and
/// `N1 S1 (Dk + Dv) / Dk` for MLA, scaled by `2 / elem_bytes`.
pub fn arithmetic_intensity(w: &WorkloadSpec) -> f64 {
    let heads = (w.n1 * w.s1) as f64;
    let width = 2.0 / w.elem_bytes as f64;
    match w.variant {
        Variant::Mha | Variant::Gqa => width * heads / w.n2 as f64,
        Variant::Mla => width * heads * (w.dk + w.dv) as f64 / w.dk as f64,
    }
}

/// Accelerator description. Capacities are bytes per core.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    #[serde(default)]
    pub name: String,
    /// Where the numbers come from; `derived` marks back-solved values.
    #[serde(default)]
    pub source: String,
    pub peak_flops: f64,
    pub hbm_bw: f64,
    #[serde(default)]
    pub n_cube_cores: Option<u64>,
    #[serde(default)]
    pub freq: Option<f64>,
    #[serde(default)]
    pub flops_per_core_cycle: Option<f64>,
    pub l1_bytes: u64,
    pub l0a_bytes: u64,
    pub l0b_bytes: u64,
    pub l0c_bytes: u64,
    pub ub_bytes: u64,
}

pub const PROFILE_PRESETS: &[&str] = &["ascend910-derived", "gpu-h800-class"];

impl HardwareProfile {
    /// Ascend 910 die. Peak BF16 throughput is back-solved from the
    /// best measured run (614 TFLOPS at 86.8% utilization).
    pub fn ascend910_derived() -> Self {
        HardwareProfile {
            name: "ascend910-derived".into(),
            source: "derived: peak back-solved from 614 TFLOPS / 0.868".into(),
            peak_flops: 707.4e12,
            hbm_bw: 3.2e12,
            n_cube_cores: Some(48),
            freq: None,
            flops_per_core_cycle: None,
            l1_bytes: 512 * KIB,
            l0a_bytes: 64 * KIB,
            l0b_bytes: 64 * KIB,
            l0c_bytes: 128 * KIB,
            ub_bytes: 192 * KIB,
        }
    }

    /// H800-class GPU: 989 TFLOPS BF16, 3.35 TB/s. Capacities stand in for
    /// one SM (256 KB register file, 228 KB shared memory) and are not used
    /// by the tiling checks.
    pub fn gpu_h800_class() -> Self {
        HardwareProfile {
            name: "gpu-h800-class".into(),
            source: "published: 989 TFLOPS BF16, 3.35 TB/s".into(),
            peak_flops: 989e12,
            hbm_bw: 3.35e12,
            n_cube_cores: Some(132),
            freq: None,
            flops_per_core_cycle: None,
            l1_bytes: 228 * KIB,
            l0a_bytes: 256 * KIB,
            l0b_bytes: 256 * KIB,
            l0c_bytes: 256 * KIB,
            ub_bytes: 228 * KIB,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "ascend910-derived" => Ok(Self::ascend910_derived()),
            "gpu-h800-class" => Ok(Self::gpu_h800_class()),
            _ => Err(Error::Config(format!(
                "unknown hardware profile {name:?} (presets: {})",
                PROFILE_PRESETS.join(", ")
            ))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let hw: HardwareProfile =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("hardware profile: {e}")))?;
        hw.validate()?;
        Ok(hw)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_flops.is_finite() && self.peak_flops > 0.0) {
            return Err(Error::Config(format!("peak_flops must be positive, got {}", self.peak_flops)));
        }
        if !(self.hbm_bw.is_finite() && self.hbm_bw > 0.0) {
            return Err(Error::Config(format!("hbm_bw must be positive, got {}", self.hbm_bw)));
        }
        let caps = [
            ("l1_bytes", self.l1_bytes),
            ("l0a_bytes", self.l0a_bytes),
            ("l0b_bytes", self.l0b_bytes),
            ("l0c_bytes", self.l0c_bytes),
            ("ub_bytes", self.ub_bytes),
        ];
        if let Some((name, _)) = caps.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if let (Some(nc), Some(f), Some(per)) = (self.n_cube_cores, self.freq, self.flops_per_core_cycle) {
            let product = nc as f64 * f * per;
            if ((product - self.peak_flops) / self.peak_flops).abs() > 1e-6 {
                return Err(Error::Config(format!(
                    "peak_flops {} disagrees with n_cube_cores * freq * flops_per_core_cycle = {product}",
                    self.peak_flops
                )));
            }
        }
        Ok(())
    }

    /// Aggregate Cube throughput `n_c * f * F`, falling back to `peak_flops`.
    pub fn cube_flops(&self) -> f64 {
        match (self.n_cube_cores, self.freq, self.flops_per_core_cycle) {
            (Some(nc), Some(f), Some(per)) => nc as f64 * f * per,
            _ => self.peak_flops,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    ComputeBound,
    MemoryBound,
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bound::ComputeBound => "compute_bound",
            Bound::MemoryBound => "memory_bound",
        })
    }
}

/// `min(peak, intensity * bw)`; a tie counts as compute bound.
pub fn roofline_classify(w: &WorkloadSpec, hw: &HardwareProfile) -> (Bound, f64) {
    let memory_roof = arithmetic_intensity(w) * hw.hbm_bw;
    if memory_roof >= hw.peak_flops {
        (Bound::ComputeBound, hw.peak_flops)
    } else {
        (Bound::MemoryBound, memory_roof)
    }
}

/// Achieved FLOP/s over peak.
pub fn flops_utilization(w: &WorkloadSpec, duration_s: f64, hw: &HardwareProfile) -> Result<f64> {
    if !(duration_s > 0.0) {
        return Err(Error::Domain(format!("duration must be positive, got {duration_s}")));
    }
    Ok(attention_flops(w) as f64 / duration_s / hw.peak_flops)
}

/// Smallest block row count `M` for which Cube time covers the KV transfer
/// of the same block: `M >= n_c f F * elem / (2 * bw)`.
pub fn min_block_m(hw: &HardwareProfile, elem_bytes: u64) -> u64 {
    let m = hw.cube_flops() * elem_bytes as f64 / (2.0 * hw.hbm_bw);
    (m.ceil() as u64).max(1)
}

/// One row of a roofline table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RooflineRow {
    pub label: String,
    pub profile: String,
    pub workload: WorkloadSpec,
    pub flops: f64,
    pub kv_bytes: f64,
    pub intensity: f64,
    pub bound: Bound,
    pub attainable_flops: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration_us: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub achieved_flops: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reported_fu_percent: Option<f64>,
}

/// One roofline table row; `duration_us` adds achieved throughput and
/// utilization.
pub fn roofline_row(
    label: &str,
    w: &WorkloadSpec,
    hw: &HardwareProfile,
    duration_us: Option<f64>,
) -> Result<RooflineRow> {
    let duration_s = duration_us.map(|us| us * 1e-6);
    w.validate()?;
    let (bound, attainable_flops) = roofline_classify(w, hw);
    let flops = attention_flops(w) as f64;
    let fu = duration_s.map(|d| flops_utilization(w, d, hw)).transpose()?;
    Ok(RooflineRow {
        label: label.to_string(),
        profile: hw.name.clone(),
        workload: *w,
        flops,
        kv_bytes: kv_mem_bytes(w) as f64,
        intensity: arithmetic_intensity(w),
        bound,
        attainable_flops,
        duration_us,
        achieved_flops: duration_s.map(|d| flops / d),
        fu,
        reported_fu_percent: None,
    })
}

/// The five variants compared in the arithmetic intensity table.
pub fn table1_workloads() -> Vec<(String, WorkloadSpec)> {
    vec![
        ("MHA".into(), WorkloadSpec::grouped(64, 64, 1, 4096, 1)),
        ("GQA".into(), WorkloadSpec::grouped(64, 8, 1, 4096, 1)),
        ("MLA-64".into(), WorkloadSpec::mla(64, 1, 4096, 1)),
        ("MLA-128".into(), WorkloadSpec::mla(128, 1, 4096, 1)),
        ("MLA-128 (S1=2)".into(), WorkloadSpec::mla(128, 2, 4096, 1)),
    ]
}

/// A measured kernel run: MLA-128, batch 96.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredRun {
    pub label: String,
    pub profile: String,
    pub workload: WorkloadSpec,
    pub duration_us: f64,
    /// Utilization printed alongside the duration, in percent.
    pub reported_fu_percent: f64,
}

/// Published kernel durations: Ascend 910 and the GPU baseline for
/// S1 in {1, 2} and six context lengths.
pub fn table5_runs() -> Vec<MeasuredRun> {
    // (s1, s2, ascend us, ascend fu %, gpu us, gpu fu %)
    const ROWS: [(u64, u64, f64, f64, f64, f64); 12] = [
        (1, 1024, 95.0, 40.9, 85.0, 32.6),
        (1, 2048, 140.0, 55.1, 128.0, 43.3),
        (1, 3072, 186.0, 62.4, 173.0, 48.0),
        (1, 4096, 241.0, 64.1, 215.0, 51.5),
        (1, 6144, 331.0, 70.2, 316.0, 52.6),
        (1, 16384, 830.0, 74.5, 766.0, 57.8),
        (2, 1024, 135.0, 57.3, 115.0, 48.1),
        (2, 2048, 219.0, 70.7, 196.0, 56.5),
        (2, 3072, 306.0, 75.8, 278.0, 59.8),
        (2, 4096, 388.0, 79.7, 374.0, 59.2),
        (2, 6144, 565.0, 82.2, 527.0, 63.0),
        (2, 16384, 1427.0, 86.8, 1314.0, 67.4),
    ];
    let mut out = Vec::with_capacity(24);
    for (profile, pick) in [("ascend910-derived", 0), ("gpu-h800-class", 1)] {
        for &(s1, s2, a_us, a_fu, g_us, g_fu) in &ROWS {
            let (us, fu) = if pick == 0 { (a_us, a_fu) } else { (g_us, g_fu) };
            out.push(MeasuredRun {
                label: format!("S1={s1} S2={s2}"),
                profile: profile.into(),
                workload: WorkloadSpec::mla(128, s1, s2, 96),
                duration_us: us,
                reported_fu_percent: fu,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TileStage {
    C1,
    C2,
}

impl fmt::Display for TileStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TileStage::C1 => "C1",
            TileStage::C2 => "C2",
        })
    }
}

/// Per-iteration matmul dims and their L1 / L0 tiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilingConfig {
    pub stage: TileStage,
    pub m: u64,
    pub n: u64,
    pub k: u64,
    pub single_m: u64,
    pub single_k: u64,
    pub single_n: u64,
    pub base_m: u64,
    pub base_k: u64,
    pub base_n: u64,
    #[serde(default = "default_elem_bytes")]
    pub elem_bytes: u64,
}

pub const TILING_PRESETS: &[&str] = &["c1-paper", "c2-paper"];

impl TilingConfig {
    /// `S = Q K^T`: KV block 512, latent dim 576.
    pub fn c1_paper() -> Self {
        TilingConfig {
            stage: TileStage::C1,
            m: 256,
            n: 512,
            k: 576,
            single_m: 128,
            single_k: 288,
            single_n: 256,
            base_m: 128,
            base_k: 96,
            base_n: 128,
            elem_bytes: 2,
        }
    }

    /// `O = P V`: KV block 512, value dim 512.
    pub fn c2_paper() -> Self {
        TilingConfig {
            stage: TileStage::C2,
            m: 256,
            n: 512,
            k: 512,
            single_m: 128,
            single_k: 256,
            single_n: 256,
            base_m: 128,
            base_k: 128,
            base_n: 128,
            elem_bytes: 2,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "c1-paper" => Ok(Self::c1_paper()),
            "c2-paper" => Ok(Self::c2_paper()),
            _ => Err(Error::Config(format!(
                "unknown tiling preset {name:?} (presets: {})",
                TILING_PRESETS.join(", ")
            ))),
        }
    }

    /// Nonzero dims. Tiles that do not divide their parent leave a
    /// remainder tile, which the capacity checks do not need to see.
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("m", self.m),
            ("n", self.n),
            ("k", self.k),
            ("single_m", self.single_m),
            ("single_k", self.single_k),
            ("single_n", self.single_n),
            ("base_m", self.base_m),
            ("base_k", self.base_k),
            ("base_n", self.base_n),
            ("elem_bytes", self.elem_bytes),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("tiling field {name} must be >= 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub name: String,
    pub used_bytes: u64,
    pub limit_bytes: u64,
    pub slack_bytes: i64,
    pub pass: bool,
}

impl ConstraintCheck {
    fn new(name: &str, used_bytes: u64, limit_bytes: u64) -> Self {
        ConstraintCheck {
            name: name.to_string(),
            used_bytes,
            limit_bytes,
            slack_bytes: limit_bytes as i64 - used_bytes as i64,
            pass: used_bytes <= limit_bytes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub tiling: TilingConfig,
    pub checks: Vec<ConstraintCheck>,
    pub min_block_m: u64,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn zero_slack(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| c.slack_bytes == 0).map(|c| c.name.as_str()).collect()
    }

    pub fn failures(&self) -> Vec<&ConstraintCheck> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
}

/// Capacity checks for one Cube stage.
///
/// L0 tiles are double buffered, so each gets half of its cache. L1 is
/// split into seven 72 KB buffers: four hold the resident Q (or P) block,
/// streamed in `single_m x single_k` stripes, and three cycle K (or V)
/// tiles of `base_n x single_k`.
pub fn validate_tiling(t: &TilingConfig, hw: &HardwareProfile) -> Result<ValidationReport> {
    t.validate()?;
    hw.validate()?;
    let e = t.elem_bytes;
    let checks = vec![
        ConstraintCheck::new("l0a", t.base_m * t.base_k * e, hw.l0a_bytes / 2),
        ConstraintCheck::new("l0b", t.base_n * t.base_k * e, hw.l0b_bytes / 2),
        ConstraintCheck::new("l0c", t.base_m * t.base_n * ACC_BYTES, hw.l0c_bytes / 2),
        ConstraintCheck::new("l1_plan", (QP_BUFFERS + KV_BUFFERS) * L1_BUFFER_BYTES, hw.l1_bytes),
        ConstraintCheck::new("qp_resident", t.m * t.k * e, QP_BUFFERS * L1_BUFFER_BYTES),
        ConstraintCheck::new("qp_stripe", t.single_m * t.single_k * e, L1_BUFFER_BYTES),
        ConstraintCheck::new("kv_tile", t.base_n * t.single_k * e, L1_BUFFER_BYTES),
    ];
    Ok(ValidationReport { tiling: *t, checks, min_block_m: min_block_m(hw, e) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn flop_and_byte_counts() {
        let one = WorkloadSpec { n1: 1, n2: 1, s1: 1, s2: 1, dk: 1, dv: 1, batch: 1, elem_bytes: 2, variant: Variant::Mha };
        assert_eq!(attention_flops(&one), 4);
        let w = WorkloadSpec::mla(128, 1, 1024, 96);
        assert_eq!(attention_flops(&w), 96 * 2 * 128 * 1024 * 1088);
        assert_eq!(kv_mem_bytes(&WorkloadSpec::mla(128, 1, 1024, 1)), 2 * 1024 * 576);
        let mha = WorkloadSpec { n1: 64, n2: 64, s1: 1, s2: 1, dk: 1, dv: 1, batch: 1, elem_bytes: 2, variant: Variant::Mha };
        assert_eq!(kv_mem_bytes(&mha), 256);
    }

    #[test]
    fn intensity_examples() {
        assert_eq!(arithmetic_intensity(&WorkloadSpec::grouped(64, 64, 1, 8, 1)), 1.0);
        assert_eq!(arithmetic_intensity(&WorkloadSpec::grouped(64, 8, 1, 8, 1)), 8.0);
        let mla = arithmetic_intensity(&WorkloadSpec::mla(128, 2, 8, 1));
        assert!((mla - 128.0 * 2.0 * 1088.0 / 576.0).abs() < 1e-9);
    }

    #[test]
    fn roofline_examples() {
        let hw = HardwareProfile::ascend910_derived();
        let (b, att) = roofline_classify(&WorkloadSpec::grouped(64, 64, 1, 8, 1), &hw);
        assert_eq!(b, Bound::MemoryBound);
        assert!((att - 3.2e12).abs() < 1.0);
        let (b, att) = roofline_classify(&WorkloadSpec::mla(128, 2, 8, 1), &hw);
        assert_eq!(b, Bound::ComputeBound);
        assert_eq!(att, hw.peak_flops);
        // Intensity 8 against a ridge point of exactly 8.
        let ridge = HardwareProfile { peak_flops: 8.0 * hw.hbm_bw, ..hw };
        assert_eq!(roofline_classify(&WorkloadSpec::grouped(64, 8, 1, 8, 1), &ridge).0, Bound::ComputeBound);
    }

    #[test]
    fn utilization_rejects_nonpositive_duration() {
        let hw = HardwareProfile::ascend910_derived();
        let w = WorkloadSpec::mla(128, 2, 16384, 96);
        for d in [0.0, -1.0, f64::NAN] {
            assert!(matches!(flops_utilization(&w, d, &hw), Err(Error::Domain(_))));
        }
        assert!(flops_utilization(&w, 1e9, &hw).unwrap() < 1e-6);
    }

    #[test]
    fn min_block_m_scales_with_peak() {
        let hw = HardwareProfile::ascend910_derived();
        assert_eq!(min_block_m(&hw, 2), 222);
        let half = HardwareProfile { peak_flops: hw.peak_flops / 2.0, ..hw.clone() };
        assert_eq!(min_block_m(&half, 2), 111);
        let fast = HardwareProfile { hbm_bw: 1e30, ..hw };
        assert_eq!(min_block_m(&fast, 2), 1);
    }

    #[test]
    fn profile_consistency_is_checked() {
        let mut hw = HardwareProfile::ascend910_derived();
        hw.freq = Some(1.0e9);
        hw.flops_per_core_cycle = Some(hw.peak_flops / 48.0 / 1.0e9);
        hw.validate().unwrap();
        hw.flops_per_core_cycle = Some(1.0);
        assert!(hw.validate().is_err());
        let json = serde_json::to_string(&HardwareProfile::gpu_h800_class()).unwrap();
        assert_eq!(HardwareProfile::from_json(&json).unwrap(), HardwareProfile::gpu_h800_class());
        assert!(HardwareProfile::preset("tpu").is_err());
        let zero = HardwareProfile { l0a_bytes: 0, ..HardwareProfile::ascend910_derived() };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn workload_validation() {
        assert!(WorkloadSpec::mla(128, 1, 0, 1).validate().is_err());
        let mut w = WorkloadSpec::mla(128, 1, 8, 1);
        w.n2 = 2;
        assert!(w.validate().is_err());
    }

    #[test]
    fn paper_tilings_fit() {
        let hw = HardwareProfile::ascend910_derived();
        let c1 = validate_tiling(&TilingConfig::c1_paper(), &hw).unwrap();
        assert!(c1.all_pass(), "{c1:?}");
        let l0a = &c1.checks[0];
        assert_eq!((l0a.used_bytes, l0a.limit_bytes), (24576, 32768));
        let c2 = validate_tiling(&TilingConfig::c2_paper(), &hw).unwrap();
        assert!(c2.all_pass(), "{c2:?}");
        assert_eq!(c2.zero_slack(), vec!["l0a", "l0b", "l0c"]);
    }

    #[test]
    fn widened_base_k_overflows_l0a() {
        let hw = HardwareProfile::ascend910_derived();
        let t = TilingConfig { base_k: 129, ..TilingConfig::c2_paper() };
        let r = validate_tiling(&t, &hw).unwrap();
        let l0a = r.checks.iter().find(|c| c.name == "l0a").unwrap();
        assert!(!l0a.pass);
        assert_eq!(l0a.slack_bytes, -256);
        let bad = TilingConfig { base_k: 0, ..TilingConfig::c2_paper() };
        assert!(validate_tiling(&bad, &hw).is_err());
    }

    fn variant_workload() -> impl Strategy<Value = WorkloadSpec> {
        (1u64..256, 1u64..64, 1u64..8, 1u64..20000, 1u64..1024, 1u64..1024, 1u64..128, prop_oneof![Just(1u64), Just(2), Just(4)], 0..3u8)
            .prop_map(|(n1, n2, s1, s2, dk, dv, batch, elem_bytes, v)| {
                let variant = [Variant::Mha, Variant::Gqa, Variant::Mla][v as usize];
                let n2 = if variant == Variant::Mla { 1 } else { n2 };
                WorkloadSpec { n1, n2, s1, s2, dk, dv, batch, elem_bytes, variant }
            })
    }

    proptest! {
        #[test]
        fn intensity_is_flops_over_bytes(w in variant_workload()) {
            let ratio = attention_flops(&w) as f64 / kv_mem_bytes(&w) as f64;
            let closed = arithmetic_intensity(&w);
            prop_assert!(((ratio - closed) / closed).abs() < 1e-12, "{ratio} vs {closed}");
        }
    }
}
