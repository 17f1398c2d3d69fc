use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{amla_attention_with, base_attention, golden_attention, AmlaOptions, AttentionConfig};
use crate::error::{Error, Result};
use crate::tensor::{rel_frobenius_error, Matrix, Precision};

/// Schema tag carried by every serialized [`AccuracyReport`].
pub const ACCURACY_SCHEMA: &str = "amla.accuracy.v1";

/// Generator used for input sampling: ChaCha8 seeded from a `u64`, one
/// stream per sample.
pub const RNG_ALGORITHM: &str = "chacha8";

/// Element distribution for Q, K and V.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DistributionSpec {
    Gaussian { variance: f64 },
    Uniform { low: f64, high: f64 },
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Gaussian { variance } if !(variance.is_finite() && variance > 0.0) => {
                Err(Error::Config(format!("gaussian variance must be positive, got {variance}")))
            }
            Self::Uniform { low, high } if !(low.is_finite() && high.is_finite() && low < high) => {
                Err(Error::Config(format!("uniform bounds must satisfy low < high, got [{low}, {high}]")))
            }
            _ => Ok(()),
        }
    }

    fn sampler(&self) -> Result<Sampler> {
        self.validate()?;
        Ok(match *self {
            Self::Gaussian { variance } => Sampler::Normal(
                Normal::new(0.0f64, variance.sqrt()).map_err(|e| Error::Config(e.to_string()))?,
            ),
            Self::Uniform { low, high } => Sampler::Uniform(low, high),
        })
    }
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Gaussian { variance } => write!(f, "gaussian:{variance}"),
            Self::Uniform { low, high } => write!(f, "uniform:{low}:{high}"),
        }
    }
}

/// Parses `gaussian:<variance>` or `uniform:<low>:<high>`.
impl FromStr for DistributionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        let tag = parts.next().unwrap_or_default().to_ascii_lowercase();
        let nums: Vec<f64> = parts
            .map(|p| p.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad number {p:?} in {s:?}"))))
            .collect::<Result<_>>()?;
        let spec = match (tag.as_str(), nums.as_slice()) {
            ("gaussian" | "normal", [variance]) => Self::Gaussian { variance: *variance },
            ("uniform", [low, high]) => Self::Uniform { low: *low, high: *high },
            ("gaussian" | "normal" | "uniform", _) => {
                return Err(Error::Config(format!("wrong number of parameters in {s:?}")))
            }
            _ => return Err(Error::Config(format!("unknown distribution {tag:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

enum Sampler {
    Normal(Normal<f64>),
    Uniform(f64, f64),
}

impl Sampler {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f32 {
        match self {
            Self::Normal(n) => n.sample(rng) as f32,
            Self::Uniform(lo, hi) => rng.gen_range(*lo..*hi) as f32,
        }
    }

    fn matrix(&self, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Result<Matrix> {
        let data = (0..rows * cols).map(|_| self.draw(rng)).collect();
        Ok(Matrix::new(rows, cols, data)?.to_bf16())
    }
}

/// The six Gaussian and six uniform settings of the accuracy study.
pub fn paper_distributions() -> Vec<DistributionSpec> {
    let mut out: Vec<DistributionSpec> = [1.0, 4.0, 9.0, 16.0, 25.0, 100.0]
        .into_iter()
        .map(|variance| DistributionSpec::Gaussian { variance })
        .collect();
    out.extend(
        [1.0, 3.0, 5.0, 10.0, 20.0, 60.0]
            .into_iter()
            .map(|a| DistributionSpec::Uniform { low: -a, high: a }),
    );
    out
}

/// Draws BF16-representable `(Q, K, V)` for one sample. Sample `i` uses
/// stream `i` of a ChaCha8 generator seeded with `cfg.seed`, so each sample
/// is reproducible on its own.
pub fn sample_inputs(
    dist: &DistributionSpec,
    cfg: &AttentionConfig,
    sample: u64,
) -> Result<(Matrix, Matrix, Matrix)> {
    cfg.validate()?;
    let sampler = dist.sampler()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(sample);
    let q = sampler.matrix(cfg.g, cfg.dk, &mut rng)?;
    let k = sampler.matrix(cfg.s2, cfg.dk, &mut rng)?;
    let v = sampler.matrix(cfg.s2, cfg.dv, &mut rng)?;
    Ok((q, k, v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl ErrorStats {
    pub fn from_samples(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self { mean: f64::NAN, min: f64::NAN, max: f64::NAN };
        }
        Self {
            mean: xs.iter().sum::<f64>() / xs.len() as f64,
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Counters aggregated over every sample's integer-path diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub clamp_activations: usize,
    pub zero_guard_hits: usize,
    pub exponent_underflows: usize,
    pub exponent_overflows: usize,
    pub max_exp_argument: f32,
    pub non_finite_outputs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionAccuracy {
    pub distribution: DistributionSpec,
    pub label: String,
    pub samples: usize,
    /// Error of the blocked FP32-rescaling kernel against the reference.
    pub base: ErrorStats,
    /// Error of the integer-rescaling kernel against the reference.
    pub amla: ErrorStats,
    /// Error of the integer-rescaling kernel against the blocked kernel.
    pub amla_vs_base: ErrorStats,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub schema: String,
    pub rng: String,
    pub config: AttentionConfig,
    pub options: AccuracyOptions,
    pub samples_per_distribution: usize,
    pub results: Vec<DistributionAccuracy>,
}

/// Kernel options for an accuracy run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccuracyOptions {
    pub amla: AmlaOptions,
    /// Precision the Base and AMLA outputs are stored in before comparison
    /// with the FP32 reference. Kernels emit BF16 results by default.
    pub output: Precision,
}

impl Default for AccuracyOptions {
    fn default() -> Self {
        Self { amla: AmlaOptions::default(), output: Precision::Bf16 }
    }
}

fn store(o: Matrix, output: Precision) -> Matrix {
    match output {
        Precision::Fp32 => o,
        Precision::Bf16 => o.to_bf16(),
    }
}

struct SampleOutcome {
    base: f64,
    amla: f64,
    amla_vs_base: f64,
    summary: RunSummary,
}

fn run_sample(
    dist: &DistributionSpec,
    cfg: &AttentionConfig,
    options: AccuracyOptions,
    sample: u64,
) -> Result<SampleOutcome> {
    let (q, k, v) = sample_inputs(dist, cfg, sample)?;
    let golden = golden_attention(&q, &k, &v)?;
    let base = store(base_attention(&q, &k, &v, cfg)?, options.output);
    let (amla, diag) = amla_attention_with(&q, &k, &v, cfg, options.amla)?;
    let amla = store(amla, options.output);
    Ok(SampleOutcome {
        base: rel_frobenius_error(&base, &golden)?,
        amla: rel_frobenius_error(&amla, &golden)?,
        amla_vs_base: rel_frobenius_error(&amla, &base)?,
        summary: RunSummary {
            clamp_activations: diag.clamp_activations,
            zero_guard_hits: diag.zero_guard_hits,
            exponent_underflows: diag.exponent_underflows,
            exponent_overflows: diag.exponent_overflows,
            max_exp_argument: diag.max_exp_argument,
            non_finite_outputs: usize::from(!amla.is_finite()),
        },
    })
}

/// Runs `samples` independent draws from `dist` through all three kernels.
/// Samples run in parallel; results are collected in sample order, so the
/// output does not depend on the thread count.
pub fn run_accuracy_suite(
    dist: &DistributionSpec,
    cfg: &AttentionConfig,
    samples: usize,
) -> Result<DistributionAccuracy> {
    run_accuracy_suite_with(dist, cfg, samples, AccuracyOptions::default())
}

pub fn run_accuracy_suite_with(
    dist: &DistributionSpec,
    cfg: &AttentionConfig,
    samples: usize,
    options: AccuracyOptions,
) -> Result<DistributionAccuracy> {
    cfg.validate()?;
    dist.validate()?;
    if samples == 0 {
        return Err(Error::Config("samples must be at least 1".into()));
    }
    let outcomes: Vec<SampleOutcome> = (0..samples as u64)
        .into_par_iter()
        .map(|i| run_sample(dist, cfg, options, i))
        .collect::<Result<_>>()?;

    let pick = |f: fn(&SampleOutcome) -> f64| ErrorStats::from_samples(&outcomes.iter().map(f).collect::<Vec<_>>());
    let mut summary = RunSummary { max_exp_argument: f32::NEG_INFINITY, ..RunSummary::default() };
    for o in &outcomes {
        summary.clamp_activations += o.summary.clamp_activations;
        summary.zero_guard_hits += o.summary.zero_guard_hits;
        summary.exponent_underflows += o.summary.exponent_underflows;
        summary.exponent_overflows += o.summary.exponent_overflows;
        summary.non_finite_outputs += o.summary.non_finite_outputs;
        summary.max_exp_argument = summary.max_exp_argument.max(o.summary.max_exp_argument);
    }
    Ok(DistributionAccuracy {
        distribution: *dist,
        label: dist.to_string(),
        samples,
        base: pick(|o| o.base),
        amla: pick(|o| o.amla),
        amla_vs_base: pick(|o| o.amla_vs_base),
        summary,
    })
}

pub fn run_accuracy_sweep(
    dists: &[DistributionSpec],
    cfg: &AttentionConfig,
    samples: usize,
) -> Result<AccuracyReport> {
    run_accuracy_sweep_with(dists, cfg, samples, AccuracyOptions::default())
}

pub fn run_accuracy_sweep_with(
    dists: &[DistributionSpec],
    cfg: &AttentionConfig,
    samples: usize,
    options: AccuracyOptions,
) -> Result<AccuracyReport> {
    let results = dists
        .iter()
        .map(|d| run_accuracy_suite_with(d, cfg, samples, options))
        .collect::<Result<Vec<_>>>()?;
    Ok(AccuracyReport {
        schema: ACCURACY_SCHEMA.to_string(),
        rng: RNG_ALGORITHM.to_string(),
        config: *cfg,
        options,
        samples_per_distribution: samples,
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fp_bits::is_bf16_representable;

    #[test]
    fn parse_and_display_round_trip() {
        let g: DistributionSpec = "gaussian:25".parse().unwrap();
        assert_eq!(g, DistributionSpec::Gaussian { variance: 25.0 });
        let u: DistributionSpec = "uniform:-60:60".parse().unwrap();
        assert_eq!(u, DistributionSpec::Uniform { low: -60.0, high: 60.0 });
        for d in paper_distributions() {
            assert_eq!(d.to_string().parse::<DistributionSpec>().unwrap(), d);
        }
    }

    #[test]
    fn parse_rejects_bad_specs() {
        for s in ["cauchy:1", "gaussian", "gaussian:-1", "uniform:1", "uniform:5:5", "uniform:a:b", ""] {
            assert!(matches!(s.parse::<DistributionSpec>(), Err(Error::Config(_))), "{s}");
        }
    }

    #[test]
    fn samples_are_bf16_and_reproducible() {
        let cfg = AttentionConfig::new(4, 8, 6, 20).with_seed(99);
        let d = DistributionSpec::Uniform { low: -10.0, high: 10.0 };
        let (q, k, v) = sample_inputs(&d, &cfg, 3).unwrap();
        assert_eq!((q.shape(), k.shape(), v.shape()), ((4, 8), (20, 8), (20, 6)));
        assert!(q.data().iter().chain(k.data()).chain(v.data()).all(|&x| is_bf16_representable(x)));
        assert!(q.data().iter().all(|x| (-10.0..=10.0).contains(x)));
        assert_eq!(sample_inputs(&d, &cfg, 3).unwrap(), (q.clone(), k, v));
        assert_ne!(sample_inputs(&d, &cfg, 4).unwrap().0, q);
    }

    #[test]
    fn gaussian_sample_variance() {
        let cfg = AttentionConfig::new(1, 1, 1, 20_000).with_seed(1);
        let (_, k, _) = sample_inputs(&DistributionSpec::Gaussian { variance: 25.0 }, &cfg, 0).unwrap();
        let n = k.data().len() as f64;
        let mean = k.data().iter().map(|&x| f64::from(x)).sum::<f64>() / n;
        let var = k.data().iter().map(|&x| (f64::from(x) - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.15, "{mean}");
        assert!((var - 25.0).abs() < 1.0, "{var}");
    }

    #[test]
    fn stats() {
        let s = ErrorStats::from_samples(&[1.0, 3.0, 2.0]);
        assert_eq!((s.mean, s.min, s.max), (2.0, 1.0, 3.0));
        assert!(ErrorStats::from_samples(&[]).mean.is_nan());
    }

    #[test]
    fn small_suite_runs_and_serializes() {
        let cfg = AttentionConfig::new(4, 16, 8, 96).with_kv_block(32).with_seed(7);
        let report = run_accuracy_sweep(&[DistributionSpec::Gaussian { variance: 5.0 }], &cfg, 3).unwrap();
        let r = &report.results[0];
        assert_eq!(r.samples, 3);
        assert!(r.base.max < 1e-2 && r.amla.max < 1e-2, "{r:?}");
        assert!(r.base.min <= r.base.mean && r.base.mean <= r.base.max);
        assert_eq!(r.summary.non_finite_outputs, 0);
        let json = serde_json::to_string(&report).unwrap();
        let back: AccuracyReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        assert!(matches!(run_accuracy_suite(&r.distribution, &cfg, 0), Err(Error::Config(_))));
    }
}
