//! Decode-phase attention: an unblocked FP32 reference, the blocked
//! online-softmax kernel, and the integer-rescaling kernel, plus the harness
//! that compares them.

mod accuracy;
mod amla;

pub use accuracy::{
    paper_distributions, run_accuracy_suite, run_accuracy_suite_with, run_accuracy_sweep,
    run_accuracy_sweep_with, sample_inputs,
    AccuracyOptions, AccuracyReport, DistributionAccuracy, DistributionSpec, ErrorStats, RunSummary,
    ACCURACY_SCHEMA, RNG_ALGORITHM,
};
pub use amla::{
    amla_attention, amla_attention_with, AmlaDiagnostics, AmlaOptions, AmlaState, AtomicOrder,
    Compensation, GmAccumulator, IterationRecord, CLAMP_FLOOR, TRUNCATION_BIAS,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{matmul_fp32, matmul_mixed, row_softmax_stats, Matrix};

/// KV block length used by the production kernel.
pub const DEFAULT_KV_BLOCK: usize = 512;

/// Problem shape for one decode attention call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    /// Query rows per group.
    pub g: usize,
    pub dk: usize,
    pub dv: usize,
    /// Context length.
    pub s2: usize,
    #[serde(default = "default_kv_block")]
    pub kv_block: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_kv_block() -> usize {
    DEFAULT_KV_BLOCK
}

impl AttentionConfig {
    pub fn new(g: usize, dk: usize, dv: usize, s2: usize) -> Self {
        Self { g, dk, dv, s2, kv_block: DEFAULT_KV_BLOCK, seed: 0 }
    }

    /// The typical decode shape: G=128, Dk=576, Dv=512, 8K context.
    pub fn paper_default() -> Self {
        Self::new(128, 576, 512, 8192)
    }

    pub fn with_kv_block(mut self, kv_block: usize) -> Self {
        self.kv_block = kv_block;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Shape taken from the operands themselves.
    pub fn for_inputs(q: &Matrix, k: &Matrix, v: &Matrix, kv_block: usize) -> Result<Self> {
        let cfg = Self { g: q.rows(), dk: q.cols(), dv: v.cols(), s2: k.rows(), kv_block, seed: 0 };
        cfg.check_inputs(q, k, v)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("g", self.g),
            ("dk", self.dk),
            ("dv", self.dv),
            ("s2", self.s2),
            ("kv_block", self.kv_block),
        ] {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    pub fn num_blocks(&self) -> usize {
        self.s2.div_ceil(self.kv_block)
    }

    /// `1/sqrt(Dk)` in FP32.
    pub fn softmax_scale(&self) -> f32 {
        (self.dk as f32).sqrt().recip()
    }

    pub(crate) fn block_range(&self, i: usize) -> (usize, usize) {
        let start = i * self.kv_block;
        (start, (start + self.kv_block).min(self.s2))
    }

    pub fn check_inputs(&self, q: &Matrix, k: &Matrix, v: &Matrix) -> Result<()> {
        self.validate()?;
        let expect = [
            ("Q", q.shape(), (self.g, self.dk)),
            ("K", k.shape(), (self.s2, self.dk)),
            ("V", v.shape(), (self.s2, self.dv)),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::Dimension(format!(
                    "{name} is {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                )));
            }
        }
        Ok(())
    }
}

fn check_qkv(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<()> {
    if q.cols() != k.cols() {
        return Err(Error::Dimension(format!(
            "Q has {} columns but K has {}",
            q.cols(),
            k.cols()
        )));
    }
    if k.rows() != v.rows() {
        return Err(Error::Dimension(format!("K has {} rows but V has {}", k.rows(), v.rows())));
    }
    if k.rows() == 0 || q.rows() == 0 || q.cols() == 0 || v.cols() == 0 {
        return Err(Error::Dimension("attention operands must be non-empty".into()));
    }
    Ok(())
}

fn divide_rows(o: &mut Matrix, denom: &[f32]) {
    let cols = o.cols();
    for (row, &d) in o.data_mut().chunks_mut(cols).zip(denom) {
        for x in row {
            *x /= d;
        }
    }
}

/// `softmax(Q K^T / sqrt(Dk)) V` in FP32 with one global safe softmax.
pub fn golden_attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix> {
    check_qkv(q, k, v)?;
    let scale = (q.cols() as f32).sqrt().recip();
    let s = matmul_fp32(q, k, true)?;
    let rows = q.rows();
    let step = row_softmax_stats(&s, &vec![f32::NEG_INFINITY; rows], &vec![0.0; rows], scale)?;
    let mut o = matmul_fp32(&step.p, v, false)?;
    divide_rows(&mut o, &step.new_sum);
    Ok(o)
}

/// Blocked online-softmax attention with BF16 matrix-unit products and FP32
/// rescaling of the output after every block.
pub fn base_attention(q: &Matrix, k: &Matrix, v: &Matrix, cfg: &AttentionConfig) -> Result<Matrix> {
    cfg.check_inputs(q, k, v)?;
    let scale = cfg.softmax_scale();
    let mut o = Matrix::zeros(cfg.g, cfg.dv);
    let mut m = vec![f32::NEG_INFINITY; cfg.g];
    let mut ell = vec![0.0f32; cfg.g];

    for i in 0..cfg.num_blocks() {
        let (lo, hi) = cfg.block_range(i);
        let s = matmul_mixed(q, &k.slice_rows(lo, hi)?, true)?;
        let step = row_softmax_stats(&s, &m, &ell, scale)?;
        let t = matmul_mixed(&step.p, &v.slice_rows(lo, hi)?, false)?;

        let dv = cfg.dv;
        for (r, (o_row, t_row)) in o.data_mut().chunks_mut(dv).zip(t.data().chunks(dv)).enumerate() {
            let up = step.m_up[r];
            for (x, &y) in o_row.iter_mut().zip(t_row) {
                *x = *x * up + y;
            }
        }
        m = step.new_max;
        ell = step.new_sum;
    }
    divide_rows(&mut o, &ell);
    Ok(o)
}

/// The tempting in-memory update `O_hat += exp(m_i) * P_i V_i`, which skips
/// the safe-softmax shift. Kept only to demonstrate that it overflows once a
/// row maximum exceeds ~88.7.
pub fn naive_inverse_update_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    cfg: &AttentionConfig,
) -> Result<Matrix> {
    cfg.check_inputs(q, k, v)?;
    let scale = cfg.softmax_scale();
    let mut o_hat = Matrix::zeros(cfg.g, cfg.dv);
    let mut m = vec![f32::NEG_INFINITY; cfg.g];
    let mut ell_hat = vec![0.0f32; cfg.g];

    for i in 0..cfg.num_blocks() {
        let (lo, hi) = cfg.block_range(i);
        let s = matmul_mixed(q, &k.slice_rows(lo, hi)?, true)?;
        let step = row_softmax_stats(&s, &m, &vec![0.0; cfg.g], scale)?;
        let t = matmul_mixed(&step.p, &v.slice_rows(lo, hi)?, false)?;
        let dv = cfg.dv;
        for (r, (o_row, t_row)) in o_hat.data_mut().chunks_mut(dv).zip(t.data().chunks(dv)).enumerate() {
            let lift = step.new_max[r].exp();
            for (x, &y) in o_row.iter_mut().zip(t_row) {
                *x += lift * y;
            }
            ell_hat[r] += lift * step.new_sum[r];
        }
        m = step.new_max;
    }
    divide_rows(&mut o_hat, &ell_hat);
    Ok(o_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::rel_frobenius_error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f32]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    pub(crate) fn random_bf16(rows: usize, cols: usize, scale: f32, rng: &mut ChaCha8Rng) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
        Matrix::new(rows, cols, data).unwrap().to_bf16()
    }

    #[test]
    fn golden_single_key_broadcasts_value_row() {
        let q = m(&[&[0.3, -1.0], &[2.0, 0.5], &[0.0, 0.0]]);
        let k = m(&[&[1.0, 2.0]]);
        let v = m(&[&[4.0, -2.0, 0.5]]);
        let o = golden_attention(&q, &k, &v).unwrap();
        for r in 0..3 {
            assert_eq!(o.row(r), v.row(0));
        }
    }

    #[test]
    fn golden_identical_keys_average_values() {
        let q = m(&[&[0.7, -0.2]]);
        let k = m(&[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]]);
        let v = m(&[&[1.0], &[2.0], &[3.0], &[6.0]]);
        let o = golden_attention(&q, &k, &v).unwrap();
        assert_eq!(o.get(0, 0), 3.0);
    }

    #[test]
    fn golden_two_key_scalar_case() {
        // Q=[1], K=[0; ln 4], V=[0; 1]: weights 1/5 and 4/5, so O = 0.8.
        let ln4 = 4f32.ln();
        let o = golden_attention(&m(&[&[1.0]]), &m(&[&[0.0], &[ln4]]), &m(&[&[0.0], &[1.0]]))
            .unwrap();
        let want = 4.0f64 / 5.0;
        assert!((f64::from(o.get(0, 0)) - want).abs() < 1e-6, "{}", o.get(0, 0));
    }

    #[test]
    fn shape_errors() {
        let q = Matrix::zeros(2, 3);
        let k = Matrix::zeros(4, 2);
        let v = Matrix::zeros(4, 5);
        assert!(matches!(golden_attention(&q, &k, &v), Err(Error::Dimension(_))));
        let cfg = AttentionConfig::new(2, 3, 5, 4);
        assert!(matches!(base_attention(&q, &k, &v, &cfg), Err(Error::Dimension(_))));
        let bad = AttentionConfig { kv_block: 0, ..cfg };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn base_single_block_tracks_golden() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_bf16(8, 32, 1.7, &mut rng);
        let k = random_bf16(64, 32, 1.7, &mut rng);
        let v = random_bf16(64, 16, 1.7, &mut rng);
        let cfg = AttentionConfig::for_inputs(&q, &k, &v, 64).unwrap();
        let golden = golden_attention(&q, &k, &v).unwrap();
        let base = base_attention(&q, &k, &v, &cfg).unwrap();
        let err = rel_frobenius_error(&base, &golden).unwrap();
        assert!(err < 5e-3, "{err}");
    }

    #[test]
    fn base_ignores_block_with_vanishing_logits() {
        // Second block's logits sit ~1000 below the first block's maximum.
        let q = m(&[&[1.0, 0.0]]);
        let k = m(&[&[40.0, 0.0], &[38.0, 1.0], &[-1960.0, 0.0], &[-1970.0, 0.0]]);
        let v = m(&[&[1.0, 2.0], &[3.0, -1.0], &[100.0, 100.0], &[-50.0, 7.0]]);
        let full = base_attention(&q, &k, &v, &AttentionConfig::for_inputs(&q, &k, &v, 2).unwrap())
            .unwrap();
        let (k1, v1) = (k.slice_rows(0, 2).unwrap(), v.slice_rows(0, 2).unwrap());
        let first = base_attention(&q, &k1, &v1, &AttentionConfig::for_inputs(&q, &k1, &v1, 2).unwrap())
            .unwrap();
        assert_eq!(full, first);
    }

    #[test]
    fn naive_update_overflows_above_88() {
        let q = m(&[&[10.0, 0.0]]);
        let k = m(&[&[9.0, 0.0], &[13.0, 0.0]]);
        let v = m(&[&[1.0], &[2.0]]);
        let cfg = AttentionConfig::for_inputs(&q, &k, &v, 1).unwrap();
        // Logits 90/sqrt2 ~ 63.6 and 130/sqrt2 ~ 91.9: second block overflows exp.
        let naive = naive_inverse_update_attention(&q, &k, &v, &cfg).unwrap();
        assert!(!naive.is_finite());
        let base = base_attention(&q, &k, &v, &cfg).unwrap();
        assert!(base.is_finite());
    }
}
