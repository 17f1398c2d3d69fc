use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AttentionConfig;
use crate::error::{Error, Result};
use crate::fp_bits::{checked_exponent_add, round_bf16, ExponentAddOutcome, EXPONENT_UNIT};
use crate::tensor::{matmul_mixed, row_softmax_stats, Matrix};

/// Lower clamp on the per-block exponent shift `n_i - n_{i-1}`.
pub const CLAMP_FLOOR: i32 = -30;

/// Bias added before truncating the fixed-point offset so a value that
/// should be an exact integer does not truncate to the one below.
pub const TRUNCATION_BIAS: f32 = 1e-6;

/// How the BF16 rounding of the scale factor is compensated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Compensation {
    /// `c_i = S16 / S32`: the accumulator is carried at the rounded scale,
    /// so rescaling by `c_i / c_{i-1}` keeps every block at the same one.
    #[default]
    RoundedOverExact,
    /// `c_i = S32 / S16`. This applies the correction with the wrong sign
    /// and roughly doubles the scale rounding error.
    ExactOverRounded,
    /// No compensation (`c_i = 1`).
    Off,
}

impl std::str::FromStr for Compensation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rounded-over-exact" => Ok(Compensation::RoundedOverExact),
            "exact-over-rounded" => Ok(Compensation::ExactOverRounded),
            "off" => Ok(Compensation::Off),
            _ => Err(Error::Config(format!(
                "unknown compensation {s:?} (expected rounded-over-exact, exact-over-rounded or off)"
            ))),
        }
    }
}

/// Order in which concurrent contributions land in the GM accumulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AtomicOrder {
    #[default]
    Sequential,
    /// Contributions are applied in a seeded random permutation.
    Shuffled(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmlaOptions {
    pub compensation: Compensation,
    /// Number of concurrent writers per block. Each block's `P V` product is
    /// split along the KV axis into this many partial products, and its
    /// exponent offset into this many integer addends.
    pub atomic_splits: usize,
    pub order: AtomicOrder,
}

impl Default for AmlaOptions {
    fn default() -> Self {
        Self { compensation: Compensation::RoundedOverExact, atomic_splits: 1, order: AtomicOrder::Sequential }
    }
}

/// Per-row quantities recorded for one KV block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub n: Vec<i32>,
    pub c: Vec<f32>,
    pub epsilon: Vec<f32>,
    /// Fixed-point exponent offset applied to the accumulator (0 for the
    /// first block, where no offset is applied).
    pub offset: Vec<i32>,
    /// `exp(-n_i ln2 - m_i)` evaluated in f64.
    pub implied_r: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AmlaDiagnostics {
    pub iterations: Vec<IterationRecord>,
    pub clamp_activations: usize,
    pub zero_guard_hits: usize,
    pub exponent_underflows: usize,
    pub exponent_overflows: usize,
    /// Non-finite elements met by the integer path.
    pub non_finite_elements: usize,
    /// Largest argument passed to `exp` anywhere in the kernel.
    pub max_exp_argument: f32,
    pub min_implied_r: f64,
    pub max_implied_r: f64,
    /// False if any logit was NaN or infinite.
    pub finite_logits: bool,
}

impl AmlaDiagnostics {
    fn new() -> Self {
        Self {
            max_exp_argument: f32::NEG_INFINITY,
            min_implied_r: f64::INFINITY,
            max_implied_r: f64::NEG_INFINITY,
            finite_logits: true,
            ..Self::default()
        }
    }

    fn record_outcome(&mut self, outcome: ExponentAddOutcome) {
        match outcome {
            ExponentAddOutcome::Normal => {}
            ExponentAddOutcome::ZeroGuard => self.zero_guard_hits += 1,
            ExponentAddOutcome::Underflow => self.exponent_underflows += 1,
            ExponentAddOutcome::Overflow => self.exponent_overflows += 1,
            ExponentAddOutcome::NonFinite => self.non_finite_elements += 1,
        }
    }

    fn note_exp_argument(&mut self, x: f32) {
        if x > self.max_exp_argument {
            self.max_exp_argument = x;
        }
    }
}

/// FP32 output buffer in global memory, updated only through atomic adds.
#[derive(Debug, Clone, PartialEq)]
pub struct GmAccumulator {
    o: Matrix,
    order: AtomicOrder,
    draws: u64,
}

impl GmAccumulator {
    pub fn new(rows: usize, cols: usize, order: AtomicOrder) -> Self {
        Self { o: Matrix::zeros(rows, cols), order, draws: 0 }
    }

    pub fn from_matrix(o: Matrix, order: AtomicOrder) -> Self {
        Self { o, order, draws: 0 }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.o
    }

    pub fn into_matrix(self) -> Matrix {
        self.o
    }

    fn arrival_order(&mut self, count: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..count).collect();
        if let AtomicOrder::Shuffled(seed) = self.order {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(self.draws);
            idx.shuffle(&mut rng);
        }
        self.draws += 1;
        idx
    }

    /// Elementwise FP32 atomic add of each partial, in arrival order.
    pub fn atomic_add_fp32(&mut self, partials: &[Matrix]) -> Result<()> {
        for p in partials {
            if p.shape() != self.o.shape() {
                return Err(Error::Dimension(format!(
                    "partial is {:?}, accumulator is {:?}",
                    p.shape(),
                    self.o.shape()
                )));
            }
        }
        for j in self.arrival_order(partials.len()) {
            for (x, &y) in self.o.data_mut().iter_mut().zip(partials[j].data()) {
                *x += y;
            }
        }
        Ok(())
    }

    /// INT32 atomic add on the bit patterns. `addends[j][row]` is writer
    /// `j`'s offset for every element of `row`; zeros are left untouched.
    pub fn atomic_add_i32(&mut self, addends: &[Vec<i32>], diag: &mut AmlaDiagnostics) -> Result<()> {
        let (rows, cols) = self.o.shape();
        if let Some(bad) = addends.iter().find(|a| a.len() != rows) {
            return Err(Error::Dimension(format!(
                "offset vector has {} rows, accumulator has {rows}",
                bad.len()
            )));
        }
        for j in self.arrival_order(addends.len()) {
            let offsets = &addends[j];
            for (row, &off) in self.o.data_mut().chunks_mut(cols).zip(offsets) {
                for x in row {
                    let (y, outcome) = checked_exponent_add(*x, off);
                    diag.record_outcome(outcome);
                    *x = y;
                }
            }
        }
        Ok(())
    }
}

fn split_offset(offset: i32, parts: usize) -> Vec<i32> {
    let parts_i = parts as i64;
    let base = (offset as i64).div_euclid(parts_i);
    let rem = (offset as i64).rem_euclid(parts_i);
    (0..parts_i).map(|j| (base + i64::from(j < rem)) as i32).collect()
}

fn column_block(m: &Matrix, start: usize, end: usize) -> Matrix {
    let width = end - start;
    let mut data = Vec::with_capacity(m.rows() * width);
    for r in 0..m.rows() {
        data.extend_from_slice(&m.row(r)[start..end]);
    }
    Matrix::new(m.rows(), width, data).expect("column block shape")
}

/// Streaming form of the integer-rescaling kernel: feed KV blocks one at a
/// time with [`AmlaState::step`], then read the output with
/// [`AmlaState::finish`].
#[derive(Debug, Clone)]
pub struct AmlaState {
    dv: usize,
    dk: usize,
    scale: f32,
    options: AmlaOptions,
    gm: GmAccumulator,
    m: Vec<f32>,
    ell: Vec<f32>,
    n: Vec<i32>,
    c: Vec<f32>,
    s16: Vec<f32>,
    blocks: usize,
    diagnostics: AmlaDiagnostics,
}

impl AmlaState {
    pub fn new(g: usize, dk: usize, dv: usize, options: AmlaOptions) -> Result<Self> {
        if g == 0 || dk == 0 || dv == 0 {
            return Err(Error::Config("g, dk and dv must be at least 1".into()));
        }
        if options.atomic_splits == 0 {
            return Err(Error::Config("atomic_splits must be at least 1".into()));
        }
        Ok(Self {
            dv,
            dk,
            scale: (dk as f32).sqrt().recip(),
            options,
            gm: GmAccumulator::new(g, dv, options.order),
            m: vec![f32::NEG_INFINITY; g],
            ell: vec![0.0; g],
            n: vec![0; g],
            c: vec![1.0; g],
            s16: vec![1.0; g],
            blocks: 0,
            diagnostics: AmlaDiagnostics::new(),
        })
    }

    pub fn blocks_processed(&self) -> usize {
        self.blocks
    }

    pub fn diagnostics(&self) -> &AmlaDiagnostics {
        &self.diagnostics
    }

    /// Raw accumulator contents (scaled by `S16 * ell`).
    pub fn accumulator(&self) -> &Matrix {
        self.gm.matrix()
    }

    pub fn step(&mut self, q: &Matrix, k_block: &Matrix, v_block: &Matrix) -> Result<()> {
        let g = self.m.len();
        if q.shape() != (g, self.dk) {
            return Err(Error::Dimension(format!("Q is {:?}, expected ({g}, {})", q.shape(), self.dk)));
        }
        if k_block.cols() != self.dk || v_block.cols() != self.dv || k_block.rows() != v_block.rows() {
            return Err(Error::Dimension(format!(
                "K block {:?} / V block {:?} do not match dk={} dv={}",
                k_block.shape(),
                v_block.shape(),
                self.dk,
                self.dv
            )));
        }
        if k_block.rows() == 0 {
            return Err(Error::Dimension("empty KV block".into()));
        }

        let s = matmul_mixed(q, k_block, true)?;
        let step = row_softmax_stats(&s, &self.m, &self.ell, self.scale)?;
        let diag = &mut self.diagnostics;
        diag.finite_logits &= step.finite;
        // Every row of P has a zero exponent argument at its maximum.
        diag.note_exp_argument(0.0);

        let first = self.blocks == 0;
        let mut record = IterationRecord {
            n: Vec::with_capacity(g),
            c: Vec::with_capacity(g),
            epsilon: Vec::with_capacity(g),
            offset: Vec::with_capacity(g),
            implied_r: Vec::with_capacity(g),
        };
        let mut s16_row = vec![0.0f32; g];
        for r in 0..g {
            let m_i = step.new_max[r];
            if self.m[r] > f32::NEG_INFINITY {
                diag.note_exp_argument(self.m[r] - m_i);
            }
            let m_over_ln2 = m_i / std::f32::consts::LN_2;
            let n_i = (-m_over_ln2).round() as i32;
            let arg = std::f32::consts::LN_2 * (n_i as f32 + m_over_ln2);
            diag.note_exp_argument(arg);
            let s32 = arg.exp();
            let s16 = round_bf16(s32);
            let c_i = match self.options.compensation {
                Compensation::ExactOverRounded => s32 / s16,
                Compensation::RoundedOverExact => s16 / s32,
                Compensation::Off => 1.0,
            };
            let eps = 1.5 * (c_i / self.c[r] - 1.0);

            let offset = if first {
                0
            } else {
                let dn = n_i - self.n[r];
                if dn < CLAMP_FLOOR {
                    diag.clamp_activations += 1;
                }
                let shift = dn.max(CLAMP_FLOOR) as f32 + eps + TRUNCATION_BIAS;
                (shift * EXPONENT_UNIT as f32) as i32
            };

            let implied = (-(n_i as f64) * std::f64::consts::LN_2 - f64::from(m_i)).exp();
            diag.min_implied_r = diag.min_implied_r.min(implied);
            diag.max_implied_r = diag.max_implied_r.max(implied);

            record.n.push(n_i);
            record.c.push(c_i);
            record.epsilon.push(eps);
            record.offset.push(offset);
            record.implied_r.push(implied);
            s16_row[r] = s16;
            self.n[r] = n_i;
            self.c[r] = c_i;
        }

        // P <- bf16(P * S16) row by row.
        let cols = step.p.cols();
        let mut p_scaled = Vec::with_capacity(step.p.data().len());
        for (r, row) in step.p.data().chunks(cols).enumerate() {
            p_scaled.extend(row.iter().map(|&x| round_bf16(x * s16_row[r])));
        }
        let p_scaled = Matrix::new(g, cols, p_scaled)?;

        let splits = self.options.atomic_splits.min(cols);
        if !first {
            let mut addends = vec![Vec::with_capacity(g); splits];
            for &off in &record.offset {
                for (dst, part) in addends.iter_mut().zip(split_offset(off, splits)) {
                    dst.push(part);
                }
            }
            self.gm.atomic_add_i32(&addends, diag)?;
        }

        let mut partials = Vec::with_capacity(splits);
        for j in 0..splits {
            let lo = j * cols / splits;
            let hi = (j + 1) * cols / splits;
            let p_part = column_block(&p_scaled, lo, hi);
            partials.push(matmul_mixed(&p_part, &v_block.slice_rows(lo, hi)?, false)?);
        }
        self.gm.atomic_add_fp32(&partials)?;

        self.m = step.new_max;
        self.ell = step.new_sum;
        self.s16 = s16_row;
        self.blocks += 1;
        self.diagnostics.iterations.push(record);
        Ok(())
    }

    /// `O = o_gm / (ell * S16)` row by row.
    pub fn finish(&self) -> Result<Matrix> {
        if self.blocks == 0 {
            return Err(Error::Dimension("no KV blocks were processed".into()));
        }
        let mut o = self.gm.matrix().clone();
        let dv = self.dv;
        for (r, row) in o.data_mut().chunks_mut(dv).enumerate() {
            let denom = self.ell[r] * self.s16[r];
            for x in row {
                *x /= denom;
            }
        }
        Ok(o)
    }
}

/// Integer-rescaling attention with the default options.
pub fn amla_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    cfg: &AttentionConfig,
) -> Result<(Matrix, AmlaDiagnostics)> {
    amla_attention_with(q, k, v, cfg, AmlaOptions::default())
}

pub fn amla_attention_with(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    cfg: &AttentionConfig,
    options: AmlaOptions,
) -> Result<(Matrix, AmlaDiagnostics)> {
    cfg.check_inputs(q, k, v)?;
    let mut state = AmlaState::new(cfg.g, cfg.dk, cfg.dv, options)?;
    for i in 0..cfg.num_blocks() {
        let (lo, hi) = cfg.block_range(i);
        state.step(q, &k.slice_rows(lo, hi)?, &v.slice_rows(lo, hi)?)?;
    }
    let o = state.finish()?;
    Ok((o, state.diagnostics))
}
