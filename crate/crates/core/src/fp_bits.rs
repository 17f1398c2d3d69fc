//! Bit-level FP32 primitives.
//!
//! An FP32 value and the INT32 holding the same 32 bits are related by
//! `I = -2^31*S + 2^23*E + M`. For a normal value, adding `n * 2^23` to the
//! integer view multiplies the float view by `2^n` exactly, as long as the
//! biased exponent stays inside `1..=254`. That identity is what lets the
//! attention kernel rescale its accumulator with integer atomics.
//!
//! BF16 is emulated here as well: values are rounded to nearest-even on the
//! upper 16 bits and kept widened to FP32 everywhere else.

use std::fmt;

use crate::error::{Error, Result};

/// Number of explicit mantissa bits in FP32.
pub const MANTISSA_BITS: u32 = 23;
/// `2^23` as an integer: one unit of the exponent field in the INT32 view.
pub const EXPONENT_UNIT: i32 = 1 << MANTISSA_BITS;
/// FP32 exponent bias.
pub const EXPONENT_BIAS: i32 = 127;

const SIGN_MASK: u32 = 0x8000_0000;
const EXPONENT_MASK: u32 = 0x7F80_0000;
const MANTISSA_MASK: u32 = 0x007F_FFFF;

/// Reinterprets the bits of `f` as a signed 32-bit integer.
#[inline]
pub fn as_int32(f: f32) -> i32 {
    f.to_bits() as i32
}

/// Reinterprets the bits of `i` as an FP32 value. Inverse of [`as_int32`].
#[inline]
pub fn as_fp32(i: i32) -> f32 {
    f32::from_bits(i as u32)
}

/// A raw FP32 bit pattern with field accessors.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fp32Bits(u32);

impl Fp32Bits {
    pub fn from_f32(f: f32) -> Self {
        Self(f.to_bits())
    }

    pub fn from_raw(raw: u32) -> Self {
        Self(raw)
    }

    /// Assembles a pattern from sign (0/1), biased exponent and mantissa.
    pub fn from_fields(sign: u32, exponent: u32, mantissa: u32) -> Result<Self> {
        if sign > 1 || exponent > 0xFF || mantissa > MANTISSA_MASK {
            return Err(Error::Domain(format!(
                "fields out of range: S={sign}, E={exponent}, M={mantissa}"
            )));
        }
        Ok(Self((sign << 31) | (exponent << MANTISSA_BITS) | mantissa))
    }

    pub fn raw(self) -> u32 {
        self.0
    }

    pub fn to_f32(self) -> f32 {
        f32::from_bits(self.0)
    }

    pub fn to_i32(self) -> i32 {
        self.0 as i32
    }

    pub fn sign(self) -> u32 {
        self.0 >> 31
    }

    pub fn exponent(self) -> u32 {
        (self.0 & EXPONENT_MASK) >> MANTISSA_BITS
    }

    pub fn mantissa(self) -> u32 {
        self.0 & MANTISSA_MASK
    }

    /// True for normal numbers (`0 < E < 255`).
    pub fn is_normal(self) -> bool {
        let e = self.exponent();
        e > 0 && e < 0xFF
    }

    /// `(-1)^S * (1 + M/2^23) * 2^(E-127)` evaluated in f64. Only meaningful
    /// for normal patterns.
    pub fn normal_value(self) -> f64 {
        let sign = if self.sign() == 1 { -1.0 } else { 1.0 };
        let frac = 1.0 + f64::from(self.mantissa()) / f64::from(EXPONENT_UNIT);
        sign * frac * 2f64.powi(self.exponent() as i32 - EXPONENT_BIAS)
    }

    /// `-2^31*S + 2^23*E + M`, the signed-integer reading of the fields.
    pub fn field_integer(self) -> i64 {
        -(1i64 << 31) * i64::from(self.sign())
            + i64::from(EXPONENT_UNIT) * i64::from(self.exponent())
            + i64::from(self.mantissa())
    }
}

impl fmt::Debug for Fp32Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Fp32Bits(S={}, E={}, M={:#08x} = {:e})",
            self.sign(),
            self.exponent(),
            self.mantissa(),
            self.to_f32()
        )
    }
}

/// Computes `f * 2^n` through one integer addition on the bit pattern.
///
/// Requires `f` normal and `-E < n < 255 - E`; violations are reported with
/// the bound that failed. Use [`guarded_exponent_add`] where zeros must pass
/// through.
pub fn mul_pow2_via_int_add(f: f32, n: i32) -> Result<f32> {
    let bits = Fp32Bits::from_f32(f);
    let e = bits.exponent() as i32;
    if e == 0 {
        return Err(Error::Domain(format!(
            "exponent field is 0 (zero or subnormal input {f:e})"
        )));
    }
    if e == 0xFF {
        return Err(Error::Domain(format!("exponent field is 255 (non-finite input {f})")));
    }
    if n <= -e {
        return Err(Error::Domain(format!("lower bound violated: n={n} <= -E={}", -e)));
    }
    if n >= 255 - e {
        return Err(Error::Domain(format!("upper bound violated: n={n} >= 255-E={}", 255 - e)));
    }
    Ok(as_fp32(as_int32(f) + n * EXPONENT_UNIT))
}

/// Adds a pre-scaled offset to the integer view of `f`, leaving `±0` untouched.
///
/// No range checking: an offset that pushes the exponent field out of
/// `1..=254` wraps. See [`checked_exponent_add`] for the classified variant.
#[inline]
pub fn guarded_exponent_add(f: f32, delta_fixed: i32) -> f32 {
    if f == 0.0 {
        return f;
    }
    as_fp32(as_int32(f).wrapping_add(delta_fixed))
}

/// What happened to one element during a checked exponent add.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExponentAddOutcome {
    /// Result stayed a normal number.
    Normal,
    /// Input was `±0`; returned unchanged.
    ZeroGuard,
    /// Exponent would have dropped to 0 or below, or the input was
    /// subnormal; flushed to signed zero.
    Underflow,
    /// Exponent would have reached 255; saturated to signed infinity.
    Overflow,
    /// Input was already infinite or NaN; returned unchanged.
    NonFinite,
}

/// Like [`guarded_exponent_add`], but detects exponent wraparound instead of
/// corrupting the sign bit.
pub fn checked_exponent_add(f: f32, delta_fixed: i32) -> (f32, ExponentAddOutcome) {
    if f == 0.0 {
        return (f, ExponentAddOutcome::ZeroGuard);
    }
    let bits = Fp32Bits::from_f32(f);
    let sign = bits.raw() & SIGN_MASK;
    match bits.exponent() {
        0xFF => return (f, ExponentAddOutcome::NonFinite),
        0 => return (f32::from_bits(sign), ExponentAddOutcome::Underflow),
        _ => {}
    }
    // Work on the magnitude so the sign bit cannot absorb a borrow or carry.
    let magnitude = i64::from(bits.raw() & !SIGN_MASK) + i64::from(delta_fixed);
    if magnitude < i64::from(EXPONENT_UNIT) {
        (f32::from_bits(sign), ExponentAddOutcome::Underflow)
    } else if magnitude >= i64::from(EXPONENT_MASK) {
        (f32::from_bits(sign | EXPONENT_MASK), ExponentAddOutcome::Overflow)
    } else {
        (f32::from_bits(sign | magnitude as u32), ExponentAddOutcome::Normal)
    }
}

/// A bfloat16 value: the upper half of an FP32 pattern.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Bf16(u16);

impl Bf16 {
    pub const ONE: Bf16 = Bf16(0x3F80);

    pub fn from_bits(bits: u16) -> Self {
        Self(bits)
    }

    pub fn to_bits(self) -> u16 {
        self.0
    }

    /// Round-to-nearest-even conversion. NaN stays NaN (quiet bit forced).
    pub fn from_f32(x: f32) -> Self {
        let bits = x.to_bits();
        if x.is_nan() {
            return Self(((bits >> 16) as u16) | 0x0040);
        }
        let lsb = (bits >> 16) & 1;
        let rounded = bits.wrapping_add(0x7FFF + lsb);
        Self((rounded >> 16) as u16)
    }

    pub fn to_f32(self) -> f32 {
        f32::from_bits(u32::from(self.0) << 16)
    }
}

impl fmt::Debug for Bf16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Bf16({:#06x} = {})", self.0, self.to_f32())
    }
}

/// Nearest BF16 value (ties to even).
pub fn fp32_to_bf16(x: f32) -> Bf16 {
    Bf16::from_f32(x)
}

/// Rounds `x` to BF16 and widens it back to FP32.
#[inline]
pub fn round_bf16(x: f32) -> f32 {
    Bf16::from_f32(x).to_f32()
}

/// True when `x` survives a BF16 round trip bit-for-bit.
#[inline]
pub fn is_bf16_representable(x: f32) -> bool {
    x.is_nan() || x.to_bits() & 0xFFFF == 0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reinterpretation_examples() {
        assert_eq!(as_int32(0.5), 126 * EXPONENT_UNIT);
        assert_eq!(as_int32(0.5), 1_056_964_608);
        assert_eq!(as_int32(0.0), 0);
        assert_eq!(as_int32(1.0), 1_065_353_216);
        assert_eq!(as_fp32(1_056_964_608), 0.5);
        assert_eq!(as_fp32(0).to_bits(), 0.0f32.to_bits());
        assert_eq!(as_fp32(1_065_353_216), 1.0);
    }

    #[test]
    fn one_built_from_fields_matches_integer_formula() {
        let one = Fp32Bits::from_fields(0, 127, 0).unwrap();
        assert_eq!(one.field_integer(), 127 * i64::from(EXPONENT_UNIT));
        assert_eq!(one.field_integer(), i64::from(as_int32(1.0)));
        assert_eq!(one.to_f32(), 1.0);
        assert!(Fp32Bits::from_fields(2, 0, 0).is_err());
    }

    #[test]
    fn field_views_reconstruct_value_and_integer() {
        for &x in &[0.5f32, 1.0, -3.25, 1.0e-30, 6.5e37, -0.1] {
            let b = Fp32Bits::from_f32(x);
            assert!(b.is_normal());
            assert_eq!(b.normal_value(), f64::from(x));
            assert_eq!(b.field_integer(), i64::from(b.to_i32()));
        }
    }

    // Exhaustive over all 2^32 patterns; cheap once optimized.
    #[test]
    fn reinterpretation_round_trips_every_pattern() {
        let mut bad = 0u64;
        for raw in 0..=u32::MAX {
            let i = raw as i32;
            if as_int32(as_fp32(i)) != i {
                bad += 1;
            }
            let f = f32::from_bits(raw);
            if as_fp32(as_int32(f)).to_bits() != raw {
                bad += 1;
            }
        }
        assert_eq!(bad, 0);
    }

    #[test]
    fn mul_pow2_examples() {
        assert_eq!(mul_pow2_via_int_add(0.5, 1).unwrap(), 1.0);
        assert_eq!(mul_pow2_via_int_add(0.5, 0).unwrap(), 0.5);
        let got = mul_pow2_via_int_add(1.75, -3).unwrap();
        assert_eq!(got, 0.21875);
        assert_eq!(got.to_bits(), (1.75f32 * 0.125).to_bits());
    }

    #[test]
    fn mul_pow2_reports_which_bound_failed() {
        let msg = |r: Result<f32>| match r {
            Err(Error::Domain(m)) => m,
            other => panic!("expected domain error, got {other:?}"),
        };
        assert!(msg(mul_pow2_via_int_add(0.0, 1)).contains("exponent field is 0"));
        assert!(msg(mul_pow2_via_int_add(1.0e-40, 1)).contains("subnormal"));
        assert!(msg(mul_pow2_via_int_add(f32::INFINITY, -1)).contains("255"));
        // 1.0 has E = 127: n must satisfy -127 < n < 128.
        assert!(msg(mul_pow2_via_int_add(1.0, -127)).contains("lower bound"));
        assert!(msg(mul_pow2_via_int_add(1.0, 128)).contains("upper bound"));
        assert!(mul_pow2_via_int_add(1.0, -126).is_ok());
        assert!(mul_pow2_via_int_add(1.0, 127).is_ok());
    }

    #[test]
    fn guarded_add_examples() {
        assert_eq!(guarded_exponent_add(0.0, 12345).to_bits(), 0);
        assert_eq!(guarded_exponent_add(-0.0, -EXPONENT_UNIT).to_bits(), (-0.0f32).to_bits());
        assert_eq!(guarded_exponent_add(0.5, EXPONENT_UNIT), 1.0);
        assert_eq!(guarded_exponent_add(1.0, -EXPONENT_UNIT), 0.5);
        assert_eq!(
            guarded_exponent_add(0.5, EXPONENT_UNIT),
            mul_pow2_via_int_add(0.5, 1).unwrap()
        );
    }

    #[test]
    fn checked_add_classifies_edges() {
        assert_eq!(checked_exponent_add(2.0, -EXPONENT_UNIT), (1.0, ExponentAddOutcome::Normal));
        assert_eq!(checked_exponent_add(-2.0, -EXPONENT_UNIT), (-1.0, ExponentAddOutcome::Normal));
        assert_eq!(checked_exponent_add(0.0, 7).1, ExponentAddOutcome::ZeroGuard);

        // Smallest normal pushed one binade down flushes, keeping the sign.
        let (v, o) = checked_exponent_add(-f32::MIN_POSITIVE, -EXPONENT_UNIT);
        assert_eq!(o, ExponentAddOutcome::Underflow);
        assert_eq!(v.to_bits(), (-0.0f32).to_bits());

        let (v, o) = checked_exponent_add(f32::MAX, EXPONENT_UNIT);
        assert_eq!(o, ExponentAddOutcome::Overflow);
        assert_eq!(v, f32::INFINITY);

        assert_eq!(checked_exponent_add(1.0e-40, 0).1, ExponentAddOutcome::Underflow);
        assert_eq!(checked_exponent_add(f32::NAN, 1).1, ExponentAddOutcome::NonFinite);

        // Sub-binade offsets scale the mantissa and carry into the exponent.
        let (v, o) = checked_exponent_add(1.5, EXPONENT_UNIT / 2);
        assert_eq!(o, ExponentAddOutcome::Normal);
        assert_eq!(v, 2.0);
    }

    #[test]
    fn bf16_examples() {
        assert_eq!(round_bf16(1.0), 1.0);
        assert_eq!(fp32_to_bf16(1.0), Bf16::ONE);
        // 1 + 2^-8 sits exactly halfway between 1 and 1 + 2^-7: ties to even.
        assert_eq!(round_bf16(1.003_906_25), 1.0);
        // 1 + 3*2^-8 is halfway between 1+2^-7 (odd) and 1+2^-6 (even).
        assert_eq!(round_bf16(1.0 + 3.0 / 256.0), 1.0 + 1.0 / 64.0);
        assert!(round_bf16(f32::NAN).is_nan());
        assert_eq!(round_bf16(f32::INFINITY), f32::INFINITY);
        assert_eq!(round_bf16(f32::MAX), f32::INFINITY);
    }

    #[test]
    fn bf16_picks_the_nearest_neighbour() {
        let x = 0.300_781_25f32;
        let lo = f32::from_bits(x.to_bits() & 0xFFFF_0000);
        let hi = f32::from_bits((x.to_bits() & 0xFFFF_0000) + 0x1_0000);
        let nearest = if (x - lo).abs() <= (hi - x).abs() { lo } else { hi };
        assert_eq!(round_bf16(x), nearest);
        assert!(((round_bf16(x) - x) / x).abs() <= 1.0 / 256.0);
    }

    #[test]
    fn bf16_agrees_with_half_crate() {
        // Dense sweep over the low mantissa bits plus a stride across all patterns.
        let check = |raw: u32| {
            let x = f32::from_bits(raw);
            let ours = Bf16::from_f32(x);
            let theirs = half::bf16::from_f32(x);
            if x.is_nan() {
                assert!(ours.to_f32().is_nan());
            } else {
                assert_eq!(ours.to_bits(), theirs.to_bits(), "x = {x:e} ({raw:#010x})");
            }
        };
        for raw in 0x3F80_0000u32..0x3F84_0000 {
            check(raw);
        }
        let mut raw = 0u32;
        while let Some(next) = raw.checked_add(997) {
            check(raw);
            raw = next;
        }
    }

    proptest! {
        #[test]
        fn mul_pow2_matches_float_multiply(f in any::<f32>(), n in -300i32..300) {
            let bits = Fp32Bits::from_f32(f);
            prop_assume!(bits.is_normal());
            let e = bits.exponent() as i32;
            prop_assume!(-e < n && n < 255 - e);
            let got = mul_pow2_via_int_add(f, n).unwrap();
            let want = f64::from(f) * 2f64.powi(n);
            prop_assert_eq!(f64::from(got), want);
        }

        #[test]
        fn bf16_relative_error_is_bounded(raw in any::<u32>()) {
            let x = f32::from_bits(raw);
            prop_assume!(x.is_normal() && x.abs() < 3.0e38);
            let r = round_bf16(x);
            prop_assert!(is_bf16_representable(r));
            prop_assert!(((f64::from(r) - f64::from(x)) / f64::from(x)).abs() <= 1.0 / 256.0);
            prop_assert_eq!(round_bf16(r).to_bits(), r.to_bits());
        }

        #[test]
        fn exponent_offsets_compose(f in any::<f32>(), n1 in -20i32..20, n2 in -20i32..20) {
            let bits = Fp32Bits::from_f32(f);
            prop_assume!(bits.is_normal());
            let e = bits.exponent() as i32;
            let in_range = |x: i32| x > 0 && x < 255;
            prop_assume!(in_range(e + n1) && in_range(e + n2) && in_range(e + n1 + n2));
            let stepwise = guarded_exponent_add(
                guarded_exponent_add(f, n1 * EXPONENT_UNIT),
                n2 * EXPONENT_UNIT,
            );
            let swapped = guarded_exponent_add(
                guarded_exponent_add(f, n2 * EXPONENT_UNIT),
                n1 * EXPONENT_UNIT,
            );
            let at_once = guarded_exponent_add(f, (n1 + n2) * EXPONENT_UNIT);
            prop_assert_eq!(stepwise.to_bits(), at_once.to_bits());
            prop_assert_eq!(stepwise.to_bits(), swapped.to_bits());
        }
    }
}
