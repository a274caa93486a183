//! Bit-level IEEE 754 binary16 emulation.
//!
//! Values are carried around as `f32` everywhere else in the crate; this
//! module is the single place where a real number is snapped onto the
//! binary16 grid. Rounding is round-to-nearest-even, subnormals are kept
//! (no flush-to-zero) and anything at or above the overflow threshold
//! (65504 + half an ulp = 65520) becomes an infinity.

use std::fmt;

/// Largest finite binary16 value.
pub const F16_MAX: f32 = 65504.0;
/// Smallest positive normal binary16 value, 2^-14.
pub const F16_MIN_POSITIVE: f32 = 6.103_515_6e-5;
/// Smallest positive subnormal binary16 value, 2^-24.
pub const F16_MIN_SUBNORMAL: f32 = 5.960_464_5e-8;

const SIGN_MASK: u16 = 0x8000;
const EXP_MASK: u16 = 0x7C00;
const MAN_MASK: u16 = 0x03FF;
const QUIET_NAN: u16 = 0x7E00;

/// A binary16 value stored as its raw bits.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct F16(u16);

impl F16 {
    pub const INFINITY: F16 = F16(EXP_MASK);
    pub const NEG_INFINITY: F16 = F16(SIGN_MASK | EXP_MASK);
    pub const MAX: F16 = F16(0x7BFF);

    pub const fn from_bits(bits: u16) -> Self {
        F16(bits)
    }

    pub const fn to_bits(self) -> u16 {
        self.0
    }

    /// Rounds a binary64 value to the nearest binary16 (ties to even).
    ///
    /// Going straight from f64 avoids the double rounding that an
    /// f64 -> f32 -> f16 chain can introduce.
    pub fn from_f64(x: f64) -> Self {
        let sign = if x.is_sign_negative() { SIGN_MASK } else { 0 };
        if x.is_nan() {
            return F16(sign | QUIET_NAN);
        }
        let a = x.abs();
        if a >= 65520.0 {
            return F16(sign | EXP_MASK);
        }
        if a < f64::from(F16_MIN_POSITIVE) {
            // Subnormal range: quantum is 2^-24. Scaling by a power of two is
            // exact, so the fractional part seen by the rounding is exact too.
            // A result of 1024 is the smallest normal, which the bit layout
            // encodes naturally.
            let r = (a * 16_777_216.0).round_ties_even() as u16;
            return F16(sign | r);
        }
        let bits = a.to_bits();
        let mut exp = ((bits >> 52) & 0x7FF) as i32 - 1023;
        // Significand scaled into [1024, 2048).
        let m = a * 2f64.powi(10 - exp);
        let mut r = m.round_ties_even() as u32;
        if r == 2048 {
            r = 1024;
            exp += 1;
        }
        debug_assert!(exp <= 15, "overflow handled above");
        F16(sign | (((exp + 15) as u16) << 10) | (r as u16 & MAN_MASK))
    }

    pub fn from_f32(x: f32) -> Self {
        Self::from_f64(f64::from(x))
    }

    /// Exact widening conversion.
    pub fn to_f64(self) -> f64 {
        let sign = if self.0 & SIGN_MASK != 0 { -1.0 } else { 1.0 };
        let exp = (self.0 & EXP_MASK) >> 10;
        let man = f64::from(self.0 & MAN_MASK);
        match exp {
            0 => sign * man * 2f64.powi(-24),
            0x1F if man == 0.0 => sign * f64::INFINITY,
            0x1F => f64::NAN.copysign(sign),
            e => sign * (1024.0 + man) * 2f64.powi(i32::from(e) - 25),
        }
    }

    /// Exact widening conversion; every binary16 value is a binary32 value.
    pub fn to_f32(self) -> f32 {
        self.to_f64() as f32
    }

    pub fn is_finite(self) -> bool {
        self.0 & EXP_MASK != EXP_MASK
    }

    pub fn is_nan(self) -> bool {
        self.0 & EXP_MASK == EXP_MASK && self.0 & MAN_MASK != 0
    }
}

impl fmt::Debug for F16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F16({:#06x} = {})", self.0, self.to_f64())
    }
}

impl fmt::Display for F16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_f32(), f)
    }
}

/// Snaps an f32 onto the binary16 grid and widens it back.
pub fn round_to_f16(x: f32) -> f32 {
    F16::from_f32(x).to_f32()
}

/// Same as [`round_to_f16`] for a binary64 input, with a single rounding.
pub fn round_f64_to_f16(x: f64) -> f32 {
    F16::from_f64(x).to_f32()
}

/// True when `x` is exactly a binary16 value (including infinities and NaN).
pub fn is_f16_representable(x: f32) -> bool {
    x.is_nan() || round_to_f16(x).to_bits() == x.to_bits()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_values_pass_through() {
        assert_eq!(round_to_f16(1.0), 1.0);
        assert_eq!(round_to_f16(-2.5), -2.5);
        assert_eq!(round_to_f16(F16_MAX), F16_MAX);
        assert_eq!(round_to_f16(F16_MIN_SUBNORMAL), F16_MIN_SUBNORMAL);
        assert_eq!(round_to_f16(F16_MIN_POSITIVE), F16_MIN_POSITIVE);
    }

    #[test]
    fn overflow_threshold() {
        assert_eq!(round_to_f16(70000.0), f32::INFINITY);
        assert_eq!(round_to_f16(65520.0), f32::INFINITY);
        assert_eq!(round_to_f16(-65520.0), f32::NEG_INFINITY);
        // Just under the threshold rounds down to the max finite value.
        assert_eq!(round_to_f16(65519.996), F16_MAX);
    }

    #[test]
    fn nan_and_signed_zero() {
        assert!(round_to_f16(f32::NAN).is_nan());
        assert_eq!(round_to_f16(-0.0).to_bits(), (-0.0f32).to_bits());
        assert_eq!(F16::from_f32(-0.0).to_bits(), 0x8000);
    }

    #[test]
    fn rounds_small_offsets_away() {
        assert_eq!(round_to_f16(1.0004), 1.0);
        assert_eq!(round_to_f16(1.0 + 1.0 / 1024.0), 1.0 + 1.0 / 1024.0);
    }

    #[test]
    fn subnormal_rounding_carries_into_normal() {
        // Largest subnormal plus half a quantum ties; even mantissa is 1024 = min normal.
        let x = f64::from(F16_MIN_POSITIVE) - 0.5 * f64::from(F16_MIN_SUBNORMAL);
        assert_eq!(F16::from_f64(x).to_bits(), 0x0400);
    }
}
