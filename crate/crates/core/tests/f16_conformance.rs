mod common;

use common::{f16_round_oracle, f16_value};
use proptest::prelude::*;
use squeezepass_core::f16::{is_f16_representable, round_f64_to_f16, round_to_f16, F16, F16_MAX, F16_MIN_POSITIVE, F16_MIN_SUBNORMAL};

fn bits_of(x: f32) -> u16 {
    F16::from_f32(x).to_bits()
}

#[test]
fn decode_matches_field_definition_for_all_patterns() {
    for b in 0..=u16::MAX {
        let got = F16::from_bits(b).to_f64();
        let want = f16_value(b);
        if want.is_nan() {
            assert!(got.is_nan(), "{b:#06x}");
        } else {
            assert_eq!(got.to_bits(), want.to_bits(), "{b:#06x}");
        }
    }
}

#[test]
fn every_finite_value_round_trips() {
    for b in 0..=u16::MAX {
        let v = f16_value(b);
        if v.is_finite() {
            assert_eq!(bits_of(v as f32), b, "{b:#06x}");
            assert!(is_f16_representable(v as f32));
        }
    }
}

#[test]
fn midpoints_round_to_even() {
    // every midpoint between neighbouring positive finite values, plus the
    // one between MAX and the overflow point
    for b in 0..0x7bffu16 {
        let mid = (f16_value(b) + f16_value(b + 1)) / 2.0;
        let want = if b % 2 == 0 { b } else { b + 1 };
        assert_eq!(F16::from_f64(mid).to_bits(), want, "{b:#06x}");
        assert_eq!(F16::from_f64(-mid).to_bits(), want | 0x8000);
        assert_eq!(f16_round_oracle(mid), want);
    }
    assert_eq!(F16::from_f64(65520.0), F16::INFINITY);
    assert_eq!(F16::from_f64(65519.99), F16::MAX);
}

#[test]
fn published_edge_values() {
    let table: &[(f64, u16)] = &[
        (0.0, 0x0000),
        (-0.0, 0x8000),
        (1.0, 0x3c00),
        (-2.0, 0xc000),
        (0.5, 0x3800),
        (65504.0, 0x7bff),
        (-65504.0, 0xfbff),
        (6.103515625e-05, 0x0400),
        (6.097555160522461e-05, 0x03ff),
        (5.960464477539063e-08, 0x0001),
        (0.333251953125, 0x3555),
        (1.0009765625, 0x3c01),
        (1.00048828125, 0x3c00),
        (1.00146484375, 0x3c02),
        (2049.0, 0x6800),
        (2051.0, 0x6802),
        (2.98023223876953125e-08, 0x0000),
        (f64::INFINITY, 0x7c00),
        (70000.0, 0x7c00),
    ];
    for &(x, bits) in table {
        assert_eq!(F16::from_f64(x).to_bits(), bits, "{x}");
    }
    assert_eq!(F16_MAX as f64, 65504.0);
    assert_eq!(F16_MIN_POSITIVE as f64, 2f64.powi(-14));
    assert_eq!(F16_MIN_SUBNORMAL as f64, 2f64.powi(-24));
    assert!(F16::from_f64(f64::NAN).is_nan());
    // just above half the smallest subnormal rounds up, the exact half goes to zero
    let above = f64::from_bits(2f64.powi(-25).to_bits() + 1);
    assert_eq!(F16::from_f64(above).to_bits(), 0x0001);
}

#[test]
fn f64_inputs_avoid_double_rounding() {
    // 1 + 2^-11 + 2^-30 sits just above a midpoint; going through f32 first
    // would land exactly on the tie and pick 1.0
    let x = 1.0f64 + 2f64.powi(-11) + 2f64.powi(-30);
    assert_eq!(F16::from_f64(x).to_bits(), 0x3c01);
    assert_eq!(bits_of(x as f32), 0x3c00);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4000))]

    #[test]
    fn matches_oracle_on_f32(bits in any::<u32>()) {
        let x = f32::from_bits(bits);
        prop_assume!(!x.is_nan());
        prop_assert_eq!(bits_of(x), f16_round_oracle(f64::from(x)));
    }

    #[test]
    fn matches_oracle_in_range(x in -70000.0f64..70000.0) {
        prop_assert_eq!(F16::from_f64(x).to_bits(), f16_round_oracle(x));
    }

    #[test]
    fn matches_oracle_near_zero(x in -1e-3f64..1e-3) {
        prop_assert_eq!(F16::from_f64(x).to_bits(), f16_round_oracle(x));
    }

    #[test]
    fn idempotent(bits in any::<u32>()) {
        let x = f32::from_bits(bits);
        prop_assume!(!x.is_nan());
        let once = round_to_f16(x);
        prop_assert_eq!(round_to_f16(once).to_bits(), once.to_bits());
        prop_assert_eq!(round_f64_to_f16(f64::from(once)).to_bits(), once.to_bits());
    }

    #[test]
    fn monotone(a in any::<u32>(), b in any::<u32>()) {
        let (x, y) = (f32::from_bits(a), f32::from_bits(b));
        prop_assume!(!x.is_nan() && !y.is_nan());
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        prop_assert!(round_to_f16(lo) <= round_to_f16(hi));
    }
}
