mod common;

use lpfp::{Encoder, ExactReal, LpfpFormat};
use proptest::prelude::*;

fn formats() -> Vec<LpfpFormat> {
    let mut all = LpfpFormat::eight_bit();
    all.extend([LpfpFormat::new(2, 2).unwrap(), LpfpFormat::new(3, 1).unwrap()]);
    all
}

#[test]
fn decode_matches_bit_layout() {
    for fmt in formats() {
        for c in fmt.codes() {
            assert_eq!(common::exact(&c.decode()), common::decode(c.bits(), fmt), "{fmt} {:#04x}", c.bits());
        }
    }
}

#[test]
fn every_code_round_trips() {
    for fmt in formats() {
        for c in fmt.codes() {
            let back = fmt.encode(c.decode());
            assert_eq!(back.decode(), c.decode(), "{fmt} {:#04x}", c.bits());
            if !c.is_zero() {
                assert_eq!(back, c);
            }
        }
    }
}

#[test]
fn negative_zero_encodes_positive() {
    for fmt in formats() {
        let neg_zero = fmt.codes().find(|c| c.is_zero() && c.is_negative()).unwrap();
        assert_eq!(fmt.encode(neg_zero.decode()).bits(), 0);
    }
}

#[test]
fn limits() {
    let m = LpfpFormat::M4E3;
    assert_eq!(m.max_value().to_f64(), 31.0);
    assert_eq!(m.smallest_positive().to_f64(), 2f64.powi(-6));
    assert_eq!(LpfpFormat::M5E2.max_value().to_f64(), 7.875);
    assert_eq!(LpfpFormat::M7E0.max_value().to_f64(), 127.0 / 128.0);
    assert_eq!(LpfpFormat::M7E0.smallest_positive().to_f64(), 1.0 / 128.0);
    for fmt in formats() {
        assert_eq!(fmt.min_value(), -fmt.max_value());
    }
}

#[test]
fn midpoints_and_saturation_match_oracle() {
    for fmt in formats() {
        let grid = fmt.sorted_codes();
        for w in grid.windows(2) {
            let mid = (w[0].decode().checked_add(w[1].decode()).unwrap()).mul_pow2(-1);
            let want = common::encode(&common::exact(&mid), fmt);
            assert_eq!(fmt.encode(mid).bits(), want, "{fmt} midpoint {mid:?}");
        }
        let big = fmt.max_value().mul_pow2(3);
        assert_eq!(fmt.encode(big).decode(), fmt.max_value());
        assert_eq!(fmt.encode(-big).decode(), fmt.min_value());
    }
}

#[test]
fn sorted_codes_ascend() {
    for fmt in formats() {
        let v: Vec<ExactReal> = fmt.sorted_codes().iter().map(|c| c.decode()).collect();
        assert!(v.windows(2).all(|w| w[0] <= w[1]));
    }
}

fn fmt_strategy() -> impl Strategy<Value = LpfpFormat> {
    (1u32..=7).prop_map(|a| LpfpFormat::new(a, 7 - a).unwrap())
}

proptest! {
    #[test]
    fn encode_is_nearest(fmt in fmt_strategy(), x in -300.0f64..300.0, s in -12i32..4) {
        let x = x * 2f64.powi(s);
        let want = common::encode(&common::from_f64(x), fmt);
        prop_assert_eq!(fmt.encode_f64(x).bits(), want);
        prop_assert_eq!(Encoder::new(fmt).encode(x).bits(), want);
    }

    #[test]
    fn fast_round_matches_decode(fmt in fmt_strategy(), x in -200.0f64..200.0) {
        let e = Encoder::new(fmt);
        prop_assert_eq!(e.round(x), e.encode(x).to_f64());
    }

    #[test]
    fn encode_is_monotone(fmt in fmt_strategy(), x in -100.0f64..100.0, y in -100.0f64..100.0) {
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        prop_assert!(fmt.encode_f64(lo).decode() <= fmt.encode_f64(hi).decode());
    }

    #[test]
    fn encode_is_odd(fmt in fmt_strategy(), x in 0.0001f64..100.0) {
        prop_assert_eq!(fmt.encode_f64(-x).decode(), -fmt.encode_f64(x).decode());
    }

    #[test]
    fn parse_display(a in 1u32..=7) {
        let f = LpfpFormat::new(a, 7 - a).unwrap();
        prop_assert_eq!(f.to_string().parse::<LpfpFormat>().unwrap(), f);
    }
}

#[test]
fn invalid_formats_rejected() {
    assert!(LpfpFormat::new(0, 7).is_err());
    assert!(LpfpFormat::new(4, 4).is_err());
    assert!("M4".parse::<LpfpFormat>().is_err());
    assert!("E3M4".parse::<LpfpFormat>().is_err());
}
