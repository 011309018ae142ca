mod common;

use lpfp::quant::{
    choose_bias_frac, quantization_mse, quantize_bias, quantize_tensor, search_format_tensors,
    search_scale, NamedTensor, QuantScheme,
};
use common::{brute_mse, brute_scale, magnitudes, nearest};
use lpfp::LpfpFormat;
use proptest::prelude::*;

fn tensor() -> impl Strategy<Value = Vec<f32>> {
    (1usize..=1000, -8i32..8).prop_flat_map(|(n, s)| {
        proptest::collection::vec((-1.0f32..1.0).prop_map(move |v| v * 2f32.powi(s)), n)
    })
}

fn fmt_strategy() -> impl Strategy<Value = LpfpFormat> {
    (1u32..=7).prop_map(|a| LpfpFormat::new(a, 7 - a).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn scale_search_is_argmin(fmt in fmt_strategy(), values in tensor()) {
        let got = search_scale(&values, fmt, -16..=16).unwrap();
        let want = brute_scale(fmt, &values, -16, 16);
        prop_assert_eq!(got.0, want.0);
        prop_assert_eq!(got.1, want.1);
    }

    #[test]
    fn format_search_is_argmin(ts in proptest::collection::vec(tensor(), 1..4)) {
        let cands = LpfpFormat::eight_bit();
        let named: Vec<NamedTensor> = ts.iter().enumerate().map(|(i, v)| NamedTensor { id: ["a", "b", "c"][i], values: v }).collect();
        let r = search_format_tensors(&named, &cands, -16..=16).unwrap();
        let mut best = (0usize, f64::INFINITY);
        for (i, &fmt) in cands.iter().enumerate() {
            let score = common::brute_format_score(fmt, &ts, -16, 16);
            prop_assert_eq!(r.formats[i].score, score);
            if score < best.1 {
                best = (i, score);
            }
        }
        prop_assert_eq!(r.chosen, best.0);
    }

    #[test]
    fn quantized_tensor_dequantizes_to_nearest(values in tensor(), sf in -4i32..4) {
        let fmt = LpfpFormat::M4E3;
        let mags = magnitudes(fmt);
        let codes = quantize_tensor(&values, fmt, sf);
        for (c, &v) in codes.iter().zip(&values) {
            let x = v as f64 * 2f64.powi(sf);
            prop_assert_eq!(c.to_f64(), nearest(&mags, x.abs()).copysign(x));
        }
        let want = brute_mse(&mags, &values, sf);
        prop_assert_eq!(quantization_mse(&values, fmt, sf), want);
    }

    #[test]
    fn bias_rounds_half_even(b in -30.0f32..30.0) {
        let frac = choose_bias_frac(&[b]).unwrap();
        let q = quantize_bias(&[b], frac).unwrap()[0];
        let want = common::round_grid(&common::from_f64(b as f64), frac);
        prop_assert_eq!(num_bigint::BigInt::from(q), want);
        prop_assert!(quantize_bias(&[b], frac + 1).is_err() || frac == lpfp::quant::MAX_BIAS_FRAC);
    }
}

#[test]
fn scale_search_tie_prefers_smallest() {
    // 31 is exact for sf in -2..=0 with M4E3
    let (sf, mse) = search_scale(&[31.0], LpfpFormat::M4E3, -2..=2).unwrap();
    assert_eq!((sf, mse), (-2, 0.0));
}

#[test]
fn degenerate_inputs() {
    assert!(search_scale(&[], LpfpFormat::M4E3, -2..=2).is_err());
    assert!(search_scale(&[f32::NAN], LpfpFormat::M4E3, -2..=2).is_err());
    assert!(search_format_tensors(&[], &[LpfpFormat::M4E3], -2..=2).is_err());
}

#[test]
fn scheme_text_round_trip() {
    let mut s = QuantScheme::new(LpfpFormat::M5E2);
    s.set_sf("input", -3);
    s.set_sf("conv1.w", 4);
    s.set_bias_frac("conv1", 12);
    let back: QuantScheme = s.to_string().parse().unwrap();
    assert_eq!(back, s);
    assert!("format M9E9\n".parse::<QuantScheme>().is_err());
}
