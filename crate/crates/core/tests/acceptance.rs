//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any fail.

mod common;

use std::time::{Duration, Instant};

use common::LayerCase;
use lpfp::infer::manifest::read_f32_file;
use lpfp::infer::{build_scheme, capture, evaluate, split_samples, Dataset, InferOptions, Manifest, Model, QuantizedModel};
use lpfp::pe::{align, aligned_frac_bits, lpfp_multiply, packed_quad_mac};
use lpfp::perf::{best_split, compute_layers, peak_gops, sweep, BufferSizes, PeConfig};
use lpfp::quant::{search_format_tensors, search_scale, NamedTensor};
use lpfp::{ExactReal, LpfpCode, LpfpFormat};
use num_traits::ToPrimitive;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const FIX: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome { ok, detail: detail.into() }
}

fn within(t: Duration, limit: Duration) -> bool {
    t <= limit
}

fn c1_roundtrip() -> Outcome {
    let t = Instant::now();
    let mut checked = 0;
    let mut bad = 0;
    for fmt in LpfpFormat::eight_bit() {
        for c in fmt.codes() {
            checked += 1;
            let v = common::decode(c.bits(), fmt);
            let back = fmt.encode(c.decode());
            if common::decode(back.bits(), fmt) != v || common::exact(&c.decode()) != v {
                bad += 1;
            }
        }
    }
    let el = t.elapsed();
    let formats = LpfpFormat::eight_bit().len();
    outcome(
        bad == 0 && within(el, Duration::from_secs(1)),
        format!("{formats} formats, {checked} codes, {bad} mismatches, {el:.2?}"),
    )
}

/// Oracle products of all M4E3 pairs on the aligned grid, as integers.
fn oracle_products(fmt: LpfpFormat) -> Vec<i128> {
    let t = common::table(fmt);
    let frac = aligned_frac_bits(fmt) as i32;
    let mut out = Vec::with_capacity(t.len() * t.len());
    for x in &t {
        for y in &t {
            let p = x * y * common::pow2(frac);
            assert!(p.is_integer(), "product off the aligned grid");
            out.push(p.to_integer().to_i128().unwrap());
        }
    }
    out
}

fn c2_and_3_packing() -> (Outcome, Outcome) {
    let t = Instant::now();
    let fmt = LpfpFormat::M4E3;
    let frac = aligned_frac_bits(fmt);
    let oracle = oracle_products(fmt);
    let want = |x: LpfpCode, y: LpfpCode| ExactReal::new(oracle[(x.bits() as usize) << 8 | y.bits() as usize], -(frac as i32));
    let code = |b: u8| LpfpCode::new(b, fmt).unwrap();
    let mut rng = StdRng::seed_from_u64(2);
    let (mut pairs_bad, mut sub_pairs, mut lane_bad, mut max_mag, mut align_bad) = (0u64, 0u64, 0u64, 0u128, 0u64);
    for x in 0..=255u8 {
        for y in 0..=255u8 {
            let (cx, cy) = (code(x), code(y));
            let w = want(cx, cy);
            let p = lpfp_multiply(cx, cy).unwrap();
            pairs_bad += (p.value() != w) as u64;
            if cx.is_subnormal() || cy.is_subnormal() {
                sub_pairs += 1;
            }
            let a = align(&p).unwrap();
            align_bad += (a.frac_bits != frac || a.value != oracle[(x as usize) << 8 | y as usize]) as u64;
            max_mag = max_mag.max(a.value.unsigned_abs());
            // every pair through each of the four lanes, other operands random
            let (r1, r2) = (code(rng.gen()), code(rng.gen()));
            let lanes = [
                packed_quad_mac(cx, r1, cy, r2).unwrap()[0],
                packed_quad_mac(cx, r1, r2, cy).unwrap()[1],
                packed_quad_mac(r1, cx, cy, r2).unwrap()[2],
                packed_quad_mac(r1, cx, r2, cy).unwrap()[3],
            ];
            lane_bad += lanes.iter().filter(|l| l.value() != w).count() as u64;
        }
    }
    let n = 1_000_000u64;
    let mut quad_bad = 0u64;
    for _ in 0..n {
        let q: [LpfpCode; 4] = [0; 4].map(|_| code(rng.gen()));
        let got = packed_quad_mac(q[0], q[1], q[2], q[3]).unwrap();
        let exp = [want(q[0], q[2]), want(q[0], q[3]), want(q[1], q[2]), want(q[1], q[3])];
        quad_bad += got.iter().zip(exp).any(|(g, e)| g.value() != e) as u64;
    }
    let el = t.elapsed();
    let c2 = outcome(
        pairs_bad == 0 && lane_bad == 0 && quad_bad == 0 && within(el, Duration::from_secs(30)),
        format!(
            "65536 pairs ({sub_pairs} with a subnormal) {pairs_bad} bad, 262144 lane checks {lane_bad} bad, {n} random quads {quad_bad} contaminated, {el:.2?}"
        ),
    );
    let width = 128 - max_mag.leading_zeros() + 1;
    let c3 = outcome(
        width <= 23 && align_bad == 0,
        format!("max aligned magnitude {max_mag}, {width} bits signed, {align_bad} lossy alignments"),
    );
    (c2, c3)
}

fn c4_quantizer() -> Outcome {
    let mut rng = StdRng::seed_from_u64(4);
    let formats = LpfpFormat::eight_bit();
    let (mut scale_bad, mut format_bad) = (0, 0);
    for i in 0..100 {
        let n = rng.gen_range(1..=1000);
        let s = 2f32.powi(rng.gen_range(-8..8));
        let values: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0f32..1.0) * s).collect();
        let fmt = formats[i % formats.len()];
        let got = search_scale(&values, fmt, -16..=16).unwrap();
        if got != common::brute_scale(fmt, &values, -16, 16) {
            scale_bad += 1;
        }
        let named = [NamedTensor { id: "t", values: &values }];
        let r = search_format_tensors(&named, &formats, -16..=16).unwrap();
        let one = [values.clone()];
        let scores: Vec<f64> = formats.iter().map(|&f| common::brute_format_score(f, &one, -16, 16)).collect();
        let best = (0..scores.len()).fold(0, |b, j| if scores[j] < scores[b] { j } else { b });
        if r.chosen != best {
            format_bad += 1;
        }
    }
    outcome(
        scale_bad == 0 && format_bad == 0,
        format!("100 tensors: search_scale {scale_bad} mismatches, search_format {format_bad} mismatches"),
    )
}

fn c5_inference() -> Outcome {
    let mut rng = StdRng::seed_from_u64(5);
    let (mut code_bad, mut sum_bad, mut outputs) = (0, 0, 0);
    for i in 0..100 {
        let fmt = [LpfpFormat::M4E3, LpfpFormat::M5E2, LpfpFormat::M7E0][i % 3];
        let case = LayerCase::random(&mut rng, fmt);
        let model = Model::from_parts(&case.manifest(), &case.blob()).unwrap();
        let mut scheme = lpfp::quant::QuantScheme::new(fmt);
        scheme.set_sf("input", case.sf_in);
        scheme.set_sf("w", case.sf_w);
        scheme.set_sf("y", case.sf_out);
        let bias_frac = lpfp::quant::choose_bias_frac(&case.bias).unwrap();
        scheme.set_bias_frac("y", bias_frac);
        for truncate16 in [true, false] {
            let opts = InferOptions { truncate16, accumulator_width: None };
            let q = QuantizedModel::new(&model, &scheme, opts).unwrap();
            let acts = q.forward(&case.input).unwrap();
            let naive = common::naive_layer(&case, bias_frac, truncate16);
            outputs += naive.codes.len();
            code_bad += (acts.output().codes != naive.codes) as usize;
            if !truncate16 {
                let layer = &model.graph.layers[0];
                let table = lpfp::pe::MacTable::new(fmt).unwrap();
                let job = lpfp::infer::quantized::ConvJob {
                    layer: "y",
                    spec: layer.kind.conv_spec().unwrap(),
                    in_shape: acts.input.shape,
                    out_shape: layer.out_shape,
                    params: q.conv_params(0).unwrap(),
                    sf_in: case.sf_in,
                    table: &table,
                    width: q.accumulator_width(),
                };
                let sums = job.accumulate(&acts.input.codes).unwrap();
                let scale = common::pow2(-(case.sf_in + case.sf_w));
                sum_bad += sums.iter().zip(&naive.sums).any(|(g, w)| common::exact(&g.to_exact()) * &scale != *w) as usize;
            }
        }
    }
    outcome(
        code_bad == 0 && sum_bad == 0,
        format!("100 layer configs, {outputs} outputs over both modes: {code_bad} code mismatches, {sum_bad} sum mismatches"),
    )
}

fn c6_accuracy() -> Outcome {
    let t = Instant::now();
    let model = Model::load(format!("{FIX}/digits.manifest"), format!("{FIX}/digits.weights")).unwrap();
    let calib = read_f32_file(format!("{FIX}/digits_calib.f32").as_ref()).unwrap();
    let samples = split_samples(&calib, model.graph.input).unwrap();
    let cal = capture(&model, &samples[..8]).unwrap();
    let data = Dataset::load(format!("{FIX}/digits_test.dataset")).unwrap();
    let mut fp32 = 0.0;
    let mut acc = Vec::new();
    for fmt in [LpfpFormat::M4E3, LpfpFormat::M5E2, LpfpFormat::M7E0] {
        let (scheme, _) = build_scheme(&model, &cal, &[fmt], -16..=16).unwrap();
        let q = QuantizedModel::new(&model, &scheme, InferOptions::default()).unwrap();
        let r = evaluate(&q, &data, &[1]).unwrap();
        fp32 = r.fp32_accuracy(1).unwrap();
        acc.push(r.quant_accuracy(1).unwrap());
    }
    let el = t.elapsed();
    let (m43, m52, m70) = (acc[0], acc[1], acc[2]);
    let ok = fp32 - m43 <= 1.0 && fp32 - m52 <= 1.0 && m43 >= m70 && m52 >= m70 && within(el, Duration::from_secs(120));
    outcome(
        ok,
        format!("top-1 fp32 {fp32:.2}%, M4E3 {m43:.2}%, M5E2 {m52:.2}%, M7E0 {m70:.2}% on {} samples, {el:.2?}", data.len()),
    )
}

fn vgg16() -> Vec<lpfp::perf::LayerDims> {
    let text = std::fs::read_to_string(format!("{FIX}/vgg16.manifest")).unwrap();
    compute_layers(&Manifest::parse(&text).unwrap().graph().unwrap())
}

const PAIRS: [(u64, u64); 5] = [(48, 64), (64, 48), (96, 32), (128, 24), (192, 16)];

fn c7_peak() -> Outcome {
    let peak = peak_gops(768, 200e6);
    let table = [1066.4, 1086.8, 1101.9, 1121.4, 1121.3, 1104.7];
    let rows = sweep(&[("vgg16".into(), vgg16())], 768, 200e6, &PAIRS, &BufferSizes::default()).unwrap();
    let util_ok = rows.iter().all(|r| r.report.utilization <= 1.0 && r.report.layers.iter().all(|l| l.utilization <= 1.0));
    let gops_ok = rows.iter().all(|r| r.report.gops <= peak);
    outcome(
        peak == 1228.8 && table.iter().all(|&g| g <= peak) && util_ok && gops_ok,
        format!("peak {peak} GOPS; reported 1066.4..1121.4 all below; sweep utilization <= 1: {util_ok}"),
    )
}

fn c8_sweep() -> Outcome {
    let rows = sweep(&[("vgg16".into(), vgg16())], 768, 200e6, &PAIRS, &BufferSizes::default()).unwrap();
    let rank = rows.iter().find(|r| (r.report.cfg.nm, r.report.cfg.np) == (96, 32)).unwrap().rank;
    let bw: Vec<f64> = rows.iter().map(|r| r.report.bandwidth_mbps()).collect();
    let min = (0..bw.len()).fold(0, |b, i| if bw[i] < bw[b] { i } else { b });
    let interior = min > 0 && min + 1 < bw.len();
    let table: Vec<String> = rows
        .iter()
        .map(|r| format!("({},{}) {:.1} GOPS {:.0} MB/s #{}", r.report.cfg.nm, r.report.cfg.np, r.report.gops, r.report.bandwidth_mbps(), r.rank))
        .collect();
    outcome(
        rank <= 2 && interior,
        format!(
            "(96,32) throughput rank {rank} (need <= 2); bandwidth minimum at ({},{}) interior: {interior}; {}",
            rows[min].report.cfg.nm,
            rows[min].report.cfg.np,
            table.join(", ")
        ),
    )
}

fn c9_buffers() -> Outcome {
    let r = best_split(&vgg16(), 96, 32, 768, 200e6, &BufferSizes::default()).unwrap();
    let c: PeConfig = r.cfg;
    let want = (96 / 2 * c.pifm * 8, 96 / 2 * c.pofm * 8, 64 * 32);
    let got = (r.ifmb_bits, r.wb_bits, r.ofmb_bits);
    outcome(
        got == want && c.bw_code_bits == 8 && c.pifm * c.pofm == 32,
        format!("Pifm={} Pofm={}: IFMB {} WB {} OFMB {} bits", c.pifm, c.pofm, got.0, got.1, got.2),
    )
}

fn main() {
    let (c2, c3) = c2_and_3_packing();
    let results = [
        ("1 format roundtrip", c1_roundtrip()),
        ("2 packed multiply equivalence", c2),
        ("3 aligned product width", c3),
        ("4 quantizer optimality", c4_quantizer()),
        ("5 inference oracle equivalence", c5_inference()),
        ("6 fixture accuracy", c6_accuracy()),
        ("7 peak throughput", c7_peak()),
        ("8 sweep shape", c8_sweep()),
        ("9 buffer widths", c9_buffers()),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!("{} criterion {name}: {}", if o.ok { "PASS" } else { "FAIL" }, o.detail);
        failed += !o.ok as usize;
    }
    println!("acceptance: {}/{} passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
