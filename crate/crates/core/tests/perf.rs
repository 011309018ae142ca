use lpfp::infer::Manifest;
use lpfp::perf::{
    best_split, candidate_pairs, compute_layers, layer_cycles, network_perf, peak_gops, sweep,
    sweep_csv, BufferSizes, LayerDims, PeConfig,
};
use proptest::prelude::*;

const VGG16: &str = include_str!("../fixtures/vgg16.manifest");

fn vgg16() -> Vec<LayerDims> {
    compute_layers(&Manifest::parse(VGG16).unwrap().graph().unwrap())
}

#[test]
fn vgg16_dimensions() {
    let layers = vgg16();
    assert_eq!(layers.len(), 16);
    let macs: u64 = layers.iter().map(|l| l.macs()).sum();
    // 15.35 G conv MACs plus 123.6 M fc MACs
    assert_eq!(macs, 15_346_630_656 + 123_633_664);
}

#[test]
fn peak_for_768_dsp() {
    assert_eq!(peak_gops(768, 200e6), 1228.8);
}

#[test]
fn config_invariants() {
    assert!(PeConfig::new(96, 32, 4, 8, 768, 200e6).is_ok());
    assert!(PeConfig::new(96, 32, 4, 4, 768, 200e6).is_err());
    assert!(PeConfig::new(96, 16, 4, 4, 768, 200e6).is_err());
    assert!(PeConfig::new(0, 32, 4, 8, 768, 200e6).is_err());
}

#[test]
fn buffer_widths() {
    let c = PeConfig::new(96, 32, 4, 8, 768, 200e6).unwrap();
    assert_eq!((c.ifmb_bits(), c.wb_bits(), c.ofmb_bits()), (48 * 4 * 8, 48 * 8 * 8, 64 * 32));
}

#[test]
fn candidate_pairs_cover_products() {
    let pairs = candidate_pairs(768, 8);
    assert!(pairs.contains(&(96, 32)));
    assert!(pairs.iter().all(|&(nm, np)| nm * np == 3072 && nm % 4 == 0 && nm >= 8 && np >= 8));
}

#[test]
fn sweep_ranks_are_a_permutation() {
    let pairs = [(48, 64), (64, 48), (96, 32), (128, 24), (192, 16)];
    let rows = sweep(&[("vgg16".into(), vgg16())], 768, 200e6, &pairs, &BufferSizes::default()).unwrap();
    let mut ranks: Vec<usize> = rows.iter().map(|r| r.rank).collect();
    ranks.sort();
    assert_eq!(ranks, vec![1, 2, 3, 4, 5]);
    let csv = sweep_csv(&rows);
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.starts_with("model,Nm,Np,Pifm,Pofm,GOPS"));
}

fn layer() -> impl Strategy<Value = LayerDims> {
    (1u64..600, 1u64..600, prop_oneof![Just(1u64), Just(3), Just(5)], 1u64..60).prop_map(|(ic, oc, k, hw)| {
        LayerDims::conv("l", ic, oc, k, hw, hw, hw, hw)
    })
}

fn config() -> impl Strategy<Value = PeConfig> {
    let pairs = candidate_pairs(768, 4);
    proptest::sample::select(pairs).prop_flat_map(|(nm, np)| {
        let splits: Vec<u64> = (1..=np).filter(|p| np % p == 0).collect();
        proptest::sample::select(splits).prop_map(move |pifm| PeConfig::new(nm, np, pifm, np / pifm, 768, 200e6).unwrap())
    })
}

proptest! {
    #[test]
    fn throughput_bounded_by_peak(l in proptest::collection::vec(layer(), 1..6), cfg in config()) {
        let r = network_perf(&l, &cfg, &BufferSizes::default()).unwrap();
        prop_assert!(r.gops <= cfg.peak_gops() * (1.0 + 1e-12));
        prop_assert!(r.utilization > 0.0 && r.utilization <= 1.0);
        for row in &r.layers {
            prop_assert!(row.utilization > 0.0 && row.utilization <= 1.0);
            prop_assert!(row.cycles * cfg.macs_per_cycle() >= row.macs);
        }
    }

    #[test]
    fn cycles_monotone_in_dims(l in layer(), cfg in config(), extra in 1u64..64) {
        let mut bigger = l.clone();
        bigger.oc += extra;
        prop_assert!(layer_cycles(&bigger, &cfg) >= layer_cycles(&l, &cfg));
    }

    #[test]
    fn best_split_is_no_worse(l in proptest::collection::vec(layer(), 1..4), cfg in config()) {
        let buf = BufferSizes::default();
        let best = best_split(&l, cfg.nm, cfg.np, 768, 200e6, &buf).unwrap();
        let any = network_perf(&l, &cfg, &buf).unwrap();
        prop_assert!(best.total_cycles <= any.total_cycles);
    }

    #[test]
    fn traffic_covers_compulsory_moves(l in layer(), cfg in config()) {
        let r = network_perf(std::slice::from_ref(&l), &cfg, &BufferSizes::default()).unwrap();
        let compulsory = l.oc * l.ic * l.kh * l.kw + l.input_len + l.oc * l.pixels();
        prop_assert!(r.traffic_bytes >= compulsory);
    }
}
