//! Analytical throughput and bandwidth model of the PE array.
//!
//! Each of the `Np` PEs holds `Nm` 4-bit multipliers and per cycle produces
//! two pixels in two output channels over `Nm/4` input channels. The array is
//! split into `Pifm` groups over output pixels and `Pofm` groups over output
//! channels, so one cycle covers `Nm/4` input channels, `2·Pofm` output
//! channels and `2·Pifm` output pixels.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::infer::graph::{LayerKind, NetworkGraph};

/// Per-layer dimensions the model needs. Fully connected layers are `1×1`
/// kernels over a `1×1` output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerDims {
    pub name: String,
    pub ic: u64,
    pub oc: u64,
    pub kh: u64,
    pub kw: u64,
    pub oh: u64,
    pub ow: u64,
    /// Input feature map elements.
    pub input_len: u64,
}

impl LayerDims {
    #[allow(clippy::too_many_arguments)]
    pub fn conv(name: &str, ic: u64, oc: u64, k: u64, ih: u64, iw: u64, oh: u64, ow: u64) -> Self {
        LayerDims {
            name: name.to_string(),
            ic,
            oc,
            kh: k,
            kw: k,
            oh,
            ow,
            input_len: ic * ih * iw,
        }
    }

    pub fn fc(name: &str, ic: u64, oc: u64) -> Self {
        LayerDims::conv(name, ic, oc, 1, 1, 1, 1, 1)
    }

    pub fn macs(&self) -> u64 {
        self.ic * self.oc * self.kh * self.kw * self.oh * self.ow
    }

    pub fn pixels(&self) -> u64 {
        self.oh * self.ow
    }
}

/// Conv and fc layers of a graph; every other layer costs zero cycles.
pub fn compute_layers(graph: &NetworkGraph) -> Vec<LayerDims> {
    let mut out = Vec::new();
    for layer in &graph.layers {
        let in_shape = graph
            .shape_of(&layer.inputs[0])
            .expect("validated graph");
        let o = layer.out_shape;
        match &layer.kind {
            LayerKind::Conv(c) => out.push(LayerDims {
                name: layer.id.clone(),
                ic: c.ic as u64,
                oc: c.oc as u64,
                kh: c.kh as u64,
                kw: c.kw as u64,
                oh: o.h as u64,
                ow: o.w as u64,
                input_len: in_shape.len() as u64,
            }),
            LayerKind::Fc(c) => out.push(LayerDims::fc(&layer.id, c.ic as u64, c.oc as u64)),
            _ => {}
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeConfig {
    pub nm: u64,
    pub np: u64,
    pub pifm: u64,
    pub pofm: u64,
    pub dsp_count: u64,
    pub freq_hz: f64,
    /// Bits per LPFP code.
    pub bw_code_bits: u64,
}

impl PeConfig {
    pub fn new(nm: u64, np: u64, pifm: u64, pofm: u64, dsp_count: u64, freq_hz: f64) -> Result<Self> {
        let cfg = PeConfig {
            nm,
            np,
            pifm,
            pofm,
            dsp_count,
            freq_hz,
            bw_code_bits: 8,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::Constraint(d));
        if self.nm == 0 || self.np == 0 || self.pifm == 0 || self.pofm == 0 || self.dsp_count == 0 {
            return bad("all parallelism parameters must be positive".into());
        }
        if !self.nm.is_multiple_of(4) {
            return bad(format!("Nm={} is not a multiple of 4", self.nm));
        }
        if self.nm * self.np != 4 * self.dsp_count {
            return bad(format!(
                "Nm×Np = {}×{} ≠ 4×{} DSPs",
                self.nm, self.np, self.dsp_count
            ));
        }
        if self.pifm * self.pofm != self.np {
            return bad(format!("Pifm×Pofm = {}×{} ≠ Np={}", self.pifm, self.pofm, self.np));
        }
        if !(self.freq_hz > 0.0) || self.bw_code_bits == 0 {
            return bad("frequency and code width must be positive".into());
        }
        Ok(())
    }

    /// Multiply-accumulates per cycle over the whole array.
    pub fn macs_per_cycle(&self) -> u64 {
        self.nm * self.np
    }

    pub fn peak_gops(&self) -> f64 {
        peak_gops(self.dsp_count, self.freq_hz)
    }

    pub fn ifmb_bits(&self) -> u64 {
        self.nm / 2 * self.pifm * self.bw_code_bits
    }

    pub fn wb_bits(&self) -> u64 {
        self.nm / 2 * self.pofm * self.bw_code_bits
    }

    pub fn ofmb_bits(&self) -> u64 {
        64 * self.np
    }
}

/// `2 ops × 4 MACs per DSP × DSPs × f`, in GOPS.
pub fn peak_gops(dsp_count: u64, freq_hz: f64) -> f64 {
    (2 * 4 * dsp_count) as f64 * freq_hz / 1e9
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// `KW·KH · ⌈IC/(Nm/4)⌉ · ⌈OC/(2·Pofm)⌉ · ⌈OH·OW/(2·Pifm)⌉`.
pub fn layer_cycles(d: &LayerDims, cfg: &PeConfig) -> u64 {
    d.kw * d.kh
        * ceil_div(d.ic, cfg.nm / 4)
        * ceil_div(d.oc, 2 * cfg.pofm)
        * ceil_div(d.pixels(), 2 * cfg.pifm)
}

/// On-chip buffer capacities in bytes, used by the traffic model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BufferSizes {
    pub ifmb_bytes: u64,
    pub wb_bytes: u64,
    pub ofmb_bytes: u64,
}

impl Default for BufferSizes {
    fn default() -> Self {
        BufferSizes {
            ifmb_bytes: 512 << 10,
            wb_bytes: 64 << 10,
            ofmb_bytes: 512 << 10,
        }
    }
}

/// Off-chip bytes moved by one layer.
///
/// Loop order is output-channel tile, then input-channel tile, then pixel
/// tile. Weights are fetched once if one output-channel tile's weights fit
/// WB, otherwise once per pixel tile. The input map is fetched once if it
/// fits IFMB, otherwise once per output-channel tile. When one tile's 16-bit
/// partial sums exceed OFMB they are stored and reloaded between input
/// channel tiles. Outputs are written once.
pub fn layer_traffic(d: &LayerDims, cfg: &PeConfig, buf: &BufferSizes) -> u64 {
    let bytes = |elems: u64| elems * cfg.bw_code_bits / 8;
    let n_oc = ceil_div(d.oc, 2 * cfg.pofm);
    let n_ic = ceil_div(d.ic, cfg.nm / 4);
    let n_pix = ceil_div(d.pixels(), 2 * cfg.pifm);
    let weights = bytes(d.oc * d.ic * d.kh * d.kw);
    let tile_weights = bytes(2 * cfg.pofm * d.ic * d.kh * d.kw);
    let mut t = if tile_weights <= buf.wb_bytes {
        weights
    } else {
        weights * n_pix
    };
    let input = bytes(d.input_len);
    t += if input <= buf.ifmb_bytes { input } else { input * n_oc };
    let out_elems = d.oc * d.pixels();
    let tile_partials = 2 * cfg.pofm * d.pixels() * 2;
    if tile_partials > buf.ofmb_bytes {
        t += 2 * 2 * out_elems * (n_ic - 1);
    }
    t + bytes(out_elems)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerPerf {
    pub name: String,
    pub macs: u64,
    pub cycles: u64,
    pub gops: f64,
    pub utilization: f64,
    pub traffic_bytes: u64,
    /// Traffic over this layer's compute time, bytes/s.
    pub bandwidth: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerfReport {
    pub cfg: PeConfig,
    pub layers: Vec<LayerPerf>,
    pub total_macs: u64,
    pub total_cycles: u64,
    pub gops: f64,
    pub utilization: f64,
    pub traffic_bytes: u64,
    /// Average off-chip bandwidth requirement, bytes/s.
    pub bandwidth: f64,
    pub ifmb_bits: u64,
    pub wb_bits: u64,
    pub ofmb_bits: u64,
}

impl PerfReport {
    pub fn bandwidth_mbps(&self) -> f64 {
        self.bandwidth / 1e6
    }

    /// Layers whose own bandwidth requirement exceeds `limit` bytes/s.
    pub fn over_limit(&self, limit: f64) -> Vec<&LayerPerf> {
        self.layers.iter().filter(|l| l.bandwidth > limit).collect()
    }
}

pub fn network_perf(layers: &[LayerDims], cfg: &PeConfig, buf: &BufferSizes) -> Result<PerfReport> {
    cfg.validate()?;
    if layers.is_empty() {
        return Err(Error::Constraint("network has no conv or fc layers".into()));
    }
    let per_cycle = cfg.macs_per_cycle() as f64;
    let rows: Vec<LayerPerf> = layers
        .iter()
        .map(|d| {
            let cycles = layer_cycles(d, cfg);
            let secs = cycles as f64 / cfg.freq_hz;
            let traffic = layer_traffic(d, cfg, buf);
            LayerPerf {
                name: d.name.clone(),
                macs: d.macs(),
                cycles,
                gops: 2.0 * d.macs() as f64 / secs / 1e9,
                utilization: d.macs() as f64 / (cycles as f64 * per_cycle),
                traffic_bytes: traffic,
                bandwidth: traffic as f64 / secs,
            }
        })
        .collect();
    let total_macs: u64 = rows.iter().map(|r| r.macs).sum();
    let total_cycles: u64 = rows.iter().map(|r| r.cycles).sum();
    let traffic: u64 = rows.iter().map(|r| r.traffic_bytes).sum();
    let secs = total_cycles as f64 / cfg.freq_hz;
    Ok(PerfReport {
        cfg: *cfg,
        total_macs,
        total_cycles,
        gops: 2.0 * total_macs as f64 / secs / 1e9,
        utilization: total_macs as f64 / (total_cycles as f64 * per_cycle),
        traffic_bytes: traffic,
        bandwidth: traffic as f64 / secs,
        ifmb_bits: cfg.ifmb_bits(),
        wb_bits: cfg.wb_bits(),
        ofmb_bits: cfg.ofmb_bits(),
        layers: rows,
    })
}

/// For a fixed `(Nm, Np)`, the `(Pifm, Pofm)` split with the highest
/// throughput; ties go to the lower bandwidth, then the smaller `Pifm`.
pub fn best_split(
    layers: &[LayerDims],
    nm: u64,
    np: u64,
    dsp_count: u64,
    freq_hz: f64,
    buf: &BufferSizes,
) -> Result<PerfReport> {
    let mut best: Option<PerfReport> = None;
    for pifm in (1..=np).filter(|p| np.is_multiple_of(*p)) {
        let cfg = PeConfig::new(nm, np, pifm, np / pifm, dsp_count, freq_hz)?;
        let r = network_perf(layers, &cfg, buf)?;
        let better = match &best {
            None => true,
            Some(b) => (r.total_cycles, r.traffic_bytes) < (b.total_cycles, b.traffic_bytes),
        };
        if better {
            best = Some(r);
        }
    }
    best.ok_or_else(|| Error::Constraint(format!("no split for Np={np}")))
}

/// Every `(Nm, Np)` with `Nm·Np = 4·dsp`, `4 | Nm` and both at least `min`.
pub fn candidate_pairs(dsp_count: u64, min: u64) -> Vec<(u64, u64)> {
    let total = 4 * dsp_count;
    (1..=total)
        .filter(|nm| nm % 4 == 0 && total.is_multiple_of(*nm))
        .map(|nm| (nm, total / nm))
        .filter(|&(nm, np)| nm >= min && np >= min)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub model: String,
    pub report: PerfReport,
    /// 1-based rank by throughput within the model; ties by lower bandwidth.
    pub rank: usize,
}

/// Evaluates each model at each `(Nm, Np)`. Rows are ordered by model, then
/// `(Nm, Np)`.
pub fn sweep(
    models: &[(String, Vec<LayerDims>)],
    dsp_count: u64,
    freq_hz: f64,
    pairs: &[(u64, u64)],
    buf: &BufferSizes,
) -> Result<Vec<SweepRow>> {
    let mut pairs = pairs.to_vec();
    pairs.sort_unstable();
    pairs.dedup();
    let mut rows = Vec::new();
    for (name, layers) in models {
        let reports = pairs
            .par_iter()
            .map(|&(nm, np)| best_split(layers, nm, np, dsp_count, freq_hz, buf))
            .collect::<Result<Vec<_>>>()?;
        let mut order: Vec<usize> = (0..reports.len()).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (&reports[a], &reports[b]);
            rb.gops
                .total_cmp(&ra.gops)
                .then(ra.bandwidth.total_cmp(&rb.bandwidth))
                .then(a.cmp(&b))
        });
        let mut ranks = vec![0; reports.len()];
        for (r, &i) in order.iter().enumerate() {
            ranks[i] = r + 1;
        }
        rows.extend(reports.into_iter().zip(ranks).map(|(report, rank)| SweepRow {
            model: name.clone(),
            report,
            rank,
        }));
    }
    Ok(rows)
}

/// Formats a float with fixed precision, or as an integer when it is one.
pub fn fmt_num(v: f64, precision: usize) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.precision$}")
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "model,Nm,Np,Pifm,Pofm,GOPS,utilization,bandwidth_MBps,ifmb_bits,wb_bits,ofmb_bits,rank\n",
    );
    for r in rows {
        let (p, c) = (&r.report, &r.report.cfg);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.model,
            c.nm,
            c.np,
            c.pifm,
            c.pofm,
            fmt_num(p.gops, 3),
            fmt_num(p.utilization, 6),
            fmt_num(p.bandwidth_mbps(), 3),
            p.ifmb_bits,
            p.wb_bits,
            p.ofmb_bits,
            r.rank
        );
    }
    out
}
