//! Throughput and bandwidth of VGG16 over (Nm, Np) splits of 768 DSPs.

use lpfp::infer::Manifest;
use lpfp::perf::{compute_layers, peak_gops, sweep, BufferSizes};

fn main() -> lpfp::Result<()> {
    let text = include_str!("../fixtures/vgg16.manifest");
    let layers = compute_layers(&Manifest::parse(text)?.graph()?);
    let pairs = [(48, 64), (64, 48), (96, 32), (128, 24), (192, 16)];
    let rows = sweep(&[("vgg16".into(), layers)], 768, 200e6, &pairs, &BufferSizes::default())?;

    println!("peak {} GOPS", peak_gops(768, 200e6));
    println!("  Nm  Np  Pifm Pofm    GOPS   util   MB/s  rank");
    for r in &rows {
        let (p, c) = (&r.report, &r.report.cfg);
        println!(
            "{:>4} {:>3} {:>5} {:>4} {:>7.1} {:>6.3} {:>6.0} {:>5}",
            c.nm, c.np, c.pifm, c.pofm, p.gops, p.utilization, p.bandwidth_mbps(), r.rank
        );
    }

    let r = rows.iter().find(|r| r.report.cfg.nm == 96).expect("swept");
    println!("\nNm=96 per layer:");
    for l in &r.report.layers {
        println!("  {:<8} {:>7.1} GOPS  util {:.3}", l.name, l.gops, l.utilization);
    }
    Ok(())
}
