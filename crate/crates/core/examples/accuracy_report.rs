//! Top-1/top-5 accuracy of the digits fixture for each 8-bit format.

use lpfp::infer::manifest::read_f32_file;
use lpfp::infer::{build_scheme, capture, evaluate, split_samples, Dataset, InferOptions, Model, QuantizedModel};
use lpfp::LpfpFormat;

const FIX: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");

fn main() -> lpfp::Result<()> {
    let model = Model::load(format!("{FIX}/digits.manifest"), format!("{FIX}/digits.weights"))?;
    let calib = read_f32_file(format!("{FIX}/digits_calib.f32").as_ref())?;
    let cal = capture(&model, &split_samples(&calib, model.graph.input)?[..8])?;
    let data = Dataset::load(format!("{FIX}/digits_test.dataset"))?;

    let (_, report) = build_scheme(&model, &cal, &LpfpFormat::eight_bit(), -16..=16)?;
    print!("{}", report.summary());

    println!("\nformat  top1    top5    gap1(pp)");
    for fmt in LpfpFormat::eight_bit() {
        let (scheme, _) = build_scheme(&model, &cal, &[fmt], -16..=16)?;
        let q = match QuantizedModel::new(&model, &scheme, InferOptions::default()) {
            Ok(q) => q,
            Err(e) => {
                println!("{fmt}    skipped: {e}");
                continue;
            }
        };
        let r = evaluate(&q, &data, &[1, 5])?;
        println!(
            "{fmt}    {:6.2}  {:6.2}  {:6.2}",
            r.quant_accuracy(1).unwrap_or(0.0),
            r.quant_accuracy(5).unwrap_or(0.0),
            r.gap(1).unwrap_or(0.0)
        );
    }
    Ok(())
}
