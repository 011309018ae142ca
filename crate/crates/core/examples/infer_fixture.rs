//! Quantizes the bundled digits CNN and runs one test image through both paths.

use lpfp::infer::manifest::read_f32_file;
use lpfp::infer::{build_scheme, capture, reference_forward, split_samples, Dataset, InferOptions, Model, QuantizedModel};
use lpfp::LpfpFormat;

const FIX: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");

fn main() -> lpfp::Result<()> {
    let model = Model::load(format!("{FIX}/digits.manifest"), format!("{FIX}/digits.weights"))?;
    let calib = read_f32_file(format!("{FIX}/digits_calib.f32").as_ref())?;
    let samples = split_samples(&calib, model.graph.input)?;
    let cal = capture(&model, &samples[..8])?;
    let (scheme, _) = build_scheme(&model, &cal, &[LpfpFormat::M4E3], -16..=16)?;
    print!("{scheme}");

    let data = Dataset::load(format!("{FIX}/digits_test.dataset"))?;
    let (x, label) = (&data.inputs[0], data.labels[0]);
    let q = QuantizedModel::new(&model, &scheme, InferOptions::default())?;
    let acts = q.forward(x)?;
    let fp = reference_forward(&model, x)?;

    println!("\nlabel {label}");
    for (layer, t) in model.graph.layers.iter().zip(&acts.layers) {
        println!("  {:<6} {:<8} {} sf {}", layer.id, layer.kind.name(), t.shape, t.sf);
    }
    let logits = acts.output().dequantize();
    for (i, (a, b)) in logits.iter().zip(fp.output()).enumerate() {
        println!("  class {i}: lpfp {a:>9.4}  fp32 {b:>9.4}");
    }
    Ok(())
}
