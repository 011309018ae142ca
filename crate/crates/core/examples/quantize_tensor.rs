//! Scale-factor and format search on a synthetic weight tensor.

use lpfp::quant::{quantization_mse, search_format_tensors, search_scale, NamedTensor, DEFAULT_SF_WINDOW};
use lpfp::LpfpFormat;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn main() -> lpfp::Result<()> {
    let mut rng = StdRng::seed_from_u64(11);
    // roughly bell-shaped weights with a few large outliers
    let mut w: Vec<f32> = (0..4096)
        .map(|_| (0..4).map(|_| rng.gen_range(-0.05f32..0.05)).sum())
        .collect();
    w[7] = 0.9;
    w[100] = -0.7;

    let (sf, mse) = search_scale(&w, LpfpFormat::M4E3, DEFAULT_SF_WINDOW)?;
    println!("M4E3 best sf {sf}, mse {mse:.3e}");
    for s in sf - 2..=sf + 2 {
        println!("  sf {s:>3}: mse {:.3e}", quantization_mse(&w, LpfpFormat::M4E3, s));
    }

    let t = [NamedTensor { id: "w", values: &w }];
    let report = search_format_tensors(&t, &LpfpFormat::eight_bit(), DEFAULT_SF_WINDOW)?;
    print!("\n{}", report.summary());
    Ok(())
}
