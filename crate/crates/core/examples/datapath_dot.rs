//! One output pixel through the datapath: multiply, align, accumulate, add
//! bias, write back.

use lpfp::pe::{align, lpfp_multiply, writeback, Accum, Activation, WritebackParams};
use lpfp::quant::{choose_bias_frac, quantize_bias, quantize_tensor};
use lpfp::LpfpFormat;

fn main() -> lpfp::Result<()> {
    let f = LpfpFormat::M4E3;
    let x = [0.81f32, -1.7, 2.2, 0.05, 3.9, -0.6, 1.1, 0.0, 0.33];
    let w = [0.12f32, 0.4, -0.25, 0.9, 0.07, -0.31, 0.2, 0.5, -0.05];
    let bias = 0.6f32;
    let (sf_x, sf_w, sf_y) = (1, 3, 1);

    let xq = quantize_tensor(&x, f, sf_x);
    let wq = quantize_tensor(&w, f, sf_w);
    let mut acc = Accum::new(f)?;
    for (a, b) in xq.iter().zip(&wq) {
        acc.accumulate(align(&lpfp_multiply(*a, *b)?)?)?;
    }
    println!("sum of products: {} ({}-bit accumulator, {} fraction bits)", acc.value(), acc.width(), acc.frac_bits());

    let frac = choose_bias_frac(&[bias])?;
    let b = quantize_bias(&[bias], frac)?[0];
    acc.add_bias(b, frac, sf_x + sf_w)?;
    println!("with bias {b} / 2^{frac}: {}", acc.to_exact().to_f64() / 2f64.powi(sf_x + sf_w));

    let p = WritebackParams::conv(sf_x, sf_w, sf_y, f).activation(Activation::Relu);
    let out = writeback(&acc, &p);
    let exact: f64 = x.iter().zip(&w).map(|(a, b)| (a * b) as f64).sum::<f64>() + bias as f64;
    println!(
        "output code 0x{:02x} = {} (16-bit intermediate {}), float reference {exact:.5}",
        out.code.bits(),
        out.code.to_f64() / 2f64.powi(sf_y),
        out.intermediate
    );
    Ok(())
}
