//! Prints the value range of every 8-bit format and the first few codes of one.
//!
//!     cargo run --example format_table -- M5E2

use lpfp::LpfpFormat;

fn main() -> lpfp::Result<()> {
    let pick: LpfpFormat = std::env::args().nth(1).as_deref().unwrap_or("M4E3").parse()?;

    println!("{:<6} {:>5} {:>12} {:>14}", "format", "bias", "max", "min positive");
    for f in LpfpFormat::eight_bit() {
        println!(
            "{:<6} {:>5} {:>12} {:>14}",
            f.to_string(),
            f.bias(),
            f.max_value().to_f64(),
            f.smallest_positive().to_f64()
        );
    }

    println!("\n{pick}, smallest non-negative codes:");
    for c in pick.sorted_codes().iter().filter(|c| !c.is_negative()).take(12) {
        let kind = if c.is_zero() {
            "zero"
        } else if c.is_subnormal() {
            "subnormal"
        } else {
            "normal"
        };
        println!("  0x{:02x}  {:<10} {}", c.bits(), kind, c.to_f64());
    }

    // rounding: ties go to the even mantissa, out of range saturates
    for x in [0.3, 1.03125, 1.09375, 1e6, -1e6] {
        let c = pick.encode_f64(x);
        println!("encode({x}) = 0x{:02x} -> {}", c.bits(), c.to_f64());
    }
    Ok(())
}
