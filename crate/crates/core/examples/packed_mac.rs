//! Four LPFP multiplications through one wide multiply-add, and the
//! exhaustive M4E3 check.

use lpfp::pe::{lpfp_multiply, verify_packing, QuadPack};
use lpfp::LpfpFormat;

fn main() -> lpfp::Result<()> {
    let f = LpfpFormat::M4E3;
    let [a, b, c, d] = [1.25, -0.375, 3.5, 0.015625].map(|x| f.encode_f64(x));

    let q = QuadPack::new(a, b, c, d)?;
    println!("A = {:#09x}  B = {:#07x}  C = {:#013x}", q.port_a, q.port_b, q.port_c);
    let p = q.multiply_add();
    println!("P = {p:#013x}  lanes {:?}", QuadPack::lanes(p));

    let names = ["a*c", "a*d", "b*c", "b*d"];
    let pairs = [(a, c), (a, d), (b, c), (b, d)];
    for ((name, got), (x, y)) in names.iter().zip(q.execute()).zip(pairs) {
        let direct = lpfp_multiply(x, y)?;
        println!("{name} = {:<12} direct {:<12} same: {}", got.value().to_f64(), direct.value().to_f64(), got == direct);
    }

    let r = verify_packing(f, true, 100_000, 1)?;
    println!(
        "\nexhaustive: pairs {}/{}, lanes {}/{}, random {}/{}, aligned width {} bits (declared {})",
        r.pairs.passed, r.pairs.checked, r.lanes.passed, r.lanes.checked,
        r.random.passed, r.random.checked, r.observed_width(), r.aligned_width
    );
    Ok(())
}
