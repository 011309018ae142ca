//! Processing-element arithmetic.
//!
//! The datapath is loss-free up to the final conversion:
//!
//! ```text
//! LpfpCode × LpfpCode ──► ExactProduct ──► AlignedFixed ──► Accum ──► writeback ──► LpfpCode
//!     (sign xor, mantissa MAC,   (shift into one      (integer add)   (the only rounding)
//!      exponent adder)            fixed grid)
//! ```
//!
//! The mantissa product uses the decomposition
//! `h_x.M_x × h_y.M_y = 0.M_x × 0.M_y + extra` where for two normal operands
//! `extra = 1.M_x + 0.M_y`. The fractional product is what a narrow unsigned
//! MAC computes; `extra` is cheap glue logic fed through the MAC's adder input.
//! With a subnormal operand the hidden bit is zero and `extra` collapses
//! accordingly.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::exact::ExactReal;
use crate::format::{LpfpCode, LpfpFormat};

fn check_same_format(x: LpfpCode, y: LpfpCode) -> Result<LpfpFormat> {
    if x.format() != y.format() {
        return Err(Error::FormatMismatch(
            x.format().to_string(),
            y.format().to_string(),
        ));
    }
    Ok(x.format())
}

/// Exact product of two codes: `(-1)^sign × mantissa_scaled × 2^(exp_sum - 2a)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExactProduct {
    negative: bool,
    mantissa_scaled: u32,
    exp_sum: i32,
    format: LpfpFormat,
}

impl ExactProduct {
    pub fn is_negative(&self) -> bool {
        self.negative
    }

    /// Product of the two significands at scale `2^-2a`.
    pub fn mantissa_scaled(&self) -> u32 {
        self.mantissa_scaled
    }

    /// Sum of the operands' unbiased effective exponents.
    pub fn exp_sum(&self) -> i32 {
        self.exp_sum
    }

    /// What the bias-free exponent adder produces: the sum of the operands'
    /// effective exponent fields (`max(E, 1)`); the `2·bias` correction is
    /// folded into the fixed-point scale instead.
    pub fn exponent_field_sum(&self) -> i32 {
        self.exp_sum + 2 * self.format.bias()
    }

    pub fn format(&self) -> LpfpFormat {
        self.format
    }

    pub fn value(&self) -> ExactReal {
        let m = self.mantissa_scaled as i128;
        ExactReal::new(
            if self.negative { -m } else { m },
            self.exp_sum - 2 * self.format.mantissa_bits() as i32,
        )
    }
}

/// The `extra` term of the mantissa decomposition at scale `2^-2a`.
///
/// `extra = h_x·(h_y + 0.M_y) + h_y·0.M_x`, which is `1.M_x + 0.M_y` when both
/// operands are normal.
fn extra_term(x: LpfpCode, y: LpfpCode) -> u32 {
    let a = x.format().mantissa_bits();
    let (hx, mx) = (x.hidden_bit(), x.mantissa_field());
    let (hy, my) = (y.hidden_bit(), y.mantissa_field());
    (hx * ((hy << a) + my) + hy * mx) << a
}

fn assemble(x: LpfpCode, y: LpfpCode, mantissa_scaled: u32) -> ExactProduct {
    ExactProduct {
        negative: (x.is_negative() ^ y.is_negative()) && mantissa_scaled != 0,
        mantissa_scaled,
        exp_sum: x.effective_exponent() + y.effective_exponent(),
        format: x.format(),
    }
}

/// Multiplies two codes of the same format exactly.
pub fn lpfp_multiply(x: LpfpCode, y: LpfpCode) -> Result<ExactProduct> {
    check_same_format(x, y)?;
    let frac_product = x.mantissa_field() * y.mantissa_field();
    Ok(assemble(x, y, frac_product + extra_term(x, y)))
}

/// Width of each product field inside the wide multiply-add result.
pub const LANE_BITS: u32 = 10;
pub const A_PORT_BITS: u32 = 25;
pub const B_PORT_BITS: u32 = 18;
pub const C_PORT_BITS: u32 = 48;
pub const P_BITS: u32 = 48;
/// Offset of the second activation mantissa inside port A.
pub const A_HIGH_OFFSET: u32 = 2 * LANE_BITS;
/// Offset of the second weight mantissa inside port B.
pub const B_HIGH_OFFSET: u32 = LANE_BITS;

/// Lane offsets inside P, in the order ac, ad, bc, bd. They follow from
/// `A = M_a + M_b·2^20`, `B = M_c + M_d·2^10`.
pub const LANE_OFFSETS: [u32; 4] = [0, B_HIGH_OFFSET, A_HIGH_OFFSET, A_HIGH_OFFSET + B_HIGH_OFFSET];

const LANE_MASK: u64 = (1 << LANE_BITS) - 1;

/// Four multiplications packed into one `P = A × B + C` wide multiply-add.
///
/// Activations `a`, `b` share port A and weights `c`, `d` share port B, so
/// `A × B` yields the four fractional products `M_a·M_c`, `M_a·M_d`,
/// `M_b·M_c`, `M_b·M_d` in separate 10-bit fields; port C carries the matching
/// extra terms. Every field total is a full significand product `< 2^10`, so
/// no lane carries into its neighbour.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuadPack {
    pub operands: [LpfpCode; 4],
    pub port_a: u32,
    pub port_b: u32,
    pub port_c: u64,
}

impl QuadPack {
    pub fn new(a: LpfpCode, b: LpfpCode, c: LpfpCode, d: LpfpCode) -> Result<Self> {
        let format = a.format();
        for x in [b, c, d] {
            check_same_format(a, x)?;
        }
        if format.mantissa_bits() > 4 {
            return Err(Error::PackingUnsupported(format.to_string()));
        }
        let port_a = a.mantissa_field() | (b.mantissa_field() << A_HIGH_OFFSET);
        let port_b = c.mantissa_field() | (d.mantissa_field() << B_HIGH_OFFSET);
        let extras = [
            extra_term(a, c),
            extra_term(a, d),
            extra_term(b, c),
            extra_term(b, d),
        ];
        let port_c = extras
            .iter()
            .zip(LANE_OFFSETS)
            .fold(0u64, |acc, (&e, off)| acc | ((e as u64) << off));
        debug_assert!(port_a < 1 << A_PORT_BITS);
        debug_assert!(port_b < 1 << B_PORT_BITS);
        debug_assert!(port_c < 1 << C_PORT_BITS);
        Ok(QuadPack {
            operands: [a, b, c, d],
            port_a,
            port_b,
            port_c,
        })
    }

    /// The wide multiply-add, truncated to the P register width.
    pub fn multiply_add(&self) -> u64 {
        (self.port_a as u64 * self.port_b as u64 + self.port_c) & ((1 << P_BITS) - 1)
    }

    /// Raw product fields `[P_ac, P_ad, P_bc, P_bd]` of a P value.
    pub fn lanes(p: u64) -> [u32; 4] {
        LANE_OFFSETS.map(|off| ((p >> off) & LANE_MASK) as u32)
    }

    /// Runs the multiply-add and combines each lane with its sign and
    /// exponent path: `[a·c, a·d, b·c, b·d]`.
    pub fn execute(&self) -> [ExactProduct; 4] {
        let [a, b, c, d] = self.operands;
        let [ac, ad, bc, bd] = Self::lanes(self.multiply_add());
        [
            assemble(a, c, ac),
            assemble(a, d, ad),
            assemble(b, c, bc),
            assemble(b, d, bd),
        ]
    }
}

/// `[a·c, a·d, b·c, b·d]` through one packed multiply-add.
pub fn packed_quad_mac(
    a: LpfpCode,
    b: LpfpCode,
    c: LpfpCode,
    d: LpfpCode,
) -> Result<[ExactProduct; 4]> {
    Ok(QuadPack::new(a, b, c, d)?.execute())
}

/// Fraction bits of the common fixed-point grid products are aligned to.
/// The smallest non-zero product sits at `2^(2·e_min - 2a)`.
pub fn aligned_frac_bits(format: LpfpFormat) -> u32 {
    (2 * format.mantissa_bits() as i32 - 2 * format.min_exponent()) as u32
}

/// Largest aligned product magnitude, from the largest significand and
/// exponent.
pub fn max_aligned_magnitude(format: LpfpFormat) -> u128 {
    let a = format.mantissa_bits();
    let max_sig: u128 = if format.exponent_bits() == 0 {
        (1 << a) - 1
    } else {
        (1 << (a + 1)) - 1
    };
    let shift = 2 * (format.max_exponent() - format.min_exponent()) as u32;
    (max_sig * max_sig).checked_shl(shift).unwrap_or(u128::MAX)
}

/// Signed width of an aligned product, sign bit included.
pub fn aligned_width(format: LpfpFormat) -> u32 {
    let a = format.mantissa_bits();
    let max_sig_bits = if format.exponent_bits() == 0 { a } else { a + 1 };
    let product_bits = 128 - {
        let s: u128 = (1 << max_sig_bits) - 1;
        (s * s).leading_zeros()
    };
    product_bits + 2 * (format.max_exponent() - format.min_exponent()) as u32 + 1
}

/// A product placed on the format's fixed grid: `value × 2^-frac_bits`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AlignedFixed {
    pub value: i128,
    pub frac_bits: u32,
}

impl AlignedFixed {
    pub fn to_exact(self) -> ExactReal {
        ExactReal::new(self.value, -(self.frac_bits as i32))
    }
}

fn check_alignable(format: LpfpFormat) -> Result<()> {
    let bits = aligned_width(format);
    if bits > 128 {
        return Err(Error::AccumulatorTooWide {
            format: format.to_string(),
            bits,
        });
    }
    Ok(())
}

/// Shifts the product mantissa by its exponent onto the fixed grid. No bits
/// are dropped; formats whose grid exceeds 128 bits are rejected.
pub fn align(p: &ExactProduct) -> Result<AlignedFixed> {
    let format = p.format;
    check_alignable(format)?;
    let shift = (p.exp_sum - 2 * format.min_exponent()) as u32;
    let mag = (p.mantissa_scaled as i128) << shift;
    Ok(AlignedFixed {
        value: if p.negative { -mag } else { mag },
        frac_bits: aligned_frac_bits(format),
    })
}

/// Accumulator width used unless a caller asks for another: 48 bits (the
/// wide multiply-add's C port) or, for formats with a wider grid, enough for
/// 2^20 worst-case terms.
pub fn default_accumulator_width(format: LpfpFormat) -> u32 {
    (aligned_width(format) + 20).clamp(48, 128)
}

fn fits_width(v: i128, width: u32) -> bool {
    if width >= 128 {
        return true;
    }
    let lim = 1i128 << (width - 1);
    (-lim..lim).contains(&v)
}

/// Divides by `2^shift` rounding to nearest, ties to even.
pub fn round_shift_right(v: i128, shift: u32) -> i128 {
    if shift == 0 {
        return v;
    }
    if shift >= 127 {
        return 0;
    }
    let floor = v >> shift;
    let rem = v - (floor << shift);
    let half = 1i128 << (shift - 1);
    if rem > half || (rem == half && floor & 1 == 1) {
        floor + 1
    } else {
        floor
    }
}

/// Fixed-point accumulator of a given signed width; overflow is reported,
/// never wrapped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Accum {
    value: i128,
    frac_bits: u32,
    width: u32,
}

impl Accum {
    pub fn new(format: LpfpFormat) -> Result<Self> {
        Self::with_width(format, default_accumulator_width(format))
    }

    pub fn with_width(format: LpfpFormat, width: u32) -> Result<Self> {
        check_alignable(format)?;
        Ok(Accum {
            value: 0,
            frac_bits: aligned_frac_bits(format),
            width: width.min(128),
        })
    }

    /// An accumulator on an arbitrary grid, e.g. for pooling sums.
    pub fn on_grid(frac_bits: u32, width: u32) -> Self {
        Accum {
            value: 0,
            frac_bits,
            width: width.min(128),
        }
    }

    pub fn value(&self) -> i128 {
        self.value
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn to_exact(&self) -> ExactReal {
        ExactReal::new(self.value, -(self.frac_bits as i32))
    }

    fn overflow(&self, what: &str) -> Error {
        Error::AccumulatorOverflow {
            width: self.width,
            context: what.to_string(),
        }
    }

    /// Adds a raw integer already on this accumulator's grid.
    pub fn add_raw(&mut self, v: i128) -> Result<()> {
        let next = self
            .value
            .checked_add(v)
            .filter(|n| fits_width(*n, self.width))
            .ok_or_else(|| self.overflow("accumulate"))?;
        self.value = next;
        Ok(())
    }

    pub fn accumulate(&mut self, v: AlignedFixed) -> Result<()> {
        if v.frac_bits != self.frac_bits {
            return Err(Error::Constraint(format!(
                "aligned product has {} fraction bits, accumulator {}",
                v.frac_bits, self.frac_bits
            )));
        }
        self.add_raw(v.value)
    }

    /// Adds a 16-bit fixed bias `bias × 2^-bias_frac` (a real-valued bias)
    /// to an accumulator whose contents are scaled by `2^acc_scale`. The shift
    /// onto the accumulator grid is exact when it is a left shift and rounds
    /// to nearest-even otherwise.
    pub fn add_bias(&mut self, bias: i16, bias_frac: i32, acc_scale: i32) -> Result<()> {
        let shift = self.frac_bits as i32 + acc_scale - bias_frac;
        let b = bias as i128;
        let v = if shift >= 0 {
            if shift >= 127 - 16 {
                return Err(self.overflow("bias alignment"));
            }
            b << shift
        } else {
            round_shift_right(b, (-shift) as u32)
        };
        self.add_raw(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Identity,
    Relu,
    /// Leaky ReLU with slope `2^-shift`.
    Leaky {
        shift: u32,
    },
}

impl Activation {
    /// Exact on dyadic values since the leaky slope is a power of two.
    pub fn apply(self, v: ExactReal) -> ExactReal {
        match self {
            Activation::Identity => v,
            Activation::Relu if v.is_negative() => ExactReal::ZERO,
            Activation::Leaky { shift } if v.is_negative() => v.mul_pow2(-(shift as i32)),
            _ => v,
        }
    }
}

/// Fraction bits of the 16-bit intermediate: the widest that still holds
/// `±MAX` of the output format.
pub fn intermediate_frac_bits(format: LpfpFormat) -> i32 {
    let max = format.max_value();
    let msb = 128 - max.mantissa().unsigned_abs().leading_zeros() as i32 + max.exponent();
    15 - msb
}

fn round_to_i16(v: ExactReal) -> i16 {
    let r = if v.exponent() >= 0 {
        if v.exponent() > 20 {
            v.signum() as i128 * i128::from(i16::MAX) * 2
        } else {
            v.mantissa() << v.exponent()
        }
    } else {
        round_shift_right(v.mantissa(), (-v.exponent()) as u32)
    };
    r.clamp(i16::MIN as i128, i16::MAX as i128) as i16
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WritebackParams {
    /// The accumulator holds real values multiplied by `2^acc_scale`
    /// (`sf_in + sf_w` after a convolution).
    pub acc_scale: i32,
    pub sf_out: i32,
    pub format: LpfpFormat,
    pub activation: Activation,
    /// Route the value through the 16-bit intermediate before conversion.
    pub truncate16: bool,
}

impl WritebackParams {
    pub fn conv(sf_in: i32, sf_w: i32, sf_out: i32, format: LpfpFormat) -> Self {
        WritebackParams {
            acc_scale: sf_in + sf_w,
            sf_out,
            format,
            activation: Activation::Identity,
            truncate16: true,
        }
    }

    pub fn activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn truncate16(mut self, on: bool) -> Self {
        self.truncate16 = on;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Writeback {
    pub code: LpfpCode,
    /// Output-scale value as 16-bit fixed point with
    /// [`intermediate_frac_bits`] fraction bits, saturating.
    pub intermediate: i16,
}

/// Activation, rescale to the output scale factor, then conversion to the
/// output format. The conversion is the datapath's only rounding step (two
/// with `truncate16`).
pub fn writeback_exact(value: ExactReal, p: &WritebackParams) -> Writeback {
    let scaled = p.activation.apply(value).mul_pow2(p.sf_out - p.acc_scale);
    let f16 = intermediate_frac_bits(p.format);
    let intermediate = round_to_i16(scaled.mul_pow2(f16));
    let code = if p.truncate16 {
        p.format
            .encode(ExactReal::new(intermediate as i128, -f16))
    } else {
        p.format.encode(scaled)
    };
    Writeback { code, intermediate }
}

pub fn writeback(acc: &Accum, p: &WritebackParams) -> Writeback {
    writeback_exact(acc.to_exact(), p)
}

/// Product table for one format: each code's signed significand and its
/// exponent offset above the lowest binade, so that
/// `align(lpfp_multiply(x, y)).value == (sig_x·sig_y) << (off_x + off_y)`.
#[derive(Clone, Debug)]
pub struct MacTable {
    format: LpfpFormat,
    sig: Vec<i64>,
    offset: Vec<u32>,
}

impl MacTable {
    pub fn new(format: LpfpFormat) -> Result<Self> {
        check_alignable(format)?;
        let (sig, offset) = format
            .codes()
            .map(|c| {
                let s = c.significand() as i64;
                (
                    if c.is_negative() { -s } else { s },
                    (c.effective_exponent() - format.min_exponent()) as u32,
                )
            })
            .unzip();
        Ok(MacTable {
            format,
            sig,
            offset,
        })
    }

    pub fn format(&self) -> LpfpFormat {
        self.format
    }

    #[inline]
    pub fn product(&self, x: u8, y: u8) -> i128 {
        let (x, y) = (x as usize, y as usize);
        ((self.sig[x] * self.sig[y]) as i128) << (self.offset[x] + self.offset[y])
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Tally {
    pub checked: u64,
    pub passed: u64,
}

impl Tally {
    fn record(&mut self, ok: bool) {
        self.checked += 1;
        self.passed += ok as u64;
    }

    pub fn ok(&self) -> bool {
        self.passed == self.checked
    }
}

/// Outcome of a packing equivalence sweep.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackReport {
    pub format: LpfpFormat,
    /// Every `(x, y)` pair fed as `(x, x, y, y)`.
    pub pairs: Tally,
    /// Every `(x, y)` pair in each lane, other lanes random.
    pub lanes: Tally,
    /// Random quads.
    pub random: Tally,
    /// Random quads where perturbing `a` and `c` must leave `b·d` unchanged.
    pub contamination: Tally,
    pub max_aligned_magnitude: u128,
    pub aligned_width: u32,
}

impl PackReport {
    pub fn ok(&self) -> bool {
        self.pairs.ok() && self.lanes.ok() && self.random.ok() && self.contamination.ok()
    }

    /// Bits needed for the largest aligned magnitude seen, sign included.
    pub fn observed_width(&self) -> u32 {
        128 - self.max_aligned_magnitude.leading_zeros() + 1
    }
}

/// One quad through the packed multiply-add, compared against independent
/// multiplies and against the product of the decoded operands.
fn check_quad(q: [LpfpCode; 4], report: &mut PackReport) -> Result<bool> {
    let packed = packed_quad_mac(q[0], q[1], q[2], q[3])?;
    let pairs = [(q[0], q[2]), (q[0], q[3]), (q[1], q[2]), (q[1], q[3])];
    let mut ok = true;
    for (p, (x, y)) in packed.iter().zip(pairs) {
        let direct = lpfp_multiply(x, y)?;
        ok &= *p == direct;
        ok &= x.decode().checked_mul(y.decode()) == Some(p.value());
        let aligned = align(p)?;
        ok &= aligned.to_exact() == p.value();
        report.max_aligned_magnitude = report.max_aligned_magnitude.max(aligned.value.unsigned_abs());
    }
    Ok(ok)
}

/// Compares the packed multiply-add against independent multiplies.
///
/// The exhaustive part feeds every `(x, y)` pair as `(x, x, y, y)` and then
/// through each lane in turn with random codes in the other lanes. `random`
/// further quads are drawn from a seeded generator, each also checked for
/// cross-lane contamination.
pub fn verify_packing(format: LpfpFormat, exhaustive: bool, random: u64, seed: u64) -> Result<PackReport> {
    let mut rng = StdRng::seed_from_u64(seed);
    let n = format.code_count() as u16;
    let code = |bits: u16| LpfpCode::new(bits as u8, format);
    let mut report = PackReport {
        format,
        pairs: Tally::default(),
        lanes: Tally::default(),
        random: Tally::default(),
        contamination: Tally::default(),
        max_aligned_magnitude: 0,
        aligned_width: aligned_width(format),
    };
    if exhaustive {
        for x in 0..n {
            for y in 0..n {
                let (cx, cy) = (code(x)?, code(y)?);
                let ok = check_quad([cx, cx, cy, cy], &mut report)?;
                report.pairs.record(ok);
            }
        }
        // lane -> (activation slot, weight slot)
        for (ai, wi) in [(0, 2), (0, 3), (1, 2), (1, 3)] {
            for x in 0..n {
                for y in 0..n {
                    let mut q = [0u16; 4].map(|_| rng.gen_range(0..n));
                    q[ai] = x;
                    q[wi] = y;
                    let quad = [code(q[0])?, code(q[1])?, code(q[2])?, code(q[3])?];
                    let ok = check_quad(quad, &mut report)?;
                    report.lanes.record(ok);
                }
            }
        }
    }
    for _ in 0..random {
        let q = [0u16; 4].map(|_| rng.gen_range(0..n));
        let quad = [code(q[0])?, code(q[1])?, code(q[2])?, code(q[3])?];
        let ok = check_quad(quad, &mut report)?;
        report.random.record(ok);

        let bd = packed_quad_mac(quad[0], quad[1], quad[2], quad[3])?[3];
        let (a2, c2) = (code(rng.gen_range(0..n))?, code(rng.gen_range(0..n))?);
        let bd2 = packed_quad_mac(a2, quad[1], c2, quad[3])?[3];
        report.contamination.record(bd == bd2);
    }
    Ok(report)
}
