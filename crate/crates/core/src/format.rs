//! MaEb minifloat formats and their bit-exact codec.
//!
//! A code is `1 + a + b` bits wide and is laid out sign, mantissa, exponent
//! from the most significant bit down (`S | M | E`), not IEEE's `S | E | M`.
//! With `b >= 1` the exponent bias is `2^(b-1) - 1`; `E = 0` selects the
//! subnormal binade `0.M × 2^(1-bias)`, every other exponent the normal
//! `1.M × 2^(E-bias)`. There is no Inf or NaN: out-of-range values saturate.
//! With `b = 0` a code is plain sign-magnitude fixed point `±0.M`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::exact::ExactReal;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LpfpFormat {
    mantissa_bits: u8,
    exponent_bits: u8,
}

impl LpfpFormat {
    pub const M4E3: LpfpFormat = LpfpFormat {
        mantissa_bits: 4,
        exponent_bits: 3,
    };
    pub const M5E2: LpfpFormat = LpfpFormat {
        mantissa_bits: 5,
        exponent_bits: 2,
    };
    pub const M7E0: LpfpFormat = LpfpFormat {
        mantissa_bits: 7,
        exponent_bits: 0,
    };

    pub fn new(mantissa_bits: u32, exponent_bits: u32) -> Result<Self> {
        if mantissa_bits < 1 || 1 + mantissa_bits + exponent_bits > 8 {
            return Err(Error::InvalidFormat(format!(
                "M{mantissa_bits}E{exponent_bits}"
            )));
        }
        Ok(LpfpFormat {
            mantissa_bits: mantissa_bits as u8,
            exponent_bits: exponent_bits as u8,
        })
    }

    /// Every 8-bit format, M7E0 through M1E6.
    pub fn eight_bit() -> Vec<LpfpFormat> {
        (1..=7)
            .rev()
            .map(|a| LpfpFormat::new(a, 7 - a).expect("a + b = 7 is valid"))
            .collect()
    }

    pub fn mantissa_bits(self) -> u32 {
        self.mantissa_bits as u32
    }

    pub fn exponent_bits(self) -> u32 {
        self.exponent_bits as u32
    }

    /// Total code width including the sign bit.
    pub fn width(self) -> u32 {
        1 + self.mantissa_bits() + self.exponent_bits()
    }

    pub fn bias(self) -> i32 {
        match self.exponent_bits {
            0 => 0,
            b => (1 << (b - 1)) - 1,
        }
    }

    pub fn code_count(self) -> usize {
        1 << self.width()
    }

    /// Unbiased exponent shared by the subnormal and first normal binade.
    pub fn min_exponent(self) -> i32 {
        match self.exponent_bits {
            0 => 0,
            _ => 1 - self.bias(),
        }
    }

    pub fn max_exponent(self) -> i32 {
        match self.exponent_bits {
            0 => 0,
            b => (1 << b) - 1 - self.bias(),
        }
    }

    fn magnitude_count(self) -> u32 {
        1 << (self.mantissa_bits() + self.exponent_bits())
    }

    /// Value of the `k`-th non-negative grid point. Grid indices are the
    /// `E:M` concatenation, so they order magnitudes.
    fn magnitude(self, k: u32) -> ExactReal {
        let a = self.mantissa_bits();
        let e = k >> a;
        let m = (k & ((1 << a) - 1)) as i128;
        if self.exponent_bits == 0 {
            ExactReal::new(m, -(a as i32))
        } else if e == 0 {
            ExactReal::new(m, self.min_exponent() - a as i32)
        } else {
            ExactReal::new((1 << a) + m, e as i32 - self.bias() - a as i32)
        }
    }

    pub fn max_value(self) -> ExactReal {
        self.magnitude(self.magnitude_count() - 1)
    }

    pub fn min_value(self) -> ExactReal {
        -self.max_value()
    }

    /// Smallest non-zero magnitude.
    pub fn smallest_positive(self) -> ExactReal {
        self.magnitude(1)
    }

    pub fn codes(self) -> impl Iterator<Item = LpfpCode> {
        (0..self.code_count() as u16).map(move |bits| LpfpCode {
            bits: bits as u8,
            format: self,
        })
    }

    pub fn zero(self) -> LpfpCode {
        LpfpCode {
            bits: 0,
            format: self,
        }
    }

    fn code_from_index(self, negative: bool, k: u32) -> LpfpCode {
        let a = self.mantissa_bits();
        let b = self.exponent_bits();
        let e = k >> a;
        let m = k & ((1 << a) - 1);
        let sign = (negative && k != 0) as u32;
        LpfpCode {
            bits: ((sign << (a + b)) | (m << b) | e) as u8,
            format: self,
        }
    }

    /// Round to the nearest code with saturation at `±MAX`. Exact ties go to
    /// the neighbour with an even grid index (even mantissa); zero always
    /// encodes as `+0`.
    pub fn encode(self, x: ExactReal) -> LpfpCode {
        if x.is_zero() {
            return self.zero();
        }
        let negative = x.is_negative();
        let mag = x.abs();
        let top = self.magnitude_count() - 1;
        if mag >= self.magnitude(top) {
            return self.code_from_index(negative, top);
        }
        // largest k with magnitude(k) <= mag; magnitude(0) = 0 <= mag
        let (mut lo, mut hi) = (0u32, top);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.magnitude(mid) <= mag {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let below = self.magnitude(lo);
        let above = self.magnitude(lo + 1);
        let twice = mag.mul_pow2(1);
        let sum = below
            .checked_add(above)
            .expect("grid points are at most 16 bits wide");
        let k = match twice.cmp(&sum) {
            std::cmp::Ordering::Less => lo,
            std::cmp::Ordering::Greater => lo + 1,
            std::cmp::Ordering::Equal if lo % 2 == 0 => lo,
            std::cmp::Ordering::Equal => lo + 1,
        };
        self.code_from_index(negative, k)
    }

    /// [`encode`](Self::encode) for a float input. Infinities saturate and
    /// NaN maps to `+0`; callers are expected to pass finite values.
    pub fn encode_f64(self, x: f64) -> LpfpCode {
        match ExactReal::from_f64(x) {
            Some(v) => self.encode(v),
            None if x.is_nan() => self.zero(),
            None => self.code_from_index(x < 0.0, self.magnitude_count() - 1),
        }
    }

    /// All codes ordered by decoded value (ascending), `-0` before `+0`.
    pub fn sorted_codes(self) -> Vec<LpfpCode> {
        let mut codes: Vec<LpfpCode> = self.codes().collect();
        codes.sort_by(|x, y| {
            x.decode()
                .cmp(&y.decode())
                .then_with(|| y.is_negative().cmp(&x.is_negative()))
        });
        codes
    }
}

/// Precomputed grid for fast encoding of `f64` inputs.
///
/// Every grid magnitude and every midpoint between neighbours is exactly
/// representable in `f64`, so the comparisons below are exact and the result
/// is identical to [`LpfpFormat::encode`].
#[derive(Clone, Debug)]
pub struct Encoder {
    format: LpfpFormat,
    magnitudes: Vec<f64>,
    midpoints: Vec<f64>,
}

impl Encoder {
    pub fn new(format: LpfpFormat) -> Self {
        let magnitudes: Vec<f64> = (0..format.magnitude_count())
            .map(|k| format.magnitude(k).to_f64())
            .collect();
        let midpoints = magnitudes.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
        Encoder {
            format,
            magnitudes,
            midpoints,
        }
    }

    pub fn format(&self) -> LpfpFormat {
        self.format
    }

    /// Grid index nearest to `|x|`, ties to even.
    fn index(&self, mag: f64) -> u32 {
        let k = self.midpoints.partition_point(|&m| m < mag);
        if k < self.midpoints.len() && self.midpoints[k] == mag && k % 2 == 1 {
            (k + 1) as u32
        } else {
            k as u32
        }
    }

    pub fn encode(&self, x: f64) -> LpfpCode {
        if x.is_nan() || x == 0.0 {
            return self.format.zero();
        }
        self.format.code_from_index(x < 0.0, self.index(x.abs()))
    }

    /// Decoded value of `encode(x)` without building the code.
    pub fn round(&self, x: f64) -> f64 {
        if x.is_nan() {
            return 0.0;
        }
        let m = self.magnitudes[self.index(x.abs()) as usize];
        if x < 0.0 {
            -m
        } else {
            m
        }
    }
}

impl fmt::Display for LpfpFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "M{}E{}", self.mantissa_bits, self.exponent_bits)
    }
}

impl fmt::Debug for LpfpFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for LpfpFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidFormat(s.to_string());
        let t = s.trim();
        let rest = t
            .strip_prefix('M')
            .or_else(|| t.strip_prefix('m'))
            .ok_or_else(bad)?;
        let split = rest.find(['E', 'e']).ok_or_else(bad)?;
        let a: u32 = rest[..split].parse().map_err(|_| bad())?;
        let b: u32 = rest[split + 1..].parse().map_err(|_| bad())?;
        LpfpFormat::new(a, b).map_err(|_| bad())
    }
}

/// Parses a comma-separated list such as `M4E3,M5E2`.
pub fn parse_format_list(s: &str) -> Result<Vec<LpfpFormat>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// One encoded value. Serialized streams store one code per byte,
/// right-aligned with the unused upper bits zero.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct LpfpCode {
    bits: u8,
    format: LpfpFormat,
}

impl LpfpCode {
    pub fn new(bits: u8, format: LpfpFormat) -> Result<Self> {
        if (bits as usize) >= format.code_count() {
            return Err(Error::InvalidCode {
                bits: bits as u16,
                format: format.to_string(),
            });
        }
        Ok(LpfpCode { bits, format })
    }

    pub fn from_fields(
        negative: bool,
        mantissa: u32,
        exponent: u32,
        format: LpfpFormat,
    ) -> Result<Self> {
        let a = format.mantissa_bits();
        let b = format.exponent_bits();
        if mantissa >= 1 << a || exponent >= 1 << b {
            return Err(Error::InvalidCode {
                bits: ((mantissa << b) | exponent) as u16,
                format: format.to_string(),
            });
        }
        let bits = ((negative as u32) << (a + b)) | (mantissa << b) | exponent;
        Ok(LpfpCode {
            bits: bits as u8,
            format,
        })
    }

    pub fn bits(self) -> u8 {
        self.bits
    }

    pub fn format(self) -> LpfpFormat {
        self.format
    }

    pub fn is_negative(self) -> bool {
        let f = self.format;
        (self.bits >> (f.mantissa_bits() + f.exponent_bits())) & 1 == 1
    }

    pub fn mantissa_field(self) -> u32 {
        let f = self.format;
        (self.bits as u32 >> f.exponent_bits()) & ((1 << f.mantissa_bits()) - 1)
    }

    pub fn exponent_field(self) -> u32 {
        self.bits as u32 & ((1 << self.format.exponent_bits()) - 1)
    }

    /// Position of the magnitude on the non-negative grid (`E:M`).
    pub fn magnitude_index(self) -> u32 {
        (self.exponent_field() << self.format.mantissa_bits()) | self.mantissa_field()
    }

    pub fn is_zero(self) -> bool {
        self.magnitude_index() == 0
    }

    pub fn is_subnormal(self) -> bool {
        self.format.exponent_bits() > 0 && self.exponent_field() == 0 && !self.is_zero()
    }

    /// 1 for normal codes, 0 for subnormals and for fixed-point formats.
    pub fn hidden_bit(self) -> u32 {
        (self.format.exponent_bits() > 0 && self.exponent_field() > 0) as u32
    }

    /// `h.M` as an integer at scale `2^-a`.
    pub fn significand(self) -> u32 {
        (self.hidden_bit() << self.format.mantissa_bits()) | self.mantissa_field()
    }

    /// Unbiased exponent applied to [`significand`](Self::significand).
    pub fn effective_exponent(self) -> i32 {
        let f = self.format;
        if f.exponent_bits() == 0 {
            0
        } else if self.exponent_field() == 0 {
            f.min_exponent()
        } else {
            self.exponent_field() as i32 - f.bias()
        }
    }

    pub fn decode(self) -> ExactReal {
        let sig = self.significand() as i128;
        let sig = if self.is_negative() { -sig } else { sig };
        ExactReal::new(
            sig,
            self.effective_exponent() - self.format.mantissa_bits() as i32,
        )
    }

    pub fn to_f64(self) -> f64 {
        self.decode().to_f64()
    }
}

impl fmt::Debug for LpfpCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{:#04x}({})", self.format, self.bits, self.decode())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(s: u32, m: u32, e: u32) -> LpfpCode {
        LpfpCode::from_fields(s == 1, m, e, LpfpFormat::M4E3).unwrap()
    }

    #[test]
    fn parses_format_names() {
        assert_eq!("M4E3".parse::<LpfpFormat>().unwrap(), LpfpFormat::M4E3);
        assert_eq!("m7e0".parse::<LpfpFormat>().unwrap(), LpfpFormat::M7E0);
        assert!("M0E7".parse::<LpfpFormat>().is_err());
        assert!("M5E3".parse::<LpfpFormat>().is_err());
        assert!("E3M4".parse::<LpfpFormat>().is_err());
        assert_eq!(
            parse_format_list("M4E3,M5E2").unwrap(),
            vec![LpfpFormat::M4E3, LpfpFormat::M5E2]
        );
    }

    #[test]
    fn bias_follows_exponent_width() {
        assert_eq!(LpfpFormat::M4E3.bias(), 3);
        assert_eq!(LpfpFormat::M5E2.bias(), 1);
        assert_eq!(LpfpFormat::M7E0.bias(), 0);
        assert_eq!(LpfpFormat::new(1, 6).unwrap().bias(), 31);
    }

    #[test]
    fn decode_examples() {
        assert_eq!(code(0, 0b0000, 0b011).to_f64(), 1.0);
        assert_eq!(code(1, 0b1000, 0b100).to_f64(), -3.0);
        assert_eq!(code(0, 0b0100, 0b000).to_f64(), 0.0625);
    }

    #[test]
    fn layout_is_sign_mantissa_exponent() {
        let c = code(1, 0b1000, 0b100);
        assert_eq!(c.bits(), 0b1_1000_100);
    }

    #[test]
    fn extremes() {
        assert_eq!(LpfpFormat::M4E3.max_value().to_f64(), 31.0);
        assert_eq!(LpfpFormat::M4E3.min_value().to_f64(), -31.0);
        assert_eq!(LpfpFormat::M5E2.max_value().to_f64(), 7.875);
        assert_eq!(LpfpFormat::M7E0.max_value().to_f64(), 127.0 / 128.0);
    }

    #[test]
    fn encode_examples() {
        let f = LpfpFormat::M4E3;
        assert_eq!(f.encode_f64(3.1).to_f64(), 3.125);
        assert_eq!(f.encode_f64(100.0).to_f64(), 31.0);
        assert_eq!(f.encode_f64(-100.0).to_f64(), -31.0);
        assert_eq!(f.encode_f64(0.0).bits(), 0);
        assert_eq!(f.encode_f64(-0.0).bits(), 0);
        assert_eq!(f.encode_f64(f64::INFINITY).to_f64(), 31.0);
    }

    #[test]
    fn ties_go_to_even_mantissa() {
        let f = LpfpFormat::M4E3;
        // 1.0 and 1.0625 are neighbours; 1.03125 is the midpoint
        assert_eq!(f.encode_f64(1.03125).to_f64(), 1.0);
        // 1.0625 (M=0001) and 1.125 (M=0010)
        assert_eq!(f.encode_f64(1.09375).to_f64(), 1.125);
        // below half the smallest subnormal rounds to zero, the midpoint too
        let tiny = f.smallest_positive().to_f64();
        assert_eq!(f.encode_f64(tiny / 2.0).bits(), 0);
        assert_eq!(f.encode_f64(-tiny / 2.0).bits(), 0);
        assert_eq!(f.encode_f64(tiny * 0.75).to_f64(), tiny);
    }

    #[test]
    fn fixed_point_format_has_no_hidden_bit() {
        let f = LpfpFormat::M7E0;
        let c = LpfpCode::from_fields(false, 64, 0, f).unwrap();
        assert_eq!(c.to_f64(), 0.5);
        assert_eq!(f.smallest_positive().to_f64(), 1.0 / 128.0);
    }

    #[test]
    fn rejects_out_of_range_bits() {
        let f = LpfpFormat::new(3, 2).unwrap();
        assert!(LpfpCode::new(0x40, f).is_err());
        assert!(LpfpCode::new(0x3f, f).is_ok());
    }

    #[test]
    fn sorted_codes_are_monotone() {
        let sorted = LpfpFormat::M4E3.sorted_codes();
        assert_eq!(sorted.len(), 256);
        assert!(sorted.windows(2).all(|w| w[0].decode() <= w[1].decode()));
        assert_eq!(sorted[0].to_f64(), -31.0);
        assert_eq!(sorted[255].to_f64(), 31.0);
    }
}
