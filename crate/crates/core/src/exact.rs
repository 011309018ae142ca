//! Exact dyadic rationals.
//!
//! Every value an LPFP code can decode to, every product of two such values,
//! and every fixed-point accumulator state is a dyadic rational
//! `mantissa × 2^exponent`. [`ExactReal`] stores exactly that, normalized so
//! the mantissa is odd (or the whole value is zero), which makes structural
//! equality coincide with numeric equality.

use std::cmp::Ordering;
use std::fmt;
use std::ops::Neg;

/// A dyadic rational `mantissa × 2^exponent`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExactReal {
    mant: i128,
    exp: i32,
}

impl ExactReal {
    pub const ZERO: ExactReal = ExactReal { mant: 0, exp: 0 };
    pub const ONE: ExactReal = ExactReal { mant: 1, exp: 0 };

    pub fn new(mantissa: i128, exponent: i32) -> Self {
        if mantissa == 0 {
            return Self::ZERO;
        }
        let tz = mantissa.trailing_zeros();
        ExactReal {
            mant: mantissa >> tz,
            exp: exponent + tz as i32,
        }
    }

    pub fn from_int(v: i64) -> Self {
        Self::new(v as i128, 0)
    }

    /// Exact conversion; `None` for infinities and NaN.
    pub fn from_f64(x: f64) -> Option<Self> {
        if !x.is_finite() {
            return None;
        }
        if x == 0.0 {
            return Some(Self::ZERO);
        }
        let bits = x.to_bits();
        let sign = if bits >> 63 == 1 { -1 } else { 1 };
        let biased = ((bits >> 52) & 0x7ff) as i32;
        let frac = bits & ((1u64 << 52) - 1);
        let (m, e) = if biased == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), biased - 1075)
        };
        Some(Self::new(sign * m as i128, e))
    }

    pub fn mantissa(&self) -> i128 {
        self.mant
    }

    pub fn exponent(&self) -> i32 {
        self.exp
    }

    pub fn is_zero(&self) -> bool {
        self.mant == 0
    }

    pub fn is_negative(&self) -> bool {
        self.mant < 0
    }

    pub fn signum(&self) -> i32 {
        self.mant.signum() as i32
    }

    pub fn abs(self) -> Self {
        ExactReal {
            mant: self.mant.abs(),
            exp: self.exp,
        }
    }

    /// Multiplies by `2^k`; always exact.
    pub fn mul_pow2(self, k: i32) -> Self {
        if self.is_zero() {
            self
        } else {
            ExactReal {
                mant: self.mant,
                exp: self.exp + k,
            }
        }
    }

    /// Rounds to the nearest `f64` (exact whenever the mantissa fits 53 bits
    /// and the exponent is in range, which covers every LPFP quantity).
    pub fn to_f64(&self) -> f64 {
        if self.mant == 0 {
            return 0.0;
        }
        let bits = 128 - self.mant.unsigned_abs().leading_zeros() as i32;
        if bits <= 53 {
            return scale_f64(self.mant as f64, self.exp);
        }
        // keep 64 bits then let the f64 conversion round once
        let drop = bits - 64;
        let top = self.mant >> drop;
        let sticky = (self.mant & ((1i128 << drop) - 1) != 0) as i128;
        scale_f64((top | sticky) as f64, self.exp + drop)
    }

    pub fn checked_add(self, other: Self) -> Option<Self> {
        if self.is_zero() {
            return Some(other);
        }
        if other.is_zero() {
            return Some(self);
        }
        let (hi, lo) = if self.exp >= other.exp {
            (self, other)
        } else {
            (other, self)
        };
        let shift = (hi.exp - lo.exp) as u32;
        let shifted = checked_shl(hi.mant, shift)?;
        Some(Self::new(shifted.checked_add(lo.mant)?, lo.exp))
    }

    pub fn checked_sub(self, other: Self) -> Option<Self> {
        self.checked_add(-other)
    }

    pub fn checked_mul(self, other: Self) -> Option<Self> {
        let m = self.mant.checked_mul(other.mant)?;
        Some(Self::new(m, self.exp.checked_add(other.exp)?))
    }

    /// The integer `n` with `self == n × 2^-frac_bits`, if one exists and fits.
    pub fn to_fixed(&self, frac_bits: i32) -> Option<i128> {
        if self.is_zero() {
            return Some(0);
        }
        let shift = self.exp + frac_bits;
        if shift < 0 {
            return None;
        }
        checked_shl(self.mant, shift as u32)
    }

    /// Exact decimal expansion, e.g. `-0.0625` or `31`. Every dyadic value
    /// has a finite one; `None` only if it does not fit 128-bit arithmetic.
    pub fn to_decimal(&self) -> Option<String> {
        let sign = if self.is_negative() { "-" } else { "" };
        let mag = self.mant.unsigned_abs();
        if self.exp >= 0 {
            let v = mag.checked_shl(self.exp as u32).filter(|v| v >> self.exp == mag)?;
            return Some(format!("{sign}{v}"));
        }
        // m·2^-k = m·5^k / 10^k
        let k = (-self.exp) as u32;
        let digits = mag.checked_mul(5u128.checked_pow(k)?)?.to_string();
        let k = k as usize;
        let padded = format!("{digits:0>width$}", width = k + 1);
        let (int, frac) = padded.split_at(padded.len() - k);
        Some(format!("{sign}{int}.{frac}"))
    }

    /// Position of the most significant bit: `|self|` lies in `[2^(p-1), 2^p)`.
    fn msb_position(&self) -> i64 {
        (128 - self.mant.unsigned_abs().leading_zeros()) as i64 + self.exp as i64
    }
}

fn checked_shl(v: i128, shift: u32) -> Option<i128> {
    if v == 0 {
        return Some(0);
    }
    if shift >= 127 || v.unsigned_abs().leading_zeros() <= shift + 1 {
        return None;
    }
    Some(v << shift)
}

fn pow2_f64(e: i32) -> f64 {
    if (-1022..=1023).contains(&e) {
        f64::from_bits(((e + 1023) as u64) << 52)
    } else {
        2f64.powi(e)
    }
}

/// `m × 2^e`, split into two scalings so that neither intermediate
/// underflows or overflows before the final rounding.
fn scale_f64(m: f64, e: i32) -> f64 {
    let half = e / 2;
    m * pow2_f64(half) * pow2_f64(e - half)
}

fn cmp_magnitude(a: &ExactReal, b: &ExactReal) -> Ordering {
    match (a.is_zero(), b.is_zero()) {
        (true, true) => return Ordering::Equal,
        (true, false) => return Ordering::Less,
        (false, true) => return Ordering::Greater,
        _ => {}
    }
    match a.msb_position().cmp(&b.msb_position()) {
        Ordering::Equal => {}
        o => return o,
    }
    // same top bit: align the shorter mantissa; the shift is < 128
    let (ma, mb) = (a.mant.unsigned_abs(), b.mant.unsigned_abs());
    if a.exp >= b.exp {
        (ma << (a.exp - b.exp) as u32).cmp(&mb)
    } else {
        ma.cmp(&(mb << (b.exp - a.exp) as u32))
    }
}

impl Ord for ExactReal {
    fn cmp(&self, other: &Self) -> Ordering {
        match self.signum().cmp(&other.signum()) {
            Ordering::Equal => {}
            o => return o,
        }
        match self.signum() {
            0 => Ordering::Equal,
            1 => cmp_magnitude(self, other),
            _ => cmp_magnitude(other, self),
        }
    }
}

impl PartialOrd for ExactReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Neg for ExactReal {
    type Output = ExactReal;
    fn neg(self) -> Self {
        ExactReal {
            mant: -self.mant,
            exp: self.exp,
        }
    }
}

impl From<i64> for ExactReal {
    fn from(v: i64) -> Self {
        Self::from_int(v)
    }
}

impl fmt::Debug for ExactReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}*2^{}", self.mant, self.exp)
    }
}

impl fmt::Display for ExactReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bits = 128 - self.mant.unsigned_abs().leading_zeros();
        if bits <= 53 && (-1000..1000).contains(&self.exp) {
            write!(f, "{}", self.to_f64())
        } else {
            write!(f, "{}*2^{}", self.mant, self.exp)
        }
    }
}
