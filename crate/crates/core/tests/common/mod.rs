//! Arbitrary-precision oracles, built from the bit layout alone.

#![allow(dead_code)]

use lpfp::{ExactReal, LpfpFormat};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

pub fn pow2(k: i32) -> BigRational {
    let p = BigRational::from_integer(BigInt::one() << k.unsigned_abs());
    if k >= 0 {
        p
    } else {
        p.recip()
    }
}

pub fn int(v: i128) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

pub fn exact(x: &ExactReal) -> BigRational {
    int(x.mantissa()) * pow2(x.exponent())
}

pub fn from_f64(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// Value of `bits` read as S | M | E from the top of the code.
pub fn decode(bits: u8, fmt: LpfpFormat) -> BigRational {
    let (a, b) = (fmt.mantissa_bits(), fmt.exponent_bits());
    let bits = bits as u32;
    let e = bits & ((1 << b) - 1);
    let m = (bits >> b) & ((1 << a) - 1);
    let s = (bits >> (a + b)) & 1;
    let bias = if b == 0 { 0 } else { (1i32 << (b - 1)) - 1 };
    let frac = int(m as i128) * pow2(-(a as i32));
    let v = if b == 0 {
        frac
    } else if e == 0 {
        frac * pow2(1 - bias)
    } else {
        (BigRational::one() + frac) * pow2(e as i32 - bias)
    };
    if s == 1 {
        -v
    } else {
        v
    }
}

pub fn table(fmt: LpfpFormat) -> Vec<BigRational> {
    (0..fmt.code_count()).map(|c| decode(c as u8, fmt)).collect()
}

/// Nearest code by linear scan; ties to an even mantissa field, `+0` over
/// `-0`. Saturation falls out of the scan.
pub fn encode(x: &BigRational, fmt: LpfpFormat) -> u8 {
    let b = fmt.exponent_bits();
    let mut best: Option<(BigRational, u8)> = None;
    for c in 0..fmt.code_count() {
        let c = c as u8;
        let v = decode(c, fmt);
        if v.is_zero() && c != 0 {
            continue;
        }
        let d = (&v - x).abs();
        let take = match &best {
            None => true,
            Some((bd, bc)) => d < *bd || (d == *bd && ((c >> b) & 1) == 0 && ((bc >> b) & 1) == 1),
        };
        if take {
            best = Some((d, c));
        }
    }
    best.expect("non-empty").1
}

/// Round to a multiple of `2^-frac`, ties to even.
pub fn round_grid(x: &BigRational, frac: i32) -> BigInt {
    let scaled = x * pow2(frac);
    let floor = scaled.floor();
    let rem = &scaled - &floor;
    let half = BigRational::new(BigInt::one(), BigInt::from(2));
    let f = floor.to_integer();
    if rem > half || (rem == half && (&f % 2) != BigInt::zero()) {
        f + 1
    } else {
        f
    }
}

pub fn rational_to_f64(x: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    x.to_f64().expect("in range")
}

/// Sorted grid for nearest-code lookups without a full scan.
pub struct Grid {
    fmt: LpfpFormat,
    vals: Vec<(BigRational, u8)>,
}

impl Grid {
    pub fn new(fmt: LpfpFormat) -> Self {
        let mut vals: Vec<(BigRational, u8)> = (0..fmt.code_count())
            .map(|c| (decode(c as u8, fmt), c as u8))
            .filter(|(v, c)| !(v.is_zero() && *c != 0))
            .collect();
        vals.sort();
        Grid { fmt, vals }
    }

    pub fn encode(&self, x: &BigRational) -> u8 {
        let i = self.vals.partition_point(|(v, _)| v < x);
        if i == 0 {
            return self.vals[0].1;
        }
        if i == self.vals.len() {
            return self.vals[i - 1].1;
        }
        let (lo, hi) = (&self.vals[i - 1], &self.vals[i]);
        let (dl, dh) = (x - &lo.0, &hi.0 - x);
        let even = |c: u8| (c >> self.fmt.exponent_bits()) & 1 == 0;
        if dl < dh || (dl == dh && even(lo.1)) {
            lo.1
        } else {
            hi.1
        }
    }
}

/// One conv or fc layer drawn at random, with its data.
#[derive(Clone, Debug)]
pub struct LayerCase {
    pub fc: bool,
    pub ic: usize,
    pub oc: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h: usize,
    pub w: usize,
    /// `none`, `relu` or `leaky:<slope>`.
    pub act: String,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
    pub input: Vec<f32>,
    pub fmt: LpfpFormat,
    pub sf_in: i32,
    pub sf_w: i32,
    pub sf_out: i32,
}

impl LayerCase {
    pub fn random(rng: &mut impl rand::Rng, fmt: LpfpFormat) -> Self {
        let fc = rng.gen_bool(0.25);
        let (ic, oc) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
        let (mut k, stride, pad) = (rng.gen_range(1..=5), rng.gen_range(1..=3), rng.gen_range(0..=2));
        let (h, w) = if fc { (1, 1) } else { (rng.gen_range(1..=16), rng.gen_range(1..=16)) };
        if fc {
            k = 1;
        }
        let k = k.min(h.min(w) + 2 * pad);
        let act = ["none", "relu", "leaky:0.125"][rng.gen_range(0..3)].to_string();
        let mut draw = |n: usize, s: f32| (0..n).map(|_| rng.gen_range(-1.0f32..1.0) * s).collect::<Vec<_>>();
        let weights = draw(oc * ic * k * k, 0.5);
        let bias = draw(oc, 0.25);
        let input = draw(ic * h * w, 2.0);
        LayerCase {
            fc,
            ic,
            oc,
            k,
            stride: if fc { 1 } else { stride },
            pad: if fc { 0 } else { pad },
            h,
            w,
            act,
            weights,
            bias,
            input,
            fmt,
            sf_in: rng.gen_range(-1..=3),
            sf_w: rng.gen_range(0..=4),
            sf_out: rng.gen_range(-2..=3),
        }
    }

    pub fn out_hw(&self) -> (usize, usize) {
        let o = |n: usize| (n + 2 * self.pad - self.k) / self.stride + 1;
        (o(self.h), o(self.w))
    }

    pub fn manifest(&self) -> String {
        let head = format!("input c={} h={} w={}\n", self.ic, self.h, self.w);
        if self.fc {
            format!("{head}fc ic={} oc={} act={} w=w b=b id=y\n", self.ic, self.oc, self.act)
        } else {
            format!(
                "{head}conv ic={} oc={} k={k}x{k} stride={} pad={} act={} w=w b=b id=y\n",
                self.ic,
                self.oc,
                self.stride,
                self.pad,
                self.act,
                k = self.k
            )
        }
    }

    pub fn blob(&self) -> Vec<f32> {
        let mut b = self.weights.clone();
        b.extend(&self.bias);
        b
    }
}

/// Pre-writeback sums of a layer case in real units (bias included) and
/// the output codes, by direct nested loops over oracle-decoded codes.
pub struct NaiveOut {
    pub sums: Vec<BigRational>,
    pub codes: Vec<u8>,
}

fn quantize(values: &[f32], sf: i32, grid: &Grid) -> Vec<u8> {
    values.iter().map(|&v| grid.encode(&(from_f64(v as f64) * pow2(sf)))).collect()
}

pub fn naive_layer(case: &LayerCase, bias_frac: i32, truncate16: bool) -> NaiveOut {
    let fmt = case.fmt;
    let grid = Grid::new(fmt);
    let vals = table(fmt);
    let x = quantize(&case.input, case.sf_in, &grid);
    let wq = quantize(&case.weights, case.sf_w, &grid);
    let acc_scale = case.sf_in + case.sf_w;
    // products sit on this grid; bias joins it with one rounding
    let e_min = if fmt.exponent_bits() == 0 { 0 } else { 2 - (1i32 << (fmt.exponent_bits() - 1)) };
    let grid_frac = 2 * (fmt.mantissa_bits() as i32 - e_min);
    let max = vals.iter().max().expect("non-empty");
    let int_bits = max.floor().to_integer().bits() as i32;
    let f16 = 15 - int_bits;
    // code values as integers on the half grid, so the dot product stays integral
    let ivals: Vec<i128> = vals
        .iter()
        .map(|v| {
            let n = v * pow2(grid_frac / 2);
            assert!(n.is_integer());
            num_traits::ToPrimitive::to_i128(&n.to_integer()).unwrap()
        })
        .collect();
    let slope = match case.act.as_str() {
        "relu" => Some(BigRational::zero()),
        "leaky:0.125" => Some(pow2(-3)),
        _ => None,
    };
    let (oh, ow) = case.out_hw();
    let (k, s, p) = (case.k, case.stride, case.pad);
    let mut sums = Vec::new();
    let mut codes = Vec::new();
    for o in 0..case.oc {
        let b_real = int(
            num_traits::ToPrimitive::to_i128(&round_grid(&from_f64(case.bias[o] as f64), bias_frac)).unwrap(),
        ) * pow2(-bias_frac);
        let b_acc = BigRational::from_integer(round_grid(&(b_real * pow2(acc_scale)), grid_frac)) * pow2(-grid_frac);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0i128;
                for c in 0..case.ic {
                    for ky in 0..k {
                        for kx in 0..k {
                            let (iy, ix) = ((oy * s + ky) as isize - p as isize, (ox * s + kx) as isize - p as isize);
                            if iy < 0 || ix < 0 || iy >= case.h as isize || ix >= case.w as isize {
                                continue;
                            }
                            let xi = (c * case.h + iy as usize) * case.w + ix as usize;
                            let wi = ((o * case.ic + c) * k + ky) * k + kx;
                            acc += ivals[x[xi] as usize] * ivals[wq[wi] as usize];
                        }
                    }
                }
                let total = int(acc) * pow2(-grid_frac) + &b_acc;
                sums.push(&total * pow2(-acc_scale));
                let mut v = total;
                if let Some(sl) = &slope {
                    if v < BigRational::zero() {
                        v *= sl;
                    }
                }
                v *= pow2(case.sf_out - acc_scale);
                if truncate16 {
                    let q = round_grid(&v, f16).clamp(BigInt::from(-32768), BigInt::from(32767));
                    v = BigRational::from_integer(q) * pow2(-f16);
                }
                codes.push(grid.encode(&v));
            }
        }
    }
    NaiveOut { sums, codes }
}

/// Nearest entry of an ascending magnitude grid; ties to the even index.
pub fn nearest(grid: &[f64], x: f64) -> f64 {
    let i = grid.partition_point(|&g| g < x);
    if i == 0 {
        return grid[0];
    }
    if i == grid.len() {
        return grid[i - 1];
    }
    let (dl, dh) = (x - grid[i - 1], grid[i] - x);
    if dl < dh || (dl == dh && (i - 1) % 2 == 0) {
        grid[i - 1]
    } else {
        grid[i]
    }
}

/// Non-negative grid values in grid-index order (`E:M` concatenated), so
/// an even position is an even mantissa.
pub fn magnitudes(fmt: LpfpFormat) -> Vec<f64> {
    let (a, b) = (fmt.mantissa_bits(), fmt.exponent_bits());
    (0..fmt.code_count() / 2)
        .map(|k| {
            let (e, m) = (k >> a, k & ((1 << a) - 1));
            rational_to_f64(&decode(((m << b) | e) as u8, fmt))
        })
        .collect()
}

pub fn brute_mse(mags: &[f64], values: &[f32], sf: i32) -> f64 {
    let (up, down) = (2f64.powi(sf), 2f64.powi(-sf));
    let sum: f64 = values
        .iter()
        .map(|&v| {
            let v = v as f64;
            let x = v * up;
            let e = nearest(mags, x.abs()).copysign(x) * down - v;
            e * e
        })
        .sum();
    sum / values.len() as f64
}

/// Every sf in the window evaluated, sorted by (mse, sf).
pub fn brute_scale(fmt: LpfpFormat, values: &[f32], lo: i32, hi: i32) -> (i32, f64) {
    let mags = magnitudes(fmt);
    let mut all: Vec<(i32, f64)> = (lo..=hi).map(|sf| (sf, brute_mse(&mags, values, sf))).collect();
    all.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
    all[0]
}

/// Mean over tensors of MSE / variance (raw MSE for constant tensors), each
/// at its brute-force sf.
pub fn brute_format_score(fmt: LpfpFormat, tensors: &[Vec<f32>], lo: i32, hi: i32) -> f64 {
    tensors
        .iter()
        .map(|v| {
            let mse = brute_scale(fmt, v, lo, hi).1;
            let n = v.len() as f64;
            let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
            let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                mse / var
            } else {
                mse
            }
        })
        .sum::<f64>()
        / tensors.len() as f64
}
