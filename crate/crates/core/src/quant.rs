//! Post-training quantization.
//!
//! A tensor `v` is stored as `encode(v × 2^sf)` and read back as
//! `decode(code) / 2^sf`. Each tensor gets the integer `sf` that minimizes the
//! mean squared reconstruction error; the network-wide format is the
//! candidate with the lowest variance-normalized error averaged over tensors.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::ops::RangeInclusive;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::exact::ExactReal;
use crate::format::{Encoder, LpfpCode, LpfpFormat};
use crate::pe::round_shift_right;

pub const DEFAULT_SF_WINDOW: RangeInclusive<i32> = -16..=16;

/// Largest bias fraction width tried when picking one automatically.
pub const MAX_BIAS_FRAC: i32 = 24;
const MIN_BIAS_FRAC: i32 = -16;

fn pow2(sf: i32) -> f64 {
    2f64.powi(sf)
}

pub fn quantize_tensor(values: &[f32], format: LpfpFormat, sf: i32) -> Vec<LpfpCode> {
    let enc = Encoder::new(format);
    let scale = pow2(sf);
    values.iter().map(|&v| enc.encode(v as f64 * scale)).collect()
}

pub fn dequantize(codes: &[LpfpCode], sf: i32) -> Vec<f64> {
    let scale = pow2(-sf);
    codes.iter().map(|c| c.to_f64() * scale).collect()
}

fn mse_with(enc: &Encoder, values: &[f32], sf: i32) -> f64 {
    let (up, down) = (pow2(sf), pow2(-sf));
    let sum: f64 = values
        .iter()
        .map(|&v| {
            let v = v as f64;
            let e = enc.round(v * up) * down - v;
            e * e
        })
        .sum();
    sum / values.len() as f64
}

/// Mean squared error of quantizing `values` at `sf`.
pub fn quantization_mse(values: &[f32], format: LpfpFormat, sf: i32) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    mse_with(&Encoder::new(format), values, sf)
}

fn check_tensor(values: &[f32], window: &RangeInclusive<i32>) -> Result<()> {
    if values.is_empty() {
        return Err(Error::DegenerateTensor("empty tensor".into()));
    }
    if window.is_empty() {
        return Err(Error::DegenerateTensor("empty scale-factor window".into()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::DegenerateTensor(format!("non-finite value {v}")));
    }
    Ok(())
}

/// The `sf` in `window` with the least MSE; ties go to the smallest `sf`.
pub fn search_scale(
    values: &[f32],
    format: LpfpFormat,
    window: RangeInclusive<i32>,
) -> Result<(i32, f64)> {
    check_tensor(values, &window)?;
    let enc = Encoder::new(format);
    let mut best = (*window.start(), f64::INFINITY);
    for sf in window {
        let mse = mse_with(&enc, values, sf);
        if mse < best.1 {
            best = (sf, mse);
        }
    }
    Ok(best)
}

/// Population variance, the normalizer for format selection.
pub fn variance(values: &[f32]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    values
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n
}

/// Per-tensor contribution to the format score: MSE over variance, or the
/// raw MSE for a constant tensor.
pub fn normalized_mse(mse: f64, variance: f64) -> f64 {
    if variance > 0.0 {
        mse / variance
    } else {
        mse
    }
}

/// A named tensor offered to the format search.
#[derive(Clone, Copy, Debug)]
pub struct NamedTensor<'a> {
    pub id: &'a str,
    pub values: &'a [f32],
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorResult {
    pub id: String,
    pub sf: i32,
    pub mse: f64,
    pub variance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FormatResult {
    pub format: LpfpFormat,
    pub tensors: Vec<TensorResult>,
    /// Mean of the per-tensor normalized MSEs.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantReport {
    pub formats: Vec<FormatResult>,
    pub chosen: usize,
}

impl QuantReport {
    pub fn best(&self) -> &FormatResult {
        &self.formats[self.chosen]
    }

    pub fn row(&self, format: LpfpFormat) -> Option<&FormatResult> {
        self.formats.iter().find(|r| r.format == format)
    }

    /// Summary table, one row per candidate; the chosen row is starred.
    pub fn summary(&self) -> String {
        let mut out = String::from("format  score         mean_mse      chosen\n");
        for (i, r) in self.formats.iter().enumerate() {
            let mean_mse =
                r.tensors.iter().map(|t| t.mse).sum::<f64>() / r.tensors.len().max(1) as f64;
            let _ = writeln!(
                out,
                "{:<7} {:<13.6e} {:<13.6e} {}",
                r.format.to_string(),
                r.score,
                mean_mse,
                if i == self.chosen { "*" } else { "" }
            );
        }
        out
    }

    /// Every per-tensor result as CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("format,tensor,sf,mse,variance\n");
        for r in &self.formats {
            for t in &r.tensors {
                let _ = writeln!(
                    out,
                    "{},{},{},{:.9e},{:.9e}",
                    r.format, t.id, t.sf, t.mse, t.variance
                );
            }
        }
        out
    }
}

/// Searches every candidate format over the given tensors.
///
/// Scale factors are searched independently per tensor; the chosen format
/// has the smallest mean normalized MSE, first candidate on ties.
pub fn search_format_tensors(
    tensors: &[NamedTensor<'_>],
    candidates: &[LpfpFormat],
    window: RangeInclusive<i32>,
) -> Result<QuantReport> {
    if candidates.is_empty() {
        return Err(Error::Constraint("no candidate formats".into()));
    }
    if tensors.is_empty() {
        return Err(Error::DegenerateTensor("nothing to quantize".into()));
    }
    for t in tensors {
        check_tensor(t.values, &window)
            .map_err(|e| Error::DegenerateTensor(format!("tensor `{}`: {e}", t.id)))?;
    }
    let variances: Vec<f64> = tensors.par_iter().map(|t| variance(t.values)).collect();
    let formats = candidates
        .iter()
        .map(|&format| {
            let tensors: Vec<TensorResult> = tensors
                .par_iter()
                .zip(&variances)
                .map(|(t, &var)| {
                    let (sf, mse) = search_scale(t.values, format, window.clone())?;
                    Ok(TensorResult {
                        id: t.id.to_string(),
                        sf,
                        mse,
                        variance: var,
                    })
                })
                .collect::<Result<_>>()?;
            let score = tensors
                .iter()
                .map(|t| normalized_mse(t.mse, t.variance))
                .sum::<f64>()
                / tensors.len() as f64;
            Ok(FormatResult {
                format,
                tensors,
                score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut chosen = 0;
    for (i, r) in formats.iter().enumerate() {
        if r.score < formats[chosen].score {
            chosen = i;
        }
    }
    Ok(QuantReport { formats, chosen })
}

/// Rounds each bias to a 16-bit integer at `2^-frac_bits`, to nearest with
/// ties to even.
pub fn quantize_bias(bias: &[f32], frac_bits: i32) -> Result<Vec<i16>> {
    bias.iter()
        .map(|&b| {
            let overflow = || Error::BiasOverflow {
                value: b as f64,
                frac_bits,
            };
            let x = ExactReal::from_f64(b as f64)
                .ok_or_else(overflow)?
                .mul_pow2(frac_bits);
            let r = if x.exponent() >= 0 {
                if x.exponent() > 16 {
                    return Err(overflow());
                }
                x.mantissa() << x.exponent()
            } else {
                round_shift_right(x.mantissa(), (-x.exponent()) as u32)
            };
            i16::try_from(r).map_err(|_| overflow())
        })
        .collect()
}

/// The largest fraction width (at most [`MAX_BIAS_FRAC`]) at which every
/// bias fits 16 bits.
pub fn choose_bias_frac(bias: &[f32]) -> Result<i32> {
    (MIN_BIAS_FRAC..=MAX_BIAS_FRAC)
        .rev()
        .find(|&f| quantize_bias(bias, f).is_ok())
        .ok_or_else(|| Error::BiasOverflow {
            value: bias.iter().fold(0f64, |m, &b| m.max((b as f64).abs())),
            frac_bits: MIN_BIAS_FRAC,
        })
}

/// Format plus per-tensor scale factors and per-layer bias fraction widths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantScheme {
    pub format: LpfpFormat,
    pub scale_factors: BTreeMap<String, i32>,
    pub bias_frac_bits: BTreeMap<String, i32>,
}

impl QuantScheme {
    pub fn new(format: LpfpFormat) -> Self {
        QuantScheme {
            format,
            scale_factors: BTreeMap::new(),
            bias_frac_bits: BTreeMap::new(),
        }
    }

    pub fn sf(&self, tensor: &str) -> Result<i32> {
        self.scale_factors
            .get(tensor)
            .copied()
            .ok_or_else(|| Error::MissingScale(tensor.to_string()))
    }

    pub fn bias_frac(&self, layer: &str) -> Result<i32> {
        self.bias_frac_bits
            .get(layer)
            .copied()
            .ok_or_else(|| Error::MissingScale(format!("bias of {layer}")))
    }

    pub fn set_sf(&mut self, tensor: impl Into<String>, sf: i32) {
        self.scale_factors.insert(tensor.into(), sf);
    }

    pub fn set_bias_frac(&mut self, layer: impl Into<String>, frac: i32) {
        self.bias_frac_bits.insert(layer.into(), frac);
    }
}

impl fmt::Display for QuantScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "format {}", self.format)?;
        for (id, sf) in &self.scale_factors {
            writeln!(f, "tensor {id} sf {sf}")?;
        }
        for (id, frac) in &self.bias_frac_bits {
            writeln!(f, "bias {id} frac {frac}")?;
        }
        Ok(())
    }
}

impl FromStr for QuantScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut scheme: Option<QuantScheme> = None;
        for (n, raw) in s.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |d: &str| Error::Parse(format!("scheme line {}: {d}", n + 1));
            let words: Vec<&str> = line.split_whitespace().collect();
            match (words.as_slice(), scheme.as_mut()) {
                (["format", f], None) => scheme = Some(QuantScheme::new(f.parse()?)),
                (["format", _], Some(_)) => return Err(err("second format line")),
                (_, None) => return Err(err("expected `format MaEb` first")),
                (["tensor", id, "sf", v], Some(sc)) => {
                    let v = v.parse().map_err(|_| err("bad sf"))?;
                    sc.set_sf(*id, v);
                }
                (["bias", id, "frac", v], Some(sc)) => {
                    let v = v.parse().map_err(|_| err("bad frac"))?;
                    sc.set_bias_frac(*id, v);
                }
                _ => return Err(err(&format!("unrecognized `{line}`"))),
            }
        }
        scheme.ok_or_else(|| Error::Parse("empty scheme file".into()))
    }
}
