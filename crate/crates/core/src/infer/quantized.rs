//! Bit-exact LPFP forward pass.
//!
//! Conv and fc outputs go multiply → align → accumulate → bias → writeback,
//! with the accumulation order fixed to kernel position major, input channel
//! minor. Pooling, activation, residual add and concat each end in at most
//! one conversion to the output format.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::exact::ExactReal;
use crate::format::{LpfpCode, LpfpFormat};
use crate::infer::graph::{ConvSpec, LayerKind, PoolKind, Shape, INPUT_ID};
use crate::infer::manifest::Model;
use crate::infer::tensor::QTensor;
use crate::pe::{
    default_accumulator_width, writeback, writeback_exact, Accum, Activation, MacTable,
    WritebackParams,
};
use crate::quant::{quantize_bias, quantize_tensor, QuantScheme};

/// Guard bits kept when an average-pool divisor is not a power of two.
pub const AVG_GUARD_BITS: u32 = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InferOptions {
    /// Route writebacks through the 16-bit intermediate.
    pub truncate16: bool,
    /// Accumulator width in bits; the format default when `None`.
    pub accumulator_width: Option<u32>,
}

impl Default for InferOptions {
    fn default() -> Self {
        InferOptions {
            truncate16: true,
            accumulator_width: None,
        }
    }
}

/// Quantized parameters of one conv or fc layer.
#[derive(Clone, Debug)]
pub struct ConvParams {
    pub weights: Vec<u8>,
    pub sf_w: i32,
    pub bias: Vec<i16>,
    pub bias_frac: i32,
}

/// Everything a single conv/fc evaluation needs beyond its input.
#[derive(Clone, Copy, Debug)]
pub struct ConvJob<'a> {
    pub layer: &'a str,
    pub spec: &'a ConvSpec,
    /// Input shape; `(len, 1, 1)` for fc.
    pub in_shape: Shape,
    pub out_shape: Shape,
    pub params: &'a ConvParams,
    pub sf_in: i32,
    pub table: &'a MacTable,
    pub width: u32,
}

impl ConvJob<'_> {
    /// Pre-writeback accumulators, output channel major.
    pub fn accumulate(&self, input: &[u8]) -> Result<Vec<Accum>> {
        let (spec, s, out) = (self.spec, self.in_shape, self.out_shape);
        let format = self.table.format();
        let acc_scale = self.sf_in + self.params.sf_w;
        let per_oc = (0..spec.oc)
            .into_par_iter()
            .map(|o| {
                let mut accs = Vec::with_capacity(out.pixels());
                for oy in 0..out.h {
                    for ox in 0..out.w {
                        let at = |e: Error| match e {
                            Error::AccumulatorOverflow { width, context } => Error::AccumulatorOverflow {
                                width,
                                context: format!("{context} at layer `{}` output ({o}, {oy}, {ox})", self.layer),
                            },
                            e => e,
                        };
                        let mut acc = Accum::with_width(format, self.width)?;
                        for ky in 0..spec.kh {
                            let Some(iy) = (oy * spec.stride + ky).checked_sub(spec.pad).filter(|&i| i < s.h) else {
                                continue;
                            };
                            for kx in 0..spec.kw {
                                let Some(ix) = (ox * spec.stride + kx).checked_sub(spec.pad).filter(|&i| i < s.w) else {
                                    continue;
                                };
                                for ic in 0..spec.ic {
                                    let x = input[(ic * s.h + iy) * s.w + ix];
                                    let w = self.params.weights[((o * spec.ic + ic) * spec.kh + ky) * spec.kw + kx];
                                    acc.add_raw(self.table.product(x, w)).map_err(at)?;
                                }
                            }
                        }
                        acc.add_bias(self.params.bias[o], self.params.bias_frac, acc_scale)
                            .map_err(at)?;
                        accs.push(acc);
                    }
                }
                Ok(accs)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(per_oc.into_iter().flatten().collect())
    }

    pub fn forward(&self, input: &[u8], sf_out: i32, truncate16: bool) -> Result<QTensor> {
        let params = WritebackParams::conv(self.sf_in, self.params.sf_w, sf_out, self.table.format())
            .activation(self.spec.act)
            .truncate16(truncate16);
        let codes = self
            .accumulate(input)?
            .iter()
            .map(|a| writeback(a, &params).code.bits())
            .collect();
        Ok(QTensor {
            shape: self.out_shape,
            format: self.table.format(),
            sf: sf_out,
            codes,
        })
    }
}

fn rescale(code: LpfpCode, shift: i32) -> u8 {
    if shift == 0 {
        code.bits()
    } else {
        code.format().encode(code.decode().mul_pow2(shift)).bits()
    }
}

/// Divides by `den` rounding to nearest, ties to even.
fn div_round_even(num: i128, den: i128) -> i128 {
    let q = num.div_euclid(den);
    let r = num.rem_euclid(den);
    match (2 * r).cmp(&den) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q & 1),
    }
}

/// Average of codes: fixed-point sum on the format's code grid, then a
/// rounded division (exact when the window size is a power of two).
pub fn average_codes(codes: &[LpfpCode]) -> ExactReal {
    let format = codes[0].format();
    let frac = format.mantissa_bits() as i32 - format.min_exponent();
    let sum: i128 = codes
        .iter()
        .map(|c| {
            let m = (c.significand() as i128) << (c.effective_exponent() - format.min_exponent());
            if c.is_negative() {
                -m
            } else {
                m
            }
        })
        .sum();
    let n = codes.len() as i128;
    if n.count_ones() == 1 {
        ExactReal::new(sum, -(frac + n.trailing_zeros() as i32))
    } else {
        let q = div_round_even(sum << AVG_GUARD_BITS, n);
        ExactReal::new(q, -(frac + AVG_GUARD_BITS as i32))
    }
}

/// A model with quantized parameters, ready to run.
#[derive(Clone, Debug)]
pub struct QuantizedModel<'m> {
    pub model: &'m Model,
    pub scheme: QuantScheme,
    pub options: InferOptions,
    table: MacTable,
    params: Vec<Option<ConvParams>>,
}

/// Quantized outputs of every layer for one input.
#[derive(Clone, Debug)]
pub struct QActivations {
    pub input: QTensor,
    pub layers: Vec<QTensor>,
}

impl QActivations {
    pub fn output(&self) -> &QTensor {
        self.layers.last().unwrap_or(&self.input)
    }
}

impl<'m> QuantizedModel<'m> {
    pub fn new(model: &'m Model, scheme: &QuantScheme, options: InferOptions) -> Result<Self> {
        let format = scheme.format;
        let table = MacTable::new(format)?;
        let mut params = Vec::with_capacity(model.graph.layers.len());
        for layer in &model.graph.layers {
            params.push(match layer.kind.conv_spec() {
                Some(spec) => {
                    let sf_w = scheme.sf(&spec.weights)?;
                    let bias_frac = scheme.bias_frac(&layer.id)?;
                    Some(ConvParams {
                        weights: quantize_tensor(model.weights(spec), format, sf_w)
                            .iter()
                            .map(|c| c.bits())
                            .collect(),
                        sf_w,
                        bias: quantize_bias(&model.bias(spec), bias_frac)?,
                        bias_frac,
                    })
                }
                None => None,
            });
            scheme.sf(&layer.id)?;
        }
        scheme.sf(INPUT_ID)?;
        Ok(QuantizedModel {
            model,
            scheme: scheme.clone(),
            options,
            table,
            params,
        })
    }

    pub fn format(&self) -> LpfpFormat {
        self.scheme.format
    }

    pub fn conv_params(&self, layer: usize) -> Option<&ConvParams> {
        self.params[layer].as_ref()
    }

    pub fn accumulator_width(&self) -> u32 {
        self.options
            .accumulator_width
            .unwrap_or_else(|| default_accumulator_width(self.format()))
    }

    pub fn quantize_input(&self, input: &[f32]) -> Result<QTensor> {
        let g = &self.model.graph;
        if input.len() != g.input.len() {
            return Err(Error::ShapeMismatch {
                layer: INPUT_ID.into(),
                detail: format!("expected {} values ({}), got {}", g.input.len(), g.input, input.len()),
            });
        }
        let sf = self.scheme.sf(INPUT_ID)?;
        Ok(QTensor {
            shape: g.input,
            format: self.format(),
            sf,
            codes: quantize_tensor(input, self.format(), sf)
                .iter()
                .map(|c| c.bits())
                .collect(),
        })
    }

    pub fn forward(&self, input: &[f32]) -> Result<QActivations> {
        self.forward_codes(self.quantize_input(input)?)
    }

    pub fn forward_codes(&self, input: QTensor) -> Result<QActivations> {
        let g = &self.model.graph;
        let mut acts = QActivations {
            input,
            layers: Vec::with_capacity(g.layers.len()),
        };
        for (i, layer) in g.layers.iter().enumerate() {
            let srcs: Vec<&QTensor> = layer
                .inputs
                .iter()
                .map(|id| {
                    if id == INPUT_ID {
                        &acts.input
                    } else {
                        let j = g.layers.iter().position(|l| &l.id == id).expect("validated graph");
                        &acts.layers[j]
                    }
                })
                .collect();
            let y = self.layer_forward(i, &srcs)?;
            acts.layers.push(y);
        }
        Ok(acts)
    }

    fn layer_forward(&self, index: usize, srcs: &[&QTensor]) -> Result<QTensor> {
        let layer = &self.model.graph.layers[index];
        let format = self.format();
        let out = layer.out_shape;
        let sf_out = self.scheme.sf(&layer.id)?;
        let trunc = self.options.truncate16;
        let wb = |acc_scale: i32, act: Activation| WritebackParams {
            acc_scale,
            sf_out,
            format,
            activation: act,
            truncate16: trunc,
        };
        let tensor = |codes: Vec<u8>| QTensor {
            shape: out,
            format,
            sf: sf_out,
            codes,
        };
        let x = srcs[0];
        Ok(match &layer.kind {
            LayerKind::Conv(spec) | LayerKind::Fc(spec) => {
                let in_shape = match layer.kind {
                    LayerKind::Fc(_) => Shape::new(x.codes.len(), 1, 1),
                    _ => x.shape,
                };
                let job = ConvJob {
                    layer: &layer.id,
                    spec,
                    in_shape,
                    out_shape: out,
                    params: self.params[index].as_ref().expect("conv params"),
                    sf_in: x.sf,
                    table: &self.table,
                    width: self.accumulator_width(),
                };
                job.forward(&x.codes, sf_out, trunc)?
            }
            LayerKind::Pool { kind, k, stride } => {
                let s = x.shape;
                let values: Vec<f64> = format.codes().map(|c| c.to_f64()).collect();
                let params = wb(x.sf, Activation::Identity);
                let mut codes = Vec::with_capacity(out.len());
                for c in 0..s.c {
                    for oy in 0..out.h {
                        for ox in 0..out.w {
                            let window: Vec<LpfpCode> = (0..*k)
                                .flat_map(|ky| (0..*k).map(move |kx| (ky, kx)))
                                .map(|(ky, kx)| x.code((c * s.h + oy * stride + ky) * s.w + ox * stride + kx))
                                .collect();
                            codes.push(match kind {
                                PoolKind::Max => {
                                    let best = window
                                        .iter()
                                        .copied()
                                        .reduce(|m, v| if values[v.bits() as usize] > values[m.bits() as usize] { v } else { m })
                                        .expect("non-empty window");
                                    rescale(best, sf_out - x.sf)
                                }
                                PoolKind::Avg => writeback_exact(average_codes(&window), &params).code.bits(),
                            });
                        }
                    }
                }
                tensor(codes)
            }
            LayerKind::Act(act) => {
                let params = wb(x.sf, *act);
                tensor(
                    (0..x.codes.len())
                        .map(|i| writeback_exact(x.code(i).decode(), &params).code.bits())
                        .collect(),
                )
            }
            LayerKind::Add { act } => {
                let params = wb(0, *act);
                let mut codes = Vec::with_capacity(out.len());
                for i in 0..out.len() {
                    let mut sum = ExactReal::ZERO;
                    for s in srcs {
                        sum = sum
                            .checked_add(s.code(i).decode().mul_pow2(-s.sf))
                            .ok_or_else(|| Error::AccumulatorOverflow {
                                width: 128,
                                context: format!("residual add `{}` element {i}", layer.id),
                            })?;
                    }
                    codes.push(writeback_exact(sum, &params).code.bits());
                }
                tensor(codes)
            }
            LayerKind::Concat => tensor(
                srcs.iter()
                    .flat_map(|s| (0..s.codes.len()).map(move |i| rescale(s.code(i), sf_out - s.sf)))
                    .collect(),
            ),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounded_division() {
        assert_eq!(div_round_even(10, 4), 2);
        assert_eq!(div_round_even(14, 4), 4);
        assert_eq!(div_round_even(-10, 4), -2);
        assert_eq!(div_round_even(11, 4), 3);
        assert_eq!(div_round_even(10, 3), 3);
    }

    #[test]
    fn average_examples() {
        let f = LpfpFormat::M4E3;
        let codes: Vec<LpfpCode> = [1.0, 2.0, 3.0, 4.0].iter().map(|&v| f.encode_f64(v)).collect();
        assert_eq!(average_codes(&codes).to_f64(), 2.5);
        let same = vec![f.encode_f64(1.5); 9];
        assert_eq!(average_codes(&same).to_f64(), 1.5);
    }
}
