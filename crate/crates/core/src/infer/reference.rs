//! Full-precision forward pass: `f32` storage, `f64` accumulation.

use crate::error::{Error, Result};
use crate::infer::graph::{ConvSpec, Layer, LayerKind, PoolKind, Shape, INPUT_ID};
use crate::infer::manifest::Model;
use crate::pe::Activation;

/// Per-layer outputs of one forward pass, in graph order.
#[derive(Clone, Debug, PartialEq)]
pub struct Activations {
    pub input: Vec<f32>,
    pub layers: Vec<Vec<f32>>,
}

impl Activations {
    pub fn output(&self) -> &[f32] {
        self.layers.last().map(Vec::as_slice).unwrap_or(&self.input)
    }
}

fn activate(act: Activation, v: f64) -> f64 {
    match act {
        Activation::Relu if v < 0.0 => 0.0,
        Activation::Leaky { shift } if v < 0.0 => v * 2f64.powi(-(shift as i32)),
        _ => v,
    }
}

fn conv(spec: &ConvSpec, s: Shape, out: Shape, x: &[f32], w: &[f32], b: &[f32]) -> Vec<f32> {
    let mut y = Vec::with_capacity(out.len());
    for o in 0..spec.oc {
        for oy in 0..out.h {
            for ox in 0..out.w {
                let mut acc = b[o] as f64;
                for ky in 0..spec.kh {
                    let Some(iy) = (oy * spec.stride + ky).checked_sub(spec.pad).filter(|&i| i < s.h) else {
                        continue;
                    };
                    for kx in 0..spec.kw {
                        let Some(ix) = (ox * spec.stride + kx).checked_sub(spec.pad).filter(|&i| i < s.w) else {
                            continue;
                        };
                        for ic in 0..spec.ic {
                            let xv = x[(ic * s.h + iy) * s.w + ix] as f64;
                            let wv = w[((o * spec.ic + ic) * spec.kh + ky) * spec.kw + kx] as f64;
                            acc += xv * wv;
                        }
                    }
                }
                y.push(activate(spec.act, acc) as f32);
            }
        }
    }
    y
}

fn pool(kind: PoolKind, k: usize, stride: usize, s: Shape, out: Shape, x: &[f32]) -> Vec<f32> {
    let mut y = Vec::with_capacity(out.len());
    for c in 0..s.c {
        for oy in 0..out.h {
            for ox in 0..out.w {
                let window = (0..k).flat_map(|ky| {
                    (0..k).map(move |kx| x[(c * s.h + oy * stride + ky) * s.w + ox * stride + kx] as f64)
                });
                let v = match kind {
                    PoolKind::Max => window.fold(f64::NEG_INFINITY, f64::max),
                    PoolKind::Avg => window.sum::<f64>() / (k * k) as f64,
                };
                y.push(v as f32);
            }
        }
    }
    y
}

pub(crate) fn layer_forward(model: &Model, layer: &Layer, srcs: &[(&[f32], Shape)]) -> Vec<f32> {
    let out = layer.out_shape;
    match &layer.kind {
        LayerKind::Conv(spec) => {
            let (x, s) = srcs[0];
            conv(spec, s, out, x, model.weights(spec), &model.bias(spec))
        }
        LayerKind::Fc(spec) => {
            let (x, _) = srcs[0];
            let flat = Shape::new(x.len(), 1, 1);
            conv(spec, flat, out, x, model.weights(spec), &model.bias(spec))
        }
        LayerKind::Pool { kind, k, stride } => {
            let (x, s) = srcs[0];
            pool(*kind, *k, *stride, s, out, x)
        }
        LayerKind::Act(act) => srcs[0].0.iter().map(|&v| activate(*act, v as f64) as f32).collect(),
        LayerKind::Add { act } => (0..out.len())
            .map(|i| activate(*act, srcs.iter().map(|(x, _)| x[i] as f64).sum()) as f32)
            .collect(),
        LayerKind::Concat => srcs.iter().flat_map(|(x, _)| x.iter().copied()).collect(),
    }
}

/// Runs the network in full precision, keeping every layer's output.
pub fn reference_forward(model: &Model, input: &[f32]) -> Result<Activations> {
    let g = &model.graph;
    if input.len() != g.input.len() {
        return Err(Error::ShapeMismatch {
            layer: INPUT_ID.into(),
            detail: format!("expected {} values ({}), got {}", g.input.len(), g.input, input.len()),
        });
    }
    let mut acts = Activations {
        input: input.to_vec(),
        layers: Vec::with_capacity(g.layers.len()),
    };
    for layer in &g.layers {
        let srcs: Vec<(&[f32], Shape)> = layer
            .inputs
            .iter()
            .map(|id| {
                if id == INPUT_ID {
                    (acts.input.as_slice(), g.input)
                } else {
                    let i = g.layers.iter().position(|l| &l.id == id).expect("validated graph");
                    (acts.layers[i].as_slice(), g.layers[i].out_shape)
                }
            })
            .collect();
        let y = layer_forward(model, layer, &srcs);
        acts.layers.push(y);
    }
    Ok(acts)
}
