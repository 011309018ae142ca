use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::pe::Activation;

/// Channel-major tensor shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Shape { c, h, w }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixels(&self) -> usize {
        self.h * self.w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

/// `floor((n + 2·pad − k) / stride) + 1`, or `None` when the window does not fit.
pub fn window_out(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = n + 2 * pad;
    if k == 0 || stride == 0 || padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    pub ic: usize,
    pub oc: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub act: Activation,
    pub weights: String,
    pub bias: Option<String>,
}

impl ConvSpec {
    pub fn weight_len(&self) -> usize {
        self.oc * self.ic * self.kh * self.kw
    }

    pub fn macs(&self, out: Shape) -> u64 {
        (self.weight_len() * out.pixels()) as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Conv(ConvSpec),
    /// Fully connected over the flattened input; `kh = kw = 1`, `stride = 1`.
    Fc(ConvSpec),
    Pool {
        kind: PoolKind,
        k: usize,
        stride: usize,
    },
    Act(Activation),
    Add {
        act: Activation,
    },
    Concat,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv(_) => "conv",
            LayerKind::Fc(_) => "fc",
            LayerKind::Pool { kind: PoolKind::Max, .. } => "maxpool",
            LayerKind::Pool { kind: PoolKind::Avg, .. } => "avgpool",
            LayerKind::Act(_) => "act",
            LayerKind::Add { .. } => "add",
            LayerKind::Concat => "concat",
        }
    }

    pub fn conv_spec(&self) -> Option<&ConvSpec> {
        match self {
            LayerKind::Conv(c) | LayerKind::Fc(c) => Some(c),
            _ => None,
        }
    }

    /// Whether the output scale factor is inherited from the input rather
    /// than searched.
    pub fn passes_scale_through(&self) -> bool {
        matches!(self, LayerKind::Pool { .. } | LayerKind::Act(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub id: String,
    pub kind: LayerKind,
    /// Ids of the producing layers, `"input"` for the network input.
    pub inputs: Vec<String>,
    pub out_shape: Shape,
}

pub const INPUT_ID: &str = "input";

/// Ordered layer list with resolved inputs and shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkGraph {
    pub input: Shape,
    pub layers: Vec<Layer>,
}

impl NetworkGraph {
    /// Validates sources and computes output shapes from
    /// `(id, kind, sources)` triples.
    pub fn new(input: Shape, layers: Vec<(String, LayerKind, Vec<String>)>) -> Result<Self> {
        let mut shapes: HashMap<String, Shape> = HashMap::new();
        shapes.insert(INPUT_ID.to_string(), input);
        let mut out = Vec::with_capacity(layers.len());
        for (id, kind, inputs) in layers {
            if shapes.contains_key(&id) {
                return Err(Error::ShapeMismatch {
                    layer: id,
                    detail: "duplicate layer id".into(),
                });
            }
            let mismatch = |detail: String| Error::ShapeMismatch {
                layer: id.clone(),
                detail,
            };
            let mut in_shapes = Vec::new();
            for src in &inputs {
                in_shapes.push(
                    *shapes
                        .get(src)
                        .ok_or_else(|| mismatch(format!("unknown or later source `{src}`")))?,
                );
            }
            let single = || -> Result<Shape> {
                match in_shapes.as_slice() {
                    [s] => Ok(*s),
                    _ => Err(mismatch(format!("expects one input, got {}", in_shapes.len()))),
                }
            };
            let shape = match &kind {
                LayerKind::Conv(c) => {
                    let s = single()?;
                    if s.c != c.ic {
                        return Err(mismatch(format!("ic={} but input is {s}", c.ic)));
                    }
                    let oh = window_out(s.h, c.kh, c.stride, c.pad);
                    let ow = window_out(s.w, c.kw, c.stride, c.pad);
                    match (oh, ow) {
                        (Some(h), Some(w)) => Shape::new(c.oc, h, w),
                        _ => return Err(mismatch(format!("kernel does not fit input {s}"))),
                    }
                }
                LayerKind::Fc(c) => {
                    let s = single()?;
                    if s.len() != c.ic {
                        return Err(mismatch(format!("ic={} but input {s} has {}", c.ic, s.len())));
                    }
                    Shape::new(c.oc, 1, 1)
                }
                LayerKind::Pool { k, stride, .. } => {
                    let s = single()?;
                    match (window_out(s.h, *k, *stride, 0), window_out(s.w, *k, *stride, 0)) {
                        (Some(h), Some(w)) => Shape::new(s.c, h, w),
                        _ => return Err(mismatch(format!("window does not fit input {s}"))),
                    }
                }
                LayerKind::Act(_) => single()?,
                LayerKind::Add { .. } => {
                    let first = *in_shapes
                        .first()
                        .ok_or_else(|| mismatch("add needs sources".into()))?;
                    if in_shapes.len() < 2 || in_shapes.iter().any(|s| *s != first) {
                        return Err(mismatch(format!("add sources must share a shape: {in_shapes:?}")));
                    }
                    first
                }
                LayerKind::Concat => {
                    let first = *in_shapes
                        .first()
                        .ok_or_else(|| mismatch("concat needs sources".into()))?;
                    if in_shapes.iter().any(|s| s.h != first.h || s.w != first.w) {
                        return Err(mismatch(format!("concat sources differ spatially: {in_shapes:?}")));
                    }
                    Shape::new(in_shapes.iter().map(|s| s.c).sum(), first.h, first.w)
                }
            };
            shapes.insert(id.clone(), shape);
            out.push(Layer {
                id,
                kind,
                inputs,
                out_shape: shape,
            });
        }
        if out.is_empty() {
            return Err(Error::ShapeMismatch {
                layer: INPUT_ID.into(),
                detail: "network has no layers".into(),
            });
        }
        Ok(NetworkGraph { input, layers: out })
    }

    pub fn output_shape(&self) -> Shape {
        self.layers.last().map(|l| l.out_shape).unwrap_or(self.input)
    }

    pub fn shape_of(&self, id: &str) -> Option<Shape> {
        if id == INPUT_ID {
            return Some(self.input);
        }
        self.layers.iter().find(|l| l.id == id).map(|l| l.out_shape)
    }

    pub fn layer(&self, id: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.id == id)
    }

    /// Total multiply-accumulates of all conv and fc layers.
    pub fn macs(&self) -> u64 {
        self.layers
            .iter()
            .filter_map(|l| l.kind.conv_spec().map(|c| c.macs(l.out_shape)))
            .sum()
    }
}
