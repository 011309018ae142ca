//! CNN inference: a full-precision reference path and the bit-exact LPFP path.

pub mod calibrate;
pub mod dataset;
pub mod eval;
pub mod graph;
pub mod manifest;
pub mod quantized;
pub mod reference;
pub mod tensor;

pub use calibrate::{build_scheme, capture, scheme_from_report, Calibration};
pub use dataset::{split_samples, Dataset};
pub use eval::{evaluate, EvalReport};
pub use graph::{ConvSpec, Layer, LayerKind, NetworkGraph, PoolKind, Shape, INPUT_ID};
pub use manifest::{Manifest, Model};
pub use quantized::{InferOptions, QActivations, QuantizedModel};
pub use reference::{reference_forward, Activations};
pub use tensor::QTensor;
