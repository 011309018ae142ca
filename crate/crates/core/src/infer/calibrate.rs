//! Scheme construction from calibration activations.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::format::LpfpFormat;
use crate::infer::graph::{LayerKind, INPUT_ID};
use crate::infer::manifest::Model;
use crate::infer::reference::reference_forward;
use crate::quant::{choose_bias_frac, search_format_tensors, NamedTensor, QuantReport, QuantScheme};

/// Activations of every tensor over the whole calibration batch, keyed by
/// tensor id (`"input"` or a layer id), samples concatenated.
pub type Calibration = BTreeMap<String, Vec<f32>>;

pub fn capture(model: &Model, samples: &[Vec<f32>]) -> Result<Calibration> {
    if samples.is_empty() {
        return Err(Error::MissingCalibration(INPUT_ID.into()));
    }
    let passes = samples
        .par_iter()
        .map(|s| reference_forward(model, s))
        .collect::<Result<Vec<_>>>()?;
    let mut cal = Calibration::new();
    cal.insert(
        INPUT_ID.into(),
        passes.iter().flat_map(|p| p.input.iter().copied()).collect(),
    );
    for (i, layer) in model.graph.layers.iter().enumerate() {
        cal.insert(
            layer.id.clone(),
            passes.iter().flat_map(|p| p.layers[i].iter().copied()).collect(),
        );
    }
    Ok(cal)
}

/// Searched tensors in a fixed order: the input, then per layer its weights
/// and, unless the layer inherits its input's scale, its output.
fn searched<'a>(model: &'a Model, cal: &'a Calibration) -> Result<Vec<NamedTensor<'a>>> {
    let act = |id: &'a str| -> Result<NamedTensor<'a>> {
        match cal.get(id) {
            Some(v) if !v.is_empty() => Ok(NamedTensor { id, values: v }),
            _ => Err(Error::MissingCalibration(id.to_string())),
        }
    };
    let mut out = vec![act(INPUT_ID)?];
    for layer in &model.graph.layers {
        if let Some(spec) = layer.kind.conv_spec() {
            out.push(NamedTensor {
                id: &spec.weights,
                values: model.weights(spec),
            });
        }
        if !layer.kind.passes_scale_through() {
            out.push(act(&layer.id)?);
        }
    }
    // a weight tensor shared by two layers is searched once
    let mut seen = std::collections::HashSet::new();
    out.retain(|t| seen.insert(t.id));
    Ok(out)
}

/// Searches every candidate format and returns the scheme for the winner
/// together with the full report.
pub fn build_scheme(
    model: &Model,
    cal: &Calibration,
    candidates: &[LpfpFormat],
    window: RangeInclusive<i32>,
) -> Result<(QuantScheme, QuantReport)> {
    let tensors = searched(model, cal)?;
    let report = search_format_tensors(&tensors, candidates, window)?;
    let scheme = scheme_from_report(model, &report, report.chosen)?;
    Ok((scheme, report))
}

/// The scheme for row `index` of a report, so that any searched format can be
/// evaluated, not only the winner.
pub fn scheme_from_report(model: &Model, report: &QuantReport, index: usize) -> Result<QuantScheme> {
    let row = &report.formats[index];
    let mut scheme = QuantScheme::new(row.format);
    for t in &row.tensors {
        scheme.set_sf(t.id.clone(), t.sf);
    }
    for layer in &model.graph.layers {
        if layer.kind.passes_scale_through() {
            let sf = scheme.sf(&layer.inputs[0])?;
            scheme.set_sf(layer.id.clone(), sf);
        }
        if let LayerKind::Conv(spec) | LayerKind::Fc(spec) = &layer.kind {
            scheme.set_bias_frac(layer.id.clone(), choose_bias_frac(&model.bias(spec))?);
        }
    }
    Ok(scheme)
}
