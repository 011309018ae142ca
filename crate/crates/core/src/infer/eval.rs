//! Top-k accuracy of the quantized path against the full-precision path.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::format::LpfpFormat;
use crate::infer::dataset::Dataset;
use crate::infer::quantized::QuantizedModel;
use crate::infer::reference::reference_forward;

/// Position of `label` when scores are sorted descending, ties broken by the
/// lower index.
pub fn rank_of(scores: &[f64], label: usize) -> usize {
    let s = scores[label];
    scores
        .iter()
        .enumerate()
        .filter(|&(i, &v)| v > s || (v == s && i < label))
        .count()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassRow {
    pub label: u32,
    pub count: usize,
    pub fp32_correct: usize,
    pub quant_correct: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub format: LpfpFormat,
    pub samples: usize,
    pub topk: Vec<usize>,
    /// Per `topk` entry, samples whose label ranks within k.
    pub fp32_hits: Vec<usize>,
    pub quant_hits: Vec<usize>,
    pub classes: Vec<ClassRow>,
    /// Samples where both paths pick the same top-1 class.
    pub agreement: usize,
}

impl EvalReport {
    fn pct(&self, hits: usize) -> f64 {
        100.0 * hits as f64 / self.samples as f64
    }

    pub fn fp32_accuracy(&self, k: usize) -> Option<f64> {
        let i = self.topk.iter().position(|&t| t == k)?;
        Some(self.pct(self.fp32_hits[i]))
    }

    pub fn quant_accuracy(&self, k: usize) -> Option<f64> {
        let i = self.topk.iter().position(|&t| t == k)?;
        Some(self.pct(self.quant_hits[i]))
    }

    /// Accuracy lost by quantization in percentage points (positive = worse).
    pub fn gap(&self, k: usize) -> Option<f64> {
        Some(self.fp32_accuracy(k)? - self.quant_accuracy(k)?)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let q = self.format.to_string();
        let _ = writeln!(out, "samples {}", self.samples);
        let _ = writeln!(out, "{:<8}{:>10}{:>10}{:>10}", "metric", "fp32", q, "gap_pp");
        for (i, k) in self.topk.iter().enumerate() {
            let (f, qa) = (self.pct(self.fp32_hits[i]), self.pct(self.quant_hits[i]));
            let _ = writeln!(out, "{:<8}{:>10.2}{:>10.2}{:>10.2}", format!("top{k}"), f, qa, f - qa);
        }
        let _ = writeln!(out, "argmax_agreement {}/{}", self.agreement, self.samples);
        let _ = writeln!(out, "{:<8}{:>8}{:>10}{:>10}", "class", "count", "fp32", q);
        for c in &self.classes {
            let _ = writeln!(
                out,
                "{:<8}{:>8}{:>10}{:>10}",
                c.label, c.count, c.fp32_correct, c.quant_correct
            );
        }
        out
    }
}

/// Runs both paths over the dataset. Samples are processed in parallel and
/// reduced in dataset order.
pub fn evaluate(q: &QuantizedModel<'_>, data: &Dataset, topk: &[usize]) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.shape != q.model.graph.input {
        return Err(Error::ShapeMismatch {
            layer: "input".into(),
            detail: format!("dataset is {}, network expects {}", data.shape, q.model.graph.input),
        });
    }
    let classes = q.model.graph.output_shape().len();
    if let Some(l) = data.labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::ShapeMismatch {
            layer: "output".into(),
            detail: format!("label {l} but the network has {classes} outputs"),
        });
    }
    let ranks = data
        .inputs
        .par_iter()
        .zip(&data.labels)
        .map(|(x, &label)| {
            let fp: Vec<f64> = reference_forward(q.model, x)?
                .output()
                .iter()
                .map(|&v| v as f64)
                .collect();
            let qv = q.forward(x)?.output().dequantize();
            let top = |s: &[f64]| (0..s.len()).find(|&i| rank_of(s, i) == 0).unwrap_or(0);
            Ok((rank_of(&fp, label as usize), rank_of(&qv, label as usize), top(&fp) == top(&qv)))
        })
        .collect::<Result<Vec<_>>>()?;

    let hits = |pick: fn(&(usize, usize, bool)) -> usize| -> Vec<usize> {
        topk.iter()
            .map(|&k| ranks.iter().filter(|r| pick(r) < k).count())
            .collect()
    };
    let mut rows: Vec<ClassRow> = Vec::new();
    for (r, &label) in ranks.iter().zip(&data.labels) {
        let row = match rows.iter_mut().find(|c| c.label == label) {
            Some(row) => row,
            None => {
                rows.push(ClassRow {
                    label,
                    count: 0,
                    fp32_correct: 0,
                    quant_correct: 0,
                });
                rows.last_mut().expect("just pushed")
            }
        };
        row.count += 1;
        row.fp32_correct += (r.0 == 0) as usize;
        row.quant_correct += (r.1 == 0) as usize;
    }
    rows.sort_by_key(|c| c.label);
    Ok(EvalReport {
        format: q.format(),
        samples: data.len(),
        topk: topk.to_vec(),
        fp32_hits: hits(|r| r.0),
        quant_hits: hits(|r| r.1),
        classes: rows,
        agreement: ranks.iter().filter(|r| r.2).count(),
    })
}
