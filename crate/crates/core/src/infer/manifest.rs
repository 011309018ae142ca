//! Model manifests and weight blobs.
//!
//! A manifest is line oriented; `#` starts a comment. The first layer line
//! must be `input c=<C> h=<H> w=<W>`. Layer lines:
//!
//! ```text
//! conv    ic=3 oc=16 k=3x3 stride=1 pad=1 act=relu w=<tensor> [b=<tensor>] [id=<id>]
//! fc      ic=64 oc=10 [act=...] w=<tensor> [b=<tensor>] [id=<id>]
//! bn      gamma=<t> beta=<t> mean=<t> var=<t> [eps=1e-5] [act=...] [id=<id>]
//! maxpool k=2 [stride=2] [id=<id>]
//! avgpool k=2 [stride=2] [id=<id>]
//! act     fn=relu | fn=leaky slope=0.125 [id=<id>]
//! add     src=<id>,<id> [act=...] [id=<id>]
//! concat  src=<id>,<id>[,...] [id=<id>]
//! ```
//!
//! `act=` takes `none`, `relu` or `leaky:<slope>` with a power-of-two slope
//! in (0, 1). Layers without `id=` are named `L<n>` by line position. A layer
//! without `src=` reads the previous layer. `bn` is folded into the conv or fc
//! right before it.
//!
//! The weight blob holds little-endian `f32` tensors concatenated in the order
//! their ids first appear in the manifest. Conv weights are OC-IC-KH-KW.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::error::{Error, Result};
use crate::infer::graph::{ConvSpec, LayerKind, NetworkGraph, PoolKind, Shape, INPUT_ID};
use crate::pe::Activation;

/// A network with its full-precision parameters, normalization folded.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub graph: NetworkGraph,
    pub params: BTreeMap<String, Vec<f32>>,
}

impl Model {
    pub fn weights(&self, spec: &ConvSpec) -> &[f32] {
        &self.params[&spec.weights]
    }

    /// Bias of a conv or fc, zeros when it has none.
    pub fn bias(&self, spec: &ConvSpec) -> Vec<f32> {
        match &spec.bias {
            Some(b) => self.params[b].clone(),
            None => vec![0.0; spec.oc],
        }
    }

    pub fn load(manifest: impl AsRef<Path>, weights: impl AsRef<Path>) -> Result<Self> {
        let text = read_text(manifest.as_ref())?;
        let blob = read_f32_file(weights.as_ref())?;
        Self::from_parts(&text, &blob)
    }

    pub fn from_parts(manifest: &str, blob: &[f32]) -> Result<Self> {
        let m = Manifest::parse(manifest)?;
        m.bind(blob)
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_f32_file(path: &Path) -> Result<Vec<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    f32_from_le_bytes(&bytes)
}

pub fn f32_from_le_bytes(bytes: &[u8]) -> Result<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Weights(format!(
            "blob length {} is not a multiple of 4",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn f32_to_le_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

#[derive(Clone, Debug)]
struct BnSpec {
    eps: f64,
    gamma: String,
    beta: String,
    mean: String,
    var: String,
    act: Activation,
}

#[derive(Clone, Debug)]
enum Entry {
    Layer {
        line: usize,
        id: String,
        kind: LayerKind,
        inputs: Vec<String>,
    },
    Bn {
        line: usize,
        id: String,
        spec: BnSpec,
    },
}

/// A parsed manifest before weights are attached.
#[derive(Clone, Debug)]
pub struct Manifest {
    input: Shape,
    entries: Vec<Entry>,
    /// Tensor ids with their element counts, in blob order.
    tensors: Vec<(String, usize)>,
}

struct Fields<'a> {
    line: usize,
    map: HashMap<&'a str, &'a str>,
}

impl<'a> Fields<'a> {
    fn parse(line: usize, words: &[&'a str]) -> Result<Self> {
        let mut map = HashMap::new();
        for w in words {
            let (k, v) = w.split_once('=').ok_or_else(|| Error::Manifest {
                line,
                detail: format!("expected key=value, got `{w}`"),
            })?;
            if map.insert(k, v).is_some() {
                return Err(Error::Manifest {
                    line,
                    detail: format!("repeated key `{k}`"),
                });
            }
        }
        Ok(Fields { line, map })
    }

    fn err(&self, detail: impl Into<String>) -> Error {
        Error::Manifest {
            line: self.line,
            detail: detail.into(),
        }
    }

    fn take(&mut self, key: &str) -> Option<&'a str> {
        self.map.remove(key)
    }

    fn req(&mut self, key: &str) -> Result<&'a str> {
        self.take(key).ok_or_else(|| self.err(format!("missing `{key}=`")))
    }

    fn usize_or(&mut self, key: &str, default: Option<usize>) -> Result<usize> {
        match self.take(key) {
            Some(v) => v
                .parse()
                .ok()
                .filter(|&n: &usize| n > 0 || key == "pad")
                .ok_or_else(|| self.err(format!("bad `{key}={v}`"))),
            None => default.ok_or_else(|| self.err(format!("missing `{key}=`"))),
        }
    }

    fn act(&mut self) -> Result<Activation> {
        match self.take("act") {
            None => Ok(Activation::Identity),
            Some(v) => parse_activation(v).map_err(|d| self.err(d)),
        }
    }

    fn finish(self) -> Result<()> {
        match self.map.keys().next() {
            Some(k) => Err(self.err(format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }
}

/// Leaky slopes must be `2^-s` with `s >= 1`.
pub fn leaky_from_slope(slope: f64) -> std::result::Result<Activation, String> {
    if slope > 0.0 && slope < 1.0 {
        let s = -slope.log2();
        if s.fract() == 0.0 && 2f64.powi(-(s as i32)) == slope {
            return Ok(Activation::Leaky { shift: s as u32 });
        }
    }
    Err(format!("leaky slope {slope} is not a power of two in (0, 1)"))
}

fn parse_activation(v: &str) -> std::result::Result<Activation, String> {
    match v {
        "none" | "identity" => Ok(Activation::Identity),
        "relu" => Ok(Activation::Relu),
        _ => match v.strip_prefix("leaky:") {
            Some(s) => leaky_from_slope(s.parse().map_err(|_| format!("bad slope `{s}`"))?),
            None => Err(format!("unknown activation `{v}`")),
        },
    }
}

fn sources(f: &mut Fields<'_>) -> Result<Vec<String>> {
    Ok(f.req("src")?.split(',').map(str::to_string).collect())
}

fn parse_kernel(v: &str) -> Option<(usize, usize)> {
    let (h, w) = match v.split_once('x') {
        Some((h, w)) => (h.parse().ok()?, w.parse().ok()?),
        None => {
            let k = v.parse().ok()?;
            (k, k)
        }
    };
    (h > 0 && w > 0).then_some((h, w))
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut input = None;
        let mut entries = Vec::new();
        let mut tensors: Vec<(String, usize)> = Vec::new();
        let mut prev = INPUT_ID.to_string();
        let mut index = 0;
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let words: Vec<&str> = body.split_whitespace().collect();
            let mut f = Fields::parse(line, &words[1..])?;
            if words[0] == "input" {
                if input.is_some() || !entries.is_empty() {
                    return Err(f.err("`input` must be the first and only header"));
                }
                let c = f.usize_or("c", None)?;
                let h = f.usize_or("h", None)?;
                let w = f.usize_or("w", None)?;
                f.finish()?;
                input = Some(Shape::new(c, h, w));
                continue;
            }
            if input.is_none() {
                return Err(f.err("first line must be `input c= h= w=`"));
            }
            let id = f
                .take("id")
                .map(str::to_string)
                .unwrap_or_else(|| format!("L{index}"));
            if id == INPUT_ID {
                return Err(f.err("`input` is reserved"));
            }
            index += 1;
            let (kind, inputs) = match words[0] {
                "conv" | "fc" => {
                    let ic = f.usize_or("ic", None)?;
                    let oc = f.usize_or("oc", None)?;
                    let (kh, kw, stride, pad) = if words[0] == "conv" {
                        let k = f.req("k")?;
                        let (kh, kw) = parse_kernel(k).ok_or_else(|| f.err(format!("bad `k={k}`")))?;
                        (kh, kw, f.usize_or("stride", Some(1))?, f.usize_or("pad", Some(0))?)
                    } else {
                        (1, 1, 1, 0)
                    };
                    let spec = ConvSpec {
                        ic,
                        oc,
                        kh,
                        kw,
                        stride,
                        pad,
                        act: f.act()?,
                        weights: f.req("w")?.to_string(),
                        bias: f.take("b").map(str::to_string),
                    };
                    let kind = if words[0] == "conv" {
                        LayerKind::Conv(spec)
                    } else {
                        LayerKind::Fc(spec)
                    };
                    (kind, vec![prev.clone()])
                }
                "bn" => {
                    let eps = match f.take("eps") {
                        Some(v) => v.parse().map_err(|_| f.err(format!("bad `eps={v}`")))?,
                        None => 1e-5,
                    };
                    let spec = BnSpec {
                        eps,
                        gamma: f.req("gamma")?.to_string(),
                        beta: f.req("beta")?.to_string(),
                        mean: f.req("mean")?.to_string(),
                        var: f.req("var")?.to_string(),
                        act: f.act()?,
                    };
                    f.finish()?;
                    entries.push(Entry::Bn { line, id: id.clone(), spec });
                    prev = id;
                    continue;
                }
                "maxpool" | "avgpool" => {
                    let k = f.usize_or("k", None)?;
                    let stride = f.usize_or("stride", Some(k))?;
                    let kind = if words[0] == "maxpool" {
                        PoolKind::Max
                    } else {
                        PoolKind::Avg
                    };
                    (LayerKind::Pool { kind, k, stride }, vec![prev.clone()])
                }
                "act" => {
                    let act = match f.req("fn")? {
                        "relu" => Activation::Relu,
                        "leaky" => {
                            let s = f.req("slope")?;
                            let slope = s.parse().map_err(|_| f.err(format!("bad `slope={s}`")))?;
                            leaky_from_slope(slope).map_err(|d| f.err(d))?
                        }
                        other => return Err(f.err(format!("unknown fn `{other}`"))),
                    };
                    (LayerKind::Act(act), vec![prev.clone()])
                }
                "add" => {
                    let srcs = sources(&mut f)?;
                    (LayerKind::Add { act: f.act()? }, srcs)
                }
                "concat" => (LayerKind::Concat, sources(&mut f)?),
                other => return Err(f.err(format!("unknown layer type `{other}`"))),
            };
            f.finish()?;
            entries.push(Entry::Layer {
                line,
                id: id.clone(),
                kind,
                inputs,
            });
            prev = id;
        }
        let input = input.ok_or_else(|| Error::Manifest {
            line: 0,
            detail: "no `input` line".into(),
        })?;

        // tensor sizes need channel counts, so walk the layers once more
        let mut channels: HashMap<String, usize> = HashMap::new();
        channels.insert(INPUT_ID.into(), input.c);
        let mut last_c = input.c;
        let mut add_tensor = |line: usize, id: &str, len: usize| -> Result<()> {
            if let Some((_, l)) = tensors.iter().find(|(t, _)| t == id) {
                if *l != len {
                    return Err(Error::Manifest {
                        line,
                        detail: format!("tensor `{id}` reused with a different size"),
                    });
                }
                return Ok(());
            }
            tensors.push((id.to_string(), len));
            Ok(())
        };
        for e in &entries {
            match e {
                Entry::Layer { line, id, kind, inputs } => {
                    if let Some(c) = kind.conv_spec() {
                        add_tensor(*line, &c.weights, c.weight_len())?;
                        if let Some(b) = &c.bias {
                            add_tensor(*line, b, c.oc)?;
                        }
                    }
                    let c = match kind {
                        LayerKind::Conv(c) | LayerKind::Fc(c) => c.oc,
                        LayerKind::Concat => inputs
                            .iter()
                            .map(|s| channels.get(s).copied().unwrap_or(0))
                            .sum(),
                        _ => inputs
                            .first()
                            .and_then(|s| channels.get(s).copied())
                            .unwrap_or(last_c),
                    };
                    channels.insert(id.clone(), c);
                    last_c = c;
                }
                Entry::Bn { line, id, spec } => {
                    for t in [&spec.gamma, &spec.beta, &spec.mean, &spec.var] {
                        add_tensor(*line, t, last_c)?;
                    }
                    channels.insert(id.clone(), last_c);
                }
            }
        }
        Ok(Manifest {
            input,
            entries,
            tensors,
        })
    }

    /// Tensor ids and element counts in blob order.
    pub fn tensors(&self) -> &[(String, usize)] {
        &self.tensors
    }

    pub fn blob_len(&self) -> usize {
        self.tensors.iter().map(|(_, n)| n).sum()
    }

    /// Attaches weights and folds normalization layers.
    pub fn bind(&self, blob: &[f32]) -> Result<Model> {
        if blob.len() != self.blob_len() {
            return Err(Error::Weights(format!(
                "manifest needs {} floats, blob has {}",
                self.blob_len(),
                blob.len()
            )));
        }
        let mut params: BTreeMap<String, Vec<f32>> = BTreeMap::new();
        let mut off = 0;
        for (id, n) in &self.tensors {
            params.insert(id.clone(), blob[off..off + n].to_vec());
            off += n;
        }
        if let Some((id, v)) = params
            .iter()
            .find_map(|(id, v)| v.iter().find(|x| !x.is_finite()).map(|x| (id, *x)))
        {
            return Err(Error::Weights(format!("tensor `{id}` holds non-finite {v}")));
        }

        let (graph, bn_tensors) =
            self.fold(|conv, bn, layer| fold_bn(conv, bn, layer, &mut params))?;
        for t in bn_tensors {
            params.remove(&t);
        }
        Ok(Model { graph, params })
    }

    /// The layer graph alone, for shape and cost analysis without weights.
    pub fn graph(&self) -> Result<NetworkGraph> {
        let (graph, _) = self.fold(|conv, _, layer| {
            conv.bias.get_or_insert_with(|| folded_bias_id(layer));
            Ok(())
        })?;
        Ok(graph)
    }

    fn fold(
        &self,
        mut fold: impl FnMut(&mut ConvSpec, &BnSpec, &str) -> std::result::Result<(), String>,
    ) -> Result<(NetworkGraph, Vec<String>)> {
        let mut layers: Vec<(String, LayerKind, Vec<String>)> = Vec::new();
        // bn id -> the layer it was folded into
        let mut alias: HashMap<String, String> = HashMap::new();
        let mut folded: Vec<String> = Vec::new();
        let mut bn_tensors: Vec<String> = Vec::new();
        let resolve = |alias: &HashMap<String, String>, folded: &[String], s: &str, line: usize| {
            if folded.iter().any(|f| f == s) && !alias.contains_key(s) {
                return Err(Error::Unsupported {
                    layer: s.to_string(),
                    detail: format!(
                        "line {line} reads the pre-normalization output of a folded layer"
                    ),
                });
            }
            Ok(alias.get(s).cloned().unwrap_or_else(|| s.to_string()))
        };
        for e in &self.entries {
            match e {
                Entry::Layer { line, id, kind, inputs } => {
                    let inputs = inputs
                        .iter()
                        .map(|s| resolve(&alias, &folded, s, *line))
                        .collect::<Result<Vec<_>>>()?;
                    layers.push((id.clone(), kind.clone(), inputs));
                }
                Entry::Bn { line, id, spec } => {
                    let unfoldable = |detail: &str| Error::Unsupported {
                        layer: id.clone(),
                        detail: format!("line {line}: {detail}"),
                    };
                    let Some((target, kind, _)) = layers.last_mut() else {
                        return Err(unfoldable("normalization needs a preceding conv or fc"));
                    };
                    if folded.contains(target) {
                        return Err(unfoldable("only one normalization can be folded per layer"));
                    }
                    let conv = match kind {
                        LayerKind::Conv(c) | LayerKind::Fc(c) => c,
                        _ => return Err(unfoldable("normalization needs a preceding conv or fc")),
                    };
                    if conv.act != Activation::Identity {
                        return Err(unfoldable("preceding layer applies an activation before normalization"));
                    }
                    fold(conv, spec, target).map_err(|d| unfoldable(&d))?;
                    conv.act = spec.act;
                    alias.insert(id.clone(), target.clone());
                    folded.push(target.clone());
                    bn_tensors.extend([&spec.gamma, &spec.beta, &spec.mean, &spec.var].map(|s| s.clone()));
                }
            }
        }
        Ok((NetworkGraph::new(self.input, layers)?, bn_tensors))
    }
}

fn folded_bias_id(layer: &str) -> String {
    format!("{layer}.folded_bias")
}

fn fold_bn(
    conv: &mut ConvSpec,
    bn: &BnSpec,
    layer: &str,
    params: &mut BTreeMap<String, Vec<f32>>,
) -> std::result::Result<(), String> {
    let get = |t: &String| params[t].clone();
    let (gamma, beta, mean, var) = (get(&bn.gamma), get(&bn.beta), get(&bn.mean), get(&bn.var));
    let oc = conv.oc;
    if gamma.len() != oc {
        return Err(format!("normalization has {} channels, layer has {oc}", gamma.len()));
    }
    let scale: Vec<f64> = (0..oc)
        .map(|i| {
            let d = var[i] as f64 + bn.eps;
            if d > 0.0 {
                Ok(gamma[i] as f64 / d.sqrt())
            } else {
                Err(format!("non-positive variance in channel {i}"))
            }
        })
        .collect::<std::result::Result<_, _>>()?;
    let bias = match &conv.bias {
        Some(b) => params[b].clone(),
        None => vec![0.0; oc],
    };
    let new_bias: Vec<f32> = (0..oc)
        .map(|i| ((bias[i] as f64 - mean[i] as f64) * scale[i] + beta[i] as f64) as f32)
        .collect();
    let per_oc = conv.weight_len() / oc;
    let w = params.get_mut(&conv.weights).ok_or("missing weights")?;
    for (i, chunk) in w.chunks_mut(per_oc).enumerate() {
        for x in chunk {
            *x = (*x as f64 * scale[i]) as f32;
        }
    }
    let bias_id = conv.bias.clone().unwrap_or_else(|| folded_bias_id(layer));
    params.insert(bias_id.clone(), new_bias);
    conv.bias = Some(bias_id);
    Ok(())
}
