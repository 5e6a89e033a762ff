//! Channel-level circuit readout.
//!
//! Nodes are the top-k channels of each tapped conv layer ranked by
//! activation energy, the top-k features of `h` ranked by their contribution
//! to the predicted logit, and the predicted class itself. Layer indices are
//! the zero-based conv block for conv nodes, `n_convs` for `h`, and
//! `n_convs + 1` for the logits.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{ModelBundle, ModelError};
use crate::tensor::{softmax_rows, Scalar, Tape, Tensor, TensorError};

pub const DEFAULT_K: usize = 8;

#[derive(Debug, Error)]
pub enum CircuitError {
    #[error("k must be >= 1")]
    InvalidK,
    #[error("expected a rank-4 [1, C, H, W] tensor, got shape {0:?}")]
    Rank(Vec<usize>),
    #[error("unknown graph format {0:?} (expected json or dot)")]
    UnknownFormat(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CircuitError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Forward,
    Gradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitNode {
    pub layer: usize,
    pub channel: usize,
    pub energy: f64,
    pub grad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitEdge {
    pub src: [usize; 2],
    pub dst: [usize; 2],
    pub weight: f64,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub input_id: String,
    pub class: usize,
    pub confidence: f64,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitGraph {
    pub meta: GraphMeta,
    pub nodes: Vec<CircuitNode>,
    pub edges: Vec<CircuitEdge>,
}

impl CircuitGraph {
    pub fn empty(meta: GraphMeta) -> Self {
        Self { meta, nodes: Vec::new(), edges: Vec::new() }
    }

    pub fn node(&self, layer: usize, channel: usize) -> Option<&CircuitNode> {
        self.nodes.iter().find(|n| n.layer == layer && n.channel == channel)
    }

    pub fn nodes_in_layer(&self, layer: usize) -> impl Iterator<Item = &CircuitNode> {
        self.nodes.iter().filter(move |n| n.layer == layer)
    }

    pub fn edge(&self, src: [usize; 2], dst: [usize; 2], kind: EdgeKind) -> Option<&CircuitEdge> {
        self.edges.iter().find(|e| e.src == src && e.dst == dst && e.kind == kind)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Graphviz rendering: forward edges black, gradient edges red.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph circuit {\n  rankdir=LR;\n  node [shape=circle, fontsize=10];\n");
        let _ = writeln!(
            out,
            "  label=\"{} class {} conf {:.4} k {}\";",
            self.meta.input_id.replace('"', "'"),
            self.meta.class,
            self.meta.confidence,
            self.meta.k
        );
        for n in &self.nodes {
            let _ = writeln!(out, "  n{}_{} [label=\"L{}:{}\\nE={:.3}\"];", n.layer, n.channel, n.layer, n.channel, n.energy);
        }
        for e in &self.edges {
            let color = match e.kind {
                EdgeKind::Forward => "black",
                EdgeKind::Gradient => "red",
            };
            let _ = writeln!(out, "  n{}_{} -> n{}_{} [color={color}, weight={:.6}];", e.src[0], e.src[1], e.dst[0], e.dst[1], e.weight);
        }
        out.push_str("}\n");
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    Json,
    Dot,
}

impl std::str::FromStr for GraphFormat {
    type Err = CircuitError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Self::Json),
            "dot" => Ok(Self::Dot),
            other => Err(CircuitError::UnknownFormat(other.into())),
        }
    }
}

pub fn emit_graph(graph: &CircuitGraph, format: GraphFormat) -> Result<Vec<u8>> {
    Ok(match format {
        GraphFormat::Json => graph.to_json()?.into_bytes(),
        GraphFormat::Dot => graph.to_dot().into_bytes(),
    })
}

/// Per-channel L2 norm over spatial positions.
pub fn channel_energy<T: Scalar>(tap: &Tensor<T>) -> Result<Vec<f64>> {
    let &[n, c, h, w] = tap.shape() else {
        return Err(CircuitError::Rank(tap.shape().to_vec()));
    };
    if n != 1 {
        return Err(CircuitError::Rank(tap.shape().to_vec()));
    }
    Ok(tap.data().chunks(h * w).take(c).map(|ch| ch.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt()).collect())
}

/// Per-channel L2 norm of a gradient map.
pub fn channel_grad_score<T: Scalar>(grad_tap: &Tensor<T>) -> Result<Vec<f64>> {
    channel_energy(grad_tap)
}

/// Indices of the `k` largest scores in descending order; ties go to the
/// lower index.
pub fn select_topk(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k < 1 {
        return Err(CircuitError::InvalidK);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

pub fn edge_weight_forward<T: Scalar>(kernel_slice: &[T], e_s: f64) -> f64 {
    l1(kernel_slice) * e_s
}

pub fn edge_weight_gradient<T: Scalar>(kernel_slice: &[T], g_d: f64) -> f64 {
    l1(kernel_slice) * g_d
}

pub fn fc_edge_weight(w_fc_entry: f64, h_j: f64) -> f64 {
    w_fc_entry.abs() * h_j.abs()
}

fn l1<T: Scalar>(v: &[T]) -> f64 {
    v.iter().map(|x| x.as_f64().abs()).sum()
}

/// Runs `e` through the frozen classifier, backpropagates the predicted
/// logit, and assembles the circuit graph.
pub fn build_circuit<T: Scalar>(bundle: &ModelBundle<T>, e: &Tensor<T>, k: usize, input_id: &str) -> Result<CircuitGraph> {
    if k < 1 {
        return Err(CircuitError::InvalidK);
    }
    let classifier = bundle.classifier();
    let n_convs = classifier.convs().len();

    let mut tape = Tape::new();
    let bound = bundle.bind(&mut tape);
    // The input is the only parameter, so every downstream value gets a gradient.
    let ev = tape.param(e.clone());
    let out = bundle.trace(&mut tape, &bound, ev)?;
    let logits = tape.value(out.logits).clone();
    let y = logits.argmax();
    let confidence = softmax_rows(&logits).data()[y].as_f64();
    let logit_y = tape.pick(out.logits, &[y])?;
    tape.backward(logit_y)?;

    let mut graph = CircuitGraph::empty(GraphMeta { input_id: input_id.to_string(), class: y, confidence, k });

    // Conv taps in block order, deduplicated.
    let conv_layers: BTreeSet<usize> = bundle.taps().iter().filter_map(|t| t.conv_index()).collect();
    // (layer, kept channels, energies, grad scores)
    #[allow(clippy::type_complexity)]
    let mut retained: Vec<(usize, Vec<usize>, Vec<f64>, Vec<f64>)> = Vec::new();
    for &layer in &conv_layers {
        let var = out.trace.convs[layer];
        let energy = channel_energy(tape.value(var))?;
        let grad = match tape.grad_tensor(var) {
            Some(g) => channel_grad_score(&g)?,
            None => vec![0.0; energy.len()],
        };
        let keep = select_topk(&energy, k)?;
        for &c in &keep {
            graph.nodes.push(CircuitNode { layer, channel: c, energy: energy[c], grad: grad[c] });
        }
        retained.push((layer, keep, energy, grad));
    }

    for pair in retained.windows(2) {
        let (src_layer, src_keep, src_energy, _) = &pair[0];
        let (dst_layer, dst_keep, _, dst_grad) = &pair[1];
        if dst_layer - src_layer != 1 {
            continue;
        }
        let conv = &classifier.convs()[*dst_layer];
        for &d in dst_keep {
            for &s in src_keep {
                let slice = conv.kernel_slice(d, s);
                let (src, dst) = ([*src_layer, s], [*dst_layer, d]);
                graph.edges.push(CircuitEdge { src, dst, weight: edge_weight_forward(slice, src_energy[s]), kind: EdgeKind::Forward });
                graph.edges.push(CircuitEdge { src, dst, weight: edge_weight_gradient(slice, dst_grad[d]), kind: EdgeKind::Gradient });
            }
        }
    }

    // Feature-to-class stage.
    let h = tape.value(out.h);
    let fc = classifier.fc_weight();
    let f = classifier.feature_dim();
    let w_row = &fc.data()[y * f..(y + 1) * f];
    let contrib: Vec<f64> = w_row.iter().zip(h.data()).map(|(w, hj)| fc_edge_weight(w.as_f64(), hj.as_f64())).collect();
    let h_grad = tape.grad(out.h).map(|g| g.to_vec()).unwrap_or_else(|| vec![T::zero(); f]);
    let (h_layer, y_layer) = (n_convs, n_convs + 1);
    for j in select_topk(&contrib, k)? {
        let g = h_grad[j].as_f64().abs();
        graph.nodes.push(CircuitNode { layer: h_layer, channel: j, energy: h.data()[j].as_f64().abs(), grad: g });
        let (src, dst) = ([h_layer, j], [y_layer, y]);
        graph.edges.push(CircuitEdge { src, dst, weight: contrib[j], kind: EdgeKind::Forward });
        // |W_yj| * |d logit_y / d h_j| = W_yj^2 for a linear head.
        graph.edges.push(CircuitEdge { src, dst, weight: w_row[j].as_f64().abs() * g, kind: EdgeKind::Gradient });
    }
    graph.nodes.push(CircuitNode { layer: y_layer, channel: y, energy: logits.data()[y].as_f64().max(0.0), grad: 1.0 });
    Ok(graph)
}

/// Mean energy of the channels left out of the graph, per conv layer.
pub fn mean_dropped_energy<T: Scalar>(bundle: &ModelBundle<T>, input: &Tensor<T>, graph: &CircuitGraph) -> Result<Vec<f64>> {
    let out = bundle.forward_with_taps(input)?;
    let mut means = Vec::new();
    for (tap, desc) in out.taps.iter().zip(bundle.taps()) {
        let Some(layer) = desc.conv_index() else { continue };
        let energy = channel_energy(tap)?;
        let dropped: Vec<f64> = energy.iter().enumerate().filter(|(c, _)| graph.node(layer, *c).is_none()).map(|(_, &v)| v).collect();
        means.push(if dropped.is_empty() { 0.0 } else { dropped.iter().sum::<f64>() / dropped.len() as f64 });
    }
    Ok(means)
}
