//! Forward-perturbation probes of cross-evidence information flow.
//!
//! A node of evidence A that shares its norm with a node of evidence B is
//! perturbed in `H⁰`, and the change of B's readout row is measured with and
//! without the cross-evidence relation. A second probe perturbs a window
//! neighbour of that node which has no cross-evidence edge of its own, so
//! it can only reach B through two hops.

use serde::{Deserialize, Serialize};

use crate::corpus::TrainingInstance;
use crate::embed::{resolve_rows, Provider};
use crate::graph::{EvidenceGraph, GraphConfig};
use crate::model::{evidence_from_nodes, ModelParams, Prepared, Slot};
use crate::tensor::{Real, Tensor};
use crate::Error;

/// Added to every component of the perturbed node row.
const PERTURBATION: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoHopReport {
    pub node: usize,
    pub norm: String,
    /// Change of B's readout row when only the neighbour is perturbed.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    pub claim_id: String,
    pub layers: usize,
    /// Norm linking the two spans, if any pair of spans shares one.
    pub shared_norm: Option<String>,
    /// Perturbed node in span A and its counterpart in span B.
    pub source_node: Option<usize>,
    pub target_node: Option<usize>,
    pub source_span: Option<usize>,
    pub target_span: Option<usize>,
    /// ‖Δe_B‖₂ with cross-evidence edges present.
    pub delta_with_inter_evidence: f64,
    /// ‖Δe_B‖₂ with cross-evidence edges removed.
    pub delta_without_inter_evidence: f64,
    pub two_hop: Option<TwoHopReport>,
}

/// First edge whose endpoints lie in different spans.
fn cross_pair(graph: &EvidenceGraph) -> Option<(usize, usize)> {
    graph
        .edges
        .iter()
        .flat_map(|e| e.pairs.iter().copied())
        .filter(|&(u, v)| graph.nodes[u].evidence != graph.nodes[v].evidence)
        .min()
}

fn neighbours(graph: &EvidenceGraph, node: usize) -> impl Iterator<Item = usize> + '_ {
    graph
        .edges
        .iter()
        .flat_map(|e| e.pairs.iter().copied())
        .filter(move |&(u, _)| u == node)
        .map(|(_, v)| v)
}

/// Intra-span neighbour of `a` with no edge leaving its span.
fn two_hop_source(graph: &EvidenceGraph, a: usize) -> Option<usize> {
    let span = graph.nodes[a].evidence;
    let mut candidates: Vec<usize> = neighbours(graph, a)
        .filter(|&c| graph.nodes[c].evidence == span)
        .filter(|&c| neighbours(graph, c).all(|x| graph.nodes[x].evidence == span))
        .collect();
    candidates.sort_unstable();
    candidates.first().copied()
}

fn row_delta<T: Real>(a: &Tensor<T>, b: &Tensor<T>, row: usize) -> f64 {
    a.row_slice(row)
        .iter()
        .zip(b.row_slice(row))
        .map(|(&x, &y)| {
            let d = (x - y).as_f64();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn perturbed<T: Real>(h0: &Tensor<T>, node: usize) -> Tensor<T> {
    let mut h = h0.clone();
    let cols = h.cols();
    for x in &mut h.data_mut()[node * cols..(node + 1) * cols] {
        *x += T::of(PERTURBATION);
    }
    h
}

fn delta_for<T: Real>(
    params: &ModelParams<T>,
    prepared: &Prepared<T>,
    h0: &Tensor<T>,
    node: usize,
    span: usize,
) -> Result<f64, Error> {
    let base = evidence_from_nodes(params, prepared, h0)?;
    let moved = evidence_from_nodes(params, prepared, &perturbed(h0, node))?;
    Ok(row_delta(&base, &moved, span))
}

/// Measures how a perturbation in one evidence reaches another.
pub fn influence_test<T: Real>(
    params: &ModelParams<T>,
    instance: &TrainingInstance,
    provider: &Provider,
    graph_cfg: &GraphConfig,
) -> Result<InfluenceReport, Error> {
    let on_cfg = GraphConfig {
        inter_evidence: true,
        ..graph_cfg.clone()
    };
    let off_cfg = GraphConfig {
        inter_evidence: false,
        ..graph_cfg.clone()
    };
    let on = Prepared::<T>::new(instance, provider, &on_cfg, &params.config)?;
    let off = Prepared::<T>::new(instance, provider, &off_cfg, &params.config)?;
    let table = params
        .config
        .slots()
        .contains(&Slot::Table)
        .then(|| params.get(Slot::Table));
    let h0 = resolve_rows(&on.features.nodes, table);

    let mut report = InfluenceReport {
        claim_id: instance.claim_id.clone(),
        layers: params.config.layers,
        shared_norm: None,
        source_node: None,
        target_node: None,
        source_span: None,
        target_span: None,
        delta_with_inter_evidence: 0.0,
        delta_without_inter_evidence: 0.0,
        two_hop: None,
    };
    let Some((a, b)) = cross_pair(&on.graph) else {
        return Ok(report);
    };
    let span_b = on.graph.nodes[b].evidence;
    report.shared_norm = Some(on.graph.nodes[a].norm.clone());
    report.source_node = Some(a);
    report.target_node = Some(b);
    report.source_span = Some(on.graph.nodes[a].evidence);
    report.target_span = Some(span_b);
    report.delta_with_inter_evidence = delta_for(params, &on, &h0, a, span_b)?;
    report.delta_without_inter_evidence = delta_for(params, &off, &h0, a, span_b)?;
    if let Some(c) = two_hop_source(&on.graph, a) {
        report.two_hop = Some(TwoHopReport {
            node: c,
            norm: on.graph.nodes[c].norm.clone(),
            delta: delta_for(params, &on, &h0, c, span_b)?,
        });
    }
    Ok(report)
}
