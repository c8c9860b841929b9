//! Relational propagation, evidence readout, claim-guided attention, fused
//! prediction and the multitask loss.
//!
//! Shapes with `N` nodes, `M` evidence spans and dimension `d`:
//!
//! | stage       | output                          |
//! |-------------|---------------------------------|
//! | propagation | `H`: `N × d`                    |
//! | readout     | `E`: `M × 2d` (max ‖ mean)       |
//! | attention   | `g`, `α`: `M × 1`; `o_g`: `1 × 2d` |
//! | fusion      | `p̂`: `1 × 3`                    |

mod params;

pub use params::{Activation, BoundParams, ModelConfig, ModelParams, ParamGroup, Slot};

use crate::corpus::{Label, TrainingInstance};
use crate::embed::{EmbedError, InstanceFeatures, PooledInput, Provider, RowSource};
use crate::graph::{EvidenceGraph, GraphConfig};
use crate::tensor::{Real, Tape, Tensor, TensorError, Var};

type Result<T> = std::result::Result<T, TensorError>;

/// Probability floor inside both log terms of the losses.
pub const LOG_FLOOR: f64 = 1e-12;

/// Neighbour lists of one relation in gather/scatter form.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationIndex<T> {
    /// Receiving node of each pair.
    pub targets: Vec<usize>,
    /// Sending node of each pair.
    pub sources: Vec<usize>,
    /// `1 / |N_i^r|`, or 0 for nodes without neighbours under this relation.
    pub inv_degree: Vec<T>,
}

impl<T: Real> RelationIndex<T> {
    pub fn new(pairs: &[(usize, usize)], num_nodes: usize) -> Self {
        let mut deg = vec![0usize; num_nodes];
        for &(i, _) in pairs {
            deg[i] += 1;
        }
        Self {
            targets: pairs.iter().map(|p| p.0).collect(),
            sources: pairs.iter().map(|p| p.1).collect(),
            inv_degree: deg
                .into_iter()
                .map(|c| if c == 0 { T::zero() } else { T::one() / T::of(c as f64) })
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Relation indices of a graph, in the model's relation order.
pub fn relation_indices<T: Real>(graph: &EvidenceGraph, config: &ModelConfig) -> Vec<RelationIndex<T>> {
    config
        .relations
        .iter()
        .map(|&r| RelationIndex::new(graph.edges_of(r), graph.num_nodes))
        .collect()
}

/// An instance with its graph and features resolved, ready for repeated
/// forward passes.
#[derive(Debug, Clone)]
pub struct Prepared<T> {
    pub claim_id: String,
    pub label: Label,
    pub graph: EvidenceGraph,
    pub relations: Vec<RelationIndex<T>>,
    pub features: InstanceFeatures<T>,
    /// Relevance label per surviving span.
    pub evidence_labels: Vec<u8>,
}

impl<T: Real> Prepared<T> {
    pub fn new(
        instance: &TrainingInstance,
        provider: &Provider,
        graph_cfg: &GraphConfig,
        config: &ModelConfig,
    ) -> std::result::Result<Self, crate::Error> {
        let graph = provider.build_graph(instance, graph_cfg)?;
        Self::with_graph(instance, graph, provider, graph_cfg, config)
    }

    pub fn with_graph(
        instance: &TrainingInstance,
        graph: EvidenceGraph,
        provider: &Provider,
        graph_cfg: &GraphConfig,
        config: &ModelConfig,
    ) -> std::result::Result<Self, crate::Error> {
        let features = provider
            .features(instance, &graph, graph_cfg.granularity)
            .map_err(|e: EmbedError| crate::Error::from(e))?;
        let evidence_labels = graph
            .spans
            .iter()
            .map(|s| instance.evidence_labels[s.evidence_index])
            .collect();
        Ok(Self {
            claim_id: instance.claim_id.clone(),
            label: instance.label,
            relations: relation_indices(&graph, config),
            graph,
            features,
            evidence_labels,
        })
    }

    pub fn num_evidence(&self) -> usize {
        self.graph.spans.len()
    }
}

fn rows_on_tape<'t, T: Real>(
    tape: &'t Tape<T>,
    params: &BoundParams<'t, T>,
    rows: &RowSource<T>,
) -> Result<Var<'t, T>> {
    match rows {
        RowSource::Fixed(t) => Ok(tape.constant(t.clone())),
        RowSource::Table(ids) => params.get(Slot::Table).gather_rows(ids),
    }
}

fn pooled_on_tape<'t, T: Real>(
    tape: &'t Tape<T>,
    params: &BoundParams<'t, T>,
    input: &PooledInput<T>,
    proj: Slot,
) -> Result<Var<'t, T>> {
    match input {
        PooledInput::Frozen(t) => Ok(tape.constant(t.clone())),
        PooledInput::Projected(rows) => {
            let x = rows_on_tape(tape, params, rows)?;
            let whole = 0..x.shape()[0];
            x.segment_mean(std::slice::from_ref(&whole))?.matmul(params.get(proj))
        }
    }
}

/// Initial node matrix `H⁰` on the tape.
pub fn node_input<'t, T: Real>(
    tape: &'t Tape<T>,
    params: &BoundParams<'t, T>,
    prepared: &Prepared<T>,
) -> Result<Var<'t, T>> {
    rows_on_tape(tape, params, &prepared.features.nodes)
}

/// One relational layer:
/// `act( Σ_r (1/|N_i^r|) Σ_{j ∈ N_i^r} h_j W_r + h_i W_0 )`.
pub fn rgcn_layer<'t, T: Real>(
    h: Var<'t, T>,
    relations: &[RelationIndex<T>],
    relation_weights: &[Var<'t, T>],
    self_weight: Var<'t, T>,
    activation: Activation,
) -> Result<Var<'t, T>> {
    let n = h.shape()[0];
    let mut pre = h.matmul(self_weight)?;
    for (rel, &w) in relations.iter().zip(relation_weights) {
        if rel.is_empty() {
            continue;
        }
        let hw = h.matmul(w)?;
        let agg = hw
            .gather_rows(&rel.sources)?
            .scatter_add(&rel.targets, n)?
            .scale_rows(&rel.inv_degree)?;
        pre = pre.add(agg)?;
    }
    Ok(match activation {
        Activation::Sigmoid => pre.sigmoid(),
        Activation::Relu => pre.relu(),
    })
}

/// `layers` stacked relational layers with per-layer weights.
pub fn propagate<'t, T: Real>(
    h0: Var<'t, T>,
    prepared: &Prepared<T>,
    params: &BoundParams<'t, T>,
) -> Result<Var<'t, T>> {
    let cfg = &params.config;
    let mut h = h0;
    for l in 0..cfg.layers {
        let ws: Vec<Var<'t, T>> = (0..cfg.relations.len())
            .map(|r| params.get(Slot::Relation(l, r)))
            .collect();
        h = rgcn_layer(
            h,
            &prepared.relations,
            &ws,
            params.get(Slot::SelfLoop(l)),
            cfg.activation,
        )?;
    }
    Ok(h)
}

/// Per-span column max concatenated with column mean.
pub fn readout<'t, T: Real>(h: Var<'t, T>, spans: &[std::ops::Range<usize>]) -> Result<Var<'t, T>> {
    let max = h.segment_max(spans)?;
    let mean = h.segment_mean(spans)?;
    Var::concat(&[max, mean], 1)
}

pub struct AttentionOut<'t, T: Real> {
    pub scores: Var<'t, T>,
    pub alpha: Var<'t, T>,
    pub pooled: Var<'t, T>,
}

/// Claim-guided attention over evidence rows.
pub fn attention<'t, T: Real>(
    claim: Var<'t, T>,
    evidence: Var<'t, T>,
    params: &BoundParams<'t, T>,
) -> Result<AttentionOut<'t, T>> {
    let m = evidence.shape()[0];
    let joined = Var::concat(&[claim.repeat_rows(m)?, evidence], 1)?;
    let hidden = joined
        .matmul(params.get(Slot::AttnW0))?
        .add(params.get(Slot::AttnB0))?
        .relu();
    let scores = hidden.matmul(params.get(Slot::AttnW1))?.add(params.get(Slot::AttnB1))?;
    let alpha = scores.softmax(0);
    let pooled = alpha.transpose().matmul(evidence)?;
    Ok(AttentionOut { scores, alpha, pooled })
}

/// Class logits of the fusion MLP (before softmax).
pub fn fuse_logits<'t, T: Real>(
    graph_repr: Var<'t, T>,
    text_repr: Var<'t, T>,
    params: &BoundParams<'t, T>,
) -> Result<Var<'t, T>> {
    Var::concat(&[graph_repr, text_repr], 1)?
        .matmul(params.get(Slot::FuseW0))?
        .add(params.get(Slot::FuseB0))?
        .relu()
        .matmul(params.get(Slot::FuseW1))?
        .add(params.get(Slot::FuseB1))
}

pub fn fuse_predict<'t, T: Real>(
    graph_repr: Var<'t, T>,
    text_repr: Var<'t, T>,
    params: &BoundParams<'t, T>,
) -> Result<Var<'t, T>> {
    Ok(fuse_logits(graph_repr, text_repr, params)?.softmax(1))
}

/// Negative log-probability of `label`.
pub fn loss_c<'t, T: Real>(p_hat: Var<'t, T>, label: Label) -> Result<Var<'t, T>> {
    let mut onehot = vec![T::zero(); Label::COUNT];
    onehot[label.index()] = T::one();
    let y = p_hat.tape().constant(Tensor::row(onehot));
    Ok(y.mul(p_hat.log_clamped(T::of(LOG_FLOOR)))?.sum_all().neg())
}

/// Mean binary cross-entropy of `sigmoid(scores)` against relevance labels.
pub fn loss_e<'t, T: Real>(scores: Var<'t, T>, labels: &[u8]) -> Result<Var<'t, T>> {
    let tape = scores.tape();
    let m = labels.len();
    let t: Vec<T> = labels.iter().map(|&l| T::of(f64::from(l))).collect();
    let not_t: Vec<T> = t.iter().map(|&v| T::one() - v).collect();
    let t = tape.constant(Tensor::new(m, 1, t)?);
    let not_t = tape.constant(Tensor::new(m, 1, not_t)?);
    let s = scores.sigmoid();
    let floor = T::of(LOG_FLOOR);
    let pos = t.mul(s.log_clamped(floor))?;
    let neg = not_t.mul(s.affine(-T::one(), T::one()).log_clamped(floor))?;
    Ok(pos.add(neg)?.mean_all().neg())
}

pub fn total_loss<'t, T: Real>(loss_c: Var<'t, T>, loss_e: Var<'t, T>, beta: T) -> Result<Var<'t, T>> {
    if beta == T::zero() {
        return Ok(loss_c);
    }
    loss_c.add(loss_e.scale(beta))
}

/// Handles of one forward pass on a tape.
pub struct TapeForward<'t, T: Real> {
    pub node_input: Var<'t, T>,
    pub evidence: Var<'t, T>,
    pub claim: Var<'t, T>,
    pub text: Var<'t, T>,
    pub attention: AttentionOut<'t, T>,
    pub p_hat: Var<'t, T>,
    pub loss_c: Var<'t, T>,
    pub loss_e: Var<'t, T>,
    pub total: Var<'t, T>,
}

/// Full pass from `h0` (usually [`node_input`]) to the total loss.
pub fn forward_from<'t, T: Real>(
    tape: &'t Tape<T>,
    params: &BoundParams<'t, T>,
    prepared: &Prepared<T>,
    h0: Var<'t, T>,
    beta: T,
) -> Result<TapeForward<'t, T>> {
    let h = propagate(h0, prepared, params)?;
    let evidence = readout(h, &prepared.graph.span_ranges())?;
    let claim = pooled_on_tape(tape, params, &prepared.features.claim, Slot::ClaimProj)?;
    let text = pooled_on_tape(tape, params, &prepared.features.sequence, Slot::SeqProj)?;
    let att = attention(claim, evidence, params)?;
    let p_hat = fuse_predict(att.pooled, text, params)?;
    let lc = loss_c(p_hat, prepared.label)?;
    let le = loss_e(att.scores, &prepared.evidence_labels)?;
    let total = total_loss(lc, le, beta)?;
    Ok(TapeForward {
        node_input: h0,
        evidence,
        claim,
        text,
        attention: att,
        p_hat,
        loss_c: lc,
        loss_e: le,
        total,
    })
}

pub fn forward_on_tape<'t, T: Real>(
    tape: &'t Tape<T>,
    params: &BoundParams<'t, T>,
    prepared: &Prepared<T>,
    beta: T,
) -> Result<TapeForward<'t, T>> {
    let h0 = node_input(tape, params, prepared)?;
    forward_from(tape, params, prepared, h0, beta)
}

/// Values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<T> {
    pub p_hat: Vec<T>,
    pub alpha: Vec<T>,
    pub scores: Vec<T>,
    pub graph_repr: Vec<T>,
    pub text_repr: Vec<T>,
    pub evidence: Tensor<T>,
    pub loss_c: T,
    pub loss_e: T,
    pub total: T,
}

impl<T: Real> ForwardOutput<T> {
    pub fn predicted(&self) -> Label {
        let mut best = 0;
        for (i, &p) in self.p_hat.iter().enumerate() {
            if p > self.p_hat[best] {
                best = i;
            }
        }
        Label::from_index(best).expect("three classes")
    }

    pub fn is_finite(&self) -> bool {
        self.p_hat.iter().chain(&self.alpha).all(|v| v.is_finite()) && self.total.is_finite()
    }
}

impl<T: Real> TapeForward<'_, T> {
    pub fn values(&self) -> ForwardOutput<T> {
        ForwardOutput {
            p_hat: self.p_hat.value().into_data(),
            alpha: self.attention.alpha.value().into_data(),
            scores: self.attention.scores.value().into_data(),
            graph_repr: self.attention.pooled.value().into_data(),
            text_repr: self.text.value().into_data(),
            evidence: self.evidence.value(),
            loss_c: self.loss_c.value().item(),
            loss_e: self.loss_e.value().item(),
            total: self.total.value().item(),
        }
    }
}

/// Inference-only forward pass.
pub fn forward<T: Real>(params: &ModelParams<T>, prepared: &Prepared<T>, beta: T) -> Result<ForwardOutput<T>> {
    let tape = Tape::new();
    let bound = params.bind(&tape, false);
    Ok(forward_on_tape(&tape, &bound, prepared, beta)?.values())
}

/// Loss and parameter gradients (slot order) of one instance.
pub fn loss_and_grads<T: Real>(
    params: &ModelParams<T>,
    prepared: &Prepared<T>,
    beta: T,
) -> Result<(ForwardOutput<T>, Vec<Tensor<T>>)> {
    let tape = Tape::new();
    let bound = params.bind(&tape, true);
    let fwd = forward_on_tape(&tape, &bound, prepared, beta)?;
    let out = fwd.values();
    let grads = tape.backward(fwd.total)?;
    let g = bound
        .vars
        .iter()
        .zip(&params.tensors)
        .map(|(v, t)| grads.get_or_zeros(*v, t.shape()))
        .collect();
    Ok((out, g))
}

/// Evidence representations `E` computed from an explicit `H⁰`.
pub fn evidence_from_nodes<T: Real>(
    params: &ModelParams<T>,
    prepared: &Prepared<T>,
    h0: &Tensor<T>,
) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let bound = params.bind(&tape, false);
    let h = propagate(tape.constant(h0.clone()), prepared, &bound)?;
    Ok(readout(h, &prepared.graph.span_ranges())?.value())
}
