//! Word-level heterogeneous evidence graphs.
//!
//! Nodes are the words of all evidence of one instance, in evidence order
//! then position order; claim words are not nodes. Three relations connect
//! them: windowed neighbours inside a sentence (`r_s`), windowed
//! neighbours inside a linearized cell (`r_t`), and occurrences of the same
//! non-stopword in different evidence (`r_e`). A pair `(i, j)` in a
//! relation means `j` is a neighbour of `i`; every list is symmetric and
//! free of self-pairs.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::{EvidenceKind, TrainingInstance};
use crate::linearizer::{self, LinearizeError, WordToken};

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("no evidence of claim {0:?} yields any token")]
    EmptyGraph(String),
    #[error("window must be at least 1")]
    ZeroWindow,
    #[error(transparent)]
    Linearize(#[from] LinearizeError),
    #[error("malformed graph json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelId {
    #[serde(rename = "r_s")]
    IntraSentence,
    #[serde(rename = "r_t")]
    IntraTable,
    #[serde(rename = "r_e")]
    InterEvidence,
    /// The single relation of a homogenized graph.
    #[serde(rename = "r_h")]
    Homogeneous,
}

impl RelId {
    pub const HETEROGENEOUS: [RelId; 3] = [RelId::IntraSentence, RelId::IntraTable, RelId::InterEvidence];

    pub fn as_str(self) -> &'static str {
        match self {
            RelId::IntraSentence => "r_s",
            RelId::IntraTable => "r_t",
            RelId::InterEvidence => "r_e",
            RelId::Homogeneous => "r_h",
        }
    }

    fn color(self) -> &'static str {
        match self {
            RelId::IntraSentence => "blue",
            RelId::IntraTable => "darkgreen",
            RelId::InterEvidence => "red",
            RelId::Homogeneous => "black",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    #[default]
    Word,
    /// Subword nodes; only meaningful with a contextual embedding file.
    Token,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopWords(HashSet<String>);

impl StopWords {
    const ENGLISH_V1: &'static str = include_str!("../data/stopwords_en_v1.txt");

    /// One norm per line; `#` starts a comment.
    pub fn parse(text: &str) -> Self {
        Self(
            text.lines()
                .map(|l| l.split('#').next().unwrap_or("").trim())
                .filter(|l| !l.is_empty())
                .map(linearizer::norm)
                .filter(|n| !n.is_empty())
                .collect(),
        )
    }

    pub fn english() -> Self {
        Self::parse(Self::ENGLISH_V1)
    }

    pub fn none() -> Self {
        Self(HashSet::new())
    }

    pub fn from_words<I: IntoIterator<Item = S>, S: AsRef<str>>(words: I) -> Self {
        Self(words.into_iter().map(|w| linearizer::norm(w.as_ref())).collect())
    }

    pub fn contains(&self, norm: &str) -> bool {
        self.0.contains(norm)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphConfig {
    /// Window radius: positions `i`, `j` are linked when `|i − j| ≤ window`.
    pub window: usize,
    pub stopwords: StopWords,
    pub heterogeneous: bool,
    /// Link every pair of nodes: all pairs inside a span under its intra
    /// relation and all cross-span pairs under `r_e`.
    pub fully_connected: bool,
    /// Emit `r_e` edges at all.
    pub inter_evidence: bool,
    pub granularity: Granularity,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            window: 2,
            stopwords: StopWords::english(),
            heterogeneous: true,
            fully_connected: false,
            inter_evidence: true,
            granularity: Granularity::Word,
        }
    }
}

impl GraphConfig {
    pub fn relations(&self) -> Vec<RelId> {
        if self.heterogeneous {
            RelId::HETEROGENEOUS.to_vec()
        } else {
            vec![RelId::Homogeneous]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub surface: String,
    pub norm: String,
    /// Index of the owning span.
    pub evidence: usize,
    pub position: usize,
    /// Index of the token in the unfiltered source sequence (subword index
    /// for token-granularity graphs, word position otherwise).
    pub source_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub kind: EvidenceKind,
    /// Index into the instance's evidence list.
    pub evidence_index: usize,
}

impl Span {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeList {
    pub relation: RelId,
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceGraph {
    pub num_nodes: usize,
    pub nodes: Vec<GraphNode>,
    pub spans: Vec<Span>,
    pub edges: Vec<EdgeList>,
}

/// One evidence as seen by graph construction.
#[derive(Debug, Clone)]
pub struct EvidenceSequence {
    pub kind: EvidenceKind,
    pub evidence_index: usize,
    pub tokens: Vec<WordToken>,
    /// Source index per token; defaults to `token.position`.
    pub source_index: Option<Vec<usize>>,
}

/// Local directed pairs `(i, j)`, `i ≠ j`, within radius `w` (or all pairs
/// when `fully_connected`), sorted.
pub fn intra_edges(span_len: usize, w: usize, fully_connected: bool) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..span_len {
        let (lo, hi) = if fully_connected {
            (0, span_len)
        } else {
            (i.saturating_sub(w), (i + w + 1).min(span_len))
        };
        out.extend((lo..hi).filter(|&j| j != i).map(|j| (i, j)));
    }
    out
}

/// Cross-evidence pairs of tokens sharing a non-empty, non-stopword norm.
/// Indices are global: span `s` starts after all tokens of spans `< s`.
pub fn inter_edges(spans: &[Vec<WordToken>], stopwords: &StopWords) -> Vec<(usize, usize)> {
    let mut by_norm: BTreeMap<&str, Vec<(usize, usize)>> = BTreeMap::new();
    let mut offset = 0;
    for (s, toks) in spans.iter().enumerate() {
        for (k, t) in toks.iter().enumerate() {
            if !t.norm.is_empty() && !stopwords.contains(&t.norm) {
                by_norm.entry(t.norm.as_str()).or_default().push((offset + k, s));
            }
        }
        offset += toks.len();
    }
    let mut out = Vec::new();
    for occ in by_norm.values() {
        for &(a, sa) in occ {
            for &(b, sb) in occ {
                if sa != sb {
                    out.push((a, b));
                }
            }
        }
    }
    out.sort_unstable();
    out
}

fn all_cross_pairs(spans: &[Range<usize>]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (sa, a) in spans.iter().enumerate() {
        for (sb, b) in spans.iter().enumerate() {
            if sa != sb {
                for i in a.clone() {
                    out.extend(b.clone().map(|j| (i, j)));
                }
            }
        }
    }
    out.sort_unstable();
    out
}

/// Builds the word-level graph of `instance`. Evidence that tokenizes to
/// nothing is dropped; see [`Span::evidence_index`] for the mapping back.
pub fn build_graph(instance: &TrainingInstance, cfg: &GraphConfig) -> Result<EvidenceGraph, GraphError> {
    let mut seqs = Vec::with_capacity(instance.evidence.len());
    for (i, item) in instance.evidence.iter().enumerate() {
        seqs.push(EvidenceSequence {
            kind: item.kind(),
            evidence_index: i,
            tokens: linearizer::evidence_words(item)?,
            source_index: None,
        });
    }
    build_from_sequences(&instance.claim_id, seqs, cfg)
}

pub fn build_from_sequences(
    claim_id: &str,
    seqs: Vec<EvidenceSequence>,
    cfg: &GraphConfig,
) -> Result<EvidenceGraph, GraphError> {
    if cfg.window == 0 {
        return Err(GraphError::ZeroWindow);
    }
    let mut kept: Vec<EvidenceSequence> = Vec::with_capacity(seqs.len());
    for s in seqs {
        if s.tokens.is_empty() {
            log::warn!("claim {claim_id}: evidence {} has no tokens, dropped", s.evidence_index);
        } else {
            kept.push(s);
        }
    }
    if kept.is_empty() {
        return Err(GraphError::EmptyGraph(claim_id.to_string()));
    }

    let mut nodes = Vec::new();
    let mut spans = Vec::with_capacity(kept.len());
    for (s, seq) in kept.iter().enumerate() {
        let start = nodes.len();
        for (k, t) in seq.tokens.iter().enumerate() {
            nodes.push(GraphNode {
                surface: t.surface.clone(),
                norm: t.norm.clone(),
                evidence: s,
                position: k,
                source_index: seq.source_index.as_ref().map_or(t.position, |v| v[k]),
            });
        }
        spans.push(Span {
            start,
            end: nodes.len(),
            kind: seq.kind,
            evidence_index: seq.evidence_index,
        });
    }

    let mut sentence = Vec::new();
    let mut table = Vec::new();
    for span in &spans {
        let local = intra_edges(span.len(), cfg.window, cfg.fully_connected);
        let dst = match span.kind {
            EvidenceKind::Sentence => &mut sentence,
            EvidenceKind::Cell => &mut table,
        };
        dst.extend(local.into_iter().map(|(i, j)| (span.start + i, span.start + j)));
    }
    let inter = if !cfg.inter_evidence {
        Vec::new()
    } else if cfg.fully_connected {
        all_cross_pairs(&spans.iter().map(Span::range).collect::<Vec<_>>())
    } else {
        let toks: Vec<Vec<WordToken>> = kept.into_iter().map(|s| s.tokens).collect();
        inter_edges(&toks, &cfg.stopwords)
    };

    let edges = if cfg.heterogeneous {
        vec![
            EdgeList {
                relation: RelId::IntraSentence,
                pairs: sentence,
            },
            EdgeList {
                relation: RelId::IntraTable,
                pairs: table,
            },
            EdgeList {
                relation: RelId::InterEvidence,
                pairs: inter,
            },
        ]
    } else {
        let mut pairs: Vec<(usize, usize)> = sentence.into_iter().chain(table).chain(inter).collect();
        pairs.sort_unstable();
        vec![EdgeList {
            relation: RelId::Homogeneous,
            pairs,
        }]
    };

    Ok(EvidenceGraph {
        num_nodes: nodes.len(),
        nodes,
        spans,
        edges,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Dot,
}

impl ExportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ExportFormat::Json => "json",
            ExportFormat::Dot => "dot",
        }
    }
}

impl EvidenceGraph {
    pub fn edges_of(&self, rel: RelId) -> &[(usize, usize)] {
        self.edges
            .iter()
            .find(|e| e.relation == rel)
            .map_or(&[], |e| e.pairs.as_slice())
    }

    pub fn span_ranges(&self) -> Vec<Range<usize>> {
        self.spans.iter().map(Span::range).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(|e| e.pairs.len()).sum()
    }

    /// Checks the structural invariants; returns the first violation.
    pub fn validate(&self) -> Result<(), String> {
        if self.num_nodes != self.nodes.len() {
            return Err("num_nodes disagrees with node list".into());
        }
        let mut next = 0;
        for (s, span) in self.spans.iter().enumerate() {
            if span.start != next || span.end <= span.start {
                return Err(format!("span {s} does not continue the partition"));
            }
            if self.nodes[span.range()].iter().any(|n| n.evidence != s) {
                return Err(format!("span {s} holds foreign nodes"));
            }
            next = span.end;
        }
        if next != self.num_nodes {
            return Err("spans do not cover all nodes".into());
        }
        for list in &self.edges {
            let set: HashSet<(usize, usize)> = list.pairs.iter().copied().collect();
            for &(u, v) in &list.pairs {
                if u >= self.num_nodes || v >= self.num_nodes {
                    return Err(format!("edge ({u},{v}) out of range"));
                }
                if u == v {
                    return Err(format!("self edge at {u}"));
                }
                if !set.contains(&(v, u)) {
                    return Err(format!("{} edge ({u},{v}) lacks its reverse", list.relation.as_str()));
                }
                let same = self.nodes[u].evidence == self.nodes[v].evidence;
                match list.relation {
                    RelId::IntraSentence | RelId::IntraTable if !same => {
                        return Err(format!("intra edge ({u},{v}) crosses spans"));
                    }
                    RelId::InterEvidence if same => {
                        return Err(format!("inter edge ({u},{v}) stays in one span"));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn export(&self, format: ExportFormat) -> Vec<u8> {
        match format {
            ExportFormat::Json => serde_json::to_vec_pretty(self).expect("graph serialization cannot fail"),
            ExportFormat::Dot => self.to_dot().into_bytes(),
        }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, GraphError> {
        Ok(serde_json::from_slice(bytes)?)
    }

    /// Undirected rendering: one statement per unordered pair and relation.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("graph evidence {\n  node [shape=box];\n");
        for (s, span) in self.spans.iter().enumerate() {
            let _ = writeln!(out, "  subgraph cluster_{s} {{");
            let _ = writeln!(out, "    label=\"evidence {} ({:?})\";", span.evidence_index, span.kind);
            for i in span.range() {
                let label = self.nodes[i].surface.replace('\\', "\\\\").replace('"', "\\\"");
                let _ = writeln!(out, "    n{i} [label=\"{label}\"];");
            }
            out.push_str("  }\n");
        }
        for list in &self.edges {
            for &(u, v) in list.pairs.iter().filter(|(u, v)| u < v) {
                let _ = writeln!(
                    out,
                    "  n{u} -- n{v} [color={}, label=\"{}\"];",
                    list.relation.color(),
                    list.relation.as_str()
                );
            }
        }
        out.push_str("}\n");
        out
    }
}
