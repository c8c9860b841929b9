//! Initial node, claim and sequence representations.
//!
//! Three providers stand in for a contextual encoder:
//!
//! * [`Provider::Hashed`]: fixed pseudo-random vectors per word norm;
//! * [`Provider::Table`]: a trainable vocabulary matrix (initialized from
//!   the hashed vectors), owned by the model parameters;
//! * [`Provider::File`]: frozen vectors from an [`EmbeddingFile`] plus the
//!   [`Manifest`] that aligns subwords to words.
//!
//! With hashed and table vectors the claim vector is the mean of the claim
//! words and the sequence vector the mean over claim and evidence words,
//! each followed by a trainable projection in the model. File vectors are
//! used as stored.

mod file;
mod hashed;
pub mod template;

pub use file::{
    claim_key, sequence_key, token_key, word_key, ClaimAlignment, EmbeddingFile, EvidenceAlignment, Manifest,
    TokenAlignment,
};
pub use hashed::{fnv1a64, hashed_embedding};

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{ClaimRecord, TrainingInstance};
use crate::graph::{self, EvidenceGraph, EvidenceSequence, Granularity, GraphConfig, GraphError};
use crate::linearizer::{self, WordToken};
use crate::tensor::{Real, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("embedding key {0:?} not found")]
    MissingKey(String),
    #[error("no subword alignment for claim {claim_id:?} evidence {evidence_id:?}")]
    MissingAlignment { claim_id: String, evidence_id: String },
    #[error("not an HFCE file")]
    BadMagic,
    #[error("unsupported HFCE version {0}")]
    UnsupportedVersion(u32),
    #[error("embedding file is truncated")]
    Truncated,
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),
    #[error("duplicate embedding key {0:?}")]
    DuplicateKey(String),
    #[error("invalid embedding key: {0}")]
    InvalidKey(String),
    #[error("vector dimension {found} does not match {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("token granularity requires the file provider")]
    TokenGranularityUnsupported,
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Hashed,
    Table,
    File,
}

/// Word norms with a reserved out-of-vocabulary row at index 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub const UNKNOWN: &'static str = "<unk>";

    pub fn new(words: impl IntoIterator<Item = String>) -> Self {
        let set: BTreeSet<String> = words.into_iter().filter(|w| w != Self::UNKNOWN).collect();
        let words: Vec<String> = std::iter::once(Self::UNKNOWN.to_string()).chain(set).collect();
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words, index }
    }

    /// Every norm of claim text and evidence in `records`.
    pub fn from_records(records: &[ClaimRecord]) -> Self {
        let mut words = Vec::new();
        for r in records {
            words.extend(linearizer::tokenize(&r.claim_text).into_iter().map(|t| t.norm));
            for e in r.evidence_universe() {
                if let Ok(toks) = linearizer::evidence_words(e) {
                    words.extend(toks.into_iter().map(|t| t.norm));
                }
            }
        }
        Self::new(words)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 1
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn lookup(&self, norm: &str) -> usize {
        self.index.get(norm).copied().unwrap_or(0)
    }

    /// Rebuilds a vocabulary from its stored word list, order preserved.
    pub fn from_words_exact(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words, index }
    }
}

/// Rows of a feature matrix: either fixed values or indices into the
/// trainable table.
#[derive(Debug, Clone, PartialEq)]
pub enum RowSource<T> {
    Fixed(Tensor<T>),
    Table(Vec<usize>),
}

/// Input of the claim or sequence vector.
#[derive(Debug, Clone, PartialEq)]
pub enum PooledInput<T> {
    /// Used as is (file provider).
    Frozen(Tensor<T>),
    /// Mean of the rows, then the trainable projection.
    Projected(RowSource<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceFeatures<T> {
    pub nodes: RowSource<T>,
    pub claim: PooledInput<T>,
    pub sequence: PooledInput<T>,
}

#[derive(Debug, Clone)]
pub enum Provider {
    Hashed { dim: usize, seed: u64 },
    Table { dim: usize, seed: u64, vocab: Vocab },
    File { store: EmbeddingFile, manifest: Manifest },
}

fn widen<T: Real>(v: &[f32]) -> Vec<T> {
    v.iter().map(|&x| T::of(f64::from(x))).collect()
}

fn hashed_rows<T: Real>(norms: &[&str], dim: usize, seed: u64) -> Tensor<T> {
    if norms.is_empty() {
        return Tensor::zeros(1, dim);
    }
    let data = norms
        .iter()
        .flat_map(|n| hashed_embedding(n, dim, seed))
        .map(T::of)
        .collect();
    Tensor::new(norms.len(), dim, data).expect("row-major layout")
}

impl Provider {
    pub fn dim(&self) -> usize {
        match self {
            Provider::Hashed { dim, .. } | Provider::Table { dim, .. } => *dim,
            Provider::File { store, .. } => store.dim(),
        }
    }

    pub fn kind(&self) -> ProviderKind {
        match self {
            Provider::Hashed { .. } => ProviderKind::Hashed,
            Provider::Table { .. } => ProviderKind::Table,
            Provider::File { .. } => ProviderKind::File,
        }
    }

    pub fn vocab(&self) -> Option<&Vocab> {
        match self {
            Provider::Table { vocab, .. } => Some(vocab),
            _ => None,
        }
    }

    /// Loads a file provider, checking that the manifest and store agree
    /// on dimension.
    pub fn from_file(store: EmbeddingFile, manifest: Manifest) -> Result<Self, EmbedError> {
        if manifest.dim != store.dim() {
            return Err(EmbedError::DimMismatch {
                expected: store.dim(),
                found: manifest.dim,
            });
        }
        Ok(Provider::File { store, manifest })
    }

    /// Initial values of the trainable table, one hashed row per word.
    pub fn table_init<T: Real>(&self) -> Option<Tensor<T>> {
        match self {
            Provider::Table { dim, seed, vocab } => {
                let norms: Vec<&str> = vocab.words().iter().map(String::as_str).collect();
                Some(hashed_rows(&norms, *dim, *seed))
            }
            _ => None,
        }
    }

    /// Per-evidence node sequences for `granularity`.
    pub fn sequences(
        &self,
        instance: &TrainingInstance,
        granularity: Granularity,
    ) -> Result<Vec<EvidenceSequence>, crate::Error> {
        let mut out = Vec::with_capacity(instance.evidence.len());
        for (i, item) in instance.evidence.iter().enumerate() {
            let seq = match granularity {
                Granularity::Word => EvidenceSequence {
                    kind: item.kind(),
                    evidence_index: i,
                    tokens: linearizer::evidence_words(item).map_err(GraphError::from)?,
                    source_index: None,
                },
                Granularity::Token => {
                    let Provider::File { manifest, .. } = self else {
                        return Err(EmbedError::TokenGranularityUnsupported.into());
                    };
                    let align = manifest.evidence(&instance.claim_id, &item.id)?;
                    let mut tokens = Vec::new();
                    let mut source = Vec::new();
                    for (k, t) in align.tokens.iter().enumerate() {
                        let n = linearizer::norm(strip_piece_marker(&t.piece));
                        if n.is_empty() {
                            continue;
                        }
                        tokens.push(WordToken {
                            surface: t.piece.clone(),
                            norm: n,
                            position: tokens.len(),
                        });
                        source.push(k);
                    }
                    EvidenceSequence {
                        kind: item.kind(),
                        evidence_index: i,
                        tokens,
                        source_index: Some(source),
                    }
                }
            };
            out.push(seq);
        }
        Ok(out)
    }

    pub fn build_graph(&self, instance: &TrainingInstance, cfg: &GraphConfig) -> Result<EvidenceGraph, crate::Error> {
        let seqs = self.sequences(instance, cfg.granularity)?;
        Ok(graph::build_from_sequences(&instance.claim_id, seqs, cfg)?)
    }

    pub fn features<T: Real>(
        &self,
        instance: &TrainingInstance,
        graph: &EvidenceGraph,
        granularity: Granularity,
    ) -> Result<InstanceFeatures<T>, EmbedError> {
        let claim_norms: Vec<String> = linearizer::tokenize(&instance.claim_text)
            .into_iter()
            .map(|t| t.norm)
            .collect();
        let node_norms: Vec<&str> = graph.nodes.iter().map(|n| n.norm.as_str()).collect();
        let seq_norms: Vec<&str> = claim_norms
            .iter()
            .map(String::as_str)
            .chain(node_norms.iter().copied())
            .collect();
        let claim_refs: Vec<&str> = claim_norms.iter().map(String::as_str).collect();
        match self {
            Provider::Hashed { dim, seed } => Ok(InstanceFeatures {
                nodes: RowSource::Fixed(hashed_rows(&node_norms, *dim, *seed)),
                claim: PooledInput::Projected(RowSource::Fixed(hashed_rows(&claim_refs, *dim, *seed))),
                sequence: PooledInput::Projected(RowSource::Fixed(hashed_rows(&seq_norms, *dim, *seed))),
            }),
            Provider::Table { dim, vocab, .. } => {
                let ids = |ns: &[&str]| -> RowSource<T> {
                    if ns.is_empty() {
                        RowSource::Fixed(Tensor::zeros(1, *dim))
                    } else {
                        RowSource::Table(ns.iter().map(|n| vocab.lookup(n)).collect())
                    }
                };
                Ok(InstanceFeatures {
                    nodes: ids(&node_norms),
                    claim: PooledInput::Projected(ids(&claim_refs)),
                    sequence: PooledInput::Projected(ids(&seq_norms)),
                })
            }
            Provider::File { store, manifest } => {
                let dim = store.dim();
                let mut data: Vec<T> = Vec::with_capacity(graph.num_nodes * dim);
                for span in &graph.spans {
                    let item = &instance.evidence[span.evidence_index];
                    let align = manifest.evidence(&instance.claim_id, &item.id)?;
                    for node in &graph.nodes[span.range()] {
                        let row = match granularity {
                            Granularity::Token => {
                                widen(store.require(&token_key(&instance.claim_id, align.ev_idx, node.source_index))?)
                            }
                            Granularity::Word => {
                                let mut acc = vec![0.0f64; dim];
                                let mut n = 0usize;
                                for (k, t) in align.tokens.iter().enumerate() {
                                    if t.word == Some(node.source_index) {
                                        let v = store.require(&token_key(&instance.claim_id, align.ev_idx, k))?;
                                        for (a, &x) in acc.iter_mut().zip(v) {
                                            *a += f64::from(x);
                                        }
                                        n += 1;
                                    }
                                }
                                if n == 0 {
                                    return Err(EmbedError::MissingKey(format!(
                                        "c:{}:{}:<word {}>",
                                        instance.claim_id, align.ev_idx, node.source_index
                                    )));
                                }
                                acc.into_iter().map(|a| T::of(a / n as f64)).collect()
                            }
                        };
                        data.extend(row);
                    }
                }
                let nodes = Tensor::new(graph.num_nodes, dim, data).expect("row-major layout");
                let cls = widen(store.require(&claim_key(&instance.claim_id))?);
                let seq = widen(store.require(&sequence_key(&instance.claim_id, instance.source))?);
                Ok(InstanceFeatures {
                    nodes: RowSource::Fixed(nodes),
                    claim: PooledInput::Frozen(Tensor::row(cls)),
                    sequence: PooledInput::Frozen(Tensor::row(seq)),
                })
            }
        }
    }

    /// Initial node matrix `H⁰` as values. `table` is the current
    /// trainable table for the table provider.
    pub fn node_embeddings<T: Real>(
        &self,
        instance: &TrainingInstance,
        graph: &EvidenceGraph,
        granularity: Granularity,
        table: Option<&Tensor<T>>,
    ) -> Result<Tensor<T>, EmbedError> {
        let feats = self.features::<T>(instance, graph, granularity)?;
        Ok(resolve_rows(&feats.nodes, table))
    }
}

/// Materializes a row source against the table values.
pub fn resolve_rows<T: Real>(rows: &RowSource<T>, table: Option<&Tensor<T>>) -> Tensor<T> {
    match rows {
        RowSource::Fixed(t) => t.clone(),
        RowSource::Table(ids) => {
            let table = table.expect("table provider requires the table parameter");
            let data = ids.iter().flat_map(|&i| table.row_slice(i).iter().copied()).collect();
            Tensor::new(ids.len(), table.cols(), data).expect("row-major layout")
        }
    }
}

/// Drops the word-start markers used by byte-level BPE (`Ġ`),
/// SentencePiece (`▁`) and WordPiece continuations (`##`).
pub fn strip_piece_marker(piece: &str) -> &str {
    piece
        .strip_prefix('Ġ')
        .or_else(|| piece.strip_prefix('▁'))
        .or_else(|| piece.strip_prefix("##"))
        .unwrap_or(piece)
}
