//! Fixtures shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use heterfc::corpus::{Cell, EvidenceItem, EvidenceSource, Label, TableKind, TrainingInstance};
use heterfc::model::{rgcn_layer, Activation, RelationIndex};
use heterfc::tensor::{Tape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mix of content words, stopwords, casing variants and punctuated forms.
pub const WORDS: &[&str] = &[
    "Ulm",
    "ulm",
    "Einstein",
    "einstein,",
    "born",
    "Born",
    "the",
    "of",
    "and",
    "in",
    "is",
    "a",
    "city",
    "river",
    "Danube",
    "(Danube)",
    "physicist",
    "museum",
    "Bern",
    "1879",
    "Germany.",
    "was",
    "for",
    "to",
    "ULM",
    "relativity",
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn phrase(rng: &mut ChaCha8Rng, max_words: usize) -> String {
    let n = rng.gen_range(1..=max_words);
    (0..n)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Random instance with 1..=`max_evidence` items (sentences and general or
/// infobox cells) of at most `max_words` words per field.
pub fn random_instance(seed: u64, max_evidence: usize, max_words: usize) -> TrainingInstance {
    let mut r = rng(seed);
    let m = r.gen_range(1..=max_evidence);
    let evidence: Vec<EvidenceItem> = (0..m)
        .map(|i| {
            if r.gen_bool(0.5) {
                EvidenceItem::sentence(format!("s{i}"), phrase(&mut r, max_words))
            } else {
                let infobox = r.gen_bool(0.5);
                EvidenceItem::cell(
                    format!("t{i}"),
                    Cell {
                        cell_value: phrase(&mut r, max_words.min(2)),
                        row_header: phrase(&mut r, 1),
                        column_header: phrase(&mut r, 1),
                        page_title: if infobox { phrase(&mut r, 1) } else { String::new() },
                        table_kind: if infobox {
                            TableKind::Infobox
                        } else {
                            TableKind::General
                        },
                    },
                )
            }
        })
        .collect();
    let evidence_labels = (0..m).map(|_| u8::from(r.gen_bool(0.5))).collect();
    TrainingInstance {
        claim_id: format!("rand{seed}"),
        claim_text: phrase(&mut r, 6),
        label: Label::ALL[r.gen_range(0..3)],
        evidence,
        evidence_labels,
        source: EvidenceSource::Retrieved,
    }
}

/// Two-evidence instance with nine nodes: a sentence and a general-table
/// cell that share "ulm" and "einstein".
pub fn toy_instance() -> TrainingInstance {
    TrainingInstance {
        claim_id: "toy".into(),
        claim_text: "Einstein was born in Ulm".into(),
        label: Label::Refuted,
        evidence: vec![
            EvidenceItem::sentence("s", "Ulm hosts Einstein museum"),
            EvidenceItem::cell(
                "t",
                Cell {
                    cell_value: "Ulm".into(),
                    row_header: "Einstein".into(),
                    column_header: "Born".into(),
                    page_title: String::new(),
                    table_kind: TableKind::General,
                },
            ),
        ],
        evidence_labels: vec![1, 0],
        source: EvidenceSource::Retrieved,
    }
}

/// Sentence A links to sentence B only through "ulm"; "hosts" is a window
/// neighbour of that word with no edge of its own into B.
pub fn two_hop_instance() -> TrainingInstance {
    TrainingInstance {
        claim_id: "hop".into(),
        claim_text: "Ulm museum".into(),
        label: Label::Supported,
        evidence: vec![
            EvidenceItem::sentence("a", "hosts Ulm"),
            EvidenceItem::sentence("b", "Ulm river Danube"),
        ],
        evidence_labels: vec![1, 1],
        source: EvidenceSource::Retrieved,
    }
}

/// Random graph with `n` nodes, each unordered pair assigned to no relation
/// or one of `rels` relations (both directions).
pub fn random_relations(rng: &mut impl Rng, n: usize, rels: usize) -> Vec<Vec<(usize, usize)>> {
    let mut out = vec![Vec::new(); rels];
    for u in 0..n {
        for v in (u + 1)..n {
            let r = rng.gen_range(0..=rels);
            if r < rels {
                out[r].push((u, v));
                out[r].push((v, u));
            }
        }
    }
    for list in &mut out {
        list.sort_unstable();
    }
    out
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Direct per-node evaluation of the relational update with explicit
/// neighbour sets and scalar loops.
pub fn scalar_layer(
    h: &[Vec<f64>],
    relations: &[Vec<(usize, usize)>],
    w_r: &[Vec<Vec<f64>>],
    w_0: &[Vec<f64>],
    act: Activation,
) -> Vec<Vec<f64>> {
    let n = h.len();
    let d = h[0].len();
    let mut out = vec![vec![0.0; d]; n];
    for i in 0..n {
        for c in 0..d {
            let mut acc = 0.0;
            for (r, pairs) in relations.iter().enumerate() {
                let nbrs: Vec<usize> = pairs.iter().filter(|p| p.0 == i).map(|p| p.1).collect();
                if nbrs.is_empty() {
                    continue;
                }
                let mut s = 0.0;
                for &j in &nbrs {
                    for k in 0..d {
                        s += h[j][k] * w_r[r][k][c];
                    }
                }
                acc += s / nbrs.len() as f64;
            }
            for k in 0..d {
                acc += h[i][k] * w_0[k][c];
            }
            out[i][c] = match act {
                Activation::Sigmoid => sigmoid(acc),
                Activation::Relu => acc.max(0.0),
            };
        }
    }
    out
}

/// The same update through the library layer.
pub fn vectorized_layer(
    h: &[Vec<f64>],
    relations: &[Vec<(usize, usize)>],
    w_r: &[Vec<Vec<f64>>],
    w_0: &[Vec<f64>],
    act: Activation,
) -> Tensor<f64> {
    let n = h.len();
    let tape = Tape::<f64>::new();
    let hv = tape.constant(Tensor::from_rows(h).unwrap());
    let idx: Vec<RelationIndex<f64>> = relations.iter().map(|p| RelationIndex::new(p, n)).collect();
    let ws: Vec<_> = w_r
        .iter()
        .map(|w| tape.constant(Tensor::from_rows(w).unwrap()))
        .collect();
    let w0 = tape.constant(Tensor::from_rows(w_0).unwrap());
    rgcn_layer(hv, &idx, &ws, w0, act).unwrap().value()
}
