//! Alignment templates for external exporters, and a hashed stand-in
//! exporter that fills them.
//!
//! The stand-in splits each word into pieces of at most four characters
//! (the first marked with `Ġ`) and gives every piece a hashed vector keyed
//! by claim, evidence and position, so the file provider's subword pooling
//! and key lookups can be exercised without a transformer.

use std::collections::BTreeMap;

use super::file::{claim_key, sequence_key, token_key, word_key};
use super::{hashed_embedding, ClaimAlignment, EmbedError, EmbeddingFile, EvidenceAlignment, Manifest, TokenAlignment};
use crate::corpus::{augment, ClaimRecord};
use crate::linearizer;

const PIECE_CHARS: usize = 4;

fn pieces(surface: &str) -> Vec<String> {
    let chars: Vec<char> = surface.chars().collect();
    chars
        .chunks(PIECE_CHARS)
        .enumerate()
        .map(|(i, c)| {
            let s: String = c.iter().collect();
            if i == 0 {
                format!("Ġ{s}")
            } else {
                s
            }
        })
        .collect()
}

/// Manifest with the word-level segmentation of every evidence in the
/// claim universe.
pub fn alignment_template(records: &[ClaimRecord], model: &str, dim: usize) -> Manifest {
    let mut claims = BTreeMap::new();
    for r in records {
        let evidence = r
            .evidence_universe()
            .into_iter()
            .enumerate()
            .map(|(ev_idx, item)| {
                let words = linearizer::evidence_words(item).unwrap_or_default();
                let tokens = words
                    .iter()
                    .flat_map(|w| {
                        pieces(&w.surface).into_iter().map(move |piece| TokenAlignment {
                            piece,
                            word: Some(w.position),
                        })
                    })
                    .collect();
                EvidenceAlignment {
                    id: item.id.clone(),
                    ev_idx,
                    tokens,
                }
            })
            .collect();
        claims.insert(r.claim_id.clone(), ClaimAlignment { evidence });
    }
    Manifest {
        model: model.to_string(),
        dim,
        truncation: "none".to_string(),
        tokenizer: "whitespace-words/4-char-pieces".to_string(),
        claims,
    }
}

/// Hashed stand-in exporter output: manifest plus a file holding every
/// `c:`, `cls:`, `seq:` and `w:` key the records need.
pub fn hashed_export(records: &[ClaimRecord], dim: usize, seed: u64) -> Result<(Manifest, EmbeddingFile), EmbedError> {
    let manifest = alignment_template(records, "hashed-stand-in", dim);
    let mut store = EmbeddingFile::new(dim);
    let f32s = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect::<Vec<f32>>();
    let mut words = std::collections::BTreeSet::new();
    for r in records {
        let align = &manifest.claims[&r.claim_id];
        for ev in &align.evidence {
            for (k, t) in ev.tokens.iter().enumerate() {
                let key = token_key(&r.claim_id, ev.ev_idx, k);
                let seed_key = format!("{}|{}|{}", r.claim_id, t.piece, t.word.unwrap_or(usize::MAX));
                store.insert(key, f32s(hashed_embedding(&seed_key, dim, seed)))?;
                words.insert(linearizer::norm(super::strip_piece_marker(&t.piece)));
            }
        }
        store.insert(
            claim_key(&r.claim_id),
            f32s(hashed_embedding(&format!("cls|{}", r.claim_text), dim, seed)),
        )?;
        for inst in augment(r).unwrap_or_default() {
            store.insert(
                sequence_key(&r.claim_id, inst.source),
                f32s(hashed_embedding(
                    &format!("seq|{}|{}", r.claim_id, inst.source.as_str()),
                    dim,
                    seed,
                )),
            )?;
        }
        for t in linearizer::tokenize(&r.claim_text) {
            words.insert(t.norm);
        }
    }
    for w in words.into_iter().filter(|w| !w.is_empty()) {
        let v = f32s(hashed_embedding(&w, dim, seed));
        store.insert(word_key(&w), v)?;
    }
    Ok((manifest, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pieces_cover_the_word() {
        assert_eq!(pieces("Einstein"), ["ĠEins", "tein"]);
        assert_eq!(pieces("Ulm"), ["ĠUlm"]);
    }
}
