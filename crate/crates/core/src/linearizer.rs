//! Cell linearization templates and word tokenization.
//!
//! Tokenization is language-independent:
//!
//! 1. split on Unicode whitespace;
//! 2. strip leading and trailing characters that are neither alphanumeric
//!    nor whitespace ("edge punctuation"); the stripped core is the surface;
//! 3. `norm` is the simple Unicode lowercase of the surface, edge-stripped
//!    again;
//! 4. tokens with an empty norm are dropped and positions renumbered from 0.
//!
//! Interior punctuation survives, so `state-of-the-art` and `N/A` are one
//! token each.

use serde::{Deserialize, Serialize};

use crate::corpus::{Cell, EvidenceContent, EvidenceItem, TableKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LinearizeError {
    #[error("cell is missing field {0}")]
    MissingField(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordToken {
    pub surface: String,
    pub norm: String,
    pub position: usize,
}

fn is_edge_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

fn strip_edges(s: &str) -> &str {
    s.trim_matches(is_edge_punct)
}

/// Matching key of a word. Idempotent: `norm(&norm(x)) == norm(x)`.
pub fn norm(word: &str) -> String {
    strip_edges(&strip_edges(word).to_lowercase()).to_string()
}

pub fn linearize_cell(cell: &Cell) -> Result<String, LinearizeError> {
    let req = |v: &str, name| {
        if v.trim().is_empty() {
            Err(LinearizeError::MissingField(name))
        } else {
            Ok(())
        }
    };
    req(&cell.column_header, "column_header")?;
    req(&cell.row_header, "row_header")?;
    req(&cell.cell_value, "cell_value")?;
    Ok(match cell.table_kind {
        TableKind::General => format!("{} for {} is {}", cell.column_header, cell.row_header, cell.cell_value),
        TableKind::Infobox => {
            req(&cell.page_title, "page_title")?;
            format!(
                "{} : {} of {} is {}",
                cell.column_header, cell.row_header, cell.page_title, cell.cell_value
            )
        }
    })
}

pub fn tokenize(text: &str) -> Vec<WordToken> {
    text.split_whitespace()
        .filter_map(|raw| {
            let surface = strip_edges(raw);
            let n = norm(surface);
            (!n.is_empty()).then(|| (surface.to_string(), n))
        })
        .enumerate()
        .map(|(position, (surface, norm))| WordToken {
            surface,
            norm,
            position,
        })
        .collect()
}

/// Text the evidence contributes to the graph: the sentence itself or the
/// linearized cell.
pub fn evidence_text(item: &EvidenceItem) -> Result<String, LinearizeError> {
    match &item.content {
        EvidenceContent::Sentence(t) => Ok(t.clone()),
        EvidenceContent::Cell(c) => linearize_cell(c),
    }
}

pub fn evidence_words(item: &EvidenceItem) -> Result<Vec<WordToken>, LinearizeError> {
    Ok(tokenize(&evidence_text(item)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn general(col: &str, row: &str, value: &str) -> Cell {
        Cell {
            cell_value: value.into(),
            row_header: row.into(),
            column_header: col.into(),
            page_title: String::new(),
            table_kind: TableKind::General,
        }
    }

    #[test]
    fn general_template() {
        assert_eq!(
            linearize_cell(&general("Position", "2009", "Defender")).unwrap(),
            "Position for 2009 is Defender"
        );
    }

    #[test]
    fn infobox_template() {
        let cell = Cell {
            cell_value: "1879".into(),
            row_header: "Date".into(),
            column_header: "Born".into(),
            page_title: "A. Einstein".into(),
            table_kind: TableKind::Infobox,
        };
        assert_eq!(linearize_cell(&cell).unwrap(), "Born : Date of A. Einstein is 1879");
    }

    #[test]
    fn empty_value_is_missing() {
        assert_eq!(
            linearize_cell(&general("Position", "2009", "")),
            Err(LinearizeError::MissingField("cell_value"))
        );
    }

    #[test]
    fn punctuation_is_stripped_at_edges_only() {
        let toks = tokenize("Ulm, Germany.");
        let surfaces: Vec<&str> = toks.iter().map(|t| t.surface.as_str()).collect();
        let norms: Vec<&str> = toks.iter().map(|t| t.norm.as_str()).collect();
        let pos: Vec<usize> = toks.iter().map(|t| t.position).collect();
        assert_eq!(surfaces, ["Ulm", "Germany"]);
        assert_eq!(norms, ["ulm", "germany"]);
        assert_eq!(pos, [0, 1]);

        assert!(tokenize("").is_empty());
        let t = tokenize("state-of-the-art");
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].norm, "state-of-the-art");
    }

    #[test]
    fn pure_punctuation_is_dropped() {
        let toks = tokenize("Born : Date -- (x)");
        let norms: Vec<&str> = toks.iter().map(|t| t.norm.as_str()).collect();
        assert_eq!(norms, ["born", "date", "x"]);
        assert_eq!(toks[2].position, 2);
    }

    #[test]
    fn evidence_words_cover_both_kinds() {
        let s = EvidenceItem::sentence("s", "Paris is big");
        assert_eq!(evidence_words(&s).unwrap().len(), 3);
        let c = EvidenceItem::cell("c", general("Pop", "2010", "5000"));
        let words: Vec<String> = evidence_words(&c).unwrap().into_iter().map(|t| t.surface).collect();
        assert_eq!(words, ["Pop", "for", "2010", "is", "5000"]);
        let na = EvidenceItem::cell("c", general("Pop", "2010", "N/A"));
        let last = evidence_words(&na).unwrap().pop().unwrap();
        assert_eq!((last.surface.as_str(), last.norm.as_str()), ("N/A", "n/a"));
    }

    #[test]
    fn norm_is_idempotent_on_tricky_case() {
        // U+0130 lowercases to "i" + combining dot, which is not alphanumeric
        let n = norm("KARAMİ");
        assert_eq!(norm(&n), n);
    }
}
