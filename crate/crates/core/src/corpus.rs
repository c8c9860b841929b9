//! Claim/evidence records, JSONL ingestion and training-set augmentation.
//!
//! One input line holds one claim with its retrieved evidence and its
//! golden (annotated) evidence, both fully inlined:
//!
//! ```json
//! {"claim_id":"c1","claim":"...","label":"REFUTED",
//!  "retrieved":[{"id":"s0","kind":"SENTENCE","text":"...","gold":true}],
//!  "golden":[{"id":"s0","kind":"SENTENCE","text":"...","gold":true}]}
//! ```
//!
//! Cell items carry `cell_value`, `row_header`, `column_header`,
//! `table_kind` (`GENERAL` or `INFOBOX`) and `page_title`, which infobox
//! cells require.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: duplicate evidence id {id:?}")]
    DuplicateEvidenceId { line: usize, id: String },
    #[error("line {line}: evidence {id:?} is missing field {field}")]
    MissingCellField {
        line: usize,
        id: String,
        field: &'static str,
    },
    #[error("line {line}: evidence {id:?} has gold={found} but golden membership says {expected}")]
    InconsistentGold {
        line: usize,
        id: String,
        found: bool,
        expected: bool,
    },
    #[error("line {line}: {count} retrieved {kind} items exceed the cap of {cap}")]
    CapExceeded {
        line: usize,
        kind: &'static str,
        count: usize,
        cap: usize,
    },
    #[error("claim {0:?} has neither retrieved nor golden evidence")]
    EmptyClaim(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Label {
    Supported,
    Refuted,
    NotEnoughInfo,
}

impl Label {
    pub const COUNT: usize = 3;
    pub const ALL: [Label; 3] = [Label::Supported, Label::Refuted, Label::NotEnoughInfo];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "SUPPORTED" => Some(Label::Supported),
            "REFUTED" => Some(Label::Refuted),
            "NOT_ENOUGH_INFO" => Some(Label::NotEnoughInfo),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Supported => "SUPPORTED",
            Label::Refuted => "REFUTED",
            Label::NotEnoughInfo => "NOT_ENOUGH_INFO",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TableKind {
    General,
    Infobox,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub cell_value: String,
    pub row_header: String,
    pub column_header: String,
    /// Required for infobox cells, optional for general-table cells.
    pub page_title: String,
    pub table_kind: TableKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvidenceContent {
    Sentence(String),
    Cell(Cell),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EvidenceKind {
    Sentence,
    Cell,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvidenceItem {
    pub id: String,
    pub content: EvidenceContent,
    pub gold: bool,
}

impl EvidenceItem {
    pub fn sentence(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            content: EvidenceContent::Sentence(text.into()),
            gold: false,
        }
    }

    pub fn cell(id: impl Into<String>, cell: Cell) -> Self {
        Self {
            id: id.into(),
            content: EvidenceContent::Cell(cell),
            gold: false,
        }
    }

    pub fn with_gold(mut self, gold: bool) -> Self {
        self.gold = gold;
        self
    }

    pub fn kind(&self) -> EvidenceKind {
        match self.content {
            EvidenceContent::Sentence(_) => EvidenceKind::Sentence,
            EvidenceContent::Cell(_) => EvidenceKind::Cell,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClaimRecord {
    pub claim_id: String,
    pub claim_text: String,
    pub label: Label,
    pub retrieved: Vec<EvidenceItem>,
    pub golden: Vec<EvidenceItem>,
}

impl ClaimRecord {
    /// Evidence items addressable by this claim, each once: retrieved items
    /// in order, then golden items that were not retrieved. Contextual
    /// embedding keys index into this list.
    pub fn evidence_universe(&self) -> Vec<&EvidenceItem> {
        let mut seen: HashSet<&str> = HashSet::new();
        self.retrieved
            .iter()
            .chain(&self.golden)
            .filter(|e| seen.insert(e.id.as_str()))
            .collect()
    }

    /// True when every golden item id occurs among the retrieved ids.
    pub fn golden_retrieved(&self) -> bool {
        let ids: HashSet<&str> = self.retrieved.iter().map(|e| e.id.as_str()).collect();
        self.golden.iter().all(|g| ids.contains(g.id.as_str()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EvidenceSource {
    Golden,
    Retrieved,
}

impl EvidenceSource {
    pub fn as_str(self) -> &'static str {
        match self {
            EvidenceSource::Golden => "GOLDEN",
            EvidenceSource::Retrieved => "RETRIEVED",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingInstance {
    pub claim_id: String,
    pub claim_text: String,
    pub label: Label,
    pub evidence: Vec<EvidenceItem>,
    pub evidence_labels: Vec<u8>,
    pub source: EvidenceSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParseOptions {
    pub strict: bool,
    pub max_sentences: usize,
    pub max_cells: usize,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            strict: false,
            max_sentences: 5,
            max_cells: 25,
        }
    }
}

// Wire shapes; field order here is the serialization order.

#[derive(Serialize, Deserialize)]
struct RawRecord {
    claim_id: String,
    claim: String,
    label: String,
    #[serde(default)]
    retrieved: Vec<RawEvidence>,
    #[serde(default)]
    golden: Vec<RawEvidence>,
}

#[derive(Serialize, Deserialize)]
struct RawEvidence {
    id: String,
    kind: EvidenceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cell_value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    row_header: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    column_header: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    page_title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    table_kind: Option<TableKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold: Option<bool>,
}

fn nonempty(v: Option<String>) -> Option<String> {
    v.filter(|s| !s.trim().is_empty())
}

fn convert_item(raw: RawEvidence, line: usize) -> Result<(EvidenceItem, Option<bool>), CorpusError> {
    let missing = |field| CorpusError::MissingCellField {
        line,
        id: raw.id.clone(),
        field,
    };
    let content = match raw.kind {
        EvidenceKind::Sentence => {
            if raw.cell_value.is_some()
                || raw.row_header.is_some()
                || raw.column_header.is_some()
                || raw.table_kind.is_some()
            {
                return Err(CorpusError::MalformedLine {
                    line,
                    reason: format!("sentence evidence {:?} carries cell fields", raw.id),
                });
            }
            let text = nonempty(raw.text.clone()).ok_or_else(|| missing("text"))?;
            EvidenceContent::Sentence(text)
        }
        EvidenceKind::Cell => {
            if raw.text.is_some() {
                return Err(CorpusError::MalformedLine {
                    line,
                    reason: format!("cell evidence {:?} carries a text field", raw.id),
                });
            }
            let table_kind = raw.table_kind.ok_or_else(|| missing("table_kind"))?;
            let cell_value = nonempty(raw.cell_value.clone()).ok_or_else(|| missing("cell_value"))?;
            let row_header = nonempty(raw.row_header.clone()).ok_or_else(|| missing("row_header"))?;
            let column_header = nonempty(raw.column_header.clone()).ok_or_else(|| missing("column_header"))?;
            let page_title = match table_kind {
                TableKind::Infobox => nonempty(raw.page_title.clone()).ok_or_else(|| missing("page_title"))?,
                TableKind::General => raw.page_title.clone().unwrap_or_default(),
            };
            EvidenceContent::Cell(Cell {
                cell_value,
                row_header,
                column_header,
                page_title,
                table_kind,
            })
        }
    };
    Ok((
        EvidenceItem {
            id: raw.id,
            content,
            gold: false,
        },
        raw.gold,
    ))
}

fn to_raw(item: &EvidenceItem) -> RawEvidence {
    let mut raw = RawEvidence {
        id: item.id.clone(),
        kind: item.kind(),
        text: None,
        cell_value: None,
        row_header: None,
        column_header: None,
        page_title: None,
        table_kind: None,
        gold: Some(item.gold),
    };
    match &item.content {
        EvidenceContent::Sentence(t) => raw.text = Some(t.clone()),
        EvidenceContent::Cell(c) => {
            raw.cell_value = Some(c.cell_value.clone());
            raw.row_header = Some(c.row_header.clone());
            raw.column_header = Some(c.column_header.clone());
            if !c.page_title.is_empty() {
                raw.page_title = Some(c.page_title.clone());
            }
            raw.table_kind = Some(c.table_kind);
        }
    }
    raw
}

/// Parses and validates one JSONL line (`line` is 1-based, for diagnostics).
pub fn parse_record(text: &str, line: usize, opts: &ParseOptions) -> Result<ClaimRecord, CorpusError> {
    let raw: RawRecord = serde_json::from_str(text).map_err(|e| CorpusError::MalformedLine {
        line,
        reason: e.to_string(),
    })?;
    let label = Label::parse(&raw.label).ok_or_else(|| CorpusError::UnknownLabel {
        line,
        label: raw.label.clone(),
    })?;

    let mut golden = Vec::with_capacity(raw.golden.len());
    let mut golden_ids = HashSet::new();
    for r in raw.golden {
        let (mut item, gold) = convert_item(r, line)?;
        if !golden_ids.insert(item.id.clone()) {
            return Err(CorpusError::DuplicateEvidenceId { line, id: item.id });
        }
        if gold == Some(false) {
            return Err(CorpusError::InconsistentGold {
                line,
                id: item.id,
                found: false,
                expected: true,
            });
        }
        item.gold = true;
        golden.push(item);
    }

    let mut retrieved = Vec::with_capacity(raw.retrieved.len());
    let mut seen = HashSet::new();
    for r in raw.retrieved {
        let (mut item, gold) = convert_item(r, line)?;
        if !seen.insert(item.id.clone()) {
            return Err(CorpusError::DuplicateEvidenceId { line, id: item.id });
        }
        let expected = golden_ids.contains(&item.id);
        if let Some(found) = gold {
            if found != expected {
                return Err(CorpusError::InconsistentGold {
                    line,
                    id: item.id,
                    found,
                    expected,
                });
            }
        }
        item.gold = expected;
        retrieved.push(item);
    }

    let retrieved = apply_caps(retrieved, line, &raw.claim_id, opts)?;
    Ok(ClaimRecord {
        claim_id: raw.claim_id,
        claim_text: raw.claim,
        label,
        retrieved,
        golden,
    })
}

fn apply_caps(
    items: Vec<EvidenceItem>,
    line: usize,
    claim_id: &str,
    opts: &ParseOptions,
) -> Result<Vec<EvidenceItem>, CorpusError> {
    let n_sent = items.iter().filter(|e| e.kind() == EvidenceKind::Sentence).count();
    let n_cell = items.len() - n_sent;
    for (kind, count, cap) in [
        ("sentence", n_sent, opts.max_sentences),
        ("cell", n_cell, opts.max_cells),
    ] {
        if count > cap {
            if opts.strict {
                return Err(CorpusError::CapExceeded { line, kind, count, cap });
            }
            log::warn!("claim {claim_id}: truncating {count} retrieved {kind} items to {cap}");
        }
    }
    let (mut s, mut c) = (0, 0);
    Ok(items
        .into_iter()
        .filter(|e| match e.kind() {
            EvidenceKind::Sentence => {
                s += 1;
                s <= opts.max_sentences
            }
            EvidenceKind::Cell => {
                c += 1;
                c <= opts.max_cells
            }
        })
        .collect())
}

/// Reads every record of a JSONL stream in file order. Blank lines are
/// skipped.
pub fn parse_claims<R: BufRead>(input: R, opts: &ParseOptions) -> Result<Vec<ClaimRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_record(&line, i + 1, opts)?);
    }
    Ok(out)
}

pub fn record_to_json(record: &ClaimRecord) -> String {
    let raw = RawRecord {
        claim_id: record.claim_id.clone(),
        claim: record.claim_text.clone(),
        label: record.label.as_str().to_string(),
        retrieved: record.retrieved.iter().map(to_raw).collect(),
        golden: record.golden.iter().map(to_raw).collect(),
    };
    serde_json::to_string(&raw).expect("record serialization cannot fail")
}

pub fn write_claims<W: Write>(mut out: W, records: &[ClaimRecord]) -> std::io::Result<()> {
    for r in records {
        writeln!(out, "{}", record_to_json(r))?;
    }
    Ok(())
}

/// Expands a record into its golden-set and retrieved-set instances.
///
/// The golden instance labels every item relevant; the retrieved instance
/// labels an item relevant iff it is also golden. An empty side yields no
/// instance.
pub fn augment(record: &ClaimRecord) -> Result<Vec<TrainingInstance>, CorpusError> {
    if record.golden.is_empty() && record.retrieved.is_empty() {
        return Err(CorpusError::EmptyClaim(record.claim_id.clone()));
    }
    let golden_ids: HashSet<&str> = record.golden.iter().map(|e| e.id.as_str()).collect();
    let mut out = Vec::with_capacity(2);
    if !record.golden.is_empty() {
        out.push(TrainingInstance {
            claim_id: record.claim_id.clone(),
            claim_text: record.claim_text.clone(),
            label: record.label,
            evidence: record.golden.clone(),
            evidence_labels: vec![1; record.golden.len()],
            source: EvidenceSource::Golden,
        });
    }
    if let Some(inst) = retrieved_instance_with(record, &golden_ids) {
        out.push(inst);
    }
    Ok(out)
}

fn retrieved_instance_with(record: &ClaimRecord, golden_ids: &HashSet<&str>) -> Option<TrainingInstance> {
    if record.retrieved.is_empty() {
        return None;
    }
    Some(TrainingInstance {
        claim_id: record.claim_id.clone(),
        claim_text: record.claim_text.clone(),
        label: record.label,
        evidence: record.retrieved.clone(),
        evidence_labels: record
            .retrieved
            .iter()
            .map(|e| u8::from(golden_ids.contains(e.id.as_str())))
            .collect(),
        source: EvidenceSource::Retrieved,
    })
}

/// The instance used at evaluation time: the retrieved set, or the golden
/// set when nothing was retrieved.
pub fn evaluation_instance(record: &ClaimRecord) -> Result<TrainingInstance, CorpusError> {
    let mut all = augment(record)?;
    Ok(all.pop().expect("augment yields at least one instance"))
}
