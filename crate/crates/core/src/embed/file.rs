//! The `HFCE` keyed vector store and its alignment manifest.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "HFCE" | version u32 = 1 | dim u32 | count u64
//! count × ( key_len u16 | key (UTF-8) | dim × f32 )
//! ```
//!
//! Key namespaces: `w:<norm>`, `c:<claim_id>:<ev_idx>:<tok_idx>`,
//! `cls:<claim_id>` and `seq:<claim_id>:<GOLDEN|RETRIEVED>`. `ev_idx`
//! indexes [`ClaimRecord::evidence_universe`](crate::corpus::ClaimRecord::evidence_universe).

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::EmbedError;

pub const MAGIC: &[u8; 4] = b"HFCE";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    dim: usize,
    keys: Vec<String>,
    vectors: Vec<Vec<f32>>,
    index: HashMap<String, usize>,
}

impl EmbeddingFile {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            keys: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.keys.iter().map(String::as_str)
    }

    pub fn insert(&mut self, key: impl Into<String>, vector: Vec<f32>) -> Result<(), EmbedError> {
        let key = key.into();
        if vector.len() != self.dim {
            return Err(EmbedError::DimMismatch {
                expected: self.dim,
                found: vector.len(),
            });
        }
        if key.len() > u16::MAX as usize {
            return Err(EmbedError::InvalidKey(key));
        }
        if self.index.contains_key(&key) {
            return Err(EmbedError::DuplicateKey(key));
        }
        self.index.insert(key.clone(), self.keys.len());
        self.keys.push(key);
        self.vectors.push(vector);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.index.get(key).map(|&i| self.vectors[i].as_slice())
    }

    pub fn require(&self, key: &str) -> Result<&[f32], EmbedError> {
        self.get(key).ok_or_else(|| EmbedError::MissingKey(key.to_string()))
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), EmbedError> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&(self.keys.len() as u64).to_le_bytes())?;
        for (k, v) in self.keys.iter().zip(&self.vectors) {
            out.write_all(&(k.len() as u16).to_le_bytes())?;
            out.write_all(k.as_bytes())?;
            for x in v {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self, EmbedError> {
        let mut buf = Vec::new();
        input.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    /// Parses and validates a complete file: magic, version, key
    /// uniqueness, UTF-8 keys, exact length.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbedError> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(EmbedError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(EmbedError::UnsupportedVersion(version));
        }
        let dim = r.u32()? as usize;
        let count = r.u64()?;
        let mut file = Self::new(dim);
        for _ in 0..count {
            let len = r.u16()? as usize;
            let key = std::str::from_utf8(r.take(len)?)
                .map_err(|_| EmbedError::InvalidKey(format!("non-UTF-8 key at byte {}", r.pos)))?
                .to_string();
            let raw = r.take(dim * 4)?;
            let vector = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            file.insert(key, vector)?;
        }
        if r.pos != bytes.len() {
            return Err(EmbedError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(file)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EmbedError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(EmbedError::Truncated)?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, EmbedError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, EmbedError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, EmbedError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn word_key(norm: &str) -> String {
    format!("w:{norm}")
}

pub fn token_key(claim_id: &str, ev_idx: usize, tok_idx: usize) -> String {
    format!("c:{claim_id}:{ev_idx}:{tok_idx}")
}

pub fn claim_key(claim_id: &str) -> String {
    format!("cls:{claim_id}")
}

pub fn sequence_key(claim_id: &str, source: crate::corpus::EvidenceSource) -> String {
    format!("seq:{claim_id}:{}", source.as_str())
}

/// Subword segmentation and subword-to-word alignment written next to an
/// embedding file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub model: String,
    pub dim: usize,
    pub truncation: String,
    pub tokenizer: String,
    pub claims: BTreeMap<String, ClaimAlignment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimAlignment {
    pub evidence: Vec<EvidenceAlignment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceAlignment {
    pub id: String,
    pub ev_idx: usize,
    pub tokens: Vec<TokenAlignment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenAlignment {
    pub piece: String,
    /// Word position (as produced by the word tokenizer) this subword
    /// belongs to, if any.
    pub word: Option<usize>,
}

impl Manifest {
    pub fn from_json(bytes: &[u8]) -> Result<Self, EmbedError> {
        Ok(serde_json::from_slice(bytes)?)
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("manifest serialization cannot fail")
    }

    pub fn evidence(&self, claim_id: &str, evidence_id: &str) -> Result<&EvidenceAlignment, EmbedError> {
        self.claims
            .get(claim_id)
            .and_then(|c| c.evidence.iter().find(|e| e.id == evidence_id))
            .ok_or_else(|| EmbedError::MissingAlignment {
                claim_id: claim_id.to_string(),
                evidence_id: evidence_id.to_string(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EmbeddingFile {
        let mut f = EmbeddingFile::new(2);
        f.insert("w:ulm", vec![1.0, -2.5]).unwrap();
        f.insert("cls:c1", vec![f32::MIN_POSITIVE, 3.0e7]).unwrap();
        f
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[0..4], b"HFCE");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &2u64.to_le_bytes());
        assert_eq!(&bytes[20..22], &5u16.to_le_bytes());
        assert_eq!(&bytes[22..27], b"w:ulm");
        assert_eq!(bytes.len(), 20 + (2 + 5 + 8) + (2 + 6 + 8));
    }

    #[test]
    fn validation_errors() {
        let bytes = sample().to_bytes();
        assert!(matches!(
            EmbeddingFile::from_bytes(&bytes[..bytes.len() - 1]),
            Err(EmbedError::Truncated)
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(
            EmbeddingFile::from_bytes(&extra),
            Err(EmbedError::TrailingBytes(1))
        ));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(EmbeddingFile::from_bytes(&magic), Err(EmbedError::BadMagic)));
        let mut version = bytes.clone();
        version[4] = 9;
        assert!(matches!(
            EmbeddingFile::from_bytes(&version),
            Err(EmbedError::UnsupportedVersion(9))
        ));

        let mut dup = EmbeddingFile::new(1);
        dup.insert("k", vec![0.0]).unwrap();
        assert!(matches!(dup.insert("k", vec![1.0]), Err(EmbedError::DuplicateKey(_))));
        assert!(matches!(
            dup.insert("j", vec![1.0, 2.0]),
            Err(EmbedError::DimMismatch { .. })
        ));
    }

    #[test]
    fn missing_key() {
        assert!(matches!(sample().require("cls:c2"), Err(EmbedError::MissingKey(k)) if k == "cls:c2"));
    }
}
