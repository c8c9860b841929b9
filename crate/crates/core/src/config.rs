//! Flat run configuration shared by training, evaluation and the CLI.
//!
//! The on-disk form is a TOML table of `key = value` lines using the field
//! names below; every key is optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{ClaimRecord, ParseOptions};
use crate::embed::{EmbeddingFile, Manifest, Provider, ProviderKind, Vocab};
use crate::graph::{Granularity, GraphConfig, StopWords};
use crate::model::{Activation, ModelConfig};
use crate::Error;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_model: f64,
    pub lr_embed: f64,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_frac: f64,
    pub seed: u64,
    /// Propagation layers.
    pub k: usize,
    /// Window radius of intra-evidence edges.
    pub w: usize,
    pub d: usize,
    pub attn_hidden: Option<usize>,
    pub fuse_hidden: Option<usize>,
    pub activation: Activation,
    pub provider: ProviderKind,
    pub embed_seed: u64,
    pub embedding_file: Option<PathBuf>,
    pub manifest_file: Option<PathBuf>,
    pub heterogeneous: bool,
    pub fully_connected: bool,
    pub inter_evidence: bool,
    pub granularity: Granularity,
    /// Replaces the bundled English stopword list.
    pub stopwords_file: Option<PathBuf>,
    pub strict: bool,
    pub max_sentences: usize,
    pub max_cells: usize,
    pub precision: Precision,
    pub threads: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_model: 1e-3,
            lr_embed: 1e-5,
            beta: 1.2,
            epochs: 10,
            batch_size: 8,
            warmup_frac: 0.2,
            seed: 0,
            k: 2,
            w: 2,
            d: 32,
            attn_hidden: None,
            fuse_hidden: None,
            activation: Activation::Sigmoid,
            provider: ProviderKind::Hashed,
            embed_seed: 0,
            embedding_file: None,
            manifest_file: None,
            heterogeneous: true,
            fully_connected: false,
            inter_evidence: true,
            granularity: Granularity::Word,
            stopwords_file: None,
            strict: false,
            max_sentences: 5,
            max_cells: 25,
            precision: Precision::F32,
            threads: None,
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let cfg: Self = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(invalid(format!(
                "warmup_frac must lie in [0, 1), got {}",
                self.warmup_frac
            )));
        }
        if !(self.lr_model > 0.0 && self.lr_embed > 0.0) {
            return Err(invalid("learning rates must be positive"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(invalid("beta must be a non-negative finite number"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be at least 1"));
        }
        if self.k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        if self.w == 0 {
            return Err(invalid("w must be at least 1"));
        }
        if self.d == 0 {
            return Err(invalid("d must be at least 1"));
        }
        if self.granularity == Granularity::Token && self.provider != ProviderKind::File {
            return Err(invalid("token granularity requires provider = \"file\""));
        }
        if self.provider == ProviderKind::File && (self.embedding_file.is_none() || self.manifest_file.is_none()) {
            return Err(invalid("provider = \"file\" needs embedding_file and manifest_file"));
        }
        Ok(())
    }

    pub fn parse_options(&self) -> ParseOptions {
        ParseOptions {
            strict: self.strict,
            max_sentences: self.max_sentences,
            max_cells: self.max_cells,
        }
    }

    pub fn graph_config(&self) -> Result<GraphConfig, Error> {
        let stopwords = match &self.stopwords_file {
            Some(p) => StopWords::parse(&std::fs::read_to_string(p)?),
            None => StopWords::english(),
        };
        Ok(GraphConfig {
            window: self.w,
            stopwords,
            heterogeneous: self.heterogeneous,
            fully_connected: self.fully_connected,
            inter_evidence: self.inter_evidence,
            granularity: self.granularity,
        })
    }

    /// Builds the embedding provider; the table vocabulary is collected
    /// from `records`.
    pub fn provider(&self, records: &[ClaimRecord]) -> Result<Provider, Error> {
        self.provider_with_vocab(|| Vocab::from_records(records))
    }

    /// Builds the embedding provider with an explicit table vocabulary.
    pub fn provider_with_vocab(&self, vocab: impl FnOnce() -> Vocab) -> Result<Provider, Error> {
        let provider = match self.provider {
            ProviderKind::Hashed => Provider::Hashed {
                dim: self.d,
                seed: self.embed_seed,
            },
            ProviderKind::Table => Provider::Table {
                dim: self.d,
                seed: self.embed_seed,
                vocab: vocab(),
            },
            ProviderKind::File => {
                let (Some(store_path), Some(manifest_path)) = (&self.embedding_file, &self.manifest_file) else {
                    return Err(invalid("provider = \"file\" needs embedding_file and manifest_file"));
                };
                let store = EmbeddingFile::read_from(std::io::BufReader::new(std::fs::File::open(store_path)?))?;
                let manifest = Manifest::from_json(&std::fs::read(manifest_path)?)?;
                Provider::from_file(store, manifest)?
            }
        };
        if provider.dim() != self.d {
            return Err(invalid(format!(
                "d = {} but the embedding provider has dimension {}",
                self.d,
                provider.dim()
            )));
        }
        Ok(provider)
    }

    pub fn model_config(&self, graph: &GraphConfig, provider: &Provider) -> ModelConfig {
        let mut cfg = ModelConfig::new(self.d, self.k, graph.relations(), provider);
        cfg.activation = self.activation;
        if let Some(h) = self.attn_hidden {
            cfg.attn_hidden = h;
        }
        if let Some(h) = self.fuse_hidden {
            cfg.fuse_hidden = h;
        }
        cfg
    }
}
