use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::embed::{Provider, ProviderKind};
use crate::graph::RelId;
use crate::tensor::{Real, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Sigmoid,
    Relu,
}

/// Everything that determines parameter shapes, plus the propagation
/// activation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers: usize,
    pub attn_hidden: usize,
    pub fuse_hidden: usize,
    pub relations: Vec<RelId>,
    pub activation: Activation,
    pub provider: ProviderKind,
    /// Rows of the trainable table (table provider only).
    pub vocab_size: usize,
}

impl ModelConfig {
    pub fn new(dim: usize, layers: usize, relations: Vec<RelId>, provider: &Provider) -> Self {
        Self {
            dim,
            layers,
            attn_hidden: dim,
            fuse_hidden: dim,
            relations,
            activation: Activation::Sigmoid,
            provider: provider.kind(),
            vocab_size: provider.vocab().map_or(0, |v| v.len()),
        }
    }

    pub fn slots(&self) -> Vec<Slot> {
        let mut out = Vec::new();
        for l in 0..self.layers {
            for r in 0..self.relations.len() {
                out.push(Slot::Relation(l, r));
            }
            out.push(Slot::SelfLoop(l));
        }
        out.extend([
            Slot::AttnW0,
            Slot::AttnB0,
            Slot::AttnW1,
            Slot::AttnB1,
            Slot::FuseW0,
            Slot::FuseB0,
            Slot::FuseW1,
            Slot::FuseB1,
        ]);
        if self.provider != ProviderKind::File {
            out.extend([Slot::ClaimProj, Slot::SeqProj]);
        }
        if self.provider == ProviderKind::Table {
            out.push(Slot::Table);
        }
        out
    }

    pub fn shape(&self, slot: Slot) -> [usize; 2] {
        let d = self.dim;
        match slot {
            Slot::Relation(..) | Slot::SelfLoop(_) | Slot::ClaimProj | Slot::SeqProj => [d, d],
            Slot::AttnW0 => [3 * d, self.attn_hidden],
            Slot::AttnB0 => [1, self.attn_hidden],
            Slot::AttnW1 => [self.attn_hidden, 1],
            Slot::AttnB1 => [1, 1],
            Slot::FuseW0 => [3 * d, self.fuse_hidden],
            Slot::FuseB0 => [1, self.fuse_hidden],
            Slot::FuseW1 => [self.fuse_hidden, Label::COUNT],
            Slot::FuseB1 => [1, Label::COUNT],
            Slot::Table => [self.vocab_size, d],
        }
    }

    pub fn name(&self, slot: Slot) -> String {
        match slot {
            Slot::Relation(l, r) => format!("rgcn.{l}.{}", self.relations[r].as_str()),
            Slot::SelfLoop(l) => format!("rgcn.{l}.self"),
            Slot::AttnW0 => "attn.w0".into(),
            Slot::AttnB0 => "attn.b0".into(),
            Slot::AttnW1 => "attn.w1".into(),
            Slot::AttnB1 => "attn.b1".into(),
            Slot::FuseW0 => "fuse.w0".into(),
            Slot::FuseB0 => "fuse.b0".into(),
            Slot::FuseW1 => "fuse.w1".into(),
            Slot::FuseB1 => "fuse.b1".into(),
            Slot::ClaimProj => "embed.claim_proj".into(),
            Slot::SeqProj => "embed.seq_proj".into(),
            Slot::Table => "embed.table".into(),
        }
    }

    pub fn index(&self, slot: Slot) -> usize {
        self.slots()
            .iter()
            .position(|&s| s == slot)
            .unwrap_or_else(|| panic!("{slot:?} is not a parameter of this model"))
    }

    /// Stable FNV-1a digest of the shape-determining fields.
    pub fn digest(&self) -> u64 {
        let rels: Vec<&str> = self.relations.iter().map(|r| r.as_str()).collect();
        let text = format!(
            "d={};k={};da={};df={};rels={};act={:?};provider={:?}",
            self.dim,
            self.layers,
            self.attn_hidden,
            self.fuse_hidden,
            rels.join(","),
            self.activation,
            self.provider
        );
        crate::embed::fnv1a64(text.as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Relation(usize, usize),
    SelfLoop(usize),
    AttnW0,
    AttnB0,
    AttnW1,
    AttnB1,
    FuseW0,
    FuseB0,
    FuseW1,
    FuseB1,
    ClaimProj,
    SeqProj,
    Table,
}

impl Slot {
    pub fn group(self) -> ParamGroup {
        match self {
            Slot::ClaimProj | Slot::SeqProj | Slot::Table => ParamGroup::Embedding,
            _ => ParamGroup::Model,
        }
    }

    fn is_bias(self) -> bool {
        matches!(self, Slot::AttnB0 | Slot::AttnB1 | Slot::FuseB0 | Slot::FuseB1)
    }
}

/// Learning-rate group of a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Model,
    Embedding,
}

/// All trainable tensors, ordered as [`ModelConfig::slots`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub tensors: Vec<Tensor<T>>,
}

fn glorot<T: Real>(shape: [usize; 2], rng: &mut ChaCha8Rng) -> Tensor<T> {
    let a = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
    let data = (0..shape[0] * shape[1]).map(|_| T::of(rng.gen_range(-a..a))).collect();
    Tensor::new(shape[0], shape[1], data).expect("row-major layout")
}

impl<T: Real> ModelParams<T> {
    /// Glorot-uniform weights, zero biases, and the provider's table.
    pub fn init(config: ModelConfig, provider: &Provider, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = config
            .slots()
            .into_iter()
            .map(|slot| {
                let shape = config.shape(slot);
                if slot == Slot::Table {
                    provider
                        .table_init()
                        .filter(|t: &Tensor<T>| t.shape() == shape)
                        .unwrap_or_else(|| Tensor::zeros(shape[0], shape[1]))
                } else if slot.is_bias() {
                    Tensor::zeros(shape[0], shape[1])
                } else {
                    glorot(shape, &mut rng)
                }
            })
            .collect();
        Self { config, tensors }
    }

    /// Zero-valued parameters with the right shapes.
    pub fn zeros(config: ModelConfig) -> Self {
        let tensors = config
            .slots()
            .into_iter()
            .map(|s| {
                let [r, c] = config.shape(s);
                Tensor::zeros(r, c)
            })
            .collect();
        Self { config, tensors }
    }

    pub fn get(&self, slot: Slot) -> &Tensor<T> {
        &self.tensors[self.config.index(slot)]
    }

    pub fn get_mut(&mut self, slot: Slot) -> &mut Tensor<T> {
        let i = self.config.index(slot);
        &mut self.tensors[i]
    }

    pub fn names(&self) -> Vec<String> {
        self.config.slots().into_iter().map(|s| self.config.name(s)).collect()
    }

    pub fn groups(&self) -> Vec<ParamGroup> {
        self.config.slots().into_iter().map(Slot::group).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data().len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Records every tensor on `tape`, as leaves when `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> BoundParams<'t, T> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        BoundParams {
            config: self.config.clone(),
            vars,
        }
    }
}

/// Parameters recorded on a tape, in slot order.
#[derive(Debug, Clone)]
pub struct BoundParams<'t, T: Real> {
    pub config: ModelConfig,
    pub vars: Vec<Var<'t, T>>,
}

impl<'t, T: Real> BoundParams<'t, T> {
    pub fn get(&self, slot: Slot) -> Var<'t, T> {
        self.vars[self.config.index(slot)]
    }

    pub fn try_get(&self, slot: Slot) -> Option<Var<'t, T>> {
        self.config
            .slots()
            .iter()
            .position(|&s| s == slot)
            .map(|i| self.vars[i])
    }
}
