//! Optimization loop, evaluation metrics, checkpoints and diagnostics.

mod checkpoint;
mod influence;
mod optim;
pub mod synthetic;

pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_load, checkpoint_save, checkpoint_to_bytes, Checkpoint, CheckpointError,
    CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use influence::{influence_test, InfluenceReport, TwoHopReport};
pub use optim::{adam_step, lr_at, AdamState, GroupRates, BETA1, BETA2, EPSILON};

pub use crate::config::TrainConfig;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{augment, evaluation_instance, ClaimRecord, Label, TrainingInstance};
use crate::embed::Provider;
use crate::exec::Execution;
use crate::graph::GraphConfig;
use crate::model::{self, ModelConfig, ModelParams, Prepared};
use crate::tensor::{Real, Tensor};
use crate::Error;

/// Mixed into the run seed to derive the epoch shuffle stream.
const SHUFFLE_SALT: u64 = 0x5348_5546_464c_4521;

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss_c: f64,
    pub mean_loss_e: f64,
    /// Accuracy of the pre-update predictions made during the epoch.
    pub train_acc: f64,
    /// Learning rate of the model group at the last step of the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct Trained<T> {
    pub params: ModelParams<T>,
    pub adam: AdamState<T>,
    pub log: Vec<EpochLog>,
}

/// Instances of every record after augmentation, in record order.
pub fn training_instances(records: &[ClaimRecord]) -> Result<Vec<TrainingInstance>, Error> {
    let mut out = Vec::with_capacity(records.len() * 2);
    for r in records {
        out.extend(augment(r)?);
    }
    Ok(out)
}

/// Resolves graphs and features of every instance.
pub fn prepare_all<T: Real>(
    instances: &[TrainingInstance],
    provider: &Provider,
    graph_cfg: &GraphConfig,
    model_cfg: &ModelConfig,
    exec: Execution,
) -> Result<Vec<Prepared<T>>, Error> {
    exec.try_map(instances, |inst| Prepared::new(inst, provider, graph_cfg, model_cfg))
}

/// Per-instance forward outputs and the batch-mean gradients.
pub type BatchGradients<T> = (Vec<model::ForwardOutput<T>>, Vec<Tensor<T>>);

/// Mean loss and gradients of a batch; per-instance results are reduced in
/// batch order.
pub fn batch_gradients<T: Real>(
    params: &ModelParams<T>,
    batch: &[&Prepared<T>],
    beta: T,
    exec: Execution,
) -> Result<BatchGradients<T>, Error> {
    let results = exec.try_map(batch, |p| model::loss_and_grads(params, p, beta))?;
    let scale = T::one() / T::of(batch.len() as f64);
    let mut sum: Vec<Tensor<T>> = params
        .tensors
        .iter()
        .map(|t| Tensor::zeros(t.rows(), t.cols()))
        .collect();
    let mut outputs = Vec::with_capacity(results.len());
    for (out, grads) in results {
        for (acc, g) in sum.iter_mut().zip(&grads) {
            for (a, &x) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += x;
            }
        }
        outputs.push(out);
    }
    for acc in &mut sum {
        for a in acc.data_mut() {
            *a = *a * scale;
        }
    }
    Ok((outputs, sum))
}

fn total_steps(instances: usize, batch_size: usize, epochs: usize) -> usize {
    epochs * instances.div_ceil(batch_size)
}

/// Seeded per-epoch permutations of `0..n`.
#[derive(Debug, Clone)]
pub struct Shuffler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
}

impl Shuffler {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed ^ SHUFFLE_SALT),
            order: (0..n).collect(),
        }
    }

    /// Visiting order of the next epoch.
    pub fn next_epoch(&mut self) -> &[usize] {
        self.order.shuffle(&mut self.rng);
        &self.order
    }
}

/// Trains from a fresh initialization.
pub fn train<T: Real>(
    records: &[ClaimRecord],
    provider: &Provider,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<Trained<T>, Error> {
    train_with(records, provider, cfg, exec, |_| {})
}

/// Like [`train`], calling `on_epoch` after every epoch.
pub fn train_with<T: Real>(
    records: &[ClaimRecord],
    provider: &Provider,
    cfg: &TrainConfig,
    exec: Execution,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<Trained<T>, Error> {
    train_from(records, provider, cfg, exec, None, on_epoch)
}

/// Like [`train_with`], starting from `init` instead of a fresh
/// initialization. The learning-rate schedule always starts over.
pub fn train_from<T: Real>(
    records: &[ClaimRecord],
    provider: &Provider,
    cfg: &TrainConfig,
    exec: Execution,
    init: Option<(ModelParams<T>, AdamState<T>)>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Trained<T>, Error> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::Config("training needs at least one claim".into()));
    }
    let graph_cfg = cfg.graph_config()?;
    let model_cfg = cfg.model_config(&graph_cfg, provider);
    let instances = training_instances(records)?;
    let prepared: Vec<Prepared<T>> = prepare_all(&instances, provider, &graph_cfg, &model_cfg, exec)?;

    let (mut params, mut adam) = match init {
        Some((p, a)) => {
            if p.config != model_cfg {
                return Err(CheckpointError::ConfigMismatch(format!(
                    "initial parameters were built for {:?}, the run needs {:?}",
                    p.config, model_cfg
                ))
                .into());
            }
            (p, a)
        }
        None => {
            let p = ModelParams::<T>::init(model_cfg, provider, cfg.seed);
            let a = AdamState::new(&p);
            (p, a)
        }
    };
    let mut shuffler = Shuffler::new(prepared.len(), cfg.seed);
    let beta = T::of(cfg.beta);
    let total = total_steps(prepared.len(), cfg.batch_size, cfg.epochs);
    let mut step = 0usize;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let order = shuffler.next_epoch().to_vec();
        let (mut sum_c, mut sum_e, mut correct) = (0.0, 0.0, 0usize);
        let mut lr = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Prepared<T>> = chunk.iter().map(|&i| &prepared[i]).collect();
            let (outputs, grads) = batch_gradients(&params, &batch, beta, exec)?;
            for (out, p) in outputs.iter().zip(&batch) {
                if !out.is_finite() {
                    return Err(Error::NonFinite {
                        what: "forward pass",
                        epoch,
                        step,
                    });
                }
                sum_c += out.loss_c.as_f64();
                sum_e += out.loss_e.as_f64();
                correct += usize::from(out.predicted() == p.label);
            }
            if !grads.iter().all(Tensor::is_finite) {
                return Err(Error::NonFinite {
                    what: "gradients",
                    epoch,
                    step,
                });
            }
            // Step `s` of `total` runs at the rate of step `s + 1` of `total + 1`.
            lr = lr_at(step + 1, total + 1, cfg.lr_model, cfg.warmup_frac);
            let rates = GroupRates {
                model: lr,
                embedding: lr_at(step + 1, total + 1, cfg.lr_embed, cfg.warmup_frac),
            };
            adam_step(&mut params, &grads, &mut adam, rates);
            step += 1;
        }
        let n = prepared.len() as f64;
        let entry = EpochLog {
            epoch,
            mean_loss_c: sum_c / n,
            mean_loss_e: sum_e / n,
            train_acc: correct as f64 / n,
            lr,
        };
        log::info!(
            "epoch {epoch}: loss_c {:.4} loss_e {:.4} acc {:.3} lr {:.2e}",
            entry.mean_loss_c,
            entry.mean_loss_e,
            entry.train_acc,
            entry.lr
        );
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(Trained { params, adam, log })
}

/// Verdict for one claim at evaluation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub claim_id: String,
    pub label: Label,
    pub predicted: Label,
    pub probabilities: [f64; 3],
    /// Every golden item id occurs among the retrieved ids.
    pub golden_retrieved: bool,
    pub loss_c: f64,
    pub loss_e: f64,
}

impl Prediction {
    pub fn correct(&self) -> bool {
        self.label == self.predicted
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub claims: usize,
    pub label_accuracy: f64,
    pub feverous_score: f64,
    /// `confusion[gold][predicted]`, classes in [`Label::ALL`] order.
    pub confusion: [[usize; 3]; 3],
    pub mean_loss_c: f64,
    pub mean_loss_e: f64,
}

impl Metrics {
    pub fn from_predictions(preds: &[Prediction]) -> Self {
        let mut confusion = [[0usize; 3]; 3];
        let (mut correct, mut both) = (0usize, 0usize);
        let (mut lc, mut le) = (0.0, 0.0);
        for p in preds {
            confusion[p.label.index()][p.predicted.index()] += 1;
            if p.correct() {
                correct += 1;
                if p.golden_retrieved {
                    both += 1;
                }
            }
            lc += p.loss_c;
            le += p.loss_e;
        }
        let n = preds.len();
        let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
        Self {
            claims: n,
            label_accuracy: frac(correct),
            feverous_score: frac(both),
            confusion,
            mean_loss_c: if n == 0 { 0.0 } else { lc / n as f64 },
            mean_loss_e: if n == 0 { 0.0 } else { le / n as f64 },
        }
    }
}

/// Predicts every claim from its evaluation instance, in record order.
pub fn predict<T: Real>(
    records: &[ClaimRecord],
    params: &ModelParams<T>,
    provider: &Provider,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<Vec<Prediction>, Error> {
    let graph_cfg = cfg.graph_config()?;
    let beta = T::of(cfg.beta);
    exec.try_map(records, |r| {
        let inst = evaluation_instance(r)?;
        let prepared = Prepared::<T>::new(&inst, provider, &graph_cfg, &params.config)?;
        let out = model::forward(params, &prepared, beta)?;
        if !out.is_finite() {
            return Err(Error::NonFinite {
                what: "evaluation",
                epoch: 0,
                step: 0,
            });
        }
        let p = |i: usize| out.p_hat[i].as_f64();
        Ok(Prediction {
            claim_id: r.claim_id.clone(),
            label: r.label,
            predicted: out.predicted(),
            probabilities: [p(0), p(1), p(2)],
            golden_retrieved: r.golden_retrieved(),
            loss_c: out.loss_c.as_f64(),
            loss_e: out.loss_e.as_f64(),
        })
    })
}

pub fn evaluate<T: Real>(
    records: &[ClaimRecord],
    params: &ModelParams<T>,
    provider: &Provider,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<Metrics, Error> {
    Ok(Metrics::from_predictions(&predict(
        records, params, provider, cfg, exec,
    )?))
}
