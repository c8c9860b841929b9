use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use heterfc::config::{Precision, TrainConfig};
use heterfc::corpus::{augment, evaluation_instance, parse_claims, ClaimRecord};
use heterfc::embed::template::{alignment_template, hashed_export};
use heterfc::embed::{Provider, Vocab};
use heterfc::graph::ExportFormat;
use heterfc::model::ModelParams;
use heterfc::tensor::Real;
use heterfc::train::{
    checkpoint_load, checkpoint_save, influence_test, predict, train_with, Checkpoint, Metrics, Prediction,
};
use heterfc::{Error, Execution, Result};
use log::info;
use serde_json::json;

use crate::{Command, GlobalOpts};

pub fn run(command: Command, global: &GlobalOpts) -> Result<()> {
    match command {
        Command::BuildGraph {
            input,
            config,
            out,
            format,
        } => {
            let cfg = load_config(config.as_deref(), global)?;
            let exec = execution(&cfg);
            let records = read_claims(&input, &cfg)?;
            build_graphs(&records, &cfg, &out, format.into(), exec)
        }
        Command::Train { input, config, out } => {
            let cfg = load_config(config.as_deref(), global)?;
            let exec = execution(&cfg);
            let records = read_claims(&input, &cfg)?;
            match cfg.precision {
                Precision::F32 => train_to::<f32>(&records, &cfg, &out, exec),
                Precision::F64 => train_to::<f64>(&records, &cfg, &out, exec),
            }
        }
        Command::Evaluate {
            input,
            checkpoint,
            config,
            report,
        } => {
            let ck = checkpoint_load(&checkpoint)?;
            let cfg = match config {
                Some(path) => load_config(Some(&path), global)?,
                None => global.apply(ck.meta.train.clone())?,
            };
            let exec = execution(&cfg);
            let provider = checkpoint_provider(&ck, &cfg)?;
            ck.check_config(&cfg.model_config(&cfg.graph_config()?, &provider))?;
            let records = read_claims(&input, &cfg)?;
            let preds = match cfg.precision {
                Precision::F32 => predict(&records, &ck.params_as::<f32>(), &provider, &cfg, exec)?,
                Precision::F64 => predict(&records, &ck.params_as::<f64>(), &provider, &cfg, exec)?,
            };
            write_evaluation(&preds, report.as_deref())
        }
        Command::Inspect { checkpoint } => inspect(&checkpoint_load(&checkpoint)?),
        Command::Influence {
            input,
            checkpoint,
            claim,
        } => {
            let ck = checkpoint_load(&checkpoint)?;
            let cfg = global.apply(ck.meta.train.clone())?;
            let provider = checkpoint_provider(&ck, &cfg)?;
            let mut records = read_claims(&input, &cfg)?;
            if let Some(id) = claim {
                records.retain(|r| r.claim_id == id);
                if records.is_empty() {
                    return Err(Error::Config(format!("no claim with id {id:?} in {}", input.display())));
                }
            }
            match cfg.precision {
                Precision::F32 => influence(&records, &ck.params_as::<f32>(), &provider, &cfg),
                Precision::F64 => influence(&records, &ck.params_as::<f64>(), &provider, &cfg),
            }
        }
        Command::ExportEmbeddingsTemplate {
            input,
            config,
            out,
            model,
            hashed,
        } => {
            let cfg = load_config(config.as_deref(), global)?;
            let records = read_claims(&input, &cfg)?;
            match hashed {
                Some(store_path) => {
                    let (manifest, store) = hashed_export(&records, cfg.d, cfg.embed_seed)?;
                    fs::write(&out, manifest.to_json())?;
                    store.write_to(BufWriter::new(File::create(&store_path)?))?;
                    info!("wrote {} vectors to {}", store.len(), store_path.display());
                }
                None => fs::write(&out, alignment_template(&records, &model, cfg.d).to_json())?,
            }
            info!("wrote manifest for {} claims to {}", records.len(), out.display());
            Ok(())
        }
    }
}

fn load_config(path: Option<&Path>, global: &GlobalOpts) -> Result<TrainConfig> {
    let cfg = match path {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    };
    global.apply(cfg)
}

fn execution(cfg: &TrainConfig) -> Execution {
    match cfg.threads {
        Some(1) => Execution::Sequential,
        Some(n) => {
            if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
                log::warn!("thread pool already initialized; --threads {n} ignored");
            }
            Execution::default()
        }
        None => Execution::default(),
    }
}

fn read_claims(path: &Path, cfg: &TrainConfig) -> Result<Vec<ClaimRecord>> {
    let records = parse_claims(BufReader::new(File::open(path)?), &cfg.parse_options())?;
    info!("read {} claims from {}", records.len(), path.display());
    Ok(records)
}

fn checkpoint_provider(ck: &Checkpoint, cfg: &TrainConfig) -> Result<Provider> {
    let vocab = ck.meta.vocab.clone().unwrap_or_default();
    cfg.provider_with_vocab(|| Vocab::from_words_exact(vocab))
}

fn build_graphs(
    records: &[ClaimRecord],
    cfg: &TrainConfig,
    out: &Path,
    format: ExportFormat,
    exec: Execution,
) -> Result<()> {
    let graph_cfg = cfg.graph_config()?;
    let provider = cfg.provider(records)?;
    fs::create_dir_all(out)?;
    let files = exec.try_map(records, |r| -> Result<Vec<(String, Vec<u8>)>> {
        augment(r)?
            .iter()
            .map(|inst| {
                let g = provider.build_graph(inst, &graph_cfg)?;
                let name = format!(
                    "{}.{}.{}",
                    inst.claim_id,
                    inst.source.as_str().to_lowercase(),
                    format.extension()
                );
                Ok((name, g.export(format)))
            })
            .collect()
    })?;
    let mut count = 0;
    for (name, bytes) in files.into_iter().flatten() {
        fs::write(out.join(name), bytes)?;
        count += 1;
    }
    info!("wrote {count} graphs to {}", out.display());
    Ok(())
}

fn train_to<T: Real>(records: &[ClaimRecord], cfg: &TrainConfig, out: &Path, exec: Execution) -> Result<()> {
    fs::create_dir_all(out)?;
    let provider = cfg.provider(records)?;
    let mut log = BufWriter::new(File::create(out.join("train_log.jsonl"))?);
    let mut log_err = None;
    let trained = train_with::<T>(records, &provider, cfg, exec, |e| {
        info!(
            "epoch {} loss_c {:.4} loss_e {:.4} acc {:.3} lr {:.2e}",
            e.epoch, e.mean_loss_c, e.mean_loss_e, e.train_acc, e.lr
        );
        let line = serde_json::to_string(e).expect("epoch log serializes");
        if let Err(err) = writeln!(log, "{line}") {
            log_err.get_or_insert(err);
        }
    })?;
    if let Some(err) = log_err {
        return Err(err.into());
    }
    log.flush()?;
    let vocab = provider.vocab().map(|v| v.words().to_vec());
    let path = out.join("model.hfck");
    checkpoint_save(&trained.params, Some(&trained.adam), cfg, vocab.as_deref(), &path)?;
    fs::write(out.join("config.toml"), cfg.to_toml())?;
    info!("wrote {}", path.display());
    Ok(())
}

fn write_evaluation(preds: &[Prediction], report: Option<&Path>) -> Result<()> {
    let metrics = Metrics::from_predictions(preds);
    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "{}",
        serde_json::to_string_pretty(&metrics).expect("metrics serialize")
    )?;
    if let Some(path) = report {
        let body = json!({ "metrics": metrics, "predictions": preds });
        fs::write(path, serde_json::to_vec_pretty(&body).expect("report serializes"))?;
        info!("wrote report to {}", path.display());
    }
    Ok(())
}

fn inspect(ck: &Checkpoint) -> Result<()> {
    let m = &ck.meta.model;
    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "model: d={} k={} attn_hidden={} fuse_hidden={} relations={:?} activation={:?} provider={:?}",
        m.dim, m.layers, m.attn_hidden, m.fuse_hidden, m.relations, m.activation, m.provider
    )?;
    if let Some(v) = &ck.meta.vocab {
        writeln!(out, "vocab: {} words", v.len())?;
    }
    if let Some(step) = ck.meta.adam_step {
        writeln!(out, "optimizer step: {step}")?;
    }
    writeln!(out, "{:<24} {:>12} {:>14}", "parameter", "shape", "l2 norm")?;
    for (name, t) in ck.params.names().iter().zip(&ck.params.tensors) {
        let norm = t
            .data()
            .iter()
            .map(|&x| f64::from(x) * f64::from(x))
            .sum::<f64>()
            .sqrt();
        let shape = format!("{}x{}", t.rows(), t.cols());
        writeln!(out, "{name:<24} {shape:>12} {norm:>14.6}")?;
    }
    writeln!(out, "total scalars: {}", ck.params.num_scalars())?;
    Ok(())
}

fn influence<T: Real>(
    records: &[ClaimRecord],
    params: &ModelParams<T>,
    provider: &Provider,
    cfg: &TrainConfig,
) -> Result<()> {
    let graph_cfg = cfg.graph_config()?;
    let mut out = std::io::stdout().lock();
    for r in records {
        let report = influence_test(params, &evaluation_instance(r)?, provider, &graph_cfg)?;
        writeln!(out, "{}", serde_json::to_string(&report).expect("report serializes"))?;
    }
    Ok(())
}
