mod common;

use heterfc::config::{Precision, TrainConfig};
use heterfc::embed::ProviderKind;
use heterfc::model::{ModelParams, Prepared, Slot};
use heterfc::train::synthetic::synthetic_claims;
use heterfc::train::{
    adam_step, batch_gradients, checkpoint_load, checkpoint_save, checkpoint_to_bytes, evaluate, predict, prepare_all,
    train, train_from, training_instances, AdamState, GroupRates, Metrics, Shuffler,
};
use heterfc::{Error, Execution};

fn small_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        d: 8,
        batch_size: 4,
        precision: Precision::F64,
        ..TrainConfig::default()
    }
}

#[test]
fn same_seed_gives_bit_identical_runs() {
    let recs = synthetic_claims(12, 4);
    let cfg = small_cfg();
    let provider = cfg.provider(&recs).unwrap();
    let a = train::<f64>(&recs, &provider, &cfg, Execution::default()).unwrap();
    let b = train::<f64>(&recs, &provider, &cfg, Execution::Sequential).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.log, b.log);
    let bytes = |t: &heterfc::train::Trained<f64>| checkpoint_to_bytes(&t.params, Some(&t.adam), &cfg, None);
    assert_eq!(bytes(&a), bytes(&b));

    let other = TrainConfig { seed: 1, ..cfg.clone() };
    let c = train::<f64>(&recs, &provider, &other, Execution::default()).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn fixed_batch_loss_decreases() {
    let recs = synthetic_claims(8, 2);
    let cfg = TrainConfig {
        d: 16,
        ..TrainConfig::default()
    };
    let provider = cfg.provider(&recs).unwrap();
    let gc = cfg.graph_config().unwrap();
    let mc = cfg.model_config(&gc, &provider);
    let inst = training_instances(&recs).unwrap();
    let prepared: Vec<Prepared<f32>> = prepare_all(&inst, &provider, &gc, &mc, Execution::default()).unwrap();
    let batch: Vec<&Prepared<f32>> = prepared.iter().take(8).collect();
    let mut params = ModelParams::<f32>::init(mc, &provider, 0);
    let mut state = AdamState::new(&params);
    let mut losses = Vec::new();
    for _ in 0..=10 {
        let (outs, grads) = batch_gradients(&params, &batch, 1.2, Execution::default()).unwrap();
        losses.push(outs.iter().map(|o| f64::from(o.total)).sum::<f64>() / outs.len() as f64);
        adam_step(
            &mut params,
            &grads,
            &mut state,
            GroupRates {
                model: 1e-3,
                embedding: 1e-5,
            },
        );
    }
    assert!(losses[10] < losses[0], "{losses:?}");
    let drops = losses.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(drops >= 8, "{losses:?}");
}

#[test]
fn shuffles_are_permutations() {
    let mut s = Shuffler::new(50, 9);
    let first = s.next_epoch().to_vec();
    let second = s.next_epoch().to_vec();
    for order in [&first, &second] {
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }
    assert_ne!(first, second);
    assert_eq!(Shuffler::new(50, 9).next_epoch(), first.as_slice());
}

#[test]
fn training_log_has_one_entry_per_epoch() {
    let recs = synthetic_claims(9, 1);
    let cfg = small_cfg();
    let provider = cfg.provider(&recs).unwrap();
    let t = train::<f32>(&recs, &provider, &cfg, Execution::default()).unwrap();
    assert_eq!(t.log.len(), 3);
    for (i, e) in t.log.iter().enumerate() {
        assert_eq!(e.epoch, i);
        assert!(e.mean_loss_c > 0.0 && e.mean_loss_e > 0.0 && e.lr > 0.0);
        assert!((0.0..=1.0).contains(&e.train_acc));
        let line = serde_json::to_value(e).unwrap();
        for key in ["epoch", "mean_loss_c", "mean_loss_e", "train_acc", "lr"] {
            assert!(line.get(key).is_some());
        }
    }
}

#[test]
fn table_provider_trains_its_embeddings() {
    let recs = synthetic_claims(6, 3);
    let cfg = TrainConfig {
        provider: ProviderKind::Table,
        lr_embed: 1e-2,
        ..small_cfg()
    };
    let provider = cfg.provider(&recs).unwrap();
    let init = ModelParams::<f32>::init(
        cfg.model_config(&cfg.graph_config().unwrap(), &provider),
        &provider,
        cfg.seed,
    );
    let t = train::<f32>(&recs, &provider, &cfg, Execution::default()).unwrap();
    assert_ne!(t.params.get(Slot::Table), init.get(Slot::Table));
}

#[test]
fn nan_parameters_are_reported() {
    let recs = synthetic_claims(3, 0);
    let cfg = small_cfg();
    let provider = cfg.provider(&recs).unwrap();
    let mc = cfg.model_config(&cfg.graph_config().unwrap(), &provider);
    let mut params = ModelParams::<f32>::init(mc, &provider, 0);
    params.get_mut(Slot::FuseB1).data_mut()[0] = f32::NAN;
    let adam = AdamState::new(&params);
    let err = train_from(
        &recs,
        &provider,
        &cfg,
        Execution::default(),
        Some((params, adam)),
        |_| {},
    )
    .unwrap_err();
    assert!(matches!(err, Error::NonFinite { .. }), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.hfck");
    let recs = synthetic_claims(6, 5);
    let cfg = TrainConfig {
        provider: ProviderKind::Table,
        ..small_cfg()
    };
    let provider = cfg.provider(&recs).unwrap();
    let t = train::<f32>(&recs, &provider, &cfg, Execution::default()).unwrap();
    let words = provider.vocab().unwrap().words().to_vec();
    checkpoint_save(&t.params, Some(&t.adam), &cfg, Some(&words), &path).unwrap();
    let ck = checkpoint_load(&path).unwrap();
    assert_eq!(ck.params, t.params);
    assert_eq!(ck.adam.as_ref(), Some(&t.adam));
    assert_eq!(ck.meta.train, cfg);
    assert_eq!(ck.meta.vocab.as_deref(), Some(words.as_slice()));
}

#[test]
fn metric_fixture_counts_exactly() {
    let mut recs = synthetic_claims(6, 8);
    recs.retain(|r| r.label == heterfc::corpus::Label::Supported);
    recs.truncate(2);
    recs[1].retrieved.retain(|e| !e.gold || e.id.ends_with("_s0"));
    assert!(recs[0].golden_retrieved() && !recs[1].golden_retrieved());

    let cfg = small_cfg();
    let provider = cfg.provider(&recs).unwrap();
    let mc = cfg.model_config(&cfg.graph_config().unwrap(), &provider);
    let mut params = ModelParams::<f64>::zeros(mc);
    params
        .get_mut(Slot::FuseB1)
        .data_mut()
        .copy_from_slice(&[5.0, 0.0, 0.0]);
    let m = evaluate(&recs, &params, &provider, &cfg, Execution::default()).unwrap();
    assert_eq!(m.label_accuracy, 1.0);
    assert_eq!(m.feverous_score, 0.5);
    assert_eq!(m.confusion[0][0], 2);
}

#[test]
fn score_never_exceeds_accuracy() {
    let recs = synthetic_claims(30, 6);
    let cfg = small_cfg();
    let provider = cfg.provider(&recs).unwrap();
    for seed in 0..5 {
        let mc = cfg.model_config(&cfg.graph_config().unwrap(), &provider);
        let params = ModelParams::<f32>::init(mc, &provider, seed);
        let preds = predict(&recs, &params, &provider, &cfg, Execution::default()).unwrap();
        let m = Metrics::from_predictions(&preds);
        assert!(0.0 <= m.feverous_score && m.feverous_score <= m.label_accuracy && m.label_accuracy <= 1.0);
        assert_eq!(m.confusion.iter().flatten().sum::<usize>(), 30);
    }
}
