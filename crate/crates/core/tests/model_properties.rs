mod common;

use heterfc::embed::{Provider, Vocab};
use heterfc::graph::GraphConfig;
use heterfc::model::{forward, loss_and_grads, loss_c, loss_e, total_loss, ModelConfig, ModelParams, Prepared, Slot};
use heterfc::tensor::{Tape, Tensor};
use heterfc::train::influence_test;
use proptest::prelude::*;

fn setup(seed: u64, d: usize, k: usize, inst: &heterfc::corpus::TrainingInstance) -> (ModelParams<f64>, Prepared<f64>) {
    let provider = Provider::Hashed { dim: d, seed };
    let gc = GraphConfig::default();
    let cfg = ModelConfig::new(d, k, gc.relations(), &provider);
    let params = ModelParams::init(cfg.clone(), &provider, seed ^ 0xabc);
    let prep = Prepared::new(inst, &provider, &gc, &cfg).unwrap();
    (params, prep)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn distributions_sum_to_one(seed in any::<u64>(), d in 1usize..6, k in 1usize..4) {
        let inst = common::random_instance(seed, 5, 6);
        let (params, prep) = setup(seed, d, k, &inst);
        let out = forward(&params, &prep, 1.2).unwrap();
        prop_assert!((out.alpha.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        prop_assert!((out.p_hat.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        prop_assert!(out.alpha.iter().chain(&out.p_hat).all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert_eq!(out.alpha.len(), prep.num_evidence());
    }

    #[test]
    fn attention_is_shift_invariant(seed in any::<u64>(), shift in -50.0f64..50.0) {
        let inst = common::random_instance(seed, 5, 6);
        let (mut params, prep) = setup(seed, 4, 2, &inst);
        let base = forward(&params, &prep, 1.2).unwrap();
        params.get_mut(Slot::AttnB1).data_mut()[0] += shift;
        let moved = forward(&params, &prep, 1.2).unwrap();
        for (a, b) in base.scores.iter().zip(&moved.scores) {
            prop_assert!((b - a - shift).abs() < 1e-9);
        }
        prop_assert_eq!(argmax(&base.alpha), argmax(&moved.alpha));
        for (a, b) in base.alpha.iter().zip(&moved.alpha) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn evidence_order_does_not_change_the_verdict(seed in any::<u64>()) {
        let inst = common::random_instance(seed, 4, 5);
        let (params, prep) = setup(seed, 4, 2, &inst);
        let mut rev = inst.clone();
        rev.evidence.reverse();
        rev.evidence_labels.reverse();
        let prep_rev = Prepared::new(&rev, &Provider::Hashed { dim: 4, seed }, &GraphConfig::default(), &params.config).unwrap();
        let a = forward(&params, &prep, 1.2).unwrap();
        let b = forward(&params, &prep_rev, 1.2).unwrap();
        for (x, y) in a.p_hat.iter().zip(&b.p_hat) {
            prop_assert!((x - y).abs() < 1e-9, "{:?} vs {:?}", a.p_hat, b.p_hat);
        }
        prop_assert!((a.loss_e - b.loss_e).abs() < 1e-9);
    }

    #[test]
    fn influence_never_crosses_without_inter_evidence(seed in any::<u64>(), k in 1usize..4) {
        let inst = common::random_instance(seed, 4, 6);
        let (params, _) = setup(seed, 4, k, &inst);
        let rep = influence_test(&params, &inst, &Provider::Hashed { dim: 4, seed }, &GraphConfig::default()).unwrap();
        prop_assert_eq!(rep.delta_without_inter_evidence, 0.0);
        if rep.shared_norm.is_none() {
            prop_assert_eq!(rep.delta_with_inter_evidence, 0.0);
        }
        if k == 1 {
            if let Some(two) = &rep.two_hop {
                prop_assert_eq!(two.delta, 0.0);
            }
        }
    }
}

#[test]
fn shared_keyword_carries_influence() {
    let inst = common::toy_instance();
    let (params, _) = setup(3, 4, 2, &inst);
    let rep = influence_test(
        &params,
        &inst,
        &Provider::Hashed { dim: 4, seed: 3 },
        &GraphConfig::default(),
    )
    .unwrap();
    assert!(rep.shared_norm.is_some());
    assert!(rep.delta_with_inter_evidence > 0.0);
    assert_eq!(rep.delta_without_inter_evidence, 0.0);
}

#[test]
fn two_hops_need_two_layers() {
    let inst = common::two_hop_instance();
    for (k, reaches) in [(1, false), (2, true)] {
        let (params, _) = setup(5, 4, k, &inst);
        let rep = influence_test(
            &params,
            &inst,
            &Provider::Hashed { dim: 4, seed: 5 },
            &GraphConfig::default(),
        )
        .unwrap();
        let two = rep.two_hop.expect("window neighbour exists");
        assert_eq!(two.norm, "hosts");
        assert_eq!(two.delta > 0.0, reaches, "k={k}: {}", two.delta);
    }
}

#[test]
fn loss_reference_values() {
    let tape = Tape::<f64>::new();
    let uniform = tape.constant(Tensor::row(vec![1.0 / 3.0; 3]));
    for label in heterfc::corpus::Label::ALL {
        let l = loss_c(uniform, label).unwrap().value().item();
        assert!((l - 3f64.ln()).abs() <= 1e-9);
    }
    let g0 = tape.constant(Tensor::scalar(0.0));
    for t in [0, 1] {
        assert!((loss_e(g0, &[t]).unwrap().value().item() - 2f64.ln()).abs() <= 1e-9);
    }
    let lc = loss_c(uniform, heterfc::corpus::Label::Supported).unwrap();
    let le = loss_e(g0, &[1]).unwrap();
    assert_eq!(total_loss(lc, le, 0.0).unwrap().value().item(), lc.value().item());
}

#[test]
fn zero_beta_removes_the_evidence_loss_from_gradients() {
    let inst = common::toy_instance();
    let (params, prep) = setup(1, 4, 2, &inst);
    let (out0, g0) = loss_and_grads(&params, &prep, 0.0).unwrap();
    assert_eq!(out0.total, out0.loss_c);
    assert!(out0.loss_e > 0.0);
    let mut relabelled = prep.clone();
    for t in &mut relabelled.evidence_labels {
        *t = 1 - *t;
    }
    let (_, g1) = loss_and_grads(&params, &relabelled, 0.0).unwrap();
    assert_eq!(g0, g1);
    let (_, g2) = loss_and_grads(&params, &relabelled, 1.2).unwrap();
    assert_ne!(g0, g2);
}

#[test]
fn table_provider_gradients_reach_the_table() {
    let inst = common::toy_instance();
    let vocab = Vocab::new(["ulm", "einstein", "born", "museum"].map(String::from));
    let provider = Provider::Table { dim: 4, seed: 2, vocab };
    let gc = GraphConfig::default();
    let cfg = ModelConfig::new(4, 2, gc.relations(), &provider);
    let params = ModelParams::<f64>::init(cfg.clone(), &provider, 2);
    let prep = Prepared::new(&inst, &provider, &gc, &cfg).unwrap();
    let (_, grads) = loss_and_grads(&params, &prep, 1.2).unwrap();
    let table_grad = &grads[cfg.index(Slot::Table)];
    let lookup = |w: &str| provider.vocab().unwrap().lookup(w);
    assert!(table_grad.row_slice(lookup("ulm")).iter().any(|&x| x != 0.0));
    assert!(
        table_grad.row_slice(lookup("hosts")).iter().any(|&x| x != 0.0),
        "unknown words share the <unk> row"
    );
}
