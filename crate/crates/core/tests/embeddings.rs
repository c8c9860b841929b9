mod common;

use heterfc::config::TrainConfig;
use heterfc::corpus::evaluation_instance;
use heterfc::embed::template::hashed_export;
use heterfc::embed::{token_key, EmbedError, EmbeddingFile, Provider, ProviderKind};
use heterfc::graph::{Granularity, GraphConfig};
use heterfc::train::synthetic::synthetic_claims;
use heterfc::train::{evaluate, train};
use heterfc::Execution;
use proptest::collection::{btree_map, vec};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn file_round_trips_bit_exactly(
        dim in 1usize..6,
        entries in btree_map("[a-z:]{1,12}", vec(-1e6f32..1e6f32, 5), 0..20),
    ) {
        let mut f = EmbeddingFile::new(dim);
        for (k, v) in &entries {
            f.insert(k.clone(), v[..dim].to_vec()).unwrap();
        }
        let bytes = f.to_bytes();
        let back = EmbeddingFile::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &f);
        prop_assert_eq!(back.to_bytes(), bytes.clone());
        for cut in [0, bytes.len() / 3, bytes.len().saturating_sub(1)] {
            if cut < bytes.len() {
                prop_assert!(EmbeddingFile::from_bytes(&bytes[..cut]).is_err());
            }
        }
    }
}

fn file_provider(dim: usize) -> (Vec<heterfc::corpus::ClaimRecord>, Provider) {
    let recs = synthetic_claims(9, 21);
    let (manifest, store) = hashed_export(&recs, dim, 3).unwrap();
    let bytes = store.to_bytes();
    let store = EmbeddingFile::from_bytes(&bytes).unwrap();
    let manifest = heterfc::embed::Manifest::from_json(&manifest.to_json()).unwrap();
    (recs, Provider::from_file(store, manifest).unwrap())
}

#[test]
fn word_nodes_are_subword_means() {
    let (recs, provider) = file_provider(4);
    let Provider::File { store, manifest } = &provider else {
        unreachable!()
    };
    let gc = GraphConfig::default();
    for r in &recs {
        let inst = evaluation_instance(r).unwrap();
        let g = provider.build_graph(&inst, &gc).unwrap();
        let h0 = provider
            .node_embeddings::<f64>(&inst, &g, Granularity::Word, None)
            .unwrap();
        for (i, node) in g.nodes.iter().enumerate() {
            let item = &inst.evidence[g.spans[node.evidence].evidence_index];
            let align = manifest.evidence(&r.claim_id, &item.id).unwrap();
            let members: Vec<usize> = (0..align.tokens.len())
                .filter(|&k| align.tokens[k].word == Some(node.source_index))
                .collect();
            assert!(!members.is_empty());
            for c in 0..4 {
                let mean = members
                    .iter()
                    .map(|&k| f64::from(store.get(&token_key(&r.claim_id, align.ev_idx, k)).unwrap()[c]))
                    .sum::<f64>()
                    / members.len() as f64;
                assert!((h0.get(i, c) - mean).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn trains_end_to_end_on_file_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let recs = synthetic_claims(9, 21);
    let (manifest, store) = hashed_export(&recs, 8, 3).unwrap();
    let store_path = dir.path().join("emb.hfce");
    let manifest_path = dir.path().join("emb.json");
    std::fs::write(&store_path, store.to_bytes()).unwrap();
    std::fs::write(&manifest_path, manifest.to_json()).unwrap();
    for granularity in [Granularity::Word, Granularity::Token] {
        let cfg = TrainConfig {
            provider: ProviderKind::File,
            embedding_file: Some(store_path.clone()),
            manifest_file: Some(manifest_path.clone()),
            granularity,
            d: 8,
            epochs: 2,
            ..TrainConfig::default()
        };
        let provider = cfg.provider(&recs).unwrap();
        let t = train::<f32>(&recs, &provider, &cfg, Execution::default()).unwrap();
        assert_eq!(t.log.len(), 2);
        assert!(!t.params.names().iter().any(|n| n.starts_with("embed.")));
        let m = evaluate(&recs, &t.params, &provider, &cfg, Execution::default()).unwrap();
        assert_eq!(m.claims, 9);
    }
}

#[test]
fn token_graphs_have_one_node_per_piece() {
    let (recs, provider) = file_provider(4);
    let inst = evaluation_instance(&recs[0]).unwrap();
    let word = provider.build_graph(&inst, &GraphConfig::default()).unwrap();
    let token = provider
        .build_graph(
            &inst,
            &GraphConfig {
                granularity: Granularity::Token,
                ..GraphConfig::default()
            },
        )
        .unwrap();
    assert!(token.num_nodes > word.num_nodes);
    assert_eq!(token.validate(), Ok(()));
}

#[test]
fn missing_alignment_is_reported() {
    let (mut recs, provider) = file_provider(4);
    recs[0].retrieved[0].id = "unknown".into();
    let inst = evaluation_instance(&recs[0]).unwrap();
    let g = provider.build_graph(&inst, &GraphConfig::default()).unwrap();
    let err = provider.features::<f32>(&inst, &g, Granularity::Word).unwrap_err();
    assert!(matches!(err, EmbedError::MissingAlignment { .. }), "{err}");
}

#[test]
fn missing_vector_is_reported() {
    let recs = synthetic_claims(3, 21);
    let (manifest, full) = hashed_export(&recs, 4, 3).unwrap();
    let mut partial = EmbeddingFile::new(4);
    for k in full.keys().filter(|k| !k.starts_with("cls:")) {
        partial.insert(k, full.get(k).unwrap().to_vec()).unwrap();
    }
    let provider = Provider::from_file(partial, manifest).unwrap();
    let inst = evaluation_instance(&recs[0]).unwrap();
    let g = provider.build_graph(&inst, &GraphConfig::default()).unwrap();
    match provider.features::<f32>(&inst, &g, Granularity::Word) {
        Err(EmbedError::MissingKey(k)) => assert_eq!(k, format!("cls:{}", recs[0].claim_id)),
        other => panic!("expected MissingKey, got {other:?}"),
    }
}

#[test]
fn token_granularity_needs_a_file() {
    let inst = common::toy_instance();
    let provider = Provider::Hashed { dim: 4, seed: 0 };
    let cfg = GraphConfig {
        granularity: Granularity::Token,
        ..GraphConfig::default()
    };
    assert!(matches!(
        provider.build_graph(&inst, &cfg),
        Err(heterfc::Error::Embed(EmbedError::TokenGranularityUnsupported))
    ));
}
