mod common;

use std::collections::HashSet;

use heterfc::corpus::EvidenceKind;
use heterfc::graph::{build_graph, EvidenceGraph, GraphConfig, RelId, StopWords};
use proptest::prelude::*;

fn pair_set(g: &EvidenceGraph, rel: RelId) -> HashSet<(usize, usize)> {
    g.edges_of(rel).iter().copied().collect()
}

fn span_kind(g: &EvidenceGraph, node: usize) -> EvidenceKind {
    g.spans[g.nodes[node].evidence].kind
}

fn same_span(g: &EvidenceGraph, u: usize, v: usize) -> bool {
    g.nodes[u].evidence == g.nodes[v].evidence
}

fn check_heterogeneous(g: &EvidenceGraph, cfg: &GraphConfig) -> Result<(), TestCaseError> {
    prop_assert_eq!(g.validate(), Ok(()));
    let rs = pair_set(g, RelId::IntraSentence);
    let rt = pair_set(g, RelId::IntraTable);
    let re = pair_set(g, RelId::InterEvidence);
    for list in &g.edges {
        let set: HashSet<_> = list.pairs.iter().copied().collect();
        prop_assert_eq!(set.len(), list.pairs.len(), "duplicate pairs");
        for &(u, v) in &list.pairs {
            prop_assert!(set.contains(&(v, u)), "asymmetric {:?}", (u, v));
            prop_assert_ne!(u, v);
        }
    }
    for u in 0..g.num_nodes {
        for v in 0..g.num_nodes {
            if u == v {
                continue;
            }
            let local = same_span(g, u, v) && g.nodes[u].position.abs_diff(g.nodes[v].position) <= cfg.window;
            let want_rs = local && span_kind(g, u) == EvidenceKind::Sentence;
            let want_rt = local && span_kind(g, u) == EvidenceKind::Cell;
            let norm = &g.nodes[u].norm;
            let want_re =
                cfg.inter_evidence && !same_span(g, u, v) && *norm == g.nodes[v].norm && !cfg.stopwords.contains(norm);
            prop_assert_eq!(rs.contains(&(u, v)), want_rs, "r_s {:?}", (u, v));
            prop_assert_eq!(rt.contains(&(u, v)), want_rt, "r_t {:?}", (u, v));
            prop_assert_eq!(re.contains(&(u, v)), want_re, "r_e {:?}", (u, v));
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn heterogeneous_edges_follow_the_rules(seed in any::<u64>(), window in 1usize..4) {
        let inst = common::random_instance(seed, 4, 7);
        let cfg = GraphConfig { window, ..GraphConfig::default() };
        let g = build_graph(&inst, &cfg).unwrap();
        check_heterogeneous(&g, &cfg)?;
    }

    #[test]
    fn stopwords_never_link_evidence(seed in any::<u64>()) {
        let inst = common::random_instance(seed, 4, 7);
        let cfg = GraphConfig::default();
        let g = build_graph(&inst, &cfg).unwrap();
        for &(u, v) in g.edges_of(RelId::InterEvidence) {
            prop_assert!(!cfg.stopwords.contains(&g.nodes[u].norm));
            prop_assert!(!cfg.stopwords.contains(&g.nodes[v].norm));
        }
        let open = GraphConfig { stopwords: StopWords::none(), ..GraphConfig::default() };
        let g2 = build_graph(&inst, &open).unwrap();
        prop_assert!(pair_set(&g, RelId::InterEvidence).is_subset(&pair_set(&g2, RelId::InterEvidence)));
    }

    #[test]
    fn homogeneous_is_the_union(seed in any::<u64>()) {
        let inst = common::random_instance(seed, 4, 7);
        let het = build_graph(&inst, &GraphConfig::default()).unwrap();
        let hom = build_graph(&inst, &GraphConfig { heterogeneous: false, ..GraphConfig::default() }).unwrap();
        prop_assert_eq!(hom.edges.len(), 1);
        prop_assert_eq!(hom.edges[0].relation, RelId::Homogeneous);
        let union: HashSet<_> = het.edges.iter().flat_map(|e| e.pairs.iter().copied()).collect();
        prop_assert_eq!(pair_set(&hom, RelId::Homogeneous), union);
        prop_assert_eq!(&hom.nodes, &het.nodes);
    }

    #[test]
    fn wide_window_equals_fully_connected_spans(seed in any::<u64>()) {
        let inst = common::random_instance(seed, 4, 7);
        let longest = build_graph(&inst, &GraphConfig::default()).unwrap().spans.iter().map(|s| s.len()).max().unwrap();
        let wide = build_graph(&inst, &GraphConfig { window: longest, ..GraphConfig::default() }).unwrap();
        let full = build_graph(&inst, &GraphConfig { fully_connected: true, ..GraphConfig::default() }).unwrap();
        prop_assert_eq!(pair_set(&wide, RelId::IntraSentence), pair_set(&full, RelId::IntraSentence));
        prop_assert_eq!(pair_set(&wide, RelId::IntraTable), pair_set(&full, RelId::IntraTable));
        prop_assert_eq!(full.validate(), Ok(()));
        let n = full.num_nodes;
        let cross = (0..n).flat_map(|u| (0..n).map(move |v| (u, v))).filter(|&(u, v)| !same_span(&full, u, v)).count();
        prop_assert_eq!(full.edges_of(RelId::InterEvidence).len(), cross);
    }

    #[test]
    fn no_inter_evidence_switch(seed in any::<u64>()) {
        let inst = common::random_instance(seed, 4, 7);
        let cfg = GraphConfig { inter_evidence: false, ..GraphConfig::default() };
        let g = build_graph(&inst, &cfg).unwrap();
        prop_assert!(g.edges_of(RelId::InterEvidence).is_empty());
        check_heterogeneous(&g, &cfg)?;
    }

    #[test]
    fn json_export_round_trips(seed in any::<u64>()) {
        let inst = common::random_instance(seed, 3, 5);
        let g = build_graph(&inst, &GraphConfig::default()).unwrap();
        let back = EvidenceGraph::from_json(&g.export(heterfc::graph::ExportFormat::Json)).unwrap();
        prop_assert_eq!(back, g);
    }
}
