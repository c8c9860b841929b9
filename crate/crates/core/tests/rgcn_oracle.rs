mod common;

use common::{random_matrix, random_relations, scalar_layer, vectorized_layer};
use heterfc::model::Activation;
use heterfc::tensor::{Tape, Tensor};
use rand::Rng;

#[test]
fn vectorized_layer_matches_scalar_loops() {
    let mut rng = common::rng(2024);
    let mut worst: f64 = 0.0;
    for case in 0..1500 {
        let n = rng.gen_range(1..=8);
        let d = rng.gen_range(1..=4);
        let rels = rng.gen_range(1..=3);
        let act = if case % 2 == 0 {
            Activation::Sigmoid
        } else {
            Activation::Relu
        };
        let h = random_matrix(&mut rng, n, d);
        let relations = random_relations(&mut rng, n, rels);
        let w_r: Vec<_> = (0..rels).map(|_| random_matrix(&mut rng, d, d)).collect();
        let w_0 = random_matrix(&mut rng, d, d);
        let want = scalar_layer(&h, &relations, &w_r, &w_0, act);
        let got = vectorized_layer(&h, &relations, &w_r, &w_0, act);
        for (i, row) in want.iter().enumerate() {
            for (c, &x) in row.iter().enumerate() {
                worst = worst.max((got.get(i, c) - x).abs());
            }
        }
    }
    assert!(worst <= 1e-12, "max abs difference {worst:e}");
}

#[test]
fn gather_scatter_equals_dense_adjacency_product() {
    let mut rng = common::rng(7);
    for _ in 0..300 {
        let n = rng.gen_range(1..=10);
        let d = rng.gen_range(1..=5);
        let pairs = random_relations(&mut rng, n, 1).remove(0);
        let x = random_matrix(&mut rng, n, d);
        let tape = Tape::<f64>::new();
        let xv = tape.constant(Tensor::from_rows(&x).unwrap());
        let targets: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let sources: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let got = xv
            .gather_rows(&sources)
            .unwrap()
            .scatter_add(&targets, n)
            .unwrap()
            .value();
        let mut a = vec![vec![0.0; n]; n];
        for &(i, j) in &pairs {
            a[i][j] += 1.0;
        }
        let dense = tape
            .constant(Tensor::from_rows(&a).unwrap())
            .matmul(xv)
            .unwrap()
            .value();
        assert_eq!(got, dense);
    }
}

#[test]
fn isolated_node_keeps_only_its_self_term() {
    let h = vec![vec![0.3, -0.2], vec![1.0, 2.0]];
    let w_0 = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let w_r = vec![vec![vec![5.0, 5.0], vec![5.0, 5.0]]];
    let got = vectorized_layer(&h, &[vec![]], &w_r, &w_0, Activation::Relu);
    assert_eq!(got.row_slice(0), &[0.3, 0.0]);
    assert_eq!(got.row_slice(1), &[1.0, 2.0]);
}
