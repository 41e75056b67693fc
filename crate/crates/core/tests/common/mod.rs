#![allow(dead_code)]

use dsstitch_core::graph::{GaussianGraph, GraphParams, GraphVertex};
use dsstitch_core::GaussianComponent;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random SPD matrix with eigenvalues in roughly `[lo, hi]`.
pub fn random_spd(rng: &mut impl Rng, d: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let q = a.qr().q();
    let eig = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(d, |_, _| {
        rng.random_range(lo..hi)
    }));
    let m = &q * eig * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// Vertex at `mean` with unit covariance; only its position matters.
pub fn dummy_vertex(mean: Vec<f64>) -> GraphVertex {
    let d = mean.len();
    GraphVertex {
        component: GaussianComponent::new(1.0, mean.clone(), DMatrix::identity(d, d)).unwrap(),
        dynamics: -DMatrix::identity(d, d),
        direction: vec![1.0; d],
        demo: "t".into(),
        component_index: 0,
        reversed: false,
        cluster: Vec::new(),
        attractor: vec![0.0; d],
    }
}

/// Random directed graph with `n` vertices and edge probability `p`.
pub fn random_graph(rng: &mut impl Rng, n: usize, p: f64) -> GaussianGraph {
    let vertices = (0..n).map(|i| dummy_vertex(vec![i as f64, 0.0])).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random_bool(p) {
                edges.push((i, j, rng.random_range(0.1..10.0)));
            }
        }
    }
    GaussianGraph::from_parts(vertices, edges, GraphParams::default()).unwrap()
}
