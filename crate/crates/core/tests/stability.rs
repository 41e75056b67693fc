//! Fitted and stitched policies on the synthetic scenarios.

mod common;

use dsstitch_core::benchmark::{Library, LibraryOptions};
use dsstitch_core::datasets::{generate_synthetic_2d, Scenario};
use dsstitch_core::lpvds::verify_stability;
use dsstitch_core::stitching::Reuse;
use dsstitch_core::StablePolicy;
use rand::Rng;

fn check_decrease(policy: &StablePolicy, lo: &[f64], hi: &[f64], seed: u64) {
    let mut r = common::rng(seed);
    for _ in 0..10_000 {
        let x: Vec<f64> = (0..2)
            .map(|i| r.random_range(2.0 * lo[i] - hi[i]..2.0 * hi[i] - lo[i]))
            .collect();
        if x.iter()
            .zip(policy.attractor())
            .all(|(a, b)| (a - b).abs() < 1e-9)
        {
            continue;
        }
        assert!(
            policy.lyapunov_derivative(&x) < 0.0,
            "V does not decrease at {x:?}"
        );
    }
}

#[test]
fn every_learned_and_stitched_policy_is_stable() {
    for scenario in Scenario::ALL {
        let set = generate_synthetic_2d(scenario.name(), 3).unwrap();
        let (lo, hi) = set.bounding_box();
        let lib = Library::learn(set, 3, LibraryOptions::standard()).unwrap();
        let mut policies: Vec<StablePolicy> = lib.models.iter().map(|m| m.policy.clone()).collect();
        let goal = lib.set.demonstrations()[0].attractor.clone();
        for reuse in [Reuse::NoReuse, Reuse::ReuseGaussians] {
            policies.push(lib.stitch_spt(&goal, reuse, 3).unwrap().0);
        }
        for (i, p) in policies.iter().enumerate() {
            let report = verify_stability(p);
            assert!(
                report.passed,
                "{}: policy {i} margins {:?}",
                scenario.name(),
                report.margins
            );
            assert!(report.lyapunov_min_eig > 0.0);
            check_decrease(p, &lo, &hi, i as u64);
        }
    }
}

#[test]
fn bidirectional_expansion_adds_one_counterpart_per_vertex() {
    let set = generate_synthetic_2d("s-curves", 1).unwrap();
    let lib = Library::learn(set.clone(), 1, LibraryOptions::standard()).unwrap();
    let plain = dsstitch_core::GaussianGraph::build(&lib.models, Default::default()).unwrap();
    let expanded = plain.expand_bidirectional(&set).unwrap();
    let bidirectional: usize = lib
        .models
        .iter()
        .zip(set.demonstrations())
        .filter(|(_, d)| d.bidirectional)
        .map(|(m, _)| m.policy.len())
        .sum();
    assert_eq!(expanded.len(), plain.len() + bidirectional);
    for (i, v) in expanded.vertices().iter().enumerate() {
        if let Some(j) = expanded.counterpart(i) {
            let w = &expanded.vertices()[j];
            assert_eq!(v.mean(), w.mean());
            assert_eq!(v.reversed, !w.reversed);
            assert_eq!(v.dynamics, -&w.dynamics);
        }
    }
}
