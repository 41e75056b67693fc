//! Exact values of the trigger, timer and edge weight formulas.

use dsstitch_core::chaining::{timer_duration, timer_from_speed, trigger_fired};
use dsstitch_core::graph::{edge_weight, GraphParams};
use dsstitch_core::{GaussianComponent, StablePolicy};
use nalgebra::DMatrix;

fn linear(rate: f64) -> StablePolicy {
    let c = GaussianComponent::new(1.0, vec![0.0, 0.0], DMatrix::identity(2, 2)).unwrap();
    StablePolicy::new(
        vec![c],
        vec![DMatrix::identity(2, 2) * -rate],
        DMatrix::identity(2, 2),
        vec![0.0, 0.0],
    )
    .unwrap()
}

#[test]
fn trigger_holds_with_equality_at_the_middle_anchor() {
    let (a, m, e) = ([0.0, 0.0], [3.0, 1.0], [5.0, -2.0]);
    assert!(trigger_fired(&a, &m, &e, &m));
    assert!(trigger_fired(&a, &m, &e, &e));
    assert!(!trigger_fired(&a, &m, &e, &a));
    // Just short of the middle anchor, on the way from a.
    assert!(!trigger_fired(&a, &m, &e, &[2.9, 0.95]));
}

#[test]
fn timer_is_zero_without_blending() {
    let f = linear(0.5);
    assert_eq!(
        timer_duration(&f, &f, &[1.0, 0.0], &[2.0, 0.0], 0.0, 1e-6, 100.0),
        0.0
    );
    assert_eq!(timer_from_speed(3.0, 0.1, 0.0, 1e-6, 100.0), 0.0);
}

#[test]
fn timer_of_unit_length_at_half_speed() {
    let f = linear(0.5);
    assert_eq!(
        timer_duration(&f, &f, &[1.0, 0.0], &[2.0, 0.0], 1.0, 1e-6, 100.0),
        2.0
    );
    assert_eq!(timer_from_speed(1.0, 0.5, 1.0, 1e-6, 100.0), 2.0);
}

#[test]
fn timer_saturates_at_the_cap() {
    assert_eq!(timer_from_speed(1.0, 0.0, 1.0, 1e-6, 100.0), 100.0);
    assert_eq!(timer_from_speed(1e6, 1.0, 1.0, 1e-6, 100.0), 100.0);
}

#[test]
fn weight_of_aligned_move_at_distance_two() {
    let params = GraphParams::default();
    assert_eq!((params.eta_dist, params.eta_dir), (2.0, 1.0));
    assert_eq!(
        edge_weight(&[0.0, 0.0], &[1.0, 0.0], &[2.0, 0.0], &params),
        Some(4.0)
    );
    assert_eq!(
        edge_weight(&[0.0, 0.0], &[0.0, 1.0], &[2.0, 0.0], &params),
        None
    );
}
