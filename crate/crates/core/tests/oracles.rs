//! Library results against independent reference computations.

mod common;

use common::{random_graph, random_spd, rng};
use dsstitch_core::gmm::{bhattacharyya_coefficient, GaussianComponent};
use dsstitch_core::lpvds::{DsFitOptions, DsProblem};
use dsstitch_core::ReferencePoint;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// `BC = E_p[√(q/p)]`, sampled from `p`.
fn bc_monte_carlo(p: &GaussianComponent, q: &GaussianComponent, samples: usize, seed: u64) -> f64 {
    let d = p.dim();
    let l = p.covariance().clone().cholesky().unwrap().l();
    let mu = DVector::from_column_slice(p.mean());
    let mut r = rng(seed);
    let mut z = DVector::zeros(d);
    let mut acc = 0.0;
    for _ in 0..samples {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(&mut r);
        }
        let x = &mu + &l * &z;
        acc += (0.5 * (q.log_pdf(x.as_slice()) - p.log_pdf(x.as_slice()))).exp();
    }
    acc / samples as f64
}

#[test]
fn bhattacharyya_matches_monte_carlo() {
    let mut r = rng(11);
    for pair in 0..20 {
        let d = if pair % 2 == 0 { 2 } else { 3 };
        let cov_p = random_spd(&mut r, d, 0.5, 2.0);
        let cov_q = random_spd(&mut r, d, 0.5, 2.0);
        let mean_q: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let p = GaussianComponent::new(1.0, vec![0.0; d], cov_p).unwrap();
        let q = GaussianComponent::new(1.0, mean_q, cov_q).unwrap();
        let exact = bhattacharyya_coefficient(&p, &q).unwrap();
        let mc = bc_monte_carlo(&p, &q, 1_000_000, 100 + pair);
        let rel = (exact - mc).abs() / mc;
        assert!(
            rel < 0.02,
            "pair {pair}: closed form {exact}, monte carlo {mc}"
        );
    }
}

/// Minimum weight over all simple paths, by depth-first enumeration.
fn exhaustive(
    adj: &[Vec<(usize, f64)>],
    at: usize,
    to: usize,
    seen: &mut Vec<bool>,
    acc: f64,
    best: &mut f64,
) {
    if at == to {
        *best = best.min(acc);
        return;
    }
    for &(j, w) in &adj[at] {
        if !seen[j] {
            seen[j] = true;
            exhaustive(adj, j, to, seen, acc + w, best);
            seen[j] = false;
        }
    }
}

#[test]
fn dijkstra_matches_exhaustive_search() {
    let mut r = rng(5);
    for trial in 0..100 {
        let n = r.random_range(2..=10);
        let g = random_graph(&mut r, n, 0.35);
        let adj: Vec<Vec<(usize, f64)>> = (0..n).map(|i| g.neighbors(i).to_vec()).collect();
        let (from, to) = (r.random_range(0..n), r.random_range(0..n));
        let mut seen = vec![false; n];
        seen[from] = true;
        let mut best = f64::INFINITY;
        exhaustive(&adj, from, to, &mut seen, 0.0, &mut best);
        match g.vertex_path(from, to) {
            Ok((path, dist)) => {
                assert!(
                    (dist - best).abs() <= 1e-12 * best.max(1.0),
                    "trial {trial}: {dist} vs {best}"
                );
                assert_eq!((path[0], *path.last().unwrap()), (from, to));
                let walked: f64 = path.windows(2).map(|w| g.edge(w[0], w[1]).unwrap()).sum();
                assert!((walked - dist).abs() <= 1e-12 * dist.max(1.0));
            }
            Err(_) => assert!(
                best.is_infinite(),
                "trial {trial}: missed a path of weight {best}"
            ),
        }
    }
}

#[test]
fn reduction_preserves_distances_and_is_idempotent() {
    let mut r = rng(9);
    for _ in 0..50 {
        let n = r.random_range(2..=12);
        let g = random_graph(&mut r, n, 0.4);
        let reduced = g.reduce();
        let (a, b) = (g.all_pairs_distances(), reduced.all_pairs_distances());
        for i in 0..n {
            for j in 0..n {
                assert_eq!(a[i][j].is_finite(), b[i][j].is_finite());
                if a[i][j].is_finite() {
                    assert!((a[i][j] - b[i][j]).abs() <= 1e-12 * a[i][j].max(1.0));
                }
            }
        }
        assert!(reduced.edge_count() <= g.edge_count());
        let twice = reduced.reduce();
        assert_eq!(
            twice.edges().collect::<Vec<_>>(),
            reduced.edges().collect::<Vec<_>>()
        );
    }
}

fn problem(seed: u64) -> (DsProblem, Vec<f64>) {
    let mut r = rng(seed);
    let components = vec![
        GaussianComponent::new(0.5, vec![-1.0, 0.5], random_spd(&mut r, 2, 0.2, 1.0)).unwrap(),
        GaussianComponent::new(0.5, vec![1.0, -0.5], random_spd(&mut r, 2, 0.2, 1.0)).unwrap(),
    ];
    let points: Vec<ReferencePoint> = (0..40)
        .map(|_| {
            let x = vec![r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)];
            let v = vec![-x[0] + r.random_range(-0.3..0.3), -x[1] + 0.5 * x[0]];
            ReferencePoint::new(x, v)
        })
        .collect();
    let prob = DsProblem::new(&components, &points, &[0.2, -0.1], &DsFitOptions::default());
    let x: Vec<f64> = (0..prob.parameterization.len())
        .map(|_| r.random_range(-1.0..1.0))
        .collect();
    (prob, x)
}

#[test]
fn gradient_matches_central_differences() {
    for seed in 0..5 {
        let (prob, x) = problem(seed);
        let mut grad = vec![0.0; x.len()];
        prob.objective(&x, &mut grad);
        let mut scratch = vec![0.0; x.len()];
        let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        for i in 0..x.len() {
            let h = 1e-6 * x[i].abs().max(1.0);
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += h;
            xm[i] -= h;
            let fd =
                (prob.objective(&xp, &mut scratch) - prob.objective(&xm, &mut scratch)) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / fd.abs().max(1e-2 * scale);
            assert!(
                rel < 1e-4,
                "seed {seed}, coordinate {i}: analytic {}, numeric {fd}",
                grad[i]
            );
        }
    }
}

#[test]
fn parameterized_dynamics_are_always_stable() {
    for seed in 0..20 {
        let (prob, x) = problem(seed);
        let x: Vec<f64> = x.iter().map(|v| 5.0 * v).collect();
        let (p, dynamics) = prob.parameterization.matrices(&x, prob.decay);
        let p_eig = p.clone().symmetric_eigen().eigenvalues;
        assert!(p_eig.min() > 0.0);
        for a in dynamics {
            let q: DMatrix<f64> = a.transpose() * &p + &p * a;
            assert!(q.symmetric_eigen().eigenvalues.max() < 0.0);
        }
    }
}
