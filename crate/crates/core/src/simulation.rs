//! Euler rollouts of policies and chains, and the evaluation metrics.

use alloc::vec;
use alloc::vec::Vec;

use crate::chaining::{ChainExecState, DsChain, Mode};
use crate::datasets::{DemonstrationSet, ReferencePoint};
use crate::graph::GaussianGraph;
use crate::lpvds::StablePolicy;
use crate::math;
use crate::spatial::KdTree;
use crate::stitching;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub dt: f64,
    pub t_max: f64,
    /// Success radius around the goal.
    pub eps_goal: f64,
    /// Per-step speed cap.
    pub v_max: f64,
}

impl SimOptions {
    pub fn new(dt: f64, t_max: f64, eps_goal: f64, v_max: f64) -> Self {
        Self {
            dt,
            t_max,
            eps_goal,
            v_max,
        }
    }

    /// `dt = 0.01 s`, `t_max = 1000 s`, `ε_goal` 1% of the bounding-box
    /// diagonal and `v_max` ten times the mean demonstrated speed.
    pub fn for_dataset(set: &DemonstrationSet) -> Self {
        Self::new(0.01, 1000.0, 0.01 * set.diagonal(), 10.0 * set.mean_speed())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter("dt must be positive"));
        }
        if !(self.t_max >= self.dt) {
            return Err(Error::InvalidParameter("t_max must be at least dt"));
        }
        if !(self.eps_goal > 0.0) {
            return Err(Error::InvalidParameter("eps_goal must be positive"));
        }
        if !(self.v_max > 0.0) {
            return Err(Error::InvalidParameter("v_max must be positive"));
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        libm::ceil(self.t_max / self.dt - 1e-9) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    /// Sample `k` is at time `k · dt`.
    pub positions: Vec<Vec<f64>>,
    /// Executed (capped) velocity at each sample; zero at the last one.
    pub velocities: Vec<Vec<f64>>,
    pub dt: f64,
    pub success: bool,
    pub time_to_goal: Option<f64>,
    /// Distinct chain modes in the order visited (empty for policies).
    pub modes: Vec<Mode>,
}

impl SimulationResult {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.positions.len()).map(move |k| k as f64 * self.dt)
    }

    pub fn final_position(&self) -> &[f64] {
        self.positions
            .last()
            .expect("a rollout has at least one sample")
    }

    /// True when no mode is revisited and modes only move forward.
    pub fn modes_monotone(&self) -> bool {
        self.modes.windows(2).all(|w| w[0] < w[1])
    }
}

fn cap_speed(v: &mut [f64], v_max: f64) {
    let s = math::norm(v);
    if s > v_max {
        let k = v_max / s;
        v.iter_mut().for_each(|c| *c *= k);
    }
}

/// Generic Euler loop: `field(x, t)` returns the velocity and whether the
/// controller is in a state where reaching the goal counts.
fn integrate<F>(x0: &[f64], goal: &[f64], opts: &SimOptions, mut field: F) -> SimulationResult
where
    F: FnMut(&[f64], f64) -> (Vec<f64>, bool),
{
    let mut positions = vec![x0.to_vec()];
    let mut velocities = Vec::new();
    let mut x = x0.to_vec();
    let steps = opts.steps();
    let mut success = false;
    let mut time_to_goal = None;
    for k in 0..=steps {
        let t = k as f64 * opts.dt;
        let (mut v, terminal) = field(&x, t);
        if terminal && math::dist(&x, goal) < opts.eps_goal {
            success = true;
            time_to_goal = Some(t);
            break;
        }
        if k == steps || !math::all_finite(&v) {
            break;
        }
        cap_speed(&mut v, opts.v_max);
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi += opts.dt * vi;
        }
        velocities.push(v);
        positions.push(x.clone());
    }
    velocities.push(vec![0.0; x0.len()]);
    SimulationResult {
        positions,
        velocities,
        dt: opts.dt,
        success,
        time_to_goal,
        modes: Vec::new(),
    }
}

pub fn simulate_policy(policy: &StablePolicy, x0: &[f64], opts: &SimOptions) -> SimulationResult {
    let mut gamma = vec![0.0; policy.len()];
    integrate(x0, policy.attractor(), opts, |x, _| {
        let mut v = vec![0.0; x.len()];
        policy.evaluate_into(x, &mut gamma, &mut v);
        (v, true)
    })
}

/// Rolls out a chain from `s_1`. Success requires the terminal mode.
pub fn simulate_chain(chain: &DsChain, x0: &[f64], opts: &SimOptions) -> SimulationResult {
    let mut state = ChainExecState::initial(0.0);
    let mut modes = vec![state.mode];
    let terminal = chain.terminal_mode();
    let mut result = integrate(x0, chain.goal(), opts, |x, t| {
        let (v, next) = chain.step(state, x, t);
        if next.mode != state.mode {
            // Record every mode passed through, including zero-length ones.
            let mut m = state.mode;
            while m != next.mode {
                m = match m {
                    Mode::Nominal(i) => Mode::Transition(i),
                    Mode::Transition(i) => Mode::Nominal(i + 1),
                };
                modes.push(m);
            }
        }
        state = next;
        (v, state.mode == terminal)
    });
    result.modes = modes;
    result
}

/// First time the rollout of `policy` from `x0` satisfies `predicate`.
pub fn first_time<P>(
    policy: &StablePolicy,
    x0: &[f64],
    opts: &SimOptions,
    mut predicate: P,
) -> Option<f64>
where
    P: FnMut(&[f64]) -> bool,
{
    let mut gamma = vec![0.0; policy.len()];
    let mut v = vec![0.0; x0.len()];
    let mut x = x0.to_vec();
    for k in 0..=opts.steps() {
        if predicate(&x) {
            return Some(k as f64 * opts.dt);
        }
        policy.evaluate_into(&x, &mut gamma, &mut v);
        cap_speed(&mut v, opts.v_max);
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi += opts.dt * vi;
        }
    }
    None
}

/// Root mean squared velocity error of `policy` over `points`.
pub fn velocity_rmse(policy: &StablePolicy, points: &[ReferencePoint]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptySelection);
    }
    Ok(libm::sqrt(crate::lpvds::mean_squared_error(policy, points)))
}

/// Chain RMSE over the data of its vertex path; see
/// [`DsChain::scoring_velocity`] for which policy scores which point.
pub fn chain_velocity_rmse(
    chain: &DsChain,
    graph: &GaussianGraph,
    set: &DemonstrationSet,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (j, &v) in chain.vertices().iter().enumerate() {
        for p in stitching::vertex_points(graph, v, set)? {
            let f = chain.scoring_velocity(j, &p.position);
            total += f
                .iter()
                .zip(&p.velocity)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptySelection);
    }
    Ok(libm::sqrt(total / count as f64))
}

/// Nearest-neighbour statistics of a dataset for scoring data support.
#[derive(Debug, Clone)]
pub struct SupportModel {
    tree: KdTree,
    /// Mean distance from a reference point to the nearest point of a
    /// different trajectory.
    pub mu: f64,
    /// Population standard deviation of the same distances.
    pub sigma: f64,
}

impl SupportModel {
    pub fn new(set: &DemonstrationSet) -> Result<Self> {
        let mut coords = Vec::new();
        let mut labels = Vec::new();
        let mut label = 0;
        for demo in set.demonstrations() {
            for traj in &demo.trajectories {
                for p in &traj.points {
                    coords.push(p.position.clone());
                    labels.push(label);
                }
                label += 1;
            }
        }
        if coords.is_empty() {
            return Err(Error::EmptySelection);
        }
        let tree = KdTree::new(
            coords.iter().map(Vec::as_slice),
            labels.clone(),
            set.dimension(),
        );
        let dists: Vec<f64> = coords
            .iter()
            .zip(&labels)
            .filter_map(|(c, &l)| tree.nearest_other_label(c, l).map(|(_, d)| d))
            .collect();
        if dists.is_empty() {
            // A single trajectory has no inter-trajectory distances.
            return Err(Error::DegenerateData);
        }
        let n = dists.len() as f64;
        let mu = dists.iter().sum::<f64>() / n;
        let var = dists.iter().map(|d| (d - mu) * (d - mu)).sum::<f64>() / n;
        Ok(Self {
            tree,
            mu,
            sigma: libm::sqrt(var),
        })
    }

    /// True when `σ = 0` and scoring falls back to a hard threshold.
    pub fn is_degenerate(&self) -> bool {
        self.sigma == 0.0
    }

    pub fn score_distance(&self, d: f64) -> f64 {
        if d < self.mu {
            1.0
        } else if self.is_degenerate() {
            0.0
        } else {
            let z = (d - self.mu) / self.sigma;
            libm::exp(-0.5 * z * z)
        }
    }

    pub fn score_point(&self, x: &[f64]) -> f64 {
        let d = self
            .tree
            .nearest(x)
            .map(|(_, d)| d)
            .unwrap_or(f64::INFINITY);
        self.score_distance(d)
    }

    /// Mean point score of a trajectory (0 for an empty one).
    pub fn data_support<'a, I>(&self, trajectory: I) -> f64
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let (sum, n) = trajectory
            .into_iter()
            .fold((0.0, 0usize), |(s, n), x| (s + self.score_point(x), n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

pub fn data_support(trajectory: &[Vec<f64>], set: &DemonstrationSet) -> Result<f64> {
    let model = SupportModel::new(set)?;
    Ok(model.data_support(trajectory.iter().map(Vec::as_slice)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::GaussianComponent;
    use nalgebra::DMatrix;

    fn decay() -> StablePolicy {
        let comp = GaussianComponent::new(1.0, vec![0.0, 0.0], DMatrix::identity(2, 2)).unwrap();
        StablePolicy::new(
            vec![comp],
            vec![-DMatrix::identity(2, 2)],
            DMatrix::identity(2, 2),
            vec![0.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn exponential_decay_time() {
        let eps = 0.01;
        let res = simulate_policy(
            &decay(),
            &[1.0, 0.0],
            &SimOptions::new(0.01, 1000.0, eps, 100.0),
        );
        assert!(res.success);
        let expected = libm::log(1.0 / eps);
        assert!((res.time_to_goal.unwrap() - expected).abs() < 0.05 * expected);
    }

    #[test]
    fn zero_field_times_out_and_start_at_goal_succeeds() {
        let comp = GaussianComponent::new(1.0, vec![0.0, 0.0], DMatrix::identity(2, 2)).unwrap();
        let zero = StablePolicy::new(
            vec![comp],
            vec![DMatrix::zeros(2, 2)],
            DMatrix::identity(2, 2),
            vec![0.0, 0.0],
        )
        .unwrap();
        let opts = SimOptions::new(0.1, 10.0, 0.01, 1.0);
        let res = simulate_policy(&zero, &[1.0, 0.0], &opts);
        assert!(!res.success);
        assert_eq!(res.positions.len(), 101);
        let res = simulate_policy(&decay(), &[0.0, 0.0], &opts);
        assert!(res.success);
        assert_eq!(res.time_to_goal, Some(0.0));
    }

    #[test]
    fn speed_cap_applies() {
        let res = simulate_policy(
            &decay(),
            &[100.0, 0.0],
            &SimOptions::new(0.01, 1.0, 0.01, 2.0),
        );
        assert!(res.velocities.iter().all(|v| math::norm(v) <= 2.0 + 1e-12));
    }

    #[test]
    fn rmse_of_offset_field() {
        let pts: Vec<ReferencePoint> = (0..10)
            .map(|i| {
                let x = vec![i as f64, 1.0];
                let v = vec![-x[0] - 0.3, -x[1]];
                ReferencePoint::new(x, v)
            })
            .collect();
        assert!((velocity_rmse(&decay(), &pts).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(
            velocity_rmse(&decay(), &[]).unwrap_err(),
            Error::EmptySelection
        );
    }
}
