//! DS-Chains: hybrid automata that sequence local stable policies.
//!
//! A chain holds policies `f_1 … f_N`, one trigger and one timer per
//! transition. The automaton runs
//!
//! ```text
//! s_1 --γ_1--> s_1' --τ_1--> s_2 --γ_2--> … --τ_{N-1}--> s_N
//! ```
//!
//! In nominal mode `s_i` the velocity is `f_i(x)`. Trigger `γ_i` fires once
//! `x` has passed the middle anchor of its vertex triplet. In the
//! intermediate mode `s_i'` the velocity blends linearly from `f_i` to
//! `f_{i+1}` over `T_i` seconds. `f_N` is stable at the goal, so every run
//! ends there.
//!
//! Built from a vertex path `⟨v_1 … v_M⟩`, policy `f_i` is fitted on the
//! triplet `(v_i, v_{i+1}, v_{i+2})` and is stable at `μ_{i+2}`. The goal
//! policy `f*` uses the last two vertices.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::datasets::{DemonstrationSet, ReferencePoint};
use crate::gmm::MixtureFit;
use crate::graph::GaussianGraph;
use crate::lpvds::{self, StablePolicy};
use crate::math;
use crate::simulation::{self, SimOptions};
use crate::stitching::{self, Reuse, StitchOptions};
use crate::{Error, Result};

/// `‖x - μ_i‖ / ‖x - μ_{i+2}‖ ≥ ‖μ_{i+1} - μ_i‖ / ‖μ_{i+1} - μ_{i+2}‖`,
/// true at `x = μ_{i+2}`.
pub fn trigger_fired(mu_i: &[f64], mu_mid: &[f64], mu_end: &[f64], x: &[f64]) -> bool {
    let to_end = math::dist(x, mu_end);
    if to_end == 0.0 {
        return true;
    }
    let lhs = math::dist(x, mu_i) / to_end;
    let rhs = math::dist(mu_mid, mu_i) / math::dist(mu_mid, mu_end);
    lhs >= rhs
}

/// `α ‖μ_{i+2} - μ_{i+1}‖ / (‖f_i(μ_{i+1}) + f_{i+1}(μ_{i+1})‖ / 2)`.
///
/// Returns `cap` when the average speed is below `v_floor`; the result never
/// exceeds `cap`.
pub fn timer_duration(
    f_i: &StablePolicy,
    f_next: &StablePolicy,
    mu_mid: &[f64],
    mu_end: &[f64],
    alpha: f64,
    v_floor: f64,
    cap: f64,
) -> f64 {
    let a = f_i.evaluate(mu_mid);
    let b = f_next.evaluate(mu_mid);
    let speed = math::norm(&math::add(&a, &b)) / 2.0;
    timer_from_speed(math::dist(mu_end, mu_mid), speed, alpha, v_floor, cap)
}

/// The timer formula given the averaged speed directly.
pub fn timer_from_speed(length: f64, speed: f64, alpha: f64, v_floor: f64, cap: f64) -> f64 {
    if alpha == 0.0 {
        return 0.0;
    }
    if !(speed >= v_floor) || speed == 0.0 {
        return cap;
    }
    (alpha * length / speed).min(cap)
}

/// `(1 - s) f_i(x) + s f_{i+1}(x)` with `s = min(elapsed / T, 1)`.
pub fn transition_velocity(
    f_i: &StablePolicy,
    f_next: &StablePolicy,
    x: &[f64],
    elapsed: f64,
    duration: f64,
) -> Vec<f64> {
    let s = if duration <= 0.0 {
        1.0
    } else {
        (elapsed / duration).clamp(0.0, 1.0)
    };
    blend(f_i, f_next, x, s)
}

fn blend(f_i: &StablePolicy, f_next: &StablePolicy, x: &[f64], s: f64) -> Vec<f64> {
    if s >= 1.0 {
        return f_next.evaluate(x);
    }
    if s <= 0.0 {
        return f_i.evaluate(x);
    }
    let a = f_i.evaluate(x);
    let b = f_next.evaluate(x);
    a.iter()
        .zip(&b)
        .map(|(u, v)| (1.0 - s) * u + s * v)
        .collect()
}

/// Automaton mode, 0-based: `Nominal(i)` is `s_{i+1}`, `Transition(i)` is
/// `s_{i+1}'`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Nominal(usize),
    Transition(usize),
}

impl Mode {
    /// Position in the linear order `s_1 < s_1' < s_2 < …`.
    pub fn ordinal(&self) -> usize {
        match *self {
            Mode::Nominal(i) => 2 * i,
            Mode::Transition(i) => 2 * i + 1,
        }
    }
}

impl PartialOrd for Mode {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Mode {
    fn cmp(&self, other: &Self) -> core::cmp::Ordering {
        self.ordinal().cmp(&other.ordinal())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainExecState {
    pub mode: Mode,
    /// Time at which the current mode was entered.
    pub entered_at: f64,
}

impl ChainExecState {
    pub fn initial(t0: f64) -> Self {
        Self {
            mode: Mode::Nominal(0),
            entered_at: t0,
        }
    }
}

/// Table key of a segment policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SegmentKey {
    pub vertices: [usize; 3],
    pub reuse: Reuse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DsChain {
    policies: Vec<StablePolicy>,
    /// Anchors `(μ_i, μ_{i+1}, μ_{i+2})` per transition.
    triggers: Vec<[Vec<f64>; 3]>,
    timers: Vec<f64>,
    alpha: f64,
    goal: Vec<f64>,
    has_initial: bool,
    /// Vertex path the chain was built from.
    vertices: Vec<usize>,
    /// Table key of each policy that came from a segment.
    segment_keys: Vec<Option<SegmentKey>>,
}

impl DsChain {
    /// Assembles a chain, checking the structural invariants.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        policies: Vec<StablePolicy>,
        triggers: Vec<[Vec<f64>; 3]>,
        timers: Vec<f64>,
        alpha: f64,
        goal: Vec<f64>,
        has_initial: bool,
        vertices: Vec<usize>,
        segment_keys: Vec<Option<SegmentKey>>,
    ) -> Result<Self> {
        if policies.is_empty() {
            return Err(Error::EmptySelection);
        }
        let n = policies.len();
        if triggers.len() != n - 1 || timers.len() != n - 1 || segment_keys.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n - 1,
                found: triggers.len(),
            });
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidParameter("alpha must lie in [0, 1]"));
        }
        if timers.iter().any(|t| t.is_nan() || *t < 0.0) {
            return Err(Error::InvalidParameter("timers must be non-negative"));
        }
        let d = goal.len();
        if policies.iter().any(|p| p.dim() != d) || triggers.iter().flatten().any(|a| a.len() != d)
        {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: policies[0].dim(),
            });
        }
        Ok(Self {
            policies,
            triggers,
            timers,
            alpha,
            goal,
            has_initial,
            vertices,
            segment_keys,
        })
    }

    pub fn policies(&self) -> &[StablePolicy] {
        &self.policies
    }

    pub fn triggers(&self) -> &[[Vec<f64>; 3]] {
        &self.triggers
    }

    pub fn timers(&self) -> &[f64] {
        &self.timers
    }

    /// Overrides one timer; used to probe the criteria checks.
    pub fn set_timer(&mut self, i: usize, value: f64) {
        self.timers[i] = value;
    }

    /// Overrides one policy; used to probe the criteria checks.
    pub fn set_policy(&mut self, i: usize, policy: StablePolicy) {
        self.policies[i] = policy;
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn goal(&self) -> &[f64] {
        &self.goal
    }

    pub fn has_initial(&self) -> bool {
        self.has_initial
    }

    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    pub fn segment_keys(&self) -> &[Option<SegmentKey>] {
        &self.segment_keys
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.goal.len()
    }

    pub fn terminal_mode(&self) -> Mode {
        Mode::Nominal(self.len() - 1)
    }

    /// Resolves every transition enabled at `(x, t)`, then returns the
    /// velocity of the resulting mode.
    pub fn step(&self, state: ChainExecState, x: &[f64], t: f64) -> (Vec<f64>, ChainExecState) {
        let mut state = state;
        let last = self.len() - 1;
        loop {
            match state.mode {
                Mode::Nominal(i) if i < last => {
                    let [a, b, c] = &self.triggers[i];
                    if !trigger_fired(a, b, c, x) {
                        break;
                    }
                    state = ChainExecState {
                        mode: Mode::Transition(i),
                        entered_at: t,
                    };
                }
                Mode::Transition(i) => {
                    if t - state.entered_at < self.timers[i] {
                        break;
                    }
                    state = ChainExecState {
                        mode: Mode::Nominal(i + 1),
                        entered_at: t,
                    };
                }
                _ => break,
            }
        }
        let v = match state.mode {
            Mode::Nominal(i) => self.policies[i].evaluate(x),
            Mode::Transition(i) => transition_velocity(
                &self.policies[i],
                &self.policies[i + 1],
                x,
                t - state.entered_at,
                self.timers[i],
            ),
        };
        (v, state)
    }

    /// Index of the first policy fitted on the path (after any `f_0`).
    pub fn first_path_policy(&self) -> usize {
        usize::from(self.has_initial)
    }

    /// Velocity used to score points of path vertex `j`: the first path
    /// policy at `v_1`, the goal policy at `v_M`, and the equal mix of the
    /// two policies switching around every interior vertex.
    pub fn scoring_velocity(&self, path_index: usize, x: &[f64]) -> Vec<f64> {
        let m = self.vertices.len();
        let off = self.first_path_policy();
        let last = self.len() - 1;
        if m < 3 || path_index == m - 1 {
            return self.policies[last].evaluate(x);
        }
        if path_index == 0 {
            return self.policies[off].evaluate(x);
        }
        let i = off + path_index - 1;
        blend(&self.policies[i], &self.policies[(i + 1).min(last)], x, 0.5)
    }
}

/// Segment policies keyed by vertex triplet and reuse level.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SegmentTable {
    /// Base seed of full refits; segment seeds derive from it and the key.
    pub seed: u64,
    entries: BTreeMap<SegmentKey, StablePolicy>,
    fits: usize,
}

impl SegmentTable {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            entries: BTreeMap::new(),
            fits: 0,
        }
    }

    pub fn get(&self, key: &SegmentKey) -> Option<&StablePolicy> {
        self.entries.get(key)
    }

    pub fn insert(&mut self, key: SegmentKey, policy: StablePolicy) {
        self.entries.insert(key, policy);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SegmentKey, &StablePolicy)> {
        self.entries.iter()
    }

    /// Number of segment fits performed through this table.
    pub fn fits(&self) -> usize {
        self.fits
    }

    /// Looks up `key`, fitting and storing the segment when missing.
    pub fn get_or_fit(
        &mut self,
        graph: &GaussianGraph,
        key: SegmentKey,
        set: &DemonstrationSet,
        options: &StitchOptions,
    ) -> Result<&StablePolicy> {
        if !self.entries.contains_key(&key) {
            let policy = fit_segment(graph, key, set, self.seed, options)?;
            self.fits += 1;
            self.entries.insert(key, policy);
        }
        Ok(&self.entries[&key])
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of a segment fit, independent of the order segments are fitted in.
pub fn segment_seed(base: u64, key: &SegmentKey) -> u64 {
    key.vertices
        .iter()
        .fold(splitmix(base), |acc, &v| splitmix(acc ^ v as u64))
}

fn check_reversal(graph: &GaussianGraph, window: &[usize]) -> Result<()> {
    for (a, &u) in window.iter().enumerate() {
        for &w in &window[a + 1..] {
            if graph.counterpart(u) == Some(w) {
                return Err(Error::SegmentReversalConflict {
                    segment: u,
                    vertex: w,
                });
            }
        }
    }
    Ok(())
}

/// Points of a triplet with the target-vertex filter applied: points of
/// `v_{i+2}` farther than `l` from `μ_{i+1}` and closer than `0.1 l` to
/// `μ_{i+2}` are dropped, `l = ‖μ_{i+2} - μ_{i+1}‖`. Returns the points and
/// their position in the triplet.
pub fn segment_points(
    graph: &GaussianGraph,
    triplet: [usize; 3],
    set: &DemonstrationSet,
) -> Result<(Vec<ReferencePoint>, Vec<usize>)> {
    let mid = graph.vertex(triplet[1])?.mean().to_vec();
    let end = graph.vertex(triplet[2])?.mean().to_vec();
    let l = math::dist(&mid, &end);
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (k, &v) in triplet.iter().enumerate() {
        for p in stitching::vertex_points(graph, v, set)? {
            let drop = k == 2
                && math::dist(&p.position, &mid) > l
                && math::dist(&p.position, &end) < 0.1 * l;
            if !drop {
                points.push(p);
                labels.push(k);
            }
        }
    }
    Ok((points, labels))
}

/// Fits a policy on `vertices`' data (positions labelled by `labels`),
/// stable at `attractor`.
fn fit_on(
    graph: &GaussianGraph,
    vertices: &[usize],
    points: &[ReferencePoint],
    labels: Vec<usize>,
    attractor: &[f64],
    reuse: Reuse,
    seed: u64,
    options: &StitchOptions,
) -> Result<StablePolicy> {
    if points.is_empty() {
        return Err(Error::EmptySelection);
    }
    match reuse {
        Reuse::NoReuse => {
            let (policy, _, _) =
                lpvds::fit_lpvds_with(points, attractor, vertices.len(), seed, &options.lpvds)?;
            Ok(policy)
        }
        Reuse::ReuseGaussians => {
            // Components without surviving points are dropped.
            let mut keep = Vec::new();
            let mut remap = vec![usize::MAX; vertices.len()];
            for (k, &v) in vertices.iter().enumerate() {
                if labels.contains(&k) {
                    remap[k] = keep.len();
                    keep.push(graph.vertex(v)?.component.clone());
                }
            }
            let labels = labels.into_iter().map(|k| remap[k]).collect();
            let mixture = MixtureFit::from_components(keep, labels)?;
            Ok(lpvds::fit_ds_given_gmm_with(&mixture, points, attractor, &options.lpvds.ds)?.0)
        }
    }
}

pub fn fit_segment(
    graph: &GaussianGraph,
    key: SegmentKey,
    set: &DemonstrationSet,
    base_seed: u64,
    options: &StitchOptions,
) -> Result<StablePolicy> {
    check_reversal(graph, &key.vertices)?;
    let (points, labels) = segment_points(graph, key.vertices, set)?;
    let attractor = graph.vertex(key.vertices[2])?.mean().to_vec();
    fit_on(
        graph,
        &key.vertices,
        &points,
        labels,
        &attractor,
        key.reuse,
        segment_seed(base_seed, &key),
        options,
    )
}

/// Every triplet `(i, j, k)` with edges `i → j` and `j → k`, `k ≠ i`, and no
/// vertex next to its own reversal.
pub fn realizable_triplets(graph: &GaussianGraph) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for (i, j, _) in graph.edges() {
        for &(k, _) in graph.neighbors(j) {
            if k != i && check_reversal(graph, &[i, j, k]).is_ok() {
                out.push([i, j, k]);
            }
        }
    }
    out
}

/// Fits every realizable triplet. Triplets whose fit fails are skipped
/// and counted in the second return value.
pub fn precompute_segment_table(
    graph: &GaussianGraph,
    reuse: Reuse,
    set: &DemonstrationSet,
    options: &StitchOptions,
    table: &mut SegmentTable,
) -> usize {
    let mut failures = 0;
    for vertices in realizable_triplets(graph) {
        if table
            .get_or_fit(graph, SegmentKey { vertices, reuse }, set, options)
            .is_err()
        {
            failures += 1;
        }
    }
    failures
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOptions {
    pub alpha: f64,
    pub reuse: Reuse,
    /// Prepend `f_0`, stable at `μ_1` and fitted on `v_1`'s data.
    pub initial_policy: bool,
    pub stitch: StitchOptions,
    /// Cap on every timer, seconds.
    pub timer_cap: f64,
    /// Speed floor of the timer denominator, as a fraction of the dataset
    /// diagonal per second.
    pub speed_floor_rel: f64,
}

impl Default for ChainOptions {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            reuse: Reuse::ReuseGaussians,
            initial_policy: false,
            stitch: StitchOptions::default(),
            timer_cap: 100.0,
            speed_floor_rel: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BuildStats {
    pub segment_fits: usize,
    pub table_hits: usize,
}

/// Builds a chain along `path`, consulting (and filling) `table`.
pub fn build_chain(
    graph: &GaussianGraph,
    path: &[usize],
    start: Option<&[f64]>,
    goal: &[f64],
    set: &DemonstrationSet,
    options: &ChainOptions,
    table: &mut SegmentTable,
) -> Result<(DsChain, BuildStats)> {
    if path.is_empty() {
        return Err(Error::EmptySelection);
    }
    if !(0.0..=1.0).contains(&options.alpha) {
        return Err(Error::InvalidParameter("alpha must lie in [0, 1]"));
    }
    if !math::all_finite(goal) {
        return Err(Error::NonFinite("goal"));
    }
    let reuse = options.reuse;
    let m = path.len();
    let mut stats = BuildStats::default();
    let mut policies = Vec::new();
    let mut keys = Vec::new();
    let mut triggers = Vec::new();

    for w in path.windows(3) {
        check_reversal(graph, w)?;
    }
    if m >= 2 {
        check_reversal(graph, &path[m - 2..])?;
    }

    let mut initial = None;
    if options.initial_policy {
        if let Some(x0) = start {
            let v1 = path[0];
            let points = stitching::vertex_points(graph, v1, set)?;
            let labels = vec![0; points.len()];
            let mu1 = graph.vertex(v1)?.mean().to_vec();
            let f0 = fit_on(
                graph,
                &[v1],
                &points,
                labels,
                &mu1,
                reuse,
                table.seed,
                &options.stitch,
            )?;
            let mid: Vec<f64> = x0.iter().zip(&mu1).map(|(a, b)| 0.5 * (a + b)).collect();
            initial = Some((f0, [x0.to_vec(), mid, mu1]));
        }
    }
    let has_initial = initial.is_some();
    if let Some((f0, anchors)) = initial {
        policies.push(f0);
        keys.push(None);
        triggers.push(anchors);
    }

    if m >= 3 {
        for w in path.windows(3) {
            let key = SegmentKey {
                vertices: [w[0], w[1], w[2]],
                reuse,
            };
            let before = table.fits();
            let policy = table.get_or_fit(graph, key, set, &options.stitch)?.clone();
            if table.fits() > before {
                stats.segment_fits += 1;
            } else {
                stats.table_hits += 1;
            }
            policies.push(policy);
            keys.push(Some(key));
            triggers.push([
                graph.vertex(w[0])?.mean().to_vec(),
                graph.vertex(w[1])?.mean().to_vec(),
                graph.vertex(w[2])?.mean().to_vec(),
            ]);
        }
    }

    let tail: &[usize] = if m >= 3 { &path[m - 2..] } else { path };
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (k, &v) in tail.iter().enumerate() {
        let pts = stitching::vertex_points(graph, v, set)?;
        labels.extend(core::iter::repeat_n(k, pts.len()));
        points.extend(pts);
    }
    let goal_seed = splitmix(table.seed ^ 0x676f_616c);
    let f_goal = fit_on(
        graph,
        tail,
        &points,
        labels,
        goal,
        reuse,
        goal_seed,
        &options.stitch,
    )?;
    policies.push(f_goal);
    keys.push(None);

    let v_floor = options.speed_floor_rel * set.diagonal();
    let timers = triggers
        .iter()
        .enumerate()
        .map(|(i, [_, mid, end])| {
            timer_duration(
                &policies[i],
                &policies[i + 1],
                mid,
                end,
                options.alpha,
                v_floor,
                options.timer_cap,
            )
        })
        .collect();
    let chain = DsChain::new(
        policies,
        triggers,
        timers,
        options.alpha,
        goal.to_vec(),
        has_initial,
        path.to_vec(),
        keys,
    )?;
    Ok((chain, stats))
}

/// Outcome of checking the four convergence criteria of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct GasReport {
    /// Every policy passes the Lyapunov check, so all dynamics are bounded
    /// on bounded sets.
    pub bounded: bool,
    /// Each non-final policy fires its trigger from its entry anchor within
    /// the step budget.
    pub triggers_fire: bool,
    /// Time at which each trigger fired in the probe rollouts.
    pub trigger_times: Vec<Option<f64>>,
    pub timers_finite: bool,
    /// The last policy is stable at the goal.
    pub final_gas: bool,
}

impl GasReport {
    pub fn passed(&self) -> bool {
        self.bounded && self.triggers_fire && self.timers_finite && self.final_gas
    }

    pub fn criteria(&self) -> [bool; 4] {
        [
            self.bounded,
            self.triggers_fire,
            self.timers_finite,
            self.final_gas,
        ]
    }
}

/// Checks the chain against the four criteria. Trigger firing is probed by
/// rolling out `f_i` from its trigger's first anchor under `sim`.
pub fn verify_gas_criteria(chain: &DsChain, sim: &SimOptions) -> GasReport {
    let reports: Vec<_> = chain.policies.iter().map(lpvds::verify_stability).collect();
    let bounded = reports.iter().all(|r| r.passed);
    let mut trigger_times = Vec::with_capacity(chain.triggers.len());
    for (i, [a, b, c]) in chain.triggers.iter().enumerate() {
        let policy = &chain.policies[i];
        let fired = simulation::first_time(policy, a, sim, |x| trigger_fired(a, b, c, x));
        trigger_times.push(if reports[i].passed { fired } else { None });
    }
    let triggers_fire = trigger_times.iter().all(Option::is_some);
    let timers_finite = chain.timers.iter().all(|t| t.is_finite() && *t >= 0.0);
    let last = chain.policies.last().expect("chain is non-empty");
    let final_gas =
        reports.last().is_some_and(|r| r.passed) && last.attractor() == chain.goal.as_slice();
    GasReport {
        bounded,
        triggers_fire,
        trigger_times,
        timers_finite,
        final_gas,
    }
}
