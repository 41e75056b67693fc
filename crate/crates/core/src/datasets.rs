//! Demonstration data: validation, velocity reconstruction and synthetic
//! 2D scenarios.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::math::{self, bounding_box, dist};
use crate::{Error, Result};

/// Default attractor tolerance, as a fraction of a demonstration's
/// bounding-box diagonal.
pub const DEFAULT_ATTRACTOR_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePoint {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl ReferencePoint {
    pub fn new(position: Vec<f64>, velocity: Vec<f64>) -> Self {
        Self { position, velocity }
    }

    pub fn dim(&self) -> usize {
        self.position.len()
    }

    /// Same position, negated velocity.
    pub fn reversed(&self) -> Self {
        Self {
            position: self.position.clone(),
            velocity: self.velocity.iter().map(|v| -v).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<ReferencePoint>,
    /// Sample times, when known.
    pub timestamps: Option<Vec<f64>>,
    /// Velocities were reconstructed with [`estimate_velocities`].
    pub velocities_estimated: bool,
}

impl Trajectory {
    pub fn new(points: Vec<ReferencePoint>) -> Self {
        Self {
            points,
            timestamps: None,
            velocities_estimated: false,
        }
    }

    /// Builds a trajectory from positions alone, estimating velocities.
    pub fn from_positions(positions: Vec<Vec<f64>>, timestamps: Vec<f64>) -> Result<Self> {
        let velocities = estimate_velocities(&positions, &timestamps, 1)?;
        let points = positions
            .into_iter()
            .zip(velocities)
            .map(|(p, v)| ReferencePoint::new(p, v))
            .collect();
        Ok(Self {
            points,
            timestamps: Some(timestamps),
            velocities_estimated: true,
        })
    }

    pub fn start(&self) -> Option<&[f64]> {
        self.points.first().map(|p| p.position.as_slice())
    }

    pub fn end(&self) -> Option<&[f64]> {
        self.points.last().map(|p| p.position.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub id: String,
    pub trajectories: Vec<Trajectory>,
    pub attractor: Vec<f64>,
    pub bidirectional: bool,
}

impl Demonstration {
    /// Mean of the trajectory end points; used when a file omits the attractor.
    pub fn mean_endpoint(trajectories: &[Trajectory]) -> Option<Vec<f64>> {
        let ends: Vec<&[f64]> = trajectories.iter().filter_map(Trajectory::end).collect();
        let first = ends.first()?;
        let mut mean = alloc::vec![0.0; first.len()];
        for e in &ends {
            for (m, x) in mean.iter_mut().zip(e.iter()) {
                *m += x;
            }
        }
        Some(math::scale(&mean, 1.0 / ends.len() as f64))
    }

    pub fn dim(&self) -> usize {
        self.attractor.len()
    }

    /// All reference points, trajectory after trajectory. Vertex clusters
    /// index into this order.
    pub fn points(&self) -> impl Iterator<Item = &ReferencePoint> + '_ {
        self.trajectories.iter().flat_map(|t| t.points.iter())
    }

    pub fn num_points(&self) -> usize {
        self.trajectories.iter().map(|t| t.points.len()).sum()
    }

    /// Trajectory index of every point in [`Demonstration::points`] order.
    pub fn trajectory_labels(&self) -> Vec<usize> {
        self.trajectories
            .iter()
            .enumerate()
            .flat_map(|(i, t)| core::iter::repeat_n(i, t.points.len()))
            .collect()
    }

    pub fn diagonal(&self) -> f64 {
        let (lo, hi) = bounding_box(self.points().map(|p| p.position.as_slice()), self.dim());
        dist(&lo, &hi)
    }

    /// Checks the demonstration invariants. `attractor_tol` is relative to
    /// the bounding-box diagonal.
    pub fn validate(&self, attractor_tol: f64) -> Result<()> {
        let d = self.dim();
        if d < 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                found: d,
            });
        }
        if !math::all_finite(&self.attractor) {
            return Err(Error::NonFinite("attractor"));
        }
        if self.trajectories.is_empty() {
            return Err(Error::EmptyDemonstration(self.id.clone()));
        }
        for t in &self.trajectories {
            if t.points.len() < 2 {
                return Err(Error::EmptyDemonstration(self.id.clone()));
            }
            for p in &t.points {
                for found in [p.position.len(), p.velocity.len()] {
                    if found != d {
                        return Err(Error::DimensionMismatch { expected: d, found });
                    }
                }
                if !math::all_finite(&p.position) || !math::all_finite(&p.velocity) {
                    return Err(Error::NonFinite("reference point"));
                }
            }
        }
        let tolerance = attractor_tol * self.diagonal();
        for t in &self.trajectories {
            let distance = dist(t.end().unwrap(), &self.attractor);
            if distance > tolerance {
                return Err(Error::AttractorInconsistent {
                    demo: self.id.clone(),
                    distance,
                    tolerance,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemonstrationSet {
    demonstrations: Vec<Demonstration>,
    dimension: usize,
}

impl DemonstrationSet {
    pub fn new(demonstrations: Vec<Demonstration>) -> Result<Self> {
        Self::with_tolerance(demonstrations, DEFAULT_ATTRACTOR_TOLERANCE)
    }

    pub fn with_tolerance(demonstrations: Vec<Demonstration>, attractor_tol: f64) -> Result<Self> {
        let first = demonstrations
            .first()
            .ok_or_else(|| Error::EmptyDemonstration(String::new()))?;
        let dimension = first.dim();
        let mut ids = BTreeSet::new();
        for demo in &demonstrations {
            if demo.dim() != dimension {
                return Err(Error::DimensionMismatch {
                    expected: dimension,
                    found: demo.dim(),
                });
            }
            demo.validate(attractor_tol)?;
            if !ids.insert(demo.id.as_str()) {
                return Err(Error::DuplicateId(demo.id.clone()));
            }
        }
        Ok(Self {
            demonstrations,
            dimension,
        })
    }

    pub fn demonstrations(&self) -> &[Demonstration] {
        &self.demonstrations
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.demonstrations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demonstrations.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Demonstration> {
        self.demonstrations.iter().find(|d| d.id == id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.demonstrations.iter().position(|d| d.id == id)
    }

    pub fn all_points(&self) -> impl Iterator<Item = &ReferencePoint> + '_ {
        self.demonstrations.iter().flat_map(|d| d.points())
    }

    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        bounding_box(
            self.all_points().map(|p| p.position.as_slice()),
            self.dimension,
        )
    }

    pub fn diagonal(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        dist(&lo, &hi)
    }

    /// Mean reference speed over every point.
    pub fn mean_speed(&self) -> f64 {
        let (sum, n) = self.all_points().fold((0.0, 0usize), |(s, n), p| {
            (s + math::norm(&p.velocity), n + 1)
        });
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// Finite-difference velocities: central differences inside, one-sided at
/// the ends, then a centered moving average of width `window` (1 = off).
pub fn estimate_velocities(
    positions: &[Vec<f64>],
    timestamps: &[f64],
    window: usize,
) -> Result<Vec<Vec<f64>>> {
    let n = positions.len();
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    if timestamps.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: timestamps.len(),
        });
    }
    if timestamps.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::NonMonotoneTime);
    }
    let d = positions[0].len();
    let diff = |a: usize, b: usize| -> Vec<f64> {
        let dt = timestamps[b] - timestamps[a];
        (0..d)
            .map(|k| (positions[b][k] - positions[a][k]) / dt)
            .collect()
    };
    let mut vel: Vec<Vec<f64>> = (0..n)
        .map(|i| match i {
            0 => diff(0, 1),
            i if i == n - 1 => diff(n - 2, n - 1),
            i => diff(i - 1, i + 1),
        })
        .collect();

    if window > 1 {
        let half = window / 2;
        let raw = vel.clone();
        for (i, v) in vel.iter_mut().enumerate() {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            let count = (hi - lo + 1) as f64;
            for (k, vk) in v.iter_mut().enumerate() {
                *vk = raw[lo..=hi].iter().map(|r| r[k]).sum::<f64>() / count;
            }
        }
    }
    Ok(vel)
}

/// Built-in synthetic 2D workspaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Two demonstrations whose corridors cross in the middle.
    TwoCrossing,
    /// Six demonstrations forming a connected web.
    SixNetwork,
    /// S-shaped demonstrations sharing a goal; connecting their starts
    /// needs reversal.
    SCurves,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [
        Scenario::TwoCrossing,
        Scenario::SixNetwork,
        Scenario::SCurves,
    ];

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "two-crossing" => Ok(Self::TwoCrossing),
            "six-network" => Ok(Self::SixNetwork),
            "s-curves" => Ok(Self::SCurves),
            other => Err(Error::UnknownScenario(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::TwoCrossing => "two-crossing",
            Self::SixNetwork => "six-network",
            Self::SCurves => "s-curves",
        }
    }

    fn demos(&self) -> Vec<DemoShape> {
        match self {
            Self::TwoCrossing => alloc::vec![
                DemoShape::new("a", [[1.0, 1.5], [4.0, 3.5], [6.0, 6.5], [9.0, 8.5]], FAN),
                DemoShape::new("b", [[1.0, 8.5], [4.0, 6.5], [6.0, 3.5], [9.0, 1.5]], FAN),
            ],
            Self::SixNetwork => alloc::vec![
                DemoShape::new(
                    "d0",
                    [[0.5, 2.0], [3.5, 3.2], [6.5, 3.2], [9.5, 3.0]],
                    TIGHT
                ),
                DemoShape::new(
                    "d1",
                    [[9.5, 7.0], [6.5, 6.8], [3.5, 6.8], [0.5, 8.0]],
                    TIGHT
                ),
                DemoShape::new(
                    "d2",
                    [[2.0, 0.5], [2.6, 3.5], [2.2, 6.5], [3.0, 9.5]],
                    TIGHT
                ),
                DemoShape::new(
                    "d3",
                    [[8.0, 9.5], [7.4, 6.5], [7.8, 3.5], [7.0, 0.5]],
                    TIGHT
                ),
                DemoShape::new("d4", [[1.0, 4.5], [3.5, 5.3], [6.5, 4.7], [9.0, 5.5]], FAN),
                DemoShape::new("d5", [[5.0, 9.5], [4.4, 6.5], [5.6, 3.5], [5.0, 0.5]], FAN),
            ],
            Self::SCurves => alloc::vec![
                DemoShape::new(
                    "s0",
                    [[1.0, 1.0], [4.5, 0.5], [1.5, 5.5], [5.0, 5.0]],
                    TRIPLE
                ),
                DemoShape::new(
                    "s1",
                    [[9.0, 9.0], [5.5, 9.5], [8.5, 4.5], [5.0, 5.0]],
                    TRIPLE
                ),
                DemoShape::new(
                    "s2",
                    [[9.0, 1.0], [9.5, 4.0], [5.5, 1.5], [5.0, 5.0]],
                    TRIPLE
                ),
            ],
        }
    }
}

/// Trajectory start offsets, as multiples of the unit normal at the start.
const TIGHT: &[f64] = &[-0.25, 0.25];
const FAN: &[f64] = &[-0.4, 0.4];
const TRIPLE: &[f64] = &[-0.3, 0.0, 0.3];

#[derive(Debug, Clone)]
struct DemoShape {
    id: &'static str,
    control: [[f64; 2]; 4],
    offsets: &'static [f64],
}

impl DemoShape {
    fn new(id: &'static str, control: [[f64; 2]; 4], offsets: &'static [f64]) -> Self {
        Self {
            id,
            control,
            offsets,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOptions {
    /// Standard deviation of additive position noise.
    pub noise_sigma: f64,
    pub points_per_trajectory: usize,
    /// Average speed along each trajectory (units per second).
    pub mean_speed: f64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self {
            noise_sigma: 0.03,
            points_per_trajectory: 50,
            mean_speed: 1.0,
        }
    }
}

pub fn generate_synthetic_2d(scenario: &str, seed: u64) -> Result<DemonstrationSet> {
    generate_scenario(
        Scenario::parse(scenario)?,
        seed,
        &SyntheticOptions::default(),
    )
}

/// Samples every demonstration of `scenario` along cubic Bézier corridors
/// whose speed eases out to rest at the attractor.
pub fn generate_scenario(
    scenario: Scenario,
    seed: u64,
    options: &SyntheticOptions,
) -> Result<DemonstrationSet> {
    if options.points_per_trajectory < 2 || !(options.mean_speed > 0.0) {
        return Err(Error::InvalidParameter("synthetic sampling options"));
    }
    let noise = Normal::new(0.0, options.noise_sigma.max(0.0))
        .map_err(|_| Error::InvalidParameter("noise sigma"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let demos = scenario
        .demos()
        .into_iter()
        .map(|shape| {
            let trajectories = shape
                .offsets
                .iter()
                .map(|&offset| sample_trajectory(&shape, offset, options, &noise, &mut rng))
                .collect();
            Demonstration {
                id: shape.id.to_string(),
                trajectories,
                attractor: shape.control[3].to_vec(),
                bidirectional: true,
            }
        })
        .collect();
    DemonstrationSet::new(demos)
}

fn sample_trajectory(
    shape: &DemoShape,
    offset: f64,
    options: &SyntheticOptions,
    noise: &Normal<f64>,
    rng: &mut ChaCha8Rng,
) -> Trajectory {
    let c = shape.control;
    let tangent0 = [c[1][0] - c[0][0], c[1][1] - c[0][1]];
    let tn = math::norm(&tangent0);
    let normal = [-tangent0[1] / tn, tangent0[0] / tn];
    let shift = [normal[0] * offset, normal[1] * offset];

    // Offset fades out quadratically so every trajectory ends on the attractor.
    let curve = |u: f64| -> [f64; 2] {
        let b = bezier(&c, u);
        let fade = (1.0 - u) * (1.0 - u);
        [b[0] + shift[0] * fade, b[1] + shift[1] * fade]
    };
    let curve_deriv = |u: f64| -> [f64; 2] {
        let b = bezier_deriv(&c, u);
        let fade = -2.0 * (1.0 - u);
        [b[0] + shift[0] * fade, b[1] + shift[1] * fade]
    };

    const TABLE: usize = 512;
    let mut arc = Vec::with_capacity(TABLE + 1);
    arc.push(0.0);
    let mut prev = curve(0.0);
    for i in 1..=TABLE {
        let p = curve(i as f64 / TABLE as f64);
        let last = *arc.last().unwrap();
        arc.push(last + dist(&p, &prev));
        prev = p;
    }
    let length = arc[TABLE];
    let duration = length / options.mean_speed;
    let param_at = |ell: f64| -> f64 {
        let idx = arc.partition_point(|&a| a < ell).clamp(1, TABLE);
        let (a0, a1) = (arc[idx - 1], arc[idx]);
        let frac = if a1 > a0 { (ell - a0) / (a1 - a0) } else { 0.0 };
        ((idx - 1) as f64 + frac.clamp(0.0, 1.0)) / TABLE as f64
    };

    let n = options.points_per_trajectory;
    let mut points = Vec::with_capacity(n);
    let mut times = Vec::with_capacity(n);
    for k in 0..n {
        let tau = k as f64 / (n - 1) as f64;
        let tau4 = tau * tau * tau * tau;
        let s = (tau - tau4 * tau / 5.0) / 0.8;
        let speed = length / duration * (1.0 - tau4) / 0.8;
        let u = param_at(s * length);
        let mut pos = curve(u);
        let tangent = curve_deriv(u);
        let tnorm = math::norm(&tangent);
        let vel = [tangent[0] / tnorm * speed, tangent[1] / tnorm * speed];
        if k + 1 < n {
            pos[0] += noise.sample(rng);
            pos[1] += noise.sample(rng);
        }
        points.push(ReferencePoint::new(pos.to_vec(), vel.to_vec()));
        times.push(tau * duration);
    }
    Trajectory {
        points,
        timestamps: Some(times),
        velocities_estimated: false,
    }
}

fn bezier(c: &[[f64; 2]; 4], u: f64) -> [f64; 2] {
    let v = 1.0 - u;
    let w = [v * v * v, 3.0 * v * v * u, 3.0 * v * u * u, u * u * u];
    [
        w.iter().zip(c).map(|(w, p)| w * p[0]).sum(),
        w.iter().zip(c).map(|(w, p)| w * p[1]).sum(),
    ]
}

fn bezier_deriv(c: &[[f64; 2]; 4], u: f64) -> [f64; 2] {
    let v = 1.0 - u;
    let w = [3.0 * v * v, 6.0 * v * u, 3.0 * u * u];
    let mut out = [0.0; 2];
    for i in 0..3 {
        for k in 0..2 {
            out[k] += w[i] * (c[i + 1][k] - c[i][k]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn constant_velocity_line() {
        let pos = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]];
        let v = estimate_velocities(&pos, &[0.0, 1.0, 2.0], 1).unwrap();
        assert_eq!(v, vec![vec![1.0, 0.0]; 3]);
    }

    #[test]
    fn single_point_is_too_few() {
        let err = estimate_velocities(&[vec![0.0, 0.0]], &[0.0], 1).unwrap_err();
        assert_eq!(err, Error::TooFewPoints { needed: 2, got: 1 });
    }

    #[test]
    fn non_monotone_time_rejected() {
        let pos = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        assert_eq!(
            estimate_velocities(&pos, &[1.0, 1.0], 1).unwrap_err(),
            Error::NonMonotoneTime
        );
    }

    #[test]
    fn unit_circle_speed_matches_angular_rate() {
        let dt = 1e-3;
        let n = 2000;
        let times: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
        let pos: Vec<Vec<f64>> = times
            .iter()
            .map(|&t| vec![libm::cos(t), libm::sin(t)])
            .collect();
        let vel = estimate_velocities(&pos, &times, 1).unwrap();
        for v in &vel[1..n - 1] {
            let speed = math::norm(v);
            assert!((speed - 1.0).abs() < 1e-3, "speed {speed}");
        }
    }

    #[test]
    fn smoothing_keeps_length() {
        let pos: Vec<Vec<f64>> = (0..7).map(|i| vec![(i * i) as f64, 0.0]).collect();
        let times: Vec<f64> = (0..7).map(|i| i as f64).collect();
        let v = estimate_velocities(&pos, &times, 3).unwrap();
        assert_eq!(v.len(), 7);
        // Interior central differences of i^2 are 2i; a 3-wide average keeps them.
        assert!((v[3][0] - 6.0).abs() < 1e-12);
    }

    fn line_demo(id: &str, end: [f64; 2]) -> Demonstration {
        let traj = Trajectory::new(vec![
            ReferencePoint::new(vec![0.0, 0.0], vec![1.0, 0.0]),
            ReferencePoint::new(end.to_vec(), vec![0.0, 0.0]),
        ]);
        Demonstration {
            id: id.into(),
            trajectories: vec![traj],
            attractor: end.to_vec(),
            bidirectional: false,
        }
    }

    #[test]
    fn inconsistent_attractor_rejected() {
        let mut demo = line_demo("a", [1.0, 0.0]);
        demo.trajectories.push(Trajectory::new(vec![
            ReferencePoint::new(vec![0.0, 1.0], vec![1.0, 0.0]),
            ReferencePoint::new(vec![0.0, 5.0], vec![0.0, 0.0]),
        ]));
        assert!(matches!(
            DemonstrationSet::new(vec![demo]),
            Err(Error::AttractorInconsistent { .. })
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let a = line_demo("a", [1.0, 0.0]);
        assert_eq!(
            DemonstrationSet::new(vec![a.clone(), a]).unwrap_err(),
            Error::DuplicateId("a".into())
        );
    }

    #[test]
    fn single_point_trajectory_is_empty_demo() {
        let mut demo = line_demo("a", [1.0, 0.0]);
        demo.trajectories[0].points.truncate(1);
        assert_eq!(
            DemonstrationSet::new(vec![demo]).unwrap_err(),
            Error::EmptyDemonstration("a".into())
        );
    }

    #[test]
    fn scenarios_are_deterministic() {
        let a = generate_synthetic_2d("two-crossing", 1).unwrap();
        let b = generate_synthetic_2d("two-crossing", 1).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_2d("two-crossing", 2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn six_network_shape() {
        let set = generate_synthetic_2d("six-network", 7).unwrap();
        assert_eq!(set.len(), 6);
        assert_eq!(set.dimension(), 2);
        for demo in set.demonstrations() {
            assert!((2..=3).contains(&demo.trajectories.len()));
        }
    }

    #[test]
    fn unknown_scenario() {
        assert_eq!(
            generate_synthetic_2d("bogus", 0).unwrap_err(),
            Error::UnknownScenario("bogus".into())
        );
    }
}
