//! Benchmark instances, method synthesis and metric aggregation.
//!
//! Instances are all ordered pairs of distinct pooled endpoints (every
//! demonstration start and attractor, assuming bi-directionality). Timing
//! is left to the caller.

use alloc::string::String;
use alloc::vec::Vec;

use crate::chaining::{self, ChainOptions, DsChain, SegmentTable};
use crate::datasets::{DemonstrationSet, ReferencePoint};
use crate::gmm::{self, MixtureFit};
use crate::graph::{self, DemoModel, GaussianGraph, GraphParams};
use crate::lpvds::{self, StablePolicy};
use crate::math;
use crate::simulation::{self, SimOptions, SimulationResult, SupportModel};
use crate::stitching::{self, Reuse, StitchMethod, StitchOptions, StitchRequest};
use crate::{Error, Result};

/// A pooled start or goal position.
#[derive(Debug, Clone, PartialEq)]
pub struct Endpoint {
    pub position: Vec<f64>,
    /// Indices of the demonstrations this endpoint belongs to.
    pub demos: Vec<usize>,
}

/// Demonstration starts and attractors. A demonstration's start is the
/// trajectory start nearest the mean of all its trajectory starts, so that
/// every endpoint is a demonstrated position. Endpoints closer than
/// `merge_tol` are merged.
pub fn pooled_endpoints(set: &DemonstrationSet, merge_tol: f64) -> Vec<Endpoint> {
    let mut out: Vec<Endpoint> = Vec::new();
    let mut push = |position: Vec<f64>, demo: usize| {
        if let Some(e) = out
            .iter_mut()
            .find(|e| math::dist(&e.position, &position) < merge_tol)
        {
            if !e.demos.contains(&demo) {
                e.demos.push(demo);
            }
        } else {
            out.push(Endpoint {
                position,
                demos: alloc::vec![demo],
            });
        }
    };
    for (i, demo) in set.demonstrations().iter().enumerate() {
        let starts: Vec<&[f64]> = demo.trajectories.iter().filter_map(|t| t.start()).collect();
        let mut mean = alloc::vec![0.0; demo.dim()];
        for s in &starts {
            for (m, x) in mean.iter_mut().zip(s.iter()) {
                *m += x / starts.len() as f64;
            }
        }
        let medoid = starts
            .iter()
            .min_by(|a, b| math::dist(a, &mean).total_cmp(&math::dist(b, &mean)))
            .map_or(mean.clone(), |s| s.to_vec());
        push(medoid, i);
        push(demo.attractor.clone(), i);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Instance {
    pub id: usize,
    pub start: usize,
    pub goal: usize,
}

/// All ordered pairs of distinct endpoints: `n (n - 1)` instances.
pub fn instances(n: usize) -> Vec<Instance> {
    let mut out = Vec::with_capacity(n * n.saturating_sub(1));
    for start in 0..n {
        for goal in 0..n {
            if start != goal {
                out.push(Instance {
                    id: out.len(),
                    start,
                    goal,
                });
            }
        }
    }
    out
}

/// True when the two endpoints share no demonstration.
pub fn crosses_demonstrations(endpoints: &[Endpoint], inst: &Instance) -> bool {
    let a = &endpoints[inst.start].demos;
    !endpoints[inst.goal].demos.iter().any(|d| a.contains(d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    BaselineAll,
    BaselineDs,
    StitchSp(Reuse),
    StitchSpt(Reuse),
    Chaining(Reuse),
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::BaselineAll,
        Method::BaselineDs,
        Method::StitchSp(Reuse::NoReuse),
        Method::StitchSp(Reuse::ReuseGaussians),
        Method::StitchSpt(Reuse::NoReuse),
        Method::StitchSpt(Reuse::ReuseGaussians),
        Method::Chaining(Reuse::NoReuse),
        Method::Chaining(Reuse::ReuseGaussians),
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::BaselineAll => "baseline-all",
            Method::BaselineDs => "baseline-ds",
            Method::StitchSp(Reuse::NoReuse) => "stitch-sp-all",
            Method::StitchSp(Reuse::ReuseGaussians) => "stitch-sp-ds",
            Method::StitchSpt(Reuse::NoReuse) => "stitch-spt-all",
            Method::StitchSpt(Reuse::ReuseGaussians) => "stitch-spt-ds",
            Method::Chaining(Reuse::NoReuse) => "chain-all",
            Method::Chaining(Reuse::ReuseGaussians) => "chain-ds",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Method::BaselineAll => "Baseline (All)",
            Method::BaselineDs => "Baseline (DS)",
            Method::StitchSp(Reuse::NoReuse) => "Stitch-SP (All)",
            Method::StitchSp(Reuse::ReuseGaussians) => "Stitch-SP (DS)",
            Method::StitchSpt(Reuse::NoReuse) => "Stitch-SPT (All)",
            Method::StitchSpt(Reuse::ReuseGaussians) => "Stitch-SPT (DS)",
            Method::Chaining(Reuse::NoReuse) => "Chaining (All)",
            Method::Chaining(Reuse::ReuseGaussians) => "Chaining (DS)",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or(Error::InvalidParameter("unknown method"))
    }

    pub fn is_baseline(&self) -> bool {
        matches!(self, Method::BaselineAll | Method::BaselineDs)
    }

    /// Whether the synthesis ignores the start position.
    pub fn start_agnostic(&self) -> bool {
        matches!(
            self,
            Method::BaselineAll | Method::BaselineDs | Method::StitchSpt(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LibraryOptions {
    pub graph: GraphParams,
    /// K bound of the per-demonstration fits.
    pub k_max: usize,
    pub stitch: StitchOptions,
    pub chain: ChainOptions,
}

impl LibraryOptions {
    pub fn standard() -> Self {
        Self {
            k_max: 10,
            ..Self::default()
        }
    }
}

/// Everything learned offline from a dataset for one seed.
#[derive(Debug, Clone)]
pub struct Library {
    pub set: DemonstrationSet,
    pub models: Vec<DemoModel>,
    /// Expanded and reduced Gaussian graph.
    pub graph: GaussianGraph,
    pub seed: u64,
    pub options: LibraryOptions,
}

impl Library {
    pub fn learn(set: DemonstrationSet, seed: u64, options: LibraryOptions) -> Result<Self> {
        let models = graph::fit_demonstrations(&set, options.k_max, seed, &options.stitch.lpvds)?;
        Self::from_models(set, models, seed, options)
    }

    pub fn from_models(
        set: DemonstrationSet,
        models: Vec<DemoModel>,
        seed: u64,
        options: LibraryOptions,
    ) -> Result<Self> {
        let graph = GaussianGraph::build(&models, options.graph)?
            .expand_bidirectional(&set)?
            .reduce();
        Ok(Self {
            set,
            models,
            graph,
            seed,
            options,
        })
    }

    /// Pooled data oriented toward `goal`: a bidirectional demonstration's
    /// trajectory whose start is closer to the goal than its end contributes
    /// negated velocities.
    pub fn oriented_points(&self, goal: &[f64]) -> Vec<ReferencePoint> {
        self.oriented_labelled(goal).0
    }

    fn oriented_labelled(&self, goal: &[f64]) -> (Vec<ReferencePoint>, Vec<usize>) {
        let mut points = Vec::new();
        let mut labels = Vec::new();
        let mut offset = 0;
        for (demo, model) in self.set.demonstrations().iter().zip(&self.models) {
            let mut idx = 0;
            for traj in &demo.trajectories {
                let flip = demo.bidirectional
                    && match (traj.start(), traj.end()) {
                        (Some(s), Some(e)) => math::dist(s, goal) < math::dist(e, goal),
                        _ => false,
                    };
                for p in &traj.points {
                    points.push(if flip { p.reversed() } else { p.clone() });
                    labels.push(offset + model.mixture.assignments[idx]);
                    idx += 1;
                }
            }
            offset += model.mixture.len();
        }
        (points, labels)
    }

    /// Single LPV-DS on all pooled data.
    pub fn baseline_all(
        &self,
        goal: &[f64],
        seed: u64,
    ) -> Result<(StablePolicy, Vec<ReferencePoint>)> {
        let points = self.oriented_points(goal);
        let (policy, _, _) = lpvds::fit_lpvds_with(
            &points,
            goal,
            self.options.stitch.k_max,
            seed,
            &self.options.stitch.lpvds,
        )?;
        Ok((policy, points))
    }

    /// Every demonstration's Gaussians reused, dynamics refitted.
    pub fn baseline_ds(&self, goal: &[f64]) -> Result<(StablePolicy, Vec<ReferencePoint>)> {
        let (points, labels) = self.oriented_labelled(goal);
        let components = self
            .models
            .iter()
            .flat_map(|m| m.mixture.components.iter().cloned())
            .collect();
        let mixture = MixtureFit::from_components(components, labels)?;
        let (policy, _) =
            lpvds::fit_ds_given_gmm_with(&mixture, &points, goal, &self.options.stitch.lpvds.ds)?;
        Ok((policy, points))
    }

    pub fn stitch_sp(
        &self,
        start: &[f64],
        goal: &[f64],
        reuse: Reuse,
        seed: u64,
    ) -> Result<(StablePolicy, Vec<ReferencePoint>)> {
        let path = self
            .graph
            .attach_endpoints(Some(start), goal)?
            .shortest_path()?;
        self.stitch_selection(path.vertices, goal, reuse, StitchMethod::ShortestPath, seed)
    }

    pub fn stitch_spt(
        &self,
        goal: &[f64],
        reuse: Reuse,
        seed: u64,
    ) -> Result<(StablePolicy, Vec<ReferencePoint>)> {
        let selection = self
            .graph
            .attach_endpoints(None, goal)?
            .shortest_path_tree()?;
        self.stitch_selection(selection, goal, reuse, StitchMethod::ShortestPathTree, seed)
    }

    fn stitch_selection(
        &self,
        selection: Vec<usize>,
        goal: &[f64],
        reuse: Reuse,
        method: StitchMethod,
        seed: u64,
    ) -> Result<(StablePolicy, Vec<ReferencePoint>)> {
        let req = StitchRequest {
            selection,
            goal: goal.to_vec(),
            reuse,
            method,
        };
        let points = stitching::collect_filtered_data(&self.graph, &req.selection, &self.set)?;
        let (policy, _) =
            stitching::stitch(&self.graph, &req, &self.set, seed, &self.options.stitch)?;
        Ok((policy, points))
    }

    /// Shortest vertex path for a chain or stitch from `start` to `goal`.
    pub fn path(&self, start: &[f64], goal: &[f64]) -> Result<Vec<usize>> {
        Ok(self
            .graph
            .attach_endpoints(Some(start), goal)?
            .shortest_path()?
            .vertices)
    }

    pub fn chain(
        &self,
        start: &[f64],
        goal: &[f64],
        reuse: Reuse,
        table: &mut SegmentTable,
    ) -> Result<DsChain> {
        let path = self.path(start, goal)?;
        let options = ChainOptions {
            reuse,
            ..self.options.chain.clone()
        };
        Ok(chaining::build_chain(
            &self.graph,
            &path,
            Some(start),
            goal,
            &self.set,
            &options,
            table,
        )?
        .0)
    }

    /// Synthesizes `method` for one instance.
    pub fn synthesize(
        &self,
        method: Method,
        start: &[f64],
        goal: &[f64],
        seed: u64,
        table: &mut SegmentTable,
    ) -> Result<Synthesis> {
        let policy = |r: Result<(StablePolicy, Vec<ReferencePoint>)>| {
            r.map(|(policy, points)| Synthesis::Policy { policy, points })
        };
        match method {
            Method::BaselineAll => policy(self.baseline_all(goal, seed)),
            Method::BaselineDs => policy(self.baseline_ds(goal)),
            Method::StitchSp(r) => policy(self.stitch_sp(start, goal, r, seed)),
            Method::StitchSpt(r) => policy(self.stitch_spt(goal, r, seed)),
            Method::Chaining(r) => self.chain(start, goal, r, table).map(Synthesis::Chain),
        }
    }

    /// Simulates a synthesis from `start` and scores it.
    pub fn evaluate(
        &self,
        synthesis: &Synthesis,
        start: &[f64],
        sim: &SimOptions,
        support: &SupportModel,
    ) -> Result<Evaluation> {
        let (rollout, rmse) = match synthesis {
            Synthesis::Policy { policy, points } => (
                simulation::simulate_policy(policy, start, sim),
                simulation::velocity_rmse(policy, points)?,
            ),
            Synthesis::Chain(chain) => (
                simulation::simulate_chain(chain, start, sim),
                simulation::chain_velocity_rmse(chain, &self.graph, &self.set)?,
            ),
        };
        let data_support = support.data_support(rollout.positions.iter().map(Vec::as_slice));
        Ok(Evaluation {
            success: rollout.success,
            rmse,
            data_support,
            rollout,
        })
    }
}

#[derive(Debug, Clone)]
pub enum Synthesis {
    Policy {
        policy: StablePolicy,
        /// Reference points the policy was fitted to, for RMSE.
        points: Vec<ReferencePoint>,
    },
    Chain(DsChain),
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub success: bool,
    pub rmse: f64,
    pub data_support: f64,
    pub rollout: SimulationResult,
}

/// Outcome of one method on one instance and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRecord {
    pub instance: usize,
    pub method: Method,
    pub seed: u64,
    pub start: usize,
    pub goal: usize,
    /// Start and goal come from different demonstrations.
    pub cross_demo: bool,
    pub success: bool,
    pub rmse: Option<f64>,
    pub data_support: Option<f64>,
    pub synth_time_s: f64,
    pub sim_time_s: f64,
    /// Why synthesis failed, if it did.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population mean and standard deviation; `NaN` for no samples.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: libm::sqrt(var),
        }
    }
}

/// One aggregate row; quality metrics average successful runs only.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub method: Method,
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub rmse: MeanStd,
    pub data_support: MeanStd,
    pub synth_time_s: MeanStd,
}

/// Aggregates records per method, in [`Method::ALL`] order, over records
/// accepted by `filter`.
pub fn aggregate<F>(records: &[InstanceRecord], filter: F) -> Vec<MetricsRow>
where
    F: Fn(&InstanceRecord) -> bool,
{
    Method::ALL
        .iter()
        .filter_map(|&method| {
            let runs: Vec<&InstanceRecord> = records
                .iter()
                .filter(|r| r.method == method && filter(r))
                .collect();
            if runs.is_empty() {
                return None;
            }
            let ok: Vec<&InstanceRecord> = runs.iter().copied().filter(|r| r.success).collect();
            let rmse: Vec<f64> = ok.iter().filter_map(|r| r.rmse).collect();
            let support: Vec<f64> = ok.iter().filter_map(|r| r.data_support).collect();
            let time: Vec<f64> = ok.iter().map(|r| r.synth_time_s).collect();
            Some(MetricsRow {
                method,
                runs: runs.len(),
                successes: ok.len(),
                success_rate: ok.len() as f64 / runs.len() as f64,
                rmse: MeanStd::of(&rmse),
                data_support: MeanStd::of(&support),
                synth_time_s: MeanStd::of(&time),
            })
        })
        .collect()
}

/// Mixture components of the baseline-DS model in pooled order; exposed
/// for inspection.
pub fn pooled_components(models: &[DemoModel]) -> Vec<gmm::GaussianComponent> {
    models
        .iter()
        .flat_map(|m| m.mixture.components.iter().cloned())
        .collect()
}
