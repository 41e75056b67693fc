//! One time-invariant stable policy from a graph vertex selection.

use alloc::vec::Vec;

use crate::datasets::{DemonstrationSet, ReferencePoint};
use crate::gmm::MixtureFit;
use crate::graph::GaussianGraph;
use crate::lpvds::{self, FitReport, LpvdsOptions, StablePolicy};
use crate::{Error, Result};

/// How much of the per-demonstration policies a synthesis keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Reuse {
    /// Refit both the mixture and the dynamics ("All").
    NoReuse,
    /// Keep the selected Gaussians, refit only dynamics and `P` ("DS").
    ReuseGaussians,
}

impl Reuse {
    pub const ALL: [Reuse; 2] = [Reuse::NoReuse, Reuse::ReuseGaussians];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Reuse::NoReuse),
            "ds" => Ok(Reuse::ReuseGaussians),
            _ => Err(Error::InvalidParameter("reuse must be `all` or `ds`")),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Reuse::NoReuse => "all",
            Reuse::ReuseGaussians => "ds",
        }
    }

    /// Label as in the results table, e.g. `All`.
    pub fn label(&self) -> &'static str {
        match self {
            Reuse::NoReuse => "All",
            Reuse::ReuseGaussians => "DS",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StitchMethod {
    ShortestPath,
    ShortestPathTree,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StitchRequest {
    /// Vertex ids: a path (shortest path) or a set (shortest path tree).
    pub selection: Vec<usize>,
    pub goal: Vec<f64>,
    pub reuse: Reuse,
    pub method: StitchMethod,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StitchOptions {
    /// Upper bound on K when the mixture is refitted.
    pub k_max: usize,
    pub lpvds: LpvdsOptions,
}

impl Default for StitchOptions {
    fn default() -> Self {
        Self {
            k_max: 10,
            lpvds: LpvdsOptions::default(),
        }
    }
}

/// Reference points clustered to `vertex`, with velocities negated for
/// reversed vertices.
pub fn vertex_points(
    graph: &GaussianGraph,
    vertex: usize,
    set: &DemonstrationSet,
) -> Result<Vec<ReferencePoint>> {
    let v = graph.vertex(vertex)?;
    let demo = set
        .get(&v.demo)
        .ok_or_else(|| Error::UnknownDemonstration(v.demo.clone()))?;
    let points: Vec<&ReferencePoint> = demo.points().collect();
    v.cluster
        .iter()
        .map(|&i| {
            let p = points.get(i).ok_or(Error::InvalidParameter(
                "cluster index outside demonstration",
            ))?;
            Ok(if v.reversed {
                p.reversed()
            } else {
                (*p).clone()
            })
        })
        .collect()
}

/// Union of the clusters of `selection`, in selection order.
pub fn collect_filtered_data(
    graph: &GaussianGraph,
    selection: &[usize],
    set: &DemonstrationSet,
) -> Result<Vec<ReferencePoint>> {
    Ok(collect_labelled(graph, selection, set)?.0)
}

fn collect_labelled(
    graph: &GaussianGraph,
    selection: &[usize],
    set: &DemonstrationSet,
) -> Result<(Vec<ReferencePoint>, Vec<usize>)> {
    if selection.is_empty() {
        return Err(Error::EmptySelection);
    }
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (k, &v) in selection.iter().enumerate() {
        let pts = vertex_points(graph, v, set)?;
        labels.extend(core::iter::repeat_n(k, pts.len()));
        points.extend(pts);
    }
    if points.is_empty() {
        return Err(Error::EmptySelection);
    }
    Ok((points, labels))
}

fn validate(req: &StitchRequest) -> Result<()> {
    if req.selection.is_empty() {
        return Err(Error::EmptySelection);
    }
    if !crate::math::all_finite(&req.goal) {
        return Err(Error::NonFinite("goal"));
    }
    Ok(())
}

/// Fits a new mixture and dynamics on the selection's data.
pub fn stitch_no_reuse(
    graph: &GaussianGraph,
    req: &StitchRequest,
    set: &DemonstrationSet,
    seed: u64,
    options: &StitchOptions,
) -> Result<(StablePolicy, FitReport)> {
    validate(req)?;
    let points = collect_filtered_data(graph, &req.selection, set)?;
    let k_max = match req.method {
        StitchMethod::ShortestPath => options.k_max,
        StitchMethod::ShortestPathTree => options.k_max.min(req.selection.len()),
    };
    let (policy, _, report) =
        lpvds::fit_lpvds_with(&points, &req.goal, k_max.max(1), seed, &options.lpvds)?;
    Ok((policy, report))
}

/// Keeps the selection's Gaussians (priors renormalized) and refits the
/// dynamics.
pub fn stitch_reuse_gaussians(
    graph: &GaussianGraph,
    req: &StitchRequest,
    set: &DemonstrationSet,
    options: &StitchOptions,
) -> Result<(StablePolicy, FitReport)> {
    validate(req)?;
    let (points, labels) = collect_labelled(graph, &req.selection, set)?;
    let components = req
        .selection
        .iter()
        .map(|&v| Ok(graph.vertex(v)?.component.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mixture = MixtureFit::from_components(components, labels)?;
    lpvds::fit_ds_given_gmm_with(&mixture, &points, &req.goal, &options.lpvds.ds)
}

pub fn stitch(
    graph: &GaussianGraph,
    req: &StitchRequest,
    set: &DemonstrationSet,
    seed: u64,
    options: &StitchOptions,
) -> Result<(StablePolicy, FitReport)> {
    match req.reuse {
        Reuse::NoReuse => stitch_no_reuse(graph, req, set, seed, options),
        Reuse::ReuseGaussians => stitch_reuse_gaussians(graph, req, set, options),
    }
}
