//! The Gaussian graph.
//!
//! Every mixture component of every per-demonstration policy becomes a
//! vertex carrying its Gaussian, its linear dynamics and the direction
//! `ψ = A (μ - x*)` those dynamics produce at the component mean. An edge
//! `i → j` exists when `ψ_i` points at least partly toward `μ_j` and the two
//! Gaussians overlap (Bhattacharyya coefficient above `η_BC`). Its weight is
//!
//! ```text
//! w(i, j) = ‖μ_i - μ_j‖^η_dist / cos(φ_ij)^η_dir
//! ```
//!
//! with `φ_ij` the angle between `ψ_i` and `μ_j - μ_i`.

use alloc::collections::BinaryHeap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use nalgebra::DMatrix;

use crate::datasets::DemonstrationSet;
use crate::gmm::{self, GaussianComponent, MixtureFit};
use crate::lpvds::{self, FitReport, LpvdsOptions, StablePolicy};
use crate::math;
use crate::{Error, Result};

/// Densities below this are clamped before dividing endpoint weights.
pub const PDF_FLOOR: f64 = 1e-12;

/// Lower clamp on centre distances before exponentiation.
pub const DISTANCE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphParams {
    pub eta_bc: f64,
    pub eta_dist: f64,
    pub eta_dir: f64,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            eta_bc: 0.05,
            eta_dist: 2.0,
            eta_dir: 1.0,
        }
    }
}

impl GraphParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.eta_bc) {
            return Err(Error::InvalidParameter("eta_bc must lie in [0, 1)"));
        }
        if !(self.eta_dist >= 0.0 && self.eta_dist.is_finite()) {
            return Err(Error::InvalidParameter("eta_dist must be finite and >= 0"));
        }
        if !(self.eta_dir >= 0.0 && self.eta_dir.is_finite()) {
            return Err(Error::InvalidParameter("eta_dir must be finite and >= 0"));
        }
        Ok(())
    }
}

/// A fitted per-demonstration policy together with its clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoModel {
    pub id: String,
    pub policy: StablePolicy,
    pub mixture: MixtureFit,
}

/// Fits one policy per demonstration. Demonstration `i` uses seed
/// `seed + i`.
pub fn fit_demonstrations(
    set: &DemonstrationSet,
    k_max: usize,
    seed: u64,
    options: &LpvdsOptions,
) -> Result<Vec<DemoModel>> {
    (0..set.len())
        .map(|i| Ok(fit_demonstration(set, i, k_max, seed, options)?.0))
        .collect()
}

/// The policy of demonstration `index` as [`fit_demonstrations`] fits it.
pub fn fit_demonstration(
    set: &DemonstrationSet,
    index: usize,
    k_max: usize,
    seed: u64,
    options: &LpvdsOptions,
) -> Result<(DemoModel, FitReport)> {
    let demo = set
        .demonstrations()
        .get(index)
        .ok_or(Error::InvalidParameter("demonstration index out of range"))?;
    let points: Vec<_> = demo.points().cloned().collect();
    let (policy, mixture, report) = lpvds::fit_lpvds_with(
        &points,
        &demo.attractor,
        k_max,
        seed.wrapping_add(index as u64),
        options,
    )?;
    Ok((
        DemoModel {
            id: demo.id.clone(),
            policy,
            mixture,
        },
        report,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphVertex {
    pub component: GaussianComponent,
    pub dynamics: DMatrix<f64>,
    pub direction: Vec<f64>,
    /// Id of the source demonstration.
    pub demo: String,
    /// Component index inside the source policy.
    pub component_index: usize,
    pub reversed: bool,
    /// Indices into the source demonstration's flattened points.
    pub cluster: Vec<usize>,
    /// Attractor of the source policy.
    pub attractor: Vec<f64>,
}

impl GraphVertex {
    pub fn mean(&self) -> &[f64] {
        self.component.mean()
    }

    /// The counterpart with negated dynamics and direction.
    pub fn reversed_counterpart(&self) -> Self {
        Self {
            dynamics: -&self.dynamics,
            direction: math::scale(&self.direction, -1.0),
            reversed: !self.reversed,
            ..self.clone()
        }
    }

    fn same_source(&self, other: &Self) -> bool {
        self.demo == other.demo && self.component_index == other.component_index
    }
}

/// Weight of a move from `from` with direction `psi` to `to`, or `None`
/// when `psi` does not point toward `to`. The angle to a coincident point is
/// undefined, so coincident vertices are never joined.
pub fn edge_weight(from: &[f64], psi: &[f64], to: &[f64], params: &GraphParams) -> Option<f64> {
    let delta = math::sub(to, from);
    if math::norm(&delta) < DISTANCE_FLOOR {
        return None;
    }
    weight_with_cos(math::norm(&delta), math::cos_angle(psi, &delta)?, params)
}

/// Like [`edge_weight`], but an endpoint on top of a vertex counts as
/// perfectly aligned (distance floored).
pub fn endpoint_weight(from: &[f64], psi: &[f64], to: &[f64], params: &GraphParams) -> Option<f64> {
    let delta = math::sub(to, from);
    let dist = math::norm(&delta);
    if dist < DISTANCE_FLOOR {
        return (math::norm(psi) > 0.0).then(|| weight_with_cos(dist, 1.0, params))?;
    }
    weight_with_cos(dist, math::cos_angle(psi, &delta)?, params)
}

fn weight_with_cos(dist: f64, cos: f64, params: &GraphParams) -> Option<f64> {
    if cos <= 0.0 {
        return None;
    }
    let w = libm::pow(dist.max(DISTANCE_FLOOR), params.eta_dist) / libm::pow(cos, params.eta_dir);
    (w.is_finite() && w > 0.0).then_some(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGraph {
    vertices: Vec<GraphVertex>,
    /// Outgoing `(target, weight)` lists sorted by target.
    adjacency: Vec<Vec<(usize, f64)>>,
    params: GraphParams,
}

impl GaussianGraph {
    /// One vertex per component of every model, edges by the criteria above.
    pub fn build(models: &[DemoModel], params: GraphParams) -> Result<Self> {
        params.validate()?;
        if models.is_empty() {
            return Err(Error::EmptySelection);
        }
        let d = models[0].policy.dim();
        let mut vertices = Vec::new();
        for m in models {
            if m.policy.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: m.policy.dim(),
                });
            }
            for (k, (comp, a)) in m
                .policy
                .components()
                .iter()
                .zip(m.policy.dynamics())
                .enumerate()
            {
                let direction = math::mat_vec(a, &math::sub(comp.mean(), m.policy.attractor()));
                vertices.push(GraphVertex {
                    component: comp.clone(),
                    dynamics: a.clone(),
                    direction,
                    demo: m.id.clone(),
                    component_index: k,
                    reversed: false,
                    cluster: m.mixture.cluster(k),
                    attractor: m.policy.attractor().to_vec(),
                });
            }
        }
        Self::from_vertices(vertices, params)
    }

    /// Computes every edge over the given vertices.
    pub fn from_vertices(vertices: Vec<GraphVertex>, params: GraphParams) -> Result<Self> {
        params.validate()?;
        let n = vertices.len();
        let mut adjacency = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let (vi, vj) = (&vertices[i], &vertices[j]);
                let Some(w) = edge_weight(vi.mean(), &vi.direction, vj.mean(), &params) else {
                    continue;
                };
                if gmm::bhattacharyya_coefficient(&vi.component, &vj.component)? > params.eta_bc {
                    adjacency[i].push((j, w));
                }
            }
        }
        Ok(Self {
            vertices,
            adjacency,
            params,
        })
    }

    /// Assembles a graph from stored parts, checking the edge invariants.
    pub fn from_parts(
        vertices: Vec<GraphVertex>,
        edges: Vec<(usize, usize, f64)>,
        params: GraphParams,
    ) -> Result<Self> {
        params.validate()?;
        let n = vertices.len();
        let mut adjacency = vec![Vec::new(); n];
        for (i, j, w) in edges {
            if i >= n {
                return Err(Error::UnknownVertex(i));
            }
            if j >= n {
                return Err(Error::UnknownVertex(j));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::NonFinite("edge weight"));
            }
            adjacency[i].push((j, w));
        }
        for list in &mut adjacency {
            list.sort_by(|a, b| a.0.cmp(&b.0));
            list.dedup_by_key(|e| e.0);
        }
        Ok(Self {
            vertices,
            adjacency,
            params,
        })
    }

    pub fn vertices(&self) -> &[GraphVertex] {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> Result<&GraphVertex> {
        self.vertices.get(i).ok_or(Error::UnknownVertex(i))
    }

    pub fn params(&self) -> &GraphParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn edge(&self, i: usize, j: usize) -> Option<f64> {
        let list = self.adjacency.get(i)?;
        list.binary_search_by(|e| e.0.cmp(&j))
            .ok()
            .map(|k| list[k].1)
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().map(move |&(j, w)| (i, j, w)))
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    pub fn max_out_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Index of the reversed (or original) twin of vertex `i`, if present.
    pub fn counterpart(&self, i: usize) -> Option<usize> {
        let v = &self.vertices[i];
        self.vertices
            .iter()
            .position(|u| u.reversed != v.reversed && u.same_source(v))
    }

    /// Adds a reversed twin for every original vertex of a bidirectional
    /// demonstration (appended after the originals), then recomputes edges.
    pub fn expand_bidirectional(&self, set: &DemonstrationSet) -> Result<Self> {
        let mut vertices = self.vertices.clone();
        for v in &self.vertices {
            if v.reversed {
                continue;
            }
            let demo = set
                .get(&v.demo)
                .ok_or_else(|| Error::UnknownDemonstration(v.demo.clone()))?;
            let exists = self.vertices.iter().any(|u| u.reversed && u.same_source(v));
            if demo.bidirectional && !exists {
                vertices.push(v.reversed_counterpart());
            }
        }
        Self::from_vertices(vertices, self.params)
    }

    /// Drops every edge that has a strictly shorter alternative path.
    pub fn reduce(&self) -> Self {
        let dist = self.all_pairs_distances();
        let adjacency = self
            .adjacency
            .iter()
            .enumerate()
            .map(|(i, list)| {
                list.iter()
                    .copied()
                    .filter(|&(j, w)| !(dist[i][j] < w))
                    .collect()
            })
            .collect();
        Self {
            vertices: self.vertices.clone(),
            adjacency,
            params: self.params,
        }
    }

    /// Shortest-path distance between every ordered vertex pair.
    pub fn all_pairs_distances(&self) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|s| dijkstra(self.len(), s, |u| self.adjacency[u].iter().copied()).0)
            .collect()
    }

    /// Adds the goal (and optionally start) endpoint edges.
    pub fn attach_endpoints(
        &self,
        start: Option<&[f64]>,
        goal: &[f64],
    ) -> Result<EndpointAttachment<'_>> {
        if !math::all_finite(goal) {
            return Err(Error::NonFinite("goal"));
        }
        let mut goal_edges = Vec::new();
        for (j, v) in self.vertices.iter().enumerate() {
            if let Some(w) = endpoint_weight(v.mean(), &v.direction, goal, &self.params) {
                goal_edges.push((j, w / v.component.pdf(goal).max(PDF_FLOOR)));
            }
        }
        if goal_edges.is_empty() {
            return Err(Error::NoGoalEdges);
        }
        let mut start_edges = Vec::new();
        if let Some(x0) = start {
            if !math::all_finite(x0) {
                return Err(Error::NonFinite("start"));
            }
            for (j, v) in self.vertices.iter().enumerate() {
                if let Some(w) = endpoint_weight(x0, &v.direction, v.mean(), &self.params) {
                    start_edges.push((j, w / v.component.pdf(x0).max(PDF_FLOOR)));
                }
            }
        }
        Ok(EndpointAttachment {
            graph: self,
            start: start.map(<[f64]>::to_vec),
            goal: goal.to_vec(),
            start_edges,
            goal_edges,
        })
    }

    /// Shortest path between two vertices, both included.
    pub fn vertex_path(&self, from: usize, to: usize) -> Result<(Vec<usize>, f64)> {
        let (dist, pred) = dijkstra(self.len(), from, |u| self.adjacency[u].iter().copied());
        if !dist[to].is_finite() {
            return Err(Error::NoPath);
        }
        Ok((walk_back(&pred, to), dist[to]))
    }
}

/// Graph plus virtual start `v₀` (outgoing edges only) and goal `v*`
/// (incoming edges only).
#[derive(Debug, Clone)]
pub struct EndpointAttachment<'a> {
    pub graph: &'a GaussianGraph,
    pub start: Option<Vec<f64>>,
    pub goal: Vec<f64>,
    /// `(vertex, weight)` for `v₀ → vertex`.
    pub start_edges: Vec<(usize, f64)>,
    /// `(vertex, weight)` for `vertex → v*`.
    pub goal_edges: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    /// Interior vertices, excluding `v₀` and `v*`.
    pub vertices: Vec<usize>,
    pub weight: f64,
}

impl EndpointAttachment<'_> {
    /// Minimal-weight `v₀ → v*` path.
    pub fn shortest_path(&self) -> Result<PathResult> {
        if self.start.is_none() {
            return Err(Error::InvalidParameter(
                "shortest path needs a start position",
            ));
        }
        let n = self.graph.len();
        let (start, goal) = (n, n + 1);
        let mut goal_in = vec![None; n];
        for &(j, w) in &self.goal_edges {
            goal_in[j] = Some(w);
        }
        let (dist, pred) = dijkstra(n + 2, start, |u| {
            let base: &[(usize, f64)] = if u == start {
                &self.start_edges
            } else if u == goal {
                &[]
            } else {
                &self.graph.adjacency[u]
            };
            let extra = if u < n {
                goal_in[u].map(|w| (goal, w))
            } else {
                None
            };
            base.iter().copied().chain(extra)
        });
        if !dist[goal].is_finite() {
            return Err(Error::NoPath);
        }
        let path = walk_back(&pred, goal);
        Ok(PathResult {
            vertices: path[1..path.len() - 1].to_vec(),
            weight: dist[goal],
        })
    }

    /// Distance from every vertex to `v*` (infinite when unreachable).
    pub fn distances_to_goal(&self) -> Vec<f64> {
        let n = self.graph.len();
        let mut reverse: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n + 1];
        for (i, j, w) in self.graph.edges() {
            reverse[j].push((i, w));
        }
        reverse[n] = self.goal_edges.clone();
        let (dist, _) = dijkstra(n + 1, n, |u| reverse[u].iter().copied());
        dist[..n].to_vec()
    }

    /// Every vertex with a path to `v*`, keeping only the closer member of
    /// each original/reversed pair (the original on ties). Sorted by id.
    pub fn shortest_path_tree(&self) -> Result<Vec<usize>> {
        if self.goal_edges.is_empty() {
            return Err(Error::NoGoalEdges);
        }
        let dist = self.distances_to_goal();
        let g = self.graph;
        let selected = (0..g.len())
            .filter(|&i| dist[i].is_finite())
            .filter(|&i| match g.counterpart(i) {
                Some(j) if dist[j].is_finite() => {
                    let keep_reversed = g.vertices[i].reversed;
                    match dist[i].partial_cmp(&dist[j]) {
                        Some(Ordering::Less) => true,
                        Some(Ordering::Greater) => false,
                        _ => !keep_reversed,
                    }
                }
                _ => true,
            })
            .collect();
        Ok(selected)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Key(f64, usize);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Dijkstra with `(distance, vertex id)` ordering. On equal tentative
/// distances the smaller predecessor id wins.
fn dijkstra<F, I>(n: usize, source: usize, mut out_edges: F) -> (Vec<f64>, Vec<usize>)
where
    F: FnMut(usize) -> I,
    I: Iterator<Item = (usize, f64)>,
{
    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![usize::MAX; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Reverse(Key(0.0, source)));
    while let Some(Reverse(Key(d, u))) = heap.pop() {
        if done[u] {
            continue;
        }
        done[u] = true;
        for (v, w) in out_edges(u) {
            if done[v] {
                continue;
            }
            let nd = d + w;
            if nd < dist[v] || (nd == dist[v] && u < pred[v]) {
                dist[v] = nd;
                pred[v] = u;
                heap.push(Reverse(Key(nd, v)));
            }
        }
    }
    (dist, pred)
}

fn walk_back(pred: &[usize], to: usize) -> Vec<usize> {
    let mut path = vec![to];
    let mut cur = to;
    while pred[cur] != usize::MAX {
        cur = pred[cur];
        path.push(cur);
    }
    path.reverse();
    path
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vertex(mean: [f64; 2], dir: [f64; 2], var: f64) -> GraphVertex {
        GraphVertex {
            component: GaussianComponent::new(1.0, mean.to_vec(), DMatrix::identity(2, 2) * var)
                .unwrap(),
            dynamics: -DMatrix::identity(2, 2),
            direction: dir.to_vec(),
            demo: String::from("d"),
            component_index: 0,
            reversed: false,
            cluster: Vec::new(),
            attractor: vec![0.0, 0.0],
        }
    }

    #[test]
    fn weight_anchor() {
        let w = edge_weight(
            &[0.0, 0.0],
            &[1.0, 0.0],
            &[2.0, 0.0],
            &GraphParams::default(),
        );
        assert_eq!(w, Some(4.0));
        assert_eq!(
            edge_weight(
                &[0.0, 0.0],
                &[0.0, 1.0],
                &[2.0, 0.0],
                &GraphParams::default()
            ),
            None
        );
    }

    #[test]
    fn low_overlap_blocks_edges() {
        // Unit-variance Gaussians √(8·ln 100) apart have BC = 0.01.
        let gap = libm::sqrt(8.0 * libm::log(100.0));
        let g = GaussianGraph::from_vertices(
            vec![
                vertex([0.0, 0.0], [1.0, 0.0], 1.0),
                vertex([gap, 0.0], [1.0, 0.0], 1.0),
            ],
            GraphParams::default(),
        )
        .unwrap();
        let bc = gmm::bhattacharyya_coefficient(&g.vertices[0].component, &g.vertices[1].component)
            .unwrap();
        assert!((bc - 0.01).abs() < 1e-9);
        assert_eq!(g.edge_count(), 0);
    }

    fn triangle(w_ac: f64) -> GaussianGraph {
        let vs = vec![
            vertex([0.0, 0.0], [1.0, 0.0], 1.0),
            vertex([1.0, 0.0], [1.0, 0.0], 1.0),
            vertex([2.0, 0.0], [1.0, 0.0], 1.0),
        ];
        GaussianGraph::from_parts(
            vs,
            vec![(0, 1, 1.0), (1, 2, 1.0), (0, 2, w_ac)],
            GraphParams::default(),
        )
        .unwrap()
    }

    #[test]
    fn reduction_triangles() {
        let reduced = triangle(10.0).reduce();
        assert_eq!(reduced.edge(0, 2), None);
        assert_eq!(reduced.edge_count(), 2);
        assert_eq!(triangle(1.5).reduce().edge_count(), 3);
    }

    #[test]
    fn chain_shortest_path_and_tree() {
        let vs = vec![
            vertex([0.0, 0.0], [1.0, 0.0], 1.0),
            vertex([1.0, 0.0], [1.0, 0.0], 1.0),
            vertex([2.0, 0.0], [1.0, 0.0], 1.0),
        ];
        let g =
            GaussianGraph::from_parts(vs, vec![(0, 1, 1.0), (1, 2, 1.0)], GraphParams::default())
                .unwrap();
        let mut att = g.attach_endpoints(Some(&[-1.0, 0.0]), &[3.0, 0.0]).unwrap();
        att.goal_edges.retain(|e| e.0 == 2);
        att.start_edges.retain(|e| e.0 == 0);
        assert_eq!(att.shortest_path().unwrap().vertices, vec![0, 1, 2]);
        assert_eq!(att.shortest_path_tree().unwrap(), vec![0, 1, 2]);
        att.start_edges.clear();
        assert_eq!(att.shortest_path().unwrap_err(), Error::NoPath);
    }

    #[test]
    fn goal_behind_every_direction() {
        let g = GaussianGraph::from_vertices(
            vec![vertex([0.0, 0.0], [1.0, 0.0], 1.0)],
            GraphParams::default(),
        )
        .unwrap();
        assert_eq!(
            g.attach_endpoints(None, &[-5.0, 0.0]).unwrap_err(),
            Error::NoGoalEdges
        );
        let att = g.attach_endpoints(None, &[0.0, 0.0]).unwrap();
        assert_eq!(att.goal_edges.len(), 1);
        assert!(att.goal_edges[0].1 > 0.0 && att.goal_edges[0].1 < 1e-15);
    }

    #[test]
    fn far_start_weights_use_the_floor() {
        let g = GaussianGraph::from_vertices(
            vec![vertex([0.0, 0.0], [1.0, 0.0], 1.0)],
            GraphParams::default(),
        )
        .unwrap();
        let att = g
            .attach_endpoints(Some(&[-100.0, 0.0]), &[1.0, 0.0])
            .unwrap();
        assert_eq!(att.start_edges, vec![(0, 100.0 * 100.0 / PDF_FLOOR)]);
    }

    #[test]
    fn reversal_pruning() {
        let a = vertex([0.0, 0.0], [1.0, 0.0], 1.0);
        let mut b = a.reversed_counterpart();
        b.component = GaussianComponent::new(1.0, vec![0.0, 0.0], DMatrix::identity(2, 2)).unwrap();
        let g = GaussianGraph::from_parts(vec![a, b], Vec::new(), GraphParams::default()).unwrap();
        let att = |w0: f64, w1: f64| EndpointAttachment {
            graph: &g,
            start: None,
            goal: vec![1.0, 0.0],
            start_edges: Vec::new(),
            goal_edges: vec![(0, w0), (1, w1)],
        };
        assert_eq!(att(3.0, 5.0).shortest_path_tree().unwrap(), vec![0]);
        assert_eq!(att(5.0, 3.0).shortest_path_tree().unwrap(), vec![1]);
        assert_eq!(att(4.0, 4.0).shortest_path_tree().unwrap(), vec![0]);
    }
}
