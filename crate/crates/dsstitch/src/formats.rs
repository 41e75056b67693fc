//! Versioned JSON files: datasets, models, graphs, chains and segment
//! tables. Matrices are stored as row-major nested arrays.

use std::fs;
use std::path::Path;

use dsstitch_core::chaining::{DsChain, SegmentKey, SegmentTable};
use dsstitch_core::datasets::{Demonstration, DemonstrationSet, ReferencePoint, Trajectory};
use dsstitch_core::gmm::{GaussianComponent, MixtureFit};
use dsstitch_core::graph::{DemoModel, GaussianGraph, GraphParams, GraphVertex};
use dsstitch_core::lpvds::{FitReport, StablePolicy};
use dsstitch_core::stitching::Reuse;
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{AppError, AppResult};

pub const FORMAT_VERSION: u32 = 1;

pub type Rows = Vec<Vec<f64>>;

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn rows_to_matrix(rows: &Rows, what: &str) -> AppResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(AppError::Format(format!("{what}: ragged matrix")));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn check_version(version: u32, what: &str) -> AppResult<()> {
    if version != FORMAT_VERSION {
        return Err(AppError::Format(format!(
            "{what}: unsupported version {version}"
        )));
    }
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> AppResult<T> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AppError::Format(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> AppResult<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| AppError::Format(e.to_string()))?;
    text.push('\n');
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| AppError::io(path, e))
}

/// Hex SHA-256 of the compact JSON encoding.
pub fn content_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable");
    Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

// ---------------------------------------------------------------- datasets

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub version: u32,
    pub dimension: usize,
    pub demonstrations: Vec<DemonstrationFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemonstrationFile {
    pub id: String,
    #[serde(default)]
    pub bidirectional: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attractor: Option<Vec<f64>>,
    pub trajectories: Vec<TrajectoryFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamps: Option<Vec<f64>>,
    pub positions: Rows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocities: Option<Rows>,
    /// Stored velocities were reconstructed from positions.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub velocities_estimated: bool,
}

impl DatasetFile {
    pub fn from_set(set: &DemonstrationSet) -> Self {
        let demonstrations = set
            .demonstrations()
            .iter()
            .map(|demo| DemonstrationFile {
                id: demo.id.clone(),
                bidirectional: demo.bidirectional,
                attractor: Some(demo.attractor.clone()),
                trajectories: demo
                    .trajectories
                    .iter()
                    .map(|t| TrajectoryFile {
                        dt: None,
                        timestamps: t.timestamps.clone(),
                        positions: t.points.iter().map(|p| p.position.clone()).collect(),
                        velocities: Some(t.points.iter().map(|p| p.velocity.clone()).collect()),
                        velocities_estimated: t.velocities_estimated,
                    })
                    .collect(),
            })
            .collect();
        Self {
            version: FORMAT_VERSION,
            dimension: set.dimension(),
            demonstrations,
        }
    }

    pub fn to_set(&self) -> AppResult<DemonstrationSet> {
        check_version(self.version, "dataset")?;
        let mut demos = Vec::with_capacity(self.demonstrations.len());
        for demo in &self.demonstrations {
            let trajectories = demo
                .trajectories
                .iter()
                .map(|t| t.to_trajectory(&demo.id))
                .collect::<AppResult<Vec<_>>>()?;
            for t in &trajectories {
                if let Some(p) = t.points.iter().find(|p| p.dim() != self.dimension) {
                    return Err(dsstitch_core::Error::DimensionMismatch {
                        expected: self.dimension,
                        found: p.dim(),
                    }
                    .into());
                }
            }
            let attractor = match &demo.attractor {
                Some(a) => a.clone(),
                None => Demonstration::mean_endpoint(&trajectories)
                    .ok_or_else(|| dsstitch_core::Error::EmptyDemonstration(demo.id.clone()))?,
            };
            demos.push(Demonstration {
                id: demo.id.clone(),
                trajectories,
                attractor,
                bidirectional: demo.bidirectional,
            });
        }
        Ok(DemonstrationSet::new(demos)?)
    }
}

impl TrajectoryFile {
    fn timestamps(&self) -> AppResult<Option<Vec<f64>>> {
        match (&self.timestamps, self.dt) {
            (Some(ts), _) => Ok(Some(ts.clone())),
            (None, Some(dt)) if dt > 0.0 && dt.is_finite() => Ok(Some(
                (0..self.positions.len()).map(|i| i as f64 * dt).collect(),
            )),
            (None, Some(_)) => Err(AppError::Format("trajectory dt must be positive".into())),
            (None, None) => Ok(None),
        }
    }

    fn to_trajectory(&self, demo: &str) -> AppResult<Trajectory> {
        let timestamps = self.timestamps()?;
        match &self.velocities {
            Some(vel) => {
                if vel.len() != self.positions.len() {
                    return Err(AppError::Format(format!(
                        "demonstration `{demo}`: {} positions but {} velocities",
                        self.positions.len(),
                        vel.len()
                    )));
                }
                let points = self
                    .positions
                    .iter()
                    .zip(vel)
                    .map(|(p, v)| ReferencePoint::new(p.clone(), v.clone()))
                    .collect();
                Ok(Trajectory {
                    points,
                    timestamps,
                    velocities_estimated: self.velocities_estimated,
                })
            }
            None => {
                let ts = timestamps.ok_or_else(|| {
                    AppError::Format(format!(
                        "demonstration `{demo}`: trajectory without velocities needs `dt` or `timestamps`"
                    ))
                })?;
                Ok(Trajectory::from_positions(self.positions.clone(), ts)?)
            }
        }
    }
}

pub fn load_dataset(path: &Path) -> AppResult<DemonstrationSet> {
    read_json::<DatasetFile>(path)?.to_set()
}

pub fn save_dataset(path: &Path, set: &DemonstrationSet) -> AppResult<()> {
    write_json(path, &DatasetFile::from_set(set))
}

pub fn dataset_hash(set: &DemonstrationSet) -> String {
    content_hash(&DatasetFile::from_set(set))
}

// ------------------------------------------------------------------ models

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentFile {
    pub prior: f64,
    pub mean: Vec<f64>,
    pub covariance: Rows,
}

impl ComponentFile {
    pub fn from_component(c: &GaussianComponent) -> Self {
        Self {
            prior: c.prior(),
            mean: c.mean().to_vec(),
            covariance: matrix_to_rows(c.covariance()),
        }
    }

    pub fn to_component(&self) -> AppResult<GaussianComponent> {
        Ok(GaussianComponent::new(
            self.prior,
            self.mean.clone(),
            rows_to_matrix(&self.covariance, "covariance")?,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub stability_margins: Vec<f64>,
}

impl ReportFile {
    pub fn from_report(r: &FitReport) -> Self {
        Self {
            objective: r.objective,
            iterations: r.iterations,
            evaluations: r.evaluations,
            converged: r.converged,
            stability_margins: r.stability_margins.clone(),
        }
    }
}

/// Graph vertex a stitched policy was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedVertex {
    pub vertex: usize,
    pub demo: String,
    pub component: usize,
    pub reversed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub reuse: String,
    pub selection: Vec<SelectedVertex>,
}

impl Provenance {
    pub fn new(
        method: &str,
        reuse: Reuse,
        graph: &GaussianGraph,
        selection: &[usize],
    ) -> AppResult<Self> {
        let selection = selection
            .iter()
            .map(|&v| {
                let x = graph.vertex(v)?;
                Ok(SelectedVertex {
                    vertex: v,
                    demo: x.demo.clone(),
                    component: x.component_index,
                    reversed: x.reversed,
                })
            })
            .collect::<AppResult<Vec<_>>>()?;
        Ok(Self {
            method: method.to_string(),
            reuse: reuse.name().to_string(),
            selection,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub dimension: usize,
    pub attractor: Vec<f64>,
    pub components: Vec<ComponentFile>,
    pub dynamics: Vec<Rows>,
    pub lyapunov: Rows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demonstration: Option<String>,
    /// Hard component assignment of every demonstration point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignments: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ReportFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl ModelFile {
    pub fn from_policy(policy: &StablePolicy) -> Self {
        Self {
            version: FORMAT_VERSION,
            dimension: policy.dim(),
            attractor: policy.attractor().to_vec(),
            components: policy
                .components()
                .iter()
                .map(ComponentFile::from_component)
                .collect(),
            dynamics: policy.dynamics().iter().map(matrix_to_rows).collect(),
            lyapunov: matrix_to_rows(policy.lyapunov()),
            demonstration: None,
            assignments: None,
            dataset_hash: None,
            seed: None,
            report: None,
            provenance: None,
        }
    }

    pub fn from_demo_model(
        model: &DemoModel,
        report: Option<&FitReport>,
        dataset_hash: &str,
        seed: u64,
    ) -> Self {
        Self {
            demonstration: Some(model.id.clone()),
            assignments: Some(model.mixture.assignments.clone()),
            dataset_hash: Some(dataset_hash.to_string()),
            seed: Some(seed),
            report: report.map(ReportFile::from_report),
            ..Self::from_policy(&model.policy)
        }
    }

    pub fn to_policy(&self) -> AppResult<StablePolicy> {
        check_version(self.version, "model")?;
        if self.attractor.len() != self.dimension {
            return Err(dsstitch_core::Error::DimensionMismatch {
                expected: self.dimension,
                found: self.attractor.len(),
            }
            .into());
        }
        let components = self
            .components
            .iter()
            .map(ComponentFile::to_component)
            .collect::<AppResult<Vec<_>>>()?;
        let dynamics = self
            .dynamics
            .iter()
            .map(|a| rows_to_matrix(a, "dynamics"))
            .collect::<AppResult<Vec<_>>>()?;
        Ok(StablePolicy::new(
            components,
            dynamics,
            rows_to_matrix(&self.lyapunov, "lyapunov")?,
            self.attractor.clone(),
        )?)
    }

    /// Per-demonstration model with its clustering.
    pub fn to_demo_model(&self) -> AppResult<DemoModel> {
        let policy = self.to_policy()?;
        let id = self
            .demonstration
            .clone()
            .ok_or_else(|| AppError::Format("model lacks `demonstration`".into()))?;
        let assignments = self
            .assignments
            .clone()
            .ok_or_else(|| AppError::Format(format!("model `{id}` lacks `assignments`")))?;
        let mixture = MixtureFit::from_components(policy.components().to_vec(), assignments)?;
        Ok(DemoModel {
            id,
            policy,
            mixture,
        })
    }
}

// ------------------------------------------------------------------ graphs

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub eta_bc: f64,
    pub eta_dist: f64,
    pub eta_dir: f64,
}

impl From<GraphParams> for ParamsFile {
    fn from(p: GraphParams) -> Self {
        Self {
            eta_bc: p.eta_bc,
            eta_dist: p.eta_dist,
            eta_dir: p.eta_dir,
        }
    }
}

impl From<ParamsFile> for GraphParams {
    fn from(p: ParamsFile) -> Self {
        Self {
            eta_bc: p.eta_bc,
            eta_dist: p.eta_dist,
            eta_dir: p.eta_dir,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexFile {
    pub id: usize,
    pub demo: String,
    pub component_index: usize,
    pub reversed: bool,
    pub prior: f64,
    pub mean: Vec<f64>,
    pub covariance: Rows,
    pub dynamics: Rows,
    pub direction: Vec<f64>,
    pub attractor: Vec<f64>,
    pub cluster: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeFile {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub version: u32,
    pub dimension: usize,
    pub params: ParamsFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_hash: Option<String>,
    pub vertices: Vec<VertexFile>,
    pub edges: Vec<EdgeFile>,
}

impl GraphFile {
    pub fn from_graph(graph: &GaussianGraph, dataset_hash: Option<&str>) -> Self {
        let vertices = graph
            .vertices()
            .iter()
            .enumerate()
            .map(|(id, v)| VertexFile {
                id,
                demo: v.demo.clone(),
                component_index: v.component_index,
                reversed: v.reversed,
                prior: v.component.prior(),
                mean: v.mean().to_vec(),
                covariance: matrix_to_rows(v.component.covariance()),
                dynamics: matrix_to_rows(&v.dynamics),
                direction: v.direction.clone(),
                attractor: v.attractor.clone(),
                cluster: v.cluster.clone(),
            })
            .collect();
        let edges = graph
            .edges()
            .map(|(from, to, weight)| EdgeFile { from, to, weight })
            .collect();
        Self {
            version: FORMAT_VERSION,
            dimension: graph.vertices().first().map_or(0, |v| v.mean().len()),
            params: (*graph.params()).into(),
            dataset_hash: dataset_hash.map(str::to_string),
            vertices,
            edges,
        }
    }

    pub fn to_graph(&self) -> AppResult<GaussianGraph> {
        check_version(self.version, "graph")?;
        let mut vertices = Vec::with_capacity(self.vertices.len());
        for (i, v) in self.vertices.iter().enumerate() {
            if v.id != i {
                return Err(AppError::Format(format!(
                    "graph vertex {i} has id {}",
                    v.id
                )));
            }
            vertices.push(GraphVertex {
                component: GaussianComponent::new(
                    v.prior,
                    v.mean.clone(),
                    rows_to_matrix(&v.covariance, "covariance")?,
                )?,
                dynamics: rows_to_matrix(&v.dynamics, "dynamics")?,
                direction: v.direction.clone(),
                demo: v.demo.clone(),
                component_index: v.component_index,
                reversed: v.reversed,
                cluster: v.cluster.clone(),
                attractor: v.attractor.clone(),
            });
        }
        let edges = self
            .edges
            .iter()
            .map(|e| (e.from, e.to, e.weight))
            .collect();
        Ok(GaussianGraph::from_parts(
            vertices,
            edges,
            self.params.into(),
        )?)
    }
}

// ---------------------------------------------------------- segment tables

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentKeyFile {
    pub vertices: [usize; 3],
    pub reuse: String,
}

impl From<&SegmentKey> for SegmentKeyFile {
    fn from(k: &SegmentKey) -> Self {
        Self {
            vertices: k.vertices,
            reuse: k.reuse.name().to_string(),
        }
    }
}

impl SegmentKeyFile {
    pub fn to_key(&self) -> AppResult<SegmentKey> {
        Ok(SegmentKey {
            vertices: self.vertices,
            reuse: Reuse::parse(&self.reuse)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEntryFile {
    pub key: SegmentKeyFile,
    pub model: ModelFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTableFile {
    pub version: u32,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph_hash: Option<String>,
    pub entries: Vec<SegmentEntryFile>,
}

impl SegmentTableFile {
    pub fn from_table(table: &SegmentTable, graph_hash: Option<&str>) -> Self {
        Self {
            version: FORMAT_VERSION,
            seed: table.seed,
            graph_hash: graph_hash.map(str::to_string),
            entries: table
                .iter()
                .map(|(k, p)| SegmentEntryFile {
                    key: k.into(),
                    model: ModelFile::from_policy(p),
                })
                .collect(),
        }
    }

    pub fn to_table(&self) -> AppResult<SegmentTable> {
        check_version(self.version, "segment table")?;
        let mut table = SegmentTable::new(self.seed);
        for e in &self.entries {
            table.insert(e.key.to_key()?, e.model.to_policy()?);
        }
        Ok(table)
    }
}

// ------------------------------------------------------------------ chains

/// A chain policy: a segment-table reference or an inline model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainPolicyFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment: Option<SegmentKeyFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainFile {
    pub version: u32,
    pub dimension: usize,
    pub goal: Vec<f64>,
    pub alpha: f64,
    pub has_initial: bool,
    pub vertices: Vec<usize>,
    pub policies: Vec<ChainPolicyFile>,
    pub triggers: Vec<[Vec<f64>; 3]>,
    pub timers: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_hash: Option<String>,
    /// Segment table that referenced policies resolve against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_table: Option<String>,
}

impl ChainFile {
    /// With `by_reference`, segment policies are stored as table keys only.
    pub fn from_chain(chain: &DsChain, by_reference: bool) -> Self {
        let policies = chain
            .policies()
            .iter()
            .zip(chain.segment_keys())
            .map(|(p, key)| match key {
                Some(k) if by_reference => ChainPolicyFile {
                    segment: Some(k.into()),
                    model: None,
                },
                _ => ChainPolicyFile {
                    segment: key.as_ref().map(Into::into),
                    model: Some(ModelFile::from_policy(p)),
                },
            })
            .collect();
        Self {
            version: FORMAT_VERSION,
            dimension: chain.dim(),
            goal: chain.goal().to_vec(),
            alpha: chain.alpha(),
            has_initial: chain.has_initial(),
            vertices: chain.vertices().to_vec(),
            policies,
            triggers: chain.triggers().to_vec(),
            timers: chain.timers().to_vec(),
            dataset_hash: None,
            segment_table: None,
        }
    }

    pub fn needs_table(&self) -> bool {
        self.policies.iter().any(|p| p.model.is_none())
    }

    pub fn to_chain(&self, table: Option<&SegmentTable>) -> AppResult<DsChain> {
        check_version(self.version, "chain")?;
        let mut policies = Vec::with_capacity(self.policies.len());
        let mut keys = Vec::with_capacity(self.policies.len());
        for p in &self.policies {
            let key = p.segment.as_ref().map(SegmentKeyFile::to_key).transpose()?;
            let policy = match (&p.model, key) {
                (Some(m), _) => m.to_policy()?,
                (None, Some(k)) => table.and_then(|t| t.get(&k)).cloned().ok_or_else(|| {
                    AppError::Format(format!(
                        "segment {:?} not found in the segment table",
                        k.vertices
                    ))
                })?,
                (None, None) => {
                    return Err(AppError::Format(
                        "chain policy has neither model nor segment".into(),
                    ))
                }
            };
            policies.push(policy);
            keys.push(key);
        }
        Ok(DsChain::new(
            policies,
            self.triggers.clone(),
            self.timers.clone(),
            self.alpha,
            self.goal.clone(),
            self.has_initial,
            self.vertices.clone(),
            keys,
        )?)
    }
}
