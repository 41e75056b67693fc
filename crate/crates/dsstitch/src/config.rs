//! Run configuration: a JSON file whose fields command-line flags override.

use std::path::{Path, PathBuf};

use dsstitch_core::benchmark::{LibraryOptions, Method};
use dsstitch_core::graph::GraphParams;
use dsstitch_core::simulation::SimOptions;
use dsstitch_core::stitching::Reuse;
use dsstitch_core::DemonstrationSet;
use serde::{Deserialize, Serialize};

use crate::formats::read_json;
use crate::{AppError, AppResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub eta_bc: f64,
    pub eta_dist: f64,
    pub eta_dir: f64,
    pub alpha: f64,
    pub reuse: String,
    /// `stitch-sp`, `stitch-spt` or `chain`.
    pub method: String,
    /// Benchmark method names, e.g. `chain-ds`.
    pub methods: Vec<String>,
    pub dt: f64,
    pub t_max: f64,
    /// `None`: 1% of the dataset's bounding-box diagonal.
    pub eps_goal: Option<f64>,
    /// `None`: ten times the mean demonstrated speed.
    pub v_max: Option<f64>,
    pub seeds: Vec<u64>,
    pub k_max: usize,
    pub initial_policy: bool,
    pub dataset: Option<PathBuf>,
    pub models: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub segment_table: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let graph = GraphParams::default();
        Self {
            eta_bc: graph.eta_bc,
            eta_dist: graph.eta_dist,
            eta_dir: graph.eta_dir,
            alpha: 0.5,
            reuse: "ds".into(),
            method: "chain".into(),
            methods: Method::ALL.iter().map(|m| m.name().to_string()).collect(),
            dt: 0.01,
            t_max: 1000.0,
            eps_goal: None,
            v_max: None,
            seeds: vec![1, 2, 3, 4],
            k_max: 10,
            initial_policy: false,
            dataset: None,
            models: None,
            graph: None,
            segment_table: None,
            output: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> AppResult<Self> {
        let config: Self = read_json(path)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> AppResult<()> {
        self.graph_params().validate()?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(AppError::Usage("alpha must lie in [0, 1]".into()));
        }
        if !(self.t_max > 0.0) || !(self.dt > 0.0) {
            return Err(AppError::Usage("dt and t_max must be positive".into()));
        }
        if self.k_max == 0 {
            return Err(AppError::Usage("k_max must be at least 1".into()));
        }
        self.reuse()?;
        self.methods()?;
        Ok(())
    }

    pub fn graph_params(&self) -> GraphParams {
        GraphParams {
            eta_bc: self.eta_bc,
            eta_dist: self.eta_dist,
            eta_dir: self.eta_dir,
        }
    }

    pub fn reuse(&self) -> AppResult<Reuse> {
        Reuse::parse(&self.reuse)
            .map_err(|_| AppError::Usage(format!("unknown reuse level `{}`", self.reuse)))
    }

    pub fn methods(&self) -> AppResult<Vec<Method>> {
        if self.methods.is_empty() {
            return Err(AppError::Usage("empty method list".into()));
        }
        self.methods
            .iter()
            .map(|m| Method::parse(m).map_err(|_| AppError::Usage(format!("unknown method `{m}`"))))
            .collect()
    }

    pub fn library_options(&self) -> LibraryOptions {
        let mut options = LibraryOptions::standard();
        options.graph = self.graph_params();
        options.k_max = self.k_max;
        options.stitch.k_max = self.k_max;
        options.chain.alpha = self.alpha;
        options.chain.initial_policy = self.initial_policy;
        options.chain.stitch = options.stitch.clone();
        options
    }

    pub fn sim_options(&self, set: &DemonstrationSet) -> SimOptions {
        let base = SimOptions::for_dataset(set);
        SimOptions::new(
            self.dt,
            self.t_max,
            self.eps_goal.unwrap_or(base.eps_goal),
            self.v_max.unwrap_or(base.v_max),
        )
    }
}
