//! Learning and loading the per-demonstration library, shared by the
//! command line and the benchmark runner.

use std::path::{Path, PathBuf};
use std::time::Instant;

use dsstitch_core::benchmark::Library;
use dsstitch_core::graph::{self, DemoModel};
use dsstitch_core::lpvds::FitReport;
use dsstitch_core::DemonstrationSet;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::formats::{dataset_hash, read_json, write_json, ModelFile, ReportFile};
use crate::{AppError, AppResult};

/// One fitted demonstration with its report and wall time.
#[derive(Debug, Clone)]
pub struct LearnedModel {
    pub model: DemoModel,
    pub report: FitReport,
}

/// Fits every demonstration.
pub fn learn(
    set: &DemonstrationSet,
    seed: u64,
    config: &RunConfig,
) -> AppResult<Vec<LearnedModel>> {
    let options = config.library_options();
    (0..set.len())
        .map(|i| {
            let t = Instant::now();
            let (model, mut report) =
                graph::fit_demonstration(set, i, options.k_max, seed, &options.stitch.lpvds)?;
            report.wall_time_s = t.elapsed().as_secs_f64();
            Ok(LearnedModel { model, report })
        })
        .collect()
}

pub fn model_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.model.json"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub demonstration: String,
    pub components: usize,
    pub report: ReportFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingEntry {
    pub demonstration: String,
    pub wall_time_s: f64,
}

/// Writes `<id>.model.json` per demonstration, `reports.json`, and the
/// wall times to `timing.json`.
pub fn save_models(
    dir: &Path,
    set: &DemonstrationSet,
    seed: u64,
    learned: &[LearnedModel],
) -> AppResult<()> {
    let hash = dataset_hash(set);
    for l in learned {
        write_json(
            &model_path(dir, &l.model.id),
            &ModelFile::from_demo_model(&l.model, Some(&l.report), &hash, seed),
        )?;
    }
    let reports: Vec<ReportEntry> = learned
        .iter()
        .map(|l| ReportEntry {
            demonstration: l.model.id.clone(),
            components: l.model.policy.len(),
            report: ReportFile::from_report(&l.report),
        })
        .collect();
    write_json(&dir.join("reports.json"), &reports)?;
    let timing: Vec<TimingEntry> = learned
        .iter()
        .map(|l| TimingEntry {
            demonstration: l.model.id.clone(),
            wall_time_s: l.report.wall_time_s,
        })
        .collect();
    write_json(&dir.join("timing.json"), &timing)
}

/// Loads the model of every demonstration of `set` from `dir` and returns
/// them with the seed they were fitted with. Models of another dataset
/// are refused.
pub fn load_models(dir: &Path, set: &DemonstrationSet) -> AppResult<(Vec<DemoModel>, u64)> {
    let hash = dataset_hash(set);
    let mut models = Vec::with_capacity(set.len());
    let mut seed = None;
    for demo in set.demonstrations() {
        let path = model_path(dir, &demo.id);
        let file: ModelFile = read_json(&path)?;
        if file.dataset_hash.as_deref() != Some(hash.as_str()) {
            return Err(AppError::Usage(format!(
                "{}: model was learned from a different dataset (hash mismatch)",
                path.display()
            )));
        }
        let model = file.to_demo_model()?;
        if model.id != demo.id || model.mixture.assignments.len() != demo.num_points() {
            return Err(AppError::Usage(format!(
                "{}: model does not match demonstration `{}`",
                path.display(),
                demo.id
            )));
        }
        seed = seed.or(file.seed);
        models.push(model);
    }
    Ok((models, seed.unwrap_or(0)))
}

/// Library from saved models when `models` is given, otherwise learned.
pub fn library(
    set: DemonstrationSet,
    models: Option<&Path>,
    seed: u64,
    config: &RunConfig,
) -> AppResult<Library> {
    let options = config.library_options();
    match models {
        Some(dir) => {
            let (models, fitted_seed) = load_models(dir, &set)?;
            Ok(Library::from_models(set, models, fitted_seed, options)?)
        }
        None => {
            let models = learn(&set, seed, config)?
                .into_iter()
                .map(|l| l.model)
                .collect();
            Ok(Library::from_models(set, models, seed, options)?)
        }
    }
}
