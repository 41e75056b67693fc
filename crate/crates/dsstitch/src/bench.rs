//! Benchmark runner: every method on every ordered pair of pooled
//! endpoints, for every seed, with timing and CSV output.
//!
//! Start-agnostic syntheses (baselines, shortest path tree) are computed
//! once per goal and rolled out from every start. Chain segments needed by
//! any instance are fitted up front into the segment table, so chain
//! synthesis time covers the path query, the goal policy and the timers.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::Instant;

use dsstitch_core::benchmark::{
    self, aggregate, crosses_demonstrations, instances, pooled_endpoints, Endpoint, InstanceRecord,
    Library, MeanStd, Method, MetricsRow, Synthesis,
};
use dsstitch_core::chaining::{self, SegmentKey, SegmentTable};
use dsstitch_core::simulation::{SimOptions, SupportModel};
use dsstitch_core::stitching::Reuse;
use dsstitch_core::DemonstrationSet;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::formats::write_json;
use crate::pipeline;
use crate::{AppError, AppResult};

/// Endpoints closer than this fraction of the dataset diagonal are merged.
pub const ENDPOINT_MERGE_REL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedTiming {
    pub seed: u64,
    pub learn_s: f64,
    pub segment_precompute_s: f64,
    pub segment_fits: usize,
    pub segment_failures: usize,
}

#[derive(Debug, Clone)]
pub struct BenchOutput {
    pub endpoints: Vec<Endpoint>,
    pub records: Vec<InstanceRecord>,
    pub timing: Vec<SeedTiming>,
}

impl BenchOutput {
    pub fn aggregate(&self, cross_demo_only: bool) -> Vec<MetricsRow> {
        aggregate(&self.records, |r| !cross_demo_only || r.cross_demo)
    }
}

pub fn endpoints(set: &DemonstrationSet) -> Vec<Endpoint> {
    pooled_endpoints(set, ENDPOINT_MERGE_REL * set.diagonal())
}

/// Runs the benchmark on up to `jobs` threads.
pub fn run(set: &DemonstrationSet, config: &RunConfig, jobs: usize) -> AppResult<BenchOutput> {
    config.validate()?;
    let methods = config.methods()?;
    if set.len() < 2 {
        return Err(AppError::Usage(
            "benchmarking needs at least two demonstrations".into(),
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| AppError::Usage(e.to_string()))?;
    pool.install(|| {
        let endpoints = endpoints(set);
        let mut records = Vec::new();
        let mut timing = Vec::new();
        for &seed in &config.seeds {
            let (mut recs, t) = run_seed(set, config, &methods, &endpoints, seed)?;
            records.append(&mut recs);
            timing.push(t);
        }
        Ok(BenchOutput {
            endpoints,
            records,
            timing,
        })
    })
}

struct Job<'a> {
    method: Method,
    inst: benchmark::Instance,
    start: &'a [f64],
    goal: &'a [f64],
}

fn run_seed(
    set: &DemonstrationSet,
    config: &RunConfig,
    methods: &[Method],
    endpoints: &[Endpoint],
    seed: u64,
) -> AppResult<(Vec<InstanceRecord>, SeedTiming)> {
    let t = Instant::now();
    let lib = pipeline::library(set.clone(), None, seed, config)?;
    let learn_s = t.elapsed().as_secs_f64();
    let sim = config.sim_options(set);
    let support = SupportModel::new(set)?;
    let insts = instances(endpoints.len());

    // Start-agnostic syntheses, once per goal.
    let goals: BTreeSet<usize> = insts.iter().map(|i| i.goal).collect();
    let agnostic: Vec<(Method, usize)> = methods
        .iter()
        .filter(|m| m.start_agnostic())
        .flat_map(|&m| goals.iter().map(move |&g| (m, g)))
        .collect();
    let cached: BTreeMap<(Method, usize), (Result<Synthesis, String>, f64)> = agnostic
        .par_iter()
        .map(|&(m, g)| {
            let t = Instant::now();
            let mut scratch = SegmentTable::new(seed);
            let r = lib
                .synthesize(
                    m,
                    &endpoints[g].position,
                    &endpoints[g].position,
                    seed,
                    &mut scratch,
                )
                .map_err(|e| e.to_string());
            ((m, g), (r, t.elapsed().as_secs_f64()))
        })
        .collect();

    // Segment table for every chain instance.
    let t = Instant::now();
    let chain_reuse: Vec<Reuse> = methods
        .iter()
        .filter_map(|m| match m {
            Method::Chaining(r) => Some(*r),
            _ => None,
        })
        .collect();
    let mut keys = BTreeSet::new();
    if !chain_reuse.is_empty() {
        for inst in &insts {
            if let Ok(path) = lib.path(
                &endpoints[inst.start].position,
                &endpoints[inst.goal].position,
            ) {
                for w in path.windows(3) {
                    for &reuse in &chain_reuse {
                        keys.insert(SegmentKey {
                            vertices: [w[0], w[1], w[2]],
                            reuse,
                        });
                    }
                }
            }
        }
    }
    let stitch = lib.options.chain.stitch.clone();
    let fitted: Vec<(SegmentKey, Result<_, _>)> = keys
        .into_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|k| {
            (
                k,
                chaining::fit_segment(&lib.graph, k, &lib.set, seed, &stitch),
            )
        })
        .collect();
    let mut table = SegmentTable::new(seed);
    let mut segment_failures = 0;
    let segment_fits = fitted.len();
    for (k, r) in fitted {
        match r {
            Ok(p) => table.insert(k, p),
            Err(_) => segment_failures += 1,
        }
    }
    let segment_precompute_s = t.elapsed().as_secs_f64();

    let jobs: Vec<Job> = insts
        .iter()
        .flat_map(|&inst| {
            methods.iter().map(move |&method| Job {
                method,
                inst,
                start: &endpoints[inst.start].position,
                goal: &endpoints[inst.goal].position,
            })
        })
        .collect();
    let records = jobs
        .par_iter()
        .map(|job| {
            let (synthesis, synth_time_s) = if job.method.start_agnostic() {
                let (r, t) = &cached[&(job.method, job.inst.goal)];
                (r.clone(), *t)
            } else {
                let t = Instant::now();
                let mut local = table.clone();
                let r = lib
                    .synthesize(job.method, job.start, job.goal, seed, &mut local)
                    .map_err(|e| e.to_string());
                (r, t.elapsed().as_secs_f64())
            };
            evaluate(
                &lib,
                job,
                seed,
                synthesis,
                synth_time_s,
                &sim,
                &support,
                endpoints,
            )
        })
        .collect();
    Ok((
        records,
        SeedTiming {
            seed,
            learn_s,
            segment_precompute_s,
            segment_fits,
            segment_failures,
        },
    ))
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    lib: &Library,
    job: &Job,
    seed: u64,
    synthesis: Result<Synthesis, String>,
    synth_time_s: f64,
    sim: &SimOptions,
    support: &SupportModel,
    endpoints: &[Endpoint],
) -> InstanceRecord {
    let mut record = InstanceRecord {
        instance: job.inst.id,
        method: job.method,
        seed,
        start: job.inst.start,
        goal: job.inst.goal,
        cross_demo: crosses_demonstrations(endpoints, &job.inst),
        success: false,
        rmse: None,
        data_support: None,
        synth_time_s,
        sim_time_s: 0.0,
        error: None,
    };
    let synthesis = match synthesis {
        Ok(s) => s,
        Err(e) => {
            record.error = Some(e);
            return record;
        }
    };
    let t = Instant::now();
    match lib.evaluate(&synthesis, job.start, sim, support) {
        Ok(e) => {
            record.success = e.success;
            record.rmse = Some(e.rmse);
            record.data_support = Some(e.data_support);
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record.sim_time_s = t.elapsed().as_secs_f64();
    record
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_instances(path: &Path, records: &[InstanceRecord]) -> AppResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "instance",
        "method",
        "seed",
        "start",
        "goal",
        "cross_demo",
        "success",
        "rmse",
        "data_support",
        "error",
    ])?;
    for r in records {
        w.write_record([
            r.instance.to_string(),
            r.method.name().to_string(),
            r.seed.to_string(),
            r.start.to_string(),
            r.goal.to_string(),
            r.cross_demo.to_string(),
            r.success.to_string(),
            opt(r.rmse),
            opt(r.data_support),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

/// Pooled endpoint coordinates, indexed as in `instances.csv`.
pub fn write_endpoints(path: &Path, endpoints: &[Endpoint]) -> AppResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = endpoints.first().map_or(0, |e| e.position.len());
    let mut header = vec!["endpoint".to_string()];
    header.extend((0..d).map(|i| format!("x{i}")));
    header.push("demos".into());
    w.write_record(&header)?;
    for (i, e) in endpoints.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(e.position.iter().map(f64::to_string));
        row.push(
            e.demos
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(" "),
        );
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

/// Wall times per record, kept apart from the reproducible outputs.
pub fn write_instance_timing(path: &Path, records: &[InstanceRecord]) -> AppResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["instance", "method", "seed", "synth_time_s", "sim_time_s"])?;
    for r in records {
        w.write_record([
            r.instance.to_string(),
            r.method.name().to_string(),
            r.seed.to_string(),
            r.synth_time_s.to_string(),
            r.sim_time_s.to_string(),
        ])?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

/// One row per method and subset (`all`, `cross_demo`): success rate and
/// mean/std of RMSE and data support over successful runs. Computation
/// times go to a separate file when `timing` is set, since they are the
/// only non-reproducible columns.
pub fn write_aggregate(
    path: &Path,
    dataset: &str,
    output: &BenchOutput,
    timing: bool,
) -> AppResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    if timing {
        w.write_record([
            "dataset",
            "subset",
            "method",
            "successes",
            "comp_time_mean_s",
            "comp_time_std_s",
        ])?;
        for (subset, rows) in [
            ("all", output.aggregate(false)),
            ("cross_demo", output.aggregate(true)),
        ] {
            for row in rows {
                w.write_record([
                    dataset.to_string(),
                    subset.to_string(),
                    row.method.name().to_string(),
                    row.successes.to_string(),
                    row.synth_time_s.mean.to_string(),
                    row.synth_time_s.std.to_string(),
                ])?;
            }
        }
        return w.flush().map_err(|e| AppError::io(path, e));
    }
    w.write_record([
        "dataset",
        "subset",
        "method",
        "label",
        "runs",
        "successes",
        "success_pct",
        "rmse_mean",
        "rmse_std",
        "data_support_mean",
        "data_support_std",
    ])?;
    for (subset, rows) in [
        ("all", output.aggregate(false)),
        ("cross_demo", output.aggregate(true)),
    ] {
        for row in rows {
            let ms = |m: MeanStd| [m.mean.to_string(), m.std.to_string()];
            let [rm, rs] = ms(row.rmse);
            let [dm, dsd] = ms(row.data_support);
            w.write_record([
                dataset.to_string(),
                subset.to_string(),
                row.method.name().to_string(),
                row.method.label().to_string(),
                row.runs.to_string(),
                row.successes.to_string(),
                (100.0 * row.success_rate).to_string(),
                rm,
                rs,
                dm,
                dsd,
            ])?;
        }
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

/// Writes `instances.csv` and `aggregate.csv` into `dir`, and the wall
/// times to `timing_instances.csv`, `timing_aggregate.csv` and `timing.json`.
pub fn write_outputs(dir: &Path, dataset: &str, output: &BenchOutput) -> AppResult<()> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    write_endpoints(&dir.join("endpoints.csv"), &output.endpoints)?;
    write_instances(&dir.join("instances.csv"), &output.records)?;
    write_aggregate(&dir.join("aggregate.csv"), dataset, output, false)?;
    write_instance_timing(&dir.join("timing_instances.csv"), &output.records)?;
    write_aggregate(&dir.join("timing_aggregate.csv"), dataset, output, true)?;
    write_json(&dir.join("timing.json"), &output.timing)
}
