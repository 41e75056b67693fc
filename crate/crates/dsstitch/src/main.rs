use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dsstitch::bench;
use dsstitch::config::RunConfig;
use dsstitch::formats::{
    content_hash, dataset_hash, load_dataset, read_json, save_dataset, write_json, ChainFile,
    GraphFile, ModelFile, Provenance, SegmentTableFile,
};
use dsstitch::pipeline;
use dsstitch::plot::{self, Scene};
use dsstitch::{AppError, AppResult};
use dsstitch_core::chaining::{self, ChainOptions, SegmentTable};
use dsstitch_core::datasets;
use dsstitch_core::lpvds;
use dsstitch_core::simulation::{self, SimOptions, SimulationResult};
use dsstitch_core::stitching::{self, StitchMethod, StitchRequest};
use dsstitch_core::DemonstrationSet;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "dsstitch",
    version,
    about = "Stable motion policies stitched and chained from demonstrations"
)]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic 2D dataset.
    Gen {
        #[arg(long)]
        scenario: String,
        #[arg(long, env = "DSSTITCH_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Fit one stable policy per demonstration.
    Learn {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, env = "DSSTITCH_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        k_max: Option<usize>,
        /// Output directory for the model files.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Build the expanded and reduced Gaussian graph from learned models.
    Graph {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        models: Option<PathBuf>,
        #[command(flatten)]
        eta: EtaArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Synthesize a stitched policy or a chain for a start/goal pair.
    Solve(SolveArgs),
    /// Roll out a policy or chain file and write the trajectory as CSV.
    Simulate {
        /// Policy (model) or chain file.
        artifact: PathBuf,
        #[arg(long, value_parser = parse_point)]
        start: Point,
        /// Supplies default ε_goal and v_max.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        segment_table: Option<PathBuf>,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run every method on every ordered pair of pooled endpoints.
    Bench {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Comma-separated method names, e.g. `chain-ds,stitch-sp-all`.
        #[arg(long)]
        methods: Option<String>,
        /// Comma-separated seeds.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        eta: EtaArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Render a dataset, graph, model and rollouts to SVG (2D only).
    Plot {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Model file whose Gaussians are drawn.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Rollout CSV written by `simulate`; repeatable.
        #[arg(long)]
        rollout: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Check the stability conditions of a policy, or the convergence
    /// criteria of a chain.
    Verify {
        artifact: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        segment_table: Option<PathBuf>,
        #[command(flatten)]
        sim: SimArgs,
    },
}

#[derive(Args)]
struct EtaArgs {
    #[arg(long)]
    eta_bc: Option<f64>,
    #[arg(long)]
    eta_dist: Option<f64>,
    #[arg(long)]
    eta_dir: Option<f64>,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    eps_goal: Option<f64>,
    #[arg(long)]
    v_max: Option<f64>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    models: Option<PathBuf>,
    /// Graph file; rebuilt from the models when absent.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// `stitch-sp`, `stitch-spt` or `chain`.
    #[arg(long)]
    method: Option<String>,
    /// `all` or `ds`.
    #[arg(long)]
    reuse: Option<String>,
    #[arg(long, value_parser = parse_point)]
    start: Option<Point>,
    #[arg(long, value_parser = parse_point)]
    goal: Point,
    #[arg(long)]
    alpha: Option<f64>,
    /// Segment table read before and written after chain synthesis.
    #[arg(long)]
    precompute: Option<PathBuf>,
    #[arg(long)]
    initial_policy: bool,
    #[command(flatten)]
    eta: EtaArgs,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Clone)]
struct Point(Vec<f64>);

fn parse_point(s: &str) -> Result<Point, String> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}")))
        .collect::<Result<Vec<_>, _>>()
        .map(Point)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> AppResult<()> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Gen {
            scenario,
            seed,
            output,
        } => {
            let set = datasets::generate_synthetic_2d(&scenario, seed)
                .map_err(|e| AppError::Usage(e.to_string()))?;
            save_dataset(&output, &set)
        }
        Command::Learn {
            dataset,
            seed,
            k_max,
            output,
        } => {
            if let Some(k) = k_max {
                config.k_max = k;
            }
            config.validate()?;
            let set = load_dataset(&required(dataset.or(config.dataset.clone()), "--dataset")?)?;
            let out = required(output.or(config.models.clone()), "--output")?;
            let learned = pipeline::learn(&set, seed, &config)?;
            pipeline::save_models(&out, &set, seed, &learned)?;
            eprintln!("learned {} models into {}", learned.len(), out.display());
            Ok(())
        }
        Command::Graph {
            dataset,
            models,
            eta,
            output,
        } => {
            eta.apply(&mut config);
            config.validate()?;
            let set = load_dataset(&required(dataset.or(config.dataset.clone()), "--dataset")?)?;
            let dir = required(models.or(config.models.clone()), "--models")?;
            let lib = pipeline::library(set, Some(&dir), 0, &config)?;
            let out = required(output.or(config.graph.clone()), "--output")?;
            write_json(
                &out,
                &GraphFile::from_graph(&lib.graph, Some(&dataset_hash(&lib.set))),
            )?;
            eprintln!(
                "graph: {} vertices, {} edges",
                lib.graph.len(),
                lib.graph.edge_count()
            );
            Ok(())
        }
        Command::Solve(args) => solve(args, config),
        Command::Simulate {
            artifact,
            start,
            dataset,
            segment_table,
            sim,
            output,
        } => {
            let set = dataset
                .or(config.dataset.clone())
                .map(|p| load_dataset(&p))
                .transpose()?;
            let opts = sim.options(&config, set.as_ref())?;
            let table = segment_table
                .or(config.segment_table.clone())
                .map(|p| load_table(&p))
                .transpose()?;
            let result = match load_artifact(&artifact, table.as_ref())? {
                Artifact::Policy(p) => {
                    check_dim(p.dim(), &start.0)?;
                    simulation::simulate_policy(&p, &start.0, &opts)
                }
                Artifact::Chain(c) => {
                    check_dim(c.dim(), &start.0)?;
                    simulation::simulate_chain(&c, &start.0, &opts)
                }
            };
            write_rollout(&output, &result)?;
            let summary = RolloutSummary {
                success: result.success,
                time_to_goal: result.time_to_goal,
                final_position: result.final_position().to_vec(),
                modes: result.modes.iter().map(|m| format!("{m:?}")).collect(),
            };
            println!("{}", serde_json::to_string(&summary).expect("serializable"));
            if result.success {
                Ok(())
            } else {
                Err(AppError::Failed("rollout did not reach the goal".into()))
            }
        }
        Command::Bench {
            dataset,
            methods,
            seeds,
            jobs,
            eta,
            output,
        } => {
            eta.apply(&mut config);
            if let Some(m) = methods {
                config.methods = split_list(&m).map(str::to_string).collect();
            }
            if let Some(s) = seeds {
                config.seeds = split_list(&s)
                    .map(|v| {
                        v.parse()
                            .map_err(|_| AppError::Usage(format!("invalid seed `{v}`")))
                    })
                    .collect::<AppResult<_>>()?;
            }
            config.validate()?;
            let path = required(dataset.or(config.dataset.clone()), "--dataset")?;
            let set = load_dataset(&path)?;
            let out = required(output.or(config.output.clone()), "--output")?;
            let name = path
                .file_stem()
                .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            let result = bench::run(&set, &config, jobs)?;
            bench::write_outputs(&out, &name, &result)?;
            for row in result.aggregate(false) {
                eprintln!(
                    "{:<16} success {:>5.1}%  rmse {:.4}  support {:.3}",
                    row.method.name(),
                    100.0 * row.success_rate,
                    row.rmse.mean,
                    row.data_support.mean
                );
            }
            Ok(())
        }
        Command::Plot {
            dataset,
            graph,
            model,
            rollout,
            output,
        } => {
            let set = dataset.map(|p| load_dataset(&p)).transpose()?;
            let graph = graph
                .map(|p| read_json::<GraphFile>(&p)?.to_graph())
                .transpose()?;
            let components = match model {
                Some(p) => read_json::<ModelFile>(&p)?
                    .to_policy()?
                    .components()
                    .to_vec(),
                None => Vec::new(),
            };
            let rollouts = rollout
                .iter()
                .map(|p| read_rollout(p))
                .collect::<AppResult<Vec<_>>>()?;
            let svg = plot::render(&Scene {
                dataset: set.as_ref(),
                graph: graph.as_ref(),
                components,
                rollouts,
            })?;
            if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
            }
            fs::write(&output, svg).map_err(|e| AppError::io(&output, e))
        }
        Command::Verify {
            artifact,
            dataset,
            segment_table,
            sim,
        } => {
            let table = segment_table
                .or(config.segment_table.clone())
                .map(|p| load_table(&p))
                .transpose()?;
            let passed = match load_artifact(&artifact, table.as_ref())? {
                Artifact::Policy(p) => {
                    let r = lpvds::verify_stability(&p);
                    let out = StabilityOut {
                        passed: r.passed,
                        margins: r.margins.clone(),
                        thresholds: r.thresholds.clone(),
                        lyapunov_min_eig: r.lyapunov_min_eig,
                        lyapunov_max_eig: r.lyapunov_max_eig,
                    };
                    println!(
                        "{}",
                        serde_json::to_string_pretty(&out).expect("serializable")
                    );
                    r.passed
                }
                Artifact::Chain(c) => {
                    let set = dataset
                        .or(config.dataset.clone())
                        .map(|p| load_dataset(&p))
                        .transpose()?;
                    let opts = sim.options(&config, set.as_ref())?;
                    let r = chaining::verify_gas_criteria(&c, &opts);
                    let out = GasOut {
                        passed: r.passed(),
                        bounded: r.bounded,
                        triggers_fire: r.triggers_fire,
                        timers_finite: r.timers_finite,
                        final_gas: r.final_gas,
                        trigger_times: r.trigger_times.clone(),
                    };
                    println!(
                        "{}",
                        serde_json::to_string_pretty(&out).expect("serializable")
                    );
                    r.passed()
                }
            };
            if passed {
                Ok(())
            } else {
                Err(AppError::Failed("verification failed".into()))
            }
        }
    }
}

fn solve(args: SolveArgs, mut config: RunConfig) -> AppResult<()> {
    args.eta.apply(&mut config);
    if let Some(m) = args.method {
        config.method = m;
    }
    if let Some(r) = args.reuse {
        config.reuse = r;
    }
    if let Some(a) = args.alpha {
        config.alpha = a;
    }
    config.initial_policy |= args.initial_policy;
    config.validate()?;
    let reuse = config.reuse()?;
    let set = load_dataset(&required(
        args.dataset.or(config.dataset.clone()),
        "--dataset",
    )?)?;
    let hash = dataset_hash(&set);
    let dir = required(args.models.or(config.models.clone()), "--models")?;
    let mut lib = pipeline::library(set, Some(&dir), 0, &config)?;
    if let Some(path) = args.graph.or(config.graph.clone()) {
        let file: GraphFile = read_json(&path)?;
        if file.dataset_hash.as_deref().is_some_and(|h| h != hash) {
            return Err(AppError::Usage(format!(
                "{}: graph was built from a different dataset",
                path.display()
            )));
        }
        lib.graph = file.to_graph()?;
    }
    let goal = args.goal.0;
    check_dim(lib.set.dimension(), &goal)?;
    if let Some(s) = &args.start {
        check_dim(lib.set.dimension(), &s.0)?;
    }
    let start = args.start.map(|p| p.0);
    match config.method.as_str() {
        "stitch-sp" | "stitch-spt" => {
            let attached = lib.graph.attach_endpoints(start.as_deref(), &goal)?;
            let (selection, method) = if config.method == "stitch-sp" {
                if start.is_none() {
                    return Err(AppError::Usage("stitch-sp needs --start".into()));
                }
                (
                    attached.shortest_path()?.vertices,
                    StitchMethod::ShortestPath,
                )
            } else {
                (
                    attached.shortest_path_tree()?,
                    StitchMethod::ShortestPathTree,
                )
            };
            let req = StitchRequest {
                selection,
                goal: goal.clone(),
                reuse,
                method,
            };
            let (policy, report) =
                stitching::stitch(&lib.graph, &req, &lib.set, lib.seed, &lib.options.stitch)?;
            let mut file = ModelFile::from_policy(&policy);
            file.dataset_hash = Some(hash);
            file.seed = Some(lib.seed);
            file.report = Some(dsstitch::formats::ReportFile::from_report(&report));
            file.provenance = Some(Provenance::new(
                &config.method,
                reuse,
                &lib.graph,
                &req.selection,
            )?);
            write_json(&args.output, &file)?;
            eprintln!(
                "{}: {} components over {} vertices",
                config.method,
                policy.len(),
                req.selection.len()
            );
            Ok(())
        }
        "chain" => {
            let start = required(start, "--start")?;
            let precompute = args.precompute.or(config.segment_table.clone());
            let graph_hash = content_hash(&GraphFile::from_graph(&lib.graph, None));
            let mut table = match &precompute {
                Some(p) if p.exists() => {
                    let file: SegmentTableFile = read_json(p)?;
                    if file.graph_hash.as_deref().is_some_and(|h| h != graph_hash) {
                        return Err(AppError::Usage(format!(
                            "{}: segment table belongs to another graph",
                            p.display()
                        )));
                    }
                    file.to_table()?
                }
                _ => SegmentTable::new(lib.seed),
            };
            let path = lib.path(&start, &goal)?;
            let options = ChainOptions {
                reuse,
                ..lib.options.chain.clone()
            };
            let (chain, stats) = chaining::build_chain(
                &lib.graph,
                &path,
                Some(&start),
                &goal,
                &lib.set,
                &options,
                &mut table,
            )?;
            eprintln!(
                "chain: {} policies, segment fits: {}, table hits: {}",
                chain.len(),
                stats.segment_fits,
                stats.table_hits
            );
            if let Some(p) = &precompute {
                write_json(p, &SegmentTableFile::from_table(&table, Some(&graph_hash)))?;
            }
            let mut file = ChainFile::from_chain(&chain, false);
            file.dataset_hash = Some(hash);
            write_json(&args.output, &file)
        }
        other => Err(AppError::Usage(format!(
            "unknown method `{other}` (stitch-sp, stitch-spt, chain)"
        ))),
    }
}

impl EtaArgs {
    fn apply(&self, config: &mut RunConfig) {
        if let Some(v) = self.eta_bc {
            config.eta_bc = v;
        }
        if let Some(v) = self.eta_dist {
            config.eta_dist = v;
        }
        if let Some(v) = self.eta_dir {
            config.eta_dir = v;
        }
    }
}

impl SimArgs {
    fn options(&self, config: &RunConfig, set: Option<&DemonstrationSet>) -> AppResult<SimOptions> {
        let base = set.map(SimOptions::for_dataset);
        let eps_goal = self
            .eps_goal
            .or(config.eps_goal)
            .or(base.map(|b| b.eps_goal))
            .ok_or_else(|| AppError::Usage("--eps-goal or --dataset required".into()))?;
        let v_max = self
            .v_max
            .or(config.v_max)
            .or(base.map(|b| b.v_max))
            .ok_or_else(|| AppError::Usage("--v-max or --dataset required".into()))?;
        let opts = SimOptions::new(
            self.dt.unwrap_or(config.dt),
            self.t_max.unwrap_or(config.t_max),
            eps_goal,
            v_max,
        );
        opts.validate()?;
        Ok(opts)
    }
}

fn required<T>(value: Option<T>, flag: &str) -> AppResult<T> {
    value.ok_or_else(|| AppError::Usage(format!("missing {flag}")))
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|v| !v.is_empty())
}

fn check_dim(d: usize, p: &[f64]) -> AppResult<()> {
    if p.len() != d {
        return Err(AppError::Usage(format!(
            "point has {} coordinates, expected {d}",
            p.len()
        )));
    }
    Ok(())
}

fn load_table(path: &Path) -> AppResult<SegmentTable> {
    read_json::<SegmentTableFile>(path)?.to_table()
}

enum Artifact {
    Policy(dsstitch_core::StablePolicy),
    Chain(dsstitch_core::DsChain),
}

/// Reads a model or chain file, telling them apart by their fields.
fn load_artifact(path: &Path, table: Option<&SegmentTable>) -> AppResult<Artifact> {
    let value: serde_json::Value = read_json(path)?;
    let decode = |e: serde_json::Error| AppError::Format(format!("{}: {e}", path.display()));
    if value.get("triggers").is_some() {
        let file: ChainFile = serde_json::from_value(value).map_err(decode)?;
        if file.needs_table() && table.is_none() {
            return Err(AppError::Usage(
                "chain references a segment table; pass --segment-table".into(),
            ));
        }
        Ok(Artifact::Chain(file.to_chain(table)?))
    } else {
        let file: ModelFile = serde_json::from_value(value).map_err(decode)?;
        Ok(Artifact::Policy(file.to_policy()?))
    }
}

fn write_rollout(path: &Path, r: &SimulationResult) -> AppResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    let d = r.positions.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|i| format!("x{i}")));
    header.extend((0..d).map(|i| format!("v{i}")));
    w.write_record(&header)?;
    for ((t, x), v) in r.times().zip(&r.positions).zip(&r.velocities) {
        let mut row = vec![t.to_string()];
        row.extend(x.iter().map(f64::to_string));
        row.extend(v.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

fn read_rollout(path: &Path) -> AppResult<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with('x'))
        .map(|(i, _)| i)
        .collect();
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let p = cols
            .iter()
            .map(|&i| {
                rec.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| AppError::Format(format!("{}: bad coordinate", path.display())))
            })
            .collect::<AppResult<Vec<f64>>>()?;
        out.push(p);
    }
    Ok(out)
}

#[derive(Serialize)]
struct RolloutSummary {
    success: bool,
    time_to_goal: Option<f64>,
    final_position: Vec<f64>,
    modes: Vec<String>,
}

#[derive(Serialize)]
struct StabilityOut {
    passed: bool,
    margins: Vec<f64>,
    thresholds: Vec<f64>,
    lyapunov_min_eig: f64,
    lyapunov_max_eig: f64,
}

#[derive(Serialize)]
struct GasOut {
    passed: bool,
    bounded: bool,
    triggers_fire: bool,
    timers_finite: bool,
    final_gas: bool,
    trigger_times: Vec<Option<f64>>,
}
