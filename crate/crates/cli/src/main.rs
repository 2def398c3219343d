//! `trajsearch`: generate trajectory datasets, build indexes, run
//! distance-threshold searches, benchmark the backends and verify them
//! against the brute-force oracle.
//!
//! Exit codes: 0 success, 1 usage/configuration, 2 I/O, 3 verification
//! failure.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use trajsearch::dataset::{
    generate_random_dense, generate_random_walk, DenseWalkParams, RandomWalkParams,
    TrajectoryDataset,
};
use trajsearch::driver::IndexSpec;
use trajsearch::engine::{brute_force_oracle, compare_result_sets, EngineConfig};
use trajsearch::fsg::{self, FsgConfig};

use trajsearch_cli::bench::{self, BenchPlan};
use trajsearch_cli::files::{self, Format};
use trajsearch_cli::output::{self, MetricsRow};
use trajsearch_cli::CliError;

#[derive(Parser)]
#[command(
    name = "trajsearch",
    version,
    about = "Distance-threshold similarity search over 4-D moving-object trajectories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trajectory dataset
    Generate {
        #[command(subcommand)]
        preset: GeneratePreset,
    },
    /// Build an index, print its statistics, optionally persist it (fsg)
    BuildIndex(BuildIndexArgs),
    /// Search a query set against a dataset and write the result CSV
    Search(SearchArgs),
    /// Response-time tables over parameter sweeps
    Bench(BenchArgs),
    /// Check an index against the brute-force oracle
    Verify(VerifyArgs),
}

#[derive(Subcommand)]
enum GeneratePreset {
    /// Sparse random walks (defaults: 2,500 trajectories x 400 timesteps)
    #[command(name = "random-1m")]
    Random1m(RandomWalkCmd),
    /// Dense random walks in a density-sized cube (defaults: 65,536 x 193)
    RandomDense(DenseCmd),
}

#[derive(Args)]
struct RandomWalkCmd {
    #[arg(long, default_value_t = 2_500)]
    trajectories: u32,
    #[arg(long, default_value_t = 400)]
    timesteps: u32,
    /// Trajectory start times are uniform over [0, start-window]
    #[arg(long, default_value_t = 100.0)]
    start_window: f64,
    /// Side length of the initial-position cube
    #[arg(long, default_value_t = 1_000.0)]
    initial_box: f64,
    /// Per-coordinate displacement bound per unit time
    #[arg(long, default_value_t = 1.0)]
    step_max: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// csv or bin; inferred from the extension when omitted
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args)]
struct DenseCmd {
    #[arg(long, default_value_t = 65_536)]
    particles: u32,
    #[arg(long, default_value_t = 193)]
    timesteps: u32,
    /// Particles per unit volume; fixes the cube side (n/density)^(1/3)
    #[arg(long, default_value_t = 0.112)]
    density: f64,
    #[arg(long, default_value_t = 1.0)]
    step_min: f64,
    #[arg(long, default_value_t = 5.0)]
    step_max: f64,
    /// A particle this far outside the cube (fraction of the side) is
    /// steered back until re-entry
    #[arg(long, default_value_t = 0.2)]
    escape_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args, Clone)]
struct IndexArgs {
    /// Index backend
    #[arg(long, value_enum)]
    index: IndexKind,
    /// Grid cells per dimension (fsg)
    #[arg(long, default_value_t = 50)]
    cells: u32,
    /// Temporal bin count (temporal, st)
    #[arg(long, default_value_t = 1_000)]
    bins: u32,
    /// Spatial subbins per dimension (st)
    #[arg(long, default_value_t = 4)]
    subbins: u32,
    /// Consecutive segments per leaf box (rtree)
    #[arg(long, default_value_t = 1)]
    mbb_segments: u32,
    /// R-tree fanout
    #[arg(long, default_value_t = 16)]
    fanout: usize,
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq, Debug)]
enum IndexKind {
    Fsg,
    Temporal,
    St,
    Rtree,
}

impl IndexArgs {
    fn spec(&self) -> IndexSpec {
        spec_for(self.index, self)
    }
}

fn spec_for(kind: IndexKind, args: &IndexArgs) -> IndexSpec {
    match kind {
        IndexKind::Fsg => IndexSpec::Fsg { cells: args.cells },
        IndexKind::Temporal => IndexSpec::Temporal { bins: args.bins },
        IndexKind::St => IndexSpec::SpatioTemporal {
            bins: args.bins,
            subbins: args.subbins,
        },
        IndexKind::Rtree => IndexSpec::RTree {
            segments_per_box: args.mbb_segments,
            fanout: args.fanout,
        },
    }
}

#[derive(Args, Clone)]
struct EngineArgs {
    /// Result buffer capacity in records
    #[arg(long, default_value_t = trajsearch::engine::DEFAULT_RESULT_CAPACITY)]
    result_capacity: usize,
    /// Total grid candidate buffer in bytes, split across active queries
    #[arg(long, default_value_t = fsg::DEFAULT_CANDIDATE_BUFFER_BYTES)]
    candidate_buffer: u64,
    /// Worker count (defaults to the hardware parallelism)
    #[arg(long)]
    workers: Option<usize>,
}

impl EngineArgs {
    fn engine(&self) -> EngineConfig {
        let mut cfg = EngineConfig::default().with_capacity(self.result_capacity);
        if let Some(workers) = self.workers {
            cfg = cfg.with_workers(workers);
        }
        cfg
    }

    fn fsg(&self) -> FsgConfig {
        FsgConfig {
            candidate_buffer_bytes: self.candidate_buffer,
        }
    }
}

#[derive(Args)]
struct BuildIndexArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    index: IndexArgs,
    /// Persist the index (fsg only)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[command(flatten)]
    index: IndexArgs,
    /// Search distance; repeat for several runs
    #[arg(long = "distance", required = true)]
    distances: Vec<f64>,
    /// Load a persisted fsg index instead of building one
    #[arg(long)]
    index_file: Option<PathBuf>,
    /// Result CSV path (suffixed -d<value> when several distances are given)
    #[arg(long)]
    out: PathBuf,
    /// Append one metrics row per run to this CSV
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[command(flatten)]
    index: IndexArgs,
    #[arg(long = "distance", required = true)]
    distances: Vec<f64>,
    /// Interval-endpoint tolerance
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq, Debug)]
enum Scenario {
    /// Random-1M entries, 100x400 query trajectories (generated)
    S1,
    /// External dataset and query files (converted Merger-style data)
    S2,
    /// Random-dense entries, 265x193 query particles (generated)
    S3,
    /// Dataset and query files supplied by --dataset/--queries
    Custom,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value_t = Scenario::Custom)]
    scenario: Scenario,
    /// Entry dataset file (required for custom/s2, overrides s1/s3)
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Query set file (required for custom/s2, overrides s1/s3)
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Backends to run (default: all four)
    #[arg(long, value_enum, value_delimiter = ',')]
    indexes: Vec<IndexKind>,
    #[arg(long = "distance", required = true)]
    distances: Vec<f64>,
    /// Grid cell sweep (fsg)
    #[arg(long, value_delimiter = ',')]
    cells: Vec<u32>,
    /// Temporal bin sweep (temporal; st uses the first value)
    #[arg(long, value_delimiter = ',')]
    bins: Vec<u32>,
    /// Subbin sweep (st)
    #[arg(long, value_delimiter = ',')]
    subbins: Vec<u32>,
    /// Segments-per-box sweep (rtree)
    #[arg(long, value_delimiter = ',')]
    mbb_segments: Vec<u32>,
    #[arg(long, default_value_t = 16)]
    fanout: usize,
    #[arg(long, default_value_t = 3)]
    trials: u32,
    /// Seed for generated scenario data
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Table CSV path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    engine: EngineArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { preset } => cmd_generate(preset),
        Command::BuildIndex(args) => cmd_build_index(args),
        Command::Search(args) => cmd_search(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Verify(args) => cmd_verify(args),
    }
}

fn cmd_generate(preset: GeneratePreset) -> Result<(), CliError> {
    let (dataset, out, format, extra) = match preset {
        GeneratePreset::Random1m(args) => {
            let params = RandomWalkParams {
                n_trajectories: args.trajectories,
                n_timesteps: args.timesteps,
                start_window: args.start_window,
                initial_box: args.initial_box,
                step_max: args.step_max,
                seed: args.seed,
            };
            params.validate().map_err(CliError::Usage)?;
            (
                generate_random_walk(&params),
                args.out,
                args.format,
                String::new(),
            )
        }
        GeneratePreset::RandomDense(args) => {
            let params = DenseWalkParams {
                n_particles: args.particles,
                n_timesteps: args.timesteps,
                density: args.density,
                step_min: args.step_min,
                step_max: args.step_max,
                escape_fraction: args.escape_fraction,
                seed: args.seed,
            };
            params.validate().map_err(CliError::Usage)?;
            let extra = format!(", cube side {:.4}", params.cube_side());
            (generate_random_dense(&params), args.out, args.format, extra)
        }
    };
    let format = files::output_format(&out, format);
    files::write_dataset(&dataset, &out, format)?;
    println!(
        "wrote {}: {} segments in {} trajectories{extra}",
        out.display(),
        dataset.len(),
        dataset.n_trajectories()
    );
    Ok(())
}

fn cmd_build_index(args: BuildIndexArgs) -> Result<(), CliError> {
    let dataset = files::read_dataset(&args.dataset)?;
    let spec = args.index.spec();
    let built = bench::build_index(spec, &dataset.segments)?;
    match &built {
        bench::BuiltIndex::Fsg(index) => {
            println!(
                "{}: grid {}x{}x{}, {} non-empty cells, lookup array of {} ids",
                spec.label(),
                index.spec.counts[0],
                index.spec.counts[1],
                index.spec.counts[2],
                index.cells.len(),
                index.lookup.len()
            );
            if let Some(out) = &args.out {
                let file = File::create(out).map_err(|source| CliError::Io {
                    path: out.clone(),
                    source,
                })?;
                fsg::write_fsg(index, BufWriter::new(file)).map_err(|source| {
                    CliError::IndexFile {
                        path: out.clone(),
                        source,
                    }
                })?;
                println!("persisted to {}", out.display());
            }
        }
        other => {
            if args.out.is_some() {
                return Err(CliError::Usage(
                    "index persistence is only supported for --index fsg".into(),
                ));
            }
            match other {
                bench::BuiltIndex::Temporal(index) => println!(
                    "{}: {} entries over [{}, {}], bin length {}",
                    spec.label(),
                    index.entries.len(),
                    index.t_min,
                    index.t_max,
                    index.bin_len
                ),
                bench::BuiltIndex::St(index) => println!(
                    "{}: {} bins x {} subbins, id arrays |X|={} |Y|={} |Z|={}",
                    spec.label(),
                    index.n_bins(),
                    index.v,
                    index.arrays[0].len(),
                    index.arrays[1].len(),
                    index.arrays[2].len()
                ),
                bench::BuiltIndex::RTree(index) => println!(
                    "{}: {} leaf entries, height {}",
                    spec.label(),
                    index.n_leaf_entries,
                    index.height
                ),
                bench::BuiltIndex::Fsg(_) => unreachable!(),
            }
        }
    }
    Ok(())
}

/// Result file path for one distance of a multi-distance run.
fn results_path(base: &Path, d: f64, multiple: bool) -> PathBuf {
    if !multiple {
        return base.to_path_buf();
    }
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    let name = match base.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}-d{d}.{ext}"),
        None => format!("{stem}-d{d}"),
    };
    base.with_file_name(name)
}

fn cmd_search(args: SearchArgs) -> Result<(), CliError> {
    let dataset = files::read_dataset(&args.dataset)?;
    let queries = files::read_dataset(&args.queries)?;
    let spec = args.index.spec();
    let engine = args.engine.engine();
    let fsg_cfg = args.engine.fsg();

    let built = match &args.index_file {
        None => bench::build_index(spec, &dataset.segments)?,
        Some(path) => {
            if args.index.index != IndexKind::Fsg {
                return Err(CliError::Usage(
                    "--index-file is only supported for --index fsg".into(),
                ));
            }
            let file = File::open(path).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            let index = fsg::read_fsg(BufReader::new(file)).map_err(|source| {
                CliError::IndexFile {
                    path: path.clone(),
                    source,
                }
            })?;
            bench::BuiltIndex::Fsg(index)
        }
    };

    let multiple = args.distances.len() > 1;
    for &d in &args.distances {
        if d.is_nan() || d <= 0.0 {
            return Err(CliError::Usage(format!("--distance must be positive, got {d}")));
        }
        let (set, metrics) = bench::run_search_once(
            &built,
            &dataset.segments,
            &queries.segments,
            d,
            &fsg_cfg,
            &engine,
        )?;
        let out = results_path(&args.out, d, multiple);
        let file = File::create(&out).map_err(|source| CliError::Io {
            path: out.clone(),
            source,
        })?;
        let mut writer = BufWriter::new(file);
        output::write_results_csv(&set, &mut writer).map_err(|source| CliError::Io {
            path: out.clone(),
            source,
        })?;
        writer.flush().map_err(|source| CliError::Io {
            path: out.clone(),
            source,
        })?;
        if let Some(metrics_path) = &args.metrics {
            let row = MetricsRow {
                index_label: &spec.label(),
                dataset: &args.dataset.display().to_string(),
                queries: &args.queries.display().to_string(),
                d,
                workers: engine.workers,
                result_capacity: engine.result_capacity,
                metrics: &metrics,
            };
            output::append_metrics(metrics_path, &row).map_err(|source| CliError::Io {
                path: metrics_path.clone(),
                source,
            })?;
        }
        println!(
            "{} d={d}: {} records -> {} ({} invocations, {:.1} ms)",
            spec.label(),
            set.len(),
            out.display(),
            metrics.invocations,
            metrics.wall.as_secs_f64() * 1e3
        );
    }
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<(), CliError> {
    let dataset = files::read_dataset(&args.dataset)?;
    let queries = files::read_dataset(&args.queries)?;
    let spec = args.index.spec();
    let engine = args.engine.engine();
    let fsg_cfg = args.engine.fsg();
    let built = bench::build_index(spec, &dataset.segments)?;
    for &d in &args.distances {
        let (set, _) = bench::run_search_once(
            &built,
            &dataset.segments,
            &queries.segments,
            d,
            &fsg_cfg,
            &engine,
        )?;
        let oracle = brute_force_oracle(&dataset.segments, &queries.segments, d);
        let report = compare_result_sets(&set, &oracle, args.tolerance);
        println!("{} d={d}: {report}", spec.label());
        if !report.equivalent() {
            return Err(CliError::Verification(format!(
                "{} diverges from the oracle at d={d}",
                spec.label()
            )));
        }
    }
    Ok(())
}

fn scenario_data(
    args: &BenchArgs,
) -> Result<(TrajectoryDataset, TrajectoryDataset), CliError> {
    let file_or = |path: &Option<PathBuf>,
                   fallback: &dyn Fn() -> TrajectoryDataset|
     -> Result<TrajectoryDataset, CliError> {
        match path {
            Some(path) => files::read_dataset(path),
            None => Ok(fallback()),
        }
    };
    match args.scenario {
        Scenario::S1 => Ok((
            file_or(&args.dataset, &|| {
                generate_random_walk(&RandomWalkParams {
                    seed: args.seed,
                    ..Default::default()
                })
            })?,
            file_or(&args.queries, &|| {
                generate_random_walk(&RandomWalkParams {
                    n_trajectories: 100,
                    n_timesteps: 400,
                    seed: args.seed + 1,
                    ..Default::default()
                })
            })?,
        )),
        Scenario::S3 => Ok((
            file_or(&args.dataset, &|| {
                generate_random_dense(&DenseWalkParams {
                    seed: args.seed,
                    ..Default::default()
                })
            })?,
            file_or(&args.queries, &|| {
                generate_random_dense(&DenseWalkParams {
                    n_particles: 265,
                    seed: args.seed + 1,
                    ..Default::default()
                })
            })?,
        )),
        Scenario::S2 | Scenario::Custom => {
            let (Some(dataset), Some(queries)) = (&args.dataset, &args.queries) else {
                return Err(CliError::Usage(format!(
                    "scenario {:?} needs --dataset and --queries files",
                    args.scenario
                )));
            };
            Ok((files::read_dataset(dataset)?, files::read_dataset(queries)?))
        }
    }
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    for &d in &args.distances {
        if d.is_nan() || d <= 0.0 {
            return Err(CliError::Usage(format!("--distance must be positive, got {d}")));
        }
    }
    let (dataset, queries) = scenario_data(&args)?;

    let kinds = if args.indexes.is_empty() {
        vec![IndexKind::Fsg, IndexKind::Temporal, IndexKind::St, IndexKind::Rtree]
    } else {
        args.indexes.clone()
    };
    // Unset sweep lists fall back to the scenario's best-known configuration.
    let (default_bins, default_subbins, default_r) = match args.scenario {
        Scenario::S1 => (10_000, 4, 10),
        Scenario::S2 => (1_000, 16, 1),
        Scenario::S3 => (1_000, 2, 4),
        Scenario::Custom => (1_000, 4, 1),
    };
    let cells = if args.cells.is_empty() { vec![50] } else { args.cells.clone() };
    let bins = if args.bins.is_empty() { vec![default_bins] } else { args.bins.clone() };
    let subbins = if args.subbins.is_empty() {
        vec![default_subbins]
    } else {
        args.subbins.clone()
    };
    let r_values = if args.mbb_segments.is_empty() {
        vec![default_r]
    } else {
        args.mbb_segments.clone()
    };

    let mut specs = Vec::new();
    for kind in kinds {
        match kind {
            IndexKind::Fsg => {
                specs.extend(cells.iter().map(|&cells| IndexSpec::Fsg { cells }));
            }
            IndexKind::Temporal => {
                specs.extend(bins.iter().map(|&bins| IndexSpec::Temporal { bins }));
            }
            IndexKind::St => {
                specs.extend(subbins.iter().map(|&subbins| IndexSpec::SpatioTemporal {
                    bins: bins[0],
                    subbins,
                }));
            }
            IndexKind::Rtree => {
                specs.extend(r_values.iter().map(|&segments_per_box| IndexSpec::RTree {
                    segments_per_box,
                    fanout: args.fanout,
                }));
            }
        }
    }

    let plan = BenchPlan {
        entries: &dataset.segments,
        queries: &queries.segments,
        specs,
        distances: args.distances.clone(),
        trials: args.trials,
        engine: args.engine.engine(),
        fsg: args.engine.fsg(),
    };
    let rows = bench::run_bench(&plan)?;

    let mut table = String::from(bench::TABLE_HEADER);
    table.push('\n');
    for row in &rows {
        table.push_str(&row.to_csv_line());
        table.push('\n');
    }
    match &args.out {
        Some(path) => {
            std::fs::write(path, &table).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            println!("wrote {} rows to {}", rows.len(), path.display());
        }
        None => print!("{table}"),
    }
    Ok(())
}
