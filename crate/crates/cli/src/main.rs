use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use robust_factorize::bench::{
    assemble_reports, emit_table, run_repeat, save_report, BenchReport, DatasetSummary, ExperimentConfig, Method,
};
use robust_factorize::corruption::{corrupt, CorruptionSpec, NoiseKind};
use robust_factorize::dataset::{load_image_dir, write_pgm, Dataset, Layout};
use robust_factorize::engine::{solve_nmf, solve_weighted_nmf, InitMethod};
use robust_factorize::io::{load_nonneg_matrix, save_matrix, write_objective_csv, write_polish_csv};
use robust_factorize::metrics::rre;
use robust_factorize::polish::RefineMapping;
use robust_factorize::weights::{SigmaSource, WeightKind};
use robust_factorize::{solve_target_polish, Error, FactorPair};

const TRAJECTORY_DIR: &str = "trajectories";

#[derive(Parser)]
#[command(name = "robust-factorize", version, about = "Outlier-resistant NMF benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Repeated corrupted-factorization runs with aggregate tables.
    Bench(BenchArgs),
    /// Factorize one matrix and write W and H.
    Factorize(FactorizeArgs),
    /// Write corrupted copies of a dataset's images.
    Corrupt(CorruptArgs),
}

#[derive(Args)]
struct DatasetArgs {
    /// Image directory.
    #[arg(long)]
    dataset: PathBuf,

    #[arg(long, default_value = "orl")]
    layout: Layout,
}

#[derive(Args)]
struct NoiseArgs {
    #[arg(long, default_value = "block")]
    noise: NoiseKind,

    /// Side of the square block.
    #[arg(long, default_value_t = 10)]
    block_size: usize,

    #[arg(long)]
    block_h: Option<usize>,

    #[arg(long)]
    block_w: Option<usize>,

    /// Fraction of pixels whitened per image for salt noise.
    #[arg(long, default_value_t = 0.10)]
    salt_frac: f64,

    /// Value written into corrupted pixels.
    #[arg(long, default_value_t = 1.0)]
    intensity: f64,
}

impl NoiseArgs {
    fn spec(&self, seed: u64) -> CorruptionSpec {
        CorruptionSpec {
            kind: self.noise,
            block_size: self.block_size,
            block_h: self.block_h,
            block_w: self.block_w,
            salt_fraction: self.salt_frac,
            intensity: self.intensity,
            seed,
        }
    }
}

#[derive(Args)]
struct SolverArgs {
    /// Maximum sweeps per solve.
    #[arg(long, default_value_t = 200)]
    iters: usize,

    /// Relative-change stopping threshold; 0 runs every sweep.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,

    #[arg(long, default_value = "random")]
    init: InitMethod,

    /// Matrix the CIM bandwidth is measured on.
    #[arg(long, default_value = "residual")]
    cim_sigma: SigmaSource,

    #[arg(long, default_value_t = 100)]
    max_step_iter: usize,

    #[arg(long, default_value_t = 10.0)]
    slope: f64,

    #[arg(long, default_value_t = 0.01)]
    inflexion: f64,

    #[arg(long, default_value_t = 20)]
    refine_max_iter: usize,

    #[arg(long, default_value = "direct")]
    refine_mapping: RefineMapping,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    data: DatasetArgs,

    #[command(flatten)]
    noise: NoiseArgs,

    /// Base seed of the corruption; defaults to `--seed`.
    #[arg(long)]
    noise_seed: Option<u64>,

    #[arg(long, value_delimiter = ',', default_value = "weighted-nmf,target-polish")]
    methods: Vec<Method>,

    #[arg(long, value_delimiter = ',', default_value = "cim,huber,l1,l21")]
    weights: Vec<WeightKind>,

    /// Defaults to the number of subjects.
    #[arg(long)]
    rank: Option<usize>,

    #[arg(long, default_value_t = 10)]
    repeats: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    #[arg(long)]
    out: PathBuf,

    /// Write per-run objective and clean-RRE trajectories.
    #[arg(long)]
    emit_trajectories: bool,

    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct FactorizeArgs {
    /// Nonnegative matrix, CSV or RFM1.
    #[arg(long)]
    input: PathBuf,

    /// Uncorrupted reference for reporting RRE.
    #[arg(long)]
    clean: Option<PathBuf>,

    #[arg(long, default_value = "target-polish")]
    method: Method,

    #[arg(long, default_value = "cim")]
    weight: WeightKind,

    #[arg(long)]
    rank: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output directory for the factors and the trajectory.
    #[arg(long)]
    out: PathBuf,

    /// File extension of the factor files, `csv` or `rfm`.
    #[arg(long, default_value = "csv")]
    format: String,

    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct CorruptArgs {
    #[command(flatten)]
    data: DatasetArgs,

    #[command(flatten)]
    noise: NoiseArgs,

    #[arg(long, default_value_t = 0)]
    noise_seed: u64,

    #[arg(long)]
    out: PathBuf,

    /// Number of images to write.
    #[arg(long)]
    limit: Option<usize>,
}

fn experiment_config(args: &BenchArgs, dataset: &Dataset) -> ExperimentConfig {
    let s = &args.solver;
    let mut cfg = ExperimentConfig::new(
        args.methods.clone(),
        args.weights.clone(),
        args.noise.spec(args.seed),
        args.rank.unwrap_or(dataset.n_subjects()),
    );
    cfg.repeats = args.repeats;
    cfg.base_seed = args.seed;
    cfg.noise_seed = args.noise_seed;
    cfg.n_iter_max = s.iters;
    cfg.tol = s.tol;
    cfg.init = s.init;
    cfg.cim_sigma = s.cim_sigma;
    cfg.max_step_iter = s.max_step_iter;
    cfg.slope = s.slope;
    cfg.inflexion_point = s.inflexion;
    cfg.refine_max_iter = s.refine_max_iter;
    cfg.refine_mapping = s.refine_mapping;
    if args.emit_trajectories {
        cfg.trajectory_dir = Some(args.out.join(TRAJECTORY_DIR));
    }
    cfg
}

fn thread_pool() -> anyhow::Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("RF_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("RF_THREADS must be a positive integer, got `{v}`")))?;
        if n == 0 {
            bail!(Error::Config("RF_THREADS must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    Ok(builder.build()?)
}

fn bench(args: BenchArgs) -> anyhow::Result<()> {
    let dataset = load_image_dir(&args.data.dataset, args.data.layout)?;
    let mut cfg = experiment_config(&args, &dataset);
    cfg.validate(&dataset)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let pool = thread_pool()?;
    let per_repeat = pool.install(|| {
        (0..cfg.repeats)
            .into_par_iter()
            .map(|i| run_repeat(&dataset, &cfg, i))
            .collect::<robust_factorize::Result<Vec<_>>>()
    })?;
    let runs = assemble_reports(&cfg, per_repeat);

    // keep the report relocatable
    if cfg.trajectory_dir.is_some() {
        cfg.trajectory_dir = Some(PathBuf::from(TRAJECTORY_DIR));
    }
    let report = BenchReport {
        config: cfg,
        dataset: DatasetSummary::of(&dataset),
        runs,
    };
    save_report(&report, &args.out.join("report.json"))?;
    emit_table(&report.runs, &args.out.join("table.csv"))?;

    println!("{:<8} {:<6} {:<14} {:>8} {:>8} {:>8} {:>9}", "noise", "weight", "method", "rre", "acc", "nmi", "time_sec");
    for r in &report.runs {
        let a = &r.aggregate;
        println!(
            "{:<8} {:<6} {:<14} {:>8.4} {:>8.4} {:>8.4} {:>9.3}",
            r.noise.kind.to_string(),
            r.weight.to_string(),
            r.method.to_string(),
            a.rre.mean,
            a.acc.mean,
            a.nmi.mean,
            a.time_sec.mean
        );
    }
    Ok(())
}

fn factorize(args: FactorizeArgs) -> anyhow::Result<()> {
    let x = load_nonneg_matrix(&args.input)?;
    let clean = args.clean.as_deref().map(load_nonneg_matrix).transpose()?;
    let ext = match args.format.as_str() {
        "csv" | "rfm" => args.format.as_str(),
        other => bail!(Error::Config(format!("unknown factor format `{other}`"))),
    };
    let mut cfg = ExperimentConfig::new(vec![args.method], vec![args.weight], CorruptionSpec::new(NoiseKind::None), args.rank);
    let s = &args.solver;
    cfg.n_iter_max = s.iters;
    cfg.tol = s.tol;
    cfg.init = s.init;
    cfg.cim_sigma = s.cim_sigma;
    cfg.max_step_iter = s.max_step_iter;
    cfg.slope = s.slope;
    cfg.inflexion_point = s.inflexion;
    cfg.refine_max_iter = s.refine_max_iter;
    cfg.refine_mapping = s.refine_mapping;
    let solve = cfg.solve_config(args.seed);

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let trajectory = args.out.join("trajectory.csv");
    let factors: FactorPair = match args.method {
        Method::PlainNmf => {
            let fit = solve_nmf(&x, &solve)?;
            write_objective_csv(&trajectory, &fit.trajectory)?;
            fit.factors
        }
        Method::WeightedNmf => {
            let fit = solve_weighted_nmf(&x, &cfg.scheme(args.weight), &solve, None)?;
            write_objective_csv(&trajectory, &fit.trajectory)?;
            fit.factors
        }
        Method::TargetPolish => {
            let fit = solve_target_polish(&x, &cfg.polish_config(args.weight, args.seed), clean.as_ref())?;
            write_polish_csv(&trajectory, &fit.trajectory)?;
            fit.factors
        }
    };
    save_matrix(&factors.w, &args.out.join(format!("W.{ext}")))?;
    save_matrix(&factors.h, &args.out.join(format!("H.{ext}")))?;
    if let Some(c) = &clean {
        println!("rre {:.6}", rre(c, &factors)?);
    }
    println!("wrote factors of rank {} to {}", factors.rank(), args.out.display());
    Ok(())
}

fn corrupt_preview(args: CorruptArgs) -> anyhow::Result<()> {
    let dataset = load_image_dir(&args.data.dataset, args.data.layout)?;
    let spec = args.noise.spec(args.noise_seed);
    let y = corrupt(&dataset.x, dataset.image_shape, &spec)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let (height, width) = dataset.image_shape;
    let count = args.limit.unwrap_or(y.cols()).min(y.cols());
    for j in 0..count {
        let subject = &dataset.subjects[dataset.labels.as_slice()[j]];
        let path = args.out.join(format!("{subject}_{j:04}.pgm"));
        write_pgm(&path, width, height, &y.column(j))?;
    }
    println!("wrote {count} corrupted images to {}", args.out.display());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Config(_)) => 1,
        Some(Error::Numeric(_)) => 3,
        Some(_) => 2,
        None => 2,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Bench(a) => bench(a),
        Command::Factorize(a) => factorize(a),
        Command::Corrupt(a) => corrupt_preview(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
