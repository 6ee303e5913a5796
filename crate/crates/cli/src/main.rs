use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use defgpa::eval;
use defgpa::io::{self, ReportFile};
use defgpa::kernels::KernelSpec;
use defgpa::registration::{self, Method, RunConfig};
use defgpa::synth::{self, SynthConfig};
use defgpa::warps::LbwSpec;
use defgpa::{linalg, Error};

#[derive(Parser, Debug)]
#[command(name = "defgpa", version, about = "Deformable generalized Procrustes analysis of multi-view point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with ground truth.
    Synth(SynthArgs),
    /// Register a dataset and write the map and per-view transforms.
    Register(RegisterArgs),
    /// Evaluate saved results on held-out correspondences.
    Eval(EvalArgs),
    /// Report view ranks and degeneracies of a dataset.
    Check(CheckArgs),
    /// Run every method on a synthetic preset and write a summary table.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Generator configuration (JSON).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset (`liver-like`).
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct MethodArgs {
    /// Run configuration (JSON); flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    /// Kernel bandwidth factor on the mean pairwise distance.
    #[arg(long)]
    p: Option<f64>,
    /// Fixed kernel bandwidth (overrides `--p`).
    #[arg(long)]
    sigma: Option<f64>,
    /// Kernel regularization strength.
    #[arg(long)]
    mu: Option<f64>,
    /// TPS regularization strength.
    #[arg(long)]
    tps_mu: Option<f64>,
    /// TPS control points per principal axis.
    #[arg(long)]
    per_axis: Option<usize>,
    /// Skip the nonlinear scale refinement.
    #[arg(long)]
    no_refine: bool,
    /// Refinement iteration cap.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Fail on flat or undersized views instead of warning.
    #[arg(long)]
    strict: bool,
    /// Seed recorded in the run parameters (the solvers are deterministic).
    #[arg(long)]
    run_seed: Option<u64>,
}

#[derive(Args, Debug)]
struct RegisterArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    run: MethodArgs,
    /// Ids listed here are excluded from training.
    #[arg(long)]
    test_split: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    results: PathBuf,
    /// Test ids; defaults to every id absent from the saved map.
    #[arg(long)]
    test_split: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    run: MethodArgs,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value = "liver-like")]
    preset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    run: MethodArgs,
    #[arg(long)]
    out: PathBuf,
}

impl MethodArgs {
    fn config(&self, default_method: Method) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => io::load_run_config(path)?,
            None => RunConfig {
                allow_degenerate: true,
                ..RunConfig::for_method(default_method)
            },
        };
        if let Some(m) = self.method {
            if m != cfg.method {
                cfg.kernel = None;
                cfg.warp = None;
            }
            cfg.method = m;
        }
        if let Some(p) = self.p {
            cfg.p = p;
            cfg.kernel = None;
        }
        if let Some(sigma) = self.sigma {
            cfg.kernel = Some(KernelSpec::gaussian_fixed(sigma));
        }
        if let Some(mu) = self.mu {
            cfg.mu = mu;
        }
        if cfg.method == Method::Tps && (self.tps_mu.is_some() || self.per_axis.is_some()) {
            let (per_axis, mu) = cfg.tps_params();
            cfg.warp = Some(LbwSpec::Tps {
                per_axis: self.per_axis.unwrap_or(per_axis),
                mu: self.tps_mu.unwrap_or(mu),
            });
        }
        if self.no_refine {
            cfg.scale.refine = false;
        }
        if let Some(n) = self.max_iters {
            cfg.scale.max_iters = n;
        }
        if self.strict {
            cfg.allow_degenerate = false;
        }
        if self.run_seed.is_some() {
            cfg.seed = self.run_seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// The configuration for `method`, keeping shared settings.
    fn config_for(&self, method: Method) -> Result<RunConfig, Error> {
        let mut args = self.clone();
        args.method = Some(method);
        if method != Method::Tps {
            args.tps_mu = None;
            args.per_axis = None;
        }
        if method != Method::Kernel {
            args.sigma = None;
        }
        args.config(method)
    }
}

fn cmd_synth(args: &SynthArgs) -> Result<(), Error> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => io::load_json_config::<SynthConfig>(path)?,
        (None, Some(name)) => SynthConfig::preset(name, 0)?,
        (None, None) => return Err(Error::Config("synth needs --config or --preset".into())),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let (dataset, gt) = synth::generate(&cfg)?;
    io::save_dataset(&dataset, &args.out, Some(io::GROUND_TRUTH_FILE))?;
    io::save_ground_truth(&gt, &args.out.join(io::GROUND_TRUTH_FILE))?;
    if !gt.test_ids.is_empty() {
        io::save_split(&gt.test_ids, &args.out.join("split.json"))?;
    }
    println!(
        "wrote {} views of {} correspondences ({} test points) to {}",
        dataset.n(),
        dataset.m(),
        gt.test_ids.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_register(args: &RegisterArgs) -> Result<(), Error> {
    let mut cfg = args.run.config(Method::Kernel)?;
    let split = args.test_split.clone().or_else(|| cfg.test_split.clone().map(PathBuf::from));
    if let Some(path) = &split {
        cfg.test_split = Some(path.display().to_string());
    }
    let dataset = io::load_dataset(&args.dataset)?;
    let start = Instant::now();
    let reg = match &split {
        Some(path) => {
            let held: HashSet<usize> = io::load_split(path)?.into_iter().collect();
            let keep: Vec<usize> = (0..dataset.m()).filter(|id| !held.contains(id)).collect();
            if keep.is_empty() {
                return Err(Error::EmptyTraining);
            }
            let (train, ids) = dataset.restrict(&keep)?;
            registration::register(&train, &cfg, Some(ids))?
        }
        None => registration::register(&dataset, &cfg, None)?,
    };
    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    io::save_registration(&reg, &cfg.params_json(), runtime_ms, &args.out)?;
    println!(
        "{}: {} views, {} correspondences, cost {:e}, {:.1} ms",
        reg.method,
        reg.view_ids.len(),
        reg.map_ids.len(),
        reg.cost,
        runtime_ms
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), Error> {
    let dataset = io::load_dataset(&args.dataset)?;
    let (reg, file) = io::load_registration(&args.results)?;
    let test_ids = match &args.test_split {
        Some(path) => io::load_split(path)?,
        None => {
            let trained: HashSet<usize> = reg.map_ids.iter().cloned().collect();
            (0..dataset.m()).filter(|id| !trained.contains(id)).collect()
        }
    };
    if test_ids.is_empty() {
        return Err(Error::InvalidInput("no test ids: every correspondence was used for training".into()));
    }
    let report = eval::evaluate(&dataset, &reg, &test_ids)?;
    let out = ReportFile::new(reg.method, file.params, &report, file.runtime_ms);
    io::save_report(&out, &args.out)?;
    println!(
        "{}: {} test points, delta min {:.6} max {:.6} mean {:.6}",
        reg.method,
        report.ids.len(),
        report.stats.min,
        report.stats.max,
        report.stats.mean
    );
    Ok(())
}

fn cmd_check(args: &CheckArgs) -> Result<(), Error> {
    let dataset = io::load_dataset(&args.dataset)?;
    let cfg = RunConfig {
        allow_degenerate: true,
        ..args.run.config_for(Method::Kernel)?
    };
    let d = dataset.dim();
    let mut text = String::new();
    let counts = dataset.visibility_counts();
    let _ = writeln!(text, "dataset: d = {d}, m = {}, n = {}", dataset.m(), dataset.n());
    let _ = writeln!(
        text,
        "visibility per correspondence: min {} max {}",
        counts.iter().min().unwrap_or(&0),
        counts.iter().max().unwrap_or(&0)
    );
    for view in dataset.views() {
        let rank = linalg::rank(&view.cloud.homogeneous())?;
        let flag = if rank <= d { "  (flat)" } else { "" };
        let _ = writeln!(text, "view {}: {} points, homogenized rank {rank}{flag}", view.id + 1, view.len());
    }
    let reg = registration::register(&dataset, &cfg, None)?;
    if let Some(deg) = &reg.degeneracy {
        let _ = writeln!(text, "bottom eigenvalues: {:?}", deg.bottom_eigenvalues);
        let _ = writeln!(
            text,
            "near-zero eigenvalues: {} (threshold {:e})",
            deg.near_zero_eigenvalues, deg.threshold
        );
        if deg.zero_deformation {
            let _ = writeln!(
                text,
                "diagnosis: d+1 near-zero eigenvalues ({} found, d = {d}); the views agree up to rigid motion, \
                 so the shape is fixed only up to the scale resolution",
                deg.near_zero_eigenvalues
            );
        }
        if !deg.flat_views.is_empty() {
            let ids: Vec<String> = deg.flat_views.iter().map(|v| (v + 1).to_string()).collect();
            let _ = writeln!(
                text,
                "diagnosis: flat views {}; the scale along their normal is unobservable from them",
                ids.join(", ")
            );
        }
        if deg.spectrum_degenerate {
            let _ = writeln!(text, "diagnosis: bottom spectrum has no gap (gap {:e}); the shape is not unique", deg.spectral_gap);
        }
        if !deg.any() {
            let _ = writeln!(text, "diagnosis: no degeneracy detected");
        }
    }
    print!("{text}");
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<(), Error> {
    let cfg = SynthConfig::preset(&args.preset, args.seed)?;
    let (dataset, gt) = synth::generate(&cfg)?;
    let train: Vec<usize> = (0..cfg.m).collect();
    let (train_set, ids) = dataset.restrict(&train)?;
    let mut csv = String::from("method,min,max,mean\n");
    for method in Method::ALL {
        let run = args.run.config_for(method)?;
        let start = Instant::now();
        let reg = registration::register(&train_set, &run, Some(ids.clone()))?;
        let report = eval::evaluate(&dataset, &reg, &gt.test_ids)?;
        let s = report.stats;
        let _ = writeln!(csv, "{method},{:?},{:?},{:?}", s.min, s.max, s.mean);
        eprintln!("{method}: mean {:.4} ({:.1} s)", s.mean, start.elapsed().as_secs_f64());
    }
    write_file(&args.out, &csv)?;
    print!("{csv}");
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn configure_threads() -> Result<(), Error> {
    let Ok(value) = std::env::var("DEFGPA_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("DEFGPA_THREADS must be a non-negative integer, got '{value}'")))?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot configure thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Error> {
    configure_threads()?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Register(a) => cmd_register(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Check(a) => cmd_check(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
