//! Command-line front end: preprocess, train, evaluate, relevance, profile.
//!
//! Settings come from a `key = value` run configuration (`--config`),
//! then dedicated flags, then `--set key=value` overrides, later sources
//! winning. Every command writes the fully resolved configuration to
//! `resolved_config.conf` in the output directory; passing that file back
//! with `--config` reproduces the run.
//!
//! Output files, all under `output_dir`:
//!
//! | command    | files                                                          |
//! |------------|----------------------------------------------------------------|
//! | preprocess | `train_matrix.csv`, `test_matrix.csv`, `pipeline.json`         |
//! | train      | `model.bin`, `trace.csv`, `hyperparameters.conf`               |
//! | evaluate   | `summary.txt`, `truth_vs_pred.csv`                             |
//! | relevance  | `relevance.csv`                                                |
//! | profile    | `profile_<i>.csv` per requested feature                       |
//!
//! Wall-clock durations go to `timings.txt` so that the report files of two
//! identical runs are byte-identical.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};

use crate::conf::ConfMap;
use crate::error::{Error, Result};
use crate::eval_report::{evaluate_model, posterior_profile, truth_vs_pred_text};
use crate::gp_exact::fit_exact;
use crate::gp_local::{fit_local, PredictionMode};
use crate::gp_sparse::{
    default_inducing_count, fit_sparse, fit_sparse_stochastic, select_inducing, InducingStrategy, StochasticSettings,
};
use crate::hyperopt::{ard_relevance, default_initialization, optimize_hyperparameters, ModelFamily, OptimizerSettings};
use crate::kernels::{KernelKind, KernelSpec};
use crate::model_io::GpModel;
use crate::pipeline::{self, PipelineArtifact, PipelineConfig};

pub const ENV_WORKERS: &str = "GPFORECAST_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "gpforecast", version, about = "Gaussian-process demand forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Ingest raw data, split by fold and write model-ready matrices.
    Preprocess(RunArgs),
    /// Fit hyperparameters and the model on the training matrix.
    Train(RunArgs),
    /// Score the trained model on the test matrix.
    Evaluate(RunArgs),
    /// Rank features by ARD inverse lengthscale.
    Relevance(RunArgs),
    /// Posterior-mean profiles along selected features.
    Profile(RunArgs),
}

impl Command {
    fn args(&self) -> &RunArgs {
        match self {
            Command::Preprocess(a)
            | Command::Train(a)
            | Command::Evaluate(a)
            | Command::Relevance(a)
            | Command::Profile(a) => a,
        }
    }
}

#[derive(Args, Debug, Default, Clone)]
pub struct RunArgs {
    /// Run configuration file (`key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub pipeline: Option<String>,
    #[arg(long, visible_alias = "output-dir")]
    pub output: Option<String>,
    /// exact, sparse or local.
    #[arg(long)]
    pub model: Option<String>,
    /// se_ard, additive_matern32 or sum.
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long)]
    pub inducing: Option<usize>,
    #[arg(long)]
    pub inducing_strategy: Option<String>,
    /// 0 trains the sparse model in batch mode.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub regions: Option<usize>,
    /// nearest or weighted.
    #[arg(long)]
    pub local_mode: Option<String>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Worker threads; defaults to the GPFORECAST_WORKERS environment variable.
    #[arg(long, env = ENV_WORKERS)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Comma-separated feature indices for `profile`.
    #[arg(long)]
    pub features: Option<String>,
    #[arg(long)]
    pub grid_size: Option<usize>,
}

const PATH_KEYS: [&str; 3] = ["data", "pipeline", "output_dir"];

/// Fully resolved run settings.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub pipeline: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub model: String,
    pub kernel: KernelKind,
    pub optimize: bool,
    pub signal_variance: Option<f64>,
    pub lengthscale: Option<f64>,
    pub noise_variance: Option<f64>,
    pub inducing: Option<usize>,
    pub inducing_strategy: InducingStrategy,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub regions: usize,
    pub local_mode: PredictionMode,
    pub max_iters: usize,
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
    pub workers: Option<usize>,
    pub top_k: usize,
    pub profile_features: Vec<usize>,
    pub grid_size: usize,
}

const KNOWN_KEYS: [&str; 24] = [
    "data",
    "pipeline",
    "output_dir",
    "model",
    "kernel",
    "optimize",
    "signal_variance",
    "lengthscale",
    "noise_variance",
    "inducing",
    "inducing_strategy",
    "batch_size",
    "steps",
    "learning_rate",
    "regions",
    "local_mode",
    "max_iters",
    "tol",
    "restarts",
    "seed",
    "workers",
    "top_k",
    "profile_features",
    "grid_size",
];

impl RunConfig {
    pub fn from_conf(c: &ConfMap) -> Result<Self> {
        if let Some((k, _)) = c.iter().find(|(k, _)| !KNOWN_KEYS.contains(k)) {
            return Err(Error::config(k, "unknown configuration key"));
        }
        let model = c.get("model").unwrap_or("exact").to_string();
        if !["exact", "sparse", "local"].contains(&model.as_str()) {
            return Err(Error::config("model", format!("expected exact, sparse or local, got `{model}`")));
        }
        let positive = |key: &str, v: Option<f64>| -> Result<Option<f64>> {
            match v {
                Some(x) if !(x.is_finite() && x > 0.0) => Err(Error::config(key, "must be a positive number")),
                other => Ok(other),
            }
        };
        let inducing_strategy = match c.get("inducing_strategy") {
            Some(s) => InducingStrategy::parse(s)?,
            None => InducingStrategy::KMeansCentroids,
        };
        let local_mode = match c.get("local_mode") {
            Some(s) => PredictionMode::parse(s)?,
            None => PredictionMode::WeightedAverage,
        };
        let kernel = match c.get("kernel") {
            Some(s) => KernelKind::parse(s).map_err(|e| Error::config("kernel", e.to_string()))?,
            None => KernelKind::SquaredExponentialArd,
        };
        Ok(Self {
            data: c.get("data").map(PathBuf::from),
            pipeline: c.get("pipeline").map(PathBuf::from),
            output_dir: PathBuf::from(c.get("output_dir").unwrap_or("gpforecast_out")),
            model,
            kernel,
            optimize: c.parse_or("optimize", true)?,
            signal_variance: positive("signal_variance", c.parse_value("signal_variance")?)?,
            lengthscale: positive("lengthscale", c.parse_value("lengthscale")?)?,
            noise_variance: positive("noise_variance", c.parse_value("noise_variance")?)?,
            inducing: c.parse_value("inducing")?,
            inducing_strategy,
            batch_size: c.parse_or("batch_size", 0)?,
            steps: c.parse_or("steps", 2000)?,
            learning_rate: positive("learning_rate", Some(c.parse_or("learning_rate", 0.05)?))?.unwrap(),
            regions: c.parse_or("regions", 4)?,
            local_mode,
            max_iters: c.parse_or("max_iters", 200)?,
            tol: positive("tol", Some(c.parse_or("tol", 1e-5)?))?.unwrap(),
            restarts: c.parse_or("restarts", 3)?,
            seed: c.parse_or("seed", 0)?,
            workers: c.parse_value("workers")?,
            top_k: c.parse_or("top_k", 10)?,
            profile_features: c.parse_list("profile_features")?.unwrap_or_else(|| vec![0]),
            grid_size: c.parse_or("grid_size", 50)?,
        })
    }

    /// Every key with its resolved value.
    pub fn to_conf(&self) -> ConfMap {
        let mut c = ConfMap::new();
        if let Some(p) = &self.data {
            c.set("data", p.display());
        }
        if let Some(p) = &self.pipeline {
            c.set("pipeline", p.display());
        }
        c.set("output_dir", self.output_dir.display());
        c.set("model", &self.model);
        c.set("kernel", self.kernel.name());
        c.set("optimize", self.optimize);
        if let Some(v) = self.signal_variance {
            c.set("signal_variance", v);
        }
        if let Some(v) = self.lengthscale {
            c.set("lengthscale", v);
        }
        if let Some(v) = self.noise_variance {
            c.set("noise_variance", v);
        }
        if let Some(v) = self.inducing {
            c.set("inducing", v);
        }
        c.set("inducing_strategy", self.inducing_strategy.name());
        c.set("batch_size", self.batch_size);
        c.set("steps", self.steps);
        c.set("learning_rate", self.learning_rate);
        c.set("regions", self.regions);
        c.set("local_mode", self.local_mode.name());
        c.set("max_iters", self.max_iters);
        c.set("tol", self.tol);
        c.set("restarts", self.restarts);
        c.set("seed", self.seed);
        if let Some(v) = self.workers {
            c.set("workers", v);
        }
        c.set("top_k", self.top_k);
        c.set(
            "profile_features",
            self.profile_features.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
        );
        c.set("grid_size", self.grid_size);
        c
    }

    fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

/// Layers the configuration file, the flags and `--set` overrides.
pub fn resolve_config(args: &RunArgs) -> Result<RunConfig> {
    let mut c = ConfMap::new();
    if let Some(path) = &args.config {
        let file = ConfMap::load(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for (k, v) in file.iter() {
            if PATH_KEYS.contains(&k) && Path::new(v).is_relative() {
                c.set(k, base.join(v).display());
            } else {
                c.set(k, v);
            }
        }
    }
    let flags: [(&str, Option<String>); 19] = [
        ("data", args.data.clone()),
        ("pipeline", args.pipeline.clone()),
        ("output_dir", args.output.clone()),
        ("model", args.model.clone()),
        ("kernel", args.kernel.clone()),
        ("inducing", args.inducing.map(|v| v.to_string())),
        ("inducing_strategy", args.inducing_strategy.clone()),
        ("batch_size", args.batch_size.map(|v| v.to_string())),
        ("steps", args.steps.map(|v| v.to_string())),
        ("learning_rate", args.learning_rate.map(|v| v.to_string())),
        ("seed", args.seed.map(|v| v.to_string())),
        ("regions", args.regions.map(|v| v.to_string())),
        ("local_mode", args.local_mode.clone()),
        ("max_iters", args.max_iters.map(|v| v.to_string())),
        ("tol", args.tol.map(|v| v.to_string())),
        ("restarts", args.restarts.map(|v| v.to_string())),
        ("top_k", args.top_k.map(|v| v.to_string())),
        ("profile_features", args.features.clone()),
        ("grid_size", args.grid_size.map(|v| v.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            c.set(k, v);
        }
    }
    // the environment only supplies a default worker count
    if let Some(w) = args.workers {
        if !c.contains("workers") {
            c.set("workers", w);
        }
    }
    for s in &args.set {
        c.set_assignment(s)?;
    }
    RunConfig::from_conf(&c)
}

fn configure_workers(workers: Option<usize>) {
    if let Some(w) = workers.filter(|w| *w > 0) {
        // a pool can be installed only once per process; later calls keep it
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
}

fn prepare_output(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.out("resolved_config.conf"), cfg.to_conf().to_text())?;
    Ok(())
}

fn require_file(path: &Path, produced_by: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "missing artifact {}; run `{produced_by}` first",
            path.display()
        )))
    }
}

fn record_timing(cfg: &RunConfig, key: &str, seconds: f64) -> Result<()> {
    let path = cfg.out("timings.txt");
    let mut c = if path.is_file() { ConfMap::load(&path)? } else { ConfMap::new() };
    c.set(key, format!("{seconds:.6}"));
    std::fs::write(path, c.to_text())?;
    Ok(())
}

pub fn cmd_preprocess(cfg: &RunConfig) -> Result<()> {
    let data = cfg.data.as_ref().ok_or_else(|| Error::config("data", "missing required key"))?;
    let pipe_path = cfg
        .pipeline
        .as_ref()
        .ok_or_else(|| Error::config("pipeline", "missing required key"))?;
    let pipe = PipelineConfig::load(pipe_path)?;
    prepare_output(cfg)?;
    let start = Instant::now();
    let (train, test) = pipeline::load_and_split(data, &pipe)?;
    let (train_m, artifact) = pipeline::fit_pipeline(&train, &pipe)?;
    let test_m = pipeline::apply_pipeline(&test, &artifact)?;
    std::fs::write(cfg.out("train_matrix.csv"), pipeline::matrix_to_csv(&train_m, &pipe.target))?;
    std::fs::write(cfg.out("test_matrix.csv"), pipeline::matrix_to_csv(&test_m, &pipe.target))?;
    artifact.save(&cfg.out("pipeline.json"))?;
    log::info!(
        "preprocess: {} train rows ({} dropped), {} test rows ({} dropped), {} features",
        train_m.x.nrows(),
        train_m.dropped_rows,
        test_m.x.nrows(),
        test_m.dropped_rows,
        train_m.feature_names.len()
    );
    record_timing(cfg, "preprocess_seconds", start.elapsed().as_secs_f64())
}

fn initial_hyperparameters(cfg: &RunConfig, d: usize, y: &DVector<f64>) -> Result<(KernelSpec, f64)> {
    let (kernel, noise) = default_initialization(cfg.kernel, d, y)?;
    let sv = cfg.signal_variance.unwrap_or_else(|| kernel.total_signal_variance());
    let ls = cfg.lengthscale.unwrap_or(1.0);
    let mut kernel = KernelSpec::with_defaults(cfg.kernel, d, sv)?;
    if ls != 1.0 {
        let mut p = kernel.log_params();
        let sv_idx: Vec<usize> = kernel.signal_variance_params().iter().map(|s| s.0).collect();
        for (i, v) in p.iter_mut().enumerate() {
            if !sv_idx.contains(&i) {
                *v = ls.ln();
            }
        }
        kernel = kernel.with_log_params(&p)?;
    }
    Ok((kernel, cfg.noise_variance.unwrap_or(noise)))
}

fn train_model(cfg: &RunConfig, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(GpModel, Option<String>)> {
    let n = x.nrows();
    let (kernel0, noise0) = initial_hyperparameters(cfg, x.ncols(), y)?;
    let settings = OptimizerSettings {
        max_iters: cfg.max_iters,
        tolerance: cfg.tol,
        restarts: cfg.restarts,
        seed: cfg.seed,
    };
    let inducing = match cfg.model.as_str() {
        "sparse" => {
            let m = cfg.inducing.unwrap_or_else(|| default_inducing_count(n)).min(n);
            Some(select_inducing(x, m, cfg.inducing_strategy, cfg.seed)?)
        }
        _ => None,
    };
    let family = match cfg.model.as_str() {
        "exact" => ModelFamily::Exact,
        "sparse" => ModelFamily::Sparse {
            inducing: inducing.clone().expect("selected above"),
        },
        _ => ModelFamily::Local {
            regions: cfg.regions,
            seed: cfg.seed,
        },
    };
    let (kernel, noise, trace) = if cfg.optimize {
        let (h, t) = optimize_hyperparameters(&family, x, y, &kernel0, noise0, &settings)?;
        (h.kernel, h.noise_variance, Some(t.to_table()))
    } else {
        (kernel0, noise0, None)
    };
    let model = match family {
        ModelFamily::Exact => GpModel::Exact(fit_exact(x, y, &kernel, noise)?),
        ModelFamily::Sparse { inducing } => {
            if cfg.batch_size > 0 {
                let s = StochasticSettings {
                    batch_size: cfg.batch_size.min(n),
                    steps: cfg.steps,
                    learning_rate: cfg.learning_rate,
                    seed: cfg.seed,
                };
                GpModel::Sparse(fit_sparse_stochastic(x, y, &kernel, noise, &inducing, s)?)
            } else {
                GpModel::Sparse(fit_sparse(x, y, &kernel, noise, &inducing)?)
            }
        }
        ModelFamily::Local { regions, seed } => {
            GpModel::Local(fit_local(x, y, &kernel, noise, regions, cfg.local_mode, seed)?)
        }
    };
    Ok((model, trace))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let train_path = cfg.out("train_matrix.csv");
    require_file(&train_path, "preprocess")?;
    let (_, x, y) = pipeline::read_matrix_csv(&train_path)?;
    prepare_output(cfg)?;
    let start = Instant::now();
    let (model, trace) = train_model(cfg, &x, &y)?;
    let seconds = start.elapsed().as_secs_f64();
    model.save(&cfg.out("model.bin"))?;
    std::fs::write(
        cfg.out("trace.csv"),
        trace.unwrap_or_else(|| "iteration,objective\n".to_string()),
    )?;
    let mut h = model.kernel().to_conf();
    h.set("noise_variance", model.noise_variance());
    h.set("family", model.family_name());
    std::fs::write(cfg.out("hyperparameters.conf"), h.to_text())?;
    record_timing(cfg, "train_seconds", seconds)
}

fn load_model(cfg: &RunConfig) -> Result<GpModel> {
    let path = cfg.out("model.bin");
    require_file(&path, "train")?;
    GpModel::load(&path)
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let model = load_model(cfg)?;
    let test_path = cfg.out("test_matrix.csv");
    require_file(&test_path, "preprocess")?;
    let art_path = cfg.out("pipeline.json");
    require_file(&art_path, "preprocess")?;
    let artifact = PipelineArtifact::load(&art_path)?;
    let (_, x, z) = pipeline::read_matrix_csv(&test_path)?;
    let y = z.map(|v| artifact.transform.inverse(v));
    let n_train = match pipeline::read_matrix_csv(&cfg.out("train_matrix.csv")) {
        Ok((_, xt, _)) => xt.nrows(),
        Err(_) => 0,
    };
    prepare_output(cfg)?;
    let method = format!("{}/{}", model.family_name(), model.kernel().kind().name());
    let report = evaluate_model(&method, &model, &x, &y, artifact.transform, n_train)?;
    std::fs::write(cfg.out("summary.txt"), report.summary_text())?;
    std::fs::write(cfg.out("truth_vs_pred.csv"), truth_vs_pred_text(&report))?;
    log::info!("evaluate: rmsle {:.6} on {} test rows", report.rmsle, report.n_test);
    record_timing(cfg, "predict_seconds", report.runtime_seconds)
}

pub fn cmd_relevance(cfg: &RunConfig) -> Result<()> {
    let model = load_model(cfg)?;
    let names = PipelineArtifact::load(&cfg.out("pipeline.json"))
        .ok()
        .map(|a| a.feature_names)
        .filter(|n| n.len() == model.kernel().input_dim());
    prepare_output(cfg)?;
    let k = cfg.top_k.min(model.kernel().input_dim());
    let ranking = ard_relevance(model.kernel(), k)?;
    std::fs::write(cfg.out("relevance.csv"), ranking.to_table(names.as_deref()))?;
    Ok(())
}

pub fn cmd_profile(cfg: &RunConfig) -> Result<()> {
    let model = load_model(cfg)?;
    let train_path = cfg.out("train_matrix.csv");
    require_file(&train_path, "preprocess")?;
    let (_, x, _) = pipeline::read_matrix_csv(&train_path)?;
    prepare_output(cfg)?;
    for &f in &cfg.profile_features {
        let p = posterior_profile(&model, f, cfg.grid_size, &x)?;
        if let Some(w) = &p.warning {
            log::warn!("{w}");
        }
        std::fs::write(cfg.out(&format!("profile_{f}.csv")), p.to_table())?;
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli.command.args())?;
    configure_workers(cfg.workers);
    match &cli.command {
        Command::Preprocess(_) => cmd_preprocess(&cfg),
        Command::Train(_) => cmd_train(&cfg),
        Command::Evaluate(_) => cmd_evaluate(&cfg),
        Command::Relevance(_) => cmd_relevance(&cfg),
        Command::Profile(_) => cmd_profile(&cfg),
    }
}

/// Parses `args` (including the program name) and runs; returns the
/// process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
