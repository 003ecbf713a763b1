//! `deepocta` command line: synthetic data, fold splits, training, prediction,
//! ensembles, evaluation and run reports.
//!
//! Exit status is 0 on success, 1 for invalid input (bad flags, configs or
//! data) and 2 when the work itself fails.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use deepocta::config::{load_run_config, to_config_string, CONFIG_FILE};
use deepocta::data::{
    generate_synthetic, load_cls_manifest, load_seg_manifest, split_folds, split_folds_stratified,
    write_folds_csv, SynthSpec,
};
use deepocta::inference::{list_images, predict_dataset, read_ensemble_file, write_ensemble_manifest, EnsembleSpec};
use deepocta::metrics::{evaluate_with, AucAverage, KappaWeights};
use deepocta::model_zoo::{Registry, Task};
use deepocta::report::write_report;
use deepocta::training::{run_cv, run_segmentation, RunConfig, FOLDS_FILE};
use deepocta::Error;

pub const RUNS_DIR_ENV: &str = "DEEPOCTA_RUNS_DIR";

#[derive(Debug, Parser)]
#[command(name = "deepocta", version, about = "Lesion segmentation and DR grading on OCTA images")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic OCTA-like dataset.
    Synth(SynthArgs),
    /// Assign images of a dataset to cross-validation folds.
    Split(SplitArgs),
    /// Train a lesion segmentation model.
    TrainSeg(TrainArgs),
    /// Train a grading classifier with k-fold cross validation.
    TrainCls(TrainArgs),
    /// Predict with a checkpoint or an ensemble.
    Predict(PredictArgs),
    /// Write an ensemble file.
    Ensemble(EnsembleArgs),
    /// Score predictions against ground truth.
    Evaluate(EvaluateArgs),
    /// Comparison table over run directories.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 60)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 0.03)]
    noise: f64,
    #[arg(long, default_value_t = 1)]
    min_blobs: usize,
    #[arg(long, default_value_t = 3)]
    max_blobs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SplitArgs {
    /// Dataset root with `labels.csv`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ignore labels when assigning folds.
    #[arg(long)]
    no_stratify: bool,
    /// Defaults to `<data>/folds.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Training flags; each one is shorthand for a config key.
#[derive(Debug, Args)]
struct TrainArgs {
    /// Sectioned key-value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Any config key as `section.key=value`; repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Validate and print the resolved plan without training.
    #[arg(long)]
    dry_run: bool,
    /// Parent of run directories.
    #[arg(long, env = RUNS_DIR_ENV, default_value = "runs")]
    runs_dir: PathBuf,

    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    lesion: Option<String>,
    #[arg(long)]
    folds: Option<String>,
    #[arg(long)]
    folds_file: Option<String>,
    #[arg(long)]
    val_fraction: Option<String>,

    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    encoder: Option<String>,
    #[arg(long)]
    num_outputs: Option<String>,
    #[arg(long)]
    input_size: Option<String>,
    #[arg(long)]
    in_channels: Option<String>,
    #[arg(long)]
    pretrain_source: Option<String>,
    #[arg(long)]
    pretrained: Option<String>,
    #[arg(long)]
    strict_head: Option<String>,

    #[arg(long)]
    schedule: Option<String>,
    #[arg(long, alias = "lr")]
    lr0: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    selection_metric: Option<String>,
    #[arg(long)]
    label_smoothing: Option<String>,

    #[arg(long)]
    alpha1: Option<String>,
    #[arg(long)]
    alpha2: Option<String>,
    #[arg(long)]
    mix_prob: Option<String>,
    #[arg(long)]
    cutmix_share: Option<String>,
    #[arg(long)]
    per_sample_lambda: Option<String>,

    #[arg(long)]
    color_jitter: Option<String>,
    #[arg(long)]
    jitter_strength: Option<String>,
    #[arg(long)]
    noise_sigma: Option<String>,
    #[arg(long)]
    hflip: Option<String>,
    #[arg(long)]
    rotate: Option<String>,
    #[arg(long)]
    random_crop: Option<String>,
    #[arg(long)]
    perspective: Option<String>,
}

impl TrainArgs {
    /// Named flags as `section.key=value`, after the generic `--set` ones.
    fn overrides(&self) -> Vec<String> {
        let named: [(&str, &Option<String>); 35] = [
            ("run.name", &self.name),
            ("run.seed", &self.seed),
            ("run.data", &self.data),
            ("run.lesion", &self.lesion),
            ("run.folds", &self.folds),
            ("run.folds_file", &self.folds_file),
            ("run.val_fraction", &self.val_fraction),
            ("model.arch", &self.arch),
            ("model.encoder", &self.encoder),
            ("model.num_outputs", &self.num_outputs),
            ("model.input_size", &self.input_size),
            ("model.in_channels", &self.in_channels),
            ("model.pretrain_source", &self.pretrain_source),
            ("model.pretrained", &self.pretrained),
            ("model.strict_head", &self.strict_head),
            ("train.schedule", &self.schedule),
            ("train.lr0", &self.lr0),
            ("train.epochs", &self.epochs),
            ("train.optimizer", &self.optimizer),
            ("train.batch_size", &self.batch_size),
            ("train.loss", &self.loss),
            ("train.selection_metric", &self.selection_metric),
            ("train.label_smoothing", &self.label_smoothing),
            ("mix.alpha1", &self.alpha1),
            ("mix.alpha2", &self.alpha2),
            ("mix.mix_prob", &self.mix_prob),
            ("mix.cutmix_share", &self.cutmix_share),
            ("mix.per_sample_lambda", &self.per_sample_lambda),
            ("augment.color_jitter", &self.color_jitter),
            ("augment.jitter_strength", &self.jitter_strength),
            ("augment.noise_sigma", &self.noise_sigma),
            ("augment.hflip", &self.hflip),
            ("augment.rotate", &self.rotate),
            ("augment.random_crop", &self.random_crop),
            ("augment.perspective", &self.perspective),
        ];
        let mut out = self.set.clone();
        out.extend(named.iter().filter_map(|(k, v)| v.as_ref().map(|v| format!("{k}={v}"))));
        out
    }
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Comma-separated checkpoint or run directories, or an ensemble file.
    #[arg(long)]
    ensemble: String,
    /// Per-entry weights for a comma-separated list.
    #[arg(long, value_delimiter = ',')]
    weights: Vec<f64>,
    /// Dataset root (its `images/` is used) or a directory of PNGs.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    tta: usize,
    #[arg(long, default_value_t = deepocta::inference::DEFAULT_THRESHOLD)]
    threshold: f64,
}

#[derive(Debug, Args)]
struct EnsembleArgs {
    /// Comma-separated checkpoint or run directories.
    #[arg(long, value_delimiter = ',', required = true)]
    members: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    weights: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// seg or cls.
    #[arg(long)]
    task: String,
    /// Prediction directory (seg) or `predictions.csv` (cls).
    #[arg(long)]
    pred: PathBuf,
    /// Dataset root, or a labels file for cls.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value = "quadratic")]
    kappa_weights: String,
    #[arg(long, default_value = "macro")]
    auc_average: String,
    /// Also write the key-value report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn dispatch(cmd: Command) -> deepocta::Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Split(a) => split(a),
        Command::TrainSeg(a) => train(a, Task::Segmentation),
        Command::TrainCls(a) => train(a, Task::Classification),
        Command::Predict(a) => predict(a),
        Command::Ensemble(a) => ensemble(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => report(a),
    }
}

fn write(path: &Path, text: &str) -> deepocta::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn synth(a: SynthArgs) -> deepocta::Result<()> {
    let spec = SynthSpec {
        n_samples: a.n,
        image_size: a.size,
        class_count: a.classes,
        lesion_blob_count_range: (a.min_blobs, a.max_blobs),
        noise_level: a.noise,
        seed: a.seed,
    };
    let (seg, cls) = generate_synthetic(&spec, &a.out)?;
    println!(
        "wrote {} images ({} classes, {}x{}) to {}",
        seg.entries.len(),
        cls.class_count,
        a.size,
        a.size,
        a.out.display()
    );
    Ok(())
}

fn split(a: SplitArgs) -> deepocta::Result<()> {
    let manifest = load_cls_manifest(&a.data)?;
    let folds = if a.no_stratify {
        split_folds(manifest.entries.len(), a.k, a.seed)?
    } else {
        split_folds_stratified(&manifest.labels(), a.k, a.seed)?
    };
    let out = a.out.unwrap_or_else(|| a.data.join(FOLDS_FILE));
    write_folds_csv(&out, &manifest.images(), &folds)?;
    println!("fold sizes {:?} written to {}", folds.fold_sizes(), out.display());
    Ok(())
}

fn resolve(a: &TrainArgs, task: Task) -> deepocta::Result<RunConfig> {
    let (text, source) = match &a.config {
        Some(p) => (
            std::fs::read_to_string(p).map_err(|e| io_err(p, e))?,
            p.display().to_string(),
        ),
        None => (String::new(), "<defaults>".to_string()),
    };
    load_run_config(&text, &source, Some(task), &a.overrides())
}

fn plan(cfg: &RunConfig, run_dir: &Path) -> String {
    let mut out = format!("run directory: {}\n", run_dir.display());
    match cfg.task {
        Task::Segmentation => out.push_str(&format!(
            "train {} on {} for lesion {}, {:.0}% held out for validation\n",
            cfg.model.arch,
            cfg.data.display(),
            cfg.lesion.map(|l| l.to_string()).unwrap_or_default(),
            cfg.val_fraction * 100.0
        )),
        Task::Classification => out.push_str(&format!(
            "train {} on {} with {}\n",
            cfg.model.arch,
            cfg.data.display(),
            match &cfg.folds_file {
                Some(f) => format!("folds from {}", f.display()),
                None => format!("{} stratified folds (seed {})", cfg.folds, cfg.seed),
            }
        )),
    }
    out.push_str("--- resolved config ---\n");
    out.push_str(&to_config_string(cfg));
    out
}

fn train(a: TrainArgs, task: Task) -> deepocta::Result<()> {
    let cfg = resolve(&a, task)?;
    let run_dir = a.runs_dir.join(&cfg.name);
    if a.dry_run {
        print!("{}", plan(&cfg, &run_dir));
        return Ok(());
    }
    std::fs::create_dir_all(&run_dir).map_err(|e| io_err(&run_dir, e))?;
    write(&run_dir.join(CONFIG_FILE), &to_config_string(&cfg))?;
    match task {
        Task::Segmentation => {
            let manifest = load_seg_manifest(&cfg.data)?;
            let (record, log) = run_segmentation(&cfg, &manifest, &run_dir)?;
            for w in &log.warnings {
                log::warn!("{w}");
            }
            println!(
                "best epoch {} val {} {:.4}; checkpoint {}",
                record.epoch,
                record.val_metric_name,
                record.val_metric_value,
                record.dir().display()
            );
        }
        Task::Classification => {
            let manifest = load_cls_manifest(&cfg.data)?;
            let cv = run_cv(&cfg, &manifest, &run_dir)?;
            for (f, r) in cv.records.iter().enumerate() {
                println!("fold {f}: best epoch {} val kappa {:.4}", r.epoch, r.val_metric_value);
            }
            println!("val kappa {:.4} ± {:.4} over {} folds; run {}", cv.mean, cv.std, cv.folds.k, run_dir.display());
        }
    }
    Ok(())
}

fn members_of(spec: &str, weights: &[f64]) -> deepocta::Result<Vec<(PathBuf, f64)>> {
    let path = Path::new(spec);
    if path.is_file() && !spec.contains(',') && !path.ends_with(deepocta::model_zoo::META_FILE) {
        if path.extension().is_some_and(|e| e == "bin") {
            return Ok(vec![(path.to_path_buf(), 1.0)]);
        }
        if !weights.is_empty() {
            return Err(Error::InvalidArgument("--weights applies to a comma-separated list".into()));
        }
        return read_ensemble_file(path);
    }
    let paths: Vec<PathBuf> = spec.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect();
    if paths.is_empty() {
        return Err(Error::InvalidArgument("empty --ensemble".into()));
    }
    if !weights.is_empty() && weights.len() != paths.len() {
        return Err(Error::InvalidArgument(format!("{} weights for {} members", weights.len(), paths.len())));
    }
    Ok(paths
        .into_iter()
        .enumerate()
        .map(|(i, p)| (p, weights.get(i).copied().unwrap_or(1.0)))
        .collect())
}

fn predict(a: PredictArgs) -> deepocta::Result<()> {
    let entries = members_of(&a.ensemble, &a.weights)?;
    let spec = EnsembleSpec::from_paths(&entries)?;
    let ens = spec.load(&Registry::default())?;
    let images = list_images(&a.input)?;
    let summary = predict_dataset(ens, &images, &a.out, a.tta, a.threshold)?;
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "{} entries, {} checkpoints; {} images -> {} files in {}",
        entries.len(),
        spec.members.len(),
        images.len(),
        summary.files.len(),
        a.out.display()
    );
    Ok(())
}

fn ensemble(a: EnsembleArgs) -> deepocta::Result<()> {
    if !a.weights.is_empty() && a.weights.len() != a.members.len() {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {} members",
            a.weights.len(),
            a.members.len()
        )));
    }
    let entries: Vec<(PathBuf, f64)> = a
        .members
        .iter()
        .enumerate()
        .map(|(i, p)| (p.clone(), a.weights.get(i).copied().unwrap_or(1.0)))
        .collect();
    let spec = EnsembleSpec::from_paths(&entries)?;
    let base = match a.out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let relative: Vec<(PathBuf, f64)> = entries
        .iter()
        .map(|(p, w)| {
            let abs = std::path::absolute(p).unwrap_or_else(|_| p.clone());
            let rel = std::path::absolute(base)
                .ok()
                .and_then(|b| abs.strip_prefix(b).ok().map(Path::to_path_buf))
                .unwrap_or(abs);
            (rel, *w)
        })
        .collect();
    write(&a.out, &write_ensemble_manifest(&relative))?;
    println!(
        "{} entries, {} checkpoints written to {}",
        entries.len(),
        spec.members.len(),
        a.out.display()
    );
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> deepocta::Result<()> {
    let task: Task = a.task.parse()?;
    let weights: KappaWeights = a.kappa_weights.parse()?;
    let average: AucAverage = a.auc_average.parse()?;
    let report = evaluate_with(&a.pred, &a.gt, task, weights, average)?;
    let mut stdout = std::io::stdout().lock();
    let _ = write!(stdout, "{}", report.to_table());
    if let Some(out) = &a.out {
        write(out, &report.to_kv())?;
    }
    Ok(())
}

fn report(a: ReportArgs) -> deepocta::Result<()> {
    let table = write_report(&a.runs)?;
    print!("{table}");
    if let Some(out) = &a.out {
        write(out, &table)?;
    }
    Ok(())
}
