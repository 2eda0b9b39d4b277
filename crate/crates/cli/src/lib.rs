//! Command line front end: dataset generation, pair splitting, training,
//! fine-tuning, inference, full-reference metrics and evaluation reports.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

pub mod config;
pub mod eval;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use prl_gqa::dataset::{
    self, build_pcgd_pmos, build_prld, pairs_for_sources, parse_pairs, prld_pairs, split_sources, GenOptions, Manifest,
    PairSample,
};
use prl_gqa::distortion::ImpulseMode;
use prl_gqa::geometry::{load_cloud_auto, save_cloud, CloudFormat, PointCloud, DEFAULT_NORMAL_NEIGHBORS};
use prl_gqa::gqanet::{IndexedCloud, NetOptions, PatchConfig};
use prl_gqa::metrics::{self, MetricKind, MetricOptions};
use prl_gqa::nn::{BlockSubset, ModelParams};
use prl_gqa::synth::synthetic_sources;
use prl_gqa::train::{self, Checkpointer, CloudStore, ScoredSample, TrainConfig};
use prl_gqa::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Final weights written into every run directory.
pub const MODEL_FILE: &str = "model.gqan";

#[derive(Debug, Parser)]
#[command(name = "prl-gqa", version, about = "Point cloud geometry quality assessment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic reference clouds as PLY files.
    #[command(args_override_self = true)]
    Synth(SynthArgs),
    /// Build the distorted dataset (35 versions per source) and its manifest.
    #[command(args_override_self = true)]
    Gen(GenArgs),
    /// Split a manifest by source and write train/test pair lists.
    #[command(args_override_self = true)]
    Pairs(PairsArgs),
    /// Train the network from ranked pairs.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Fine-tune trained weights on pseudo-MOS scores.
    #[command(args_override_self = true)]
    Finetune(FinetuneArgs),
    /// Decide which of two clouds has better quality.
    #[command(args_override_self = true)]
    Rank(RankArgs),
    /// Predict the quality index of one cloud.
    #[command(args_override_self = true)]
    Score(ScoreArgs),
    /// Compute one full-reference metric.
    #[command(args_override_self = true)]
    Frmetric(FrmetricArgs),
    /// Ranking accuracy, level monotonicity and pseudo-MOS correlation report.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 5000)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Directory of reference clouds (.ply or .xyz); the file stem is the source id.
    #[arg(long)]
    pub sources: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// zero-below, point-gate or clamp.
    #[arg(long, default_value = "zero-below")]
    pub impulse: ImpulseMode,
    /// Also score every distorted cloud and write pmos.tsv.
    #[arg(long)]
    pub pseudo_mos: bool,
    #[arg(long, default_value_t = DEFAULT_NORMAL_NEIGHBORS)]
    pub normal_k: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PairsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; defaults to the manifest's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Patch sampling and network options shared by training and inference.
#[derive(Debug, Clone, Args)]
pub struct PatchArgs {
    /// Number of patches per cloud [default: 64 for training, 112 for inference].
    #[arg(long)]
    pub patches: Option<usize>,
    #[arg(long, default_value_t = PatchConfig::POINTS)]
    pub points: usize,
    /// Fixed patch radius; by default derived from the cloud's mean edge length.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Use one whole-cloud patch instead of local patches.
    #[arg(long)]
    pub no_patch: bool,
    /// Average patch scores with equal weights.
    #[arg(long)]
    pub equal_weights: bool,
}

impl PatchArgs {
    fn config(&self, default_count: usize) -> PatchConfig {
        PatchConfig {
            count: self.patches.unwrap_or(default_count),
            points: self.points,
            radius: self.radius,
            whole_cloud: self.no_patch,
        }
    }

    fn net_options(&self) -> NetOptions {
        NetOptions {
            equal_weights: self.equal_weights,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainOptArgs {
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub lr: f64,
    /// The learning rate halves every this many epochs.
    #[arg(long, default_value_t = 2)]
    pub lr_period: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sample patches once instead of every epoch.
    #[arg(long)]
    pub freeze_patches: bool,
    #[command(flatten)]
    pub patch: PatchArgs,
    /// Directory that receives the run-<hash> directory.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl TrainOptArgs {
    fn train_config(&self, blocks: BlockSubset) -> TrainConfig {
        TrainConfig {
            batch: self.batch,
            epochs: self.epochs,
            lr: self.lr,
            lr_period: self.lr_period,
            patches: self.patch.config(PatchConfig::TRAIN_COUNT),
            seed: self.seed,
            equal_weights: self.patch.equal_weights,
            block_subset: blocks,
            resample: !self.freeze_patches,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Pair list (a, b, target, source_id, kind).
    #[arg(long)]
    pub pairs: PathBuf,
    /// Directory the pair paths are relative to; defaults to the pair file's directory.
    #[arg(long)]
    pub root: Option<PathBuf>,
    /// Feature blocks to use, e.g. "1,2,3,4" or "3".
    #[arg(long, default_value = "1,2,3,4")]
    pub blocks: BlockSubset,
    #[command(flatten)]
    pub opts: TrainOptArgs,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// Manifest with pseudo_mos scores.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    #[command(flatten)]
    pub opts: TrainOptArgs,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub patch: PatchArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    #[command(flatten)]
    pub infer: InferArgs,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    pub cloud: PathBuf,
    #[command(flatten)]
    pub infer: InferArgs,
}

#[derive(Debug, Args)]
pub struct FrmetricArgs {
    /// Metric name, e.g. po2pl_hausdorff.
    #[arg(long)]
    pub metric: MetricKind,
    pub reference: PathBuf,
    pub degraded: PathBuf,
    #[arg(long, default_value_t = DEFAULT_NORMAL_NEIGHBORS)]
    pub normal_k: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Pair list to score; defaults to every same-kind pair of the manifest.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Trained weights; adds the network as a row of the report.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Comma-separated metric names; defaults to all nine.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Vec<MetricKind>,
    #[arg(long, default_value_t = DEFAULT_NORMAL_NEIGHBORS)]
    pub normal_k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub patch: PatchArgs,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Core(_) => EXIT_DATA,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn create_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run(args: impl IntoIterator<Item = OsString>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let args: Vec<OsString> = args.into_iter().collect();
    let args = match config::expand(args) {
        Ok(a) => a,
        Err(m) => {
            let _ = writeln!(err, "error: {m}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write) -> CliResult {
    match command {
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Gen(a) => cmd_gen(&a, out),
        Command::Pairs(a) => cmd_pairs(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Finetune(a) => cmd_finetune(&a, out),
        Command::Rank(a) => cmd_rank(&a, out),
        Command::Score(a) => cmd_score(&a, out),
        Command::Frmetric(a) => cmd_frmetric(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> CliResult {
    out.write_all(text.as_bytes())
        .map_err(|e| io_err(Path::new("<stdout>"), e))
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> CliResult {
    if a.count == 0 || a.points < 2 {
        return Err(CliError::Usage("need --count >= 1 and --points >= 2".into()));
    }
    create_dir(&a.out)?;
    let sources = synthetic_sources(a.count, a.points, a.seed)?;
    for s in &sources {
        save_cloud(a.out.join(format!("{}.ply", s.id)), &s.cloud, CloudFormat::PlyAscii)?;
    }
    emit(
        out,
        &format!("wrote {} clouds to {} (seed {})\n", sources.len(), a.out.display(), a.seed),
    )
}

/// Reference clouds in a directory, sorted by file name, keyed by file stem.
pub fn load_sources(dir: &Path) -> CliResult<Vec<(String, PointCloud)>> {
    let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && matches!(
                    p.extension().and_then(|x| x.to_str()).map(str::to_ascii_lowercase).as_deref(),
                    Some("ply" | "xyz")
                )
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Core(Error::InvalidArgument(format!(
            "no .ply or .xyz files in {}",
            dir.display()
        ))));
    }
    let mut failures = Vec::new();
    let mut sources = Vec::new();
    for p in &paths {
        let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        match load_cloud_auto(p) {
            Ok(pc) => sources.push((id, pc)),
            Err(e) => failures.push(format!("{}: {e}", p.display())),
        }
    }
    if !failures.is_empty() {
        return Err(CliError::Core(Error::InvalidArgument(format!(
            "{} source file(s) failed to parse:\n  {}",
            failures.len(),
            failures.join("\n  ")
        ))));
    }
    Ok(sources)
}

pub fn cmd_gen(a: &GenArgs, out: &mut dyn Write) -> CliResult {
    let sources = load_sources(&a.sources)?;
    create_dir(&a.out)?;
    let opts = GenOptions {
        seed: a.seed,
        impulse: a.impulse,
    };
    let (manifest, pairs) = build_prld(&sources, &a.out, opts)?;
    let distorted = manifest.rows.iter().filter(|r| !r.is_pristine()).count();
    let mut msg = format!(
        "wrote {} distorted clouds for {} sources, {} pairs, manifest {} (seed {})\n",
        distorted,
        sources.len(),
        pairs.len(),
        a.out.join("manifest.tsv").display(),
        a.seed
    );
    if a.pseudo_mos {
        let (scored, errors) = build_pcgd_pmos(&manifest, &a.out, a.normal_k);
        for e in &errors {
            log::warn!("pseudo-MOS failed for {}: {}", e.path, e.error);
        }
        let path = a.out.join("pmos.tsv");
        scored.save(&path)?;
        let n = scored.rows.iter().filter(|r| r.pseudo_mos.is_some()).count();
        let _ = writeln!(msg, "wrote {n} pseudo-MOS rows to {} ({} failed)", path.display(), errors.len());
    }
    emit(out, &msg)
}

pub fn cmd_pairs(a: &PairsArgs, out: &mut dyn Write) -> CliResult {
    if !(0.0..=1.0).contains(&a.train_fraction) {
        return Err(CliError::Usage(format!("--train-fraction must be in [0, 1], got {}", a.train_fraction)));
    }
    let manifest = Manifest::load(&a.manifest)?;
    let out_dir = a.out.clone().unwrap_or_else(|| parent_dir(&a.manifest));
    create_dir(&out_dir)?;
    let pairs = prld_pairs(&manifest);
    let (train_ids, test_ids) = split_sources(&manifest.source_ids(), a.train_fraction, a.seed);
    let train_pairs = pairs_for_sources(&pairs, &train_ids);
    let test_pairs = pairs_for_sources(&pairs, &test_ids);
    let comment = format!("seed={} train_fraction={}", a.seed, a.train_fraction);
    write_file(&out_dir.join("train_pairs.tsv"), &dataset::pairs_to_tsv(&train_pairs, Some(&comment)))?;
    write_file(&out_dir.join("test_pairs.tsv"), &dataset::pairs_to_tsv(&test_pairs, Some(&comment)))?;
    let mut split = format!("#{comment}\n#source_id\tsplit\n");
    for id in &train_ids {
        let _ = writeln!(split, "{id}\ttrain");
    }
    for id in &test_ids {
        let _ = writeln!(split, "{id}\ttest");
    }
    write_file(&out_dir.join("split.tsv"), &split)?;
    emit(
        out,
        &format!(
            "train: {} sources, {} pairs; test: {} sources, {} pairs (seed {})\n",
            train_ids.len(),
            train_pairs.len(),
            test_ids.len(),
            test_pairs.len(),
            a.seed
        ),
    )
}

fn read_pairs(path: &Path) -> CliResult<Vec<PairSample>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(parse_pairs(&text)?)
}

fn finish_run(ckpt: &Checkpointer, params: &ModelParams, out: &mut dyn Write) -> CliResult {
    let path = ckpt.dir.join(MODEL_FILE);
    params.save(&path)?;
    emit(out, &format!("{}\n", path.display()))
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> CliResult {
    let cfg = a.opts.train_config(a.blocks);
    cfg.validate()?;
    let pairs = read_pairs(&a.pairs)?;
    let root = a.root.clone().unwrap_or_else(|| parent_dir(&a.pairs));
    let mut store = CloudStore::new(&root);
    store.load(pairs.iter().flat_map(|p| [p.a.as_str(), p.b.as_str()]))?;
    let ckpt = Checkpointer::for_config(&a.opts.out, &cfg)?;
    log::info!("training on {} pairs into {} (seed {})", pairs.len(), ckpt.dir.display(), cfg.seed);
    let result = train::train_rank(&pairs, &store, &cfg, Some(&ckpt))?;
    finish_run(&ckpt, &result.params, out)
}

pub fn cmd_finetune(a: &FinetuneArgs, out: &mut dyn Write) -> CliResult {
    let pretrained = ModelParams::load(&a.weights)?;
    let cfg = a.opts.train_config(pretrained.subset);
    cfg.validate()?;
    let manifest = Manifest::load(&a.manifest)?;
    let samples: Vec<ScoredSample> = manifest
        .rows
        .iter()
        .filter_map(|r| {
            r.pseudo_mos.map(|score| ScoredSample {
                path: r.path.clone(),
                score,
            })
        })
        .collect();
    if samples.is_empty() {
        return Err(CliError::Core(Error::InvalidArgument(format!(
            "{} has no pseudo_mos scores",
            a.manifest.display()
        ))));
    }
    let mut store = CloudStore::new(parent_dir(&a.manifest));
    store.load(samples.iter().map(|s| s.path.as_str()))?;
    let ckpt = Checkpointer::for_config(&a.opts.out, &cfg)?;
    log::info!("fine-tuning on {} scores into {} (seed {})", samples.len(), ckpt.dir.display(), cfg.seed);
    let result = train::finetune_scores(&samples, &store, pretrained, &cfg, Some(&ckpt))?;
    if !result.rejected.is_empty() {
        log::warn!("{} samples rejected for scores outside [0, 1]", result.rejected.len());
    }
    finish_run(&ckpt, &result.params, out)
}

fn load_indexed(path: &Path) -> CliResult<IndexedCloud> {
    let pc = load_cloud_auto(path)?;
    Ok(IndexedCloud::new(&pc)?)
}

pub fn cmd_rank(a: &RankArgs, out: &mut dyn Write) -> CliResult {
    let params = ModelParams::load(&a.infer.weights)?;
    let cfg = a.infer.patch.config(PatchConfig::TEST_COUNT);
    cfg.validate()?;
    let (ca, cb) = (load_indexed(&a.a)?, load_indexed(&a.b)?);
    log::info!("ranking with seed {}", a.infer.seed);
    let d = train::rank(&params, &ca, &cb, &cfg, a.infer.patch.net_options(), a.infer.seed)?;
    let winner = if d.a_better() { "A" } else { "B" };
    emit(out, &format!("{winner}\t{:.6}\n", d.probability))
}

pub fn cmd_score(a: &ScoreArgs, out: &mut dyn Write) -> CliResult {
    let params = ModelParams::load(&a.infer.weights)?;
    let cfg = a.infer.patch.config(PatchConfig::TEST_COUNT);
    cfg.validate()?;
    let cloud = load_indexed(&a.cloud)?;
    log::info!("scoring with seed {}", a.infer.seed);
    let s = train::predict(&params, &cloud, &cfg, a.infer.patch.net_options(), a.infer.seed)?;
    emit(out, &format!("{s:.6}\n"))
}

pub fn cmd_frmetric(a: &FrmetricArgs, out: &mut dyn Write) -> CliResult {
    let reference = load_cloud_auto(&a.reference)?;
    let degraded = load_cloud_auto(&a.degraded)?;
    let r = metrics::compute(a.metric, &reference, &degraded, MetricOptions { normal_k: a.normal_k })?;
    emit(out, &format!("{}\t{}\t{}\n", a.metric, r.value, r.orientation.name()))
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult {
    let manifest = Manifest::load(&a.manifest)?;
    let root = parent_dir(&a.manifest);
    let pairs = match &a.pairs {
        Some(p) => read_pairs(p)?,
        None => prld_pairs(&manifest),
    };
    let metrics = if a.metrics.is_empty() {
        MetricKind::ALL.to_vec()
    } else {
        a.metrics.clone()
    };
    let params = a.weights.as_deref().map(ModelParams::load).transpose()?;
    let patches = a.patch.config(PatchConfig::TEST_COUNT);
    patches.validate()?;
    let model = params.as_ref().map(|p| eval::Model {
        params: p,
        patches,
        opts: a.patch.net_options(),
    });
    let report = eval::report(&eval::EvalInput {
        manifest: &manifest,
        root: &root,
        pairs: &pairs,
        metrics: &metrics,
        normal_k: a.normal_k,
        model,
        seed: a.seed,
    })?;
    match &a.out {
        Some(path) => {
            write_file(path, &report)?;
            emit(out, &format!("{}\n", path.display()))
        }
        None => emit(out, &report),
    }
}
