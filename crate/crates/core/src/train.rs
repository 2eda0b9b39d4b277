//! Siamese pairwise rank training, fine-tuning on absolute scores, and
//! prediction with a trained network.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::dataset::PairSample;
use crate::error::{Error, Result};
use crate::geometry::{load_cloud_auto, PointCloud};
use crate::gqanet::{self, IndexedCloud, NetOptions, PatchConfig, PatchSet};
use crate::nn::{scheduled_lr, Adam, BlockSubset, ModelParams};
use crate::seed;

/// Preference probability `e^(S_A-S_B) / (1 + e^(S_A-S_B))`.
pub fn rank_probability(s_a: f64, s_b: f64) -> f64 {
    crate::nn::sigmoid(s_a - s_b)
}

/// Binary cross-entropy of a predicted preference against its target.
pub fn rank_loss(p: f64, target: f64) -> f64 {
    let mut loss = 0.0;
    if target > 0.0 {
        loss -= target * p.ln();
    }
    if target < 1.0 {
        loss -= (1.0 - target) * (1.0 - p).ln();
    }
    loss
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Cross-entropy as a function of the score difference, without forming the
/// probability. Returns the loss and its derivative `P - target`.
pub fn rank_loss_from_difference(diff: f64, target: f64) -> (f64, f64) {
    let loss = target * softplus(-diff) + (1.0 - target) * softplus(diff);
    (loss, crate::nn::sigmoid(diff) - target)
}

/// Hyperparameters and ablation switches shared by rank training and fine-tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    /// The learning rate halves every this many epochs.
    pub lr_period: usize,
    pub patches: PatchConfig,
    pub seed: u64,
    pub equal_weights: bool,
    pub block_subset: BlockSubset,
    /// Draw fresh patches every epoch instead of fixing them once.
    pub resample: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 4,
            epochs: 20,
            lr: 1e-5,
            lr_period: 2,
            patches: PatchConfig::new(PatchConfig::TRAIN_COUNT, PatchConfig::POINTS),
            seed: 0,
            equal_weights: false,
            block_subset: BlockSubset::ALL,
            resample: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.lr_period == 0 {
            return Err(Error::InvalidArgument("lr period must be at least 1".into()));
        }
        self.patches.validate()
    }

    pub fn net_options(&self) -> NetOptions {
        NetOptions {
            equal_weights: self.equal_weights,
        }
    }

    /// Canonical `key=value` lines describing every setting.
    pub fn to_kv(&self) -> String {
        let radius = self.patches.radius.map_or_else(|| "auto".to_string(), |r| format!("{r}"));
        format!(
            "batch={}\nepochs={}\nlr={}\nlr_period={}\npatches={}\npoints={}\nradius={}\nno_patch={}\n\
             equal_weights={}\nblocks={}\nresample={}\nseed={}\n",
            self.batch,
            self.epochs,
            self.lr,
            self.lr_period,
            self.patches.count,
            self.patches.points,
            radius,
            self.patches.whole_cloud,
            self.equal_weights,
            self.block_subset,
            self.resample,
            self.seed
        )
    }

    /// First 16 hex digits of the SHA-256 of `to_kv`.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_kv().as_bytes());
        digest[..8].iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

/// Clouds referenced by pairs or scored rows, indexed once.
#[derive(Debug, Default)]
pub struct CloudStore {
    root: PathBuf,
    clouds: HashMap<String, IndexedCloud>,
}

impl CloudStore {
    /// Resolves names as paths relative to `root`.
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            clouds: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, pc: &PointCloud) -> Result<()> {
        let cloud = IndexedCloud::new(pc).map_err(|e| Error::Source {
            source_id: name.to_string(),
            inner: Box::new(e),
        })?;
        self.clouds.insert(name.to_string(), cloud);
        Ok(())
    }

    /// Loads every named cloud not yet present.
    pub fn load<'a>(&mut self, names: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for name in names {
            if !self.clouds.contains_key(name) {
                let pc = load_cloud_auto(&self.root.join(name))?;
                self.insert(name, &pc)?;
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&IndexedCloud> {
        self.clouds
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("cloud {name} is not loaded")))
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Fraction of pairs ordered correctly during the epoch (rank training only).
    pub pair_accuracy: Option<f64>,
    pub lr: f64,
}

impl EpochLog {
    pub fn to_line(&self) -> String {
        let acc = self.pair_accuracy.map_or_else(|| "-".to_string(), |a| format!("{a:.6}"));
        format!("{}\t{:.8}\t{}\t{}", self.epoch, self.mean_loss, acc, self.lr)
    }
}

pub const LOG_HEADER: &str = "#epoch\tmean_loss\tpair_accuracy\tlr";

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
}

/// Writes per-epoch weights, sidecar metadata and the running log into a run directory.
#[derive(Debug, Clone)]
pub struct Checkpointer {
    pub dir: PathBuf,
}

impl Checkpointer {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    /// Run directory named by the configuration hash under `base`.
    pub fn for_config(base: &Path, config: &TrainConfig) -> Result<Self> {
        Self::new(base.join(format!("run-{}", config.hash())))
    }

    pub fn weights_path(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("epoch_{epoch:03}.gqan"))
    }

    fn write(&self, params: &ModelParams, config: &TrainConfig, log: &[EpochLog]) -> Result<()> {
        let last = log.last().expect("checkpoint after an epoch");
        params.save(&self.weights_path(last.epoch))?;
        let meta = format!(
            "epoch={}\nlr={}\nseed={}\nconfig_hash={}\n",
            last.epoch,
            last.lr,
            config.seed,
            config.hash()
        );
        let meta_path = self.dir.join(format!("epoch_{:03}.meta", last.epoch));
        fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))?;
        let mut text = String::from(LOG_HEADER);
        text.push('\n');
        for l in log {
            text.push_str(&l.to_line());
            text.push('\n');
        }
        let log_path = self.dir.join("train.log");
        fs::write(&log_path, text).map_err(|e| Error::io(&log_path, e))?;
        let cfg_path = self.dir.join("config.txt");
        fs::write(&cfg_path, config.to_kv()).map_err(|e| Error::io(&cfg_path, e))
    }
}

/// Patch sets for the two members of a pair. The member that supplies the
/// centers is chosen by a coin keyed on the unordered pair, so presenting a
/// pair in either orientation yields the same patches.
pub fn pair_patch_sets(
    a_name: &str,
    a: &IndexedCloud,
    b_name: &str,
    b: &IndexedCloud,
    cfg: &PatchConfig,
    seed: u64,
) -> Result<(PatchSet, PatchSet)> {
    let (lo, hi) = if a_name <= b_name { (a_name, b_name) } else { (b_name, a_name) };
    let key = seed::derive(seed, &[seed::tag(lo), seed::tag(hi)]);
    let a_first = (a_name <= b_name) == (key & 1 == 0);
    if a_first {
        gqanet::sample_paired(a, b, cfg, key)
    } else {
        let (pb, pa) = gqanet::sample_paired(b, a, cfg, key)?;
        Ok((pa, pb))
    }
}

/// Outcome of one pair's siamese forward and backward pass.
#[derive(Debug, Clone, Copy)]
pub struct PairStep {
    pub s_a: f64,
    pub s_b: f64,
    pub probability: f64,
    pub loss: f64,
}

/// Forward both members through the same parameters and accumulate
/// `weight * dL/dtheta` into `grads`.
pub fn pair_step(
    params: &ModelParams,
    a: &PatchSet,
    b: &PatchSet,
    target: f64,
    opts: NetOptions,
    weight: f64,
    grads: &mut ModelParams,
) -> Result<PairStep> {
    let (xa, na) = gqanet::patch_input(&a.patches, a.scale)?;
    let (xb, nb) = gqanet::patch_input(&b.patches, b.scale)?;
    let fa = gqanet::forward(params, xa, na, opts)?;
    let fb = gqanet::forward(params, xb, nb, opts)?;
    let diff = fa.score - fb.score;
    let (loss, d_diff) = rank_loss_from_difference(diff, target);
    gqanet::backward(params, &fa, weight * d_diff, grads);
    gqanet::backward(params, &fb, -weight * d_diff, grads);
    Ok(PairStep {
        s_a: fa.score,
        s_b: fb.score,
        probability: rank_probability(fa.score, fb.score),
        loss,
    })
}

fn patch_seed(config: &TrainConfig, epoch: usize, item: usize) -> u64 {
    let epoch_key = if config.resample { epoch as u64 } else { 0 };
    seed::derive(config.seed, &[seed::tag("patches"), epoch_key, item as u64])
}

fn shuffled(count: usize, config: &TrainConfig, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut seed::rng(seed::derive(config.seed, &[seed::tag("shuffle"), epoch as u64])));
    order
}

/// Trains a fresh network on ranked pairs.
pub fn train_rank(
    pairs: &[PairSample],
    store: &CloudStore,
    config: &TrainConfig,
    checkpoint: Option<&Checkpointer>,
) -> Result<TrainOutput> {
    let init = ModelParams::init(config.block_subset, seed::derive(config.seed, &[seed::tag("init")]));
    train_rank_from(init, pairs, store, config, checkpoint)
}

/// Continues rank training from given parameters.
pub fn train_rank_from(
    mut params: ModelParams,
    pairs: &[PairSample],
    store: &CloudStore,
    config: &TrainConfig,
    checkpoint: Option<&Checkpointer>,
) -> Result<TrainOutput> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no training pairs".into()));
    }
    for p in pairs {
        store.get(&p.a)?;
        store.get(&p.b)?;
    }
    let opts = config.net_options();
    let mut adam = Adam::new(&params, config.lr);
    let mut log = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        adam.lr = scheduled_lr(config.lr, epoch, config.lr_period);
        let order = shuffled(pairs.len(), config, epoch);
        let (mut loss_sum, mut correct, mut decided) = (0.0, 0usize, 0usize);
        for batch in order.chunks(config.batch) {
            let mut grads = params.zeros_like();
            let weight = 1.0 / batch.len() as f64;
            for &i in batch {
                let p = &pairs[i];
                let (sa, sb) = pair_patch_sets(
                    &p.a,
                    store.get(&p.a)?,
                    &p.b,
                    store.get(&p.b)?,
                    &config.patches,
                    patch_seed(config, epoch, i),
                )?;
                let r = pair_step(&params, &sa, &sb, p.target, opts, weight, &mut grads)?;
                if !r.loss.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("rank loss for pair ({}, {}) at epoch {epoch}, step {step}", p.a, p.b),
                    });
                }
                loss_sum += r.loss;
                if p.target != 0.5 {
                    decided += 1;
                    if (r.probability > 0.5) == (p.target > 0.5) {
                        correct += 1;
                    }
                }
            }
            adam.step(&mut params, &grads).map_err(|e| match e {
                Error::NonFinite { context } => Error::NonFinite {
                    context: format!("{context} at epoch {epoch}, step {step}"),
                },
                other => other,
            })?;
            step += 1;
        }
        let entry = EpochLog {
            epoch,
            mean_loss: loss_sum / pairs.len() as f64,
            pair_accuracy: Some(if decided == 0 { 0.0 } else { correct as f64 / decided as f64 }),
            lr: adam.lr,
        };
        log::info!("{}", entry.to_line());
        log.push(entry);
        if let Some(c) = checkpoint {
            c.write(&params, config, &log)?;
        }
    }
    Ok(TrainOutput { params, log })
}

/// A cloud with its target absolute quality in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSample {
    pub path: String,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutput {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    /// Samples refused because their score lies outside `[0, 1]`.
    pub rejected: Vec<ScoredSample>,
}

/// Mean squared error between targets and predictions.
pub fn mse_loss(targets: &[f64], predictions: &[f64]) -> f64 {
    let n = targets.len() as f64;
    targets.iter().zip(predictions).map(|(y, p)| (y - p).powi(2)).sum::<f64>() / n
}

/// Fine-tunes pretrained parameters to regress absolute scores.
pub fn finetune_scores(
    samples: &[ScoredSample],
    store: &CloudStore,
    pretrained: ModelParams,
    config: &TrainConfig,
    checkpoint: Option<&Checkpointer>,
) -> Result<FinetuneOutput> {
    config.validate()?;
    let (usable, rejected): (Vec<ScoredSample>, Vec<ScoredSample>) = samples
        .iter()
        .cloned()
        .partition(|s| (0.0..=1.0).contains(&s.score));
    for r in &rejected {
        log::warn!("rejecting {}: score {} outside [0, 1]", r.path, r.score);
    }
    if usable.is_empty() {
        return Err(Error::InvalidArgument("no scored samples with scores in [0, 1]".into()));
    }
    for s in &usable {
        store.get(&s.path)?;
    }
    let opts = config.net_options();
    let mut params = pretrained;
    let mut adam = Adam::new(&params, config.lr);
    let mut log = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        adam.lr = scheduled_lr(config.lr, epoch, config.lr_period);
        let order = shuffled(usable.len(), config, epoch);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch) {
            let mut grads = params.zeros_like();
            let m = batch.len() as f64;
            for &i in batch {
                let s = &usable[i];
                let set = gqanet::sample_patches(store.get(&s.path)?, &config.patches, patch_seed(config, epoch, i))?;
                let (x, n) = gqanet::patch_input(&set.patches, set.scale)?;
                let f = gqanet::forward(&params, x, n, opts)?;
                let err = f.score - s.score;
                if !err.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("prediction for {} at epoch {epoch}, step {step}", s.path),
                    });
                }
                loss_sum += err * err;
                gqanet::backward(&params, &f, 2.0 * err / m, &mut grads);
            }
            adam.step(&mut params, &grads)?;
            step += 1;
        }
        let entry = EpochLog {
            epoch,
            mean_loss: loss_sum / usable.len() as f64,
            pair_accuracy: None,
            lr: adam.lr,
        };
        log::info!("{}", entry.to_line());
        log.push(entry);
        if let Some(c) = checkpoint {
            c.write(&params, config, &log)?;
        }
    }
    Ok(FinetuneOutput { params, log, rejected })
}

/// Quality index of a single cloud from self-sampled patches.
pub fn predict(params: &ModelParams, cloud: &IndexedCloud, cfg: &PatchConfig, opts: NetOptions, seed: u64) -> Result<f64> {
    let set = gqanet::sample_patches(cloud, cfg, seed)?;
    Ok(gqanet::quality_index(params, &set, opts)?.0)
}

/// Siamese comparison of two clouds with corresponding patches centered on `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankDecision {
    pub s_a: f64,
    pub s_b: f64,
    pub probability: f64,
}

impl RankDecision {
    pub fn a_better(&self) -> bool {
        self.probability > 0.5
    }
}

pub fn rank(
    params: &ModelParams,
    a: &IndexedCloud,
    b: &IndexedCloud,
    cfg: &PatchConfig,
    opts: NetOptions,
    seed: u64,
) -> Result<RankDecision> {
    let (pa, pb) = gqanet::sample_paired(a, b, cfg, seed)?;
    let (s_a, _) = gqanet::quality_index(params, &pa, opts)?;
    let (s_b, _) = gqanet::quality_index(params, &pb, opts)?;
    Ok(RankDecision {
        s_a,
        s_b,
        probability: rank_probability(s_a, s_b),
    })
}

/// Ranks every pair (centers on its first member) and reports each decision.
pub fn evaluate_pairs(
    params: &ModelParams,
    pairs: &[PairSample],
    store: &CloudStore,
    cfg: &PatchConfig,
    opts: NetOptions,
    seed: u64,
) -> Result<Vec<RankDecision>> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            rank(
                params,
                store.get(&p.a)?,
                store.get(&p.b)?,
                cfg,
                opts,
                seed::derive(seed, &[i as u64]),
            )
        })
        .collect()
}
