//! Adam training with early stopping, k-fold cross-validation, random
//! hyperparameter search and checkpoints.

pub mod adam;
pub mod checkpoint;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{SampleClass, Segment, N_CLASSES};
use crate::delineate::argmax_decode;
use crate::eval::{roc_auc, ConfusionMatrix, EvalError, EvalReport};
use crate::nn::{cross_entropy, cross_entropy_grad, ArchConfig, Model, NnError, Tensor};

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("{0} is empty")]
    EmptySet(&'static str),
    #[error("segments in one batch differ in length ({0} vs {1})")]
    RaggedBatch(usize, usize),
    #[error("all {0} search trials failed")]
    AllTrialsFailed(usize),
    #[error("checkpoint checksum mismatch (truncated or corrupted file)")]
    Checksum,
    #[error("checkpoint format version {found}, this build reads {supported}")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("checkpoint does not match the architecture at {layer}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        layer: String,
        expected: Vec<usize>,
        found: Option<String>,
    },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// A validation loss must beat the best so far by more than this.
    pub min_delta: f64,
    pub seed: u64,
    /// Stop as soon as validation accuracy reaches this value, keeping the
    /// weights of that epoch.
    #[serde(default)]
    pub target_val_acc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 32,
            max_epochs: 100,
            patience: 3,
            min_delta: 0.0,
            seed: 0,
            target_val_acc: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(TrainError::Config(
                "batch size, epoch limit and patience must be at least 1".into(),
            ));
        }
        if !(self.min_delta >= 0.0) {
            return Err(TrainError::Config("min_delta must be non-negative".into()));
        }
        if self.target_val_acc.is_some_and(|a| !(0.0..=1.0).contains(&a)) {
            return Err(TrainError::Config("target_val_acc must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops once the monitored loss has not improved for `patience` epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    best_epoch: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: 0,
            wait: 0,
        }
    }

    /// Epochs are numbered from 1.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.best_epoch = epoch;
            self.wait = 0;
            return StopDecision::Improved;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,train_acc,val_loss,val_acc")?;
        for e in &self.epochs {
            writeln!(
                w,
                "{},{:.6},{:.6},{:.6},{:.6}",
                e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc
            )?;
        }
        Ok(())
    }
}

/// Stacks segments into `[B, T, 1]` inputs and flat class codes.
pub fn make_batch(segments: &[&Segment]) -> Result<(Tensor<f32>, Vec<u8>)> {
    let t = segments.first().map_or(0, |s| s.samples.len());
    let mut x = Vec::with_capacity(segments.len() * t);
    let mut y = Vec::with_capacity(segments.len() * t);
    for s in segments {
        if s.samples.len() != t || s.labels.len() != t {
            return Err(TrainError::RaggedBatch(t, s.samples.len().max(s.labels.len())));
        }
        x.extend_from_slice(&s.samples);
        y.extend(s.labels.iter().map(|c| c.code() as u8));
    }
    Ok((Tensor::from_vec(&[segments.len(), t, 1], x)?, y))
}

fn correct(probs: &Tensor<f32>, targets: &[u8]) -> usize {
    argmax_decode(probs)
        .iter()
        .zip(targets)
        .filter(|(p, &t)| p.code() == t as usize)
        .count()
}

/// Inference loss and accuracy over `segments`.
pub fn evaluate_loss(model: &Model<f32>, segments: &[&Segment], batch: usize) -> Result<(f64, f64)> {
    let (mut loss, mut hits, mut n) = (0.0, 0usize, 0usize);
    for chunk in segments.chunks(batch.max(1)) {
        let (x, y) = make_batch(chunk)?;
        let probs = model.predict(&x)?;
        loss += cross_entropy(&probs, &y)? * y.len() as f64;
        hits += correct(&probs, &y);
        n += y.len();
    }
    if n == 0 {
        return Ok((0.0, 0.0));
    }
    Ok((loss / n as f64, hits as f64 / n as f64))
}

/// Reference labels, predicted labels and class scores for `segments`.
pub struct Predictions {
    pub truth: Vec<SampleClass>,
    pub predicted: Vec<SampleClass>,
    /// `N_CLASSES` probabilities per sample.
    pub scores: Vec<f64>,
}

impl Predictions {
    pub fn new() -> Self {
        Self {
            truth: Vec::new(),
            predicted: Vec::new(),
            scores: Vec::new(),
        }
    }

    pub fn extend(&mut self, other: Predictions) {
        self.truth.extend(other.truth);
        self.predicted.extend(other.predicted);
        self.scores.extend(other.scores);
    }

    /// Confusion matrix, per-class metrics and ROC curves.
    pub fn report(&self) -> Result<EvalReport> {
        let cm = ConfusionMatrix::from_labels(&self.truth, &self.predicted)?;
        let mut rep = EvalReport::from_confusion(cm);
        rep.roc = Some(roc_auc(&self.truth, &self.scores)?);
        Ok(rep)
    }
}

impl Default for Predictions {
    fn default() -> Self {
        Self::new()
    }
}

pub fn predict_segments(model: &Model<f32>, segments: &[&Segment], batch: usize) -> Result<Predictions> {
    let mut out = Predictions::new();
    for chunk in segments.chunks(batch.max(1)) {
        let (x, _) = make_batch(chunk)?;
        let probs = model.predict(&x)?;
        out.predicted.extend(argmax_decode(&probs));
        out.scores.extend(probs.data().iter().map(|&v| v as f64));
        for s in chunk {
            out.truth.extend_from_slice(&s.labels);
        }
    }
    debug_assert_eq!(out.scores.len(), out.truth.len() * N_CLASSES);
    Ok(out)
}

/// Trains `model` in place and leaves it holding the weights of the epoch
/// with the lowest validation loss.
pub fn fit(model: &mut Model<f32>, train: &[&Segment], val: &[&Segment], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySet("training set"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySet("validation set"));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_d80f);
    let mut adam = AdamState::<f32>::new(model.named_tensors().iter().map(|(_, t)| t.len()));
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_delta);
    let mut best = model.clone();
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut hits, mut n) = (0.0, 0usize, 0usize);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Segment> = idx.iter().map(|&i| train[i]).collect();
            let (x, y) = make_batch(&batch)?;
            let cache = model.forward(&x, true, &mut dropout_rng)?;
            let loss = cross_entropy(&cache.probs, &y)?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    batch: bi,
                    loss,
                });
            }
            loss_sum += loss * y.len() as f64;
            hits += correct(&cache.probs, &y);
            n += y.len();
            let dl = cross_entropy_grad(&cache.probs, &y)?;
            let grads = model.backward(cache, &dl)?;
            adam.step(model.tensors_mut(), &grads.named_tensors(), &cfg.adam)?;
        }
        let (val_loss, val_acc) = evaluate_loss(model, val, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                batch: usize::MAX,
                loss: val_loss,
            });
        }
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / n as f64,
            train_acc: hits as f64 / n as f64,
            val_loss,
            val_acc,
        };
        log::info!(
            "epoch={} train_loss={:.5} train_acc={:.4} val_loss={:.5} val_acc={:.4}",
            epoch,
            stats.train_loss,
            stats.train_acc,
            val_loss,
            val_acc
        );
        epochs.push(stats);
        let decision = stopper.observe(epoch, val_loss);
        if cfg.target_val_acc.is_some_and(|a| val_acc >= a) {
            log::info!("validation accuracy target reached at epoch {epoch}");
            return Ok(TrainReport {
                stopped_epoch: epoch,
                best_epoch: epoch,
                best_val_loss: val_loss,
                epochs,
            });
        }
        match decision {
            StopDecision::Improved => best = model.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    *model = best;
    Ok(TrainReport {
        stopped_epoch: epochs.len(),
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best(),
        epochs,
    })
}

/// Per-fold models and reports plus the predictions of every validation
/// fold pooled into one evaluation.
pub struct CvOutcome {
    pub models: Vec<Model<f32>>,
    pub reports: Vec<TrainReport>,
    pub fold_confusion: Vec<ConfusionMatrix>,
    pub evaluation: EvalReport,
}

/// Seed for fold `k` (or search trial `k`) derived from the run seed.
pub fn derived_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add((k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Trains one model per fold on the remaining folds and validates on it.
pub fn run_cv(segments: &[Segment], folds: &[Vec<usize>], arch: &ArchConfig, cfg: &TrainConfig) -> Result<CvOutcome> {
    if folds.len() < 2 {
        return Err(TrainError::Config("cross-validation needs at least two folds".into()));
    }
    let mut models = Vec::new();
    let mut reports = Vec::new();
    let mut fold_confusion = Vec::new();
    let mut pooled = Predictions::new();
    for (k, val_idx) in folds.iter().enumerate() {
        let val: Vec<&Segment> = val_idx.iter().map(|&i| &segments[i]).collect();
        let train: Vec<&Segment> = folds
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != k)
            .flat_map(|(_, f)| f.iter().map(|&i| &segments[i]))
            .collect();
        let seed = derived_seed(cfg.seed, k);
        let fold_cfg = TrainConfig {
            seed,
            ..cfg.clone()
        };
        log::info!("fold={} train={} val={}", k + 1, train.len(), val.len());
        let mut model = Model::init(arch, seed)?;
        let report = fit(&mut model, &train, &val, &fold_cfg)?;
        let preds = predict_segments(&model, &val, cfg.batch_size)?;
        fold_confusion.push(ConfusionMatrix::from_labels(&preds.truth, &preds.predicted)?);
        pooled.extend(preds);
        models.push(model);
        reports.push(report);
    }
    Ok(CvOutcome {
        models,
        reports,
        fold_confusion,
        evaluation: pooled.report()?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    /// Sampled log-uniformly.
    pub alpha: (f64, f64),
    pub beta1: (f64, f64),
    pub beta2: (f64, f64),
    /// Sampled log-uniformly.
    pub epsilon: (f64, f64),
    pub n_trials: usize,
    pub seed: u64,
    /// Epoch budget of each trial.
    pub max_epochs: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            alpha: (1e-4, 1e-2),
            beta1: (0.8, 0.99),
            beta2: (0.99, 0.9999),
            epsilon: (1e-9, 1e-6),
            n_trials: 10,
            seed: 0,
            max_epochs: 5,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let range = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        let ok = self.n_trials >= 1
            && self.max_epochs >= 1
            && range(self.alpha)
            && range(self.epsilon)
            && self.alpha.0 > 0.0
            && self.epsilon.0 > 0.0
            && range(self.beta1)
            && range(self.beta2)
            && self.beta1.0 >= 0.0
            && self.beta1.1 < 1.0
            && self.beta2.0 >= 0.0
            && self.beta2.1 < 1.0;
        if ok {
            Ok(())
        } else {
            Err(TrainError::Config(format!("invalid search space {self:?}")))
        }
    }

    /// The trial configurations, a pure function of the space and seed.
    pub fn sample(&self) -> Vec<AdamConfig> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let log_uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
            if lo == hi {
                lo
            } else {
                (rng.gen_range(lo.ln()..hi.ln())).exp().clamp(lo, hi)
            }
        };
        let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if lo == hi { lo } else { rng.gen_range(lo..hi) };
        (0..self.n_trials)
            .map(|_| AdamConfig {
                alpha: log_uniform(&mut rng, self.alpha),
                beta1: uniform(&mut rng, self.beta1),
                beta2: uniform(&mut rng, self.beta2),
                epsilon: log_uniform(&mut rng, self.epsilon),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub adam: AdamConfig,
    pub best_val_loss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: TrainConfig,
    pub best_trial: usize,
    pub trials: Vec<Trial>,
}

/// Short-budget training for every sampled configuration, ranked by best
/// validation loss. Every trial starts from the same initial weights.
pub fn random_search(
    space: &SearchSpace,
    train: &[&Segment],
    val: &[&Segment],
    arch: &ArchConfig,
    base: &TrainConfig,
) -> Result<SearchResult> {
    space.validate()?;
    let init = Model::init(arch, base.seed)?;
    let mut trials = Vec::new();
    for (k, adam) in space.sample().into_iter().enumerate() {
        let cfg = TrainConfig {
            adam,
            max_epochs: space.max_epochs,
            ..base.clone()
        };
        let mut model = init.clone();
        let trial = match fit(&mut model, train, val, &cfg) {
            Ok(r) => Trial {
                adam,
                best_val_loss: Some(r.best_val_loss),
                error: None,
            },
            Err(e @ (TrainError::Diverged { .. } | TrainError::NonFiniteGradient(_))) => Trial {
                adam,
                best_val_loss: None,
                error: Some(e.to_string()),
            },
            Err(e) => return Err(e),
        };
        log::info!("trial={} alpha={:e} loss={:?}", k + 1, adam.alpha, trial.best_val_loss);
        trials.push(trial);
    }
    let best_trial = trials
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.best_val_loss.map(|l| (i, l)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .ok_or(TrainError::AllTrialsFailed(trials.len()))?;
    Ok(SearchResult {
        best: TrainConfig {
            adam: trials[best_trial].adam,
            ..base.clone()
        },
        best_trial,
        trials,
    })
}
