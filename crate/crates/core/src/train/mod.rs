//! Desk-scale training: SpecAug, forward, CTC or CTC-CRF loss, backward,
//! clipped Adam steps on the warmup/decay schedule, validation with
//! plateau decay and early stop; plus greedy decoding and scoring.

mod decode;
mod optim;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use decode::{edit_distance, greedy_path, token_error_rate};
pub use optim::{clip_global_norm, Adam, AdamConfig};

use crate::augment::{spec_augment, AugmentError, SpecAugPolicy};
use crate::features::FeatureMatrix;
use crate::graphs::{build_ctc_topology, compose_denominator, GraphError, WeightedFsa};
use crate::labellm::{estimate_ngram, lm_to_fsa, LmError, NGramLabelLm};
use crate::loss::{Criterion, LossError, LossKind};
use crate::nn::{save_checkpoint, ConformerConfig, ConformerModel, Mat, NnError};
use crate::schedule::{ScheduleError, Scheduler, SchedulerConfig};
use crate::synthdata::{load_corpus, SynthError, Utterance};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("label {label} in {utt} is outside the model vocabulary of {vocab}")]
    VocabMismatch { utt: String, label: u32, vocab: usize },
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}, utterance {utt}")]
    NonFinite { epoch: usize, step: u64, utt: String, loss: f64 },
    #[error("utterance {utt}: {source}")]
    Utterance { utt: String, source: Box<TrainError> },
    #[error("scoring: {0}")]
    Score(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Data(#[from] SynthError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub train_dir: Option<PathBuf>,
    pub test_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub model: ConformerConfig,
    pub scheduler: SchedulerConfig,
    pub specaug: SpecAugPolicy,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub clip_norm: f64,
    /// Order of the label LM behind the CTC-CRF denominator.
    pub lm_order: usize,
    /// Share of the training corpus held out for validation.
    pub valid_fraction: f64,
    pub seed: u64,
    pub paths: DataPaths,
}

impl Default for TrainConfig {
    /// Micro Conformer (2 blocks, d_model 64) for the default synthetic corpus.
    fn default() -> Self {
        Self {
            loss: LossKind::CtcCrf,
            model: ConformerConfig {
                num_blocks: 2,
                d_model: 64,
                num_heads: 4,
                conv_kernel: 15,
                vocab_size_plus_blank: 6,
                input_dim: 20,
                ..ConformerConfig::default()
            },
            scheduler: SchedulerConfig {
                d_model: 64,
                warmup_steps: 400,
                peak_factor: 1.0,
                ..SchedulerConfig::default()
            },
            specaug: SpecAugPolicy::STANDARD,
            optimizer: AdamConfig::default(),
            batch_size: 8,
            max_epochs: 8,
            clip_norm: 5.0,
            lm_order: 4,
            valid_fraction: 0.05,
            seed: 1,
            paths: DataPaths::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        self.scheduler.validate()?;
        self.specaug.validate()?;
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(TrainError::Config("clip_norm must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.valid_fraction) {
            return Err(TrainError::Config(format!("valid_fraction {}", self.valid_fraction)));
        }
        if self.loss == LossKind::CtcCrf && !(1..=4).contains(&self.lm_order) {
            return Err(TrainError::Config(format!("lm_order {} outside 1..=4", self.lm_order)));
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.model.vocab_size_plus_blank - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub steps: u64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub scale: f64,
    pub decayed: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss of the freshly initialized model, without augmentation.
    pub initial_train_loss: f64,
    pub epochs: Vec<EpochReport>,
    /// `(step, lr)` for every optimizer step.
    pub lr_trace: Vec<(u64, f64)>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub best: ConformerModel,
    pub last: ConformerModel,
    pub report: TrainReport,
}

/// Training-time loss context: the denominator graph and LM for CTC-CRF.
pub struct LossSetup {
    pub kind: LossKind,
    pub lm: Option<NGramLabelLm>,
    pub den: Option<WeightedFsa>,
}

impl LossSetup {
    pub fn new(kind: LossKind, train: &[Utterance], vocab: usize, lm_order: usize) -> Result<Self, TrainError> {
        Ok(match kind {
            LossKind::Ctc => Self { kind, lm: None, den: None },
            LossKind::CtcCrf => {
                let seqs: Vec<Vec<u32>> = train.iter().map(|u| u.labels.clone()).collect();
                let lm = estimate_ngram(&seqs, lm_order, vocab)?;
                let den = compose_denominator(&build_ctc_topology(vocab)?, &lm_to_fsa(&lm))?;
                Self {
                    kind,
                    lm: Some(lm),
                    den: Some(den),
                }
            }
        })
    }

    pub fn criterion(&self) -> Criterion<'_> {
        match (&self.den, &self.lm) {
            (Some(den), Some(lm)) => Criterion::CtcCrf { den, lm },
            _ => Criterion::Ctc,
        }
    }
}

/// Holds out the trailing `fraction` of `utts` (at least one when non-zero).
pub fn split_validation(utts: &[Utterance], fraction: f64) -> (Vec<Utterance>, Vec<Utterance>) {
    let n_valid = if fraction > 0.0 {
        ((utts.len() as f64 * fraction).ceil() as usize).clamp(1, utts.len().saturating_sub(1))
    } else {
        0
    };
    let cut = utts.len() - n_valid;
    (utts[..cut].to_vec(), utts[cut..].to_vec())
}

fn item_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Loss and parameter gradient for one utterance.
fn item_gradient(
    model: &ConformerModel,
    crit: Criterion<'_>,
    feat: &FeatureMatrix,
    labels: &[u32],
    dropout_seed: Option<u64>,
) -> Result<(f64, Vec<Mat>), TrainError> {
    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let pass = model.forward(feat, rng.as_mut())?;
    let r = crit.compute(&pass.log_probs()?, labels)?;
    let mut grads = model.params.zeros_like();
    pass.backward(&r.grad, &mut grads)?;
    Ok((r.loss, grads))
}

/// Mean loss over `utts` without augmentation or dropout.
pub fn evaluate_loss(model: &ConformerModel, crit: Criterion<'_>, utts: &[Utterance]) -> Result<f64, TrainError> {
    let losses = utts
        .par_iter()
        .map(|u| {
            let lp = model.log_probs(&u.features)?;
            crit.compute(&lp, &u.labels).map_err(TrainError::from).map_err(|e| TrainError::Utterance {
                utt: u.id.clone(),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(losses.iter().map(|r| r.loss).sum::<f64>() / losses.len().max(1) as f64)
}

pub fn check_vocab(utts: &[Utterance], vocab: usize) -> Result<(), TrainError> {
    for u in utts {
        if let Some(&label) = u.labels.iter().find(|&&l| l as usize >= vocab) {
            return Err(TrainError::VocabMismatch {
                utt: u.id.clone(),
                label,
                vocab,
            });
        }
    }
    Ok(())
}

/// Trains until the scheduler's stop threshold or the epoch cap, calling
/// `on_epoch` after each validation pass.
pub fn train_loop(
    cfg: &TrainConfig,
    train: &[Utterance],
    valid: &[Utterance],
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(TrainError::Config("training and validation sets must be non-empty".into()));
    }
    let vocab = cfg.vocab_size();
    check_vocab(train, vocab)?;
    check_vocab(valid, vocab)?;
    let setup = LossSetup::new(cfg.loss, train, vocab, cfg.lm_order)?;
    let crit = setup.criterion();

    let mut model = ConformerModel::new(cfg.model.clone(), cfg.seed)?;
    let mut adam = Adam::new(cfg.optimizer, &model.params);
    let mut sched = Scheduler::new(cfg.scheduler)?;
    let mut report = TrainReport {
        initial_train_loss: evaluate_loss(&model, crit, train)?,
        best_val_loss: f64::INFINITY,
        ..TrainReport::default()
    };
    let mut best = model.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let use_dropout = cfg.model.dropout > 0.0;

    for epoch in 1..=cfg.max_epochs {
        let started = std::time::Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| {
                    let u = &train[i];
                    let seed = item_seed(cfg.seed, epoch, i);
                    let feat = if cfg.specaug.is_identity() {
                        u.features.clone()
                    } else {
                        spec_augment(&u.features, &cfg.specaug, seed)?
                    };
                    item_gradient(&model, crit, &feat, &u.labels, use_dropout.then_some(seed ^ 1)).map_err(|e| {
                        TrainError::Utterance {
                            utt: u.id.clone(),
                            source: Box::new(e),
                        }
                    })
                })
                .collect::<Result<Vec<_>, TrainError>>()?;
            let mut grads = model.params.zeros_like();
            for (&i, (loss, g)) in batch.iter().zip(&results) {
                if !loss.is_finite() {
                    return Err(TrainError::NonFinite {
                        epoch,
                        step: sched.step + 1,
                        utt: train[i].id.clone(),
                        loss: *loss,
                    });
                }
                loss_sum += loss;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.add_assign(gi);
                }
            }
            grads.iter_mut().for_each(|g| g.scale_assign(1.0 / batch.len() as f64));
            clip_global_norm(&mut grads, cfg.clip_norm);
            let lr = sched.advance();
            report.lr_trace.push((sched.step, lr));
            adam.step(&mut model.params, &grads, lr);
        }

        let val_loss = evaluate_loss(&model, crit, valid)?;
        let improved = val_loss < report.best_val_loss;
        let decayed = sched.on_validation(val_loss)?;
        if improved {
            report.best_val_loss = val_loss;
            report.best_epoch = epoch;
            best = model.clone();
        }
        let entry = EpochReport {
            epoch,
            steps: sched.step,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
            lr: sched.lr_at(sched.step.max(1))?,
            scale: sched.scale,
            decayed,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        report.epochs.push(entry);
        if sched.should_stop() {
            report.stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome {
        best,
        last: model,
        report,
    })
}

pub fn greedy_decode(model: &ConformerModel, feat: &FeatureMatrix) -> Result<Vec<u32>, TrainError> {
    Ok(greedy_path(&model.log_probs(feat)?))
}

/// Greedy-decodes every utterance and scores against its labels.
pub fn evaluate_ter(model: &ConformerModel, utts: &[Utterance]) -> Result<f64, TrainError> {
    let hyps = utts
        .par_iter()
        .map(|u| greedy_decode(model, &u.features))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<Vec<u32>> = utts.iter().map(|u| u.labels.clone()).collect();
    token_error_rate(&hyps, &refs)
}

/// Runs [`train_loop`] on corpora named in `cfg.paths`, writing
/// `report.jsonl`, `best.ckpt` and `last.ckpt` to the output directory.
pub fn run_from_paths(cfg: &TrainConfig) -> Result<TrainReport, TrainError> {
    let train_dir = cfg
        .paths
        .train_dir
        .as_ref()
        .ok_or_else(|| TrainError::Config("paths.train_dir is required".into()))?;
    let out_dir: &Path = cfg
        .paths
        .out_dir
        .as_deref()
        .ok_or_else(|| TrainError::Config("paths.out_dir is required".into()))?;
    let corpus = load_corpus(train_dir)?;
    let (train, valid) = split_validation(&corpus, cfg.valid_fraction);
    fs::create_dir_all(out_dir)?;
    let mut log = fs::File::create(out_dir.join("report.jsonl"))?;
    let mut write_err = None;
    let outcome = train_loop(cfg, &train, &valid, |e| {
        let line = serde_json::to_string(e).map(|s| writeln!(log, "{s}"));
        if let Err(err) = line.map_err(TrainError::from).and_then(|r| r.map_err(TrainError::from)) {
            write_err.get_or_insert(err);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    let mut summary = serde_json::json!({
        "summary": true,
        "initial_train_loss": outcome.report.initial_train_loss,
        "best_epoch": outcome.report.best_epoch,
        "best_val_loss": outcome.report.best_val_loss,
        "stopped_early": outcome.report.stopped_early,
    });
    if let Some(test_dir) = &cfg.paths.test_dir {
        let test = load_corpus(test_dir)?;
        summary["test_ter"] = serde_json::json!(evaluate_ter(&outcome.best, &test)?);
    }
    writeln!(log, "{summary}")?;
    let extra = serde_json::json!({ "loss": cfg.loss, "best_epoch": outcome.report.best_epoch });
    save_checkpoint(out_dir.join("best.ckpt"), &outcome.best, &extra)?;
    save_checkpoint(out_dir.join("last.ckpt"), &outcome.last, &extra)?;
    Ok(outcome.report)
}
