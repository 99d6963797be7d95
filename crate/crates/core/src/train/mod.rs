//! K-fold training with best-epoch selection, majority-vote ensembles and
//! accuracy reports.

mod ensemble;
mod report;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{split_folds, Corpus};
use crate::error::{Error, Result};
use crate::io;
use crate::model::{
    load_checkpoint, optimizer_for, save_checkpoint, ArchConfig, DocInput, ModelParams, Pretrained,
};
use crate::textpipe::Vocab;

pub use ensemble::{predict_ensemble, vote, Vote};
pub use report::{
    accuracy, coverage, evaluate, fold_stats, AlgoResult, Coverage, EnsembleReport, REPORT_COLUMNS,
};

/// Independent random streams per fold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 0,
    Shuffle = 1,
    Dropout = 2,
    Baseline = 3,
}

/// A generator determined by the master seed, the fold index and the purpose.
pub fn stream_rng(seed: u64, fold: usize, purpose: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(fold as u64 * 16 + purpose as u64);
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub folds: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Folds trained concurrently.
    pub jobs: usize,
    /// Where per-fold checkpoints and traces are written.
    pub checkpoint_dir: Option<PathBuf>,
    /// Reuse finished folds found in `checkpoint_dir`.
    pub resume: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            folds: 5,
            epochs: 20,
            seed: 0,
            jobs: 1,
            checkpoint_dir: None,
            resume: false,
        }
    }
}

/// Outcome of training one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_val: usize,
    /// Checkpoint file name, relative to the checkpoint directory.
    pub checkpoint: Option<PathBuf>,
    /// Mean training loss per epoch.
    pub loss_trace: Vec<f64>,
    /// Validation accuracy after each epoch.
    pub val_trace: Vec<f64>,
    /// 1-based epoch of the first maximum of `val_trace`.
    pub best_epoch: usize,
    pub test_accuracy: Option<f64>,
}

impl FoldResult {
    pub fn best_val_accuracy(&self) -> f64 {
        self.val_trace.get(self.best_epoch.wrapping_sub(1)).copied().unwrap_or(0.0)
    }
}

/// Index of the first maximum.
pub fn first_argmax(xs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in xs.iter().enumerate() {
        if best.is_none_or(|b| x > xs[b]) {
            best = Some(i);
        }
    }
    best
}

/// Progress events from [`train_cv`].
#[derive(Debug, Clone, Copy)]
pub struct EpochEvent {
    pub fold: usize,
    pub epoch: usize,
    pub loss: f64,
    pub val_accuracy: f64,
}

pub type Progress<'a> = &'a (dyn Fn(&EpochEvent) + Sync);

/// Models and traces of a cross-validation run. Folds that failed are listed
/// in `failures` and absent from `folds`/`models`.
pub struct CvRun {
    pub folds: Vec<FoldResult>,
    pub models: Vec<ModelParams<f32>>,
    pub failures: Vec<(usize, String)>,
}

impl CvRun {
    pub fn fold_accuracies(&self) -> Vec<f64> {
        self.folds
            .iter()
            .map(|f| f.test_accuracy.unwrap_or_else(|| f.best_val_accuracy()))
            .collect()
    }
}

/// Splits a training index list into batches of `size`; a trailing batch of
/// one document is merged into the previous one (train-mode batch norm needs
/// at least two rows).
pub fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size.max(1)).collect();
    if out.len() >= 2 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let n = out.len();
        let start = (n - 1) * size;
        out[n - 1] = &order[start..];
    }
    out
}

/// Accuracy of eval-mode predictions against document labels.
pub fn model_accuracy(model: &ModelParams<f32>, docs: &[DocInput]) -> Result<f64> {
    let probs = model.predict(docs)?;
    let mut correct = 0usize;
    for (d, p) in docs.iter().zip(&probs) {
        let y = d
            .label
            .ok_or_else(|| Error::Data(format!("document of {} has no label", d.user_id)))?;
        let pred = usize::from(p[1] > p[0]);
        correct += usize::from(pred == y);
    }
    Ok(correct as f64 / docs.len().max(1) as f64)
}

/// Trains one model on `train`, selecting the epoch with the best accuracy
/// on `val`.
#[allow(clippy::too_many_arguments)]
pub fn train_fold(
    fold: usize,
    train: &[DocInput],
    val: &[DocInput],
    vocab: &Vocab,
    pretrained: Option<&Pretrained>,
    arch: &ArchConfig,
    cfg: &TrainConfig,
    progress: Option<Progress<'_>>,
) -> Result<(FoldResult, ModelParams<f32>)> {
    if train.len() < 2 || val.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "fold {fold}: need at least 2 training and 1 validation documents"
        )));
    }
    if cfg.epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be positive".into()));
    }
    let init_seed = stream_rng(cfg.seed, fold, Stream::Init).next_u64();
    let mut model = ModelParams::<f32>::init(arch, vocab, pretrained, init_seed)?;
    let mut opt = optimizer_for(&model);
    let mut shuffle = stream_rng(cfg.seed, fold, Stream::Shuffle);
    let mut drop_rng = stream_rng(cfg.seed, fold, Stream::Dropout);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, ModelParams<f32>)> = None;
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    let mut val_trace = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        let bs = batches(&order, arch.batch_size);
        for b in &bs {
            let refs: Vec<&DocInput> = b.iter().map(|&i| &train[i]).collect();
            let loss = model
                .train_step(&refs, &mut opt, &mut drop_rng)
                .map_err(|e| Error::Data(format!("fold {fold}, epoch {epoch}: {e}")))?;
            total += loss;
        }
        let loss = total / bs.len() as f64;
        let acc = model_accuracy(&model, val)?;
        loss_trace.push(loss);
        val_trace.push(acc);
        if let Some(p) = progress {
            p(&EpochEvent {
                fold,
                epoch,
                loss,
                val_accuracy: acc,
            });
        }
        if best.as_ref().is_none_or(|(b, _)| acc > *b) {
            let mut snapshot = model.clone();
            snapshot.clear_grads();
            best = Some((acc, snapshot));
        }
    }
    let (_, best_model) = best.expect("at least one epoch");
    let best_epoch = first_argmax(&val_trace).expect("non-empty trace") + 1;
    Ok((
        FoldResult {
            fold,
            n_train: train.len(),
            n_val: val.len(),
            checkpoint: None,
            loss_trace,
            val_trace,
            best_epoch,
            test_accuracy: None,
        },
        best_model,
    ))
}

fn fold_paths(dir: &Path, fold: usize) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("fold{fold}.gfus")),
        dir.join(format!("fold{fold}.json")),
    )
}

fn try_resume(dir: &Path, fold: usize, arch: &ArchConfig, vocab: &Vocab) -> Option<(FoldResult, ModelParams<f32>)> {
    let (ckpt, meta) = fold_paths(dir, fold);
    let text = std::fs::read_to_string(&meta).ok()?;
    let result: FoldResult = serde_json::from_str(&text).ok()?;
    let model: ModelParams<f32> = load_checkpoint(&ckpt).ok()?;
    model.ensure_matches(arch, vocab.fingerprint()).ok()?;
    Some((result, model))
}

/// K-fold cross-validation: fold `i` validates on split `i` and trains on the
/// rest. `docs[j]` must be the document of `corpus.users()[j]`.
#[allow(clippy::too_many_arguments)]
pub fn train_cv(
    corpus: &Corpus,
    docs: &[DocInput],
    vocab: &Vocab,
    pretrained: Option<&Pretrained>,
    arch: &ArchConfig,
    cfg: &TrainConfig,
    test: Option<&[DocInput]>,
    progress: Option<Progress<'_>>,
) -> Result<CvRun> {
    if docs.len() != corpus.len() {
        return Err(Error::InvalidArgument(format!(
            "{} documents for {} users",
            docs.len(),
            corpus.len()
        )));
    }
    arch.validate()?;
    let splits = split_folds(corpus, cfg.folds, cfg.seed)?;
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let run_fold = |fold: usize| -> Result<(FoldResult, ModelParams<f32>)> {
        if let (true, Some(dir)) = (cfg.resume, &cfg.checkpoint_dir) {
            if let Some(done) = try_resume(dir, fold, arch, vocab) {
                return Ok(done);
            }
        }
        let val: Vec<DocInput> = splits[fold].iter().map(|&i| docs[i].clone()).collect();
        let train: Vec<DocInput> = splits
            .iter()
            .enumerate()
            .filter(|&(f, _)| f != fold)
            .flat_map(|(_, s)| s.iter().map(|&i| docs[i].clone()))
            .collect();
        let (mut result, model) = train_fold(fold, &train, &val, vocab, pretrained, arch, cfg, progress)?;
        if let Some(t) = test {
            result.test_accuracy = Some(model_accuracy(&model, t)?);
        }
        if let Some(dir) = &cfg.checkpoint_dir {
            let (ckpt, meta) = fold_paths(dir, fold);
            save_checkpoint(&model, &ckpt)?;
            result.checkpoint = ckpt.file_name().map(PathBuf::from);
            let json = serde_json::to_vec_pretty(&result).map_err(|e| Error::Format(e.to_string()))?;
            io::atomic_write(&meta, &json)?;
        }
        Ok((result, model))
    };
    let results: Vec<Result<(FoldResult, ModelParams<f32>)>> = if cfg.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        pool.install(|| (0..cfg.folds).into_par_iter().map(run_fold).collect())
    } else {
        (0..cfg.folds).map(run_fold).collect()
    };
    let mut run = CvRun {
        folds: Vec::new(),
        models: Vec::new(),
        failures: Vec::new(),
    };
    for (fold, r) in results.into_iter().enumerate() {
        match r {
            Ok((res, model)) => {
                run.folds.push(res);
                run.models.push(model);
            }
            Err(e) => run.failures.push((fold, e.to_string())),
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_first_on_ties() {
        assert_eq!(first_argmax(&[0.5, 0.9, 0.9, 0.1]), Some(1));
        assert_eq!(first_argmax(&[]), None);
        assert_eq!(first_argmax(&[0.3]), Some(0));
    }

    #[test]
    fn trailing_singleton_batch_merged() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.len(), 2);
        assert_eq!(b[1], &[4, 5, 6, 7, 8]);
        let b = batches(&order[..8], 4);
        assert_eq!(b.len(), 2);
        assert_eq!(batches(&order[..1], 4).len(), 1);
    }

    #[test]
    fn streams_differ() {
        let a = stream_rng(1, 0, Stream::Init).next_u64();
        let b = stream_rng(1, 1, Stream::Init).next_u64();
        let c = stream_rng(1, 0, Stream::Shuffle).next_u64();
        assert!(a != b && a != c);
        assert_eq!(a, stream_rng(1, 0, Stream::Init).next_u64());
    }
}
