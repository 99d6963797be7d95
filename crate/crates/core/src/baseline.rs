//! TF-IDF features with linear classifiers (logistic regression and a
//! linear SVM) under the same fold and voting protocol as the CNN.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{split_folds, Corpus, Gender, GenderPrediction};
use crate::error::{Error, Result};
use crate::io;
use crate::textpipe::process_tweet;
use crate::train::{stream_rng, vote, Stream};

/// Sparse row: (column, value) pairs with strictly increasing columns.
pub type SparseVec = Vec<(u32, f64)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TfidfConfig {
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub min_df: usize,
    pub sublinear_tf: bool,
}

impl Default for TfidfConfig {
    fn default() -> Self {
        TfidfConfig {
            ngram_min: 1,
            ngram_max: 2,
            min_df: 2,
            sublinear_tf: true,
        }
    }
}

impl TfidfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ngram_min == 0 || self.ngram_max < self.ngram_min {
            return Err(Error::InvalidArgument(format!(
                "bad n-gram range {}..={}",
                self.ngram_min, self.ngram_max
            )));
        }
        if self.min_df == 0 {
            return Err(Error::InvalidArgument("min_df must be at least 1".into()));
        }
        Ok(())
    }
}

/// Word n-grams of every length in the configured range, joined by a space.
pub fn ngrams<S: AsRef<str>>(tokens: &[S], min: usize, max: usize) -> Vec<String> {
    let mut out = Vec::new();
    for n in min..=max {
        for w in tokens.windows(n) {
            let parts: Vec<&str> = w.iter().map(AsRef::as_ref).collect();
            out.push(parts.join(" "));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TfidfModel {
    pub config: TfidfConfig,
    /// Terms in column order (sorted).
    pub terms: Vec<String>,
    pub idf: Vec<f64>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl TfidfModel {
    fn from_parts(config: TfidfConfig, terms: Vec<String>, idf: Vec<f64>) -> Result<Self> {
        if terms.len() != idf.len() {
            return Err(Error::Format(format!("{} terms but {} idf weights", terms.len(), idf.len())));
        }
        if let Some(w) = idf.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::Format(format!("idf weight {w} is not positive and finite")));
        }
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Ok(TfidfModel {
            config,
            terms,
            idf,
            index,
        })
    }

    pub fn n_columns(&self) -> usize {
        self.terms.len()
    }

    pub fn column(&self, term: &str) -> Option<u32> {
        self.index.get(term).copied()
    }

    /// L2-normalized TF-IDF row; unseen n-grams are ignored.
    pub fn transform<S: AsRef<str>>(&self, doc: &[S]) -> SparseVec {
        let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
        for g in ngrams(doc, self.config.ngram_min, self.config.ngram_max) {
            if let Some(c) = self.column(&g) {
                *counts.entry(c).or_default() += 1.0;
            }
        }
        let mut row: SparseVec = counts
            .into_iter()
            .map(|(c, n)| {
                let tf = if self.config.sublinear_tf { 1.0 + n.ln() } else { n };
                (c, tf * self.idf[c as usize])
            })
            .collect();
        let norm = row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, v) in &mut row {
                *v /= norm;
            }
        }
        row
    }
}

/// Fits vocabulary and idf weights: idf(t) = ln((1 + N) / (1 + df)) + 1.
pub fn fit_tfidf<D: AsRef<[S]>, S: AsRef<str>>(docs: &[D], config: &TfidfConfig) -> Result<TfidfModel> {
    config.validate()?;
    if docs.is_empty() {
        return Err(Error::InvalidArgument("no documents to fit TF-IDF on".into()));
    }
    let mut df: HashMap<String, usize> = HashMap::new();
    for d in docs {
        let uniq: HashSet<String> = ngrams(d.as_ref(), config.ngram_min, config.ngram_max).into_iter().collect();
        for g in uniq {
            *df.entry(g).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = df.into_iter().filter(|(_, n)| *n >= config.min_df).collect();
    if kept.is_empty() {
        return Err(Error::Data(format!(
            "TF-IDF vocabulary is empty with min_df {}; lower min_df",
            config.min_df
        )));
    }
    kept.sort_unstable();
    let n = docs.len() as f64;
    let idf = kept.iter().map(|(_, d)| ((1.0 + n) / (1.0 + *d as f64)).ln() + 1.0).collect();
    let terms = kept.into_iter().map(|(t, _)| t).collect();
    TfidfModel::from_parts(*config, terms, idf)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Logistic,
    Hinge,
}

/// Baseline algorithm, named as in the report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algo {
    #[serde(rename = "lr")]
    Lr,
    #[serde(rename = "svm")]
    Svm,
}

impl Algo {
    pub fn loss(self) -> LossKind {
        match self {
            Algo::Lr => LossKind::Logistic,
            Algo::Svm => LossKind::Hinge,
        }
    }

    pub fn report_name(self) -> &'static str {
        match self {
            Algo::Lr => "LR",
            Algo::Svm => "SVM",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.report_name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lr" | "logistic" => Ok(Algo::Lr),
            "svm" | "hinge" => Ok(Algo::Svm),
            _ => Err(Error::InvalidArgument(format!("unknown baseline {s:?} (lr, svm)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearConfig {
    /// Ridge strength λ in mean loss + λ‖w‖².
    pub lambda: f64,
    pub epochs: usize,
    /// Initial step; the step at update t is lr / (1 + lr·λ·t), capped at 1/(4λ).
    pub lr: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            lambda: 1e-4,
            epochs: 20,
            lr: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub loss: LossKind,
    pub lambda: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(w: &[f64], x: &[(u32, f64)]) -> f64 {
    x.iter().map(|&(c, v)| w[c as usize] * v).sum()
}

/// Derivative of the loss with respect to the margin score, for label y in {-1, 1}.
pub fn loss_slope(kind: LossKind, y: f64, score: f64) -> f64 {
    let m = y * score;
    match kind {
        LossKind::Logistic => -y * sigmoid(-m),
        LossKind::Hinge => {
            if m < 1.0 {
                -y
            } else {
                0.0
            }
        }
    }
}

impl LinearModel {
    pub fn score(&self, x: &[(u32, f64)]) -> f64 {
        dot(&self.w, x) + self.b
    }

    /// Class probabilities (female, male). For the hinge model the sigmoid of
    /// the score serves as a monotone confidence.
    pub fn predict_proba(&self, x: &[(u32, f64)]) -> [f64; 2] {
        let p = sigmoid(self.score(x));
        [1.0 - p, p]
    }

    pub fn norm(&self) -> f64 {
        self.w.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

/// Plain SGD over shuffled rows. The weight vector is stored as scale·v so
/// the ridge shrinkage costs O(1) per update.
pub fn fit_linear(
    x: &[SparseVec],
    labels: &[Gender],
    n_columns: usize,
    kind: LossKind,
    cfg: &LinearConfig,
    rng: &mut impl rand::Rng,
) -> Result<LinearModel> {
    if x.len() != labels.len() {
        return Err(Error::InvalidArgument(format!("{} rows for {} labels", x.len(), labels.len())));
    }
    if !(labels.contains(&Gender::Female) && labels.contains(&Gender::Male)) {
        return Err(Error::Data("linear model needs both classes in its training data".into()));
    }
    if !(cfg.lambda >= 0.0 && cfg.lr > 0.0) {
        return Err(Error::InvalidArgument("lambda must be >= 0 and lr > 0".into()));
    }
    let mut v = vec![0.0; n_columns];
    let mut scale = 1.0f64;
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..x.len()).collect();
    let cap = if cfg.lambda > 0.0 { 1.0 / (4.0 * cfg.lambda) } else { f64::INFINITY };
    let mut t = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for &i in &order {
            let eta = (cfg.lr / (1.0 + cfg.lr * cfg.lambda * t as f64)).min(cap);
            t += 1;
            let y = if labels[i] == Gender::Male { 1.0 } else { -1.0 };
            let score = scale * dot(&v, &x[i]) + b;
            let g = loss_slope(kind, y, score);
            scale *= 1.0 - 2.0 * eta * cfg.lambda;
            if g != 0.0 {
                for &(c, val) in &x[i] {
                    v[c as usize] -= eta * g * val / scale;
                }
                b -= eta * g;
            }
            if scale < 1e-9 {
                for w in &mut v {
                    *w *= scale;
                }
                scale = 1.0;
            }
        }
    }
    let w: Vec<f64> = v.into_iter().map(|x| x * scale).collect();
    if let Some(j) = w.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("linear weight {j}")));
    }
    Ok(LinearModel {
        w,
        b,
        loss: kind,
        lambda: cfg.lambda,
    })
}

/// Normalized, tokenized tweets of each author, concatenated.
pub fn token_lists(corpus: &Corpus) -> Vec<Vec<String>> {
    corpus
        .users()
        .iter()
        .map(|u| u.tweets.iter().flat_map(|t| process_tweet(t).0).collect())
        .collect()
}

/// A fitted fold: features and classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel {
    pub tfidf: TfidfModel,
    pub linear: LinearModel,
}

impl BaselineModel {
    pub fn predict_proba<S: AsRef<str>>(&self, doc: &[S]) -> [f64; 2] {
        self.linear.predict_proba(&self.tfidf.transform(doc))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineFold {
    pub fold: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_columns: usize,
    pub val_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

pub struct BaselineRun {
    pub algo: Algo,
    pub folds: Vec<BaselineFold>,
    pub models: Vec<BaselineModel>,
}

fn accuracy_of<D: AsRef<[S]>, S: AsRef<str>>(m: &BaselineModel, docs: &[D], labels: &[Gender]) -> f64 {
    let correct = docs
        .iter()
        .zip(labels)
        .filter(|(d, &g)| {
            let p = m.predict_proba(d.as_ref());
            Gender::from_index(usize::from(p[1] > p[0])) == Some(g)
        })
        .count();
    correct as f64 / docs.len().max(1) as f64
}

/// Fits one model per fold on the other folds; TF-IDF statistics come from
/// the training portion only.
#[allow(clippy::too_many_arguments)]
pub fn baseline_cv(
    corpus: &Corpus,
    docs: &[Vec<String>],
    algo: Algo,
    folds: usize,
    seed: u64,
    tfidf: &TfidfConfig,
    linear: &LinearConfig,
    test: Option<(&[Vec<String>], &[Gender])>,
) -> Result<BaselineRun> {
    if docs.len() != corpus.len() {
        return Err(Error::InvalidArgument(format!(
            "{} documents for {} users",
            docs.len(),
            corpus.len()
        )));
    }
    let labels = corpus.labels()?;
    let splits = split_folds(corpus, folds, seed)?;
    let mut run = BaselineRun {
        algo,
        folds: Vec::new(),
        models: Vec::new(),
    };
    for (fold, val_idx) in splits.iter().enumerate() {
        let train_idx: Vec<usize> = splits
            .iter()
            .enumerate()
            .filter(|&(f, _)| f != fold)
            .flat_map(|(_, s)| s.iter().copied())
            .collect();
        let train_docs: Vec<&[String]> = train_idx.iter().map(|&i| docs[i].as_slice()).collect();
        let tf = fit_tfidf(&train_docs, tfidf)
            .map_err(|e| Error::Data(format!("fold {fold}: {e}")))?;
        let x: Vec<SparseVec> = train_docs.iter().map(|d| tf.transform(d)).collect();
        let y: Vec<Gender> = train_idx.iter().map(|&i| labels[i]).collect();
        let mut rng = stream_rng(seed, fold, Stream::Baseline);
        let lin = fit_linear(&x, &y, tf.n_columns(), algo.loss(), linear, &mut rng)
            .map_err(|e| Error::Data(format!("fold {fold}: {e}")))?;
        let model = BaselineModel { tfidf: tf, linear: lin };
        let val_docs: Vec<&[String]> = val_idx.iter().map(|&i| docs[i].as_slice()).collect();
        let val_labels: Vec<Gender> = val_idx.iter().map(|&i| labels[i]).collect();
        run.folds.push(BaselineFold {
            fold,
            n_train: train_idx.len(),
            n_val: val_idx.len(),
            n_columns: model.tfidf.n_columns(),
            val_accuracy: accuracy_of(&model, &val_docs, &val_labels),
            test_accuracy: test.map(|(d, l)| accuracy_of(&model, d, l)),
        });
        run.models.push(model);
    }
    Ok(run)
}

/// Majority vote of fold models, in the same form as the CNN ensemble.
pub fn predict_baseline_ensemble<D: AsRef<[S]>, S: AsRef<str>>(
    models: &[BaselineModel],
    user_ids: &[String],
    docs: &[D],
) -> Result<Vec<GenderPrediction>> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("no baseline models".into()));
    }
    if user_ids.len() != docs.len() {
        return Err(Error::InvalidArgument(format!("{} ids for {} documents", user_ids.len(), docs.len())));
    }
    Ok(user_ids
        .iter()
        .zip(docs)
        .map(|(id, d)| {
            let probs: Vec<[f64; 2]> = models.iter().map(|m| m.predict_proba(d.as_ref())).collect();
            let v = vote(&probs);
            GenderPrediction::new(id.clone(), Gender::from_index(v.class).expect("binary class"), v.fold_probs)
        })
        .collect())
}

const MAGIC: &[u8; 4] = b"GFLB";
pub const BASELINE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    tfidf: TfidfConfig,
    terms: Vec<String>,
    loss: LossKind,
    lambda: f64,
    n_columns: usize,
    nnz: usize,
}

/// Magic `GFLB`, u32 version, u32 header length, JSON header, then
/// little-endian f64 idf weights, the f64 bias and `nnz` (u32 column, f64
/// weight) pairs.
pub fn encode_baseline(m: &BaselineModel) -> Result<Vec<u8>> {
    let nz: Vec<(u32, f64)> = m
        .linear
        .w
        .iter()
        .enumerate()
        .filter(|(_, w)| **w != 0.0)
        .map(|(i, &w)| (i as u32, w))
        .collect();
    let header = Header {
        tfidf: m.tfidf.config,
        terms: m.tfidf.terms.clone(),
        loss: m.linear.loss,
        lambda: m.linear.lambda,
        n_columns: m.linear.w.len(),
        nnz: nz.len(),
    };
    let h = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(12 + h.len() + 8 * (header.n_columns + 1) + 12 * nz.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&BASELINE_VERSION.to_le_bytes());
    out.extend_from_slice(&(h.len() as u32).to_le_bytes());
    out.extend_from_slice(&h);
    for x in m.tfidf.idf.iter().chain([&m.linear.b]) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for (c, w) in nz {
        out.extend_from_slice(&c.to_le_bytes());
        out.extend_from_slice(&w.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_baseline(bytes: &[u8]) -> Result<BaselineModel> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a baseline model file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != BASELINE_VERSION {
        return Err(Error::Version {
            found: version,
            expected: BASELINE_VERSION,
        });
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let hend = 12usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format("truncated header".into()))?;
    let h: Header = serde_json::from_slice(&bytes[12..hend]).map_err(|e| Error::Format(format!("header: {e}")))?;
    if h.n_columns != h.terms.len() {
        return Err(Error::Format(format!(
            "{} weights for {} TF-IDF columns",
            h.n_columns,
            h.terms.len()
        )));
    }
    let payload = &bytes[hend..];
    let dense = 8 * (h.n_columns + 1);
    let expected = h.nnz.checked_mul(12).and_then(|n| n.checked_add(dense));
    if expected != Some(payload.len()) {
        return Err(Error::Format(format!("payload of {} bytes does not match header", payload.len())));
    }
    let mut floats: Vec<f64> = payload[..dense]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let bias = floats.pop().expect("bias present");
    let tfidf = TfidfModel::from_parts(h.tfidf, h.terms, floats)?;
    let mut w = vec![0.0; h.n_columns];
    for rec in payload[dense..].chunks_exact(12) {
        let c = u32::from_le_bytes(rec[..4].try_into().unwrap()) as usize;
        let v = f64::from_le_bytes(rec[4..].try_into().unwrap());
        *w.get_mut(c)
            .ok_or_else(|| Error::Format(format!("weight column {c} out of range")))? = v;
    }
    Ok(BaselineModel {
        tfidf,
        linear: LinearModel {
            w,
            b: bias,
            loss: h.loss,
            lambda: h.lambda,
        },
    })
}

pub fn save_baseline(m: &BaselineModel, path: &Path) -> Result<()> {
    io::atomic_write(path, &encode_baseline(m)?)
}

pub fn load_baseline(path: &Path) -> Result<BaselineModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_baseline(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}
