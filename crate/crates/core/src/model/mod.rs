//! The three CNN variants (word only, word + char, word + char + POS) over
//! the tensor kernels, plus checkpoint and pretrained-vector I/O.
//!
//! Documents are processed one at a time up to the pooled vector, so no
//! padding to a common batch length is needed; the dense head then runs on
//! the whole batch (batch norm needs batch statistics).
//!
//! ReLU and max-over-time commute (ReLU is monotone), so each convolution is
//! pooled first and rectified after. The gradient is the same, including
//! the first-index tie rule.

mod checkpoint;
mod config;
mod pretrained;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Gender;
use crate::error::{Error, Result};
use crate::tensor::{
    batch_norm, batch_norm_backward, conv1d_max, conv1d_max_backward, dense, dense_backward,
    dropout, dropout_backward, relu, relu_backward, softmax, softmax_xent, softmax_xent_backward,
    AdamState, BatchNorm, BatchNormCache, Mode, Padding, ParamSet, Real, Tensor,
};
use crate::textpipe::{TokenizedDoc, Vocab, CHAR_VOCAB_SIZE, PAD_CHAR, TAGSET};

pub use checkpoint::{
    decode as decode_checkpoint, encode as encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION,
};
pub use config::{ArchConfig, FilterSplit, OptimizerKind, Variant};
pub use pretrained::Pretrained;

pub const N_CLASSES: usize = 2;
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

/// One document in model-ready form. Distinct character sequences are stored
/// once; `token_chars[t]` indexes `char_seqs`.
#[derive(Debug, Clone, PartialEq)]
pub struct DocInput {
    pub user_id: String,
    pub fingerprint: String,
    pub words: Vec<u32>,
    pub pos: Vec<u16>,
    pub char_seqs: Vec<Vec<u16>>,
    pub token_chars: Vec<u32>,
    pub label: Option<usize>,
}

impl DocInput {
    pub fn new(doc: &TokenizedDoc, vocab: &Vocab, label: Option<Gender>) -> Result<Self> {
        if doc.is_empty() {
            return Err(Error::Data(format!("document of {} has no tokens", doc.user_id)));
        }
        let mut seen: HashMap<&[u16], u32> = HashMap::new();
        let mut char_seqs = Vec::new();
        let mut token_chars = Vec::with_capacity(doc.len());
        for tok in &doc.tokens {
            if tok.chars.is_empty() {
                return Err(Error::Data(format!(
                    "token {:?} of {} has no characters",
                    tok.surface, doc.user_id
                )));
            }
            let id = *seen.entry(tok.chars.as_slice()).or_insert_with(|| {
                char_seqs.push(tok.chars.clone());
                (char_seqs.len() - 1) as u32
            });
            token_chars.push(id);
        }
        Ok(DocInput {
            user_id: doc.user_id.clone(),
            fingerprint: vocab.fingerprint().to_string(),
            words: doc.tokens.iter().map(|t| t.word).collect(),
            pos: doc.tokens.iter().map(|t| t.pos).collect(),
            char_seqs,
            token_chars,
            label: label.map(Gender::index),
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharLayer<T> {
    pub emb: Tensor<T>,
    pub conv_w: Tensor<T>,
    pub conv_b: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub width: usize,
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

/// All trainable arrays of one CNN plus its architecture and the
/// fingerprint of the vocabulary it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub arch: ArchConfig,
    pub vocab_fingerprint: String,
    pub word_emb: Tensor<T>,
    pub char: Option<CharLayer<T>>,
    pub pos_emb: Option<Tensor<T>>,
    pub word_conv: Vec<ConvLayer<T>>,
    pub dense_w: Tensor<T>,
    pub dense_b: Tensor<T>,
    pub bn: BatchNorm<T>,
    pub out_w: Tensor<T>,
    pub out_b: Tensor<T>,
}

/// Which stochastic and batch-statistics paths a pass uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pass {
    pub bn: Mode,
    pub dropout: bool,
}

impl Pass {
    pub const TRAIN: Pass = Pass {
        bn: Mode::Train,
        dropout: true,
    };
    pub const EVAL: Pass = Pass {
        bn: Mode::Eval,
        dropout: false,
    };
}

/// Result of a forward + backward pass. `grads` follows the parameter-set
/// order; frozen tensors get an empty vector.
#[derive(Debug, Clone)]
pub struct StepOutput<T> {
    pub loss: f64,
    pub xent: f64,
    pub probs: Tensor<T>,
    pub grads: Vec<Vec<T>>,
    pub bn_cache: BatchNormCache<T>,
}

struct DocCache<T> {
    fused: Vec<T>,
    char_ids: Vec<Vec<u16>>,
    char_in: Vec<Vec<T>>,
    char_pre: Vec<Vec<T>>,
    char_arg: Vec<Vec<usize>>,
    conv_pre: Vec<Vec<T>>,
    conv_arg: Vec<Vec<usize>>,
}

struct CharOut<T> {
    ids: Vec<u16>,
    input: Vec<T>,
    best: Vec<T>,
    arg: Vec<usize>,
}

struct Grads<T> {
    word_emb: Vec<T>,
    char_emb: Vec<T>,
    char_conv_w: Vec<T>,
    char_conv_b: Vec<T>,
    pos_emb: Vec<T>,
    word_conv: Vec<(Vec<T>, Vec<T>)>,
}

fn relu_vec<T: Real>(v: &[T]) -> Vec<T> {
    v.iter().map(|&x| x.max(T::zero())).collect()
}

fn padded_char_ids(seq: &[u16], width: usize) -> Vec<u16> {
    let mut ids = seq.to_vec();
    if ids.len() < width {
        ids.resize(width, PAD_CHAR);
    }
    ids
}

impl<T: Real> ModelParams<T> {
    /// Uniform initialization in `[-init_scale, init_scale]`, biases zero,
    /// batch-norm scale one; pretrained rows are copied over the word table.
    pub fn init(
        arch: &ArchConfig,
        vocab: &Vocab,
        pretrained: Option<&Pretrained>,
        seed: u64,
    ) -> Result<Self> {
        let mut p = Self::zeroed(arch, vocab.n_words(), vocab.fingerprint())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names = p.tensor_names();
        for (name, t) in names.iter().zip(p.tensors_mut()) {
            if name.ends_with("_w") || name.ends_with("_emb") {
                for x in t.data_mut() {
                    *x = T::of(rng.gen_range(-arch.init_scale..=arch.init_scale));
                }
            }
        }
        if let Some(pre) = pretrained {
            if pre.dim() != arch.word_dim {
                return Err(Error::InvalidArgument(format!(
                    "pretrained vectors have dimension {}, word_dim is {}",
                    pre.dim(),
                    arch.word_dim
                )));
            }
            for id in 2..vocab.n_words() as u32 {
                if let Some(v) = pre.get(vocab.word(id).unwrap_or_default()) {
                    for (dst, &x) in p.word_emb.row_mut(id as usize).iter_mut().zip(v) {
                        *dst = T::of(x as f64);
                    }
                }
            }
        }
        p.zero_pad_rows();
        Ok(p)
    }

    /// All-zero parameters of the right shapes (batch-norm scale and running
    /// variance one).
    pub fn zeroed(arch: &ArchConfig, n_words: usize, fingerprint: &str) -> Result<Self> {
        arch.validate()?;
        let fused = arch.fused_width();
        Ok(ModelParams {
            arch: arch.clone(),
            vocab_fingerprint: fingerprint.to_string(),
            word_emb: Tensor::zeros(&[n_words, arch.word_dim]),
            char: arch.variant.uses_chars().then(|| CharLayer {
                emb: Tensor::zeros(&[CHAR_VOCAB_SIZE, arch.char_dim]),
                conv_w: Tensor::zeros(&[arch.char_filter_width, arch.char_dim, arch.char_filters]),
                conv_b: Tensor::zeros(&[arch.char_filters]),
            }),
            pos_emb: arch
                .variant
                .uses_pos()
                .then(|| Tensor::zeros(&[TAGSET.len(), arch.pos_dim])),
            word_conv: arch
                .word_filter_widths
                .iter()
                .zip(arch.filters_per_width())
                .map(|(&w, f)| ConvLayer {
                    width: w,
                    w: Tensor::zeros(&[w, fused, f]),
                    b: Tensor::zeros(&[f]),
                })
                .collect(),
            dense_w: Tensor::zeros(&[arch.pooled_width(), arch.dense_units]),
            dense_b: Tensor::zeros(&[arch.dense_units]),
            bn: BatchNorm::new(arch.dense_units, BN_MOMENTUM, BN_EPS),
            out_w: Tensor::zeros(&[arch.dense_units, N_CLASSES]),
            out_b: Tensor::zeros(&[N_CLASSES]),
        })
    }

    /// Errors unless this model has the given architecture and vocabulary.
    pub fn ensure_matches(&self, arch: &ArchConfig, fingerprint: &str) -> Result<()> {
        if self.arch.signature() != arch.signature() {
            return Err(Error::ArchMismatch {
                found: self.arch.signature(),
                expected: arch.signature(),
            });
        }
        if self.vocab_fingerprint != fingerprint {
            return Err(Error::Fingerprint {
                found: self.vocab_fingerprint.clone(),
                expected: fingerprint.to_string(),
            });
        }
        Ok(())
    }

    pub fn zero_pad_rows(&mut self) {
        self.word_emb.row_mut(0).fill(T::zero());
        if let Some(c) = &mut self.char {
            c.emb.row_mut(0).fill(T::zero());
        }
        if let Some(p) = &mut self.pos_emb {
            p.row_mut(0).fill(T::zero());
        }
    }

    fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = vec![("word_emb".to_string(), &self.word_emb)];
        if let Some(c) = &self.char {
            v.push(("char_emb".into(), &c.emb));
            v.push(("char_conv_w".into(), &c.conv_w));
            v.push(("char_conv_b".into(), &c.conv_b));
        }
        if let Some(p) = &self.pos_emb {
            v.push(("pos_emb".into(), p));
        }
        for l in &self.word_conv {
            v.push((format!("word_conv{}_w", l.width), &l.w));
            v.push((format!("word_conv{}_b", l.width), &l.b));
        }
        v.push(("dense_w".into(), &self.dense_w));
        v.push(("dense_b".into(), &self.dense_b));
        v.push(("bn_gamma".into(), &self.bn.gamma));
        v.push(("bn_beta".into(), &self.bn.beta));
        v.push(("out_w".into(), &self.out_w));
        v.push(("out_b".into(), &self.out_b));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = vec![&mut self.word_emb];
        if let Some(c) = &mut self.char {
            v.push(&mut c.emb);
            v.push(&mut c.conv_w);
            v.push(&mut c.conv_b);
        }
        if let Some(p) = &mut self.pos_emb {
            v.push(p);
        }
        for l in &mut self.word_conv {
            v.push(&mut l.w);
            v.push(&mut l.b);
        }
        v.extend([
            &mut self.dense_w,
            &mut self.dense_b,
            &mut self.bn.gamma,
            &mut self.bn.beta,
            &mut self.out_w,
            &mut self.out_b,
        ]);
        v
    }

    /// Names of the trainable tensors, in parameter-set order.
    pub fn tensor_names(&self) -> Vec<String> {
        self.named().into_iter().map(|(n, _)| n).collect()
    }

    /// Weight tensors subject to the L2 penalty: conv filters and dense weights.
    pub fn is_penalized(name: &str) -> bool {
        name.ends_with("_w")
    }

    pub fn l2_penalty(&self) -> f64 {
        let s: f64 = self
            .named()
            .into_iter()
            .filter(|(n, _)| Self::is_penalized(n))
            .flat_map(|(_, t)| t.data().iter().map(|x| x.f64() * x.f64()))
            .sum();
        self.arch.l2 * s
    }

    pub fn n_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    fn check_doc(&self, d: &DocInput) -> Result<()> {
        if d.fingerprint != self.vocab_fingerprint {
            return Err(Error::Fingerprint {
                found: d.fingerprint.clone(),
                expected: self.vocab_fingerprint.clone(),
            });
        }
        if d.is_empty() {
            return Err(Error::Data(format!("document of {} has no tokens", d.user_id)));
        }
        let v = self.word_emb.rows();
        if let Some(&w) = d.words.iter().find(|&&w| w as usize >= v) {
            return Err(Error::Data(format!(
                "word id {w} in {} exceeds vocabulary size {v}",
                d.user_id
            )));
        }
        if d.pos.len() != d.len() || d.token_chars.len() != d.len() {
            return Err(Error::Shape(format!("ragged document {}", d.user_id)));
        }
        if let Some(&p) = d.pos.iter().find(|&&p| p as usize >= TAGSET.len()) {
            return Err(Error::Data(format!("tag id {p} in {} out of range", d.user_id)));
        }
        if d.token_chars.iter().any(|&u| u as usize >= d.char_seqs.len())
            || d.char_seqs.iter().any(|s| s.is_empty() || s.iter().any(|&c| c as usize >= CHAR_VOCAB_SIZE))
        {
            return Err(Error::Data(format!("bad character data in {}", d.user_id)));
        }
        Ok(())
    }

    /// Fused per-token matrix (`n x fused_width`), row-major.
    pub fn fused_tokens(&self, d: &DocInput) -> Result<Tensor<T>> {
        self.check_doc(d)?;
        let (fused, _) = self.fuse(d, false);
        Tensor::new(vec![d.len(), self.arch.fused_width()], fused)
    }

    /// Summary vector of one token's characters.
    pub fn char_layer(&self, chars: &[u16]) -> Result<Tensor<T>> {
        let c = self.char.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!("{} has no character layer", self.arch.variant))
        })?;
        if chars.is_empty() {
            return Err(Error::InvalidArgument("empty character sequence".into()));
        }
        if let Some(&bad) = chars.iter().find(|&&ch| ch as usize >= CHAR_VOCAB_SIZE) {
            return Err(Error::InvalidArgument(format!("character id {bad} out of range")));
        }
        let out = self.char_forward(c, chars);
        Tensor::new(vec![self.arch.char_filters], relu_vec(&out.best))
    }

    fn char_forward(&self, c: &CharLayer<T>, seq: &[u16]) -> CharOut<T> {
        let a = &self.arch;
        let ids = padded_char_ids(seq, a.char_filter_width);
        let mut input = Vec::with_capacity(ids.len() * a.char_dim);
        for &id in &ids {
            input.extend_from_slice(c.emb.row(id as usize));
        }
        let mut best = vec![T::zero(); a.char_filters];
        let mut arg = vec![0; a.char_filters];
        conv1d_max(
            &input,
            ids.len(),
            a.char_dim,
            c.conv_w.data(),
            c.conv_b.data(),
            a.char_filter_width,
            Padding::Same,
            &mut best,
            &mut arg,
        );
        CharOut {
            ids,
            input,
            best,
            arg,
        }
    }

    /// Builds the fused token matrix; with `keep` also returns the char-layer
    /// intermediates needed for the backward pass.
    fn fuse(&self, d: &DocInput, keep: bool) -> (Vec<T>, Option<DocCache<T>>) {
        let a = &self.arch;
        let n = d.len();
        let fw = a.fused_width();
        let wd = a.word_dim;
        let mut fused = vec![T::zero(); n * fw];
        for (t, &w) in d.words.iter().enumerate() {
            fused[t * fw..t * fw + wd].copy_from_slice(self.word_emb.row(w as usize));
        }
        let mut cache = DocCache {
            fused: Vec::new(),
            char_ids: Vec::new(),
            char_in: Vec::new(),
            char_pre: Vec::new(),
            char_arg: Vec::new(),
            conv_pre: Vec::new(),
            conv_arg: Vec::new(),
        };
        let mut col = wd;
        if let Some(c) = &self.char {
            let cf = a.char_filters;
            let mut outs = Vec::with_capacity(d.char_seqs.len());
            for seq in &d.char_seqs {
                let o = self.char_forward(c, seq);
                outs.push(relu_vec(&o.best));
                if keep {
                    cache.char_ids.push(o.ids);
                    cache.char_in.push(o.input);
                    cache.char_pre.push(o.best);
                    cache.char_arg.push(o.arg);
                }
            }
            for (t, &u) in d.token_chars.iter().enumerate() {
                fused[t * fw + col..t * fw + col + cf].copy_from_slice(&outs[u as usize]);
            }
            col += cf;
        }
        if let Some(p) = &self.pos_emb {
            for (t, &tag) in d.pos.iter().enumerate() {
                fused[t * fw + col..t * fw + col + a.pos_dim].copy_from_slice(p.row(tag as usize));
            }
        }
        (fused, keep.then_some(cache))
    }

    fn doc_forward(&self, d: &DocInput, keep: bool) -> (Vec<T>, Option<DocCache<T>>) {
        let n = d.len();
        let fw = self.arch.fused_width();
        let (fused, mut cache) = self.fuse(d, keep);
        let mut pooled = Vec::with_capacity(self.arch.pooled_width());
        for l in &self.word_conv {
            let f = l.b.numel();
            let mut best = vec![T::zero(); f];
            let mut arg = vec![0; f];
            conv1d_max(
                &fused,
                n,
                fw,
                l.w.data(),
                l.b.data(),
                l.width,
                Padding::Same,
                &mut best,
                &mut arg,
            );
            pooled.extend(relu_vec(&best));
            if let Some(c) = &mut cache {
                c.conv_pre.push(best);
                c.conv_arg.push(arg);
            }
        }
        if let Some(c) = &mut cache {
            c.fused = fused;
        }
        (pooled, cache)
    }

    fn doc_backward(&self, d: &DocInput, cache: &DocCache<T>, gpool: &[T], g: &mut Grads<T>) {
        let a = &self.arch;
        let n = d.len();
        let fw = a.fused_width();
        let wd = a.word_dim;
        let mut gfused = vec![T::zero(); n * fw];
        let mut off = 0;
        for (k, l) in self.word_conv.iter().enumerate() {
            let f = l.b.numel();
            let gpre: Vec<T> = gpool[off..off + f]
                .iter()
                .zip(&cache.conv_pre[k])
                .map(|(&gv, &z)| if z > T::zero() { gv } else { T::zero() })
                .collect();
            let (gw, gb) = &mut g.word_conv[k];
            conv1d_max_backward(
                &cache.fused,
                n,
                fw,
                l.w.data(),
                l.width,
                Padding::Same,
                &cache.conv_arg[k],
                &gpre,
                &mut gfused,
                gw,
                gb,
            );
            off += f;
        }
        if !g.word_emb.is_empty() {
            for (t, &w) in d.words.iter().enumerate() {
                let dst = &mut g.word_emb[w as usize * wd..(w as usize + 1) * wd];
                for (x, &y) in dst.iter_mut().zip(&gfused[t * fw..t * fw + wd]) {
                    *x += y;
                }
            }
        }
        let mut col = wd;
        if let Some(c) = &self.char {
            let (cf, cd, cw) = (a.char_filters, a.char_dim, a.char_filter_width);
            let mut gseq = vec![T::zero(); d.char_seqs.len() * cf];
            for (t, &u) in d.token_chars.iter().enumerate() {
                let dst = &mut gseq[u as usize * cf..(u as usize + 1) * cf];
                for (x, &y) in dst.iter_mut().zip(&gfused[t * fw + col..t * fw + col + cf]) {
                    *x += y;
                }
            }
            for u in 0..d.char_seqs.len() {
                let gpre: Vec<T> = gseq[u * cf..(u + 1) * cf]
                    .iter()
                    .zip(&cache.char_pre[u])
                    .map(|(&gv, &z)| if z > T::zero() { gv } else { T::zero() })
                    .collect();
                if gpre.iter().all(|&x| x == T::zero()) {
                    continue;
                }
                let ids = &cache.char_ids[u];
                let mut gin = vec![T::zero(); ids.len() * cd];
                conv1d_max_backward(
                    &cache.char_in[u],
                    ids.len(),
                    cd,
                    c.conv_w.data(),
                    cw,
                    Padding::Same,
                    &cache.char_arg[u],
                    &gpre,
                    &mut gin,
                    &mut g.char_conv_w,
                    &mut g.char_conv_b,
                );
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut g.char_emb[id as usize * cd..(id as usize + 1) * cd];
                    for (x, &y) in dst.iter_mut().zip(&gin[r * cd..(r + 1) * cd]) {
                        *x += y;
                    }
                }
            }
            col += cf;
        }
        if self.pos_emb.is_some() {
            let pd = a.pos_dim;
            for (t, &tag) in d.pos.iter().enumerate() {
                let dst = &mut g.pos_emb[tag as usize * pd..(tag as usize + 1) * pd];
                for (x, &y) in dst.iter_mut().zip(&gfused[t * fw + col..t * fw + col + pd]) {
                    *x += y;
                }
            }
        }
    }

    /// Pooled document vector (after ReLU), length `pooled_width`.
    pub fn pooled(&self, d: &DocInput) -> Result<Tensor<T>> {
        self.check_doc(d)?;
        let (p, _) = self.doc_forward(d, false);
        Tensor::new(vec![p.len()], p)
    }

    fn pooled_batch(&self, docs: &[&DocInput], keep: bool) -> Result<(Tensor<T>, Vec<DocCache<T>>)> {
        let pw = self.arch.pooled_width();
        let mut data = Vec::with_capacity(docs.len() * pw);
        let mut caches = Vec::new();
        for d in docs {
            self.check_doc(d)?;
            let (p, c) = self.doc_forward(d, keep);
            data.extend(p);
            caches.extend(c);
        }
        Ok((Tensor::new(vec![docs.len(), pw], data)?, caches))
    }

    /// Logits and class probabilities for a batch.
    pub fn forward<R: Rng>(
        &self,
        docs: &[&DocInput],
        pass: Pass,
        rng: &mut R,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let (h, _) = self.pooled_batch(docs, false)?;
        let z1 = dense(&h, &self.dense_w, &self.dense_b)?;
        let (b, _) = batch_norm(&z1, &self.bn, pass.bn)?;
        let a = relu(&b);
        let rate = if pass.dropout { self.arch.dropout } else { 0.0 };
        let (dd, _) = dropout(&a, rate, Mode::Train, rng)?;
        let logits = dense(&dd, &self.out_w, &self.out_b)?;
        let probs = softmax(&logits)?;
        Ok((logits, probs))
    }

    /// Eval-mode class probabilities, one `[female, male]` pair per document.
    pub fn predict(&self, docs: &[DocInput]) -> Result<Vec<[f64; N_CLASSES]>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = Vec::with_capacity(docs.len());
        for chunk in docs.chunks(256) {
            let refs: Vec<&DocInput> = chunk.iter().collect();
            let (_, probs) = self.forward(&refs, Pass::EVAL, &mut rng)?;
            for r in 0..probs.rows() {
                let p = probs.row(r);
                out.push([p[0].f64(), p[1].f64()]);
            }
        }
        Ok(out)
    }

    fn labels(docs: &[&DocInput]) -> Result<Vec<usize>> {
        docs.iter()
            .map(|d| {
                d.label
                    .ok_or_else(|| Error::Data(format!("document of {} has no label", d.user_id)))
            })
            .collect()
    }

    /// Mean cross-entropy plus L2 penalty, without gradients.
    pub fn loss<R: Rng>(&self, docs: &[&DocInput], pass: Pass, rng: &mut R) -> Result<f64> {
        let labels = Self::labels(docs)?;
        let (logits, _) = self.forward(docs, pass, rng)?;
        let (xent, _) = softmax_xent(&logits, &labels)?;
        Ok(xent.f64() + self.l2_penalty())
    }

    /// Forward and backward pass over a labeled batch.
    pub fn loss_grad<R: Rng>(
        &self,
        docs: &[&DocInput],
        pass: Pass,
        rng: &mut R,
    ) -> Result<StepOutput<T>> {
        let labels = Self::labels(docs)?;
        let (h, caches) = self.pooled_batch(docs, true)?;
        let z1 = dense(&h, &self.dense_w, &self.dense_b)?;
        let (b, bn_cache) = batch_norm(&z1, &self.bn, pass.bn)?;
        let a = relu(&b);
        let rate = if pass.dropout { self.arch.dropout } else { 0.0 };
        let (dd, mask) = dropout(&a, rate, Mode::Train, rng)?;
        let logits = dense(&dd, &self.out_w, &self.out_b)?;
        let (xent, probs) = softmax_xent(&logits, &labels)?;
        let xent = xent.f64();
        let loss = xent + self.l2_penalty();

        let g_logits = softmax_xent_backward(&probs, &labels);
        let out_g = dense_backward(&dd, &self.out_w, &g_logits);
        let g_a = dropout_backward(&out_g.input, mask.as_deref());
        let g_b = relu_backward(&b, &g_a);
        let bn_g = batch_norm_backward(&bn_cache, &self.bn.gamma, &g_b);
        let dense_g = dense_backward(&h, &self.dense_w, &bn_g.input);

        let a_ = &self.arch;
        let mut g = Grads {
            word_emb: if a_.freeze_word_embeddings {
                Vec::new()
            } else {
                vec![T::zero(); self.word_emb.numel()]
            },
            char_emb: vec![T::zero(); self.char.as_ref().map_or(0, |c| c.emb.numel())],
            char_conv_w: vec![T::zero(); self.char.as_ref().map_or(0, |c| c.conv_w.numel())],
            char_conv_b: vec![T::zero(); self.char.as_ref().map_or(0, |c| c.conv_b.numel())],
            pos_emb: vec![T::zero(); self.pos_emb.as_ref().map_or(0, Tensor::numel)],
            word_conv: self
                .word_conv
                .iter()
                .map(|l| (vec![T::zero(); l.w.numel()], vec![T::zero(); l.b.numel()]))
                .collect(),
        };
        for (i, (d, c)) in docs.iter().zip(&caches).enumerate() {
            self.doc_backward(d, c, dense_g.input.row(i), &mut g);
        }
        // Padding rows are constants.
        let a_cols = [a_.word_dim, a_.char_dim, a_.pos_dim];
        for (gr, cols) in [&mut g.word_emb, &mut g.char_emb, &mut g.pos_emb].into_iter().zip(a_cols) {
            if !gr.is_empty() {
                gr[..cols].fill(T::zero());
            }
        }

        let mut grads = vec![g.word_emb];
        if self.char.is_some() {
            grads.extend([g.char_emb, g.char_conv_w, g.char_conv_b]);
        }
        if self.pos_emb.is_some() {
            grads.push(g.pos_emb);
        }
        for (w, b) in g.word_conv {
            grads.extend([w, b]);
        }
        grads.extend([
            dense_g.weight.into_data(),
            dense_g.bias.into_data(),
            bn_g.gamma.into_data(),
            bn_g.beta.into_data(),
            out_g.weight.into_data(),
            out_g.bias.into_data(),
        ]);
        if a_.l2 > 0.0 {
            let c = T::of(2.0 * a_.l2);
            for ((name, t), gr) in self.named().into_iter().zip(grads.iter_mut()) {
                if Self::is_penalized(&name) && !gr.is_empty() {
                    for (x, &w) in gr.iter_mut().zip(t.data()) {
                        *x += c * w;
                    }
                }
            }
        }
        Ok(StepOutput {
            loss,
            xent,
            probs,
            grads,
            bn_cache,
        })
    }

    /// One optimizer update on a labeled batch. Returns the pre-update loss.
    pub fn train_step<R: Rng>(
        &mut self,
        docs: &[&DocInput],
        opt: &mut AdamState<T>,
        rng: &mut R,
    ) -> Result<f64> {
        let out = self.loss_grad(docs, Pass::TRAIN, rng)?;
        if !out.loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss {} (cross-entropy {}, penalty {}) on batch starting with {}",
                out.loss,
                out.xent,
                self.l2_penalty(),
                docs.first().map_or("", |d| d.user_id.as_str())
            )));
        }
        for (t, g) in self.tensors_mut().into_iter().zip(out.grads) {
            if g.is_empty() {
                t.clear_grad();
            } else {
                t.set_grad(g);
            }
        }
        opt.step(self)?;
        self.bn.update_running(&out.bn_cache);
        self.zero_pad_rows();
        Ok(out.loss)
    }

    /// Drops gradient buffers to free memory.
    pub fn clear_grads(&mut self) {
        for t in self.tensors_mut() {
            t.clear_grad();
        }
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            arch: self.arch.clone(),
            vocab_fingerprint: self.vocab_fingerprint.clone(),
            word_emb: self.word_emb.cast(),
            char: self.char.as_ref().map(|c| CharLayer {
                emb: c.emb.cast(),
                conv_w: c.conv_w.cast(),
                conv_b: c.conv_b.cast(),
            }),
            pos_emb: self.pos_emb.as_ref().map(Tensor::cast),
            word_conv: self
                .word_conv
                .iter()
                .map(|l| ConvLayer {
                    width: l.width,
                    w: l.w.cast(),
                    b: l.b.cast(),
                })
                .collect(),
            dense_w: self.dense_w.cast(),
            dense_b: self.dense_b.cast(),
            bn: BatchNorm {
                gamma: self.bn.gamma.cast(),
                beta: self.bn.beta.cast(),
                running_mean: self.bn.running_mean.cast(),
                running_var: self.bn.running_var.cast(),
                momentum: self.bn.momentum,
                eps: self.bn.eps,
            },
            out_w: self.out_w.cast(),
            out_b: self.out_b.cast(),
        }
    }
}

impl<T: Real> ParamSet<T> for ModelParams<T> {
    fn tensor_count(&self) -> usize {
        self.named().len()
    }

    fn tensor_name(&self, i: usize) -> String {
        self.named().swap_remove(i).0
    }

    fn tensor(&self, i: usize) -> &Tensor<T> {
        self.named().swap_remove(i).1
    }

    fn tensor_mut(&mut self, i: usize) -> &mut Tensor<T> {
        self.tensors_mut().swap_remove(i)
    }

    fn is_constant(&self, i: usize, k: usize) -> bool {
        let (name, t) = self.named().swap_remove(i);
        name.ends_with("_emb") && k < t.cols()
    }
}

/// Creates an optimizer matching the architecture's settings.
pub fn optimizer_for<T: Real>(params: &ModelParams<T>) -> AdamState<T> {
    match params.arch.optimizer {
        OptimizerKind::Adam => AdamState::new(
            crate::tensor::AdamConfig {
                lr: params.arch.lr,
                ..Default::default()
            },
            params,
        ),
        OptimizerKind::Sgd => AdamState::sgd(params.arch.lr, params),
    }
}
