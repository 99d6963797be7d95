//! Independent oracles and the invariant checks behind `selftest`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::Gender;
use crate::error::Result;
use crate::model::{ArchConfig, DocInput, ModelParams, Pass, Variant};
use crate::stats::{chi2_sf_df1, odds_ratio, odds_ratio_fraction, Table2x2};
use crate::synth::{gen_gender_corpus, GenderSpec};
use crate::tensor::{conv1d, grad_check, max_over_time, GradCheckOptions, GradCheckReport, Padding, ParamSet, Tensor};
use crate::textpipe::{build_docs, normalize, TextConfig, Vocab};
use crate::train::{predict_ensemble, vote};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn timed(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    let t = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    Check {
        name: name.into(),
        passed,
        detail,
        seconds: t.elapsed().as_secs_f64(),
    }
}

/// Nested-loop convolution: zero rows outside the input.
pub fn conv1d_oracle(x: &[Vec<f64>], f: &[Vec<Vec<f64>>], bias: &[f64], padding: Padding) -> Vec<Vec<f64>> {
    let n = x.len() as isize;
    let w = f.len();
    let (m, off) = match padding {
        Padding::Same => (n as usize, ((w - 1) / 2) as isize),
        Padding::Valid => ((n as usize + 1).saturating_sub(w), 0),
    };
    let mut out = vec![bias.to_vec(); m];
    for (t, row) in out.iter_mut().enumerate() {
        for (j, fj) in f.iter().enumerate() {
            let src = t as isize + j as isize - off;
            if src < 0 || src >= n {
                continue;
            }
            for (i, fji) in fj.iter().enumerate() {
                for (o, v) in row.iter_mut().enumerate() {
                    *v += x[src as usize][i] * fji[o];
                }
            }
        }
    }
    out
}

/// Column maxima over the first `valid` rows with first-index ties.
pub fn max_oracle(x: &[Vec<f64>], valid: usize) -> (Vec<f64>, Vec<usize>) {
    let c = x[0].len();
    let mut best = vec![f64::NEG_INFINITY; c];
    let mut arg = vec![0; c];
    for (t, row) in x.iter().enumerate().take(valid) {
        for j in 0..c {
            if row[j] > best[j] {
                best[j] = row[j];
                arg[j] = t;
            }
        }
    }
    (best, arg)
}

/// Largest absolute deviations (conv, pooling) of the kernels from the
/// oracles over `instances` random problems.
pub fn kernel_oracles(instances: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut conv_err, mut pool_err) = (0.0f64, 0.0f64);
    for k in 0..instances {
        let n = rng.gen_range(1..12);
        let c_in = rng.gen_range(1..5);
        let c_out = rng.gen_range(1..5);
        let w = rng.gen_range(1..=n.min(5));
        let padding = if k % 2 == 0 { Padding::Same } else { Padding::Valid };
        let mut draw = || rng.gen_range(-1.0..1.0);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..c_in).map(|_| draw()).collect()).collect();
        let f: Vec<Vec<Vec<f64>>> = (0..w)
            .map(|_| (0..c_in).map(|_| (0..c_out).map(|_| draw()).collect()).collect())
            .collect();
        let b: Vec<f64> = (0..c_out).map(|_| draw()).collect();
        let xt = Tensor::from_rows(&x)?;
        let ft = Tensor::new(vec![w, c_in, c_out], f.iter().flatten().flatten().copied().collect())?;
        let bt = Tensor::new(vec![c_out], b.clone())?;
        let got = conv1d(&xt, &ft, &bt, padding)?;
        let want = conv1d_oracle(&x, &f, &b, padding);
        for (t, row) in want.iter().enumerate() {
            for (o, v) in row.iter().enumerate() {
                conv_err = conv_err.max((got.row(t)[o] - v).abs());
            }
        }
        let valid = rng.gen_range(1..=n);
        let (pooled, arg) = max_over_time(&xt, valid)?;
        let (best, warg) = max_oracle(&x, valid);
        if arg != warg {
            pool_err = f64::INFINITY;
        }
        for (a, b) in pooled.data().iter().zip(&best) {
            pool_err = pool_err.max((a - b).abs());
        }
    }
    Ok((conv_err, pool_err))
}

/// Upper tail of χ²(1) by Simpson's rule after substituting t = u², which
/// removes the singularity of the density at zero.
pub fn chi2_sf_quadrature(x: f64) -> f64 {
    let a = x.max(0.0).sqrt();
    let b = a + 12.0;
    let n = 20_000;
    let h = (b - a) / n as f64;
    let f = |u: f64| (2.0 / std::f64::consts::PI).sqrt() * (-u * u / 2.0).exp();
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Largest |closed form − quadrature| over `points` statistics in [0, 50].
pub fn chi2_quadrature_error(points: usize) -> f64 {
    (0..=points)
        .map(|i| 50.0 * i as f64 / points as f64)
        .map(|x| (chi2_sf_df1(x) - chi2_sf_quadrature(x)).abs())
        .fold(0.0, f64::max)
}

/// Exact odds-ratio invariants on random tables without zero cells: the
/// unit table, reciprocal fractions under a gender swap, and bitwise
/// equality under row replication. Returns the number of violations.
pub fn odds_ratio_invariants(trials: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    if odds_ratio(&Table2x2::new(7, 7, 7, 7), true) != 1.0 {
        bad += 1;
    }
    for _ in 0..trials {
        let mut c = || rng.gen_range(1..1000u64);
        let t = Table2x2::new(c(), c(), c(), c());
        let k = rng.gen_range(2..20u64);
        let or = odds_ratio(&t, true);
        let (num, den) = odds_ratio_fraction(&t, true);
        if odds_ratio_fraction(&t.swap_genders(), true) != (den, num) {
            bad += 1;
        }
        let scaled = Table2x2::new(t.a * k, t.b * k, t.c, t.d);
        if odds_ratio(&scaled, true) != or {
            bad += 1;
        }
    }
    bad
}

const TWEET_PIECES: [&str; 24] = [
    "hello", "WORLD", "sooo", "yesss", "#HPV", "#vax", "@friend", "http://t.co/x1", "www.site.com", ":)", ":-(", ":p",
    "<3", "!!!", "??", "...", "123", "3.5", "it's", "don't", "GREAT", "é", "😀", "<url>",
];

/// A random tweet-like string mixing words, markers and symbols.
pub fn random_tweet(rng: &mut impl Rng) -> String {
    let n = rng.gen_range(0..12);
    let mut s = String::new();
    for _ in 0..n {
        if rng.gen_bool(0.7) {
            s.push_str(TWEET_PIECES[rng.gen_range(0..TWEET_PIECES.len())]);
        } else {
            let len = rng.gen_range(1..6);
            s.extend((0..len).map(|_| rng.gen_range(' '..='~')));
        }
        s.push_str(if rng.gen_bool(0.8) { " " } else { "" });
    }
    s
}

/// Count of random strings for which normalize is not idempotent.
pub fn normalize_idempotence(n: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .filter(|_| {
            let once = normalize(&random_tweet(&mut rng));
            normalize(&once) != once
        })
        .count()
}

/// Tiny synthetic corpus with its vocabulary and model inputs.
pub fn tiny_inputs(users_per_class: usize, seed: u64) -> Result<(Vocab, Vec<DocInput>)> {
    let corpus = gen_gender_corpus(&GenderSpec {
        users_per_class,
        tweets_per_user: 2,
        vocab_size: 30,
        seed,
        ..Default::default()
    })?;
    let vocab = Vocab::build(&corpus, 1);
    let docs = build_docs(&corpus, &vocab, &TextConfig::default())?;
    let inputs = docs
        .iter()
        .zip(corpus.users())
        .map(|(d, u)| DocInput::new(d, &vocab, u.gender))
        .collect::<Result<_>>()?;
    Ok((vocab, inputs))
}

/// Full-model finite-difference check in 64-bit on the tiny configuration,
/// every coordinate of every tensor. Batch norm runs in inference mode;
/// biases are drawn away from zero so no all-padding window sits on a ReLU
/// kink.
pub fn model_gradcheck(variant: Variant, seed: u64) -> Result<GradCheckReport> {
    let (vocab, docs) = tiny_inputs(2, seed)?;
    let refs: Vec<&DocInput> = docs.iter().collect();
    let arch = ArchConfig {
        init_scale: 0.5,
        ..ArchConfig::tiny(variant)
    };
    let mut p = ModelParams::<f64>::init(&arch, &vocab, None, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for i in 0..p.tensor_count() {
        if p.tensor_name(i).ends_with("_b") || p.tensor_name(i) == "bn_beta" {
            for x in p.tensor_mut(i).data_mut() {
                *x = rng.gen_range(-0.5..0.5);
            }
        }
    }
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let out = p.loss_grad(&refs, Pass::EVAL, &mut r)?;
    grad_check(
        &mut p,
        &out.grads,
        |q| q.loss(&refs, Pass::EVAL, &mut ChaCha8Rng::seed_from_u64(0)),
        &GradCheckOptions::default(),
    )
}

/// Whether an ensemble of `k` copies of one model reproduces its predictions
/// exactly.
pub fn ensemble_identity(k: usize, seed: u64) -> Result<bool> {
    let (vocab, docs) = tiny_inputs(4, seed)?;
    let m = ModelParams::<f32>::init(&ArchConfig::tiny(Variant::CnnCharPos), &vocab, None, seed)?;
    let single = m.predict(&docs)?;
    let preds = predict_ensemble(&vec![m; k], &docs)?;
    Ok(preds.iter().zip(&single).all(|(p, s)| {
        let v = vote(&[*s]);
        p.voted_gender == Gender::from_index(v.class).unwrap()
            && p.fold_probs.iter().all(|&x| x == v.fold_probs[0])
            && p.avg_prob == v.fold_probs[0]
    }))
}

/// Fast invariant suite.
pub fn selftest(seed: u64) -> Vec<Check> {
    vec![
        timed("gradient check (tiny cnn_char_pos, f64)", || {
            let r = model_gradcheck(Variant::CnnCharPos, seed)?;
            Ok((r.passed(), format!("max relative error {:.2e}", r.max_rel_err())))
        }),
        timed("conv1d / max_over_time oracles", || {
            let (c, p) = kernel_oracles(200, seed)?;
            Ok((c < 1e-12 && p < 1e-12, format!("max error conv {c:.1e}, pool {p:.1e}")))
        }),
        timed("chi-square closed form vs quadrature", || {
            let e = chi2_quadrature_error(500);
            let p = chi2_sf_df1(3.841);
            Ok((
                e < 1e-8 && (p - 0.05).abs() < 1e-3,
                format!("max error {e:.1e}, p(3.841) = {p:.5}"),
            ))
        }),
        timed("odds ratio invariants", || {
            let bad = odds_ratio_invariants(1000, seed);
            Ok((bad == 0, format!("{bad} violations")))
        }),
        timed("normalize idempotence", || {
            let bad = normalize_idempotence(10_000, seed);
            Ok((bad == 0, format!("{bad} of 10000 strings")))
        }),
        timed("ensemble of identical models", || {
            let ok = ensemble_identity(5, seed)?;
            Ok((ok, if ok { "exact".into() } else { "mismatch".into() }))
        }),
    ]
}
