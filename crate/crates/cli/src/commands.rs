use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use serde::{Deserialize, Serialize};

use genderfuse::baseline::{
    baseline_cv, predict_baseline_ensemble, save_baseline, token_lists, Algo,
};
use genderfuse::corpus::{
    import_pan, read_labeled_tweets, read_pan_truth, read_predictions, write_labeled_tweets, write_predictions,
    Corpus, Gender, GenderPrediction,
};
use genderfuse::io;
use genderfuse::model::{load_checkpoint, ArchConfig, DocInput, ModelParams, Pretrained, Variant};
use genderfuse::stats::{build_tables, write_csv, write_json};
use genderfuse::synth::{gen_gender_corpus, gen_labeled_tweets, Channel, GenderSpec, LabeledSpec};
use genderfuse::textpipe::{apply_pos_overrides, build_docs, TextConfig, Vocab};
use genderfuse::train::{
    coverage, evaluate, predict_ensemble, train_cv, AlgoResult, EnsembleReport, EpochEvent, TrainConfig,
};
use genderfuse::verify::{model_gradcheck, selftest};

use crate::config::RunConfig;
use crate::CliError;

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>, CliError> {
    let mut b = serde_json::to_vec_pretty(v).map_err(|e| CliError::Failed(e.to_string()))?;
    b.push(b'\n');
    Ok(b)
}

fn write_json_file<T: Serialize>(path: &Path, v: &T) -> Result<(), CliError> {
    Ok(io::atomic_write(path, &json_bytes(v)?)?)
}

fn read_json_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = io::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Data(genderfuse::Error::Data(format!("{}: {e}", path.display()))))
}

fn to_inputs(docs: &[genderfuse::textpipe::TokenizedDoc], corpus: &Corpus, vocab: &Vocab) -> Result<Vec<DocInput>, CliError> {
    Ok(docs
        .iter()
        .zip(corpus.users())
        .map(|(d, u)| DocInput::new(d, vocab, u.gender))
        .collect::<Result<_, _>>()?)
}

fn truth_of(corpus: &Corpus) -> Result<HashMap<String, Gender>, CliError> {
    let labels = corpus.labels()?;
    Ok(corpus
        .users()
        .iter()
        .zip(labels)
        .map(|(u, g)| (u.user_id.clone(), g))
        .collect())
}

/// Truth labels from corpus JSONL, or from a PAN `id:::gender` file when
/// the extension is `.txt`.
fn load_truth(path: &Path) -> Result<HashMap<String, Gender>, CliError> {
    if path.extension().is_some_and(|e| e == "txt") {
        Ok(read_pan_truth(path)?)
    } else {
        truth_of(&Corpus::read_jsonl(path)?)
    }
}

#[derive(Args)]
pub struct ImportPan {
    /// Directory of `<author id>.xml` files
    #[arg(long, value_name = "DIR")]
    authors: PathBuf,
    /// Truth file with `id:::gender` lines
    #[arg(long, value_name = "FILE")]
    truth: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

impl ImportPan {
    pub fn run(self, quiet: bool) -> Result<(), CliError> {
        let imported = import_pan(&self.authors, self.truth.as_deref())?;
        if !quiet {
            for w in &imported.warnings {
                eprintln!("warning: {w}");
            }
        }
        imported.corpus.write_jsonl(&self.out)?;
        println!("{} authors written to {}", imported.corpus.len(), self.out.display());
        Ok(())
    }
}

#[derive(Args)]
pub struct Preprocess {
    #[arg(long, value_name = "FILE")]
    corpus: PathBuf,
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    /// JSONL of externally computed tags ({"user_id", "tags": [...]})
    #[arg(long, value_name = "FILE")]
    pos_overrides: Option<PathBuf>,
}

impl Preprocess {
    pub fn run(self, cfg: &mut RunConfig) -> Result<(), CliError> {
        let text = cfg.text()?;
        let corpus = Corpus::read_jsonl(&self.corpus)?;
        let vocab = Vocab::build(&corpus, text.min_word_freq);
        let mut docs = build_docs(&corpus, &vocab, &text)?;
        if let Some(p) = &self.pos_overrides {
            let n = apply_pos_overrides(&mut docs, p)?;
            println!("{n} documents retagged");
        }
        vocab.save(&self.out_dir.join("vocab.json"))?;
        io::write_jsonl(&self.out_dir.join("docs.jsonl"), &docs)?;
        let tokens: usize = docs.iter().map(|d| d.len()).sum();
        println!(
            "{} documents, {tokens} tokens, {} word ids, fingerprint {}",
            docs.len(),
            vocab.n_words(),
            vocab.fingerprint()
        );
        Ok(())
    }
}

/// Settings a model directory was trained with.
#[derive(Debug, Serialize, Deserialize)]
struct RunInfo {
    arch: ArchConfig,
    text: TextConfig,
    folds: usize,
    epochs: usize,
    seed: u64,
}

#[derive(Args)]
pub struct Train {
    #[arg(long, value_name = "FILE")]
    corpus: PathBuf,
    /// Held-out labeled corpus; enables per-fold test accuracy and voting
    #[arg(long, value_name = "FILE")]
    test: Option<PathBuf>,
    /// Model variant (config key `arch`)
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Size preset: reference, desk or tiny (config key `preset`)
    #[arg(long)]
    preset: Option<String>,
    /// Pretrained word vectors in GloVe text format
    #[arg(long, value_name = "FILE")]
    pretrained: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pos_overrides: Option<PathBuf>,
    /// Output directory for vocabulary, checkpoints and report
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Reuse folds already finished in the output directory
    #[arg(long)]
    resume: bool,
}

fn apply_flag<T: ToString>(cfg: &mut RunConfig, key: &str, v: &Option<T>) -> Result<(), CliError> {
    if let Some(v) = v {
        cfg.set(key, &v.to_string())?;
    }
    Ok(())
}

impl Train {
    pub fn run(self, cfg: &mut RunConfig, quiet: bool) -> Result<(), CliError> {
        apply_flag(cfg, "arch", &self.arch)?;
        apply_flag(cfg, "folds", &self.folds)?;
        apply_flag(cfg, "epochs", &self.epochs)?;
        apply_flag(cfg, "seed", &self.seed)?;
        apply_flag(cfg, "jobs", &self.jobs)?;
        apply_flag(cfg, "preset", &self.preset)?;
        let seed = cfg.seed()?;
        let arch = cfg.arch()?;
        let text = cfg.text()?;
        let tc = TrainConfig {
            folds: cfg.usize_or("folds", 5)?,
            epochs: cfg.usize_or("epochs", 20)?,
            seed,
            jobs: cfg.usize_or("jobs", 1)?,
            checkpoint_dir: Some(self.out.clone()),
            resume: self.resume,
        };

        let corpus = Corpus::read_jsonl(&self.corpus)?;
        corpus.labels()?;
        let vocab = Vocab::build(&corpus, text.min_word_freq);
        let mut docs = build_docs(&corpus, &vocab, &text)?;
        if let Some(p) = &self.pos_overrides {
            apply_pos_overrides(&mut docs, p)?;
        }
        let inputs = to_inputs(&docs, &corpus, &vocab)?;
        let test = match &self.test {
            Some(p) => {
                let c = Corpus::read_jsonl(p)?;
                let d = build_docs(&c, &vocab, &text)?;
                Some((to_inputs(&d, &c, &vocab)?, truth_of(&c)?))
            }
            None => None,
        };
        let pretrained = match &self.pretrained {
            Some(p) => Some(Pretrained::load(p, arch.word_dim, Some(&vocab))?),
            None => None,
        };

        std::fs::create_dir_all(&self.out).map_err(|e| CliError::Usage(format!("{}: {e}", self.out.display())))?;
        vocab.save(&self.out.join("vocab.json"))?;
        write_json_file(
            &self.out.join("run.json"),
            &RunInfo {
                arch: arch.clone(),
                text,
                folds: tc.folds,
                epochs: tc.epochs,
                seed,
            },
        )?;

        let progress = |e: &EpochEvent| {
            eprintln!(
                "fold {} epoch {:>3}  loss {:.4}  val acc {:.4}",
                e.fold, e.epoch, e.loss, e.val_accuracy
            )
        };
        let run = train_cv(
            &corpus,
            &inputs,
            &vocab,
            pretrained.as_ref(),
            &arch,
            &tc,
            test.as_ref().map(|(t, _)| t.as_slice()),
            if quiet { None } else { Some(&progress) },
        )?;
        for (fold, err) in &run.failures {
            eprintln!("fold {fold} failed: {err}");
        }
        if run.folds.is_empty() {
            return Err(CliError::Failed("every fold failed".into()));
        }
        write_json_file(&self.out.join("folds.json"), &run.folds)?;

        let result = match &test {
            Some((t, truth)) => {
                let preds = predict_ensemble(&run.models, t)?;
                write_predictions(&self.out.join("test_predictions.jsonl"), &preds)?;
                evaluate(&preds, truth)?
            }
            None => AlgoResult::new(run.fold_accuracies(), None),
        };
        let mut report = EnsembleReport::default();
        report.insert(arch.variant.report_name(), result);
        report.save_json(&self.out.join("report.json"))?;
        print!("{report}");
        if !run.failures.is_empty() {
            return Err(CliError::Failed(format!("{} folds failed", run.failures.len())));
        }
        Ok(())
    }
}

#[derive(Args)]
pub struct Predict {
    /// Directory written by `train`
    #[arg(long, value_name = "DIR")]
    model_dir: PathBuf,
    #[arg(long, value_name = "FILE")]
    corpus: PathBuf,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

fn fold_checkpoints(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut found: Vec<(usize, PathBuf)> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter_map(|p| {
            let name = p.file_name()?.to_str()?;
            let k = name.strip_prefix("fold")?.strip_suffix(".gfus")?.parse().ok()?;
            Some((k, p))
        })
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(CliError::Usage(format!("no fold checkpoints in {}", dir.display())));
    }
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

impl Predict {
    pub fn run(self, cfg: &mut RunConfig) -> Result<(), CliError> {
        let info: RunInfo = read_json_file(&self.model_dir.join("run.json"))?;
        let vocab = Vocab::load(&self.model_dir.join("vocab.json"))?;
        let models: Vec<ModelParams<f32>> = fold_checkpoints(&self.model_dir)?
            .iter()
            .map(|p| load_checkpoint(p))
            .collect::<Result<_, _>>()?;
        let corpus = Corpus::read_jsonl(&self.corpus)?;
        let docs = build_docs(&corpus, &vocab, &info.text)?;
        let inputs: Vec<DocInput> = docs
            .iter()
            .map(|d| DocInput::new(d, &vocab, None))
            .collect::<Result<_, _>>()?;
        let preds = predict_ensemble(&models, &inputs)?;
        write_predictions(&self.out, &preds)?;
        let threshold = cfg.f64_or("coverage_threshold", 0.8)?;
        let cov = coverage(&preds, threshold)?;
        let female = preds.iter().filter(|p| p.voted_gender == Gender::Female).count();
        println!("{} predictions from {} fold models", preds.len(), models.len());
        println!(
            "female {female} ({:.2}%), male {} ({:.2}%)",
            100.0 * female as f64 / preds.len() as f64,
            preds.len() - female,
            100.0 * (preds.len() - female) as f64 / preds.len() as f64
        );
        println!("average probability above {threshold}: {cov}");
        Ok(())
    }
}

#[derive(Args)]
pub struct Evaluate {
    /// Labeled corpus JSONL, or a PAN truth `.txt` file
    #[arg(long, value_name = "FILE")]
    truth: Option<PathBuf>,
    /// Ensemble predictions to score, as NAME=FILE; repeatable
    #[arg(long = "pred", value_name = "NAME=FILE")]
    preds: Vec<String>,
    /// Existing report JSON to merge; repeatable
    #[arg(long, value_name = "FILE")]
    report: Vec<PathBuf>,
    /// Write the merged report JSON here
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

impl Evaluate {
    pub fn run(self) -> Result<(), CliError> {
        let mut report = EnsembleReport::default();
        for p in &self.report {
            report.merge(EnsembleReport::load_json(p)?);
        }
        if !self.preds.is_empty() {
            let truth_path = self
                .truth
                .as_ref()
                .ok_or_else(|| CliError::Usage("--pred needs --truth".into()))?;
            let truth = load_truth(truth_path)?;
            for spec in &self.preds {
                let (name, file) = spec
                    .split_once('=')
                    .ok_or_else(|| CliError::Usage(format!("--pred expects NAME=FILE, got {spec:?}")))?;
                let preds = read_predictions(Path::new(file))?;
                report.insert(name, evaluate(&preds, &truth)?);
            }
        }
        if report.algos.is_empty() {
            return Err(CliError::Usage("nothing to evaluate: give --pred or --report".into()));
        }
        if let Some(out) = &self.out {
            report.save_json(out)?;
        }
        print!("{report}");
        Ok(())
    }
}

#[derive(Args)]
pub struct Baseline {
    #[arg(long, value_name = "FILE")]
    corpus: PathBuf,
    #[arg(long, value_name = "FILE")]
    test: Option<PathBuf>,
    /// lr or svm; repeatable
    #[arg(long = "algo", default_values_t = vec!["lr".to_string(), "svm".to_string()])]
    algos: Vec<String>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

impl Baseline {
    pub fn run(self, cfg: &mut RunConfig) -> Result<(), CliError> {
        apply_flag(cfg, "folds", &self.folds)?;
        apply_flag(cfg, "seed", &self.seed)?;
        let seed = cfg.seed()?;
        let folds = cfg.usize_or("folds", 5)?;
        let tfidf = cfg.tfidf()?;
        let linear = cfg.linear()?;
        let algos: Vec<Algo> = self
            .algos
            .iter()
            .map(|a| a.parse())
            .collect::<Result<_, _>>()?;
        let corpus = Corpus::read_jsonl(&self.corpus)?;
        let docs = token_lists(&corpus);
        let test = match &self.test {
            Some(p) => {
                let c = Corpus::read_jsonl(p)?;
                let labels = c.labels()?;
                let ids: Vec<String> = c.users().iter().map(|u| u.user_id.clone()).collect();
                Some((token_lists(&c), labels, ids, truth_of(&c)?))
            }
            None => None,
        };
        let mut report = EnsembleReport::default();
        for algo in algos {
            let run = baseline_cv(
                &corpus,
                &docs,
                algo,
                folds,
                seed,
                &tfidf,
                &linear,
                test.as_ref().map(|(d, l, _, _)| (d.as_slice(), l.as_slice())),
            )?;
            let tag = algo.report_name().to_ascii_lowercase();
            for (i, m) in run.models.iter().enumerate() {
                save_baseline(m, &self.out.join(format!("{tag}_fold{i}.gflb")))?;
            }
            let result = match &test {
                Some((d, _, ids, truth)) => {
                    let preds = predict_baseline_ensemble(&run.models, ids, d)?;
                    write_predictions(&self.out.join(format!("{tag}_test_predictions.jsonl")), &preds)?;
                    evaluate(&preds, truth)?
                }
                None => AlgoResult::new(run.folds.iter().map(|f| f.val_accuracy).collect(), None),
            };
            report.insert(algo.report_name(), result);
        }
        report.save_json(&self.out.join("report.json"))?;
        print!("{report}");
        Ok(())
    }
}

#[derive(Args)]
pub struct Analyze {
    /// Construct-labeled tweets JSONL
    #[arg(long, value_name = "FILE")]
    tweets: PathBuf,
    /// Gender predictions JSONL (from `predict`)
    #[arg(long, value_name = "FILE")]
    predictions: PathBuf,
    /// Plot-ready CSV output
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// JSON mirror of the CSV
    #[arg(long, value_name = "FILE")]
    json: Option<PathBuf>,
}

impl Analyze {
    pub fn run(self, cfg: &mut RunConfig) -> Result<(), CliError> {
        let acfg = cfg.analysis()?;
        let tweets = read_labeled_tweets(&self.tweets)?;
        let preds = read_predictions(&self.predictions)?;
        let tables = build_tables(&tweets, &preds, &acfg)?;
        write_csv(&tables, &self.out)?;
        if let Some(j) = &self.json {
            write_json(&tables, j)?;
        }
        let sig = tables.iter().filter(|t| t.significant).count();
        println!(
            "{} tables, {sig} significant at p < {:.4} ({} / {})",
            tables.len(),
            acfg.threshold(),
            acfg.alpha,
            acfg.comparisons
        );
        Ok(())
    }
}

#[derive(Subcommand)]
pub enum Synth {
    /// Labeled authors with planted class signal
    Gender(SynthGender),
    /// Construct-labeled tweets with known odds ratios, plus author genders
    Tweets(SynthTweets),
}

#[derive(Args)]
pub struct SynthGender {
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Also write a held-out corpus drawn from the same generator
    #[arg(long, value_name = "FILE")]
    test_out: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    test_users_per_class: usize,
    #[arg(long, default_value_t = 200)]
    users_per_class: usize,
    #[arg(long, default_value_t = 20)]
    tweets_per_user: usize,
    #[arg(long, default_value_t = 400)]
    vocab_size: usize,
    #[arg(long, default_value_t = 0.3)]
    marker_rate: f64,
    /// word, char_suffix, pos_template or all
    #[arg(long, default_value = "all")]
    channel: String,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
pub struct SynthTweets {
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Predictions JSONL holding each author's true gender
    #[arg(long, value_name = "FILE")]
    predictions_out: PathBuf,
    /// JSON list of the implied odds ratio per construct and year
    #[arg(long, value_name = "FILE")]
    implied_out: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    odds_ratio: f64,
    #[arg(long, default_value_t = 100_000)]
    tweets_per_year: usize,
    #[arg(long, default_value_t = 2000)]
    users: usize,
    /// Inclusive year range FIRST-LAST
    #[arg(long, default_value = "2014-2018")]
    years: String,
    #[arg(long)]
    seed: Option<u64>,
}

impl Synth {
    pub fn run(self, cfg: &mut RunConfig) -> Result<(), CliError> {
        match self {
            Synth::Gender(s) => {
                apply_flag(cfg, "seed", &s.seed)?;
                let test_n = if s.test_out.is_some() { s.test_users_per_class } else { 0 };
                let spec = GenderSpec {
                    users_per_class: s.users_per_class + test_n,
                    tweets_per_user: s.tweets_per_user,
                    vocab_size: s.vocab_size,
                    marker_rate: [s.marker_rate; 2],
                    channel: s.channel.parse::<Channel>()?,
                    seed: cfg.seed()?,
                };
                let all = gen_gender_corpus(&spec)?;
                let n_train = 2 * s.users_per_class;
                let train = all.subset(&(0..n_train).collect::<Vec<_>>());
                train.write_jsonl(&s.out)?;
                if let Some(t) = &s.test_out {
                    all.subset(&(n_train..all.len()).collect::<Vec<_>>()).write_jsonl(t)?;
                }
                println!("{} training authors, {} held out", train.len(), all.len() - n_train);
                Ok(())
            }
            Synth::Tweets(s) => {
                apply_flag(cfg, "seed", &s.seed)?;
                let (a, b) = s
                    .years
                    .split_once('-')
                    .ok_or_else(|| CliError::Usage(format!("--years expects FIRST-LAST, got {:?}", s.years)))?;
                let (first, last): (i32, i32) = (
                    a.trim().parse().map_err(|_| CliError::Usage(format!("bad year {a:?}")))?,
                    b.trim().parse().map_err(|_| CliError::Usage(format!("bad year {b:?}")))?,
                );
                let spec = LabeledSpec {
                    years: (first..=last).collect(),
                    n_users: s.users,
                    ..LabeledSpec::with_odds_ratio(s.odds_ratio, s.tweets_per_year, cfg.seed()?)
                };
                let out = gen_labeled_tweets(&spec)?;
                write_labeled_tweets(&s.out, &out.tweets)?;
                let preds: Vec<GenderPrediction> = out
                    .truth
                    .iter()
                    .map(|(id, &g)| GenderPrediction::new(id.clone(), g, vec![1.0]))
                    .collect();
                write_predictions(&s.predictions_out, &preds)?;
                if let Some(p) = &s.implied_out {
                    write_json_file(p, &out.implied)?;
                }
                println!("{} tweets by {} authors", out.tweets.len(), preds.len());
                Ok(())
            }
        }
    }
}

#[derive(Args)]
pub struct Gradcheck {
    #[arg(long, default_value = "cnn_char_pos")]
    arch: String,
    #[arg(long)]
    seed: Option<u64>,
}

impl Gradcheck {
    pub fn run(self, cfg: &mut RunConfig) -> Result<(), CliError> {
        apply_flag(cfg, "seed", &self.seed)?;
        let variant: Variant = self.arch.parse()?;
        let report = model_gradcheck(variant, cfg.seed()?)?;
        for e in &report.entries {
            println!(
                "{:<4} {:<16} {:>6} coords  max rel err {:.2e}",
                if e.passed { "ok" } else { "FAIL" },
                e.tensor,
                e.checked,
                e.max_rel_err
            );
        }
        println!("max relative error {:.2e} (tolerance {:.0e})", report.max_rel_err(), report.tolerance);
        if report.passed() {
            Ok(())
        } else {
            Err(CliError::Failed("gradient check failed".into()))
        }
    }
}

#[derive(Args)]
pub struct Selftest {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl Selftest {
    pub fn run(self) -> Result<(), CliError> {
        let checks = selftest(self.seed);
        for c in &checks {
            println!(
                "{} {} ({}; {:.2}s)",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail,
                c.seconds
            );
        }
        let failed = checks.iter().filter(|c| !c.passed).count();
        if failed == 0 {
            Ok(())
        } else {
            Err(CliError::Failed(format!("{failed} self-test checks failed")))
        }
    }
}
