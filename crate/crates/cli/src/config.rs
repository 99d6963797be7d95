//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::Path;

use genderfuse::baseline::{LinearConfig, TfidfConfig};
use genderfuse::model::{ArchConfig, Variant};
use genderfuse::stats::AnalysisConfig;
use genderfuse::textpipe::TextConfig;

use crate::CliError;

pub struct KeyDoc {
    pub key: &'static str,
    pub default: &'static str,
    pub doc: &'static str,
}

/// Every recognized key. Defaults follow the reference setting where one
/// exists; the rest are artifact choices.
pub const KEYS: &[KeyDoc] = &[
    KeyDoc { key: "arch", default: "cnn_char_pos", doc: "model variant: cnn, cnn_char, cnn_char_pos" },
    KeyDoc { key: "preset", default: "reference", doc: "size preset the arch keys start from: reference, desk, tiny" },
    KeyDoc { key: "word_dim", default: "200", doc: "word embedding size (reference setting)" },
    KeyDoc { key: "char_dim", default: "50", doc: "character embedding size (reference setting)" },
    KeyDoc { key: "pos_dim", default: "10", doc: "part-of-speech embedding size (reference setting)" },
    KeyDoc { key: "char_filters", default: "50", doc: "character convolution filters (reference setting)" },
    KeyDoc { key: "char_filter_width", default: "3", doc: "character convolution width (reference setting)" },
    KeyDoc { key: "word_filter_widths", default: "1,2,3", doc: "word convolution widths (reference setting)" },
    KeyDoc { key: "word_filters", default: "2048", doc: "word convolution filters (reference setting)" },
    KeyDoc { key: "filter_split", default: "per_width", doc: "word_filters per width, or split across widths: per_width, total" },
    KeyDoc { key: "dense_units", default: "256", doc: "hidden dense layer size (reference setting)" },
    KeyDoc { key: "dropout", default: "0.2", doc: "dropout rate after the dense layer (reference setting)" },
    KeyDoc { key: "l2", default: "1e-5", doc: "L2 penalty on convolution and dense weights (reference setting)" },
    KeyDoc { key: "lr", default: "1e-3", doc: "learning rate (reference setting)" },
    KeyDoc { key: "batch_size", default: "64", doc: "minibatch size (reference setting)" },
    KeyDoc { key: "optimizer", default: "adam", doc: "adam or sgd" },
    KeyDoc { key: "freeze_word_embeddings", default: "false", doc: "keep word embeddings fixed during training" },
    KeyDoc { key: "init_scale", default: "0.05", doc: "uniform init range for weights and embeddings" },
    KeyDoc { key: "min_word_freq", default: "1", doc: "minimum corpus frequency for a word id" },
    KeyDoc { key: "max_doc_tokens", default: "4000", doc: "tokens kept per author" },
    KeyDoc { key: "max_token_chars", default: "20", doc: "characters kept per token" },
    KeyDoc { key: "folds", default: "5", doc: "cross-validation folds (reference setting)" },
    KeyDoc { key: "epochs", default: "20", doc: "training epochs per fold; the best epoch is kept" },
    KeyDoc { key: "seed", default: "(required)", doc: "master random seed" },
    KeyDoc { key: "jobs", default: "1", doc: "folds trained concurrently" },
    KeyDoc { key: "ngram_min", default: "1", doc: "baseline smallest word n-gram" },
    KeyDoc { key: "ngram_max", default: "2", doc: "baseline largest word n-gram" },
    KeyDoc { key: "min_df", default: "2", doc: "baseline minimum document frequency" },
    KeyDoc { key: "sublinear_tf", default: "true", doc: "baseline term frequency 1 + ln(count)" },
    KeyDoc { key: "lambda", default: "1e-4", doc: "baseline ridge strength" },
    KeyDoc { key: "baseline_epochs", default: "20", doc: "baseline SGD passes" },
    KeyDoc { key: "baseline_lr", default: "0.5", doc: "baseline initial SGD step" },
    KeyDoc { key: "alpha", default: "0.05", doc: "nominal significance level (reference setting)" },
    KeyDoc { key: "comparisons", default: "25", doc: "Bonferroni comparisons (reference setting: 5 tests x 5 years)" },
    KeyDoc { key: "haldane", default: "true", doc: "add 0.5 to all cells of a table with a zero cell" },
    KeyDoc { key: "yates", default: "false", doc: "Yates continuity correction" },
    KeyDoc { key: "denominator", default: "all", doc: "not-in-construct cells: all tweets, or labeled tweets only" },
    KeyDoc { key: "coverage_threshold", default: "0.8", doc: "average probability a prediction must exceed to be covered" },
];

/// Help text listing every key.
pub fn keys_help() -> String {
    let mut s = String::from("Configuration keys (file lines `key = value`, or --set key=value):\n");
    for k in KEYS {
        s.push_str(&format!("  {:<24} {:<12} {}\n", k.key, k.default, k.doc));
    }
    s.push_str("\nLater sources win: GENDERFUSE_CONFIG file, --config file, --set, dedicated flags.\n");
    s
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| CliError::Usage(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::Usage(format!("{key}: expected true or false, got {v:?}"))),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = key.trim();
        if !KEYS.iter().any(|k| k.key == key) {
            return Err(CliError::Usage(format!("unknown config key {key:?}")));
        }
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn merge_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{origin}:{}: expected key = value", i + 1)))?;
            self.set(k, v)
                .map_err(|e| CliError::Usage(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        self.merge_text(&text, &path.display().to_string())
    }

    /// `key=value` from the command line.
    pub fn merge_assignment(&mut self, kv: &str) -> Result<(), CliError> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {kv:?}")))?;
        self.set(k, v)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn typed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.get(key).map(|v| parse(key, v)).transpose()
    }

    fn flag(&self, key: &str) -> Result<Option<bool>, CliError> {
        self.get(key).map(|v| parse_bool(key, v)).transpose()
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.typed("seed")?
            .ok_or_else(|| CliError::Usage("this command needs --seed".into()))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, CliError> {
        Ok(self.typed(key)?.unwrap_or(default))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, CliError> {
        Ok(self.typed(key)?.unwrap_or(default))
    }

    pub fn arch(&self) -> Result<ArchConfig, CliError> {
        let variant: Variant = self.typed("arch")?.unwrap_or(Variant::CnnCharPos);
        let mut a = match self.get("preset").unwrap_or("reference") {
            "reference" => ArchConfig::reference(variant),
            "desk" => ArchConfig::desk(variant),
            "tiny" => ArchConfig::tiny(variant),
            p => return Err(CliError::Usage(format!("unknown preset {p:?} (reference, desk, tiny)"))),
        };
        macro_rules! over {
            ($($field:ident),*) => {$(
                if let Some(v) = self.typed(stringify!($field))? {
                    a.$field = v;
                }
            )*};
        }
        over!(word_dim, char_dim, pos_dim, char_filters, char_filter_width, word_filters, filter_split,
              dense_units, dropout, l2, lr, batch_size, optimizer, init_scale);
        if let Some(v) = self.flag("freeze_word_embeddings")? {
            a.freeze_word_embeddings = v;
        }
        if let Some(v) = self.get("word_filter_widths") {
            a.word_filter_widths = v
                .split(',')
                .map(|w| parse("word_filter_widths", w.trim()))
                .collect::<Result<_, _>>()?;
        }
        a.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(a)
    }

    pub fn text(&self) -> Result<TextConfig, CliError> {
        let d = TextConfig::default();
        Ok(TextConfig {
            min_word_freq: self.usize_or("min_word_freq", d.min_word_freq)?,
            max_doc_tokens: self.usize_or("max_doc_tokens", d.max_doc_tokens)?,
            max_token_chars: self.usize_or("max_token_chars", d.max_token_chars)?,
        })
    }

    pub fn tfidf(&self) -> Result<TfidfConfig, CliError> {
        let d = TfidfConfig::default();
        Ok(TfidfConfig {
            ngram_min: self.usize_or("ngram_min", d.ngram_min)?,
            ngram_max: self.usize_or("ngram_max", d.ngram_max)?,
            min_df: self.usize_or("min_df", d.min_df)?,
            sublinear_tf: self.flag("sublinear_tf")?.unwrap_or(d.sublinear_tf),
        })
    }

    pub fn linear(&self) -> Result<LinearConfig, CliError> {
        let d = LinearConfig::default();
        Ok(LinearConfig {
            lambda: self.f64_or("lambda", d.lambda)?,
            epochs: self.usize_or("baseline_epochs", d.epochs)?,
            lr: self.f64_or("baseline_lr", d.lr)?,
        })
    }

    pub fn analysis(&self) -> Result<AnalysisConfig, CliError> {
        let d = AnalysisConfig::default();
        let cfg = AnalysisConfig {
            alpha: self.f64_or("alpha", d.alpha)?,
            comparisons: self.usize_or("comparisons", d.comparisons)?,
            haldane: self.flag("haldane")?.unwrap_or(d.haldane),
            yates: self.flag("yates")?.unwrap_or(d.yates),
            denominator: self.typed("denominator")?.unwrap_or(d.denominator),
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}
