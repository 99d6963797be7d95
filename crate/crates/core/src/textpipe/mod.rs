//! Tweet normalization, tokenization and POS tagging, producing the
//! per-author token / character / tag sequences the models consume.

mod normalize;
mod pos;
mod tokenize;

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, UserRecord};
use crate::error::{Error, Result};
use crate::io;

pub use normalize::{normalize, MARKERS};
pub use pos::{pos_tag, tag_id, tag_name, MRK_TAG, PAD_TAG, TAGSET, UNK_TAG};
pub use tokenize::{is_marker, tokenize};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_CHAR: u16 = 0;
pub const UNK_CHAR: u16 = 1;
/// Printable ASCII (32..=126) plus the two reserved ids.
pub const CHAR_VOCAB_SIZE: usize = 97;

/// Bounds applied while building documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextConfig {
    pub max_token_chars: usize,
    pub max_doc_tokens: usize,
    pub min_word_freq: usize,
}

impl Default for TextConfig {
    fn default() -> Self {
        TextConfig {
            max_token_chars: 20,
            max_doc_tokens: 4000,
            min_word_freq: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub word: u32,
    pub chars: Vec<u16>,
    pub pos: u16,
}

/// All tweets of one author, normalized, tokenized, tagged and concatenated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDoc {
    pub user_id: String,
    pub tokens: Vec<Token>,
}

impl TokenizedDoc {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surfaces(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.surface.as_str()).collect()
    }
}

/// Frozen word, character and tag maps. Id 0 is padding in each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
    min_word_freq: usize,
    fingerprint: String,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    format: String,
    version: u32,
    min_word_freq: usize,
    words: Vec<String>,
}

const VOCAB_FORMAT: &str = "genderfuse-vocab";

impl Vocab {
    /// Builds the word map from corpus token frequencies. Words are ordered by
    /// descending frequency, ties broken lexicographically.
    pub fn build(corpus: &Corpus, min_word_freq: usize) -> Vocab {
        let counts = corpus
            .users()
            .par_iter()
            .map(|u| {
                let mut c: HashMap<String, usize> = HashMap::new();
                for t in &u.tweets {
                    for tok in tokenize(&normalize(t)) {
                        *c.entry(tok).or_default() += 1;
                    }
                }
                c
            })
            .reduce(HashMap::new, |mut a, b| {
                for (k, v) in b {
                    *a.entry(k).or_default() += v;
                }
                a
            });
        let mut words: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|&(_, n)| n >= min_word_freq.max(1))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_words(words.into_iter().map(|(w, _)| w).collect(), min_word_freq)
    }

    /// Builds a vocabulary from an ordered word list (reserved ids excluded).
    pub fn from_words(words: Vec<String>, min_word_freq: usize) -> Vocab {
        let mut all = Vec::with_capacity(words.len() + 2);
        all.push("<pad>".to_string());
        all.push("<unk>".to_string());
        all.extend(words);
        let index = all
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        let mut h = Sha256::new();
        for w in &all {
            h.update(w.as_bytes());
            h.update([0u8]);
        }
        h.update(format!("chars:{CHAR_VOCAB_SIZE};"));
        for t in TAGSET {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        let fingerprint = hex::encode(&h.finalize()[..16]);
        Vocab {
            words: all,
            index,
            min_word_freq,
            fingerprint,
        }
    }

    pub fn word_id(&self, w: &str) -> u32 {
        self.index.get(w).copied().unwrap_or(UNK_ID)
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    /// Number of word ids including PAD and UNK.
    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    pub fn n_chars(&self) -> usize {
        CHAR_VOCAB_SIZE
    }

    pub fn n_tags(&self) -> usize {
        TAGSET.len()
    }

    pub fn char_id(c: char) -> u16 {
        match c as u32 {
            v @ 32..=126 => (v - 30) as u16,
            _ => UNK_CHAR,
        }
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn min_word_freq(&self) -> usize {
        self.min_word_freq
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = VocabFile {
            format: VOCAB_FORMAT.into(),
            version: 1,
            min_word_freq: self.min_word_freq,
            words: self.words[2..].to_vec(),
        };
        let bytes = serde_json::to_vec(&f).map_err(|e| Error::Data(e.to_string()))?;
        io::atomic_write(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let text = io::read_to_string(path)?;
        let f: VocabFile =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, 1, e.to_string()))?;
        if f.format != VOCAB_FORMAT {
            return Err(Error::Format(format!("{} is not a vocabulary file", path.display())));
        }
        if f.version != 1 {
            return Err(Error::Version {
                found: f.version,
                expected: 1,
            });
        }
        Ok(Self::from_words(f.words, f.min_word_freq))
    }
}

/// Normalizes, tokenizes and tags one tweet.
pub fn process_tweet(raw: &str) -> (Vec<String>, Vec<u16>) {
    let toks = tokenize(&normalize(raw));
    let tags = pos_tag(&toks);
    (toks, tags)
}

pub fn build_doc(user: &UserRecord, vocab: &Vocab, cfg: &TextConfig) -> Result<TokenizedDoc> {
    let mut tokens = Vec::new();
    'tweets: for tweet in &user.tweets {
        let (toks, tags) = process_tweet(tweet);
        for (surface, pos) in toks.into_iter().zip(tags) {
            if tokens.len() >= cfg.max_doc_tokens {
                break 'tweets;
            }
            let chars: Vec<u16> = surface
                .chars()
                .take(cfg.max_token_chars)
                .map(Vocab::char_id)
                .collect();
            tokens.push(Token {
                word: vocab.word_id(&surface),
                surface,
                chars,
                pos,
            });
        }
    }
    if tokens.is_empty() {
        return Err(Error::Data(format!("user {} has no tokens", user.user_id)));
    }
    Ok(TokenizedDoc {
        user_id: user.user_id.clone(),
        tokens,
    })
}

/// Builds documents for a whole corpus, preserving corpus order.
pub fn build_docs(corpus: &Corpus, vocab: &Vocab, cfg: &TextConfig) -> Result<Vec<TokenizedDoc>> {
    corpus
        .users()
        .par_iter()
        .map(|u| build_doc(u, vocab, cfg))
        .collect()
}

/// Externally computed tags for one document, one per token.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosOverride {
    pub user_id: String,
    pub tags: Vec<String>,
}

/// Replaces tags of the documents named in an override file.
pub fn apply_pos_overrides(docs: &mut [TokenizedDoc], path: &Path) -> Result<usize> {
    let rows: Vec<(usize, PosOverride)> = io::read_jsonl(path)?;
    let by_id: HashMap<&str, usize> = docs
        .iter()
        .enumerate()
        .map(|(i, d)| (d.user_id.as_str(), i))
        .collect();
    let mut updates = Vec::new();
    for (line, o) in &rows {
        let Some(&i) = by_id.get(o.user_id.as_str()) else {
            return Err(Error::parse(path, *line, format!("unknown user {}", o.user_id)));
        };
        if o.tags.len() != docs[i].tokens.len() {
            return Err(Error::parse(
                path,
                *line,
                format!(
                    "{} tags for a document of {} tokens",
                    o.tags.len(),
                    docs[i].tokens.len()
                ),
            ));
        }
        let ids = o
            .tags
            .iter()
            .map(|t| tag_id(t).ok_or_else(|| Error::parse(path, *line, format!("unknown tag {t:?}"))))
            .collect::<Result<Vec<u16>>>()?;
        updates.push((i, ids));
    }
    let n = updates.len();
    for (i, ids) in updates {
        for (tok, id) in docs[i].tokens.iter_mut().zip(ids) {
            tok.pos = id;
        }
    }
    Ok(n)
}
