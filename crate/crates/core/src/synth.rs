//! Synthetic corpora with known signal: labeled authors for the classifiers
//! and construct-labeled tweets with known odds ratios for the statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Gender, HbmConstruct, LabeledTweet, TpbAttitude, UserRecord};
use crate::error::{Error, Result};
use crate::stats::Construct;

/// Where the class signal is placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// Class-specific marker words.
    Word,
    /// Fresh one-off words whose only shared trait is a class suffix.
    CharSuffix,
    /// A class-specific tag order over shared words.
    PosTemplate,
    All,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Word => "word",
            Channel::CharSuffix => "char_suffix",
            Channel::PosTemplate => "pos_template",
            Channel::All => "all",
        }
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Channel::Word, Channel::CharSuffix, Channel::PosTemplate, Channel::All]
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown channel {s:?} (word, char_suffix, pos_template, all)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderSpec {
    pub users_per_class: usize,
    pub tweets_per_user: usize,
    pub vocab_size: usize,
    /// Per-tweet signal rate, indexed by class (female, male).
    pub marker_rate: [f64; 2],
    pub channel: Channel,
    pub seed: u64,
}

impl Default for GenderSpec {
    fn default() -> Self {
        GenderSpec {
            users_per_class: 200,
            tweets_per_user: 20,
            vocab_size: 400,
            marker_rate: [0.3, 0.3],
            channel: Channel::All,
            seed: 0,
        }
    }
}

impl GenderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.users_per_class == 0 || self.tweets_per_user == 0 {
            return Err(Error::InvalidArgument("users and tweets per user must be positive".into()));
        }
        if self.vocab_size < 10 {
            return Err(Error::InvalidArgument("vocab_size must be at least 10".into()));
        }
        if self.marker_rate.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::InvalidArgument(format!(
                "marker rates must be in [0, 1], got {:?}",
                self.marker_rate
            )));
        }
        Ok(())
    }
}

const SYLLABLES: [&str; 20] = [
    "ba", "do", "ke", "li", "mu", "na", "po", "ri", "sa", "to", "vu", "wi", "ge", "fo", "hu", "ja", "ze", "ro",
    "me", "ti",
];

pub const WORD_MARKERS: [[&str; 3]; 2] = [["lovelyx", "glimmer", "petalbright"], ["bruhzone", "gritmax", "ironclad"]];

/// Both suffixes tag as nouns, so the part-of-speech channel stays silent.
pub const CHAR_SUFFIXES: [&str; 2] = ["ness", "ment"];

fn syllable_word(rng: &mut impl Rng, n: usize) -> String {
    (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect()
}

/// Deterministic shared vocabulary of distinct vowel-final words.
pub fn shared_vocab(size: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0fca_b000);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        let n = 2 + out.len() % 2;
        let w = syllable_word(&mut rng, n);
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn noise(rng: &mut impl Rng, words: &mut Vec<String>, vocab: &[String]) {
    let r: f64 = rng.gen();
    if r < 0.15 {
        words.push(format!("#{}", vocab.choose(rng).unwrap()));
    } else if r < 0.25 {
        words.push(format!("https://t.co/{}", syllable_word(rng, 3)));
    } else if r < 0.35 {
        words.insert(0, format!("@{}{}", syllable_word(rng, 2), rng.gen_range(1..100)));
    } else if r < 0.4 {
        words.push(rng.gen_range(1..2020).to_string());
    }
}

/// Labeled authors, half female and half male, interleaved.
pub fn gen_gender_corpus(spec: &GenderSpec) -> Result<Corpus> {
    spec.validate()?;
    let vocab = shared_vocab(spec.vocab_size, spec.seed);
    let nouns = &vocab[..vocab.len() / 4];
    let verbs = &vocab[vocab.len() / 4..vocab.len() / 2];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut users = Vec::with_capacity(2 * spec.users_per_class);
    for i in 0..2 * spec.users_per_class {
        let gender = if i % 2 == 0 { Gender::Female } else { Gender::Male };
        let g = gender.index();
        let mut tweets = Vec::with_capacity(spec.tweets_per_user);
        for _ in 0..spec.tweets_per_user {
            let len = rng.gen_range(5..=10);
            let mut words: Vec<String> = (0..len)
                .map(|_| {
                    // Squaring skews toward low indices: a few frequent words.
                    let u: f64 = rng.gen();
                    vocab[((u * u) * vocab.len() as f64) as usize].clone()
                })
                .collect();
            if rng.gen_bool(spec.marker_rate[g]) {
                let channel = match spec.channel {
                    Channel::All => *[Channel::Word, Channel::CharSuffix, Channel::PosTemplate]
                        .choose(&mut rng)
                        .unwrap(),
                    c => c,
                };
                let at = rng.gen_range(0..=words.len());
                let inject: Vec<String> = match channel {
                    Channel::Word => vec![WORD_MARKERS[g].choose(&mut rng).unwrap().to_string()],
                    Channel::CharSuffix => {
                        vec![format!("{}{}", syllable_word(&mut rng, 3), CHAR_SUFFIXES[g])]
                    }
                    _ => {
                        let noun = nouns.choose(&mut rng).unwrap();
                        let verb = format!("{}ed", verbs.choose(&mut rng).unwrap());
                        if gender == Gender::Female {
                            vec![verb, "the".into(), noun.clone()]
                        } else {
                            vec!["the".into(), noun.clone(), verb]
                        }
                    }
                };
                words.splice(at..at, inject);
            }
            noise(&mut rng, &mut words, &vocab);
            tweets.push(words.join(" "));
        }
        users.push(UserRecord {
            user_id: format!("user{i:05}"),
            gender: Some(gender),
            tweets,
        });
    }
    Corpus::new(users)
}

/// Odds of males over odds of females.
pub fn implied_odds_ratio(p_male: f64, p_female: f64) -> f64 {
    (p_male / (1.0 - p_male)) / (p_female / (1.0 - p_female))
}

/// Male rate giving odds ratio `or` against female rate `p_female`.
pub fn male_rate_for(or: f64, p_female: f64) -> f64 {
    let odds = or * p_female / (1.0 - p_female);
    odds / (1.0 + odds)
}

/// Per-gender construct rates, indexed (female, male).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub female: f64,
    pub male: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSpec {
    pub years: Vec<i32>,
    pub tweets_per_year: usize,
    pub n_users: usize,
    pub female_share: f64,
    pub rates: BTreeMap<Construct, Rates>,
    pub seed: u64,
}

impl LabeledSpec {
    /// Every construct gets female rate 0.25 and the male rate implying `or`.
    pub fn with_odds_ratio(or: f64, tweets_per_year: usize, seed: u64) -> Self {
        let female = 0.25;
        let male = male_rate_for(or, female);
        LabeledSpec {
            years: (2014..=2018).collect(),
            tweets_per_year,
            n_users: 2000,
            female_share: 0.5,
            rates: Construct::ALL.into_iter().map(|c| (c, Rates { female, male })).collect(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.years.is_empty() || self.tweets_per_year == 0 || self.n_users < 2 {
            return Err(Error::InvalidArgument(
                "need at least one year, one tweet per year and two users".into(),
            ));
        }
        if !(self.female_share > 0.0 && self.female_share < 1.0) {
            return Err(Error::InvalidArgument("female_share must be in (0, 1)".into()));
        }
        for (c, r) in &self.rates {
            if !(0.0..=1.0).contains(&r.female) || !(0.0..=1.0).contains(&r.male) {
                return Err(Error::InvalidArgument(format!("{c} rates must be in [0, 1]")));
            }
        }
        Ok(())
    }
}

impl Default for LabeledSpec {
    fn default() -> Self {
        LabeledSpec::with_odds_ratio(2.0, 100_000, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpliedOr {
    pub construct: Construct,
    pub year: i32,
    pub odds_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSynth {
    pub tweets: Vec<LabeledTweet>,
    pub truth: BTreeMap<String, Gender>,
    pub implied: Vec<ImpliedOr>,
}

/// Tweets whose construct labels are Bernoulli draws at the author's
/// gender rate. A TPB tweet that is not positive is negative or unlabeled
/// with equal chance.
pub fn gen_labeled_tweets(spec: &LabeledSpec) -> Result<LabeledSynth> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_female = ((spec.n_users as f64 * spec.female_share).round() as usize).clamp(1, spec.n_users - 1);
    let truth: BTreeMap<String, Gender> = (0..spec.n_users)
        .map(|i| {
            let g = if i < n_female { Gender::Female } else { Gender::Male };
            (format!("author{i:06}"), g)
        })
        .collect();
    let users: Vec<(&String, Gender)> = truth.iter().map(|(k, &g)| (k, g)).collect();
    let mut tweets = Vec::with_capacity(spec.years.len() * spec.tweets_per_year);
    for &year in &spec.years {
        for i in 0..spec.tweets_per_year {
            let (user, g) = users[rng.gen_range(0..users.len())];
            let mut t = LabeledTweet {
                tweet_id: format!("{year}-{i}"),
                user_id: user.clone(),
                year,
                hbm: BTreeSet::new(),
                tpb: None,
            };
            for (&c, r) in &spec.rates {
                let p = if g == Gender::Male { r.male } else { r.female };
                let hit = rng.gen_bool(p);
                match c {
                    Construct::Susceptibility => hit.then(|| t.hbm.insert(HbmConstruct::Susceptibility)),
                    Construct::Severity => hit.then(|| t.hbm.insert(HbmConstruct::Severity)),
                    Construct::Benefits => hit.then(|| t.hbm.insert(HbmConstruct::Benefits)),
                    Construct::Barriers => hit.then(|| t.hbm.insert(HbmConstruct::Barriers)),
                    Construct::TpbPositive => {
                        t.tpb = if hit {
                            Some(TpbAttitude::Positive)
                        } else if rng.gen_bool(0.5) {
                            Some(TpbAttitude::Negative)
                        } else {
                            None
                        };
                        None
                    }
                };
            }
            tweets.push(t);
        }
    }
    let implied = Construct::ALL
        .into_iter()
        .flat_map(|c| spec.years.iter().map(move |&y| (c, y)))
        .filter_map(|(c, year)| {
            spec.rates.get(&c).map(|r| ImpliedOr {
                construct: c,
                year,
                odds_ratio: implied_odds_ratio(r.male, r.female),
            })
        })
        .collect();
    Ok(LabeledSynth { tweets, truth, implied })
}
