//! Data model for author corpora, construct-labeled tweets and ensemble
//! predictions, plus JSONL persistence and PAN-format import.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::io;

/// Binary author gender. The class index is fixed: female = 0, male = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Female, Gender::Male];

    pub fn index(self) -> usize {
        match self {
            Gender::Female => 0,
            Gender::Male => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Gender> {
        match i {
            0 => Some(Gender::Female),
            1 => Some(Gender::Male),
            _ => None,
        }
    }

    pub fn other(self) -> Gender {
        match self {
            Gender::Female => Gender::Male,
            Gender::Male => Gender::Female,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "female" => Ok(Gender::Female),
            "male" => Ok(Gender::Male),
            _ => Err(Error::Data(format!("unknown gender token {s:?}"))),
        }
    }
}

impl Serialize for Gender {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Gender {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One author: id, optional gender label and raw tweets in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    #[serde(default)]
    pub gender: Option<Gender>,
    pub tweets: Vec<String>,
}

impl UserRecord {
    pub fn validate(&self) -> Result<()> {
        if self.user_id.is_empty() {
            return Err(Error::Data("empty user_id".into()));
        }
        if self.tweets.is_empty() {
            return Err(Error::Data(format!("user {} has no tweets", self.user_id)));
        }
        if let Some(i) = self.tweets.iter().position(|t| t.trim().is_empty()) {
            return Err(Error::Data(format!(
                "user {} tweet {} is empty",
                self.user_id, i
            )));
        }
        Ok(())
    }
}

/// An immutable, validated collection of authors with unique ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    users: Vec<UserRecord>,
}

impl Corpus {
    pub fn new(users: Vec<UserRecord>) -> Result<Self> {
        let mut seen = HashMap::with_capacity(users.len());
        for (i, u) in users.iter().enumerate() {
            u.validate()?;
            if let Some(prev) = seen.insert(u.user_id.as_str(), i) {
                return Err(Error::Data(format!(
                    "duplicate user_id {:?} at records {} and {}",
                    u.user_id, prev, i
                )));
            }
        }
        Ok(Corpus { users })
    }

    pub fn users(&self) -> &[UserRecord] {
        &self.users
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn into_users(self) -> Vec<UserRecord> {
        self.users
    }

    /// Gender labels in corpus order; errors on the first unlabeled user.
    pub fn labels(&self) -> Result<Vec<Gender>> {
        self.users
            .iter()
            .map(|u| {
                u.gender
                    .ok_or_else(|| Error::Data(format!("user {} has no gender label", u.user_id)))
            })
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            users: indices.iter().map(|&i| self.users[i].clone()).collect(),
        }
    }

    pub fn read_jsonl(path: &Path) -> Result<Corpus> {
        let rows: Vec<(usize, UserRecord)> = io::read_jsonl(path)?;
        let mut seen: HashMap<String, usize> = HashMap::new();
        let mut users = Vec::with_capacity(rows.len());
        for (line, u) in rows {
            u.validate().map_err(|e| Error::parse(path, line, e.to_string()))?;
            if let Some(prev) = seen.insert(u.user_id.clone(), line) {
                return Err(Error::parse(
                    path,
                    line,
                    format!("duplicate user_id {:?} (lines {prev} and {line})", u.user_id),
                ));
            }
            users.push(u);
        }
        Ok(Corpus { users })
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        io::write_jsonl(path, &self.users)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HbmConstruct {
    Susceptibility,
    Severity,
    Benefits,
    Barriers,
}

impl HbmConstruct {
    pub const ALL: [HbmConstruct; 4] = [
        HbmConstruct::Susceptibility,
        HbmConstruct::Severity,
        HbmConstruct::Benefits,
        HbmConstruct::Barriers,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TpbAttitude {
    Positive,
    Negative,
    Neutral,
}

/// A tweet carrying health-belief construct labels from an upstream classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledTweet {
    pub tweet_id: String,
    pub user_id: String,
    pub year: i32,
    #[serde(default)]
    pub hbm: BTreeSet<HbmConstruct>,
    #[serde(default)]
    pub tpb: Option<TpbAttitude>,
}

pub fn read_labeled_tweets(path: &Path) -> Result<Vec<LabeledTweet>> {
    io::read_jsonl::<LabeledTweet>(path)?
        .into_iter()
        .map(|(line, t)| {
            if t.year <= 0 {
                Err(Error::parse(path, line, format!("year must be positive, got {}", t.year)))
            } else {
                Ok(t)
            }
        })
        .collect()
}

pub fn write_labeled_tweets(path: &Path, tweets: &[LabeledTweet]) -> Result<()> {
    io::write_jsonl(path, tweets)
}

/// Ensemble output for one author.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderPrediction {
    pub user_id: String,
    #[serde(rename = "gender")]
    pub voted_gender: Gender,
    /// Per-fold softmax probability of the voted class.
    pub fold_probs: Vec<f64>,
    pub avg_prob: f64,
}

impl GenderPrediction {
    pub fn new(user_id: impl Into<String>, voted_gender: Gender, fold_probs: Vec<f64>) -> Self {
        let avg_prob = fold_probs.iter().sum::<f64>() / fold_probs.len().max(1) as f64;
        GenderPrediction {
            user_id: user_id.into(),
            voted_gender,
            fold_probs,
            avg_prob,
        }
    }
}

pub fn read_predictions(path: &Path) -> Result<Vec<GenderPrediction>> {
    io::read_jsonl::<GenderPrediction>(path)?
        .into_iter()
        .map(|(line, p)| {
            if p.fold_probs.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::parse(path, line, "fold probability outside [0, 1]"));
            }
            let mean = p.fold_probs.iter().sum::<f64>() / p.fold_probs.len().max(1) as f64;
            if (mean - p.avg_prob).abs() > 1e-12 {
                return Err(Error::parse(path, line, "avg_prob is not the mean of fold_probs"));
            }
            Ok(p)
        })
        .collect()
}

pub fn write_predictions(path: &Path, preds: &[GenderPrediction]) -> Result<()> {
    io::write_jsonl(path, preds)
}

/// Result of importing a PAN author-profiling directory.
#[derive(Debug)]
pub struct PanImport {
    pub corpus: Corpus,
    pub warnings: Vec<String>,
}

/// Parses a `id:::gender` truth file.
pub fn read_pan_truth(path: &Path) -> Result<HashMap<String, Gender>> {
    let text = io::read_to_string(path)?;
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(":::");
        let id = parts.next().unwrap_or_default().trim();
        let token = parts
            .next()
            .ok_or_else(|| Error::parse(path, i + 1, "expected id:::gender"))?
            .trim();
        let gender = token.parse::<Gender>().map_err(|_| {
            Error::parse(path, i + 1, format!("gender token {token:?} is not female/male"))
        })?;
        map.insert(id.to_string(), gender);
    }
    Ok(map)
}

/// Extracts tweet texts from one PAN author XML document.
pub fn parse_pan_xml(path: &Path, xml: &str) -> Result<Vec<String>> {
    let doc = roxmltree::Document::parse(xml)
        .map_err(|e| Error::Data(format!("{}: malformed XML: {e}", path.display())))?;
    Ok(doc
        .descendants()
        .filter(|n| n.has_tag_name("document"))
        .map(|n| {
            n.descendants()
                .filter(|c| c.is_text())
                .filter_map(|c| c.text())
                .collect::<String>()
        })
        .collect())
}

/// Imports a directory of `<id>.xml` author files with genders from `truth_file`.
///
/// Authors absent from the truth file are kept unlabeled and reported as
/// warnings; empty documents are dropped with a warning.
pub fn import_pan(author_dir: &Path, truth_file: Option<&Path>) -> Result<PanImport> {
    let truth = match truth_file {
        Some(p) => read_pan_truth(p)?,
        None => HashMap::new(),
    };
    let mut files: Vec<_> = std::fs::read_dir(author_dir)
        .map_err(|e| Error::io(author_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "xml"))
        .collect();
    files.sort();

    let mut users = Vec::with_capacity(files.len());
    let mut warnings = Vec::new();
    for path in files {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let xml = io::read_to_string(&path)?;
        let raw = parse_pan_xml(&path, &xml)?;
        let total = raw.len();
        let tweets: Vec<String> = raw.into_iter().filter(|t| !t.trim().is_empty()).collect();
        if tweets.len() < total {
            warnings.push(format!("{id}: dropped {} empty documents", total - tweets.len()));
        }
        if tweets.is_empty() {
            warnings.push(format!("{id}: no tweets, author skipped"));
            continue;
        }
        let gender = truth.get(&id).copied();
        if gender.is_none() {
            warnings.push(format!("{id}: not in truth file, gender left empty"));
        }
        users.push(UserRecord {
            user_id: id,
            gender,
            tweets,
        });
    }
    Ok(PanImport {
        corpus: Corpus::new(users)?,
        warnings,
    })
}

/// Stratified k-fold split. Returns `k` disjoint, sorted index sets covering
/// the corpus; per-gender counts per fold differ by at most one.
pub fn split_folds(corpus: &Corpus, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("fold count must be >= 2, got {k}")));
    }
    if corpus.len() < k {
        return Err(Error::InvalidArgument(format!(
            "corpus of {} users cannot be split into {k} folds",
            corpus.len()
        )));
    }
    let labels = corpus.labels()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0usize;
    for g in Gender::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == g).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn user(id: &str, g: Option<Gender>) -> UserRecord {
        UserRecord {
            user_id: id.into(),
            gender: g,
            tweets: vec![format!("hello from {id}")],
        }
    }

    fn balanced(n_per_class: usize) -> Corpus {
        let mut v = Vec::new();
        for i in 0..n_per_class {
            v.push(user(&format!("f{i}"), Some(Gender::Female)));
            v.push(user(&format!("m{i}"), Some(Gender::Male)));
        }
        Corpus::new(v).unwrap()
    }

    #[test]
    fn gender_parsing_is_case_insensitive() {
        assert_eq!("MALE".parse::<Gender>().unwrap(), Gender::Male);
        assert_eq!("Female".parse::<Gender>().unwrap(), Gender::Female);
        assert!("unknown".parse::<Gender>().is_err());
        let u: UserRecord =
            serde_json::from_str(r#"{"user_id":"a","gender":"MALE","tweets":["x"]}"#).unwrap();
        assert_eq!(u.gender, Some(Gender::Male));
        let u: UserRecord =
            serde_json::from_str(r#"{"user_id":"a","gender":null,"tweets":["x"]}"#).unwrap();
        assert_eq!(u.gender, None);
    }

    #[test]
    fn record_invariants() {
        assert!(user("", None).validate().is_err());
        let mut u = user("a", None);
        u.tweets.push("   ".into());
        assert!(u.validate().is_err());
        u.tweets.clear();
        assert!(u.validate().is_err());
        assert!(Corpus::new(vec![user("a", None), user("a", None)]).is_err());
    }

    #[test]
    fn folds_of_3000() {
        let c = balanced(1500);
        let folds = split_folds(&c, 5, 1).unwrap();
        assert!(folds.iter().all(|f| f.len() == 600));
    }

    #[test]
    fn folds_forced_stratification() {
        let c = balanced(5);
        let labels = c.labels().unwrap();
        for f in split_folds(&c, 5, 9).unwrap() {
            let fem = f.iter().filter(|&&i| labels[i] == Gender::Female).count();
            assert_eq!((fem, f.len() - fem), (1, 1));
        }
    }

    #[test]
    fn folds_deterministic_and_seed_sensitive() {
        let c = balanced(50);
        assert_eq!(split_folds(&c, 5, 3).unwrap(), split_folds(&c, 5, 3).unwrap());
        assert_ne!(split_folds(&c, 5, 3).unwrap(), split_folds(&c, 5, 4).unwrap());
    }

    #[test]
    fn folds_reject_unlabeled_and_bad_k() {
        let c = Corpus::new(vec![
            user("a", Some(Gender::Male)),
            user("nolabel", None),
            user("c", Some(Gender::Female)),
        ])
        .unwrap();
        let err = split_folds(&c, 2, 0).unwrap_err().to_string();
        assert!(err.contains("nolabel"), "{err}");
        assert!(split_folds(&balanced(2), 1, 0).is_err());
        assert!(split_folds(&balanced(1), 3, 0).is_err());
    }

    #[test]
    fn prediction_average() {
        let p = GenderPrediction::new("u", Gender::Male, vec![0.9, 0.7, 0.8]);
        assert!((p.avg_prob - 0.8).abs() < 1e-12);
    }
}
