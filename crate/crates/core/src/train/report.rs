use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Gender, GenderPrediction};
use crate::error::{Error, Result};
use crate::io;

/// Standard report columns, in display order. Algorithms outside this list
/// are appended alphabetically.
pub const REPORT_COLUMNS: [&str; 5] = ["SVM", "RNN", "CNN", "CNN_char", "CNN_char_pos"];

/// Fraction of predictions whose label matches `truth`.
pub fn accuracy(preds: &[GenderPrediction], truth: &HashMap<String, Gender>) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::InvalidArgument("no predictions to score".into()));
    }
    let mut correct = 0usize;
    for p in preds {
        let t = truth
            .get(&p.user_id)
            .ok_or_else(|| Error::Data(format!("no truth label for user {}", p.user_id)))?;
        correct += usize::from(*t == p.voted_gender);
    }
    Ok(correct as f64 / preds.len() as f64)
}

/// Mean and population standard deviation.
pub fn fold_stats(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Voting accuracy and per-fold accuracies recovered from ensemble output.
/// A fold agrees with the vote when its probability of the voted class
/// exceeds one half (at exactly one half its argmax is female).
pub fn evaluate(preds: &[GenderPrediction], truth: &HashMap<String, Gender>) -> Result<AlgoResult> {
    let voting = accuracy(preds, truth)?;
    let k = preds[0].fold_probs.len();
    if let Some(p) = preds.iter().find(|p| p.fold_probs.len() != k) {
        return Err(Error::Data(format!(
            "user {} has {} fold probabilities, expected {k}",
            p.user_id,
            p.fold_probs.len()
        )));
    }
    let mut correct = vec![0usize; k];
    for p in preds {
        let t = truth[&p.user_id];
        for (f, &q) in p.fold_probs.iter().enumerate() {
            let label = if q > 0.5 || (q == 0.5 && p.voted_gender == Gender::Female) {
                p.voted_gender
            } else {
                p.voted_gender.other()
            };
            correct[f] += usize::from(label == t);
        }
    }
    let folds = correct.iter().map(|&c| c as f64 / preds.len() as f64).collect();
    Ok(AlgoResult::new(folds, Some(voting)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoResult {
    pub mean: f64,
    pub sd: f64,
    pub voting: Option<f64>,
    pub folds: Vec<f64>,
}

impl AlgoResult {
    pub fn new(folds: Vec<f64>, voting: Option<f64>) -> Self {
        let (mean, sd) = fold_stats(&folds);
        AlgoResult {
            mean,
            sd,
            voting,
            folds,
        }
    }
}

/// Per-algorithm accuracy summary with Mean / SD / Voting rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EnsembleReport {
    pub algos: BTreeMap<String, AlgoResult>,
}

impl EnsembleReport {
    pub fn insert(&mut self, algo: impl Into<String>, r: AlgoResult) {
        self.algos.insert(algo.into(), r);
    }

    /// Merges another report; its entries win on name clashes.
    pub fn merge(&mut self, other: EnsembleReport) {
        self.algos.extend(other.algos);
    }

    pub fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = REPORT_COLUMNS.iter().map(|s| s.to_string()).collect();
        cols.extend(
            self.algos
                .keys()
                .filter(|k| !REPORT_COLUMNS.contains(&k.as_str()))
                .cloned(),
        );
        cols
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let mut s = self.to_json()?;
        s.push('\n');
        io::atomic_write(path, s.as_bytes())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = io::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }
}

impl fmt::Display for EnsembleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cols = self.columns();
        let width = cols.iter().map(String::len).max().unwrap_or(0).max(6);
        write!(f, "{:<6}", "")?;
        for c in &cols {
            write!(f, "  {c:>width$}")?;
        }
        writeln!(f)?;
        let cell = |v: Option<f64>| v.filter(|x| x.is_finite()).map_or("n/a".to_string(), |x| format!("{x:.4}"));
        let rows: [(&str, fn(&AlgoResult) -> Option<f64>); 3] = [
            ("Mean", |r| Some(r.mean)),
            ("SD", |r| Some(r.sd)),
            ("Voting", |r| r.voting),
        ];
        for (name, get) in rows {
            write!(f, "{name:<6}")?;
            for c in &cols {
                let v = self.algos.get(c).and_then(get);
                write!(f, "  {:>width$}", cell(v))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Share of predictions whose average probability exceeds a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coverage {
    pub count: usize,
    pub total: usize,
    pub threshold: f64,
}

impl Coverage {
    pub fn fraction(&self) -> f64 {
        self.count as f64 / self.total as f64
    }
}

impl fmt::Display for Coverage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({:.2}%)", self.count, 100.0 * self.fraction())
    }
}

/// Counts predictions with `avg_prob` strictly above `threshold`.
pub fn coverage(preds: &[GenderPrediction], threshold: f64) -> Result<Coverage> {
    if preds.is_empty() {
        return Err(Error::InvalidArgument("coverage of an empty prediction set".into()));
    }
    Ok(Coverage {
        count: preds.iter().filter(|p| p.avg_prob > threshold).count(),
        total: preds.len(),
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(id: &str, g: Gender, probs: &[f64]) -> GenderPrediction {
        GenderPrediction::new(id, g, probs.to_vec())
    }

    #[test]
    fn stats_of_constant_folds() {
        let (m, sd) = fold_stats(&[0.8; 5]);
        assert!((m - 0.8).abs() < 1e-15);
        assert_eq!(sd, 0.0);
        let (m, sd) = fold_stats(&[0.0, 1.0]);
        assert_eq!((m, sd), (0.5, 0.5));
    }

    #[test]
    fn accuracy_and_missing_truth() {
        let truth: HashMap<String, Gender> = [("a".to_string(), Gender::Male), ("b".to_string(), Gender::Female)]
            .into_iter()
            .collect();
        let preds = vec![pred("a", Gender::Male, &[0.9]), pred("b", Gender::Female, &[0.8])];
        assert_eq!(accuracy(&preds, &truth).unwrap(), 1.0);
        let err = accuracy(&[pred("c", Gender::Male, &[0.9])], &truth).unwrap_err();
        assert!(err.to_string().contains('c'));
    }

    #[test]
    fn per_fold_accuracy_from_probabilities() {
        let truth: HashMap<String, Gender> = [("a".to_string(), Gender::Male)].into_iter().collect();
        let preds = vec![pred("a", Gender::Male, &[0.9, 0.4, 0.6])];
        let r = evaluate(&preds, &truth).unwrap();
        assert_eq!(r.folds, [1.0, 0.0, 1.0]);
        assert_eq!(r.voting, Some(1.0));
    }

    #[test]
    fn coverage_is_strict() {
        let preds = vec![
            pred("a", Gender::Male, &[0.9]),
            pred("b", Gender::Male, &[0.7]),
            pred("c", Gender::Male, &[0.8]),
        ];
        let c = coverage(&preds, 0.8).unwrap();
        assert_eq!(c.count, 1);
        assert!(coverage(&preds[..2], 0.8).unwrap().fraction() == 0.5);
        let big = Coverage {
            count: 818908,
            total: 1090208,
            threshold: 0.8,
        };
        assert_eq!(big.to_string(), "818908 (75.11%)");
        assert!(coverage(&[], 0.8).is_err());
    }

    #[test]
    fn table_layout() {
        let mut r = EnsembleReport::default();
        r.insert("CNN_char_pos", AlgoResult::new(vec![0.8; 5], Some(0.82)));
        r.insert("LR", AlgoResult::new(vec![0.7, 0.9], None));
        let s = r.to_string();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines.len(), 4);
        let header: Vec<&str> = lines[0].split_whitespace().collect();
        assert_eq!(header, ["SVM", "RNN", "CNN", "CNN_char", "CNN_char_pos", "LR"]);
        assert!(lines[1].starts_with("Mean") && lines[2].starts_with("SD") && lines[3].starts_with("Voting"));
        let voting: Vec<&str> = lines[3].split_whitespace().collect();
        assert_eq!(voting, ["Voting", "n/a", "n/a", "n/a", "n/a", "0.8200", "n/a"]);
        let back: EnsembleReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
