use crate::corpus::{Gender, GenderPrediction};
use crate::error::{Error, Result};
use crate::model::{DocInput, ModelParams, N_CLASSES};

/// Result of combining per-fold class probabilities for one document.
#[derive(Debug, Clone, PartialEq)]
pub struct Vote {
    pub class: usize,
    /// Each fold's probability of the voted class.
    pub fold_probs: Vec<f64>,
}

/// Majority vote over per-fold argmax labels; ties go to the class with the
/// larger summed probability, then to class 0.
pub fn vote(fold_probs: &[[f64; N_CLASSES]]) -> Vote {
    let mut counts = [0usize; N_CLASSES];
    let mut sums = [0.0f64; N_CLASSES];
    for p in fold_probs {
        counts[usize::from(p[1] > p[0])] += 1;
        sums[0] += p[0];
        sums[1] += p[1];
    }
    let class = match counts[1].cmp(&counts[0]) {
        std::cmp::Ordering::Greater => 1,
        std::cmp::Ordering::Less => 0,
        std::cmp::Ordering::Equal => usize::from(sums[1] > sums[0]),
    };
    Vote {
        class,
        fold_probs: fold_probs.iter().map(|p| p[class]).collect(),
    }
}

/// Ensemble predictions of `models` (one per fold) for `docs`.
pub fn predict_ensemble(models: &[ModelParams<f32>], docs: &[DocInput]) -> Result<Vec<GenderPrediction>> {
    let first = models
        .first()
        .ok_or_else(|| Error::InvalidArgument("no models to ensemble".into()))?;
    for m in &models[1..] {
        m.ensure_matches(&first.arch, &first.vocab_fingerprint)?;
    }
    let per_model: Vec<Vec<[f64; N_CLASSES]>> = models
        .iter()
        .map(|m| m.predict(docs))
        .collect::<Result<_>>()?;
    Ok(docs
        .iter()
        .enumerate()
        .map(|(j, d)| {
            let probs: Vec<[f64; N_CLASSES]> = per_model.iter().map(|p| p[j]).collect();
            let v = vote(&probs);
            GenderPrediction::new(
                d.user_id.clone(),
                Gender::from_index(v.class).expect("binary class"),
                v.fold_probs,
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(male: f64) -> [f64; 2] {
        [1.0 - male, male]
    }

    #[test]
    fn majority() {
        let v = vote(&[p(0.9), p(0.8), p(0.3), p(0.7), p(0.1)]);
        assert_eq!(v.class, 1);
        assert_eq!(v.fold_probs, [0.9, 0.8, 0.3, 0.7, 0.1]);
    }

    #[test]
    fn split_vote_uses_summed_probability() {
        // 0.9 female against 0.6 male.
        let v = vote(&[p(0.1), p(0.6)]);
        assert_eq!(v.class, 0);
        assert!((v.fold_probs[0] - 0.9).abs() < 1e-15 && (v.fold_probs[1] - 0.4).abs() < 1e-15);
    }
}
