//! Central-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Real, Tensor};
use crate::error::Result;

/// A collection of named trainable tensors.
pub trait ParamSet<T: Real> {
    fn tensor_count(&self) -> usize;
    fn tensor_name(&self, i: usize) -> String;
    fn tensor(&self, i: usize) -> &Tensor<T>;
    fn tensor_mut(&mut self, i: usize) -> &mut Tensor<T>;

    /// Coordinates held fixed by the model (e.g. padding rows); skipped by
    /// [`grad_check`].
    fn is_constant(&self, _tensor: usize, _index: usize) -> bool {
        false
    }

    fn zero_grads(&mut self) {
        for i in 0..self.tensor_count() {
            self.tensor_mut(i).zero_grad();
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many coordinates per tensor, sampled without
    /// replacement; `None` checks every coordinate.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckEntry {
    pub tensor: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(|e| !e.passed)
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compares `analytic[i]` (one gradient buffer per tensor, in parameter-set
/// order) with central differences of `loss`. Parameters are restored
/// exactly after each probe.
pub fn grad_check<T, P, F>(
    params: &mut P,
    analytic: &[Vec<T>],
    mut loss: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    T: Real,
    P: ParamSet<T>,
    F: FnMut(&P) -> Result<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut entries = Vec::new();
    for (i, grad) in analytic.iter().enumerate().take(params.tensor_count()) {
        let free: Vec<usize> = (0..params.tensor(i).numel())
            .filter(|&k| !params.is_constant(i, k))
            .collect();
        let coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < free.len() => {
                let mut c: Vec<usize> = sample(&mut rng, free.len(), k)
                    .into_iter()
                    .map(|j| free[j])
                    .collect();
                c.sort_unstable();
                c
            }
            _ => free,
        };
        let mut entry = GradCheckEntry {
            tensor: params.tensor_name(i),
            checked: coords.len(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            passed: true,
        };
        let h = T::of(opts.step);
        for k in coords {
            let orig = params.tensor(i).data()[k];
            params.tensor_mut(i).data_mut()[k] = orig + h;
            let up = loss(params)?;
            params.tensor_mut(i).data_mut()[k] = orig - h;
            let down = loss(params)?;
            params.tensor_mut(i).data_mut()[k] = orig;
            // Divide by the step actually taken after rounding.
            let span = ((orig + h) - (orig - h)).f64();
            let num = (up - down) / span;
            let a = grad[k].f64();
            let e = rel_err(a, num);
            if e > entry.max_rel_err || !e.is_finite() {
                entry.max_rel_err = if e.is_finite() { e } else { f64::INFINITY };
                entry.worst_index = k;
                entry.analytic = a;
                entry.numeric = num;
            }
        }
        entry.passed = entry.max_rel_err < opts.tolerance;
        entries.push(entry);
    }
    Ok(GradCheckReport {
        entries,
        tolerance: opts.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quad(Tensor<f64>);

    impl ParamSet<f64> for Quad {
        fn tensor_count(&self) -> usize {
            1
        }
        fn tensor_name(&self, _: usize) -> String {
            "w".into()
        }
        fn tensor(&self, _: usize) -> &Tensor<f64> {
            &self.0
        }
        fn tensor_mut(&mut self, _: usize) -> &mut Tensor<f64> {
            &mut self.0
        }
    }

    fn sq(p: &Quad) -> Result<f64> {
        Ok(p.0.data().iter().map(|w| w * w).sum())
    }

    #[test]
    fn quadratic_exact() {
        let mut p = Quad(Tensor::full(&[1], 3.0));
        let r = grad_check(&mut p, &[vec![6.0]], sq, &GradCheckOptions::default()).unwrap();
        assert!(r.passed());
        assert!(r.max_rel_err() < 1e-10, "{}", r.max_rel_err());
        assert_eq!(p.0.data(), &[3.0]);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let mut p = Quad(Tensor::full(&[2], 3.0));
        let r = grad_check(&mut p, &[vec![6.0, 6.6]], sq, &GradCheckOptions::default()).unwrap();
        assert!(!r.passed());
        assert_eq!(r.failures().next().unwrap().worst_index, 1);
    }

    #[test]
    fn sampling_limits_coordinates() {
        let mut p = Quad(Tensor::full(&[50], 1.0));
        let opts = GradCheckOptions {
            max_coords: Some(7),
            ..Default::default()
        };
        let r = grad_check(&mut p, &[vec![2.0; 50]], sq, &opts).unwrap();
        assert_eq!(r.entries[0].checked, 7);
        assert!(r.passed());
    }
}
