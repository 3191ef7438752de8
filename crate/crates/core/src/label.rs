//! Probability distributions over class labels.
//!
//! [`LabelDistribution`] is the currency of the crate: aggregated human soft
//! labels, model predictions, and every training-target flavor are all
//! vectors of `K` probabilities that sum to one. Construction always
//! validates the invariants; ranking helpers pin the tie-break rule (lowest
//! class index wins) so downstream metrics are deterministic.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct LabelDistribution<S> {
    probs: Vec<S>,
    /// Number of judgments aggregated into this distribution; 0 for
    /// synthetic or derived distributions.
    support_count: usize,
}

impl<S: Scalar> LabelDistribution<S> {
    /// Validate and wrap a probability vector.
    pub fn new(probs: Vec<S>, support_count: usize) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::data("label distribution must have at least one class"));
        }
        let k = probs.len();
        let tol = S::sum_tolerance(k);
        let mut sum = S::zero();
        for (c, &p) in probs.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::data(format!("probability for class {c} is not finite")));
            }
            if p < -tol || p > S::one() + tol {
                return Err(Error::data(format!(
                    "probability for class {c} out of [0,1]: {p}"
                )));
            }
            sum += p;
        }
        if (sum - S::one()).abs() > tol {
            return Err(Error::data(format!(
                "probabilities sum to {sum}, expected 1 within {tol:e}"
            )));
        }
        Ok(Self { probs, support_count })
    }

    /// All mass on `class`.
    pub fn one_hot(class: usize, k: usize) -> Result<Self> {
        if class >= k {
            return Err(Error::data(format!("label {class} out of range for K={k}")));
        }
        let mut probs = vec![S::zero(); k];
        probs[class] = S::one();
        Ok(Self { probs, support_count: 0 })
    }

    /// Uniform distribution over `k` classes.
    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::data("label distribution must have at least one class"));
        }
        let p = S::one() / S::cast(k as f64);
        Ok(Self { probs: vec![p; k], support_count: 0 })
    }

    /// Additively smoothed count normalization:
    /// `p[c] = (count[c] + smoothing) / (total + k * smoothing)`.
    pub fn from_counts(counts: &[usize], smoothing: S) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::data("label distribution must have at least one class"));
        }
        if smoothing < S::zero() {
            return Err(Error::config(format!("smoothing must be nonnegative, got {smoothing}")));
        }
        let total: usize = counts.iter().sum();
        let k = counts.len();
        let denom = S::cast(total as f64) + smoothing * S::cast(k as f64);
        if denom <= S::zero() {
            return Err(Error::data("cannot normalize zero judgments with zero smoothing"));
        }
        let probs = counts
            .iter()
            .map(|&c| (S::cast(c as f64) + smoothing) / denom)
            .collect();
        Ok(Self { probs, support_count: total })
    }

    /// Convex combination `lambda * a + (1 - lambda) * b`.
    pub fn mix(a: &Self, b: &Self, lambda: S) -> Result<Self> {
        if a.k() != b.k() {
            return Err(Error::data(format!(
                "cannot mix distributions over {} and {} classes",
                a.k(),
                b.k()
            )));
        }
        if lambda < S::zero() || lambda > S::one() {
            return Err(Error::config(format!("lambda must be in [0,1], got {lambda}")));
        }
        let probs = a
            .probs
            .iter()
            .zip(&b.probs)
            .map(|(&pa, &pb)| lambda * pa + (S::one() - lambda) * pb)
            .collect();
        Self::new(probs, 0)
    }

    pub fn probs(&self) -> &[S] {
        &self.probs
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    pub fn support_count(&self) -> usize {
        self.support_count
    }

    pub fn get(&self, class: usize) -> Option<S> {
        self.probs.get(class).copied()
    }

    /// Highest-probability class; ties break to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (c, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = c;
            }
        }
        best
    }

    /// First- and second-ranked classes under (probability desc, index asc).
    /// Returns `None` for single-class distributions.
    pub fn top2(&self) -> Option<(usize, usize)> {
        if self.k() < 2 {
            return None;
        }
        let first = self.argmax();
        let mut second = if first == 0 { 1 } else { 0 };
        for (c, &p) in self.probs.iter().enumerate() {
            if c == first || c == second {
                continue;
            }
            if p > self.probs[second] {
                second = c;
            }
        }
        Some((first, second))
    }

    pub fn max_prob(&self) -> S {
        self.probs[self.argmax()]
    }

    /// Number of strictly positive entries.
    pub fn nonzero_count(&self) -> usize {
        self.probs.iter().filter(|&&p| p > S::zero()).count()
    }

    /// Whether a second-ranked class is meaningful (at least two entries
    /// carry mass).
    pub fn has_distinct_second(&self) -> bool {
        self.nonzero_count() >= 2
    }

    /// Shannon entropy in nats, with `0 ln 0 = 0`.
    pub fn entropy(&self) -> S {
        let mut h = S::zero();
        for &p in &self.probs {
            if p > S::zero() {
                h -= p * p.ln();
            }
        }
        h
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.probs.iter().map(|&p| p.as_f64()).collect()
    }
}
