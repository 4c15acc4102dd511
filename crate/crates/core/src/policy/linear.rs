use crate::Scalar;

use super::features::{FeatureRows, Featurizer};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("empty candidate set")]
    EmptyCandidates,
    #[error("action `{0}` is not a candidate")]
    ActionNotCandidate(String),
    #[error("candidate index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("non-finite weights after update")]
    NonFinite,
}

/// Sparse vector as (index, value) pairs with unique, sorted indices.
pub type SparseGrad<S> = Vec<(u32, S)>;

/// One supervised example, already featurized.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample {
    pub rows: FeatureRows,
    pub chosen: usize,
}

/// Linear softmax policy: `p(a|q) ∝ exp(w · φ(q, a))`. Parameters are values;
/// updates return new versions.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy<S: Scalar> {
    pub weights: Vec<S>,
    pub version: u64,
}

pub fn argmax<S: Scalar>(xs: &[S]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Index drawn from `probs` using a uniform `u` in [0, 1).
pub fn sample_index<S: Scalar>(probs: &[S], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p.f64();
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

impl<S: Scalar> LinearPolicy<S> {
    pub fn zeros(dim: usize) -> Self {
        LinearPolicy { weights: vec![S::zero(); dim], version: 0 }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    fn score(&self, row: &[u32]) -> S {
        row.iter().map(|&i| self.weights[i as usize]).sum()
    }

    pub fn scores(&self, rows: &FeatureRows) -> Vec<S> {
        rows.iter().map(|r| self.score(r)).collect()
    }

    pub fn log_probs(&self, rows: &FeatureRows) -> Result<Vec<S>, PolicyError> {
        if rows.is_empty() {
            return Err(PolicyError::EmptyCandidates);
        }
        let scores = self.scores(rows);
        let max = scores.iter().copied().fold(S::neg_infinity(), S::max);
        let lse = max + scores.iter().map(|&s| (s - max).exp()).sum::<S>().ln();
        Ok(scores.into_iter().map(|s| s - lse).collect())
    }

    pub fn probs(&self, rows: &FeatureRows) -> Result<Vec<S>, PolicyError> {
        Ok(self.log_probs(rows)?.into_iter().map(S::exp).collect())
    }

    pub fn log_prob_at(&self, rows: &FeatureRows, idx: usize) -> Result<S, PolicyError> {
        let lp = self.log_probs(rows)?;
        lp.get(idx).copied().ok_or(PolicyError::IndexOutOfRange(idx))
    }

    pub fn entropy_rows(&self, rows: &FeatureRows) -> Result<S, PolicyError> {
        let lp = self.log_probs(rows)?;
        Ok(-lp.iter().map(|&l| if l.is_finite() { l.exp() * l } else { S::zero() }).sum::<S>())
    }

    /// `φ(a) − E_p[φ]` as a sparse vector.
    pub fn grad_log_prob_rows(&self, rows: &FeatureRows, idx: usize) -> Result<SparseGrad<S>, PolicyError> {
        let p = self.probs(rows)?;
        if idx >= rows.len() {
            return Err(PolicyError::IndexOutOfRange(idx));
        }
        let mut acc: Vec<(u32, S)> = vec![];
        for &f in &rows[idx] {
            acc.push((f, S::one()));
        }
        for (row, &pb) in rows.iter().zip(&p) {
            for &f in row {
                acc.push((f, -pb));
            }
        }
        Ok(merge(acc))
    }

    /// Exact `KL(self ‖ reference)` over the candidate set.
    pub fn kl_rows(&self, reference: &Self, rows: &FeatureRows) -> Result<S, PolicyError> {
        let lp = self.log_probs(rows)?;
        let lq = reference.log_probs(rows)?;
        Ok(lp.iter().zip(&lq).map(|(&a, &b)| a.exp() * (a - b)).sum::<S>().max(S::zero()))
    }

    /// Gradient of `KL(self ‖ reference)` with respect to `self`'s weights.
    pub fn grad_kl_rows(&self, reference: &Self, rows: &FeatureRows) -> Result<SparseGrad<S>, PolicyError> {
        let lp = self.log_probs(rows)?;
        let lq = reference.log_probs(rows)?;
        let kl: S = lp.iter().zip(&lq).map(|(&a, &b)| a.exp() * (a - b)).sum();
        // dKL/dθ = Σ_a p_a (log p_a − log q_a − KL) φ(a)
        let mut acc = vec![];
        for (row, (&a, &b)) in rows.iter().zip(lp.iter().zip(&lq)) {
            let c = a.exp() * (a - b - kl);
            for &f in row {
                acc.push((f, c));
            }
        }
        Ok(merge(acc))
    }

    pub fn distribution(&self, f: &Featurizer, context: &str, candidates: &[String]) -> Result<Vec<S>, PolicyError> {
        self.probs(&f.encode(context, candidates))
    }

    pub fn log_prob(&self, f: &Featurizer, context: &str, action: &str, candidates: &[String]) -> Result<S, PolicyError> {
        let idx = position(candidates, action)?;
        self.log_prob_at(&f.encode(context, candidates), idx)
    }

    pub fn entropy(&self, f: &Featurizer, context: &str, candidates: &[String]) -> Result<S, PolicyError> {
        self.entropy_rows(&f.encode(context, candidates))
    }

    pub fn grad_log_prob(
        &self,
        f: &Featurizer,
        context: &str,
        action: &str,
        candidates: &[String],
    ) -> Result<SparseGrad<S>, PolicyError> {
        let idx = position(candidates, action)?;
        self.grad_log_prob_rows(&f.encode(context, candidates), idx)
    }

    pub fn kl_divergence(&self, reference: &Self, f: &Featurizer, context: &str, candidates: &[String]) -> Result<S, PolicyError> {
        self.kl_rows(reference, &f.encode(context, candidates))
    }

    /// Mean negative log-likelihood of the dataset.
    pub fn nll(&self, data: &[EncodedExample]) -> Result<S, PolicyError> {
        if data.is_empty() {
            return Ok(S::zero());
        }
        let mut total = S::zero();
        for ex in data {
            total = total - self.log_prob_at(&ex.rows, ex.chosen)?;
        }
        Ok(total / S::of(data.len() as f64))
    }

    /// One pass of per-example NLL gradient descent, in dataset order.
    pub fn sft_update(&self, data: &[EncodedExample], lr: S) -> Result<Self, PolicyError> {
        let mut next = self.clone();
        if lr != S::zero() {
            for ex in data {
                for (i, g) in next.grad_log_prob_rows(&ex.rows, ex.chosen)? {
                    next.weights[i as usize] = next.weights[i as usize] + lr * g;
                }
            }
        }
        if next.weights.iter().any(|w| !w.is_finite()) {
            return Err(PolicyError::NonFinite);
        }
        next.version += 1;
        Ok(next)
    }

    /// `w ← w − lr · grad` for a dense gradient; bumps the version.
    pub fn descend(&self, grad: &[S], lr: S) -> Result<Self, PolicyError> {
        let mut next = self.clone();
        for (w, g) in next.weights.iter_mut().zip(grad) {
            *w = *w - lr * *g;
        }
        if next.weights.iter().any(|w| !w.is_finite()) {
            return Err(PolicyError::NonFinite);
        }
        next.version += 1;
        Ok(next)
    }

    pub fn cast<T: Scalar>(&self) -> LinearPolicy<T> {
        LinearPolicy { weights: self.weights.iter().map(|w| T::of(w.f64())).collect(), version: self.version }
    }
}

fn position(candidates: &[String], action: &str) -> Result<usize, PolicyError> {
    if candidates.is_empty() {
        return Err(PolicyError::EmptyCandidates);
    }
    candidates.iter().position(|c| c == action).ok_or_else(|| PolicyError::ActionNotCandidate(action.to_string()))
}

fn merge<S: Scalar>(mut acc: Vec<(u32, S)>) -> SparseGrad<S> {
    acc.sort_unstable_by_key(|(i, _)| *i);
    let mut out: Vec<(u32, S)> = Vec::with_capacity(acc.len());
    for (i, v) in acc {
        match out.last_mut() {
            Some((j, w)) if *j == i => *w = *w + v,
            _ => out.push((i, v)),
        }
    }
    out
}
