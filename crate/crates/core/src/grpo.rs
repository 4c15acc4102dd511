//! Step-level GRPO: group-normalized step advantages, the clipped surrogate with an
//! exact per-step KL penalty, and plain gradient-descent updates.

use serde::{Deserialize, Serialize};

use crate::policy::{FeatureRows, Featurizer, LinearPolicy, PolicyError};
use crate::replay::{Batch, Trajectory};
use crate::Scalar;

/// Population-std threshold below which a group carries no signal.
pub const STD_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceReset {
    PhaseStart,
    Never,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_coef: f64,
    pub learning_rate: f64,
    pub updates_per_phase: usize,
    pub reference_reset: ReferenceReset,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            group_size: 8,
            clip_eps: 0.2,
            kl_coef: 0.01,
            learning_rate: 0.2,
            updates_per_phase: 100,
            reference_reset: ReferenceReset::PhaseStart,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.group_size < 2 {
            return Err("group_size must be at least 2".into());
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err("clip_eps must lie in (0, 1)".into());
        }
        if !(self.kl_coef.is_finite() && self.kl_coef >= 0.0) {
            return Err("kl_coef must be finite and non-negative".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err("learning_rate must be finite and non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GrpoError {
    #[error("group mixes tasks `{0}` and `{1}`")]
    MixedTasks(String, String),
    #[error("group has {0} trajectories, need at least 2")]
    GroupTooSmall(usize),
    #[error("step {step} of a `{task}` trajectory has no reward")]
    MissingReward { task: String, step: usize },
    #[error("step {step} of a `{task}` trajectory has no usable old log-prob")]
    MissingOldLogProb { task: String, step: usize },
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Per-step advantages for one task group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageTable {
    /// Every step reward of the group, trajectory-major.
    pub rewards: Vec<f64>,
    /// `advantages[i][j]` for trajectory `i`, step `j`.
    pub advantages: Vec<Vec<f64>>,
    pub mean: f64,
    pub std: f64,
}

pub fn compute_advantages(group: &[Trajectory]) -> Result<AdvantageTable, GrpoError> {
    if group.len() < 2 {
        return Err(GrpoError::GroupTooSmall(group.len()));
    }
    let task = &group[0].task_id;
    let mut rewards = vec![];
    for t in group {
        if &t.task_id != task {
            return Err(GrpoError::MixedTasks(task.clone(), t.task_id.clone()));
        }
        for (j, s) in t.steps.iter().enumerate() {
            rewards.push(s.reward.ok_or_else(|| GrpoError::MissingReward { task: task.clone(), step: j })?);
        }
    }
    let n = rewards.len().max(1) as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n).sqrt();
    let advantages = group
        .iter()
        .map(|t| {
            t.steps
                .iter()
                .map(|s| if std > STD_TOLERANCE { (s.reward.unwrap_or(0.0) - mean) / std } else { 0.0 })
                .collect()
        })
        .collect();
    Ok(AdvantageTable { rewards, advantages, mean, std })
}

/// One step ready for the surrogate: features, chosen index, frozen log-prob, advantage.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedStep<S: Scalar> {
    pub rows: FeatureRows,
    pub chosen: usize,
    pub old_log_prob: S,
    pub advantage: S,
}

/// A batch of task groups; each group's steps are normalized by the group's total length.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EncodedBatch<S: Scalar> {
    pub groups: Vec<Vec<EncodedStep<S>>>,
}

impl<S: Scalar> EncodedBatch<S> {
    pub fn steps(&self) -> impl Iterator<Item = &EncodedStep<S>> {
        self.groups.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn encode_batch<S: Scalar>(f: &Featurizer, batch: &Batch) -> Result<EncodedBatch<S>, GrpoError> {
    let mut groups = vec![];
    for group in &batch.groups {
        let table = compute_advantages(group)?;
        let mut steps = vec![];
        for (t, adv) in group.iter().zip(&table.advantages) {
            for (j, (s, &a)) in t.steps.iter().zip(adv).enumerate() {
                if s.candidates.is_empty() || s.chosen >= s.candidates.len() || s.old_log_prob > 0.0 || !s.old_log_prob.is_finite() {
                    return Err(GrpoError::MissingOldLogProb { task: t.task_id.clone(), step: j });
                }
                steps.push(EncodedStep {
                    rows: f.encode(&s.context, &s.candidates),
                    chosen: s.chosen,
                    old_log_prob: S::of(s.old_log_prob),
                    advantage: S::of(a),
                });
            }
        }
        groups.push(steps);
    }
    Ok(EncodedBatch { groups })
}

/// Value, gradient and diagnostics of the surrogate loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateEval<S: Scalar> {
    pub loss: S,
    pub grad: Vec<S>,
    pub mean_kl: S,
    pub mean_entropy: S,
    pub clip_fraction: f64,
}

/// `−mean_g (1/L_g) Σ_{steps} [min(ρA, clip(ρ)A) − β KL(π_θ‖π_ref)]` and its gradient in θ.
pub fn surrogate_loss<S: Scalar>(
    batch: &EncodedBatch<S>,
    params: &LinearPolicy<S>,
    reference: &LinearPolicy<S>,
    clip_eps: S,
    kl_coef: S,
) -> Result<SurrogateEval<S>, GrpoError> {
    let mut grad = vec![S::zero(); params.dim()];
    let mut loss = S::zero();
    let mut kl_sum = S::zero();
    let mut ent_sum = S::zero();
    let mut clipped = 0usize;
    let n_groups = batch.groups.iter().filter(|g| !g.is_empty()).count();
    let total = batch.len();
    if n_groups == 0 {
        return Ok(SurrogateEval { loss, grad, mean_kl: S::zero(), mean_entropy: S::zero(), clip_fraction: 0.0 });
    }
    let lo = S::one() - clip_eps;
    let hi = S::one() + clip_eps;
    for group in batch.groups.iter().filter(|g| !g.is_empty()) {
        let scale = S::one() / (S::of(group.len() as f64) * S::of(n_groups as f64));
        for st in group {
            let lp = params.log_prob_at(&st.rows, st.chosen)?;
            let rho = (lp - st.old_log_prob).exp();
            let a = st.advantage;
            let unclipped = rho * a;
            let clipped_obj = rho.max(lo).min(hi) * a;
            let outside = rho < lo || rho > hi;
            if outside {
                clipped += 1;
            }
            let kl = params.kl_rows(reference, &st.rows)?;
            kl_sum = kl_sum + kl;
            ent_sum = ent_sum + params.entropy_rows(&st.rows)?;
            loss = loss - scale * (unclipped.min(clipped_obj) - kl_coef * kl);
            // d(obj)/dθ = ρA ∇log π when the unclipped branch is active.
            let active = unclipped <= clipped_obj || !outside;
            if active && a != S::zero() {
                let coef = -scale * rho * a;
                for (i, g) in params.grad_log_prob_rows(&st.rows, st.chosen)? {
                    grad[i as usize] = grad[i as usize] + coef * g;
                }
            }
            if kl_coef != S::zero() {
                for (i, g) in params.grad_kl_rows(reference, &st.rows)? {
                    grad[i as usize] = grad[i as usize] + scale * kl_coef * g;
                }
            }
        }
    }
    let n = S::of(total as f64);
    Ok(SurrogateEval {
        loss,
        grad,
        mean_kl: kl_sum / n,
        mean_entropy: ent_sum / n,
        clip_fraction: clipped as f64 / total as f64,
    })
}

/// Per-update training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateMetrics {
    pub update: u64,
    pub phase: String,
    /// Mean task accuracy of the batch's trajectories.
    pub mean_reward: f64,
    pub entropy: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub loss: f64,
    pub reference_version: u64,
    pub batch_steps: usize,
    pub batch_trajectories: usize,
    /// Largest `consumer version − generator version` in the batch.
    pub max_version_gap: u64,
}

/// Sequential consumer holding π_θ and π_ref.
#[derive(Debug, Clone)]
pub struct Trainer<S: Scalar> {
    pub config: TrainerConfig,
    pub featurizer: Featurizer,
    pub params: LinearPolicy<S>,
    pub reference: LinearPolicy<S>,
    pub updates: u64,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(config: TrainerConfig, featurizer: Featurizer, params: LinearPolicy<S>) -> Self {
        Trainer { config, featurizer, reference: params.clone(), params, updates: 0 }
    }

    /// π_ref := π_θ.
    pub fn reset_reference(&mut self) {
        self.reference = self.params.clone();
    }

    pub fn reference_version(&self) -> u64 {
        self.reference.version
    }

    /// One gradient step on the batch; returns metrics measured before the step.
    pub fn update(&mut self, batch: &Batch, phase: &str) -> Result<UpdateMetrics, GrpoError> {
        let encoded = encode_batch::<S>(&self.featurizer, batch)?;
        let eval = surrogate_loss(
            &encoded,
            &self.params,
            &self.reference,
            S::of(self.config.clip_eps),
            S::of(self.config.kl_coef),
        )?;
        if eval.grad.iter().any(|g| !g.is_finite()) || !eval.loss.is_finite() {
            return Err(GrpoError::NonFiniteGradient);
        }
        let consumer = self.params.version;
        self.params = self.params.descend(&eval.grad, S::of(self.config.learning_rate)).map_err(|_| GrpoError::NonFiniteGradient)?;
        self.updates += 1;
        let trajs: Vec<&Trajectory> = batch.trajectories().collect();
        let mean_reward = if trajs.is_empty() { 0.0 } else { trajs.iter().map(|t| t.accuracy).sum::<f64>() / trajs.len() as f64 };
        Ok(UpdateMetrics {
            update: self.updates,
            phase: phase.to_string(),
            mean_reward,
            entropy: eval.mean_entropy.f64(),
            kl: eval.mean_kl.f64(),
            clip_fraction: eval.clip_fraction,
            loss: eval.loss.f64(),
            reference_version: self.reference.version,
            batch_steps: batch.total_steps(),
            batch_trajectories: trajs.len(),
            max_version_gap: trajs.iter().map(|t| consumer.saturating_sub(t.policy_version)).max().unwrap_or(0),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replay::Step;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn group(rewards: &[&[f64]]) -> Vec<Trajectory> {
        rewards
            .iter()
            .map(|rs| {
                let mut t = Trajectory::new("t", 0);
                for &r in *rs {
                    let mut s = Step::bare("DONE", true, true);
                    s.reward = Some(r);
                    t.steps.push(s);
                }
                t.terminated = true;
                t
            })
            .collect()
    }

    #[test]
    fn hand_example() {
        let t = compute_advantages(&group(&[&[1.0, 1.0], &[0.0, 0.0]])).unwrap();
        assert_eq!(t.rewards, vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(t.mean, 0.5);
        assert_eq!(t.std, 0.5);
        assert_eq!(t.advantages, vec![vec![1.0, 1.0], vec![-1.0, -1.0]]);
    }

    #[test]
    fn degenerate_and_invalid_groups() {
        let t = compute_advantages(&group(&[&[1.0, 1.0], &[1.0]])).unwrap();
        assert!(t.advantages.iter().flatten().all(|&a| a == 0.0));
        let mut g = group(&[&[1.0], &[0.0]]);
        g[1].task_id = "other".into();
        assert!(matches!(compute_advantages(&g), Err(GrpoError::MixedTasks(..))));
        assert!(matches!(compute_advantages(&group(&[&[1.0]])), Err(GrpoError::GroupTooSmall(1))));
    }

    const DIM: usize = 16;

    fn random_batch(rng: &mut ChaCha8Rng) -> EncodedBatch<f64> {
        let groups = (0..rng.random_range(1..3))
            .map(|_| {
                (0..rng.random_range(1..4))
                    .map(|_| {
                        let n = rng.random_range(2..5);
                        EncodedStep {
                            rows: (0..n).map(|_| (0..rng.random_range(1..4)).map(|_| rng.random_range(0..DIM as u32)).collect()).collect(),
                            chosen: rng.random_range(0..n),
                            old_log_prob: -rng.random_range(0.1..2.0),
                            advantage: rng.random_range(-2.0..2.0),
                        }
                    })
                    .collect()
            })
            .collect();
        EncodedBatch { groups }
    }

    fn random_params(rng: &mut ChaCha8Rng) -> LinearPolicy<f64> {
        LinearPolicy { weights: (0..DIM).map(|_| rng.random_range(-1.0..1.0)).collect(), version: 0 }
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-6;
        for _ in 0..50 {
            let batch = random_batch(&mut rng);
            let p = random_params(&mut rng);
            let r = random_params(&mut rng);
            let eval = surrogate_loss(&batch, &p, &r, 0.2, 0.1).unwrap();
            for k in 0..DIM {
                let mut plus = p.clone();
                plus.weights[k] += h;
                let mut minus = p.clone();
                minus.weights[k] -= h;
                let fd = (surrogate_loss(&batch, &plus, &r, 0.2, 0.1).unwrap().loss
                    - surrogate_loss(&batch, &minus, &r, 0.2, 0.1).unwrap().loss)
                    / (2.0 * h);
                let g = eval.grad[k];
                assert!((fd - g).abs() <= 1e-5 * g.abs().max(1e-3), "k={k} fd={fd} g={g}");
            }
        }
    }

    #[test]
    fn single_step_clip_hand_case() {
        // ρ = 1.5 with A = 1, ε = 0.2 → contribution min(1.5, 1.2) = 1.2.
        let rows = vec![vec![0], vec![1]];
        let p = LinearPolicy::<f64>::zeros(2);
        let lp = p.log_prob_at(&rows, 0).unwrap();
        let st = EncodedStep { rows, chosen: 0, old_log_prob: lp - 1.5f64.ln(), advantage: 1.0 };
        let eval = surrogate_loss(&EncodedBatch { groups: vec![vec![st]] }, &p, &p, 0.2, 0.0).unwrap();
        assert!((eval.loss + 1.2).abs() < 1e-12);
        assert_eq!(eval.clip_fraction, 1.0);
        assert!(eval.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn on_policy_normalized_group_has_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_params(&mut rng);
        let advs = [1.0, 1.0, -1.0, -1.0];
        let steps = advs
            .iter()
            .map(|&a| {
                let rows: FeatureRows = vec![vec![1, 2], vec![3]];
                EncodedStep { old_log_prob: p.log_prob_at(&rows, 0).unwrap(), rows, chosen: 0, advantage: a }
            })
            .collect();
        let eval = surrogate_loss(&EncodedBatch { groups: vec![steps] }, &p, &p, 0.2, 0.5).unwrap();
        assert!(eval.loss.abs() < 1e-12);
        assert_eq!(eval.mean_kl, 0.0);
    }
}
