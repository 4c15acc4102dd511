//! Rule-based step rewards.
//!
//! A trajectory that solves its task (accuracy exactly 1.0) gives reward 1 to
//! every step that was well formed and accepted by the environment; every
//! other step, and every step of an unsolved trajectory, gets 0.

use crate::replay::Trajectory;

/// Accuracy at or above which a trajectory counts as solving its task.
pub const SUCCESS_ACCURACY: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RewardError {
    #[error("trajectory for `{0}` has not terminated")]
    IncompleteTrajectory(String),
}

pub fn is_success(accuracy: f64) -> bool {
    accuracy >= SUCCESS_ACCURACY
}

pub fn assign_rewards(traj: &Trajectory, accuracy: f64) -> Result<Vec<f64>, RewardError> {
    if !traj.terminated || traj.steps.is_empty() {
        return Err(RewardError::IncompleteTrajectory(traj.task_id.clone()));
    }
    let solved = is_success(accuracy);
    Ok(traj
        .steps
        .iter()
        .map(|s| if solved && s.well_formed && s.accepted { 1.0 } else { 0.0 })
        .collect())
}

/// Records the terminal accuracy on `traj` and writes the step rewards into it.
pub fn finalize(traj: &mut Trajectory, accuracy: f64) -> Result<(), RewardError> {
    let rewards = assign_rewards(traj, accuracy)?;
    traj.accuracy = accuracy;
    traj.success = is_success(accuracy);
    for (step, r) in traj.steps.iter_mut().zip(rewards) {
        step.reward = Some(r);
    }
    Ok(())
}
