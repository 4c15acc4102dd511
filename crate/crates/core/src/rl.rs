//! The RL phase loop: rollouts for update `u + 1` are produced by the pre-update policy while
//! the trainer consumes batch `u`, so every batch is at most one version stale.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterError, EnvCluster};
use crate::envsim::{ActionSpace, TaskSpec};
use crate::grpo::{GrpoError, Trainer, UpdateMetrics};
use crate::policy::{Featurizer, LinearPolicy};
use crate::replay::{DrainMode, ReplayBuffer, ReplayConfig, Trajectory};
use crate::rollout::{mix, par_map, rng_for, run_group, PolicyAgent};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlConfig {
    /// Task groups sampled per rollout round.
    pub tasks_per_round: usize,
    pub seed: u64,
    pub space: ActionSpace,
    /// Rollout threads; results do not depend on it.
    pub threads: usize,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig { tasks_per_round: 4, seed: 0, space: ActionSpace::ApiGui, threads: 1 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RlError {
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error("rollouts never filled a batch of {0} steps")]
    Starved(usize),
}

/// Rollout producer plus replay engine for one training run.
pub struct RlLoop<'a> {
    cluster: &'a dyn EnvCluster,
    tasks: &'a [TaskSpec],
    pub config: RlConfig,
    pub replay: ReplayBuffer,
    round: u64,
    pending: Option<Vec<Trajectory>>,
}

impl<'a> RlLoop<'a> {
    pub fn new(cluster: &'a dyn EnvCluster, tasks: &'a [TaskSpec], config: RlConfig, replay: ReplayConfig) -> Self {
        RlLoop { cluster, tasks, config, replay: ReplayBuffer::new(replay), round: 0, pending: None }
    }

    pub fn rounds(&self) -> u64 {
        self.round
    }

    /// Continues the round counter of an earlier loop so rollout seeds never repeat.
    pub fn skip_rounds(&mut self, rounds: u64) {
        self.round = self.round.max(rounds);
    }

    /// One rollout round: `tasks_per_round` distinct tasks, a full group each.
    fn generate(&mut self, params: &LinearPolicy<f64>, f: Featurizer, group: usize) -> Result<Vec<Trajectory>, ClusterError> {
        let round = self.round;
        self.round += 1;
        produce(self.cluster, self.tasks, self.config, round, params, f, group)
    }

    /// Drops rollouts produced for an update that will not happen (end of phase).
    pub fn finish_phase(&mut self) {
        self.pending = None;
    }

    /// Runs one trainer update. `observe` sees every rollout as it is produced.
    pub fn step(
        &mut self,
        trainer: &mut Trainer<f64>,
        phase: &str,
        observe: &mut dyn FnMut(&Trajectory),
    ) -> Result<UpdateMetrics, RlError> {
        let min = self.replay.config().min_batch_steps;
        let max = self.replay.config().max_batch_steps;
        let mut tries = 0;
        let batch = loop {
            let fresh = match self.pending.take() {
                Some(p) => p,
                None => {
                    let snapshot = trainer.params.clone();
                    self.generate(&snapshot, trainer.featurizer, trainer.config.group_size)?
                }
            };
            for t in fresh {
                observe(&t);
                self.replay.push(t);
            }
            let b = self.replay.drain_batch(min, max, DrainMode::NonBlocking);
            if !b.is_empty() {
                break b;
            }
            tries += 1;
            if tries > 16 {
                return Err(RlError::Starved(min));
            }
        };
        let snapshot = trainer.params.clone();
        let round = self.round;
        self.round += 1;
        let (cluster, tasks, cfg) = (self.cluster, self.tasks, self.config);
        let (f, group) = (trainer.featurizer, trainer.config.group_size);
        let (metrics, next) = std::thread::scope(|s| {
            let producer = s.spawn(|| produce(cluster, tasks, cfg, round, &snapshot, f, group));
            let m = trainer.update(&batch, phase);
            (m, producer.join().expect("rollout thread panicked"))
        });
        let metrics = metrics?;
        self.pending = Some(next?);
        self.replay.advance_version(trainer.params.version).expect("trainer versions increase");
        Ok(metrics)
    }
}

fn produce(
    cluster: &dyn EnvCluster,
    tasks: &[TaskSpec],
    cfg: RlConfig,
    round: u64,
    params: &LinearPolicy<f64>,
    f: Featurizer,
    g: usize,
) -> Result<Vec<Trajectory>, ClusterError> {
    let k = cfg.tasks_per_round.min(tasks.len());
    let mut rng = rng_for(mix(cfg.seed, round));
    let picked = sample(&mut rng, tasks.len(), k).into_vec();
    let agent = PolicyAgent::sampling(params, f);
    let groups = par_map(&picked, cfg.threads, |i, &t| {
        run_group(cluster, &tasks[t], cfg.space, mix(mix(cfg.seed, round), t as u64), round * 1000 + i as u64, g, &agent)
    });
    let mut out = vec![];
    for g in groups {
        out.extend(g?);
    }
    Ok(out)
}
