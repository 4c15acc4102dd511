//! Behavior-cloning cold start: multi-teacher collection, outcome strata, augmentation of
//! partially solved tasks, per-step teacher pools and success filtering.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterError, EnvCluster};
use crate::envsim::solver::{action_for, next_subgoal};
use crate::envsim::{Action, ActionSpace, ContextView, Subgoal, TaskSpec};
use crate::policy::{argmax, checkpoint, include_action, Featurizer, LinearPolicy};
use crate::replay::{Trajectory, TrajectoryLog};
use crate::rollout::{mix, par_map, run_episode, Actor, Agent, AgentRng, EpisodeSpec, PolicyAgent};
use crate::sft::{encode_examples, examples_from, train, SftExample};

#[derive(Debug, thiserror::Error)]
pub enum BcError {
    #[error("cluster unavailable: {0}")]
    ClusterUnavailable(#[from] ClusterError),
    #[error("no trajectory for task {0}")]
    MissingTask(String),
    #[error("task {0} has no successful trajectory to fine-tune on")]
    NoSuccessfulSeed(String),
    #[error("teacher pool is empty")]
    EmptyPool,
    #[error("teacher {0}: {1}")]
    Teacher(String, String),
    #[error(transparent)]
    Log(#[from] crate::replay::LogError),
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TeacherKind {
    ScriptedOptimal,
    ScriptedNoisy { p_error: f64 },
    PolicyCheckpoint { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Teacher {
    pub teacher_id: String,
    pub kind: TeacherKind,
    pub seed: u64,
    /// Subgoal tags the teacher can work on; empty means all.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skills: Vec<String>,
    /// Subgoal tags the teacher does not see at all.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub blind: Vec<String>,
}

impl Teacher {
    pub fn optimal(id: &str, seed: u64) -> Self {
        Teacher { teacher_id: id.into(), kind: TeacherKind::ScriptedOptimal, seed, skills: vec![], blind: vec![] }
    }

    pub fn noisy(id: &str, p_error: f64, seed: u64) -> Self {
        Teacher { kind: TeacherKind::ScriptedNoisy { p_error }, ..Teacher::optimal(id, seed) }
    }

    pub fn with_skills(mut self, tags: &[&str]) -> Self {
        self.skills = tags.iter().map(|t| t.to_string()).collect();
        self
    }

    pub fn with_blind(mut self, tags: &[&str]) -> Self {
        self.blind = tags.iter().map(|t| t.to_string()).collect();
        self
    }

    pub fn load_agent(&self) -> Result<TeacherAgent, BcError> {
        let policy = match &self.kind {
            TeacherKind::PolicyCheckpoint { path } => Some(
                checkpoint::load::<f64>(path).map_err(|e| BcError::Teacher(self.teacher_id.clone(), e.to_string()))?,
            ),
            TeacherKind::ScriptedNoisy { p_error } if !(0.0..=1.0).contains(p_error) => {
                return Err(BcError::Teacher(self.teacher_id.clone(), format!("p_error {p_error} outside [0, 1]")));
            }
            _ => None,
        };
        Ok(TeacherAgent { teacher: self.clone(), policy })
    }
}

/// The default cold-start pool: the LLM stand-ins know every app but ignore save requirements.
pub fn default_teachers() -> Vec<Teacher> {
    // Neither can delete anything and both stop before saving, leaving work for RL.
    let skills = ["cell", "file", "dir", "line", "replaced", "saved"];
    vec![
        Teacher::optimal("scripted-a", 1).with_blind(&["saved"]).with_skills(&skills),
        Teacher::noisy("scripted-b", 0.2, 2).with_blind(&["saved"]).with_skills(&skills),
    ]
}

/// Reads a JSON array or line-delimited JSON file of teachers.
pub fn load_teachers(path: &Path) -> Result<Vec<Teacher>, BcError> {
    let text = std::fs::read_to_string(path).map_err(|e| BcError::Teacher(path.display().to_string(), e.to_string()))?;
    let bad = |e: serde_json::Error| BcError::Teacher(path.display().to_string(), e.to_string());
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).map_err(bad);
    }
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).map_err(bad)).collect()
}

pub struct TeacherAgent {
    pub teacher: Teacher,
    policy: Option<LinearPolicy<f64>>,
}

impl TeacherAgent {
    /// Scripted action from the teacher's limited view of the goal.
    fn scripted(&self, view: &ContextView) -> Action {
        let t = &self.teacher;
        let goal: Vec<Subgoal> = view.goal.iter().filter(|g| !t.blind.iter().any(|b| b == g.tag())).cloned().collect();
        if next_subgoal(&goal, &view.state).is_none() {
            return Action::done();
        }
        let workable: Vec<Subgoal> =
            goal.iter().filter(|g| t.skills.is_empty() || t.skills.iter().any(|s| s == g.tag())).cloned().collect();
        match next_subgoal(&workable, &view.state) {
            Some(sub) => action_for(sub, &goal, &view.state, !view.state.apis.is_empty()),
            // Nothing it knows how to do: wait for someone else.
            None => Action::scroll(1),
        }
    }
}

impl Agent for TeacherAgent {
    fn name(&self) -> String {
        self.teacher.teacher_id.clone()
    }

    fn choose(&self, view: &ContextView, candidates: &mut Vec<String>, rng: &mut AgentRng) -> (usize, f64) {
        if let Some(p) = &self.policy {
            let rows = Featurizer::new(p.dim()).encode_view(view, candidates);
            let scores = p.scores(&rows);
            return (argmax(&scores), 0.0);
        }
        if let TeacherKind::ScriptedNoisy { p_error } = self.teacher.kind {
            if rng.random::<f64>() < p_error {
                return (rng.random_range(0..candidates.len()), 0.0);
            }
        }
        let action = self.scripted(view);
        (include_action(candidates, &action.raw_text), 0.0)
    }
}

fn task_seed(task: &TaskSpec) -> u64 {
    crate::policy::features::fnv1a(task.task_id.as_bytes())
}

/// `n_per_task` rollouts for every (task, teacher) pair, logged in (task, teacher, sample) order.
pub fn collect_initial(
    cluster: &dyn EnvCluster,
    tasks: &[TaskSpec],
    teachers: &[Teacher],
    n_per_task: usize,
    space: ActionSpace,
    log: Option<&TrajectoryLog>,
) -> Result<Vec<Trajectory>, BcError> {
    let agents = teachers.iter().map(Teacher::load_agent).collect::<Result<Vec<_>, _>>()?;
    let mut jobs = vec![];
    for task in tasks {
        for agent in &agents {
            for n in 0..n_per_task {
                jobs.push((task, agent, mix(mix(agent.teacher.seed, task_seed(task)), n as u64)));
            }
        }
    }
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let results = par_map(&jobs, threads, |_, (task, agent, seed)| {
        run_episode(cluster, EpisodeSpec { task, space, seed: *seed }, &Actor::Single(*agent))
    });
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        let t = r?;
        if let Some(log) = log {
            log.append(&t)?;
        }
        out.push(t);
    }
    if let Some(log) = log {
        log.flush()?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratumClass {
    FullySolved,
    PartiallySolved,
    Unsolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeStratum {
    pub task_id: String,
    pub accuracies: Vec<f64>,
    pub class: StratumClass,
}

/// Unsolved iff every sample scored 0; fully solved iff the mean is 1; partial otherwise.
pub fn classify(accuracies: &[f64]) -> StratumClass {
    if accuracies.iter().all(|&a| a == 0.0) {
        StratumClass::Unsolved
    } else if accuracies.iter().sum::<f64>() / accuracies.len() as f64 >= 1.0 {
        StratumClass::FullySolved
    } else {
        StratumClass::PartiallySolved
    }
}

pub fn stratify(task_ids: &[String], log: &[Trajectory]) -> Result<Vec<OutcomeStratum>, BcError> {
    let mut by_task: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for t in log {
        by_task.entry(&t.task_id).or_default().push(t.accuracy);
    }
    task_ids
        .iter()
        .map(|id| {
            let accuracies = by_task.get(id.as_str()).cloned().ok_or_else(|| BcError::MissingTask(id.clone()))?;
            Ok(OutcomeStratum { task_id: id.clone(), class: classify(&accuracies), accuracies })
        })
        .collect()
}

/// Successful trajectories only, flattened to step pairs in order.
pub fn filter_success(log: &[Trajectory]) -> Vec<SftExample> {
    log.iter().filter(|t| t.success).flat_map(examples_from).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub space: ActionSpace,
}

/// Fine-tunes `base` on the tasks' existing successes, then samples `rounds` new rollouts per task.
pub fn augment_partial(
    cluster: &dyn EnvCluster,
    tasks: &[TaskSpec],
    log: &[Trajectory],
    base: &LinearPolicy<f64>,
    rounds: usize,
    cfg: AugmentConfig,
) -> Result<(LinearPolicy<f64>, Vec<Trajectory>), BcError> {
    let ids: HashSet<&str> = tasks.iter().map(|t| t.task_id.as_str()).collect();
    for t in tasks {
        if !log.iter().any(|x| x.task_id == t.task_id && x.success) {
            return Err(BcError::NoSuccessfulSeed(t.task_id.clone()));
        }
    }
    let seeds: Vec<Trajectory> = log.iter().filter(|t| ids.contains(t.task_id.as_str())).cloned().collect();
    let f = Featurizer::new(base.dim());
    let data = encode_examples(&f, &filter_success(&seeds));
    let tuned = train(base, &data, cfg.epochs, cfg.lr, cfg.seed)?;
    let agent = PolicyAgent::sampling(&tuned, f);
    let mut jobs = vec![];
    for task in tasks {
        for r in 0..rounds {
            jobs.push((task, mix(mix(cfg.seed, task_seed(task)), 1000 + r as u64)));
        }
    }
    let results = par_map(&jobs, std::thread::available_parallelism().map_or(1, |n| n.get()), |_, (task, seed)| {
        run_episode(cluster, EpisodeSpec { task, space: cfg.space, seed: *seed }, &Actor::Single(&agent))
    });
    let mut out = vec![];
    for r in results {
        let mut t = r?;
        t.provenance.source = "augment".into();
        out.push(t);
    }
    Ok((tuned, out))
}

/// One rollout where each step's action comes from a teacher drawn uniformly from `pool`.
pub fn pool_rollout(
    cluster: &dyn EnvCluster,
    task: &TaskSpec,
    pool: &[TeacherAgent],
    seed: u64,
    space: ActionSpace,
) -> Result<Trajectory, BcError> {
    if pool.is_empty() {
        return Err(BcError::EmptyPool);
    }
    let agents: Vec<&dyn Agent> = pool.iter().map(|a| a as &dyn Agent).collect();
    Ok(run_episode(cluster, EpisodeSpec { task, space, seed }, &Actor::Pool(&agents))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BcConfig {
    pub n_per_task: usize,
    pub augment_rounds: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub space: ActionSpace,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig { n_per_task: 4, augment_rounds: 4, epochs: 3, lr: 0.5, seed: 0, space: ActionSpace::ApiGui }
    }
}

#[derive(Debug, Clone)]
pub struct BcOutcome {
    pub params: LinearPolicy<f64>,
    pub log: Vec<Trajectory>,
    pub strata: Vec<OutcomeStratum>,
    pub dataset_len: usize,
}

/// The full cold-start pipeline: collect, stratify, augment partial tasks, filter, fine-tune.
pub fn run_bc(
    cluster: &dyn EnvCluster,
    tasks: &[TaskSpec],
    teachers: &[Teacher],
    base: &LinearPolicy<f64>,
    cfg: BcConfig,
    log: Option<&TrajectoryLog>,
) -> Result<BcOutcome, BcError> {
    let mut all = collect_initial(cluster, tasks, teachers, cfg.n_per_task, cfg.space, log)?;
    let ids: Vec<String> = tasks.iter().map(|t| t.task_id.clone()).collect();
    let strata = stratify(&ids, &all)?;
    let partial: Vec<TaskSpec> = tasks
        .iter()
        .zip(&strata)
        .filter(|(_, s)| s.class == StratumClass::PartiallySolved && s.accuracies.iter().any(|&a| a >= 1.0))
        .map(|(t, _)| t.clone())
        .collect();
    if !partial.is_empty() && cfg.augment_rounds > 0 {
        let acfg = AugmentConfig { epochs: cfg.epochs, lr: cfg.lr, seed: cfg.seed, space: cfg.space };
        let (_, extra) = augment_partial(cluster, &partial, &all, base, cfg.augment_rounds, acfg)?;
        if let Some(log) = log {
            for t in &extra {
                log.append(t)?;
            }
            log.flush()?;
        }
        all.extend(extra);
    }
    let f = Featurizer::new(base.dim());
    let data = encode_examples(&f, &filter_success(&all));
    let params = train(base, &data, cfg.epochs, cfg.lr, cfg.seed)?;
    Ok(BcOutcome { params, log: all, strata, dataset_len: data.len() })
}
