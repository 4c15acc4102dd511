//! Agents, episode execution over a cluster, and greedy evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterError, EnvCluster};
use crate::envsim::reward::finalize;
use crate::envsim::{format_context, ActionSpace, ContextView, Domain, TaskSpec};
use crate::policy::{argmax, enumerate_candidates, sample_index, Featurizer, LinearPolicy};
use crate::replay::{Provenance, Step, Trajectory};
use crate::Scalar;

pub type AgentRng = ChaCha8Rng;

/// Episodes are retried from scratch this many times when their session is lost.
pub const MAX_ATTEMPTS: usize = 4;

/// SplitMix64 finalizer over two words; used to derive independent seeds.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn rng_for(seed: u64) -> AgentRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Anything that picks actions: a policy or a scripted teacher.
pub trait Agent: Send + Sync {
    fn name(&self) -> String;

    /// Version of the parameters behind the agent; teachers report 0.
    fn version(&self) -> u64 {
        0
    }

    /// Picks an action, adding it to `candidates` if needed. Returns its index and log-probability.
    fn choose(&self, view: &ContextView, candidates: &mut Vec<String>, rng: &mut AgentRng) -> (usize, f64);
}

/// Samples from (or takes the argmax of) a linear policy over enumerated candidates.
pub struct PolicyAgent<'a, S: Scalar> {
    pub policy: &'a LinearPolicy<S>,
    pub featurizer: Featurizer,
    pub greedy: bool,
}

impl<'a, S: Scalar> PolicyAgent<'a, S> {
    pub fn sampling(policy: &'a LinearPolicy<S>, featurizer: Featurizer) -> Self {
        PolicyAgent { policy, featurizer, greedy: false }
    }

    pub fn greedy(policy: &'a LinearPolicy<S>, featurizer: Featurizer) -> Self {
        PolicyAgent { policy, featurizer, greedy: true }
    }
}

impl<S: Scalar> Agent for PolicyAgent<'_, S> {
    fn name(&self) -> String {
        "policy".into()
    }

    fn version(&self) -> u64 {
        self.policy.version
    }

    fn choose(&self, view: &ContextView, candidates: &mut Vec<String>, rng: &mut AgentRng) -> (usize, f64) {
        let rows = self.featurizer.encode_view(view, candidates);
        let log_probs = self.policy.log_probs(&rows).expect("candidate set is never empty");
        let idx = if self.greedy {
            argmax(&log_probs)
        } else {
            let probs: Vec<S> = log_probs.iter().map(|l| l.exp()).collect();
            sample_index(&probs, rng.random::<f64>())
        };
        (idx, log_probs[idx].f64())
    }
}

/// How a rollout picks its acting agent each step.
pub enum Actor<'a> {
    Single(&'a dyn Agent),
    /// A teacher drawn uniformly per step; the draw uses its own seeded stream.
    Pool(&'a [&'a dyn Agent]),
}

impl Actor<'_> {
    fn source(&self) -> String {
        match self {
            Actor::Single(a) if a.name() == "policy" => "policy".into(),
            Actor::Single(a) => format!("teacher:{}", a.name()),
            Actor::Pool(_) => "pool".into(),
        }
    }

    fn version(&self) -> u64 {
        match self {
            Actor::Single(a) => a.version(),
            Actor::Pool(p) => p.iter().map(|a| a.version()).max().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpisodeSpec<'a> {
    pub task: &'a TaskSpec,
    pub space: ActionSpace,
    /// Seeds both the environment and the agent's sampling stream.
    pub seed: u64,
}

/// Runs one episode to termination. A lost session restarts the episode on a new slot with the
/// same seed, so the result does not depend on failures.
pub fn run_episode(cluster: &dyn EnvCluster, spec: EpisodeSpec<'_>, actor: &Actor<'_>) -> Result<Trajectory, ClusterError> {
    let mut lost: Option<String> = None;
    for _ in 0..MAX_ATTEMPTS {
        match attempt(cluster, spec, actor, lost.as_deref()) {
            Err(ClusterError::SessionLost(s)) => lost = Some(s),
            other => return other,
        }
    }
    Err(ClusterError::Unavailable(format!("episode for {} lost {MAX_ATTEMPTS} times", spec.task.task_id)))
}

fn attempt(cluster: &dyn EnvCluster, spec: EpisodeSpec<'_>, actor: &Actor<'_>, realloc_of: Option<&str>) -> Result<Trajectory, ClusterError> {
    let alloc = cluster.allocate(spec.task, spec.seed, spec.space, realloc_of)?;
    let session = alloc.session_id.clone();
    let result = drive(cluster, spec, actor, &session, alloc.observation);
    match &result {
        Err(ClusterError::SessionLost(_)) => {}
        _ => {
            let _ = cluster.release(&session);
        }
    }
    result.map_err(|e| match e {
        ClusterError::SessionLost(_) => ClusterError::SessionLost(session.clone()),
        other => other,
    })
}

fn drive(
    cluster: &dyn EnvCluster,
    spec: EpisodeSpec<'_>,
    actor: &Actor<'_>,
    session: &str,
    mut observation: String,
) -> Result<Trajectory, ClusterError> {
    let mut rng = rng_for(mix(spec.seed, 0xa5));
    let mut pool_rng = rng_for(mix(spec.seed, 0x9001));
    let mut traj = Trajectory::new(&spec.task.task_id, actor.version());
    traj.provenance = Provenance { source: actor.source(), seed: spec.seed };
    let mut history: Vec<String> = vec![];
    loop {
        let context = format_context(&spec.task.goal, &observation, &history);
        let view = ContextView::parse(&context).map_err(|e| ClusterError::Protocol(format!("bad observation: {e}")))?;
        let mut candidates = enumerate_candidates(&view);
        let (agent, teacher) = match actor {
            Actor::Single(a) => (*a, None),
            Actor::Pool(pool) => {
                let a = pool[pool_rng.random_range(0..pool.len())];
                (a, Some(a.name()))
            }
        };
        let (chosen, old_log_prob) = agent.choose(&view, &mut candidates, &mut rng);
        let action = candidates[chosen].clone();
        let reply = cluster.step(session, traj.steps.len() as u64 + 1, &action)?;
        traj.steps.push(Step {
            context,
            action: action.clone(),
            candidates,
            chosen,
            old_log_prob,
            reward: None,
            well_formed: !reply.outcome.malformed,
            accepted: reply.outcome.accepted,
            teacher,
        });
        history.push(action);
        observation = reply.outcome.observation;
        if reply.outcome.done {
            traj.terminated = true;
            let accuracy = reply.accuracy.unwrap_or(0.0);
            finalize(&mut traj, accuracy).expect("terminated trajectory with steps");
            return Ok(traj);
        }
    }
}

/// Maps `f` over `items` on up to `threads` scoped threads; output order matches input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(usize, &T) -> R + Sync) -> Vec<R> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<parking_lot::Mutex<Option<R>>> = items.iter().map(|_| parking_lot::Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                *slots[i].lock() = Some(f(i, &items[i]));
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().expect("every slot filled")).collect()
}

/// `size` sampled rollouts of one task forming one GRPO group.
pub fn run_group(
    cluster: &dyn EnvCluster,
    task: &TaskSpec,
    space: ActionSpace,
    seed: u64,
    group_id: u64,
    size: usize,
    agent: &dyn Agent,
) -> Result<Vec<Trajectory>, ClusterError> {
    (0..size)
        .map(|member| {
            let spec = EpisodeSpec { task, space, seed: mix(seed, member as u64) };
            let mut t = run_episode(cluster, spec, &Actor::Single(agent))?;
            t.group_id = group_id;
            t.group_size = size as u32;
            Ok(t)
        })
        .collect()
}

/// Per-domain success counts in the Table 2 layout.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    /// domain → (solved, attempted)
    pub per_domain: BTreeMap<Domain, (usize, usize)>,
}

pub const EVAL_COLUMNS: [&str; 6] = ["OS", "Office", "Daily", "Professional", "Workflow", "Avg"];

impl EvalTable {
    pub fn record(&mut self, domain: Domain, success: bool) {
        let e = self.per_domain.entry(domain).or_default();
        e.1 += 1;
        if success {
            e.0 += 1;
        }
    }

    /// Success rate in percent; `None` if the domain had no tasks.
    pub fn rate(&self, domain: Domain) -> Option<f64> {
        self.per_domain.get(&domain).filter(|(_, n)| *n > 0).map(|(s, n)| 100.0 * *s as f64 / *n as f64)
    }

    /// Mean of the per-domain rates.
    pub fn avg(&self) -> f64 {
        let rates: Vec<f64> = Domain::ALL.iter().filter_map(|d| self.rate(*d)).collect();
        if rates.is_empty() {
            0.0
        } else {
            rates.iter().sum::<f64>() / rates.len() as f64
        }
    }

    pub fn values(&self) -> [Option<f64>; 6] {
        let mut out = [None; 6];
        for (i, d) in Domain::ALL.iter().enumerate() {
            out[i] = self.rate(*d);
        }
        out[5] = Some(self.avg());
        out
    }

    /// Markdown-style table with an optional leading label column.
    pub fn render(&self, label: Option<&str>) -> String {
        let mut out = String::new();
        let cells: Vec<String> = self.values().iter().map(|v| v.map_or("-".into(), |x| format!("{x:.1}"))).collect();
        if let Some(l) = label {
            let _ = writeln!(out, "| Method | {} |", EVAL_COLUMNS.join(" | "));
            let _ = writeln!(out, "|---{}|", "|---".repeat(EVAL_COLUMNS.len()));
            let _ = writeln!(out, "| {l} | {} |", cells.join(" | "));
        } else {
            let _ = writeln!(out, "| {} |", EVAL_COLUMNS.join(" | "));
            let _ = writeln!(out, "|{}", "---|".repeat(EVAL_COLUMNS.len()));
            let _ = writeln!(out, "| {} |", cells.join(" | "));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub table: EvalTable,
    pub trajectories: Vec<Trajectory>,
}

impl EvalReport {
    pub fn mean_accuracy(&self) -> f64 {
        if self.trajectories.is_empty() {
            return 0.0;
        }
        self.trajectories.iter().map(|t| t.accuracy).sum::<f64>() / self.trajectories.len() as f64
    }

    /// Median episode length over solved tasks.
    pub fn median_success_steps(&self) -> Option<f64> {
        let mut lens: Vec<usize> = self.trajectories.iter().filter(|t| t.success).map(|t| t.len()).collect();
        if lens.is_empty() {
            return None;
        }
        lens.sort_unstable();
        let n = lens.len();
        Some(if n % 2 == 1 { lens[n / 2] as f64 } else { (lens[n / 2 - 1] + lens[n / 2]) as f64 / 2.0 })
    }
}

/// One episode per task with the given agent (pass a greedy agent for the standard protocol).
pub fn evaluate(
    cluster: &dyn EnvCluster,
    agent: &dyn Agent,
    tasks: &[TaskSpec],
    space: ActionSpace,
    seed: u64,
) -> Result<EvalReport, ClusterError> {
    let mut table = EvalTable::default();
    let mut trajectories = vec![];
    for (i, task) in tasks.iter().enumerate() {
        let t = run_episode(cluster, EpisodeSpec { task, space, seed: mix(seed, i as u64) }, &Actor::Single(agent))?;
        table.record(task.domain, t.success);
        trajectories.push(t);
    }
    Ok(EvalReport { table, trajectories })
}
