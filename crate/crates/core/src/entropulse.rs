//! Entropulse: keep every successful rollout, fine-tune on a per-task sample of them between RL
//! phases to restore policy entropy, and drive the whole phase schedule.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::bc::{self, BcConfig, BcError, Teacher};
use crate::cluster::{ClusterError, EnvCluster};
use crate::envsim::{ActionSpace, TaskSpec};
use crate::grpo::{ReferenceReset, Trainer, TrainerConfig, UpdateMetrics};
use crate::policy::{Featurizer, LinearPolicy, PolicyError};
use crate::replay::{ReplayConfig, Trajectory};
use crate::rl::{RlConfig, RlError, RlLoop};
use crate::rollout::{evaluate, mix, rng_for, PolicyAgent};
use crate::sft::{encode_examples, examples_from, train, SftExample};

#[derive(Debug, thiserror::Error)]
pub enum EntropulseError {
    #[error("success store is empty")]
    EmptyStore,
    #[error("series has {len} updates, window needs {window}")]
    SeriesTooShort { len: usize, window: usize },
    #[error("cluster unavailable: {0}")]
    ClusterUnavailable(ClusterError),
    #[error("aborted by operator")]
    AbortedByOperator,
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("training failed: {0}")]
    Training(String),
}

impl From<ClusterError> for EntropulseError {
    fn from(e: ClusterError) -> Self {
        EntropulseError::ClusterUnavailable(e)
    }
}

impl From<RlError> for EntropulseError {
    fn from(e: RlError) -> Self {
        match e {
            RlError::Cluster(c) => EntropulseError::ClusterUnavailable(c),
            other => EntropulseError::Training(other.to_string()),
        }
    }
}

impl From<BcError> for EntropulseError {
    fn from(e: BcError) -> Self {
        match e {
            BcError::ClusterUnavailable(c) => EntropulseError::ClusterUnavailable(c),
            other => EntropulseError::Training(other.to_string()),
        }
    }
}

/// Successful trajectories per task, deduplicated by action sequence.
#[derive(Debug, Clone, Default)]
pub struct SuccessStore {
    by_task: BTreeMap<String, Vec<Trajectory>>,
    seen: HashSet<(String, Vec<String>)>,
}

impl SuccessStore {
    /// Stores `traj` if it succeeded and its action sequence is new for its task.
    pub fn record_success(&mut self, traj: &Trajectory) -> bool {
        if !traj.success {
            return false;
        }
        let key = (traj.task_id.clone(), traj.steps.iter().map(|s| s.action.clone()).collect());
        if !self.seen.insert(key) {
            return false;
        }
        self.by_task.entry(traj.task_id.clone()).or_default().push(traj.clone());
        true
    }

    pub fn len(&self) -> usize {
        self.by_task.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_task.is_empty()
    }

    pub fn tasks(&self) -> impl Iterator<Item = &str> {
        self.by_task.keys().map(String::as_str)
    }

    pub fn get(&self, task: &str) -> &[Trajectory] {
        self.by_task.get(task).map_or(&[], Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub task_id: String,
    pub policy_version: u64,
    pub source: String,
    pub seed: u64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub per_task_k: usize,
    pub trajectories: Vec<ManifestEntry>,
    /// Distinct generating policy versions behind the data.
    pub policy_versions: BTreeSet<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SftDataset {
    pub examples: Vec<SftExample>,
    pub manifest: DatasetManifest,
}

impl SftDataset {
    pub fn write_manifest(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.manifest).expect("manifest serializes"))
    }
}

/// Up to `per_task_k` stored successes per task, drawn without replacement from `seed`.
pub fn build_sft_dataset(store: &SuccessStore, per_task_k: usize, seed: u64) -> Result<SftDataset, EntropulseError> {
    if store.is_empty() {
        return Err(EntropulseError::EmptyStore);
    }
    let mut examples = vec![];
    let mut entries = vec![];
    for (i, (task, trajs)) in store.by_task.iter().enumerate() {
        let mut rng = rng_for(mix(seed, i as u64));
        let k = per_task_k.min(trajs.len());
        let mut picked = sample(&mut rng, trajs.len(), k).into_vec();
        picked.sort_unstable();
        for j in picked {
            let t = &trajs[j];
            examples.extend(examples_from(t));
            entries.push(ManifestEntry {
                task_id: task.clone(),
                policy_version: t.policy_version,
                source: t.provenance.source.clone(),
                seed: t.provenance.seed,
                steps: t.len(),
            });
        }
    }
    let policy_versions = entries.iter().map(|e| e.policy_version).collect();
    Ok(SftDataset { examples, manifest: DatasetManifest { seed, per_task_k, trajectories: entries, policy_versions } })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftReport {
    pub examples: usize,
    pub epochs: usize,
    pub entropy_before: f64,
    pub entropy_after: f64,
    pub eval_reward_before: f64,
    pub eval_reward_after: f64,
    /// Set when eval reward dropped by more than the stability tolerance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Allowed eval-reward drop across an SFT phase before a warning is raised.
pub const STABILITY_TOLERANCE: f64 = 0.05;

/// Held-out states for entropy plus an optional reward evaluator.
pub struct Probe<'a> {
    pub states: Vec<SftExample>,
    pub eval: Option<&'a dyn Fn(&LinearPolicy<f64>) -> Result<f64, EntropulseError>>,
}

impl Probe<'_> {
    pub fn mean_entropy(&self, p: &LinearPolicy<f64>, f: &Featurizer) -> Result<f64, EntropulseError> {
        if self.states.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for s in &self.states {
            total += p.entropy_rows(&f.encode(&s.context, &s.candidates))?;
        }
        Ok(total / self.states.len() as f64)
    }

    fn reward(&self, p: &LinearPolicy<f64>) -> Result<f64, EntropulseError> {
        self.eval.map_or(Ok(0.0), |e| e(p))
    }
}

pub fn run_sft_phase(
    params: &LinearPolicy<f64>,
    dataset: &SftDataset,
    epochs: usize,
    lr: f64,
    seed: u64,
    probe: &Probe<'_>,
) -> Result<(LinearPolicy<f64>, SftReport), EntropulseError> {
    let f = Featurizer::new(params.dim());
    let entropy_before = probe.mean_entropy(params, &f)?;
    let eval_reward_before = probe.reward(params)?;
    let data = encode_examples(&f, &dataset.examples);
    let next = train(params, &data, epochs, lr, seed)?;
    let (entropy_after, eval_reward_after) =
        if epochs == 0 { (entropy_before, eval_reward_before) } else { (probe.mean_entropy(&next, &f)?, probe.reward(&next)?) };
    let warning = (eval_reward_after < eval_reward_before - STABILITY_TOLERANCE).then(|| {
        format!("eval reward fell from {eval_reward_before:.3} to {eval_reward_after:.3} during SFT")
    });
    let report = SftReport { examples: data.len(), epochs, entropy_before, entropy_after, eval_reward_before, eval_reward_after, warning };
    Ok((next, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub window: usize,
    /// Reward slope per update below which progress counts as stalled.
    pub min_slope: f64,
    pub entropy_floor: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig { window: 20, min_slope: 1e-3, entropy_floor: 0.5 }
    }
}

/// Least-squares slope of `ys` against 0, 1, 2, …
pub fn slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// True iff the last `window` updates show a reward slope below `min_slope` and mean entropy below the floor.
pub fn detect_plateau(series: &[UpdateMetrics], cfg: &PlateauConfig) -> Result<bool, EntropulseError> {
    if series.len() < cfg.window || cfg.window == 0 {
        return Err(EntropulseError::SeriesTooShort { len: series.len(), window: cfg.window });
    }
    let tail = &series[series.len() - cfg.window..];
    let rewards: Vec<f64> = tail.iter().map(|m| m.mean_reward).collect();
    let entropy = tail.iter().map(|m| m.entropy).sum::<f64>() / tail.len() as f64;
    Ok(slope(&rewards) < cfg.min_slope && entropy < cfg.entropy_floor)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhaseSpec {
    Bc {
        name: String,
        #[serde(default)]
        n_per_task: Option<usize>,
        #[serde(default)]
        augment_rounds: Option<usize>,
        #[serde(default)]
        epochs: Option<usize>,
        #[serde(default)]
        lr: Option<f64>,
    },
    Rl {
        name: String,
        updates: usize,
    },
    Sft {
        name: String,
        #[serde(default = "default_epochs")]
        epochs: usize,
        #[serde(default = "default_sft_lr")]
        lr: f64,
        #[serde(default = "default_k")]
        per_task_k: usize,
    },
}

fn default_epochs() -> usize {
    3
}
fn default_sft_lr() -> f64 {
    0.5
}
fn default_k() -> usize {
    2
}

impl PhaseSpec {
    pub fn name(&self) -> &str {
        match self {
            PhaseSpec::Bc { name, .. } | PhaseSpec::Rl { name, .. } | PhaseSpec::Sft { name, .. } => name,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PhaseSpec::Bc { .. } => "bc",
            PhaseSpec::Rl { .. } => "rl",
            PhaseSpec::Sft { .. } => "sft",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub phases: Vec<PhaseSpec>,
    #[serde(default)]
    pub plateau: PlateauConfig,
    /// End RL phases early when a plateau is detected.
    #[serde(default)]
    pub auto_pulse: bool,
}

impl Schedule {
    pub fn validate(&self) -> Result<(), EntropulseError> {
        let bad = |m: String| Err(EntropulseError::InvalidSchedule(m));
        if self.phases.is_empty() {
            return bad("no phases".into());
        }
        let mut names = HashSet::new();
        for (i, p) in self.phases.iter().enumerate() {
            if !names.insert(p.name()) {
                return bad(format!("duplicate phase name `{}`", p.name()));
            }
            match p {
                PhaseSpec::Rl { updates: 0, .. } => return bad(format!("phase `{}` has a zero budget", p.name())),
                PhaseSpec::Sft { epochs: 0, .. } | PhaseSpec::Sft { per_task_k: 0, .. } => {
                    return bad(format!("phase `{}` has a zero budget", p.name()))
                }
                PhaseSpec::Sft { lr, .. } if !(lr.is_finite() && *lr > 0.0) => {
                    return bad(format!("phase `{}` needs a positive learning rate", p.name()))
                }
                PhaseSpec::Bc { .. } if i != 0 => return bad("a bc phase may only come first".into()),
                _ => {}
            }
        }
        if self.plateau.window == 0 {
            return bad("plateau window must be positive".into());
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EntropulseError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EntropulseError::InvalidSchedule(format!("{}: {e}", path.display())))?;
        let s: Schedule =
            serde_json::from_str(&text).map_err(|e| EntropulseError::InvalidSchedule(format!("{}: {e}", path.display())))?;
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub index: usize,
    pub name: String,
    pub kind: String,
    /// Trainer update count before and after the phase.
    pub start_update: u64,
    pub end_update: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sft: Option<SftReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetManifest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bc_examples: Option<usize>,
    /// Update at which an auto-pulse plateau ended the phase early.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plateau_at: Option<u64>,
    /// Mean greedy accuracy on the suite after the phase, if evaluated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_reward: Option<f64>,
}

/// One line of the run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum RunRecord {
    Update(UpdateMetrics),
    Phase(PhaseRecord),
}

/// Everything a run carries between phases; lets a run be branched or resumed.
#[derive(Debug, Clone)]
pub struct RunState {
    pub trainer: Trainer<f64>,
    pub store: SuccessStore,
    pub rounds: u64,
    pub metrics: Vec<UpdateMetrics>,
    pub phases: Vec<PhaseRecord>,
    /// Set at an RL→SFT boundary: the next RL phase starts from a fresh reference.
    reset_pending: bool,
}

impl RunState {
    pub fn new(config: TrainerConfig, featurizer: Featurizer, params: LinearPolicy<f64>) -> Self {
        RunState {
            trainer: Trainer::new(config, featurizer, params),
            store: SuccessStore::default(),
            rounds: 0,
            metrics: vec![],
            phases: vec![],
            reset_pending: false,
        }
    }

    pub fn params(&self) -> &LinearPolicy<f64> {
        &self.trainer.params
    }

    pub fn phase(&self, name: &str) -> Option<&PhaseRecord> {
        self.phases.iter().find(|p| p.name == name)
    }

    pub fn phase_metrics(&self, name: &str) -> &[UpdateMetrics] {
        match self.phase(name) {
            Some(p) => &self.metrics[p.start_update as usize..p.end_update as usize],
            None => &[],
        }
    }
}

/// Operator commands, polled between updates.
#[derive(Debug, Default)]
pub struct Control {
    pub abort: AtomicBool,
    pub paused: AtomicBool,
}

pub struct Components<'a> {
    pub cluster: &'a dyn EnvCluster,
    pub tasks: &'a [TaskSpec],
    pub rl: RlConfig,
    pub replay: ReplayConfig,
    pub teachers: Vec<Teacher>,
    pub bc_seed: u64,
    /// Evaluate greedy accuracy on `tasks` after every phase.
    pub eval_after_phase: bool,
    pub control: &'a Control,
    /// Receives every record with the parameters current at that point.
    pub sink: &'a mut dyn FnMut(&RunRecord, &LinearPolicy<f64>),
}

impl Components<'_> {
    fn checkpoint(&mut self, phase: &str, pending: &mut Vec<UpdateMetrics>) -> Result<(), EntropulseError> {
        loop {
            if self.control.abort.load(Ordering::SeqCst) {
                return Err(EntropulseError::AbortedByOperator);
            }
            let remote = self.cluster.sync_training(phase, pending)?;
            pending.clear();
            if !remote && !self.control.paused.load(Ordering::SeqCst) {
                return Ok(());
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }

    fn eval(&self, p: &LinearPolicy<f64>, seed: u64) -> Result<f64, EntropulseError> {
        let agent = PolicyAgent::greedy(p, Featurizer::new(p.dim()));
        Ok(evaluate(self.cluster, &agent, self.tasks, self.rl.space, seed)?.mean_accuracy())
    }
}

/// Probe states: contexts along each task's scripted solution.
pub fn probe_states(tasks: &[TaskSpec], space: ActionSpace) -> Vec<SftExample> {
    use crate::envsim::solver::scripted_solution;
    use crate::envsim::{format_context, ApiTable, Env};
    use crate::policy::{enumerate_candidates, include_action};
    let apis = std::sync::Arc::new(ApiTable::builtin());
    let mut out = vec![];
    for t in tasks {
        let Ok(actions) = scripted_solution(t, space) else { continue };
        let Ok(mut env) = Env::new(t, 0, space, apis.clone()) else { continue };
        let mut history = vec![];
        for a in actions {
            let context = format_context(&t.goal, &env.observation(), &history);
            let Ok(view) = crate::envsim::ContextView::parse(&context) else { break };
            let mut candidates = enumerate_candidates(&view);
            let chosen = include_action(&mut candidates, &a.raw_text);
            out.push(SftExample { task_id: t.task_id.clone(), context, action: a.raw_text.clone(), candidates, chosen });
            if env.step(&a).is_err() {
                break;
            }
            history.push(a.raw_text);
        }
    }
    out
}

/// Runs `schedule` from `state`, phase by phase.
pub fn orchestrate(schedule: &Schedule, c: &mut Components<'_>, mut state: RunState) -> Result<RunState, EntropulseError> {
    schedule.validate()?;
    let probe = probe_states(c.tasks, c.rl.space);
    let mut pending: Vec<UpdateMetrics> = vec![];
    let base = state.phases.len();
    for (i, phase) in schedule.phases.iter().enumerate() {
        let start = state.trainer.updates;
        let mut record = PhaseRecord {
            index: base + i,
            name: phase.name().to_string(),
            kind: phase.kind().to_string(),
            start_update: start,
            end_update: start,
            sft: None,
            dataset: None,
            bc_examples: None,
            plateau_at: None,
            eval_reward: None,
        };
        c.checkpoint(phase.name(), &mut pending)?;
        match phase {
            PhaseSpec::Bc { n_per_task, augment_rounds, epochs, lr, .. } => {
                let d = BcConfig::default();
                let cfg = BcConfig {
                    n_per_task: n_per_task.unwrap_or(d.n_per_task),
                    augment_rounds: augment_rounds.unwrap_or(d.augment_rounds),
                    epochs: epochs.unwrap_or(d.epochs),
                    lr: lr.unwrap_or(d.lr),
                    seed: c.bc_seed,
                    space: c.rl.space,
                };
                let teachers = if c.teachers.is_empty() { bc::default_teachers() } else { c.teachers.clone() };
                let out = bc::run_bc(c.cluster, c.tasks, &teachers, &state.trainer.params, cfg, None)?;
                state.trainer.params = out.params;
                state.trainer.reset_reference();
                record.bc_examples = Some(out.dataset_len);
            }
            PhaseSpec::Rl { updates, .. } => {
                if state.reset_pending || state.trainer.config.reference_reset == ReferenceReset::PhaseStart {
                    state.trainer.reset_reference();
                    state.reset_pending = false;
                }
                let mut rl = RlLoop::new(c.cluster, c.tasks, c.rl, c.replay);
                rl.skip_rounds(state.rounds);
                let phase_start = state.metrics.len();
                for _ in 0..*updates {
                    let store = &mut state.store;
                    let m = rl.step(&mut state.trainer, phase.name(), &mut |t| {
                        store.record_success(t);
                    })?;
                    (c.sink)(&RunRecord::Update(m.clone()), &state.trainer.params);
                    pending.push(m.clone());
                    state.metrics.push(m);
                    c.checkpoint(phase.name(), &mut pending)?;
                    if schedule.auto_pulse {
                        let series = &state.metrics[phase_start..];
                        if series.len() >= schedule.plateau.window && detect_plateau(series, &schedule.plateau)? {
                            record.plateau_at = Some(state.trainer.updates);
                            break;
                        }
                    }
                }
                rl.finish_phase();
                state.rounds = rl.rounds();
                if matches!(schedule.phases.get(i + 1), Some(PhaseSpec::Sft { .. })) {
                    state.reset_pending = true;
                }
            }
            PhaseSpec::Sft { epochs, lr, per_task_k, .. } => {
                let dataset = build_sft_dataset(&state.store, *per_task_k, mix(c.bc_seed, record.index as u64))?;
                let eval_fn = |p: &LinearPolicy<f64>| c.eval(p, 0x5f7);
                let probe = Probe { states: probe.clone(), eval: c.eval_after_phase.then_some(&eval_fn as &dyn Fn(&LinearPolicy<f64>) -> Result<f64, EntropulseError>) };
                let (next, report) = run_sft_phase(&state.trainer.params, &dataset, *epochs, *lr, mix(c.bc_seed, 77), &probe)?;
                if let Some(w) = &report.warning {
                    tracing::warn!("{w}");
                }
                state.trainer.params = next;
                record.sft = Some(report);
                record.dataset = Some(dataset.manifest);
                state.reset_pending = true;
            }
        }
        record.end_update = state.trainer.updates;
        if c.eval_after_phase {
            record.eval_reward = Some(c.eval(&state.trainer.params, 0x5f7)?);
        }
        (c.sink)(&RunRecord::Phase(record.clone()), &state.trainer.params);
        state.phases.push(record);
    }
    c.checkpoint("done", &mut pending)?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replay::Step;

    fn success(task: &str, actions: &[&str], version: u64) -> Trajectory {
        let mut t = Trajectory::new(task, version);
        for a in actions {
            let mut s = Step::bare(a, true, true);
            s.reward = Some(1.0);
            t.steps.push(s);
        }
        t.terminated = true;
        t.success = true;
        t.accuracy = 1.0;
        t
    }

    fn metrics(rewards: &[f64], entropy: f64) -> Vec<UpdateMetrics> {
        rewards
            .iter()
            .enumerate()
            .map(|(i, r)| UpdateMetrics {
                update: i as u64 + 1,
                phase: "rl1".into(),
                mean_reward: *r,
                entropy,
                kl: 0.0,
                clip_fraction: 0.0,
                loss: 0.0,
                reference_version: 0,
                batch_steps: 0,
                batch_trajectories: 0,
                max_version_gap: 0,
            })
            .collect()
    }

    #[test]
    fn store_dedups_and_ignores_failures() {
        let mut s = SuccessStore::default();
        assert!(s.record_success(&success("a", &["DONE"], 1)));
        assert!(!s.record_success(&success("a", &["DONE"], 2)));
        assert!(s.record_success(&success("b", &["DONE"], 2)));
        let mut fail = success("a", &["SCROLL(1)", "DONE"], 1);
        fail.success = false;
        assert!(!s.record_success(&fail));
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn dataset_counts_clamp_and_determinism() {
        let mut s = SuccessStore::default();
        for task in ["a", "b", "c"] {
            for i in 0..5 {
                let cols = format!("CLICK({i},0)");
                s.record_success(&success(task, &[&cols, "DONE"], i));
            }
        }
        s.record_success(&success("d", &["DONE"], 9));
        let d = build_sft_dataset(&s, 2, 7).unwrap();
        assert_eq!(d.manifest.trajectories.len(), 7);
        assert_eq!(d.manifest.trajectories.iter().filter(|e| e.task_id == "d").count(), 1);
        assert_eq!(build_sft_dataset(&s, 2, 7).unwrap(), d);
        assert!(matches!(build_sft_dataset(&SuccessStore::default(), 2, 0), Err(EntropulseError::EmptyStore)));
    }

    #[test]
    fn slope_matches_closed_form() {
        assert!((slope(&[1.0, 3.0, 5.0, 7.0]) - 2.0).abs() < 1e-12);
        assert_eq!(slope(&[4.0; 10]), 0.0);
    }

    #[test]
    fn plateau_conjunction() {
        let cfg = PlateauConfig { window: 20, min_slope: 1e-3, entropy_floor: 0.5 };
        assert!(detect_plateau(&metrics(&[0.4; 20], 0.1), &cfg).unwrap());
        let rising: Vec<f64> = (0..20).map(|i| i as f64 * 0.02).collect();
        assert!(!detect_plateau(&metrics(&rising, 0.1), &cfg).unwrap());
        assert!(!detect_plateau(&metrics(&[0.4; 20], 2.0), &cfg).unwrap());
        assert!(matches!(detect_plateau(&metrics(&[0.4; 5], 0.1), &cfg), Err(EntropulseError::SeriesTooShort { .. })));
    }

    #[test]
    fn schedule_validation() {
        let ok: Schedule = serde_json::from_str(
            r#"{"phases":[{"kind":"rl","name":"rl1","updates":5},{"kind":"sft","name":"pulse"},{"kind":"rl","name":"rl2","updates":5}]}"#,
        )
        .unwrap();
        ok.validate().unwrap();
        let zero: Schedule = serde_json::from_str(r#"{"phases":[{"kind":"rl","name":"rl1","updates":0}]}"#).unwrap();
        assert!(zero.validate().is_err());
        let late_bc: Schedule =
            serde_json::from_str(r#"{"phases":[{"kind":"rl","name":"a","updates":1},{"kind":"bc","name":"b"}]}"#).unwrap();
        assert!(late_bc.validate().is_err());
    }
}
