//! Bounded, versioned trajectory buffer between rollout producers and the trainer,
//! plus the line-delimited trajectory log shared by training, BC and Entropulse.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};

/// One agent decision with everything GRPO needs to re-score it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// Serialized goal, observation and recent history the action was chosen from.
    pub context: String,
    /// Raw action text as emitted.
    pub action: String,
    /// Candidate set the policy chose from; empty for teacher steps outside it.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<String>,
    #[serde(default)]
    pub chosen: usize,
    /// Log-probability under the generating policy; 0 for scripted teachers.
    pub old_log_prob: f64,
    #[serde(default)]
    pub reward: Option<f64>,
    pub well_formed: bool,
    pub accepted: bool,
    /// Teacher that produced this step, for pooled rollouts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher: Option<String>,
}

impl Step {
    /// A step with no context or candidates; handy for reward bookkeeping.
    pub fn bare(action: &str, well_formed: bool, accepted: bool) -> Self {
        Step {
            context: String::new(),
            action: action.to_string(),
            candidates: vec![],
            chosen: 0,
            old_log_prob: 0.0,
            reward: None,
            well_formed,
            accepted,
            teacher: None,
        }
    }
}

/// Where a trajectory came from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    /// `policy`, `teacher:<id>`, `pool` or `augment`.
    pub source: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    /// Identifies the group of rollouts sampled together for one task.
    #[serde(default)]
    pub group_id: u64,
    #[serde(default = "one")]
    pub group_size: u32,
    pub steps: Vec<Step>,
    pub accuracy: f64,
    pub policy_version: u64,
    pub success: bool,
    /// The episode ended (DONE or budget) rather than being cut off by a lost session.
    pub terminated: bool,
    #[serde(default)]
    pub provenance: Provenance,
}

fn one() -> u32 {
    1
}

impl Trajectory {
    pub fn new(task_id: &str, policy_version: u64) -> Self {
        Trajectory {
            task_id: task_id.to_string(),
            group_id: 0,
            group_size: 1,
            steps: vec![],
            accuracy: 0.0,
            policy_version,
            success: false,
            terminated: false,
            provenance: Provenance::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewarded(&self) -> bool {
        self.terminated && !self.steps.is_empty() && self.steps.iter().all(|s| s.reward.is_some())
    }

    pub fn action_key(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.action.as_str()).collect()
    }

    fn group_key(&self) -> (String, u64) {
        (self.task_id.clone(), self.group_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayConfig {
    /// Maximum trajectories held.
    pub capacity: usize,
    /// Staleness limit K: largest allowed version gap.
    pub staleness_limit: u64,
    pub min_batch_steps: usize,
    pub max_batch_steps: usize,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig { capacity: 256, staleness_limit: 1, min_batch_steps: 128, max_batch_steps: 512 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReplayCounters {
    pub pushes: u64,
    pub drained: u64,
    pub evicted: u64,
    pub rejected: u64,
    pub rejected_stale: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReplayError {
    #[error("version regression: {new} <= current {current}")]
    VersionRegression { current: u64, new: u64 },
}

/// Whole task groups drained together.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub groups: Vec<Vec<Trajectory>>,
}

impl Batch {
    pub fn total_steps(&self) -> usize {
        self.groups.iter().flatten().map(Trajectory::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.groups.iter().flatten()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrainMode {
    NonBlocking,
    Blocking(Duration),
}

#[derive(Debug, Default)]
struct Inner {
    entries: VecDeque<Trajectory>,
    version: u64,
    counters: ReplayCounters,
    /// Groups that lost a member to eviction; their remainder can never form a batch.
    broken: HashSet<(String, u64)>,
}

impl Inner {
    fn purge_broken(&mut self) {
        if self.broken.is_empty() {
            return;
        }
        let before = self.entries.len();
        let broken = &self.broken;
        self.entries.retain(|t| !broken.contains(&t.group_key()));
        self.counters.evicted += (before - self.entries.len()) as u64;
        self.broken.clear();
    }

    /// Complete groups in FIFO order of their first member.
    fn complete_groups(&self) -> Vec<((String, u64), usize)> {
        let mut order: Vec<(String, u64)> = vec![];
        let mut members: HashMap<(String, u64), (usize, usize, u32)> = HashMap::new();
        for t in &self.entries {
            let key = t.group_key();
            let e = members.entry(key.clone()).or_insert_with(|| {
                order.push(key);
                (0, 0, t.group_size)
            });
            e.0 += 1;
            e.1 += t.len();
        }
        order
            .into_iter()
            .filter_map(|k| {
                let (n, steps, size) = members[&k];
                (n as u32 >= size).then_some((k, steps))
            })
            .collect()
    }

    fn try_take(&mut self, min_steps: usize, max_steps: usize) -> Option<Batch> {
        self.purge_broken();
        let mut chosen = vec![];
        let mut total = 0;
        for (key, steps) in self.complete_groups() {
            if chosen.is_empty() || total + steps <= max_steps {
                chosen.push(key);
                total += steps;
            }
        }
        if chosen.is_empty() || total < min_steps {
            return None;
        }
        let mut groups: Vec<Vec<Trajectory>> = vec![vec![]; chosen.len()];
        let index: HashMap<_, _> = chosen.iter().cloned().enumerate().map(|(i, k)| (k, i)).collect();
        let mut rest = VecDeque::with_capacity(self.entries.len());
        for t in self.entries.drain(..) {
            match index.get(&t.group_key()) {
                Some(&i) => groups[i].push(t),
                None => rest.push_back(t),
            }
        }
        self.entries = rest;
        self.counters.drained += groups.iter().map(|g| g.len() as u64).sum::<u64>();
        Some(Batch { groups })
    }
}

/// Many producers, one consumer. All operations are linearizable behind one lock.
#[derive(Debug)]
pub struct ReplayBuffer {
    config: ReplayConfig,
    inner: Mutex<Inner>,
    ready: Condvar,
}

impl ReplayBuffer {
    pub fn new(config: ReplayConfig) -> Self {
        ReplayBuffer { config, inner: Mutex::new(Inner::default()), ready: Condvar::new() }
    }

    pub fn config(&self) -> ReplayConfig {
        self.config
    }

    /// Appends `traj` unless it is stale or unrewarded. At capacity the oldest entry is evicted.
    pub fn push(&self, traj: Trajectory) -> bool {
        let mut g = self.inner.lock();
        g.counters.pushes += 1;
        if !traj.rewarded() {
            g.counters.rejected += 1;
            return false;
        }
        if g.version.saturating_sub(traj.policy_version) > self.config.staleness_limit {
            g.counters.rejected += 1;
            g.counters.rejected_stale += 1;
            return false;
        }
        if g.entries.len() >= self.config.capacity {
            if let Some(old) = g.entries.pop_front() {
                g.counters.evicted += 1;
                g.broken.insert(old.group_key());
            }
        }
        g.entries.push_back(traj);
        drop(g);
        self.ready.notify_all();
        true
    }

    /// Takes as many whole groups, oldest first, as fit in `max_steps` (a single larger group
    /// is taken alone), provided they total at least `min_steps`. Returns an empty batch if not enough is available in time.
    pub fn drain_batch(&self, min_steps: usize, max_steps: usize, mode: DrainMode) -> Batch {
        let mut g = self.inner.lock();
        let deadline = match mode {
            DrainMode::NonBlocking => None,
            DrainMode::Blocking(d) => Some(Instant::now() + d),
        };
        loop {
            if let Some(b) = g.try_take(min_steps, max_steps) {
                return b;
            }
            match deadline {
                Some(d) if Instant::now() < d => {
                    self.ready.wait_until(&mut g, d);
                }
                _ => return Batch::default(),
            }
        }
    }

    /// Drains with the configured bounds.
    pub fn drain(&self, mode: DrainMode) -> Batch {
        self.drain_batch(self.config.min_batch_steps, self.config.max_batch_steps, mode)
    }

    /// Moves to `new_version` and evicts everything now further than K behind.
    pub fn advance_version(&self, new_version: u64) -> Result<usize, ReplayError> {
        let mut g = self.inner.lock();
        if new_version <= g.version {
            return Err(ReplayError::VersionRegression { current: g.version, new: new_version });
        }
        g.version = new_version;
        let k = self.config.staleness_limit;
        let before = g.entries.len();
        g.entries.retain(|t| new_version.saturating_sub(t.policy_version) <= k);
        let evicted = before - g.entries.len();
        g.counters.evicted += evicted as u64;
        Ok(evicted)
    }

    pub fn version(&self) -> u64 {
        self.inner.lock().version
    }

    pub fn len(&self) -> usize {
        self.inner.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn counters(&self) -> ReplayCounters {
        self.inner.lock().counters
    }

    /// pushes = drained + evicted + rejected + size, checked atomically.
    pub fn conserved(&self) -> bool {
        let g = self.inner.lock();
        let c = g.counters;
        c.pushes == c.drained + c.evicted + c.rejected + g.entries.len() as u64
    }
}

/// Schema version of trajectory log records.
pub const LOG_SCHEMA: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LogRecord<T> {
    schema: u32,
    #[serde(flatten)]
    traj: T,
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Append-only, one trajectory per line. A single serialized sink.
#[derive(Debug)]
pub struct TrajectoryLog {
    out: Mutex<BufWriter<File>>,
}

impl TrajectoryLog {
    pub fn create(path: &Path) -> Result<Self, LogError> {
        let file = File::options().create(true).append(true).open(path)?;
        Ok(TrajectoryLog { out: Mutex::new(BufWriter::new(file)) })
    }

    pub fn append(&self, traj: &Trajectory) -> Result<(), LogError> {
        let line = encode_record(traj);
        let mut out = self.out.lock();
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&self) -> Result<(), LogError> {
        self.out.lock().flush()?;
        Ok(())
    }
}

pub fn encode_record(traj: &Trajectory) -> String {
    serde_json::to_string(&LogRecord { schema: LOG_SCHEMA, traj }).expect("trajectory serializes")
}

pub fn decode_record(line: &str) -> Result<Trajectory, String> {
    let rec: LogRecord<Trajectory> = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if rec.schema != LOG_SCHEMA {
        return Err(format!("unsupported schema {}", rec.schema));
    }
    Ok(rec.traj)
}

pub fn read_log(path: &Path) -> Result<Vec<Trajectory>, LogError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = vec![];
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(decode_record(&line).map_err(|reason| LogError::Parse { line: i + 1, reason })?);
    }
    Ok(out)
}

pub fn write_log(path: &Path, trajs: &[Trajectory]) -> Result<(), LogError> {
    let mut out = BufWriter::new(File::create(path)?);
    for t in trajs {
        writeln!(out, "{}", encode_record(t))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn traj(task: &str, group: u64, size: u32, steps: usize, version: u64) -> Trajectory {
        let mut t = Trajectory::new(task, version);
        t.group_id = group;
        t.group_size = size;
        for _ in 0..steps {
            let mut s = Step::bare("DONE", true, true);
            s.reward = Some(1.0);
            t.steps.push(s);
        }
        t.terminated = true;
        t
    }

    fn buf(capacity: usize) -> ReplayBuffer {
        ReplayBuffer::new(ReplayConfig { capacity, ..Default::default() })
    }

    #[test]
    fn fresh_push_accepted() {
        let b = buf(4);
        assert!(b.push(traj("a", 0, 1, 3, 0)));
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn stale_push_rejected() {
        let b = buf(4);
        b.advance_version(2).unwrap();
        assert!(!b.push(traj("a", 0, 1, 3, 0)));
        assert_eq!(b.counters().rejected_stale, 1);
        assert!(b.push(traj("a", 0, 1, 3, 1)));
    }

    #[test]
    fn unrewarded_push_rejected() {
        let b = buf(4);
        let mut t = traj("a", 0, 1, 2, 0);
        t.steps[0].reward = None;
        assert!(!b.push(t));
        assert_eq!(b.counters().rejected, 1);
        assert!(b.conserved());
    }

    #[test]
    fn push_at_capacity_evicts_oldest() {
        let b = buf(2);
        b.push(traj("a", 0, 1, 1, 0));
        b.push(traj("b", 0, 1, 1, 0));
        assert!(b.push(traj("c", 0, 1, 1, 0)));
        assert_eq!(b.len(), 2);
        assert_eq!(b.counters().evicted, 1);
        let batch = b.drain_batch(1, 1, DrainMode::NonBlocking);
        let ids: Vec<_> = batch.trajectories().map(|t| t.task_id.as_str()).collect();
        assert_eq!(ids, ["b"]);
        let rest = b.drain_batch(1, 10, DrainMode::NonBlocking);
        assert_eq!(rest.trajectories().map(|t| t.task_id.as_str()).collect::<Vec<_>>(), ["c"]);
    }

    #[test]
    fn drain_keeps_groups_whole() {
        let b = buf(64);
        for g in 0..3 {
            for _ in 0..4 {
                b.push(traj(&format!("t{g}"), g, 4, 2, 0));
            }
        }
        let batch = b.drain_batch(20, 512, DrainMode::NonBlocking);
        let total: usize = batch.trajectories().map(|t| t.len()).sum();
        assert!(total >= 20);
        assert_eq!(total, batch.total_steps());
        for g in &batch.groups {
            assert_eq!(g.len(), 4);
            assert!(g.iter().all(|t| t.task_id == g[0].task_id));
        }
        assert_eq!(batch.groups.len(), 3);
        assert!(b.is_empty());
    }

    #[test]
    fn incomplete_group_is_not_drained() {
        let b = buf(64);
        for _ in 0..3 {
            b.push(traj("a", 0, 4, 5, 0));
        }
        assert!(b.drain_batch(1, 100, DrainMode::NonBlocking).is_empty());
        b.push(traj("a", 0, 4, 5, 0));
        assert_eq!(b.drain_batch(1, 100, DrainMode::NonBlocking).groups[0].len(), 4);
    }

    #[test]
    fn empty_nonblocking_returns_empty() {
        assert!(buf(4).drain_batch(1, 10, DrainMode::NonBlocking).is_empty());
    }

    #[test]
    fn oversized_group_returned_alone() {
        let b = buf(64);
        b.push(traj("big", 0, 2, 300, 0));
        b.push(traj("big", 0, 2, 300, 0));
        b.push(traj("small", 1, 1, 5, 0));
        let batch = b.drain_batch(10, 512, DrainMode::NonBlocking);
        assert_eq!(batch.groups.len(), 1);
        assert_eq!(batch.total_steps(), 600);
    }

    #[test]
    fn blocking_drain_wakes_on_push() {
        let b = std::sync::Arc::new(buf(8));
        let p = b.clone();
        let h = std::thread::spawn(move || {
            std::thread::sleep(Duration::from_millis(20));
            p.push(traj("a", 0, 1, 3, 0));
        });
        let batch = b.drain_batch(3, 10, DrainMode::Blocking(Duration::from_secs(5)));
        h.join().unwrap();
        assert_eq!(batch.total_steps(), 3);
    }

    #[test]
    fn advance_version_rules() {
        let b = buf(8);
        b.push(traj("a", 0, 1, 1, 0));
        assert_eq!(b.advance_version(1).unwrap(), 0);
        assert_eq!(b.advance_version(2).unwrap(), 1);
        assert_eq!(b.advance_version(1), Err(ReplayError::VersionRegression { current: 2, new: 1 }));
        assert!(b.conserved());
    }

    #[test]
    fn evicted_group_remainder_is_purged() {
        let b = buf(3);
        b.push(traj("a", 0, 2, 1, 0));
        b.push(traj("a", 0, 2, 1, 0));
        b.push(traj("b", 1, 2, 1, 0));
        b.push(traj("b", 1, 2, 1, 0));
        let batch = b.drain_batch(1, 10, DrainMode::NonBlocking);
        assert_eq!(batch.groups.len(), 1);
        assert_eq!(batch.groups[0][0].task_id, "b");
        assert!(b.is_empty());
        assert!(b.conserved());
    }

    #[test]
    fn log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let log = TrajectoryLog::create(&path).unwrap();
        let a = traj("a", 3, 2, 2, 7);
        log.append(&a).unwrap();
        log.flush().unwrap();
        assert_eq!(read_log(&path).unwrap(), vec![a]);
        assert!(decode_record(r#"{"schema":9}"#).is_err());
    }
}
