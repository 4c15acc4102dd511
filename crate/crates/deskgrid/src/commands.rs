//! Command implementations behind the `deskgrid` binary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::Duration;

use deskgrid_core::apigen::{run_pipeline, stub::StubBackend, ApiRegistry, ApigenError, GeneratorBackend, PipelineReport};
use deskgrid_core::apigen::remote::RemoteBackend;
use deskgrid_core::bc::{self, Teacher, TeacherKind};
use deskgrid_core::cluster::{Controller, EnvCluster, LocalCluster, SystemClock};
use deskgrid_core::entropulse::{orchestrate, Components, Control, EntropulseError, RunRecord, RunState, Schedule};
use deskgrid_core::envsim::{task_suite, ApiTable, TaskSpec};
use deskgrid_core::policy::checkpoint::{self, CheckpointError};
use deskgrid_core::policy::{Featurizer, LinearPolicy, DEFAULT_DIM};
use deskgrid_core::replay::TrajectoryLog;
use deskgrid_core::rollout::{evaluate, Agent, EvalReport, PolicyAgent};
use serde::Serialize;

use crate::config::{ConfigError, Manifest, RunConfig};
use crate::http::HttpServer;
use crate::net::{ControllerServer, RemoteCluster, TcpTransport, WorkerError, WorkerServer};

pub const SMOKE_SCHEDULE: &str = include_str!("../schedules/smoke.json");
pub const ABLATION_SCHEDULE: &str = include_str!("../schedules/ablation.json");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Invalid(String),
    #[error("cannot bind {addr}: {source}")]
    BindFailure { addr: String, source: std::io::Error },
    #[error("controller {0} unreachable")]
    ControllerUnreachable(String),
    #[error(transparent)]
    CheckpointCorrupt(#[from] CheckpointError),
    #[error("{0}")]
    Runtime(String),
    #[error("aborted")]
    Aborted,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Invalid(_) => 1,
            CliError::Aborted => 3,
            _ => 2,
        }
    }
}

impl From<EntropulseError> for CliError {
    fn from(e: EntropulseError) -> Self {
        match e {
            EntropulseError::AbortedByOperator => CliError::Aborted,
            EntropulseError::InvalidSchedule(m) => CliError::Invalid(format!("invalid schedule: {m}")),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<WorkerError> for CliError {
    fn from(e: WorkerError) -> Self {
        match e {
            WorkerError::Bind(addr, source) => CliError::BindFailure { addr, source },
            WorkerError::ControllerUnreachable(c, _) => CliError::ControllerUnreachable(c),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Blocks until SIGINT or SIGTERM.
pub fn wait_for_signal() {
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().expect("signal runtime");
    rt.block_on(async {
        #[cfg(unix)]
        {
            let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()).expect("SIGTERM handler");
            tokio::select! {
                _ = tokio::signal::ctrl_c() => {}
                _ = term.recv() => {}
            }
        }
        #[cfg(not(unix))]
        let _ = tokio::signal::ctrl_c().await;
    });
}

fn api_table(registry: Option<&Path>) -> Result<Arc<ApiTable>, CliError> {
    Ok(Arc::new(match registry {
        Some(p) => ApiRegistry::load(p).map_err(|e| CliError::Invalid(e.to_string()))?.api_table(),
        None => ApiTable::builtin(),
    }))
}

/// Wire server plus HTTP endpoints.
pub struct ControllerService {
    pub wire: ControllerServer,
    pub http: HttpServer,
}

impl ControllerService {
    pub fn start(cfg: &RunConfig) -> Result<Self, CliError> {
        let c = &cfg.cluster;
        let transport = TcpTransport::new("controller", Duration::from_millis(c.heartbeat_timeout_ms));
        let controller = Arc::new(Controller::new(cfg.timing(), transport, Box::new(SystemClock::default())));
        let wire = ControllerServer::start(&c.bind, controller.clone())
            .map_err(|source| CliError::BindFailure { addr: c.bind.clone(), source })?;
        let http =
            HttpServer::start(&c.http_bind, controller).map_err(|source| CliError::BindFailure { addr: c.http_bind.clone(), source })?;
        Ok(ControllerService { wire, http })
    }

    /// Stops both servers; returns how many sessions were marked lost.
    pub fn shutdown(mut self) -> usize {
        self.http.shutdown();
        self.wire.shutdown()
    }
}

pub fn cmd_controller(cfg: &RunConfig) -> Result<(), CliError> {
    let svc = ControllerService::start(cfg)?;
    tracing::info!(wire = %svc.wire.local_addr(), http = %svc.http.local_addr(), "controller up");
    wait_for_signal();
    let lost = svc.shutdown();
    tracing::info!(lost, "controller stopped");
    Ok(())
}

pub fn start_worker(cfg: &RunConfig, bind: &str, registry: Option<&Path>) -> Result<WorkerServer, CliError> {
    let c = &cfg.cluster;
    let controller = c.controller.as_deref().ok_or_else(|| CliError::Invalid("cluster.controller is required for a worker".into()))?;
    let apis = api_table(registry)?;
    Ok(WorkerServer::start(bind, controller, c.slots, apis, Duration::from_millis(c.heartbeat_ms), 5)?)
}

pub fn cmd_worker(cfg: &RunConfig, bind: &str, registry: Option<&Path>) -> Result<(), CliError> {
    let mut w = start_worker(cfg, bind, registry)?;
    tracing::info!(worker = %w.worker_id, addr = %w.local_addr(), slots = cfg.cluster.slots, "worker up");
    wait_for_signal();
    w.kill();
    Ok(())
}

/// Built-in schedule for a suite, used when the config names none.
pub fn default_schedule(suite: &str) -> Schedule {
    let text = if suite == "smoke" { SMOKE_SCHEDULE } else { ABLATION_SCHEDULE };
    serde_json::from_str(text).expect("shipped schedules parse")
}

/// A remote controller, or an in-process cluster.
pub enum ClusterHandle {
    Remote(RemoteCluster),
    Local(LocalCluster),
}

impl ClusterHandle {
    pub fn connect(cfg: &RunConfig) -> Result<Self, CliError> {
        let c = &cfg.cluster;
        match &c.controller {
            Some(addr) => {
                let r = RemoteCluster::new(addr, Duration::from_millis(c.heartbeat_timeout_ms.max(5_000)));
                r.status().map_err(|_| CliError::ControllerUnreachable(addr.clone()))?;
                Ok(ClusterHandle::Remote(r))
            }
            None => Ok(ClusterHandle::Local(LocalCluster::start(c.workers, c.slots, cfg.timing(), Arc::new(ApiTable::builtin())))),
        }
    }

    pub fn cluster(&self) -> &dyn EnvCluster {
        match self {
            ClusterHandle::Remote(r) => r,
            ClusterHandle::Local(l) => l,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub auto_pulse: bool,
    /// Serve the HTTP endpoints over the in-process cluster.
    pub serve_http: bool,
    pub teachers: Option<PathBuf>,
    pub initial: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub phases: Vec<deskgrid_core::entropulse::PhaseRecord>,
    pub updates: u64,
    pub successes_stored: usize,
    pub final_eval: EvalSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub columns: Vec<String>,
    pub values: Vec<Option<f64>>,
    pub mean_accuracy: f64,
    pub median_success_steps: Option<f64>,
}

impl From<&EvalReport> for EvalSummary {
    fn from(r: &EvalReport) -> Self {
        EvalSummary {
            columns: deskgrid_core::rollout::EVAL_COLUMNS.iter().map(|s| s.to_string()).collect(),
            values: r.table.values().to_vec(),
            mean_accuracy: r.mean_accuracy(),
            median_success_steps: r.median_success_steps(),
        }
    }
}

fn load_schedule(cfg: &RunConfig) -> Result<Schedule, CliError> {
    match &cfg.schedule {
        Some(p) if !p.exists() => Err(CliError::Invalid(format!("schedule file {} does not exist", p.display()))),
        Some(p) => Ok(Schedule::load(p)?),
        None => Ok(default_schedule(&cfg.suite)),
    }
}

/// Runs the schedule and writes everything under `cfg.out`. `control` lets the caller abort.
pub fn cmd_train(cfg: &RunConfig, opts: &TrainOptions, control: &Control) -> Result<TrainReport, CliError> {
    cfg.validate()?;
    let mut schedule = load_schedule(cfg)?;
    schedule.auto_pulse |= opts.auto_pulse;
    schedule.validate()?;
    let teachers = match &opts.teachers {
        Some(p) => bc::load_teachers(p).map_err(|e| CliError::Invalid(e.to_string()))?,
        None => vec![],
    };
    let params = match &opts.initial {
        Some(p) => checkpoint::load::<f64>(p)?,
        None => LinearPolicy::zeros(DEFAULT_DIM),
    };
    let out = cfg.out.clone();
    let ckpt_dir = out.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(io_at(&ckpt_dir))?;
    Manifest::new("train", cfg).write(&out).map_err(io_at(&out))?;
    std::fs::write(out.join("schedule.json"), serde_json::to_string_pretty(&schedule).expect("schedule serializes"))
        .map_err(io_at(&out))?;

    let handle = ClusterHandle::connect(cfg)?;
    let _http = match (&handle, opts.serve_http) {
        (ClusterHandle::Local(l), true) => Some(
            HttpServer::start(&cfg.cluster.http_bind, l.controller().clone())
                .map_err(|source| CliError::BindFailure { addr: cfg.cluster.http_bind.clone(), source })?,
        ),
        _ => None,
    };
    let profile = cfg.suite_profile()?;
    let tasks = task_suite(profile);
    let metrics_path = out.join("metrics.jsonl");
    let mut metrics = BufWriter::new(File::create(&metrics_path).map_err(io_at(&metrics_path))?);
    let mut sink_err: Option<CliError> = None;
    let mut sink = |r: &RunRecord, p: &LinearPolicy<f64>| {
        if sink_err.is_some() {
            return;
        }
        let line = serde_json::to_string(r).expect("records serialize");
        let mut res = writeln!(metrics, "{line}").map_err(io_at(&metrics_path));
        if let (Ok(()), RunRecord::Phase(ph)) = (&res, r) {
            res = metrics.flush().map_err(io_at(&metrics_path));
            let path = ckpt_dir.join(format!("{:02}-{}.ckpt", ph.index, ph.name));
            if let Err(e) = checkpoint::save(p, &path) {
                res = Err(CliError::CheckpointCorrupt(e));
            }
            if let Some(d) = &ph.dataset {
                let path = out.join(format!("sft-{}.json", ph.name));
                if let Err(e) = std::fs::write(&path, serde_json::to_string_pretty(d).expect("manifest serializes")) {
                    res = Err(io_at(&path)(e));
                }
            }
        }
        if let Err(e) = res {
            sink_err = Some(e);
        }
    };
    let mut components = Components {
        cluster: handle.cluster(),
        tasks: &tasks,
        rl: cfg.rl_config(),
        replay: cfg.replay_config(),
        teachers,
        bc_seed: cfg.seeds.bc,
        eval_after_phase: true,
        control,
        sink: &mut sink,
    };
    let state = RunState::new(cfg.trainer_config(), Featurizer::new(params.dim()), params);
    let state = orchestrate(&schedule, &mut components, state)?;
    drop(components);
    if let Some(e) = sink_err {
        return Err(e);
    }
    metrics.flush().map_err(io_at(&metrics_path))?;
    checkpoint::save(state.params(), &ckpt_dir.join("final.ckpt"))?;

    let agent = PolicyAgent::greedy(state.params(), Featurizer::new(state.params().dim()));
    let eval = evaluate(handle.cluster(), &agent, &tasks, cfg.space, cfg.seeds.eval).map_err(runtime)?;
    let report = TrainReport {
        phases: state.phases.clone(),
        updates: state.trainer.updates,
        successes_stored: state.store.len(),
        final_eval: EvalSummary::from(&eval),
    };
    let path = out.join("report.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report).expect("report serializes")).map_err(io_at(&path))?;
    let path = out.join("report.md");
    std::fs::write(&path, eval.table.render(Some("final"))).map_err(io_at(&path))?;
    Ok(report)
}

/// `teacher:optimal` evaluates the scripted oracle; anything else is a checkpoint path.
pub fn eval_agent(spec: &str) -> Result<Box<dyn AgentBox>, CliError> {
    if let Some(kind) = spec.strip_prefix("teacher:") {
        let teacher = match kind {
            "optimal" => Teacher::optimal("optimal", 0),
            other => return Err(CliError::Invalid(format!("unknown teacher `{other}`"))),
        };
        let agent = teacher.load_agent().map_err(|e| CliError::Invalid(e.to_string()))?;
        return Ok(Box::new(agent));
    }
    let policy = checkpoint::load::<f64>(Path::new(spec))?;
    Ok(Box::new(OwnedPolicy { featurizer: Featurizer::new(policy.dim()), policy }))
}

/// An agent that owns its parameters.
pub trait AgentBox: Agent {}
impl<A: Agent> AgentBox for A {}

struct OwnedPolicy {
    policy: LinearPolicy<f64>,
    featurizer: Featurizer,
}

impl Agent for OwnedPolicy {
    fn name(&self) -> String {
        "policy".into()
    }

    fn version(&self) -> u64 {
        self.policy.version
    }

    fn choose(
        &self,
        view: &deskgrid_core::envsim::ContextView,
        candidates: &mut Vec<String>,
        rng: &mut deskgrid_core::rollout::AgentRng,
    ) -> (usize, f64) {
        PolicyAgent::greedy(&self.policy, self.featurizer).choose(view, candidates, rng)
    }
}

/// Greedy rollouts of a checkpoint (or oracle) on the configured suite.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &str) -> Result<EvalReport, CliError> {
    cfg.validate()?;
    let agent = eval_agent(checkpoint)?;
    let tasks = task_suite(cfg.suite_profile()?);
    let handle = ClusterHandle::connect(cfg)?;
    evaluate(handle.cluster(), agent.as_ref(), &tasks, cfg.space, cfg.seeds.eval).map_err(runtime)
}

/// A suite profile name or a line-delimited file of task specs.
pub fn load_tasks(spec: &str) -> Result<Vec<TaskSpec>, CliError> {
    if let Ok(profile) = spec.parse() {
        return Ok(task_suite(profile));
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Invalid(format!("{spec}: {e}")))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::Invalid(format!("{spec}:{}: {e}", i + 1))))
        .collect()
}

/// Teacher rollouts on every task, logged as trajectories; returns how many were written.
pub fn cmd_collect_bc(cfg: &RunConfig, tasks: &str, teachers: Option<&Path>, n_per_task: usize) -> Result<usize, CliError> {
    cfg.validate()?;
    let tasks = load_tasks(tasks)?;
    let teachers = match teachers {
        Some(p) => bc::load_teachers(p).map_err(|e| CliError::Invalid(e.to_string()))?,
        None => bc::default_teachers(),
    };
    if let Some(t) = teachers.iter().find(|t| matches!(t.kind, TeacherKind::PolicyCheckpoint { .. })) {
        t.load_agent().map_err(|e| CliError::Invalid(e.to_string()))?;
    }
    std::fs::create_dir_all(&cfg.out).map_err(io_at(&cfg.out))?;
    Manifest::new("collect-bc", cfg).write(&cfg.out).map_err(io_at(&cfg.out))?;
    let path = cfg.out.join("trajectories.jsonl");
    let log = TrajectoryLog::create(&path).map_err(runtime)?;
    let handle = ClusterHandle::connect(cfg)?;
    let trajs = bc::collect_initial(handle.cluster(), &tasks, &teachers, n_per_task, cfg.space, Some(&log)).map_err(runtime)?;
    let ids: Vec<String> = tasks.iter().map(|t| t.task_id.clone()).collect();
    let strata = bc::stratify(&ids, &trajs).map_err(runtime)?;
    let path = cfg.out.join("strata.json");
    std::fs::write(&path, serde_json::to_string_pretty(&strata).expect("strata serialize")).map_err(io_at(&path))?;
    Ok(trajs.len())
}

#[derive(Debug, Clone)]
pub enum Backend {
    Stub { seed_faults: usize },
    Remote { endpoint: String, timeout: Duration },
}

/// Runs the generation pipeline over the example tasks, extending the registry file in place.
pub fn cmd_apigen(examples: &Path, backend: &Backend, registry: &Path, max_iters: usize) -> Result<PipelineReport, CliError> {
    let text = std::fs::read_to_string(examples).map_err(|e| CliError::Invalid(format!("{}: {e}", examples.display())))?;
    let lines: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(String::from).collect();
    let mut reg = if registry.exists() { ApiRegistry::load(registry).map_err(|e| CliError::Invalid(e.to_string()))? } else { ApiRegistry::base() };
    let backend: Box<dyn GeneratorBackend> = match backend {
        Backend::Stub { seed_faults } => {
            let mut b = StubBackend::new();
            for name in deskgrid_core::apigen::stub::shipped_names() {
                if !reg.contains(name) && *seed_faults > 0 {
                    b = b.with_fault(name, *seed_faults);
                }
            }
            Box::new(b)
        }
        Backend::Remote { endpoint, timeout } => Box::new(RemoteBackend::new(endpoint, *timeout).map_err(runtime)?),
    };
    let report = run_pipeline(&lines, &mut reg, backend.as_ref(), max_iters).map_err(|e| match e {
        ApigenError::InvalidSpec(m) => CliError::Invalid(m),
        other => runtime(other),
    })?;
    reg.save(registry).map_err(runtime)?;
    Ok(report)
}

/// Installs a Ctrl-C/SIGTERM watcher that asks `control` to abort.
pub fn abort_on_signal(control: Arc<Control>) {
    std::thread::spawn(move || {
        wait_for_signal();
        control.abort.store(true, Ordering::SeqCst);
    });
}
