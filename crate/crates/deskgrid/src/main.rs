use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use deskgrid::commands::{self, Backend, CliError, TrainOptions};
use deskgrid::config::RunConfig;
use deskgrid_core::entropulse::Control;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "deskgrid", version, about = "Desktop-agent RL training on a simulated cluster")]
struct Cli {
    /// TOML config of dotted keys; DESKGRID_* variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the wire protocol and HTTP endpoints.
    Controller,
    /// Join a controller and host environment slots.
    Worker {
        #[arg(long, default_value = "127.0.0.1:0")]
        bind: String,
        /// Registry whose tested APIs the envs expose.
        #[arg(long)]
        registry: Option<PathBuf>,
    },
    /// Run a phase schedule.
    Train {
        /// Phase schedule JSON; defaults to the suite's shipped schedule.
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Insert an Entropulse phase when RL reward and entropy plateau.
        #[arg(long)]
        auto_pulse: bool,
        /// Teacher list (JSON array or JSONL) for the BC phase.
        #[arg(long)]
        teachers: Option<PathBuf>,
        /// Starting checkpoint.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Serve HTTP endpoints over the in-process cluster.
        #[arg(long)]
        serve_http: bool,
    },
    /// Greedy evaluation; `teacher:optimal` evaluates the scripted oracle.
    Eval {
        /// Checkpoint path or `teacher:optimal`.
        #[arg(long)]
        checkpoint: String,
        /// Overrides the configured suite.
        #[arg(long)]
        suite: Option<String>,
    },
    /// Teacher rollouts written as a trajectory log.
    CollectBc {
        /// Suite name or task-spec JSONL file.
        #[arg(long)]
        tasks: String,
        /// Teacher list (JSON array or JSONL).
        #[arg(long)]
        teachers: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        n_per_task: usize,
    },
    /// API generation tools.
    Apigen {
        #[command(subcommand)]
        command: ApigenCommand,
    },
}

#[derive(Subcommand)]
enum ApigenCommand {
    /// Analyze examples, then implement, test and repair the missing APIs.
    Run {
        /// Task requirements, one per line.
        #[arg(long)]
        examples: PathBuf,
        #[arg(long, value_parser = ["stub", "remote"], default_value = "stub")]
        backend: String,
        /// Completion endpoint for the remote backend.
        #[arg(long)]
        endpoint: Option<String>,
        /// Registry file, created if absent.
        #[arg(long, default_value = "apis.json")]
        registry: PathBuf,
        /// Broken drafts the stub produces per API before a correct one.
        #[arg(long, default_value_t = 0)]
        seed_faults: usize,
        /// Repair iterations per API before it is marked failed.
        #[arg(long, default_value_t = 4)]
        max_iters: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    match cli.command {
        Command::Controller => commands::cmd_controller(&cfg),
        Command::Worker { bind, registry } => commands::cmd_worker(&cfg, &bind, registry.as_deref()),
        Command::Train { schedule, auto_pulse, teachers, init, serve_http } => {
            if schedule.is_some() {
                cfg.schedule = schedule;
            }
            let control = Arc::new(Control::default());
            commands::abort_on_signal(control.clone());
            let opts = TrainOptions { auto_pulse, serve_http, teachers, initial: init };
            let report = commands::cmd_train(&cfg, &opts, &control)?;
            println!("{}", serde_json::to_string_pretty(&report.final_eval).expect("summary serializes"));
            println!("run written to {}", cfg.out.display());
            Ok(())
        }
        Command::Eval { checkpoint, suite } => {
            if let Some(s) = suite {
                cfg.suite = s;
            }
            let report = commands::cmd_eval(&cfg, &checkpoint)?;
            print!("{}", report.table.render(None));
            Ok(())
        }
        Command::CollectBc { tasks, teachers, n_per_task } => {
            let n = commands::cmd_collect_bc(&cfg, &tasks, teachers.as_deref(), n_per_task)?;
            println!("{n} trajectories written to {}", cfg.out.join("trajectories.jsonl").display());
            Ok(())
        }
        Command::Apigen { command: ApigenCommand::Run { examples, backend, endpoint, registry, seed_faults, max_iters } } => {
            let backend = match backend.as_str() {
                "remote" => Backend::Remote {
                    endpoint: endpoint.ok_or_else(|| CliError::Invalid("--endpoint is required with --backend remote".into()))?,
                    timeout: Duration::from_secs(60),
                },
                _ => Backend::Stub { seed_faults },
            };
            let report = commands::cmd_apigen(&examples, &backend, &registry, max_iters)?;
            println!("gaps: {}", report.gaps.join(", "));
            for (api, iters) in &report.tested {
                println!("tested {api} after {iters} iteration(s)");
            }
            for (api, err) in &report.failed {
                println!("failed {api}: {err}");
            }
            if report.failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Runtime(format!("{} API(s) failed", report.failed.len())))
            }
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_env_filter(EnvFilter::from_default_env()).with_writer(std::io::stderr).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
