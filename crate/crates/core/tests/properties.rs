use std::sync::Arc;

use deskgrid_core::cluster::{EnvCluster, LocalCluster, ManualClock, Timing};
use deskgrid_core::envsim::reward::assign_rewards;
use deskgrid_core::envsim::{task_suite, ActionSpace, ApiTable, SuiteProfile};
use deskgrid_core::grpo::compute_advantages;
use deskgrid_core::replay::{DrainMode, ReplayBuffer, ReplayConfig, Step, Trajectory};
use proptest::prelude::*;

fn traj(task: &str, group: u64, rewards: &[f64], version: u64) -> Trajectory {
    let mut t = Trajectory::new(task, version);
    t.group_id = group;
    t.group_size = (group % 3 + 1) as u32;
    for &r in rewards {
        let mut s = Step::bare("DONE", true, true);
        s.reward = Some(r);
        t.steps.push(s);
    }
    t.terminated = true;
    t
}

proptest! {
    #[test]
    fn advantages_are_standardised_or_zero(group in prop::collection::vec(prop::collection::vec(0u8..2, 1..8), 2..9)) {
        let trajs: Vec<Trajectory> = group.iter().map(|r| traj("t", 0, &r.iter().map(|&x| x as f64).collect::<Vec<_>>(), 0)).collect();
        let table = compute_advantages(&trajs).unwrap();
        let flat: Vec<f64> = table.advantages.iter().flatten().copied().collect();
        prop_assert_eq!(flat.len(), group.iter().map(Vec::len).sum::<usize>());
        let first = group[0][0];
        if group.iter().flatten().all(|&r| r == first) {
            prop_assert!(flat.iter().all(|&a| a == 0.0));
        } else {
            let n = flat.len() as f64;
            let mean = flat.iter().sum::<f64>() / n;
            let var = flat.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rewards_are_binary_and_only_for_solved_tasks(
        flags in prop::collection::vec((any::<bool>(), any::<bool>()), 1..12),
        accuracy in prop_oneof![Just(1.0), Just(0.0), 0.0f64..1.0],
    ) {
        let mut t = Trajectory::new("t", 0);
        t.steps = flags.iter().map(|&(w, a)| Step::bare("X", w, a)).collect();
        t.terminated = true;
        let r = assign_rewards(&t, accuracy).unwrap();
        prop_assert_eq!(r.len(), flags.len());
        for (reward, &(w, a)) in r.iter().zip(&flags) {
            prop_assert_eq!(*reward, if accuracy >= 1.0 && w && a { 1.0 } else { 0.0 });
        }
    }
}

#[derive(Debug, Clone)]
enum ReplayOp {
    Push { task: u8, group: u64, steps: usize, behind: u64, rewarded: bool },
    Drain { min: usize, max: usize },
    Advance,
}

fn replay_op() -> impl Strategy<Value = ReplayOp> {
    prop_oneof![
        6 => (0u8..3, 0u64..4, 1usize..6, 0u64..3, prop::bool::weighted(0.9))
            .prop_map(|(task, group, steps, behind, rewarded)| ReplayOp::Push { task, group, steps, behind, rewarded }),
        2 => (0usize..10, 1usize..20).prop_map(|(min, max)| ReplayOp::Drain { min, max }),
        1 => Just(ReplayOp::Advance),
    ]
}

proptest! {
    #[test]
    fn replay_conserves_keeps_groups_whole_and_bounds_staleness(
        ops in prop::collection::vec(replay_op(), 1..80),
        capacity in 2usize..24,
        k in 0u64..3,
    ) {
        let buf = ReplayBuffer::new(ReplayConfig { capacity, staleness_limit: k, min_batch_steps: 1, max_batch_steps: 16 });
        for op in ops {
            match op {
                ReplayOp::Push { task, group, steps, behind, rewarded } => {
                    let version = buf.version().saturating_sub(behind);
                    let mut t = traj(&format!("task-{task}"), group, &vec![0.0; steps], version);
                    if !rewarded {
                        t.steps[0].reward = None;
                    }
                    let accepted = buf.push(t);
                    prop_assert!(!accepted || (rewarded && behind.min(buf.version()) <= k));
                }
                ReplayOp::Drain { min, max } => {
                    let batch = buf.drain_batch(min, max, DrainMode::NonBlocking);
                    if !batch.is_empty() {
                        prop_assert!(batch.total_steps() >= min);
                        prop_assert!(batch.groups.len() == 1 || batch.total_steps() <= max);
                    }
                    for g in &batch.groups {
                        let key = (&g[0].task_id, g[0].group_id);
                        prop_assert!(g.iter().all(|t| (&t.task_id, t.group_id) == key));
                        prop_assert!(g.len() >= g[0].group_size as usize);
                        prop_assert!(g.iter().all(|t| buf.version() - t.policy_version <= k));
                    }
                }
                ReplayOp::Advance => {
                    buf.advance_version(buf.version() + 1).unwrap();
                }
            }
            prop_assert!(buf.conserved());
            prop_assert!(buf.len() <= capacity);
        }
    }
}

#[derive(Debug, Clone)]
enum ClusterOp {
    Allocate(usize),
    Step(usize),
    Release(usize),
    Kill(usize),
    Tick { ms: u64, beat: bool },
}

fn cluster_op() -> impl Strategy<Value = ClusterOp> {
    prop_oneof![
        4 => (0usize..20).prop_map(ClusterOp::Allocate),
        4 => (0usize..32).prop_map(ClusterOp::Step),
        3 => (0usize..32).prop_map(ClusterOp::Release),
        1 => (0usize..3).prop_map(ClusterOp::Kill),
        2 => (0u64..250, any::<bool>()).prop_map(|(ms, beat)| ClusterOp::Tick { ms, beat }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cluster_accounting_is_conserved(ops in prop::collection::vec(cluster_op(), 1..60)) {
        let clock = Arc::new(ManualClock::default());
        let c = LocalCluster::with_clock(3, 3, Timing::with_interval(100), Arc::new(ApiTable::builtin()), Box::new(clock.clone()), false);
        let tasks = task_suite(SuiteProfile::Smoke);
        let workers = c.worker_ids();
        let mut sessions: Vec<String> = vec![];
        let mut corr = 0;
        for op in ops {
            match op {
                ClusterOp::Allocate(i) => {
                    if let Ok(a) = c.allocate(&tasks[i % tasks.len()], i as u64, ActionSpace::ApiGui, None) {
                        sessions.push(a.session_id);
                    }
                }
                ClusterOp::Step(i) if !sessions.is_empty() => {
                    corr += 1;
                    let _ = c.step(&sessions[i % sessions.len()], corr, "SCROLL(1)");
                }
                ClusterOp::Release(i) if !sessions.is_empty() => {
                    let _ = c.release(&sessions.remove(i % sessions.len()));
                }
                ClusterOp::Kill(i) => c.kill_worker(&workers[i]),
                ClusterOp::Tick { ms, beat } => {
                    clock.advance(ms);
                    if beat {
                        c.heartbeat_all();
                    }
                    c.controller().reap_and_reallocate();
                }
                _ => {}
            }
            let s = c.controller().snapshot_status();
            let n = s.counters;
            prop_assert_eq!(n.allocations, n.completions + s.active_sessions as u64 + n.lost);
            prop_assert!(s.active_sessions <= s.capacity);
        }
    }
}
