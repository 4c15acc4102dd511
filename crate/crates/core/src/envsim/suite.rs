//! Built-in task suites.
//!
//! Budgets are derived from the scripted GUI-only solution plus a small slack, so
//! every task is solvable in either half of the action space.

use super::solver::scripted_solution;
use super::state::{App, CellRef};
use super::task::{Domain, InitialState, Subgoal, TaskSpec};
use super::ActionSpace;

/// Extra steps granted beyond the scripted GUI-only solution (which excludes `DONE`).
pub const STEP_SLACK: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteProfile {
    /// Two tasks per domain.
    Smoke,
    /// Ten tasks per domain.
    Ablation,
}

impl std::str::FromStr for SuiteProfile {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "smoke" => Ok(SuiteProfile::Smoke),
            "ablation" => Ok(SuiteProfile::Ablation),
            other => Err(format!("unknown suite profile `{other}`")),
        }
    }
}

struct Draft {
    id: &'static str,
    domain: Domain,
    app: App,
    goal: &'static [&'static str],
    init: InitialState,
}

fn fs(dirs: &[&str], files: &[&str], decoys: bool) -> InitialState {
    InitialState {
        dirs: dirs.iter().map(|s| s.to_string()).collect(),
        files: files.iter().map(|s| (s.to_string(), String::new())).collect(),
        decoys,
        ..Default::default()
    }
}

const ROOT: &[&str] = &["/archive", "/docs", "/projects", "/tmp"];

fn root_fs(extra_dirs: &[&str], files: &[&str], decoys: bool) -> InitialState {
    let dirs: Vec<&str> = ROOT.iter().chain(extra_dirs).copied().collect();
    fs(&dirs, files, decoys)
}

fn lines(ls: &[&str]) -> InitialState {
    InitialState { lines: ls.iter().map(|s| s.to_string()).collect(), ..Default::default() }
}

fn cells(cs: &[(&str, &str)]) -> InitialState {
    InitialState {
        cells: cs.iter().map(|(c, v)| (c.parse::<CellRef>().expect("static cell"), v.to_string())).collect(),
        ..Default::default()
    }
}

fn with_lines(mut s: InitialState, ls: &[&str]) -> InitialState {
    s.lines = ls.iter().map(|s| s.to_string()).collect();
    s
}

fn drafts() -> Vec<Draft> {
    use App::*;
    use Domain::*;
    let d = |id, domain, app, goal, init| Draft { id, domain, app, goal, init };
    vec![
        d("os_01", Os, Files, &["dir /docs/old"], root_fs(&[], &[], false)),
        d("os_02", Os, Files, &["file /docs/notes.txt"], root_fs(&[], &[], false)),
        d("os_03", Os, Files, &["absent /tmp/old.log"], root_fs(&[], &["/tmp/old.log"], true)),
        d("os_04", Os, Files, &["file /archive/draft.txt", "absent /docs/draft.txt"], root_fs(&[], &["/docs/draft.txt"], false)),
        d("os_05", Os, Files, &["file /docs/report_final.txt", "absent /docs/report.txt"], root_fs(&[], &["/docs/report.txt"], false)),
        d("os_06", Os, Files, &["dir /projects/app/build"], root_fs(&["/projects/app"], &[], false)),
        d("os_07", Os, Files, &["dir /archive/2024", "file /archive/2024/index.txt"], root_fs(&[], &[], false)),
        d("os_08", Os, Files, &["absent /docs/a.tmp", "absent /docs/b.tmp"], root_fs(&[], &["/docs/a.tmp", "/docs/b.tmp", "/docs/keep.txt"], false)),
        d("os_09", Os, Files, &["file /archive/old.log", "absent /tmp/old.log"], root_fs(&[], &["/tmp/old.log"], true)),
        d("os_10", Os, Files, &["file /projects/app/README.md"], root_fs(&["/projects/app"], &[], false)),
        d("office_01", Office, Sheet, &["cell A1=Month", "cell B1=Total"], InitialState::default()),
        d("office_02", Office, Sheet, &["cell A1=Name", "cell A2=Alice", "cell A3=Bob"], InitialState::default()),
        d("office_03", Office, Sheet, &["cell B2=Q1", "cell C2=Q2", "cell D2=Q3"], InitialState::default()),
        d("office_04", Office, Sheet, &["cell A1=Item", "cell B1=Cost", "cell C1=Qty", "cell D1=Sum"], InitialState::default()),
        d("office_05", Office, Sheet, &["cell A1=Title", "cell C3=Draft", "cell D3=Final"], InitialState::default()),
        d("office_06", Office, Sheet, &["cell A2=10", "cell A3=20"], cells(&[("A1", "Score"), ("A2", "x"), ("A3", "x")])),
        d("office_07", Office, Sheet, &["cell E1=Jan", "cell E2=Feb", "cell E3=Mar", "cell E4=Apr"], InitialState::default()),
        d("office_08", Office, Sheet, &["cell A5=Total", "cell B5=42"], cells(&[("A4", "7")])),
        d("office_09", Office, Sheet, &["cell H1=End", "cell H2=Stop"], InitialState::default()),
        d("office_10", Office, Sheet, &["cell C1=Red", "cell D1=Green", "cell E1=Blue"], InitialState::default()),
        d("daily_01", Daily, Editor, &["line Buy milk", "line Call mom"], lines(&["Groceries"])),
        d("daily_02", Daily, Editor, &["replaced teh=>the"], lines(&["I saw teh cat", "teh end"])),
        d("daily_03", Daily, Editor, &["line Meeting at 10"], lines(&["Notes"])),
        d("daily_04", Daily, Sheet, &["replaced Todo=>Done"], lines(&["Todo"])),
        d("daily_05", Daily, Editor, &["replaced Call=>Phone"], lines(&["Call at 9", "Lunch", "Call at 5"])),
        d("daily_06", Daily, Files, &["line Eggs"], lines(&["Shopping"])),
        d("daily_07", Daily, Editor, &["replaced colour=>color"], lines(&["colour red", "colour blue"])),
        d("daily_08", Daily, Editor, &["line See you soon"], lines(&["Hi"])),
        d("daily_09", Daily, Sheet, &["line eggs"], lines(&["Recipe", "flour", "sugar"])),
        d("daily_10", Daily, Files, &["replaced v1=>v2", "line Reviewed"], lines(&["Draft v1"])),
        d("pro_01", Professional, Sheet, &["cell A1=Region", "cell B1=Q1", "cell C1=Q2", "cell D1=Q3", "cell E1=Q4"], InitialState::default()),
        d(
            "pro_02",
            Professional,
            Files,
            &["dir /projects/site", "dir /projects/site/css", "file /projects/site/index.html"],
            root_fs(&[], &[], false),
        ),
        d(
            "pro_03",
            Professional,
            Sheet,
            &["cell A1=Name", "cell B1=Age", "cell A2=Ann", "cell B2=31", "cell A3=Ben", "cell B3=27"],
            InitialState::default(),
        ),
        d(
            "pro_04",
            Professional,
            Files,
            &["file /archive/q1.txt", "file /archive/q2.txt", "absent /docs/q1.txt", "absent /docs/q2.txt"],
            root_fs(&[], &["/docs/q1.txt", "/docs/q2.txt"], false),
        ),
        d(
            "pro_05",
            Professional,
            Editor,
            &["replaced draft=>final", "replaced tbd=>Sam"],
            lines(&["Status: draft", "Owner: tbd", "Due: tbd"]),
        ),
        d("pro_06", Professional, Files, &["absent /tmp/old.log", "absent /tmp/cache.bin"], root_fs(&[], &["/tmp/cache.bin", "/tmp/old.log"], true)),
        d("pro_07", Professional, Sheet, &["cell B2=10", "cell B3=20", "cell B4=30", "cell B5=40"], cells(&[("A1", "Week")])),
        d(
            "pro_08",
            Professional,
            Files,
            &["file /docs/alpha.txt", "file /docs/beta.txt", "absent /docs/a.txt", "absent /docs/b.txt"],
            root_fs(&[], &["/docs/a.txt", "/docs/b.txt"], false),
        ),
        d("pro_09", Professional, Sheet, &["cell A1=Total", "cell B1=100", "cell A2=Tax", "cell B2=8"], InitialState::default()),
        d(
            "pro_10",
            Professional,
            Files,
            &["dir /archive/old", "file /archive/old/draft.txt", "absent /docs/draft.txt"],
            root_fs(&[], &["/docs/draft.txt"], false),
        ),
        d("flow_01", Workflow, Sheet, &["cell A1=Report", "cell B1=Done", "line Sheet updated", "saved"], lines(&["Log"])),
        d(
            "flow_02",
            Workflow,
            Files,
            &["file /docs/summary.txt", "replaced draft=>final", "saved"],
            with_lines(root_fs(&[], &[], false), &["draft summary"]),
        ),
        d("flow_03", Workflow, Editor, &["cell A1=Budget", "file /docs/budget.txt"], root_fs(&[], &[], false)),
        d(
            "flow_04",
            Workflow,
            Sheet,
            &["dir /archive/2023", "line Archived 2023", "saved"],
            with_lines(root_fs(&[], &[], false), &["History"]),
        ),
        d("flow_05", Workflow, Files, &["line Ping", "cell A1=Pong"], lines(&["Chat"])),
        d(
            "flow_06",
            Workflow,
            Editor,
            &["cell A1=Jan", "cell B1=Feb", "cell C1=Mar", "replaced TBD=>Q1", "saved"],
            lines(&["Plan TBD"]),
        ),
        d(
            "flow_07",
            Workflow,
            Editor,
            &["absent /tmp/old.log", "line Cleaned tmp"],
            with_lines(root_fs(&[], &["/tmp/old.log"], false), &["Ops log"]),
        ),
        d(
            "flow_08",
            Workflow,
            Files,
            &["file /archive/notes.txt", "absent /docs/notes.txt", "line Moved notes", "saved"],
            with_lines(root_fs(&[], &["/docs/notes.txt"], false), &["Changelog"]),
        ),
        d(
            "flow_09",
            Workflow,
            Sheet,
            &["cell A1=Done", "file /docs/done.txt", "line All done", "saved"],
            with_lines(root_fs(&[], &[], false), &["Tasks"]),
        ),
        d("flow_10", Workflow, Editor, &["replaced old=>new", "line Updated", "cell B2=Yes"], lines(&["old value"])),
    ]
}

fn finish(d: Draft) -> TaskSpec {
    let goal: Vec<Subgoal> = d.goal.iter().map(|g| g.parse().expect("static goal")).collect();
    let mut task = TaskSpec {
        task_id: d.id.to_string(),
        app: d.app,
        domain: d.domain,
        goal,
        initial_state: d.init,
        max_steps: 1,
        verifier_id: "all_of".into(),
    };
    let gui = scripted_solution(&task, ActionSpace::GuiOnly).expect("static task is valid");
    task.max_steps = gui.len() as u32 + STEP_SLACK;
    task
}

/// The built-in suite for `profile`. `Smoke` is the first two tasks of each domain.
pub fn task_suite(profile: SuiteProfile) -> Vec<TaskSpec> {
    let per_domain = match profile {
        SuiteProfile::Smoke => 2,
        SuiteProfile::Ablation => 10,
    };
    let mut seen = std::collections::HashMap::<Domain, usize>::new();
    drafts()
        .into_iter()
        .filter(|d| {
            let n = seen.entry(d.domain).or_default();
            *n += 1;
            *n <= per_domain
        })
        .map(finish)
        .collect()
}
