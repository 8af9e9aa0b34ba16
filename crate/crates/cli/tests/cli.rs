use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cyclebench::evaluation::read_records;
use cyclebench::golden::{INTERLEAVE_HALVES, LISTINGS};
use cyclebench::llm::{MockScript, Role, ScriptEntry};
use cyclebench::task::{parse_shard, serialize_shard, Domain, Protocol, TaskInstance};
use cyclebench::value::Value;

fn exe() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cyclebench"))
}

fn run(args: &[&str], config: &Path) -> Output {
    exe().arg("--config").arg(config).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn show(out: &Output) -> String {
    format!(
        "status {:?}\n{}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    )
}

/// A config in `dir` with the run directory beside it.
fn config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("cyclebench.toml");
    fs::write(&path, format!("run_dir = \"run\"\n[runner]\npool_size = 2\n{extra}")).unwrap();
    path
}

fn write_shard(path: &Path, tasks: &[TaskInstance]) {
    fs::write(path, serialize_shard(tasks)).unwrap();
}

#[test]
fn verify_accepts_the_interleaving_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let shard = dir.path().join("shard.ndjson");
    write_shard(&shard, &[INTERLEAVE_HALVES.task().unwrap()]);
    let out = run(&["verify", "--corpus", shard.to_str().unwrap()], &config(dir.path(), ""));
    assert_eq!(code(&out), 0, "{}", show(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["all_pass"], true);
    assert_eq!(report["tasks"], 1);
    assert!(dir.path().join("run/reports/verify.json").is_file());
}

#[test]
fn verify_rejects_a_tampered_answer() {
    let dir = tempfile::tempdir().unwrap();
    let shard = dir.path().join("shard.ndjson");
    let mut task = INTERLEAVE_HALVES.task().unwrap();
    task.answer = Value::tokens(["p", "y", "t", "h", "o", "n", "3"]);
    write_shard(&shard, &[task]);
    let out = run(&["verify", "--corpus", shard.to_str().unwrap()], &config(dir.path(), ""));
    assert_eq!(code(&out), 1, "{}", show(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["all_pass"], false);
}

#[test]
fn remap_writes_one_p1_task_per_symbolic_task() {
    let dir = tempfile::tempdir().unwrap();
    let p0 = dir.path().join("p0");
    fs::create_dir_all(&p0).unwrap();
    let tasks: Vec<TaskInstance> = LISTINGS.iter().map(|g| g.task().unwrap()).collect();
    let symbolic = tasks.iter().filter(|t| t.domain == Domain::Symbolic).count();
    assert!(symbolic > 0 && symbolic < tasks.len());
    write_shard(&p0.join("tasks.jsonl"), &tasks);
    let p1 = dir.path().join("p1");
    let cfg = config(dir.path(), "");
    let out = run(
        &["remap", "--corpus", p0.to_str().unwrap(), "--out", p1.to_str().unwrap()],
        &cfg,
    );
    assert_eq!(code(&out), 0, "{}", show(&out));
    let remapped = parse_shard(&fs::read_to_string(p1.join("tasks.jsonl")).unwrap()).unwrap();
    assert_eq!(remapped.len(), symbolic);
    assert!(remapped.iter().all(|t| t.protocol == Protocol::P1));
    let maps = fs::read_to_string(p1.join("symbol_maps.jsonl")).unwrap();
    assert_eq!(maps.lines().count(), symbolic);
    assert!(p1.join("manifest.json").is_file());

    // the P1 set verifies through its stored maps
    let out = run(&["verify", "--corpus", p1.to_str().unwrap()], &cfg);
    assert_eq!(code(&out), 0, "{}", show(&out));
}

#[test]
fn missing_or_malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["report"], &dir.path().join("absent.toml"));
    assert_eq!(code(&out), 2, "{}", show(&out));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not found"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "run_dir = \"run\"\nsolver_count = 3\n").unwrap();
    let out = run(&["report"], &bad);
    assert_eq!(code(&out), 2, "{}", show(&out));
    assert!(String::from_utf8_lossy(&out.stderr).contains("solver_count"));
}

#[test]
fn evaluate_needs_solvers() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("script.json");
    fs::write(&script, "{}").unwrap();
    let cfg = config(
        dir.path(),
        "[provider]\nkind = \"mock\"\nmock_script = \"script.json\"\n",
    );
    let shard = dir.path().join("shard.ndjson");
    write_shard(&shard, &[INTERLEAVE_HALVES.task().unwrap()]);
    let out = run(&["evaluate", "--corpus", shard.to_str().unwrap()], &cfg);
    assert_eq!(code(&out), 2, "{}", show(&out));
}

#[test]
fn runner_that_cannot_start_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cyclebench.toml");
    fs::write(&path, "[runner]\ncommand = [\"/nonexistent/worker\"]\n").unwrap();
    let shard = dir.path().join("shard.ndjson");
    write_shard(&shard, &[INTERLEAVE_HALVES.task().unwrap()]);
    let out = run(&["verify", "--corpus", shard.to_str().unwrap()], &path);
    assert_eq!(code(&out), 2, "{}", show(&out));
}

#[test]
fn evaluation_stops_on_budget_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let mut script = MockScript::default();
    script
        .fallback
        .insert(Role::Solver, ScriptEntry::text("No pattern found."));
    fs::write(dir.path().join("script.json"), serde_json::to_string(&script).unwrap()).unwrap();
    let shard = dir.path().join("shard.ndjson");
    let tasks: Vec<TaskInstance> = LISTINGS.iter().map(|g| g.task().unwrap()).collect();
    write_shard(&shard, &tasks);
    let provider = "[provider]\nkind = \"mock\"\nmock_script = \"script.json\"\n[models]\nsolvers = [\"s1\"]\n";
    let limited = config(dir.path(), &format!("{provider}[budget]\nmax_calls = 3\n"));
    let out = run(&["evaluate", "--corpus", shard.to_str().unwrap()], &limited);
    assert_eq!(code(&out), 0, "{}", show(&out));
    assert!(String::from_utf8_lossy(&out.stderr).contains("incomplete"));
    let records_path = dir.path().join("run/records/s1.jsonl");
    assert_eq!(read_records(&records_path).unwrap().len(), 3);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run/records/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["incomplete"], true);

    let open = config(dir.path(), provider);
    let out = run(&["evaluate", "--corpus", shard.to_str().unwrap()], &open);
    assert_eq!(code(&out), 0, "{}", show(&out));
    let records = read_records(&records_path).unwrap();
    assert_eq!(records.len(), tasks.len());
    let ids: std::collections::HashSet<&str> = records.iter().map(|r| r.task_id.as_str()).collect();
    assert_eq!(ids.len(), tasks.len());

    let out = run(&["report", "--corpus", shard.to_str().unwrap()], &open);
    assert_eq!(code(&out), 0, "{}", show(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("s1"));
    let ledger = fs::read_to_string(dir.path().join("run/ledger/calls.jsonl")).unwrap();
    assert_eq!(ledger.lines().count(), tasks.len());
}

#[test]
fn selftest_refuses_a_used_directory() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("keep.txt"), "x").unwrap();
    let out = exe()
        .args(["selftest", "--run-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 2, "{}", show(&out));
    assert!(dir.path().join("keep.txt").is_file());
}

#[test]
fn selftest_writes_the_run_layout() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let out = exe().args(["selftest", "--run-dir"]).arg(&run_dir).output().unwrap();
    assert_eq!(code(&out), 0, "{}", show(&out));
    for sub in ["corpus/p0/tasks.jsonl", "corpus/p1/symbol_maps.jsonl", "ledger/calls.jsonl", "reports/leaderboard.tsv"] {
        assert!(run_dir.join(sub).is_file(), "{sub}");
    }
    assert!(run_dir.join("transcripts/seeds").is_dir());
    assert!(run_dir.join("records/mock-solver-a.jsonl").is_file());
    // task files are named by their content id
    let shard = parse_shard(&fs::read_to_string(run_dir.join("corpus/p0/tasks.jsonl")).unwrap()).unwrap();
    for t in &shard {
        assert_eq!(t.compute_id(), t.task_id);
        assert!(run_dir.join(format!("corpus/p0/tasks/{}.json", t.task_id)).is_file());
    }
    let verify: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("reports/verify.json")).unwrap()).unwrap();
    assert_eq!(verify["all_pass"], true);
}
