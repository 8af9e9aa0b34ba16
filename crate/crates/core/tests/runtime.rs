use std::sync::Arc;
use std::thread;
use std::time::Instant;

use cyclebench::golden::{
    ATOMIC_NUMBER_LETTERS, FLAWED_BRACKET_ROTATION, IDENTITY, INTERLEAVE_HALVES, LAST_DIGIT,
};
use cyclebench::runtime::{
    AstMetrics, ExecStatus, Limits, RuleExecutor, RunnerCommand, RunnerHandle, RunnerPool,
    StartupError,
};
use cyclebench::value::Value;

fn pool(size: usize) -> RunnerPool {
    RunnerPool::start(size, Limits::default(), RunnerCommand::reference()).expect("python3 worker starts")
}

fn handle_with(limits: Limits) -> RunnerHandle {
    RunnerHandle::start(RunnerCommand::reference(), limits).unwrap()
}

fn toks(s: &str) -> Value {
    Value::tokens(s.chars().map(|c| c.to_string()))
}

/// Rust mirror of the interleaving rule, used as an oracle.
fn interleave(xs: &[String]) -> Vec<String> {
    let half = xs.len().div_ceil(2);
    let (first, second) = xs.split_at(half);
    let mut out = Vec::new();
    for (i, f) in first.iter().enumerate() {
        if let Some(s) = second.get(i) {
            out.push(s.clone());
        }
        out.push(f.clone());
    }
    out
}

#[test]
fn single_worker_pool_answers_ping() {
    let p = pool(1);
    assert_eq!(p.size(), 1);
    assert!(p.handle(0).ping().is_ok());
}

#[test]
fn empty_pool_is_rejected() {
    let err = RunnerPool::start(0, Limits::default(), RunnerCommand::reference()).err().unwrap();
    assert!(matches!(err, StartupError::EmptyPool));
}

#[test]
fn missing_worker_binary_is_a_startup_error() {
    let cmd = RunnerCommand::new("/nonexistent/cyclebench-worker", Vec::<String>::new());
    let err = RunnerPool::start(1, Limits::default(), cmd).err().unwrap();
    assert!(matches!(err, StartupError::Spawn { .. }), "{err}");
}

#[test]
fn handshake_version_mismatch_is_a_startup_error() {
    let cmd = RunnerCommand::new("sh", ["-c", r#"echo '{"protocol_version":2}'; cat >/dev/null"#]);
    let err = RunnerPool::start(1, Limits::default(), cmd).err().unwrap();
    assert!(
        matches!(err, StartupError::VersionMismatch { found: 2, expected: 1 }),
        "{err}"
    );
}

#[test]
fn forward_and_inverse_on_listing_rules() {
    let p = pool(1);
    let out = p.apply_forward(INTERLEAVE_HALVES.source, &toks("abcd"));
    assert_eq!(out.status, ExecStatus::Ok);
    assert_eq!(out.value, Some(toks("cadb")));

    let back = p.apply_inverse(INTERLEAVE_HALVES.source, &toks("cadb"));
    assert_eq!(back.value, Some(toks("abcd")));

    let out = p.apply_forward(ATOMIC_NUMBER_LETTERS.source, &Value::tokens(["CAT"]));
    assert_eq!(out.value, Some(Value::tokens(["LiHCa"])));

    let empty = p.apply_inverse(INTERLEAVE_HALVES.source, &Value::seq([]));
    assert_eq!(empty.value, Some(Value::seq([])));
}

#[test]
fn flawed_inverse_does_not_restore_input() {
    let p = pool(1);
    let x = Value::token("<abcd>");
    let fx = p.apply_forward(FLAWED_BRACKET_ROTATION.source, &x).value.unwrap();
    assert_eq!(fx, Value::token("{4abcd}"));
    let gfx = p.apply_inverse(FLAWED_BRACKET_ROTATION.source, &fx).value.unwrap();
    assert_ne!(gfx, x);
    assert_eq!(gfx, Value::token("<bcda>"));
}

#[test]
fn rule_exceptions_are_captured() {
    let h = handle_with(Limits::default());
    let src = "def transform_grid(g):\n    return g[99]\n";
    let out = h.apply_forward(src, &toks("ab"));
    assert_eq!(out.status, ExecStatus::RaisedError);
    assert!(out.value.is_none());
    assert!(out.error_text.unwrap().contains("IndexError"));

    let out = h.apply_inverse(IDENTITY.source.replace("inverse_", "other_").as_str(), &toks("a"));
    assert_eq!(out.status, ExecStatus::RaisedError);

    let out = h.apply_forward("def transform_grid(g):\n    return {'a': 1}\n", &toks("a"));
    assert_eq!(out.status, ExecStatus::RaisedError);
    assert!(h.ping().is_ok());
    assert_eq!(h.respawn_count(), 0);
}

#[test]
fn infinite_loop_times_out_within_limit() {
    let limits = Limits { wall_clock_ms: 300, ..Limits::default() };
    let h = handle_with(limits);
    let start = Instant::now();
    let out = h.apply_forward("def transform_grid(g):\n    while True:\n        pass\n", &toks("a"));
    let elapsed = start.elapsed().as_millis();
    assert_eq!(out.status, ExecStatus::Timeout);
    assert!((300..300 + 1500).contains(&elapsed), "took {elapsed} ms");
    // The worker stays usable afterwards.
    assert_eq!(h.apply_forward(IDENTITY.source, &toks("a")).value, Some(toks("a")));
}

#[test]
fn engine_side_deadline_kills_unresponsive_worker() {
    // A worker that handshakes and then never answers.
    let cmd = RunnerCommand::new("sh", ["-c", r#"echo '{"protocol_version":1}'; cat >/dev/null"#]);
    let limits = Limits { wall_clock_ms: 100, ..Limits::default() };
    let h = RunnerHandle::start(cmd, limits).unwrap();
    let start = Instant::now();
    let out = h.apply_forward(IDENTITY.source, &toks("a"));
    assert_eq!(out.status, ExecStatus::Timeout);
    assert!(start.elapsed().as_millis() < 3000);
    assert_eq!(h.respawn_count(), 1);
}

#[test]
fn mismatched_response_id_is_a_protocol_error() {
    let cmd = RunnerCommand::new(
        "sh",
        [
            "-c",
            r#"echo '{"protocol_version":1}'; while read line; do echo '{"id":0,"status":"ok","duration_ms":0}'; done"#,
        ],
    );
    let h = RunnerHandle::start(cmd, Limits::default()).unwrap();
    let out = h.ping();
    assert_eq!(out.status, ExecStatus::ProtocolError);
    assert!(out.error_text.unwrap().contains("does not match"));
}

#[test]
fn memory_limit_is_enforced() {
    let limits = Limits { memory_mb: 128, ..Limits::default() };
    let h = handle_with(limits);
    let out = h.apply_forward("def transform_grid(g):\n    return [0] * (10 ** 9)\n", &toks("a"));
    assert_eq!(out.status, ExecStatus::MemoryExceeded, "{:?}", out.error_text);
    assert!(h.ping().is_ok());
}

#[test]
fn killed_worker_reports_crash_then_respawns() {
    let p = pool(4);
    for h in p.handles() {
        assert!(h.ping().is_ok());
    }
    let victim = p.handle(2);
    let pid = victim.worker_pid().unwrap();
    victim.kill_worker();
    let out = victim.apply_forward(IDENTITY.source, &toks("ab"));
    assert_eq!(out.status, ExecStatus::RunnerCrashed);
    assert!(out.value.is_none());
    assert_eq!(victim.respawn_count(), 1);
    assert_ne!(victim.worker_pid(), Some(pid));
    let out = victim.apply_forward(IDENTITY.source, &toks("ab"));
    assert_eq!(out.value, Some(toks("ab")));
    // The other workers were not disturbed.
    for (i, h) in p.handles().iter().enumerate() {
        if i != 2 {
            assert_eq!(h.respawn_count(), 0);
        }
    }
}

#[test]
fn concurrent_requests_never_cross_wires() {
    let p = Arc::new(pool(4));
    let threads: Vec<_> = (0..8)
        .map(|t| {
            let p = Arc::clone(&p);
            thread::spawn(move || {
                for i in 0..40 {
                    let input: Vec<String> =
                        (0..(i % 9)).map(|k| format!("t{t}i{i}k{k}")).collect();
                    let out = p.apply_forward(INTERLEAVE_HALVES.source, &Value::tokens(input.clone()));
                    assert_eq!(out.value, Some(Value::tokens(interleave(&input))));
                }
            })
        })
        .collect();
    for t in threads {
        t.join().unwrap();
    }
}

#[test]
fn repeated_forward_calls_agree_for_deterministic_rules() {
    let p = pool(2);
    let x = toks("opnythe");
    let first = p.apply_forward(INTERLEAVE_HALVES.source, &x).value;
    for _ in 0..5 {
        assert_eq!(p.apply_forward(INTERLEAVE_HALVES.source, &x).value, first);
    }
}

#[test]
fn cycle_batches() {
    let p = pool(1);
    let inputs = vec![Value::seq([]), toks("x"), toks("abcd"), toks("abcde")];
    let out = p.cycle(INTERLEAVE_HALVES.source, &inputs);
    let batch = out.value.unwrap();
    assert_eq!(batch.passes, vec![true; 4]);
    assert!(batch.counterexample.is_none());
    // Composing separate requests agrees with the batch.
    for (i, x) in inputs.iter().enumerate() {
        let fx = p.apply_forward(INTERLEAVE_HALVES.source, x).value.unwrap();
        let gfx = p.apply_inverse(INTERLEAVE_HALVES.source, &fx).value.unwrap();
        assert_eq!(fx, batch.forward[i]);
        assert_eq!(gfx, batch.roundtrip[i]);
    }

    let flawed = p.cycle(FLAWED_BRACKET_ROTATION.source, &[Value::token("<abcd>")]);
    let batch = flawed.value.unwrap();
    assert_eq!(batch.passes, vec![false]);
    let (x, fx, gfx) = batch.counterexample.unwrap();
    assert_eq!(x, Value::token("<abcd>"));
    assert_eq!(fx, Value::token("{4abcd}"));
    assert_ne!(gfx, x);

    let missing = p.cycle(LAST_DIGIT.source, &[Value::int(123)]);
    assert_eq!(missing.status, ExecStatus::RaisedError);
    assert!(missing.error_text.unwrap().contains("inverse_transform_grid"));
}

fn metrics(src: &str) -> AstMetrics {
    let h = handle_with(Limits::default());
    let out = h.code_metrics(src);
    assert!(out.is_ok(), "{:?}", out.error_text);
    out.value.unwrap()
}

#[test]
fn metrics_straight_line() {
    assert_eq!(metrics("def transform_grid(g):\n return g").as_array(), [0, 0, 0, 1, 0, 1]);
}

#[test]
fn metrics_nested_loops_and_ifs() {
    // Walk by hand: loops for/for -> depth 2; ifs at depth 1 and 2 -> 2 ifs,
    // nesting 2; branch points for, for, if, if -> complexity 5; one
    // subscript assignment and one append -> mutability 2; one plain return.
    let src = "\
def transform_grid(g):
    out = []
    for row in g:
        for c in row:
            if c:
                if c == 'x':
                    row[0] = c
                out.append(c)
    return out
";
    assert_eq!(metrics(src).as_array(), [2, 2, 2, 5, 2, 1]);
}

#[test]
fn metrics_elif_chains_do_not_deepen_nesting() {
    // if / elif / else: two If nodes, nesting 1; a conditional expression in
    // the return adds a branch point to both complexity figures.
    let src = "\
def transform_grid(g):
    if len(g) == 0:
        return g
    elif len(g) == 1:
        g += g
    return g if g else []
";
    assert_eq!(metrics(src).as_array(), [0, 2, 1, 4, 1, 3]);
}

#[test]
fn metrics_of_flawed_listing() {
    let m = metrics(FLAWED_BRACKET_ROTATION.source);
    assert_eq!(m.total_ifs, 6);
    assert_eq!(m.nested_if_depth, 3);
    assert!(m.nested_if_depth >= 2 && m.total_ifs >= 5);
}

#[test]
fn metrics_syntax_error_is_protocol_error() {
    let h = handle_with(Limits::default());
    let out = h.code_metrics("def transform_grid(:\n");
    assert_eq!(out.status, ExecStatus::ProtocolError);
    assert!(out.error_text.unwrap().contains("syntax"));
}
