use cyclebench::analysis::{OutcomeCategory, OutcomeLabel};
use cyclebench::evaluation::{
    append_records, compute_leaderboard, evaluate, extract_answer, judge_answer, percent, read_records, solve_task,
    AnswerVerdict, EvalRecord, JoinError, JudgePath, LeaderboardOptions, Usage,
};
use cyclebench::golden::INTERLEAVE_HALVES;
use cyclebench::llm::{Gateway, MockScript, PricingTable, Role, RoleConfig, ScriptEntry, Stage};
use cyclebench::task::{Domain, ExamplePair, Protocol, TaskInstance};
use cyclebench::value::{Dimension, Value};
use cyclebench::Exact;

fn gateway(script: MockScript) -> Gateway {
    Gateway::mock(script, PricingTable::default())
}

fn solver() -> RoleConfig {
    RoleConfig::new(Role::Solver, "solver-a")
}

fn judge() -> RoleConfig {
    RoleConfig::new(Role::JudgeAnswer, "judge")
}

fn interleave() -> TaskInstance {
    INTERLEAVE_HALVES.task().unwrap()
}

fn solve_with(reply: &str, task: &TaskInstance) -> (Gateway, EvalRecord) {
    let mut s = MockScript::default();
    s.push(Role::Solver, ScriptEntry::text(reply));
    let gw = gateway(s);
    let r = solve_task(&gw, &solver(), task).unwrap();
    (gw, r)
}

fn answer_reply(answer: &str) -> String {
    format!(
        "The output alternates the second half with the first.\n```json\n{{\"rule\": \"interleave halves\", \"final_answer\": {answer}}}\n```"
    )
}

#[test]
fn prompt_shows_examples_and_query_only() {
    let task = interleave();
    let mut s = MockScript::default();
    s.push(Role::Solver, ScriptEntry::text(answer_reply("[]")));
    let gw = gateway(s);
    solve_task(&gw, &solver(), &task).unwrap();
    // the mock keeps no prompts, so render the same bindings and inspect them
    let b = [
        ("examples", cyclebench::llm::templates::format_examples(&task.examples)),
        ("query", task.query.canonical()),
    ]
    .into_iter()
    .collect();
    let p = cyclebench::llm::render_prompt(cyclebench::llm::TemplateId::Solver, &b).unwrap();
    let rule = task.rule.as_ref().unwrap();
    assert!(p.user.contains(r#"["p","y","t","h","o","n","3"]"#));
    assert!(p.user.contains(r#"Output: ["c","a","d","b"]"#));
    assert!(!p.user.contains(&rule.rule_description));
    assert!(!p.user.contains("def transform_grid"));
    assert!(!p.system.contains(&rule.rule_description));
    let recs = gw.ledger().records();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].stage, Stage::Evaluation);
}

#[test]
fn echoing_the_truth_is_extracted_and_correct() {
    let task = interleave();
    let (gw, mut r) = solve_with(&answer_reply(r#"["o","p","n","y","3","t","h"]"#), &task);
    assert_eq!(r.extracted_answer.as_ref(), Some(&task.answer));
    assert_eq!(r.stated_rule.as_deref(), Some("interleave halves"));
    assert_eq!(r.verdict, None);
    assert_eq!(judge_answer(&gw, &judge(), &task, &mut r).unwrap(), AnswerVerdict::Correct);
    assert_eq!(r.judgment.as_ref().unwrap().path, JudgePath::ExactMatch);
    // fast path: only the solver call was made
    assert_eq!(gw.attempts(), 1);
}

#[test]
fn prose_without_answer_is_unparseable() {
    let task = interleave();
    let (gw, mut r) = solve_with("I could not find a consistent pattern in these examples.", &task);
    assert_eq!(r.extracted_answer, None);
    assert_eq!(judge_answer(&gw, &judge(), &task, &mut r).unwrap(), AnswerVerdict::Unparseable);
    assert_eq!(gw.attempts(), 1);
}

#[test]
fn one_token_difference_is_incorrect_without_a_judge_call() {
    let task = interleave();
    let (gw, mut r) = solve_with(&answer_reply(r#"["o","p","n","y","3","h","t"]"#), &task);
    assert_eq!(judge_answer(&gw, &judge(), &task, &mut r).unwrap(), AnswerVerdict::Incorrect);
    assert_eq!(r.judgment.unwrap().path, JudgePath::Mismatch);
    assert_eq!(gw.attempts(), 1);
}

fn numeric_task() -> TaskInstance {
    TaskInstance {
        task_id: String::new(),
        rule: None,
        examples: vec![ExamplePair {
            input: Value::seq([Value::int(2), Value::int(1)]),
            output: Value::seq([Value::int(1), Value::int(2)]),
        }],
        query: Value::seq([Value::int(2), Value::int(1)]),
        answer: Value::seq([Value::int(1), Value::int(2)]),
        dimension: Dimension::D1,
        domain: Domain::Symbolic,
        variation_index: 0,
        protocol: Protocol::P0,
        author_model: "a".into(),
        lineage: None,
        symbol_map_id: None,
        phi_commutes: None,
    }
    .with_computed_id()
}

#[test]
fn formatting_divergent_answer_goes_to_the_judge() {
    let task = numeric_task();
    for (verdict_json, expected) in [("true", AnswerVerdict::Correct), ("false", AnswerVerdict::Incorrect)] {
        let mut s = MockScript::default();
        s.push(Role::Solver, ScriptEntry::text(answer_reply(r#""[1, 2]""#)));
        s.push(
            Role::JudgeAnswer,
            ScriptEntry::text(format!("{{\"justification\": \"compared\", \"is_correct\": {verdict_json}}}")),
        );
        let gw = gateway(s);
        let mut r = solve_task(&gw, &solver(), &task).unwrap();
        assert_eq!(r.extracted_answer, Some(Value::token("[1, 2]")));
        assert_eq!(judge_answer(&gw, &judge(), &task, &mut r).unwrap(), expected);
        let j = r.judgment.unwrap();
        assert_eq!(j.path, JudgePath::Model);
        assert_eq!(j.justification.as_deref(), Some("compared"));
        assert_eq!(gw.attempts(), 2);
    }
}

#[test]
fn unreadable_judge_is_retried_twice_then_flagged_incorrect() {
    let task = numeric_task();
    let mut s = MockScript::default();
    s.push(Role::Solver, ScriptEntry::text(answer_reply(r#""[1, 2]""#)));
    s.fallback.insert(Role::JudgeAnswer, ScriptEntry::text("hmm, hard to say"));
    let gw = gateway(s);
    let mut r = solve_task(&gw, &solver(), &task).unwrap();
    assert_eq!(judge_answer(&gw, &judge(), &task, &mut r).unwrap(), AnswerVerdict::Incorrect);
    assert!(r.judgment.unwrap().flagged);
    assert_eq!(gw.attempts(), 1 + 3);
}

#[test]
fn solver_provider_failure_is_unparseable_without_retry() {
    let task = interleave();
    let mut s = MockScript::default();
    s.push(Role::Solver, ScriptEntry::failure(503));
    let gw = gateway(s).with_backoff_base(std::time::Duration::from_millis(1));
    let r = solve_task(&gw, &solver(), &task).unwrap();
    assert_eq!(r.verdict, Some(AnswerVerdict::Unparseable));
    assert!(r.extracted_answer.is_none());
    assert!(r.error.is_some());
    assert_eq!(gw.attempts(), 1);
}

#[test]
fn budget_exhaustion_is_returned() {
    let gw = gateway(MockScript::default()).with_call_budget(0);
    assert!(solve_task(&gw, &solver(), &interleave()).is_err());
}

#[test]
fn permissive_extraction() {
    let (v, _) = extract_answer("Reasoning...\nFinal answer: [\"a\", \"b\"]").unwrap();
    assert_eq!(v, Value::tokens(["a", "b"]));
    let (v, _) = extract_answer("**Final Answer:**\n```\n[[1, 2], [3, 4]]\n```").unwrap();
    assert_eq!(v.canonical(), "[[1,2],[3,4]]");
    let (v, _) = extract_answer("so we get\n```json\n[\"x\"]\n```\nand that's it").unwrap();
    assert_eq!(v, Value::tokens(["x"]));
    // a structured object wins over loose text
    let (v, _) = extract_answer("final answer: [1]\n{\"final_answer\": [2]}").unwrap();
    assert_eq!(v.canonical(), "[2]");
    assert!(extract_answer("{\"final_answer\": null}").is_none());
    assert!(extract_answer("").is_none());
}

#[test]
fn evaluate_runs_every_solver_on_every_task_in_order() {
    let tasks = vec![interleave(), numeric_task()];
    let mut s = MockScript::default();
    s.push(Role::Solver, ScriptEntry::text(answer_reply(r#"["o","p","n","y","3","t","h"]"#)));
    s.push(Role::Solver, ScriptEntry::text(answer_reply("[2, 1]")));
    s.push(Role::Solver, ScriptEntry::text("no idea"));
    s.push(Role::Solver, ScriptEntry::text(answer_reply("[1, 2]")));
    let gw = gateway(s);
    let solvers = [solver(), RoleConfig::new(Role::Solver, "solver-b")];
    let recs = evaluate(&gw, &solvers, &judge(), &tasks, 4).unwrap();
    let got: Vec<(&str, Option<AnswerVerdict>)> = recs.iter().map(|r| (r.solver_model.as_str(), r.verdict)).collect();
    assert_eq!(
        got,
        [
            ("solver-a", Some(AnswerVerdict::Correct)),
            ("solver-a", Some(AnswerVerdict::Incorrect)),
            ("solver-b", Some(AnswerVerdict::Unparseable)),
            ("solver-b", Some(AnswerVerdict::Correct)),
        ]
    );
}

#[test]
fn records_round_trip_through_shards() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.jsonl");
    let task = interleave();
    let (gw, mut r) = solve_with(&answer_reply(r#"["o"]"#), &task);
    judge_answer(&gw, &judge(), &task, &mut r).unwrap();
    append_records(&path, std::slice::from_ref(&r)).unwrap();
    append_records(&path, std::slice::from_ref(&r)).unwrap();
    let back = read_records(&path).unwrap();
    assert_eq!(back, vec![r.clone(), r]);
}

// synthetic corpora

fn synthetic_task(n: usize, domain: Domain, protocol: Protocol, variation: u8, lineage: Option<String>) -> TaskInstance {
    TaskInstance {
        task_id: format!("{domain}-{protocol}-{n}"),
        rule: None,
        examples: vec![ExamplePair {
            input: Value::token("a"),
            output: Value::token("b"),
        }],
        query: Value::tokens(["q"]),
        answer: Value::tokens(["a"]),
        dimension: Dimension::D1,
        domain,
        variation_index: variation,
        protocol,
        author_model: "author".into(),
        lineage,
        symbol_map_id: None,
        phi_commutes: None,
    }
}

fn record(task: &TaskInstance, model: &str, verdict: AnswerVerdict) -> EvalRecord {
    EvalRecord {
        task_id: task.task_id.clone(),
        solver_model: model.into(),
        raw_response: String::new(),
        extracted_answer: None,
        stated_rule: None,
        verdict: Some(verdict),
        judgment: None,
        usage: Usage::default(),
        error: None,
        analyst: None,
    }
}

/// 351 symbolic originals, their 351 remapped copies, 352 semantic tasks;
/// 36 seeds in each group.
fn paper_shaped_corpus() -> Vec<TaskInstance> {
    let mut tasks = Vec::new();
    for i in 0..351 {
        let v = if i < 36 { 0 } else { 1 + (i % 9) as u8 };
        let p0 = synthetic_task(i, Domain::Symbolic, Protocol::P0, v, None);
        let p1 = synthetic_task(i, Domain::Symbolic, Protocol::P1, v, Some(p0.task_id.clone()));
        tasks.push(p0);
        tasks.push(p1);
    }
    for i in 0..352 {
        let v = if i < 36 { 0 } else { 1 + (i % 9) as u8 };
        tasks.push(synthetic_task(i, Domain::Semantic, Protocol::P0, v, None));
    }
    tasks
}

/// `correct` hits spread over the tasks of one group, seeds first up to
/// `seed_hits`.
fn verdicts_for(group: &[&TaskInstance], correct: usize, seed_hits: usize, model: &str) -> Vec<EvalRecord> {
    let (seeds, rest): (Vec<&TaskInstance>, Vec<&TaskInstance>) = group.iter().partition(|t| t.is_seed());
    let seed_hits = seed_hits.min(correct).min(seeds.len());
    let aug_hits = correct - seed_hits;
    assert!(aug_hits <= rest.len());
    let mut out = Vec::new();
    for (i, t) in seeds.iter().enumerate() {
        out.push(record(t, model, if i < seed_hits { AnswerVerdict::Correct } else { AnswerVerdict::Incorrect }));
    }
    for (i, t) in rest.iter().enumerate() {
        out.push(record(t, model, if i < aug_hits { AnswerVerdict::Correct } else { AnswerVerdict::Incorrect }));
    }
    out
}

#[test]
fn gpt5_row_gap_is_exact() {
    let tasks = paper_shaped_corpus();
    let group = |d: Domain, p: Protocol| -> Vec<&TaskInstance> {
        tasks.iter().filter(|t| t.domain == d && t.protocol == p).collect()
    };
    let mut recs = verdicts_for(&group(Domain::Symbolic, Protocol::P0), 145, 14, "GPT-5");
    recs.extend(verdicts_for(&group(Domain::Symbolic, Protocol::P1), 83, 14, "GPT-5"));
    recs.extend(verdicts_for(&group(Domain::Semantic, Protocol::P0), 183, 14, "GPT-5"));
    let lb = compute_leaderboard(&recs, &tasks, LeaderboardOptions::default()).unwrap();
    let row = lb.row("GPT-5").unwrap();
    assert_eq!(row.p0.percent(1), "41.3");
    assert_eq!(row.p1.percent(1), "23.6");
    assert_eq!(row.delta_s(), Exact::new(62, 351));
    assert_eq!(percent(&row.delta_s(), 1), "17.7");
    assert_eq!(row.delta_s() + row.p1.value().unwrap(), row.p0.value().unwrap());
    assert_eq!(row.sym.percent(1), "32.5");
    assert_eq!(row.sem.percent(1), "52.0");
    assert_eq!(row.total.percent(1), "39.0");
    assert_eq!(row.sym.total + row.sem.total, row.total.total);
    assert_eq!(row.seed.total + row.aug.total, row.total.total);
    assert_eq!(row.seed.total, 108);
    assert_eq!(row.seed.percent(1), "38.9");
    assert_eq!(row.aug.percent(1), "39.0");
}

#[test]
fn negative_gap_is_representable() {
    let tasks = paper_shaped_corpus();
    let sym = |p: Protocol| -> Vec<&TaskInstance> {
        tasks
            .iter()
            .filter(|t| t.domain == Domain::Symbolic && t.protocol == p)
            .collect()
    };
    let mut recs = verdicts_for(&sym(Protocol::P0), 59, 0, "Qwen3-14B");
    recs.extend(verdicts_for(&sym(Protocol::P1), 60, 0, "Qwen3-14B"));
    let lb = compute_leaderboard(&recs, &tasks, LeaderboardOptions::default()).unwrap();
    let row = &lb.rows[0];
    assert_eq!(row.delta_s(), Exact::new(-1, 351));
    assert_eq!(percent(&row.delta_s(), 1), "-0.3");
}

#[test]
fn all_correct_gives_unit_accuracies() {
    let tasks = paper_shaped_corpus();
    let recs: Vec<EvalRecord> = tasks.iter().map(|t| record(t, "m", AnswerVerdict::Correct)).collect();
    let lb = compute_leaderboard(&recs, &tasks, LeaderboardOptions::default()).unwrap();
    let r = &lb.rows[0];
    for rate in [r.total, r.sym, r.sem, r.p0, r.p1, r.seed, r.aug] {
        assert_eq!(rate.value(), Some(Exact::from_integer(1)));
    }
    assert_eq!(r.delta_s(), Exact::from_integer(0));
    assert_eq!(r.collapse.hits, 0);
    assert_eq!(r.total.total, 1054);
}

#[test]
fn orphans_duplicates_and_unjudged_records_are_errors() {
    let tasks = paper_shaped_corpus();
    let ghost = synthetic_task(9999, Domain::Semantic, Protocol::P0, 0, None);
    let err = compute_leaderboard(&[record(&ghost, "m", AnswerVerdict::Correct)], &tasks, Default::default());
    assert!(matches!(err, Err(JoinError::Orphan { .. })));
    let r = record(&tasks[0], "m", AnswerVerdict::Correct);
    let err = compute_leaderboard(&[r.clone(), r.clone()], &tasks, Default::default());
    assert!(matches!(err, Err(JoinError::Duplicate { .. })));
    let mut u = r;
    u.verdict = None;
    let err = compute_leaderboard(&[u], &tasks, Default::default());
    assert!(matches!(err, Err(JoinError::Unjudged { .. })));
}

#[test]
fn collapse_counts_unparseable_and_collapse_labels() {
    let tasks = paper_shaped_corpus();
    let mut recs = vec![
        record(&tasks[0], "m", AnswerVerdict::Unparseable),
        record(&tasks[1], "m", AnswerVerdict::Incorrect),
        record(&tasks[2], "m", AnswerVerdict::Incorrect),
        record(&tasks[3], "m", AnswerVerdict::Correct),
    ];
    recs[1].analyst = Some(OutcomeLabel {
        outcome_category: OutcomeCategory::ReasoningCollapse,
        reasoning_style: None,
        justification: String::new(),
        reasked: false,
        analyst_failed: false,
    });
    recs[2].analyst = Some(OutcomeLabel {
        outcome_category: OutcomeCategory::ProceduralError,
        ..recs[1].analyst.clone().unwrap()
    });
    let lb = compute_leaderboard(&recs, &tasks, Default::default()).unwrap();
    assert_eq!(lb.rows[0].collapse.percent(1), "50.0");
}

#[test]
fn noncommuting_pairs_are_left_out_of_the_gap() {
    let mut tasks = paper_shaped_corpus();
    // pair 0: original correct, mapped copy wrong, but the map did not commute
    tasks[1].phi_commutes = Some(false);
    let recs = vec![
        record(&tasks[0], "m", AnswerVerdict::Correct),
        record(&tasks[1], "m", AnswerVerdict::Incorrect),
        record(&tasks[2], "m", AnswerVerdict::Correct),
        record(&tasks[3], "m", AnswerVerdict::Correct),
    ];
    let lb = compute_leaderboard(&recs, &tasks, LeaderboardOptions::default()).unwrap();
    assert_eq!((lb.rows[0].p0.total, lb.rows[0].p1.total), (1, 1));
    assert_eq!(lb.rows[0].delta_s(), Exact::from_integer(0));
    let all = compute_leaderboard(&recs, &tasks, LeaderboardOptions { exclude_noncommuting: false }).unwrap();
    assert_eq!(all.rows[0].delta_s(), Exact::new(1, 2));
}

#[test]
fn leaderboard_is_deterministic_and_sorted() {
    let tasks = paper_shaped_corpus();
    let mut recs = Vec::new();
    for (i, t) in tasks.iter().enumerate().take(200) {
        recs.push(record(t, "weak", if i % 5 == 0 { AnswerVerdict::Correct } else { AnswerVerdict::Incorrect }));
        recs.push(record(t, "strong", if i % 2 == 0 { AnswerVerdict::Correct } else { AnswerVerdict::Incorrect }));
    }
    let a = compute_leaderboard(&recs, &tasks, Default::default()).unwrap();
    recs.reverse();
    let b = compute_leaderboard(&recs, &tasks, Default::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows[0].model, "strong");
    let (mut x, mut y) = (Vec::new(), Vec::new());
    a.write_table(&mut x, b',').unwrap();
    b.write_table(&mut y, b',').unwrap();
    assert_eq!(x, y);
    let text = String::from_utf8(x).unwrap();
    assert!(text.starts_with("model,total_acc,sym_acc"));
    assert!(a.render().contains("strong"));
}
