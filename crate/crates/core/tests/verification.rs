use cyclebench::golden::{
    COPRIME_STRIDE_PERMUTATION, ERASE_ALL, FLAWED_BRACKET_ROTATION, IDENTITY, INTERLEAVE_HALVES,
    LAST_DIGIT, LISTINGS, RANDOM_CHOICE,
};
use cyclebench::remap::{alphabet_of, apply_mapping, build_default_mapping};
use cyclebench::runtime::{Limits, RunnerCommand, RunnerPool};
use cyclebench::task::{RuleOrigin, RuleSpec};
use cyclebench::value::Value;
use cyclebench::verification::{
    check_cycle, derive_outputs, forward_is_injective, fuzz_cycle, read_report, recheck_task,
    verify_rule, write_report, DerivationError, GateOptions, Rejection, TrivialKind, Verdict,
};

fn pool() -> RunnerPool {
    RunnerPool::start(2, Limits::default(), RunnerCommand::reference()).unwrap()
}

fn toks(s: &str) -> Value {
    Value::tokens(s.chars().map(|c| c.to_string()))
}

fn rule(source: &str, inputs: Vec<Value>) -> RuleSpec {
    RuleSpec {
        rule_description: "test rule".into(),
        inverse_rule_description: "test inverse".into(),
        source: source.into(),
        input_set: inputs,
        origin: RuleOrigin::Imported,
    }
}

#[test]
fn derivation_reproduces_every_published_listing() {
    let p = pool();
    for g in LISTINGS {
        let task = g.task().unwrap();
        let r = task.rule.clone().unwrap();
        let d = derive_outputs(&r, &p).unwrap_or_else(|e| panic!("{}: {e}", g.name));
        assert_eq!(d.query, task.query, "{}", g.name);
        assert_eq!(d.answer, task.answer, "{}", g.name);
        for pair in &task.examples {
            let got = d.all_pairs().into_iter().find(|p| p.input == pair.input).unwrap();
            assert_eq!(got.output, pair.output, "{}: f({})", g.name, pair.input);
        }
    }
}

#[test]
fn interleaving_listing_answer() {
    let p = pool();
    let r = INTERLEAVE_HALVES.task().unwrap().rule.unwrap();
    let d = derive_outputs(&r, &p).unwrap();
    assert_eq!(d.answer, Value::tokens(["o", "p", "n", "y", "3", "t", "h"]));
}

#[test]
fn identity_outputs_equal_inputs() {
    let p = pool();
    let inputs = vec![toks("ab"), Value::seq([]), Value::int(5)];
    let d = derive_outputs(&rule(IDENTITY.source, inputs.clone()), &p).unwrap();
    for pair in d.all_pairs() {
        assert_eq!(pair.input, pair.output);
    }
}

#[test]
fn coprime_stride_moves_index_one_to_three_for_fourteen() {
    let p = pool();
    let x = Value::tokens((0..14).map(|i| i.to_string()));
    let d = derive_outputs(&rule(COPRIME_STRIDE_PERMUTATION.source, vec![toks("abc"), x]), &p).unwrap();
    let Value::Sequence(out) = d.answer else { panic!() };
    assert_eq!(out[3], Value::token("1"));
}

#[test]
fn derivation_needs_two_inputs_and_reports_failures() {
    let p = pool();
    let err = derive_outputs(&rule(IDENTITY.source, vec![toks("a")]), &p).unwrap_err();
    assert_eq!(err, DerivationError::TooFewInputs(1));

    let src = "def transform_grid(g):\n    return g[5]\n";
    let err = derive_outputs(&rule(src, vec![toks("abcdefg"), toks("ab")]), &p).unwrap_err();
    match err {
        DerivationError::Failed { input, .. } => assert_eq!(input, toks("ab")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn interleaving_cycle_passes_and_is_injective() {
    let p = pool();
    let inputs = vec![Value::seq([]), toks("x"), toks("abcd"), toks("abcde")];
    let r = rule(INTERLEAVE_HALVES.source, inputs);
    let report = check_cycle(&r, &p).unwrap();
    assert!(report.all_pass);
    assert!(!report.nondeterministic);
    assert!(report.first_counterexample.is_none());
    assert!(forward_is_injective(&report));

    // derivation and the cycle check agree byte for byte on f(x)
    let d = derive_outputs(&r, &p).unwrap();
    for (case, pair) in report.per_input.iter().zip(d.all_pairs()) {
        assert_eq!(
            case.forward.as_ref().unwrap().canonical(),
            pair.output.canonical()
        );
    }
}

#[test]
fn flawed_pair_fails_with_counterexample() {
    let p = pool();
    let inputs = vec![Value::token("<abcd>"), Value::token("x<ab>y"), Value::token("<a>")];
    let report = check_cycle(&rule(FLAWED_BRACKET_ROTATION.source, inputs), &p).unwrap();
    assert!(!report.all_pass);
    let (x, fx, gfx) = report.first_counterexample.unwrap();
    assert_eq!(x, Value::token("<abcd>"));
    assert_eq!(fx, Value::token("{4abcd}"));
    assert_ne!(gfx, x);
}

#[test]
fn random_choice_is_caught_as_nondeterministic() {
    let p = pool();
    let inputs = (0..20).map(|i| Value::int(i * 10)).collect();
    let r = rule(RANDOM_CHOICE.source, inputs);
    let report = check_cycle(&r, &p).unwrap();
    assert!(report.nondeterministic);
    assert!(!report.all_pass);

    let (gate, derived) = verify_rule(&r, &p, GateOptions::default()).unwrap();
    assert!(derived.is_none());
    assert_eq!(gate.verdict, Verdict::Rejected(Rejection::NonDeterministic));
}

#[test]
fn execution_failures_are_recorded_per_input() {
    let p = pool();
    let src = "\
def transform_grid(g):
    if len(g) > 2:
        raise ValueError('too long')
    return g

def inverse_transform_grid(g):
    return g
";
    let report = check_cycle(&rule(src, vec![toks("ab"), toks("abc")]), &p).unwrap();
    assert!(!report.all_pass);
    assert!(report.per_input[0].pass);
    let bad = &report.per_input[1];
    assert!(!bad.pass);
    assert!(bad.forward.is_none());
    assert!(bad.reason.as_ref().unwrap().contains("RaisedError"));
}

#[test]
fn gate_verdicts() {
    let p = pool();
    let opts = GateOptions::default();

    let (r, d) = verify_rule(&INTERLEAVE_HALVES.task().unwrap().rule.unwrap(), &p, opts).unwrap();
    assert!(r.admitted());
    assert!(d.is_some());

    let inputs = vec![toks("ab"), toks("abc"), toks("")];
    let (r, _) = verify_rule(&rule(IDENTITY.source, inputs.clone()), &p, opts).unwrap();
    assert_eq!(r.verdict, Verdict::Rejected(Rejection::Trivial { kind: TrivialKind::Identity }));

    // erasing everything cannot be inverted, so the cycle check rejects it
    // before the triviality filter is reached
    let (r, _) = verify_rule(&rule(ERASE_ALL.source, inputs.clone()), &p, opts).unwrap();
    assert!(matches!(r.verdict, Verdict::Rejected(Rejection::CycleFailed { .. })));

    let (r, _) = verify_rule(&rule(LAST_DIGIT.source, vec![Value::int(12), Value::int(7)]), &p, opts).unwrap();
    assert_eq!(
        r.verdict,
        Verdict::Rejected(Rejection::MissingEntryPoints {
            missing: vec!["inverse_transform_grid".into()]
        })
    );

    let (r, _) = verify_rule(&rule(FLAWED_BRACKET_ROTATION.source, vec![Value::token("<abcd>"), Value::token("<a>")]), &p, opts).unwrap();
    assert!(matches!(r.verdict, Verdict::Rejected(Rejection::CycleFailed { failures: 1, .. })));
}

#[test]
fn every_listing_rule_is_admitted() {
    let p = pool();
    for g in LISTINGS {
        let r = g.task().unwrap().rule.unwrap();
        let (report, _) = verify_rule(&r, &p, GateOptions::default()).unwrap();
        assert!(report.admitted(), "{}: {:?}", g.name, report.verdict);
        assert!(forward_is_injective(report.cycle.as_ref().unwrap()));
    }
}

#[test]
fn fuzzing_only_warns() {
    let p = pool();
    // correct for length four and below, wrong beyond
    let src = "\
def transform_grid(g):
    return list(reversed(g))

def inverse_transform_grid(g):
    return list(reversed(g)) if len(g) <= 4 else list(g)
";
    let r = rule(src, vec![toks("abcd"), toks("wxyz"), toks("pqrs")]);
    let warnings = fuzz_cycle(&r, &p, 40, 7).unwrap();
    assert!(!warnings.is_empty());
    let (report, derived) = verify_rule(&r, &p, GateOptions { fuzz: 40, fuzz_seed: 7 }).unwrap();
    assert!(report.admitted());
    assert!(derived.is_some());
    assert_eq!(report.fuzz_warnings, warnings);

    let ok = rule(INTERLEAVE_HALVES.source, vec![toks("abcd"), toks("abcdefg")]);
    assert!(fuzz_cycle(&ok, &p, 30, 1).unwrap().is_empty());
}

#[test]
fn reports_round_trip_through_files() {
    let p = pool();
    let dir = tempfile::tempdir().unwrap();
    let r = rule(FLAWED_BRACKET_ROTATION.source, vec![Value::token("<abcd>"), Value::token("<a>")]);
    let (report, _) = verify_rule(&r, &p, GateOptions::default()).unwrap();
    let path = write_report(dir.path(), &report).unwrap();
    assert!(path.ends_with(format!("{}.json", r.rule_id())));
    assert_eq!(read_report(&path).unwrap(), report);
}

#[test]
fn stored_tasks_recheck_against_their_rules() {
    let p = pool();
    for g in LISTINGS {
        let task = g.task().unwrap();
        let check = recheck_task(&task, None, &p).unwrap();
        assert!(check.passed, "{}: {:?}", g.name, check.problems);
    }
    let mut tampered = INTERLEAVE_HALVES.task().unwrap();
    tampered.answer = toks("xyz");
    let check = recheck_task(&tampered, None, &p).unwrap();
    assert!(!check.passed);
    assert_eq!(check.problems, ["stored answer differs from f(query)"]);
}

#[test]
fn remapped_tasks_recheck_through_the_inverse_map() {
    let p = pool();
    let task = INTERLEAVE_HALVES.task().unwrap();
    let map = build_default_mapping(&alphabet_of(&task), 7).unwrap();
    let p1 = apply_mapping(&task, &map).unwrap();
    assert!(recheck_task(&p1, Some(&map), &p).unwrap().passed);
    let missing = recheck_task(&p1, None, &p).unwrap();
    assert!(!missing.passed);
    assert!(missing.problems[0].contains("not found"), "{:?}", missing.problems);
}
