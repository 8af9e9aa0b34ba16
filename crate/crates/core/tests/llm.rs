use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use cyclebench::llm::ledger::ModelPrice;
use cyclebench::llm::provider::HttpProvider;
use cyclebench::llm::{
    render_prompt, Bindings, CallContext, Gateway, GatewayError, MockScript, PricingTable, ProviderError, Role,
    RoleConfig, ScriptEntry, Stage, TemplateId, Usd,
};

fn usd(s: &str) -> Usd {
    s.parse().unwrap()
}

fn pricing() -> PricingTable {
    let mut t = PricingTable::default();
    t.models.insert(
        "m".into(),
        ModelPrice {
            input_per_mtok: usd("2"),
            output_per_mtok: usd("10"),
        },
    );
    t
}

fn judge_prompt() -> cyclebench::llm::RenderedPrompt {
    let b: Bindings = [("rule_description", "reverse"), ("inverse_rule_description", "reverse")]
        .into_iter()
        .map(|(k, v)| (k, v.to_string()))
        .collect();
    render_prompt(TemplateId::JudgeRule, &b).unwrap()
}

/// Serves one canned (status, body) per connection and records request bodies.
fn fake_server(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(String::from_utf8(buf).unwrap());
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (format!("http://{addr}"), seen)
}

fn ok_body(text: &str, pt: u64, ct: u64) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": pt, "completion_tokens": ct}
    })
    .to_string()
}

#[test]
fn http_retries_rate_limits_then_bills_once() {
    let (url, seen) = fake_server(vec![
        (429, "{\"error\":\"slow down\"}".into()),
        (429, "{\"error\":\"slow down\"}".into()),
        (200, ok_body("{\"is_valid\": true, \"reasoning\": \"ok\"}", 30_000, 13_000)),
    ]);
    let gw = Gateway::new(
        Box::new(HttpProvider::new(url, Some("k".into()), Duration::from_secs(5))),
        pricing(),
    )
    .with_backoff_base(Duration::from_millis(20));
    let start = Instant::now();
    let resp = gw
        .complete(
            &RoleConfig::new(Role::JudgeRule, "m"),
            judge_prompt(),
            &CallContext::new(Stage::Seed, "t1"),
        )
        .unwrap();
    // 20ms + 40ms of backoff
    assert!(start.elapsed() >= Duration::from_millis(60));
    assert!(resp.text.contains("is_valid"));
    assert_eq!(gw.attempts(), 3);
    let records = gw.ledger().records();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].usd_cost, usd("0.19"));

    let bodies = seen.lock().unwrap();
    assert_eq!(bodies.len(), 3);
    let body: serde_json::Value = serde_json::from_str(&bodies[2]).unwrap();
    assert_eq!(body["model"], "m");
    assert_eq!(body["temperature"], 0.1);
    assert_eq!(body["messages"][0]["role"], "system");
    assert!(body["messages"][1]["content"].as_str().unwrap().contains("Forward: `reverse`"));
}

#[test]
fn http_auth_failure_is_a_config_error() {
    let (url, _) = fake_server(vec![(401, "{}".into())]);
    let gw = Gateway::new(Box::new(HttpProvider::new(url, None, Duration::from_secs(5))), pricing())
        .with_backoff_base(Duration::from_millis(1));
    let err = gw
        .complete(
            &RoleConfig::new(Role::JudgeRule, "m"),
            judge_prompt(),
            &CallContext::new(Stage::Seed, "t1"),
        )
        .unwrap_err();
    assert!(matches!(err, GatewayError::Config(_)));
    assert_eq!(gw.attempts(), 1);
    assert!(gw.ledger().records().is_empty());
}

#[test]
fn retries_are_bounded() {
    let mut script = MockScript::default();
    for _ in 0..10 {
        script.push(Role::JudgeRule, ScriptEntry::failure(503));
    }
    let gw = Gateway::mock(script, pricing()).with_backoff_base(Duration::from_millis(1));
    let err = gw
        .complete(
            &RoleConfig::new(Role::JudgeRule, "m"),
            judge_prompt(),
            &CallContext::new(Stage::Seed, "t"),
        )
        .unwrap_err();
    match err {
        GatewayError::Provider { attempts, last } => {
            assert_eq!(attempts, 4);
            assert!(matches!(last, ProviderError::Transient { status: Some(503), .. }));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn call_budget_stops_requests() {
    let mut script = MockScript::default();
    script.fallback.insert(Role::Solver, ScriptEntry::text("x"));
    let gw = Gateway::mock(script, pricing()).with_call_budget(2);
    let cfg = RoleConfig::new(Role::Solver, "m");
    let ctx = CallContext::new(Stage::Evaluation, "t");
    assert!(gw.complete(&cfg, judge_prompt(), &ctx).is_ok());
    assert!(gw.complete(&cfg, judge_prompt(), &ctx).is_ok());
    assert_eq!(
        gw.complete(&cfg, judge_prompt(), &ctx).unwrap_err(),
        GatewayError::BudgetExhausted
    );
}

#[test]
fn mock_replays_per_role_in_order() {
    let script: MockScript = serde_json::from_str(
        r#"{"replies": {"JudgeRule": ["first", {"text": "second", "prompt_tokens": 1000, "completion_tokens": 300}]},
            "fallback": {"JudgeRule": "rest"}}"#,
    )
    .unwrap();
    let run = || {
        let gw = Gateway::mock(script.clone(), pricing());
        let cfg = RoleConfig::new(Role::JudgeRule, "m");
        let ctx = CallContext::new(Stage::Expansion, "t");
        let texts: Vec<String> = (0..4)
            .map(|_| gw.complete(&cfg, judge_prompt(), &ctx).unwrap().text)
            .collect();
        (texts, gw.ledger().records())
    };
    let (texts, records) = run();
    assert_eq!(texts, ["first", "second", "rest", "rest"]);
    assert_eq!(records[1].usd_cost, usd("0.005"));
    assert_eq!(run(), (texts, records));
}

#[test]
fn generation_cost_table_arithmetic() {
    let gw = Gateway::mock(MockScript::default(), pricing());
    let ledger = gw.ledger();
    let price = gw.pricing();
    for i in 0..72 {
        let ctx = CallContext::new(Stage::Seed, format!("seed-{i}"));
        ledger.record(Role::AuthorCode, "m", &ctx, 30_000, 13_000, price.cost("m", 30_000, 13_000));
    }
    for i in 0..631 {
        let ctx = CallContext::new(Stage::Expansion, format!("var-{i}"));
        ledger.record(Role::Expander, "m", &ctx, 1_000, 300, price.cost("m", 1_000, 300));
    }
    let seed = ledger.stage_summary(Stage::Seed);
    let exp = ledger.stage_summary(Stage::Expansion);
    assert_eq!(seed.per_task, usd("0.19"));
    assert_eq!(seed.total, usd("13.68"));
    assert_eq!(exp.per_task, usd("0.005"));
    assert_eq!(exp.total.display(2), "3.16");
    assert_eq!(ledger.total(), usd("16.835"));
    assert_eq!(ledger.average_over(1054).display(3), "0.016");
}

#[test]
fn cancel_flag_stops_new_requests() {
    let mut script = MockScript::default();
    script.fallback.insert(Role::JudgeAnswer, ScriptEntry::text("ok"));
    let flag = Arc::new(std::sync::atomic::AtomicBool::new(false));
    let gw = Gateway::mock(script, pricing()).with_cancel(flag.clone());
    let cfg = RoleConfig::new(Role::JudgeAnswer, "m");
    let ctx = CallContext::new(Stage::Evaluation, "t");
    assert!(gw.complete(&cfg, judge_prompt(), &ctx).is_ok());
    flag.store(true, std::sync::atomic::Ordering::SeqCst);
    assert_eq!(gw.complete(&cfg, judge_prompt(), &ctx), Err(GatewayError::BudgetExhausted));
    assert_eq!(gw.attempts(), 1);
}
