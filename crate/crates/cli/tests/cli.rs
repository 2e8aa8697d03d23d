use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

const QUESTION: &str = "According to the flowchart, what effect do advisor attrition and pricing pressure lead to?";

fn deck() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/deck")
}

fn script(name: &str) -> PathBuf {
    deck().join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deckagent"))
        .args(args)
        .env_remove("DECKAGENT_API_BASE")
        .env_remove("DECKAGENT_CONFIG")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Ingests and builds the fixture deck under `root`; returns (doc, kb).
fn built_deck(root: &Path) -> (PathBuf, PathBuf) {
    let doc = root.join("doc");
    let kb = root.join("kbs/cause-effect-deck");
    assert_eq!(code(&run(&["ingest", s(&deck()), s(&doc)])), 0);
    let o = run(&["--script", s(&script("build.json")), "build", s(&doc), s(&kb)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    (doc, kb)
}

#[test]
fn ingest_reports_merge_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["ingest", s(&deck()), s(&tmp.path().join("doc"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("merged 26 → 19 elements"), "{}", stdout(&o));
    assert!(tmp.path().join("doc/elements.json").is_file());
}

#[test]
fn ingest_without_manifest_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["ingest", s(tmp.path()), s(&tmp.path().join("out"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("manifest"));
}

#[test]
fn zero_tau_keeps_separate_boxes() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in");
    std::fs::create_dir_all(&input).unwrap();
    std::fs::copy(deck().join("page-1.png"), input.join("page-1.png")).unwrap();
    std::fs::write(
        input.join("manifest.json"),
        json!({"doc_id": "sep", "pages": [{"index": 1, "raster": "page-1.png", "width": 480, "height": 270}]})
            .to_string(),
    )
    .unwrap();
    let elements: Vec<Value> = (0..3)
        .map(|i| {
            json!({"element_id": format!("e{i}"), "page_index": 1, "type": "text",
                   "bbox": [10, 10 + 12 * i, 100, 20 + 12 * i], "text": format!("line {i}")})
        })
        .collect();
    std::fs::write(input.join("elements.json"), Value::Array(elements).to_string()).unwrap();
    let o = run(&["--tau", "0", "ingest", s(&input), s(&tmp.path().join("out"))]);
    assert!(stdout(&o).contains("merged 3 → 3 elements"), "{}", stdout(&o));
    let o = run(&["ingest", s(&input), s(&tmp.path().join("out2"))]);
    assert!(stdout(&o).contains("merged 3 → 1 elements"), "{}", stdout(&o));
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("deckagent.toml");
    std::fs::write(&cfg, "[retrieval]\ntau = 0\n").unwrap();
    let o = run(&["--config", s(&cfg), "ingest", s(&deck()), s(&tmp.path().join("a"))]);
    assert!(stdout(&o).contains("tau 0"), "{}", stdout(&o));
    let o = run(&["--config", s(&cfg), "--tau", "15", "ingest", s(&deck()), s(&tmp.path().join("b"))]);
    assert!(stdout(&o).contains("merged 26 → 19 elements"), "{}", stdout(&o));
}

#[test]
fn invalid_settings_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["--tau", "-1", "ingest", s(&deck()), s(&tmp.path().join("x"))])), 2);
    assert_eq!(code(&run(&["--k-pages", "0", "ingest", s(&deck()), s(&tmp.path().join("x"))])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
}

#[test]
fn build_needs_a_document() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["--script", s(&script("build.json")), "build", s(&tmp.path().join("nope")), s(tmp.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn build_without_backend_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["build", s(&deck()), s(&tmp.path().join("kb"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no backend configured"));
}

#[test]
fn interrupted_build_resumes_with_page_one_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let doc = tmp.path().join("doc");
    let kb = tmp.path().join("kb");
    assert_eq!(code(&run(&["ingest", s(&deck()), s(&doc)])), 0);

    let mut failing: Value = serde_json::from_str(&std::fs::read_to_string(script("build.json")).unwrap()).unwrap();
    failing["chat"]
        .as_array_mut()
        .unwrap()
        .insert(0, json!({"match": "Task: page knowledge for page 3 of", "error": "rate limited"}));
    let failing_path = tmp.path().join("failing.json");
    std::fs::write(&failing_path, failing.to_string()).unwrap();

    let o = run(&["--script", s(&failing_path), "build", s(&doc), s(&kb)]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("--resume"));
    let page1 = std::fs::read(kb.join("pages/1.json")).unwrap();
    assert!(!kb.join("pages/3.json").exists());

    let o = run(&["--script", s(&script("build.json")), "build", "--resume", s(&doc), s(&kb)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read(kb.join("pages/1.json")).unwrap(), page1);
    assert!(kb.join("pages/4.json").is_file());
}

#[test]
fn query_answers_the_fixture_question() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, kb) = built_deck(tmp.path());
    let q = script("query.json");
    let o = run(&["--script", s(&q), "--k-pages", "1", "--k-elements", "1", "query", s(&kb), QUESTION, "--trace"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("Answer: Business under-performance"), "{out}");
    assert!(out.contains("Pages: 4"));
    assert!(out.contains("Elements: p4-e2"));
    assert!(stderr(&o).contains("trace: "));
    assert_eq!(std::fs::read_dir(kb.join("traces")).unwrap().count(), 1);

    let again = run(&["--script", s(&q), "--k-pages", "1", "--k-elements", "1", "query", s(&kb), QUESTION]);
    assert_eq!(stdout(&again), out);

    let o = run(&["--script", s(&q), "query", s(&kb), QUESTION, "--json", "--gt-pages", "4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["answer"], "Business under-performance");
    assert_eq!(v["mode"], "synthesized");
}

#[test]
fn query_unknown_kb_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["--script", s(&script("query.json")), "query", s(&tmp.path().join("missing")), QUESTION]);
    assert_eq!(code(&o), 2);
}

#[test]
fn backend_outage_exits_3_with_partial_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, kb) = built_deck(tmp.path());
    let outage = tmp.path().join("outage.json");
    std::fs::write(
        &outage,
        json!({"chat": [
            {"match": "Task: classify query", "response": "FactDirect"},
            {"match": "Task: generate subqueries", "response": "flowchart"},
            {"match": "answer", "error": "service unavailable"}
        ]})
        .to_string(),
    )
    .unwrap();
    let o = run(&["--script", s(&outage), "query", s(&kb), QUESTION]);
    assert_eq!(code(&o), 3);
    let err = stderr(&o);
    let line = err.lines().find(|l| l.starts_with("partial trace: ")).expect("trace path printed");
    assert!(Path::new(line.trim_start_matches("partial trace: ")).is_file());
}

fn write_dataset(path: &Path, rows: &[Value]) {
    let text: Vec<String> = rows.iter().map(Value::to_string).collect();
    std::fs::write(path, text.join("\n")).unwrap();
}

#[test]
fn eval_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, kb) = built_deck(tmp.path());
    let kbs = kb.parent().unwrap();
    let rows: Vec<Value> = (0..10)
        .map(|i| {
            let answer = if i % 3 == 0 { "42".to_string() } else { "Business under-performance".to_string() };
            json!({"doc_id": "cause-effect-deck", "question": format!("{QUESTION} ({i})"), "answer": answer, "gt_pages": [4]})
        })
        .collect();
    let dataset = tmp.path().join("qa.jsonl");
    write_dataset(&dataset, &rows);
    let report = tmp.path().join("reports/eval.json");
    let o = run(&[
        "--script",
        s(&script("query.json")),
        "--kb-dir",
        s(kbs),
        "eval",
        s(&dataset),
        "--threads",
        "4",
        "--out",
        s(&report),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    for metric in ["Overall", "Num", "F1"] {
        assert!(out.contains(metric), "{out}");
    }
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["records"].as_array().unwrap().len(), 10);
    assert!(report.with_extension("txt").is_file());

    let correct: Vec<Value> = (0..10)
        .map(|i| json!({"doc_id": "cause-effect-deck", "question": format!("{QUESTION} [{i}]"), "answer": "Business under-performance"}))
        .collect();
    write_dataset(&dataset, &correct);
    let o = run(&["--script", s(&script("query.json")), "--kb-dir", s(kbs), "eval", s(&dataset), "--out", s(&report)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["summary"]["overall"].as_f64(), Some(100.0), "{}", v["summary"]);
}

#[test]
fn eval_rejects_empty_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = tmp.path().join("empty.jsonl");
    std::fs::write(&dataset, "\n").unwrap();
    let o = run(&["--script", s(&script("query.json")), "--kb-dir", s(tmp.path()), "eval", s(&dataset)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn rank_eval_knowledge_mode_is_not_worse() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, kb) = built_deck(tmp.path());
    let dataset = tmp.path().join("rank.jsonl");
    write_dataset(
        &dataset,
        &[
            json!({"doc_id": "cause-effect-deck", "question": QUESTION, "answer": "Business under-performance", "gt_pages": [4]}),
            json!({"doc_id": "cause-effect-deck", "question": "What does the flowchart show?", "answer": "x", "gt_pages": [4]}),
        ],
    );
    let report = tmp.path().join("rank.json");
    let o = run(&[
        "--script",
        s(&script("query.json")),
        "--kb-dir",
        s(kb.parent().unwrap()),
        "rank-eval",
        s(&dataset),
        "--retrievers",
        "bm25",
        "--out",
        s(&report),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let mrr = |mode: &str, subq: bool| -> f64 {
        v["cells"]
            .as_array()
            .unwrap()
            .iter()
            .find(|c| c["setting"]["mode"] == mode && c["setting"]["subqueries"] == subq)
            .unwrap()["summary"]["mrr"]
            .as_f64()
            .unwrap()
    };
    assert!(mrr("knowledge", false) >= mrr("ocr", false));
    assert!(mrr("knowledge", true) >= mrr("ocr", true));
}
