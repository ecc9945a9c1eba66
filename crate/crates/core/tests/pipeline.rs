mod common;

use std::fs;
use std::path::Path;
use std::sync::Mutex;

use faultloc::eval::{
    evaluate, localize, prepare_bug, sensitivity_sweep, BugCase, BugStatus, EvalError, PipelineConfig, Providers,
    RunOptions, Variant,
};
use faultloc::providers::{
    ChatProvider, ChatRequest, ChatResponse, MockChat, MockRule, PromptKind, RetryPolicy, Usage,
};
use faultloc::rerank::Provenance;
use faultloc::retrieval::Retriever;
use serde_json::json;

const QUERY: &str = "adding an item with a discount should reduce the cart total price";

const CART: &str = "package shop;

public class Cart {
    public void addItem(String name, double price) {
        items.put(name, price);
    }

    public double totalPrice() {
        double sum = 0;
        for (double p : items.values()) sum += p;
        return sum;
    }

    public double applyDiscount(double total, double rate) {
        return total * rate;
    }

    public int itemCount() {
        return items.size();
    }

    public void clear() {
        items.clear();
    }
}
";

const METHODS: [&str; 5] = ["addItem", "totalPrice", "applyDiscount", "itemCount", "clear"];

fn write_small_bug(dir: &Path) -> BugCase {
    fs::create_dir_all(dir.join("src/shop")).unwrap();
    fs::write(dir.join("src/shop/Cart.java"), CART).unwrap();
    let covered: Vec<_> = METHODS.iter().map(|m| json!({"class": "shop.Cart", "method": m})).collect();
    fs::write(
        dir.join("coverage.json"),
        json!({"bug_id": "CART-1", "covered": covered}).to_string(),
    )
    .unwrap();
    fs::write(
        dir.join("tests.json"),
        json!({"bug_id": "CART-1", "tests": [{
            "name": "shop.CartTest::testDiscount",
            "code": "@Test public void testDiscount() { assertEquals(90.0, cart.applyDiscount(100, 0.1), 1e-9); }",
            "stack_trace": "java.lang.AssertionError: expected:<90.0> but was:<10.0>\n\tat shop.CartTest.testDiscount(CartTest.java:9)",
        }]})
        .to_string(),
    )
    .unwrap();
    fs::write(
        dir.join("bug.json"),
        json!({
            "bug_id": "CART-1",
            "failing_tests": "tests.json",
            "coverage": "coverage.json",
            "coverage_format": "simple-json",
            "source_roots": ["src"],
            "ground_truth": [{"class_fqn": "shop.Cart", "method_name": "applyDiscount"}],
        })
        .to_string(),
    )
    .unwrap();
    BugCase::load(&dir.join("bug.json")).unwrap()
}

fn query_chat() -> MockChat {
    MockChat::new().with_rules([MockRule {
        kind: PromptKind::Extract,
        contains: "shop.CartTest".into(),
        response: QUERY.into(),
    }])
}

fn providers<'a>(chat: &'a dyn ChatProvider, embedder: &'a dyn faultloc::providers::EmbeddingProvider) -> Providers<'a> {
    let mut p = Providers::new(chat, embedder);
    p.retry = RetryPolicy::no_delay();
    p
}

/// Method names ordered by cosine to the query, computed with the oracle
/// encoder over the extracted source texts.
fn oracle_order(case: &BugCase) -> Vec<String> {
    let bug = prepare_bug(case).unwrap();
    let q = common::oracle_trigram_vector(QUERY, 64, common::SEED);
    let mut scored: Vec<(f64, String, String)> = bug
        .corpus
        .corpus
        .methods
        .iter()
        .map(|m| {
            let v = common::oracle_trigram_vector(&m.source_text, 64, common::SEED);
            (common::oracle_cosine(&q, &v), m.method_id.clone(), m.method_name.clone())
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    scored.into_iter().map(|s| s.2).collect()
}

#[test]
fn dense_order_follows_oracle_and_rerank_promotes_faulty() {
    let dir = tempfile::tempdir().unwrap();
    let case = write_small_bug(dir.path());
    let order = oracle_order(&case);
    let faulty_pos = order.iter().position(|m| m == "applyDiscount").unwrap() + 1;
    assert!(faulty_pos > 1, "oracle order {order:?}");

    let bug = prepare_bug(&case).unwrap();
    let embedder = common::embedder();
    let chat = query_chat();
    let config = PipelineConfig::default().with_variant(Variant::NoRerank);
    let out = localize(&bug, &config, &providers(&chat, &embedder)).unwrap();
    let dense: Vec<&str> = out.ranking.entries.iter().map(|e| e.method_name.as_str()).collect();
    assert_eq!(dense, order);
    assert_eq!(out.score.first_relevant_rank, Some(faulty_pos));
    assert!((out.score.reciprocal_rank - 1.0 / faulty_pos as f64).abs() < 1e-12);
    assert!(out.ranking.entries.iter().all(|e| e.provenance == Provenance::FallbackRetrieval));
    assert_eq!(out.query_text, QUERY);

    let chat = query_chat().with_rules([MockRule {
        kind: PromptKind::Rerank,
        contains: "class: shop.Cart".into(),
        response: r#"[{"class": "Cart", "method": "applyDiscount", "rank": 1}]"#.into(),
    }]);
    let out = localize(&bug, &PipelineConfig::default(), &providers(&chat, &embedder)).unwrap();
    assert_eq!(out.score.first_relevant_rank, Some(1));
    assert_eq!(out.ranking.entries[0].provenance, Provenance::Llm);
    assert_eq!(out.ranking.entries.len(), 5);
    assert_eq!(chat.calls(), 2);
    assert!(out.usage.input_tokens >= out.ranking.usage.input_tokens);
}

/// Records every prompt it answers.
struct Recording {
    inner: MockChat,
    prompts: Mutex<Vec<String>>,
}

impl ChatProvider for Recording {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn complete(&self, request: &ChatRequest) -> faultloc::providers::Result<ChatResponse> {
        self.prompts.lock().unwrap().push(request.prompt.clone());
        self.inner.complete(request)
    }
}

fn recording() -> Recording {
    Recording {
        inner: query_chat(),
        prompts: Mutex::new(Vec::new()),
    }
}

#[test]
fn variants_change_the_right_stage() {
    let dir = tempfile::tempdir().unwrap();
    let bug = prepare_bug(&write_small_bug(dir.path())).unwrap();
    let embedder = common::embedder();

    let chat = recording();
    let out = localize(&bug, &PipelineConfig::default().with_variant(Variant::NoStackTrace), &providers(&chat, &embedder)).unwrap();
    let prompts = chat.prompts.lock().unwrap().clone();
    assert!(!prompts[0].contains("Stack trace:"));
    assert!(prompts[0].contains("Test code: @Test public void testDiscount()"));
    assert_eq!(out.query_text, QUERY);

    let chat = recording();
    let out = localize(&bug, &PipelineConfig::default().with_variant(Variant::NoQuery), &providers(&chat, &embedder)).unwrap();
    let prompts = chat.prompts.lock().unwrap().clone();
    assert_eq!(prompts.len(), 1, "no extraction call expected");
    assert!(out.query_text.contains("testDiscount") && out.query_text.contains("AssertionError"));
    assert!(prompts[0].starts_with(&format!("Bug description:\n{}", out.query_text)));

    let chat = recording();
    let out = localize(&bug, &PipelineConfig::default().with_variant(Variant::Bm25), &providers(&chat, &embedder)).unwrap();
    assert_eq!(out.retriever, Retriever::Bm25);
    assert_eq!(chat.prompts.lock().unwrap().len(), 2);

    let chat = recording();
    let out = localize(&bug, &PipelineConfig::default().with_variant(Variant::NoRerank), &providers(&chat, &embedder)).unwrap();
    assert_eq!(chat.prompts.lock().unwrap().len(), 1);
    assert_eq!(out.ranking.usage, Usage::default());
}

#[test]
fn depth_bounds_candidates_and_final_size_bounds_output() {
    let dir = tempfile::tempdir().unwrap();
    let bugset = common::write_bugset(dir.path(), 6);
    let deep = bugset.cases().into_iter().find(|c| c.bug_id == common::bug_id(common::DEEP_BUG)).unwrap();
    let bug = prepare_bug(&deep).unwrap();
    let n = bug.corpus.corpus.len();
    assert!(n >= 20, "deep fixture has {n} methods");
    let chat = bugset.chat();
    let embedder = common::embedder();

    let out = localize(&bug, &PipelineConfig::default(), &providers(&chat, &embedder)).unwrap();
    assert_eq!(out.retrieval.len(), 40.min(n));
    assert_eq!(out.ranking.entries.len(), 10);

    let cases: Vec<BugCase> = bugset.cases().into_iter().filter(|c| c.bug_id == "FX-00").collect();
    let small = prepare_bug(&cases[0]).unwrap();
    let m = small.corpus.corpus.len();
    assert!(m < 40);
    let out = localize(&small, &PipelineConfig::default(), &providers(&chat, &embedder)).unwrap();
    assert_eq!(out.retrieval.len(), m);

    let config = PipelineConfig {
        retrieval_k: 10,
        ..PipelineConfig::default()
    };
    let out = localize(&bug, &config, &providers(&chat, &embedder)).unwrap();
    assert_eq!(out.retrieval.len(), 10);
    assert_eq!(out.ranking.entries.len(), 10);
}

#[test]
fn sweep_is_deterministic_and_reuses_the_query() {
    let dir = tempfile::tempdir().unwrap();
    let bugset = common::write_bugset(dir.path(), 10);
    let cases = bugset.cases();
    let embedder = common::embedder();
    let run = || {
        let chat = bugset.chat();
        let reports =
            sensitivity_sweep(&cases, &PipelineConfig::default(), &[20, 40, 60], &providers(&chat, &embedder), &RunOptions::default())
                .unwrap();
        (reports, chat.calls())
    };
    let (a, calls) = run();
    let (b, _) = run();
    assert_eq!(a, b);
    // one extraction per bug, one rerank per bug and depth
    assert_eq!(calls, 10 + 3 * 10 + 2 * 3);
    let tops: Vec<usize> = a.iter().map(|r| r.summary.top(1)).collect();
    assert_eq!(tops, [7, 8, 8]);
    for r in &a {
        for o in &r.outcomes {
            assert_eq!(o.retrieval_k, r.retrieval_k);
            assert!(o.retrieval.len() <= r.retrieval_k);
        }
    }
}

#[test]
fn failed_bug_is_recorded_and_excluded() {
    let dir = tempfile::tempdir().unwrap();
    let bugset = common::write_bugset(dir.path(), 3);
    let mut cases = bugset.cases();
    cases[1].coverage = dir.path().join("missing-coverage.json");
    let chat = bugset.chat();
    let embedder = common::embedder();
    let out_dir = dir.path().join("out");
    let report = evaluate(
        &cases,
        &PipelineConfig::default(),
        &providers(&chat, &embedder),
        &RunOptions {
            workers: 2,
            out_dir: Some(out_dir.clone()),
            config_echo: None,
        },
    )
    .unwrap();
    assert_eq!(report.summary.n_bugs, 2);
    assert_eq!(report.failed(), 1);
    let failed = &report.bugs[1];
    assert_eq!(failed.status, BugStatus::Failed);
    assert!(failed.error.as_deref().unwrap().contains("missing-coverage.json"));

    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["n_bugs"], 3);
    assert_eq!(manifest["n_failed"], 1);
    let ranking = fs::read_to_string(out_dir.join("bugs/FX-00/ranking.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = ranking.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!lines.is_empty() && lines.len() <= 10);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["rank"], i + 1);
        assert_eq!(l["bug_id"], "FX-00");
        for key in ["class", "method", "method_id", "provenance"] {
            assert!(l.get(key).is_some(), "missing {key}");
        }
    }
    let retrieval = fs::read_to_string(out_dir.join("bugs/FX-00/retrieval.jsonl")).unwrap();
    assert_eq!(retrieval.lines().count(), report.outcomes[0].retrieval.len());
    assert!(!out_dir.join("bugs/FX-01").exists());
}

#[test]
fn duplicate_bug_ids_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bugset = common::write_bugset(dir.path(), 2);
    let mut cases = bugset.cases();
    cases[1].bug_id = cases[0].bug_id.clone();
    let chat = bugset.chat();
    let embedder = common::embedder();
    let err = evaluate(&cases, &PipelineConfig::default(), &providers(&chat, &embedder), &RunOptions::default()).unwrap_err();
    assert!(matches!(err, EvalError::InvalidConfig(_)));
}

#[test]
fn embedding_model_pin_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let bug = prepare_bug(&write_small_bug(dir.path())).unwrap();
    let chat = query_chat();
    let embedder = common::embedder();
    let pinned = PipelineConfig {
        embedding_model: "some-other-encoder".into(),
        ..PipelineConfig::default()
    };
    assert!(localize(&bug, &pinned, &providers(&chat, &embedder)).is_err());
    let matching = PipelineConfig {
        embedding_model: "mock-trigram-64".into(),
        ..PipelineConfig::default()
    };
    assert!(localize(&bug, &matching, &providers(&chat, &embedder)).is_ok());
}
