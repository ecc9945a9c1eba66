#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use faultloc::corpus::MethodRecord;
use faultloc::eval::{load_bugset, prepare_bug, BugCase};
use faultloc::providers::{MockChat, MockEmbedder, MockRule, PromptKind};
use serde_json::json;

pub const SEED: u64 = 7;

/// Themed class per fixture bug: (class, decoy method, faulty method).
const THEMES: [(&str, &str, &str); 10] = [
    ("Ledger", "averageBalance", "totalAbove"),
    ("Calendar", "meanGap", "countLateDays"),
    ("Cart", "averagePrice", "discountedTotal"),
    ("Tokenizer", "meanTokenLength", "countLongTokens"),
    ("Matrix", "averageCell", "traceAbove"),
    ("Inventory", "averageStock", "restockNeeded"),
    ("Router", "meanHops", "routesOver"),
    ("Cache", "averageAge", "evictOlderThan"),
    ("Parser", "meanDepth", "nestedBeyond"),
    ("Encoder", "averageWidth", "paddedLength"),
];

/// Bug 5 is padded with decoy look-alikes so its faulty method ranks below 20.
pub const DEEP_BUG: usize = 5;
const DEEP_FILLERS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Behaviour {
    /// Query points at the decoy, the rerank reply names the faulty method first.
    RerankRescues,
    /// Query is the faulty method itself; the rerank reply echoes retrieval order.
    QueryHits,
    /// Query points at the decoy and the rerank reply has no JSON.
    RerankProse,
}

pub fn behaviour(i: usize) -> Behaviour {
    match i {
        0..=5 => Behaviour::RerankRescues,
        6 | 7 => Behaviour::QueryHits,
        _ => Behaviour::RerankProse,
    }
}

pub fn bug_id(i: usize) -> String {
    format!("FX-{i:02}")
}

pub fn class_fqn(i: usize) -> String {
    format!("fx.b{i}.{}", THEMES[i].0)
}

pub fn faulty_name(i: usize) -> &'static str {
    THEMES[i].2
}

pub fn decoy_name(i: usize) -> &'static str {
    THEMES[i].1
}

pub struct Bugset {
    pub root: PathBuf,
    pub bugs_dir: PathBuf,
    pub rules_path: PathBuf,
    pub config_path: PathBuf,
    pub rules: Vec<MockRule>,
}

impl Bugset {
    pub fn cases(&self) -> Vec<BugCase> {
        load_bugset(&self.bugs_dir).expect("fixture bugset loads")
    }

    pub fn chat(&self) -> MockChat {
        MockChat::new().with_rules(self.rules.clone())
    }
}

pub fn embedder() -> MockEmbedder {
    MockEmbedder::new(SEED)
}

fn java_source(i: usize) -> String {
    let (class, decoy, faulty) = THEMES[i];
    let mut fillers = String::new();
    if i == DEEP_BUG {
        for j in 0..DEEP_FILLERS {
            fillers.push_str(&format!(
                "
    public long {decoy}{j}() {{
        long acc = 0;
        for (long v : items) {{
            acc += v;
        }}
        return acc / Math.max(1, items.size());
    }}
"
            ));
        }
    }
    format!(
        "package fx.b{i};

import java.util.ArrayList;
import java.util.List;

/** {class} under test. */
public class {class} {{
    private final List<Long> items = new ArrayList<>();
    private long scale = 1;

    public {class}() {{
        this.scale = 1;
    }}

    public int size() {{
        return items.size();
    }}

    public boolean isEmpty() {{
        return items.isEmpty();
    }}

    public void add(long value) {{
        items.add(value * scale);
    }}

    public void add(long value, int times) {{
        for (int n = 0; n < times; n++) {{
            add(value);
        }}
    }}

    public static double ratio(long a, long b) {{
        return b == 0 ? 0.0 : (double) a / b;
    }}

    @Override
    public String toString() {{
        return \"{class}\" + items;
    }}

    public long {decoy}() {{
        long acc = 0;
        for (long v : items) {{
            acc += v;
        }}
        return acc / Math.max(1, items.size());
    }}

    // off by one: should include the limit itself
    public long {faulty}(long limit) {{
        long hits = 0;
        for (int n = 0; n < items.size(); n++) {{
            if (items.get(n) > limit) {{
                hits += items.get(n);
            }}
        }}
        return hits;
    }}

    public void reset() {{
        items.clear();
    }}
{fillers}
    static class Entry {{
        private final long v;

        Entry(long v) {{
            this.v = v;
        }}
    }}
}}
"
    )
}

/// Covered methods as (name, param types, JVM descriptor).
fn covered_methods(i: usize) -> Vec<(String, Vec<&'static str>, &'static str)> {
    let (_, decoy, faulty) = THEMES[i];
    let mut m: Vec<(String, Vec<&str>, &str)> = vec![
        ("<init>".into(), vec![], "()V"),
        ("size".into(), vec![], "()I"),
        ("isEmpty".into(), vec![], "()Z"),
        ("add".into(), vec!["long"], "(J)V"),
        ("add".into(), vec!["long", "int"], "(JI)V"),
        ("ratio".into(), vec!["long", "long"], "(JJ)D"),
        ("toString".into(), vec![], "()Ljava/lang/String;"),
        (decoy.into(), vec![], "()J"),
        (faulty.into(), vec!["long"], "(J)J"),
    ];
    if i == DEEP_BUG {
        for j in 0..DEEP_FILLERS {
            m.push((format!("{decoy}{j}"), vec![], "()J"));
        }
    }
    m
}

fn test_name(i: usize) -> String {
    let faulty = faulty_name(i);
    let mut cap = faulty.to_string();
    cap[..1].make_ascii_uppercase();
    format!("{}Test::test{cap}", class_fqn(i))
}

fn failing_tests(i: usize) -> serde_json::Value {
    let (class, _, faulty) = THEMES[i];
    let code = format!(
        "@Test\npublic void test() {{\n    {class} c = new {class}();\n    c.add(5);\n    assertEquals(5, c.{faulty}(5));\n}}"
    );
    let trace = format!(
        "junit.framework.AssertionFailedError: expected:<5> but was:<0>\n\tat fx.b{i}.{class}Test.test({class}Test.java:14)"
    );
    let mut tests = vec![json!({"name": test_name(i), "code": code, "stack_trace": trace})];
    if i == 3 {
        // inherited test run under a subclass
        tests.push(json!({
            "name": format!("fx.b{i}.Strict{class}Test::test"),
            "code": code,
            "stack_trace": trace,
        }));
    }
    json!({"bug_id": bug_id(i), "tests": tests})
}

fn simple_json_coverage(i: usize) -> serde_json::Value {
    let fqn = class_fqn(i);
    let mut covered: Vec<serde_json::Value> = covered_methods(i)
        .into_iter()
        .map(|(name, params, _)| {
            if name == "toString" {
                json!({"class": fqn, "method": name})
            } else {
                json!({"class": fqn, "method": name, "params": params})
            }
        })
        .collect();
    covered.push(json!({"class": format!("{fqn}$Entry"), "method": "<init>", "params": ["long"]}));
    covered.push(json!({"class": "java.util.ArrayList", "method": "add", "params": ["java.lang.Object"]}));
    covered.push(json!({"class": fqn, "method": "lambda$size$0", "params": ["long"]}));
    json!({"bug_id": bug_id(i), "failing_tests": [test_name(i)], "covered": covered})
}

fn cobertura_coverage(i: usize) -> String {
    let fqn = class_fqn(i);
    let path = fqn.replace('.', "/");
    let mut methods = String::new();
    for (name, _, desc) in covered_methods(i) {
        let name = name.replace('<', "&lt;").replace('>', "&gt;");
        methods.push_str(&format!(
            "          <method name=\"{name}\" signature=\"{desc}\" line-rate=\"1.0\" branch-rate=\"1.0\">\n            <lines><line number=\"1\" hits=\"3\"/></lines>\n          </method>\n"
        ));
    }
    methods.push_str(
        "          <method name=\"reset\" signature=\"()V\" line-rate=\"0.0\" branch-rate=\"0.0\">\n            <lines><line number=\"2\" hits=\"0\"/></lines>\n          </method>\n",
    );
    methods.push_str(
        "          <method name=\"lambda$size$0\" signature=\"(J)Z\" line-rate=\"1.0\" branch-rate=\"1.0\">\n            <lines><line number=\"3\" hits=\"2\"/></lines>\n          </method>\n",
    );
    format!(
        r#"<?xml version="1.0"?>
<!DOCTYPE coverage SYSTEM "http://cobertura.sourceforge.net/xml/coverage-04.dtd">
<coverage line-rate="0.9" branch-rate="0.8" version="1.9" timestamp="1">
  <packages>
    <package name="fx.b{i}" line-rate="0.9" branch-rate="0.8">
      <classes>
        <class name="{fqn}" filename="{path}.java" line-rate="0.9" branch-rate="0.8">
          <methods>
{methods}          </methods>
          <lines><line number="1" hits="3"/></lines>
        </class>
        <class name="{path}$Entry" filename="{path}.java" line-rate="1.0" branch-rate="1.0">
          <methods>
            <method name="&lt;init&gt;" signature="(J)V" line-rate="1.0" branch-rate="1.0">
              <lines><line number="4" hits="1"/></lines>
            </method>
          </methods>
        </class>
      </classes>
    </package>
  </packages>
</coverage>
"#
    )
}

fn write(path: &Path, contents: impl AsRef<[u8]>) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, contents).unwrap();
}

fn pretty(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).unwrap()
}

fn find<'a>(methods: &'a [MethodRecord], name: &str) -> &'a MethodRecord {
    methods
        .iter()
        .find(|m| m.method_name == name)
        .unwrap_or_else(|| panic!("fixture method {name} missing from corpus"))
}

/// Write the first `n` fixture bugs under `root` together with scripted chat
/// rules and a mock-provider config.
pub fn write_bugset(root: &Path, n: usize) -> Bugset {
    assert!(n <= THEMES.len());
    let bugs_dir = root.join("bugs");
    let mut rules = Vec::new();
    for (i, &(class, decoy, faulty)) in THEMES.iter().enumerate().take(n) {
        let dir = bugs_dir.join(bug_id(i));
        write(&dir.join(format!("src/fx/b{i}/{class}.java")), java_source(i));
        write(&dir.join("tests.json"), pretty(&failing_tests(i)));
        let (coverage, format) = if i % 2 == 0 {
            write(&dir.join("coverage.json"), pretty(&simple_json_coverage(i)));
            ("coverage.json", "simple-json")
        } else {
            write(&dir.join("coverage.xml"), cobertura_coverage(i));
            ("coverage.xml", "cobertura-xml")
        };
        let bug = json!({
            "bug_id": bug_id(i),
            "failing_tests": "tests.json",
            "coverage": coverage,
            "coverage_format": format,
            "source_roots": ["src"],
            "ground_truth": [{"class_fqn": class_fqn(i), "method_name": faulty, "param_types": ["long"]}],
        });
        write(&dir.join("bug.json"), pretty(&bug));

        let case = BugCase::load(&dir.join("bug.json")).unwrap();
        let prepared = prepare_bug(&case).unwrap();
        let methods = &prepared.corpus.corpus.methods;
        let target = match behaviour(i) {
            Behaviour::QueryHits => faulty,
            _ => decoy,
        };
        rules.push(MockRule {
            kind: PromptKind::Extract,
            contains: format!("fx.b{i}."),
            response: find(methods, target).source_text.clone(),
        });
        match behaviour(i) {
            Behaviour::RerankRescues => rules.push(MockRule {
                kind: PromptKind::Rerank,
                contains: format!("class: fx.b{i}."),
                response: format!(
                    "```json\n{}\n```",
                    json!([
                        {"class": class, "method": faulty, "rank": 1},
                        {"class": class, "method": decoy, "rank": 2},
                    ])
                ),
            }),
            Behaviour::RerankProse => rules.push(MockRule {
                kind: PromptKind::Rerank,
                contains: format!("class: fx.b{i}."),
                response: "All of these methods look equally suspicious to me.".into(),
            }),
            Behaviour::QueryHits => {}
        }
    }
    let rules_path = root.join("mock_rules.json");
    write(&rules_path, serde_json::to_string_pretty(&rules).unwrap());
    let config_path = root.join("run.toml");
    write(
        &config_path,
        "[providers]\nmock = true\nmock_rules = \"mock_rules.json\"\n\n[run]\nworkers = 3\n",
    );
    Bugset {
        root: root.to_path_buf(),
        bugs_dir,
        rules_path,
        config_path,
        rules,
    }
}

// ---- independent oracles ----

/// Seeded FNV-1a over lowercased character trigrams, bucketed and
/// L2-normalized; written separately from the provider implementation.
pub fn oracle_trigram_vector(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    let lower: Vec<char> = text.to_lowercase().chars().collect();
    let grams: Vec<String> = if lower.len() < 3 {
        vec![lower.iter().collect()]
    } else {
        (0..=lower.len() - 3).map(|s| lower[s..s + 3].iter().collect()).collect()
    };
    let mut counts = vec![0u64; dim];
    for g in grams {
        let mut h: u64 = 14695981039346656037;
        let mut bytes = seed.to_le_bytes().to_vec();
        bytes.extend_from_slice(g.as_bytes());
        for b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(1099511628211);
        }
        counts[(h % dim as u64) as usize] += 1;
    }
    let norm = (counts.iter().map(|&c| (c * c) as f64).sum::<f64>()).sqrt();
    counts.iter().map(|&c| c as f64 / norm).collect()
}

pub fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Average precision straight from the definition: for every relevant
/// position p, |relevant in the first p| / p, summed over |relevant|.
pub fn oracle_ap(ranking: &[String], relevant: &BTreeSet<String>) -> f64 {
    let mut total = 0.0;
    for p in 1..=ranking.len() {
        if relevant.contains(&ranking[p - 1]) && !ranking[..p - 1].contains(&ranking[p - 1]) {
            let mut seen = BTreeSet::new();
            let hits = ranking[..p].iter().filter(|id| relevant.contains(*id) && seen.insert(*id)).count();
            total += hits as f64 / p as f64;
        }
    }
    total / relevant.len() as f64
}

pub fn oracle_rr(ranking: &[String], relevant: &BTreeSet<String>) -> f64 {
    for (i, id) in ranking.iter().enumerate() {
        if relevant.contains(id) {
            return 1.0 / (i as f64 + 1.0);
        }
    }
    0.0
}
