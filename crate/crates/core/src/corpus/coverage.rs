use std::collections::BTreeSet;
use std::str::FromStr;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};

use super::{normalize_class_name, normalize_type_name, CorpusError, CoverageReport, MethodKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoverageFormat {
    #[serde(rename = "cobertura-xml")]
    CoberturaXml,
    #[serde(rename = "simple-json")]
    SimpleJson,
}

impl FromStr for CoverageFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cobertura-xml" | "cobertura" | "xml" => Ok(Self::CoberturaXml),
            "simple-json" | "json" => Ok(Self::SimpleJson),
            other => Err(CorpusError::MalformedCoverage(format!(
                "unknown coverage format `{other}`"
            ))),
        }
    }
}

pub fn parse_coverage(raw: &[u8], format: CoverageFormat) -> Result<CoverageReport, CorpusError> {
    let report = match format {
        CoverageFormat::SimpleJson => parse_simple_json(raw)?,
        CoverageFormat::CoberturaXml => parse_cobertura(raw)?,
    };
    if report.covered_method_keys.is_empty() {
        return Err(CorpusError::EmptyCoverage);
    }
    Ok(report)
}

#[derive(Deserialize)]
struct SimpleJson {
    bug_id: String,
    #[serde(default)]
    failing_tests: Vec<String>,
    covered: Vec<SimpleJsonMethod>,
}

#[derive(Deserialize)]
struct SimpleJsonMethod {
    class: String,
    method: String,
    #[serde(default)]
    params: Option<Vec<String>>,
}

fn parse_simple_json(raw: &[u8]) -> Result<CoverageReport, CorpusError> {
    let doc: SimpleJson =
        serde_json::from_slice(raw).map_err(|e| CorpusError::MalformedCoverage(e.to_string()))?;
    let covered_method_keys = doc
        .covered
        .into_iter()
        .filter(|m| !is_synthetic(&m.method))
        .map(|m| MethodKey {
            class_fqn: normalize_class_name(&m.class),
            method_name: m.method,
            param_types: m
                .params
                .map(|ps| ps.iter().map(|p| normalize_type_name(p)).collect()),
        })
        .collect();
    Ok(CoverageReport {
        bug_id: doc.bug_id,
        covered_method_keys,
        failing_test_names: doc.failing_tests,
    })
}

/// Compiler-generated methods have no declaration to extract.
fn is_synthetic(name: &str) -> bool {
    name == "<clinit>" || name.starts_with("lambda$") || name.starts_with("access$")
}

struct OpenMethod {
    key: MethodKey,
    line_rate: f64,
    saw_lines: bool,
    hit: bool,
}

fn parse_cobertura(raw: &[u8]) -> Result<CoverageReport, CorpusError> {
    let mut reader = Reader::from_reader(raw);
    reader.config_mut().trim_text(true);

    let mut buf = Vec::new();
    let mut covered = BTreeSet::new();
    let mut class: Option<String> = None;
    let mut method: Option<OpenMethod> = None;
    let mut saw_root = false;

    loop {
        let event = reader
            .read_event_into(&mut buf)
            .map_err(|e| CorpusError::MalformedCoverage(format!("at byte {}: {e}", reader.buffer_position())))?;
        match event {
            Event::Start(e) | Event::Empty(e) if !saw_root => {
                if e.name().as_ref() != b"coverage" {
                    return Err(CorpusError::MalformedCoverage(
                        "root element is not <coverage>".into(),
                    ));
                }
                saw_root = true;
            }
            Event::Start(e) => match e.name().as_ref() {
                b"class" => class = Some(normalize_class_name(&attr(&e, "name")?.unwrap_or_default())),
                b"method" => method = open_method(&e, class.as_deref())?,
                b"line" => mark_line(&e, method.as_mut())?,
                _ => {}
            },
            Event::Empty(e) => match e.name().as_ref() {
                b"method" => {
                    if let Some(m) = open_method(&e, class.as_deref())? {
                        close_method(m, &mut covered);
                    }
                }
                b"line" => mark_line(&e, method.as_mut())?,
                _ => {}
            },
            Event::End(e) => match e.name().as_ref() {
                b"method" => {
                    if let Some(m) = method.take() {
                        close_method(m, &mut covered);
                    }
                }
                b"class" => class = None,
                _ => {}
            },
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    if !saw_root {
        return Err(CorpusError::MalformedCoverage("no <coverage> element".into()));
    }
    Ok(CoverageReport {
        bug_id: String::new(),
        covered_method_keys: covered,
        failing_test_names: Vec::new(),
    })
}

fn attr(e: &BytesStart<'_>, name: &str) -> Result<Option<String>, CorpusError> {
    match e
        .try_get_attribute(name)
        .map_err(|err| CorpusError::MalformedCoverage(err.to_string()))?
    {
        Some(a) => a
            .unescape_value()
            .map(|v| Some(v.into_owned()))
            .map_err(|err| CorpusError::MalformedCoverage(err.to_string())),
        None => Ok(None),
    }
}

fn open_method(e: &BytesStart<'_>, class: Option<&str>) -> Result<Option<OpenMethod>, CorpusError> {
    let class = class.ok_or_else(|| CorpusError::MalformedCoverage("<method> outside <class>".into()))?;
    let name = attr(e, "name")?
        .ok_or_else(|| CorpusError::MalformedCoverage("<method> without name".into()))?;
    if is_synthetic(&name) {
        return Ok(None);
    }
    let param_types = match attr(e, "signature")? {
        Some(sig) if !sig.is_empty() => Some(parse_jvm_descriptor(&sig)?),
        _ => None,
    };
    let line_rate = attr(e, "line-rate")?
        .map(|v| v.parse::<f64>())
        .transpose()
        .map_err(|err| CorpusError::MalformedCoverage(format!("line-rate: {err}")))?
        .unwrap_or(0.0);
    Ok(Some(OpenMethod {
        key: MethodKey {
            class_fqn: class.to_string(),
            method_name: name,
            param_types,
        },
        line_rate,
        saw_lines: false,
        hit: false,
    }))
}

fn mark_line(e: &BytesStart<'_>, method: Option<&mut OpenMethod>) -> Result<(), CorpusError> {
    let Some(method) = method else {
        // class-level <lines> summary
        return Ok(());
    };
    method.saw_lines = true;
    let hits = attr(e, "hits")?
        .map(|v| v.parse::<u64>())
        .transpose()
        .map_err(|err| CorpusError::MalformedCoverage(format!("hits: {err}")))?
        .unwrap_or(0);
    if hits > 0 {
        method.hit = true;
    }
    Ok(())
}

fn close_method(m: OpenMethod, covered: &mut BTreeSet<MethodKey>) {
    let hit = if m.saw_lines { m.hit } else { m.line_rate > 0.0 };
    if hit {
        covered.insert(m.key);
    }
}

/// Parameter types of a JVM method descriptor such as `(Ljava/lang/String;[IJ)V`,
/// in the normalized form used by [`MethodKey`].
pub fn parse_jvm_descriptor(descriptor: &str) -> Result<Vec<String>, CorpusError> {
    let bad = || CorpusError::MalformedCoverage(format!("bad method descriptor `{descriptor}`"));
    let inner = descriptor
        .strip_prefix('(')
        .and_then(|s| s.split_once(')'))
        .map(|(params, _)| params)
        .ok_or_else(bad)?;

    let mut out = Vec::new();
    let mut chars = inner.chars();
    let mut dims = 0;
    while let Some(c) = chars.next() {
        let base = match c {
            '[' => {
                dims += 1;
                continue;
            }
            'B' => "byte".to_string(),
            'C' => "char".to_string(),
            'D' => "double".to_string(),
            'F' => "float".to_string(),
            'I' => "int".to_string(),
            'J' => "long".to_string(),
            'S' => "short".to_string(),
            'Z' => "boolean".to_string(),
            'L' => {
                let name: String = chars.by_ref().take_while(|&c| c != ';').collect();
                if name.is_empty() {
                    return Err(bad());
                }
                normalize_type_name(&name.replace('/', "."))
            }
            _ => return Err(bad()),
        };
        let mut ty = base;
        for _ in 0..dims {
            ty.push_str("[]");
        }
        dims = 0;
        out.push(ty);
    }
    if dims != 0 {
        return Err(bad());
    }
    Ok(out)
}
