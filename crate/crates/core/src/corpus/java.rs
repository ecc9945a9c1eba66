//! Error-tolerant Java declaration scanner.
//!
//! This is not a full Java parser. It lexes away comments and literals,
//! then walks the brace structure to find type bodies and the method and
//! constructor declarations inside them. Method bodies are scanned only to
//! discover anonymous and local classes, whose methods are attributed to the
//! enclosing named class.

use std::collections::HashMap;
use std::str::FromStr;

use super::{method_id_for, normalize_type_name, CorpusError, LineSpan, MethodRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Language {
    Java,
}

impl Language {
    pub fn from_path(path: &std::path::Path) -> Result<Self, CorpusError> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("java") => Ok(Self::Java),
            other => Err(CorpusError::UnsupportedLanguage(
                other.unwrap_or("<none>").to_string(),
            )),
        }
    }
}

impl FromStr for Language {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "java" => Ok(Self::Java),
            _ => Err(CorpusError::UnsupportedLanguage(s.to_string())),
        }
    }
}

/// Extract every method and constructor that has a body.
///
/// Records come back in source order. `method_id`s are unique within the
/// file; when two anonymous-class methods fold onto the same signature the
/// later ones get an `@L<line>` suffix.
pub fn extract_methods(
    source: &str,
    language: Language,
    file_path: &str,
) -> Result<Vec<MethodRecord>, CorpusError> {
    let Language::Java = language;
    let tokens = lex(source);
    let mut parser = Parser {
        src: source,
        toks: &tokens,
        pos: 0,
        found: Vec::new(),
        types_seen: 0,
    };
    parser.compilation_unit();
    if parser.types_seen == 0 && !tokens.is_empty() {
        return Err(CorpusError::ParseFailure(file_path.to_string()));
    }

    let mut found = parser.found;
    found.sort_by_key(|m| m.bytes.0);
    let mut seen: HashMap<String, usize> = HashMap::new();
    let records = found
        .into_iter()
        .map(|m| {
            let base = method_id_for(&m.class_fqn, &m.name, &m.params);
            let n = seen.entry(base.clone()).or_insert(0);
            *n += 1;
            let method_id = if *n == 1 {
                base
            } else {
                format!("{base}@L{}", m.span.start)
            };
            MethodRecord {
                method_id,
                class_fqn: m.class_fqn,
                method_name: m.name,
                param_types: m.params,
                source_text: source[m.bytes.0..m.bytes.1].to_string(),
                file_path: file_path.to_string(),
                line_span: m.span,
            }
        })
        .collect();
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Ident,
    Punct(char),
    Literal,
}

#[derive(Debug, Clone, Copy)]
struct Token {
    kind: Kind,
    start: usize,
    end: usize,
    line: usize,
}

fn lex(src: &str) -> Vec<Token> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    let mut line = 1;

    // Advance over [from, to), counting newlines.
    let count_lines = |from: usize, to: usize, line: &mut usize| {
        *line += bytes[from..to].iter().filter(|&&b| b == b'\n').count();
    };

    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b'\n' => {
                line += 1;
                i += 1;
            }
            b if b.is_ascii_whitespace() => i += 1,
            b'/' if bytes.get(i + 1) == Some(&b'/') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                let end = src[i + 2..].find("*/").map_or(bytes.len(), |p| i + 2 + p + 2);
                count_lines(i, end, &mut line);
                i = end;
            }
            b'"' | b'\'' => {
                let start = i;
                let start_line = line;
                let end = if b == b'"' && src[i..].starts_with("\"\"\"") {
                    let mut j = i + 3;
                    loop {
                        match src[j..].find("\"\"\"") {
                            Some(p) if p > 0 && bytes[j + p - 1] == b'\\' => j += p + 1,
                            Some(p) => break j + p + 3,
                            None => break bytes.len(),
                        }
                    }
                } else {
                    let mut j = i + 1;
                    while j < bytes.len() && bytes[j] != b && bytes[j] != b'\n' {
                        if bytes[j] == b'\\' {
                            j += 1;
                        }
                        j += 1;
                    }
                    (j + 1).min(bytes.len())
                };
                count_lines(start, end, &mut line);
                toks.push(Token {
                    kind: Kind::Literal,
                    start,
                    end,
                    line: start_line,
                });
                i = end;
            }
            b'0'..=b'9' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'.') {
                    i += 1;
                }
                toks.push(Token {
                    kind: Kind::Literal,
                    start,
                    end: i,
                    line,
                });
            }
            _ => {
                let c = src[i..].chars().next().expect("in bounds");
                if c.is_alphabetic() || c == '_' || c == '$' {
                    let start = i;
                    let len: usize = src[i..]
                        .chars()
                        .take_while(|c| c.is_alphanumeric() || *c == '_' || *c == '$')
                        .map(char::len_utf8)
                        .sum();
                    i += len;
                    toks.push(Token {
                        kind: Kind::Ident,
                        start,
                        end: i,
                        line,
                    });
                } else {
                    toks.push(Token {
                        kind: Kind::Punct(c),
                        start: i,
                        end: i + c.len_utf8(),
                        line,
                    });
                    i += c.len_utf8();
                }
            }
        }
    }
    toks
}

struct Found {
    class_fqn: String,
    name: String,
    params: Vec<String>,
    bytes: (usize, usize),
    span: LineSpan,
}

/// Where methods found in a type body are attributed.
#[derive(Clone)]
struct TypeCtx {
    fqn: String,
    /// Simple name for constructor detection; `None` for anonymous bodies.
    ctor_name: Option<String>,
}

struct Parser<'a> {
    src: &'a str,
    toks: &'a [Token],
    pos: usize,
    found: Vec<Found>,
    types_seen: usize,
}

const TYPE_KEYWORDS: [&str; 3] = ["class", "interface", "enum"];

impl<'a> Parser<'a> {
    fn text(&self, i: usize) -> &'a str {
        let t = self.toks[i];
        &self.src[t.start..t.end]
    }

    fn is_punct(&self, i: usize, c: char) -> bool {
        self.toks.get(i).is_some_and(|t| t.kind == Kind::Punct(c))
    }

    fn is_ident(&self, i: usize) -> bool {
        self.toks.get(i).is_some_and(|t| t.kind == Kind::Ident)
    }

    fn is_word(&self, i: usize, w: &str) -> bool {
        self.is_ident(i) && self.text(i) == w
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    /// Does a type declaration start at `i`? Returns the index of its name.
    fn type_decl_at(&self, i: usize) -> Option<usize> {
        if !self.is_ident(i) || (i > 0 && self.is_punct(i - 1, '.')) {
            return None;
        }
        let w = self.text(i);
        if TYPE_KEYWORDS.contains(&w) && self.is_ident(i + 1) {
            // `@interface` shares the path
            return Some(i + 1);
        }
        if w == "record" && self.is_ident(i + 1) && (self.is_punct(i + 2, '(') || self.is_punct(i + 2, '<')) {
            return Some(i + 1);
        }
        None
    }

    fn compilation_unit(&mut self) {
        let mut package = String::new();
        while !self.at_end() {
            if self.is_word(self.pos, "package") || self.is_word(self.pos, "import") {
                let is_pkg = self.is_word(self.pos, "package");
                self.pos += 1;
                let mut name = String::new();
                while !self.at_end() && !self.is_punct(self.pos, ';') {
                    name.push_str(self.text(self.pos));
                    self.pos += 1;
                }
                self.pos += 1;
                if is_pkg {
                    package = name;
                }
            } else if let Some(name_at) = self.type_decl_at(self.pos) {
                let name = self.text(name_at).to_string();
                let fqn = if package.is_empty() {
                    name.clone()
                } else {
                    format!("{package}.{name}")
                };
                self.type_decl(name_at, fqn, name);
            } else {
                self.pos += 1;
            }
        }
    }

    /// Parse from a type's name through its closing brace.
    fn type_decl(&mut self, name_at: usize, fqn: String, simple: String) {
        let is_enum = self.text(name_at - 1) == "enum";
        self.pos = name_at + 1;
        // header: generics, record components, extends/implements
        while !self.at_end() && !self.is_punct(self.pos, '{') {
            if self.is_punct(self.pos, ';') {
                self.pos += 1;
                return;
            }
            self.pos += 1;
        }
        if self.at_end() {
            return;
        }
        self.pos += 1;
        self.types_seen += 1;
        let ctx = TypeCtx {
            fqn,
            ctor_name: Some(simple),
        };
        if is_enum {
            self.enum_constants(&ctx);
        }
        self.type_body(&ctx);
    }

    fn enum_constants(&mut self, ctx: &TypeCtx) {
        let anon = TypeCtx {
            fqn: ctx.fqn.clone(),
            ctor_name: None,
        };
        while !self.at_end() {
            self.skip_annotations();
            if self.is_punct(self.pos, ';') {
                self.pos += 1;
                return;
            }
            if self.is_punct(self.pos, '}') || !self.is_ident(self.pos) {
                return;
            }
            self.pos += 1;
            if self.is_punct(self.pos, '(') {
                self.pos += 1;
                self.scan_code(&anon, Some(')'));
            }
            if self.is_punct(self.pos, '{') {
                self.pos += 1;
                self.type_body(&anon);
            }
            if self.is_punct(self.pos, ',') {
                self.pos += 1;
            }
        }
    }

    fn skip_annotations(&mut self) {
        while self.is_punct(self.pos, '@') && !self.is_word(self.pos + 1, "interface") {
            self.pos += 2;
            while self.is_punct(self.pos, '.') && self.is_ident(self.pos + 1) {
                self.pos += 2;
            }
            if self.is_punct(self.pos, '(') {
                self.skip_balanced('(', ')');
            }
        }
    }

    /// With `pos` on `open`, move past its matching `close`.
    fn skip_balanced(&mut self, open: char, close: char) {
        let mut depth = 0usize;
        while !self.at_end() {
            if self.is_punct(self.pos, open) {
                depth += 1;
            } else if self.is_punct(self.pos, close) {
                depth -= 1;
                if depth == 0 {
                    self.pos += 1;
                    return;
                }
            }
            self.pos += 1;
        }
    }

    /// Members of a type body; `pos` is just past the opening brace and ends
    /// just past the closing one.
    fn type_body(&mut self, ctx: &TypeCtx) {
        while !self.at_end() {
            if self.is_punct(self.pos, ';') {
                self.pos += 1;
                continue;
            }
            if self.is_punct(self.pos, '}') {
                self.pos += 1;
                return;
            }
            self.member(ctx);
        }
    }

    fn member(&mut self, ctx: &TypeCtx) {
        let start = self.pos;
        while !self.at_end() {
            if self.is_punct(self.pos, '@') {
                if self.is_word(self.pos + 1, "interface") && self.is_ident(self.pos + 2) {
                    let name_at = self.pos + 2;
                    let simple = self.text(name_at).to_string();
                    self.type_decl(name_at, format!("{}${simple}", ctx.fqn), simple);
                    return;
                }
                self.skip_annotations();
                continue;
            }
            if let Some(name_at) = self.type_decl_at(self.pos) {
                let simple = self.text(name_at).to_string();
                self.type_decl(name_at, format!("{}${simple}", ctx.fqn), simple);
                return;
            }
            match self.toks[self.pos].kind {
                Kind::Punct('{') => {
                    // initializer block, or a record's compact constructor
                    self.pos += 1;
                    self.scan_code(ctx, Some('}'));
                    return;
                }
                Kind::Punct('(') if self.pos > start && self.is_ident(self.pos - 1) => {
                    self.method(ctx, start);
                    return;
                }
                Kind::Punct('=') => {
                    self.pos += 1;
                    self.scan_code(ctx, None);
                    return;
                }
                Kind::Punct(';') => {
                    self.pos += 1;
                    return;
                }
                Kind::Punct('}') => return,
                Kind::Punct('<') => self.skip_balanced('<', '>'),
                _ => self.pos += 1,
            }
        }
    }

    /// `pos` is on the `(` after a method name.
    fn method(&mut self, ctx: &TypeCtx, start: usize) {
        let name = self.text(self.pos - 1).to_string();
        let params_open = self.pos;
        self.skip_balanced('(', ')');
        let params = self.param_types(params_open + 1, self.pos - 1);

        // trailing dims, throws clause, annotation default value
        while !self.at_end() && !self.is_punct(self.pos, '{') && !self.is_punct(self.pos, ';') {
            if self.is_punct(self.pos, '}') {
                return;
            }
            if self.is_word(self.pos, "default") {
                self.scan_code(ctx, None);
                return;
            }
            if self.is_punct(self.pos, '(') {
                self.skip_balanced('(', ')');
            } else {
                self.pos += 1;
            }
        }
        if self.at_end() || self.is_punct(self.pos, ';') {
            self.pos += 1;
            return;
        }
        self.pos += 1;
        let close = self.scan_code(ctx, Some('}'));
        let Some(close) = close else {
            return;
        };

        let method_name = match &ctx.ctor_name {
            Some(simple) if *simple == name => "<init>".to_string(),
            _ => name,
        };
        let first = self.toks[start];
        let last = self.toks[close];
        self.found.push(Found {
            class_fqn: ctx.fqn.clone(),
            name: method_name,
            params,
            bytes: (first.start, last.end),
            span: LineSpan {
                start: first.line,
                end: last.line,
            },
        });
    }

    /// Normalized parameter types for tokens in `[from, to)`.
    fn param_types(&self, from: usize, to: usize) -> Vec<String> {
        let mut params = Vec::new();
        let mut current: Vec<usize> = Vec::new();
        let mut angle = 0usize;
        let mut paren = 0usize;
        for i in from..to {
            match self.toks[i].kind {
                Kind::Punct('<') => angle += 1,
                Kind::Punct('>') => angle = angle.saturating_sub(1),
                Kind::Punct('(') => paren += 1,
                Kind::Punct(')') => paren = paren.saturating_sub(1),
                Kind::Punct(',') if angle == 0 && paren == 0 => {
                    params.extend(self.one_param(&current));
                    current.clear();
                    continue;
                }
                _ => {}
            }
            current.push(i);
        }
        params.extend(self.one_param(&current));
        params
    }

    fn one_param(&self, toks: &[usize]) -> Option<String> {
        // drop annotations and `final`
        let mut kept = Vec::new();
        let mut i = 0;
        while i < toks.len() {
            let t = toks[i];
            if self.is_punct(t, '@') {
                i += 2;
                while i + 1 < toks.len() && self.is_punct(toks[i], '.') && self.is_ident(toks[i + 1]) {
                    i += 2;
                }
                if i < toks.len() && self.is_punct(toks[i], '(') {
                    let mut depth = 0;
                    while i < toks.len() {
                        if self.is_punct(toks[i], '(') {
                            depth += 1;
                        } else if self.is_punct(toks[i], ')') {
                            depth -= 1;
                            if depth == 0 {
                                i += 1;
                                break;
                            }
                        }
                        i += 1;
                    }
                }
                continue;
            }
            if !self.is_word(t, "final") {
                kept.push(t);
            }
            i += 1;
        }

        // C-style dims after the name: `int a[]`
        let mut trailing_dims = 0;
        while kept.len() >= 2
            && self.is_punct(kept[kept.len() - 1], ']')
            && self.is_punct(kept[kept.len() - 2], '[')
        {
            kept.truncate(kept.len() - 2);
            trailing_dims += 1;
        }
        let name = kept.pop()?;
        if !self.is_ident(name) || self.text(name) == "this" || kept.is_empty() {
            // receiver parameter or something we cannot read
            return None;
        }
        let ty: String = kept.iter().map(|&t| self.text(t)).collect();
        let mut ty = normalize_type_name(&ty);
        for _ in 0..trailing_dims {
            ty.push_str("[]");
        }
        Some(ty)
    }

    /// Scan statements or an expression looking for nested class bodies.
    ///
    /// With `close = Some(c)`, consumes through the matching `c` and returns
    /// its token index. With `None`, consumes through the next `;` at this
    /// nesting level and stops (without consuming) at an unmatched `}`.
    fn scan_code(&mut self, ctx: &TypeCtx, close: Option<char>) -> Option<usize> {
        let anon = TypeCtx {
            fqn: ctx.fqn.clone(),
            ctor_name: None,
        };
        while !self.at_end() {
            let tok = self.toks[self.pos];
            if let Some(name_at) = self.type_decl_at(self.pos) {
                let local = TypeCtx {
                    fqn: ctx.fqn.clone(),
                    ctor_name: Some(self.text(name_at).to_string()),
                };
                self.local_type(name_at, &local);
                continue;
            }
            match tok.kind {
                Kind::Punct(c) if Some(c) == close => {
                    self.pos += 1;
                    return Some(self.pos - 1);
                }
                Kind::Punct(';') if close.is_none() => {
                    self.pos += 1;
                    return None;
                }
                Kind::Punct('}') if close.is_none() => return None,
                Kind::Punct('{') => {
                    self.pos += 1;
                    self.scan_code(ctx, Some('}'));
                }
                Kind::Punct('(') => {
                    self.pos += 1;
                    self.scan_code(ctx, Some(')'));
                }
                Kind::Punct('[') => {
                    self.pos += 1;
                    self.scan_code(ctx, Some(']'));
                }
                // unbalanced closer: tolerate and move on
                Kind::Punct('}' | ')' | ']') => {
                    if close == Some('}') {
                        self.pos += 1;
                    } else {
                        return None;
                    }
                }
                Kind::Ident if self.text(self.pos) == "new" => {
                    self.pos += 1;
                    self.skip_annotations();
                    while self.is_ident(self.pos) || self.is_punct(self.pos, '.') || self.is_punct(self.pos, '@') {
                        self.pos += 1;
                    }
                    if self.is_punct(self.pos, '<') {
                        self.skip_balanced('<', '>');
                    }
                    if self.is_punct(self.pos, '(') {
                        self.pos += 1;
                        self.scan_code(ctx, Some(')'));
                        if self.is_punct(self.pos, '{') {
                            self.pos += 1;
                            self.type_body(&anon);
                        }
                    }
                }
                _ => self.pos += 1,
            }
        }
        None
    }

    fn local_type(&mut self, name_at: usize, ctx: &TypeCtx) {
        let is_enum = self.text(name_at - 1) == "enum";
        self.pos = name_at + 1;
        while !self.at_end() && !self.is_punct(self.pos, '{') {
            self.pos += 1;
        }
        if self.at_end() {
            return;
        }
        self.pos += 1;
        if is_enum {
            self.enum_constants(ctx);
        }
        self.type_body(ctx);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn extract(src: &str) -> Vec<MethodRecord> {
        extract_methods(src, Language::Java, "T.java").unwrap()
    }

    fn lines_of(src: &str, span: LineSpan) -> String {
        src.lines()
            .skip(span.start - 1)
            .take(span.end - span.start + 1)
            .collect::<Vec<_>>()
            .join("\n")
    }

    #[test]
    fn empty_class_body() {
        assert!(extract("package a; public class Empty { }").is_empty());
    }

    // Line numbers annotated by hand.
    const TWO_METHODS: &str = "\
package org.example;

import java.util.List;

/** Doc. */
public class Calc {
    private int total = 0;

    public int add(int a, int b) {
        return a + b;
    }

    @Override
    public String toString() {
        // } braces in comments and \"}\" strings are ignored
        String s = \"}\";
        return s;
    }
}
";

    #[test]
    fn two_top_level_methods_with_spans() {
        let ms = extract(TWO_METHODS);
        assert_eq!(ms.len(), 2);
        assert_eq!(ms[0].class_fqn, "org.example.Calc");
        assert_eq!(ms[0].method_name, "add");
        assert_eq!(ms[0].param_types, vec!["int", "int"]);
        assert_eq!(ms[0].line_span, LineSpan { start: 9, end: 11 });
        assert_eq!(ms[1].method_name, "toString");
        assert!(ms[1].param_types.is_empty());
        assert_eq!(ms[1].line_span, LineSpan { start: 13, end: 18 });
        assert!(ms[1].source_text.starts_with("@Override"));
        assert!(ms[1].source_text.ends_with('}'));
        for m in &ms {
            assert_eq!(lines_of(TWO_METHODS, m.line_span).trim(), m.source_text);
        }
    }

    #[test]
    fn overloads_distinguished_by_params() {
        let src = "class P {\n  void foo(int x) { }\n  void foo(String s) { }\n}\n";
        let ms = extract(src);
        assert_eq!(ms.len(), 2);
        assert_eq!(ms[0].param_types, vec!["int"]);
        assert_eq!(ms[1].param_types, vec!["String"]);
        assert_ne!(ms[0].method_id, ms[1].method_id);
        assert_eq!(ms[0].method_id, "P#foo(int)");
        assert_eq!(ms[1].method_id, "P#foo(String)");
    }

    #[test]
    fn constructors_nested_and_anonymous() {
        let src = r#"
package q;
public class Outer<T extends Comparable<T>> {
    private final Runnable r = new Runnable() {
        public void run() { System.out.println("x"); }
    };
    static { init(); }
    public Outer(final java.util.Map<String, List<T>> m, int... rest) { this.m = m; }
    abstract void declared(int x);
    public <U> U convert(@Nullable U u, long[] arr, char c[]) {
        Comparator<U> cmp = new Comparator<U>() {
            @Override public int compare(U a, U b) { return 0; }
        };
        class Local { Local() {} int size() { return 1; } }
        int[] xs = new int[] {1, 2};
        Runnable f = () -> { go(); };
        return u;
    }
    static class Inner {
        Inner() {}
        void run() { }
    }
    interface Api { void a(); default int b() { return 1; } }
}
"#;
        let ms = extract(src);
        let ids: Vec<&str> = ms.iter().map(|m| m.method_id.as_str()).collect();
        assert_eq!(
            ids,
            vec![
                "q.Outer#run()",
                "q.Outer#<init>(Map,int[])",
                "q.Outer#convert(U,long[],char[])",
                "q.Outer#compare(U,U)",
                "q.Outer#<init>()",
                "q.Outer#size()",
                "q.Outer$Inner#<init>()",
                "q.Outer$Inner#run()",
                "q.Outer$Api#b()",
            ]
        );
    }

    #[test]
    fn enum_constants_with_bodies() {
        let src = r#"
enum Op {
    PLUS("+") { int apply(int a, int b) { return a + b; } },
    MINUS("-") { int apply(int a, int b) { return a - b; } };
    private final String sym;
    Op(String sym) { this.sym = sym; }
    abstract int apply(int a, int b);
}
"#;
        let ms = extract(src);
        let ids: Vec<&str> = ms.iter().map(|m| m.method_id.as_str()).collect();
        // the two constant bodies fold onto the enum and get disambiguated
        assert_eq!(ids, vec!["Op#apply(int,int)", "Op#apply(int,int)@L4", "Op#<init>(String)"]);
    }

    #[test]
    fn records_and_text_blocks() {
        let src = "record Point(int x, int y) {\n  Point {\n  }\n  String show() {\n    return \"\"\"\n      { not code }\n      \"\"\";\n  }\n}\n";
        let ms = extract(src);
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].method_name, "show");
        assert_eq!(ms[0].line_span, LineSpan { start: 4, end: 8 });
    }

    #[test]
    fn garbage_is_parse_failure() {
        assert!(matches!(
            extract_methods("}} ((( int x;", Language::Java, "g.java"),
            Err(CorpusError::ParseFailure(_))
        ));
        assert!(extract_methods("// only a comment", Language::Java, "c.java")
            .unwrap()
            .is_empty());
    }

    #[test]
    fn unsupported_language() {
        assert!(matches!(
            "kotlin".parse::<Language>(),
            Err(CorpusError::UnsupportedLanguage(_))
        ));
        assert!(Language::from_path(std::path::Path::new("A.kt")).is_err());
    }
}
