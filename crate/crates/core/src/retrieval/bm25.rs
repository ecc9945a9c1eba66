use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{rank_top_k, RetrievalError, RetrievalResult};

/// Lowercased terms split at non-alphanumerics and camelCase boundaries.
/// Digits stay attached to the preceding word: `foo_bar2` gives `foo`,
/// `bar2`. An acronym run ends before its last capital when a lowercase
/// letter follows, so `JSONArray` gives `json`, `array`.
pub fn bm25_tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split(|c: char| !c.is_alphanumeric()) {
        let chars: Vec<char> = word.chars().collect();
        let mut start = 0;
        for i in 1..chars.len() {
            let (prev, cur) = (chars[i - 1], chars[i]);
            let next_lower = chars.get(i + 1).is_some_and(|c| c.is_lowercase());
            let boundary = cur.is_uppercase()
                && ((prev.is_lowercase() || prev.is_numeric()) || (prev.is_uppercase() && next_lower));
            if boundary {
                out.push(chars[start..i].iter().collect::<String>().to_lowercase());
                start = i;
            }
        }
        if start < chars.len() {
            out.push(chars[start..].iter().collect::<String>().to_lowercase());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone)]
struct Doc {
    id: String,
    tf: HashMap<String, usize>,
    len: usize,
}

/// Okapi BM25 over tokenized method texts.
///
/// `idf(t) = ln((N - df + 0.5) / (df + 0.5))`, which goes negative for
/// terms present in more than half the documents.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    docs: Vec<Doc>,
    df: HashMap<String, usize>,
    avg_len: f64,
}

impl Bm25Index {
    pub fn build(documents: &[(String, String)], params: Bm25Params) -> Result<Self, RetrievalError> {
        if !(params.k1 >= 0.0 && (0.0..=1.0).contains(&params.b)) {
            return Err(RetrievalError::InvalidParams { k1: params.k1, b: params.b });
        }
        let mut seen = HashSet::new();
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut docs = Vec::with_capacity(documents.len());
        for (id, text) in documents {
            if !seen.insert(id.as_str()) {
                return Err(RetrievalError::DuplicateMethodId(id.clone()));
            }
            let terms = bm25_tokenize(text);
            let mut tf: HashMap<String, usize> = HashMap::new();
            for t in &terms {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for t in tf.keys() {
                *df.entry(t.clone()).or_default() += 1;
            }
            docs.push(Doc {
                id: id.clone(),
                tf,
                len: terms.len(),
            });
        }
        let total: usize = docs.iter().map(|d| d.len).sum();
        let avg_len = if docs.is_empty() { 0.0 } else { total as f64 / docs.len() as f64 };
        Ok(Self {
            params,
            docs,
            df,
            avg_len,
        })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let df = self.df.get(term).copied().unwrap_or(0) as f64;
        ((n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Every query-token occurrence contributes, so a repeated query term
    /// counts once per repetition.
    pub fn score(&self, doc_index: usize, query_terms: &[String]) -> f64 {
        let doc = &self.docs[doc_index];
        let Bm25Params { k1, b } = self.params;
        let mut score = 0.0;
        for t in query_terms {
            let Some(&tf) = doc.tf.get(t) else { continue };
            let tf = tf as f64;
            let norm = 1.0 - b + b * doc.len as f64 / self.avg_len;
            score += self.idf(t) * tf * (k1 + 1.0) / (tf + k1 * norm);
        }
        score
    }

    pub fn query(&self, query_text: &str, k: usize) -> Result<Vec<RetrievalResult>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        let terms = bm25_tokenize(query_text);
        let scored = (0..self.docs.len())
            .map(|i| (self.docs[i].id.as_str(), self.score(i, &terms)))
            .collect();
        Ok(rank_top_k(scored, k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(texts: &[(&str, &str)]) -> Vec<(String, String)> {
        texts.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn tokenize() {
        assert_eq!(bm25_tokenize("parseJsonArray"), vec!["parse", "json", "array"]);
        assert_eq!(bm25_tokenize("foo_bar2"), vec!["foo", "bar2"]);
        assert!(bm25_tokenize("").is_empty());
        assert_eq!(bm25_tokenize("JSONArray getX"), vec!["json", "array", "get", "x"]);
        assert_eq!(bm25_tokenize("  a--b  "), vec!["a", "b"]);
        assert_eq!(bm25_tokenize("v2Parser"), vec!["v2", "parser"]);
    }

    #[test]
    fn single_document() {
        let idx = Bm25Index::build(&docs(&[("d", "alpha beta beta")]), Bm25Params::default()).unwrap();
        let r = idx.query("alpha", 5).unwrap();
        // N=1, df=1, tf=1, dl=avgdl=3
        let expected = (0.5f64 / 1.5).ln() * (1.0 * 2.2) / (1.0 + 1.2);
        assert!((r[0].score - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_overlap_is_zero() {
        let idx = Bm25Index::build(&docs(&[("a", "x y"), ("b", "z")]), Bm25Params::default()).unwrap();
        let r = idx.query("nothing here", 5).unwrap();
        assert!(r.iter().all(|r| r.score == 0.0));
        assert_eq!(r[0].method_id, "a");
        assert!(idx.query("", 5).unwrap().iter().all(|r| r.score == 0.0));
    }

    #[test]
    fn bad_params() {
        assert!(Bm25Index::build(&[], Bm25Params { k1: -1.0, b: 0.5 }).is_err());
        assert!(Bm25Index::build(&[], Bm25Params { k1: 1.0, b: 1.5 }).is_err());
        assert!(Bm25Index::build(&docs(&[("a", "x"), ("a", "y")]), Bm25Params::default()).is_err());
    }

    #[test]
    fn empty_index() {
        let idx = Bm25Index::build(&[], Bm25Params::default()).unwrap();
        assert!(idx.query("x", 3).unwrap().is_empty());
    }
}
