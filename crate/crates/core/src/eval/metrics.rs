use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::{MethodCorpus, MethodKey};
use crate::providers::Usage;
use crate::rerank::FinalRanking;

pub const TOP_N: [usize; 3] = [1, 3, 5];

/// `(1/|relevant|) * sum of precision@r over the ranks r holding a relevant
/// item`. Relevant items missing from the ranking add nothing.
pub fn average_precision<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>) -> Result<f64, EvalError> {
    if relevant.is_empty() {
        return Err(EvalError::EmptyRelevantSet);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    let mut seen = BTreeSet::new();
    for (i, id) in ranking.iter().enumerate() {
        let id = id.as_ref();
        if relevant.contains(id) && seen.insert(id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

pub fn reciprocal_rank<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>) -> f64 {
    ranking
        .iter()
        .position(|id| relevant.contains(id.as_ref()))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

pub fn cost_usd(usage: Usage, price_input_per_mtok: f64, price_output_per_mtok: f64) -> f64 {
    usage.input_tokens as f64 * price_input_per_mtok / 1e6 + usage.output_tokens as f64 * price_output_per_mtok / 1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugScore {
    pub bug_id: String,
    pub first_relevant_rank: Option<usize>,
    pub average_precision: f64,
    pub reciprocal_rank: f64,
}

/// Score a final list against the bug's faulty methods.
///
/// Each ground-truth key stands for the first ranked method it matches; a
/// key matching nothing in the list still counts in the AP denominator.
/// Keys without parameter types match at name level.
pub fn score_ranking(
    ranking: &FinalRanking,
    corpus: &MethodCorpus,
    ground_truth: &[MethodKey],
) -> Result<BugScore, EvalError> {
    let ids = ranking.method_ids();
    let mut relevant = BTreeSet::new();
    for key in ground_truth {
        let in_list = ids
            .iter()
            .find(|id| corpus.get(id).is_some_and(|m| key.matches(m)))
            .map(|id| id.to_string());
        relevant.insert(in_list.unwrap_or_else(|| format!("<absent {key}>")));
    }
    let ap = average_precision(&ids, &relevant)?;
    let rr = reciprocal_rank(&ids, &relevant);
    Ok(BugScore {
        bug_id: ranking.bug_id.clone(),
        first_relevant_rank: ids.iter().position(|id| relevant.contains(*id)).map(|i| i + 1),
        average_precision: ap,
        reciprocal_rank: rr,
    })
}

/// Field order here is the serialized order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n_bugs: usize,
    /// Bugs with a faulty method within the first N entries.
    pub top_n: BTreeMap<usize, usize>,
    pub map_score: f64,
    pub mrr: f64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cost_usd: f64,
}

impl EvalSummary {
    pub fn top(&self, n: usize) -> usize {
        self.top_n.get(&n).copied().unwrap_or(0)
    }
}

/// Aggregate per-bug scores. MAP and MRR average over every scored bug.
pub fn summarize(scores: &[BugScore], usage: Usage, price_input_per_mtok: f64, price_output_per_mtok: f64) -> EvalSummary {
    let n = scores.len();
    let top_n = TOP_N
        .iter()
        .map(|&k| {
            let count = scores
                .iter()
                .filter(|s| s.first_relevant_rank.is_some_and(|r| r <= k))
                .count();
            (k, count)
        })
        .collect();
    let mean = |f: fn(&BugScore) -> f64| {
        if n == 0 {
            0.0
        } else {
            scores.iter().map(f).sum::<f64>() / n as f64
        }
    };
    EvalSummary {
        n_bugs: n,
        top_n,
        map_score: mean(|s| s.average_precision),
        mrr: mean(|s| s.reciprocal_rank),
        input_tokens: usage.input_tokens,
        output_tokens: usage.output_tokens,
        cost_usd: cost_usd(usage, price_input_per_mtok, price_output_per_mtok),
    }
}
