use std::collections::HashSet;

use super::rank::{check_compatible, rank, RankingResult};
use super::{IndexEntry, SignatureIndex};
use crate::error::{Error, Result};
use crate::metrics::MetricKind;

#[derive(Debug, Clone, PartialEq)]
pub struct QueryReport {
    pub query_id: String,
    pub category: String,
    /// Precision at each cutoff.
    pub precision: Vec<f64>,
    /// Average precision truncated at each cutoff.
    pub average_precision: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub metric: MetricKind,
    pub cutoffs: Vec<usize>,
    pub queries: Vec<QueryReport>,
    /// Mean over queries of precision at each cutoff.
    pub mean_precision: Vec<f64>,
    /// Mean over queries of AP at each cutoff.
    pub map: Vec<f64>,
    pub mean_pair_seconds: f64,
}

impl EvalReport {
    fn position(&self, cutoff: usize) -> Option<usize> {
        self.cutoffs.iter().position(|&c| c == cutoff)
    }

    pub fn precision_at(&self, cutoff: usize) -> Option<f64> {
        self.position(cutoff).map(|i| self.mean_precision[i])
    }

    pub fn map_at(&self, cutoff: usize) -> Option<f64> {
        self.position(cutoff).map(|i| self.map[i])
    }

    /// MAP at the largest cutoff.
    pub fn headline_map(&self) -> f64 {
        self.map.last().copied().unwrap_or(0.0)
    }
}

/// Precision of the first `cutoff` results. When fewer than `cutoff` items
/// were ranked the denominator is the number ranked.
pub fn precision_at(relevant: &[bool], cutoff: usize) -> f64 {
    let c = cutoff.min(relevant.len());
    if c == 0 {
        return 0.0;
    }
    relevant[..c].iter().filter(|&&r| r).count() as f64 / c as f64
}

/// Σ over relevant hits in the top `cutoff` of P@i, divided by
/// min(total relevant, cutoff). Zero when nothing is relevant.
pub fn average_precision_at(relevant: &[bool], total_relevant: usize, cutoff: usize) -> f64 {
    let denom = total_relevant.min(cutoff);
    if denom == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &r) in relevant.iter().take(cutoff).enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / denom as f64
}

fn score(ranking: &RankingResult, category: &str, cutoffs: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let relevant: Vec<bool> = ranking
        .ranked
        .iter()
        .map(|r| r.category == category)
        .collect();
    let total = relevant.iter().filter(|&&r| r).count();
    let p = cutoffs
        .iter()
        .map(|&c| precision_at(&relevant, c))
        .collect();
    let ap = cutoffs
        .iter()
        .map(|&c| average_precision_at(&relevant, total, c))
        .collect();
    (p, ap)
}

pub fn evaluate(
    index: &SignatureIndex,
    queries: &[IndexEntry],
    metric: MetricKind,
    cutoffs: &[usize],
) -> Result<EvalReport> {
    check_compatible(index, metric)?;
    if queries.is_empty() {
        return Err(Error::InvalidArgument("no queries to evaluate".into()));
    }
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(Error::InvalidArgument(
            "cutoffs must be a non-empty list of positive counts".into(),
        ));
    }
    let known: HashSet<&str> = index.categories().collect();
    for q in queries {
        if !known.contains(q.category.as_str()) {
            return Err(Error::UnknownCategory(q.category.clone()).for_item(&q.item_id));
        }
    }

    let mut reports = Vec::with_capacity(queries.len());
    let mut total_secs = 0.0;
    let mut total_pairs = 0usize;
    for q in queries {
        let ranking = rank(index, q, metric)?;
        total_secs += ranking.total_pair_seconds;
        total_pairs += ranking.ranked.len();
        let (precision, average_precision) = score(&ranking, &q.category, cutoffs);
        reports.push(QueryReport {
            query_id: q.item_id.clone(),
            category: q.category.clone(),
            precision,
            average_precision,
        });
    }
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&QueryReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let mean_precision = (0..cutoffs.len())
        .map(|i| mean(&|r| r.precision[i]))
        .collect();
    let map = (0..cutoffs.len())
        .map(|i| mean(&|r| r.average_precision[i]))
        .collect();
    Ok(EvalReport {
        metric,
        cutoffs: cutoffs.to_vec(),
        queries: reports,
        mean_precision,
        map,
        mean_pair_seconds: if total_pairs == 0 {
            0.0
        } else {
            total_secs / total_pairs as f64
        },
    })
}
