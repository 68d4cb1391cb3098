use std::time::Instant;

use rayon::prelude::*;

use super::{IndexEntry, IndexMode, SignatureIndex};
use crate::error::{Error, Result};
use crate::metrics::{distance, MetricKind};

#[derive(Debug, Clone, PartialEq)]
pub struct RankedItem {
    pub item_id: String,
    pub category: String,
    pub distance: f64,
}

/// Index entries ordered by ascending distance to a query; ties go to the
/// lexicographically smaller item id.
#[derive(Debug, Clone)]
pub struct RankingResult {
    pub query_id: String,
    pub metric: MetricKind,
    pub ranked: Vec<RankedItem>,
    /// Sum of per-pair wall times, in seconds.
    pub total_pair_seconds: f64,
}

impl RankingResult {
    pub fn mean_pair_seconds(&self) -> f64 {
        if self.ranked.is_empty() {
            0.0
        } else {
            self.total_pair_seconds / self.ranked.len() as f64
        }
    }
}

pub(crate) fn check_compatible(index: &SignatureIndex, metric: MetricKind) -> Result<()> {
    if metric.requires_gmm() && index.mode() != IndexMode::Gmm {
        return Err(Error::IncompatibleMetric {
            metric: metric.name().into(),
            mode: index.mode().name().into(),
            hint: format!("{metric} requires gmm index; build with --gmm or pick one of gaussian-kl, wasserstein, riemannian, euclidean"),
        });
    }
    Ok(())
}

/// Rank every entry against `query`. An entry with the query's own id is
/// left out of the ranking.
pub fn rank(
    index: &SignatureIndex,
    query: &IndexEntry,
    metric: MetricKind,
) -> Result<RankingResult> {
    check_compatible(index, metric)?;
    if query.signature.dim() != index.dim() {
        return Err(Error::DimMismatch {
            expected: index.dim(),
            found: query.signature.dim(),
        });
    }
    if metric.requires_gmm() && query.gmm.is_none() {
        return Err(Error::IncompatibleMetric {
            metric: metric.name().into(),
            mode: "query without mixture".into(),
            hint: format!("{metric} requires gmm index and a gmm-built query"),
        });
    }
    let opts = index.config().metric;
    let scored: Vec<(RankedItem, f64)> = index
        .entries()
        .par_iter()
        .filter(|e| e.item_id != query.item_id || query.item_id.is_empty())
        .map(|e| {
            let start = Instant::now();
            let d = distance(metric, query.metric_input(), e.metric_input(), &opts)
                .map_err(|err| err.for_item(&e.item_id))?;
            let secs = start.elapsed().as_secs_f64();
            Ok((
                RankedItem {
                    item_id: e.item_id.clone(),
                    category: e.category.clone(),
                    distance: d.value,
                },
                secs,
            ))
        })
        .collect::<Result<_>>()?;

    let total_pair_seconds = scored.iter().map(|(_, s)| s).sum();
    let mut ranked: Vec<RankedItem> = scored.into_iter().map(|(r, _)| r).collect();
    ranked.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then_with(|| a.item_id.cmp(&b.item_id))
    });
    Ok(RankingResult {
        query_id: query.item_id.clone(),
        metric,
        ranked,
        total_pair_seconds,
    })
}
