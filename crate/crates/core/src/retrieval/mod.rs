//! Signature indices: construction, ranking, evaluation and persistence.

mod bench;
mod eval;
mod persist;
mod rank;
mod synthetic;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{fit_gmm_traced, GmmConfig, GmmModel};
use crate::metrics::{MetricInput, MetricOptions};
use crate::signature::{
    moment_match, sample_covariance, FeatureMatrix, GaussianSignature, SourceTag,
};
use crate::smt::{self, AlphaChoice};

pub use bench::{bench_pairs, sample_pairs, BenchReport};
pub use eval::{average_precision_at, evaluate, precision_at, EvalReport, QueryReport};
pub use persist::{
    decode_index, encode_index, load_index, save_index, sidecar_path, INDEX_MAGIC, INDEX_VERSION,
};
pub use rank::{rank, RankedItem, RankingResult};
pub use synthetic::{category_name, gen_synthetic, item_name, SyntheticDataset, SyntheticParams};

/// How each item's signature is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexMode {
    /// Sample mean and covariance.
    Sample,
    /// Diagonal GMM collapsed by moment matching; the mixture is kept.
    Gmm,
    /// Shrunk SMT covariance around the sample mean.
    Smt,
}

impl IndexMode {
    pub fn code(self) -> u8 {
        match self {
            IndexMode::Sample => 0,
            IndexMode::Gmm => 1,
            IndexMode::Smt => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(IndexMode::Sample),
            1 => Some(IndexMode::Gmm),
            2 => Some(IndexMode::Smt),
            _ => None,
        }
    }

    pub fn source_tag(self) -> SourceTag {
        match self {
            IndexMode::Sample => SourceTag::Sample,
            IndexMode::Gmm => SourceTag::GmmMoment,
            IndexMode::Smt => SourceTag::Smt,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            IndexMode::Sample => "sample",
            IndexMode::Gmm => "gmm",
            IndexMode::Smt => "smt",
        }
    }
}

impl fmt::Display for IndexMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IndexMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sample" => Ok(IndexMode::Sample),
            "gmm" => Ok(IndexMode::Gmm),
            "smt" => Ok(IndexMode::Smt),
            other => Err(Error::InvalidArgument(format!(
                "unknown index mode `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum AlphaSetting {
    Fixed { alpha: f64 },
    CrossValidated { grid: Vec<f64>, folds: usize },
}

impl Default for AlphaSetting {
    fn default() -> Self {
        AlphaSetting::CrossValidated {
            grid: smt::default_alpha_grid(),
            folds: 3,
        }
    }
}

/// Every parameter that influences signature construction. Queries are
/// built with the same configuration as the index they are run against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    pub components: usize,
    pub gmm_max_iter: usize,
    pub gmm_tol: f64,
    /// SMT order; `None` means `round(2·D·log2 D)`.
    pub smt_order: Option<usize>,
    pub alpha: AlphaSetting,
    /// Centre the sample covariance on the column means.
    pub center: bool,
    /// ℓ2-normalise feature rows before anything else.
    pub normalize_rows: bool,
    pub seed: u64,
    pub metric: MetricOptions,
    /// Shrinkage weight actually used per item (smt mode).
    pub selected_alpha: BTreeMap<String, f64>,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            components: 64,
            gmm_max_iter: 100,
            gmm_tol: 1e-5,
            smt_order: None,
            alpha: AlphaSetting::default(),
            center: true,
            normalize_rows: false,
            seed: 0,
            metric: MetricOptions::default(),
            selected_alpha: BTreeMap::new(),
        }
    }
}

/// Feature matrix of one item together with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatures {
    pub item_id: String,
    pub category: String,
    pub features: FeatureMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub item_id: String,
    pub category: String,
    pub signature: GaussianSignature,
    pub gmm: Option<GmmModel>,
}

impl IndexEntry {
    pub fn metric_input(&self) -> MetricInput<'_> {
        MetricInput {
            signature: &self.signature,
            gmm: self.gmm.as_ref(),
        }
    }
}

/// An immutable, ordered collection of signatures sharing one dimension
/// and construction mode.
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureIndex {
    entries: Vec<IndexEntry>,
    dim: usize,
    mode: IndexMode,
    config: BuildConfig,
}

impl SignatureIndex {
    pub fn new(
        mode: IndexMode,
        dim: usize,
        entries: Vec<IndexEntry>,
        config: BuildConfig,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert(e.item_id.as_str()) {
                return Err(Error::DuplicateItem(e.item_id.clone()));
            }
            if e.signature.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    found: e.signature.dim(),
                }
                .for_item(&e.item_id));
            }
            match (&e.gmm, mode) {
                (Some(g), IndexMode::Gmm) if g.dim() != dim => {
                    return Err(Error::DimMismatch {
                        expected: dim,
                        found: g.dim(),
                    }
                    .for_item(&e.item_id))
                }
                (Some(_), IndexMode::Gmm) => {}
                (None, IndexMode::Gmm) => {
                    return Err(Error::InvalidArgument(format!(
                        "gmm index entry `{}` has no mixture",
                        e.item_id
                    )))
                }
                (Some(_), _) => {
                    return Err(Error::InvalidArgument(format!(
                        "entry `{}` carries a mixture in a {mode} index",
                        e.item_id
                    )))
                }
                (None, _) => {}
            }
        }
        Ok(Self {
            entries,
            dim,
            mode,
            config,
        })
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> IndexMode {
        self.mode
    }

    pub fn config(&self) -> &BuildConfig {
        &self.config
    }

    pub fn get(&self, item_id: &str) -> Option<&IndexEntry> {
        self.entries.iter().find(|e| e.item_id == item_id)
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.category.as_str())
    }

    /// Build a query entry from raw features with this index's configuration.
    pub fn make_query(
        &self,
        item_id: &str,
        category: &str,
        features: &FeatureMatrix,
    ) -> Result<IndexEntry> {
        if features.n_cols() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: features.n_cols(),
            });
        }
        Ok(build_entry(item_id, category, features, self.mode, &self.config)?.0)
    }

    /// `make_query` over many items in parallel, keeping input order.
    pub fn make_queries(&self, items: &[LabeledFeatures]) -> Result<Vec<IndexEntry>> {
        items
            .par_iter()
            .map(|it| {
                self.make_query(&it.item_id, &it.category, &it.features)
                    .map_err(|e| e.for_item(&it.item_id))
            })
            .collect()
    }
}

/// Signature (and mixture, in gmm mode) of one item. Also returns the
/// shrinkage weight used in smt mode.
pub fn build_entry(
    item_id: &str,
    category: &str,
    features: &FeatureMatrix,
    mode: IndexMode,
    config: &BuildConfig,
) -> Result<(IndexEntry, Option<f64>)> {
    let normalized;
    let f = if config.normalize_rows {
        let mut copy = features.clone();
        copy.normalize_rows();
        normalized = copy;
        &normalized
    } else {
        features
    };
    // one seed for every item: identical features give identical signatures
    // whatever the id or position
    let seed = config.seed;
    let (signature, gmm, alpha) = match mode {
        IndexMode::Sample => (sample_covariance(f, config.center)?, None, None),
        IndexMode::Gmm => {
            let fit = fit_gmm_traced(
                f,
                &GmmConfig {
                    k: config.components,
                    seed,
                    max_iter: config.gmm_max_iter,
                    tol: config.gmm_tol,
                },
            )?;
            (moment_match(&fit.model), Some(fit.model), None)
        }
        IndexMode::Smt => {
            let order = config
                .smt_order
                .unwrap_or_else(|| smt::default_order(f.n_cols()));
            let choice = match &config.alpha {
                AlphaSetting::Fixed { alpha } => AlphaChoice::Fixed(*alpha),
                AlphaSetting::CrossValidated { grid, folds } => AlphaChoice::CrossValidated {
                    grid: grid.clone(),
                    folds: *folds,
                    seed,
                },
            };
            let shrunk = smt::estimate(f, order, &choice)?;
            let mean = if config.center {
                f.column_means()
            } else {
                vec![0.0; f.n_cols()]
            };
            let sig = GaussianSignature::new(mean, shrunk.sigma, SourceTag::Smt)?;
            (sig, None, Some(shrunk.alpha))
        }
    };
    let signature = GaussianSignature {
        source: mode.source_tag(),
        ..signature
    };
    Ok((
        IndexEntry {
            item_id: item_id.to_string(),
            category: category.to_string(),
            signature,
            gmm,
        },
        alpha,
    ))
}

/// Build an index from labelled feature matrices. Items are processed in
/// parallel; the result keeps input order and is independent of scheduling.
pub fn build_index(
    items: &[LabeledFeatures],
    mode: IndexMode,
    config: &BuildConfig,
) -> Result<SignatureIndex> {
    let Some(first) = items.first() else {
        return Err(Error::InvalidArgument(
            "cannot build an index from zero items".into(),
        ));
    };
    let dim = first.features.n_cols();
    let mut seen = HashSet::with_capacity(items.len());
    for it in items {
        if !seen.insert(it.item_id.as_str()) {
            return Err(Error::DuplicateItem(it.item_id.clone()));
        }
        if it.features.n_cols() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                found: it.features.n_cols(),
            }
            .for_item(&it.item_id));
        }
    }
    let built: Vec<(IndexEntry, Option<f64>)> = items
        .par_iter()
        .map(|it| {
            build_entry(&it.item_id, &it.category, &it.features, mode, config)
                .map_err(|e| e.for_item(&it.item_id))
        })
        .collect::<Result<_>>()?;

    let mut config = config.clone();
    config.selected_alpha.clear();
    let mut entries = Vec::with_capacity(built.len());
    for (entry, alpha) in built {
        if let Some(a) = alpha {
            config.selected_alpha.insert(entry.item_id.clone(), a);
        }
        entries.push(entry);
    }
    SignatureIndex::new(mode, dim, entries, config)
}
