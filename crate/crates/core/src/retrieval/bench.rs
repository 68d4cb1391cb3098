use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::rank::check_compatible;
use super::SignatureIndex;
use crate::error::{Error, Result};
use crate::metrics::{distance, MetricKind};

/// Timings of one distance evaluation per sampled entry pair.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub metric: MetricKind,
    pub pairs: Vec<(usize, usize)>,
    pub seconds: Vec<f64>,
}

impl BenchReport {
    pub fn mean(&self) -> f64 {
        self.seconds.iter().sum::<f64>() / self.seconds.len() as f64
    }

    fn sorted(&self) -> Vec<f64> {
        let mut s = self.seconds.clone();
        s.sort_by(f64::total_cmp);
        s
    }

    /// Nearest-rank percentile, `q` in [0, 1].
    pub fn percentile(&self, q: f64) -> f64 {
        let s = self.sorted();
        let rank = (q * s.len() as f64).ceil() as usize;
        s[rank.clamp(1, s.len()) - 1]
    }

    pub fn median(&self) -> f64 {
        let s = self.sorted();
        let n = s.len();
        if n % 2 == 1 {
            s[n / 2]
        } else {
            0.5 * (s[n / 2 - 1] + s[n / 2])
        }
    }

    /// FNV-1a over the sampled pair indices; identical for identical seeds.
    pub fn pair_digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &(i, j) in &self.pairs {
            for b in (i as u64)
                .to_le_bytes()
                .into_iter()
                .chain((j as u64).to_le_bytes())
            {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

/// Sample `count` ordered pairs of distinct entries.
pub fn sample_pairs(n_entries: usize, count: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let i = rng.random_range(0..n_entries);
            let mut j = rng.random_range(0..n_entries - 1);
            if j >= i {
                j += 1;
            }
            (i, j)
        })
        .collect()
}

/// Time `metric` on `pairs` seeded random entry pairs, sequentially.
pub fn bench_pairs(
    index: &SignatureIndex,
    metric: MetricKind,
    pairs: usize,
    seed: u64,
) -> Result<BenchReport> {
    check_compatible(index, metric)?;
    if pairs == 0 {
        return Err(Error::InvalidArgument("need at least one pair".into()));
    }
    if index.len() < 2 {
        return Err(Error::InvalidArgument(
            "benchmarking needs an index with at least 2 entries".into(),
        ));
    }
    let pairs = sample_pairs(index.len(), pairs, seed);
    let opts = index.config().metric;
    let entries = index.entries();
    let mut seconds = Vec::with_capacity(pairs.len());
    for &(i, j) in &pairs {
        let start = Instant::now();
        let d = distance(
            metric,
            entries[i].metric_input(),
            entries[j].metric_input(),
            &opts,
        )
        .map_err(|e| e.for_item(&entries[j].item_id))?;
        seconds.push(start.elapsed().as_secs_f64());
        std::hint::black_box(d);
    }
    Ok(BenchReport {
        metric,
        pairs,
        seconds,
    })
}
