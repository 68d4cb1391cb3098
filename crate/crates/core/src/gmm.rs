//! Diagonal-covariance Gaussian mixture models fitted by EM.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signature::FeatureMatrix;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative variance floor: each component variance is kept at or above this
/// fraction of the global per-dimension variance.
pub const VARIANCE_FLOOR_FRACTION: f64 = 1e-4;

const KMEANS_ITERS: usize = 5;

/// K-component mixture with diagonal component covariances. Means and
/// variances are stored row-major, one row of `dim` values per component.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    weights: Vec<f64>,
    means: Vec<f64>,
    diag_vars: Vec<f64>,
    dim: usize,
}

impl GmmModel {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<f64>,
        diag_vars: Vec<f64>,
        dim: usize,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 || dim == 0 {
            return Err(Error::InvalidArgument(
                "mixture needs at least one component and dimension".into(),
            ));
        }
        if means.len() != k * dim {
            return Err(Error::DimMismatch {
                expected: k * dim,
                found: means.len(),
            });
        }
        if diag_vars.len() != k * dim {
            return Err(Error::DimMismatch {
                expected: k * dim,
                found: diag_vars.len(),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(
                "mixture weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        if diag_vars.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "component variances must be positive".into(),
            ));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument(
                "component means must be finite".into(),
            ));
        }
        Ok(Self {
            weights,
            means,
            diag_vars,
            dim,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, c: usize) -> &[f64] {
        &self.means[c * self.dim..(c + 1) * self.dim]
    }

    pub fn vars(&self, c: usize) -> &[f64] {
        &self.diag_vars[c * self.dim..(c + 1) * self.dim]
    }

    pub fn means_flat(&self) -> &[f64] {
        &self.means
    }

    pub fn vars_flat(&self) -> &[f64] {
        &self.diag_vars
    }

    /// Per-component log `ω_c N(x | μ_c, diag(v_c))`.
    fn log_joint(&self, x: &[f64], log_norm: &[f64], out: &mut [f64]) {
        for c in 0..self.k() {
            let w = self.weights[c];
            if w <= 0.0 {
                out[c] = f64::NEG_INFINITY;
                continue;
            }
            let mu = self.mean(c);
            let var = self.vars(c);
            let mut q = 0.0;
            for d in 0..self.dim {
                let z = x[d] - mu[d];
                q += z * z / var[d];
            }
            out[c] = w.ln() + log_norm[c] - 0.5 * q;
        }
    }

    fn log_norms(&self) -> Vec<f64> {
        (0..self.k())
            .map(|c| {
                -0.5 * (self.dim as f64 * LN_2PI + self.vars(c).iter().map(|v| v.ln()).sum::<f64>())
            })
            .collect()
    }

    /// Total log-likelihood of the rows of `f` under the mixture.
    pub fn log_likelihood(&self, f: &FeatureMatrix) -> f64 {
        let log_norm = self.log_norms();
        let mut buf = vec![0.0; self.k()];
        f.rows()
            .map(|x| {
                self.log_joint(x, &log_norm, &mut buf);
                log_sum_exp(&buf)
            })
            .sum()
    }
}

/// `log Σ exp(v_i)` with the max shifted out. Returns `-inf` for an empty or
/// all-`-inf` input.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            k: 64,
            seed: 0,
            max_iter: 100,
            tol: 1e-5,
        }
    }
}

/// A fitted mixture plus the EM trace.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Log-likelihood of the initial parameters followed by one entry per EM
    /// iteration.
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
}

impl GmmFit {
    pub fn iterations(&self) -> usize {
        self.log_likelihood.len().saturating_sub(1)
    }

    /// Largest decrease between consecutive log-likelihoods (0 when the trace
    /// is non-decreasing).
    pub fn max_decrease(&self) -> f64 {
        self.log_likelihood
            .windows(2)
            .map(|w| (w[0] - w[1]).max(0.0))
            .fold(0.0, f64::max)
    }
}

pub fn fit_gmm(
    f: &FeatureMatrix,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<GmmModel> {
    Ok(fit_gmm_traced(
        f,
        &GmmConfig {
            k,
            seed,
            max_iter,
            tol,
        },
    )?
    .model)
}

/// EM for a diagonal-covariance mixture: k-means++ seeding on a subsample of
/// `min(n, 10k)` rows, a few Lloyd iterations on all rows, then EM until the
/// relative log-likelihood change drops below `tol` or `max_iter` is hit.
pub fn fit_gmm_traced(f: &FeatureMatrix, cfg: &GmmConfig) -> Result<GmmFit> {
    let n = f.n_rows();
    let d = f.n_cols();
    let k = cfg.k;
    if k == 0 || k > n {
        return Err(Error::InvalidComponentCount { k, rows: n });
    }

    let global_mean = f.column_means();
    let mut global_var = vec![0.0; d];
    for row in f.rows() {
        for j in 0..d {
            let z = row[j] - global_mean[j];
            global_var[j] += z * z;
        }
    }
    global_var.iter_mut().for_each(|v| *v /= n as f64);
    let first = f.row(0);
    if f.rows().all(|r| r == first) {
        return Err(Error::DegenerateData(
            "all feature rows are identical".into(),
        ));
    }
    let positive: Vec<f64> = global_var.iter().copied().filter(|v| *v > 0.0).collect();
    let fallback = positive.iter().sum::<f64>() / positive.len() as f64;
    let floor: Vec<f64> = global_var
        .iter()
        .map(|&v| VARIANCE_FLOOR_FRACTION * if v > 0.0 { v } else { fallback })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers = kmeans_init(f, k, &mut rng);
    let mut model = init_from_centers(f, centers, &global_var, &floor);

    let (mut ll, mut resp) = e_step(&model, f);
    let mut trace = vec![ll];
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        m_step(&mut model, f, &resp, &floor);
        let (new_ll, new_resp) = e_step(&model, f);
        debug_assert!(
            new_ll >= ll - 1e-8 * ll.abs().max(1.0),
            "EM log-likelihood decreased: {ll} -> {new_ll}"
        );
        trace.push(new_ll);
        resp = new_resp;
        let rel = (new_ll - ll).abs() / ll.abs().max(f64::MIN_POSITIVE);
        ll = new_ll;
        if rel < cfg.tol {
            converged = true;
            break;
        }
    }

    // Absorb summation round-off so the weights sum to 1 at the invariant's
    // tolerance.
    let total: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= total);

    Ok(GmmFit {
        model,
        log_likelihood: trace,
        converged,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let dist = sq_dist(x, center);
        if dist < best.1 {
            best = (c, dist);
        }
    }
    best
}

fn kmeans_init(f: &FeatureMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = f.n_rows();
    let m = n.min(10 * k);
    let mut sub: Vec<usize> = sample(rng, n, m).into_vec();
    sub.sort_unstable();

    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(f.row(sub[rng.random_range(0..m)]).to_vec());
    let mut d2: Vec<f64> = sub
        .iter()
        .map(|&i| sq_dist(f.row(i), &centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = m - 1;
            for (pos, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = pos;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..m)
        };
        let c = f.row(sub[pick]).to_vec();
        for (slot, &i) in d2.iter_mut().zip(&sub) {
            *slot = slot.min(sq_dist(f.row(i), &c));
        }
        centers.push(c);
    }

    let d = f.n_cols();
    for _ in 0..KMEANS_ITERS {
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for x in f.rows() {
            let (c, _) = nearest(x, &centers);
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(x) {
                *s += v;
            }
        }
        for c in 0..k {
            // empty clusters keep their previous center
            if counts[c] > 0 {
                for (ctr, s) in centers[c].iter_mut().zip(&sums[c]) {
                    *ctr = s / counts[c] as f64;
                }
            }
        }
    }
    centers
}

fn init_from_centers(
    f: &FeatureMatrix,
    centers: Vec<Vec<f64>>,
    global_var: &[f64],
    floor: &[f64],
) -> GmmModel {
    let k = centers.len();
    let d = f.n_cols();
    let mut counts = vec![0usize; k];
    let mut sq = vec![vec![0.0; d]; k];
    for x in f.rows() {
        let (c, _) = nearest(x, &centers);
        counts[c] += 1;
        for j in 0..d {
            let z = x[j] - centers[c][j];
            sq[c][j] += z * z;
        }
    }
    // empty clusters get a small share so every component starts alive
    let raw: Vec<f64> = counts.iter().map(|&c| c.max(1) as f64).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    let mut vars = Vec::with_capacity(k * d);
    for c in 0..k {
        for j in 0..d {
            let v = if counts[c] >= 2 {
                sq[c][j] / counts[c] as f64
            } else {
                global_var[j]
            };
            vars.push(v.max(floor[j]));
        }
    }
    GmmModel {
        weights,
        means: centers.concat(),
        diag_vars: vars,
        dim: d,
    }
}

/// Responsibilities (row-major n×k) and total log-likelihood.
fn e_step(model: &GmmModel, f: &FeatureMatrix) -> (f64, Vec<f64>) {
    let k = model.k();
    let log_norm = model.log_norms();
    let mut resp = vec![0.0; f.n_rows() * k];
    let row_ll: Vec<f64> = resp
        .par_chunks_mut(k)
        .zip(f.values().par_chunks(f.n_cols()))
        .map(|(r, x)| {
            model.log_joint(x, &log_norm, r);
            let lse = log_sum_exp(r);
            r.iter_mut().for_each(|v| *v = (*v - lse).exp());
            lse
        })
        .collect();
    (row_ll.iter().sum(), resp)
}

fn m_step(model: &mut GmmModel, f: &FeatureMatrix, resp: &[f64], floor: &[f64]) {
    let k = model.k();
    let d = model.dim;
    let n = f.n_rows();
    let mut nk = vec![0.0; k];
    let mut sum_x = vec![0.0; k * d];
    for (i, x) in f.rows().enumerate() {
        let r = &resp[i * k..(i + 1) * k];
        for c in 0..k {
            let rc = r[c];
            if rc == 0.0 {
                continue;
            }
            nk[c] += rc;
            let acc = &mut sum_x[c * d..(c + 1) * d];
            for j in 0..d {
                acc[j] += rc * x[j];
            }
        }
    }
    for c in 0..k {
        if nk[c] > 0.0 {
            for j in 0..d {
                model.means[c * d + j] = sum_x[c * d + j] / nk[c];
            }
        }
    }
    let mut sum_sq = vec![0.0; k * d];
    for (i, x) in f.rows().enumerate() {
        let r = &resp[i * k..(i + 1) * k];
        for c in 0..k {
            let rc = r[c];
            if rc == 0.0 {
                continue;
            }
            let mu = &model.means[c * d..(c + 1) * d];
            let acc = &mut sum_sq[c * d..(c + 1) * d];
            for j in 0..d {
                let z = x[j] - mu[j];
                acc[j] += rc * z * z;
            }
        }
    }
    for c in 0..k {
        model.weights[c] = nk[c] / n as f64;
        if nk[c] > 0.0 {
            for j in 0..d {
                model.diag_vars[c * d + j] = (sum_sq[c * d + j] / nk[c]).max(floor[j]);
            }
        }
    }
}
