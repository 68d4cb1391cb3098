//! Sparse Matrix Transform covariance estimation.
//!
//! The eigenvector matrix of a sample covariance `S` is approximated by a
//! product of `K` Givens rotations chosen greedily: at each step the pair
//! `(i, j)` with the largest normalised correlation `s_ij² / (s_ii s_jj)` is
//! rotated out, which shrinks the product of the diagonal entries of the
//! working matrix by the factor `1 − s_ij² / (s_ii s_jj)`. The estimate is
//! then shrunk towards `S` with a cross-validated weight.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, spd_repair, SymMatrix};
use crate::signature::{sample_covariance, FeatureMatrix};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Pairs whose criterion falls below this are numerically uncorrelated; the
/// fit stops once the best remaining pair is at this level.
const NEGLIGIBLE_CORRELATION: f64 = 1e-30;

/// Plane rotation acting on coordinates `i < j`. As a matrix it is the
/// identity except for `E[i][i] = E[j][j] = cos θ`, `E[i][j] = −sin θ` and
/// `E[j][i] = sin θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GivensRotation {
    pub i: usize,
    pub j: usize,
    pub theta: f64,
}

impl GivensRotation {
    /// The rotation that annihilates `s_ij` under `Eᵀ S E`.
    pub fn annihilating(s: &DMatrix<f64>, i: usize, j: usize) -> Self {
        let theta = 0.5 * f64::atan2(2.0 * s[(i, j)], s[(i, i)] - s[(j, j)]);
        Self { i, j, theta }
    }

    /// `X ← X · E`
    pub fn apply_right(&self, x: &mut DMatrix<f64>) {
        let (sin, cos) = self.theta.sin_cos();
        for r in 0..x.nrows() {
            let xi = x[(r, self.i)];
            let xj = x[(r, self.j)];
            x[(r, self.i)] = cos * xi + sin * xj;
            x[(r, self.j)] = -sin * xi + cos * xj;
        }
    }

    /// `S ← Eᵀ · S · E` for symmetric `S`. The rotated-out entry is set to
    /// exactly zero.
    pub fn conjugate(&self, s: &mut DMatrix<f64>) {
        let (p, q) = (self.i, self.j);
        let (sin, cos) = self.theta.sin_cos();
        let n = s.nrows();
        let (a, b, d) = (s[(p, p)], s[(p, q)], s[(q, q)]);
        for r in 0..n {
            if r == p || r == q {
                continue;
            }
            let srp = s[(r, p)];
            let srq = s[(r, q)];
            let new_p = cos * srp + sin * srq;
            let new_q = -sin * srp + cos * srq;
            s[(r, p)] = new_p;
            s[(p, r)] = new_p;
            s[(r, q)] = new_q;
            s[(q, r)] = new_q;
        }
        let cs = cos * sin;
        s[(p, p)] = cos * cos * a + 2.0 * cs * b + sin * sin * d;
        s[(q, q)] = sin * sin * a - 2.0 * cs * b + cos * cos * d;
        s[(p, q)] = 0.0;
        s[(q, p)] = 0.0;
    }
}

/// `Ê = E_1 E_2 … E_K` together with `Λ̂ = diag(Êᵀ S Ê)`.
#[derive(Debug, Clone)]
pub struct SmtFactorization {
    pub rotations: Vec<GivensRotation>,
    pub lambda: Vec<f64>,
    /// `log Π diag(S_k)` before the first rotation and after each one.
    pub log_objective: Vec<f64>,
    /// Off-diagonal Frobenius norm of the working matrix, same indexing as
    /// `log_objective`.
    pub off_diagonal: Vec<f64>,
}

impl SmtFactorization {
    pub fn order_k(&self) -> usize {
        self.rotations.len()
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn eigenvectors(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut e = DMatrix::identity(n, n);
        for r in &self.rotations {
            r.apply_right(&mut e);
        }
        e
    }

    /// `Σ_SMT = Ê · diag(λ) · Êᵀ`
    pub fn covariance(&self) -> SymMatrix {
        let e = self.eigenvectors();
        let mut scaled = e.clone();
        for (k, &l) in self.lambda.iter().enumerate() {
            scaled.column_mut(k).scale_mut(l);
        }
        SymMatrix::new(scaled * e.transpose()).expect("square by construction")
    }
}

/// Pair-selection strategy. Both produce the same rotation sequence;
/// `FullScan` rescans all pairs each step and serves as the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairSearch {
    Incremental,
    FullScan,
}

/// Default SMT order `round(2 · D · log2 D)`.
pub fn default_order(dim: usize) -> usize {
    if dim < 2 {
        0
    } else {
        (2.0 * dim as f64 * (dim as f64).log2()).round() as usize
    }
}

pub fn smt_fit(s: &SymMatrix, k_order: usize) -> Result<SmtFactorization> {
    smt_fit_with(s, k_order, PairSearch::Incremental)
}

pub fn smt_fit_with(s: &SymMatrix, k_order: usize, search: PairSearch) -> Result<SmtFactorization> {
    let n = s.dim();
    let mut work = s.as_matrix().clone();
    if let Some(index) = (0..n).find(|&i| !(work[(i, i)] > 0.0)) {
        return Err(Error::DegenerateDiagonal { index });
    }

    let log_obj = |w: &DMatrix<f64>| (0..n).map(|i| w[(i, i)].ln()).sum::<f64>();
    let off = |w: &DMatrix<f64>| {
        let mut acc = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                acc += 2.0 * w[(i, j)] * w[(i, j)];
            }
        }
        acc.sqrt()
    };

    let mut rotations = Vec::with_capacity(k_order);
    let mut log_objective = vec![log_obj(&work)];
    let mut off_diagonal = vec![off(&work)];
    let mut tracker = (search == PairSearch::Incremental && n >= 2).then(|| RowMaxima::new(&work));

    for _ in 0..k_order {
        if n < 2 {
            break;
        }
        let (i, j, best) = match tracker.as_ref() {
            Some(t) => t.best(),
            None => full_scan(&work),
        };
        if !(best > NEGLIGIBLE_CORRELATION) {
            break;
        }
        let rot = GivensRotation::annihilating(&work, i, j);
        rot.conjugate(&mut work);
        if let Some(t) = tracker.as_mut() {
            t.update(&work, i, j);
        }
        rotations.push(rot);
        log_objective.push(log_obj(&work));
        off_diagonal.push(off(&work));
    }

    Ok(SmtFactorization {
        rotations,
        lambda: (0..n).map(|i| work[(i, i)]).collect(),
        log_objective,
        off_diagonal,
    })
}

fn criterion(s: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    let den = s[(i, i)] * s[(j, j)];
    if den > 0.0 {
        s[(i, j)] * s[(i, j)] / den
    } else {
        0.0
    }
}

/// Lexicographically first pair among those with the largest criterion.
fn full_scan(s: &DMatrix<f64>) -> (usize, usize, f64) {
    let n = s.nrows();
    let mut best = (0, 1, f64::NEG_INFINITY);
    for i in 0..n {
        for j in (i + 1)..n {
            let c = criterion(s, i, j);
            if c > best.2 {
                best = (i, j, c);
            }
        }
    }
    best
}

/// Per-row maxima of the criterion over the upper triangle. A rotation on
/// `(p, q)` only touches rows/columns `p` and `q`, so only rows `p`, `q` and
/// rows whose maximum sat in column `p` or `q` need a rescan.
struct RowMaxima {
    best: Vec<(f64, usize)>,
}

impl RowMaxima {
    fn new(s: &DMatrix<f64>) -> Self {
        let n = s.nrows();
        let mut t = Self {
            best: vec![(f64::NEG_INFINITY, 0); n],
        };
        for i in 0..n {
            t.rescan(s, i);
        }
        t
    }

    fn rescan(&mut self, s: &DMatrix<f64>, i: usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for j in (i + 1)..s.nrows() {
            let c = criterion(s, i, j);
            if c > best.0 {
                best = (c, j);
            }
        }
        self.best[i] = best;
    }

    fn offer(&mut self, s: &DMatrix<f64>, r: usize, col: usize) {
        let c = criterion(s, r, col);
        let (cur, cur_j) = self.best[r];
        if c > cur || (c == cur && col < cur_j) {
            self.best[r] = (c, col);
        }
    }

    fn update(&mut self, s: &DMatrix<f64>, p: usize, q: usize) {
        self.rescan(s, p);
        self.rescan(s, q);
        for r in 0..q {
            if r == p {
                continue;
            }
            let bj = self.best[r].1;
            if bj == p || bj == q {
                self.rescan(s, r);
            } else {
                if r < p {
                    self.offer(s, r, p);
                }
                self.offer(s, r, q);
            }
        }
    }

    fn best(&self) -> (usize, usize, f64) {
        let mut out = (0, 1, f64::NEG_INFINITY);
        for (i, &(c, j)) in self.best.iter().enumerate() {
            if c > out.2 {
                out = (i, j, c);
            }
        }
        out
    }
}

/// SMT covariance of the centred sample covariance of `f`.
pub fn smt_covariance(f: &FeatureMatrix, k_order: usize) -> Result<SymMatrix> {
    let s = sample_covariance(f, true)?.cov;
    Ok(smt_fit(&s, k_order)?.covariance())
}

/// `α · Σ_SMT + (1 − α) · S`
pub fn shrink(s_sample: &SymMatrix, s_smt: &SymMatrix, alpha: f64) -> Result<SymMatrix> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidShrinkage(alpha));
    }
    if s_sample.dim() != s_smt.dim() {
        return Err(Error::DimMismatch {
            expected: s_sample.dim(),
            found: s_smt.dim(),
        });
    }
    if alpha == 0.0 {
        return Ok(s_sample.clone());
    }
    if alpha == 1.0 {
        return Ok(s_smt.clone());
    }
    SymMatrix::new(s_smt.as_matrix() * alpha + s_sample.as_matrix() * (1.0 - alpha))
}

/// Final shrunk estimate and the parts it was assembled from.
#[derive(Debug, Clone)]
pub struct ShrunkCovariance {
    pub sigma: SymMatrix,
    pub alpha: f64,
    pub factorization: SmtFactorization,
    pub sample: SymMatrix,
}

impl ShrunkCovariance {
    pub fn smt(&self) -> SymMatrix {
        self.factorization.covariance()
    }
}

/// How the shrinkage weight is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum AlphaChoice {
    Fixed(f64),
    CrossValidated {
        grid: Vec<f64>,
        folds: usize,
        seed: u64,
    },
}

impl AlphaChoice {
    pub fn default_cv(seed: u64) -> Self {
        AlphaChoice::CrossValidated {
            grid: default_alpha_grid(),
            folds: 3,
            seed,
        }
    }
}

/// `{0, 0.1, …, 1.0}`
pub fn default_alpha_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// SMT factorisation only needs positive diagonals; columns with zero sample
/// variance get the relative eigenvalue floor.
fn fit_ready(s: &SymMatrix) -> Result<SymMatrix> {
    if s.diagonal().iter().all(|&d| d > 0.0) {
        Ok(s.clone())
    } else {
        spd_repair(s, s.default_eps())
    }
}

/// Centred sample covariance → SMT → shrinkage.
pub fn estimate(
    f: &FeatureMatrix,
    k_order: usize,
    alpha: &AlphaChoice,
) -> Result<ShrunkCovariance> {
    let sample = sample_covariance(f, true)?.cov;
    let factorization = smt_fit(&fit_ready(&sample)?, k_order)?;
    let alpha = match alpha {
        AlphaChoice::Fixed(a) => *a,
        AlphaChoice::CrossValidated { grid, folds, seed } => {
            select_alpha(f, k_order, grid, *folds, *seed)?
        }
    };
    let sigma = shrink(&sample, &factorization.covariance(), alpha)?;
    Ok(ShrunkCovariance {
        sigma,
        alpha,
        factorization,
        sample,
    })
}

/// Mean held-out log-likelihood per grid value.
pub fn alpha_scores(
    f: &FeatureMatrix,
    k_order: usize,
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if folds < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 folds, got {folds}"
        )));
    }
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty shrinkage grid".into()));
    }
    if let Some(&bad) = grid.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::InvalidShrinkage(bad));
    }
    let n = f.n_rows();
    // every training split needs two rows for a covariance
    let needed = folds.max(3);
    if n < needed {
        return Err(Error::InsufficientData { needed, found: n });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let per_fold: Vec<Vec<f64>> = (0..folds)
        .into_par_iter()
        .map(|fold| -> Result<Vec<f64>> {
            let (lo, hi) = (fold * n / folds, (fold + 1) * n / folds);
            let held: Vec<usize> = order[lo..hi].to_vec();
            let train: Vec<usize> = order[..lo].iter().chain(&order[hi..]).copied().collect();
            let train_f = f.select_rows(&train);
            let s = sample_covariance(&train_f, true)?;
            let smt = smt_fit(&fit_ready(&s.cov)?, k_order)?.covariance();
            let held_f = f.select_rows(&held);
            grid.iter()
                .map(|&a| {
                    Ok(heldout_log_likelihood(
                        &held_f,
                        &s.mean,
                        &shrink(&s.cov, &smt, a)?,
                    ))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    Ok((0..grid.len())
        .map(|g| per_fold.iter().map(|scores| scores[g]).sum::<f64>() / folds as f64)
        .collect())
}

/// Cross-validated shrinkage weight: the grid value with the highest mean
/// held-out Gaussian log-likelihood, ties going to the larger weight.
pub fn select_alpha(
    f: &FeatureMatrix,
    k_order: usize,
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<f64> {
    let scores = alpha_scores(f, k_order, grid, folds, seed)?;
    let mut best = (grid[0], scores[0]);
    for (&a, &s) in grid.iter().zip(&scores).skip(1) {
        if s > best.1 || (s == best.1 && a > best.0) {
            best = (a, s);
        }
    }
    Ok(best.0)
}

/// Mean per-row log-density of `rows` under `N(mean, cov)`; `-inf` when `cov`
/// is not positive definite.
fn heldout_log_likelihood(rows: &FeatureMatrix, mean: &[f64], cov: &SymMatrix) -> f64 {
    let Ok(chol) = cholesky(cov) else {
        return f64::NEG_INFINITY;
    };
    let d = mean.len() as f64;
    let log_det = chol.log_det();
    let mut total = 0.0;
    let mut z = vec![0.0; mean.len()];
    for x in rows.rows() {
        for ((zi, xi), mi) in z.iter_mut().zip(x).zip(mean) {
            *zi = xi - mi;
        }
        total += -0.5 * (d * LN_2PI + log_det + chol.mahalanobis_sq(&z));
    }
    total / rows.n_rows() as f64
}
