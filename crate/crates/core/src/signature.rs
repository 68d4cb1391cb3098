//! Per-item feature matrices and the Gaussian signatures derived from them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::GmmModel;
use crate::linalg::SymMatrix;

/// `n_rows` local feature vectors of dimension `n_cols`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n_rows: usize, n_cols: usize, values: Vec<f64>) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "feature matrix must be non-empty, got {n_rows}x{n_cols}"
            )));
        }
        if values.len() != n_rows * n_cols {
            return Err(Error::DimMismatch {
                expected: n_rows * n_cols,
                found: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite feature value at row {}, column {}",
                pos / n_cols,
                pos % n_cols
            )));
        }
        Ok(Self {
            n_rows,
            n_cols,
            values,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::InvalidArgument("ragged feature rows".into()));
        }
        Self::new(rows.len(), n_cols, rows.concat())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_cols)
    }

    /// Subset of rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut values = Vec::with_capacity(idx.len() * self.n_cols);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Self {
            n_rows: idx.len(),
            n_cols: self.n_cols,
            values,
        }
    }

    /// Scale every row to unit ℓ2 norm (all-zero rows are left alone).
    pub fn normalize_rows(&mut self) {
        for row in self.values.chunks_exact_mut(self.n_cols) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.n_cols];
        for row in self.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.n_rows as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    pub(crate) fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_rows, self.n_cols, &self.values)
    }
}

/// How a signature was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceTag {
    GmmMoment,
    Smt,
    Sample,
}

/// A single Gaussian `N(mean, cov)` summarising one item.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSignature {
    pub mean: Vec<f64>,
    pub cov: SymMatrix,
    pub source: SourceTag,
}

impl GaussianSignature {
    pub fn new(mean: Vec<f64>, cov: SymMatrix, source: SourceTag) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::DimMismatch {
                expected: cov.dim(),
                found: mean.len(),
            });
        }
        Ok(Self { mean, cov, source })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Collapse a mixture into the single Gaussian with the same first and
/// second moments:
///
/// ```text
/// μ̃ = Σ ω_a μ_a
/// Σ̃ = Σ ω_a (Σ_a + (μ_a − μ̃)(μ_a − μ̃)ᵀ)
/// ```
///
/// Component covariances are diagonal; the outer-product term makes `Σ̃` full.
pub fn moment_match(g: &GmmModel) -> GaussianSignature {
    let d = g.dim();
    let mut mean = vec![0.0; d];
    for (c, &w) in g.weights().iter().enumerate() {
        for (m, mu) in mean.iter_mut().zip(g.mean(c)) {
            *m += w * mu;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    let mut delta = vec![0.0; d];
    for (c, &w) in g.weights().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for ((dl, mu), m) in delta.iter_mut().zip(g.mean(c)).zip(&mean) {
            *dl = mu - m;
        }
        let vars = g.vars(c);
        for i in 0..d {
            cov[(i, i)] += w * vars[i];
            let wi = w * delta[i];
            for j in i..d {
                cov[(i, j)] += wi * delta[j];
            }
        }
    }
    for i in 0..d {
        for j in (i + 1)..d {
            cov[(j, i)] = cov[(i, j)];
        }
    }
    GaussianSignature {
        mean,
        cov: SymMatrix::new(cov).expect("square by construction"),
        source: SourceTag::GmmMoment,
    }
}

/// Column means plus the `1/n`-normalised second moment, centred on the
/// column means when `center` is set and about the origin otherwise.
pub fn sample_covariance(f: &FeatureMatrix, center: bool) -> Result<GaussianSignature> {
    if f.n_rows() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            found: f.n_rows(),
        });
    }
    let mean = f.column_means();
    let mut x = f.to_dmatrix();
    if center {
        for (j, m) in mean.iter().enumerate() {
            x.column_mut(j).add_scalar_mut(-m);
        }
    }
    let cov = x.tr_mul(&x) / f.n_rows() as f64;
    Ok(GaussianSignature {
        mean,
        cov: SymMatrix::new(cov)?,
        source: SourceTag::Sample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn feature_matrix_rejects_bad_input() {
        assert!(FeatureMatrix::new(0, 3, vec![]).is_err());
        assert!(FeatureMatrix::new(2, 2, vec![1.0; 3]).is_err());
        let err = FeatureMatrix::new(2, 2, vec![1.0, 2.0, f64::NAN, 0.0]).unwrap_err();
        assert!(err.to_string().contains("row 1, column 0"), "{err}");
    }

    #[test]
    fn normalize_rows_unit_norm() {
        let mut f = FeatureMatrix::from_rows(&[vec![3.0, 4.0], vec![0.0, 0.0]]).unwrap();
        f.normalize_rows();
        assert_eq!(f.row(0), &[0.6, 0.8]);
        assert_eq!(f.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn sample_covariance_centered_example() {
        let f = FeatureMatrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let s = sample_covariance(&f, true).unwrap();
        assert_eq!(s.mean, vec![0.0, 0.0]);
        assert_eq!(s.cov, SymMatrix::from_diagonal(&[1.0, 0.0]));
        assert_eq!(s.source, SourceTag::Sample);
    }

    #[test]
    fn sample_covariance_needs_two_rows() {
        let f = FeatureMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(matches!(
            sample_covariance(&f, true),
            Err(Error::InsufficientData {
                needed: 2,
                found: 1
            })
        ));
    }

    fn naive_cov(f: &FeatureMatrix, center: bool) -> (Vec<f64>, Vec<Vec<f64>>) {
        let (n, d) = (f.n_rows(), f.n_cols());
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                mean[j] += f.row(i)[j];
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut cov = vec![vec![0.0; d]; d];
        for i in 0..n {
            for a in 0..d {
                for b in 0..d {
                    let (ca, cb) = if center {
                        (mean[a], mean[b])
                    } else {
                        (0.0, 0.0)
                    };
                    cov[a][b] += (f.row(i)[a] - ca) * (f.row(i)[b] - cb);
                }
            }
        }
        for row in &mut cov {
            for v in row.iter_mut() {
                *v /= n as f64;
            }
        }
        (mean, cov)
    }

    fn random_features(n: usize, d: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..n * d).map(|_| rng.random_range(-2.0..3.0)).collect();
        FeatureMatrix::new(n, d, values).unwrap()
    }

    #[test]
    fn sample_covariance_matches_loop_oracle() {
        let f = random_features(100, 4, 9);
        for center in [true, false] {
            let s = sample_covariance(&f, center).unwrap();
            let (mean, cov) = naive_cov(&f, center);
            for j in 0..4 {
                assert!((s.mean[j] - mean[j]).abs() <= 1e-12);
                for k in 0..4 {
                    assert!((s.cov.get(j, k) - cov[j][k]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn sample_covariance_row_permutation_invariant() {
        let f = random_features(60, 5, 21);
        let mut idx: Vec<usize> = (0..60).collect();
        idx.reverse();
        idx.swap(3, 40);
        let a = sample_covariance(&f, true).unwrap();
        let b = sample_covariance(&f.select_rows(&idx), true).unwrap();
        let diff = (a.cov.as_matrix() - b.cov.as_matrix()).amax();
        assert!(diff <= 1e-12);
    }

    #[test]
    fn moment_match_single_component() {
        let g = GmmModel::new(vec![1.0], vec![1.0, -2.0], vec![0.5, 3.0], 2).unwrap();
        let s = moment_match(&g);
        assert_eq!(s.mean, vec![1.0, -2.0]);
        assert_eq!(s.cov, SymMatrix::from_diagonal(&[0.5, 3.0]));
        assert_eq!(s.source, SourceTag::GmmMoment);
    }

    #[test]
    fn moment_match_two_component_hand_case() {
        // ½(1 + 1) + ½(1 + 1) = 2
        let g = GmmModel::new(vec![0.5, 0.5], vec![-1.0, 1.0], vec![1.0, 1.0], 1).unwrap();
        let s = moment_match(&g);
        assert_eq!(s.mean, vec![0.0]);
        assert_eq!(s.cov.get(0, 0), 2.0);
    }

    fn random_gmm(k: usize, d: usize, rng: &mut impl Rng) -> GmmModel {
        let mut w: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        let means = (0..k * d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let vars = (0..k * d).map(|_| rng.random_range(0.2..2.0)).collect();
        GmmModel::new(w, means, vars, d).unwrap()
    }

    #[test]
    fn moment_match_permutation_invariant_and_scatter_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let g = random_gmm(5, 4, &mut rng);
            let perm = [3, 0, 4, 2, 1];
            let d = 4;
            let w: Vec<f64> = perm.iter().map(|&c| g.weights()[c]).collect();
            let m: Vec<f64> = perm.iter().flat_map(|&c| g.mean(c).to_vec()).collect();
            let v: Vec<f64> = perm.iter().flat_map(|&c| g.vars(c).to_vec()).collect();
            let gp = GmmModel::new(w, m, v, d).unwrap();
            let a = moment_match(&g);
            let b = moment_match(&gp);
            for j in 0..d {
                assert!((a.mean[j] - b.mean[j]).abs() <= 1e-12);
            }
            assert!((a.cov.as_matrix() - b.cov.as_matrix()).amax() <= 1e-12);

            // Σ̃ − Σ ω_a diag(Σ_a) is the between-component scatter.
            let mut within = vec![0.0; d];
            for c in 0..5 {
                for j in 0..d {
                    within[j] += g.weights()[c] * g.vars(c)[j];
                }
            }
            let mut scatter = a.cov.as_matrix().clone();
            for j in 0..d {
                scatter[(j, j)] -= within[j];
            }
            let vals = crate::linalg::eigvalsh(&SymMatrix::new(scatter).unwrap()).unwrap();
            assert!(vals.iter().all(|&l| l >= -1e-12), "{vals:?}");
        }
    }
}
