use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::LabeledFeatures;
use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::signature::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticParams {
    pub categories: usize,
    pub items_per_category: usize,
    pub rows: usize,
    pub dim: usize,
    pub separation: f64,
    pub anisotropy: f64,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            categories: 5,
            items_per_category: 10,
            rows: 500,
            dim: 16,
            separation: 8.0,
            anisotropy: 4.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub items: Vec<LabeledFeatures>,
    pub category_names: Vec<String>,
    pub category_means: Vec<Vec<f64>>,
    pub category_covs: Vec<SymMatrix>,
}

pub fn category_name(c: usize) -> String {
    format!("cat{c:02}")
}

pub fn item_name(c: usize, i: usize) -> String {
    format!("cat{c:02}_item{i:03}")
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of R's diagonal folded into Q.
fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let qr = gaussian_matrix(rng, d, d).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    loop {
        let v: DVector<f64> = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Eigenvalues spaced geometrically from 1 to `anisotropy`.
fn spectrum(d: usize, anisotropy: f64) -> Vec<f64> {
    if d == 1 {
        return vec![1.0];
    }
    (0..d)
        .map(|i| anisotropy.powf(i as f64 / (d - 1) as f64))
        .collect()
}

/// Draw a labelled dataset with one ground-truth Gaussian per category.
/// Values are rounded to f32 so that the dataset survives a DFV1 round trip
/// unchanged.
pub fn gen_synthetic(p: &SyntheticParams) -> Result<SyntheticDataset> {
    if p.categories == 0 || p.items_per_category == 0 || p.rows == 0 || p.dim == 0 {
        return Err(Error::InvalidArgument(
            "synthetic counts must all be at least 1".into(),
        ));
    }
    if !(p.separation >= 0.0 && p.separation.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "separation must be >= 0, got {}",
            p.separation
        )));
    }
    if !(p.anisotropy >= 1.0 && p.anisotropy.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "anisotropy must be >= 1, got {}",
            p.anisotropy
        )));
    }
    let d = p.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let sqrt_spec: Vec<f64> = spectrum(d, p.anisotropy).iter().map(|l| l.sqrt()).collect();

    let mut names = Vec::with_capacity(p.categories);
    let mut means = Vec::with_capacity(p.categories);
    let mut covs = Vec::with_capacity(p.categories);
    let mut factors = Vec::with_capacity(p.categories);
    for c in 0..p.categories {
        let mu = unit_vector(&mut rng, d) * p.separation;
        let q = random_orthogonal(&mut rng, d);
        let a = &q * DMatrix::from_diagonal(&DVector::from_column_slice(&sqrt_spec));
        covs.push(SymMatrix::new(&a * a.transpose())?);
        means.push(mu.as_slice().to_vec());
        factors.push(a);
        names.push(category_name(c));
    }

    let mut items = Vec::with_capacity(p.categories * p.items_per_category);
    for c in 0..p.categories {
        for i in 0..p.items_per_category {
            let z = gaussian_matrix(&mut rng, d, p.rows);
            let x = &factors[c] * z;
            let mut values = Vec::with_capacity(p.rows * d);
            for r in 0..p.rows {
                for j in 0..d {
                    values.push((means[c][j] + x[(j, r)]) as f32 as f64);
                }
            }
            items.push(LabeledFeatures {
                item_id: item_name(c, i),
                category: names[c].clone(),
                features: FeatureMatrix::new(p.rows, d, values)?,
            });
        }
    }
    Ok(SyntheticDataset {
        items,
        category_names: names,
        category_means: means,
        category_covs: covs,
    })
}
