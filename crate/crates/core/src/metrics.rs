//! Distances and divergences between Gaussian signatures and mixtures.
//!
//! | kind             | formula                                                                 |
//! |------------------|-------------------------------------------------------------------------|
//! | `gaussian-kl`    | ½ KL(a‖b) + ½ KL(b‖a) between the two Gaussians                          |
//! | `variational-kl` | symmetrised variational approximation of KL between two mixtures        |
//! | `wasserstein`    | ‖μa − μb‖² + tr(Σa + Σb − 2 (Σa^½ Σb Σa^½)^½)  (squared W2)              |
//! | `riemannian`     | ‖log(Σa^-½ Σb Σa^-½)‖_F = (Σ log² λ_c)^½                                  |
//! | `euclidean`      | ‖μa − μb‖                                                               |
//!
//! Covariances are floored to a minimum eigenvalue before use (see [`Floor`]).
//! Wasserstein and Riemannian evaluate their operands in a canonical order so
//! `d(a, b)` and `d(b, a)` are bitwise identical.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{log_sum_exp, GmmModel};
use crate::linalg::{
    cholesky, eigvalsh, spd_repair_counted, spd_sqrt_counted, Cholesky, SymMatrix,
    DEFAULT_RELATIVE_EPS,
};
use crate::signature::GaussianSignature;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricKind {
    GaussianKl,
    VariationalKl,
    Wasserstein,
    Riemannian,
    EuclideanMean,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] = [
        MetricKind::GaussianKl,
        MetricKind::VariationalKl,
        MetricKind::Wasserstein,
        MetricKind::Riemannian,
        MetricKind::EuclideanMean,
    ];

    /// Stable lowercase identifier used on the command line.
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::GaussianKl => "gaussian-kl",
            MetricKind::VariationalKl => "variational-kl",
            MetricKind::Wasserstein => "wasserstein",
            MetricKind::Riemannian => "riemannian",
            MetricKind::EuclideanMean => "euclidean",
        }
    }

    pub fn requires_gmm(self) -> bool {
        self == MetricKind::VariationalKl
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = MetricKind::ALL.iter().map(|m| m.name()).collect();
                Error::InvalidArgument(format!(
                    "unknown metric `{s}` (expected one of {})",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Diagnostics {
    /// Eigenvalues raised to the floor across both inputs.
    pub clamped: usize,
    /// Rough condition estimate of the matrices involved.
    pub condition: f64,
    /// Value before flooring at zero.
    pub raw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceValue {
    pub value: f64,
    pub kind: MetricKind,
    pub diagnostics: Diagnostics,
}

impl DistanceValue {
    fn new(kind: MetricKind, raw: f64, clamped: usize, condition: f64) -> Result<Self> {
        if raw.is_nan() {
            return Err(Error::InvalidArgument(format!("{kind} produced NaN")));
        }
        let value = raw.max(0.0);
        if !value.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "{kind} produced a non-finite value"
            )));
        }
        Ok(Self {
            value,
            kind,
            diagnostics: Diagnostics {
                clamped,
                condition,
                raw,
            },
        })
    }
}

/// Minimum eigenvalue enforced on covariances before a metric uses them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Floor {
    /// Fraction of the matrix's average eigenvalue (`trace / dim`).
    Relative(f64),
    Absolute(f64),
}

impl Default for Floor {
    fn default() -> Self {
        Floor::Relative(DEFAULT_RELATIVE_EPS)
    }
}

impl Floor {
    pub fn eps_for(self, m: &SymMatrix) -> f64 {
        match self {
            Floor::Relative(r) => m.relative_eps(r),
            Floor::Absolute(a) => a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricOptions {
    pub floor: Floor,
    /// Add `‖μa − μb‖²` under the square root of the Riemannian distance.
    pub riemannian_with_mean: bool,
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimMismatch {
            expected: a,
            found: b,
        });
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Floored covariance and its Cholesky factor.
struct Prepared {
    chol: Cholesky,
    clamped: usize,
}

impl Prepared {
    fn new(cov: &SymMatrix, floor: Floor) -> Result<Self> {
        let repaired = spd_repair_counted(cov, floor.eps_for(cov))?;
        Ok(Self {
            chol: cholesky(&repaired.matrix)?,
            clamped: repaired.clamped,
        })
    }

    fn condition(&self) -> f64 {
        let l = self.chol.l();
        let diag = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]);
        let (lo, hi) = diag.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        hi / lo
    }
}

/// KL(a‖b) from prepared factors:
/// ½ [log|Σb| − log|Σa| − d + tr(Σb⁻¹Σa) + (μb−μa)ᵀ Σb⁻¹ (μb−μa)].
fn kl_directed(mu_a: &[f64], pa: &Prepared, mu_b: &[f64], pb: &Prepared) -> f64 {
    let d = mu_a.len() as f64;
    // tr(Σb⁻¹ Σa) = ‖Lb⁻¹ La‖²_F
    let trace = pb.chol.solve_lower(pa.chol.l()).norm_squared();
    let delta: Vec<f64> = mu_b.iter().zip(mu_a).map(|(b, a)| b - a).collect();
    let maha = pb.chol.mahalanobis_sq(&delta);
    let kl = 0.5 * (pb.chol.log_det() - pa.chol.log_det() - d + trace + maha);
    kl.max(0.0)
}

/// Directed Gaussian KL divergence, floored at zero.
pub fn kl_gaussian(a: &GaussianSignature, b: &GaussianSignature, floor: Floor) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    let pa = Prepared::new(&a.cov, floor)?;
    let pb = Prepared::new(&b.cov, floor)?;
    Ok(kl_directed(&a.mean, &pa, &b.mean, &pb))
}

/// `½ KL(a‖b) + ½ KL(b‖a)`
pub fn kl_symmetric(
    a: &GaussianSignature,
    b: &GaussianSignature,
    floor: Floor,
) -> Result<DistanceValue> {
    check_dims(a.dim(), b.dim())?;
    let pa = Prepared::new(&a.cov, floor)?;
    let pb = Prepared::new(&b.cov, floor)?;
    let ab = kl_directed(&a.mean, &pa, &b.mean, &pb);
    let ba = kl_directed(&b.mean, &pb, &a.mean, &pa);
    DistanceValue::new(
        MetricKind::GaussianKl,
        0.5 * (ab + ba),
        pa.clamped + pb.clamped,
        pa.condition().max(pb.condition()),
    )
}

/// Closed-form KL between diagonal Gaussians, O(D).
pub fn kl_diagonal(mu_a: &[f64], var_a: &[f64], mu_b: &[f64], var_b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for d in 0..mu_a.len() {
        let diff = mu_b[d] - mu_a[d];
        acc += (var_b[d] / var_a[d]).ln() - 1.0 + var_a[d] / var_b[d] + diff * diff / var_b[d];
    }
    (0.5 * acc).max(0.0)
}

/// Variational approximation of KL(a‖b) between two mixtures:
///
/// ```text
/// Σ_i ω_i log [ Σ_i' ω_i' exp(−KL(a_i‖a_i')) / Σ_j ω_j exp(−KL(a_i‖b_j)) ]
/// ```
///
/// evaluated with log-sum-exp. The result can be negative.
pub fn kl_variational(a: &GmmModel, b: &GmmModel) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    let mut self_terms = vec![0.0; a.k()];
    let mut cross_terms = vec![0.0; b.k()];
    let mut total = 0.0;
    for i in 0..a.k() {
        let wi = a.weights()[i];
        if wi == 0.0 {
            continue;
        }
        let (mu, var) = (a.mean(i), a.vars(i));
        for (slot, i2) in self_terms.iter_mut().zip(0..a.k()) {
            *slot = a.weights()[i2].ln() - kl_diagonal(mu, var, a.mean(i2), a.vars(i2));
        }
        for (slot, j) in cross_terms.iter_mut().zip(0..b.k()) {
            *slot = b.weights()[j].ln() - kl_diagonal(mu, var, b.mean(j), b.vars(j));
        }
        total += wi * (log_sum_exp(&self_terms) - log_sum_exp(&cross_terms));
    }
    Ok(total)
}

/// `½ D(a‖b) + ½ D(b‖a)` of the variational approximation; the public value
/// is floored at zero, the signed value is kept in `diagnostics.raw`.
pub fn kl_variational_symmetric(a: &GmmModel, b: &GmmModel) -> Result<DistanceValue> {
    let ab = kl_variational(a, b)?;
    let ba = kl_variational(b, a)?;
    DistanceValue::new(MetricKind::VariationalKl, 0.5 * (ab + ba), 0, f64::NAN)
}

/// Total order on signatures used to fix operand order for the metrics whose
/// evaluation is not symmetric in floating point.
fn canonical_order(a: &GaussianSignature, b: &GaussianSignature) -> Ordering {
    let am = a.cov.as_matrix();
    let bm = b.cov.as_matrix();
    am.iter()
        .zip(bm.iter())
        .map(|(x, y)| x.total_cmp(y))
        .chain(a.mean.iter().zip(&b.mean).map(|(x, y)| x.total_cmp(y)))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn ordered<'a>(
    a: &'a GaussianSignature,
    b: &'a GaussianSignature,
) -> (&'a GaussianSignature, &'a GaussianSignature) {
    if canonical_order(a, b) == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    }
}

/// Squared 2-Wasserstein distance between two Gaussians,
/// `‖μa − μb‖² + tr(Σa + Σb − 2 (Σa^½ Σb Σa^½)^½)`, with the trace term
/// floored at zero. No inverse appears, so singular covariances are fine.
pub fn wasserstein2(
    a: &GaussianSignature,
    b: &GaussianSignature,
    floor: Floor,
) -> Result<DistanceValue> {
    check_dims(a.dim(), b.dim())?;
    let (a, b) = ordered(a, b);
    let ra = spd_repair_counted(&a.cov, floor.eps_for(&a.cov))?;
    let rb = spd_repair_counted(&b.cov, floor.eps_for(&b.cov))?;
    let sqrt_a = spd_sqrt_counted(&ra.matrix, 0.0)?;
    let s = sqrt_a.matrix.as_matrix();
    let inner = SymMatrix::new(s * rb.matrix.as_matrix() * s)?;
    let cross: f64 = eigvalsh(&inner)?.iter().map(|&l| l.max(0.0).sqrt()).sum();
    let trace_term = (ra.matrix.trace() + rb.matrix.trace() - 2.0 * cross).max(0.0);
    DistanceValue::new(
        MetricKind::Wasserstein,
        sq_dist(&a.mean, &b.mean) + trace_term,
        ra.clamped + rb.clamped + sqrt_a.clamped,
        sqrt_a.condition,
    )
}

/// Affine-invariant Riemannian distance between the covariances. The
/// eigenvalues of `Σa^-½ Σb Σa^-½` are obtained from the similar matrix
/// `La⁻¹ Σb La⁻ᵀ` with `La` the Cholesky factor of `Σa`.
pub fn riemannian(
    a: &GaussianSignature,
    b: &GaussianSignature,
    opts: &MetricOptions,
) -> Result<DistanceValue> {
    check_dims(a.dim(), b.dim())?;
    let (a, b) = ordered(a, b);
    let pa = Prepared::new(&a.cov, opts.floor)?;
    let rb = spd_repair_counted(&b.cov, opts.floor.eps_for(&b.cov))?;
    let x = pa.chol.solve_lower(rb.matrix.as_matrix());
    let whitened = SymMatrix::new(pa.chol.solve_lower(&x.transpose()))?;
    let lambdas = eigvalsh(&whitened)?;
    if let Some(pos) = lambdas.iter().position(|&l| !(l > 0.0)) {
        return Err(Error::NotPositiveDefinite { pivot: pos });
    }
    let mut sum_sq: f64 = lambdas.iter().map(|l| l.ln().powi(2)).sum();
    if opts.riemannian_with_mean {
        sum_sq += sq_dist(&a.mean, &b.mean);
    }
    let cond = lambdas[0] / lambdas[lambdas.len() - 1];
    DistanceValue::new(
        MetricKind::Riemannian,
        sum_sq.sqrt(),
        pa.clamped + rb.clamped,
        cond,
    )
}

/// `‖μa − μb‖₂`
pub fn euclidean_mean(a: &GaussianSignature, b: &GaussianSignature) -> Result<DistanceValue> {
    check_dims(a.dim(), b.dim())?;
    DistanceValue::new(
        MetricKind::EuclideanMean,
        sq_dist(&a.mean, &b.mean).sqrt(),
        0,
        1.0,
    )
}

/// What a metric may look at for one item.
#[derive(Debug, Clone, Copy)]
pub struct MetricInput<'a> {
    pub signature: &'a GaussianSignature,
    pub gmm: Option<&'a GmmModel>,
}

/// Dispatch on `kind`.
pub fn distance(
    kind: MetricKind,
    a: MetricInput<'_>,
    b: MetricInput<'_>,
    opts: &MetricOptions,
) -> Result<DistanceValue> {
    match kind {
        MetricKind::GaussianKl => kl_symmetric(a.signature, b.signature, opts.floor),
        MetricKind::VariationalKl => match (a.gmm, b.gmm) {
            (Some(ga), Some(gb)) => kl_variational_symmetric(ga, gb),
            _ => Err(Error::IncompatibleMetric {
                metric: kind.name().into(),
                mode: "non-gmm".into(),
                hint: "variational-kl requires gmm index".into(),
            }),
        },
        MetricKind::Wasserstein => wasserstein2(a.signature, b.signature, opts.floor),
        MetricKind::Riemannian => riemannian(a.signature, b.signature, opts),
        MetricKind::EuclideanMean => euclidean_mean(a.signature, b.signature),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signature::SourceTag;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sig(mean: Vec<f64>, cov: SymMatrix) -> GaussianSignature {
        GaussianSignature::new(mean, cov, SourceTag::Sample).unwrap()
    }

    fn sig1(mu: f64, var: f64) -> GaussianSignature {
        sig(vec![mu], SymMatrix::from_diagonal(&[var]))
    }

    fn random_sig(d: usize, rng: &mut impl Rng) -> GaussianSignature {
        let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let mut c = &m * m.transpose() / d as f64;
        for i in 0..d {
            c[(i, i)] += 0.2;
        }
        sig(
            (0..d).map(|_| rng.random_range(-2.0..2.0)).collect(),
            SymMatrix::new(c).unwrap(),
        )
    }

    fn normal_pdf(x: f64, mu: f64, var: f64) -> f64 {
        (-(x - mu) * (x - mu) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
    }

    fn kl_quadrature(mu_p: f64, var_p: f64, mu_q: f64, var_q: f64) -> f64 {
        let h = 1e-3;
        let n = (80.0 / h) as usize;
        let f = |x: f64| {
            let p = normal_pdf(x, mu_p, var_p);
            if p == 0.0 {
                return 0.0;
            }
            // log p/q in closed form avoids 0/0 in the far tails
            let log_ratio = -0.5 * (var_p / var_q).ln() - (x - mu_p).powi(2) / (2.0 * var_p)
                + (x - mu_q).powi(2) / (2.0 * var_q);
            p * log_ratio
        };
        let mut s = 0.5 * (f(-40.0) + f(40.0));
        for i in 1..n {
            s += f(-40.0 + i as f64 * h);
        }
        s * h
    }

    #[test]
    fn metric_names_round_trip() {
        for m in MetricKind::ALL {
            assert_eq!(m.name().parse::<MetricKind>().unwrap(), m);
        }
        assert!("cosine".parse::<MetricKind>().is_err());
    }

    #[test]
    fn kl_examples() {
        let a = sig1(0.0, 1.0);
        assert!(kl_gaussian(&a, &a, Floor::default()).unwrap().abs() <= 1e-10);
        let b = sig1(1.0, 1.0);
        assert!((kl_gaussian(&a, &b, Floor::default()).unwrap() - 0.5).abs() < 1e-15);
        let p = sig1(0.0, 4.0);
        let q = sig1(1.0, 9.0);
        let want = kl_quadrature(0.0, 4.0, 1.0, 9.0);
        assert!((kl_gaussian(&p, &q, Floor::default()).unwrap() - want).abs() <= 1e-6);
    }

    #[test]
    fn kl_symmetric_examples() {
        let a = sig1(0.0, 1.0);
        let b = sig1(0.0, 4.0);
        let ab = kl_symmetric(&a, &b, Floor::default()).unwrap().value;
        assert_eq!(ab, kl_symmetric(&b, &a, Floor::default()).unwrap().value);
        let want = 0.5 * (kl_quadrature(0.0, 1.0, 0.0, 4.0) + kl_quadrature(0.0, 4.0, 0.0, 1.0));
        assert!((ab - want).abs() <= 1e-6);
        assert_eq!(kl_symmetric(&a, &a, Floor::default()).unwrap().value, 0.0);
    }

    #[test]
    fn kl_dim_mismatch() {
        let a = sig1(0.0, 1.0);
        let b = sig(vec![0.0, 0.0], SymMatrix::identity(2));
        assert!(matches!(
            kl_gaussian(&a, &b, Floor::default()),
            Err(Error::DimMismatch { .. })
        ));
        assert!(matches!(
            wasserstein2(&a, &b, Floor::default()),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn kl_handles_singular_covariance_through_floor() {
        let a = sig(vec![0.0, 0.0], SymMatrix::from_diagonal(&[1.0, 0.0]));
        let b = sig(vec![0.0, 0.0], SymMatrix::identity(2));
        let d = kl_symmetric(&a, &b, Floor::default()).unwrap();
        assert!(d.value.is_finite());
        assert_eq!(d.diagnostics.clamped, 1);
    }

    #[test]
    fn wasserstein_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_sig(4, &mut rng);
        assert!(wasserstein2(&a, &a, Floor::default()).unwrap().value <= 1e-9);

        let mu = vec![1.0, -2.0, 0.5];
        let z = sig(vec![0.0; 3], SymMatrix::identity(3));
        let m = sig(mu.clone(), SymMatrix::identity(3));
        let w = wasserstein2(&z, &m, Floor::default()).unwrap().value;
        assert!((w - 5.25).abs() <= 1e-10);

        let la = [1.0, 4.0, 0.25];
        let lb = [9.0, 1.0, 0.36];
        let a = sig(vec![0.0; 3], SymMatrix::from_diagonal(&la));
        let b = sig(vec![0.0; 3], SymMatrix::from_diagonal(&lb));
        let want: f64 = la
            .iter()
            .zip(&lb)
            .map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2))
            .sum();
        assert!((wasserstein2(&a, &b, Floor::default()).unwrap().value - want).abs() <= 1e-8);
    }

    #[test]
    fn wasserstein_accepts_singular() {
        let a = sig(vec![0.0, 0.0], SymMatrix::from_diagonal(&[1.0, 0.0]));
        let b = sig(vec![0.0, 0.0], SymMatrix::from_diagonal(&[4.0, 0.0]));
        let w = wasserstein2(&a, &b, Floor::Absolute(0.0)).unwrap().value;
        assert!((w - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn riemannian_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_sig(5, &mut rng);
        let opts = MetricOptions::default();
        assert!(riemannian(&a, &a, &opts).unwrap().value <= 1e-9);
        for c in [0.1, 2.0, 10.0] {
            let i = sig(vec![0.0; 4], SymMatrix::identity(4));
            let ci = sig(vec![0.0; 4], SymMatrix::identity(4).scaled(c));
            let d = riemannian(&i, &ci, &opts).unwrap().value;
            assert!((d - 2.0 * f64::ln(c).abs()).abs() <= 1e-10);
        }
    }

    #[test]
    fn riemannian_mean_flag() {
        let a = sig(vec![0.0, 0.0], SymMatrix::identity(2));
        let b = sig(vec![3.0, 4.0], SymMatrix::identity(2));
        let plain = riemannian(&a, &b, &MetricOptions::default()).unwrap().value;
        assert_eq!(plain, 0.0);
        let opts = MetricOptions {
            riemannian_with_mean: true,
            ..MetricOptions::default()
        };
        assert!((riemannian(&a, &b, &opts).unwrap().value - 5.0).abs() < 1e-12);
    }

    #[test]
    fn riemannian_inverse_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let a = random_sig(6, &mut rng);
            let b = random_sig(6, &mut rng);
            let inv = |s: &GaussianSignature| {
                let m = s.cov.as_matrix().clone().try_inverse().unwrap();
                sig(s.mean.clone(), SymMatrix::new(m).unwrap())
            };
            let opts = MetricOptions::default();
            let d1 = riemannian(&a, &b, &opts).unwrap().value;
            let d2 = riemannian(&inv(&a), &inv(&b), &opts).unwrap().value;
            assert!((d1 - d2).abs() <= 1e-8, "{d1} vs {d2}");
        }
    }

    #[test]
    fn euclidean_examples() {
        let a = sig(vec![0.0, 0.0], SymMatrix::identity(2));
        let b = sig(vec![3.0, 4.0], SymMatrix::identity(2));
        assert_eq!(euclidean_mean(&a, &b).unwrap().value, 5.0);
        assert_eq!(euclidean_mean(&a, &a).unwrap().value, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_sig(7, &mut rng);
        let y = random_sig(7, &mut rng);
        let mut acc = 0.0;
        for i in 0..7 {
            acc += (x.mean[i] - y.mean[i]) * (x.mean[i] - y.mean[i]);
        }
        assert!((euclidean_mean(&x, &y).unwrap().value - acc.sqrt()).abs() <= 1e-12);
    }

    fn random_gmm(k: usize, d: usize, rng: &mut impl Rng) -> GmmModel {
        let mut w: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
        let t: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= t);
        GmmModel::new(
            w,
            (0..k * d).map(|_| rng.random_range(-2.0..2.0)).collect(),
            (0..k * d).map(|_| rng.random_range(0.3..2.0)).collect(),
            d,
        )
        .unwrap()
    }

    /// Eq. (11) summed directly, no log-sum-exp.
    fn variational_brute(a: &GmmModel, b: &GmmModel) -> f64 {
        let kl = |m1: &[f64], v1: &[f64], m2: &[f64], v2: &[f64]| {
            let mut s = 0.0;
            for d in 0..m1.len() {
                s += (v2[d] / v1[d]).ln() - 1.0 + v1[d] / v2[d] + (m2[d] - m1[d]).powi(2) / v2[d];
            }
            0.5 * s
        };
        let mut total = 0.0;
        for i in 0..a.k() {
            let mut num = 0.0;
            for i2 in 0..a.k() {
                num += a.weights()[i2] * (-kl(a.mean(i), a.vars(i), a.mean(i2), a.vars(i2))).exp();
            }
            let mut den = 0.0;
            for j in 0..b.k() {
                den += b.weights()[j] * (-kl(a.mean(i), a.vars(i), b.mean(j), b.vars(j))).exp();
            }
            total += a.weights()[i] * (num / den).ln();
        }
        total
    }

    #[test]
    fn variational_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = random_gmm(3, 2, &mut rng);
        assert!(kl_variational(&a, &a).unwrap().abs() <= 1e-10);
        assert_eq!(kl_variational_symmetric(&a, &a).unwrap().value, 0.0);

        let g1 = GmmModel::new(vec![1.0], vec![0.5, -1.0], vec![1.5, 0.7], 2).unwrap();
        let g2 = GmmModel::new(vec![1.0], vec![-0.2, 0.3], vec![0.4, 2.2], 2).unwrap();
        let s1 = sig(g1.mean(0).to_vec(), SymMatrix::from_diagonal(g1.vars(0)));
        let s2 = sig(g2.mean(0).to_vec(), SymMatrix::from_diagonal(g2.vars(0)));
        let direct = kl_gaussian(&s1, &s2, Floor::default()).unwrap();
        assert!((kl_variational(&g1, &g2).unwrap() - direct).abs() <= 1e-12);

        for _ in 0..10 {
            let a = random_gmm(3, 2, &mut rng);
            let b = random_gmm(3, 2, &mut rng);
            let ab = kl_variational(&a, &b).unwrap();
            assert!((ab - variational_brute(&a, &b)).abs() <= 1e-9);
            let sym = kl_variational_symmetric(&a, &b).unwrap();
            let want = 0.5 * (variational_brute(&a, &b) + variational_brute(&b, &a));
            assert!((sym.diagnostics.raw - want).abs() <= 1e-9);
            assert_eq!(sym.value, kl_variational_symmetric(&b, &a).unwrap().value);
            assert!(sym.value >= 0.0);
        }
    }

    #[test]
    fn dispatch_rejects_variational_without_gmm() {
        let a = sig1(0.0, 1.0);
        let input = MetricInput {
            signature: &a,
            gmm: None,
        };
        let err = distance(
            MetricKind::VariationalKl,
            input,
            input,
            &MetricOptions::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("requires gmm index"));
    }

    proptest::proptest! {
        #[test]
        fn symmetry_and_identity(seed in 0u64..5_000, d in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_sig(d, &mut rng);
            let b = random_sig(d, &mut rng);
            let opts = MetricOptions::default();
            for kind in [MetricKind::GaussianKl, MetricKind::Wasserstein, MetricKind::Riemannian, MetricKind::EuclideanMean] {
                let ia = MetricInput { signature: &a, gmm: None };
                let ib = MetricInput { signature: &b, gmm: None };
                let ab = distance(kind, ia, ib, &opts).unwrap().value;
                let ba = distance(kind, ib, ia, &opts).unwrap().value;
                proptest::prop_assert!((ab - ba).abs() <= 1e-12);
                proptest::prop_assert!(distance(kind, ia, ia, &opts).unwrap().value <= 1e-9);
            }
        }

        #[test]
        fn equal_covariance_wasserstein_is_mean_distance(seed in 0u64..5_000, d in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_sig(d, &mut rng);
            let mut b = random_sig(d, &mut rng);
            b.cov = a.cov.clone();
            let w = wasserstein2(&a, &b, Floor::default()).unwrap().value;
            let m: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
            proptest::prop_assert!((w - m).abs() <= 1e-10);
        }

        #[test]
        fn triangle_inequalities(seed in 0u64..5_000, d in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_sig(d, &mut rng);
            let b = random_sig(d, &mut rng);
            let c = random_sig(d, &mut rng);
            let w = |x: &GaussianSignature, y: &GaussianSignature| wasserstein2(x, y, Floor::default()).unwrap().value.sqrt();
            proptest::prop_assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-8);
            let opts = MetricOptions::default();
            let r = |x: &GaussianSignature, y: &GaussianSignature| riemannian(x, y, &opts).unwrap().value;
            proptest::prop_assert!(r(&a, &c) <= r(&a, &b) + r(&b, &c) + 1e-8);
        }
    }
}
