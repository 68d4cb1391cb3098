//! Dense symmetric / SPD linear algebra.
//!
//! Everything the distance computations need lives here: a symmetric matrix
//! newtype, a deterministic eigendecomposition (cyclic Jacobi for small
//! matrices, Householder tridiagonalisation + implicit QL for larger ones),
//! spectral functions (square root, inverse square root), Cholesky
//! factorisation and eigenvalue-floor repair.
//!
//! All arithmetic is `f64`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest dimension handled by the Jacobi solver; above it the tridiagonal
/// QL route is used.
pub const JACOBI_MAX_DIM: usize = 32;

const JACOBI_MAX_SWEEPS: usize = 60;

/// Relative eigenvalue floor used when no explicit floor is supplied.
pub const DEFAULT_RELATIVE_EPS: f64 = 1e-8;

/// A real symmetric matrix. Construction symmetrises its input as
/// `(M + Mᵀ) / 2` (already-equal pairs are kept bit for bit), so
/// `get(i, j) == get(j, i)` holds exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidArgument(
                "matrix dimension must be at least 1".into(),
            ));
        }
        Ok(Self::symmetrize(m))
    }

    fn symmetrize(mut m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (m[(i, j)], m[(j, i)]);
                let v = if a == b { a } else { 0.5 * a + 0.5 * b };
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMatrix(m)
    }

    /// Build from `dim * dim` row-major values.
    pub fn from_row_major(dim: usize, values: &[f64]) -> Result<Self> {
        if values.len() != dim * dim {
            return Err(Error::DimMismatch {
                expected: dim * dim,
                found: values.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(dim, dim, values))
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.0[(i, i)]).collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    /// Row-major copy of the entries.
    pub fn to_row_major(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> Self {
        SymMatrix(&self.0 * factor)
    }

    /// `M · self · Mᵀ` for a square `M` of matching dimension.
    pub fn congruence(&self, m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != self.dim() || m.ncols() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                found: m.nrows(),
            });
        }
        Ok(Self::symmetrize(m * &self.0 * m.transpose()))
    }

    /// `self - shift * I`
    pub fn shifted(&self, shift: f64) -> Self {
        let mut m = self.0.clone();
        for i in 0..m.nrows() {
            m[(i, i)] -= shift;
        }
        SymMatrix(m)
    }

    /// Smallest eigenvalue floor considered "numerically positive" for this
    /// matrix: `1e-8 · trace / dim`.
    pub fn default_eps(&self) -> f64 {
        self.relative_eps(DEFAULT_RELATIVE_EPS)
    }

    /// `fraction · trace / dim`, or a tiny absolute floor for a matrix with
    /// no positive mass.
    pub fn relative_eps(&self, fraction: f64) -> f64 {
        let avg = self.trace() / self.dim() as f64;
        if avg > 0.0 && avg.is_finite() {
            fraction * avg
        } else {
            1e-12
        }
    }
}

/// Eigenvalues sorted descending with the matching orthonormal eigenvectors as
/// columns. Each column is signed so that its largest-magnitude component is
/// positive.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigenPair {
    /// `Q · diag(f(λ)) · Qᵀ`
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let mut scaled = self.vectors.clone();
        for (k, &lambda) in self.values.iter().enumerate() {
            let s = f(lambda);
            scaled.column_mut(k).scale_mut(s);
        }
        SymMatrix::symmetrize(scaled * self.vectors.transpose())
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.map_spectrum(|l| l)
    }
}

/// Symmetric eigendecomposition.
pub fn eigh(m: &SymMatrix) -> Result<EigenPair> {
    let (values, vectors) = if m.dim() <= JACOBI_MAX_DIM {
        jacobi(m, true)?
    } else {
        let dec = SymmetricEigen::try_new(m.0.clone(), f64::EPSILON, 0).ok_or_else(|| {
            Error::NoConvergence {
                sweeps: 0,
                residual: f64::NAN,
            }
        })?;
        (
            dec.eigenvalues.iter().copied().collect(),
            Some(dec.eigenvectors),
        )
    };
    Ok(sort_and_sign(
        values,
        vectors.expect("eigenvectors requested"),
    ))
}

/// Eigenvalues only, sorted descending.
pub fn eigvalsh(m: &SymMatrix) -> Result<Vec<f64>> {
    let mut values = if m.dim() <= JACOBI_MAX_DIM {
        jacobi(m, false)?.0
    } else {
        m.0.symmetric_eigenvalues().iter().copied().collect()
    };
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

fn sort_and_sign(values: Vec<f64>, vectors: DMatrix<f64>) -> EigenPair {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps ties in solver order, which is deterministic
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut sorted = DMatrix::zeros(n, n);
    let mut sorted_values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        sorted_values.push(values[src]);
        let mut col = vectors.column(src).clone_owned();
        let mut pivot = 0;
        for r in 1..n {
            if col[r].abs() > col[pivot].abs() {
                pivot = r;
            }
        }
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        sorted.set_column(dst, &col);
    }
    EigenPair {
        values: sorted_values,
        vectors: sorted,
    }
}

/// Cyclic Jacobi with the classical threshold strategy: once an off-diagonal
/// element is negligible against both diagonal entries it is set to zero, so
/// the sweep loop terminates on an exactly diagonal matrix.
fn jacobi(m: &SymMatrix, want_vectors: bool) -> Result<(Vec<f64>, Option<DMatrix<f64>>)> {
    let n = m.dim();
    let mut a = m.0.clone();
    let mut v = want_vectors.then(|| DMatrix::<f64>::identity(n, n));

    let off_norm = |a: &DMatrix<f64>| -> f64 {
        let mut s = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                s += a[(p, q)] * a[(p, q)];
            }
        }
        s.sqrt()
    };

    for sweep in 0..JACOBI_MAX_SWEEPS {
        if off_norm(&a) == 0.0 {
            return Ok(((0..n).map(|i| a[(i, i)]).collect(), v));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let g = 100.0 * apq.abs();
                if sweep > 3 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    continue;
                }
                let h = aqq - app;
                let t = if h.abs() + g == h.abs() {
                    apq / h
                } else {
                    let theta = 0.5 * h / apq;
                    let t = 1.0 / (theta.abs() + (1.0 + theta * theta).sqrt());
                    if theta < 0.0 {
                        -t
                    } else {
                        t
                    }
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                rotate_symmetric(&mut a, p, q, c, s, t);
                if let Some(v) = v.as_mut() {
                    for r in 0..n {
                        let vrp = v[(r, p)];
                        let vrq = v[(r, q)];
                        v[(r, p)] = c * vrp - s * vrq;
                        v[(r, q)] = s * vrp + c * vrq;
                    }
                }
            }
        }
    }
    Err(Error::NoConvergence {
        sweeps: JACOBI_MAX_SWEEPS,
        residual: off_norm(&a),
    })
}

fn rotate_symmetric(a: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64, t: f64) {
    let n = a.nrows();
    let apq = a[(p, q)];
    a[(p, p)] -= t * apq;
    a[(q, q)] += t * apq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for r in 0..n {
        if r == p || r == q {
            continue;
        }
        let arp = a[(r, p)];
        let arq = a[(r, q)];
        let new_rp = c * arp - s * arq;
        let new_rq = s * arp + c * arq;
        a[(r, p)] = new_rp;
        a[(p, r)] = new_rp;
        a[(r, q)] = new_rq;
        a[(q, r)] = new_rq;
    }
}

/// Result of a spectral map with eigenvalue clamping.
#[derive(Debug, Clone)]
pub struct Clamped {
    pub matrix: SymMatrix,
    /// Number of eigenvalues that fell below the floor.
    pub clamped: usize,
    /// Ratio of largest to smallest (floored) eigenvalue.
    pub condition: f64,
}

fn clamp_map(m: &SymMatrix, eps: f64, f: impl Fn(f64) -> f64) -> Result<Clamped> {
    let eig = eigh(m)?;
    let clamped = eig.values.iter().filter(|&&l| l < eps).count();
    let hi = eig.values[0].max(eps);
    let lo = eig.values[eig.values.len() - 1].max(eps);
    let matrix = eig.map_spectrum(|l| f(l.max(eps)));
    Ok(Clamped {
        matrix,
        clamped,
        condition: if lo > 0.0 { hi / lo } else { f64::INFINITY },
    })
}

/// `Q · diag(√max(λ, eps)) · Qᵀ`
pub fn spd_sqrt(m: &SymMatrix, eps: f64) -> Result<SymMatrix> {
    Ok(spd_sqrt_counted(m, eps)?.matrix)
}

pub fn spd_sqrt_counted(m: &SymMatrix, eps: f64) -> Result<Clamped> {
    clamp_map(m, eps.max(0.0), f64::sqrt)
}

/// `Q · diag(1/√max(λ, eps)) · Qᵀ`. With `eps = 0` a singular input yields
/// infinite entries, so callers should pass a positive floor.
pub fn spd_inv_sqrt(m: &SymMatrix, eps: f64) -> Result<SymMatrix> {
    Ok(spd_inv_sqrt_counted(m, eps)?.matrix)
}

pub fn spd_inv_sqrt_counted(m: &SymMatrix, eps: f64) -> Result<Clamped> {
    clamp_map(m, eps.max(0.0), |l| 1.0 / l.sqrt())
}

/// Lower-triangular Cholesky factor `L` with `L·Lᵀ = M`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: DMatrix<f64>,
}

impl Cholesky {
    pub fn l(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim())
            .map(|i| self.lower[(i, i)].ln())
            .sum::<f64>()
    }

    /// Solve `L · X = B` by forward substitution.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let mut x = b.clone();
        for col in 0..x.ncols() {
            for i in 0..n {
                let mut s = x[(i, col)];
                for k in 0..i {
                    s -= self.lower[(i, k)] * x[(k, col)];
                }
                x[(i, col)] = s / self.lower[(i, i)];
            }
        }
        x
    }

    /// Solve `L · y = b` for a single right-hand side.
    pub fn solve_lower_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.lower[(i, k)] * y[k];
            }
            y[i] = s / self.lower[(i, i)];
        }
        y
    }

    /// `‖L⁻¹ b‖²`, i.e. `bᵀ M⁻¹ b`.
    pub fn mahalanobis_sq(&self, b: &[f64]) -> f64 {
        self.solve_lower_vec(b).iter().map(|v| v * v).sum()
    }

    /// Solve `M · X = B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let y = self.solve_lower(b);
        let n = self.dim();
        let mut x = y;
        for col in 0..x.ncols() {
            for i in (0..n).rev() {
                let mut s = x[(i, col)];
                for k in (i + 1)..n {
                    s -= self.lower[(k, i)] * x[(k, col)];
                }
                x[(i, col)] = s / self.lower[(i, i)];
            }
        }
        x
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.lower * self.lower.transpose()
    }
}

/// Cholesky–Banachiewicz factorisation.
pub fn cholesky(m: &SymMatrix) -> Result<Cholesky> {
    let n = m.dim();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = m.0[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = m.0[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(Cholesky { lower: l })
}

/// `log |M|` through the Cholesky factor.
pub fn log_det(m: &SymMatrix) -> Result<f64> {
    Ok(cholesky(m)?.log_det())
}

/// Result of [`spd_repair_counted`].
#[derive(Debug, Clone)]
pub struct Repaired {
    pub matrix: SymMatrix,
    pub clamped: usize,
}

/// Raise every eigenvalue below `eps` to `eps`. Input whose smallest
/// eigenvalue is already at least `eps` is returned unchanged.
pub fn spd_repair(m: &SymMatrix, eps: f64) -> Result<SymMatrix> {
    Ok(spd_repair_counted(m, eps)?.matrix)
}

pub fn spd_repair_counted(m: &SymMatrix, eps: f64) -> Result<Repaired> {
    // λ_min(M) ≥ eps  ⇔  M − eps·I is PSD; a successful factorisation of the
    // shifted matrix certifies it without an eigendecomposition.
    if cholesky(&m.shifted(eps)).is_ok() || (eps == 0.0 && cholesky(m).is_ok()) {
        return Ok(Repaired {
            matrix: m.clone(),
            clamped: 0,
        });
    }
    let eig = eigh(m)?;
    let clamped = eig.values.iter().filter(|&&l| l < eps).count();
    if clamped == 0 {
        return Ok(Repaired {
            matrix: m.clone(),
            clamped: 0,
        });
    }
    Ok(Repaired {
        matrix: eig.map_spectrum(|l| l.max(eps)),
        clamped,
    })
}
