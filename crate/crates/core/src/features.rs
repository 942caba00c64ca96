//! Feature-vector pipeline for content-based filtering: z-score
//! standardisation followed by principal component analysis.
//!
//! The covariance of the standardised matrix is diagonalised with a cyclic
//! Jacobi sweep, which is exact enough and fully deterministic for the few
//! tens of characterisation metrics a program typically carries.

#![allow(clippy::needless_range_loop)]

use thiserror::Error;

/// Default fraction of total variance the kept components must explain.
pub const DEFAULT_VARIANCE_FRACTION: f64 = 0.95;

const JACOBI_TOLERANCE: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("PCA needs at least 2 rows, got {0}")]
    InsufficientData(usize),
    #[error("feature matrix has no columns")]
    NoColumns,
    #[error("row {row} has {got} columns, expected {expected}")]
    Ragged {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("non-finite feature value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("requested {requested} components but at most {max} are available")]
    TooManyComponents { requested: usize, max: usize },
    #[error("variance fraction {0} must lie in (0, 1]")]
    BadFraction(f64),
    #[error("feature vector has {got} entries, model expects {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("eigen decomposition did not converge after {0} sweeps")]
    NoConvergence(usize),
}

/// How many principal components to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ComponentSelection {
    Count(usize),
    /// Smallest count whose components explain at least this fraction of
    /// the total variance.
    VarianceFraction(f64),
}

impl Default for ComponentSelection {
    fn default() -> Self {
        ComponentSelection::VarianceFraction(DEFAULT_VARIANCE_FRACTION)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    means: Vec<f64>,
    scales: Vec<f64>,
    /// `C` rows of length `D`, mutually orthonormal.
    components: Vec<Vec<f64>>,
    explained_variance: Vec<f64>,
    total_variance: f64,
}

impl PcaModel {
    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    /// Sum of all `D` eigenvalues of the standardised covariance.
    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| {
                if self.total_variance > 0.0 {
                    v / self.total_variance
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.means.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn standardise(&self, raw: &[f64]) -> Result<Vec<f64>, FeatureError> {
        if raw.len() != self.input_dim() {
            return Err(FeatureError::LengthMismatch {
                got: raw.len(),
                expected: self.input_dim(),
            });
        }
        Ok(raw
            .iter()
            .zip(&self.means)
            .zip(&self.scales)
            .map(|((x, m), s)| (x - m) / s)
            .collect())
    }

    /// Projects a raw feature vector onto the kept components.
    pub fn transform(&self, raw: &[f64]) -> Result<Vec<f64>, FeatureError> {
        let z = self.standardise(raw)?;
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(&z).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Maps reduced coordinates back into standardised feature space.
    pub fn inverse_project(&self, reduced: &[f64]) -> Result<Vec<f64>, FeatureError> {
        if reduced.len() != self.n_components() {
            return Err(FeatureError::LengthMismatch {
                got: reduced.len(),
                expected: self.n_components(),
            });
        }
        let mut out = vec![0.0; self.input_dim()];
        for (coef, comp) in reduced.iter().zip(&self.components) {
            for (o, c) in out.iter_mut().zip(comp) {
                *o += coef * c;
            }
        }
        Ok(out)
    }
}

/// Fits a PCA model on the rows of `matrix` (one observation per row).
pub fn fit_pca(
    matrix: &[Vec<f64>],
    selection: ComponentSelection,
) -> Result<PcaModel, FeatureError> {
    let rows = matrix.len();
    if rows < 2 {
        return Err(FeatureError::InsufficientData(rows));
    }
    let dim = matrix[0].len();
    if dim == 0 {
        return Err(FeatureError::NoColumns);
    }
    for (r, row) in matrix.iter().enumerate() {
        if row.len() != dim {
            return Err(FeatureError::Ragged {
                row: r,
                got: row.len(),
                expected: dim,
            });
        }
        if let Some(c) = row.iter().position(|x| !x.is_finite()) {
            return Err(FeatureError::NonFinite { row: r, col: c });
        }
    }
    let max_components = (rows - 1).min(dim);
    if let ComponentSelection::Count(c) = selection {
        if c == 0 || c > max_components {
            return Err(FeatureError::TooManyComponents {
                requested: c,
                max: max_components,
            });
        }
    }
    if let ComponentSelection::VarianceFraction(f) = selection {
        if !(f > 0.0 && f <= 1.0) {
            return Err(FeatureError::BadFraction(f));
        }
    }

    let denom = (rows - 1) as f64;
    let means: Vec<f64> = (0..dim)
        .map(|j| matrix.iter().map(|r| r[j]).sum::<f64>() / rows as f64)
        .collect();
    let scales: Vec<f64> = (0..dim)
        .map(|j| {
            let var = matrix
                .iter()
                .map(|r| (r[j] - means[j]).powi(2))
                .sum::<f64>()
                / denom;
            let sd = var.sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    let z: Vec<Vec<f64>> = matrix
        .iter()
        .map(|r| {
            r.iter()
                .zip(&means)
                .zip(&scales)
                .map(|((x, m), s)| (x - m) / s)
                .collect()
        })
        .collect();
    let cov = covariance(&z, denom);
    let (values, vectors) = symmetric_eigen(&cov)?;
    let total_variance: f64 = values.iter().sum();

    let keep = match selection {
        ComponentSelection::Count(c) => c,
        ComponentSelection::VarianceFraction(f) => {
            let mut acc = 0.0;
            let mut c = 0;
            for v in &values {
                c += 1;
                acc += v;
                if total_variance <= 0.0 || acc >= f * total_variance - 1e-12 * total_variance {
                    break;
                }
            }
            c.min(max_components).max(1)
        }
    };

    let components = vectors.into_iter().take(keep).map(fix_sign).collect();
    Ok(PcaModel {
        means,
        scales,
        components,
        explained_variance: values.into_iter().take(keep).map(|v| v.max(0.0)).collect(),
        total_variance,
    })
}

fn covariance(z: &[Vec<f64>], denom: f64) -> Vec<Vec<f64>> {
    let dim = z[0].len();
    let mut cov = vec![vec![0.0; dim]; dim];
    for i in 0..dim {
        for j in i..dim {
            let s = z.iter().map(|r| r[i] * r[j]).sum::<f64>() / denom;
            cov[i][j] = s;
            cov[j][i] = s;
        }
    }
    cov
}

/// Makes the entry of largest magnitude positive (first one on ties).
fn fix_sign(mut v: Vec<f64>) -> Vec<f64> {
    let mut pivot = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[pivot].abs() {
            pivot = i;
        }
    }
    if v[pivot] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

/// Eigen decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order together with the matching unit
/// eigenvectors (one per entry, not yet sign-normalised).
pub fn symmetric_eigen(matrix: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>), FeatureError> {
    let n = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    // Columns of `v` accumulate the rotations.
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let scale = a
        .iter()
        .flatten()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(1.0);

    let off_norm = |a: &[Vec<f64>]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i][j] * a[i][j];
                }
            }
        }
        s.sqrt()
    };

    let mut converged = off_norm(&a) <= JACOBI_TOLERANCE * scale;
    let mut sweeps = 0;
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
        sweeps += 1;
        converged = off_norm(&a) <= JACOBI_TOLERANCE * scale;
    }
    if !converged {
        return Err(FeatureError::NoConvergence(sweeps));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order
        .iter()
        .map(|&i| v.iter().map(|row| row[i]).collect())
        .collect();
    Ok((values, vectors))
}
