//! Vector distances used to compare programs, either by their reduced
//! feature vectors or by their relevance reactions on common flag sets.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Default clamp applied before taking the reciprocal of a distance.
pub const DEFAULT_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("{metric} distance needs at least {needed} components, got {got}")]
    TooShort {
        metric: DistanceMetric,
        needed: usize,
        got: usize,
    },
    /// The distance is mathematically undefined for these inputs: a zero
    /// vector under cosine, a constant vector under correlation.
    #[error("{0} distance is undefined for a degenerate vector")]
    Degenerate(DistanceMetric),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DistanceMetric {
    /// Root-mean-square difference.
    Euclidean,
    /// Mean absolute difference.
    Manhattan,
    Chebyshev,
    Cosine,
    /// One minus the Pearson correlation.
    Correlation,
}

impl DistanceMetric {
    pub const ALL: [DistanceMetric; 5] = [
        DistanceMetric::Euclidean,
        DistanceMetric::Manhattan,
        DistanceMetric::Chebyshev,
        DistanceMetric::Cosine,
        DistanceMetric::Correlation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DistanceMetric::Euclidean => "euclidean",
            DistanceMetric::Manhattan => "manhattan",
            DistanceMetric::Chebyshev => "chebyshev",
            DistanceMetric::Cosine => "cosine",
            DistanceMetric::Correlation => "correlation",
        }
    }

    fn min_len(self) -> usize {
        match self {
            DistanceMetric::Correlation => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistanceMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DistanceMetric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                format!(
                    "unknown metric {s:?} (expected one of euclidean, manhattan, chebyshev, cosine, correlation)"
                )
            })
    }
}

/// Distance between `u` and `v` under `metric`. Always nonnegative.
pub fn distance(metric: DistanceMetric, u: &[f64], v: &[f64]) -> Result<f64, MetricError> {
    if u.len() != v.len() {
        return Err(MetricError::LengthMismatch(u.len(), v.len()));
    }
    let n = u.len();
    if n < metric.min_len() {
        return Err(MetricError::TooShort {
            metric,
            needed: metric.min_len(),
            got: n,
        });
    }
    let pairs = u.iter().zip(v);
    let d = match metric {
        DistanceMetric::Euclidean => {
            (pairs.map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64).sqrt()
        }
        DistanceMetric::Manhattan => pairs.map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64,
        DistanceMetric::Chebyshev => pairs.map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
        DistanceMetric::Cosine => {
            let nu = dot(u, u).sqrt();
            let nv = dot(v, v).sqrt();
            if nu == 0.0 || nv == 0.0 {
                return Err(MetricError::Degenerate(metric));
            }
            (1.0 - dot(u, v) / (nu * nv)).clamp(0.0, 2.0)
        }
        DistanceMetric::Correlation => {
            let cu = centred(u).ok_or(MetricError::Degenerate(metric))?;
            let cv = centred(v).ok_or(MetricError::Degenerate(metric))?;
            let r = dot(&cu, &cv) / (dot(&cu, &cu).sqrt() * dot(&cv, &cv).sqrt());
            (1.0 - r).clamp(0.0, 2.0)
        }
    };
    Ok(d)
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// `u` minus its mean, or `None` when `u` is constant.
fn centred(u: &[f64]) -> Option<Vec<f64>> {
    if u.iter().all(|&x| x == u[0]) {
        return None;
    }
    let mean = u.iter().sum::<f64>() / u.len() as f64;
    let c: Vec<f64> = u.iter().map(|x| x - mean).collect();
    if dot(&c, &c) == 0.0 {
        return None;
    }
    Some(c)
}

/// `1 / max(d, epsilon)`.
pub fn similarity_from_distance(d: f64, epsilon: f64) -> f64 {
    1.0 / d.max(epsilon)
}
