//! Finite metric spaces, point distributions and cost vectors.
//!
//! A [`MetricSpace`] is always stored diameter-normalized: the largest
//! pairwise distance equals 1 (for n >= 2) and the original scale is kept
//! alongside so results can be reported in input units.

mod generators;
mod io;
mod transport;

pub use generators::{expander_like_metric, path_metric, random_euclidean_metric, uniform_metric};
pub use io::{read_metric_csv, read_vectors_csv, write_metric_csv, write_vectors_csv};
pub use transport::{emd_exact, transport_cost};
pub(crate) use transport::emd_on_points;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute slack used for symmetry, diagonal and triangle checks.
pub const METRIC_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSpace {
    points: Vec<String>,
    dist: Vec<f64>,
    scale: f64,
}

impl MetricSpace {
    /// Validates a raw distance matrix and divides it by its diameter.
    ///
    /// Point identifiers default to `0..n` when `points` is `None`.
    pub fn validate_and_normalize(raw: &[Vec<f64>], points: Option<Vec<String>>) -> Result<Self> {
        let n = raw.len();
        if n == 0 {
            return Err(Error::InvalidMetric("metric has no points".into()));
        }
        let points = match points {
            Some(p) if p.len() != n => {
                return Err(Error::InvalidMetric(format!(
                    "{} identifiers for a {n}x{n} matrix",
                    p.len()
                )))
            }
            Some(p) => p,
            None => (0..n).map(|i| i.to_string()).collect(),
        };
        let mut dist = Vec::with_capacity(n * n);
        for (i, row) in raw.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidMetric(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::InvalidMetric(format!("d({i},{j}) is not finite")));
                }
                dist.push(v);
            }
        }
        check_metric_axioms(&dist, n)?;
        let diameter = dist.iter().cloned().fold(0.0, f64::max);
        let scale = if diameter > 0.0 { diameter } else { 1.0 };
        if scale != 1.0 {
            for v in dist.iter_mut() {
                *v /= scale;
            }
        }
        Ok(MetricSpace { points, dist, scale })
    }

    /// Builds from a flat row-major matrix.
    pub fn from_flat(flat: &[f64], n: usize) -> Result<Self> {
        if flat.len() != n * n {
            return Err(Error::Dimension {
                expected: n * n,
                got: flat.len(),
            });
        }
        let rows: Vec<Vec<f64>> = flat.chunks(n.max(1)).map(|c| c.to_vec()).collect();
        Self::validate_and_normalize(&rows, None)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[String] {
        &self.points
    }

    #[inline]
    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.points.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.points.len();
        &self.dist[i * n..(i + 1) * n]
    }

    /// Row-major distance matrix.
    pub fn matrix(&self) -> &[f64] {
        &self.dist
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.row(i).to_vec()).collect()
    }

    /// Factor the input distances were divided by.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn diameter(&self) -> f64 {
        self.dist.iter().cloned().fold(0.0, f64::max)
    }

    /// Smallest distance between distinct points; `+inf` for a single point.
    pub fn min_distance(&self) -> f64 {
        let n = self.len();
        let mut m = f64::INFINITY;
        for i in 0..n {
            for j in (i + 1)..n {
                m = m.min(self.d(i, j));
            }
        }
        m
    }

    /// Number of points in the closed ball `B(x, r)`.
    pub fn ball_count(&self, x: usize, r: f64) -> usize {
        self.row(x).iter().filter(|&&d| d <= r).count()
    }

    /// Indices of the points in the closed ball `B(x, r)`.
    pub fn ball(&self, x: usize, r: f64) -> Vec<usize> {
        self.row(x)
            .iter()
            .enumerate()
            .filter(|(_, &d)| d <= r)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_ultrametric(&self) -> bool {
        let n = self.len();
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    if self.d(x, z) > self.d(x, y).max(self.d(y, z)) + METRIC_TOLERANCE {
                        return false;
                    }
                }
            }
        }
        true
    }
}

fn check_metric_axioms(dist: &[f64], n: usize) -> Result<()> {
    let d = |i: usize, j: usize| dist[i * n + j];
    for i in 0..n {
        if d(i, i).abs() > METRIC_TOLERANCE {
            return Err(Error::InvalidMetric(format!("nonzero diagonal d({i},{i}) = {}", d(i, i))));
        }
        for j in 0..n {
            if i == j {
                continue;
            }
            if (d(i, j) - d(j, i)).abs() > METRIC_TOLERANCE {
                return Err(Error::InvalidMetric(format!(
                    "asymmetric: d({i},{j}) = {} but d({j},{i}) = {}",
                    d(i, j),
                    d(j, i)
                )));
            }
            if d(i, j) <= 0.0 {
                return Err(Error::InvalidMetric(format!(
                    "distinct points {i} and {j} at distance {}",
                    d(i, j)
                )));
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let detour = d(i, j) + d(j, k);
                if d(i, k) > detour + METRIC_TOLERANCE {
                    return Err(Error::TriangleViolation {
                        i,
                        j,
                        k,
                        direct: d(i, k),
                        detour,
                    });
                }
            }
        }
    }
    Ok(())
}

/// Probability vector over the points of a metric space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        if mass.iter().any(|&m| !m.is_finite() || m < 0.0) {
            return Err(Error::InvalidDistribution("negative or non-finite mass".into()));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!("total mass {total}")));
        }
        Ok(Distribution(mass))
    }

    pub fn point_mass(n: usize, x: usize) -> Self {
        let mut mass = vec![0.0; n];
        mass[x] = 1.0;
        Distribution(mass)
    }

    pub fn uniform(n: usize) -> Self {
        Distribution(vec![1.0 / n as f64; n])
    }

    pub fn mass(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Nonnegative service costs, one entry per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostVector(Vec<f64>);

impl CostVector {
    pub fn new(cost: Vec<f64>) -> Result<Self> {
        if cost.iter().any(|&c| !c.is_finite() || c < 0.0) {
            return Err(Error::Parse("cost entries must be finite and nonnegative".into()));
        }
        Ok(CostVector(cost))
    }

    pub fn zeros(n: usize) -> Self {
        CostVector(vec![0.0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().cloned().fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> CostVector {
        CostVector(self.0.iter().map(|c| c * factor).collect())
    }

    pub fn dot(&self, mass: &[f64]) -> f64 {
        self.0.iter().zip(mass).map(|(c, m)| c * m).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_by_diameter() {
        let m = MetricSpace::validate_and_normalize(&[vec![0.0, 2.0], vec![2.0, 0.0]], None).unwrap();
        assert_eq!(m.to_rows(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(m.scale(), 2.0);

        let unit = MetricSpace::validate_and_normalize(&[vec![0.0, 1.0], vec![1.0, 0.0]], None).unwrap();
        assert_eq!(unit.to_rows(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(unit.scale(), 1.0);
    }

    #[test]
    fn rejects_triangle_violation() {
        let raw = vec![vec![0.0, 1.0, 3.0], vec![1.0, 0.0, 1.0], vec![3.0, 1.0, 0.0]];
        let err = MetricSpace::validate_and_normalize(&raw, None).unwrap_err();
        assert!(matches!(err, Error::TriangleViolation { .. }), "{err}");
    }

    #[test]
    fn rejects_malformed_matrices() {
        assert!(MetricSpace::validate_and_normalize(&[], None).is_err());
        let asym = vec![vec![0.0, 1.0], vec![0.5, 0.0]];
        assert!(MetricSpace::validate_and_normalize(&asym, None).is_err());
        let diag = vec![vec![0.1, 1.0], vec![1.0, 0.0]];
        assert!(MetricSpace::validate_and_normalize(&diag, None).is_err());
        let coincident = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        assert!(MetricSpace::validate_and_normalize(&coincident, None).is_err());
        let nan = vec![vec![0.0, f64::NAN], vec![f64::NAN, 0.0]];
        assert!(MetricSpace::validate_and_normalize(&nan, None).is_err());
    }

    #[test]
    fn normalization_is_idempotent() {
        let m = random_euclidean_metric(9, 3, 11).unwrap();
        let again = MetricSpace::validate_and_normalize(&m.to_rows(), Some(m.points().to_vec())).unwrap();
        assert_eq!(again.matrix(), m.matrix());
        assert_eq!(again.scale(), 1.0);
    }

    #[test]
    fn single_point_space() {
        let m = MetricSpace::validate_and_normalize(&[vec![0.0]], None).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.min_distance(), f64::INFINITY);
        assert!(m.is_ultrametric());
    }

    #[test]
    fn ultrametric_detection() {
        assert!(uniform_metric(5).unwrap().is_ultrametric());
        assert!(!path_metric(3).unwrap().is_ultrametric());
        assert!(path_metric(2).unwrap().is_ultrametric());
        assert!(random_euclidean_metric(2, 2, 3).unwrap().is_ultrametric());
    }

    #[test]
    fn balls_are_closed() {
        let m = path_metric(3).unwrap();
        assert_eq!(m.ball_count(0, 0.5), 2);
        assert_eq!(m.ball(1, 0.5), vec![0, 1, 2]);
        assert_eq!(m.ball_count(0, 0.49), 1);
    }

    #[test]
    fn distribution_validation() {
        assert!(Distribution::new(vec![0.5, 0.5]).is_ok());
        assert!(Distribution::new(vec![0.5, 0.6]).is_err());
        assert!(Distribution::new(vec![-0.5, 1.5]).is_err());
        assert!(CostVector::new(vec![1.0, -1.0]).is_err());
    }
}
