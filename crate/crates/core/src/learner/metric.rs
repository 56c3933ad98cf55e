use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::LearnError;
use crate::polyalg::{eval_matrix, MonomialBasis, PolyTrajectory, Polynomial};

/// Symmetric matrix of polynomials `M(x)` used as a contraction metric,
/// with the uniform positivity margin it is required to satisfy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MetricRepr", into = "MetricRepr")]
pub struct MetricField {
    entries: Vec<Vec<Polynomial>>,
    margin: f64,
}

/// Serialized form: entry coefficients over the graded-lex basis of
/// `degree` in `dimension` variables.
#[derive(Serialize, Deserialize)]
struct MetricRepr {
    dimension: usize,
    degree: usize,
    margin: f64,
    entries: Vec<Vec<Vec<f64>>>,
}

impl From<MetricField> for MetricRepr {
    fn from(m: MetricField) -> Self {
        MetricRepr {
            dimension: m.dim(),
            degree: m.degree(),
            margin: m.margin,
            entries: m
                .entries
                .iter()
                .map(|row| row.iter().map(|p| p.coeffs().to_vec()).collect())
                .collect(),
        }
    }
}

impl TryFrom<MetricRepr> for MetricField {
    type Error = LearnError;

    fn try_from(r: MetricRepr) -> Result<Self, Self::Error> {
        let basis = MonomialBasis::new(r.dimension, r.degree);
        let entries = r
            .entries
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|c| Polynomial::new(basis.clone(), c).map_err(LearnError::from))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        MetricField::new(entries, r.margin)
    }
}

impl MetricField {
    /// Entries are promoted to a common basis; symmetry is checked
    /// coefficientwise.
    pub fn new(entries: Vec<Vec<Polynomial>>, margin: f64) -> Result<Self, LearnError> {
        let n = entries.len();
        if n == 0 {
            return Err(LearnError::InvalidMetric("empty metric".into()));
        }
        if !(margin > 0.0) {
            return Err(LearnError::InvalidMetric("margin must be positive".into()));
        }
        let degree = entries
            .iter()
            .flat_map(|r| r.iter().map(|p| p.basis().degree()))
            .max()
            .unwrap_or(0);
        let mut out = Vec::with_capacity(n);
        for row in &entries {
            if row.len() != n {
                return Err(LearnError::InvalidMetric("metric is not square".into()));
            }
            let mut promoted = Vec::with_capacity(n);
            for p in row {
                if p.dim() != n {
                    return Err(LearnError::InvalidMetric(format!(
                        "entry has {} variables, metric is {n}x{n}",
                        p.dim()
                    )));
                }
                promoted.push(p.promote(degree));
            }
            out.push(promoted);
        }
        for i in 0..n {
            for j in 0..i {
                if out[i][j] != out[j][i] {
                    return Err(LearnError::InvalidMetric("metric is not symmetric".into()));
                }
            }
        }
        Ok(Self {
            entries: out,
            margin,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(&DMatrix::identity(n, n), 1e-6).expect("identity metric")
    }

    pub fn constant(m: &DMatrix<f64>, margin: f64) -> Result<Self, LearnError> {
        let n = m.nrows();
        let entries = (0..n)
            .map(|i| (0..n).map(|j| Polynomial::constant(n, m[(i, j)])).collect())
            .collect();
        Self::new(entries, margin)
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn degree(&self) -> usize {
        self.entries[0][0].basis().degree()
    }

    pub fn entries(&self) -> &[Vec<Polynomial>] {
        &self.entries
    }

    pub fn entry(&self, i: usize, j: usize) -> &Polynomial {
        &self.entries[i][j]
    }

    pub fn is_constant(&self) -> bool {
        self.entries.iter().flatten().all(|p| p.degree() == 0)
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        eval_matrix(&self.entries, x)
    }

    /// `d M / d x_k` as a polynomial matrix.
    pub fn partial(&self, k: usize) -> Vec<Vec<Polynomial>> {
        self.entries
            .iter()
            .map(|row| row.iter().map(|p| p.partial(k)).collect())
            .collect()
    }

    /// The metric in coordinates `y` with `x = center + scale * y`.
    pub fn substitute_affine(&self, center: &[f64], scale: f64) -> Result<Self, LearnError> {
        let entries = self
            .entries
            .iter()
            .map(|row| {
                row.iter()
                    .map(|p| p.substitute_affine(center, scale).map_err(LearnError::from))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(entries, self.margin)
    }

    /// Smallest eigenvalue of `M` over `samples` equispaced points of the
    /// trajectory.
    pub fn min_eigenvalue_along(&self, traj: &PolyTrajectory, samples: usize) -> f64 {
        let samples = samples.max(2);
        (0..samples)
            .map(|i| {
                let t = traj.horizon() * i as f64 / (samples - 1) as f64;
                let m = self.eval(traj.eval(t).as_slice());
                SymmetricEigen::new(m).eigenvalues.min()
            })
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_is_exact() {
        let x1 = Polynomial::variable(2, 0);
        let one = Polynomial::constant(2, 1.0);
        let d = one.add(&x1.mul(&x1).scale(0.1 + 0.2));
        let m = MetricField::new(
            vec![
                vec![d.clone(), Polynomial::constant(2, 0.0)],
                vec![Polynomial::constant(2, 0.0), d],
            ],
            1e-3,
        )
        .unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let back: MetricField = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_asymmetric_entries() {
        let a = Polynomial::variable(2, 0);
        let z = Polynomial::constant(2, 0.0);
        let one = Polynomial::constant(2, 1.0);
        assert!(MetricField::new(vec![vec![one.clone(), a], vec![z, one]], 1e-6).is_err());
    }
}
