use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::basis::MonomialBasis;
use super::multivariate::Polynomial;
use super::univariate::{chebyshev_values, UniPoly};
use super::PolyError;

/// Largest degree tried by [`fit_trajectory_auto`].
pub const MAX_AUTO_DEGREE: usize = 12;

/// Per-component polynomial approximation `x_poly(t)` of a sampled trajectory
/// on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyTrajectory {
    horizon: f64,
    degree: usize,
    components: Vec<UniPoly>,
    residual_rms: f64,
}

impl PolyTrajectory {
    pub fn new(components: Vec<UniPoly>, residual_rms: f64) -> Result<Self, PolyError> {
        let Some(first) = components.first() else {
            return Err(PolyError::Empty);
        };
        let horizon = first.horizon();
        let degree = components.iter().map(|c| c.degree()).max().unwrap_or(0);
        Ok(Self {
            horizon,
            degree,
            components,
            residual_rms,
        })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn residual_rms(&self) -> f64 {
        self.residual_rms
    }

    pub fn components(&self) -> &[UniPoly] {
        &self.components
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.components.iter().map(|c| c.eval(t)))
    }

    /// Analytic time derivative of the fit.
    pub fn velocity(&self) -> PolyTrajectory {
        PolyTrajectory {
            horizon: self.horizon,
            degree: self.degree.saturating_sub(1),
            components: self.components.iter().map(|c| c.derivative()).collect(),
            residual_rms: 0.0,
        }
    }

    /// Copy with time and space mapped through `x -> (x - center) / scale`,
    /// `t -> t / time_scale`.
    pub fn normalized(&self, center: &[f64], scale: f64, time_scale: f64) -> PolyTrajectory {
        let horizon = self.horizon / time_scale;
        let components = self
            .components
            .iter()
            .zip(center)
            .map(|(c, &mid)| {
                let shifted = c
                    .sub(&UniPoly::constant(c.horizon(), mid))
                    .scale(1.0 / scale);
                UniPoly::from_chebyshev(horizon, shifted.chebyshev_coeffs().to_vec())
            })
            .collect();
        PolyTrajectory {
            horizon,
            degree: self.degree,
            components,
            residual_rms: self.residual_rms / scale,
        }
    }
}

/// Exact substitution `p(c(t))`.
pub fn compose(p: &Polynomial, c: &PolyTrajectory) -> Result<UniPoly, PolyError> {
    if p.dim() != c.dim() {
        return Err(PolyError::DimensionMismatch {
            expected: p.dim(),
            got: c.dim(),
        });
    }
    let curves = monomial_curves(p.basis(), c)?;
    let mut acc = UniPoly::zero(c.horizon());
    for (coef, curve) in p.coeffs().iter().zip(&curves) {
        if *coef != 0.0 {
            acc.axpy(*coef, curve);
        }
    }
    Ok(acc)
}

/// Every basis monomial composed with the curve, in basis order.
pub fn monomial_curves(
    basis: &MonomialBasis,
    c: &PolyTrajectory,
) -> Result<Vec<UniPoly>, PolyError> {
    if basis.dim() != c.dim() {
        return Err(PolyError::DimensionMismatch {
            expected: basis.dim(),
            got: c.dim(),
        });
    }
    let h = c.horizon();
    let powers: Vec<Vec<UniPoly>> = c
        .components()
        .iter()
        .map(|x| {
            let mut row = vec![UniPoly::constant(h, 1.0)];
            for _ in 0..basis.degree() {
                let next = row.last().unwrap().mul(x);
                row.push(next);
            }
            row
        })
        .collect();
    let mut out: Vec<UniPoly> = Vec::with_capacity(basis.len());
    for e in basis.exponents() {
        // Reuse the curve of the monomial with the last nonzero exponent
        // lowered by one; graded order guarantees it was already built.
        let out_ref = &out;
        let curve = match e.iter().rposition(|&p| p > 0) {
            None => UniPoly::constant(h, 1.0),
            Some(k) => {
                let mut lower = e.clone();
                lower[k] -= 1;
                let idx = basis.index_of(&lower).unwrap();
                out_ref[idx].mul(&powers[k][1])
            }
        };
        out.push(curve);
    }
    Ok(out)
}

/// Least-squares fit of each coordinate over the Chebyshev basis on
/// `[0, T]`, `T` being the last sample time.
pub fn fit_trajectory(
    times: &[f64],
    positions: &[DVector<f64>],
    degree: usize,
) -> Result<PolyTrajectory, PolyError> {
    validate_samples(times, positions, degree)?;
    let horizon = *times.last().unwrap();
    let dim = positions[0].len();
    let m = times.len();
    let design = DMatrix::from_row_iterator(
        m,
        degree + 1,
        times
            .iter()
            .flat_map(|&t| chebyshev_values(2.0 * t / horizon - 1.0, degree)),
    );
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-12 * smax * (m as f64))
        .count();
    if rank < degree + 1 {
        return Err(PolyError::RankDeficient {
            rank,
            needed: degree + 1,
        });
    }
    let targets = DMatrix::from_fn(m, dim, |i, k| positions[i][k]);
    let coeffs = svd
        .solve(&targets, 0.0)
        .map_err(|_| PolyError::RankDeficient {
            rank,
            needed: degree + 1,
        })?;
    let fitted = &design * &coeffs;
    let sq: f64 = (&fitted - &targets).iter().map(|v| v * v).sum();
    let residual_rms = (sq / m as f64).sqrt();
    let components = (0..dim)
        .map(|k| UniPoly::from_chebyshev(horizon, coeffs.column(k).iter().copied().collect()))
        .collect();
    PolyTrajectory::new(components, residual_rms)
}

/// Smallest degree up to [`MAX_AUTO_DEGREE`] whose RMS residual is below 1%
/// of the samples' bounding-box diagonal; the best fit tried otherwise.
pub fn fit_trajectory_auto(
    times: &[f64],
    positions: &[DVector<f64>],
) -> Result<PolyTrajectory, PolyError> {
    let diag = bounding_box_diagonal(positions);
    let target = 0.01 * diag;
    let mut best: Option<PolyTrajectory> = None;
    let max_degree = MAX_AUTO_DEGREE.min(times.len().saturating_sub(1));
    for degree in 1..=max_degree {
        let fit = fit_trajectory(times, positions, degree)?;
        if fit.residual_rms() < target {
            return Ok(fit);
        }
        if best
            .as_ref()
            .map_or(true, |b| fit.residual_rms() < b.residual_rms())
        {
            best = Some(fit);
        }
    }
    best.ok_or(PolyError::InsufficientSamples {
        samples: times.len(),
        needed: 2,
    })
}

pub fn bounding_box_diagonal(points: &[DVector<f64>]) -> f64 {
    let Some(first) = points.first() else {
        return 0.0;
    };
    let mut lo = first.clone();
    let mut hi = first.clone();
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).norm()
}

fn validate_samples(
    times: &[f64],
    positions: &[DVector<f64>],
    degree: usize,
) -> Result<(), PolyError> {
    if times.len() != positions.len() {
        return Err(PolyError::DimensionMismatch {
            expected: times.len(),
            got: positions.len(),
        });
    }
    if times.len() < degree + 1 {
        return Err(PolyError::InsufficientSamples {
            samples: times.len(),
            needed: degree + 1,
        });
    }
    if times.windows(2).all(|w| w[0] == w[1]) {
        return Err(PolyError::RankDeficient {
            rank: 1,
            needed: degree + 1,
        });
    }
    if times[0] < 0.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(PolyError::NonIncreasingTimes);
    }
    let dim = positions[0].len();
    if positions.iter().any(|p| p.len() != dim) {
        return Err(PolyError::DimensionMismatch {
            expected: dim,
            got: positions
                .iter()
                .map(|p| p.len())
                .find(|&l| l != dim)
                .unwrap(),
        });
    }
    Ok(())
}
