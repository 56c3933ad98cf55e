use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{BoundingBox, DynError, Field};
use crate::learner::{residual_matrix, MetricField};
use crate::polyalg::{eval_matrix, PolyMap, PolyTrajectory, Polynomial};

/// Per-axis sample count for the tube constants.
const GRID_PER_AXIS: usize = 50;
/// Cap on the total number of grid samples.
const GRID_CAP: usize = 1_000_000;
/// Samples used to check that the trajectory lies in the region.
const TRAJECTORY_SAMPLES: usize = 200;

/// Largest eigenvalue of `sym[M Jf] + Mdot + tau M` at `x`; nonpositive
/// values certify the contraction inequality at that point.
///
/// # Panics
///
/// If the field, metric and point dimensions differ.
pub fn contraction_residual(field: &dyn Field, metric: &MetricField, tau: f64, x: &[f64]) -> f64 {
    assert_eq!(
        field.dim(),
        metric.dim(),
        "field and metric dimensions differ"
    );
    assert_eq!(
        x.len(),
        field.dim(),
        "point dimension differs from the field"
    );
    let r = residual_matrix(metric, x, field.eval(x).as_slice(), &field.jacobian(x), tau);
    SymmetricEigen::new(r).eigenvalues.max()
}

/// `sqrt(d' M(x) d)` with `d = y - x`.
pub fn metric_distance(metric: &MetricField, x: &[f64], y: &[f64]) -> f64 {
    let d = DVector::from_column_slice(y) - DVector::from_column_slice(x);
    let m = metric.eval(x);
    (d.transpose() * m * &d)[(0, 0)].max(0.0).sqrt()
}

/// Entries of `sym[M Jf] + Mdot + rate M` as polynomials in `x`.
pub fn residual_polynomials(
    field: &PolyMap,
    metric: &MetricField,
    rate: f64,
) -> Result<Vec<Vec<Polynomial>>, DynError> {
    let n = field.dim();
    if metric.dim() != n {
        return Err(DynError::DimensionMismatch {
            expected: n,
            got: metric.dim(),
        });
    }
    let jac = field.jacobian();
    let partials: Vec<Vec<Vec<Polynomial>>> = (0..n).map(|k| metric.partial(k)).collect();
    let mut out = vec![vec![Polynomial::constant(n, 0.0); n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut e = metric.entry(i, j).scale(rate);
            for k in 0..n {
                // (M J)_ij = M_ik J_kj
                let mj = metric.entry(i, k).mul(&jac[k][j]);
                let mji = metric.entry(j, k).mul(&jac[k][i]);
                e = e.add(&mj.add(&mji).scale(0.5));
                if !metric.is_constant() {
                    e = e.add(&partials[k][i][j].mul(field.component(k)));
                }
            }
            out[j][i] = e.clone();
            out[i][j] = e;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TubeRadius {
    Finite {
        epsilon: f64,
    },
    /// `K = 0`: the bound holds on the whole region.
    WholeRegion,
}

/// Radius of the neighbourhood of a trajectory in which the field is
/// `tau / 2`-contracting, from `eps = tau c / (2 n K)`.
///
/// `c` and `K` come from a finite grid over the region, so the radius is an
/// estimate rather than a certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeEstimate {
    pub radius: TubeRadius,
    pub tau: f64,
    /// Smallest metric eigenvalue over the region.
    pub c: f64,
    /// Largest gradient norm of an entry of `sym[M Jf] + Mdot - (tau / 2) M`.
    pub k: f64,
    pub region: BoundingBox,
    pub samples: usize,
}

impl TubeEstimate {
    pub fn epsilon(&self) -> Option<f64> {
        match self.radius {
            TubeRadius::Finite { epsilon } => Some(epsilon),
            TubeRadius::WholeRegion => None,
        }
    }

    /// Whether a point at `distance` from the trajectory is inside the tube.
    pub fn covers(&self, distance: f64) -> bool {
        self.epsilon().map_or(true, |e| distance <= e)
    }
}

fn grid_points(region: &BoundingBox) -> (usize, usize) {
    let n = region.dim();
    let mut per_axis = GRID_PER_AXIS;
    while per_axis > 2 && (per_axis as f64).powi(n as i32) > GRID_CAP as f64 {
        per_axis -= 1;
    }
    (per_axis, per_axis.pow(n as u32))
}

fn grid_point(region: &BoundingBox, per_axis: usize, mut index: usize) -> Vec<f64> {
    (0..region.dim())
        .map(|k| {
            let i = index % per_axis;
            index /= per_axis;
            let s = i as f64 / (per_axis - 1) as f64;
            region.lo[k] + s * (region.hi[k] - region.lo[k])
        })
        .collect()
}

pub fn tube_radius(
    field: &PolyMap,
    metric: &MetricField,
    tau: f64,
    traj: &PolyTrajectory,
    region: &BoundingBox,
) -> Result<TubeEstimate, DynError> {
    let n = field.dim();
    if region.dim() != n || traj.dim() != n {
        return Err(DynError::DimensionMismatch {
            expected: n,
            got: if region.dim() != n {
                region.dim()
            } else {
                traj.dim()
            },
        });
    }
    if !(tau > 0.0) {
        return Err(DynError::InvalidOptions(format!(
            "rate must be positive, got {tau}"
        )));
    }
    for i in 0..TRAJECTORY_SAMPLES {
        let t = traj.horizon() * i as f64 / (TRAJECTORY_SAMPLES - 1) as f64;
        if !region.contains(traj.eval(t).as_slice()) {
            return Err(DynError::OutsideRegion { t });
        }
    }
    let residual = residual_polynomials(field, metric, -0.5 * tau)?;
    // grads[l][i][j] = d R_ij / d x_l
    let grads: Vec<Vec<Vec<Polynomial>>> = (0..n)
        .map(|l| {
            residual
                .iter()
                .map(|row| row.iter().map(|p| p.partial(l)).collect())
                .collect()
        })
        .collect();
    let constant_residual = grads.iter().flatten().flatten().all(|p| p.is_zero());

    let (per_axis, samples) = grid_points(region);
    let mut c = f64::INFINITY;
    let mut k_sq = 0.0f64;
    for idx in 0..samples {
        let x = grid_point(region, per_axis, idx);
        c = c.min(SymmetricEigen::new(metric.eval(&x)).eigenvalues.min());
        if constant_residual {
            continue;
        }
        let values: Vec<DMatrix<f64>> = grads.iter().map(|g| eval_matrix(g, &x)).collect();
        for i in 0..n {
            for j in 0..=i {
                let sq: f64 = values.iter().map(|v| v[(i, j)] * v[(i, j)]).sum();
                k_sq = k_sq.max(sq);
            }
        }
    }
    let k = k_sq.sqrt();
    let radius = if k > 0.0 {
        TubeRadius::Finite {
            epsilon: tau * c / (2.0 * n as f64 * k),
        }
    } else {
        TubeRadius::WholeRegion
    };
    Ok(TubeEstimate {
        radius,
        tau,
        c,
        k,
        region: region.clone(),
        samples,
    })
}
