use nalgebra::DMatrix;

use super::{LearnError, MetricField};
use crate::polyalg::{
    compose, monomial_curves, MonomialBasis, PolyTrajectory, UniPoly, UniPolyMatrix,
};
use crate::soscomp::LinearMatrixPolynomial;

/// Sample count for the metric positivity check along a trajectory.
const METRIC_CHECK_SAMPLES: usize = 200;

/// The matrix polynomial
///
/// ```text
/// L f(t) = -sym[M(x(t)) Jf(x(t))] - Mdot(x(t)) - tau M(x(t)),
/// Mdot_pq = grad M_pq' f,
/// ```
///
/// as an affine function of the component-major coefficients of a
/// degree-`degree` field `f`.
pub fn build_contraction_constraint(
    traj: &PolyTrajectory,
    tau: f64,
    metric: &MetricField,
    degree: usize,
) -> Result<LinearMatrixPolynomial, LearnError> {
    let n = traj.dim();
    if metric.dim() != n {
        return Err(LearnError::DimensionMismatch {
            expected: n,
            got: metric.dim(),
        });
    }
    let lowest = metric.min_eigenvalue_along(traj, METRIC_CHECK_SAMPLES);
    if !(lowest >= metric.margin()) {
        return Err(LearnError::MetricNotPositive {
            min_eigenvalue: lowest,
            margin: metric.margin(),
        });
    }
    let h = traj.horizon();
    let basis = MonomialBasis::new(n, degree);
    let curves = monomial_curves(&basis, traj)?;

    let m_t: Vec<Vec<UniPoly>> = (0..n)
        .map(|p| (0..n).map(|q| compose(metric.entry(p, q), traj)).collect())
        .collect::<Result<_, _>>()?;
    // dm_t[k][p][q] = d M_pq / d x_k along the curve
    let dm_t: Option<Vec<Vec<Vec<UniPoly>>>> = if metric.is_constant() {
        None
    } else {
        Some(
            (0..n)
                .map(|k| {
                    metric
                        .partial(k)
                        .iter()
                        .map(|row| row.iter().map(|p| compose(p, traj)).collect())
                        .collect()
                })
                .collect::<Result<_, _>>()?,
        )
    };

    // d m_alpha / d x_j along the curve
    let zero = UniPoly::zero(h);
    let dcurve = |alpha: usize, j: usize| -> UniPoly {
        let e = basis.exponent(alpha);
        if e[j] == 0 {
            return zero.clone();
        }
        let mut lower = e.to_vec();
        lower[j] -= 1;
        curves[basis.index_of(&lower).expect("lowered exponent in basis")].scale(e[j] as f64)
    };

    let len = basis.len();
    let mut terms = Vec::with_capacity(n * len);
    for k in 0..n {
        for alpha in 0..len {
            let grads: Vec<UniPoly> = (0..n).map(|j| dcurve(alpha, j)).collect();
            let mut entries = vec![vec![zero.clone(); n]; n];
            for q in 0..n {
                for p in 0..=q {
                    // (M J)_pq = M_pk d_q m_alpha for the coefficient of x^alpha in f_k
                    let mut e = m_t[p][k]
                        .mul(&grads[q])
                        .add(&m_t[q][k].mul(&grads[p]))
                        .scale(-0.5);
                    if let Some(dm) = &dm_t {
                        e = e.sub(&dm[k][p][q].mul(&curves[alpha]));
                    }
                    entries[p][q] = e.clone();
                    entries[q][p] = e;
                }
            }
            terms.push(UniPolyMatrix::from_entries(&entries)?);
        }
    }
    let constant_entries: Vec<Vec<UniPoly>> = m_t
        .iter()
        .map(|row| row.iter().map(|m| m.scale(-tau)).collect())
        .collect();
    let constant = UniPolyMatrix::from_entries(&constant_entries)?;
    Ok(LinearMatrixPolynomial::new(constant, terms)?)
}

/// `sym[M Jf] + Mdot + tau M` at a point, for a concrete field given by
/// its Jacobian and value. This is the negated constraint matrix.
pub(crate) fn residual_matrix(
    metric: &MetricField,
    x: &[f64],
    f: &[f64],
    jf: &DMatrix<f64>,
    tau: f64,
) -> DMatrix<f64> {
    let m = metric.eval(x);
    let mj = &m * jf;
    let mut r = 0.5 * (&mj + mj.transpose()) + &m * tau;
    if !metric.is_constant() {
        for (k, fk) in f.iter().enumerate() {
            r += crate::polyalg::eval_matrix(&metric.partial(k), x) * *fk;
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polyalg::{PolyMap, Polynomial};

    #[test]
    fn identity_metric_linear_field_is_time_independent() {
        let traj = PolyTrajectory::new(
            vec![
                UniPoly::time(1.0),
                UniPoly::from_monomial(1.0, &[0.5, 0.0, 1.0]),
            ],
            0.0,
        )
        .unwrap();
        let lmp = build_contraction_constraint(&traj, 1.0, &MetricField::identity(2), 1).unwrap();
        // f(x) = A x with A = [[-1, 2], [0, -3]]; basis order 1, x1, x2
        let c = [0.0, -1.0, 2.0, 0.0, 0.0, -3.0];
        let p = lmp.substitute(&c).unwrap();
        assert_eq!(p.degree(), 0);
        let expect =
            DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 3.0]) - DMatrix::identity(2, 2);
        assert!((p.eval(0.4) - expect).amax() < 1e-14);
    }

    #[test]
    fn state_dependent_metric_matches_pointwise_expansion() {
        // M(x) = (1 + x1^2) I along x(t) = (t, 0); f random of degree 2.
        let x1 = Polynomial::variable(2, 0);
        let s = Polynomial::constant(2, 1.0).add(&x1.mul(&x1));
        let z = Polynomial::constant(2, 0.0);
        let metric = MetricField::new(vec![vec![s.clone(), z.clone()], vec![z, s]], 0.5).unwrap();
        let traj = PolyTrajectory::new(vec![UniPoly::time(1.0), UniPoly::zero(1.0)], 0.0).unwrap();
        let tau = 0.7;
        let lmp = build_contraction_constraint(&traj, tau, &metric, 2).unwrap();
        let c: Vec<f64> = (0..12).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
        let p = lmp.substitute(&c).unwrap();
        let field = PolyMap::from_coefficients(MonomialBasis::new(2, 2), &c).unwrap();
        let jac = field.jacobian();
        for i in 0..20 {
            let t = i as f64 / 19.0;
            let x = [t, 0.0];
            let f = field.eval(&x).unwrap();
            let jf = crate::polyalg::eval_matrix(&jac, &x);
            // hand expansion: M = (1 + t^2) I, Mdot = 2 t f_1 I
            let m = 1.0 + t * t;
            let mut expect = -(0.5 * m) * (&jf + jf.transpose())
                - DMatrix::identity(2, 2) * (2.0 * t * f[0] + tau * m);
            expect = 0.5 * (&expect + expect.transpose());
            assert!((p.eval(t) - expect).amax() < 1e-9);
            let r = residual_matrix(&metric, &x, f.as_slice(), &jf, tau);
            assert!((p.eval(t) + r).amax() < 1e-9);
        }
    }

    #[test]
    fn non_positive_metric_is_rejected() {
        let traj = PolyTrajectory::new(vec![UniPoly::time(1.0)], 0.0).unwrap();
        let x = Polynomial::variable(1, 0);
        let metric = MetricField::new(vec![vec![x]], 1e-3).unwrap();
        assert!(matches!(
            build_contraction_constraint(&traj, 1.0, &metric, 1),
            Err(LearnError::MetricNotPositive { .. })
        ));
    }

    #[test]
    fn doubling_tau_changes_only_the_constant() {
        let traj = PolyTrajectory::new(
            vec![
                UniPoly::time(2.0),
                UniPoly::from_monomial(2.0, &[1.0, -0.5]),
            ],
            0.0,
        )
        .unwrap();
        let a = build_contraction_constraint(&traj, 1.0, &MetricField::identity(2), 3).unwrap();
        let b = build_contraction_constraint(&traj, 2.0, &MetricField::identity(2), 3).unwrap();
        assert_eq!(a.terms(), b.terms());
        assert!(
            (a.constant().scale(2.0).coeffs()[0].clone() - b.constant().coeffs()[0].clone()).amax()
                < 1e-15
        );
    }
}
