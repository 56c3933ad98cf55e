use nalgebra::{DMatrix, DVector};

use super::LearnError;
use crate::polyalg::{monomial_curves, MonomialBasis, PolyTrajectory};

/// `L(c) = c'Qc - 2 b'c + constant` over the component-major coefficient
/// vector of a degree-`d` polynomial field.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub q: DMatrix<f64>,
    pub b: DVector<f64>,
    pub constant: f64,
}

impl QuadraticForm {
    pub fn value(&self, c: &[f64]) -> f64 {
        let c = DVector::from_column_slice(c);
        (c.transpose() * &self.q * &c)[(0, 0)] - 2.0 * self.b.dot(&c) + self.constant
    }
}

/// The imitation loss `sum_i int_0^{T_i} |f(x_i(t)) - x_i'(t)|^2 dt`,
/// integrated exactly.
///
/// `Q` is block diagonal with one copy of the monomial Gram matrix
/// `int m_a(x(t)) m_b(x(t)) dt` per field component.
pub fn build_objective(
    trajectories: &[PolyTrajectory],
    degree: usize,
) -> Result<QuadraticForm, LearnError> {
    let first = trajectories.first().ok_or(LearnError::NoDemonstrations)?;
    let n = first.dim();
    let basis = MonomialBasis::new(n, degree);
    let len = basis.len();
    let mut gram = DMatrix::zeros(len, len);
    let mut b = DVector::zeros(n * len);
    let mut constant = 0.0;
    for traj in trajectories {
        if traj.dim() != n {
            return Err(LearnError::DimensionMismatch {
                expected: n,
                got: traj.dim(),
            });
        }
        let curves = monomial_curves(&basis, traj)?;
        let vel = traj.velocity();
        for a in 0..len {
            for c in a..len {
                let v = curves[a].mul(&curves[c]).integral_over_horizon();
                gram[(a, c)] += v;
                if a != c {
                    gram[(c, a)] += v;
                }
            }
        }
        for (k, vk) in vel.components().iter().enumerate() {
            for a in 0..len {
                b[k * len + a] += curves[a].mul(vk).integral_over_horizon();
            }
            constant += vk.mul(vk).integral_over_horizon();
        }
    }
    let mut q = DMatrix::zeros(n * len, n * len);
    for k in 0..n {
        q.view_mut((k * len, k * len), (len, len)).copy_from(&gram);
    }
    Ok(QuadraticForm { q, b, constant })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polyalg::{Polynomial, UniPoly};

    #[test]
    fn constant_velocity_line() {
        // x(t) = t on [0, 1], f(x) = a + b x: L = int (a + b t - 1)^2 dt
        let traj = PolyTrajectory::new(vec![UniPoly::time(1.0)], 0.0).unwrap();
        let form = build_objective(&[traj], 1).unwrap();
        let expected = |a: f64, b: f64| a * a + a * b + b * b / 3.0 - 2.0 * a - b + 1.0;
        for (a, b) in [(0.0, 0.0), (1.0, 0.0), (0.3, -2.0)] {
            assert!((form.value(&[a, b]) - expected(a, b)).abs() < 1e-14);
        }
        let c = form.q.clone().cholesky().unwrap().solve(&form.b);
        assert!((c[0] - 1.0).abs() < 1e-12 && c[1].abs() < 1e-12);
        assert!(form.value(c.as_slice()).abs() < 1e-14);
    }

    #[test]
    fn empty_set_is_rejected() {
        assert!(matches!(
            build_objective(&[], 2),
            Err(LearnError::NoDemonstrations)
        ));
    }

    #[test]
    fn matches_gauss_legendre_quadrature() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let h = 1.7;
        let traj = PolyTrajectory::new(
            (0..2)
                .map(|_| {
                    let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    UniPoly::from_monomial(h, &c)
                })
                .collect(),
            0.0,
        )
        .unwrap();
        let basis = MonomialBasis::new(2, 3);
        let coeffs: Vec<f64> = (0..2 * basis.len())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let form = build_objective(&[traj.clone()], 3).unwrap();
        let f: Vec<Polynomial> = coeffs
            .chunks(basis.len())
            .map(|c| Polynomial::new(basis.clone(), c.to_vec()).unwrap())
            .collect();
        let vel = traj.velocity();
        // integrand has degree 2 * 9 = 18 in t: 16-point Gauss-Legendre is exact
        let (nodes, weights) = gauss_legendre(16);
        let mut quad = 0.0;
        for (x, w) in nodes.iter().zip(&weights) {
            let t = 0.5 * h * (x + 1.0);
            let p = traj.eval(t);
            let v = vel.eval(t);
            let r: f64 = (0..2)
                .map(|k| (f[k].eval(p.as_slice()).unwrap() - v[k]).powi(2))
                .sum();
            quad += 0.5 * h * w * r;
        }
        let val = form.value(&coeffs);
        assert!((val - quad).abs() <= 1e-8 * quad.abs(), "{val} vs {quad}");
    }

    fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
        // Newton iteration on P_n from Chebyshev-like starting guesses
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            nodes.push(x);
            weights.push(2.0 / ((1.0 - x * x) * dp * dp));
        }
        (nodes, weights)
    }
}
