use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::basis::{power_table, MonomialBasis};
use super::PolyError;

/// Dense multivariate polynomial with coefficients aligned to a
/// [`MonomialBasis`].
#[derive(Debug, Clone)]
pub struct Polynomial {
    basis: Arc<MonomialBasis>,
    coeffs: Vec<f64>,
}

impl PartialEq for Polynomial {
    fn eq(&self, other: &Self) -> bool {
        self.basis == other.basis && self.coeffs == other.coeffs
    }
}

impl Polynomial {
    pub fn new(basis: Arc<MonomialBasis>, coeffs: Vec<f64>) -> Result<Self, PolyError> {
        if coeffs.len() != basis.len() {
            return Err(PolyError::CoefficientLength {
                expected: basis.len(),
                got: coeffs.len(),
            });
        }
        Ok(Self { basis, coeffs })
    }

    pub fn zero(basis: Arc<MonomialBasis>) -> Self {
        let coeffs = vec![0.0; basis.len()];
        Self { basis, coeffs }
    }

    pub fn constant(dim: usize, value: f64) -> Self {
        let basis = MonomialBasis::new(dim, 0);
        Self {
            basis,
            coeffs: vec![value],
        }
    }

    /// The coordinate function `x_var`.
    pub fn variable(dim: usize, var: usize) -> Self {
        let basis = MonomialBasis::new(dim, 1);
        let mut coeffs = vec![0.0; basis.len()];
        coeffs[1 + var] = 1.0;
        Self { basis, coeffs }
    }

    /// A single term `coeff * x^exponent`.
    pub fn monomial(dim: usize, exponent: &[u16], coeff: f64) -> Self {
        let degree = exponent.iter().map(|&p| p as usize).sum();
        let basis = MonomialBasis::new(dim, degree);
        let mut coeffs = vec![0.0; basis.len()];
        let idx = basis.index_of(exponent).expect("exponent within basis");
        coeffs[idx] = coeff;
        Self { basis, coeffs }
    }

    pub fn basis(&self) -> &Arc<MonomialBasis> {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// Degree of the highest nonzero term; the zero polynomial has degree 0.
    pub fn degree(&self) -> usize {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(i, _)| {
                self.basis
                    .exponent(i)
                    .iter()
                    .map(|&p| p as usize)
                    .sum::<usize>()
            })
            .max()
            .unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, PolyError> {
        if x.len() != self.dim() {
            return Err(PolyError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        let powers = power_table(x, self.basis.degree());
        self.eval_with_powers(&powers)
    }

    pub(crate) fn eval_with_powers(&self, powers: &[Vec<f64>]) -> f64 {
        let mut acc = 0.0;
        for (c, e) in self.coeffs.iter().zip(self.basis.exponents()) {
            if *c == 0.0 {
                continue;
            }
            let mut term = *c;
            for (k, &p) in e.iter().enumerate() {
                term *= powers[k][p as usize];
            }
            acc += term;
        }
        acc
    }

    /// Re-expresses the polynomial over a basis of (at least) `degree`.
    pub fn promote(&self, degree: usize) -> Self {
        if degree == self.basis.degree() {
            return self.clone();
        }
        let basis = MonomialBasis::new(self.dim(), degree);
        let mut coeffs = vec![0.0; basis.len()];
        for (c, e) in self.coeffs.iter().zip(self.basis.exponents()) {
            if *c == 0.0 {
                continue;
            }
            let idx = basis
                .index_of(e)
                .expect("promotion target basis too small for nonzero term");
            coeffs[idx] = *c;
        }
        Self { basis, coeffs }
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            basis: self.basis.clone(),
            coeffs: self.coeffs.iter().map(|c| c * factor).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim(), other.dim(), "polynomial dimension mismatch");
        let degree = self.basis.degree().max(other.basis.degree());
        let mut out = self.promote(degree);
        let rhs = other.promote(degree);
        for (a, b) in out.coeffs.iter_mut().zip(rhs.coeffs) {
            *a += b;
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.dim(), other.dim(), "polynomial dimension mismatch");
        let basis = MonomialBasis::new(self.dim(), self.basis.degree() + other.basis.degree());
        let mut coeffs = vec![0.0; basis.len()];
        let mut exp = vec![0u16; self.dim()];
        for (a, ea) in self.coeffs.iter().zip(self.basis.exponents()) {
            if *a == 0.0 {
                continue;
            }
            for (b, eb) in other.coeffs.iter().zip(other.basis.exponents()) {
                if *b == 0.0 {
                    continue;
                }
                for k in 0..exp.len() {
                    exp[k] = ea[k] + eb[k];
                }
                coeffs[basis.index_of(&exp).unwrap()] += a * b;
            }
        }
        Self { basis, coeffs }
    }

    /// Partial derivative with respect to `var`, expressed over the basis of
    /// degree `max(d - 1, 0)`.
    pub fn partial(&self, var: usize) -> Self {
        let degree = self.basis.degree().saturating_sub(1);
        let basis = MonomialBasis::new(self.dim(), degree);
        let mut coeffs = vec![0.0; basis.len()];
        let mut exp = vec![0u16; self.dim()];
        for (c, e) in self.coeffs.iter().zip(self.basis.exponents()) {
            if *c == 0.0 || e[var] == 0 {
                continue;
            }
            exp.copy_from_slice(e);
            exp[var] -= 1;
            coeffs[basis.index_of(&exp).unwrap()] += c * e[var] as f64;
        }
        Self { basis, coeffs }
    }

    pub fn gradient(&self) -> Vec<Polynomial> {
        (0..self.dim()).map(|k| self.partial(k)).collect()
    }

    /// Substitutes `inner[k]` for variable `x_k`. All inner polynomials must
    /// share a dimension, which becomes the dimension of the result.
    pub fn compose_map(&self, inner: &[Polynomial]) -> Result<Polynomial, PolyError> {
        if inner.len() != self.dim() {
            return Err(PolyError::DimensionMismatch {
                expected: self.dim(),
                got: inner.len(),
            });
        }
        let out_dim = inner[0].dim();
        if inner.iter().any(|p| p.dim() != out_dim) {
            return Err(PolyError::DimensionMismatch {
                expected: out_dim,
                got: inner
                    .iter()
                    .map(|p| p.dim())
                    .find(|&d| d != out_dim)
                    .unwrap(),
            });
        }
        let d = self.basis.degree();
        let powers: Vec<Vec<Polynomial>> = inner
            .iter()
            .map(|q| {
                let mut row = vec![Polynomial::constant(out_dim, 1.0)];
                for _ in 0..d {
                    let next = row.last().unwrap().mul(q);
                    row.push(next);
                }
                row
            })
            .collect();
        let mut acc = Polynomial::constant(out_dim, 0.0);
        for (c, e) in self.coeffs.iter().zip(self.basis.exponents()) {
            if *c == 0.0 {
                continue;
            }
            let mut term = Polynomial::constant(out_dim, *c);
            for (k, &p) in e.iter().enumerate() {
                if p > 0 {
                    term = term.mul(&powers[k][p as usize]);
                }
            }
            acc = acc.add(&term);
        }
        Ok(acc)
    }

    /// `p(center + scale * y)` as a polynomial in `y`.
    pub fn substitute_affine(&self, center: &[f64], scale: f64) -> Result<Polynomial, PolyError> {
        let n = self.dim();
        if center.len() != n {
            return Err(PolyError::DimensionMismatch {
                expected: n,
                got: center.len(),
            });
        }
        let inner: Vec<Polynomial> = (0..n)
            .map(|k| {
                Polynomial::variable(n, k)
                    .scale(scale)
                    .add(&Polynomial::constant(n, center[k]))
            })
            .collect();
        self.compose_map(&inner)
    }
}

/// A polynomial map `R^n -> R^n` whose components share one basis.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyMap {
    components: Vec<Polynomial>,
}

impl PolyMap {
    pub fn new(components: Vec<Polynomial>) -> Result<Self, PolyError> {
        let Some(first) = components.first() else {
            return Err(PolyError::Empty);
        };
        let n = first.dim();
        if components.len() != n {
            return Err(PolyError::DimensionMismatch {
                expected: n,
                got: components.len(),
            });
        }
        let degree = components.iter().map(|p| p.basis().degree()).max().unwrap();
        let components = components
            .into_iter()
            .map(|p| {
                if p.dim() != n {
                    Err(PolyError::DimensionMismatch {
                        expected: n,
                        got: p.dim(),
                    })
                } else {
                    Ok(p.promote(degree))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { components })
    }

    /// Builds a map from a component-major coefficient vector over `basis`.
    pub fn from_coefficients(basis: Arc<MonomialBasis>, coeffs: &[f64]) -> Result<Self, PolyError> {
        let n = basis.dim();
        let len = basis.len();
        if coeffs.len() != n * len {
            return Err(PolyError::CoefficientLength {
                expected: n * len,
                got: coeffs.len(),
            });
        }
        let components = coeffs
            .chunks(len)
            .map(|c| Polynomial::new(basis.clone(), c.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { components })
    }

    /// The linear map `x -> A x`.
    pub fn linear(a: &DMatrix<f64>) -> Self {
        let n = a.nrows();
        let basis = MonomialBasis::new(n, 1);
        let components = (0..n)
            .map(|i| {
                let mut c = vec![0.0; basis.len()];
                for j in 0..n {
                    c[1 + j] = a[(i, j)];
                }
                Polynomial::new(basis.clone(), c).unwrap()
            })
            .collect();
        Self { components }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn degree(&self) -> usize {
        self.components[0].basis().degree()
    }

    pub fn basis(&self) -> &Arc<MonomialBasis> {
        self.components[0].basis()
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &Polynomial {
        &self.components[i]
    }

    /// Component-major coefficient vector.
    pub fn coefficients(&self) -> Vec<f64> {
        self.components
            .iter()
            .flat_map(|p| p.coeffs().iter().copied())
            .collect()
    }

    pub fn eval(&self, x: &[f64]) -> Result<DVector<f64>, PolyError> {
        if x.len() != self.dim() {
            return Err(PolyError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let powers = power_table(x, self.degree());
        Ok(DVector::from_iterator(
            self.dim(),
            self.components.iter().map(|p| p.eval_with_powers(&powers)),
        ))
    }

    /// Symbolic Jacobian: entry `(i, j)` is `d f_i / d x_j`.
    pub fn jacobian(&self) -> Vec<Vec<Polynomial>> {
        self.components
            .iter()
            .map(|p| (0..self.dim()).map(|j| p.partial(j)).collect())
            .collect()
    }

    pub fn substitute_affine(&self, center: &[f64], scale: f64) -> Result<PolyMap, PolyError> {
        let comps = self
            .components
            .iter()
            .map(|p| p.substitute_affine(center, scale))
            .collect::<Result<Vec<_>, _>>()?;
        PolyMap::new(comps)
    }

    pub fn scale(&self, factor: f64) -> PolyMap {
        PolyMap {
            components: self.components.iter().map(|p| p.scale(factor)).collect(),
        }
    }
}

/// Evaluates a symbolic Jacobian (as produced by [`PolyMap::jacobian`]).
pub fn eval_matrix(entries: &[Vec<Polynomial>], x: &[f64]) -> DMatrix<f64> {
    let rows = entries.len();
    let cols = entries.first().map_or(0, |r| r.len());
    let degree = entries
        .iter()
        .flat_map(|r| r.iter().map(|p| p.basis().degree()))
        .max()
        .unwrap_or(0);
    let powers = power_table(x, degree);
    DMatrix::from_fn(rows, cols, |i, j| entries[i][j].eval_with_powers(&powers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_poly(rng: &mut ChaCha8Rng, dim: usize, degree: usize) -> Polynomial {
        let basis = MonomialBasis::new(dim, degree);
        let coeffs = (0..basis.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Polynomial::new(basis, coeffs).unwrap()
    }

    #[test]
    fn eval_simple() {
        // x1^2 + 2 x2
        let p = Polynomial::monomial(2, &[2, 0], 1.0).add(&Polynomial::variable(2, 1).scale(2.0));
        assert_eq!(p.eval(&[1.0, 1.0]).unwrap(), 3.0);
        assert_eq!(
            Polynomial::constant(3, 0.0).eval(&[4.0, 5.0, 6.0]).unwrap(),
            0.0
        );
        assert!(matches!(
            p.eval(&[1.0]),
            Err(PolyError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn eval_matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let p = random_poly(&mut rng, 3, 4);
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let naive: f64 = p
                .coeffs()
                .iter()
                .zip(p.basis().exponents())
                .map(|(c, e)| {
                    c * e
                        .iter()
                        .zip(&x)
                        .map(|(&p, &v)| v.powi(p as i32))
                        .product::<f64>()
                })
                .sum();
            assert!((p.eval(&x).unwrap() - naive).abs() <= 1e-12 * (1.0 + naive.abs()));
        }
    }

    #[test]
    fn jacobian_of_rotation_and_linear_fields() {
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let f = PolyMap::linear(&rot);
        let j = eval_matrix(&f.jacobian(), &[0.3, -2.0]);
        assert_eq!(j, rot);

        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.0, 4.0, 0.0, -2.0]);
        let f = PolyMap::linear(&a);
        for entry in f.jacobian().iter().flatten() {
            assert_eq!(entry.degree(), 0);
        }
        assert_eq!(eval_matrix(&f.jacobian(), &[9.0, 1.0, -3.0]), a);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let comps = (0..3).map(|_| random_poly(&mut rng, 3, 4)).collect();
        let f = PolyMap::new(comps).unwrap();
        let jac = f.jacobian();
        for entry in jac.iter().flatten() {
            assert!(entry.basis().degree() <= 3);
        }
        let h = 1e-5;
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let j = eval_matrix(&jac, &x);
            for col in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[col] += h;
                xm[col] -= h;
                let fd = (f.eval(&xp).unwrap() - f.eval(&xm).unwrap()) / (2.0 * h);
                for row in 0..3 {
                    let exact = j[(row, col)];
                    assert!((exact - fd[row]).abs() <= 1e-6 * (1.0 + exact.abs()));
                }
            }
        }
    }

    #[test]
    fn affine_substitution_matches_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_poly(&mut rng, 2, 3);
        let center = [0.4, -1.2];
        let q = p.substitute_affine(&center, 2.5).unwrap();
        for _ in 0..10 {
            let y = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let x = [center[0] + 2.5 * y[0], center[1] + 2.5 * y[1]];
            let a = q.eval(&y).unwrap();
            let b = p.eval(&x).unwrap();
            assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn product_matches_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_poly(&mut rng, 2, 3);
        let q = random_poly(&mut rng, 2, 2);
        let pq = p.mul(&q);
        let x = [0.7, -0.3];
        let lhs = pq.eval(&x).unwrap();
        let rhs = p.eval(&x).unwrap() * q.eval(&x).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
