use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::PolyError;

/// Polynomial in time on the window `[0, horizon]`.
///
/// Coefficients are stored in the Chebyshev basis of the rescaled variable
/// `s = 2 t / horizon - 1`, which keeps products and high degrees well
/// conditioned. Evaluation, integration and differentiation all work in
/// physical time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniPoly {
    horizon: f64,
    coeffs: Vec<f64>,
}

impl UniPoly {
    pub fn from_chebyshev(horizon: f64, coeffs: Vec<f64>) -> Self {
        assert!(horizon > 0.0, "UniPoly horizon must be positive");
        let coeffs = if coeffs.is_empty() { vec![0.0] } else { coeffs };
        Self { horizon, coeffs }
    }

    pub fn zero(horizon: f64) -> Self {
        Self::from_chebyshev(horizon, vec![0.0])
    }

    pub fn constant(horizon: f64, value: f64) -> Self {
        Self::from_chebyshev(horizon, vec![value])
    }

    /// The identity polynomial `t`.
    pub fn time(horizon: f64) -> Self {
        Self::from_chebyshev(horizon, vec![0.5 * horizon, 0.5 * horizon])
    }

    /// Builds the polynomial `sum_k coeffs[k] t^k`.
    pub fn from_monomial(horizon: f64, coeffs: &[f64]) -> Self {
        let t = Self::time(horizon);
        let mut acc = Self::zero(horizon);
        for &c in coeffs.iter().rev() {
            acc = acc.mul(&t).add(&Self::constant(horizon, c));
        }
        acc
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn chebyshev_coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Index of the highest exactly-nonzero coefficient.
    pub fn degree(&self) -> usize {
        self.coeffs.iter().rposition(|&c| c != 0.0).unwrap_or(0)
    }

    /// Drops trailing coefficients with magnitude at most `tol * max|c|`.
    pub fn normalized(&self, tol: f64) -> Self {
        let scale = self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let keep = self
            .coeffs
            .iter()
            .rposition(|c| c.abs() > tol * scale)
            .map_or(1, |i| i + 1);
        Self {
            horizon: self.horizon,
            coeffs: self.coeffs[..keep].to_vec(),
        }
    }

    fn to_unit(&self, t: f64) -> f64 {
        2.0 * t / self.horizon - 1.0
    }

    pub fn eval(&self, t: f64) -> f64 {
        clenshaw(&self.coeffs, self.to_unit(t))
    }

    fn check_horizon(&self, other: &Self) {
        assert!(
            (self.horizon - other.horizon).abs() <= 1e-12 * self.horizon.abs().max(1.0),
            "UniPoly horizon mismatch: {} vs {}",
            self.horizon,
            other.horizon
        );
    }

    pub fn add(&self, other: &Self) -> Self {
        self.check_horizon(other);
        let len = self.coeffs.len().max(other.coeffs.len());
        let coeffs = (0..len)
            .map(|k| self.coeffs.get(k).unwrap_or(&0.0) + other.coeffs.get(k).unwrap_or(&0.0))
            .collect();
        Self {
            horizon: self.horizon,
            coeffs,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            horizon: self.horizon,
            coeffs: self.coeffs.iter().map(|c| c * factor).collect(),
        }
    }

    /// In-place `self += factor * other`.
    pub fn axpy(&mut self, factor: f64, other: &Self) {
        self.check_horizon(other);
        if self.coeffs.len() < other.coeffs.len() {
            self.coeffs.resize(other.coeffs.len(), 0.0);
        }
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += factor * b;
        }
    }

    /// Product via `T_i T_j = (T_{i+j} + T_{|i-j|}) / 2`.
    pub fn mul(&self, other: &Self) -> Self {
        self.check_horizon(other);
        let a = &self.coeffs[..=self.degree()];
        let b = &other.coeffs[..=other.degree()];
        let mut out = vec![0.0; a.len() + b.len() - 1];
        for (i, &ai) in a.iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            for (j, &bj) in b.iter().enumerate() {
                let p = 0.5 * ai * bj;
                out[i + j] += p;
                out[i.abs_diff(j)] += p;
            }
        }
        Self {
            horizon: self.horizon,
            coeffs: out,
        }
    }

    /// Time derivative `d/dt`.
    pub fn derivative(&self) -> Self {
        let n = self.coeffs.len();
        if n <= 1 {
            return Self::zero(self.horizon);
        }
        let mut d = vec![0.0; n + 1];
        for k in (0..n - 1).rev() {
            d[k] = d[k + 2] + 2.0 * (k + 1) as f64 * self.coeffs[k + 1];
        }
        d[0] *= 0.5;
        d.truncate(n - 1);
        let chain = 2.0 / self.horizon;
        Self {
            horizon: self.horizon,
            coeffs: d.into_iter().map(|c| c * chain).collect(),
        }
    }

    /// Antiderivative `U` with `U(0) = 0` and `U' = self` in time `t`.
    pub fn antiderivative(&self) -> Self {
        let a = &self.coeffs;
        let n = a.len();
        let get = |k: usize| a.get(k).copied().unwrap_or(0.0);
        let mut c = vec![0.0; n + 1];
        c[1] = get(0) - 0.5 * get(2);
        for k in 2..=n {
            c[k] = (get(k - 1) - get(k + 1)) / (2.0 * k as f64);
        }
        let chain = 0.5 * self.horizon;
        for v in c.iter_mut() {
            *v *= chain;
        }
        let at_start = clenshaw(&c, -1.0);
        c[0] -= at_start;
        Self {
            horizon: self.horizon,
            coeffs: c,
        }
    }

    /// Exact `int_0^upper self(t) dt`.
    pub fn integrate(&self, upper: f64) -> Result<f64, PolyError> {
        if !(upper > 0.0) {
            return Err(PolyError::NonPositiveInterval(upper));
        }
        if (upper - self.horizon).abs() <= 1e-14 * self.horizon {
            return Ok(self.integral_over_horizon());
        }
        Ok(self.antiderivative().eval(upper))
    }

    /// Exact `int_0^horizon self(t) dt` using the closed-form Chebyshev
    /// moments `int_{-1}^{1} T_k = 2 / (1 - k^2)` for even `k`.
    pub fn integral_over_horizon(&self) -> f64 {
        let mut acc = 0.0;
        for (k, &c) in self.coeffs.iter().enumerate().step_by(2) {
            acc += c * 2.0 / (1.0 - (k * k) as f64);
        }
        0.5 * self.horizon * acc
    }

    /// Coefficients in the monomial basis of `t`. Conditioning degrades with
    /// degree; intended for inspection and tests.
    pub fn to_monomial(&self) -> Vec<f64> {
        let n = self.coeffs.len();
        // monomial coefficients of T_k(s) in s, then substitute s = 2t/h - 1
        let mut t_prev = vec![1.0];
        let mut t_cur = vec![0.0, 1.0];
        let mut in_s = vec![0.0; n];
        for (k, &c) in self.coeffs.iter().enumerate() {
            let tk: &Vec<f64> = match k {
                0 => &t_prev,
                _ => &t_cur,
            };
            for (i, &v) in tk.iter().enumerate() {
                in_s[i] += c * v;
            }
            if k >= 1 {
                let mut next = vec![0.0; t_cur.len() + 1];
                for (i, &v) in t_cur.iter().enumerate() {
                    next[i + 1] += 2.0 * v;
                }
                for (i, &v) in t_prev.iter().enumerate() {
                    next[i] -= v;
                }
                t_prev = std::mem::replace(&mut t_cur, next);
            }
        }
        let a = 2.0 / self.horizon;
        let mut out = vec![0.0; n];
        // Horner in s over monomial polynomials of t: s = a t - 1
        for &c in in_s.iter().rev() {
            let mut next = vec![0.0; n];
            for i in 0..n {
                if out[i] == 0.0 {
                    continue;
                }
                next[i] -= out[i];
                if i + 1 < n {
                    next[i + 1] += a * out[i];
                }
            }
            next[0] += c;
            out = next;
        }
        out
    }
}

fn clenshaw(coeffs: &[f64], s: f64) -> f64 {
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for &c in coeffs.iter().skip(1).rev() {
        let b0 = c + 2.0 * s * b1 - b2;
        b2 = b1;
        b1 = b0;
    }
    coeffs[0] + s * b1 - b2
}

/// Evaluates `T_0(s), ..., T_degree(s)`.
pub fn chebyshev_values(s: f64, degree: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(degree + 1);
    out.push(1.0);
    if degree >= 1 {
        out.push(s);
    }
    for k in 2..=degree {
        out.push(2.0 * s * out[k - 1] - out[k - 2]);
    }
    out
}

/// Symmetric matrix polynomial in time with Chebyshev coefficient matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct UniPolyMatrix {
    size: usize,
    horizon: f64,
    coeffs: Vec<DMatrix<f64>>,
}

impl UniPolyMatrix {
    pub fn new(size: usize, horizon: f64, coeffs: Vec<DMatrix<f64>>) -> Result<Self, PolyError> {
        if !(horizon > 0.0) {
            return Err(PolyError::NonPositiveInterval(horizon));
        }
        for m in &coeffs {
            if m.nrows() != size || m.ncols() != size {
                return Err(PolyError::NotSquare {
                    rows: m.nrows(),
                    cols: m.ncols(),
                });
            }
            let scale = m.amax().max(1.0);
            if (m - m.transpose()).amax() > 1e-12 * scale {
                return Err(PolyError::Asymmetric);
            }
        }
        let coeffs = if coeffs.is_empty() {
            vec![DMatrix::zeros(size, size)]
        } else {
            coeffs
        };
        Ok(Self {
            size,
            horizon,
            coeffs,
        })
    }

    pub fn zero(size: usize, horizon: f64) -> Self {
        Self {
            size,
            horizon,
            coeffs: vec![DMatrix::zeros(size, size)],
        }
    }

    /// Assembles from a symmetric grid of scalar polynomials (only the upper
    /// triangle `i <= j` is read).
    pub fn from_entries(entries: &[Vec<UniPoly>]) -> Result<Self, PolyError> {
        let size = entries.len();
        if size == 0 {
            return Err(PolyError::Empty);
        }
        let horizon = entries[0][0].horizon();
        let len = entries
            .iter()
            .flat_map(|r| r.iter().map(|p| p.chebyshev_coeffs().len()))
            .max()
            .unwrap();
        let mut coeffs = vec![DMatrix::zeros(size, size); len];
        for i in 0..size {
            if entries[i].len() != size {
                return Err(PolyError::NotSquare {
                    rows: size,
                    cols: entries[i].len(),
                });
            }
            for j in i..size {
                for (k, &c) in entries[i][j].chebyshev_coeffs().iter().enumerate() {
                    coeffs[k][(i, j)] = c;
                    coeffs[k][(j, i)] = c;
                }
            }
        }
        Ok(Self {
            size,
            horizon,
            coeffs,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn coeffs(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs
            .iter()
            .rposition(|m| m.iter().any(|&v| v != 0.0))
            .unwrap_or(0)
    }

    pub fn entry(&self, i: usize, j: usize) -> UniPoly {
        UniPoly::from_chebyshev(
            self.horizon,
            self.coeffs.iter().map(|m| m[(i, j)]).collect(),
        )
    }

    pub fn eval(&self, t: f64) -> DMatrix<f64> {
        let s = 2.0 * t / self.horizon - 1.0;
        let basis = chebyshev_values(s, self.coeffs.len() - 1);
        let mut out = DMatrix::zeros(self.size, self.size);
        for (m, b) in self.coeffs.iter().zip(basis) {
            out += m * b;
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.size, other.size);
        let len = self.coeffs.len().max(other.coeffs.len());
        let zero = DMatrix::zeros(self.size, self.size);
        let coeffs = (0..len)
            .map(|k| self.coeffs.get(k).unwrap_or(&zero) + other.coeffs.get(k).unwrap_or(&zero))
            .collect();
        Self {
            size: self.size,
            horizon: self.horizon,
            coeffs,
        }
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            size: self.size,
            horizon: self.horizon,
            coeffs: self.coeffs.iter().map(|m| m * factor).collect(),
        }
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.amax()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn monomial_round_trip() {
        let p = UniPoly::from_monomial(2.0, &[1.0, -3.0, 0.5, 2.0]);
        let back = p.to_monomial();
        for (a, b) in back.iter().zip([1.0, -3.0, 0.5, 2.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((p.eval(1.5) - (1.0 - 4.5 + 0.5 * 2.25 + 2.0 * 3.375)).abs() < 1e-12);
    }

    #[test]
    fn integral_of_t_squared() {
        let u = UniPoly::from_monomial(1.0, &[0.0, 0.0, 1.0]);
        assert!((u.integrate(1.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(UniPoly::zero(1.0).integrate(1.0).unwrap(), 0.0);
        assert!(matches!(
            u.integrate(0.0),
            Err(PolyError::NonPositiveInterval(_))
        ));
        assert!(matches!(
            u.integrate(-2.0),
            Err(PolyError::NonPositiveInterval(_))
        ));
        // off-horizon upper limit uses the antiderivative
        assert!((u.integrate(0.5).unwrap() - 0.125 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn integral_matches_gauss_legendre_quadrature() {
        // 20-point Gauss-Legendre is exact for degree <= 39; nodes computed by
        // Newton iteration on P_20, independent of the Chebyshev machinery.
        let (nodes, weights) = gauss_legendre(20);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let horizon = rng.gen_range(0.5..4.0);
            let mono: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let u = UniPoly::from_monomial(horizon, &mono);
            let quad: f64 = nodes
                .iter()
                .zip(&weights)
                .map(|(&x, &w)| {
                    let t = 0.5 * horizon * (x + 1.0);
                    let v: f64 = mono.iter().rev().fold(0.0, |acc, &c| acc * t + c);
                    0.5 * horizon * w * v
                })
                .sum();
            let exact = u.integrate(horizon).unwrap();
            assert!((exact - quad).abs() <= 1e-9 * quad.abs().max(1.0));
        }
    }

    fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for i in 1..=n {
            let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
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

    #[test]
    fn derivative_and_antiderivative_are_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let coeffs: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = UniPoly::from_chebyshev(3.0, coeffs);
        let back = p.antiderivative().derivative();
        for t in [0.0, 0.7, 1.9, 3.0] {
            assert!((back.eval(t) - p.eval(t)).abs() < 1e-12);
        }
        assert!(p.antiderivative().eval(0.0).abs() < 1e-14);
        // derivative of t^3 is 3 t^2
        let c = UniPoly::from_monomial(2.0, &[0.0, 0.0, 0.0, 1.0]).derivative();
        assert!((c.eval(1.3) - 3.0 * 1.69).abs() < 1e-12);
    }

    #[test]
    fn product_matches_pointwise() {
        let a = UniPoly::from_chebyshev(2.0, vec![0.3, -1.0, 0.25, 0.7]);
        let b = UniPoly::from_chebyshev(2.0, vec![1.1, 0.0, -0.4]);
        let ab = a.mul(&b);
        for t in [0.0, 0.4, 1.1, 2.0] {
            assert!((ab.eval(t) - a.eval(t) * b.eval(t)).abs() < 1e-13);
        }
    }

    #[test]
    fn matrix_polynomial_evaluation() {
        // diag(1, t) on [0, 1]
        let one = UniPoly::constant(1.0, 1.0);
        let t = UniPoly::time(1.0);
        let z = UniPoly::zero(1.0);
        let m = UniPolyMatrix::from_entries(&[vec![one, z.clone()], vec![z, t]]).unwrap();
        assert_eq!(m.degree(), 1);
        let v = m.eval(0.25);
        assert!((v[(0, 0)] - 1.0).abs() < 1e-15 && (v[(1, 1)] - 0.25).abs() < 1e-15);
        assert!(matches!(
            UniPolyMatrix::new(
                2,
                1.0,
                vec![DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])]
            ),
            Err(PolyError::Asymmetric)
        ));
    }
}
