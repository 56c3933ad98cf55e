//! Factorization of `rho I + A' W A` for the solver's projection step,
//! `W` diagonal and positive.
//!
//! Rows of `A` with a single nonzero only touch the diagonal, so they are
//! folded into `D`; the remaining rows form `R` and the matrix becomes
//! `D + R' W_R R`. When `R` has fewer rows than `A` has columns the inverse
//! is applied through the Woodbury identity with the small matrix
//! `W_R^-1 + R D^-1 R'`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::SparseMatrix;

enum Factor {
    Dense(Cholesky<f64, Dyn>),
    Woodbury {
        r: SparseMatrix,
        rt: SparseMatrix,
        small: Cholesky<f64, Dyn>,
    },
}

pub(crate) struct NormalSolver {
    a: SparseMatrix,
    at: SparseMatrix,
    rho: f64,
    /// Diagonal of the `y` block, `W^-1`.
    ry: Vec<f64>,
    dinv: Vec<f64>,
    factor: Factor,
}

impl NormalSolver {
    /// Factors the system with `x` weight `rho` and `y` weights `ry`.
    pub(crate) fn new(a: &SparseMatrix, rho: f64, ry: &[f64]) -> Self {
        let n = a.ncols();
        let mut diag = vec![rho; n];
        let mut multi = Vec::new();
        for i in 0..a.nrows() {
            match a.row_nnz(i) {
                0 => {}
                1 => {
                    let (j, v) = a.row(i).next().expect("one entry");
                    diag[j] += v * v / ry[i];
                }
                _ => multi.push(i),
            }
        }
        let mut triplets = Vec::new();
        for (k, &i) in multi.iter().enumerate() {
            triplets.extend(a.row(i).map(|(j, v)| (k, j, v)));
        }
        let r = SparseMatrix::from_triplets(multi.len(), n, &triplets);
        let dinv: Vec<f64> = diag.iter().map(|d| 1.0 / d).collect();

        let factor = if n <= multi.len() {
            let mut k = DMatrix::from_diagonal(&DVector::from_vec(diag));
            for (i, &row) in multi.iter().enumerate() {
                let weight = 1.0 / ry[row];
                let entries: Vec<(usize, f64)> = r.row(i).collect();
                for &(p, vp) in &entries {
                    for &(q, vq) in &entries {
                        k[(p, q)] += weight * vp * vq;
                    }
                }
            }
            Factor::Dense(Cholesky::new(k).expect("rho I + A'WA is positive definite"))
        } else {
            let rt = r.transpose();
            let mr = r.nrows();
            let mut w =
                DMatrix::from_diagonal(&DVector::from_iterator(mr, multi.iter().map(|&i| ry[i])));
            for j in 0..rt.nrows() {
                let entries: Vec<(usize, f64)> = rt.row(j).collect();
                for &(p, vp) in &entries {
                    let s = vp * dinv[j];
                    for &(q, vq) in &entries {
                        w[(p, q)] += s * vq;
                    }
                }
            }
            Factor::Woodbury {
                r,
                rt,
                small: Cholesky::new(w).expect("W^-1 + R D^-1 R' is positive definite"),
            }
        };
        Self {
            a: a.clone(),
            at: a.transpose(),
            rho,
            ry: ry.to_vec(),
            dinv,
            factor,
        }
    }

    /// Solves `(rho I + A'WA) x = rhs` in place.
    fn solve_normal(&self, rhs: &mut [f64]) {
        match &self.factor {
            Factor::Dense(ch) => {
                let mut v = DVector::from_column_slice(rhs);
                ch.solve_mut(&mut v);
                rhs.copy_from_slice(v.as_slice());
            }
            Factor::Woodbury { r, rt, small } => {
                let u: Vec<f64> = rhs.iter().zip(&self.dinv).map(|(x, d)| x * d).collect();
                let mut ru = DVector::from_vec(r.mul_vec(&u));
                small.solve_mut(&mut ru);
                let corr = rt.mul_vec(ru.as_slice());
                for (j, x) in rhs.iter_mut().enumerate() {
                    *x = u[j] - self.dinv[j] * corr[j];
                }
            }
        }
    }

    /// `(rho I + A'WA) x`.
    fn apply_normal(&self, x: &[f64]) -> Vec<f64> {
        let wax: Vec<f64> = self
            .a
            .mul_vec(x)
            .iter()
            .zip(&self.ry)
            .map(|(v, r)| v / r)
            .collect();
        let mut out = self.at.mul_vec(&wax);
        for (o, xi) in out.iter_mut().zip(x) {
            *o += self.rho * xi;
        }
        out
    }

    /// Solves `[rho I, A'; -A, W^-1] [x; y] = [a; d]`, overwriting the
    /// inputs.
    pub(crate) fn solve(&self, x: &mut [f64], y: &mut [f64]) {
        let wd: Vec<f64> = y.iter().zip(&self.ry).map(|(v, r)| v / r).collect();
        let atd = self.at.mul_vec(&wd);
        for (xi, v) in x.iter_mut().zip(&atd) {
            *xi -= v;
        }
        // one step of iterative refinement against the Woodbury round-off
        let rhs = x.to_vec();
        self.solve_normal(x);
        let mut r = self.apply_normal(x);
        for (ri, b) in r.iter_mut().zip(&rhs) {
            *ri = b - *ri;
        }
        self.solve_normal(&mut r);
        for (xi, d) in x.iter_mut().zip(&r) {
            *xi += d;
        }
        let ax = self.a.mul_vec(x);
        for ((yi, v), r) in y.iter_mut().zip(&ax).zip(&self.ry) {
            *yi = (*yi + v) / r;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn check(m: usize, n: usize, seed: u64, rho: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trip = Vec::new();
        for i in 0..m {
            if i % 3 == 0 {
                trip.push((i, rng.gen_range(0..n), rng.gen_range(-2.0..2.0)));
            } else {
                for j in 0..n {
                    if rng.gen_bool(0.4) {
                        trip.push((i, j, rng.gen_range(-2.0..2.0)));
                    }
                }
            }
        }
        let a = SparseMatrix::from_triplets(m, n, &trip);
        let ry: Vec<f64> = (0..m)
            .map(|i| {
                if i % 4 == 0 {
                    1e-3
                } else {
                    rng.gen_range(0.5..2.0)
                }
            })
            .collect();
        let solver = NormalSolver::new(&a, rho, &ry);
        let rx: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rdy: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (mut x, mut y) = (rx.clone(), rdy.clone());
        solver.solve(&mut x, &mut y);
        // residual of the block system, computed densely
        let mut dense = DMatrix::zeros(m, n);
        for &(i, j, v) in &trip {
            dense[(i, j)] += v;
        }
        let xv = DVector::from_vec(x);
        let yv = DVector::from_vec(y);
        let r1 = &xv * rho + dense.transpose() * &yv - DVector::from_vec(rx);
        let r2 =
            -(&dense * &xv) + yv.component_mul(&DVector::from_vec(ry)) - DVector::from_vec(rdy);
        // normwise backward error
        let size = 1.0 + rho * xv.amax() + dense.amax() * (xv.amax() + yv.amax()) * (m + n) as f64;
        assert!(
            r1.amax() < 1e-13 * size && r2.amax() < 1e-13 * size,
            "{} {} {size}",
            r1.amax(),
            r2.amax()
        );
    }

    #[test]
    fn dense_and_woodbury_paths_solve_the_block_system() {
        for rho in [1.0, 1e-6] {
            check(30, 8, 1, rho);
            check(9, 40, 2, rho);
            check(3, 5, 3, rho);
        }
    }
}
