use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// One block of the cone product, in row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "size", rename_all = "snake_case")]
pub enum Cone {
    /// `{0}^k`.
    Zero(usize),
    /// `R_+^k`.
    NonNeg(usize),
    /// `{(t, z) : ||z|| <= t}` of total dimension `k`.
    SecondOrder(usize),
    /// Symmetric `k x k` PSD matrices in scaled-vectorized form; occupies
    /// `k (k + 1) / 2` rows.
    Psd(usize),
}

impl Cone {
    pub fn rows(&self) -> usize {
        match *self {
            Cone::Zero(k) | Cone::NonNeg(k) | Cone::SecondOrder(k) => k,
            Cone::Psd(k) => k * (k + 1) / 2,
        }
    }
}

/// Projection onto the second-order cone `{(t, z) : ||z|| <= t}`.
pub fn project_soc(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    project_soc_in_place(&mut out);
    out
}

pub(crate) fn project_soc_in_place(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let t = v[0];
    let nz = v[1..].iter().map(|x| x * x).sum::<f64>().sqrt();
    if nz <= t {
        return;
    }
    if nz <= -t {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let alpha = 0.5 * (t + nz);
    v[0] = alpha;
    let f = alpha / nz;
    v[1..].iter_mut().for_each(|x| *x *= f);
}

/// Frobenius-nearest PSD matrix: negative eigenvalues are clamped to zero.
pub fn project_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = 0.5 * (m + m.transpose());
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return 0.5 * (m + m.transpose());
    }
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    let mut out = v * DMatrix::from_diagonal(&clamped) * v.transpose();
    out = 0.5 * (&out + out.transpose());
    out
}

pub(crate) fn project_psd_svec_in_place(v: &mut [f64], order: usize) {
    let m = smat(v, order);
    let p = project_psd(&m);
    svec_into(&p, v);
}

/// Scaled vectorization of the upper triangle, column by column:
/// `(0,0), (0,1), (1,1), (0,2), ...`, off-diagonals multiplied by `sqrt(2)`.
pub fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = vec![0.0; n * (n + 1) / 2];
    svec_into(m, &mut out);
    out
}

fn svec_into(m: &DMatrix<f64>, out: &mut [f64]) {
    let n = m.nrows();
    let mut idx = 0;
    for j in 0..n {
        for i in 0..=j {
            out[idx] = if i == j {
                m[(i, j)]
            } else {
                std::f64::consts::SQRT_2 * 0.5 * (m[(i, j)] + m[(j, i)])
            };
            idx += 1;
        }
    }
}

/// Inverse of [`svec`].
pub fn smat(v: &[f64], n: usize) -> DMatrix<f64> {
    assert_eq!(
        v.len(),
        n * (n + 1) / 2,
        "svec length does not match order {n}"
    );
    let mut m = DMatrix::zeros(n, n);
    let mut idx = 0;
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                m[(i, j)] = v[idx];
            } else {
                let x = v[idx] * std::f64::consts::FRAC_1_SQRT_2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            idx += 1;
        }
    }
    m
}

/// Position of entry `(i, j)` (either order) inside an svec of any order.
pub fn svec_index(i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    j * (j + 1) / 2 + i
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        0.5 * (&a + a.transpose())
    }

    #[test]
    fn psd_projection_examples() {
        let p = project_psd(&DMatrix::from_diagonal(&nalgebra::dvector![1.0, -1.0]));
        assert!((p - DMatrix::from_diagonal(&nalgebra::dvector![1.0, 0.0])).amax() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
        let psd = &b * b.transpose();
        assert!((project_psd(&psd) - &psd).amax() < 1e-12);
    }

    #[test]
    fn psd_projection_matches_eigen_clamp_oracle() {
        // Independent oracle: Jacobi eigenvalue iteration, clamp, rebuild.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let m = random_symmetric(&mut rng, 5);
            let (vals, vecs) = jacobi_eigen(&m);
            let clamped = DMatrix::from_diagonal(&vals.map(|l| l.max(0.0)));
            let oracle = &vecs * clamped * vecs.transpose();
            assert!((project_psd(&m) - oracle).amax() < 1e-10);
        }
    }

    fn jacobi_eigen(m: &DMatrix<f64>) -> (nalgebra::DVector<f64>, DMatrix<f64>) {
        let n = m.nrows();
        let mut a = m.clone();
        let mut v = DMatrix::identity(n, n);
        for _ in 0..100 {
            let mut off = 0.0;
            for p in 0..n {
                for q in p + 1..n {
                    off += a[(p, q)] * a[(p, q)];
                }
            }
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    let mut rot = DMatrix::identity(n, n);
                    rot[(p, p)] = c;
                    rot[(q, q)] = c;
                    rot[(p, q)] = s;
                    rot[(q, p)] = -s;
                    a = rot.transpose() * &a * &rot;
                    v = &v * rot;
                }
            }
        }
        (a.diagonal(), v)
    }

    #[test]
    fn soc_projection_cases() {
        assert_eq!(project_soc(&[2.0, 1.0, 0.0]), vec![2.0, 1.0, 0.0]);
        assert_eq!(project_soc(&[-2.0, 1.0, 0.0]), vec![0.0, 0.0, 0.0]);
        let p = project_soc(&[0.0, 1.0, 1.0]);
        let h = std::f64::consts::SQRT_2 / 2.0;
        let expect = [h, 0.5, 0.5];
        for (a, b) in p.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        // membership and orthogonality of the residual
        let res: Vec<f64> = [0.0, 1.0, 1.0].iter().zip(&p).map(|(a, b)| a - b).collect();
        assert!((p[1] * p[1] + p[2] * p[2]).sqrt() <= p[0] + 1e-15);
        let dot: f64 = res.iter().zip(&p).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-15);
        // residual lies in the polar cone: -res in SOC
        assert!((res[1] * res[1] + res[2] * res[2]).sqrt() <= -res[0] + 1e-15);
    }

    #[test]
    fn svec_round_trip_preserves_inner_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_symmetric(&mut rng, 4);
        let b = random_symmetric(&mut rng, 4);
        let fro: f64 = a.component_mul(&b).sum();
        let dot: f64 = svec(&a).iter().zip(svec(&b)).map(|(x, y)| x * y).sum();
        assert!((fro - dot).abs() < 1e-12);
        assert!((smat(&svec(&a), 4) - &a).amax() < 1e-15);
        assert_eq!(svec_index(2, 1), svec_index(1, 2));
        assert_eq!(svec_index(0, 2), 3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vec_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(-5.0f64..5.0, len)
        }

        proptest! {
            #[test]
            fn soc_projection_idempotent_and_nonexpansive(a in vec_strategy(4), b in vec_strategy(4)) {
                let pa = project_soc(&a);
                let pb = project_soc(&b);
                let ppa = project_soc(&pa);
                for (x, y) in pa.iter().zip(&ppa) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
                let d = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                prop_assert!(d(&pa, &pb) <= d(&a, &b) + 1e-10);
            }

            #[test]
            fn psd_projection_idempotent_and_nonexpansive(a in vec_strategy(6), b in vec_strategy(6)) {
                let ma = smat(&a, 3);
                let mb = smat(&b, 3);
                let pa = project_psd(&ma);
                let pb = project_psd(&mb);
                prop_assert!((project_psd(&pa) - &pa).amax() < 1e-10);
                prop_assert!((&pa - &pb).norm() <= (&ma - &mb).norm() + 1e-10);
            }
        }
    }
}
