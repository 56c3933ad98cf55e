use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::compile::SosmLayout;
use super::{coeff_or_zero, SosError};
use crate::conic::{project_psd, smat, svec};
use crate::polyalg::UniPolyMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GramBlock {
    V,
    W,
}

/// Concrete Gram blocks certifying positivity of a matrix polynomial on
/// `[0, T]`. `w` is `0 x 0` when the layout has no second block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramDecomposition {
    pub layout: SosmLayout,
    pub v: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateTolerance {
    /// Coefficient mismatch allowed, relative to the largest target
    /// coefficient.
    pub reconstruction: f64,
    /// Most negative Gram eigenvalue accepted.
    pub eigenvalue: f64,
}

impl Default for CertificateTolerance {
    fn default() -> Self {
        Self {
            reconstruction: 1e-8,
            eigenvalue: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CertificateStatus {
    Valid,
    NonPsdGram {
        block: GramBlock,
        eigenvalue: f64,
    },
    ReconstructionMismatch {
        row: usize,
        col: usize,
        coefficient: usize,
        error: f64,
    },
}

impl CertificateStatus {
    pub fn is_valid(&self) -> bool {
        matches!(self, CertificateStatus::Valid)
    }
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(0.5 * (m + m.transpose()))
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

impl GramDecomposition {
    fn block(&self, block: GramBlock) -> &DMatrix<f64> {
        match block {
            GramBlock::V => &self.v,
            GramBlock::W => &self.w,
        }
    }

    /// Smallest eigenvalue over both blocks and the block attaining it.
    pub fn min_eigenvalue(&self) -> (GramBlock, f64) {
        let v = min_eig(&self.v);
        let w = min_eig(&self.w);
        if w < v {
            (GramBlock::W, w)
        } else {
            (GramBlock::V, v)
        }
    }

    /// The matrix polynomial `mult_V Z'VZ + mult_W Z'WZ`.
    pub fn reconstruct(&self) -> UniPolyMatrix {
        let n = self.layout.size;
        let mut coeffs = vec![DMatrix::zeros(n, n); self.layout.degree + 1];
        for block in [GramBlock::V, GramBlock::W] {
            let g = self.block(block);
            if g.nrows() == 0 {
                continue;
            }
            let products = self.layout.products(block);
            for (a, row) in products.iter().enumerate() {
                for (b, prod) in row.iter().enumerate() {
                    let sub = g.view((a * n, b * n), (n, n));
                    for (k, &c) in prod.iter().enumerate() {
                        if c != 0.0 {
                            coeffs[k] += sub * c;
                        }
                    }
                }
            }
        }
        for c in &mut coeffs {
            *c = 0.5 * (&*c + c.transpose());
        }
        UniPolyMatrix::new(n, self.layout.horizon, coeffs).expect("symmetrized reconstruction")
    }

    /// Moves the Gram blocks onto the affine set where the reconstruction
    /// matches `target` (up to the layout degree) while keeping them PSD.
    ///
    /// Alternates the minimum-norm affine correction with eigenvalue
    /// clamping until the corrected blocks pass `tolerance.eigenvalue` with a
    /// tenfold margin, or `MAX_REPAIR_ROUNDS` is reached. The blocks are
    /// always left on the affine set. Returns the total correction norm.
    pub fn repair(&mut self, target: &UniPolyMatrix, tolerance: &CertificateTolerance) -> f64 {
        let layout = self.layout.clone();
        let n = layout.size;
        let rows = layout.num_equalities();
        let mut rhs = DVector::zeros(rows);
        for k in 0..=layout.degree {
            let t = coeff_or_zero(target, k);
            for q in 0..n {
                for p in 0..=q {
                    rhs[layout.row(p, q, k)] = t[(p, q)];
                }
            }
        }
        let v_map = layout.gram_map(GramBlock::V);
        let w_map = layout.gram_map(GramBlock::W);
        let nv = v_map.len();
        let mut l = DMatrix::<f64>::zeros(rows, nv + w_map.len());
        for (col, contribs) in v_map.iter().chain(&w_map).enumerate() {
            for &(r, w) in contribs {
                l[(r, col)] += w;
            }
        }
        let llt = &l * l.transpose();
        let chol = llt.clone().cholesky();
        let svd = chol.is_none().then(|| llt.svd(true, true));
        let (vo, wo) = (self.v.nrows(), self.w.nrows());
        let mut x = DVector::from_iterator(
            nv + w_map.len(),
            svec(&self.v).into_iter().chain(svec(&self.w)),
        );
        let start = x.clone();
        for round in 0..MAX_REPAIR_ROUNDS {
            let err = &rhs - &l * &x;
            let z = match (&chol, &svd) {
                (Some(ch), _) => ch.solve(&err),
                (None, Some(svd)) => svd
                    .solve(&err, 1e-14)
                    .expect("svd solve with computed factors"),
                _ => unreachable!(),
            };
            x += l.transpose() * z;
            let v = smat(&x.as_slice()[..nv], vo);
            let w = smat(&x.as_slice()[nv..], wo);
            if min_eig(&v).min(min_eig(&w)) >= -0.1 * tolerance.eigenvalue
                || round + 1 == MAX_REPAIR_ROUNDS
            {
                self.v = v;
                self.w = w;
                break;
            }
            let pv = project_psd(&v);
            let pw = if wo > 0 { project_psd(&w) } else { w };
            x = DVector::from_iterator(x.len(), svec(&pv).into_iter().chain(svec(&pw)));
        }
        (x - start).norm()
    }
}

const MAX_REPAIR_ROUNDS: usize = 500;

/// Checks Gram positivity, then coefficientwise reconstruction; reports the
/// first failure found.
pub fn verify_certificate(
    target: &UniPolyMatrix,
    decomposition: &GramDecomposition,
    tolerance: &CertificateTolerance,
) -> CertificateStatus {
    for block in [GramBlock::V, GramBlock::W] {
        let lambda = min_eig(decomposition.block(block));
        if lambda < -tolerance.eigenvalue {
            return CertificateStatus::NonPsdGram {
                block,
                eigenvalue: lambda,
            };
        }
    }
    let recon = decomposition.reconstruct();
    let n = target.size();
    if recon.size() != n {
        return CertificateStatus::ReconstructionMismatch {
            row: 0,
            col: 0,
            coefficient: 0,
            error: f64::INFINITY,
        };
    }
    let scale = target.max_abs_coeff().max(f64::EPSILON);
    let len = target.coeffs().len().max(recon.coeffs().len());
    for k in 0..len {
        let t = coeff_or_zero(target, k);
        let r = coeff_or_zero(&recon, k);
        for q in 0..n {
            for p in 0..=q {
                let e = (t[(p, q)] - r[(p, q)]).abs();
                if e > tolerance.reconstruction * scale {
                    return CertificateStatus::ReconstructionMismatch {
                        row: p,
                        col: q,
                        coefficient: k,
                        error: e,
                    };
                }
            }
        }
    }
    CertificateStatus::Valid
}

/// Minimum over `grid` equispaced times of `lambda_min(P(t))`, with the
/// smallest such time as tie-break.
pub fn min_eig_on_grid(p: &UniPolyMatrix, grid: usize) -> Result<(f64, f64), SosError> {
    if grid < 2 {
        return Err(SosError::GridTooSmall(grid));
    }
    let h = p.horizon();
    let values: Vec<(f64, f64)> = (0..grid)
        .into_par_iter()
        .map(|i| {
            let t = h * i as f64 / (grid - 1) as f64;
            (min_eig(&p.eval(t)), t)
        })
        .collect();
    Ok(values.into_iter().fold((f64::INFINITY, 0.0), |best, cur| {
        if cur.0 < best.0 {
            cur
        } else {
            best
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polyalg::UniPoly;
    use crate::soscomp::{decide_sosm, LinearMatrixPolynomial, SosmLayout};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn poly(coeffs: &[f64]) -> UniPoly {
        UniPoly::from_monomial(1.0, coeffs)
    }

    #[test]
    fn grid_minimum_examples() {
        let p = UniPolyMatrix::from_entries(&[
            vec![poly(&[1.0]), poly(&[0.0])],
            vec![poly(&[0.0]), poly(&[0.0, 1.0])],
        ])
        .unwrap();
        let (m, t) = min_eig_on_grid(&p, 101).unwrap();
        assert!(m.abs() < 1e-15 && t == 0.0);
        let bubble = UniPolyMatrix::from_entries(&[vec![poly(&[0.0, 1.0, -1.0])]]).unwrap();
        let (m, t) = min_eig_on_grid(&bubble, 101).unwrap();
        assert!(m.abs() < 1e-15 && t == 0.0);
        assert!(min_eig_on_grid(&bubble, 1).is_err());
    }

    #[test]
    fn grid_minimum_agrees_with_finer_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let c: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let d: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let e: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p =
                UniPolyMatrix::from_entries(&[vec![poly(&c), poly(&d)], vec![poly(&d), poly(&e)]])
                    .unwrap();
            let (coarse, _) = min_eig_on_grid(&p, 200).unwrap();
            let (fine, _) = min_eig_on_grid(&p, 2000).unwrap();
            // |d/dt lambda_min| <= ||P'(t)||_F, bounded by the derivative's coefficients
            let lip: f64 = [&c, &d, &d, &e]
                .iter()
                .map(|v| {
                    v.iter()
                        .enumerate()
                        .map(|(k, x)| k as f64 * x.abs())
                        .sum::<f64>()
                        .powi(2)
                })
                .sum::<f64>()
                .sqrt();
            assert!(fine <= coarse + 1e-15);
            assert!(coarse - fine <= lip * 0.5 / 199.0 + 1e-12);
        }
    }

    fn valid_decomposition() -> (UniPolyMatrix, GramDecomposition) {
        let p = UniPolyMatrix::from_entries(&[
            vec![poly(&[2.0, 0.0, 1.0]), poly(&[0.0, 0.5])],
            vec![poly(&[0.0, 0.5]), poly(&[1.0, 1.0])],
        ])
        .unwrap();
        let d = decide_sosm(
            &p,
            &crate::conic::SolverSettings::default(),
            &CertificateTolerance::default(),
        )
        .unwrap();
        (p, d.decomposition.unwrap())
    }

    #[test]
    fn solver_certificate_is_valid() {
        let (p, dec) = valid_decomposition();
        assert_eq!(
            verify_certificate(&p, &dec, &CertificateTolerance::default()),
            CertificateStatus::Valid
        );
    }

    #[test]
    fn negative_gram_eigenvalue_is_reported() {
        let layout = SosmLayout::new(1, 1.0, 0);
        let dec = GramDecomposition {
            layout,
            v: DMatrix::from_element(1, 1, -1e-3),
            w: DMatrix::zeros(0, 0),
        };
        let p = UniPolyMatrix::from_entries(&[vec![poly(&[-1e-3])]]).unwrap();
        let tol = CertificateTolerance {
            eigenvalue: 1e-6,
            ..CertificateTolerance::default()
        };
        assert!(matches!(
            verify_certificate(&p, &dec, &tol),
            CertificateStatus::NonPsdGram {
                block: GramBlock::V,
                ..
            }
        ));
    }

    #[test]
    fn perturbed_coefficient_is_reported() {
        let (p, dec) = valid_decomposition();
        let mut coeffs = p.coeffs().to_vec();
        coeffs[1][(1, 1)] += 1e-3;
        let perturbed = UniPolyMatrix::new(2, 1.0, coeffs).unwrap();
        assert!(matches!(
            verify_certificate(&perturbed, &dec, &CertificateTolerance::default()),
            CertificateStatus::ReconstructionMismatch {
                row: 1,
                col: 1,
                coefficient: 1,
                ..
            }
        ));
    }

    #[test]
    fn repair_restores_exact_reconstruction() {
        let (p, mut dec) = valid_decomposition();
        dec.v[(0, 0)] += 1e-4;
        let lmp = LinearMatrixPolynomial::fixed(p.clone());
        assert_eq!(lmp.degree(1e-14), dec.layout.degree);
        let fix = dec.repair(&p, &CertificateTolerance::default());
        assert!(fix > 0.0 && fix < 1e-3);
        let recon = dec.reconstruct();
        for (a, b) in recon.coeffs().iter().zip(p.coeffs()) {
            assert!((a - b).amax() < 1e-13);
        }
    }
}
