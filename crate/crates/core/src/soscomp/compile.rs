use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::certificate::{
    verify_certificate, CertificateStatus, CertificateTolerance, GramBlock, GramDecomposition,
};
use super::{LinearMatrixPolynomial, SosError, DEGREE_TOL};
use crate::conic::{
    self, smat, svec_index, ProgramBuilder, RowBlock, SolveStatus, SolverSettings, SparseRow,
    INACCURATE_FACTOR,
};
use crate::polyalg::{UniPoly, UniPolyMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    /// `P = t V + (T - t) W`.
    Odd,
    /// `P = V + t (T - t) W`.
    Even,
}

/// Shapes of the Gram blocks certifying a degree-`degree` matrix polynomial.
///
/// A block with half-degree `h` is the Gram matrix over
/// `[T_0 I, ..., T_h I]` and has order `size * (h + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SosmLayout {
    pub size: usize,
    pub horizon: f64,
    pub degree: usize,
    pub parity: Parity,
    pub v_half: usize,
    pub w_half: Option<usize>,
}

impl SosmLayout {
    pub fn new(size: usize, horizon: f64, degree: usize) -> Self {
        let (parity, v_half, w_half) = if degree % 2 == 1 {
            (Parity::Odd, (degree - 1) / 2, Some((degree - 1) / 2))
        } else if degree >= 2 {
            (Parity::Even, degree / 2, Some(degree / 2 - 1))
        } else {
            (Parity::Even, 0, None)
        };
        Self {
            size,
            horizon,
            degree,
            parity,
            v_half,
            w_half,
        }
    }

    pub fn order(&self, block: GramBlock) -> usize {
        match block {
            GramBlock::V => self.size * (self.v_half + 1),
            GramBlock::W => self.w_half.map_or(0, |h| self.size * (h + 1)),
        }
    }

    pub fn num_equalities(&self) -> usize {
        self.size * (self.size + 1) / 2 * (self.degree + 1)
    }

    /// Equality row for Chebyshev coefficient `k` of entry `(p, q)`.
    pub fn row(&self, p: usize, q: usize, k: usize) -> usize {
        svec_index(p, q) * (self.degree + 1) + k
    }

    pub fn multiplier(&self, block: GramBlock) -> UniPoly {
        let h = self.horizon;
        let t = UniPoly::time(h);
        match (self.parity, block) {
            (Parity::Odd, GramBlock::V) => t,
            (Parity::Odd, GramBlock::W) => UniPoly::constant(h, h).sub(&t),
            (Parity::Even, GramBlock::V) => UniPoly::constant(h, 1.0),
            (Parity::Even, GramBlock::W) => t.mul(&UniPoly::constant(h, h).sub(&t)),
        }
    }

    fn half(&self, block: GramBlock) -> Option<usize> {
        match block {
            GramBlock::V => Some(self.v_half),
            GramBlock::W => self.w_half,
        }
    }

    /// `products[a][b]` holds the Chebyshev coefficients of
    /// `T_a T_b * multiplier`.
    pub(crate) fn products(&self, block: GramBlock) -> Vec<Vec<Vec<f64>>> {
        let Some(h) = self.half(block) else {
            return Vec::new();
        };
        let mult = self.multiplier(block);
        let basis: Vec<UniPoly> = (0..=h)
            .map(|a| {
                let mut c = vec![0.0; a + 1];
                c[a] = 1.0;
                UniPoly::from_chebyshev(self.horizon, c)
            })
            .collect();
        (0..=h)
            .map(|a| {
                (0..=h)
                    .map(|b| {
                        basis[a]
                            .mul(&basis[b])
                            .mul(&mult)
                            .chebyshev_coeffs()
                            .to_vec()
                    })
                    .collect()
            })
            .collect()
    }

    /// For each svec entry of the Gram block, the equality rows it enters
    /// and with which weight.
    pub(crate) fn gram_map(&self, block: GramBlock) -> Vec<Vec<(usize, f64)>> {
        let n = self.size;
        let order = self.order(block);
        let products = self.products(block);
        let mut out = Vec::with_capacity(order * (order + 1) / 2);
        for j in 0..order {
            for i in 0..=j {
                let (a, p) = (i / n, i % n);
                let (b, q) = (j / n, j % n);
                let weight = if i == j {
                    1.0
                } else if p == q {
                    std::f64::consts::SQRT_2
                } else {
                    std::f64::consts::FRAC_1_SQRT_2
                };
                let prod = &products[a][b];
                let contribs = prod
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(k, &v)| {
                        debug_assert!(k <= self.degree);
                        (self.row(p, q, k), weight * v)
                    })
                    .collect();
                out.push(contribs);
            }
        }
        out
    }
}

/// Handles to the variables and rows emitted for one SOSM constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct SosmBlock {
    pub layout: SosmLayout,
    /// Lower bound `margin * I` imposed on each Gram block.
    pub margin: f64,
    pub v_vars: Range<usize>,
    pub w_vars: Range<usize>,
    pub equalities: RowBlock,
    pub v_cone: RowBlock,
    pub w_cone: Option<RowBlock>,
}

impl SosmBlock {
    /// Reads the Gram blocks from the solver's cone slacks, which lie in the
    /// PSD cone exactly.
    pub fn extract(&self, slack: &[f64], ranges: &[Range<usize>]) -> GramDecomposition {
        let read = |cone: RowBlock, order: usize| {
            let r = ranges[cone.index()].clone();
            smat(&slack[r], order) + DMatrix::identity(order, order) * self.margin
        };
        let v = read(self.v_cone, self.layout.order(GramBlock::V));
        let w = match self.w_cone {
            Some(c) => read(c, self.layout.order(GramBlock::W)),
            None => DMatrix::zeros(0, 0),
        };
        GramDecomposition {
            layout: self.layout.clone(),
            v,
            w,
        }
    }
}

/// Emits the SOSM constraint "`p` is PSD on `[0, T]`" into `builder`.
///
/// `columns[k]` is the builder column of `p`'s `k`-th decision variable.
/// With `margin > 0` each Gram block is constrained to `G >= margin I`,
/// which is a strict tightening; `margin = 0` keeps the encoding exact.
pub fn sosm_on_interval(
    p: &LinearMatrixPolynomial,
    columns: &[usize],
    builder: &mut ProgramBuilder,
    margin: f64,
) -> Result<SosmBlock, SosError> {
    if columns.len() != p.num_vars() {
        return Err(SosError::ColumnCount {
            expected: p.num_vars(),
            got: columns.len(),
        });
    }
    let n = p.size();
    let layout = SosmLayout::new(n, p.horizon(), p.degree(DEGREE_TOL));
    let svec_len = |order: usize| order * (order + 1) / 2;
    let v_order = layout.order(GramBlock::V);
    let w_order = layout.order(GramBlock::W);
    let v_start = builder.add_variables(svec_len(v_order));
    let w_start = builder.add_variables(svec_len(w_order));

    let mut rows = vec![SparseRow::default(); layout.num_equalities()];
    let each_coeff = |m: &UniPolyMatrix, f: &mut dyn FnMut(usize, f64)| {
        for (k, c) in m.coeffs().iter().enumerate().take(layout.degree + 1) {
            for q in 0..n {
                for pp in 0..=q {
                    let v = c[(pp, q)];
                    if v != 0.0 {
                        f(layout.row(pp, q, k), v);
                    }
                }
            }
        }
    };
    for (var, term) in p.terms().iter().enumerate() {
        each_coeff(term, &mut |r, v| rows[r].entries.push((columns[var], v)));
    }
    each_coeff(p.constant(), &mut |r, v| rows[r].rhs = -v);
    for (block, start) in [(GramBlock::V, v_start), (GramBlock::W, w_start)] {
        for (idx, contribs) in layout.gram_map(block).into_iter().enumerate() {
            for (r, w) in contribs {
                rows[r].entries.push((start + idx, -w));
            }
        }
    }
    let equalities = builder.add_zero_rows(rows);

    let psd_rows = |start: usize, order: usize| {
        let mut out = Vec::with_capacity(svec_len(order));
        for j in 0..order {
            for i in 0..=j {
                let rhs = if i == j { -margin } else { 0.0 };
                out.push(SparseRow::new(vec![(start + svec_index(i, j), -1.0)], rhs));
            }
        }
        out
    };
    let v_cone = builder.add_psd(v_order, psd_rows(v_start, v_order));
    let w_cone = (w_order > 0).then(|| builder.add_psd(w_order, psd_rows(w_start, w_order)));
    Ok(SosmBlock {
        layout,
        margin,
        v_vars: v_start..v_start + svec_len(v_order),
        w_vars: w_start..w_start + svec_len(w_order),
        equalities,
        v_cone,
        w_cone,
    })
}

/// Outcome of deciding whether a fixed matrix polynomial is PSD on its
/// horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct SosmDecision {
    /// `Optimal` (or `OptimalInaccurate`) with a certificate when `p` is
    /// SOSM, `Infeasible` when the largest shift is negative, otherwise the
    /// status of the solve that failed.
    pub status: SolveStatus,
    /// Largest `lambda` for which `p - lambda I` is SOSM, when solved. This
    /// is the minimum eigenvalue of `p` over the interval.
    pub margin: Option<f64>,
    pub decomposition: Option<GramDecomposition>,
    pub certificate: Option<CertificateStatus>,
    /// Iterations over both solves.
    pub iterations: usize,
}

impl SosmDecision {
    pub fn feasible(&self) -> bool {
        self.status.is_solved()
    }
}

/// Decides whether `p` is SOSM in two solves. The first maximizes `lambda`
/// subject to `p - lambda I` SOSM, a program with a strictly feasible point
/// whatever `p` is, so the answer never relies on detecting infeasibility.
/// Unless `lambda` is negative beyond solver accuracy, a second solve finds
/// a Gram certificate for `p` itself, which is then repaired and verified.
pub fn decide_sosm(
    p: &UniPolyMatrix,
    settings: &SolverSettings,
    tolerance: &CertificateTolerance,
) -> Result<SosmDecision, SosError> {
    let n = p.size();
    let shift = UniPolyMatrix::new(n, p.horizon(), vec![-DMatrix::identity(n, n)])?;
    let shifted = LinearMatrixPolynomial::new(p.clone(), vec![shift])?;
    let mut builder = ProgramBuilder::new();
    let lambda = builder.add_variables(1);
    builder.set_cost(lambda, -1.0);
    sosm_on_interval(&shifted, &[lambda], &mut builder, 0.0)?;
    let (program, _) = builder.build();
    let bound = conic::solve(&program, settings)?;
    let mut decision = SosmDecision {
        status: bound.status,
        margin: None,
        decomposition: None,
        certificate: None,
        iterations: bound.iterations,
    };
    if !bound.status.is_solved() {
        return Ok(decision);
    }
    let margin = bound.x[lambda];
    decision.margin = Some(margin);
    // a margin within solver accuracy of zero is left to the direct solve
    let size = 1.0f64.max(p.max_abs_coeff());
    if margin < -INACCURATE_FACTOR * settings.accuracy * size {
        decision.status = SolveStatus::Infeasible;
        return Ok(decision);
    }

    let mut builder = ProgramBuilder::new();
    let block = sosm_on_interval(
        &LinearMatrixPolynomial::fixed(p.clone()),
        &[],
        &mut builder,
        0.0,
    )?;
    let (program, ranges) = builder.build();
    let sol = conic::solve(&program, settings)?;
    decision.status = sol.status;
    decision.iterations += sol.iterations;
    if sol.status.is_solved() {
        let mut dec = block.extract(&sol.s, &ranges);
        dec.repair(p, tolerance);
        decision.certificate = Some(verify_certificate(p, &dec, tolerance));
        decision.decomposition = Some(dec);
    }
    Ok(decision)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(coeffs_monomial: &[f64], horizon: f64) -> UniPolyMatrix {
        let u = UniPoly::from_monomial(horizon, coeffs_monomial);
        UniPolyMatrix::from_entries(&[vec![u]]).unwrap()
    }

    #[test]
    fn layout_follows_degree_parity() {
        let odd = SosmLayout::new(2, 1.0, 5);
        assert_eq!(odd.parity, Parity::Odd);
        assert_eq!((odd.v_half, odd.w_half), (2, Some(2)));
        let even = SosmLayout::new(2, 1.0, 4);
        assert_eq!((even.v_half, even.w_half), (2, Some(1)));
        let constant = SosmLayout::new(3, 1.0, 0);
        assert_eq!((constant.v_half, constant.w_half), (0, None));
        assert_eq!(constant.num_equalities(), 6);
    }

    #[test]
    fn gram_map_reconstructs_monomial_products() {
        // Gram contribution of a random svec vector equals the direct
        // reconstruction Z' G Z * multiplier evaluated pointwise.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let layout = SosmLayout::new(2, 2.0, 5);
        for block in [GramBlock::V, GramBlock::W] {
            let order = layout.order(block);
            let x: Vec<f64> = (0..order * (order + 1) / 2)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let mut coeffs = vec![0.0; layout.num_equalities()];
            for (idx, contribs) in layout.gram_map(block).iter().enumerate() {
                for &(r, w) in contribs {
                    coeffs[r] += w * x[idx];
                }
            }
            let g = smat(&x, order);
            let mult = layout.multiplier(block);
            for &t in &[0.0, 0.3, 1.1, 2.0] {
                let s = t - 1.0;
                let tv = crate::polyalg::chebyshev_values(s, layout.v_half);
                let mut z = DMatrix::zeros(order, 2);
                for a in 0..order / 2 {
                    z[(2 * a, 0)] = tv[a];
                    z[(2 * a + 1, 1)] = tv[a];
                }
                let direct = z.transpose() * &g * &z * mult.eval(t);
                for q in 0..2 {
                    for p in 0..=q {
                        let entry: Vec<f64> = (0..=layout.degree)
                            .map(|k| coeffs[layout.row(p, q, k)])
                            .collect();
                        let val = UniPoly::from_chebyshev(2.0, entry).eval(t);
                        assert!((val - direct[(p, q)]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn positive_time_is_feasible() {
        let p = scalar(&[0.0, 1.0], 1.0);
        let d = decide_sosm(
            &p,
            &SolverSettings::default(),
            &CertificateTolerance::default(),
        )
        .unwrap();
        assert!(d.feasible());
        let dec = d.decomposition.unwrap();
        assert_eq!(dec.layout.parity, Parity::Odd);
        assert!((dec.v[(0, 0)] - 1.0).abs() < 1e-6);
        assert!(dec.w[(0, 0)].abs() < 1e-6);
        assert_eq!(d.certificate, Some(CertificateStatus::Valid));
    }

    #[test]
    fn interval_bubble_is_feasible() {
        // t (1 - t): V = 0, W = 1
        let p = scalar(&[0.0, 1.0, -1.0], 1.0);
        let d = decide_sosm(
            &p,
            &SolverSettings::default(),
            &CertificateTolerance::default(),
        )
        .unwrap();
        assert!(d.feasible());
        let dec = d.decomposition.unwrap();
        assert_eq!(dec.layout.parity, Parity::Even);
        assert!(dec.v.amax() < 1e-5);
        assert!((dec.w[(0, 0)] - 1.0).abs() < 1e-5);
        assert_eq!(d.certificate, Some(CertificateStatus::Valid));
    }

    #[test]
    fn negative_constant_is_infeasible() {
        let p = scalar(&[-1.0], 1.0);
        let d = decide_sosm(
            &p,
            &SolverSettings::default(),
            &CertificateTolerance::default(),
        )
        .unwrap();
        assert_eq!(d.status, SolveStatus::Infeasible);
        assert!((d.margin.unwrap() + 1.0).abs() < 1e-4, "{:?}", d.margin);
    }

    #[test]
    fn margin_is_the_interval_minimum_eigenvalue() {
        // diag(t^2 - t + 0.5, 1 + t) has minimum eigenvalue 0.25 at t = 1/2
        let p = UniPolyMatrix::from_entries(&[
            vec![
                UniPoly::from_monomial(1.0, &[0.5, -1.0, 1.0]),
                UniPoly::zero(1.0),
            ],
            vec![UniPoly::zero(1.0), UniPoly::from_monomial(1.0, &[1.0, 1.0])],
        ])
        .unwrap();
        let d = decide_sosm(
            &p,
            &SolverSettings::default(),
            &CertificateTolerance::default(),
        )
        .unwrap();
        assert!(d.feasible());
        assert!((d.margin.unwrap() - 0.25).abs() < 1e-4, "{:?}", d.margin);
        assert_eq!(d.certificate, Some(CertificateStatus::Valid));
    }

    #[test]
    fn equality_count_matches_degree() {
        let p = UniPolyMatrix::from_entries(&[
            vec![
                UniPoly::from_monomial(1.0, &[1.0, 0.0, 1.0]),
                UniPoly::from_monomial(1.0, &[0.0, 0.5]),
            ],
            vec![
                UniPoly::zero(1.0),
                UniPoly::from_monomial(1.0, &[2.0, 0.0, 0.0, 1.0]),
            ],
        ])
        .unwrap();
        let mut b = ProgramBuilder::new();
        let blk = sosm_on_interval(&LinearMatrixPolynomial::fixed(p), &[], &mut b, 0.0).unwrap();
        let (_, ranges) = b.build();
        assert_eq!(blk.layout.degree, 3);
        assert_eq!(ranges[blk.equalities.index()].len(), 3 * 4);
    }
}
