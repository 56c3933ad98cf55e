use std::time::Instant;

use rayon::prelude::*;

use super::anderson::Anderson;
use super::cones::{project_psd_svec_in_place, project_soc_in_place};
use super::linsys::NormalSolver;
use super::{
    Cone, ConeProgram, ConeSolution, ConicError, SolveStatus, SolverSettings, SparseMatrix,
    INACCURATE_FACTOR,
};

const CHECK_EVERY: usize = 5;
const RUIZ_PASSES: usize = 15;
const MIN_NORM: f64 = 1e-8;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Ruiz equilibration with one factor per SOC/PSD block so that cone
/// membership is preserved. Returns `(row, col)` factors.
fn equilibrate(a: &SparseMatrix, cones: &[Cone]) -> (Vec<f64>, Vec<f64>) {
    let mut work = a.clone();
    let mut d = vec![1.0; a.nrows()];
    let mut e = vec![1.0; a.ncols()];
    let inv_sqrt = |x: f64| if x < MIN_NORM { 1.0 } else { 1.0 / x.sqrt() };
    for _ in 0..RUIZ_PASSES {
        let mut rn = work.row_inf_norms();
        let mut offset = 0;
        for cone in cones {
            let k = cone.rows();
            if matches!(cone, Cone::SecondOrder(_) | Cone::Psd(_)) {
                let m = rn[offset..offset + k].iter().fold(0.0f64, |a, &b| a.max(b));
                rn[offset..offset + k].iter_mut().for_each(|x| *x = m);
            }
            offset += k;
        }
        let dr: Vec<f64> = rn.into_iter().map(inv_sqrt).collect();
        let dc: Vec<f64> = work.col_inf_norms().into_iter().map(inv_sqrt).collect();
        work.scale(&dr, &dc);
        d.iter_mut().zip(&dr).for_each(|(a, b)| *a *= b);
        e.iter_mut().zip(&dc).for_each(|(a, b)| *a *= b);
    }
    (d, e)
}

/// Projects `y` onto the dual cone `K*` block by block.
fn project_dual(y: &mut [f64], cones: &[Cone]) {
    let mut blocks: Vec<(&Cone, &mut [f64])> = Vec::with_capacity(cones.len());
    let mut rest = y;
    for cone in cones {
        let (head, tail) = rest.split_at_mut(cone.rows());
        blocks.push((cone, head));
        rest = tail;
    }
    blocks
        .into_par_iter()
        .for_each(|(cone, block)| match *cone {
            Cone::Zero(_) => {}
            Cone::NonNeg(_) => block.iter_mut().for_each(|v| *v = v.max(0.0)),
            Cone::SecondOrder(_) => project_soc_in_place(block),
            Cone::Psd(k) => project_psd_svec_in_place(block, k),
        });
}

struct Scaling {
    d: Vec<f64>,
    e: Vec<f64>,
    sigma_b: f64,
    sigma_c: f64,
}

impl Scaling {
    fn x(&self, xs: &[f64], tau: f64) -> Vec<f64> {
        xs.iter()
            .zip(&self.e)
            .map(|(x, e)| x * e / (self.sigma_b * tau))
            .collect()
    }
    fn s(&self, ss: &[f64], tau: f64) -> Vec<f64> {
        ss.iter()
            .zip(&self.d)
            .map(|(s, d)| s / (d * self.sigma_b * tau))
            .collect()
    }
    fn y(&self, ys: &[f64], tau: f64) -> Vec<f64> {
        ys.iter()
            .zip(&self.d)
            .map(|(y, d)| y * d / (self.sigma_c * tau))
            .collect()
    }
}

struct Residuals {
    pres: f64,
    dres: f64,
    gap: f64,
    pobj: f64,
    dobj: f64,
}

fn residuals(p: &ConeProgram, at: &SparseMatrix, x: &[f64], y: &[f64], s: &[f64]) -> Residuals {
    let ax = p.a.mul_vec(x);
    let pr: Vec<f64> = ax
        .iter()
        .zip(s)
        .zip(&p.b)
        .map(|((a, s), b)| a + s - b)
        .collect();
    let aty = at.mul_vec(y);
    let dr: Vec<f64> = aty.iter().zip(&p.c).map(|(a, c)| a + c).collect();
    let pobj = dot(&p.c, x);
    let dobj = -dot(&p.b, y);
    Residuals {
        pres: norm(&pr) / (1.0 + norm(&p.b)),
        dres: norm(&dr) / (1.0 + norm(&p.c)),
        gap: (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs()),
        pobj,
        dobj,
    }
}

type Outcome = (SolveStatus, Vec<f64>, Vec<f64>, Vec<f64>, Residuals);

/// Optimality test on the current iterate, then the infeasibility and
/// unboundedness certificate tests.
#[allow(clippy::too_many_arguments)]
fn check_termination(
    program: &ConeProgram,
    at: &SparseMatrix,
    scaling: &Scaling,
    settings: &SolverSettings,
    u: &[f64],
    v: &[f64],
    n: usize,
    m: usize,
) -> (Option<Outcome>, Option<f64>) {
    let tau = u[n + m];
    let mut balance = None;
    if tau > 0.0 {
        let x = scaling.x(&u[..n], tau);
        let y = scaling.y(&u[n..n + m], tau);
        let s = scaling.s(&v[n..n + m], tau);
        let r = residuals(program, at, &x, &y, &s);
        if r.pres <= settings.accuracy && r.dres <= settings.accuracy && r.gap <= settings.accuracy
        {
            return (Some((SolveStatus::Optimal, x, y, s, r)), None);
        }
        balance = Some(r.pres / r.dres);
        log::trace!(
            "pres {:.2e} dres {:.2e} gap {:.2e} tau {:.2e}",
            r.pres,
            r.dres,
            r.gap,
            tau
        );
    }
    // infeasibility certificate: y in K*, A'y ~ 0, b'y < 0
    let y = scaling.y(&u[n..n + m], 1.0);
    let by = dot(&program.b, &y);
    if by < 0.0 {
        let aty = at.mul_vec(&y);
        if norm(&aty) <= settings.infeasibility_tolerance * -by {
            let y: Vec<f64> = y.iter().map(|v| v / -by).collect();
            let r = Residuals {
                pres: f64::INFINITY,
                dres: norm(&aty) / -by,
                gap: f64::NAN,
                pobj: f64::INFINITY,
                dobj: 1.0,
            };
            return (
                Some((SolveStatus::Infeasible, vec![0.0; n], y, vec![0.0; m], r)),
                None,
            );
        }
    }
    // unboundedness certificate: A x + s ~ 0, s in K, c'x < 0
    let x = scaling.x(&u[..n], 1.0);
    let cx = dot(&program.c, &x);
    if cx < 0.0 {
        let s = scaling.s(&v[n..n + m], 1.0);
        let ax = program.a.mul_vec(&x);
        let ray: Vec<f64> = ax.iter().zip(&s).map(|(a, s)| a + s).collect();
        if norm(&ray) <= settings.infeasibility_tolerance * -cx {
            let x: Vec<f64> = x.iter().map(|v| v / -cx).collect();
            let s: Vec<f64> = s.iter().map(|v| v / -cx).collect();
            let r = Residuals {
                pres: norm(&ray) / -cx,
                dres: f64::INFINITY,
                gap: f64::NAN,
                pobj: -1.0,
                dobj: f64::NEG_INFINITY,
            };
            return (Some((SolveStatus::Unbounded, x, vec![0.0; m], s, r)), None);
        }
    }
    (None, balance)
}

/// Weight of zero-cone rows relative to the other rows of the `y` block.
const ZERO_CONE_WEIGHT: f64 = 1e-3;
/// Iterations between checks for a scale update.
const SCALE_INTERVAL: usize = 50;
/// Residual imbalance that triggers a scale update.
const SCALE_TRIGGER: f64 = 3.0;

/// `y`-block weights: `1 / scale` per row, smaller on equality rows so that
/// they are enforced more tightly.
fn row_weights(cones: &[Cone], scale: f64, m: usize) -> Vec<f64> {
    let mut r = Vec::with_capacity(m);
    for cone in cones {
        let w = match cone {
            Cone::Zero(_) => ZERO_CONE_WEIGHT / scale,
            _ => 1.0 / scale,
        };
        r.extend(std::iter::repeat(w).take(cone.rows()));
    }
    r
}

/// The projection step `(R + Q)^-1 R w` on the homogeneous embedding,
/// with `Q = [0 A' c; -A 0 b; -c' -b' 0]`.
struct Embedding<'a> {
    a: &'a SparseMatrix,
    c: &'a [f64],
    b: &'a [f64],
    rho_x: f64,
    ry: Vec<f64>,
    lin: NormalSolver,
    gx: Vec<f64>,
    gy: Vec<f64>,
    hg: f64,
}

impl<'a> Embedding<'a> {
    fn new(a: &'a SparseMatrix, c: &'a [f64], b: &'a [f64], rho_x: f64, ry: Vec<f64>) -> Self {
        let lin = NormalSolver::new(a, rho_x, &ry);
        let mut gx = c.to_vec();
        let mut gy = b.to_vec();
        lin.solve(&mut gx, &mut gy);
        let hg = dot(c, &gx) + dot(b, &gy);
        Self {
            a,
            c,
            b,
            rho_x,
            ry,
            lin,
            gx,
            gy,
            hg,
        }
    }

    fn weight(&self, i: usize, n: usize) -> f64 {
        if i < n {
            self.rho_x
        } else if i - n < self.ry.len() {
            self.ry[i - n]
        } else {
            1.0
        }
    }

    /// Overwrites `w` with `(R + Q)^-1 R w`.
    fn solve(&self, w: &mut [f64]) {
        let n = self.a.ncols();
        for (i, wi) in w.iter_mut().enumerate() {
            *wi *= self.weight(i, n);
        }
        let (xy, tau) = w.split_at_mut(w.len() - 1);
        let (x, y) = xy.split_at_mut(n);
        self.lin.solve(x, y);
        let t = (tau[0] + dot(self.c, x) + dot(self.b, y)) / (1.0 + self.hg);
        for (xi, g) in x.iter_mut().zip(&self.gx) {
            *xi -= g * t;
        }
        for (yi, g) in y.iter_mut().zip(&self.gy) {
            *yi -= g * t;
        }
        tau[0] = t;
    }
}

/// Solves `min c'x  s.t.  A x + s = b, s in K` by Douglas-Rachford
/// splitting on the homogeneous self-dual embedding, in a diagonal metric
/// whose dual weight adapts to the primal/dual residual balance.
///
/// On `Infeasible` the returned `y` is a certificate normalized to
/// `b'y = -1`; on `Unbounded`, `x` and `s` form a ray with `c'x = -1`.
pub fn solve(program: &ConeProgram, settings: &SolverSettings) -> Result<ConeSolution, ConicError> {
    program.validate()?;
    settings.validate()?;
    let start = Instant::now();
    let n = program.num_vars();
    let m = program.num_rows();
    let cones = &program.cones;

    let (d, e) = if settings.equilibrate {
        equilibrate(&program.a, cones)
    } else {
        (vec![1.0; m], vec![1.0; n])
    };
    let mut a = program.a.clone();
    a.scale(&d, &e);
    let bt: Vec<f64> = program.b.iter().zip(&d).map(|(b, d)| b * d).collect();
    let ct: Vec<f64> = program.c.iter().zip(&e).map(|(c, e)| c * e).collect();
    let sigma = |v: &[f64]| {
        let nv = norm(v);
        if nv < MIN_NORM {
            1.0
        } else {
            (1.0 / nv).clamp(1e-6, 1e6)
        }
    };
    let scaling = Scaling {
        sigma_b: sigma(&bt),
        sigma_c: sigma(&ct),
        d,
        e,
    };
    let bh: Vec<f64> = bt.iter().map(|b| b * scaling.sigma_b).collect();
    let ch: Vec<f64> = ct.iter().map(|c| c * scaling.sigma_c).collect();

    let mut scale = settings.scale;
    let mut emb = Embedding::new(&a, &ch, &bh, settings.rho_x, row_weights(cones, scale, m));

    let at = program.a.transpose();
    let len = n + m + 1;
    let mut u = vec![0.0; len];
    let mut v = vec![0.0; len];
    u[n + m] = 1.0;
    v[n + m] = 1.0;
    if let Some(ws) = &program.warm_start {
        for j in 0..n {
            u[j] = ws.x[j] / scaling.e[j] * scaling.sigma_b;
        }
        for i in 0..m {
            u[n + i] = ws.y[i] / scaling.d[i] * scaling.sigma_c;
            v[n + i] = ws.s[i] * scaling.d[i] * scaling.sigma_b;
        }
        v[n + m] = 0.0;
    }
    // fixed points satisfy w = u + R^-1 v
    let lift = |emb: &Embedding, u: &[f64], v: &[f64]| -> Vec<f64> {
        (0..len).map(|i| u[i] + v[i] / emb.weight(i, n)).collect()
    };
    let mut w = lift(&emb, &u, &v);

    let alpha = settings.relaxation;
    let mut ut = vec![0.0; len];
    let mut accel = Anderson::new(settings.anderson_memory);
    let mut fallback = w.clone();
    let mut prev_fnorm = f64::INFINITY;
    let mut accelerated = false;
    let mut last_rescale = 0;
    let mut iterations = 0;
    let mut outcome = None;
    for k in 0..settings.max_iterations {
        iterations = k + 1;
        ut.copy_from_slice(&w);
        emb.solve(&mut ut);
        // u = P(2 ut - w), v = R (u - (2 ut - w))
        for i in 0..len {
            u[i] = 2.0 * ut[i] - w[i];
        }
        project_dual(&mut u[n..n + m], cones);
        u[n + m] = u[n + m].max(0.0);
        for i in 0..len {
            v[i] = if i < n {
                0.0
            } else {
                emb.weight(i, n) * (u[i] - (2.0 * ut[i] - w[i]))
            };
        }

        let check = k % CHECK_EVERY == 0 || k + 1 == settings.max_iterations;
        if check {
            let (found, balance) =
                check_termination(program, &at, &scaling, settings, &u, &v, n, m);
            if let Some(found) = found {
                outcome = Some(found);
                break;
            }
            if settings.adaptive_scale && k >= last_rescale + SCALE_INTERVAL {
                if let Some(ratio) = balance.filter(|r| r.is_finite() && *r > 0.0) {
                    let factor = ratio.sqrt();
                    if !(1.0 / SCALE_TRIGGER..=SCALE_TRIGGER).contains(&factor) {
                        scale = (scale * factor).clamp(1e-6, 1e6);
                        emb = Embedding::new(
                            &a,
                            &ch,
                            &bh,
                            settings.rho_x,
                            row_weights(cones, scale, m),
                        );
                        w = lift(&emb, &u, &v);
                        accel.reset();
                        accelerated = false;
                        prev_fnorm = f64::INFINITY;
                        last_rescale = k;
                        log::trace!("iteration {k}: scale -> {scale:.3e}");
                        continue;
                    }
                }
            }
        }

        let g: Vec<f64> = (0..len).map(|i| w[i] + alpha * (u[i] - ut[i])).collect();
        let fnorm = g
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if accelerated && fnorm > prev_fnorm {
            // extrapolation made things worse: fall back to the plain step
            w.clone_from(&fallback);
            accel.reset();
            accelerated = false;
            continue;
        }
        prev_fnorm = fnorm;
        fallback.clone_from(&g);
        match accel.step(&w, &g) {
            Some(next) => {
                w = next;
                accelerated = true;
            }
            None => {
                w = g;
                accelerated = false;
            }
        }
    }

    let (status, x, y, s, r) = outcome.unwrap_or_else(|| {
        let tau = u[n + m].max(f64::MIN_POSITIVE);
        let x = scaling.x(&u[..n], tau);
        let y = scaling.y(&u[n..n + m], tau);
        let s = scaling.s(&v[n..n + m], tau);
        let r = residuals(program, &at, &x, &y, &s);
        let loose = settings.accuracy * INACCURATE_FACTOR;
        let status = if u[n + m] > 0.0 && r.pres <= loose && r.dres <= loose && r.gap <= loose {
            SolveStatus::OptimalInaccurate
        } else {
            SolveStatus::IterationLimit
        };
        (status, x, y, s, r)
    });
    log::debug!(
        "conic solve: {status:?} after {iterations} iterations (pres {:.2e}, dres {:.2e}, gap {:.2e}, scale {scale:.2e})",
        r.pres,
        r.dres,
        r.gap
    );
    Ok(ConeSolution {
        x,
        y,
        s,
        status,
        primal_residual: r.pres,
        dual_residual: r.dres,
        gap: r.gap,
        primal_objective: r.pobj,
        dual_objective: r.dobj,
        iterations,
        solve_time_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{ProgramBuilder, SparseRow};

    fn settings() -> SolverSettings {
        SolverSettings {
            accuracy: 1e-8,
            ..SolverSettings::default()
        }
    }

    #[test]
    fn one_dimensional_lp() {
        // min x  s.t.  x >= 1
        let mut pb = ProgramBuilder::new();
        let x = pb.add_variables(1);
        pb.set_cost(x, 1.0);
        pb.add_nonneg_rows(vec![SparseRow::new(vec![(x, -1.0)], -1.0)]);
        let (p, _) = pb.build();
        let sol = solve(&p, &settings()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-6);
        assert!((sol.y[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn trace_sdp() {
        // min <diag(1,2), X>  s.t.  tr X = 1, X psd  -> optimum 1
        let mut pb = ProgramBuilder::new();
        let x = pb.add_variables(3);
        pb.set_cost(x, 1.0);
        pb.set_cost(x + 2, 2.0);
        pb.add_zero_rows(vec![SparseRow::new(vec![(x, 1.0), (x + 2, 1.0)], 1.0)]);
        pb.add_psd(
            2,
            vec![
                SparseRow::new(vec![(x, -1.0)], 0.0),
                SparseRow::new(vec![(x + 1, -1.0)], 0.0),
                SparseRow::new(vec![(x + 2, -1.0)], 0.0),
            ],
        );
        let (p, _) = pb.build();
        let sol = solve(&p, &settings()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.primal_objective - 1.0).abs() < 1e-6);
        assert!((sol.x[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn second_order_cone_program() {
        // min t  s.t.  ||(x1 - 3, x2 + 4)|| <= t  -> 0 at (3, -4)
        let mut pb = ProgramBuilder::new();
        let v = pb.add_variables(3);
        pb.set_cost(v + 2, 1.0);
        pb.add_second_order(vec![
            SparseRow::new(vec![(v + 2, -1.0)], 0.0),
            SparseRow::new(vec![(v, -1.0)], -3.0),
            SparseRow::new(vec![(v + 1, -1.0)], 4.0),
        ]);
        pb.add_zero_rows(vec![SparseRow::new(vec![(v, 1.0), (v + 1, 1.0)], 1.0)]);
        let (p, _) = pb.build();
        let sol = solve(&p, &settings()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        // constrained to x1 + x2 = 1: distance from (3,-4) to that line is 2/sqrt(2)
        assert!((sol.primal_objective - std::f64::consts::SQRT_2).abs() < 1e-6);
    }

    #[test]
    fn detects_primal_infeasibility() {
        // x >= 1 and x <= 0
        let mut pb = ProgramBuilder::new();
        let x = pb.add_variables(1);
        pb.set_cost(x, 1.0);
        pb.add_nonneg_rows(vec![
            SparseRow::new(vec![(x, -1.0)], -1.0),
            SparseRow::new(vec![(x, 1.0)], 0.0),
        ]);
        let (p, _) = pb.build();
        let sol = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
        assert!((dot(&p.b, &sol.y) + 1.0).abs() < 1e-12);
        assert!(sol.y.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn detects_unboundedness() {
        // min -x  s.t.  x >= 0
        let mut pb = ProgramBuilder::new();
        let x = pb.add_variables(1);
        pb.set_cost(x, -1.0);
        pb.add_nonneg_rows(vec![SparseRow::new(vec![(x, -1.0)], 0.0)]);
        let (p, _) = pb.build();
        let sol = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Unbounded);
        assert!(sol.x[0] > 0.0);
    }

    #[test]
    fn warm_start_at_optimum_terminates_quickly() {
        let mut pb = ProgramBuilder::new();
        let x = pb.add_variables(1);
        pb.set_cost(x, 1.0);
        pb.add_nonneg_rows(vec![SparseRow::new(vec![(x, -1.0)], -1.0)]);
        let (mut p, _) = pb.build();
        let cold = solve(&p, &settings()).unwrap();
        p.warm_start = Some(crate::conic::WarmStart {
            x: cold.x.clone(),
            y: cold.y.clone(),
            s: cold.s.clone(),
        });
        let warm = solve(&p, &settings()).unwrap();
        assert_eq!(warm.status, SolveStatus::Optimal);
        assert!(warm.iterations <= cold.iterations);
    }
}
