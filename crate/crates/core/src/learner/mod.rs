//! Least-squares fitting of polynomial vector fields to demonstrations,
//! with or without per-demonstration contraction constraints compiled to
//! SOS matrix blocks.

mod constraint;
mod metric;
mod model;
mod objective;

pub use constraint::build_contraction_constraint;
pub use metric::MetricField;
pub use model::{
    CertificateAudit, FitDiagnostics, Normalization, Provenance, VectorFieldModel,
    MODEL_SCHEMA_VERSION, MONOMIAL_ORDER,
};
pub use objective::{build_objective, QuadraticForm};

pub(crate) use constraint::residual_matrix;

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{
    self, svec_index, ConicError, ProgramBuilder, SolveStatus, SolverSettings, SparseRow,
};
use crate::polyalg::{
    fit_trajectory, fit_trajectory_auto, MonomialBasis, PolyError, PolyMap, PolyTrajectory,
    UniPolyMatrix,
};
use crate::soscomp::{
    sosm_on_interval, verify_certificate, CertificateStatus, CertificateTolerance,
    LinearMatrixPolynomial, SosError, SosmBlock,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error("no demonstrations given")]
    NoDemonstrations,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid metric: {0}")]
    InvalidMetric(String),
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(String),
    #[error("demonstration {index}: {source}")]
    Demonstration { index: usize, source: PolyError },
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Sos(#[from] SosError),
    #[error(transparent)]
    Conic(#[from] ConicError),
    #[error("metric eigenvalue {min_eigenvalue:.3e} falls below margin {margin:.3e} along a demonstration")]
    MetricNotPositive { min_eigenvalue: f64, margin: f64 },
    #[error("contraction constraints infeasible at tau = {tau}; largest feasible tau found: {largest_feasible_tau:?}")]
    Infeasible {
        tau: f64,
        largest_feasible_tau: Option<f64>,
    },
    #[error("solver stopped with status {status:?} after {iterations} iterations (primal {primal_residual:.2e}, dual {dual_residual:.2e}, gap {gap:.2e})")]
    NotOptimal {
        status: SolveStatus,
        iterations: usize,
        primal_residual: f64,
        dual_residual: f64,
        gap: f64,
    },
    #[error("certificate for demonstration {demo} rejected: {status:?}")]
    CertificateRejected {
        demo: usize,
        status: CertificateStatus,
    },
    #[error("model schema: {0}")]
    Schema(String),
}

/// A sampled demonstration. Times need not start at zero; fits use
/// `t - times[0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub id: String,
    pub times: Vec<f64>,
    pub positions: Vec<DVector<f64>>,
    /// Measured velocities, used only for validation metrics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocities: Option<Vec<DVector<f64>>>,
}

impl Demonstration {
    pub fn new(id: impl Into<String>, times: Vec<f64>, positions: Vec<DVector<f64>>) -> Self {
        Self {
            id: id.into(),
            times,
            positions,
            velocities: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.positions.first().map_or(0, |p| p.len())
    }

    pub fn duration(&self) -> f64 {
        match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Sample times shifted to start at zero.
    pub fn relative_times(&self) -> Vec<f64> {
        let t0 = self.times.first().copied().unwrap_or(0.0);
        self.times.iter().map(|t| t - t0).collect()
    }

    pub fn start(&self) -> &DVector<f64> {
        &self.positions[0]
    }

    pub fn end(&self) -> &DVector<f64> {
        self.positions.last().expect("nonempty demonstration")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionSpec {
    pub tau: f64,
    pub metric: MetricField,
}

impl ContractionSpec {
    pub fn new(tau: f64, metric: MetricField) -> Result<Self, LearnError> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(LearnError::InvalidConfig(format!(
                "tau must be positive, got {tau}"
            )));
        }
        Ok(Self { tau, metric })
    }

    pub fn identity(n: usize, tau: f64) -> Result<Self, LearnError> {
        Self::new(tau, MetricField::identity(n))
    }
}

/// How the per-demonstration contraction constraint enters the program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintMode {
    /// One SOS matrix block per demonstration: exact on the whole interval.
    Exact,
    /// Pointwise PSD constraints at equispaced times: a relaxation.
    Sampled { points: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub degree: usize,
    /// Trajectory-fit degree; `None` picks the smallest adequate degree.
    pub trajectory_degree: Option<usize>,
    pub solver: SolverSettings,
    pub constraint: ConstraintMode,
    /// Lower bound `margin * I` on every Gram block (normalized units).
    pub gram_margin: f64,
    pub ridge: f64,
    pub certificate: CertificateTolerance,
    pub bisection_steps: usize,
    /// Sample times per demonstration for the post-solve residual check.
    pub residual_samples: usize,
    /// Keep the Gram certificates in the model for audit.
    pub keep_certificates: bool,
}

/// Iteration cap for learning programs. Their splitting iterations contract
/// slowly (tens of thousands of steps at 1e-6 accuracy are typical), so the
/// generic solver default is too low.
pub const LEARNER_MAX_ITERATIONS: usize = 250_000;

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            degree: 3,
            trajectory_degree: None,
            solver: SolverSettings {
                max_iterations: LEARNER_MAX_ITERATIONS,
                ..SolverSettings::default()
            },
            constraint: ConstraintMode::Exact,
            gram_margin: 1e-5,
            ridge: 1e-8,
            certificate: CertificateTolerance::default(),
            bisection_steps: 8,
            residual_samples: 1000,
            keep_certificates: true,
        }
    }
}

impl FitOptions {
    pub fn with_degree(degree: usize) -> Self {
        Self {
            degree,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        if self.degree == 0 {
            return Err(LearnError::InvalidConfig(
                "field degree must be at least 1".into(),
            ));
        }
        if !(self.gram_margin >= 0.0) || !(self.ridge >= 0.0) {
            return Err(LearnError::InvalidConfig(
                "margin and ridge must be nonnegative".into(),
            ));
        }
        if let ConstraintMode::Sampled { points } = self.constraint {
            if points < 2 {
                return Err(LearnError::InvalidConfig(
                    "sampled mode needs at least 2 points".into(),
                ));
            }
        }
        self.solver.validate()?;
        Ok(())
    }
}

/// Coarse stages reported while a fit runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStage {
    Trajectories,
    Assembly,
    Solving,
    Verifying,
    Bisecting,
}

/// Demonstrations fitted with polynomial trajectories and mapped to
/// normalized coordinates.
#[derive(Debug, Clone)]
pub struct PreparedDemos {
    pub normalization: Normalization,
    /// Physical-coordinate fits.
    pub physical: Vec<PolyTrajectory>,
    /// The same fits in normalized coordinates.
    pub normalized: Vec<PolyTrajectory>,
    pub ids: Vec<String>,
}

/// Fits `x_poly` per demonstration and computes the affine normalization
/// (center of the sample bounding box, isotropic scale to the unit box,
/// time divided by the longest duration).
pub fn prepare(
    demos: &[Demonstration],
    trajectory_degree: Option<usize>,
) -> Result<PreparedDemos, LearnError> {
    let first = demos.first().ok_or(LearnError::NoDemonstrations)?;
    let n = first.dim();
    if n == 0 {
        return Err(LearnError::Demonstration {
            index: 0,
            source: PolyError::Empty,
        });
    }
    for d in demos {
        if d.positions.iter().any(|p| p.len() != n) {
            return Err(LearnError::DimensionMismatch {
                expected: n,
                got: d.dim(),
            });
        }
    }
    let physical = demos
        .par_iter()
        .enumerate()
        .map(|(index, d)| {
            let times = d.relative_times();
            match trajectory_degree {
                Some(deg) => fit_trajectory(&times, &d.positions, deg),
                None => fit_trajectory_auto(&times, &d.positions),
            }
            .map_err(|source| LearnError::Demonstration { index, source })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut lo = first.positions[0].clone();
    let mut hi = lo.clone();
    for p in demos.iter().flat_map(|d| &d.positions) {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let center: Vec<f64> = ((&lo + &hi) * 0.5).iter().copied().collect();
    let half_width = (&hi - &lo).amax() * 0.5;
    let scale = if half_width > 0.0 { half_width } else { 1.0 };
    let time_scale = physical.iter().map(|t| t.horizon()).fold(0.0, f64::max);
    let normalization = Normalization {
        center,
        scale,
        time_scale,
    };
    let normalized = physical
        .iter()
        .map(|t| t.normalized(&normalization.center, scale, time_scale))
        .collect();
    Ok(PreparedDemos {
        normalization,
        physical,
        normalized,
        ids: demos.iter().map(|d| d.id.clone()).collect(),
    })
}

/// Learns a `spec.tau`-contracting field under `spec.metric` along every
/// demonstration.
pub fn fit(
    demos: &[Demonstration],
    spec: &ContractionSpec,
    options: &FitOptions,
) -> Result<VectorFieldModel, LearnError> {
    fit_with_progress(demos, spec, options, &|_| {})
}

pub fn fit_with_progress(
    demos: &[Demonstration],
    spec: &ContractionSpec,
    options: &FitOptions,
    progress: &(dyn Fn(FitStage) + Sync),
) -> Result<VectorFieldModel, LearnError> {
    options.validate()?;
    progress(FitStage::Trajectories);
    let prepared = prepare(demos, options.trajectory_degree)?;
    fit_prepared(&prepared, spec, options, progress)
}

/// [`fit`] on demonstrations already fitted and normalized by [`prepare`].
pub fn fit_prepared(
    prepared: &PreparedDemos,
    spec: &ContractionSpec,
    options: &FitOptions,
    progress: &(dyn Fn(FitStage) + Sync),
) -> Result<VectorFieldModel, LearnError> {
    options.validate()?;
    let n = prepared.normalization.center.len();
    if spec.metric.dim() != n {
        return Err(LearnError::DimensionMismatch {
            expected: n,
            got: spec.metric.dim(),
        });
    }
    progress(FitStage::Assembly);
    let started = Instant::now();
    let norm = &prepared.normalization;
    let metric_n = spec.metric.substitute_affine(&norm.center, norm.scale)?;
    let tau_n = spec.tau * norm.time_scale;
    let objective = build_objective(&prepared.normalized, options.degree)?;
    let constraints = prepared
        .normalized
        .par_iter()
        .map(|traj| build_contraction_constraint(traj, tau_n, &metric_n, options.degree))
        .collect::<Result<Vec<_>, _>>()?;
    let assembly_secs = started.elapsed().as_secs_f64();

    progress(FitStage::Solving);
    let attempt = solve_program(&objective, &constraints, options)?;
    let (coeffs, solution, blocks, ranges) = match attempt {
        Attempt::Solved {
            coeffs,
            solution,
            blocks,
            ranges,
        } => (coeffs, solution, blocks, ranges),
        Attempt::Infeasible => {
            progress(FitStage::Bisecting);
            let largest = bisect_tau(&objective, &constraints, tau_n, options)?;
            return Err(LearnError::Infeasible {
                tau: spec.tau,
                largest_feasible_tau: largest.map(|t| t / norm.time_scale),
            });
        }
        Attempt::Failed(solution) => {
            return Err(LearnError::NotOptimal {
                status: solution.status,
                iterations: solution.iterations,
                primal_residual: solution.primal_residual,
                dual_residual: solution.dual_residual,
                gap: solution.gap,
            })
        }
    };

    progress(FitStage::Verifying);
    let mut audits = Vec::with_capacity(constraints.len());
    let mut certificates = Vec::new();
    for (i, lmp) in constraints.iter().enumerate() {
        let p = lmp.substitute(&coeffs)?;
        let (status, gram_min) = match &blocks {
            Some(blocks) => {
                let mut dec = blocks[i].extract(&solution.s, &ranges);
                dec.repair(&p, &options.certificate);
                let status = verify_certificate(&p, &dec, &options.certificate);
                let gram_min = dec.min_eigenvalue().1;
                if options.keep_certificates {
                    certificates.push(dec);
                }
                (Some(status), Some(gram_min))
            }
            None => (None, None),
        };
        if let Some(status) = &status {
            if !status.is_valid() {
                return Err(LearnError::CertificateRejected {
                    demo: i,
                    status: status.clone(),
                });
            }
        }
        audits.push(CertificateAudit {
            demo: prepared.ids[i].clone(),
            status,
            gram_min_eigenvalue: gram_min,
            max_residual: f64::NAN,
        });
    }

    let loss_n = objective.value(&coeffs);
    let model = VectorFieldModel::from_normalized(
        n,
        options.degree,
        &coeffs,
        prepared.normalization.clone(),
        Some(spec.clone()),
        loss_n,
        FitDiagnostics::from_solution(&solution, assembly_secs, audits, options),
        Provenance::from_prepared(prepared),
        certificates,
    )?;
    Ok(model.with_sampled_residuals(&prepared.physical, options.residual_samples))
}

/// The least-squares fit with no contraction constraint, solved in closed
/// form with the ridge term.
pub fn fit_unconstrained(
    demos: &[Demonstration],
    options: &FitOptions,
) -> Result<VectorFieldModel, LearnError> {
    options.validate()?;
    let prepared = prepare(demos, options.trajectory_degree)?;
    fit_unconstrained_prepared(&prepared, options)
}

pub fn fit_unconstrained_prepared(
    prepared: &PreparedDemos,
    options: &FitOptions,
) -> Result<VectorFieldModel, LearnError> {
    let started = Instant::now();
    let n = prepared.normalization.center.len();
    let objective = build_objective(&prepared.normalized, options.degree)?;
    let mut q = objective.q.clone();
    for i in 0..q.nrows() {
        q[(i, i)] += options.ridge;
    }
    let c = match q.clone().cholesky() {
        Some(ch) => ch.solve(&objective.b),
        None => q
            .svd(true, true)
            .solve(&objective.b, 0.0)
            .map_err(|e| LearnError::InvalidConfig(e.to_string()))?,
    };
    let coeffs: Vec<f64> = c.iter().copied().collect();
    let loss_n = objective.value(&coeffs);
    let diagnostics = FitDiagnostics::closed_form(started.elapsed().as_secs_f64());
    let model = VectorFieldModel::from_normalized(
        n,
        options.degree,
        &coeffs,
        prepared.normalization.clone(),
        None,
        loss_n,
        diagnostics,
        Provenance::from_prepared(prepared),
        Vec::new(),
    )?;
    Ok(model)
}

enum Attempt {
    Solved {
        coeffs: Vec<f64>,
        solution: conic::ConeSolution,
        blocks: Option<Vec<SosmBlock>>,
        ranges: Vec<std::ops::Range<usize>>,
    },
    Infeasible,
    Failed(conic::ConeSolution),
}

/// Square-root factor `F` of `Q + ridge I` and `h = F^-T b`, so that the
/// loss equals `|F c - h|^2 + constant - |h|^2`.
fn factor_objective(objective: &QuadraticForm, ridge: f64) -> (DMatrix<f64>, DVector<f64>) {
    let mut q = objective.q.clone();
    for i in 0..q.nrows() {
        q[(i, i)] += ridge;
    }
    let eig = SymmetricEigen::new(q);
    let floor = eig.eigenvalues.amax() * 1e-15;
    let roots = eig.eigenvalues.map(|l| l.max(floor).sqrt());
    let f = DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    let vb = eig.eigenvectors.transpose() * &objective.b;
    let h = vb.component_div(&roots);
    (f, h)
}

fn solve_program(
    objective: &QuadraticForm,
    constraints: &[LinearMatrixPolynomial],
    options: &FitOptions,
) -> Result<Attempt, LearnError> {
    let num_coeffs = objective.b.len();
    let mut builder = ProgramBuilder::new();
    let c0 = builder.add_variables(num_coeffs);
    let epi = builder.add_variables(1);
    builder.set_cost(epi, 1.0);
    // |F c - h|^2 <= s as the rotated cone (s + 1, s - 1, 2 (h - F c)) in SOC,
    // which stays away from the apex when the loss is zero.
    let (f, h) = factor_objective(objective, options.ridge);
    let mut soc = Vec::with_capacity(num_coeffs + 2);
    soc.push(SparseRow::new(vec![(epi, -1.0)], 1.0));
    soc.push(SparseRow::new(vec![(epi, -1.0)], -1.0));
    for i in 0..f.nrows() {
        let entries = (0..num_coeffs)
            .filter(|&j| f[(i, j)] != 0.0)
            .map(|j| (c0 + j, 2.0 * f[(i, j)]))
            .collect();
        soc.push(SparseRow::new(entries, 2.0 * h[i]));
    }
    builder.add_second_order(soc);

    let columns: Vec<usize> = (c0..c0 + num_coeffs).collect();
    let blocks = match options.constraint {
        ConstraintMode::Exact => Some(
            constraints
                .iter()
                .map(|lmp| sosm_on_interval(lmp, &columns, &mut builder, options.gram_margin))
                .collect::<Result<Vec<_>, _>>()?,
        ),
        ConstraintMode::Sampled { points } => {
            for lmp in constraints {
                add_sampled_lmis(lmp, &columns, &mut builder, points);
            }
            None
        }
    };
    let (program, ranges) = builder.build();
    let solution = conic::solve(&program, &options.solver)?;
    log::debug!(
        "learner solve: {:?} in {} iterations ({:.3}s)",
        solution.status,
        solution.iterations,
        solution.solve_time_secs
    );
    Ok(match solution.status {
        status if status.is_solved() => Attempt::Solved {
            coeffs: solution.x[c0..c0 + num_coeffs].to_vec(),
            solution,
            blocks,
            ranges,
        },
        SolveStatus::Infeasible => Attempt::Infeasible,
        _ => Attempt::Failed(solution),
    })
}

/// `P(t_j; c) PSD` at `points` equispaced times of each interval.
fn add_sampled_lmis(
    lmp: &LinearMatrixPolynomial,
    columns: &[usize],
    builder: &mut ProgramBuilder,
    points: usize,
) {
    let n = lmp.size();
    let h = lmp.horizon();
    for j in 0..points {
        let t = h * j as f64 / (points - 1) as f64;
        let p0 = lmp.constant().eval(t);
        let pk: Vec<DMatrix<f64>> = lmp.terms().iter().map(|m| m.eval(t)).collect();
        let mut rows = vec![SparseRow::default(); n * (n + 1) / 2];
        for q in 0..n {
            for p in 0..=q {
                let w = if p == q {
                    1.0
                } else {
                    std::f64::consts::SQRT_2
                };
                let row = &mut rows[svec_index(p, q)];
                row.rhs = w * p0[(p, q)];
                for (k, m) in pk.iter().enumerate() {
                    if m[(p, q)] != 0.0 {
                        row.entries.push((columns[k], -w * m[(p, q)]));
                    }
                }
            }
        }
        builder.add_psd(n, rows);
    }
}

/// Largest `tau` in `[0, tau_max]` (normalized units) for which the
/// program solves, by bisection.
fn bisect_tau(
    objective: &QuadraticForm,
    constraints: &[LinearMatrixPolynomial],
    tau_max: f64,
    options: &FitOptions,
) -> Result<Option<f64>, LearnError> {
    // The constant term is exactly -tau M(x(t)), so the rate term is the
    // constant divided by tau and the base constant is zero.
    let rate: Vec<UniPolyMatrix> = constraints
        .iter()
        .map(|c| c.constant().scale(1.0 / tau_max))
        .collect();
    let base = constraints
        .iter()
        .map(|c| c.with_constant(c.constant().scale(0.0)))
        .collect::<Result<Vec<_>, _>>()?;
    bisect_rate(objective, &base, &rate, tau_max, options)
}

/// Bisection over `tau` for constraints `base_i + tau rate_i`.
fn bisect_rate(
    objective: &QuadraticForm,
    base: &[LinearMatrixPolynomial],
    rate: &[UniPolyMatrix],
    tau_max: f64,
    options: &FitOptions,
) -> Result<Option<f64>, LearnError> {
    let at = |tau: f64| -> Result<Vec<LinearMatrixPolynomial>, LearnError> {
        base.iter()
            .zip(rate)
            .map(|(c, r)| {
                c.with_constant(c.constant().add(&r.scale(tau)))
                    .map_err(LearnError::from)
            })
            .collect()
    };
    let (mut lo, mut hi) = (0.0, tau_max);
    let mut found = None;
    for _ in 0..options.bisection_steps {
        let mid = 0.5 * (lo + hi);
        match solve_program(objective, &at(mid)?, options)? {
            Attempt::Solved { .. } => {
                lo = mid;
                found = Some(mid);
            }
            _ => hi = mid,
        }
    }
    Ok(found)
}

/// Field coefficients of a `PolyMap` in component-major order.
pub(crate) fn field_from_coefficients(
    n: usize,
    degree: usize,
    coeffs: &[f64],
) -> Result<PolyMap, LearnError> {
    Ok(PolyMap::from_coefficients(
        MonomialBasis::new(n, degree),
        coeffs,
    )?)
}
