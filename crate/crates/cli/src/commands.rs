use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use cvf_core::bench::{self, BenchmarkReport};
use cvf_core::dynsys::{
    default_alpha, integrate_field, modulate, BoundingBox, Field, IntegrationOptions,
    ObstacleField, SimTrajectory, Termination,
};
use cvf_core::io;
use cvf_core::learner::{
    self, CertificateAudit, ContractionSpec, Demonstration, FitDiagnostics, LearnError,
    VectorFieldModel,
};

use crate::config::{self, EvalConfig, FitConfig, SimulateConfig, StartSpec};
use crate::error::{write_failed, CliError};

pub fn load_demos(paths: &[PathBuf]) -> Result<Vec<Demonstration>, CliError> {
    paths
        .iter()
        .map(|p| Ok(io::read_demonstration_file(p)?))
        .collect()
}

pub fn load_model(path: &Path) -> Result<VectorFieldModel, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    VectorFieldModel::from_json(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Written next to the model by `fit`, whether or not the fit succeeded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitAudit {
    pub ok: bool,
    pub error: Option<String>,
    pub loss: Option<f64>,
    pub diagnostics: Option<FitDiagnostics>,
    pub certificates: Vec<CertificateAudit>,
    /// Set when the constraints were infeasible and a smaller rate was found.
    pub largest_feasible_tau: Option<f64>,
    pub assembly_secs: f64,
    pub solve_secs: f64,
    pub total_secs: f64,
}

pub struct FitOutcome {
    pub model: VectorFieldModel,
    pub audit: FitAudit,
}

/// Fits a model and writes the model JSON, the audit and the resolved
/// configuration. On a failed fit only the audit and configuration are
/// written.
pub fn run_fit(cfg: &FitConfig) -> Result<FitOutcome, CliError> {
    cfg.validate()?;
    config::log_resolved("fit", cfg);
    let demos = load_demos(&cfg.demos)?;
    let n = demos[0].dim();
    let metric = cfg.metric.resolve(n)?;
    config::write_json(&cfg.config_path(), cfg)?;

    let started = Instant::now();
    let progress = |stage| log::info!("fit stage: {stage:?}");
    let result = if cfg.unconstrained {
        learner::fit_unconstrained(&demos, &cfg.options)
    } else {
        let spec =
            ContractionSpec::new(cfg.tau, metric).map_err(|e| CliError::Config(e.to_string()))?;
        learner::fit_with_progress(&demos, &spec, &cfg.options, &progress)
    };
    let total_secs = started.elapsed().as_secs_f64();

    match result {
        Ok(model) => {
            let d = model.diagnostics();
            let audit = FitAudit {
                ok: true,
                error: None,
                loss: Some(model.loss()),
                diagnostics: Some(d.clone()),
                certificates: d.certificates.clone(),
                largest_feasible_tau: None,
                assembly_secs: d.assembly_secs,
                solve_secs: d.solve_secs,
                total_secs,
            };
            config::write_json(&cfg.audit_path(), &audit)?;
            let mut json = model.to_json();
            json.push('\n');
            std::fs::write(&cfg.out, json).map_err(|e| write_failed(&cfg.out, e))?;
            log::info!(
                "fit done in {total_secs:.2}s: loss {:.6e}, status {:?}, wrote {}",
                model.loss(),
                d.status,
                cfg.out.display()
            );
            Ok(FitOutcome { model, audit })
        }
        Err(e) => {
            let largest_feasible_tau = match &e {
                LearnError::Infeasible {
                    largest_feasible_tau,
                    ..
                } => *largest_feasible_tau,
                _ => None,
            };
            let audit = FitAudit {
                ok: false,
                error: Some(e.to_string()),
                loss: None,
                diagnostics: None,
                certificates: Vec::new(),
                largest_feasible_tau,
                assembly_secs: 0.0,
                solve_secs: 0.0,
                total_secs,
            };
            config::write_json(&cfg.audit_path(), &audit)?;
            Err(e.into())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub file: String,
    pub start: Vec<f64>,
    pub final_state: Vec<f64>,
    pub final_time: f64,
    pub steps: usize,
    pub termination: Termination,
    /// Obstacle strength used, for modulated runs.
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub config: SimulateConfig,
    pub horizon: f64,
    pub dt: f64,
    pub runs: Vec<RunSummary>,
}

fn start_points(cfg: &SimulateConfig, model: &VectorFieldModel) -> Result<Vec<Vec<f64>>, CliError> {
    let points = match &cfg.starts {
        StartSpec::Points { points } => points.clone(),
        StartSpec::Grid {
            count,
            seed,
            inflation,
            demos,
        } => {
            let bbox = if demos.is_empty() {
                let norm = model.normalization();
                BoundingBox::new(
                    norm.center.iter().map(|c| c - norm.scale).collect(),
                    norm.center.iter().map(|c| c + norm.scale).collect(),
                )?
            } else {
                let demos = load_demos(demos)?;
                BoundingBox::from_points(demos.iter().flat_map(|d| d.positions.iter()))
                    .ok_or_else(|| CliError::Input("demonstrations are empty".into()))?
            };
            bench::uniform_starts(&bbox.scaled(1.0 + inflation), *count, *seed)
        }
    };
    if let Some(p) = points.iter().find(|p| p.len() != model.dim()) {
        return Err(CliError::Config(format!(
            "start {p:?} has dimension {}, the model has {}",
            p.len(),
            model.dim()
        )));
    }
    Ok(points)
}

fn summarize(file: String, start: &[f64], traj: &SimTrajectory, alpha: Option<f64>) -> RunSummary {
    RunSummary {
        file,
        start: start.to_vec(),
        final_state: traj.final_state().iter().copied().collect(),
        final_time: traj.final_time(),
        steps: traj.len() - 1,
        termination: traj.termination.clone(),
        alpha,
    }
}

/// Integrates the model from every start and writes one CSV per run plus
/// `summary.json`. With obstacles each run is modulated.
pub fn run_simulate(cfg: &SimulateConfig) -> Result<SimulateSummary, CliError> {
    cfg.validate()?;
    config::log_resolved("simulate", cfg);
    let model = load_model(&cfg.model)?;
    let horizon = match cfg.horizon {
        Some(h) => h,
        None => {
            let longest = model
                .provenance()
                .horizons
                .iter()
                .copied()
                .fold(0.0, f64::max);
            if longest <= 0.0 {
                return Err(CliError::Config(
                    "the model records no demonstration horizon; pass an explicit horizon".into(),
                ));
            }
            cfg.horizon_multiple * longest
        }
    };
    let mut opts = IntegrationOptions::for_horizon(horizon);
    if let Some(dt) = cfg.dt {
        opts = opts.with_dt(dt);
    }
    if let Some(s) = cfg.stop_threshold {
        opts = opts.with_stop_threshold(s);
    }
    opts.validate()?;
    let obstacles = match &cfg.obstacles {
        Some(o) => {
            let frames = io::read_obstacle_file(&o.file)?;
            Some(ObstacleField::new(
                frames,
                o.decay,
                o.alpha.unwrap_or(0.0),
                o.exclusion_radius,
            )?)
        }
        None => None,
    };
    let starts = start_points(cfg, &model)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| write_failed(&cfg.out_dir, e))?;

    let base: Arc<dyn Field> = Arc::new(model);
    let mut runs = Vec::with_capacity(starts.len());
    for (k, start) in starts.iter().enumerate() {
        let nominal = integrate_field(base.as_ref(), start, &opts)?;
        let (traj, alpha) = match &obstacles {
            None => (nominal, None),
            Some(field) => {
                let alpha = match cfg.obstacles.as_ref().and_then(|o| o.alpha) {
                    Some(a) => a,
                    None => default_alpha(base.as_ref(), field, &nominal).unwrap_or_else(|| {
                        log::warn!("run {k}: obstacles exert no force along the path; alpha = 0");
                        0.0
                    }),
                };
                let field = Arc::new(field.clone().with_strength(alpha)?);
                let m = modulate(base.clone(), field);
                (integrate_field(&m, start, &opts)?, Some(alpha))
            }
        };
        let name = format!("trajectory_{k:03}.csv");
        let path = cfg.out_dir.join(&name);
        let file = std::fs::File::create(&path).map_err(|e| write_failed(&path, e))?;
        io::write_trajectory(std::io::BufWriter::new(file), &traj)?;
        runs.push(summarize(name, start, &traj, alpha));
    }
    let summary = SimulateSummary {
        config: cfg.clone(),
        horizon,
        dt: opts.dt,
        runs,
    };
    config::write_json(&cfg.out_dir.join("summary.json"), &summary)?;
    log::info!(
        "simulate wrote {} runs to {}",
        summary.runs.len(),
        cfg.out_dir.display()
    );
    Ok(summary)
}

/// Runs the benchmark metrics, writes the JSON report when requested and
/// returns it.
pub fn run_eval(cfg: &EvalConfig) -> Result<BenchmarkReport, CliError> {
    cfg.validate()?;
    config::log_resolved("eval", cfg);
    let model = load_model(&cfg.model)?;
    let train = load_demos(&cfg.train)?;
    let test = load_demos(&cfg.test)?;
    if let Some(d) = train.iter().chain(&test).find(|d| d.dim() != model.dim()) {
        return Err(CliError::Input(format!(
            "demonstration {} has dimension {}, the model has {}",
            d.id,
            d.dim(),
            model.dim()
        )));
    }
    let training_time = cfg.training_time.or_else(|| {
        let audit = config::sibling(&cfg.model, "audit.json");
        config::load_json::<FitAudit>(&audit)
            .ok()
            .map(|a| a.total_secs)
    });
    let report = bench::evaluate(&model, &train, &test, &cfg.bench, training_time)?;
    if let Some(out) = &cfg.out {
        config::write_json(out, &report)?;
    }
    Ok(report)
}
