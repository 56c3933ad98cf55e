//! Resolved job configurations. Each command builds one from its flags (or
//! a JSON file written by an earlier run), validates it before any compute,
//! and logs it.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use cvf_core::bench::BenchConfig;
use cvf_core::dynsys::{DEFAULT_DECAY, DEFAULT_EXCLUSION_RADIUS};
use cvf_core::learner::{ContractionSpec, FitOptions, MetricField};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricSpec {
    Identity,
    /// A constant symmetric positive definite matrix.
    Constant {
        matrix: Vec<Vec<f64>>,
        margin: f64,
    },
    Polynomial {
        field: MetricField,
    },
}

impl MetricSpec {
    /// `identity`, or a path to a JSON file holding a `MetricSpec`.
    pub fn parse_flag(value: &str) -> Result<Self, CliError> {
        if value == "identity" {
            return Ok(MetricSpec::Identity);
        }
        load_json(Path::new(value))
    }

    pub fn resolve(&self, n: usize) -> Result<MetricField, CliError> {
        let metric = match self {
            MetricSpec::Identity => MetricField::identity(n),
            MetricSpec::Constant { matrix, margin } => {
                if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
                    return Err(CliError::Config(format!("metric matrix must be {n}x{n}")));
                }
                let m = DMatrix::from_fn(n, n, |i, j| matrix[i][j]);
                MetricField::constant(&m, *margin)?
            }
            MetricSpec::Polynomial { field } => field.clone(),
        };
        if metric.dim() != n {
            return Err(CliError::Config(format!(
                "metric dimension {} does not match the demonstrations ({n})",
                metric.dim()
            )));
        }
        Ok(metric)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub demos: Vec<PathBuf>,
    pub out: PathBuf,
    pub tau: f64,
    pub metric: MetricSpec,
    /// Drop the contraction constraints (least-squares baseline).
    pub unconstrained: bool,
    pub options: FitOptions,
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.demos.is_empty() {
            return Err(CliError::Config(
                "at least one demonstration file is required".into(),
            ));
        }
        if !self.unconstrained {
            ContractionSpec::identity(1, self.tau)?;
        }
        self.options.validate()?;
        Ok(())
    }

    pub fn audit_path(&self) -> PathBuf {
        sibling(&self.out, "audit.json")
    }

    pub fn config_path(&self) -> PathBuf {
        sibling(&self.out, "config.json")
    }
}

/// `model.json` -> `model.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StartSpec {
    /// Seeded uniform starts in a box: the bounding box of `demos` when
    /// given, else the model's normalization box, grown by `inflation`.
    Grid {
        count: usize,
        seed: u64,
        inflation: f64,
        demos: Vec<PathBuf>,
    },
    Points {
        points: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleConfig {
    /// Newline-delimited JSON obstacle frames.
    pub file: PathBuf,
    /// `None` picks the default strength along each unmodulated run.
    pub alpha: Option<f64>,
    pub decay: u32,
    pub exclusion_radius: f64,
}

impl ObstacleConfig {
    pub fn new(file: PathBuf) -> Self {
        Self {
            file,
            alpha: None,
            decay: DEFAULT_DECAY,
            exclusion_radius: DEFAULT_EXCLUSION_RADIUS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub model: PathBuf,
    pub out_dir: PathBuf,
    pub starts: StartSpec,
    /// Absolute horizon; overrides `horizon_multiple`.
    pub horizon: Option<f64>,
    /// Horizon as a multiple of the longest demonstration the model saw.
    pub horizon_multiple: f64,
    /// `None` gives `horizon / 5000`.
    pub dt: Option<f64>,
    pub stop_threshold: Option<f64>,
    pub obstacles: Option<ObstacleConfig>,
}

impl SimulateConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        match &self.starts {
            StartSpec::Grid {
                count, inflation, ..
            } => {
                if *count == 0 {
                    return Err(CliError::Config("grid start count must be positive".into()));
                }
                if !(*inflation > -1.0 && inflation.is_finite()) {
                    return Err(CliError::Config(
                        "grid inflation must be finite and above -1".into(),
                    ));
                }
            }
            StartSpec::Points { points } => {
                if points.is_empty() {
                    return Err(CliError::Config("no start points given".into()));
                }
                if points.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(CliError::Config("start points must be finite".into()));
                }
            }
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(CliError::Config(format!(
                    "horizon must be positive, got {h}"
                )));
            }
        }
        if !(self.horizon_multiple > 0.0 && self.horizon_multiple.is_finite()) {
            return Err(CliError::Config("horizon multiple must be positive".into()));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(CliError::Config(format!("dt must be positive, got {dt}")));
            }
        }
        if let Some(o) = &self.obstacles {
            if o.alpha.is_some_and(|a| !(a >= 0.0 && a.is_finite())) {
                return Err(CliError::Config(
                    "alpha must be finite and nonnegative".into(),
                ));
            }
            if o.decay < 1 || !(o.exclusion_radius > 0.0) {
                return Err(CliError::Config(
                    "decay must be >= 1 and exclusion radius positive".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub model: PathBuf,
    pub train: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
    pub bench: BenchConfig,
    /// Seconds; `None` reads the fit audit next to the model if present.
    pub training_time: Option<f64>,
    pub out: Option<PathBuf>,
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.train.is_empty() {
            return Err(CliError::Config(
                "at least one training demonstration is required".into(),
            ));
        }
        self.bench.validate()?;
        Ok(())
    }
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| crate::error::write_failed(path, e))
}

/// Logs the resolved configuration as one JSON line.
pub fn log_resolved<T: Serialize>(command: &str, config: &T) {
    match serde_json::to_string(config) {
        Ok(json) => log::info!("{command} resolved config: {json}"),
        Err(e) => log::warn!("{command}: could not serialize config: {e}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sibling_paths() {
        assert_eq!(
            sibling(Path::new("out/model.json"), "audit.json"),
            PathBuf::from("out/model.audit.json")
        );
        assert_eq!(
            sibling(Path::new("m"), "config.json"),
            PathBuf::from("m.config.json")
        );
    }

    #[test]
    fn negative_tau_is_rejected() {
        let cfg = FitConfig {
            demos: vec!["a.csv".into()],
            out: "m.json".into(),
            tau: -1.0,
            metric: MetricSpec::Identity,
            unconstrained: false,
            options: FitOptions::default(),
        };
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn constant_metric_resolves() {
        let spec = MetricSpec::Constant {
            matrix: vec![vec![2.0, 0.0], vec![0.0, 1.0]],
            margin: 1e-3,
        };
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<MetricSpec>(&json).unwrap(), spec);
        assert_eq!(spec.resolve(2).unwrap().eval(&[0.0, 0.0])[(0, 0)], 2.0);
        assert!(spec.resolve(3).is_err());
    }
}
