use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{
    field_from_coefficients, residual_matrix, ConstraintMode, ContractionSpec, FitOptions,
    LearnError, PreparedDemos,
};
use crate::conic::{ConeSolution, SolveStatus};
use crate::polyalg::{eval_matrix, PolyMap, PolyTrajectory, Polynomial};
use crate::soscomp::{CertificateStatus, GramDecomposition};

pub const MODEL_SCHEMA_VERSION: u32 = 1;
pub const MONOMIAL_ORDER: &str = "graded-lex";

/// Affine change of variables `y = (x - center) / scale`, `s = t / time_scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: Vec<f64>,
    pub scale: f64,
    pub time_scale: f64,
}

impl Normalization {
    pub fn identity(n: usize) -> Self {
        Self {
            center: vec![0.0; n],
            scale: 1.0,
            time_scale: 1.0,
        }
    }

    pub fn to_normalized(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.center)
            .map(|(v, c)| (v - c) / self.scale)
            .collect()
    }

    pub fn to_physical(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(&self.center)
            .map(|(v, c)| c + v * self.scale)
            .collect()
    }
}

/// Per-demonstration certificate summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateAudit {
    pub demo: String,
    /// `None` when the constraint was not an exact SOS block.
    pub status: Option<CertificateStatus>,
    pub gram_min_eigenvalue: Option<f64>,
    /// Largest eigenvalue of `sym[M Jf] + Mdot + tau M` over equispaced
    /// samples of the demonstration fit, in physical units.
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// `None` for closed-form fits.
    pub status: Option<SolveStatus>,
    pub constraint: Option<ConstraintMode>,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    /// Wall-clock times are kept out of model files so reruns compare equal.
    #[serde(skip)]
    pub assembly_secs: f64,
    #[serde(skip)]
    pub solve_secs: f64,
    pub certificates: Vec<CertificateAudit>,
    pub options: Option<FitOptions>,
}

impl FitDiagnostics {
    pub(crate) fn from_solution(
        sol: &ConeSolution,
        assembly_secs: f64,
        certificates: Vec<CertificateAudit>,
        options: &FitOptions,
    ) -> Self {
        Self {
            status: Some(sol.status),
            constraint: Some(options.constraint),
            iterations: sol.iterations,
            primal_residual: sol.primal_residual,
            dual_residual: sol.dual_residual,
            gap: sol.gap,
            assembly_secs,
            solve_secs: sol.solve_time_secs,
            certificates,
            options: Some(options.clone()),
        }
    }

    pub(crate) fn closed_form(secs: f64) -> Self {
        Self {
            status: None,
            constraint: None,
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            gap: 0.0,
            assembly_secs: secs,
            solve_secs: 0.0,
            certificates: Vec::new(),
            options: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub demo_ids: Vec<String>,
    pub trajectory_degrees: Vec<usize>,
    pub trajectory_residuals: Vec<f64>,
    pub horizons: Vec<f64>,
}

impl Provenance {
    pub(crate) fn from_prepared(p: &PreparedDemos) -> Self {
        Self {
            demo_ids: p.ids.clone(),
            trajectory_degrees: p.physical.iter().map(|t| t.degree()).collect(),
            trajectory_residuals: p.physical.iter().map(|t| t.residual_rms()).collect(),
            horizons: p.physical.iter().map(|t| t.horizon()).collect(),
        }
    }
}

/// A learned polynomial field `f(x) = (scale / time_scale) g((x - center) / scale)`
/// with `g` stored by its normalized coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct VectorFieldModel {
    repr: ModelRepr,
    field: PolyMap,
    jacobian: Vec<Vec<Polynomial>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelRepr {
    schema_version: u32,
    dimension: usize,
    degree: usize,
    monomial_order: String,
    /// Row `k` holds component `k` of the normalized field.
    coefficients: Vec<Vec<f64>>,
    normalization: Normalization,
    spec: Option<ContractionSpec>,
    /// `sum_i int |f(x_i(t)) - x_i'(t)|^2 dt` in physical units.
    loss: f64,
    diagnostics: FitDiagnostics,
    provenance: Provenance,
    /// Gram certificates in normalized coordinates, one per demonstration.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    certificates: Vec<GramDecomposition>,
}

impl From<VectorFieldModel> for ModelRepr {
    fn from(m: VectorFieldModel) -> Self {
        m.repr
    }
}

impl TryFrom<ModelRepr> for VectorFieldModel {
    type Error = LearnError;

    fn try_from(repr: ModelRepr) -> Result<Self, LearnError> {
        if repr.schema_version != MODEL_SCHEMA_VERSION {
            return Err(LearnError::Schema(format!(
                "model schema version {} is not supported (expected {MODEL_SCHEMA_VERSION})",
                repr.schema_version
            )));
        }
        if repr.monomial_order != MONOMIAL_ORDER {
            return Err(LearnError::Schema(format!(
                "unknown monomial order {:?}",
                repr.monomial_order
            )));
        }
        let n = repr.dimension;
        if repr.coefficients.len() != n || repr.normalization.center.len() != n {
            return Err(LearnError::Schema(format!(
                "coefficient rows do not match dimension {n}"
            )));
        }
        if !(repr.normalization.scale > 0.0 && repr.normalization.time_scale > 0.0) {
            return Err(LearnError::Schema(
                "normalization scales must be positive".into(),
            ));
        }
        let flat: Vec<f64> = repr.coefficients.iter().flatten().copied().collect();
        let field = field_from_coefficients(n, repr.degree, &flat)
            .map_err(|e| LearnError::Schema(e.to_string()))?;
        let jacobian = field.jacobian();
        Ok(Self {
            repr,
            field,
            jacobian,
        })
    }
}

impl VectorFieldModel {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_normalized(
        n: usize,
        degree: usize,
        coeffs: &[f64],
        normalization: Normalization,
        spec: Option<ContractionSpec>,
        loss_normalized: f64,
        diagnostics: FitDiagnostics,
        provenance: Provenance,
        certificates: Vec<GramDecomposition>,
    ) -> Result<Self, LearnError> {
        let len = coeffs.len() / n;
        let loss =
            loss_normalized * normalization.scale * normalization.scale / normalization.time_scale;
        Self::try_from(ModelRepr {
            schema_version: MODEL_SCHEMA_VERSION,
            dimension: n,
            degree,
            monomial_order: MONOMIAL_ORDER.to_string(),
            coefficients: coeffs.chunks(len).map(|c| c.to_vec()).collect(),
            normalization,
            spec,
            loss,
            diagnostics,
            provenance,
            certificates,
        })
    }

    /// A model for a field given directly in physical coordinates.
    pub fn from_field(field: &PolyMap, spec: Option<ContractionSpec>) -> Result<Self, LearnError> {
        let n = field.dim();
        Self::from_normalized(
            n,
            field.degree(),
            &field.coefficients(),
            Normalization::identity(n),
            spec,
            0.0,
            FitDiagnostics::closed_form(0.0),
            Provenance {
                demo_ids: Vec::new(),
                trajectory_degrees: Vec::new(),
                trajectory_residuals: Vec::new(),
                horizons: Vec::new(),
            },
            Vec::new(),
        )
    }

    pub fn dim(&self) -> usize {
        self.repr.dimension
    }

    pub fn degree(&self) -> usize {
        self.repr.degree
    }

    pub fn loss(&self) -> f64 {
        self.repr.loss
    }

    pub fn spec(&self) -> Option<&ContractionSpec> {
        self.repr.spec.as_ref()
    }

    pub fn normalization(&self) -> &Normalization {
        &self.repr.normalization
    }

    pub fn diagnostics(&self) -> &FitDiagnostics {
        &self.repr.diagnostics
    }

    pub fn provenance(&self) -> &Provenance {
        &self.repr.provenance
    }

    pub fn certificates(&self) -> &[GramDecomposition] {
        &self.repr.certificates
    }

    /// The field in normalized coordinates.
    pub fn normalized_field(&self) -> &PolyMap {
        &self.field
    }

    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        let norm = &self.repr.normalization;
        let y = norm.to_normalized(x);
        let g = self.field.eval(&y).expect("dimension checked by caller");
        g * (norm.scale / norm.time_scale)
    }

    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let norm = &self.repr.normalization;
        let y = norm.to_normalized(x);
        eval_matrix(&self.jacobian, &y) / norm.time_scale
    }

    /// The field expanded in physical coordinates.
    pub fn physical_field(&self) -> Result<PolyMap, LearnError> {
        let norm = &self.repr.normalization;
        let center: Vec<f64> = norm.center.iter().map(|c| -c / norm.scale).collect();
        Ok(self
            .field
            .substitute_affine(&center, 1.0 / norm.scale)?
            .scale(norm.scale / norm.time_scale))
    }

    /// Largest eigenvalue of `sym[M Jf] + Mdot + tau M` at `x` under the
    /// model's own contraction spec; `None` for unconstrained models.
    pub fn contraction_residual(&self, x: &[f64]) -> Option<f64> {
        let spec = self.spec()?;
        let r = residual_matrix(
            &spec.metric,
            x,
            self.eval(x).as_slice(),
            &self.jacobian(x),
            spec.tau,
        );
        Some(SymmetricEigen::new(r).eigenvalues.max())
    }

    /// Fills `max_residual` of each certificate audit from `samples`
    /// equispaced points along the physical demonstration fits.
    pub(crate) fn with_sampled_residuals(
        mut self,
        trajs: &[PolyTrajectory],
        samples: usize,
    ) -> Self {
        let samples = samples.max(2);
        let values: Vec<f64> = trajs
            .iter()
            .map(|traj| {
                (0..samples)
                    .map(|i| {
                        let t = traj.horizon() * i as f64 / (samples - 1) as f64;
                        self.contraction_residual(traj.eval(t).as_slice())
                            .unwrap_or(f64::NEG_INFINITY)
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        for (audit, v) in self.repr.diagnostics.certificates.iter_mut().zip(values) {
            audit.max_residual = v;
        }
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, LearnError> {
        serde_json::from_str(text).map_err(|e| LearnError::Schema(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_model() -> VectorFieldModel {
        let field = PolyMap::from_coefficients(
            crate::polyalg::MonomialBasis::new(2, 2),
            &[
                0.1,
                -1.0,
                0.3,
                0.1 + 0.2,
                0.0,
                -0.7,
                0.0,
                0.5,
                -2.0,
                1e-17,
                1.0 / 3.0,
                0.0,
            ],
        )
        .unwrap();
        VectorFieldModel::from_normalized(
            2,
            2,
            &field.coefficients(),
            Normalization {
                center: vec![0.25, -1.5],
                scale: 3.7,
                time_scale: 2.2,
            },
            Some(ContractionSpec::identity(2, 1.0).unwrap()),
            0.123,
            FitDiagnostics::closed_form(0.1),
            Provenance {
                demo_ids: vec!["a".into()],
                trajectory_degrees: vec![7],
                trajectory_residuals: vec![1e-4],
                horizons: vec![2.2],
            },
            Vec::new(),
        )
        .unwrap()
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let m = sample_model();
        let text = m.to_json();
        let back = VectorFieldModel::from_json(&text).unwrap();
        assert_eq!(back.to_json(), text);
        assert_eq!(back.diagnostics().assembly_secs, 0.0);
        let mut timed = back.clone();
        timed.repr.diagnostics.assembly_secs = 0.1;
        assert_eq!(timed, m);
    }

    #[test]
    fn schema_version_mismatch_is_rejected() {
        let text = sample_model()
            .to_json()
            .replace("\"schema_version\": 1", "\"schema_version\": 99");
        assert!(matches!(
            VectorFieldModel::from_json(&text),
            Err(LearnError::Schema(_))
        ));
    }

    #[test]
    fn physical_field_agrees_with_composed_evaluation() {
        let m = sample_model();
        let phys = m.physical_field().unwrap();
        for x in [[0.0, 0.0], [1.3, -2.0], [-4.0, 0.5]] {
            let a = m.eval(&x);
            let b = phys.eval(&x).unwrap();
            assert!((a - b).amax() < 1e-12);
            let ja = m.jacobian(&x);
            let jb = eval_matrix(&phys.jacobian(), &x);
            assert!((ja - jb).amax() < 1e-12);
        }
    }
}
