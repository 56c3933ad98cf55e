use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::integrate::integrate_segments;
use super::{DynError, Dynamics, IntegrationOptions, SimTrajectory, Termination};

/// Fields executed one after another, switching when the active field's
/// speed drops below `switch_threshold`.
#[derive(Clone)]
pub struct SequentialPlan {
    fields: Vec<Arc<dyn Dynamics>>,
    switch_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialRun {
    pub trajectory: SimTrajectory,
    pub switch_times: Vec<f64>,
    /// The last field reached its stop threshold within the horizon.
    pub completed: bool,
}

pub fn compose_sequential(
    fields: Vec<Arc<dyn Dynamics>>,
    switch_threshold: f64,
) -> Result<SequentialPlan, DynError> {
    let n = fields.first().ok_or(DynError::NoFields)?.dim();
    if let Some(f) = fields.iter().find(|f| f.dim() != n) {
        return Err(DynError::DimensionMismatch {
            expected: n,
            got: f.dim(),
        });
    }
    if !(switch_threshold > 0.0) {
        return Err(DynError::InvalidOptions(format!(
            "switch threshold must be positive, got {switch_threshold}"
        )));
    }
    Ok(SequentialPlan {
        fields,
        switch_threshold,
    })
}

impl SequentialPlan {
    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn switch_threshold(&self) -> f64 {
        self.switch_threshold
    }

    /// Integrates from `x0`; `opts.stop_threshold` is replaced by the
    /// plan's switch threshold.
    pub fn run(&self, x0: &[f64], opts: &IntegrationOptions) -> Result<SequentialRun, DynError> {
        let opts = IntegrationOptions {
            stop_threshold: Some(self.switch_threshold),
            ..opts.clone()
        };
        let refs: Vec<&dyn Dynamics> = self.fields.iter().map(|f| f.as_ref()).collect();
        let (trajectory, switch_times) = integrate_segments(&refs, x0, &opts)?;
        let completed = trajectory.termination == Termination::StopThreshold;
        Ok(SequentialRun {
            trajectory,
            switch_times,
            completed,
        })
    }
}

#[cfg(test)]
mod tests {
    use nalgebra::DVector;

    use super::*;
    use crate::dynsys::{integrate_field, ClosureField};

    fn attractor(goal: [f64; 2]) -> Arc<dyn Dynamics> {
        Arc::new(ClosureField::new(2, move |_, x: &[f64]| {
            DVector::from_vec(vec![goal[0] - x[0], goal[1] - x[1]])
        }))
    }

    #[test]
    fn visits_each_attractor_in_order() {
        let (a, b) = ([1.0, 0.0], [1.0, 1.0]);
        let plan = compose_sequential(vec![attractor(a), attractor(b)], 1e-3).unwrap();
        let run = plan
            .run(
                &[0.0, 0.0],
                &IntegrationOptions::for_horizon(40.0).with_dt(0.01),
            )
            .unwrap();
        assert!(run.completed);
        assert_eq!(run.switch_times.len(), 1);
        let at_switch = run.trajectory.interpolate(run.switch_times[0]);
        assert!((at_switch - DVector::from_row_slice(&a)).norm() < 1e-3);
        assert!((run.trajectory.final_state() - DVector::from_row_slice(&b)).norm() < 1e-3);
    }

    #[test]
    fn single_field_matches_direct_integration() {
        let f = attractor([0.5, -0.5]);
        let plan = compose_sequential(vec![f.clone()], 0.01).unwrap();
        let opts = IntegrationOptions::for_horizon(20.0).with_dt(0.01);
        let run = plan.run(&[2.0, 1.0], &opts).unwrap();
        let direct = integrate_field(
            f.as_ref(),
            &[2.0, 1.0],
            &opts.clone().with_stop_threshold(0.01),
        )
        .unwrap();
        assert_eq!(run.trajectory, direct);
        assert!(run.switch_times.is_empty());
    }

    #[test]
    fn unfinished_final_field_is_flagged() {
        let spin: Arc<dyn Dynamics> = Arc::new(ClosureField::new(2, |_, x: &[f64]| {
            DVector::from_vec(vec![-x[1], x[0]])
        }));
        let plan = compose_sequential(vec![attractor([1.0, 0.0]), spin], 1e-3).unwrap();
        let run = plan
            .run(
                &[0.0, 0.0],
                &IntegrationOptions::for_horizon(30.0).with_dt(0.01),
            )
            .unwrap();
        assert!(!run.completed);
        assert_eq!(run.trajectory.termination, Termination::Horizon);
    }

    #[test]
    fn rejects_mixed_dimensions() {
        let one: Arc<dyn Dynamics> = Arc::new(ClosureField::new(1, |_, x: &[f64]| {
            DVector::from_column_slice(x)
        }));
        assert!(compose_sequential(vec![attractor([0.0, 0.0]), one], 0.01).is_err());
        assert!(compose_sequential(vec![], 0.01).is_err());
        assert!(compose_sequential(vec![attractor([0.0, 0.0])], 0.0).is_err());
    }
}
