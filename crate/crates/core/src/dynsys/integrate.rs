use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{BoundingBox, DynError, Dynamics};

/// Default step count per horizon, so `dt = horizon / 5000`.
pub const DEFAULT_STEPS_PER_HORIZON: f64 = 5000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitReason {
    /// The state or the field value stopped being finite.
    NonFinite,
    /// The state left the configured domain.
    OutsideDomain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Termination {
    Horizon,
    StopThreshold,
    DomainExit {
        reason: ExitReason,
        /// Time of the offending step.
        t: f64,
        detail: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrationOptions {
    pub dt: f64,
    pub horizon: f64,
    /// Stop once `|f(t, x)|` drops below this value.
    pub stop_threshold: Option<f64>,
    pub domain: Option<BoundingBox>,
    pub t0: f64,
    pub record_velocities: bool,
}

impl IntegrationOptions {
    /// `dt = horizon / 5000`, no stop threshold, no domain.
    pub fn for_horizon(horizon: f64) -> Self {
        Self {
            dt: horizon / DEFAULT_STEPS_PER_HORIZON,
            horizon,
            stop_threshold: None,
            domain: None,
            t0: 0.0,
            record_velocities: true,
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_stop_threshold(mut self, threshold: f64) -> Self {
        self.stop_threshold = Some(threshold);
        self
    }

    pub fn with_domain(mut self, domain: BoundingBox) -> Self {
        self.domain = Some(domain);
        self
    }

    pub fn validate(&self) -> Result<(), DynError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(DynError::InvalidOptions(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.horizon >= self.dt && self.horizon.is_finite()) {
            return Err(DynError::InvalidOptions(format!(
                "horizon {} must be finite and at least dt = {}",
                self.horizon, self.dt
            )));
        }
        if let Some(s) = self.stop_threshold {
            if !(s > 0.0) {
                return Err(DynError::InvalidOptions(format!(
                    "stop threshold must be positive, got {s}"
                )));
            }
        }
        if !self.t0.is_finite() {
            return Err(DynError::InvalidOptions("t0 must be finite".into()));
        }
        Ok(())
    }

    /// Number of uniform steps covering the horizon; the last step may end
    /// slightly past it.
    pub fn steps(&self) -> usize {
        ((self.horizon / self.dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize
    }
}

/// A fixed-step solution `x(t_k)`, `t_k = t0 + k dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// `f(t_k, x_k)` for each state when recorded.
    pub velocities: Option<Vec<DVector<f64>>>,
    pub termination: Termination,
}

impl SimTrajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has an initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory has an initial state")
    }

    /// Linear interpolation on the step grid, clamped to the end points.
    pub fn interpolate(&self, t: f64) -> DVector<f64> {
        let t0 = self.times[0];
        if t <= t0 || self.len() == 1 {
            return self.states[0].clone();
        }
        let pos = (t - t0) / self.dt;
        let k = pos.floor() as usize;
        if k + 1 >= self.len() {
            return self.final_state().clone();
        }
        let w = pos - k as f64;
        &self.states[k] * (1.0 - w) + &self.states[k + 1] * w
    }

    /// First time the state enters the closed ball of `radius` around `goal`.
    pub fn time_to_reach(&self, goal: &[f64], radius: f64) -> Option<f64> {
        let goal = DVector::from_column_slice(goal);
        self.times
            .iter()
            .zip(&self.states)
            .find(|(_, x)| (*x - &goal).norm() <= radius)
            .map(|(t, _)| *t)
    }
}

/// One classical Runge-Kutta step from `x`, given `k1 = f(t, x)`.
pub fn rk4_step(
    f: &dyn Dynamics,
    t: f64,
    x: &DVector<f64>,
    k1: &DVector<f64>,
    dt: f64,
) -> DVector<f64> {
    let half = 0.5 * dt;
    let k2 = f.velocity(t + half, (x + k1 * half).as_slice());
    let k3 = f.velocity(t + half, (x + &k2 * half).as_slice());
    let k4 = f.velocity(t + dt, (x + &k3 * dt).as_slice());
    x + (k1 + &k2 * 2.0 + &k3 * 2.0 + k4) * (dt / 6.0)
}

pub(crate) fn is_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Integrates a list of fields in sequence: field `k` runs until
/// `|f_k| < switch`, then `k + 1` takes over. The last field stops on the
/// same threshold. Returns the trajectory and the switch times.
pub(crate) fn integrate_segments(
    fields: &[&dyn Dynamics],
    x0: &[f64],
    opts: &IntegrationOptions,
) -> Result<(SimTrajectory, Vec<f64>), DynError> {
    opts.validate()?;
    let n = fields.first().ok_or(DynError::NoFields)?.dim();
    for f in fields {
        if f.dim() != n {
            return Err(DynError::DimensionMismatch {
                expected: n,
                got: f.dim(),
            });
        }
    }
    if x0.len() != n {
        return Err(DynError::DimensionMismatch {
            expected: n,
            got: x0.len(),
        });
    }
    let steps = opts.steps();
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut velocities = opts
        .record_velocities
        .then(|| Vec::with_capacity(steps + 1));
    let mut switches = Vec::new();
    let mut active = 0;
    let mut x = DVector::from_column_slice(x0);
    times.push(opts.t0);
    states.push(x.clone());
    let non_finite = |t: f64, what: &str| Termination::DomainExit {
        reason: ExitReason::NonFinite,
        t,
        detail: what.to_string(),
    };
    if !is_finite(&x) {
        let termination = non_finite(opts.t0, "initial state is not finite");
        return Ok((
            SimTrajectory {
                dt: opts.dt,
                times,
                states,
                velocities: velocities.map(|mut v| {
                    v.push(DVector::from_element(n, f64::NAN));
                    v
                }),
                termination,
            },
            switches,
        ));
    }

    let mut termination = Termination::Horizon;
    let mut k1 = fields[0].velocity(opts.t0, x.as_slice());
    for step in 0..steps {
        let t = opts.t0 + step as f64 * opts.dt;
        if let Some(threshold) = opts.stop_threshold {
            while k1.norm() < threshold && active + 1 < fields.len() {
                active += 1;
                switches.push(t);
                k1 = fields[active].velocity(t, x.as_slice());
            }
        }
        if let Some(v) = velocities.as_mut() {
            v.push(k1.clone());
        }
        if !is_finite(&k1) {
            termination = non_finite(t, "field value is not finite");
            break;
        }
        if opts.stop_threshold.is_some_and(|s| k1.norm() < s) {
            termination = Termination::StopThreshold;
            break;
        }
        let next = rk4_step(fields[active], t, &x, &k1, opts.dt);
        let t_next = opts.t0 + (step + 1) as f64 * opts.dt;
        if !is_finite(&next) {
            termination = non_finite(t_next, "state is not finite");
            break;
        }
        x = next;
        times.push(t_next);
        states.push(x.clone());
        k1 = fields[active].velocity(t_next, x.as_slice());
        if let Some(domain) = &opts.domain {
            if !domain.contains(x.as_slice()) {
                if let Some(v) = velocities.as_mut() {
                    v.push(k1.clone());
                }
                termination = Termination::DomainExit {
                    reason: ExitReason::OutsideDomain,
                    t: t_next,
                    detail: format!("state {:?} is outside the domain", x.as_slice()),
                };
                break;
            }
        }
        if step + 1 == steps {
            if let Some(v) = velocities.as_mut() {
                v.push(k1.clone());
            }
        }
    }
    Ok((
        SimTrajectory {
            dt: opts.dt,
            times,
            states,
            velocities,
            termination,
        },
        switches,
    ))
}

/// Fixed-step RK4 integration of `x' = f(t, x)` from `x0`.
///
/// Stops at the horizon, when `|f|` falls below the stop threshold, or with
/// [`Termination::DomainExit`] when the state leaves the domain or stops
/// being finite. The non-finite state itself is not recorded.
pub fn integrate_field(
    field: &dyn Dynamics,
    x0: &[f64],
    opts: &IntegrationOptions,
) -> Result<SimTrajectory, DynError> {
    integrate_segments(&[field], x0, opts).map(|(traj, _)| traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::ClosureField;

    fn decay() -> ClosureField<impl Fn(f64, &[f64]) -> DVector<f64> + Send + Sync> {
        ClosureField::new(2, |_, x: &[f64]| -DVector::from_column_slice(x))
    }

    #[test]
    fn linear_decay_matches_closed_form() {
        let opts = IntegrationOptions::for_horizon(10.0).with_dt(1e-3);
        let traj = integrate_field(&decay(), &[1.0, 0.0], &opts).unwrap();
        assert_eq!(traj.termination, Termination::Horizon);
        assert!(traj.final_state().norm() < 1e-3);
        let worst = traj
            .times
            .iter()
            .zip(&traj.states)
            .map(|(t, x)| (x[0] - (-t).exp()).abs().max(x[1].abs()))
            .fold(0.0, f64::max);
        assert!(worst <= 1e-6, "{worst}");
        assert_eq!(traj.velocities.as_ref().unwrap().len(), traj.len());
    }

    #[test]
    fn halving_dt_gains_fourth_order() {
        let err = |dt: f64| {
            let opts = IntegrationOptions::for_horizon(2.0).with_dt(dt);
            let traj = integrate_field(&decay(), &[1.0, 0.0], &opts).unwrap();
            (traj.final_state()[0] - (-traj.final_time()).exp()).abs()
        };
        let (coarse, fine) = (err(0.1), err(0.05));
        assert!(coarse / fine >= 8.0, "{coarse} / {fine}");
    }

    #[test]
    fn zero_field_stops_immediately() {
        let zero = ClosureField::new(2, |_, _: &[f64]| DVector::zeros(2));
        let opts = IntegrationOptions::for_horizon(1.0).with_stop_threshold(0.01);
        let traj = integrate_field(&zero, &[0.5, 0.5], &opts).unwrap();
        assert_eq!(traj.termination, Termination::StopThreshold);
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.states[0].as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn rotation_conserves_radius() {
        let rot = ClosureField::new(2, |_, x: &[f64]| DVector::from_vec(vec![-x[1], x[0]]));
        let opts = IntegrationOptions::for_horizon(2.0 * std::f64::consts::PI).with_dt(1e-3);
        let traj = integrate_field(&rot, &[1.0, 1.0], &opts).unwrap();
        let r0 = 2f64.sqrt();
        let drift = traj
            .states
            .iter()
            .map(|x| (x.norm() - r0).abs())
            .fold(0.0, f64::max);
        assert!(drift <= 1e-5, "{drift}");
    }

    #[test]
    fn blow_up_is_flagged() {
        let cubic = ClosureField::new(1, |_, x: &[f64]| {
            DVector::from_element(1, x[0] * x[0] * x[0])
        });
        let opts = IntegrationOptions::for_horizon(10.0).with_dt(0.01);
        let traj = integrate_field(&cubic, &[10.0], &opts).unwrap();
        match &traj.termination {
            Termination::DomainExit {
                reason: ExitReason::NonFinite,
                ..
            } => {}
            other => panic!("{other:?}"),
        }
        assert!(traj.states.iter().all(is_finite));
    }

    #[test]
    fn leaving_the_domain_is_flagged() {
        let grow = ClosureField::new(1, |_, x: &[f64]| DVector::from_element(1, x[0]));
        let opts = IntegrationOptions::for_horizon(10.0)
            .with_dt(0.01)
            .with_domain(BoundingBox::new(vec![-2.0], vec![2.0]).unwrap());
        let traj = integrate_field(&grow, &[1.0], &opts).unwrap();
        assert!(matches!(
            traj.termination,
            Termination::DomainExit {
                reason: ExitReason::OutsideDomain,
                ..
            }
        ));
        assert!(traj.final_state()[0] > 2.0 && traj.final_time() < 0.75);
    }

    #[test]
    fn rejects_bad_options() {
        let opts = IntegrationOptions::for_horizon(1.0).with_dt(0.0);
        assert!(integrate_field(&decay(), &[1.0, 0.0], &opts).is_err());
        let opts = IntegrationOptions::for_horizon(0.001).with_dt(0.01);
        assert!(integrate_field(&decay(), &[1.0, 0.0], &opts).is_err());
        let opts = IntegrationOptions::for_horizon(1.0);
        assert!(integrate_field(&decay(), &[1.0], &opts).is_err());
    }

    #[test]
    fn interpolation_hits_grid_points() {
        let opts = IntegrationOptions::for_horizon(1.0).with_dt(0.1);
        let traj = integrate_field(&decay(), &[1.0, 2.0], &opts).unwrap();
        assert_eq!(traj.interpolate(0.3), traj.states[3]);
        let mid = traj.interpolate(0.35);
        assert!((&mid - (&traj.states[3] + &traj.states[4]) * 0.5).norm() < 1e-12);
        assert_eq!(traj.interpolate(5.0), *traj.final_state());
    }
}
