use std::sync::{Arc, RwLock};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{DynError, Dynamics, Field, SimTrajectory};

/// Default decay exponent `r`.
pub const DEFAULT_DECAY: u32 = 4;
/// Default exclusion radius `rho`, meant for normalized coordinates.
pub const DEFAULT_EXCLUSION_RADIUS: f64 = 1e-3;

/// Obstacle points valid from time `t` until the next frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleFrame {
    pub t: f64,
    pub points: Vec<Vec<f64>>,
}

/// Time-stamped obstacle point sets and the repulsion parameters
/// `h(t, x) = sum_j (x - j) / |x - j|^r`, scaled by `alpha`.
///
/// Frames are held piecewise constant: the active frame at `t` is the last
/// one stamped at or before `t`, or the first frame for earlier times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleField {
    frames: Vec<ObstacleFrame>,
    decay: u32,
    strength: f64,
    exclusion_radius: f64,
}

impl ObstacleField {
    pub fn new(
        mut frames: Vec<ObstacleFrame>,
        decay: u32,
        strength: f64,
        exclusion_radius: f64,
    ) -> Result<Self, DynError> {
        if decay < 1 {
            return Err(DynError::InvalidObstacles(
                "decay exponent must be at least 1".into(),
            ));
        }
        if !(strength >= 0.0 && strength.is_finite()) {
            return Err(DynError::InvalidObstacles(format!(
                "strength must be finite and nonnegative, got {strength}"
            )));
        }
        if !(exclusion_radius > 0.0 && exclusion_radius.is_finite()) {
            return Err(DynError::InvalidObstacles(format!(
                "exclusion radius must be positive, got {exclusion_radius}"
            )));
        }
        for f in &frames {
            validate_frame(
                f,
                frames
                    .first()
                    .and_then(|f| f.points.first())
                    .map(|p| p.len()),
            )?;
        }
        frames.sort_by(|a, b| a.t.total_cmp(&b.t));
        Ok(Self {
            frames,
            decay,
            strength,
            exclusion_radius,
        })
    }

    /// Fixed obstacle points, active at every time.
    pub fn stationary(
        points: Vec<Vec<f64>>,
        decay: u32,
        strength: f64,
        exclusion_radius: f64,
    ) -> Result<Self, DynError> {
        Self::new(
            vec![ObstacleFrame { t: 0.0, points }],
            decay,
            strength,
            exclusion_radius,
        )
    }

    pub fn empty() -> Self {
        Self {
            frames: Vec::new(),
            decay: DEFAULT_DECAY,
            strength: 0.0,
            exclusion_radius: DEFAULT_EXCLUSION_RADIUS,
        }
    }

    pub fn frames(&self) -> &[ObstacleFrame] {
        &self.frames
    }

    pub fn decay(&self) -> u32 {
        self.decay
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    pub fn exclusion_radius(&self) -> f64 {
        self.exclusion_radius
    }

    pub fn with_strength(mut self, strength: f64) -> Result<Self, DynError> {
        if !(strength >= 0.0 && strength.is_finite()) {
            return Err(DynError::InvalidObstacles(format!(
                "strength must be finite and nonnegative, got {strength}"
            )));
        }
        self.strength = strength;
        Ok(self)
    }

    pub fn with_decay(mut self, decay: u32) -> Result<Self, DynError> {
        if decay < 1 {
            return Err(DynError::InvalidObstacles(
                "decay exponent must be at least 1".into(),
            ));
        }
        self.decay = decay;
        Ok(self)
    }

    /// Appends a frame stamped no earlier than the last one.
    pub fn push_frame(&mut self, frame: ObstacleFrame) -> Result<(), DynError> {
        validate_frame(&frame, self.point_dim())?;
        if let Some(last) = self.frames.last() {
            if frame.t < last.t {
                return Err(DynError::InvalidObstacles(format!(
                    "frame at t = {} precedes the last frame at t = {}",
                    frame.t, last.t
                )));
            }
        }
        self.frames.push(frame);
        Ok(())
    }

    fn point_dim(&self) -> Option<usize> {
        self.frames
            .iter()
            .flat_map(|f| f.points.first())
            .map(|p| p.len())
            .next()
    }

    pub fn active_points(&self, t: f64) -> &[Vec<f64>] {
        if self.frames.is_empty() {
            return &[];
        }
        let idx = self.frames.partition_point(|f| f.t <= t).saturating_sub(1);
        &self.frames[idx].points
    }

    /// `h(t, x)` without the strength factor. A point closer than the
    /// exclusion radius contributes the magnitude it would have on the
    /// exclusion sphere, in its own direction; a coincident point
    /// contributes nothing.
    pub fn repulsion(&self, t: f64, x: &[f64]) -> DVector<f64> {
        let mut h = DVector::zeros(x.len());
        let r = self.decay as i32;
        for j in self.active_points(t) {
            let d = DVector::from_iterator(x.len(), x.iter().zip(j).map(|(a, b)| a - b));
            let dist = d.norm();
            if dist == 0.0 {
                continue;
            }
            let magnitude = dist.max(self.exclusion_radius).powi(1 - r);
            h += d * (magnitude / dist);
        }
        h
    }
}

fn validate_frame(frame: &ObstacleFrame, dim: Option<usize>) -> Result<(), DynError> {
    if !frame.t.is_finite() {
        return Err(DynError::InvalidObstacles(
            "frame time must be finite".into(),
        ));
    }
    for p in &frame.points {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(DynError::InvalidObstacles(
                "obstacle points must be finite".into(),
            ));
        }
        if let Some(d) = dim {
            if p.len() != d {
                return Err(DynError::DimensionMismatch {
                    expected: d,
                    got: p.len(),
                });
            }
        }
    }
    Ok(())
}

/// `f(x) + alpha h(t, x)` for a fixed obstacle field.
#[derive(Clone)]
pub struct ModulatedField {
    base: Arc<dyn Field>,
    obstacles: Arc<ObstacleField>,
}

pub fn modulate(base: Arc<dyn Field>, obstacles: Arc<ObstacleField>) -> ModulatedField {
    ModulatedField { base, obstacles }
}

impl ModulatedField {
    pub fn base(&self) -> &Arc<dyn Field> {
        &self.base
    }

    pub fn obstacles(&self) -> &Arc<ObstacleField> {
        &self.obstacles
    }

    /// Whether the repulsion term is active at time `t`.
    pub fn is_modulating(&self, t: f64) -> bool {
        self.obstacles.strength > 0.0 && !self.obstacles.active_points(t).is_empty()
    }
}

impl Dynamics for ModulatedField {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn velocity(&self, t: f64, x: &[f64]) -> DVector<f64> {
        let f = self.base.eval(x);
        if !self.is_modulating(t) {
            return f;
        }
        f + self.obstacles.repulsion(t, x) * self.obstacles.strength
    }
}

/// Strength for which the largest `|alpha h|` along `nominal` equals half
/// the largest `|f|` there; `None` when `h` vanishes on the path.
pub fn default_alpha(
    base: &dyn Field,
    obstacles: &ObstacleField,
    nominal: &SimTrajectory,
) -> Option<f64> {
    let mut f_max = 0.0f64;
    let mut h_max = 0.0f64;
    for (t, x) in nominal.times.iter().zip(&nominal.states) {
        f_max = f_max.max(base.eval(x.as_slice()).norm());
        h_max = h_max.max(obstacles.repulsion(*t, x.as_slice()).norm());
    }
    (h_max > 0.0 && h_max.is_finite()).then(|| 0.5 * f_max / h_max)
}

/// A consistent view of the obstacle field at one version.
#[derive(Debug, Clone)]
pub struct ObstacleSnapshot {
    pub version: u64,
    pub field: Arc<ObstacleField>,
}

/// Single-writer handoff of obstacle fields to concurrent readers. Readers
/// always see a whole snapshot; versions increase with every publish.
#[derive(Debug)]
pub struct ObstacleChannel {
    current: RwLock<Arc<ObstacleSnapshot>>,
}

impl Default for ObstacleChannel {
    fn default() -> Self {
        Self::new(ObstacleField::empty())
    }
}

impl ObstacleChannel {
    pub fn new(field: ObstacleField) -> Self {
        Self {
            current: RwLock::new(Arc::new(ObstacleSnapshot {
                version: 0,
                field: Arc::new(field),
            })),
        }
    }

    pub fn snapshot(&self) -> Arc<ObstacleSnapshot> {
        self.current
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    /// Replaces the field and returns the new version.
    pub fn publish(&self, field: ObstacleField) -> u64 {
        let mut guard = self.current.write().unwrap_or_else(|e| e.into_inner());
        let version = guard.version + 1;
        *guard = Arc::new(ObstacleSnapshot {
            version,
            field: Arc::new(field),
        });
        version
    }

    pub fn version(&self) -> u64 {
        self.snapshot().version
    }
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;
    use crate::dynsys::{integrate_field, IntegrationOptions, PolyField};
    use crate::polyalg::PolyMap;

    fn decay_field() -> Arc<dyn Field> {
        Arc::new(PolyField::new(PolyMap::linear(&-DMatrix::identity(2, 2))))
    }

    #[test]
    fn single_point_example() {
        let obs = ObstacleField::stationary(vec![vec![0.0, 0.0]], 2, 1.0, 1e-3).unwrap();
        assert_eq!(obs.repulsion(0.0, &[1.0, 0.0]).as_slice(), &[1.0, 0.0]);
        let m = modulate(decay_field(), Arc::new(obs));
        // f(1, 0) = (-1, 0)
        assert_eq!(m.velocity(0.0, &[1.0, 0.0]).as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn symmetric_points_cancel_along_their_axis() {
        let obs =
            ObstacleField::stationary(vec![vec![0.5, 1.0], vec![1.5, 1.0]], 3, 1.0, 1e-3).unwrap();
        let h = obs.repulsion(0.0, &[1.0, 1.0]);
        assert!(h[0].abs() < 1e-15 && h[1].abs() < 1e-15);
        let h = obs.repulsion(0.0, &[1.0, 1.4]);
        assert!(h[0].abs() < 1e-12 && h[1] > 0.0);
    }

    #[test]
    fn clamp_caps_magnitude_inside_exclusion_radius() {
        let rho = 0.1;
        let obs = ObstacleField::stationary(vec![vec![0.0, 0.0]], 4, 1.0, rho).unwrap();
        let on_sphere = obs.repulsion(0.0, &[rho, 0.0]).norm();
        let inside = obs.repulsion(0.0, &[0.01, 0.0]);
        assert!((inside.norm() - on_sphere).abs() < 1e-9 * on_sphere);
        assert!(inside[0] > 0.0);
        assert_eq!(obs.repulsion(0.0, &[0.0, 0.0]).norm(), 0.0);
    }

    #[test]
    fn zero_strength_is_exactly_the_base_field() {
        let base = decay_field();
        let obs = ObstacleField::stationary(vec![vec![0.2, 0.1]], 4, 0.0, 1e-3).unwrap();
        let m = modulate(base.clone(), Arc::new(obs));
        for x in [[0.3, 0.4], [0.2, 0.1], [-7.0, 1e-9]] {
            assert_eq!(m.velocity(1.0, &x), base.eval(&x));
        }
        let opts = IntegrationOptions::for_horizon(3.0);
        let a = integrate_field(&m, &[1.0, 1.0], &opts).unwrap();
        let b = integrate_field(&base, &[1.0, 1.0], &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn frames_are_held_piecewise_constant() {
        let frames = vec![
            ObstacleFrame {
                t: 1.0,
                points: vec![vec![1.0, 0.0]],
            },
            ObstacleFrame {
                t: 0.0,
                points: vec![vec![0.0, 0.0]],
            },
        ];
        let obs = ObstacleField::new(frames, 2, 1.0, 1e-3).unwrap();
        assert_eq!(obs.active_points(-1.0), &[vec![0.0, 0.0]]);
        assert_eq!(obs.active_points(0.5), &[vec![0.0, 0.0]]);
        assert_eq!(obs.active_points(1.0), &[vec![1.0, 0.0]]);
        let mut obs = obs;
        assert!(obs
            .push_frame(ObstacleFrame {
                t: 0.5,
                points: vec![]
            })
            .is_err());
        assert!(obs
            .push_frame(ObstacleFrame {
                t: 2.0,
                points: vec![vec![1.0]]
            })
            .is_err());
        obs.push_frame(ObstacleFrame {
            t: 2.0,
            points: vec![],
        })
        .unwrap();
        assert!(obs.active_points(3.0).is_empty());
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(ObstacleField::stationary(vec![], 0, 1.0, 1e-3).is_err());
        assert!(ObstacleField::stationary(vec![], 2, -1.0, 1e-3).is_err());
        assert!(ObstacleField::stationary(vec![], 2, 1.0, 0.0).is_err());
        assert!(ObstacleField::stationary(vec![vec![f64::NAN, 0.0]], 2, 1.0, 1e-3).is_err());
    }

    #[test]
    fn default_alpha_balances_half_the_speed() {
        let base = decay_field();
        let obs = ObstacleField::stationary(vec![vec![2.0, 2.0]], 4, 1.0, 1e-3).unwrap();
        let nominal =
            integrate_field(&base, &[1.0, 0.0], &IntegrationOptions::for_horizon(2.0)).unwrap();
        let alpha = default_alpha(base.as_ref(), &obs, &nominal).unwrap();
        let obs = obs.with_strength(alpha).unwrap();
        let h_max = nominal
            .times
            .iter()
            .zip(&nominal.states)
            .map(|(t, x)| obs.repulsion(*t, x.as_slice()).norm() * alpha)
            .fold(0.0, f64::max);
        assert!((h_max - 0.5).abs() < 1e-12);
        assert!(default_alpha(base.as_ref(), &ObstacleField::empty(), &nominal).is_none());
    }

    #[test]
    fn snapshots_are_versioned_and_whole() {
        let channel = Arc::new(ObstacleChannel::default());
        assert_eq!(channel.version(), 0);
        let writer = {
            let channel = channel.clone();
            std::thread::spawn(move || {
                for k in 1..=200 {
                    let p = k as f64;
                    // every point of a published frame shares the same coordinate
                    let obs = ObstacleField::stationary(vec![vec![p, p], vec![p, p]], 2, p, 1e-3)
                        .unwrap();
                    channel.publish(obs);
                }
            })
        };
        let mut last = 0;
        for _ in 0..2000 {
            let snap = channel.snapshot();
            assert!(snap.version >= last);
            last = snap.version;
            if let Some(pts) = snap.field.frames().first().map(|f| &f.points) {
                assert!(pts.iter().all(|q| q[0] == snap.field.strength()));
            }
        }
        writer.join().unwrap();
        assert_eq!(channel.version(), 200);
    }
}
