use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::DynError;
use crate::learner::VectorFieldModel;
use crate::polyalg::{eval_matrix, PolyMap, Polynomial};

/// A possibly time-varying vector field `x' = f(t, x)`.
pub trait Dynamics: Send + Sync {
    fn dim(&self) -> usize;
    fn velocity(&self, t: f64, x: &[f64]) -> DVector<f64>;
}

/// An autonomous field with a Jacobian; its `velocity` ignores `t`.
pub trait Field: Dynamics {
    fn eval(&self, x: &[f64]) -> DVector<f64> {
        self.velocity(0.0, x)
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64>;
}

impl<F: Field + ?Sized> Dynamics for std::sync::Arc<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn velocity(&self, t: f64, x: &[f64]) -> DVector<f64> {
        (**self).velocity(t, x)
    }
}

impl<F: Field + ?Sized> Field for std::sync::Arc<F> {
    fn eval(&self, x: &[f64]) -> DVector<f64> {
        (**self).eval(x)
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        (**self).jacobian(x)
    }
}

impl Dynamics for VectorFieldModel {
    fn dim(&self) -> usize {
        VectorFieldModel::dim(self)
    }

    fn velocity(&self, _t: f64, x: &[f64]) -> DVector<f64> {
        VectorFieldModel::eval(self, x)
    }
}

impl Field for VectorFieldModel {
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        VectorFieldModel::jacobian(self, x)
    }
}

/// A polynomial map with its symbolic Jacobian cached.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyField {
    map: PolyMap,
    jacobian: Vec<Vec<Polynomial>>,
}

impl PolyField {
    pub fn new(map: PolyMap) -> Self {
        let jacobian = map.jacobian();
        Self { map, jacobian }
    }

    pub fn map(&self) -> &PolyMap {
        &self.map
    }

    pub fn symbolic_jacobian(&self) -> &[Vec<Polynomial>] {
        &self.jacobian
    }
}

impl From<PolyMap> for PolyField {
    fn from(map: PolyMap) -> Self {
        Self::new(map)
    }
}

impl Dynamics for PolyField {
    fn dim(&self) -> usize {
        self.map.dim()
    }

    fn velocity(&self, _t: f64, x: &[f64]) -> DVector<f64> {
        self.map.eval(x).expect("state dimension matches field")
    }
}

impl Field for PolyField {
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        eval_matrix(&self.jacobian, x)
    }
}

/// Wraps a closure `f(t, x)`.
pub struct ClosureField<F> {
    dim: usize,
    f: F,
}

impl<F> ClosureField<F>
where
    F: Fn(f64, &[f64]) -> DVector<f64> + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> Dynamics for ClosureField<F>
where
    F: Fn(f64, &[f64]) -> DVector<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, t: f64, x: &[f64]) -> DVector<f64> {
        (self.f)(t, x)
    }
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoundingBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, DynError> {
        if lo.len() != hi.len() {
            return Err(DynError::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
            return Err(DynError::InvalidOptions(
                "box bounds must satisfy lo <= hi".into(),
            ));
        }
        Ok(Self { lo, hi })
    }

    /// Smallest box containing every point; `None` for an empty set.
    pub fn from_points<'a, I>(points: I) -> Option<Self>
    where
        I: IntoIterator<Item = &'a DVector<f64>>,
    {
        let mut iter = points.into_iter();
        let first = iter.next()?;
        let mut lo: Vec<f64> = first.iter().copied().collect();
        let mut hi = lo.clone();
        for p in iter {
            for (k, v) in p.iter().enumerate() {
                lo[k] = lo[k].min(*v);
                hi[k] = hi[k].max(*v);
            }
        }
        Some(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).collect()
    }

    pub fn diagonal(&self) -> f64 {
        self.widths().iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// The box scaled by `factor` about its center.
    pub fn scaled(&self, factor: f64) -> Self {
        let c = self.center();
        let half: Vec<f64> = self.widths().iter().map(|w| 0.5 * w * factor).collect();
        Self {
            lo: c.iter().zip(&half).map(|(c, h)| c - h).collect(),
            hi: c.iter().zip(&half).map(|(c, h)| c + h).collect(),
        }
    }

    /// The box grown by `margin` on every side.
    pub fn padded(&self, margin: f64) -> Self {
        Self {
            lo: self.lo.iter().map(|v| v - margin).collect(),
            hi: self.hi.iter().map(|v| v + margin).collect(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polyalg::MonomialBasis;

    #[test]
    fn poly_field_jacobian_matches_finite_differences() {
        let basis = MonomialBasis::new(2, 3);
        let coeffs: Vec<f64> = (0..2 * basis.len())
            .map(|i| ((i * 5 % 7) as f64 - 3.0) * 0.25)
            .collect();
        let field = PolyField::new(PolyMap::from_coefficients(basis, &coeffs).unwrap());
        let x = [0.3, -0.7];
        let j = field.jacobian(&x);
        let h = 1e-6;
        for k in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let col = (field.eval(&xp) - field.eval(&xm)) / (2.0 * h);
            for i in 0..2 {
                assert!((col[i] - j[(i, k)]).abs() <= 1e-6 * (1.0 + j[(i, k)].abs()));
            }
        }
    }

    #[test]
    fn box_scaling_keeps_center() {
        let b = BoundingBox::new(vec![0.0, -2.0], vec![2.0, 2.0]).unwrap();
        let s = b.scaled(1.25);
        assert_eq!(s.center(), b.center());
        assert!((s.widths()[0] - 2.5).abs() < 1e-15 && (s.widths()[1] - 5.0).abs() < 1e-15);
        assert!(s.contains(&[2.2, -2.4]) && !b.contains(&[2.2, 0.0]));
    }
}
