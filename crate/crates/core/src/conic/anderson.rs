//! Type-II Anderson acceleration for a fixed-point map `q -> g(q)`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

const REGULARIZATION: f64 = 1e-10;

pub(crate) struct Anderson {
    memory: usize,
    prev: Option<(Vec<f64>, Vec<f64>)>,
    dq: VecDeque<Vec<f64>>,
    df: VecDeque<Vec<f64>>,
}

impl Anderson {
    pub(crate) fn new(memory: usize) -> Self {
        Self {
            memory,
            prev: None,
            dq: VecDeque::new(),
            df: VecDeque::new(),
        }
    }

    pub(crate) fn reset(&mut self) {
        self.prev = None;
        self.dq.clear();
        self.df.clear();
    }

    /// Records the pair `(q, g(q))` and returns the extrapolated next
    /// iterate, or `None` when no extrapolation is available.
    pub(crate) fn step(&mut self, q: &[f64], g: &[f64]) -> Option<Vec<f64>> {
        if self.memory == 0 {
            return None;
        }
        let f: Vec<f64> = g.iter().zip(q).map(|(a, b)| a - b).collect();
        if let Some((qp, fp)) = self.prev.take() {
            self.dq
                .push_back(q.iter().zip(&qp).map(|(a, b)| a - b).collect());
            self.df
                .push_back(f.iter().zip(&fp).map(|(a, b)| a - b).collect());
            if self.dq.len() > self.memory {
                self.dq.pop_front();
                self.df.pop_front();
            }
        }
        self.prev = Some((q.to_vec(), f.clone()));
        let k = self.df.len();
        if k == 0 {
            return None;
        }
        let mut gram = DMatrix::zeros(k, k);
        let mut rhs = DVector::zeros(k);
        for i in 0..k {
            rhs[i] = dot(&self.df[i], &f);
            for j in 0..=i {
                let v = dot(&self.df[i], &self.df[j]);
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        let reg = REGULARIZATION * gram.trace().max(f64::MIN_POSITIVE);
        for i in 0..k {
            gram[(i, i)] += reg;
        }
        let gamma = gram.cholesky()?.solve(&rhs);
        let mut out = g.to_vec();
        for i in 0..k {
            let c = gamma[i];
            for ((o, a), b) in out.iter_mut().zip(&self.dq[i]).zip(&self.df[i]) {
                *o -= c * (a + b);
            }
        }
        out.iter().all(|v| v.is_finite()).then_some(out)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accelerates_a_linear_contraction() {
        // g(q) = M q + c with spectral radius 0.99; plain iteration needs
        // hundreds of steps, acceleration converges in a handful.
        let m = [[0.99, 0.0], [0.0, 0.5]];
        let c = [0.01, 0.5];
        let g = |q: &[f64]| vec![m[0][0] * q[0] + c[0], m[1][1] * q[1] + c[1]];
        let mut aa = Anderson::new(5);
        let mut q = vec![0.0, 0.0];
        for _ in 0..10 {
            let gq = g(&q);
            q = aa.step(&q, &gq).unwrap_or(gq);
        }
        assert!(
            (q[0] - 1.0).abs() < 1e-8 && (q[1] - 1.0).abs() < 1e-8,
            "{q:?}"
        );
    }
}
