use std::collections::HashMap;
use std::sync::Arc;

/// Exponent tuples of all monomials in `dim` variables up to total degree
/// `degree`, in graded lexicographic order.
///
/// Within one total degree the order is lexicographic with `x1` dominant, so
/// for two variables and degree 2 the basis reads
/// `1, x1, x2, x1^2, x1 x2, x2^2`.
#[derive(Debug, Clone)]
pub struct MonomialBasis {
    dim: usize,
    degree: usize,
    exponents: Vec<Vec<u16>>,
    index: HashMap<Vec<u16>, usize>,
}

impl PartialEq for MonomialBasis {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.degree == other.degree
    }
}

impl Eq for MonomialBasis {}

impl MonomialBasis {
    pub fn new(dim: usize, degree: usize) -> Arc<Self> {
        assert!(dim > 0, "monomial basis needs at least one variable");
        let mut exponents = Vec::with_capacity(binomial(dim + degree, degree));
        for total in 0..=degree {
            let mut current = vec![0u16; dim];
            push_degree(&mut exponents, &mut current, 0, total);
        }
        let index = exponents
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i))
            .collect();
        Arc::new(Self {
            dim,
            degree,
            exponents,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self) -> &[Vec<u16>] {
        &self.exponents
    }

    pub fn exponent(&self, i: usize) -> &[u16] {
        &self.exponents[i]
    }

    pub fn index_of(&self, exponent: &[u16]) -> Option<usize> {
        self.index.get(exponent).copied()
    }

    /// Evaluates every basis monomial at `x`.
    pub fn eval_monomials(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim);
        let powers = power_table(x, self.degree);
        self.exponents
            .iter()
            .map(|e| {
                e.iter()
                    .enumerate()
                    .map(|(k, &p)| powers[k][p as usize])
                    .product()
            })
            .collect()
    }
}

fn push_degree(out: &mut Vec<Vec<u16>>, current: &mut [u16], var: usize, remaining: usize) {
    if var + 1 == current.len() {
        current[var] = remaining as u16;
        out.push(current.to_vec());
        current[var] = 0;
        return;
    }
    for p in (0..=remaining).rev() {
        current[var] = p as u16;
        push_degree(out, current, var + 1, remaining - p);
    }
    current[var] = 0;
}

pub(crate) fn power_table(x: &[f64], degree: usize) -> Vec<Vec<f64>> {
    x.iter()
        .map(|&v| {
            let mut row = Vec::with_capacity(degree + 1);
            let mut acc = 1.0;
            for _ in 0..=degree {
                row.push(acc);
                acc *= v;
            }
            row
        })
        .collect()
}

pub fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k.min(n));
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graded_lex_order_two_vars() {
        let b = MonomialBasis::new(2, 2);
        let e: Vec<Vec<u16>> = b.exponents().to_vec();
        assert_eq!(
            e,
            vec![
                vec![0, 0],
                vec![1, 0],
                vec![0, 1],
                vec![2, 0],
                vec![1, 1],
                vec![0, 2]
            ]
        );
    }

    #[test]
    fn size_matches_binomial() {
        for n in 1..5 {
            for d in 0..6 {
                let b = MonomialBasis::new(n, d);
                assert_eq!(b.len(), binomial(n + d, d));
                for (i, e) in b.exponents().iter().enumerate() {
                    assert!(e.iter().map(|&p| p as usize).sum::<usize>() <= d);
                    assert_eq!(b.index_of(e), Some(i));
                }
            }
        }
    }
}
