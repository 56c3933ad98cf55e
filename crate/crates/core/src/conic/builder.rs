use std::ops::Range;

use super::{Cone, ConeProgram, SparseMatrix};

/// One row `a'x + s_i = rhs`, i.e. the slack is `rhs - a'x`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRow {
    pub entries: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl SparseRow {
    pub fn new(entries: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self { entries, rhs }
    }
}

/// Handle to a block of rows added to a [`ProgramBuilder`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RowBlock(usize);

#[derive(Debug, Clone)]
struct Block {
    cone: Cone,
    rows: Vec<SparseRow>,
}

/// Incremental assembly of a [`ConeProgram`]. Blocks may be added in any
/// order; [`ProgramBuilder::build`] lays rows out as zero, nonnegative,
/// second-order, then PSD cones, keeping insertion order within each kind.
#[derive(Debug, Clone, Default)]
pub struct ProgramBuilder {
    cost: Vec<f64>,
    blocks: Vec<Block>,
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    /// Allocates `count` new variables and returns the first column index.
    pub fn add_variables(&mut self, count: usize) -> usize {
        let start = self.cost.len();
        self.cost.resize(start + count, 0.0);
        start
    }

    pub fn set_cost(&mut self, var: usize, value: f64) {
        self.cost[var] = value;
    }

    pub fn add_zero_rows(&mut self, rows: Vec<SparseRow>) -> RowBlock {
        self.push(Cone::Zero(rows.len()), rows)
    }

    pub fn add_nonneg_rows(&mut self, rows: Vec<SparseRow>) -> RowBlock {
        self.push(Cone::NonNeg(rows.len()), rows)
    }

    pub fn add_second_order(&mut self, rows: Vec<SparseRow>) -> RowBlock {
        self.push(Cone::SecondOrder(rows.len()), rows)
    }

    /// `rows` are the svec entries of a symmetric `order x order` slack.
    pub fn add_psd(&mut self, order: usize, rows: Vec<SparseRow>) -> RowBlock {
        assert_eq!(rows.len(), order * (order + 1) / 2, "PSD block row count");
        self.push(Cone::Psd(order), rows)
    }

    fn push(&mut self, cone: Cone, rows: Vec<SparseRow>) -> RowBlock {
        for r in &rows {
            for &(j, _) in &r.entries {
                assert!(
                    j < self.cost.len(),
                    "row references unallocated variable {j}"
                );
            }
        }
        self.blocks.push(Block { cone, rows });
        RowBlock(self.blocks.len() - 1)
    }

    /// Assembles the program and the row range of every block handle.
    pub fn build(&self) -> (ConeProgram, Vec<Range<usize>>) {
        let rank = |c: &Cone| match c {
            Cone::Zero(_) => 0,
            Cone::NonNeg(_) => 1,
            Cone::SecondOrder(_) => 2,
            Cone::Psd(_) => 3,
        };
        let mut order: Vec<usize> = (0..self.blocks.len()).collect();
        order.sort_by_key(|&i| (rank(&self.blocks[i].cone), i));

        let mut triplets = Vec::new();
        let mut b = Vec::new();
        let mut cones: Vec<Cone> = Vec::new();
        let mut ranges = vec![0..0; self.blocks.len()];
        for &bi in &order {
            let block = &self.blocks[bi];
            let start = b.len();
            for r in &block.rows {
                let row = b.len();
                for &(j, v) in &r.entries {
                    triplets.push((row, j, v));
                }
                b.push(r.rhs);
            }
            ranges[bi] = start..b.len();
            match (cones.last_mut(), block.cone) {
                (Some(Cone::Zero(k)), Cone::Zero(m)) => *k += m,
                (Some(Cone::NonNeg(k)), Cone::NonNeg(m)) => *k += m,
                (_, Cone::Zero(0)) | (_, Cone::NonNeg(0)) => {}
                (_, cone) => cones.push(cone),
            }
        }
        let a = SparseMatrix::from_triplets(b.len(), self.cost.len(), &triplets);
        let program = ConeProgram {
            a,
            b,
            c: self.cost.clone(),
            cones,
            warm_start: None,
        };
        (program, ranges)
    }
}

impl RowBlock {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_are_ordered_by_cone_kind() {
        let mut pb = ProgramBuilder::new();
        let x = pb.add_variables(2);
        let psd = pb.add_psd(
            2,
            vec![
                SparseRow::new(vec![(x, -1.0)], 0.0),
                SparseRow::new(vec![], 0.0),
                SparseRow::new(vec![(x + 1, -1.0)], 0.0),
            ],
        );
        let z1 = pb.add_zero_rows(vec![SparseRow::new(vec![(x, 1.0)], 1.0)]);
        let z2 = pb.add_zero_rows(vec![SparseRow::new(vec![(x + 1, 1.0)], 2.0)]);
        let (p, ranges) = pb.build();
        assert_eq!(p.cones, vec![Cone::Zero(2), Cone::Psd(2)]);
        assert_eq!(ranges[z1.index()], 0..1);
        assert_eq!(ranges[z2.index()], 1..2);
        assert_eq!(ranges[psd.index()], 2..5);
        assert_eq!(p.b, vec![1.0, 2.0, 0.0, 0.0, 0.0]);
        p.validate().unwrap();
    }
}
