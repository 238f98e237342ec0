//! Placement of the moment blocks in the flat decision vector.
//!
//! Block `k < N-1` is the symmetric matrix of `z = [1, Δx (6), u (3)]`,
//! the terminal block that of `[1, Δx (6)]`. Each block is stored as its
//! svec (lower triangle, column-major, off-diagonals times √2), blocks
//! back to back in knot order, followed by the optional penalty epigraph
//! variable.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::conic::svec::{svec_index, svec_len, SQRT2};

pub const STATE_DIM: usize = 6;
pub const CONTROL_DIM: usize = 3;
/// Row/column of the constant 1 inside every block.
pub const ONE: usize = 0;
/// First row of `Δx` inside a block.
pub const STATE: usize = 1;
/// First row of `u` inside a non-terminal block.
pub const CONTROL: usize = 1 + STATE_DIM;

/// A linear functional on the flat vector, `Σ coef · x[var]`.
pub type Terms = Vec<(usize, f64)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintClass {
    UnitCorner,
    InitialMean,
    InitialSecondMoment,
    ControlBound,
    SecondMomentCap,
    ControlLowerBound,
    MeanDynamics,
    SecondMomentDynamics,
    CollisionRisk,
    PenaltyEpigraph,
    MomentPsd,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowGroup {
    pub class: ConstraintClass,
    pub knot: usize,
    pub rows: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentLayout {
    pub n_knots: usize,
    pub state_dim: usize,
    pub control_dim: usize,
    pub block_dims: Vec<usize>,
    /// start of each block's svec in the flat vector
    pub offsets: Vec<usize>,
    pub epigraph: Option<usize>,
    pub num_vars: usize,
    /// constraint rows by class, in emission order
    pub rows: Vec<RowGroup>,
}

impl MomentLayout {
    pub fn new(n_knots: usize, with_epigraph: bool) -> Self {
        assert!(n_knots >= 2, "need at least two knots");
        let block_dims: Vec<usize> = (0..n_knots)
            .map(|k| {
                if k + 1 < n_knots {
                    1 + STATE_DIM + CONTROL_DIM
                } else {
                    1 + STATE_DIM
                }
            })
            .collect();
        let mut offsets = Vec::with_capacity(n_knots);
        let mut next = 0;
        for &d in &block_dims {
            offsets.push(next);
            next += svec_len(d);
        }
        let epigraph = with_epigraph.then_some(next);
        let num_vars = next + usize::from(with_epigraph);
        MomentLayout {
            n_knots,
            state_dim: STATE_DIM,
            control_dim: CONTROL_DIM,
            block_dims,
            offsets,
            epigraph,
            num_vars,
            rows: Vec::new(),
        }
    }

    pub fn block_range(&self, k: usize) -> Range<usize> {
        self.offsets[k]..self.offsets[k] + svec_len(self.block_dims[k])
    }

    pub fn has_control(&self, k: usize) -> bool {
        k + 1 < self.n_knots
    }

    /// `(var, coef)` with `M_k[i][j] = coef · x[var]`.
    pub fn entry(&self, k: usize, i: usize, j: usize) -> (usize, f64) {
        let n = self.block_dims[k];
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let coef = if r == c { 1.0 } else { 1.0 / SQRT2 };
        (self.offsets[k] + svec_index(n, r, c), coef)
    }

    /// Selector for a single block entry.
    pub fn select(&self, k: usize, i: usize, j: usize) -> Terms {
        vec![self.entry(k, i, j)]
    }

    /// `L_x(M_k)`, one functional per state component.
    pub fn l_x(&self, k: usize) -> Vec<Terms> {
        (0..STATE_DIM)
            .map(|i| self.select(k, STATE + i, ONE))
            .collect()
    }

    /// `L_u(M_k)`.
    pub fn l_u(&self, k: usize) -> Vec<Terms> {
        assert!(self.has_control(k), "terminal block has no control");
        (0..CONTROL_DIM)
            .map(|i| self.select(k, CONTROL + i, ONE))
            .collect()
    }

    /// `L_xx(M_k)` as a row-major 6×6 grid.
    pub fn l_xx(&self, k: usize) -> Vec<Vec<Terms>> {
        (0..STATE_DIM)
            .map(|i| {
                (0..STATE_DIM)
                    .map(|j| self.select(k, STATE + i, STATE + j))
                    .collect()
            })
            .collect()
    }

    /// `L_uu(M_k)`.
    pub fn l_uu(&self, k: usize) -> Vec<Vec<Terms>> {
        assert!(self.has_control(k), "terminal block has no control");
        (0..CONTROL_DIM)
            .map(|i| {
                (0..CONTROL_DIM)
                    .map(|j| self.select(k, CONTROL + i, CONTROL + j))
                    .collect()
            })
            .collect()
    }

    /// `L_xu(M_k)` (6×3).
    pub fn l_xu(&self, k: usize) -> Vec<Vec<Terms>> {
        assert!(self.has_control(k), "terminal block has no control");
        (0..STATE_DIM)
            .map(|i| {
                (0..CONTROL_DIM)
                    .map(|j| self.select(k, STATE + i, CONTROL + j))
                    .collect()
            })
            .collect()
    }

    /// `tr L_uu(M_k)`.
    pub fn trace_uu(&self, k: usize) -> Terms {
        (0..CONTROL_DIM)
            .map(|i| self.entry(k, CONTROL + i, CONTROL + i))
            .collect()
    }

    /// Rows of a class, across all knots.
    pub fn rows_of(&self, class: ConstraintClass) -> usize {
        self.rows
            .iter()
            .filter(|g| g.class == class)
            .map(|g| g.rows.len())
            .sum()
    }

    /// Writes the svec of `M_k = z zᵀ` into `x`.
    pub fn write_rank_one(&self, k: usize, z: &[f64], x: &mut [f64]) {
        let n = self.block_dims[k];
        assert_eq!(z.len(), n);
        for j in 0..n {
            for i in j..n {
                let (var, coef) = self.entry(k, i, j);
                x[var] = z[i] * z[j] / coef;
            }
        }
    }
}
