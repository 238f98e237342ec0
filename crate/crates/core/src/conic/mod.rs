//! Primal-dual interior-point solver for conic programs.
//!
//! Problems are posed in slack form
//!
//! ```text
//! minimize    cᵀx
//! subject to  A x + s = b,   s ∈ K
//! ```
//!
//! where `K` is an ordered product of zero, nonnegative, second-order and
//! positive-semidefinite cones. The dual is `maximize −bᵀy` subject to
//! `Aᵀy + c = 0`, `y ∈ K*`. PSD blocks of `s` hold the symmetric
//! vectorization described in [`svec`].

mod builder;
mod cones;
mod dump;
mod ipm;
mod kkt;
pub mod svec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use builder::ProblemBuilder;
pub use dump::{read_dump, write_dump};
pub use ipm::{solve, solve_with_retry};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConicError {
    #[error("cone dimensions sum to {cones} but the constraint matrix has {rows} rows")]
    ConeDimensionMismatch { cones: usize, rows: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("constraint row {0} has no nonzero entries")]
    EmptyRow(usize),
    #[error("non-finite problem data in {0}")]
    NonFinite(&'static str),
    #[error("invalid cone: {0}")]
    InvalidCone(String),
    #[error("malformed problem dump at line {line}: {reason}")]
    MalformedDump { line: usize, reason: String },
    #[error("solver backend unavailable: {0}")]
    BackendUnavailable(String),
}

/// One block of the cone product, tagged with its size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    /// `{0}ᵈ`: equality rows.
    Zero(usize),
    /// Nonnegative orthant of the given dimension.
    Nonneg(usize),
    /// `{(t, v) : ‖v‖ ≤ t}` of the given total dimension.
    SecondOrder(usize),
    /// PSD matrices of the given order, stored via `svec`.
    Psd(usize),
}

impl Cone {
    /// Number of slack rows the block occupies.
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Zero(d) | Cone::Nonneg(d) | Cone::SecondOrder(d) => d,
            Cone::Psd(n) => svec::svec_len(n),
        }
    }

    /// Barrier degree; the zero cone contributes nothing to complementarity.
    pub fn degree(&self) -> usize {
        match *self {
            Cone::Zero(_) => 0,
            Cone::Nonneg(d) => d,
            Cone::SecondOrder(_) => 1,
            Cone::Psd(n) => n,
        }
    }
}

/// Compressed-row sparse matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// explicit zeros dropped. Column indices are sorted within each row.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, ConicError> {
        let mut sorted: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets {
            if r >= nrows || c >= ncols {
                return Err(ConicError::ShapeMismatch(format!(
                    "triplet ({r}, {c}) outside {nrows}x{ncols}"
                )));
            }
            sorted.push((r, c, v));
        }
        sorted.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0; nrows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        let mut m = SparseMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        };
        m.drop_zeros();
        Ok(m)
    }

    fn drop_zeros(&mut self) {
        let mut row_ptr = vec![0; self.nrows + 1];
        let mut col_idx = Vec::with_capacity(self.col_idx.len());
        let mut values = Vec::with_capacity(self.values.len());
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.values[k] != 0.0 {
                    col_idx.push(self.col_idx[k]);
                    values.push(self.values[k]);
                }
            }
            row_ptr[r + 1] = col_idx.len();
        }
        self.row_ptr = row_ptr;
        self.col_idx = col_idx;
        self.values = values;
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Nonzeros of row `r` as `(col, value)` pairs.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn row_len(&self, r: usize) -> usize {
        self.row_ptr[r + 1] - self.row_ptr[r]
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.nrows)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .collect()
    }

    /// `y ← A x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// `y ← Aᵀ x`
    pub fn tmul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        for (r, &xr) in x.iter().enumerate().take(self.nrows) {
            if xr == 0.0 {
                continue;
            }
            for (c, v) in self.row(r) {
                y[c] += v * xr;
            }
        }
        y
    }
}

/// A conic program in slack form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicProblem {
    pub objective: Vec<f64>,
    pub constraint_matrix: SparseMatrix,
    pub rhs: Vec<f64>,
    pub cones: Vec<Cone>,
}

impl ConicProblem {
    /// Validates and assembles a problem.
    pub fn new(
        objective: Vec<f64>,
        constraint_matrix: SparseMatrix,
        rhs: Vec<f64>,
        cones: Vec<Cone>,
    ) -> Result<Self, ConicError> {
        let p = ConicProblem {
            objective,
            constraint_matrix,
            rhs,
            cones,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    /// Total barrier degree of the cone product.
    pub fn degree(&self) -> usize {
        self.cones.iter().map(Cone::degree).sum()
    }

    /// Row ranges occupied by each cone, in order.
    pub fn cone_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.cones
            .iter()
            .map(|c| {
                let r = start..start + c.dim();
                start = r.end;
                r
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConicError> {
        let a = &self.constraint_matrix;
        if a.ncols() != self.objective.len() {
            return Err(ConicError::ShapeMismatch(format!(
                "objective has {} entries, A has {} columns",
                self.objective.len(),
                a.ncols()
            )));
        }
        if a.nrows() != self.rhs.len() {
            return Err(ConicError::ShapeMismatch(format!(
                "rhs has {} entries, A has {} rows",
                self.rhs.len(),
                a.nrows()
            )));
        }
        let total: usize = self.cones.iter().map(Cone::dim).sum();
        if total != a.nrows() {
            return Err(ConicError::ConeDimensionMismatch {
                cones: total,
                rows: a.nrows(),
            });
        }
        for cone in &self.cones {
            match *cone {
                Cone::SecondOrder(d) if d < 1 => {
                    return Err(ConicError::InvalidCone(
                        "second-order cone of dimension 0".into(),
                    ))
                }
                Cone::Psd(0) => return Err(ConicError::InvalidCone("PSD cone of order 0".into())),
                _ => {}
            }
        }
        if let Some(r) = (0..a.nrows()).find(|&r| a.row_len(r) == 0) {
            return Err(ConicError::EmptyRow(r));
        }
        if !self.objective.iter().all(|v| v.is_finite()) {
            return Err(ConicError::NonFinite("objective"));
        }
        if !self.rhs.iter().all(|v| v.is_finite()) {
            return Err(ConicError::NonFinite("rhs"));
        }
        if !a.values.iter().all(|v| v.is_finite()) {
            return Err(ConicError::NonFinite("constraint matrix"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIterations,
    NumericalFailure,
}

/// Primal-dual answer. For the infeasible statuses the vectors hold the
/// certificate (a dual ray `y` for primal infeasibility, a primal ray `x, s`
/// for dual infeasibility) rather than a solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicSolution {
    pub primal: Vec<f64>,
    pub dual: Vec<f64>,
    pub slack: Vec<f64>,
    pub status: SolveStatus,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub gap: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub rel_gap_tol: f64,
    pub feas_tol: f64,
    pub max_iterations: usize,
    pub step_fraction: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            rel_gap_tol: 1e-9,
            feas_tol: 1e-9,
            max_iterations: 100,
            step_fraction: 0.995,
        }
    }
}

impl SolverSettings {
    /// Tolerances ten times looser and a more cautious step, for a second
    /// attempt after a failed solve.
    pub fn loosened(&self) -> Self {
        SolverSettings {
            rel_gap_tol: self.rel_gap_tol * 10.0,
            feas_tol: self.feas_tol * 10.0,
            max_iterations: self.max_iterations,
            step_fraction: self.step_fraction.min(0.99),
        }
    }

    pub fn validate(&self) -> Result<(), ConicError> {
        let ok = self.rel_gap_tol > 0.0
            && self.feas_tol > 0.0
            && self.step_fraction > 0.0
            && self.step_fraction < 1.0;
        if ok {
            Ok(())
        } else {
            Err(ConicError::ShapeMismatch(format!(
                "invalid solver settings {self:?}"
            )))
        }
    }
}

/// Scaled residuals of a candidate primal-dual point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    /// `‖Ax + s − b‖ / (1 + ‖b‖)`
    pub primal: f64,
    /// `‖Aᵀy + c‖ / (1 + ‖c‖)`
    pub dual: f64,
    /// `|cᵀx + bᵀy| / (1 + |cᵀx|)`
    pub gap: f64,
}

pub fn residuals(
    problem: &ConicProblem,
    solution: &ConicSolution,
) -> Result<Residuals, ConicError> {
    let (n, m) = (problem.num_vars(), problem.num_rows());
    if solution.primal.len() != n || solution.dual.len() != m || solution.slack.len() != m {
        return Err(ConicError::ShapeMismatch(format!(
            "solution shapes (x {}, y {}, s {}) do not match problem (n {n}, m {m})",
            solution.primal.len(),
            solution.dual.len(),
            solution.slack.len()
        )));
    }
    let a = &problem.constraint_matrix;
    let ax = a.mul_vec(&solution.primal);
    let pr: Vec<f64> = (0..m)
        .map(|i| ax[i] + solution.slack[i] - problem.rhs[i])
        .collect();
    let aty = a.tmul_vec(&solution.dual);
    let dr: Vec<f64> = (0..n).map(|j| aty[j] + problem.objective[j]).collect();
    let cx = dot(&problem.objective, &solution.primal);
    let by = dot(&problem.rhs, &solution.dual);
    Ok(Residuals {
        primal: norm(&pr) / (1.0 + norm(&problem.rhs)),
        dual: norm(&dr) / (1.0 + norm(&problem.objective)),
        gap: (cx + by).abs() / (1.0 + cx.abs()),
    })
}

/// Extension seam for delegating a solve to another conic solver.
pub trait ConicBackend {
    fn solve(
        &self,
        problem: &ConicProblem,
        settings: &SolverSettings,
    ) -> Result<ConicSolution, ConicError>;
}

/// The in-repo interior-point method.
#[derive(Debug, Default, Clone, Copy)]
pub struct InteriorPoint;

impl ConicBackend for InteriorPoint {
    fn solve(
        &self,
        problem: &ConicProblem,
        settings: &SolverSettings,
    ) -> Result<ConicSolution, ConicError> {
        solve(problem, settings)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
