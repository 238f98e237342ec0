//! Shor relaxation of a QCQP with one quadratic equality,
//!
//! ```text
//! minimize  xᵀQx + dᵀx   subject to  xᵀAx = b
//! ```
//!
//! lifted to the moment matrix `M = [1 xᵀ; x xxᵀ] ⪰ 0`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::RelaxationError;
use crate::conic::svec::{smat, svec_index, svec_len, SQRT2};
use crate::conic::{ConicProblem, ConicSolution, ProblemBuilder};

/// Ratios are reported up to this value.
pub const RATIO_CAP: f64 = 1e16;
/// Minimum eigenvalue ratio for a rank-one certificate.
pub const CERTIFY_RATIO: f64 = 1e4;
/// Leading entries of the top eigenvector below this cannot be normalized.
pub const MIN_LEADING_ENTRY: f64 = 1e-6;

/// Spectral summary of one moment block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpectrum {
    pub lambda1: f64,
    pub lambda2: f64,
    /// `λ₁/λ₂`, capped at [`RATIO_CAP`] and set to the cap when `λ₂` is
    /// zero to working precision
    pub ratio: f64,
    /// the top eigenvalue is numerically repeated
    pub tied: bool,
    pub top_vector: DVector<f64>,
}

pub fn block_spectrum(m: &DMatrix<f64>) -> BlockSpectrum {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lambda1 = eig.eigenvalues[order[0]];
    let lambda2 = if order.len() > 1 {
        eig.eigenvalues[order[1]]
    } else {
        0.0
    };
    // below rounding level the second eigenvalue is indistinguishable from zero
    let floor = m.nrows() as f64 * f64::EPSILON * lambda1.abs();
    let ratio = if lambda2 <= floor {
        RATIO_CAP
    } else {
        (lambda1 / lambda2).min(RATIO_CAP)
    };
    let tied = order.len() > 1 && lambda1 - lambda2 <= 1e-8 * lambda1.abs();
    BlockSpectrum {
        lambda1,
        lambda2,
        ratio,
        tied,
        top_vector: eig.eigenvectors.column(order[0]).into_owned(),
    }
}

/// `z = √λ₁·v₁` rescaled to a unit leading entry.
pub fn normalized_top(spec: &BlockSpectrum) -> Option<DVector<f64>> {
    let lead = spec.top_vector[0];
    if lead.abs() < MIN_LEADING_ENTRY {
        return None;
    }
    Some(&spec.top_vector / lead)
}

fn check_square(name: &str, m: &DMatrix<f64>, n: usize) {
    assert!(
        m.nrows() == n && m.ncols() == n,
        "{name} is {}x{}, expected {n}x{n}",
        m.nrows(),
        m.ncols()
    );
    assert!(
        (m - m.transpose()).norm() <= 1e-12 * m.norm().max(1.0),
        "{name} is not symmetric"
    );
}

/// Emits the moment-matrix SDP. Variables are `svec(M)` with `M` of order
/// `n + 1`; the equality is homogenized through `M₀₀`.
///
/// # Panics
/// When `n = 0` or `q`, `a` are not symmetric `n×n`.
pub fn shor_relax_generic(
    q: &DMatrix<f64>,
    d: &DVector<f64>,
    a: &DMatrix<f64>,
    b: f64,
) -> ConicProblem {
    let n = d.len();
    assert!(n > 0, "need at least one variable");
    check_square("Q", q, n);
    check_square("A", a, n);
    let order = n + 1;
    let len = svec_len(order);
    let mut c = vec![0.0; len];
    let mut equality = Vec::new();
    for j in 0..n {
        c[svec_index(order, j + 1, 0)] = d[j] / SQRT2;
        for i in j..n {
            let var = svec_index(order, i + 1, j + 1);
            let w = if i == j { 1.0 } else { SQRT2 };
            c[var] = w * q[(i, j)];
            if a[(i, j)] != 0.0 {
                equality.push((var, w * a[(i, j)]));
            }
        }
    }
    let corner = svec_index(order, 0, 0);
    if b != 0.0 {
        equality.push((corner, -b));
    }
    let mut builder = ProblemBuilder::new(len);
    builder.equal(&[(corner, 1.0)], 1.0);
    if !equality.is_empty() {
        builder.equal(&equality, 0.0);
    }
    builder.psd_block(order, 0);
    builder.build(c).expect("well-formed by construction")
}

/// Point recovered from a generic relaxation.
#[derive(Debug, Clone, PartialEq)]
pub struct ShorPoint {
    pub x: DVector<f64>,
    pub ratio: f64,
    pub certified: bool,
    /// the point came from the top eigenvector (otherwise from diagonal rounding)
    pub from_eigenvector: bool,
}

/// Reads `x` from the moment matrix. When the top eigenvector is ambiguous
/// or cannot be normalized, falls back to `xᵢ = ±√(M_ii)` with the sign of
/// the first-moment entry.
pub fn shor_extract(solution: &ConicSolution, n: usize) -> Result<ShorPoint, RelaxationError> {
    if solution.status != crate::conic::SolveStatus::Optimal {
        return Err(RelaxationError::NotOptimal(solution.status));
    }
    let m = smat(&solution.primal, n + 1);
    let spec = block_spectrum(&m);
    let certified = spec.ratio >= CERTIFY_RATIO && !spec.tied;
    match normalized_top(&spec).filter(|_| !spec.tied) {
        Some(z) => Ok(ShorPoint {
            x: z.rows(1, n).into_owned(),
            ratio: spec.ratio,
            certified,
            from_eigenvector: true,
        }),
        None => {
            let x = DVector::from_fn(n, |i, _| {
                let mag = m[(i + 1, i + 1)].max(0.0).sqrt();
                if m[(i + 1, 0)] < 0.0 {
                    -mag
                } else {
                    mag
                }
            });
            Ok(ShorPoint {
                x,
                ratio: spec.ratio,
                certified,
                from_eigenvector: false,
            })
        }
    }
}
