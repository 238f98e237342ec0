//! Symmetric vectorization of matrices.
//!
//! An order-`n` symmetric matrix `X` is stored as the `n(n+1)/2` entries of its
//! lower triangle, column by column:
//!
//! ```text
//! svec(X) = [X00, √2·X10, …, √2·X(n-1)0, X11, √2·X21, …, X(n-1)(n-1)]
//! ```
//!
//! The `√2` factor on off-diagonal entries makes the Euclidean inner product of
//! two vectorized matrices equal to the trace inner product `tr(XY)`.

use nalgebra::DMatrix;

pub(crate) const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Length of the vectorization of an order-`n` symmetric matrix.
pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Recovers the matrix order from a vectorization length, if it is triangular.
pub fn svec_order(len: usize) -> Option<usize> {
    let n = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    (svec_len(n) == len).then_some(n)
}

/// Position of entry `(i, j)` (either triangle) inside `svec` of an order-`n` matrix.
pub fn svec_index(n: usize, i: usize, j: usize) -> usize {
    let (row, col) = if i >= j { (i, j) } else { (j, i) };
    // columns 0..col contribute n, n-1, ..., n-col+1 entries
    col * n - col * col.saturating_sub(1) / 2 + (row - col)
}

/// Scale applied to entry `(i, j)` when it is stored in `svec`.
pub fn svec_scale(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        SQRT2
    }
}

pub fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(svec_len(n));
    for j in 0..n {
        for i in j..n {
            if i == j {
                out.push(m[(i, j)]);
            } else {
                out.push(0.5 * (m[(i, j)] + m[(j, i)]) * SQRT2);
            }
        }
    }
    out
}

pub fn smat(v: &[f64], n: usize) -> DMatrix<f64> {
    debug_assert_eq!(v.len(), svec_len(n));
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in j..n {
            if i == j {
                m[(i, i)] = v[k];
            } else {
                let x = v[k] / SQRT2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            k += 1;
        }
    }
    m
}

/// Matrix (in the `svec` basis) of the congruence `X ↦ G X Gᵀ`.
pub(crate) fn congruence_matrix(g: &DMatrix<f64>) -> DMatrix<f64> {
    let n = g.nrows();
    let dim = svec_len(n);
    let mut out = DMatrix::zeros(dim, dim);
    let mut q = 0;
    for j in 0..n {
        for i in j..n {
            // image of the basis element for (i, j)
            let mut p = 0;
            for b in 0..n {
                for a in b..n {
                    let val = if i == j {
                        g[(a, i)] * g[(b, i)] * svec_scale(a, b)
                    } else {
                        (g[(a, i)] * g[(b, j)] + g[(a, j)] * g[(b, i)]) / SQRT2 * svec_scale(a, b)
                    };
                    out[(p, q)] = val;
                    p += 1;
                }
            }
            q += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_matches_enumeration_order() {
        for n in 1..8 {
            let mut k = 0;
            for j in 0..n {
                for i in j..n {
                    assert_eq!(svec_index(n, i, j), k);
                    assert_eq!(svec_index(n, j, i), k);
                    k += 1;
                }
            }
            assert_eq!(svec_order(k), Some(n));
        }
        assert_eq!(svec_order(4), None);
    }

    #[test]
    fn inner_product_is_trace() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, -1.0, 1.0, 3.0, 0.5, -1.0, 0.5, 1.0]);
        let b = DMatrix::from_row_slice(3, 3, &[1.0, -2.0, 0.0, -2.0, 4.0, 1.5, 0.0, 1.5, -1.0]);
        let dot: f64 = svec(&a).iter().zip(svec(&b)).map(|(x, y)| x * y).sum();
        assert!((dot - (&a * &b).trace()).abs() < 1e-12);
        assert_eq!(smat(&svec(&a), 3), a);
    }

    #[test]
    fn congruence_matches_direct_product() {
        let g = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, -0.3, 2.0, 0.1, 0.5, 0.0, 1.5]);
        let x = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, -1.0, 1.0, 3.0, 0.5, -1.0, 0.5, 1.0]);
        let direct = svec(&(&g * &x * g.transpose()));
        let via = congruence_matrix(&g) * nalgebra::DVector::from_vec(svec(&x));
        for (a, b) in direct.iter().zip(via.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
