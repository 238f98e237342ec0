//! Row-by-row assembly of a [`ConicProblem`].

use super::{Cone, ConicError, ConicProblem, SparseMatrix};

/// Accumulates constraint rows in emission order. Consecutive zero or
/// nonnegative rows share one cone entry.
#[derive(Debug, Clone)]
pub struct ProblemBuilder {
    num_vars: usize,
    triplets: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
    cones: Vec<Cone>,
}

impl ProblemBuilder {
    pub fn new(num_vars: usize) -> Self {
        ProblemBuilder {
            num_vars,
            triplets: Vec::new(),
            rhs: Vec::new(),
            cones: Vec::new(),
        }
    }

    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    /// Pushes slack `s = rhs − terms·x`.
    fn row(&mut self, terms: &[(usize, f64)], rhs: f64) {
        let r = self.rhs.len();
        for &(v, c) in terms {
            self.triplets.push((r, v, c));
        }
        self.rhs.push(rhs);
    }

    fn extend_cone(&mut self, cone: Cone) {
        match (self.cones.last_mut(), cone) {
            (Some(Cone::Zero(d)), Cone::Zero(e)) | (Some(Cone::Nonneg(d)), Cone::Nonneg(e)) => {
                *d += e
            }
            _ => self.cones.push(cone),
        }
    }

    /// `terms·x = value`
    pub fn equal(&mut self, terms: &[(usize, f64)], value: f64) {
        self.row(terms, value);
        self.extend_cone(Cone::Zero(1));
    }

    /// `terms·x ≥ lower`
    pub fn at_least(&mut self, terms: &[(usize, f64)], lower: f64) {
        let neg: Vec<(usize, f64)> = terms.iter().map(|&(v, c)| (v, -c)).collect();
        self.row(&neg, -lower);
        self.extend_cone(Cone::Nonneg(1));
    }

    /// `(offset_i + terms_i·x)_i` in the second-order cone, head first.
    pub fn second_order(&mut self, entries: &[(Vec<(usize, f64)>, f64)]) {
        for (terms, offset) in entries {
            let neg: Vec<(usize, f64)> = terms.iter().map(|&(v, c)| (v, -c)).collect();
            self.row(&neg, *offset);
        }
        self.cones.push(Cone::SecondOrder(entries.len()));
    }

    /// `x[first .. first + svec_len(order)]` is the svec of a PSD matrix.
    pub fn psd_block(&mut self, order: usize, first: usize) {
        let len = order * (order + 1) / 2;
        for v in first..first + len {
            self.row(&[(v, -1.0)], 0.0);
        }
        self.cones.push(Cone::Psd(order));
    }

    pub fn build(self, objective: Vec<f64>) -> Result<ConicProblem, ConicError> {
        let a = SparseMatrix::from_triplets(self.rhs.len(), self.num_vars, &self.triplets)?;
        ConicProblem::new(objective, a, self.rhs, self.cones)
    }
}
