//! Random two-variable QCQPs with a brute-force reference minimum.

use nalgebra::{DMatrix, DVector, Matrix2, Rotation2};
use rand::rngs::StdRng;
use rand::Rng;

pub struct Instance {
    pub q: Matrix2<f64>,
    pub d: [f64; 2],
    pub a: Matrix2<f64>,
    pub b: f64,
}

impl Instance {
    pub fn value(&self, x: f64, y: f64) -> f64 {
        let q = &self.q;
        q[(0, 0)] * x * x
            + 2.0 * q[(0, 1)] * x * y
            + q[(1, 1)] * y * y
            + self.d[0] * x
            + self.d[1] * y
    }

    /// Minimum over the constraint curve, sampled on lines `x = const` and
    /// `y = const` through a grid of spacing `h` over [−3, 3]; on each line
    /// the constraint is a quadratic solved exactly.
    pub fn grid_minimum(&self, h: f64) -> f64 {
        let a = &self.a;
        let steps = (6.0 / h).round() as usize;
        let mut best = f64::INFINITY;
        for i in 0..=steps {
            let g = -3.0 + i as f64 * h;
            // x fixed: a11 y² + 2 a01 g y + a00 g² − b = 0, and symmetrically
            for (fixed_x, qa, qb, qc) in [
                (
                    true,
                    a[(1, 1)],
                    2.0 * a[(0, 1)] * g,
                    a[(0, 0)] * g * g - self.b,
                ),
                (
                    false,
                    a[(0, 0)],
                    2.0 * a[(0, 1)] * g,
                    a[(1, 1)] * g * g - self.b,
                ),
            ] {
                let disc = qb * qb - 4.0 * qa * qc;
                if disc < 0.0 {
                    continue;
                }
                for sign in [-1.0, 1.0] {
                    let t = (-qb + sign * disc.sqrt()) / (2.0 * qa);
                    let v = if fixed_x {
                        self.value(g, t)
                    } else {
                        self.value(t, g)
                    };
                    best = best.min(v);
                }
            }
        }
        best
    }
}

pub fn random_instance(rng: &mut StdRng) -> Instance {
    let sym = |rng: &mut StdRng| {
        let (p, r, s) = (
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        );
        Matrix2::new(p, r, r, s)
    };
    let q = sym(rng);
    let b = rng.gen_range(0.5..4.0);
    // eigenvalues ≥ b/9 keep the curve inside [−3, 3]²
    let rot = Rotation2::new(rng.gen_range(0.0..std::f64::consts::PI)).into_inner();
    let eig = Matrix2::from_diagonal(&nalgebra::Vector2::new(
        rng.gen_range(b / 9.0..3.0),
        rng.gen_range(b / 9.0..3.0),
    ));
    let a = rot * eig * rot.transpose();
    Instance {
        q,
        d: [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
        a,
        b,
    }
}

impl Instance {
    /// Lifted problem data `(Q, d, A)` for the generic relaxation.
    pub fn lifted(&self) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
        (
            DMatrix::from_iterator(2, 2, self.q.iter().copied()),
            DVector::from_column_slice(&self.d),
            DMatrix::from_iterator(2, 2, self.a.iter().copied()),
        )
    }
}
