//! Conic programs with a planted optimum: a strictly complementary
//! `(s*, z*)` pair fixes `b = A x* + s*` and `c = −Aᵀ z*`.

use cola_core::conic::svec::svec;
use cola_core::conic::{Cone, ConicProblem, SparseMatrix};
use nalgebra::DMatrix;
use rand::rngs::StdRng;
use rand::Rng;

fn random_unit(rng: &mut StdRng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / nrm).collect()
}

fn random_orthogonal(rng: &mut StdRng, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    m.qr().q()
}

/// Strictly complementary `(s, z)` pair inside one cone.
fn complementary_pair(rng: &mut StdRng, cone: Cone) -> (Vec<f64>, Vec<f64>) {
    match cone {
        Cone::Zero(d) => (
            vec![0.0; d],
            (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        ),
        Cone::Nonneg(d) => {
            let mut s = vec![0.0; d];
            let mut z = vec![0.0; d];
            for i in 0..d {
                if rng.gen_bool(0.5) {
                    s[i] = rng.gen_range(0.5..2.0);
                } else {
                    z[i] = rng.gen_range(0.5..2.0);
                }
            }
            (s, z)
        }
        Cone::SecondOrder(d) => {
            let u = random_unit(rng, d - 1);
            let (a, b) = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0));
            let mut s = vec![a];
            s.extend(u.iter().map(|x| a * x));
            let mut z = vec![b];
            z.extend(u.iter().map(|x| -b * x));
            (s, z)
        }
        Cone::Psd(n) => {
            let q = random_orthogonal(rng, n);
            let rank = rng.gen_range(1..n);
            let mut ds = DMatrix::zeros(n, n);
            let mut dz = DMatrix::zeros(n, n);
            for i in 0..n {
                if i < rank {
                    ds[(i, i)] = rng.gen_range(0.5..2.0);
                } else {
                    dz[(i, i)] = rng.gen_range(0.5..2.0);
                }
            }
            (
                svec(&(&q * ds * q.transpose())),
                svec(&(&q * dz * q.transpose())),
            )
        }
    }
}

/// Random instance number `trial` and its optimal value.
pub fn planted_instance(rng: &mut StdRng, trial: usize) -> (ConicProblem, f64) {
    let mut cones = vec![
        Cone::Zero(rng.gen_range(1..3)),
        Cone::Nonneg(rng.gen_range(1..5)),
    ];
    if trial.is_multiple_of(2) {
        cones.push(Cone::SecondOrder(rng.gen_range(3..6)));
    }
    if trial % 3 != 1 {
        cones.push(Cone::Psd(rng.gen_range(2..5)));
    }
    let m: usize = cones.iter().map(Cone::dim).sum();
    let n = rng.gen_range(1..m.max(2));
    let mut s_star = Vec::new();
    let mut z_star = Vec::new();
    for &cone in &cones {
        let (s, z) = complementary_pair(rng, cone);
        s_star.extend(s);
        z_star.extend(z);
    }
    let x_star: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut trip = Vec::new();
    for i in 0..m {
        for j in 0..n {
            trip.push((i, j, rng.gen_range(-1.0..1.0)));
        }
    }
    let a = SparseMatrix::from_triplets(m, n, &trip).unwrap();
    let ax = a.mul_vec(&x_star);
    let b: Vec<f64> = (0..m).map(|i| ax[i] + s_star[i]).collect();
    let c: Vec<f64> = a.tmul_vec(&z_star).iter().map(|v| -v).collect();
    let f_star: f64 = c.iter().zip(&x_star).map(|(p, q)| p * q).sum();
    (ConicProblem::new(c, a, b, cones).unwrap(), f_star)
}
