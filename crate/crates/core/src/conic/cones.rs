//! Nesterov–Todd scaling and Jordan-algebra operations for each cone type.
//!
//! For a scaling `W` the scaled point is `λ = W z = W⁻ᵀ s`. Every cone stores
//! enough to apply `W`, `Wᵀ`, `W⁻ᵀ` and to materialize `WᵀW` densely.

use nalgebra::{DMatrix, DVector};

use super::svec::{congruence_matrix, smat, svec};
use super::Cone;

pub(crate) struct NotInterior;

pub(crate) enum ConeScaling {
    Zero {
        dim: usize,
    },
    Nonneg {
        /// `√(s/z)`
        w: Vec<f64>,
        lambda: Vec<f64>,
    },
    SecondOrder {
        eta: f64,
        /// normalized NT point, `w0² − ‖w1‖² = 1`
        wbar: Vec<f64>,
        lambda: Vec<f64>,
    },
    Psd {
        n: usize,
        r: DMatrix<f64>,
        r_inv: DMatrix<f64>,
        lambda: Vec<f64>,
    },
}

impl ConeScaling {
    pub fn new(cone: &Cone) -> Self {
        match *cone {
            Cone::Zero(dim) => ConeScaling::Zero { dim },
            Cone::Nonneg(d) => ConeScaling::Nonneg {
                w: vec![1.0; d],
                lambda: vec![1.0; d],
            },
            Cone::SecondOrder(d) => {
                let mut wbar = vec![0.0; d];
                wbar[0] = 1.0;
                ConeScaling::SecondOrder {
                    eta: 1.0,
                    lambda: wbar.clone(),
                    wbar,
                }
            }
            Cone::Psd(n) => ConeScaling::Psd {
                n,
                r: DMatrix::identity(n, n),
                r_inv: DMatrix::identity(n, n),
                lambda: vec![1.0; n],
            },
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ConeScaling::Zero { .. })
    }

    /// Writes the identity element `e` scaled by `alpha` into `x` (added).
    pub fn add_e(&self, x: &mut [f64], alpha: f64) {
        match self {
            ConeScaling::Zero { .. } => {}
            ConeScaling::Nonneg { .. } => x.iter_mut().for_each(|v| *v += alpha),
            ConeScaling::SecondOrder { .. } => x[0] += alpha,
            ConeScaling::Psd { n, .. } => {
                let mut k = 0;
                for j in 0..*n {
                    x[k] += alpha;
                    k += n - j;
                }
            }
        }
    }

    pub fn update(&mut self, s: &[f64], z: &[f64]) -> Result<(), NotInterior> {
        match self {
            ConeScaling::Zero { .. } => Ok(()),
            ConeScaling::Nonneg { w, lambda } => {
                for i in 0..s.len() {
                    if !(s[i] > 0.0 && z[i] > 0.0) {
                        return Err(NotInterior);
                    }
                    w[i] = (s[i] / z[i]).sqrt();
                    lambda[i] = (s[i] * z[i]).sqrt();
                }
                Ok(())
            }
            ConeScaling::SecondOrder { eta, wbar, lambda } => {
                let sres = soc_residual(s);
                let zres = soc_residual(z);
                if !(sres > 0.0 && zres > 0.0 && s[0] > 0.0 && z[0] > 0.0) {
                    return Err(NotInterior);
                }
                let (sn, zn) = (sres.sqrt(), zres.sqrt());
                let sz: f64 = s.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() / (sn * zn);
                let gamma = ((1.0 + sz) / 2.0).sqrt();
                wbar[0] = (s[0] / sn + z[0] / zn) / (2.0 * gamma);
                for i in 1..s.len() {
                    wbar[i] = (s[i] / sn - z[i] / zn) / (2.0 * gamma);
                }
                *eta = (sn / zn).sqrt();
                let mut out = vec![0.0; s.len()];
                soc_apply_w(*eta, wbar, z, &mut out);
                *lambda = out;
                Ok(())
            }
            ConeScaling::Psd {
                n,
                r,
                r_inv,
                lambda,
            } => {
                let sm = smat(s, *n);
                let zm = smat(z, *n);
                let ls = sm.cholesky().ok_or(NotInterior)?.unpack();
                let lz = zm.cholesky().ok_or(NotInterior)?.unpack();
                let prod = lz.transpose() * &ls;
                let svd = prod.svd(true, true);
                let v = svd.v_t.ok_or(NotInterior)?.transpose();
                let sig = svd.singular_values;
                if sig.iter().any(|&x| !(x > 0.0)) {
                    return Err(NotInterior);
                }
                let ls_inv = ls
                    .solve_lower_triangular(&DMatrix::identity(*n, *n))
                    .ok_or(NotInterior)?;
                let mut rr = &ls * &v;
                let mut ri = v.transpose() * ls_inv;
                for k in 0..*n {
                    let f = sig[k].sqrt();
                    rr.column_mut(k).scale_mut(1.0 / f);
                    ri.row_mut(k).scale_mut(f);
                }
                *r = rr;
                *r_inv = ri;
                *lambda = sig.iter().copied().collect();
                Ok(())
            }
        }
    }

    /// Scaled point `λ` in the cone's vector representation.
    pub fn lambda(&self, out: &mut [f64]) {
        match self {
            ConeScaling::Zero { .. } => out.fill(0.0),
            ConeScaling::Nonneg { lambda, .. } | ConeScaling::SecondOrder { lambda, .. } => {
                out.copy_from_slice(lambda)
            }
            ConeScaling::Psd { n, lambda, .. } => {
                out.fill(0.0);
                let mut k = 0;
                for j in 0..*n {
                    out[k] = lambda[j];
                    k += n - j;
                }
            }
        }
    }

    /// Jordan product `x ∘ y`.
    pub fn circ(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        match self {
            ConeScaling::Zero { .. } => out.fill(0.0),
            ConeScaling::Nonneg { .. } => {
                for i in 0..out.len() {
                    out[i] = x[i] * y[i];
                }
            }
            ConeScaling::SecondOrder { .. } => {
                out[0] = x.iter().zip(y).map(|(a, b)| a * b).sum();
                for i in 1..out.len() {
                    out[i] = x[0] * y[i] + y[0] * x[i];
                }
            }
            ConeScaling::Psd { n, .. } => {
                let xm = smat(x, *n);
                let ym = smat(y, *n);
                let p = &xm * &ym;
                let sym = (&p + p.transpose()) * 0.5;
                out.copy_from_slice(&svec(&sym));
            }
        }
    }

    /// Solves `λ ∘ u = d` for `u`.
    pub fn lambda_inv_circ(&self, d: &[f64], out: &mut [f64]) {
        match self {
            ConeScaling::Zero { .. } => out.fill(0.0),
            ConeScaling::Nonneg { lambda, .. } => {
                for i in 0..out.len() {
                    out[i] = d[i] / lambda[i];
                }
            }
            ConeScaling::SecondOrder { lambda, .. } => {
                let l0 = lambda[0];
                let rho = soc_residual(lambda);
                let l1d1: f64 = lambda[1..].iter().zip(&d[1..]).map(|(a, b)| a * b).sum();
                let u0 = (l0 * d[0] - l1d1) / rho;
                out[0] = u0;
                for i in 1..out.len() {
                    out[i] = (d[i] - u0 * lambda[i]) / l0;
                }
            }
            ConeScaling::Psd { n, lambda, .. } => {
                let mut k = 0;
                for j in 0..*n {
                    for i in j..*n {
                        out[k] = 2.0 * d[k] / (lambda[i] + lambda[j]);
                        k += 1;
                    }
                }
            }
        }
    }

    /// `W v`
    pub fn apply_w(&self, v: &[f64], out: &mut [f64]) {
        match self {
            ConeScaling::Zero { .. } => out.fill(0.0),
            ConeScaling::Nonneg { w, .. } => {
                for i in 0..out.len() {
                    out[i] = w[i] * v[i];
                }
            }
            ConeScaling::SecondOrder { eta, wbar, .. } => soc_apply_w(*eta, wbar, v, out),
            ConeScaling::Psd { n, r, .. } => {
                let m = r.transpose() * smat(v, *n) * r;
                out.copy_from_slice(&svec(&m));
            }
        }
    }

    /// `Wᵀ v`
    pub fn apply_wt(&self, v: &[f64], out: &mut [f64]) {
        match self {
            ConeScaling::Psd { n, r, .. } => {
                let m = r * smat(v, *n) * r.transpose();
                out.copy_from_slice(&svec(&m));
            }
            _ => self.apply_w(v, out),
        }
    }

    /// `W⁻ᵀ v`
    pub fn apply_w_inv_t(&self, v: &[f64], out: &mut [f64]) {
        match self {
            ConeScaling::Zero { .. } => out.fill(0.0),
            ConeScaling::Nonneg { w, .. } => {
                for i in 0..out.len() {
                    out[i] = v[i] / w[i];
                }
            }
            ConeScaling::SecondOrder { eta, wbar, .. } => {
                // W⁻¹ = η⁻¹ J W̄ J for the symmetric NT scaling
                let mut jv = v.to_vec();
                jv[1..].iter_mut().for_each(|x| *x = -*x);
                soc_apply_w(1.0 / eta, wbar, &jv, out);
                out[1..].iter_mut().for_each(|x| *x = -*x);
            }
            ConeScaling::Psd { n, r_inv, .. } => {
                let m = r_inv * smat(v, *n) * r_inv.transpose();
                out.copy_from_slice(&svec(&m));
            }
        }
    }

    /// Dense `WᵀW` in the cone's vector basis. Zero for the zero cone.
    pub fn wtw(&self) -> DMatrix<f64> {
        match self {
            ConeScaling::Zero { dim } => DMatrix::zeros(*dim, *dim),
            ConeScaling::Nonneg { w, .. } => {
                DMatrix::from_diagonal(&DVector::from_iterator(w.len(), w.iter().map(|x| x * x)))
            }
            ConeScaling::SecondOrder { eta, wbar, .. } => {
                let d = wbar.len();
                let wv = DVector::from_column_slice(wbar);
                let mut m = &wv * wv.transpose() * 2.0;
                m[(0, 0)] -= 1.0;
                for i in 1..d {
                    m[(i, i)] += 1.0;
                }
                m * (eta * eta)
            }
            ConeScaling::Psd { r, .. } => {
                let g = r * r.transpose();
                congruence_matrix(&g)
            }
        }
    }

    /// Largest `α` keeping `s + α ds` in the cone (`f64::INFINITY` if unbounded).
    pub fn step_length_primal(&self, s: &[f64], ds: &[f64]) -> f64 {
        match self {
            ConeScaling::Psd {
                n, r_inv, lambda, ..
            } => {
                let x = r_inv * smat(ds, *n) * r_inv.transpose();
                psd_step(&x, lambda)
            }
            _ => self.step_length_raw(s, ds),
        }
    }

    /// Largest `α` keeping `z + α dz` in the dual cone.
    pub fn step_length_dual(&self, z: &[f64], dz: &[f64]) -> f64 {
        match self {
            ConeScaling::Psd { n, r, lambda, .. } => {
                let y = r.transpose() * smat(dz, *n) * r;
                psd_step(&y, lambda)
            }
            _ => self.step_length_raw(z, dz),
        }
    }

    fn step_length_raw(&self, x: &[f64], d: &[f64]) -> f64 {
        match self {
            ConeScaling::Zero { .. } => f64::INFINITY,
            ConeScaling::Nonneg { .. } => x
                .iter()
                .zip(d)
                .filter(|(_, &di)| di < 0.0)
                .map(|(&xi, &di)| -xi / di)
                .fold(f64::INFINITY, f64::min),
            ConeScaling::SecondOrder { .. } => soc_step(x, d),
            ConeScaling::Psd { .. } => unreachable!("PSD step lengths use the scaled form"),
        }
    }
}

/// `x0² − ‖x1‖²`
pub(crate) fn soc_residual(x: &[f64]) -> f64 {
    let tail: f64 = x[1..].iter().map(|v| v * v).sum();
    (x[0] - tail.sqrt()) * (x[0] + tail.sqrt())
}

fn soc_apply_w(eta: f64, wbar: &[f64], v: &[f64], out: &mut [f64]) {
    // W = η [w0  w1ᵀ ; w1  I + w1 w1ᵀ/(1 + w0)]
    let w0 = wbar[0];
    let w1v: f64 = wbar[1..].iter().zip(&v[1..]).map(|(a, b)| a * b).sum();
    out[0] = eta * (w0 * v[0] + w1v);
    let c = v[0] + w1v / (1.0 + w0);
    for i in 1..v.len() {
        out[i] = eta * (v[i] + c * wbar[i]);
    }
}

fn soc_step(x: &[f64], d: &[f64]) -> f64 {
    let a = soc_residual(d);
    let b = 2.0 * (x[0] * d[0] - x[1..].iter().zip(&d[1..]).map(|(p, q)| p * q).sum::<f64>());
    let c = soc_residual(x).max(0.0);
    let mut alpha = f64::INFINITY;
    if d[0] < 0.0 {
        alpha = -x[0] / d[0];
    }
    let disc = b * b - 4.0 * a * c;
    if a.abs() < 1e-300 {
        if b < 0.0 {
            alpha = alpha.min(-c / b);
        }
        return alpha;
    }
    if disc < 0.0 {
        return alpha;
    }
    let sq = disc.sqrt();
    let q = -0.5 * (b + b.signum() * sq);
    let roots = [q / a, if q != 0.0 { c / q } else { f64::INFINITY }];
    for r in roots {
        if r > 0.0 {
            alpha = alpha.min(r);
        }
    }
    alpha
}

/// Largest `α` with `Λ + α X ⪰ 0` for diagonal positive `Λ`.
fn psd_step(x: &DMatrix<f64>, lambda: &[f64]) -> f64 {
    let n = lambda.len();
    let mut scaled = x.clone();
    for i in 0..n {
        for j in 0..n {
            scaled[(i, j)] /= (lambda[i] * lambda[j]).sqrt();
        }
    }
    let sym = (&scaled + scaled.transpose()) * 0.5;
    let min_eig = sym
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min_eig < 0.0 {
        -1.0 / min_eig
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_scaling(cone: Cone, s: &[f64], z: &[f64]) {
        let mut sc = ConeScaling::new(&cone);
        sc.update(s, z).ok().expect("interior");
        let d = s.len();
        let mut wz = vec![0.0; d];
        let mut winv_s = vec![0.0; d];
        sc.apply_w(z, &mut wz);
        sc.apply_w_inv_t(s, &mut winv_s);
        let mut lam = vec![0.0; d];
        sc.lambda(&mut lam);
        for i in 0..d {
            assert!((wz[i] - winv_s[i]).abs() < 1e-10, "{cone:?} Wz != W^-T s");
            assert!((wz[i] - lam[i]).abs() < 1e-10, "{cone:?} lambda mismatch");
        }
        // WᵀW z should equal s
        let wtw = sc.wtw();
        let s_rec = wtw * DVector::from_column_slice(z);
        for i in 0..d {
            assert!((s_rec[i] - s[i]).abs() < 1e-9, "{cone:?} WᵀW z != s");
        }
        // λ∘(λ\d) = d
        let dvec: Vec<f64> = (0..d).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut u = vec![0.0; d];
        sc.lambda_inv_circ(&dvec, &mut u);
        let mut back = vec![0.0; d];
        sc.circ(&lam, &u, &mut back);
        for i in 0..d {
            assert!((back[i] - dvec[i]).abs() < 1e-9, "{cone:?} inverse circ");
        }
    }

    #[test]
    fn nt_scaling_identities() {
        check_scaling(Cone::Nonneg(3), &[1.0, 2.0, 0.5], &[3.0, 0.1, 1.0]);
        check_scaling(
            Cone::SecondOrder(4),
            &[3.0, 1.0, -0.5, 1.2],
            &[2.0, -0.3, 0.8, 0.1],
        );
        let s = svec(&DMatrix::from_row_slice(
            3,
            3,
            &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 1.5],
        ));
        let z = svec(&DMatrix::from_row_slice(
            3,
            3,
            &[1.0, -0.4, 0.0, -0.4, 2.0, 0.3, 0.0, 0.3, 0.7],
        ));
        check_scaling(Cone::Psd(3), &s, &z);
    }

    #[test]
    fn step_lengths_hit_the_boundary() {
        let sc = ConeScaling::new(&Cone::SecondOrder(3));
        let alpha = sc.step_length_primal(&[2.0, 0.0, 0.0], &[-1.0, 1.0, 0.0]);
        // (2 - a)^2 = a^2  ->  a = 1
        assert!((alpha - 1.0).abs() < 1e-12);
        let nn = ConeScaling::new(&Cone::Nonneg(2));
        assert_eq!(nn.step_length_primal(&[1.0, 4.0], &[-2.0, -1.0]), 0.5);
        assert_eq!(
            nn.step_length_primal(&[1.0, 4.0], &[2.0, 1.0]),
            f64::INFINITY
        );

        let mut psd = ConeScaling::new(&Cone::Psd(2));
        let s = svec(&DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]));
        psd.update(&s, &s).ok().unwrap();
        let ds = svec(&DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -4.0]));
        let alpha = psd.step_length_primal(&s, &ds);
        assert!((alpha - 0.25).abs() < 1e-12);
    }
}
