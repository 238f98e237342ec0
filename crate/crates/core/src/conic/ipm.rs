//! Homogeneous self-dual embedding with Mehrotra predictor–corrector steps.
//!
//! The embedding tracks `(x, s, z, τ, κ)` with residuals
//!
//! ```text
//! r_x = Aᵀz + cτ,   r_z = Ax + s − bτ,   r_τ = cᵀx + bᵀz + κ
//! ```
//!
//! and drives them to zero along the central path `s ∘ z = μe`, `τκ = μ`.
//! Optimal points are recovered as `(x, s, z)/τ`; infeasibility
//! certificates appear when `τ → 0`.

use super::cones::ConeScaling;
use super::kkt::KktSolver;
use super::{dot, norm, ConicError, ConicProblem, ConicSolution, SolveStatus, SolverSettings};

struct Direction {
    dx: Vec<f64>,
    ds: Vec<f64>,
    dz: Vec<f64>,
    dtau: f64,
    dkappa: f64,
}

struct Workspace<'a> {
    problem: &'a ConicProblem,
    ranges: Vec<std::ops::Range<usize>>,
    scalings: Vec<ConeScaling>,
    kkt: KktSolver,
}

impl Workspace<'_> {
    fn per_cone<F>(&self, out: &mut [f64], mut f: F)
    where
        F: FnMut(&ConeScaling, std::ops::Range<usize>, &mut [f64]),
    {
        for (sc, r) in self.scalings.iter().zip(&self.ranges) {
            f(sc, r.clone(), &mut out[r.clone()]);
        }
    }

    /// Solves the linearized embedding for the given right-hand sides,
    /// reusing the `[−c; b]` solution `(x2, z2)`.
    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        x2: &[f64],
        z2: &[f64],
        d_x: &[f64],
        d_z: &[f64],
        d_tau: f64,
        d_s: &[f64],
        d_kappa: f64,
        tau: f64,
        kappa: f64,
    ) -> Direction {
        let p = self.problem;
        let m = p.num_rows();
        // Wᵀ(λ \ d_s)
        let mut tmp = vec![0.0; m];
        self.per_cone(&mut tmp, |sc, r, out| sc.lambda_inv_circ(&d_s[r], out));
        let mut wt_tmp = vec![0.0; m];
        self.per_cone(&mut wt_tmp, |sc, r, out| sc.apply_wt(&tmp[r], out));

        let r1: Vec<f64> = d_x.iter().map(|v| -v).collect();
        let r2: Vec<f64> = (0..m).map(|i| -d_z[i] + wt_tmp[i]).collect();
        let (x1, z1) = self.kkt.solve(&r1, &r2);

        let num = -d_tau + d_kappa / tau - dot(&p.objective, &x1) - dot(&p.rhs, &z1);
        let den = dot(&p.objective, x2) + dot(&p.rhs, z2) - kappa / tau;
        let dtau = num / den;
        let dx: Vec<f64> = x1.iter().zip(x2).map(|(a, b)| a + dtau * b).collect();
        let dz: Vec<f64> = z1.iter().zip(z2).map(|(a, b)| a + dtau * b).collect();
        // ds = −Wᵀ(λ \ d_s) − WᵀW dz
        let mut ds = vec![0.0; m];
        for (ci, r) in self.ranges.iter().enumerate() {
            if self.scalings[ci].is_zero() {
                continue;
            }
            let mut h = vec![0.0; r.len()];
            self.kkt.apply_wtw(ci, &dz[r.clone()], &mut h);
            for (k, i) in r.clone().enumerate() {
                ds[i] = -wt_tmp[i] - h[k];
            }
        }
        let dkappa = (-d_kappa - kappa * dtau) / tau;
        Direction {
            dx,
            ds,
            dz,
            dtau,
            dkappa,
        }
    }

    fn max_step(&self, s: &[f64], z: &[f64], tau: f64, kappa: f64, d: &Direction) -> f64 {
        let mut alpha = f64::INFINITY;
        if d.dtau < 0.0 {
            alpha = alpha.min(-tau / d.dtau);
        }
        if d.dkappa < 0.0 {
            alpha = alpha.min(-kappa / d.dkappa);
        }
        for (sc, r) in self.scalings.iter().zip(&self.ranges) {
            if sc.is_zero() {
                continue;
            }
            alpha = alpha.min(sc.step_length_primal(&s[r.clone()], &d.ds[r.clone()]));
            alpha = alpha.min(sc.step_length_dual(&z[r.clone()], &d.dz[r.clone()]));
        }
        alpha
    }
}

/// Solves a conic program with the interior-point method.
pub fn solve(
    problem: &ConicProblem,
    settings: &SolverSettings,
) -> Result<ConicSolution, ConicError> {
    problem.validate()?;
    settings.validate()?;
    let n = problem.num_vars();
    let m = problem.num_rows();
    let a = &problem.constraint_matrix;
    let c = &problem.objective;
    let b = &problem.rhs;
    let degree = problem.degree() as f64;

    let mut ws = Workspace {
        problem,
        ranges: problem.cone_ranges(),
        scalings: problem.cones.iter().map(ConeScaling::new).collect(),
        kkt: KktSolver::new(problem),
    };

    let mut x = vec![0.0; n];
    let mut s = vec![0.0; m];
    let mut z = vec![0.0; m];
    for (sc, r) in ws.scalings.iter().zip(&ws.ranges) {
        sc.add_e(&mut s[r.clone()], 1.0);
        sc.add_e(&mut z[r.clone()], 1.0);
    }
    let mut tau = 1.0;
    let mut kappa = 1.0;

    let norm_b = norm(b);
    let norm_c = norm(c);
    let status;
    let mut iterations = 0;
    let mut small_steps = 0;

    loop {
        // residuals
        let ax = a.mul_vec(&x);
        let atz = a.tmul_vec(&z);
        let rx: Vec<f64> = (0..n).map(|j| atz[j] + c[j] * tau).collect();
        let rz: Vec<f64> = (0..m).map(|i| ax[i] + s[i] - b[i] * tau).collect();
        let cx = dot(c, &x);
        let bz = dot(b, &z);
        let rtau = cx + bz + kappa;
        let mu = (dot(&s, &z) + tau * kappa) / (degree + 1.0);

        let pobj = cx / tau;
        let dobj = -bz / tau;
        let pres = norm(&rz) / tau / (1.0 + norm_b);
        let dres = norm(&rx) / tau / (1.0 + norm_c);
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs());
        log::trace!(
            "{iterations:3} pobj {pobj:+.6e} dobj {dobj:+.6e} pres {pres:.2e} dres {dres:.2e} gap {gap:.2e} tau {tau:.2e} kappa {kappa:.2e}"
        );
        if pres <= settings.feas_tol && dres <= settings.feas_tol && gap <= settings.rel_gap_tol {
            status = SolveStatus::Optimal;
            break;
        }
        // infeasibility certificates
        if tau < kappa {
            let ax_s: Vec<f64> = (0..m).map(|i| ax[i] + s[i]).collect();
            if bz < 0.0 && norm(&atz) <= settings.feas_tol * (-bz) {
                status = SolveStatus::PrimalInfeasible;
                break;
            }
            if cx < 0.0 && norm(&ax_s) <= settings.feas_tol * (-cx) {
                status = SolveStatus::DualInfeasible;
                break;
            }
        }
        if iterations >= settings.max_iterations {
            status = SolveStatus::MaxIterations;
            break;
        }
        iterations += 1;

        // scaling and factorization
        let mut interior = true;
        for (sc, r) in ws.scalings.iter_mut().zip(&ws.ranges) {
            if sc.update(&s[r.clone()], &z[r.clone()]).is_err() {
                interior = false;
                break;
            }
        }
        if !interior || !mu.is_finite() {
            log::debug!("iterate left the cone interior");
            status = SolveStatus::NumericalFailure;
            break;
        }
        ws.kkt.factor(&ws.scalings);
        let neg_c: Vec<f64> = c.iter().map(|v| -v).collect();
        let (x2, z2) = ws.kkt.solve(&neg_c, b);

        let mut lam = vec![0.0; m];
        ws.per_cone(&mut lam, |sc, _, out| sc.lambda(out));
        let mut lam_sq = vec![0.0; m];
        ws.per_cone(&mut lam_sq, |sc, r, out| {
            sc.circ(&lam[r.clone()], &lam[r], out)
        });

        // predictor
        let aff = ws.direction(&x2, &z2, &rx, &rz, rtau, &lam_sq, tau * kappa, tau, kappa);
        let alpha_aff = ws.max_step(&s, &z, tau, kappa, &aff).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3);

        // corrector
        let mut ws_a = vec![0.0; m];
        ws.per_cone(&mut ws_a, |sc, r, out| sc.apply_w_inv_t(&aff.ds[r], out));
        let mut wz_a = vec![0.0; m];
        ws.per_cone(&mut wz_a, |sc, r, out| sc.apply_w(&aff.dz[r], out));
        let mut d_s = vec![0.0; m];
        ws.per_cone(&mut d_s, |sc, r, out| {
            sc.circ(&ws_a[r.clone()], &wz_a[r.clone()], out);
            for (k, i) in r.clone().enumerate() {
                out[k] += lam_sq[i];
            }
            sc.add_e(out, -sigma * mu);
        });
        let d_kappa = tau * kappa + aff.dtau * aff.dkappa - sigma * mu;
        let scale = 1.0 - sigma;
        let d_x: Vec<f64> = rx.iter().map(|v| v * scale).collect();
        let d_z: Vec<f64> = rz.iter().map(|v| v * scale).collect();
        let step = ws.direction(
            &x2,
            &z2,
            &d_x,
            &d_z,
            rtau * scale,
            &d_s,
            d_kappa,
            tau,
            kappa,
        );
        let alpha_max = ws.max_step(&s, &z, tau, kappa, &step);
        let alpha = settings.step_fraction * alpha_max.min(1.0);
        log::trace!("    step {alpha:.3e} affine {alpha_aff:.3e} sigma {sigma:.2e}");
        if !alpha.is_finite() || step.dx.iter().any(|v| !v.is_finite()) {
            log::debug!("non-finite search direction");
            status = SolveStatus::NumericalFailure;
            break;
        }
        if alpha < 1e-10 {
            small_steps += 1;
            if small_steps >= 3 {
                log::debug!("step length stalled");
                status = SolveStatus::NumericalFailure;
                break;
            }
        }

        for j in 0..n {
            x[j] += alpha * step.dx[j];
        }
        for i in 0..m {
            s[i] += alpha * step.ds[i];
            z[i] += alpha * step.dz[i];
        }
        tau += alpha * step.dtau;
        kappa += alpha * step.dkappa;
    }

    let (primal, slack, dual) = match status {
        SolveStatus::PrimalInfeasible | SolveStatus::DualInfeasible => (x, s, z),
        _ => (
            x.iter().map(|v| v / tau).collect(),
            s.iter().map(|v| v / tau).collect(),
            z.iter().map(|v| v / tau).collect::<Vec<f64>>(),
        ),
    };
    let primal_obj = dot(c, &primal);
    let dual_obj = -dot(b, &dual);
    Ok(ConicSolution {
        gap: (primal_obj - dual_obj).abs() / (1.0 + primal_obj.abs()),
        primal,
        dual,
        slack,
        status,
        primal_obj,
        dual_obj,
        iterations,
    })
}

/// [`solve`], retried once with [`SolverSettings::loosened`] when the first
/// attempt ends in `MaxIterations` or `NumericalFailure`. The result meets the
/// tolerances of whichever attempt produced it; its `gap` says which.
pub fn solve_with_retry(
    problem: &ConicProblem,
    settings: &SolverSettings,
) -> Result<ConicSolution, ConicError> {
    let first = solve(problem, settings)?;
    if !matches!(
        first.status,
        SolveStatus::MaxIterations | SolveStatus::NumericalFailure
    ) {
        return Ok(first);
    }
    log::debug!(
        "solve ended {:?}; retrying with looser tolerances",
        first.status
    );
    let second = solve(problem, &settings.loosened())?;
    Ok(if second.status == SolveStatus::Optimal {
        second
    } else {
        first
    })
}
