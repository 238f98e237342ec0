//! Half-plane sampling baseline: the risk ellipse is replaced by its tangent
//! half-plane at a chosen boundary point, which leaves a convex problem.
//! Scanning boundary points approaches the global optimum from above.

use nalgebra::{Matrix2, SymmetricEigen, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{solve_with_retry, ConicError, ProblemBuilder, SolveStatus, SolverSettings};
use crate::conjunction::{ConjunctionError, ConjunctionGeometry};
use crate::relaxation::{plan_from_controls, ManeuverPlan, PlanMode, PlannerSpec, RelaxationError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error(transparent)]
    Conjunction(#[from] ConjunctionError),
    #[error(transparent)]
    Relaxation(#[from] RelaxationError),
    #[error(transparent)]
    Conic(#[from] ConicError),
    #[error("half-plane baseline needs a convex subproblem: {0}")]
    Unsupported(String),
    #[error("sample count must be at least one")]
    NoSamples,
    #[error("all {0} half-plane subproblems are infeasible")]
    AllSamplesInfeasible(usize),
}

/// `count` points `√p·C^{1/2}(cos θ, sin θ)` at uniformly spaced angles
/// starting from θ = 0, in metres.
pub fn ellipse_samples(
    geometry: &ConjunctionGeometry,
    count: usize,
) -> Result<Vec<Vector2<f64>>, BaselineError> {
    if count == 0 {
        return Err(BaselineError::NoSamples);
    }
    let root = sqrt_spd(&geometry.combined_cov)?;
    let scale = geometry.threshold.sqrt();
    Ok((0..count)
        .map(|i| {
            let theta = sample_angle(i, count);
            scale * root * Vector2::new(theta.cos(), theta.sin())
        })
        .collect())
}

fn sample_angle(i: usize, count: usize) -> f64 {
    std::f64::consts::TAU * i as f64 / count as f64
}

fn sqrt_spd(c: &Matrix2<f64>) -> Result<Matrix2<f64>, ConjunctionError> {
    let eig = SymmetricEigen::new(*c);
    if !(eig.eigenvalues.min() > 0.0) {
        return Err(ConjunctionError::SingularProjectedCovariance(
            c.determinant(),
        ));
    }
    Ok(eig.eigenvectors
        * Matrix2::from_diagonal(&eig.eigenvalues.map(f64::sqrt))
        * eig.eigenvectors.transpose())
}

/// One convex subproblem of the scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfPlaneSample {
    /// angle parameter of the boundary point
    pub theta: f64,
    /// m, on the risk ellipse
    pub boundary_point: Vector2<f64>,
    /// unit normal of the ellipse at the boundary point
    pub outward_normal: Vector2<f64>,
    /// Σ‖u_k‖², (m/s²)²; infinite when infeasible
    pub cost: f64,
    pub feasible: bool,
    pub status: SolveStatus,
    /// SI controls, empty unless feasible
    pub controls: Vec<Vector3<f64>>,
}

fn check_convex(spec: &PlannerSpec) -> Result<(), BaselineError> {
    spec.validate()?;
    if spec.mode != PlanMode::Standard {
        return Err(BaselineError::Unsupported(
            "only the hard risk constraint is sampled".into(),
        ));
    }
    if spec.control_lower_bound.is_some() {
        return Err(BaselineError::Unsupported(
            "a control lower bound is nonconvex".into(),
        ));
    }
    Ok(())
}

/// Minimum-energy plan whose terminal b-plane offset lies in the half-plane
/// tangent to the risk ellipse at `boundary_point`. Solver failures are
/// recorded in the sample.
pub fn halfplane_plan(
    spec: &PlannerSpec,
    boundary_point: &Vector2<f64>,
    settings: &SolverSettings,
) -> Result<HalfPlaneSample, BaselineError> {
    check_convex(spec)?;
    let whitened = sqrt_spd(&spec.geometry.combined_cov)?
        .try_inverse()
        .expect("positive definite")
        * boundary_point;
    let theta = whitened
        .y
        .atan2(whitened.x)
        .rem_euclid(std::f64::consts::TAU);
    halfplane_unchecked(spec, boundary_point, theta, settings)
}

fn halfplane_unchecked(
    spec: &PlannerSpec,
    boundary_point: &Vector2<f64>,
    theta: f64,
    settings: &SolverSettings,
) -> Result<HalfPlaneSample, BaselineError> {
    let geo = &spec.geometry;
    let normal = (geo.cov_inverse() * boundary_point).normalize();
    let n_knots = spec.model.n_knots();
    let steps = n_knots - 1;
    let pu = spec.scaling.position;
    let cu = spec.scaling.control;
    // u_k, t_k per step, Δx_k per knot, then a variable pinned to one that
    // carries constant cone entries
    let u = |k: usize, i: usize| 4 * k + i;
    let t = |k: usize| 4 * k + 3;
    let x = |k: usize, i: usize| 4 * steps + 6 * k + i;
    let one = 4 * steps + 6 * n_knots;
    let num_vars = one + 1;
    let mut b = ProblemBuilder::new(num_vars);
    b.equal(&[(one, 1.0)], 1.0);

    let dx0 = spec.scaling.state_to_problem(&spec.initial_delta_state);
    for i in 0..6 {
        b.equal(&[(x(0, i), 1.0)], dx0[i]);
    }
    for k in 0..steps {
        let g = spec.step_map(k);
        for i in 0..6 {
            let mut row = vec![(x(k + 1, i), 1.0)];
            row.extend(
                (0..6)
                    .filter(|&j| g[(i, j)] != 0.0)
                    .map(|j| (x(k, j), -g[(i, j)])),
            );
            row.extend(
                (0..3)
                    .filter(|&j| g[(i, 6 + j)] != 0.0)
                    .map(|j| (u(k, j), -g[(i, 6 + j)])),
            );
            b.equal(&row, 0.0);
        }
    }
    // nᵀ R̃ (x̄_N + Δr_N − x_s) ≥ nᵀ r
    let offset = geo.bplane_offset(&spec.model.reference.last().position);
    let dir = geo.frame.projector.transpose() * normal;
    let lhs: Vec<(usize, f64)> = (0..3).map(|i| (x(n_knots - 1, i), dir[i])).collect();
    b.at_least(&lhs, normal.dot(&(boundary_point - offset)) / pu);
    for k in 0..steps {
        // ‖u‖² ≤ t as ‖((t−1)/2, u)‖ ≤ (t+1)/2
        let mut epi = vec![(vec![(t(k), 0.5)], 0.5), (vec![(t(k), 0.5)], -0.5)];
        epi.extend((0..3).map(|i| (vec![(u(k, i), 1.0)], 0.0)));
        b.second_order(&epi);
        if let Some(bu) = spec.control_upper_bound {
            // ‖u‖ ≤ b_u divided through by b_u, which keeps loose bounds well scaled
            let mut cone = vec![(vec![(one, 1.0)], 0.0)];
            cone.extend((0..3).map(|i| (vec![(u(k, i), cu / bu)], 0.0)));
            b.second_order(&cone);
        }
    }
    let mut c = vec![0.0; num_vars];
    for k in 0..steps {
        c[t(k)] = 1.0;
    }
    let problem = b.build(c)?;
    let solution = solve_with_retry(&problem, settings)?;
    let feasible = solution.status == SolveStatus::Optimal;
    let controls: Vec<Vector3<f64>> = if feasible {
        (0..steps)
            .map(|k| Vector3::from_fn(|i, _| solution.primal[u(k, i)] * cu))
            .collect()
    } else {
        Vec::new()
    };
    if !feasible {
        log::debug!(
            "half-plane sample at θ = {theta:.4} finished with {:?}",
            solution.status
        );
    }
    Ok(HalfPlaneSample {
        theta,
        boundary_point: *boundary_point,
        outward_normal: normal,
        cost: if feasible {
            controls.iter().map(|v| v.norm_squared()).sum()
        } else {
            f64::INFINITY
        },
        feasible,
        status: solution.status,
        controls,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    /// in sampling order
    pub samples: Vec<HalfPlaneSample>,
    pub best_index: usize,
    pub best_plan: ManeuverPlan,
}

impl ScanResult {
    pub fn best_cost(&self) -> f64 {
        self.samples[self.best_index].cost
    }
}

/// Solves the half-plane subproblem at `count` ellipse points in parallel.
pub fn halfplane_scan(
    spec: &PlannerSpec,
    count: usize,
    settings: &SolverSettings,
) -> Result<ScanResult, BaselineError> {
    check_convex(spec)?;
    let points = ellipse_samples(&spec.geometry, count)?;
    let samples = points
        .par_iter()
        .enumerate()
        .map(|(i, r)| halfplane_unchecked(spec, r, sample_angle(i, count), settings))
        .collect::<Result<Vec<_>, _>>()?;
    let best_index = samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.feasible)
        .min_by(|a, b| a.1.cost.total_cmp(&b.1.cost))
        .map(|(i, _)| i)
        .ok_or(BaselineError::AllSamplesInfeasible(count))?;
    let best_plan = plan_from_controls(spec, samples[best_index].controls.clone());
    Ok(ScanResult {
        samples,
        best_index,
        best_plan,
    })
}
