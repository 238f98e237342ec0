#![allow(dead_code)]

pub mod qcqp;
pub mod random_conic;

use cola_core::conic::{Cone, ConicProblem};
use cola_core::dynamics::ForceModelConfig;
use cola_core::relaxation::{MomentLayout, PlannerSpec};
use cola_core::scenario::{bundled_encounter, PlanningContext};
use nalgebra::Vector3;

pub fn context(n_knots: usize) -> PlanningContext {
    let encounter = bundled_encounter(1e-5).expect("calibration");
    PlanningContext::new(encounter, ForceModelConfig::default(), n_knots, None).expect("reference")
}

/// `b − A·x`, the slack implied by `x`.
pub fn slack(problem: &ConicProblem, x: &[f64]) -> Vec<f64> {
    let ax = problem.constraint_matrix.mul_vec(x);
    problem.rhs.iter().zip(ax).map(|(b, v)| b - v).collect()
}

/// Largest violation of cone membership by `s`; zero rows report |s|.
pub fn cone_violation(problem: &ConicProblem, s: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for (cone, r) in problem.cones.iter().zip(problem.cone_ranges()) {
        let v = &s[r];
        let viol = match cone {
            Cone::Zero(_) => v.iter().fold(0.0f64, |a, x| a.max(x.abs())),
            Cone::Nonneg(_) => v.iter().fold(0.0f64, |a, x| a.max(-x)),
            Cone::SecondOrder(_) => {
                (v[1..].iter().map(|x| x * x).sum::<f64>().sqrt() - v[0]).max(0.0)
            }
            Cone::Psd(n) => {
                let m = cola_core::conic::svec::smat(v, *n);
                (-m.symmetric_eigenvalues().min()).max(0.0)
            }
        };
        worst = worst.max(viol);
    }
    worst
}

pub fn wavy_controls(n: usize, amplitude: f64, phase: f64) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|k| {
            let t = k as f64 * 0.37 + phase;
            amplitude * Vector3::new(t.sin(), (1.3 * t).cos(), 0.5 * (0.7 * t).sin())
        })
        .collect()
}

/// Flat vector holding `z_k z_kᵀ` of a rollout, in problem units.
pub fn rank_one_point(
    spec: &PlannerSpec,
    layout: &MomentLayout,
    controls: &[Vector3<f64>],
) -> Vec<f64> {
    let states = spec.model.rollout(&spec.initial_delta_state, controls);
    let mut x = vec![0.0; layout.num_vars];
    for k in 0..layout.n_knots {
        let mut z = vec![1.0];
        z.extend(spec.scaling.state_to_problem(&states[k]).iter());
        if layout.has_control(k) {
            z.extend(controls[k].iter().map(|u| u / spec.scaling.control));
        }
        layout.write_rank_one(k, &z, &mut x);
    }
    x
}
