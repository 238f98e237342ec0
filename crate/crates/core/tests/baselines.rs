mod common;

use cola_core::baselines::{ellipse_samples, halfplane_plan, halfplane_scan, BaselineError};
use cola_core::conic::SolverSettings;
use cola_core::conjunction::{bplane, ConjunctionGeometry};
use cola_core::dynamics::{Epoch, LinearModel, Matrix6x3, StateVector, Trajectory};
use cola_core::relaxation::{plan_from_controls, plan_maneuver, PlannerSpec};
use common::context;
use nalgebra::{Matrix2, Matrix3, Matrix6, Vector2, Vector3};

/// Identical double integrators on every axis, starting on a static
/// reference offset from the secondary inside the b-plane.
fn toy_spec() -> PlannerSpec {
    let (n, dt) = (11, 100.0);
    let mut a = Matrix6::identity();
    a.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(Matrix3::identity() * dt));
    let mut b = Matrix6x3::zeros();
    b.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(Matrix3::identity() * (0.5 * dt * dt)));
    b.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(Matrix3::identity() * dt));
    let offset = Vector3::new(50.0, 0.0, 30.0);
    let knots = (0..n)
        .map(|k| StateVector::new(Epoch::new(k as f64 * dt), offset, Vector3::zeros()))
        .collect();
    let model = LinearModel {
        a_mats: vec![a; n - 1],
        b_mats: vec![b; n - 1],
        reference: Trajectory {
            knots,
            step_seconds: dt,
        },
    };
    let secondary = StateVector::new(
        Epoch::new((n - 1) as f64 * dt),
        Vector3::zeros(),
        Vector3::zeros(),
    );
    let frame = bplane(&offset, &Vector3::y()).unwrap();
    let mut geometry =
        ConjunctionGeometry::new(frame, Matrix2::identity() * 1e4, 10.0, secondary, 1e-6).unwrap();
    // 200 m radius
    geometry.threshold = 4.0;
    PlannerSpec::new(model, geometry)
}

#[test]
fn tangent_at_the_nearest_point_is_exact_for_symmetric_dynamics() {
    let spec = toy_spec();
    let settings = SolverSettings::default();
    let sdp = plan_maneuver(&spec, &settings).unwrap().plan;
    assert!(sdp.certified());
    let offset = spec
        .geometry
        .bplane_offset(&spec.model.reference.last().position);
    let m0 = offset.dot(&(spec.geometry.cov_inverse() * offset));
    let nearest = offset * (spec.geometry.threshold / m0).sqrt();
    let sample = halfplane_plan(&spec, &nearest, &settings).unwrap();
    assert!(sample.feasible);
    assert!(
        (sample.cost - sdp.objective).abs() <= 1e-6 * sdp.objective,
        "{} vs {}",
        sample.cost,
        sdp.objective
    );
    assert!((sample.outward_normal.norm() - 1.0).abs() < 1e-12);
}

#[test]
fn point_already_inside_the_half_plane_costs_nothing() {
    let ctx = context(20);
    let spec = ctx.planner_spec(1.02e-5).unwrap();
    let offset = spec
        .geometry
        .bplane_offset(&spec.model.reference.last().position);
    let m0 = offset.dot(&(spec.geometry.cov_inverse() * offset));
    assert!(m0 > spec.geometry.threshold);
    let r = offset * (spec.geometry.threshold / m0).sqrt();
    let sample = halfplane_plan(&spec, &r, &SolverSettings::default()).unwrap();
    assert!(sample.feasible);
    assert!(sample.cost <= 1e-15, "{}", sample.cost);
}

#[test]
fn bundled_scan_brackets_the_relaxation() {
    let ctx = context(50);
    let spec = ctx.planner_spec(1e-6).unwrap();
    let settings = SolverSettings::default();
    let sdp = plan_maneuver(&spec, &settings).unwrap().plan.objective;
    let scan = halfplane_scan(&spec, 100, &settings).unwrap();
    assert_eq!(scan.samples.len(), 100);
    let best = scan.best_cost();
    assert!(best <= 1.01 * sdp, "best {best} vs {sdp}");
    let c_inv = spec.geometry.cov_inverse();
    for (i, s) in scan.samples.iter().enumerate() {
        let m = s.boundary_point.dot(&(c_inv * s.boundary_point));
        assert!((m - spec.geometry.threshold).abs() <= 1e-9 * spec.geometry.threshold);
        if !s.feasible {
            continue;
        }
        assert!(
            s.cost >= sdp - 1e-6 * (1.0 + sdp),
            "sample {i}: {} below {sdp}",
            s.cost
        );
        assert!(
            s.cost >= sdp * (1.0 - 1e-5),
            "sample {i}: {} below {sdp}",
            s.cost
        );
        // the half-plane lies outside the ellipse
        let plan = plan_from_controls(&spec, s.controls.clone());
        assert!(
            plan.achieved.mahalanobis_sq >= spec.geometry.threshold * (1.0 - 1e-6),
            "sample {i}"
        );
    }
    let min = scan
        .samples
        .iter()
        .filter(|s| s.feasible)
        .map(|s| s.cost)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(best, min);
    assert_eq!(scan.best_plan.objective, best);

    // every other angle of the 100-point scan is the 50-point scan
    let coarse = halfplane_scan(&spec, 50, &settings).unwrap();
    for (i, s) in coarse.samples.iter().enumerate() {
        assert_eq!(s.boundary_point, scan.samples[2 * i].boundary_point);
    }
    assert!(best <= coarse.best_cost());
}

#[test]
fn nonconvex_specs_are_rejected() {
    let ctx = context(5);
    let mut spec = ctx.planner_spec(1e-6).unwrap();
    spec.control_lower_bound = Some(1e-6);
    let r = Vector2::new(1.0, 0.0);
    let settings = SolverSettings::default();
    assert!(matches!(
        halfplane_plan(&spec, &r, &settings),
        Err(BaselineError::Unsupported(_))
    ));
    spec.control_lower_bound = None;
    spec.mode = cola_core::relaxation::PlanMode::Contingency;
    assert!(matches!(
        halfplane_scan(&spec, 4, &settings),
        Err(BaselineError::Unsupported(_))
    ));
    assert_eq!(
        ellipse_samples(&spec.geometry, 0),
        Err(BaselineError::NoSamples)
    );
}

#[test]
fn tight_bounds_make_every_sample_infeasible() {
    let ctx = context(10);
    let mut spec = ctx.planner_spec(1e-6).unwrap();
    spec.control_upper_bound = Some(1e-9);
    let err = halfplane_scan(&spec, 8, &SolverSettings::default()).unwrap_err();
    assert_eq!(err, BaselineError::AllSamplesInfeasible(8));
}
