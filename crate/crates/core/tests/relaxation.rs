mod common;

use cola_core::conic::{Cone, ConicSolution, SolveStatus, SolverSettings};
use cola_core::relaxation::{
    build_sdp, extract_solution, plan_maneuver, ConstraintClass, MomentLayout, PlanMode,
    RelaxationError, TightnessReport, CERTIFY_RATIO, RATIO_CAP,
};
use common::{cone_violation, context, rank_one_point, slack, wavy_controls};
use nalgebra::Vector6;
use proptest::prelude::*;

#[test]
fn block_orders_end_with_the_terminal_block() {
    for n in [2, 3, 7] {
        let layout = MomentLayout::new(n, false);
        let mut expect = vec![10; n - 1];
        expect.push(7);
        assert_eq!(layout.block_dims, expect);
    }
}

#[test]
fn row_counts_match_hand_enumeration() {
    let ctx = context(3);
    let spec = ctx.planner_spec(1e-6).unwrap();
    let (problem, layout) = build_sdp(&spec).unwrap();
    // knot 0: corner, 6 + 21 initial, 6 + 21 dynamics, psd(10)
    // knot 1: corner, 6 + 21 dynamics, psd(10)
    // knot 2: corner, risk row, psd(7)
    assert_eq!(layout.rows_of(ConstraintClass::UnitCorner), 3);
    assert_eq!(
        layout.rows_of(ConstraintClass::InitialMean)
            + layout.rows_of(ConstraintClass::InitialSecondMoment),
        27
    );
    assert_eq!(layout.rows_of(ConstraintClass::MeanDynamics), 12);
    assert_eq!(layout.rows_of(ConstraintClass::SecondMomentDynamics), 42);
    assert_eq!(layout.rows_of(ConstraintClass::CollisionRisk), 1);
    assert_eq!(layout.rows_of(ConstraintClass::ControlBound), 0);
    let psd_rows = 55 + 55 + 28;
    assert_eq!(layout.rows_of(ConstraintClass::MomentPsd), psd_rows);
    assert_eq!(problem.num_rows(), 3 + 27 + 12 + 42 + 1 + psd_rows);
    let zero: usize = problem
        .cones
        .iter()
        .map(|c| if let Cone::Zero(d) = c { *d } else { 0 })
        .sum();
    assert_eq!(zero, 84);
    let psd: Vec<usize> = problem
        .cones
        .iter()
        .filter_map(|c| if let Cone::Psd(n) = c { Some(*n) } else { None })
        .collect();
    assert_eq!(psd, vec![10, 10, 7]);
    assert_eq!(problem.num_vars(), 55 + 55 + 28);

    // groups tile the rows in knot-major order
    let mut next = 0;
    let mut last_knot = 0;
    for g in &layout.rows {
        assert_eq!(g.rows.start, next);
        assert!(g.knot >= last_knot);
        next = g.rows.end;
        last_knot = g.knot;
    }
    assert_eq!(next, problem.num_rows());
}

#[test]
fn bounds_add_one_cone_and_rows_per_step() {
    let ctx = context(4);
    let mut spec = ctx.planner_spec(1e-6).unwrap();
    spec.control_upper_bound = Some(1e-4);
    spec.control_lower_bound = Some(1e-5);
    spec.mode = PlanMode::Contingency;
    let (problem, layout) = build_sdp(&spec).unwrap();
    assert_eq!(layout.rows_of(ConstraintClass::ControlBound), 3 * 4);
    assert_eq!(layout.rows_of(ConstraintClass::SecondMomentCap), 3);
    assert_eq!(layout.rows_of(ConstraintClass::ControlLowerBound), 3);
    assert_eq!(layout.rows_of(ConstraintClass::CollisionRisk), 0);
    assert_eq!(layout.rows_of(ConstraintClass::PenaltyEpigraph), 2);
    assert_eq!(
        problem.objective[layout.epigraph.unwrap()],
        spec.penalty_weight * (1e-3 / spec.scaling.control).powi(2)
    );
    assert_eq!(
        problem
            .cones
            .iter()
            .filter(|c| matches!(c, Cone::SecondOrder(4)))
            .count(),
        3
    );
}

#[test]
fn rollouts_satisfy_every_equality() {
    for n in [3, 10, 50] {
        let ctx = context(n);
        let mut spec = ctx.planner_spec(1e-6).unwrap();
        spec.initial_delta_state = Vector6::new(120.0, -80.0, 35.0, 0.05, -0.02, 0.01);
        spec.control_upper_bound = Some(2e-4);
        spec.control_lower_bound = Some(1e-6);
        let controls = wavy_controls(n - 1, 1e-4, 0.3);
        let (problem, layout) = build_sdp(&spec).unwrap();
        let x = rank_one_point(&spec, &layout, &controls);
        let s = slack(&problem, &x);
        for g in layout
            .rows
            .iter()
            .filter(|g| g.class != ConstraintClass::CollisionRisk)
        {
            let (cls, start) = (g.class, g.rows.start);
            let worst = s[g.rows.clone()].iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let is_equality = matches!(
                cls,
                ConstraintClass::UnitCorner
                    | ConstraintClass::InitialMean
                    | ConstraintClass::InitialSecondMoment
                    | ConstraintClass::MeanDynamics
                    | ConstraintClass::SecondMomentDynamics
            );
            if is_equality {
                assert!(worst <= 1e-9, "N={n} {cls:?} at row {start}: {worst:e}");
            }
        }
        // bounds hold, so apart from the risk row the point is feasible
        let risk = layout
            .rows
            .iter()
            .find(|g| g.class == ConstraintClass::CollisionRisk)
            .unwrap()
            .rows
            .start;
        let mut s_wo = s.clone();
        s_wo[risk] = s_wo[risk].max(0.0);
        assert!(cone_violation(&problem, &s_wo) <= 1e-9, "N={n}");
    }
}

#[test]
fn exact_rank_one_solution_is_read_back() {
    let ctx = context(6);
    let spec = ctx.planner_spec(1e-6).unwrap();
    let (_, layout) = build_sdp(&spec).unwrap();
    let controls = wavy_controls(5, 2e-4, 1.0);
    let x = rank_one_point(&spec, &layout, &controls);
    let solution = ConicSolution {
        primal: x,
        dual: vec![],
        slack: vec![],
        status: SolveStatus::Optimal,
        primal_obj: 0.0,
        dual_obj: 0.0,
        gap: 0.0,
        iterations: 0,
    };
    let plan = extract_solution(&solution, &layout, &spec).unwrap();
    for (u, v) in plan.controls.iter().zip(&controls) {
        assert!((u - v).norm() <= 1e-10 * v.norm().max(1e-12), "{u} vs {v}");
    }
    let states = spec.model.rollout(&spec.initial_delta_state, &controls);
    for (a, b) in plan.delta_states.iter().zip(&states) {
        assert!((a - b).norm() <= 1e-10 * (1.0 + b.norm()));
    }
    let tight = plan.tightness.as_ref().unwrap();
    assert!(tight
        .per_block_eigenvalue_ratio
        .iter()
        .all(|&r| r == RATIO_CAP));
    assert!(tight.certified);
    let energy: f64 = controls.iter().map(|u| u.norm_squared()).sum();
    assert!((plan.objective - energy).abs() <= 1e-10 * energy);
}

#[test]
fn extraction_rejects_unusable_solutions() {
    let ctx = context(3);
    let spec = ctx.planner_spec(1e-6).unwrap();
    let (_, layout) = build_sdp(&spec).unwrap();
    let mut solution = ConicSolution {
        primal: vec![0.0; layout.num_vars],
        dual: vec![],
        slack: vec![],
        status: SolveStatus::MaxIterations,
        primal_obj: 0.0,
        dual_obj: 0.0,
        gap: 0.0,
        iterations: 0,
    };
    assert_eq!(
        extract_solution(&solution, &layout, &spec).unwrap_err(),
        RelaxationError::NotOptimal(SolveStatus::MaxIterations)
    );
    // block 0 concentrated on a state direction: leading entry vanishes
    solution.status = SolveStatus::Optimal;
    let mut z = vec![0.0; 10];
    z[3] = 1.0;
    layout.write_rank_one(0, &z, &mut solution.primal);
    for k in 1..3 {
        let mut z = vec![0.0; layout.block_dims[k]];
        z[0] = 1.0;
        layout.write_rank_one(k, &z, &mut solution.primal);
    }
    assert!(matches!(
        extract_solution(&solution, &layout, &spec),
        Err(RelaxationError::LeadingEntryNearZero { knot: 0, .. })
    ));
}

#[test]
fn crossed_bounds_are_infeasible() {
    let ctx = context(3);
    let mut spec = ctx.planner_spec(1e-6).unwrap();
    spec.control_upper_bound = Some(1e-5);
    spec.control_lower_bound = Some(2e-5);
    assert!(matches!(
        build_sdp(&spec),
        Err(RelaxationError::InfeasibleSpec(_))
    ));
    spec.control_lower_bound = None;
    spec.mode = PlanMode::Contingency;
    spec.penalty_weight = 0.0;
    assert!(matches!(
        build_sdp(&spec),
        Err(RelaxationError::InvalidSpec(_))
    ));
}

#[test]
fn already_safe_encounter_needs_no_maneuver() {
    let ctx = context(20);
    // unmaneuvered Pc is 1e-5; the density ceiling sits just above it
    let spec = ctx.planner_spec(1.02e-5).unwrap();
    let initial = ctx.encounter.screen().unwrap().estimate.mahalanobis_sq;
    assert!(initial >= spec.geometry.threshold);
    let result = plan_maneuver(&spec, &SolverSettings::default()).unwrap();
    assert!(result.plan.objective <= 1e-12, "{}", result.plan.objective);
    assert!(result.plan.controls.iter().all(|u| u.norm() <= 1e-7));
}

#[test]
fn standard_plan_lands_on_the_target_ellipse() {
    let ctx = context(50);
    let spec = ctx.planner_spec(1e-6).unwrap();
    let result = plan_maneuver(&spec, &SolverSettings::default()).unwrap();
    let plan = &result.plan;
    let tight = plan.tightness.as_ref().unwrap();
    assert!(tight.certified, "min ratio {}", tight.min_ratio);
    let p = spec.geometry.threshold;
    assert!(
        (plan.achieved.mahalanobis_sq - p).abs() <= 1e-4 * p,
        "{} vs {p}",
        plan.achieved.mahalanobis_sq
    );
    // extracted states follow the linear dynamics
    let rollout = spec.model.rollout(&plan.delta_states[0], &plan.controls);
    for (a, b) in plan.delta_states.iter().zip(&rollout) {
        assert!(
            (a - b).norm() <= 1e-5 * (1.0 + b.norm()),
            "{}",
            (a - b).norm()
        );
    }

    // exact penalty: unbounded contingency reproduces the terminal level
    let mut soft = spec.clone();
    soft.mode = PlanMode::Contingency;
    let relaxed = plan_maneuver(&soft, &SolverSettings::default()).unwrap();
    let m = relaxed.plan.achieved.mahalanobis_sq;
    assert!((m - plan.achieved.mahalanobis_sq).abs() <= 1e-4 * p, "{m}");
    assert!((relaxed.plan.objective - plan.objective).abs() <= 1e-4 * plan.objective);
}

#[test]
fn certified_objective_is_the_control_energy() {
    let ctx = context(50);
    let step = ctx.step_seconds();
    let cases: [(PlanMode, Option<f64>, Option<f64>, f64); 5] = [
        (PlanMode::Standard, None, None, 1e-6),
        (PlanMode::Standard, Some(8.64e-5), Some(1.38e-5), 8e-6),
        (PlanMode::Contingency, Some(0.004 / step), None, 1e-6),
        (PlanMode::Contingency, Some(0.008 / step), None, 1e-6),
        (PlanMode::Contingency, Some(0.05 / step), None, 1e-6),
    ];
    for (mode, upper, lower, target) in cases {
        let mut spec = ctx.planner_spec(target).unwrap();
        spec.mode = mode;
        spec.control_upper_bound = upper;
        spec.control_lower_bound = lower;
        let plan = plan_maneuver(&spec, &SolverSettings::default())
            .unwrap()
            .plan;
        assert!(plan.certified(), "{mode:?} {upper:?}");
        let energy: f64 = plan.controls.iter().map(|u| u.norm_squared()).sum();
        assert!(
            (plan.objective - energy).abs() <= 1e-6 * energy,
            "{mode:?} {upper:?}: {} vs {energy}",
            plan.objective
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn certificate_matches_threshold(ratios in prop::collection::vec(1.0f64..1e8, 1..60)) {
        let report = TightnessReport::from_ratios(ratios.clone(), false);
        let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(report.min_ratio, min);
        prop_assert_eq!(report.certified, min >= CERTIFY_RATIO);
        prop_assert!(!TightnessReport::from_ratios(ratios, true).certified);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn any_rollout_meets_the_equalities(
        amp in 1e-6f64..5e-4,
        phase in 0.0f64..6.0,
        dx in prop::array::uniform6(-1.0f64..1.0),
    ) {
        let ctx = context(5);
        let mut spec = ctx.planner_spec(1e-6).unwrap();
        spec.initial_delta_state = Vector6::new(500.0 * dx[0], 500.0 * dx[1], 500.0 * dx[2], 0.5 * dx[3], 0.5 * dx[4], 0.5 * dx[5]);
        let (problem, layout) = build_sdp(&spec).unwrap();
        let x = rank_one_point(&spec, &layout, &wavy_controls(4, amp, phase));
        let s = slack(&problem, &x);
        let zero_rows: usize = problem.cones.iter().take_while(|c| matches!(c, Cone::Zero(_))).map(|c| c.dim()).sum();
        prop_assert!(zero_rows > 0);
        for g in &layout.rows {
            if matches!(g.class, ConstraintClass::UnitCorner | ConstraintClass::InitialMean | ConstraintClass::InitialSecondMoment | ConstraintClass::MeanDynamics | ConstraintClass::SecondMomentDynamics) {
                for r in g.rows.clone() {
                    prop_assert!(s[r].abs() <= 1e-9, "{:?} {}", g.class, s[r]);
                }
            }
        }
    }
}
