//! Moment-matrix SDP for the minimum-energy avoidance maneuver and rank-one
//! extraction of its solution.
//!
//! Inside the conic problem positions are in km, velocities in m/s and
//! controls in units of 1e-4 m/s² (see [`Scaling`]). The control unit
//! sits near typical avoidance accelerations so the control sub-blocks of
//! the moment matrices are not swamped by the state entries; with mm/s² the
//! interior-point residue left extracted norms up to 5e-4 relative short of
//! an active lower bound. Everything crossing the module boundary is SI.

mod layout;
mod shor;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Matrix3, SMatrix, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use layout::{
    ConstraintClass, MomentLayout, RowGroup, Terms, CONTROL, CONTROL_DIM, ONE, STATE, STATE_DIM,
};
pub use shor::{
    block_spectrum, normalized_top, shor_extract, shor_relax_generic, BlockSpectrum, ShorPoint,
    CERTIFY_RATIO, MIN_LEADING_ENTRY, RATIO_CAP,
};

use crate::conic::svec::{smat, svec_len};
use crate::conic::{
    solve_with_retry, ConicError, ConicProblem, ConicSolution, ProblemBuilder, SolveStatus,
    SolverSettings,
};
use crate::conjunction::{ConjunctionError, ConjunctionGeometry, PocEstimate};
use crate::dynamics::LinearModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelaxationError {
    #[error("infeasible specification: {0}")]
    InfeasibleSpec(String),
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("solver finished with status {0:?}")]
    NotOptimal(SolveStatus),
    #[error("leading entry of the top eigenvector of block {knot} is {value:e}")]
    LeadingEntryNearZero { knot: usize, value: f64 },
    #[error("solution does not match the layout: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Conjunction(#[from] ConjunctionError),
    #[error(transparent)]
    Conic(#[from] ConicError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanMode {
    /// hard collision-risk constraint
    Standard,
    /// risk constraint replaced by an L1 penalty on the Mahalanobis gap
    Contingency,
}

/// Acceleration unit of the penalty weight, m/s².
pub const PENALTY_UNIT: f64 = 1e-3;

/// Size of one problem unit, in SI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    /// m
    pub position: f64,
    /// m/s
    pub velocity: f64,
    /// m/s²
    pub control: f64,
}

impl Default for Scaling {
    fn default() -> Self {
        Scaling {
            position: 1e3,
            velocity: 1.0,
            control: 1e-4,
        }
    }
}

impl Scaling {
    pub fn identity() -> Self {
        Scaling {
            position: 1.0,
            velocity: 1.0,
            control: 1.0,
        }
    }

    fn state_units(&self) -> Vector6<f64> {
        let (p, v) = (self.position, self.velocity);
        Vector6::new(p, p, p, v, v, v)
    }

    pub fn state_to_problem(&self, dx: &Vector6<f64>) -> Vector6<f64> {
        dx.component_div(&self.state_units())
    }

    pub fn state_to_si(&self, dx: &Vector6<f64>) -> Vector6<f64> {
        dx.component_mul(&self.state_units())
    }

    /// Problem cost units to (m/s²)².
    pub fn cost_to_si(&self) -> f64 {
        self.control * self.control
    }

    /// Problem-unit objective coefficient of the Mahalanobis-gap penalty.
    pub fn penalty_coefficient(&self, weight: f64) -> f64 {
        weight * (PENALTY_UNIT / self.control).powi(2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerSpec {
    pub model: LinearModel,
    pub geometry: ConjunctionGeometry,
    /// offset of the start state from the first reference knot, SI
    pub initial_delta_state: Vector6<f64>,
    /// m/s², `None` leaves the control norm unbounded
    pub control_upper_bound: Option<f64>,
    /// m/s²
    pub control_lower_bound: Option<f64>,
    pub mode: PlanMode,
    /// weight of the Mahalanobis-gap penalty, in (mm/s²)² per unit of
    /// Mahalanobis², independent of the problem scaling
    pub penalty_weight: f64,
    pub scaling: Scaling,
    /// adds `tr L_uu ≤ b_u²` next to the norm bound (no effect without an
    /// upper bound)
    pub second_moment_cap: bool,
}

impl PlannerSpec {
    /// Standard mode, unbounded controls, starting on the reference.
    pub fn new(model: LinearModel, geometry: ConjunctionGeometry) -> Self {
        PlannerSpec {
            model,
            geometry,
            initial_delta_state: Vector6::zeros(),
            control_upper_bound: None,
            control_lower_bound: None,
            mode: PlanMode::Standard,
            penalty_weight: 10.0,
            scaling: Scaling::default(),
            second_moment_cap: true,
        }
    }

    pub fn validate(&self) -> Result<(), RelaxationError> {
        let n = self.model.n_knots();
        if n < 2 || self.model.a_mats.len() != n - 1 || self.model.b_mats.len() != n - 1 {
            return Err(RelaxationError::InvalidSpec(format!(
                "linear model with {n} knots is inconsistent"
            )));
        }
        let check = |name: &str, v: Option<f64>| match v {
            Some(b) if !(b.is_finite() && b >= 0.0) => Err(RelaxationError::InvalidSpec(format!(
                "{name} must be finite and nonnegative, got {b}"
            ))),
            _ => Ok(()),
        };
        check("control upper bound", self.control_upper_bound)?;
        check("control lower bound", self.control_lower_bound)?;
        if let (Some(lo), Some(hi)) = (self.control_lower_bound, self.control_upper_bound) {
            if lo > hi {
                return Err(RelaxationError::InfeasibleSpec(format!(
                    "lower bound {lo} exceeds upper bound {hi}"
                )));
            }
        }
        if self.mode == PlanMode::Contingency
            && !(self.penalty_weight > 0.0 && self.penalty_weight.is_finite())
        {
            return Err(RelaxationError::InvalidSpec(format!(
                "penalty weight must be positive, got {}",
                self.penalty_weight
            )));
        }
        if !self.geometry.threshold.is_finite() {
            return Err(RelaxationError::InvalidSpec(
                "collision-risk threshold is not finite".into(),
            ));
        }
        let s = &self.scaling;
        if ![s.position, s.velocity, s.control]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
        {
            return Err(RelaxationError::InvalidSpec(
                "scaling units must be positive".into(),
            ));
        }
        if !self.initial_delta_state.iter().all(|v| v.is_finite()) {
            return Err(RelaxationError::InvalidSpec(
                "initial offset is not finite".into(),
            ));
        }
        Ok(())
    }

    /// `[A B]` of step `k` in problem units.
    pub(crate) fn step_map(&self, k: usize) -> SMatrix<f64, 6, 9> {
        let units = self.scaling.state_units();
        let mut g = SMatrix::<f64, 6, 9>::zeros();
        for i in 0..6 {
            for j in 0..6 {
                g[(i, j)] = self.model.a_mats[k][(i, j)] * units[j] / units[i];
            }
            for j in 0..3 {
                g[(i, 6 + j)] = self.model.b_mats[k][(i, j)] * self.scaling.control / units[i];
            }
        }
        g
    }

    /// Terminal risk functional `g = c₀ + gₗ·x` in problem units.
    fn risk_functional(&self, layout: &MomentLayout) -> (f64, Terms) {
        let geo = &self.geometry;
        let last = layout.n_knots - 1;
        let pu = self.scaling.position;
        let d = geo.frame.projector
            * (self.model.reference.last().position - geo.secondary_state.position)
            / pu;
        let c_inv = geo.cov_inverse() * (pu * pu);
        let q: Matrix3<f64> = geo.frame.projector.transpose() * c_inv * geo.frame.projector;
        let lin = 2.0 * geo.frame.projector.transpose() * c_inv * d;
        let c0 = d.dot(&(c_inv * d));
        let mut acc = Accumulator::default();
        for i in 0..3 {
            acc.add(layout.entry(last, STATE + i, ONE), lin[i]);
            for j in 0..3 {
                acc.add(layout.entry(last, STATE + i, STATE + j), q[(i, j)]);
            }
        }
        (c0, acc.into_terms())
    }
}

/// Sums coefficients per variable in a fixed order.
#[derive(Default)]
struct Accumulator(BTreeMap<usize, f64>);

impl Accumulator {
    fn add(&mut self, (var, coef): (usize, f64), weight: f64) {
        *self.0.entry(var).or_insert(0.0) += coef * weight;
    }

    fn into_terms(self) -> Terms {
        self.0.into_iter().filter(|&(_, c)| c != 0.0).collect()
    }
}

fn record(
    layout: &mut MomentLayout,
    b: &ProblemBuilder,
    class: ConstraintClass,
    knot: usize,
    start: usize,
) {
    if b.num_rows() > start {
        layout.rows.push(RowGroup {
            class,
            knot,
            rows: start..b.num_rows(),
        });
    }
}

/// Assembles the planner SDP. Rows are emitted knot by knot, and within a
/// knot in [`ConstraintClass`] order.
pub fn build_sdp(spec: &PlannerSpec) -> Result<(ConicProblem, MomentLayout), RelaxationError> {
    spec.validate()?;
    let n = spec.model.n_knots();
    let contingency = spec.mode == PlanMode::Contingency;
    let mut layout = MomentLayout::new(n, contingency);
    let mut b = ProblemBuilder::new(layout.num_vars);
    let cu = spec.scaling.control;
    let upper = spec.control_upper_bound.map(|v| v / cu);
    let lower = spec.control_lower_bound.map(|v| v / cu);
    let dx0 = spec.scaling.state_to_problem(&spec.initial_delta_state);
    let p = spec.geometry.threshold;

    for k in 0..n {
        let corner = layout.entry(k, ONE, ONE);
        let start = b.num_rows();
        b.equal(&[corner], 1.0);
        record(&mut layout, &b, ConstraintClass::UnitCorner, k, start);

        if k == 0 {
            let start = b.num_rows();
            for (i, t) in layout.l_x(0).iter().enumerate() {
                b.equal(t, dx0[i]);
            }
            record(&mut layout, &b, ConstraintClass::InitialMean, 0, start);
            let start = b.num_rows();
            let xx = layout.l_xx(0);
            for j in 0..STATE_DIM {
                for i in j..STATE_DIM {
                    b.equal(&xx[i][j], dx0[i] * dx0[j]);
                }
            }
            record(
                &mut layout,
                &b,
                ConstraintClass::InitialSecondMoment,
                0,
                start,
            );
        }

        if layout.has_control(k) {
            if let Some(bu) = upper {
                let start = b.num_rows();
                // both bound rows are divided through by b_u (resp. b_u²): a
                // loose bound otherwise leaves slacks large enough to wreck
                // the Newton system
                let mut cone = vec![(vec![(corner.0, corner.1)], 0.0)];
                cone.extend(
                    layout
                        .l_u(k)
                        .into_iter()
                        .map(|t| (t.into_iter().map(|(v, c)| (v, c / bu)).collect(), 0.0)),
                );
                b.second_order(&cone);
                record(&mut layout, &b, ConstraintClass::ControlBound, k, start);
                if spec.second_moment_cap {
                    let start = b.num_rows();
                    let mut terms: Terms = layout
                        .trace_uu(k)
                        .into_iter()
                        .map(|(v, c)| (v, -c / (bu * bu)))
                        .collect();
                    terms.push((corner.0, corner.1));
                    b.at_least(&terms, 0.0);
                    record(&mut layout, &b, ConstraintClass::SecondMomentCap, k, start);
                }
            }
            if let Some(bl) = lower {
                let start = b.num_rows();
                b.at_least(&layout.trace_uu(k), bl * bl);
                record(
                    &mut layout,
                    &b,
                    ConstraintClass::ControlLowerBound,
                    k,
                    start,
                );
            }

            let g = spec.step_map(k);
            let start = b.num_rows();
            for i in 0..STATE_DIM {
                let mut acc = Accumulator::default();
                acc.add(layout.entry(k + 1, STATE + i, ONE), 1.0);
                for a in 0..9 {
                    acc.add(layout.entry(k, STATE + a, ONE), -g[(i, a)]);
                }
                b.equal(&acc.into_terms(), 0.0);
            }
            record(&mut layout, &b, ConstraintClass::MeanDynamics, k, start);

            let start = b.num_rows();
            for j in 0..STATE_DIM {
                for i in j..STATE_DIM {
                    let mut acc = Accumulator::default();
                    acc.add(layout.entry(k + 1, STATE + i, STATE + j), 1.0);
                    for a in 0..9 {
                        for c in 0..9 {
                            let w = g[(i, a)] * g[(j, c)];
                            if w != 0.0 {
                                acc.add(layout.entry(k, STATE + a, STATE + c), -w);
                            }
                        }
                    }
                    b.equal(&acc.into_terms(), 0.0);
                }
            }
            record(
                &mut layout,
                &b,
                ConstraintClass::SecondMomentDynamics,
                k,
                start,
            );
        } else {
            let (c0, g_lin) = spec.risk_functional(&layout);
            match layout.epigraph {
                None => {
                    let start = b.num_rows();
                    b.at_least(&g_lin, p - c0);
                    record(&mut layout, &b, ConstraintClass::CollisionRisk, k, start);
                }
                Some(t) => {
                    let start = b.num_rows();
                    let mut above: Terms = g_lin.iter().map(|&(v, c)| (v, -c)).collect();
                    above.push((t, 1.0));
                    b.at_least(&above, c0 - p);
                    let mut below = g_lin.clone();
                    below.push((t, 1.0));
                    b.at_least(&below, p - c0);
                    record(&mut layout, &b, ConstraintClass::PenaltyEpigraph, k, start);
                }
            }
        }

        let start = b.num_rows();
        b.psd_block(layout.block_dims[k], layout.offsets[k]);
        record(&mut layout, &b, ConstraintClass::MomentPsd, k, start);
    }

    let mut objective = vec![0.0; layout.num_vars];
    for k in 0..n - 1 {
        for (v, c) in layout.trace_uu(k) {
            objective[v] += c;
        }
    }
    if let Some(t) = layout.epigraph {
        objective[t] = spec.scaling.penalty_coefficient(spec.penalty_weight);
    }
    Ok((b.build(objective)?, layout))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TightnessReport {
    pub per_block_eigenvalue_ratio: Vec<f64>,
    pub min_ratio: f64,
    /// `min_ratio ≥ CERTIFY_RATIO` and no block has a repeated top eigenvalue
    pub certified: bool,
}

impl TightnessReport {
    pub fn from_ratios(ratios: Vec<f64>, any_tied: bool) -> Self {
        let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        TightnessReport {
            certified: min_ratio >= CERTIFY_RATIO && !any_tied,
            per_block_eigenvalue_ratio: ratios,
            min_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManeuverPlan {
    /// m/s², one per step
    pub controls: Vec<Vector3<f64>>,
    /// offsets from the reference, one per knot, SI
    pub delta_states: Vec<Vector6<f64>>,
    pub step_seconds: f64,
    /// Σ‖u_k‖², (m/s²)²
    pub objective: f64,
    /// penalty term of the contingency objective, same units as `objective`
    pub penalty: f64,
    /// `None` for plans not read from a moment relaxation
    pub tightness: Option<TightnessReport>,
    /// risk at the terminal offset under the linear model
    pub achieved: PocEstimate,
    /// Mahalanobis² carried by the terminal moment block itself
    pub relaxed_mahalanobis_sq: Option<f64>,
    pub threshold: f64,
    pub target_pc: f64,
}

impl ManeuverPlan {
    pub fn total_delta_v(&self) -> f64 {
        self.controls
            .iter()
            .map(|u| u.norm() * self.step_seconds)
            .sum()
    }

    pub fn mahalanobis_gap(&self) -> f64 {
        self.achieved.mahalanobis_sq - self.threshold
    }

    pub fn pc_gap(&self) -> f64 {
        self.achieved.pc_closed_form - self.target_pc
    }

    pub fn certified(&self) -> bool {
        self.tightness.as_ref().is_some_and(|t| t.certified)
    }
}

/// Builds a plan from SI controls by rolling out the linear model.
pub fn plan_from_controls(spec: &PlannerSpec, controls: Vec<Vector3<f64>>) -> ManeuverPlan {
    let delta_states = spec.model.rollout(&spec.initial_delta_state, &controls);
    let terminal = spec.model.reference.last().position
        + delta_states.last().expect("nonempty").fixed_rows::<3>(0);
    ManeuverPlan {
        objective: controls.iter().map(|u| u.norm_squared()).sum(),
        penalty: 0.0,
        tightness: None,
        achieved: spec.geometry.estimate(&terminal, true),
        relaxed_mahalanobis_sq: None,
        threshold: spec.geometry.threshold,
        target_pc: spec.geometry.target_pc,
        step_seconds: spec.model.reference.step_seconds,
        controls,
        delta_states,
    }
}

/// Reads the rank-one factor of every block and certifies it.
pub fn extract_solution(
    solution: &ConicSolution,
    layout: &MomentLayout,
    spec: &PlannerSpec,
) -> Result<ManeuverPlan, RelaxationError> {
    if solution.status != SolveStatus::Optimal {
        return Err(RelaxationError::NotOptimal(solution.status));
    }
    if solution.primal.len() != layout.num_vars || layout.n_knots != spec.model.n_knots() {
        return Err(RelaxationError::ShapeMismatch(format!(
            "{} variables for a layout of {}",
            solution.primal.len(),
            layout.num_vars
        )));
    }
    let x = &solution.primal;
    let sc = &spec.scaling;
    let mut ratios = Vec::with_capacity(layout.n_knots);
    let mut any_tied = false;
    let mut delta_states = Vec::with_capacity(layout.n_knots);
    let mut controls = Vec::with_capacity(layout.n_knots - 1);
    let mut objective = 0.0;
    for k in 0..layout.n_knots {
        let dim = layout.block_dims[k];
        let range = layout.block_range(k);
        debug_assert_eq!(range.len(), svec_len(dim));
        let m: DMatrix<f64> = smat(&x[range], dim);
        let spectrum = block_spectrum(&m);
        let z = normalized_top(&spectrum).ok_or(RelaxationError::LeadingEntryNearZero {
            knot: k,
            value: spectrum.top_vector[0],
        })?;
        ratios.push(spectrum.ratio);
        any_tied |= spectrum.tied;
        delta_states.push(sc.state_to_si(&Vector6::from_iterator(
            z.rows(STATE, STATE_DIM).iter().copied(),
        )));
        if layout.has_control(k) {
            controls.push(Vector3::from_iterator(
                z.rows(CONTROL, CONTROL_DIM).iter().map(|v| v * sc.control),
            ));
            objective += (0..CONTROL_DIM)
                .map(|i| m[(CONTROL + i, CONTROL + i)])
                .sum::<f64>();
        }
    }
    let penalty = layout
        .epigraph
        .map_or(0.0, |t| sc.penalty_coefficient(spec.penalty_weight) * x[t]);
    let (c0, g_lin) = spec.risk_functional(layout);
    let relaxed = c0 + g_lin.iter().map(|&(v, c)| c * x[v]).sum::<f64>();
    let terminal = spec.model.reference.last().position
        + delta_states.last().expect("nonempty").fixed_rows::<3>(0);
    Ok(ManeuverPlan {
        controls,
        delta_states,
        step_seconds: spec.model.reference.step_seconds,
        objective: objective * sc.cost_to_si(),
        penalty: penalty * sc.cost_to_si(),
        tightness: Some(TightnessReport::from_ratios(ratios, any_tied)),
        achieved: spec.geometry.estimate(&terminal, true),
        relaxed_mahalanobis_sq: Some(relaxed),
        threshold: spec.geometry.threshold,
        target_pc: spec.geometry.target_pc,
    })
}

/// Solved relaxation together with the raw solver output.
#[derive(Debug, Clone)]
pub struct RelaxedPlan {
    pub plan: ManeuverPlan,
    pub solution: ConicSolution,
    pub layout: MomentLayout,
}

/// Build, solve and extract in one call.
pub fn plan_maneuver(
    spec: &PlannerSpec,
    settings: &SolverSettings,
) -> Result<RelaxedPlan, RelaxationError> {
    let (problem, layout) = build_sdp(spec)?;
    let solution = solve_with_retry(&problem, settings)?;
    let plan = extract_solution(&solution, &layout, spec)?;
    Ok(RelaxedPlan {
        plan,
        solution,
        layout,
    })
}
