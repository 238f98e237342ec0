//! Serialized reports and CSV tables. JSON is SI with unit-suffixed keys;
//! CSV uses km and mm/s² unless a column says otherwise.

use std::path::Path;

use cola_core::baselines::ScanResult;
use cola_core::conic::ConicSolution;
use cola_core::conjunction::ConjunctionGeometry;
use cola_core::relaxation::{ManeuverPlan, TightnessReport};
use cola_core::scenario::{NonlinearCheck, PlanningContext, Screening};
use nalgebra::Vector2;
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioEcho {
    pub tca: String,
    pub n_knots: usize,
    pub horizon_s: f64,
    pub step_s: f64,
    pub hard_body_radius_m: f64,
    pub miss_distance_m: f64,
}

impl ScenarioEcho {
    pub fn new(ctx: &PlanningContext, screening: &Screening) -> Self {
        ScenarioEcho {
            tca: cola_core::cdm::format_epoch(ctx.encounter.primary.epoch),
            n_knots: ctx.model.n_knots(),
            horizon_s: ctx.horizon_seconds,
            step_s: ctx.step_seconds(),
            hard_body_radius_m: ctx.encounter.hard_body_radius,
            miss_distance_m: screening.miss_distance,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScreenReport {
    pub config_hash: String,
    pub tca: String,
    pub initial_pc: f64,
    pub initial_pc_quadrature: Option<f64>,
    pub mahalanobis_sq: f64,
    pub miss_distance_m: f64,
    pub bplane_offset_m: [f64; 2],
    pub density_ceiling: f64,
    pub hard_body_radius_m: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverStats {
    pub status: String,
    pub iterations: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub relative_gap: f64,
}

impl From<&ConicSolution> for SolverStats {
    fn from(s: &ConicSolution) -> Self {
        SolverStats {
            status: format!("{:?}", s.status),
            iterations: s.iterations,
            primal_objective: s.primal_obj,
            dual_objective: s.dual_obj,
            relative_gap: s.gap,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ControlRow {
    pub knot: usize,
    pub t_s: f64,
    pub acceleration_mps2: [f64; 3],
    pub norm_mps2: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanReport {
    pub config_hash: String,
    pub mode: String,
    pub scenario: ScenarioEcho,
    pub initial_pc: f64,
    pub target_pc: f64,
    pub threshold_mahalanobis_sq: f64,
    /// per-step acceleration limit actually imposed
    pub control_upper_bound_mps2: Option<f64>,
    pub control_lower_bound_mps2: Option<f64>,
    pub achieved_pc_linear: f64,
    pub achieved_mahalanobis_sq_linear: f64,
    pub achieved_pc_nonlinear: f64,
    pub achieved_mahalanobis_sq_nonlinear: f64,
    pub maneuvered_bplane_offset_m: [f64; 2],
    pub total_delta_v_mps: f64,
    pub objective_m2ps4: f64,
    pub penalty_m2ps4: f64,
    pub tightness: Option<TightnessReport>,
    pub controls: Vec<ControlRow>,
    pub solver: SolverStats,
}

impl PlanReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        config_hash: String,
        ctx: &PlanningContext,
        screening: &Screening,
        geometry: &ConjunctionGeometry,
        plan: &ManeuverPlan,
        bounds: (Option<f64>, Option<f64>),
        nonlinear: &NonlinearCheck,
        solution: &ConicSolution,
        mode: &str,
    ) -> Self {
        let step = plan.step_seconds;
        let terminal = ctx.model.reference.last().position
            + plan
                .delta_states
                .last()
                .expect("nonempty")
                .fixed_rows::<3>(0);
        let offset = geometry.bplane_offset(&terminal);
        PlanReport {
            config_hash,
            mode: mode.to_string(),
            scenario: ScenarioEcho::new(ctx, screening),
            initial_pc: screening.estimate.pc_closed_form,
            target_pc: plan.target_pc,
            threshold_mahalanobis_sq: plan.threshold,
            control_upper_bound_mps2: bounds.0,
            control_lower_bound_mps2: bounds.1,
            achieved_pc_linear: plan.achieved.pc_closed_form,
            achieved_mahalanobis_sq_linear: plan.achieved.mahalanobis_sq,
            achieved_pc_nonlinear: nonlinear.estimate.pc_closed_form,
            achieved_mahalanobis_sq_nonlinear: nonlinear.estimate.mahalanobis_sq,
            maneuvered_bplane_offset_m: [offset[0], offset[1]],
            total_delta_v_mps: plan.total_delta_v(),
            objective_m2ps4: plan.objective,
            penalty_m2ps4: plan.penalty,
            tightness: plan.tightness.clone(),
            controls: plan
                .controls
                .iter()
                .enumerate()
                .map(|(k, u)| ControlRow {
                    knot: k,
                    t_s: k as f64 * step,
                    acceleration_mps2: [u.x, u.y, u.z],
                    norm_mps2: u.norm(),
                })
                .collect(),
            solver: SolverStats::from(solution),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ContingencyEntry {
    pub dv_cap_mps: f64,
    pub report: PlanReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContingencyReport {
    pub config_hash: String,
    pub alpha: f64,
    pub runs: Vec<ContingencyEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselineReport {
    pub config_hash: String,
    pub samples: usize,
    pub feasible_samples: usize,
    pub best_index: usize,
    pub best_theta_rad: f64,
    pub best_cost_m2ps4: f64,
    pub sdp_objective_m2ps4: f64,
    pub relative_excess: f64,
    pub best_delta_v_mps: f64,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn write_rows<T: Serialize>(
    path: &Path,
    rows: impl IntoIterator<Item = T>,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
    for row in rows {
        w.serialize(row)
            .map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Serialize)]
struct ControlCsv {
    t_s: f64,
    ax_mmps2: f64,
    ay_mmps2: f64,
    az_mmps2: f64,
    norm: f64,
}

pub fn write_controls(path: &Path, plan: &ManeuverPlan) -> Result<(), CliError> {
    write_rows(
        path,
        plan.controls.iter().enumerate().map(|(k, u)| ControlCsv {
            t_s: k as f64 * plan.step_seconds,
            ax_mmps2: u.x * 1e3,
            ay_mmps2: u.y * 1e3,
            az_mmps2: u.z * 1e3,
            norm: u.norm() * 1e3,
        }),
    )
}

#[derive(Serialize)]
struct TightnessCsv {
    knot: usize,
    ratio: f64,
}

pub fn write_tightness(path: &Path, report: &TightnessReport) -> Result<(), CliError> {
    write_rows(
        path,
        report
            .per_block_eigenvalue_ratio
            .iter()
            .enumerate()
            .map(|(knot, &ratio)| TightnessCsv { knot, ratio }),
    )
}

#[derive(Serialize)]
struct BPlaneCsv {
    kind: &'static str,
    bx_km: f64,
    bz_km: f64,
}

/// Target ellipse as a closed polyline, then the unmaneuvered and
/// maneuvered offsets.
pub fn write_bplane(
    path: &Path,
    ellipse: &[Vector2<f64>],
    unmaneuvered: [f64; 2],
    maneuvered: [f64; 2],
) -> Result<(), CliError> {
    let point = |kind, v: [f64; 2]| BPlaneCsv {
        kind,
        bx_km: v[0] * 1e-3,
        bz_km: v[1] * 1e-3,
    };
    let closed = ellipse
        .iter()
        .chain(ellipse.first())
        .map(|p| point("ellipse", [p.x, p.y]));
    write_rows(
        path,
        closed.chain([
            point("unmaneuvered", unmaneuvered),
            point("maneuvered", maneuvered),
        ]),
    )
}

#[derive(Serialize)]
struct HeatCsv {
    theta_rad: f64,
    bx_m: f64,
    bz_m: f64,
    cost: f64,
    feasible: bool,
}

pub fn write_heatmap(path: &Path, scan: &ScanResult) -> Result<(), CliError> {
    write_rows(
        path,
        scan.samples.iter().map(|s| HeatCsv {
            theta_rad: s.theta,
            bx_m: s.boundary_point.x,
            bz_m: s.boundary_point.y,
            cost: s.cost,
            feasible: s.feasible,
        }),
    )
}
