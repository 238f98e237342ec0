//! Batch front end: screen a conjunction, plan maneuvers and write reports.

pub mod config;
pub mod report;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use cola_core::baselines::{ellipse_samples, halfplane_scan, BaselineError};
use cola_core::conic::{write_dump, SolverSettings};
use cola_core::relaxation::{build_sdp, plan_maneuver, PlanMode, PlannerSpec, RelaxationError};
use cola_core::scenario::{PlanningContext, ScenarioError, Screening};
use thiserror::Error;

pub use config::ScenarioConfig;
use report::{
    write_bplane, write_controls, write_heatmap, write_json, write_tightness, BaselineReport,
    ContingencyEntry, ContingencyReport, PlanReport, ScreenReport,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Output(String),
    #[error("{0}")]
    Solver(String),
    #[error("{0}")]
    Uncertified(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Output(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Uncertified(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Input(_) => "input",
            CliError::Output(_) => "output",
            CliError::Solver(_) => "solver",
            CliError::Uncertified(_) => "uncertified",
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Output(format!("{}: {e}", path.display()))
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<RelaxationError> for CliError {
    fn from(e: RelaxationError) -> Self {
        match e {
            RelaxationError::NotOptimal(_)
            | RelaxationError::Conic(_)
            | RelaxationError::LeadingEntryNearZero { .. } => CliError::Solver(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::Relaxation(r) => r.into(),
            BaselineError::Conic(_) | BaselineError::AllSamplesInfeasible(_) => {
                CliError::Solver(e.to_string())
            }
            _ => CliError::Input(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "cola",
    version,
    about = "Collision-avoidance maneuver planning through a moment-matrix relaxation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Report the unmaneuvered collision risk
    Screen(CommonArgs),
    /// Plan the minimum-energy maneuver meeting the target Pc
    Plan(CommonArgs),
    /// Penalized plans, one per per-step delta-v cap
    PlanContingency(CommonArgs),
    /// Half-plane sampling baseline next to the relaxation
    Baseline(CommonArgs),
    /// Write the conic program in text form
    DumpProblem(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// scenario config (JSON)
    #[arg(long)]
    pub config: PathBuf,
    /// output directory, created if missing
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub target_pc: Option<f64>,
    #[arg(long)]
    pub knots: Option<usize>,
    /// contingency penalty weight
    #[arg(long)]
    pub alpha: Option<f64>,
    /// per-step delta-v caps in m/s, comma separated
    #[arg(long, value_delimiter = ',')]
    pub dv_cap: Option<Vec<f64>>,
    /// per-step acceleration upper bound in mm/s²
    #[arg(long)]
    pub max_accel_mmps2: Option<f64>,
    /// per-step acceleration lower bound in mm/s²
    #[arg(long)]
    pub min_accel_mmps2: Option<f64>,
    /// baseline sample count
    #[arg(long)]
    pub samples: Option<usize>,
}

impl CommonArgs {
    /// Config with command-line overrides applied.
    pub fn effective_config(&self) -> Result<ScenarioConfig, CliError> {
        let mut cfg = ScenarioConfig::load(&self.config)?;
        if let Some(v) = self.target_pc {
            cfg.target_pc = v;
        }
        if let Some(v) = self.knots {
            cfg.n_knots = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = &self.dv_cap {
            cfg.dv_caps_mps = v.clone();
        }
        if let Some(v) = self.max_accel_mmps2 {
            cfg.control_upper_bound_mmps2 = Some(v);
        }
        if let Some(v) = self.min_accel_mmps2 {
            cfg.control_lower_bound_mmps2 = Some(v);
        }
        if let Some(v) = self.samples {
            cfg.baseline_samples = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Everything a planning command needs.
pub struct Session {
    pub config: ScenarioConfig,
    pub hash: String,
    pub context: PlanningContext,
    pub screening: Screening,
    pub out: PathBuf,
}

impl Session {
    pub fn open(args: &CommonArgs) -> Result<Self, CliError> {
        let config = args.effective_config()?;
        let encounter = config.encounter()?;
        let screening = encounter.screen()?;
        let context = PlanningContext::new(
            encounter,
            config.force_model,
            config.n_knots,
            config.horizon_seconds,
        )?;
        std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
        Ok(Session {
            hash: config.hash(),
            config,
            context,
            screening,
            out: args.out.clone(),
        })
    }

    /// Spec from the config. A delta-v cap, when given, replaces the
    /// acceleration upper bound.
    pub fn spec(&self, mode: PlanMode, dv_cap: Option<f64>) -> Result<PlannerSpec, CliError> {
        let mut spec = self.context.planner_spec(self.config.target_pc)?;
        spec.mode = mode;
        spec.penalty_weight = self.config.alpha;
        spec.control_upper_bound = match dv_cap {
            Some(cap) => Some(cap / self.context.step_seconds()),
            None => self.config.control_upper_bound_mmps2.map(|v| v * 1e-3),
        };
        spec.control_lower_bound = self.config.control_lower_bound_mmps2.map(|v| v * 1e-3);
        spec.validate()?;
        Ok(spec)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Solves, re-propagates and writes the artifacts under `prefix`.
    fn plan_and_write(
        &self,
        spec: &PlannerSpec,
        prefix: &str,
        mode: &str,
    ) -> Result<PlanReport, CliError> {
        let settings = SolverSettings::default();
        let relaxed = plan_maneuver(spec, &settings)?;
        let plan = &relaxed.plan;
        let nonlinear = self.context.repropagate(plan)?;
        let report = PlanReport::new(
            self.hash.clone(),
            &self.context,
            &self.screening,
            &spec.geometry,
            plan,
            (spec.control_upper_bound, spec.control_lower_bound),
            &nonlinear,
            &relaxed.solution,
            mode,
        );
        write_json(&self.path(&format!("{prefix}report.json")), &report)?;
        write_controls(&self.path(&format!("{prefix}controls.csv")), plan)?;
        if let Some(t) = &plan.tightness {
            write_tightness(&self.path(&format!("{prefix}tightness.csv")), t)?;
        }
        let ellipse = ellipse_samples(&spec.geometry, 360)?;
        write_bplane(
            &self.path(&format!("{prefix}bplane.csv")),
            &ellipse,
            self.screening.bplane_offset,
            report.maneuvered_bplane_offset_m,
        )?;
        Ok(report)
    }
}

/// Runs one command, printing a short summary to stdout.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Screen(args) => screen(args),
        Command::Plan(args) => plan(args),
        Command::PlanContingency(args) => plan_contingency(args),
        Command::Baseline(args) => baseline(args),
        Command::DumpProblem(args) => dump_problem(args),
    }
}

fn screen(args: &CommonArgs) -> Result<(), CliError> {
    let config = args.effective_config()?;
    let encounter = config.encounter()?;
    let s = encounter.screen()?;
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let report = ScreenReport {
        config_hash: config.hash(),
        tca: cola_core::cdm::format_epoch(encounter.primary.epoch),
        initial_pc: s.estimate.pc_closed_form,
        initial_pc_quadrature: s.estimate.pc_quadrature,
        mahalanobis_sq: s.estimate.mahalanobis_sq,
        miss_distance_m: s.miss_distance,
        bplane_offset_m: s.bplane_offset,
        density_ceiling: s.density_ceiling,
        hard_body_radius_m: encounter.hard_body_radius,
    };
    write_json(&args.out.join("screen.json"), &report)?;
    println!(
        "Pc {:.4e}  Mahalanobis² {:.4}  miss {:.1} m  b-plane ({:.1}, {:.1}) m",
        report.initial_pc,
        report.mahalanobis_sq,
        report.miss_distance_m,
        s.bplane_offset[0],
        s.bplane_offset[1]
    );
    Ok(())
}

fn certify(report: &PlanReport, label: &str) -> Result<(), CliError> {
    match &report.tightness {
        Some(t) if !t.certified => Err(CliError::Uncertified(format!(
            "{label}: relaxation is not tight (min eigenvalue ratio {:.3e}); try plan-contingency",
            t.min_ratio
        ))),
        _ => Ok(()),
    }
}

fn summary(report: &PlanReport) -> String {
    format!(
        "Pc linear {:.4e} nonlinear {:.4e}  Δv {:.4} m/s  J {:.4e} (m/s²)²  min ratio {:.2e}",
        report.achieved_pc_linear,
        report.achieved_pc_nonlinear,
        report.total_delta_v_mps,
        report.objective_m2ps4,
        report.tightness.as_ref().map_or(f64::NAN, |t| t.min_ratio)
    )
}

fn plan(args: &CommonArgs) -> Result<(), CliError> {
    let session = Session::open(args)?;
    let mode = session.config.mode.into();
    let cap = match mode {
        PlanMode::Contingency => session.config.dv_caps_mps.first().copied(),
        PlanMode::Standard => None,
    };
    let spec = session.spec(mode, cap)?;
    let name = match mode {
        PlanMode::Standard => "standard",
        PlanMode::Contingency => "contingency",
    };
    let report = session.plan_and_write(&spec, "plan_", name)?;
    println!("{}", summary(&report));
    certify(&report, "plan")
}

fn plan_contingency(args: &CommonArgs) -> Result<(), CliError> {
    let session = Session::open(args)?;
    if session.config.dv_caps_mps.is_empty() {
        return Err(CliError::Input(
            "plan-contingency needs dv_caps_mps or --dv-cap".into(),
        ));
    }
    let mut runs = Vec::new();
    for (i, &cap) in session.config.dv_caps_mps.iter().enumerate() {
        let spec = session.spec(PlanMode::Contingency, Some(cap))?;
        let report = session.plan_and_write(&spec, &format!("cap{i}_"), "contingency")?;
        println!(
            "cap {cap} m/s: Mahalanobis² {:.4}  {}",
            report.achieved_mahalanobis_sq_linear,
            summary(&report)
        );
        runs.push(ContingencyEntry {
            dv_cap_mps: cap,
            report,
        });
    }
    let report = ContingencyReport {
        config_hash: session.hash.clone(),
        alpha: session.config.alpha,
        runs,
    };
    write_json(&session.path("contingency.json"), &report)?;
    for entry in &report.runs {
        certify(&entry.report, &format!("cap {}", entry.dv_cap_mps))?;
    }
    Ok(())
}

fn baseline(args: &CommonArgs) -> Result<(), CliError> {
    let session = Session::open(args)?;
    let spec = session.spec(PlanMode::Standard, None)?;
    let settings = SolverSettings::default();
    let sdp = plan_maneuver(&spec, &settings)?.plan;
    let count = session.config.baseline_samples;
    let scan = halfplane_scan(&spec, count, &settings)?;
    write_heatmap(&session.path("heatmap.csv"), &scan)?;
    let best = scan.best_cost();
    let report = BaselineReport {
        config_hash: session.hash.clone(),
        samples: count,
        feasible_samples: scan.samples.iter().filter(|s| s.feasible).count(),
        best_index: scan.best_index,
        best_theta_rad: scan.samples[scan.best_index].theta,
        best_cost_m2ps4: best,
        sdp_objective_m2ps4: sdp.objective,
        relative_excess: (best - sdp.objective) / sdp.objective,
        best_delta_v_mps: scan.best_plan.total_delta_v(),
    };
    write_json(&session.path("baseline.json"), &report)?;
    println!(
        "half-plane best {:.6e}  relaxation {:.6e}  excess {:+.3}%",
        best,
        sdp.objective,
        100.0 * report.relative_excess
    );
    Ok(())
}

fn dump_problem(args: &CommonArgs) -> Result<(), CliError> {
    let session = Session::open(args)?;
    let mode = session.config.mode.into();
    let cap = if mode == PlanMode::Contingency {
        session.config.dv_caps_mps.first().copied()
    } else {
        None
    };
    let (problem, _) = build_sdp(&session.spec(mode, cap)?)?;
    let path = session.path("problem.txt");
    std::fs::write(&path, write_dump(&problem)).map_err(|e| CliError::io(&path, e))?;
    println!(
        "{} rows, {} variables, {} cones",
        problem.num_rows(),
        problem.num_vars(),
        problem.cones.len()
    );
    Ok(())
}
