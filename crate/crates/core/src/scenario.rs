//! From an encounter at TCA to a planner specification, and back through
//! the nonlinear dynamics.

use nalgebra::{Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cdm::{covariance_to_eci, CdmError, CdmMessage, CdmObject, RefFrame};
use crate::conjunction::{
    density_ceiling, ConjunctionError, ConjunctionGeometry, PocEstimate, DEFAULT_HARD_BODY_RADIUS,
};
use crate::dynamics::{
    discretize_reference, linearize, orbital_period, propagate_backward, propagate_zoh,
    DynamicsError, Epoch, ForceModelConfig, LinearModel, StateVector,
};
use crate::relaxation::{ManeuverPlan, PlannerSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Conjunction(#[from] ConjunctionError),
    #[error(transparent)]
    Cdm(#[from] CdmError),
    #[error("calibration failed: {0}")]
    Calibration(String),
}

/// Both objects at TCA with their RTN position covariances (m²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encounter {
    pub primary: StateVector,
    pub secondary: StateVector,
    pub primary_cov_rtn: Matrix3<f64>,
    pub secondary_cov_rtn: Matrix3<f64>,
    pub hard_body_radius: f64,
}

impl Encounter {
    /// The hard-body radius is the sum of the per-object values, or the
    /// default when the message carries none.
    pub fn from_cdm(msg: &CdmMessage) -> Self {
        let [p, s] = &msg.objects;
        let hbr = p.hard_body_radius_contribution + s.hard_body_radius_contribution;
        Encounter {
            primary: p.state,
            secondary: s.state,
            primary_cov_rtn: p.position_covariance_rtn,
            secondary_cov_rtn: s.position_covariance_rtn,
            hard_body_radius: if hbr > 0.0 {
                hbr
            } else {
                DEFAULT_HARD_BODY_RADIUS
            },
        }
    }

    /// The whole hard-body radius goes to the primary.
    pub fn to_cdm(&self, creation_date: Epoch) -> CdmMessage {
        let object = |name: &str, state: &StateVector, cov: &Matrix3<f64>, hbr: f64| CdmObject {
            designator: name.to_string(),
            ref_frame: RefFrame::Eme2000,
            state: *state,
            position_covariance_rtn: *cov,
            hard_body_radius_contribution: hbr,
        };
        CdmMessage {
            creation_date,
            tca: self.primary.epoch,
            miss_distance: Some((self.primary.position - self.secondary.position).norm()),
            objects: [
                object(
                    "PRIMARY",
                    &self.primary,
                    &self.primary_cov_rtn,
                    self.hard_body_radius,
                ),
                object("SECONDARY", &self.secondary, &self.secondary_cov_rtn, 0.0),
            ],
        }
    }

    pub fn geometry(&self, target_pc: f64) -> Result<ConjunctionGeometry, ScenarioError> {
        let c1 = covariance_to_eci(&self.primary_cov_rtn, &self.primary)?;
        let c2 = covariance_to_eci(&self.secondary_cov_rtn, &self.secondary)?;
        Ok(ConjunctionGeometry::from_states(
            &self.primary,
            &self.secondary,
            &c1,
            &c2,
            self.hard_body_radius,
            target_pc,
        )?)
    }

    /// Risk of the unmaneuvered encounter.
    pub fn screen(&self) -> Result<Screening, ScenarioError> {
        // any reachable target gives the same frame and covariance
        let probe = self.geometry(f64::MIN_POSITIVE)?;
        let offset = probe.bplane_offset(&self.primary.position);
        Ok(Screening {
            estimate: probe.estimate(&self.primary.position, true),
            bplane_offset: [offset[0], offset[1]],
            miss_distance: (self.primary.position - self.secondary.position).norm(),
            density_ceiling: density_ceiling(self.hard_body_radius, &probe.combined_cov)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Screening {
    pub estimate: PocEstimate,
    /// m, secondary at the origin
    pub bplane_offset: [f64; 2],
    /// m
    pub miss_distance: f64,
    pub density_ceiling: f64,
}

/// Reference trajectory ending at TCA and its linearization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningContext {
    pub encounter: Encounter,
    pub force_model: ForceModelConfig,
    /// primary at the start of the horizon
    pub initial: StateVector,
    pub horizon_seconds: f64,
    pub model: LinearModel,
}

impl PlanningContext {
    /// `horizon` defaults to one revolution of the primary.
    pub fn new(
        encounter: Encounter,
        force_model: ForceModelConfig,
        n_knots: usize,
        horizon: Option<f64>,
    ) -> Result<Self, ScenarioError> {
        let horizon_seconds = match horizon {
            Some(h) => h,
            None => orbital_period(&encounter.primary, force_model.mu)?,
        };
        let initial = propagate_backward(&encounter.primary, horizon_seconds, &force_model)?;
        let reference = discretize_reference(&initial, horizon_seconds, n_knots, &force_model)?;
        let model = linearize(&reference, &force_model)?;
        Ok(PlanningContext {
            encounter,
            force_model,
            initial,
            horizon_seconds,
            model,
        })
    }

    pub fn step_seconds(&self) -> f64 {
        self.model.reference.step_seconds
    }

    pub fn planner_spec(&self, target_pc: f64) -> Result<PlannerSpec, ScenarioError> {
        Ok(PlannerSpec::new(
            self.model.clone(),
            self.encounter.geometry(target_pc)?,
        ))
    }

    /// Flies the controls through the nonlinear dynamics from the start of
    /// the horizon and evaluates the risk at the final knot.
    pub fn repropagate(&self, plan: &ManeuverPlan) -> Result<NonlinearCheck, ScenarioError> {
        let geometry = self.encounter.geometry(plan.target_pc)?;
        let start = StateVector::from_vector(
            self.initial.epoch,
            &(self.initial.to_vector() + plan.delta_states[0]),
        );
        let knots = propagate_zoh(
            &start,
            self.step_seconds(),
            &plan.controls,
            &self.force_model,
        )?;
        let terminal = *knots.last().expect("nonempty");
        let offset = geometry.bplane_offset(&terminal.position);
        let reference_terminal = self.model.reference.last().to_vector();
        Ok(NonlinearCheck {
            estimate: geometry.estimate(&terminal.position, true),
            bplane_offset: [offset[0], offset[1]],
            terminal_deviation: terminal.to_vector()
                - reference_terminal
                - plan.delta_states.last().expect("nonempty"),
            terminal,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearCheck {
    pub terminal: StateVector,
    pub estimate: PocEstimate,
    pub bplane_offset: [f64; 2],
    /// nonlinear minus linear terminal offset, SI
    pub terminal_deviation: Vector6<f64>,
}

/// Builds the demonstration encounter: a near-circular 550 km primary and a
/// crossing secondary, with both covariances scaled so the unmaneuvered
/// closed-form Pc equals `initial_pc`.
pub fn bundled_encounter(initial_pc: f64) -> Result<Encounter, ScenarioError> {
    let mu = ForceModelConfig::default().mu;
    let radius = 6_378_137.0 + 550e3;
    let speed = (mu / radius).sqrt();
    let incl = 53f64.to_radians();
    let tca = Epoch::new(829_656_000.0);
    let r_hat = Vector3::x();
    let v1 = speed * Vector3::new(0.0, incl.cos(), incl.sin());
    // secondary crosses at 150° in the local horizontal plane
    let cross = 150f64.to_radians();
    let v2 = nalgebra::Rotation3::new(r_hat * cross) * v1;
    let dv = (v1 - v2).normalize();
    let side = r_hat.cross(&dv);
    let miss = 250.0 * r_hat + 180.0 * side;
    let primary = StateVector::new(tca, radius * r_hat, v1);
    let secondary = StateVector::new(tca, radius * r_hat - miss, v2);
    let shape1 = Matrix3::from_diagonal(&Vector3::new(0.12, 2.5, 0.35).map(|s| s * s));
    let shape2 = Matrix3::from_diagonal(&Vector3::new(0.2, 3.2, 0.5).map(|s| s * s));
    let build = |scale: f64| Encounter {
        primary,
        secondary,
        primary_cov_rtn: shape1 * scale,
        secondary_cov_rtn: shape2 * scale,
        hard_body_radius: DEFAULT_HARD_BODY_RADIUS,
    };
    let pc_at = |log_scale: f64| -> Result<f64, ScenarioError> {
        Ok(build(log_scale.exp()).screen()?.estimate.pc_closed_form)
    };
    // Pc is unimodal in the scale; keep to the covariance-dominated side
    let m0 = build(1.0).screen()?.estimate.mahalanobis_sq;
    let mut lo = (0.5 * m0).ln();
    if pc_at(lo)? < initial_pc {
        return Err(ScenarioError::Calibration(format!(
            "peak Pc {} below {initial_pc}",
            pc_at(lo)?
        )));
    }
    let mut hi = lo + 1.0;
    while pc_at(hi)? > initial_pc {
        hi += 1.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if pc_at(mid)? > initial_pc {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(build(hi.exp()))
}
