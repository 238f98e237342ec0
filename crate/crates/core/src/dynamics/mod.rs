//! Orbit propagation, reference discretization and the linearized
//! error-state model.
//!
//! The force model is two-body gravity with optional J2 and an optional
//! exponential atmosphere. Higher-order harmonics, radiation pressure and
//! third bodies are not modeled.

mod integrator;

use std::cmp::Ordering;

use nalgebra::{Matrix3, Matrix6, SMatrix, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use integrator::Tolerances;

/// Earth rotation rate used for the co-rotating atmosphere, rad/s.
pub const EARTH_ROTATION_RATE: f64 = 7.292_115e-5;

/// Finite-difference steps for the Jacobians: position (m), velocity (m/s),
/// control (m/s²).
pub const FD_STEP_POSITION: f64 = 1.0;
pub const FD_STEP_VELOCITY: f64 = 1e-3;
pub const FD_STEP_CONTROL: f64 = 1e-6;

pub type Matrix6x3 = SMatrix<f64, 6, 3>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("state is below the Earth's surface (|r| = {radius} m)")]
    SubOrbitalState { radius: f64 },
    #[error("integration failed after {elapsed} s: step size underflow")]
    IntegrationFailure { elapsed: f64 },
    #[error("invalid force model: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Seconds on a continuous timescale from an arbitrary reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Epoch {
    pub seconds_since_reference: f64,
}

impl Epoch {
    pub fn new(seconds_since_reference: f64) -> Self {
        Epoch {
            seconds_since_reference,
        }
    }

    pub fn offset(self, seconds: f64) -> Self {
        Epoch::new(self.seconds_since_reference + seconds)
    }

    pub fn seconds_since(self, earlier: Epoch) -> f64 {
        self.seconds_since_reference - earlier.seconds_since_reference
    }
}

impl PartialOrd for Epoch {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(
            self.seconds_since_reference
                .total_cmp(&other.seconds_since_reference),
        )
    }
}

/// Inertial position (m) and velocity (m/s) at an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub epoch: Epoch,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

impl StateVector {
    pub fn new(epoch: Epoch, position: Vector3<f64>, velocity: Vector3<f64>) -> Self {
        StateVector {
            epoch,
            position,
            velocity,
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.position.x,
            self.position.y,
            self.position.z,
            self.velocity.x,
            self.velocity.y,
            self.velocity.z,
        )
    }

    pub fn from_vector(epoch: Epoch, y: &Vector6<f64>) -> Self {
        StateVector {
            epoch,
            position: y.fixed_rows::<3>(0).into_owned(),
            velocity: y.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position
            .iter()
            .chain(self.velocity.iter())
            .all(|v| v.is_finite())
    }

    /// Specific orbital energy for a point mass `mu`.
    pub fn specific_energy(&self, mu: f64) -> f64 {
        0.5 * self.velocity.norm_squared() - mu / self.position.norm()
    }

    pub fn angular_momentum(&self) -> Vector3<f64> {
        self.position.cross(&self.velocity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceModelConfig {
    pub mu: f64,
    pub j2_enabled: bool,
    pub j2_coefficient: f64,
    pub earth_radius: f64,
    pub drag_enabled: bool,
    /// Cd·A/m, m²/kg
    pub drag_ballistic_coefficient: f64,
    pub drag_reference_density: f64,
    pub drag_scale_height: f64,
    pub drag_reference_altitude: f64,
}

impl Default for ForceModelConfig {
    fn default() -> Self {
        ForceModelConfig {
            mu: 3.986_004_418e14,
            j2_enabled: true,
            j2_coefficient: 1.082_626_68e-3,
            earth_radius: 6_378_137.0,
            drag_enabled: false,
            drag_ballistic_coefficient: 0.01,
            drag_reference_density: 5.2e-13,
            drag_scale_height: 63_800.0,
            drag_reference_altitude: 550_000.0,
        }
    }
}

impl ForceModelConfig {
    /// Point-mass gravity only.
    pub fn two_body() -> Self {
        ForceModelConfig {
            j2_enabled: false,
            drag_enabled: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(DynamicsError::InvalidConfig("mu must be positive".into()));
        }
        if !(self.earth_radius > 0.0) {
            return Err(DynamicsError::InvalidConfig(
                "earth_radius must be positive".into(),
            ));
        }
        if self.drag_enabled && !(self.drag_scale_height > 0.0) {
            return Err(DynamicsError::InvalidConfig(
                "drag scale height must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Total acceleration (central body, J2, drag) at `state`, m/s².
pub fn accel_model(
    state: &StateVector,
    config: &ForceModelConfig,
) -> Result<Vector3<f64>, DynamicsError> {
    accel(&state.position, &state.velocity, config)
}

fn accel(
    r: &Vector3<f64>,
    v: &Vector3<f64>,
    config: &ForceModelConfig,
) -> Result<Vector3<f64>, DynamicsError> {
    let rn = r.norm();
    if !(rn >= config.earth_radius) {
        return Err(DynamicsError::SubOrbitalState { radius: rn });
    }
    let r2 = rn * rn;
    let mut a = -config.mu / (r2 * rn) * r;
    if config.j2_enabled {
        let k = -1.5 * config.j2_coefficient * config.mu * config.earth_radius.powi(2)
            / r2.powi(2)
            / rn;
        let zz = 5.0 * r.z * r.z / r2;
        a += Vector3::new(
            k * r.x * (1.0 - zz),
            k * r.y * (1.0 - zz),
            k * r.z * (3.0 - zz),
        );
    }
    if config.drag_enabled {
        let h = rn - config.earth_radius;
        let rho = config.drag_reference_density
            * (-(h - config.drag_reference_altitude) / config.drag_scale_height).exp();
        let v_rel = v - Vector3::new(0.0, 0.0, EARTH_ROTATION_RATE).cross(r);
        a -= 0.5 * rho * config.drag_ballistic_coefficient * v_rel.norm() * v_rel;
    }
    Ok(a)
}

fn rhs(
    config: &ForceModelConfig,
    control: Vector3<f64>,
) -> impl Fn(&Vector6<f64>) -> Result<Vector6<f64>, DynamicsError> + '_ {
    move |y: &Vector6<f64>| {
        let r = y.fixed_rows::<3>(0).into_owned();
        let v = y.fixed_rows::<3>(3).into_owned();
        let a = accel(&r, &v, config)? + control;
        Ok(Vector6::new(v.x, v.y, v.z, a.x, a.y, a.z))
    }
}

fn check_inputs(
    state: &StateVector,
    duration: f64,
    config: &ForceModelConfig,
) -> Result<(), DynamicsError> {
    config.validate()?;
    if !state.is_finite() {
        return Err(DynamicsError::InvalidArgument(
            "state has non-finite entries".into(),
        ));
    }
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(DynamicsError::InvalidArgument(format!(
            "duration must be finite and >= 0, got {duration}"
        )));
    }
    Ok(())
}

/// Propagates `state` forward by `duration` seconds under a constant
/// additive control acceleration.
pub fn propagate(
    state: &StateVector,
    duration: f64,
    config: &ForceModelConfig,
    control: Vector3<f64>,
) -> Result<StateVector, DynamicsError> {
    propagate_recorded(state, duration, config, control).map(|(s, _)| s)
}

/// Propagates backward in time by `duration` seconds with no control.
pub fn propagate_backward(
    state: &StateVector,
    duration: f64,
    config: &ForceModelConfig,
) -> Result<StateVector, DynamicsError> {
    check_inputs(state, duration, config)?;
    let f = rhs(config, Vector3::zeros());
    let (y, _) = integrator::integrate(f, state.to_vector(), -duration, Tolerances::default())?;
    Ok(StateVector::from_vector(state.epoch.offset(-duration), &y))
}

fn propagate_recorded(
    state: &StateVector,
    duration: f64,
    config: &ForceModelConfig,
    control: Vector3<f64>,
) -> Result<(StateVector, Vec<f64>), DynamicsError> {
    check_inputs(state, duration, config)?;
    let f = rhs(config, control);
    let (y, steps) = integrator::integrate(f, state.to_vector(), duration, Tolerances::default())?;
    Ok((
        StateVector::from_vector(state.epoch.offset(duration), &y),
        steps,
    ))
}

/// Applies a piecewise-constant control sequence, one entry per interval of
/// `step_seconds`, and returns the state at every knot (length `controls + 1`).
pub fn propagate_zoh(
    initial: &StateVector,
    step_seconds: f64,
    controls: &[Vector3<f64>],
    config: &ForceModelConfig,
) -> Result<Vec<StateVector>, DynamicsError> {
    let mut out = Vec::with_capacity(controls.len() + 1);
    out.push(*initial);
    for (k, u) in controls.iter().enumerate() {
        let mut next = propagate(&out[k], step_seconds, config, *u)?;
        next.epoch = initial.epoch.offset((k + 1) as f64 * step_seconds);
        out.push(next);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub knots: Vec<StateVector>,
    pub step_seconds: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    pub fn last(&self) -> &StateVector {
        self.knots
            .last()
            .expect("trajectory has at least two knots")
    }
}

/// Samples the uncontrolled trajectory at `n_knots` evenly spaced epochs
/// spanning `horizon` seconds.
pub fn discretize_reference(
    initial: &StateVector,
    horizon: f64,
    n_knots: usize,
    config: &ForceModelConfig,
) -> Result<Trajectory, DynamicsError> {
    if n_knots < 2 {
        return Err(DynamicsError::InvalidArgument(format!(
            "need at least 2 knots, got {n_knots}"
        )));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(DynamicsError::InvalidArgument(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let step = horizon / (n_knots - 1) as f64;
    let knots = propagate_zoh(initial, step, &vec![Vector3::zeros(); n_knots - 1], config)?;
    Ok(Trajectory {
        knots,
        step_seconds: step,
    })
}

/// Per-step Jacobians of the discrete step map about the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// ∂x_{k+1}/∂x_k, SI
    pub a_mats: Vec<Matrix6<f64>>,
    /// ∂x_{k+1}/∂u_k, rows in m and m/s per m/s²
    pub b_mats: Vec<Matrix6x3>,
    pub reference: Trajectory,
}

impl LinearModel {
    pub fn n_knots(&self) -> usize {
        self.reference.len()
    }

    /// Rolls the error-state model forward from `dx0` under `controls`.
    pub fn rollout(&self, dx0: &Vector6<f64>, controls: &[Vector3<f64>]) -> Vec<Vector6<f64>> {
        let mut out = vec![*dx0];
        for (k, u) in controls.iter().enumerate() {
            let next = self.a_mats[k] * out[k] + self.b_mats[k] * u;
            out.push(next);
        }
        out
    }
}

/// Central-difference Jacobians of the step map at every knot interval.
/// Perturbed propagations replay the nominal step sequence, so the
/// differences are free of step-selection noise.
pub fn linearize(
    traj: &Trajectory,
    config: &ForceModelConfig,
) -> Result<LinearModel, DynamicsError> {
    if traj.len() < 2 {
        return Err(DynamicsError::InvalidArgument(
            "trajectory needs at least 2 knots".into(),
        ));
    }
    let mut a_mats = Vec::with_capacity(traj.len() - 1);
    let mut b_mats = Vec::with_capacity(traj.len() - 1);
    for knot in &traj.knots[..traj.len() - 1] {
        let (a, b) = step_jacobians(knot, traj.step_seconds, config)?;
        a_mats.push(a);
        b_mats.push(b);
    }
    Ok(LinearModel {
        a_mats,
        b_mats,
        reference: traj.clone(),
    })
}

/// Jacobians of `x ↦ propagate(x, dt, u)` at `(state, u = 0)`.
pub fn step_jacobians(
    state: &StateVector,
    dt: f64,
    config: &ForceModelConfig,
) -> Result<(Matrix6<f64>, Matrix6x3), DynamicsError> {
    step_jacobians_with(
        state,
        dt,
        config,
        [FD_STEP_POSITION, FD_STEP_VELOCITY, FD_STEP_CONTROL],
    )
}

/// As [`step_jacobians`] with explicit steps `[position, velocity, control]`.
pub fn step_jacobians_with(
    state: &StateVector,
    dt: f64,
    config: &ForceModelConfig,
    steps: [f64; 3],
) -> Result<(Matrix6<f64>, Matrix6x3), DynamicsError> {
    let (_, record) = propagate_recorded(state, dt, config, Vector3::zeros())?;
    let y0 = state.to_vector();
    let run =
        |y: Vector6<f64>, u: Vector3<f64>| integrator::integrate_fixed(rhs(config, u), y, &record);
    let mut a = Matrix6::zeros();
    for j in 0..6 {
        let h = if j < 3 { steps[0] } else { steps[1] };
        let mut e = Vector6::zeros();
        e[j] = h;
        let col = (run(y0 + e, Vector3::zeros())? - run(y0 - e, Vector3::zeros())?) / (2.0 * h);
        a.set_column(j, &col);
    }
    let mut b = Matrix6x3::zeros();
    for j in 0..3 {
        let h = steps[2];
        let mut e = Vector3::zeros();
        e[j] = h;
        let col = (run(y0, e)? - run(y0, -e)?) / (2.0 * h);
        b.set_column(j, &col);
    }
    Ok((a, b))
}

/// Orbital period of the osculating two-body orbit through `state`.
pub fn orbital_period(state: &StateVector, mu: f64) -> Result<f64, DynamicsError> {
    let energy = state.specific_energy(mu);
    if !(energy < 0.0) {
        return Err(DynamicsError::InvalidArgument(
            "state is not on a bound orbit".into(),
        ));
    }
    let a = -mu / (2.0 * energy);
    Ok(2.0 * std::f64::consts::PI * (a.powi(3) / mu).sqrt())
}

/// Skew-symmetric cross-product matrix.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circular(radius: f64, mu: f64) -> StateVector {
        let v = (mu / radius).sqrt();
        StateVector::new(
            Epoch::new(0.0),
            Vector3::new(radius, 0.0, 0.0),
            Vector3::new(0.0, v, 0.0),
        )
    }

    fn leo() -> StateVector {
        let mu = ForceModelConfig::default().mu;
        let r = 6_928_137.0;
        let v = (mu / r).sqrt();
        let inc: f64 = 53f64.to_radians();
        StateVector::new(
            Epoch::new(0.0),
            Vector3::new(r, 0.0, 0.0),
            Vector3::new(0.0, v * inc.cos(), v * inc.sin()),
        )
    }

    #[test]
    fn point_mass_acceleration() {
        let cfg = ForceModelConfig::two_body();
        let s = StateVector::new(
            Epoch::new(0.0),
            Vector3::new(7.0e6, 0.0, 0.0),
            Vector3::new(1.0, 2.0, 3.0),
        );
        let a = accel_model(&s, &cfg).unwrap();
        assert!((a.x + 8.134_703).abs() < 1e-5);
        assert!((a.norm() - cfg.mu / 4.9e13).abs() < 1e-12);
        assert_eq!(a.y, 0.0);
        assert_eq!(a.z, 0.0);
    }

    #[test]
    fn j2_matches_scalar_formula() {
        let cfg = ForceModelConfig {
            drag_enabled: false,
            ..Default::default()
        };
        let (mu, j2, re) = (cfg.mu, cfg.j2_coefficient, cfg.earth_radius);
        let r = 7.0e6;
        // equator: extra pull of 1.5 J2 mu Re² / r⁴ inward
        let s = StateVector::new(Epoch::new(0.0), Vector3::new(r, 0.0, 0.0), Vector3::zeros());
        let a = accel_model(&s, &cfg).unwrap();
        let expect = -mu / (r * r) - 1.5 * j2 * mu * re * re / r.powi(4);
        assert!((a.x - expect).abs() < 1e-12 * expect.abs());
        // pole: J2 term is +3 J2 mu Re² / r⁴ outward minus point mass
        let s = StateVector::new(Epoch::new(0.0), Vector3::new(0.0, 0.0, r), Vector3::zeros());
        let a = accel_model(&s, &cfg).unwrap();
        let expect = -mu / (r * r) + 3.0 * j2 * mu * re * re / r.powi(4);
        assert!((a.z - expect).abs() < 1e-12 * expect.abs());
        assert_eq!((a.x, a.y), (0.0, 0.0));
    }

    #[test]
    fn drag_opposes_relative_velocity() {
        let cfg = ForceModelConfig {
            j2_enabled: false,
            drag_enabled: true,
            ..Default::default()
        };
        let s = leo();
        let with = accel_model(&s, &cfg).unwrap();
        let without = accel_model(&s, &ForceModelConfig::two_body()).unwrap();
        let d = with - without;
        let v_rel = s.velocity - Vector3::new(0.0, 0.0, EARTH_ROTATION_RATE).cross(&s.position);
        assert!(d.dot(&v_rel) < 0.0);
        assert!(d.cross(&v_rel).norm() < 1e-12 * d.norm() * v_rel.norm());
    }

    #[test]
    fn rejects_suborbital_states() {
        let s = StateVector::new(
            Epoch::new(0.0),
            Vector3::new(6.0e6, 0.0, 0.0),
            Vector3::zeros(),
        );
        assert!(matches!(
            accel_model(&s, &ForceModelConfig::default()),
            Err(DynamicsError::SubOrbitalState { .. })
        ));
    }

    #[test]
    fn zero_duration_is_identity() {
        let s = leo();
        let out = propagate(&s, 0.0, &ForceModelConfig::default(), Vector3::zeros()).unwrap();
        assert_eq!(out, s);
        assert!(propagate(&s, -1.0, &ForceModelConfig::default(), Vector3::zeros()).is_err());
    }

    #[test]
    fn circular_orbit_returns_after_one_period() {
        let cfg = ForceModelConfig::two_body();
        let a = 6.778137e6;
        let s = circular(a, cfg.mu);
        let period = 2.0 * std::f64::consts::PI * (a.powi(3) / cfg.mu).sqrt();
        let out = propagate(&s, period, &cfg, Vector3::zeros()).unwrap();
        let rel = (out.position - s.position).norm() / a;
        assert!(rel < 1e-6, "relative error {rel}");
        assert_eq!(out.epoch.seconds_since_reference, period);
    }

    #[test]
    fn backward_propagation_inverts_forward() {
        let cfg = ForceModelConfig::default();
        let s = leo();
        let fwd = propagate(&s, 1800.0, &cfg, Vector3::zeros()).unwrap();
        let back = propagate_backward(&fwd, 1800.0, &cfg).unwrap();
        assert!((back.position - s.position).norm() < 1e-4);
        assert!(back.epoch.seconds_since_reference.abs() < 1e-9);
    }

    #[test]
    fn discretize_two_knots_is_single_propagation() {
        let cfg = ForceModelConfig::default();
        let s = leo();
        let traj = discretize_reference(&s, 600.0, 2, &cfg).unwrap();
        assert_eq!(traj.knots[0], s);
        assert_eq!(
            traj.knots[1],
            propagate(&s, 600.0, &cfg, Vector3::zeros()).unwrap()
        );
        assert_eq!(traj.step_seconds, 600.0);
        assert!(discretize_reference(&s, 600.0, 1, &cfg).is_err());
    }

    #[test]
    fn short_step_jacobians_approach_identity() {
        let cfg = ForceModelConfig::default();
        let dt = 1e-3;
        let (a, b) = step_jacobians(&leo(), dt, &cfg).unwrap();
        let mut first_order = Matrix6::identity();
        first_order
            .fixed_view_mut::<3, 3>(0, 3)
            .fill_with_identity();
        first_order.fixed_view_mut::<3, 3>(0, 3).scale_mut(dt);
        assert!((a - first_order).norm() < 1e-5);
        assert!(b.norm() < 2.0 * dt);
    }

    #[test]
    fn skew_is_cross_product() {
        let a = Vector3::new(1.0, -2.0, 0.5);
        let b = Vector3::new(0.3, 4.0, -1.0);
        assert!((skew(&a) * b - a.cross(&b)).norm() < 1e-15);
    }
}
