//! Encounter-plane geometry and the short-term probability of collision.
//!
//! `Δr` and `Δv` are primary minus secondary. The frame has `b_y` along
//! the relative velocity, `b_z` along `Δr × Δv` and `b_x = b_y × b_z`; the
//! projector keeps the `b_x` and `b_z` components.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::StateVector;

/// Default combined hard-body radius, m.
pub const DEFAULT_HARD_BODY_RADIUS: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConjunctionError {
    #[error("relative position and velocity are parallel or zero")]
    DegenerateEncounter,
    #[error("projected covariance is singular (det = {0})")]
    SingularProjectedCovariance(f64),
    #[error("target Pc {target} exceeds the density ceiling {ceiling}")]
    TargetUnreachable { target: f64, ceiling: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BPlaneFrame {
    pub b_x: Vector3<f64>,
    pub b_y: Vector3<f64>,
    pub b_z: Vector3<f64>,
    /// rows `b_xᵀ`, `b_zᵀ`
    pub projector: Matrix2x3<f64>,
}

impl BPlaneFrame {
    /// ECI → encounter frame rotation (rows `b_x, b_y, b_z`).
    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_rows(&[
            self.b_x.transpose(),
            self.b_y.transpose(),
            self.b_z.transpose(),
        ])
    }

    pub fn project(&self, v: &Vector3<f64>) -> Vector2<f64> {
        self.projector * v
    }
}

pub fn bplane(
    delta_r: &Vector3<f64>,
    delta_v: &Vector3<f64>,
) -> Result<BPlaneFrame, ConjunctionError> {
    let vn = delta_v.norm();
    let h = delta_r.cross(delta_v);
    let hn = h.norm();
    if !(vn > 0.0) || !(hn > 1e-12 * delta_r.norm() * vn) {
        return Err(ConjunctionError::DegenerateEncounter);
    }
    let b_y = delta_v / vn;
    let b_z = h / hn;
    let b_x = b_y.cross(&b_z);
    let projector = Matrix2x3::from_rows(&[b_x.transpose(), b_z.transpose()]);
    Ok(BPlaneFrame {
        b_x,
        b_y,
        b_z,
        projector,
    })
}

/// `R̃ (C₁ + C₂) R̃ᵀ`, symmetrized.
pub fn combined_covariance(
    c1_eci: &Matrix3<f64>,
    c2_eci: &Matrix3<f64>,
    frame: &BPlaneFrame,
) -> Result<Matrix2<f64>, ConjunctionError> {
    let c = frame.projector * (c1_eci + c2_eci) * frame.projector.transpose();
    let c = 0.5 * (c + c.transpose());
    let det = c.determinant();
    if !(det > 0.0) || !(c[(0, 0)] > 0.0) {
        return Err(ConjunctionError::SingularProjectedCovariance(det));
    }
    Ok(c)
}

fn checked_det(c: &Matrix2<f64>) -> Result<f64, ConjunctionError> {
    let det = c.determinant();
    if !(det > 0.0) || !(c[(0, 0)] > 0.0) || !det.is_finite() {
        return Err(ConjunctionError::SingularProjectedCovariance(det));
    }
    Ok(det)
}

/// Largest Pc the constant-density model can produce, `R²/(2√det C)`.
pub fn density_ceiling(r_hbr: f64, c: &Matrix2<f64>) -> Result<f64, ConjunctionError> {
    Ok(r_hbr * r_hbr / (2.0 * checked_det(c)?.sqrt()))
}

/// Squared-Mahalanobis level `ln(R⁴ / (4 Pc² det C))` of the target Pc.
pub fn poc_threshold(
    target_pc: f64,
    r_hbr: f64,
    c: &Matrix2<f64>,
) -> Result<f64, ConjunctionError> {
    if !(target_pc > 0.0) || !(r_hbr > 0.0) {
        return Err(ConjunctionError::InvalidArgument(
            "target Pc and hard-body radius must be positive".into(),
        ));
    }
    let ceiling = density_ceiling(r_hbr, c)?;
    if target_pc > ceiling {
        return Err(ConjunctionError::TargetUnreachable {
            target: target_pc,
            ceiling,
        });
    }
    Ok(2.0 * (ceiling / target_pc).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PocEstimate {
    pub mahalanobis_sq: f64,
    pub pc_closed_form: f64,
    pub pc_quadrature: Option<f64>,
}

/// Closed-form Pc at the b-plane offset `delta_r_b`; the quadrature value
/// is filled in only when requested.
pub fn poc_estimate(
    delta_r_b: &Vector2<f64>,
    c: &Matrix2<f64>,
    r_hbr: f64,
    with_quadrature: bool,
) -> Result<PocEstimate, ConjunctionError> {
    let det = checked_det(c)?;
    let c_inv = c
        .try_inverse()
        .ok_or(ConjunctionError::SingularProjectedCovariance(det))?;
    let m = (delta_r_b.transpose() * c_inv * delta_r_b)[0];
    let pc = (r_hbr * r_hbr / (2.0 * det.sqrt()) * (-0.5 * m).exp()).min(1.0);
    let quad =
        with_quadrature.then(|| disk_integral(delta_r_b, &c_inv, det, r_hbr).clamp(0.0, 1.0));
    Ok(PocEstimate {
        mahalanobis_sq: m,
        pc_closed_form: pc,
        pc_quadrature: quad,
    })
}

/// Zero-mean Gaussian mass over the disk of radius `r` about `center`,
/// polar coordinates about the center, nested adaptive Gauss–Kronrod.
fn disk_integral(center: &Vector2<f64>, c_inv: &Matrix2<f64>, det: f64, r: f64) -> f64 {
    let norm = 1.0 / (2.0 * std::f64::consts::PI * det.sqrt());
    let radial = |rho: f64| {
        let angular = |theta: f64| {
            let p = center + Vector2::new(theta.cos(), theta.sin()) * rho;
            (-0.5 * (p.transpose() * c_inv * p)[0]).exp()
        };
        rho * adaptive_gk(&angular, 0.0, 2.0 * std::f64::consts::PI, 1e-12, 30)
    };
    norm * adaptive_gk(&radial, 0.0, r, 1e-12, 30)
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const K15_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut k = 0.0;
    let mut g = 0.0;
    for i in 0..8 {
        let x = GK_NODES[i];
        let fx = if x == 0.0 {
            f(c)
        } else {
            f(c - h * x) + f(c + h * x)
        };
        k += K15_WEIGHTS[i] * fx;
        if i % 2 == 1 {
            g += G7_WEIGHTS[i / 2] * fx;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Recursive Gauss–Kronrod 7/15 with an absolute-plus-relative tolerance.
pub fn adaptive_gk<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (val, err) = gk15(f, a, b);
    if depth == 0 || err <= tol * val.abs().max(1e-300) || err < 1e-300 {
        return val;
    }
    let m = 0.5 * (a + b);
    adaptive_gk(f, a, m, tol, depth - 1) + adaptive_gk(f, m, b, tol, depth - 1)
}

/// Encounter data frozen at the unmaneuvered TCA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjunctionGeometry {
    pub frame: BPlaneFrame,
    pub combined_cov: Matrix2<f64>,
    pub threshold: f64,
    pub hard_body_radius: f64,
    pub secondary_state: StateVector,
    pub target_pc: f64,
}

impl ConjunctionGeometry {
    /// Builds the geometry from both objects' ECI states and position
    /// covariances at TCA.
    pub fn from_states(
        primary: &StateVector,
        secondary: &StateVector,
        c1_eci: &Matrix3<f64>,
        c2_eci: &Matrix3<f64>,
        hard_body_radius: f64,
        target_pc: f64,
    ) -> Result<Self, ConjunctionError> {
        let frame = bplane(
            &(primary.position - secondary.position),
            &(primary.velocity - secondary.velocity),
        )?;
        let combined_cov = combined_covariance(c1_eci, c2_eci, &frame)?;
        Self::new(frame, combined_cov, hard_body_radius, *secondary, target_pc)
    }

    pub fn new(
        frame: BPlaneFrame,
        combined_cov: Matrix2<f64>,
        hard_body_radius: f64,
        secondary_state: StateVector,
        target_pc: f64,
    ) -> Result<Self, ConjunctionError> {
        let threshold = poc_threshold(target_pc, hard_body_radius, &combined_cov)?;
        Ok(ConjunctionGeometry {
            frame,
            combined_cov,
            threshold,
            hard_body_radius,
            secondary_state,
            target_pc,
        })
    }

    pub fn with_target(&self, target_pc: f64) -> Result<Self, ConjunctionError> {
        Self::new(
            self.frame,
            self.combined_cov,
            self.hard_body_radius,
            self.secondary_state,
            target_pc,
        )
    }

    pub fn cov_inverse(&self) -> Matrix2<f64> {
        self.combined_cov
            .try_inverse()
            .expect("validated at construction")
    }

    /// b-plane offset of a primary position from the secondary.
    pub fn bplane_offset(&self, primary_position: &Vector3<f64>) -> Vector2<f64> {
        self.frame
            .project(&(primary_position - self.secondary_state.position))
    }

    pub fn estimate(&self, primary_position: &Vector3<f64>, with_quadrature: bool) -> PocEstimate {
        poc_estimate(
            &self.bplane_offset(primary_position),
            &self.combined_cov,
            self.hard_body_radius,
            with_quadrature,
        )
        .expect("validated at construction")
    }

    /// `Q = R̃ᵀ C⁻¹ R̃`, the 3×3 quadratic form of the PoC constraint.
    pub fn position_form(&self) -> Matrix3<f64> {
        self.frame.projector.transpose() * self.cov_inverse() * self.frame.projector
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_aligned_frame() {
        let f = bplane(&Vector3::x(), &Vector3::y()).unwrap();
        assert_eq!(f.b_y, Vector3::y());
        assert_eq!(f.b_z, Vector3::z());
        assert_eq!(f.b_x, Vector3::x());
        assert_eq!(f.project(&Vector3::x()), Vector2::new(1.0, 0.0));
        assert!(matches!(
            bplane(&Vector3::x(), &(2.0 * Vector3::x())),
            Err(ConjunctionError::DegenerateEncounter)
        ));
    }

    #[test]
    fn half_identities_combine_to_identity() {
        let f = bplane(&Vector3::new(1.0, 2.0, 0.3), &Vector3::new(-0.4, 0.1, 1.0)).unwrap();
        let c = combined_covariance(
            &(0.5 * Matrix3::identity()),
            &(0.5 * Matrix3::identity()),
            &f,
        )
        .unwrap();
        assert!((c - Matrix2::identity()).norm() < 1e-14);
    }

    #[test]
    fn threshold_edges() {
        let c = Matrix2::new(4.0, 1.0, 1.0, 9.0);
        let r = 10.0;
        let ceiling = density_ceiling(r, &c).unwrap();
        assert_eq!(poc_threshold(ceiling, r, &c).unwrap(), 0.0);
        let p1 = poc_threshold(1e-6, r, &c).unwrap();
        let p2 = poc_threshold(2e-6, r, &c).unwrap();
        assert!((p1 - p2 - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!(matches!(
            poc_threshold(ceiling * 1.01, r, &c),
            Err(ConjunctionError::TargetUnreachable { .. })
        ));
    }

    #[test]
    fn closed_form_inverts_threshold() {
        let c = Matrix2::new(4.0e4, 1.0e3, 1.0e3, 9.0e4);
        let r = 10.0;
        let target = 3e-5;
        let p = poc_threshold(target, r, &c).unwrap();
        // boundary point along an arbitrary direction
        let d = Vector2::new(0.3, -0.8);
        let m1 = (d.transpose() * c.try_inverse().unwrap() * d)[0];
        let point = d * (p / m1).sqrt();
        let est = poc_estimate(&point, &c, r, false).unwrap();
        assert!((est.pc_closed_form - target).abs() <= 1e-12 * target);
        assert!((est.mahalanobis_sq - p).abs() <= 1e-12 * p);
    }

    #[test]
    fn gauss_kronrod_integrates_polynomials_and_exponentials() {
        let f = |x: f64| x.powi(5) - 2.0 * x;
        assert!((adaptive_gk(&f, 0.0, 2.0, 1e-12, 20) - (64.0 / 6.0 - 4.0)).abs() < 1e-12);
        let g = |x: f64| (-x * x).exp();
        let erf_like = adaptive_gk(&g, -8.0, 8.0, 1e-12, 30);
        assert!((erf_like - std::f64::consts::PI.sqrt()).abs() < 1e-12);
    }
}
