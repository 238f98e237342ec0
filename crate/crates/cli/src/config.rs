//! JSON scenario configuration.
//!
//! ```json
//! {
//!   "cdm_path": "bundled.cdm",
//!   "n_knots": 50,
//!   "target_pc": 1e-6,
//!   "control_upper_bound_mmps2": 0.0864,
//!   "dv_caps_mps": [0.004, 0.006, 0.008, 0.010]
//! }
//! ```
//!
//! Exactly one of `cdm_path` (relative paths resolve against the config
//! file's directory) and `inline` provides the encounter. Omitted fields take
//! the defaults of [`ScenarioConfig::default`].

use std::path::{Path, PathBuf};

use cola_core::cdm::{parse_cdm, parse_epoch};
use cola_core::conjunction::DEFAULT_HARD_BODY_RADIUS;
use cola_core::dynamics::{ForceModelConfig, StateVector};
use cola_core::relaxation::PlanMode;
use cola_core::scenario::Encounter;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// One object of an inline encounter, at TCA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineObject {
    pub position_m: [f64; 3],
    pub velocity_mps: [f64; 3],
    /// row-major RTN position covariance
    pub covariance_rtn_m2: [[f64; 3]; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineEncounter {
    /// `YYYY-MM-DDThh:mm:ss[.fff]`
    pub tca: String,
    pub primary: InlineObject,
    pub secondary: InlineObject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSetting {
    Standard,
    Contingency,
}

impl From<ModeSetting> for PlanMode {
    fn from(m: ModeSetting) -> Self {
        match m {
            ModeSetting::Standard => PlanMode::Standard,
            ModeSetting::Contingency => PlanMode::Contingency,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub cdm_path: Option<PathBuf>,
    pub inline: Option<InlineEncounter>,
    pub force_model: ForceModelConfig,
    pub n_knots: usize,
    /// `None` plans over one revolution of the primary
    pub horizon_seconds: Option<f64>,
    pub target_pc: f64,
    /// overrides the message's per-object values
    pub hard_body_radius_m: Option<f64>,
    pub control_upper_bound_mmps2: Option<f64>,
    pub control_lower_bound_mmps2: Option<f64>,
    /// per-step delta-v limits, converted with the step length
    pub dv_caps_mps: Vec<f64>,
    pub mode: ModeSetting,
    pub alpha: f64,
    pub baseline_samples: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            cdm_path: None,
            inline: None,
            force_model: ForceModelConfig::default(),
            n_knots: 50,
            horizon_seconds: None,
            target_pc: 1e-6,
            hard_body_radius_m: None,
            control_upper_bound_mmps2: None,
            control_lower_bound_mmps2: None,
            dv_caps_mps: Vec::new(),
            mode: ModeSetting::Standard,
            alpha: 10.0,
            baseline_samples: 100,
        }
    }
}

impl ScenarioConfig {
    /// Reads and validates a config file, resolving `cdm_path` against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: ScenarioConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("invalid config {}: {e}", path.display())))?;
        if let Some(p) = &cfg.cdm_path {
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.cdm_path = Some(base.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Input(m));
        match (&self.cdm_path, &self.inline) {
            (Some(_), Some(_)) => return bad("config sets both cdm_path and inline".into()),
            (None, None) => return bad("config needs cdm_path or inline".into()),
            (Some(p), None) if !p.is_file() => {
                return bad(format!("CDM file {} does not exist", p.display()))
            }
            _ => {}
        }
        if self.n_knots < 2 {
            return bad(format!("n_knots must be at least 2, got {}", self.n_knots));
        }
        if !(self.target_pc > 0.0 && self.target_pc < 1.0) {
            return bad(format!(
                "target_pc must lie in (0, 1), got {}",
                self.target_pc
            ));
        }
        if let Some(h) = self.horizon_seconds {
            if !(h > 0.0 && h.is_finite()) {
                return bad(format!("horizon_seconds must be positive, got {h}"));
            }
        }
        if self
            .hard_body_radius_m
            .is_some_and(|r| !(r > 0.0 && r.is_finite()))
        {
            return bad("hard_body_radius_m must be positive".into());
        }
        if self
            .dv_caps_mps
            .iter()
            .any(|c| !(*c > 0.0 && c.is_finite()))
        {
            return bad("dv_caps_mps entries must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.baseline_samples == 0 {
            return bad("baseline_samples must be at least 1".into());
        }
        self.force_model
            .validate()
            .map_err(|e| CliError::Input(e.to_string()))
    }

    pub fn encounter(&self) -> Result<Encounter, CliError> {
        let mut enc = if let Some(path) = &self.cdm_path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("cannot read CDM {}: {e}", path.display())))?;
            let msg = parse_cdm(&text)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            Encounter::from_cdm(&msg)
        } else {
            let inline = self.inline.as_ref().expect("validated");
            let tca = parse_epoch(&inline.tca)
                .ok_or_else(|| CliError::Input(format!("cannot parse TCA {:?}", inline.tca)))?;
            let state = |o: &InlineObject| {
                StateVector::new(
                    tca,
                    Vector3::from(o.position_m),
                    Vector3::from(o.velocity_mps),
                )
            };
            let cov = |o: &InlineObject| Matrix3::from_fn(|i, j| o.covariance_rtn_m2[i][j]);
            Encounter {
                primary: state(&inline.primary),
                secondary: state(&inline.secondary),
                primary_cov_rtn: cov(&inline.primary),
                secondary_cov_rtn: cov(&inline.secondary),
                hard_body_radius: DEFAULT_HARD_BODY_RADIUS,
            }
        };
        if let Some(r) = self.hard_body_radius_m {
            enc.hard_body_radius = r;
        }
        Ok(enc)
    }

    /// SHA-256 of the effective configuration as JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("serializable");
        hex::encode(Sha256::digest(&json))
    }
}
