//! Conjunction data messages in key-value notation (a CCSDS subset).
//!
//! Recognized keys: `CREATION_DATE`, `TCA`, `MISS_DISTANCE` in the header,
//! then two sections opened by `OBJECT = ...` carrying `OBJECT_DESIGNATOR`,
//! `REF_FRAME`, `X Y Z` (km), `X_DOT Y_DOT Z_DOT` (km/s), the RTN position
//! covariance `CR_R CT_R CT_T CN_R CN_T CN_N` (m²) and an optional `HBR` (m).
//! Other keys are ignored. Values may carry a bracketed unit, which must match.

use std::collections::HashMap;
use std::fmt::Write as _;

use chrono::{NaiveDate, NaiveDateTime, TimeDelta};
use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{Epoch, StateVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CdmError {
    #[error("missing mandatory key {0}")]
    MissingKey(String),
    #[error("duplicate key {0}")]
    DuplicateKey(String),
    #[error("malformed line {0}")]
    MalformedLine(usize),
    #[error("unsupported reference frame {0}")]
    UnsupportedFrame(String),
    #[error("covariance is not positive semidefinite")]
    NonPsdCovariance,
    #[error("expected two objects, found {0}")]
    ObjectCount(usize),
    #[error("TCA precedes CREATION_DATE")]
    TcaBeforeCreation,
    #[error("state has zero angular momentum")]
    DegenerateState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RefFrame {
    Eme2000,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdmObject {
    pub designator: String,
    pub ref_frame: RefFrame,
    pub state: StateVector,
    pub position_covariance_rtn: Matrix3<f64>,
    pub hard_body_radius_contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdmMessage {
    pub creation_date: Epoch,
    pub tca: Epoch,
    pub miss_distance: Option<f64>,
    pub objects: [CdmObject; 2],
}

const OBJECT_KEYS: [&str; 14] = [
    "OBJECT_DESIGNATOR",
    "REF_FRAME",
    "X",
    "Y",
    "Z",
    "X_DOT",
    "Y_DOT",
    "Z_DOT",
    "CR_R",
    "CT_R",
    "CT_T",
    "CN_R",
    "CN_T",
    "CN_N",
];

/// Keys whose absence is an error. `OBJECT` opens a section.
pub fn mandatory_keys() -> Vec<&'static str> {
    let mut keys = vec!["TCA"];
    keys.extend(OBJECT_KEYS);
    keys
}

fn reference_time() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2000, 1, 1)
        .unwrap()
        .and_hms_opt(12, 0, 0)
        .unwrap()
}

/// Parses `YYYY-MM-DDThh:mm:ss[.fff]` or `YYYY-DDDThh:mm:ss[.fff]` into
/// seconds from 2000-01-01T12:00:00 (leap seconds ignored).
pub fn parse_epoch(text: &str) -> Option<Epoch> {
    let t = text.trim().trim_end_matches('Z');
    let dt = NaiveDateTime::parse_from_str(t, "%Y-%m-%dT%H:%M:%S%.f")
        .or_else(|_| NaiveDateTime::parse_from_str(t, "%Y-%jT%H:%M:%S%.f"))
        .ok()?;
    let d = dt - reference_time();
    Some(Epoch::new(
        d.num_seconds() as f64 + d.subsec_nanos() as f64 * 1e-9,
    ))
}

/// Formats an epoch with microsecond resolution.
pub fn format_epoch(epoch: Epoch) -> String {
    let s = epoch.seconds_since_reference;
    let whole = s.floor();
    let mut micros = ((s - whole) * 1e6).round() as i64;
    let mut whole = whole as i64;
    if micros == 1_000_000 {
        whole += 1;
        micros = 0;
    }
    let dt = reference_time() + TimeDelta::seconds(whole) + TimeDelta::microseconds(micros);
    dt.format("%Y-%m-%dT%H:%M:%S%.6f").to_string()
}

/// Parses a decimal and multiplies it by `10^shift` with a single rounding.
fn parse_scaled(text: &str, shift: i32) -> Option<f64> {
    let (mantissa, exp) = match text.find(['e', 'E']) {
        Some(i) => (&text[..i], text[i + 1..].parse::<i32>().ok()?),
        None => (text, 0),
    };
    mantissa.parse::<f64>().ok()?;
    let v: f64 = format!("{mantissa}e{}", exp + shift).parse().ok()?;
    v.is_finite().then_some(v)
}

/// Shortest decimal of `value · 10^-shift` that [`parse_scaled`] maps back
/// to `value` exactly.
fn format_scaled(value: f64, shift: i32) -> String {
    let s = format!("{value:e}");
    let (mantissa, exp) = s.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    format!("{mantissa}e{}", exp - shift)
}

struct Entry {
    value: String,
    unit: Option<String>,
    line: usize,
}

#[derive(Default)]
struct Section {
    entries: HashMap<String, Entry>,
}

impl Section {
    fn insert(&mut self, key: &str, entry: Entry) -> Result<(), CdmError> {
        if self.entries.contains_key(key) {
            return Err(CdmError::DuplicateKey(key.to_string()));
        }
        self.entries.insert(key.to_string(), entry);
        Ok(())
    }

    fn get(&self, key: &str) -> Result<&Entry, CdmError> {
        self.entries
            .get(key)
            .ok_or_else(|| CdmError::MissingKey(key.to_string()))
    }

    fn number(&self, key: &str, unit: &str, shift: i32) -> Result<f64, CdmError> {
        let e = self.get(key)?;
        if e.unit
            .as_deref()
            .is_some_and(|u| !u.eq_ignore_ascii_case(unit))
        {
            return Err(CdmError::MalformedLine(e.line));
        }
        parse_scaled(&e.value, shift).ok_or(CdmError::MalformedLine(e.line))
    }

    fn optional_number(&self, key: &str, unit: &str) -> Result<Option<f64>, CdmError> {
        if self.entries.contains_key(key) {
            self.number(key, unit, 0).map(Some)
        } else {
            Ok(None)
        }
    }

    fn epoch(&self, key: &str) -> Result<Epoch, CdmError> {
        let e = self.get(key)?;
        parse_epoch(&e.value).ok_or(CdmError::MalformedLine(e.line))
    }
}

fn split_line(line: &str) -> Option<(&str, &str, Option<&str>)> {
    let (key, rest) = line.split_once('=')?;
    let key = key.trim();
    if key.is_empty() || key.contains(char::is_whitespace) {
        return None;
    }
    let rest = rest.trim();
    if let Some(open) = rest.find('[') {
        let close = rest.rfind(']')?;
        if close < open || !rest[close + 1..].trim().is_empty() {
            return None;
        }
        Some((key, rest[..open].trim(), Some(rest[open + 1..close].trim())))
    } else {
        Some((key, rest, None))
    }
}

pub fn parse_cdm(text: &str) -> Result<CdmMessage, CdmError> {
    let mut header = Section::default();
    let mut objects: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line == "COMMENT" || line.starts_with("COMMENT ") {
            continue;
        }
        let (key, value, unit) = split_line(line).ok_or(CdmError::MalformedLine(line_no))?;
        if value.is_empty() {
            return Err(CdmError::MalformedLine(line_no));
        }
        if key == "OBJECT" {
            objects.push(Section::default());
            continue;
        }
        let entry = Entry {
            value: value.to_string(),
            unit: unit.map(str::to_string),
            line: line_no,
        };
        match objects.last_mut() {
            Some(obj) => obj.insert(key, entry)?,
            None => header.insert(key, entry)?,
        }
    }
    let tca = header.epoch("TCA")?;
    let creation_date = if header.entries.contains_key("CREATION_DATE") {
        header.epoch("CREATION_DATE")?
    } else {
        tca
    };
    let miss_distance = header.optional_number("MISS_DISTANCE", "m")?;
    if objects.is_empty() {
        return Err(CdmError::MissingKey("OBJECT".into()));
    }
    if objects.len() != 2 {
        return Err(CdmError::ObjectCount(objects.len()));
    }
    let parsed: Vec<CdmObject> = objects
        .iter()
        .map(|o| parse_object(o, tca))
        .collect::<Result<_, _>>()?;
    if tca.seconds_since_reference < creation_date.seconds_since_reference {
        return Err(CdmError::TcaBeforeCreation);
    }
    let [a, b]: [CdmObject; 2] = parsed.try_into().expect("two objects");
    Ok(CdmMessage {
        creation_date,
        tca,
        miss_distance,
        objects: [a, b],
    })
}

fn parse_object(sec: &Section, tca: Epoch) -> Result<CdmObject, CdmError> {
    for key in OBJECT_KEYS {
        sec.get(key)?;
    }
    let designator = sec.get("OBJECT_DESIGNATOR")?.value.clone();
    let frame = &sec.get("REF_FRAME")?.value;
    let ref_frame = match frame.as_str() {
        "EME2000" => RefFrame::Eme2000,
        other => return Err(CdmError::UnsupportedFrame(other.to_string())),
    };
    let km = |k: &str| sec.number(k, "km", 3);
    let kms = |k: &str| sec.number(k, "km/s", 3);
    let position = Vector3::new(km("X")?, km("Y")?, km("Z")?);
    let velocity = Vector3::new(kms("X_DOT")?, kms("Y_DOT")?, kms("Z_DOT")?);
    let m2 = |k: &str| sec.number(k, "m**2", 0);
    let (rr, tr, tt, nr, nt, nn) = (
        m2("CR_R")?,
        m2("CT_R")?,
        m2("CT_T")?,
        m2("CN_R")?,
        m2("CN_T")?,
        m2("CN_N")?,
    );
    let cov = Matrix3::new(rr, tr, nr, tr, tt, nt, nr, nt, nn);
    let cov = clamp_psd(&cov)?;
    let hbr = sec.optional_number("HBR", "m")?.unwrap_or(0.0);
    if hbr < 0.0 {
        return Err(CdmError::MalformedLine(sec.get("HBR")?.line));
    }
    Ok(CdmObject {
        designator,
        ref_frame,
        state: StateVector::new(tca, position, velocity),
        position_covariance_rtn: cov,
        hard_body_radius_contribution: hbr,
    })
}

/// Serializes a message in the subset accepted by [`parse_cdm`].
pub fn write_cdm(msg: &CdmMessage) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "CCSDS_CDM_VERS = 1.0");
    let _ = writeln!(out, "CREATION_DATE = {}", format_epoch(msg.creation_date));
    let _ = writeln!(out, "TCA = {}", format_epoch(msg.tca));
    if let Some(d) = msg.miss_distance {
        let _ = writeln!(out, "MISS_DISTANCE = {} [m]", format_scaled(d, 0));
    }
    for (i, obj) in msg.objects.iter().enumerate() {
        let _ = writeln!(out, "OBJECT = OBJECT{}", i + 1);
        let _ = writeln!(out, "OBJECT_DESIGNATOR = {}", obj.designator);
        let _ = writeln!(out, "REF_FRAME = EME2000");
        let _ = writeln!(
            out,
            "HBR = {} [m]",
            format_scaled(obj.hard_body_radius_contribution, 0)
        );
        for (k, v) in ["X", "Y", "Z"].iter().zip(obj.state.position.iter()) {
            let _ = writeln!(out, "{k} = {} [km]", format_scaled(*v, 3));
        }
        for (k, v) in ["X_DOT", "Y_DOT", "Z_DOT"]
            .iter()
            .zip(obj.state.velocity.iter())
        {
            let _ = writeln!(out, "{k} = {} [km/s]", format_scaled(*v, 3));
        }
        let c = &obj.position_covariance_rtn;
        for (k, (r, col)) in ["CR_R", "CT_R", "CT_T", "CN_R", "CN_T", "CN_N"]
            .iter()
            .zip([(0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2)])
        {
            let _ = writeln!(out, "{k} = {} [m**2]", format_scaled(c[(r, col)], 0));
        }
    }
    out
}

/// Rows are the radial, transverse and normal unit vectors in ECI, so the
/// matrix maps ECI components to RTN components.
pub fn rtn_basis(state: &StateVector) -> Result<Matrix3<f64>, CdmError> {
    let r = state.position;
    let h = r.cross(&state.velocity);
    if r.norm() == 0.0 || h.norm() <= 1e-12 * r.norm() * state.velocity.norm() {
        return Err(CdmError::DegenerateState);
    }
    let rhat = r.normalize();
    let nhat = h.normalize();
    let that = nhat.cross(&rhat);
    Ok(Matrix3::from_rows(&[
        rhat.transpose(),
        that.transpose(),
        nhat.transpose(),
    ]))
}

/// Rotates an RTN position covariance into ECI.
pub fn covariance_to_eci(
    cov_rtn: &Matrix3<f64>,
    state: &StateVector,
) -> Result<Matrix3<f64>, CdmError> {
    let cov = clamp_psd(cov_rtn)?;
    let q = rtn_basis(state)?;
    let out = q.transpose() * cov * q;
    clamp_psd(&(0.5 * (out + out.transpose())))
}

/// Symmetrizes and clamps eigenvalues in `[-1e-9·trace, 0)` to zero.
pub fn clamp_psd(cov: &Matrix3<f64>) -> Result<Matrix3<f64>, CdmError> {
    if !cov.iter().all(|v| v.is_finite()) || (cov - cov.transpose()).norm() > 1e-12 * cov.norm() {
        return Err(CdmError::NonPsdCovariance);
    }
    let eig = SymmetricEigen::new(*cov);
    let floor = -1e-9 * cov.trace().abs();
    if eig.eigenvalues.iter().any(|&l| l < floor) {
        return Err(CdmError::NonPsdCovariance);
    }
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return Ok(*cov);
    }
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let m = eig.eigenvectors * Matrix3::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    Ok(0.5 * (m + m.transpose()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
CCSDS_CDM_VERS = 1.0
CREATION_DATE = 2025-02-28T12:00:00.000
TCA = 2025-03-01T12:00:00.000
MISS_DISTANCE = 715 [m]
OBJECT = OBJECT1
OBJECT_DESIGNATOR = 99001
REF_FRAME = EME2000
X = 6928.137 [km]
Y = 0.0 [km]
Z = 0.0 [km]
X_DOT = 0.0 [km/s]
Y_DOT = 4.5 [km/s]
Z_DOT = 6.0 [km/s]
CR_R = 100.0 [m**2]
CT_R = 0.0 [m**2]
CT_T = 400.0 [m**2]
CN_R = 0.0 [m**2]
CN_T = 0.0 [m**2]
CN_N = 25.0 [m**2]
OBJECT = OBJECT2
OBJECT_DESIGNATOR = 99002
REF_FRAME = EME2000
X = 6928.137 [km]
Y = 0.1 [km]
Z = 0.0 [km]
X_DOT = 0.0 [km/s]
Y_DOT = -4.5 [km/s]
Z_DOT = 6.0 [km/s]
CR_R = 100.0 [m**2]
CT_R = 10.0 [m**2]
CT_T = 400.0 [m**2]
CN_R = 0.0 [m**2]
CN_T = 0.0 [m**2]
CN_N = 25.0 [m**2]
";

    #[test]
    fn parses_sample() {
        let m = parse_cdm(SAMPLE).unwrap();
        assert_eq!(format_epoch(m.tca), "2025-03-01T12:00:00.000000");
        assert_eq!(m.tca.seconds_since(m.creation_date), 86_400.0);
        assert_eq!(m.miss_distance, Some(715.0));
        assert_eq!(m.objects[0].state.position.x, 6_928_137.0);
        assert_eq!(m.objects[1].state.position.y, 100.0);
        assert_eq!(m.objects[1].state.velocity.y, -4500.0);
        assert_eq!(m.objects[1].position_covariance_rtn[(0, 1)], 10.0);
        assert_eq!(m.objects[1].position_covariance_rtn[(1, 0)], 10.0);
        assert_eq!(m.objects[0].designator, "99001");
    }

    #[test]
    fn comments_are_ignored_anywhere() {
        let mut lines: Vec<&str> = SAMPLE.lines().collect();
        lines.insert(7, "COMMENT screening run 42");
        lines.insert(0, "COMMENT screening run 42");
        lines.push("COMMENT");
        let text = lines.join("\n");
        assert_eq!(parse_cdm(&text).unwrap(), parse_cdm(SAMPLE).unwrap());
    }

    #[test]
    fn missing_velocity_is_reported() {
        let text: String = SAMPLE
            .lines()
            .filter(|l| !l.starts_with("X_DOT"))
            .map(|l| format!("{l}\n"))
            .collect();
        assert_eq!(parse_cdm(&text), Err(CdmError::MissingKey("X_DOT".into())));
    }

    #[test]
    fn errors() {
        let dup = SAMPLE.replace("Y = 0.0 [km]", "Y = 0.0 [km]\nY = 0.0 [km]");
        assert_eq!(parse_cdm(&dup), Err(CdmError::DuplicateKey("Y".into())));
        let itrf = SAMPLE.replacen("REF_FRAME = EME2000", "REF_FRAME = ITRF", 1);
        assert_eq!(
            parse_cdm(&itrf),
            Err(CdmError::UnsupportedFrame("ITRF".into()))
        );
        let bad = SAMPLE.replacen("X = 6928.137 [km]", "X 6928.137", 1);
        assert_eq!(parse_cdm(&bad), Err(CdmError::MalformedLine(8)));
        let unit = SAMPLE.replacen("X = 6928.137 [km]", "X = 6928137 [m]", 1);
        assert_eq!(parse_cdm(&unit), Err(CdmError::MalformedLine(8)));
        let npsd = SAMPLE.replacen("CT_R = 0.0", "CT_R = 500.0", 1);
        assert_eq!(parse_cdm(&npsd), Err(CdmError::NonPsdCovariance));
    }

    #[test]
    fn writer_round_trips() {
        let m = parse_cdm(SAMPLE).unwrap();
        let text = write_cdm(&m);
        assert_eq!(parse_cdm(&text).unwrap(), m);
    }

    #[test]
    fn scaled_decimal_is_exact() {
        for v in [
            6_928_137.000_1,
            0.1,
            -4_500.000_000_3,
            1e-7,
            123_456_789.123,
        ] {
            assert_eq!(parse_scaled(&format_scaled(v, 3), 3), Some(v));
        }
        assert_eq!(parse_scaled("7.5e1", 3), Some(75_000.0));
        assert_eq!(parse_scaled("abc", 3), None);
    }

    #[test]
    fn day_of_year_epochs() {
        assert_eq!(
            parse_epoch("2025-060T12:00:00"),
            parse_epoch("2025-03-01T12:00:00.000")
        );
        assert_eq!(
            parse_epoch("2000-01-01T12:00:00")
                .unwrap()
                .seconds_since_reference,
            0.0
        );
    }

    #[test]
    fn axis_aligned_rtn() {
        let s = StateVector::new(
            Epoch::new(0.0),
            Vector3::new(7e6, 0.0, 0.0),
            Vector3::new(0.0, 7500.0, 0.0),
        );
        assert_eq!(rtn_basis(&s).unwrap(), Matrix3::identity());
        let cov = Matrix3::from_diagonal(&Vector3::new(1.0, 2.0, 3.0));
        let s2 = StateVector::new(
            Epoch::new(0.0),
            Vector3::new(0.0, 7e6, 0.0),
            Vector3::new(0.0, 0.0, 7500.0),
        );
        // R = ŷ, N = ŷ × ẑ = x̂, T = N × R = ẑ
        let eci = covariance_to_eci(&cov, &s2).unwrap();
        let expect = Matrix3::from_diagonal(&Vector3::new(3.0, 1.0, 2.0));
        assert!((eci - expect).norm() < 1e-12);
    }

    #[test]
    fn clamps_tiny_negative_eigenvalues() {
        let c = Matrix3::new(1.0, 1.0, 0.0, 1.0, 1.0 - 1e-12, 0.0, 0.0, 0.0, 1.0);
        let out = clamp_psd(&c).unwrap();
        let min = SymmetricEigen::new(out).eigenvalues.min();
        assert!(min >= -1e-15);
        let degenerate = StateVector::new(
            Epoch::new(0.0),
            Vector3::new(7e6, 0.0, 0.0),
            Vector3::new(10.0, 0.0, 0.0),
        );
        assert_eq!(rtn_basis(&degenerate), Err(CdmError::DegenerateState));
    }
}
