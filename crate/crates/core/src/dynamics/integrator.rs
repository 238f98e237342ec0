//! Dormand–Prince 5(4) with FSAL and a replayable step record.

use nalgebra::Vector6;

use super::DynamicsError;

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// fifth-order weights (same as the last row of `A`)
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub atol: f64,
    pub rtol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            atol: 1e-9,
            rtol: 1e-12,
        }
    }
}

const MAX_STEPS: usize = 1_000_000;

fn stages<F>(
    f: &F,
    y: &Vector6<f64>,
    k0: Vector6<f64>,
    h: f64,
) -> Result<[Vector6<f64>; 7], DynamicsError>
where
    F: Fn(&Vector6<f64>) -> Result<Vector6<f64>, DynamicsError>,
{
    let mut k = [Vector6::zeros(); 7];
    k[0] = k0;
    for s in 1..7 {
        let mut ys = *y;
        for (j, kj) in k.iter().enumerate().take(s) {
            if A[s][j] != 0.0 {
                ys += kj * (h * A[s][j]);
            }
        }
        k[s] = f(&ys)?;
    }
    Ok(k)
}

fn combine(y: &Vector6<f64>, k: &[Vector6<f64>; 7], h: f64, w: &[f64; 7]) -> Vector6<f64> {
    let mut out = *y;
    for (ks, &ws) in k.iter().zip(w) {
        if ws != 0.0 {
            out += ks * (h * ws);
        }
    }
    out
}

/// Integrates the autonomous system `y' = f(y)` over a signed `duration`.
/// Returns the end state and the accepted step sizes.
pub fn integrate<F>(
    f: F,
    y0: Vector6<f64>,
    duration: f64,
    tol: Tolerances,
) -> Result<(Vector6<f64>, Vec<f64>), DynamicsError>
where
    F: Fn(&Vector6<f64>) -> Result<Vector6<f64>, DynamicsError>,
{
    if duration == 0.0 {
        return Ok((y0, Vec::new()));
    }
    let dir = duration.signum();
    let span = duration.abs();
    let mut t = 0.0;
    let mut y = y0;
    let mut k0 = f(&y)?;
    let mut h = initial_step(&y, &k0, span, tol);
    let mut steps = Vec::new();
    let mut last_rejected = false;
    for _ in 0..MAX_STEPS {
        let remaining = span - t;
        if remaining <= 0.0 {
            return Ok((y, steps));
        }
        let last = h >= remaining;
        let h_try = if last { remaining } else { h };
        if h_try <= 1e-12 * span.max(1.0) {
            return Err(DynamicsError::IntegrationFailure { elapsed: t * dir });
        }
        let k = stages(&f, &y, k0, dir * h_try)?;
        let y5 = combine(&y, &k, dir * h_try, &B5);
        let y4 = combine(&y, &k, dir * h_try, &B4);
        let mut err: f64 = 0.0;
        for i in 0..6 {
            let sc = tol.atol + tol.rtol * y[i].abs().max(y5[i].abs());
            err = err.max((y5[i] - y4[i]).abs() / sc);
        }
        if !err.is_finite() {
            return Err(DynamicsError::IntegrationFailure { elapsed: t * dir });
        }
        if err <= 1.0 {
            t = if last { span } else { t + h_try };
            y = y5;
            k0 = k[6];
            steps.push(dir * h_try);
            let grow = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            let grow = if last_rejected { grow.min(1.0) } else { grow };
            if !last {
                h = h_try * grow;
            }
            last_rejected = false;
        } else {
            h = h_try * (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            last_rejected = true;
        }
    }
    Err(DynamicsError::IntegrationFailure { elapsed: t * dir })
}

/// Replays a recorded step sequence without error control.
pub fn integrate_fixed<F>(
    f: F,
    y0: Vector6<f64>,
    steps: &[f64],
) -> Result<Vector6<f64>, DynamicsError>
where
    F: Fn(&Vector6<f64>) -> Result<Vector6<f64>, DynamicsError>,
{
    let mut y = y0;
    let mut k0 = f(&y)?;
    for &h in steps {
        let k = stages(&f, &y, k0, h)?;
        y = combine(&y, &k, h, &B5);
        k0 = k[6];
    }
    Ok(y)
}

fn initial_step(y: &Vector6<f64>, dy: &Vector6<f64>, span: f64, tol: Tolerances) -> f64 {
    let mut d0: f64 = 0.0;
    let mut d1: f64 = 0.0;
    for i in 0..6 {
        let sc = tol.atol + tol.rtol * y[i].abs();
        d0 = d0.max(y[i].abs() / sc);
        d1 = d1.max(dy[i].abs() / sc);
    }
    let h = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h.min(span)
}

#[cfg(test)]
mod tests {
    use super::*;

    const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];

    #[test]
    fn tableau_rows_sum_to_nodes() {
        for s in 0..7 {
            let sum: f64 = A[s].iter().sum();
            assert!((sum - C[s]).abs() < 1e-14, "row {s}");
        }
        assert!((B5.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!((B4.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn harmonic_oscillator_matches_closed_form() {
        let f = |y: &Vector6<f64>| Ok(Vector6::new(y[3], y[4], y[5], -y[0], -4.0 * y[1], -y[2]));
        let y0 = Vector6::new(1.0, 0.0, 0.5, 0.0, 2.0, 0.0);
        let t = 3.7;
        let (y, steps) = integrate(f, y0, t, Tolerances::default()).unwrap();
        assert!((y[0] - t.cos()).abs() < 1e-8);
        assert!((y[1] - (2.0 * t).sin()).abs() < 1e-8);
        assert!((steps.iter().sum::<f64>() - t).abs() < 1e-12);
        let back = integrate(f, y, -t, Tolerances::default()).unwrap().0;
        assert!((back - y0).norm() < 1e-8);
        let replay = integrate_fixed(f, y0, &steps).unwrap();
        assert_eq!(replay, y);
    }
}
