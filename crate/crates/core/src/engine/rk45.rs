//! Embedded Dormand–Prince 5(4) integrator for the autonomous systems in
//! this crate, with standard proportional step control and FSAL reuse.

use super::{EngineError, OdeSettings};

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
// 5th-order weights (also the last stage row: first-same-as-last)
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// difference to the embedded 4th-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;
const MAX_STEPS: u64 = 50_000_000;

/// Integrates `y' = rhs(y)` from 0 to `t_end`, returning the final state.
pub(crate) fn integrate<F>(
    mut rhs: F,
    mut y: Vec<f64>,
    t_end: f64,
    settings: &OdeSettings,
) -> Result<Vec<f64>, EngineError>
where
    F: FnMut(&[f64], &mut [f64]),
{
    settings.validate()?;
    if t_end == 0.0 {
        return Ok(y);
    }
    let n = y.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];

    rhs(&y, &mut k1);
    let mut t = 0.0f64;
    let mut h = initial_step(&y, &k1, t_end, settings);
    let mut steps = 0u64;

    while t < t_end {
        steps += 1;
        if steps > MAX_STEPS {
            return Err(EngineError::StepLimit { reached: t });
        }
        if h < 1e-14 * t_end.max(1.0) {
            return Err(EngineError::StepUnderflow { reached: t });
        }
        h = h.min(t_end - t);

        for i in 0..n {
            stage[i] = y[i] + h * A21 * k1[i];
        }
        rhs(&stage, &mut k2);
        for i in 0..n {
            stage[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        rhs(&stage, &mut k3);
        for i in 0..n {
            stage[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        rhs(&stage, &mut k4);
        for i in 0..n {
            stage[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        rhs(&stage, &mut k5);
        for i in 0..n {
            stage[i] = y[i]
                + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        rhs(&stage, &mut k6);
        for i in 0..n {
            y_new[i] =
                y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
        }
        rhs(&y_new, &mut k7);

        let mut err_sq = 0.0;
        for i in 0..n {
            let err = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let scale = settings.abs_tol + settings.rel_tol * y[i].abs().max(y_new[i].abs());
            err_sq += (err / scale) * (err / scale);
        }
        let err_norm = (err_sq / n as f64).sqrt();

        if err_norm <= 1.0 {
            t += h;
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut k7);
            let factor = if err_norm == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * err_norm.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
            };
            h = (h * factor).min(settings.max_step);
        } else {
            h *= (SAFETY * err_norm.powf(-0.2)).clamp(MIN_FACTOR, 1.0);
        }
    }
    Ok(y)
}

fn initial_step(y: &[f64], dy: &[f64], t_end: f64, settings: &OdeSettings) -> f64 {
    let norm = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    let d0 = norm(y);
    let d1 = norm(dy);
    let guess = if d1 > 1e-10 {
        0.01 * (d0.max(settings.abs_tol)) / d1
    } else {
        1e-3 * t_end
    };
    guess.min(t_end).min(settings.max_step).max(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let settings = OdeSettings::default();
        let y = integrate(|y, dy| dy[0] = -y[0], vec![1.0], 3.0, &settings).unwrap();
        assert!((y[0] - (-3.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn logistic_riccati() {
        // y' = y(1-y), y(0) = 0.1 -> y(t) = 1 / (1 + 9 e^{-t})
        let settings = OdeSettings::default();
        let y = integrate(|y, dy| dy[0] = y[0] * (1.0 - y[0]), vec![0.1], 5.0, &settings).unwrap();
        let exact = 1.0 / (1.0 + 9.0 * (-5.0f64).exp());
        assert!((y[0] - exact).abs() < 1e-9);
    }

    #[test]
    fn coupled_system() {
        // y0' = y1, y1' = -y0 (rotation): preserves radius
        let settings = OdeSettings {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            ..OdeSettings::default()
        };
        let y = integrate(
            |y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            vec![1.0, 0.0],
            std::f64::consts::PI,
            &settings,
        )
        .unwrap();
        assert!((y[0] + 1.0).abs() < 1e-8);
        assert!(y[1].abs() < 1e-8);
    }

    #[test]
    fn zero_time_returns_initial() {
        let settings = OdeSettings::default();
        let y = integrate(|_, dy| dy[0] = 1.0, vec![0.5], 0.0, &settings).unwrap();
        assert_eq!(y[0], 0.5);
    }
}
