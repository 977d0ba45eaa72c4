//! Analytic formulas for the two worked offspring laws — binary birth-death
//! (death rate `p b`, birth rate `q b`) and the cubic law (`b_0 = p b`,
//! `b_3 = q b`) — used as high-precision oracles against the numeric engine.
//!
//! The death-count sequences evaluate the integral recursions with an
//! explicit death-free factor and a fourth-order prefix quadrature on a
//! uniform grid, doubled until successive levels agree to `1e-10`.

use thiserror::Error;

use crate::quad::prefix_integral;

const QUAD_TOL: f64 = 1e-10;
const MIN_GRID: usize = 64;
const MAX_GRID: usize = 1 << 17;

#[derive(Debug, Error, PartialEq)]
pub enum ClosedFormError {
    #[error("parameter {name} = {value} outside its domain")]
    BadParameter { name: &'static str, value: f64 },
    #[error("quadrature did not converge below {target} (last delta {achieved})")]
    QuadratureFailure { target: f64, achieved: f64 },
}

fn check_params(p: f64, q: f64, b: f64) -> Result<(), ClosedFormError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(ClosedFormError::BadParameter {
            name: "p",
            value: p,
        });
    }
    if (p + q - 1.0).abs() > 1e-12 {
        return Err(ClosedFormError::BadParameter {
            name: "q",
            value: q,
        });
    }
    if !(b > 0.0 && b.is_finite()) {
        return Err(ClosedFormError::BadParameter {
            name: "b",
            value: b,
        });
    }
    Ok(())
}

fn check_unit(name: &'static str, value: f64) -> Result<(), ClosedFormError> {
    if !(0.0..=1.0).contains(&value) {
        return Err(ClosedFormError::BadParameter { name, value });
    }
    Ok(())
}

fn check_time(b: f64, t: f64) -> Result<(), ClosedFormError> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(ClosedFormError::BadParameter {
            name: "t",
            value: t,
        });
    }
    // e^{bt} enters squared; keep it far from overflow.
    if b * t > 300.0 {
        return Err(ClosedFormError::BadParameter {
            name: "t",
            value: t,
        });
    }
    Ok(())
}

/// Birth-death generating function `G(t, u, v)` of the death count:
/// the logistic-in-time flow between the quadratic roots
/// `alpha(v) = (1 + sqrt(1 - 4pqv)) / 2q` and `beta(v)` (its conjugate).
/// The confluent case `alpha = beta` (only `v = 1` with `p = q`) takes the
/// unique continuous extension.
pub fn bd_pgf(p: f64, q: f64, b: f64, t: f64, u: f64, v: f64) -> Result<f64, ClosedFormError> {
    check_params(p, q, b)?;
    check_unit("u", u)?;
    check_unit("v", v)?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(ClosedFormError::BadParameter {
            name: "t",
            value: t,
        });
    }
    if t == 0.0 {
        return Ok(u);
    }
    let disc = (1.0 - 4.0 * p * q * v).max(0.0);
    let sq = disc.sqrt();
    let alpha = (1.0 + sq) / (2.0 * q);
    let beta = (1.0 - sq) / (2.0 * q);
    if sq < 1e-14 {
        // double root at alpha = beta = 1/(2q)
        return Ok(alpha + (u - alpha) / (1.0 - (u - alpha) * b * q * t));
    }
    if u == alpha {
        return Ok(alpha);
    }
    if u == beta {
        return Ok(beta);
    }
    let exponent = (alpha - beta) * b * q * t;
    if exponent > 700.0 {
        return Ok(beta);
    }
    let ratio = (alpha - u) / (beta - u);
    Ok(beta + (alpha - beta) / (1.0 - ratio * exponent.exp()))
}

/// Grid-doubling evaluator for the weighted integral recursions
/// `g_n(t) = w(t) * integral_0^t F_n(s) / w(s) ds`, with `F_n` built from
/// rows below `n`.
fn death_pmf_recursion(
    t: f64,
    nmax: usize,
    g0: impl Fn(f64) -> f64,
    weight: impl Fn(f64) -> f64,
    f_n: impl Fn(usize, &[Vec<f64>], usize) -> f64,
) -> Result<Vec<f64>, ClosedFormError> {
    if t == 0.0 {
        let mut out = vec![0.0; nmax + 1];
        out[0] = 1.0;
        return Ok(out);
    }
    let mut previous: Option<Vec<f64>> = None;
    let mut m = MIN_GRID;
    let mut achieved = f64::INFINITY;
    while m <= MAX_GRID {
        let h = t / m as f64;
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(nmax + 1);
        let times: Vec<f64> = (0..=m).map(|i| h * i as f64).collect();
        rows.push(times.iter().map(|&s| g0(s)).collect());
        let weights: Vec<f64> = times.iter().map(|&s| weight(s)).collect();
        for n in 1..=nmax {
            let integrand: Vec<f64> = (0..=m).map(|i| f_n(n, &rows, i) / weights[i]).collect();
            let prefix = prefix_integral(&integrand, h);
            rows.push((0..=m).map(|i| weights[i] * prefix[i]).collect());
        }
        let at_t: Vec<f64> = rows.iter().map(|row| row[m]).collect();
        if let Some(prev) = previous {
            achieved = at_t
                .iter()
                .zip(&prev)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            if achieved < QUAD_TOL {
                return Ok(at_t);
            }
        }
        previous = Some(at_t);
        m *= 2;
    }
    Err(ClosedFormError::QuadratureFailure {
        target: QUAD_TOL,
        achieved,
    })
}

/// Death-count probabilities `g_0(t) ..= g_nmax(t)` for the birth-death law:
/// `g_0(t) = 1 / (q + p e^{bt})` and the pairwise-convolution integral
/// recursion above it.
pub fn bd_death_pmf(
    p: f64,
    q: f64,
    b: f64,
    t: f64,
    nmax: usize,
) -> Result<Vec<f64>, ClosedFormError> {
    check_params(p, q, b)?;
    check_time(b, t)?;
    death_pmf_recursion(
        t,
        nmax,
        |s| 1.0 / (q + p * (b * s).exp()),
        |s| {
            let e = (b * s).exp();
            e / ((q + p * e) * (q + p * e))
        },
        |n, rows, i| {
            let mut f = if n == 1 { b * p } else { 0.0 };
            let mut pair = 0.0;
            for k in 1..n {
                pair += rows[k][i] * rows[n - k][i];
            }
            f += b * q * pair;
            f
        },
    )
}

/// Death-count probabilities for the cubic law (`b_0 = pb`, `b_3 = qb`):
/// `g_0(t) = (q + p e^{2bt})^{-1/2}` and a triple-convolution recursion
/// restricted to parts below `n`.
pub fn cubic_death_pmf(
    p: f64,
    q: f64,
    b: f64,
    t: f64,
    nmax: usize,
) -> Result<Vec<f64>, ClosedFormError> {
    check_params(p, q, b)?;
    check_time(b, t)?;
    death_pmf_recursion(
        t,
        nmax,
        |s| (q + p * (2.0 * b * s).exp()).powf(-0.5),
        |s| {
            let e = (2.0 * b * s).exp();
            e * (q + p * e).powf(-1.5)
        },
        |n, rows, i| {
            let mut f = if n == 1 { b * p } else { 0.0 };
            let mut triple = 0.0;
            for k1 in 0..n {
                for k2 in 0..=(n - k1).min(n - 1) {
                    let k3 = n - k1 - k2;
                    if k3 <= n - 1 {
                        triple += rows[k1][i] * rows[k2][i] * rows[k3][i];
                    }
                }
            }
            f += b * q * triple;
            f
        },
    )
}

/// Coefficients of the extinction-conditioned death-count PGF `beta(v)` for
/// the birth-death law: `p` at order 1, then
/// `p (2n-3)!! 2^{n-1} (pq)^{n-1} / n!`, generated by the stable ratio
/// recurrence (each term is `2(2n-1)pq/(n+1)` times the previous), which
/// never forms the factorials explicitly.
pub fn bd_extinction_series(p: f64, q: f64, nmax: usize) -> Result<Vec<f64>, ClosedFormError> {
    check_params(p, q, 1.0)?;
    let mut out = vec![0.0; nmax + 1];
    if nmax == 0 {
        return Ok(out);
    }
    let mut term = p;
    out[1] = term;
    for n in 1..nmax {
        term *= 2.0 * (2.0 * n as f64 - 1.0) * p * q / (n as f64 + 1.0);
        out[n + 1] = term;
    }
    Ok(out)
}

/// Limit death-count sequence for the cubic law: `g_0 = 0`, `g_1 = p`,
/// `g_n = q * sum over triples below n`. Every even coefficient is exactly
/// zero: extinction from one particle takes `2 * births + 1` deaths.
pub fn cubic_extinction_series(p: f64, q: f64, nmax: usize) -> Result<Vec<f64>, ClosedFormError> {
    check_params(p, q, 1.0)?;
    let mut g = vec![0.0; nmax + 1];
    if nmax >= 1 {
        g[1] = p;
    }
    for n in 2..=nmax {
        let mut triple = 0.0;
        for k1 in 0..n {
            for k2 in 0..=(n - k1).min(n - 1) {
                let k3 = n - k1 - k2;
                if k3 <= n - 1 {
                    triple += g[k1] * g[k2] * g[k3];
                }
            }
        }
        g[n] = q * triple;
    }
    Ok(g)
}
