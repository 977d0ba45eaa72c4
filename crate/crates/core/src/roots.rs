//! Minimal nonnegative roots of the branching generator and of its marked
//! variant, plus the Taylor coefficients of the marked root.
//!
//! On `[0, 1]` both generators are convex with a nonnegative value at 0 and a
//! nonpositive value at 1, so the leftmost root is found by monotone Newton
//! iteration from 0 with a bisection fallback; a flat near-double-root
//! region degrades to derivative bisection at reduced tolerance.

use thiserror::Error;

use crate::dense::KSpace;
use crate::law::{CoeffTable, CrossingSet, LawError, OffspringLaw, Truncation};

/// Default tolerance on both the residual and the step size.
pub const DEFAULT_ROOT_TOL: f64 = 1e-12;

/// Tolerance used when the degraded (near-double-root) path is taken.
pub const DEGRADED_ROOT_TOL: f64 = 1e-8;

const MAX_NEWTON_ITER: usize = 200;

#[derive(Debug, Error, PartialEq)]
pub enum RootError {
    #[error(transparent)]
    Law(#[from] LawError),
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("untracked generator derivative {deriv} at the base root {root} is not negative")]
    DegenerateBase { root: f64, deriv: f64 },
}

/// A located root; `degraded` flags the reduced-tolerance fallback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub value: f64,
    pub degraded: bool,
}

/// Leftmost root in `[0, 1]` of a convex `f` with `f(0) >= 0 >= f(1)`.
///
/// When `f(1) = 0` with `f'(1) <= 0`, convexity forces `f >= 0` on the whole
/// interval with no earlier zero, so the minimal root is 1 exactly; this
/// covers the critical case, whose double root would otherwise defeat a
/// residual test. Every other root is simple: Newton from 0 on a convex
/// function started left of the root increases monotonically toward it, and
/// any step leaving the current bracket falls back to bisection. If the
/// iteration stalls (flat valley), the minimum is bracketed by bisecting
/// `df` and the left root is re-bisected at [`DEGRADED_ROOT_TOL`].
fn leftmost_convex_root(
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    value_at_one: f64,
    deriv_at_one: f64,
    tol: f64,
) -> Root {
    let f0 = f(0.0);
    if f0 <= tol && f0 >= -tol {
        return Root {
            value: 0.0,
            degraded: false,
        };
    }
    if value_at_one == 0.0 && deriv_at_one <= 0.0 {
        return Root {
            value: 1.0,
            degraded: false,
        };
    }
    // Bracket [lo, hi] with f(lo) > 0 >= f(hi); f(1) = 0 for the plain
    // generator and <= 0 for marked ones.
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    let mut u = 0.0f64;
    for _ in 0..MAX_NEWTON_ITER {
        let fu = f(u);
        if fu.abs() <= tol {
            return Root {
                value: u,
                degraded: false,
            };
        }
        if fu > 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let d = df(u);
        let newton = if d != 0.0 { u - fu / d } else { f64::NAN };
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - u).abs() <= tol {
            return Root {
                value: next,
                degraded: false,
            };
        }
        u = next;
    }
    degraded_root(&f, &df, lo, hi)
}

/// Flat-valley fallback: bisect the derivative to bracket the minimum, then
/// bisect `f` on the left side.
fn degraded_root(f: &impl Fn(f64) -> f64, df: &impl Fn(f64) -> f64, lo: f64, hi: f64) -> Root {
    let mut a = lo;
    let mut b = hi;
    // df is nondecreasing (convexity); find the sign change if any.
    if df(a) < 0.0 && df(b) > 0.0 {
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if df(mid) < 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
    }
    let minimum = 0.5 * (a + b);
    let (mut a, mut b) = if f(minimum) <= 0.0 {
        (lo, minimum)
    } else {
        // No crossing before the minimum; the root sits in the flat tail.
        (minimum, hi)
    };
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if f(mid) > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
        if (b - a).abs() <= DEGRADED_ROOT_TOL {
            break;
        }
    }
    Root {
        value: 0.5 * (a + b),
        degraded: true,
    }
}

/// Minimal nonnegative root of `B(u) = 0` on `[0, 1]`: the extinction
/// probability from one particle. A root always exists at `u = 1`.
pub fn extinction_probability(law: &OffspringLaw, tol: f64) -> Result<Root, RootError> {
    if tol <= 0.0 {
        return Err(RootError::BadTolerance(tol));
    }
    Ok(leftmost_convex_root(
        |u| law.generator(u).expect("u in [0,1]"),
        |u| law.generator_deriv(u),
        law.generator(1.0).expect("1 in [0,1]"),
        law.generator_deriv(1.0),
        tol,
    ))
}

/// Minimal nonnegative root of the marked generator; satisfies
/// `marked_root(v) <= extinction_probability`.
pub fn marked_root(
    law: &OffspringLaw,
    set: &CrossingSet,
    marks: &[f64],
    tol: f64,
) -> Result<Root, RootError> {
    if tol <= 0.0 {
        return Err(RootError::BadTolerance(tol));
    }
    set.validate_against(law)?;
    if marks.len() != set.len() {
        return Err(RootError::Law(LawError::MarkDimensionMismatch {
            got: marks.len(),
            expected: set.len(),
        }));
    }
    for &v in marks {
        if !(0.0..=1.0).contains(&v) {
            return Err(RootError::Law(LawError::OutOfUnitInterval {
                name: "v",
                value: v,
            }));
        }
    }
    let f = |u: f64| law.marked_generator(set, u, marks).expect("u in [0,1]");
    let df = |u: f64| {
        let mut acc = law.generator_deriv(u);
        for (pos, &k) in set.members().iter().enumerate() {
            if k >= 1 {
                acc -= law.rate(k) * (1.0 - marks[pos]) * f64::from(k) * u.powi(k as i32 - 1);
            }
        }
        acc
    };
    Ok(leftmost_convex_root(&f, &df, f(1.0), df(1.0), tol))
}

/// Taylor coefficients `{rho_k : |k| <= kmax}` of the marked root around
/// `v = 0`, filled grade by grade; each new grade solves the linear
/// coefficient identity of the marked-generator equation, dividing by the
/// untracked derivative at the base root (checked to be negative).
///
/// All coefficients are nonnegative; their sum over all orders is the
/// extinction probability when every mark is 1.
pub fn marked_root_series(
    law: &OffspringLaw,
    set: &CrossingSet,
    kmax: u32,
) -> Result<CoeffTable, RootError> {
    set.validate_against(law)?;
    let dim = set.len();
    let base = marked_root(law, set, &vec![0.0; dim], DEFAULT_ROOT_TOL)?;
    let rho0 = base.value;
    let denom = law.untracked_deriv(set, rho0);
    if denom >= 0.0 {
        return Err(RootError::DegenerateBase {
            root: rho0,
            deriv: denom,
        });
    }

    let space = KSpace::new(dim, kmax);
    let len = space.len();
    let mut coeffs = vec![0.0f64; len];
    coeffs[0] = rho0;

    let max_power = law.max_offspring();
    let shifts: Vec<Vec<u32>> = (0..dim).map(|pos| space.shift_down(pos)).collect();
    let mut powers: Vec<Vec<f64>> = Vec::new();

    for grade in 1..=kmax {
        // Convolution powers of the series truncated to lower grades; at a
        // grade-`grade` index they only combine lower-grade factors, which is
        // exactly the restricted sum of the coefficient identity.
        powers.clear();
        let mut unit = vec![0.0; len];
        unit[0] = 1.0;
        powers.push(unit);
        for p in 1..=max_power as usize {
            let mut next = vec![0.0; len];
            space.convolve(&powers[p - 1], &coeffs, &mut next);
            powers.push(next);
        }
        for offset in space.grade_range(grade) {
            let mut residual = 0.0;
            for (j, b) in law.support() {
                if let Some(pos) = set.position(j) {
                    if let Some(lower) = crate::dense::shift_entry(&shifts[pos], offset) {
                        residual += b * powers[j as usize][lower];
                    }
                } else if j >= 2 {
                    residual += b * powers[j as usize][offset];
                }
                // untracked j = 0 contributes only at the zero index and
                // j = 1 is absorbed into the denominator
            }
            coeffs[offset] = -residual / denom;
        }
    }

    let mut table = CoeffTable::with_slack(
        crate::law::TableForm::Marginal,
        dim,
        Truncation::marginal(kmax),
        DEFAULT_COEFF_TABLE_SLACK,
    );
    for (offset, &value) in coeffs.iter().enumerate() {
        if value != 0.0 {
            table.set(space.index(offset), value)?;
        }
    }
    Ok(table)
}

const DEFAULT_COEFF_TABLE_SLACK: f64 = 1e-12;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::MultiIndex;
    use crate::rng;

    fn root(law: &OffspringLaw) -> f64 {
        extinction_probability(law, DEFAULT_ROOT_TOL).unwrap().value
    }

    #[test]
    fn plain_root_examples() {
        let pure_death = OffspringLaw::new([(0, 1.0)]).unwrap();
        assert!((root(&pure_death) - 1.0).abs() < 1e-12);

        let supercritical = OffspringLaw::new([(0, 0.25), (2, 0.75)]).unwrap();
        assert!((root(&supercritical) - 1.0 / 3.0).abs() < 1e-12);

        let cubic = OffspringLaw::new([(0, 1.0), (3, 1.0)]).unwrap();
        let golden = (5.0f64.sqrt() - 1.0) / 2.0;
        assert!((root(&cubic) - golden).abs() < 1e-12);
    }

    #[test]
    fn critical_law_root_is_one_exactly() {
        // B(u) = (1 - u)^2 up to the rate scale: a double root that the
        // criticality shortcut resolves exactly
        let critical = OffspringLaw::new([(0, 1.0), (2, 1.0)]).unwrap();
        let r = extinction_probability(&critical, DEFAULT_ROOT_TOL).unwrap();
        assert_eq!(r.value, 1.0);
        assert!(!r.degraded);
        // subcritical also lands at 1 exactly
        let sub = OffspringLaw::new([(0, 1.5), (2, 0.5)]).unwrap();
        assert_eq!(extinction_probability(&sub, DEFAULT_ROOT_TOL).unwrap().value, 1.0);
    }

    #[test]
    fn marked_root_examples() {
        let law = OffspringLaw::new([(0, 1.0), (2, 1.0)]).unwrap();
        let deaths = CrossingSet::new([0]).unwrap();

        // v = 1 reduces to the plain root
        let plain = root(&law);
        let at_one = marked_root(&law, &deaths, &[1.0], DEFAULT_ROOT_TOL).unwrap();
        assert_eq!(at_one.value, plain);

        // beta(v) = (1 - sqrt(1 - 4pqv)) / (2q) at p = q = 1/2, v = 1/2
        let at_half = marked_root(&law, &deaths, &[0.5], DEFAULT_ROOT_TOL).unwrap();
        assert!((at_half.value - (1.0 - 0.5f64.sqrt())).abs() < 1e-12);
        assert!(!at_half.degraded);

        // v_0 = 0 makes 0 a root
        let at_zero = marked_root(&law, &deaths, &[0.0], DEFAULT_ROOT_TOL).unwrap();
        assert_eq!(at_zero.value, 0.0);
    }

    #[test]
    fn marked_root_rejects_bad_marks() {
        let law = OffspringLaw::new([(0, 1.0), (2, 1.0)]).unwrap();
        let deaths = CrossingSet::new([0]).unwrap();
        assert!(marked_root(&law, &deaths, &[1.5], DEFAULT_ROOT_TOL).is_err());
        assert!(marked_root(&law, &deaths, &[], DEFAULT_ROOT_TOL).is_err());
        assert!(marked_root(&law, &deaths, &[0.5], 0.0).is_err());
    }

    #[test]
    fn series_matches_birth_death_coefficients() {
        // p = 0.6, q = 0.4, b = 1: coefficients p, p^2 q, 2 p^3 q^2, ...
        let law = OffspringLaw::new([(0, 0.6), (2, 0.4)]).unwrap();
        let deaths = CrossingSet::new([0]).unwrap();
        let series = marked_root_series(&law, &deaths, 3).unwrap();
        let at = |n: u32| series.get(&MultiIndex::from_counts(vec![n]));
        assert!((at(1) - 0.6).abs() < 1e-12);
        assert!((at(2) - 0.144).abs() < 1e-12);
        assert!((at(3) - 2.0 * 0.6f64.powi(3) * 0.4f64.powi(2)).abs() < 1e-12);
        assert_eq!(at(0), 0.0);
    }

    #[test]
    fn series_even_orders_vanish_for_cubic() {
        let law = OffspringLaw::new([(0, 1.0), (3, 1.0)]).unwrap();
        let deaths = CrossingSet::new([0]).unwrap();
        let series = marked_root_series(&law, &deaths, 10).unwrap();
        for n in (0..=10).step_by(2) {
            assert_eq!(series.get(&MultiIndex::from_counts(vec![n])), 0.0);
        }
        assert!(series.get(&MultiIndex::from_counts(vec![1])) > 0.0);
    }

    #[test]
    fn series_partial_sums_approach_marked_root() {
        let law = OffspringLaw::new([(0, 1.0), (2, 1.0)]).unwrap();
        let deaths = CrossingSet::new([0]).unwrap();
        let v = 0.5;
        let target = marked_root(&law, &deaths, &[v], DEFAULT_ROOT_TOL)
            .unwrap()
            .value;
        let mut last_gap = f64::INFINITY;
        let mut last_sum = 0.0;
        for kmax in [2u32, 4, 8, 16] {
            let series = marked_root_series(&law, &deaths, kmax).unwrap();
            let sum: f64 = series
                .entries()
                .map(|(_, idx, c)| c * v.powi(idx.order() as i32))
                .sum();
            assert!(sum >= last_sum - 1e-14, "partial sums nondecreasing");
            let gap = (sum - target).abs();
            assert!(gap < last_gap, "gap not shrinking: {gap} vs {last_gap}");
            last_gap = gap;
            last_sum = sum;
        }
        assert!(last_gap < 1e-4);
    }

    #[test]
    fn random_laws_marked_root_below_plain() {
        let mut r = rng::stream(2024, 0);
        for _ in 0..100 {
            let mut rates = Vec::new();
            for j in [0u32, 2, 3, 4, 5, 6] {
                if r.next_f64() < 0.6 {
                    rates.push((j, 0.05 + 1.5 * r.next_f64()));
                }
            }
            if rates.is_empty() {
                rates.push((0, 1.0));
            }
            let law = OffspringLaw::new(rates.clone()).unwrap();
            let members: Vec<u32> = rates
                .iter()
                .map(|&(j, _)| j)
                .filter(|_| r.next_f64() < 0.7)
                .collect();
            let set = CrossingSet::new(members).unwrap();
            let marks: Vec<f64> = (0..set.len()).map(|_| r.next_f64()).collect();
            let plain = extinction_probability(&law, DEFAULT_ROOT_TOL).unwrap();
            let marked = marked_root(&law, &set, &marks, DEFAULT_ROOT_TOL).unwrap();
            assert!(
                marked.value <= plain.value + DEFAULT_ROOT_TOL,
                "marked {} > plain {}",
                marked.value,
                plain.value
            );
            let residual = law.marked_generator(&set, marked.value, &marks).unwrap();
            assert!(residual.abs() < 10.0 * DEFAULT_ROOT_TOL);
        }
    }

    #[test]
    fn series_coefficients_nonnegative() {
        let law = OffspringLaw::new([(0, 0.8), (2, 0.5), (4, 0.3)]).unwrap();
        let set = CrossingSet::new([0, 4]).unwrap();
        let series = marked_root_series(&law, &set, 8).unwrap();
        for (_, idx, v) in series.entries() {
            assert!(v >= -1e-12, "rho_{idx} = {v}");
        }
    }

    #[test]
    fn degraded_path_flags_flat_valley() {
        // Synthetic function with a wide flat region around its root:
        // f(u) = -(u - 0.5)^9 decreases so slowly near 0.5 that Newton
        // stalls within the iteration budget.
        let f = |u: f64| -(u - 0.5f64).powi(9) - 1e-300 * u;
        let df = |u: f64| -9.0 * (u - 0.5f64).powi(8) - 1e-300;
        let root = leftmost_convex_root(&f, &df, f(1.0), df(1.0), 1e-300);
        assert!(root.degraded);
        assert!((root.value - 0.5).abs() < 1e-6);
    }
}
