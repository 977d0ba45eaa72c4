//! Numerical core: the scalar generating-function flow and the exactly
//! closed truncated coefficient ODE systems for crossing-count
//! distributions.
//!
//! The generating function `G(t, u, v)` of the augmented chain solves the
//! scalar flow `dy/dt = marked_generator(y, v)`, `y(0) = u`. Expanding in
//! `v` (and in `u` for the joint case) turns the flow into a coefficient
//! system whose right-hand side at an index only references componentwise
//! smaller indices, so truncating the lattice introduces no error in the
//! retained coefficients — only ODE-solver error. The primary path
//! integrates those systems with an embedded Dormand–Prince 4(5) scheme;
//! the paper-style integral recursions are kept as slow reference
//! evaluators for cross-checks.

mod integral;
mod rk45;

pub use integral::{crossing_distribution_via_integral, joint_distribution_via_integral};

use thiserror::Error;

use crate::dense::{shift_entry, JointSpace, KSpace};
use crate::law::{CoeffTable, CrossingSet, LawError, OffspringLaw, TableForm, Truncation};
use crate::roots::{self, RootError};

/// Slack allowed below zero for solver-produced coefficients.
const SOLVER_SLACK: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Law(#[from] LawError),
    #[error(transparent)]
    Root(#[from] RootError),
    #[error("ODE tolerance {name} = {value} must be positive")]
    BadTolerance { name: &'static str, value: f64 },
    #[error("time must be finite and nonnegative, got {0}")]
    BadTime(f64),
    #[error("integration step size underflowed at t = {reached}")]
    StepUnderflow { reached: f64 },
    #[error("integration exceeded the step budget at t = {reached}")]
    StepLimit { reached: f64 },
    #[error("extinction is impossible for this law (no death rate), conditioning is degenerate")]
    DegenerateConditioning,
    #[error("integral-form evaluator needs a positive death rate when 0 is untracked")]
    SingularIntegralForm,
}

/// Integration method tag; a single embedded Runge–Kutta pair is provided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OdeMethod {
    /// Dormand–Prince 4(5) embedded adaptive pair.
    #[default]
    DormandPrince45,
}

/// Tolerances and step bounds for the adaptive integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeSettings {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_step: f64,
    pub method: OdeMethod,
}

impl Default for OdeSettings {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_step: f64::INFINITY,
            method: OdeMethod::DormandPrince45,
        }
    }
}

impl OdeSettings {
    /// Tightened tolerances for oracle-grade comparisons.
    pub fn strict() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), EngineError> {
        for (name, value) in [
            ("abs_tol", self.abs_tol),
            ("rel_tol", self.rel_tol),
            ("max_step", self.max_step),
        ] {
            if !(value > 0.0) {
                return Err(EngineError::BadTolerance { name, value });
            }
        }
        Ok(())
    }
}

fn check_time(t: f64) -> Result<(), EngineError> {
    if !t.is_finite() || t < 0.0 {
        return Err(EngineError::BadTime(t));
    }
    Ok(())
}

/// Dense coefficient vector of the marked generator as a polynomial in `y`:
/// tracked sizes carry their mark, untracked sizes (including the `b_1 y`
/// term) carry weight 1.
fn marked_poly(law: &OffspringLaw, set: &CrossingSet, marks: &[f64]) -> Vec<f64> {
    let m = law.max_offspring().max(1) as usize;
    let mut coeffs = vec![0.0; m + 1];
    coeffs[1] = law.b1();
    for (j, b) in law.support() {
        match set.position(j) {
            Some(pos) => coeffs[j as usize] += b * marks[pos],
            None => coeffs[j as usize] += b,
        }
    }
    coeffs
}

fn horner(coeffs: &[f64], y: f64) -> f64 {
    let mut acc = 0.0;
    for &c in coeffs.iter().rev() {
        acc = acc * y + c;
    }
    acc
}

/// `G(t, u, v)`: the joint probability generating function
/// `E[u^X(t) v^Y(t) | X(0) = 1]`, computed by integrating the scalar flow
/// from `u`; the result is clamped to `[0, 1]`.
///
/// `G(t, marked_root(v), v)` is constant in `t`, and for `u` above (below)
/// the marked root the flow decreases (increases) monotonically toward it.
pub fn joint_pgf(
    law: &OffspringLaw,
    set: &CrossingSet,
    t: f64,
    u: f64,
    marks: &[f64],
    settings: &OdeSettings,
) -> Result<f64, EngineError> {
    set.validate_against(law)?;
    check_time(t)?;
    // validates domains of u and the marks
    law.marked_generator(set, u, marks)?;
    if t == 0.0 {
        return Ok(u);
    }
    let poly = marked_poly(law, set, marks);
    let y = rk45::integrate(
        |y, dy| dy[0] = horner(&poly, y[0]),
        vec![u],
        t,
        settings,
    )?;
    Ok(y[0].clamp(0.0, 1.0))
}

/// `E[v^Y(t) | X(0) = i0]`: the crossing-count PGF from `i0` particles,
/// which is the one-particle value raised to the `i0`-th power.
pub fn crossing_pgf_from_state(
    law: &OffspringLaw,
    set: &CrossingSet,
    t: f64,
    marks: &[f64],
    i0: u32,
    settings: &OdeSettings,
) -> Result<f64, EngineError> {
    if i0 == 0 {
        set.validate_against(law)?;
        check_time(t)?;
        law.marked_generator(set, 1.0, marks)?;
        return Ok(1.0);
    }
    let one = joint_pgf(law, set, t, 1.0, marks, settings)?;
    Ok(one.powi(i0 as i32))
}

struct ConvWorkspace {
    /// powers[i] = i-fold convolution of the state; powers[0] is the delta.
    powers: Vec<Vec<f64>>,
}

impl ConvWorkspace {
    fn new(len: usize, max_power: usize, delta_offset: usize) -> Self {
        let mut powers = vec![vec![0.0; len]; max_power + 1];
        powers[0][delta_offset] = 1.0;
        Self { powers }
    }
}

/// Marginal crossing distribution `{P(Y(t) = k | X(0) = 1) : |k| <= kmax}`
/// by integrating the closed coefficient system on the truncated lattice.
pub fn crossing_distribution(
    law: &OffspringLaw,
    set: &CrossingSet,
    t: f64,
    kmax: u32,
    settings: &OdeSettings,
) -> Result<CoeffTable, EngineError> {
    set.validate_against(law)?;
    check_time(t)?;
    let space = KSpace::new(set.len(), kmax);
    let mut state = vec![0.0; space.len()];
    state[0] = 1.0; // Y(0) = 0
    let state = if t == 0.0 {
        state
    } else {
        let shifts: Vec<Vec<u32>> = (0..set.len()).map(|pos| space.shift_down(pos)).collect();
        let max_power = law.max_offspring() as usize;
        let mut ws = ConvWorkspace::new(space.len(), max_power, 0);
        rk45::integrate(
            |y, dydt| marginal_rhs(law, set, &space, &shifts, &mut ws, y, dydt),
            state,
            t,
            settings,
        )?
    };

    let mut table = CoeffTable::with_slack(
        TableForm::Marginal,
        set.len(),
        Truncation::marginal(kmax),
        SOLVER_SLACK,
    );
    for (offset, &value) in state.iter().enumerate() {
        if value != 0.0 {
            table.set(space.index(offset), value)?;
        }
    }
    Ok(table)
}

fn marginal_rhs(
    law: &OffspringLaw,
    set: &CrossingSet,
    space: &KSpace,
    shifts: &[Vec<u32>],
    ws: &mut ConvWorkspace,
    y: &[f64],
    dydt: &mut [f64],
) {
    let max_power = law.max_offspring() as usize;
    if max_power >= 1 {
        ws.powers[1].copy_from_slice(y);
    }
    for i in 2..=max_power {
        let (done, rest) = ws.powers.split_at_mut(i);
        space.convolve(&done[i - 1], y, &mut rest[0]);
    }
    dydt.fill(0.0);
    for (j, b) in law.support() {
        let power = &ws.powers[j as usize];
        match set.position(j) {
            Some(pos) => {
                for offset in 0..space.len() {
                    if let Some(lower) = shift_entry(&shifts[pos], offset) {
                        dydt[offset] += b * power[lower];
                    }
                }
            }
            None => {
                if j == 0 {
                    dydt[0] += b;
                } else {
                    for offset in 0..space.len() {
                        dydt[offset] += b * power[offset];
                    }
                }
            }
        }
    }
    let b1 = law.b1();
    for offset in 0..space.len() {
        dydt[offset] += b1 * y[offset];
    }
}

/// Joint distribution `{P(X(t) = j, Y(t) = k | X(0) = 1)}` over
/// `{j <= jmax, |k| <= kmax}`; joint convolutions sum populations exactly,
/// so the truncated system is closed just like the marginal one.
pub fn joint_distribution(
    law: &OffspringLaw,
    set: &CrossingSet,
    t: f64,
    jmax: u32,
    kmax: u32,
    settings: &OdeSettings,
) -> Result<CoeffTable, EngineError> {
    set.validate_against(law)?;
    check_time(t)?;
    let space = JointSpace::new(set.len(), jmax, kmax);
    let mut state = vec![0.0; space.len()];
    if jmax >= 1 {
        state[space.offset(1, 0)] = 1.0; // (X(0), Y(0)) = (1, 0)
    }
    // With jmax = 0 the initial mass sits outside the lattice, but the
    // retained population-0 coefficients still evolve exactly (the constant
    // death term feeds them), so integrate regardless.
    let state = if t == 0.0 {
        state
    } else {
        let klen = space.kspace.len();
        let shifts: Vec<Vec<u32>> = (0..set.len())
            .map(|pos| space.kspace.shift_down(pos))
            .collect();
        let max_power = law.max_offspring() as usize;
        let mut ws = ConvWorkspace::new(space.len(), max_power, 0);
        rk45::integrate(
            |y, dydt| joint_rhs(law, set, &space, klen, &shifts, &mut ws, y, dydt),
            state,
            t,
            settings,
        )?
    };

    let mut table = CoeffTable::with_slack(
        TableForm::Joint,
        set.len(),
        Truncation::joint(jmax, kmax),
        SOLVER_SLACK,
    );
    for (offset, &value) in state.iter().enumerate() {
        if value != 0.0 {
            let pop = (offset / space.kspace.len()) as u32;
            let k = space.kspace.index(offset % space.kspace.len());
            table.set_joint(pop, k, value)?;
        }
    }
    Ok(table)
}

#[allow(clippy::too_many_arguments)]
fn joint_rhs(
    law: &OffspringLaw,
    set: &CrossingSet,
    space: &JointSpace,
    klen: usize,
    shifts: &[Vec<u32>],
    ws: &mut ConvWorkspace,
    y: &[f64],
    dydt: &mut [f64],
) {
    let max_power = law.max_offspring() as usize;
    if max_power >= 1 {
        ws.powers[1].copy_from_slice(y);
    }
    for i in 2..=max_power {
        let (done, rest) = ws.powers.split_at_mut(i);
        space.convolve(&done[i - 1], y, &mut rest[0]);
    }
    dydt.fill(0.0);
    for (j, b) in law.support() {
        let power = &ws.powers[j as usize];
        match set.position(j) {
            Some(pos) => {
                for pop in 0..=space.jmax {
                    let base = space.offset(pop, 0);
                    for ko in 0..klen {
                        if let Some(lower) = shift_entry(&shifts[pos], ko) {
                            dydt[base + ko] += b * power[base + lower];
                        }
                    }
                }
            }
            None => {
                for offset in 0..space.len() {
                    dydt[offset] += b * power[offset];
                }
            }
        }
    }
    let b1 = law.b1();
    for offset in 0..space.len() {
        dydt[offset] += b1 * y[offset];
    }
}

/// Crossing-count distribution at extinction, conditioned on extinction
/// happening: the marked-root series scaled by the inverse extinction
/// probability. Degenerate (error) when extinction has probability zero.
pub fn extinction_conditioned_distribution(
    law: &OffspringLaw,
    set: &CrossingSet,
    kmax: u32,
) -> Result<CoeffTable, EngineError> {
    let rho = roots::extinction_probability(law, roots::DEFAULT_ROOT_TOL)?;
    if rho.value <= 0.0 {
        return Err(EngineError::DegenerateConditioning);
    }
    let series = roots::marked_root_series(law, set, kmax)?;
    let mut table = CoeffTable::with_slack(
        TableForm::Marginal,
        set.len(),
        Truncation::marginal(kmax),
        series.slack(),
    );
    for (_, idx, value) in series.entries() {
        table.set(idx, value / rho.value)?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::MultiIndex;

    fn bd_law() -> OffspringLaw {
        OffspringLaw::new([(0, 1.0), (2, 1.0)]).unwrap()
    }

    fn deaths() -> CrossingSet {
        CrossingSet::new([0]).unwrap()
    }

    #[test]
    fn pgf_at_time_zero_is_u() {
        let law = bd_law();
        let set = deaths();
        let settings = OdeSettings::default();
        for u in [0.0, 0.25, 1.0] {
            assert_eq!(
                joint_pgf(&law, &set, 0.0, u, &[0.5], &settings).unwrap(),
                u
            );
        }
    }

    #[test]
    fn pgf_fixed_at_marked_root() {
        let law = bd_law();
        let set = deaths();
        let settings = OdeSettings::default();
        let root = crate::roots::marked_root(&law, &set, &[0.5], 1e-14)
            .unwrap()
            .value;
        for t in [0.5, 5.0, 20.0] {
            let g = joint_pgf(&law, &set, t, root, &[0.5], &settings).unwrap();
            assert!((g - root).abs() < 1e-9, "t = {t}: {g} vs {root}");
        }
    }

    #[test]
    fn marginal_at_time_zero_is_delta() {
        let law = bd_law();
        let table =
            crossing_distribution(&law, &deaths(), 0.0, 8, &OdeSettings::default()).unwrap();
        assert_eq!(table.get(&MultiIndex::zero(1)), 1.0);
        assert_eq!(table.len(), 1);
    }

    #[test]
    fn marginal_death_free_probability() {
        // g_0(t) = 1/(q + p e^{bt}) for the birth-death law; b = 1 variant at
        // t = ln 3 gives exactly 1/2.
        let law = OffspringLaw::new([(0, 0.5), (2, 0.5)]).unwrap();
        let t = 3.0f64.ln();
        let table =
            crossing_distribution(&law, &deaths(), t, 16, &OdeSettings::strict()).unwrap();
        let g0 = table.get(&MultiIndex::zero(1));
        assert!((g0 - 0.5).abs() < 1e-9, "g0 = {g0}");
    }

    #[test]
    fn marginal_cubic_death_free_probability() {
        // (q + p e^{2bt})^{-1/2} for the cubic law; p = q = 1/2, b = 2.
        let law = OffspringLaw::new([(0, 1.0), (3, 1.0)]).unwrap();
        let t = 0.7;
        let table =
            crossing_distribution(&law, &deaths(), t, 12, &OdeSettings::strict()).unwrap();
        let expect = (0.5 + 0.5 * (4.0 * t).exp()).powf(-0.5);
        let g0 = table.get(&MultiIndex::zero(1));
        assert!((g0 - expect).abs() < 1e-9, "g0 = {g0} vs {expect}");
    }

    #[test]
    fn joint_at_time_zero_is_delta_at_one() {
        let law = bd_law();
        let table =
            joint_distribution(&law, &deaths(), 0.0, 6, 6, &OdeSettings::default()).unwrap();
        assert_eq!(table.get_joint(1, &MultiIndex::zero(1)), 1.0);
        assert_eq!(table.len(), 1);
    }

    #[test]
    fn joint_zero_population_zero_crossings_stays_zero() {
        // with 0 tracked, reaching population 0 requires a death event
        let law = bd_law();
        let table =
            joint_distribution(&law, &deaths(), 0.8, 10, 10, &OdeSettings::default()).unwrap();
        assert_eq!(table.get_joint(0, &MultiIndex::zero(1)), 0.0);
        // but deaths do absorb: (0, 1) has positive mass
        assert!(table.get_joint(0, &MultiIndex::unit(1, 0)) > 0.01);
    }

    #[test]
    fn joint_population_sums_to_marginal() {
        let law = OffspringLaw::new([(0, 1.5), (2, 0.5)]).unwrap();
        let set = deaths();
        let settings = OdeSettings::default();
        let joint = joint_distribution(&law, &set, 1.0, 40, 12, &settings).unwrap();
        let marginal = crossing_distribution(&law, &set, 1.0, 12, &settings).unwrap();
        let projected = joint.project_marginal();
        for n in 0..=12u32 {
            let idx = MultiIndex::from_counts(vec![n]);
            let gap = (projected.get(&idx) - marginal.get(&idx)).abs();
            assert!(gap < 1e-9, "k = {n}: gap {gap}");
        }
    }

    #[test]
    fn pgf_power_rule() {
        let law = bd_law();
        let set = deaths();
        let settings = OdeSettings::default();
        assert_eq!(
            crossing_pgf_from_state(&law, &set, 1.0, &[0.5], 0, &settings).unwrap(),
            1.0
        );
        let one = crossing_pgf_from_state(&law, &set, 1.0, &[0.5], 1, &settings).unwrap();
        assert_eq!(one, joint_pgf(&law, &set, 1.0, 1.0, &[0.5], &settings).unwrap());
        let three = crossing_pgf_from_state(&law, &set, 1.0, &[0.5], 3, &settings).unwrap();
        assert!((three - one.powi(3)).abs() < 1e-15);
    }

    #[test]
    fn extinction_conditioned_birth_death() {
        // p = q: extinction is certain, the series entry at e_0 is p = 1/2.
        let law = bd_law();
        let table = extinction_conditioned_distribution(&law, &deaths(), 8).unwrap();
        let e0 = table.get(&MultiIndex::unit(1, 0));
        assert!((e0 - 0.5).abs() < 1e-12, "entry {e0}");
    }

    #[test]
    fn extinction_conditioned_cubic() {
        let law = OffspringLaw::new([(0, 1.0), (3, 1.0)]).unwrap();
        let table = extinction_conditioned_distribution(&law, &deaths(), 8).unwrap();
        let golden = (5.0f64.sqrt() - 1.0) / 2.0;
        let e0 = table.get(&MultiIndex::unit(1, 0));
        assert!((e0 - 0.5 / golden).abs() < 1e-9, "entry {e0}");
    }

    #[test]
    fn extinction_conditioning_degenerate_without_deaths() {
        let law = OffspringLaw::new([(2, 1.0)]).unwrap();
        let set = CrossingSet::new([2]).unwrap();
        assert_eq!(
            extinction_conditioned_distribution(&law, &set, 4).unwrap_err(),
            EngineError::DegenerateConditioning
        );
    }

    #[test]
    fn truncation_is_exact() {
        // shared indices agree between kmax and kmax + 2 within solver error
        let law = bd_law();
        let set = deaths();
        let settings = OdeSettings::default();
        let small = crossing_distribution(&law, &set, 1.0, 8, &settings).unwrap();
        let large = crossing_distribution(&law, &set, 1.0, 10, &settings).unwrap();
        for n in 0..=8u32 {
            let idx = MultiIndex::from_counts(vec![n]);
            assert!(
                (small.get(&idx) - large.get(&idx)).abs() < 1e-10,
                "k = {n}"
            );
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let law = bd_law();
        let set = deaths();
        let settings = OdeSettings::default();
        assert!(joint_pgf(&law, &set, -1.0, 1.0, &[0.5], &settings).is_err());
        assert!(joint_pgf(&law, &set, 1.0, 1.5, &[0.5], &settings).is_err());
        assert!(joint_pgf(&law, &set, 1.0, 1.0, &[1.5], &settings).is_err());
        let bad = OdeSettings {
            abs_tol: 0.0,
            ..OdeSettings::default()
        };
        assert!(matches!(
            joint_pgf(&law, &set, 1.0, 1.0, &[0.5], &bad),
            Err(EngineError::BadTolerance { .. })
        ));
    }
}
