//! Reference evaluators for the paper-style integral recursions of the
//! coefficient families, on a shared uniform grid with fourth-order prefix
//! integration. Slow and deliberately independent of the coefficient ODE
//! path; used for cross-checks only.

use super::{EngineError, OdeSettings};
use crate::dense::{shift_entry, JointSpace, KSpace};
use crate::law::{CoeffTable, CrossingSet, OffspringLaw, TableForm, Truncation};
use crate::quad::prefix_integral;

const INTEGRAL_SLACK: f64 = 1e-7;

/// Marginal crossing distribution via the weighted integral recursion
/// `g_k(t) = untracked(g_0(t)) * integral_0^t F_k(s) / untracked(g_0(s)) ds`,
/// filling grades with restricted convolutions of lower-grade coefficients.
pub fn crossing_distribution_via_integral(
    law: &OffspringLaw,
    set: &CrossingSet,
    t: f64,
    kmax: u32,
    nodes: usize,
) -> Result<CoeffTable, EngineError> {
    set.validate_against(law)?;
    super::check_time(t)?;
    let dim = set.len();
    if t == 0.0 {
        let mut table = CoeffTable::with_slack(
            TableForm::Marginal,
            dim,
            Truncation::marginal(kmax),
            INTEGRAL_SLACK,
        );
        table.set(&crate::law::MultiIndex::zero(dim), 1.0)?;
        return Ok(table);
    }
    let m = nodes.max(8).next_multiple_of(2);
    let h = t / m as f64;
    let settings = OdeSettings::strict();
    let zeros = vec![0.0; dim];

    // g_0 on the grid and the integrating factor it induces
    let mut g0 = Vec::with_capacity(m + 1);
    for i in 0..=m {
        g0.push(super::joint_pgf(law, set, h * i as f64, 1.0, &zeros, &settings)?);
    }
    let denom: Vec<f64> = g0.iter().map(|&g| law.untracked_value(set, g)).collect();
    if denom.iter().any(|&d| d.abs() < 1e-12) {
        return Err(EngineError::SingularIntegralForm);
    }

    let space = KSpace::new(dim, kmax);
    let len = space.len();
    let shifts: Vec<Vec<u32>> = (0..dim).map(|pos| space.shift_down(pos)).collect();
    let max_power = law.max_offspring() as usize;

    // values[offset][node]
    let mut values = vec![vec![0.0f64; m + 1]; len];
    values[0].copy_from_slice(&g0);

    let mut cur = vec![0.0f64; len];
    for grade in 1..=kmax {
        let range = space.grade_range(grade);
        let mut f_rows = vec![vec![0.0f64; m + 1]; range.len()];
        for node in 0..=m {
            for offset in 0..len {
                cur[offset] = if space.index(offset).order() < grade {
                    values[offset][node]
                } else {
                    0.0
                };
            }
            let powers = dense_powers(&space, &cur, max_power);
            for (row, offset) in range.clone().enumerate() {
                let mut f = 0.0;
                for (j, b) in law.support() {
                    if let Some(pos) = set.position(j) {
                        if let Some(lower) = shift_entry(&shifts[pos], offset) {
                            f += b * powers[j as usize][lower];
                        }
                    } else if j >= 2 {
                        f += b * powers[j as usize][offset];
                    }
                }
                f_rows[row][node] = f;
            }
        }
        for (row, offset) in range.clone().enumerate() {
            let integrand: Vec<f64> = (0..=m).map(|i| f_rows[row][i] / denom[i]).collect();
            let prefix = prefix_integral(&integrand, h);
            for node in 0..=m {
                values[offset][node] = denom[node] * prefix[node];
            }
        }
    }

    let mut table = CoeffTable::with_slack(
        TableForm::Marginal,
        dim,
        Truncation::marginal(kmax),
        INTEGRAL_SLACK,
    );
    for offset in 0..len {
        let v = values[offset][m];
        if v != 0.0 {
            table.set(space.index(offset), v)?;
        }
    }
    Ok(table)
}

/// Joint distribution via the integral recursion; the two branches use the
/// untracked value at `g_{0,0}` or the bare `exp(b_1 t)` factor depending on
/// whether deaths are tracked. Requires a positive death rate when 0 is
/// untracked (the stated singular case of the weighted form).
pub fn joint_distribution_via_integral(
    law: &OffspringLaw,
    set: &CrossingSet,
    t: f64,
    jmax: u32,
    kmax: u32,
    nodes: usize,
) -> Result<CoeffTable, EngineError> {
    set.validate_against(law)?;
    super::check_time(t)?;
    let dim = set.len();
    if t == 0.0 {
        let mut table = CoeffTable::with_slack(
            TableForm::Joint,
            dim,
            Truncation::joint(jmax, kmax),
            INTEGRAL_SLACK,
        );
        if jmax >= 1 {
            table.set_joint(1, &crate::law::MultiIndex::zero(dim), 1.0)?;
        }
        return Ok(table);
    }
    let m = nodes.max(8).next_multiple_of(2);
    let h = t / m as f64;
    let settings = OdeSettings::strict();
    let zeros = vec![0.0; dim];
    let deaths_tracked = set.contains(0);

    // Weight w and inverse weight winv on the grid: g = w * (delta + prefix(F * winv)).
    let (g00, weight, winv): (Vec<f64>, Vec<f64>, Vec<f64>) = if deaths_tracked {
        let w: Vec<f64> = (0..=m).map(|i| (law.b1() * h * i as f64).exp()).collect();
        let wi: Vec<f64> = w.iter().map(|&x| 1.0 / x).collect();
        (vec![0.0; m + 1], w, wi)
    } else {
        if law.rate(0) <= 0.0 {
            return Err(EngineError::SingularIntegralForm);
        }
        let mut g00 = Vec::with_capacity(m + 1);
        for i in 0..=m {
            g00.push(super::joint_pgf(law, set, h * i as f64, 0.0, &zeros, &settings)?);
        }
        let w: Vec<f64> = g00
            .iter()
            .map(|&g| law.untracked_value(set, g) / law.rate(0))
            .collect();
        if w.iter().any(|&x| x.abs() < 1e-12) {
            return Err(EngineError::SingularIntegralForm);
        }
        let wi: Vec<f64> = w.iter().map(|&x| 1.0 / x).collect();
        (g00, w, wi)
    };

    let space = JointSpace::new(dim, jmax, kmax);
    let klen = space.kspace.len();
    let len = space.len();
    let shifts: Vec<Vec<u32>> = (0..dim).map(|pos| space.kspace.shift_down(pos)).collect();
    let max_power = law.max_offspring() as usize;

    let mut values = vec![vec![0.0f64; m + 1]; len];
    values[space.offset(0, 0)].copy_from_slice(&g00);

    // Offsets ordered by grade = population + |k|.
    let mut by_grade: Vec<Vec<usize>> = vec![Vec::new(); (jmax + kmax + 1) as usize];
    for offset in 0..len {
        let pop = (offset / klen) as u32;
        let order = space.kspace.index(offset % klen).order();
        by_grade[(pop + order) as usize].push(offset);
    }
    let grade_of = |offset: usize| -> u32 {
        let pop = (offset / klen) as u32;
        pop + space.kspace.index(offset % klen).order()
    };

    let mut cur = vec![0.0f64; len];
    for grade in 1..=(jmax + kmax) {
        let members = &by_grade[grade as usize];
        if members.is_empty() {
            continue;
        }
        let mut f_rows = vec![vec![0.0f64; m + 1]; members.len()];
        for node in 0..=m {
            for offset in 0..len {
                cur[offset] = if grade_of(offset) < grade {
                    values[offset][node]
                } else {
                    0.0
                };
            }
            let powers = joint_powers(&space, &cur, max_power);
            for (row, &offset) in members.iter().enumerate() {
                let base = offset - offset % klen;
                let ko = offset % klen;
                let mut f = 0.0;
                for (j, b) in law.support() {
                    if let Some(pos) = set.position(j) {
                        if let Some(lower) = shift_entry(&shifts[pos], ko) {
                            f += b * powers[j as usize][base + lower];
                        }
                    } else if j >= 2 {
                        f += b * powers[j as usize][offset];
                    }
                }
                f_rows[row][node] = f;
            }
        }
        for (row, &offset) in members.iter().enumerate() {
            let integrand: Vec<f64> = (0..=m).map(|i| f_rows[row][i] * winv[i]).collect();
            let prefix = prefix_integral(&integrand, h);
            let delta = if offset == space.offset(1, 0) { 1.0 } else { 0.0 };
            for node in 0..=m {
                values[offset][node] = weight[node] * (delta + prefix[node]);
            }
        }
    }

    let mut table = CoeffTable::with_slack(
        TableForm::Joint,
        dim,
        Truncation::joint(jmax, kmax),
        INTEGRAL_SLACK,
    );
    for offset in 0..len {
        let v = values[offset][m];
        if v != 0.0 {
            let pop = (offset / klen) as u32;
            table.set_joint(pop, space.kspace.index(offset % klen), v)?;
        }
    }
    Ok(table)
}

fn dense_powers(space: &KSpace, state: &[f64], max_power: usize) -> Vec<Vec<f64>> {
    let mut powers = vec![vec![0.0; space.len()]; max_power + 1];
    powers[0][0] = 1.0;
    if max_power >= 1 {
        powers[1].copy_from_slice(state);
    }
    for i in 2..=max_power {
        let (done, rest) = powers.split_at_mut(i);
        space.convolve(&done[i - 1], state, &mut rest[0]);
    }
    powers
}

fn joint_powers(space: &JointSpace, state: &[f64], max_power: usize) -> Vec<Vec<f64>> {
    let mut powers = vec![vec![0.0; space.len()]; max_power + 1];
    powers[0][0] = 1.0;
    if max_power >= 1 {
        powers[1].copy_from_slice(state);
    }
    for i in 2..=max_power {
        let (done, rest) = powers.split_at_mut(i);
        space.convolve(&done[i - 1], state, &mut rest[0]);
    }
    powers
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::MultiIndex;

    #[test]
    fn marginal_integral_matches_ode_path() {
        let law = OffspringLaw::new([(0, 1.0), (2, 1.0)]).unwrap();
        let set = CrossingSet::new([0]).unwrap();
        let t = 0.6;
        let via_integral = crossing_distribution_via_integral(&law, &set, t, 8, 512).unwrap();
        let via_ode =
            super::super::crossing_distribution(&law, &set, t, 8, &OdeSettings::strict()).unwrap();
        for n in 0..=8u32 {
            let idx = MultiIndex::from_counts(vec![n]);
            let gap = (via_integral.get(&idx) - via_ode.get(&idx)).abs();
            assert!(gap < 1e-8, "k = {n}: gap {gap}");
        }
    }

    #[test]
    fn joint_integral_matches_ode_path_deaths_tracked() {
        let law = OffspringLaw::new([(0, 1.5), (2, 0.5)]).unwrap();
        let set = CrossingSet::new([0]).unwrap();
        let t = 0.5;
        let via_integral = joint_distribution_via_integral(&law, &set, t, 6, 6, 512).unwrap();
        let via_ode =
            super::super::joint_distribution(&law, &set, t, 6, 6, &OdeSettings::strict()).unwrap();
        for pop in 0..=6u32 {
            for n in 0..=6u32 {
                let idx = MultiIndex::from_counts(vec![n]);
                let gap = (via_integral.get_joint(pop, &idx) - via_ode.get_joint(pop, &idx)).abs();
                assert!(gap < 1e-7, "(j, k) = ({pop}, {n}): gap {gap}");
            }
        }
    }

    #[test]
    fn joint_integral_matches_ode_path_births_tracked() {
        let law = OffspringLaw::new([(0, 1.0), (2, 1.0)]).unwrap();
        let set = CrossingSet::new([2]).unwrap();
        let t = 0.5;
        let via_integral = joint_distribution_via_integral(&law, &set, t, 6, 6, 512).unwrap();
        let via_ode =
            super::super::joint_distribution(&law, &set, t, 6, 6, &OdeSettings::strict()).unwrap();
        for pop in 0..=6u32 {
            for n in 0..=6u32 {
                let idx = MultiIndex::from_counts(vec![n]);
                let gap = (via_integral.get_joint(pop, &idx) - via_ode.get_joint(pop, &idx)).abs();
                assert!(gap < 1e-7, "(j, k) = ({pop}, {n}): gap {gap}");
            }
        }
    }

    #[test]
    fn untracked_deaths_without_death_rate_is_singular() {
        let law = OffspringLaw::new([(2, 1.0), (3, 0.5)]).unwrap();
        let set = CrossingSet::new([2]).unwrap();
        assert_eq!(
            joint_distribution_via_integral(&law, &set, 0.5, 4, 4, 64).unwrap_err(),
            EngineError::SingularIntegralForm
        );
    }
}
