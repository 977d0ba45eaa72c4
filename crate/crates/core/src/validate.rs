//! Independent oracles and statistical comparison: uniformization of the
//! truncated augmented chain, total-variation distance, and z-score reports
//! for Monte Carlo output.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::dense::JointSpace;
use crate::law::{CoeffTable, CrossingSet, LawError, OffspringLaw, TableForm, Truncation};

/// Poisson tail kept below this when truncating the uniformization series.
const POISSON_TAIL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ValidateError {
    #[error(transparent)]
    Law(#[from] LawError),
    #[error("time must be finite and nonnegative, got {0}")]
    BadTime(f64),
    #[error("population cap {jmax} is below the initial population {i0}")]
    CapBelowInitial { jmax: u32, i0: u32 },
    #[error("distribution entry at {key} is negative ({value})")]
    NegativeEntry { key: String, value: f64 },
    #[error("empirical table is empty")]
    EmptyEmpirical,
}

/// Transient distribution of `(X(t), Y(t))` on `{j <= jmax, |k| <= kmax}` by
/// uniformization at rate `jmax * -b_1`, together with a rigorous upper
/// bound on the probability mass lost to the truncation.
///
/// The truncated kernel only drops mass (paths are counted until they first
/// leave the lattice), so every retained entry is an exact lower bound on
/// the true probability and `leaked` bounds the total shortfall.
pub fn uniformization_distribution(
    law: &OffspringLaw,
    set: &CrossingSet,
    i0: u32,
    t: f64,
    jmax: u32,
    kmax: u32,
) -> Result<(CoeffTable, f64), ValidateError> {
    set.validate_against(law)?;
    if !t.is_finite() || t < 0.0 {
        return Err(ValidateError::BadTime(t));
    }
    if i0 > jmax {
        return Err(ValidateError::CapBelowInitial { jmax, i0 });
    }
    let space = JointSpace::new(set.len(), jmax, kmax);
    let klen = space.kspace.len();
    let len = space.len();
    let start = space.offset(i0, 0);

    let rate = f64::from(jmax) * law.total_rate();
    if t == 0.0 || rate == 0.0 {
        // jmax = 0 forces i0 = 0, which is absorbing: the delta is exact.
        let mut table = result_table(set.len(), jmax, kmax);
        table.set_joint(i0, space.kspace.index(0), 1.0)?;
        return Ok((table, 0.0));
    }

    // One-step kernel of the uniformized chain, as explicit transition lists;
    // usize::MAX marks transitions that exit the lattice.
    let mut transitions: Vec<Vec<(usize, f64)>> = vec![Vec::new(); len];
    for pop in 1..=jmax {
        for ko in 0..klen {
            let from = space.offset(pop, ko);
            let mut list = Vec::new();
            for (size, b) in law.support() {
                let prob = f64::from(pop) * b / rate;
                let next_pop = pop + size - 1;
                let next_k = match set.position(size) {
                    Some(member) => {
                        let idx = space.kspace.index(ko).plus_unit(member);
                        space.kspace.offset(&idx)
                    }
                    None => Some(ko),
                };
                let target = match next_k {
                    Some(k_off) if next_pop <= jmax => space.offset(next_pop, k_off),
                    _ => usize::MAX,
                };
                list.push((target, prob));
            }
            transitions[from] = list;
        }
    }
    let stay: Vec<f64> = (0..len)
        .map(|offset| {
            let pop = (offset / klen) as u32;
            1.0 - f64::from(pop) * law.total_rate() / rate
        })
        .collect();

    let mut current = vec![0.0f64; len];
    current[start] = 1.0;
    let mut leaked_in_chain = 0.0f64;
    let mut next = vec![0.0f64; len];

    let mut accumulated = vec![0.0f64; len];
    let mut leaked_accumulated = 0.0f64;

    let lambda_t = rate * t;
    // log-space Poisson weights: exp(-lambda_t) alone can underflow long
    // before the bulk of the distribution is reached
    let mut ln_weight = -lambda_t;
    let mut weight = ln_weight.exp();
    let mut cumulative = weight;
    accumulated.iter_mut().zip(&current).for_each(|(a, &c)| *a += weight * c);

    let max_jumps = (lambda_t + 60.0 * (lambda_t.sqrt() + 1.0) + 1000.0) as u64;
    let mut n = 0u64;
    while 1.0 - cumulative > POISSON_TAIL && n < max_jumps {
        // advance the uniformized chain one jump
        next.fill(0.0);
        let mut leaked_step = leaked_in_chain;
        for (offset, &mass) in current.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            next[offset] += stay[offset] * mass;
            for &(target, prob) in &transitions[offset] {
                if target == usize::MAX {
                    leaked_step += prob * mass;
                } else {
                    next[target] += prob * mass;
                }
            }
        }
        std::mem::swap(&mut current, &mut next);
        leaked_in_chain = leaked_step;

        n += 1;
        ln_weight += (lambda_t / n as f64).ln();
        weight = ln_weight.exp();
        cumulative += weight;
        for (a, &c) in accumulated.iter_mut().zip(&current) {
            *a += weight * c;
        }
        leaked_accumulated += weight * leaked_in_chain;
    }
    // unspent Poisson mass counts as leaked, keeping the bound rigorous
    // even if the jump budget cut the series short
    let leaked = leaked_accumulated + (1.0 - cumulative).max(0.0);

    let mut table = result_table(set.len(), jmax, kmax);
    for (offset, &value) in accumulated.iter().enumerate() {
        if value != 0.0 {
            let pop = (offset / klen) as u32;
            table.set_joint(pop, space.kspace.index(offset % klen), value)?;
        }
    }
    Ok((table, leaked))
}

fn result_table(dim: usize, jmax: u32, kmax: u32) -> CoeffTable {
    CoeffTable::with_slack(TableForm::Joint, dim, Truncation::joint(jmax, kmax), 1e-12)
}

/// Total-variation distance between two nonnegative (possibly
/// sub-normalized) tables: half the entrywise gap over the union of
/// supports plus half the mass gap, so missing mass counts as disjoint.
pub fn total_variation<K: Ord + Clone + fmt::Display>(
    a: &BTreeMap<K, f64>,
    b: &BTreeMap<K, f64>,
) -> Result<f64, ValidateError> {
    for (label, table) in [("a", a), ("b", b)] {
        for (key, &value) in table {
            if value < 0.0 {
                return Err(ValidateError::NegativeEntry {
                    key: format!("{label}[{key}]"),
                    value,
                });
            }
        }
    }
    let mut gap = 0.0;
    for (key, &va) in a {
        gap += (va - b.get(key).copied().unwrap_or(0.0)).abs();
    }
    for (key, &vb) in b {
        if !a.contains_key(key) {
            gap += vb;
        }
    }
    let mass_a: f64 = a.values().sum();
    let mass_b: f64 = b.values().sum();
    Ok(0.5 * gap + 0.5 * (mass_a - mass_b).abs())
}

/// One compared cell of a z-score report.
#[derive(Debug, Clone)]
pub struct ZCell {
    pub label: String,
    pub observed: u64,
    pub expected: f64,
    pub z: f64,
}

/// Comparison of empirical counts against analytic cell probabilities:
/// individual z-scores where the expected count is large enough for the
/// normal approximation, a single pooled cell for everything else.
#[derive(Debug, Clone)]
pub struct ZReport {
    pub cells: Vec<ZCell>,
    pub pooled: ZCell,
    pub max_abs_z: f64,
    pub tv: f64,
    pub replicates: u64,
    pub threshold: f64,
    pub passed: bool,
}

impl fmt::Display for ZReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "z-report: {} cells + pooled tail, n = {}",
            self.cells.len(),
            self.replicates
        )?;
        for cell in &self.cells {
            writeln!(
                f,
                "  {:<14} observed {:>8}  expected {:>12.3}  z {:+.3}",
                cell.label, cell.observed, cell.expected, cell.z
            )?;
        }
        writeln!(
            f,
            "  {:<14} observed {:>8}  expected {:>12.3}  z {:+.3}",
            self.pooled.label, self.pooled.observed, self.pooled.expected, self.pooled.z
        )?;
        writeln!(f, "  total variation {:.6}", self.tv)?;
        write!(
            f,
            "  max |z| = {:.3} vs threshold {} -> {}",
            self.max_abs_z,
            self.threshold,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

/// Options for [`mc_z_report`]; defaults: threshold 4, pool below expected
/// count 10.
#[derive(Debug, Clone, Copy)]
pub struct ZReportOptions {
    pub z_threshold: f64,
    pub min_expected: f64,
}

impl Default for ZReportOptions {
    fn default() -> Self {
        Self {
            z_threshold: 4.0,
            min_expected: 10.0,
        }
    }
}

/// Builds the z-score report for empirical counts (total `replicates`
/// draws) against analytic probabilities. Cells with expected count below
/// `min_expected` are pooled with the analytic tail mass so the normal
/// approximation stays honest; tiny negative analytic values (solver noise)
/// are clamped to zero.
pub fn mc_z_report<K: Ord + Clone + fmt::Display>(
    counts: &BTreeMap<K, u64>,
    replicates: u64,
    analytic: &BTreeMap<K, f64>,
    options: &ZReportOptions,
) -> Result<ZReport, ValidateError> {
    if replicates == 0 || counts.is_empty() {
        return Err(ValidateError::EmptyEmpirical);
    }
    for (key, &p) in analytic {
        if p < -1e-9 {
            return Err(ValidateError::NegativeEntry {
                key: format!("analytic[{key}]"),
                value: p,
            });
        }
    }
    let n = replicates as f64;
    let mut cells = Vec::new();
    let mut dense_prob = 0.0;
    let mut dense_observed = 0u64;
    let mut max_abs_z = 0.0f64;
    for (key, &p_raw) in analytic {
        let p = p_raw.max(0.0);
        let expected = n * p;
        if expected < options.min_expected {
            continue;
        }
        let observed = counts.get(key).copied().unwrap_or(0);
        let sd = (n * p * (1.0 - p)).sqrt();
        let z = if sd > 0.0 {
            (observed as f64 - expected) / sd
        } else {
            0.0
        };
        max_abs_z = max_abs_z.max(z.abs());
        dense_prob += p;
        dense_observed += observed;
        cells.push(ZCell {
            label: key.to_string(),
            observed,
            expected,
            z,
        });
    }

    // everything not individually tested: sparse analytic cells, analytic
    // tail mass, and observed cells outside the analytic table
    let pool_p = (1.0 - dense_prob).max(0.0);
    let pool_observed = counts.values().sum::<u64>() - dense_observed;
    let pool_expected = n * pool_p;
    let pool_sd = (n * pool_p * (1.0 - pool_p)).sqrt();
    // degenerate pool (p = 0 or p = 1) has no variance: the observed count
    // must match the expectation outright
    let pool_z = if pool_sd > 0.0 {
        (pool_observed as f64 - pool_expected) / pool_sd
    } else if (pool_observed as f64 - pool_expected).abs() < 0.5 {
        0.0
    } else {
        f64::INFINITY
    };
    max_abs_z = max_abs_z.max(pool_z.abs());
    let pooled = ZCell {
        label: "pooled tail".to_string(),
        observed: pool_observed,
        expected: pool_expected,
        z: pool_z,
    };

    let empirical: BTreeMap<K, f64> = counts
        .iter()
        .map(|(key, &c)| (key.clone(), c as f64 / n))
        .collect();
    let analytic_clamped: BTreeMap<K, f64> = analytic
        .iter()
        .map(|(key, &p)| (key.clone(), p.max(0.0)))
        .collect();
    let tv = total_variation(&empirical, &analytic_clamped)?;

    Ok(ZReport {
        cells,
        pooled,
        max_abs_z,
        tv,
        replicates,
        threshold: options.z_threshold,
        passed: max_abs_z < options.z_threshold,
    })
}
