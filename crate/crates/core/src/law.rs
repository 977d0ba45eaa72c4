//! Offspring laws, crossing sets, and the sparse multi-index coefficient
//! algebra the rest of the crate builds on.
//!
//! An [`OffspringLaw`] is a finite family of nonnegative rates `b_j`
//! (`j != 1`) with the diagonal entry `b_1 = -sum(b_j)` recomputed from the
//! rates. Its generator is the polynomial `B(u) = sum_j b_j u^j`; a
//! [`CrossingSet`] `N` splits it into tracked and untracked parts, and the
//! marked generator `B(u) - sum_{k in N} b_k (1 - v_k) u^k` carries one mark
//! variable per tracked size.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use thiserror::Error;

/// Largest offspring size accepted by [`OffspringLaw::new`].
pub const DEFAULT_SUPPORT_LIMIT: u32 = 64;

/// Relaxation below zero tolerated for stored coefficients.
pub const DEFAULT_COEFF_SLACK: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum LawError {
    #[error("offspring size 1 carries no event and cannot have a rate")]
    RateAtOne,
    #[error("rate for offspring size {size} is negative ({rate})")]
    NegativeRate { size: u32, rate: f64 },
    #[error("rate for offspring size {size} is not finite")]
    NonFiniteRate { size: u32 },
    #[error("law needs at least one positive rate")]
    EmptyLaw,
    #[error("offspring size {size} exceeds the support limit {limit}")]
    SupportTooLarge { size: u32, limit: u32 },
    #[error("crossing sets exclude offspring size 1")]
    CrossingSetContainsOne,
    #[error("duplicate crossing-set member {member}")]
    DuplicateMember { member: u32 },
    #[error("crossing-set member {member} has no positive rate in the law")]
    UnratedMember { member: u32 },
    #[error("argument {name} = {value} outside [0, 1]")]
    OutOfUnitInterval { name: &'static str, value: f64 },
    #[error("mark vector has {got} entries, crossing set has {expected}")]
    MarkDimensionMismatch { got: usize, expected: usize },
    #[error("tables of mixed forms (marginal vs joint)")]
    MixedForms,
    #[error("table truncation lacks a population cap for the joint form")]
    MissingPopulationCap,
    #[error("index dimension {got} does not match table dimension {expected}")]
    IndexDimensionMismatch { got: usize, expected: usize },
    #[error("coefficient {value} at {key} below the nonnegativity slack {slack}")]
    NegativeCoefficient { key: String, value: f64, slack: f64 },
}

/// A finite-support branching rate family `{b_j}` with `b_1 = -sum(b_j)`.
///
/// Zero-valued rates are dropped at construction, so [`OffspringLaw::support`]
/// iterates exactly over the sizes with positive rate.
#[derive(Debug, Clone, PartialEq)]
pub struct OffspringLaw {
    rates: BTreeMap<u32, f64>,
    b1: f64,
    max_offspring: u32,
}

impl OffspringLaw {
    /// Builds a law from `size -> rate` pairs, capping the support at
    /// [`DEFAULT_SUPPORT_LIMIT`].
    pub fn new(rates: impl IntoIterator<Item = (u32, f64)>) -> Result<Self, LawError> {
        Self::with_support_limit(rates, DEFAULT_SUPPORT_LIMIT)
    }

    /// As [`OffspringLaw::new`] with an explicit support cap.
    pub fn with_support_limit(
        rates: impl IntoIterator<Item = (u32, f64)>,
        limit: u32,
    ) -> Result<Self, LawError> {
        let mut kept = BTreeMap::new();
        for (size, rate) in rates {
            if size == 1 {
                return Err(LawError::RateAtOne);
            }
            if !rate.is_finite() {
                return Err(LawError::NonFiniteRate { size });
            }
            if rate < 0.0 {
                return Err(LawError::NegativeRate { size, rate });
            }
            if size > limit {
                return Err(LawError::SupportTooLarge { size, limit });
            }
            if rate > 0.0 {
                kept.insert(size, rate);
            }
        }
        if kept.is_empty() {
            return Err(LawError::EmptyLaw);
        }
        let total: f64 = kept.values().sum();
        let max_offspring = *kept.keys().next_back().expect("nonempty");
        Ok(Self {
            rates: kept,
            b1: -total,
            max_offspring,
        })
    }

    /// Rate `b_j`; `j = 1` returns the negative diagonal entry.
    pub fn rate(&self, size: u32) -> f64 {
        if size == 1 {
            self.b1
        } else {
            self.rates.get(&size).copied().unwrap_or(0.0)
        }
    }

    /// The diagonal entry `b_1 = -sum_{j != 1} b_j` (< 0).
    pub fn b1(&self) -> f64 {
        self.b1
    }

    /// Total event rate per particle, `-b_1`.
    pub fn total_rate(&self) -> f64 {
        -self.b1
    }

    /// Largest size with a positive rate.
    pub fn max_offspring(&self) -> u32 {
        self.max_offspring
    }

    /// Sizes with positive rate, ascending, excluding 1.
    pub fn support(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.rates.iter().map(|(&j, &b)| (j, b))
    }

    /// Value of the branching generator `B(u) = sum_j b_j u^j` (the `b_1 u`
    /// term included). `B(1) = 0` exactly up to accumulation error.
    pub fn generator(&self, u: f64) -> Result<f64, LawError> {
        check_unit("u", u)?;
        let mut acc = 0.0;
        for (&j, &b) in &self.rates {
            acc += b * u.powi(j as i32);
        }
        Ok(acc + self.b1 * u)
    }

    /// First derivative `B'(u) = sum_j j b_j u^(j-1)`.
    pub fn generator_deriv(&self, u: f64) -> f64 {
        let mut acc = self.b1;
        for (&j, &b) in &self.rates {
            if j >= 1 {
                acc += b * f64::from(j) * u.powi(j as i32 - 1);
            }
        }
        acc
    }

    /// Value of the marked generator
    /// `B(u) - sum_{k in N} b_k (1 - v_k) u^k`, i.e. the tracked part of the
    /// generator with each size-`k` term damped by its mark `v_k`.
    pub fn marked_generator(
        &self,
        set: &CrossingSet,
        u: f64,
        marks: &[f64],
    ) -> Result<f64, LawError> {
        check_unit("u", u)?;
        if marks.len() != set.len() {
            return Err(LawError::MarkDimensionMismatch {
                got: marks.len(),
                expected: set.len(),
            });
        }
        for &v in marks {
            check_unit("v", v)?;
        }
        let mut acc = self.generator(u)?;
        for (pos, &k) in set.members().iter().enumerate() {
            acc -= self.rate(k) * (1.0 - marks[pos]) * u.powi(k as i32);
        }
        Ok(acc)
    }

    /// Derivative in `u` of the untracked part
    /// `B̄_N(u) = sum_{j not in N} b_j u^j`.
    pub fn untracked_deriv(&self, set: &CrossingSet, u: f64) -> f64 {
        let mut acc = self.b1;
        for (j, b) in self.support() {
            if j >= 1 && !set.contains(j) {
                acc += b * f64::from(j) * u.powi(j as i32 - 1);
            }
        }
        acc
    }

    /// Value of the untracked part `B̄_N(u)`.
    pub fn untracked_value(&self, set: &CrossingSet, u: f64) -> f64 {
        let mut acc = self.b1 * u;
        for (j, b) in self.support() {
            if !set.contains(j) {
                acc += b * u.powi(j as i32);
            }
        }
        acc
    }
}

fn check_unit(name: &'static str, value: f64) -> Result<(), LawError> {
    if !(0.0..=1.0).contains(&value) {
        return Err(LawError::OutOfUnitInterval { name, value });
    }
    Ok(())
}

/// Ordered finite set of tracked offspring sizes, `1` excluded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrossingSet {
    members: Vec<u32>,
}

impl CrossingSet {
    pub fn new(members: impl IntoIterator<Item = u32>) -> Result<Self, LawError> {
        let mut members: Vec<u32> = members.into_iter().collect();
        members.sort_unstable();
        for pair in members.windows(2) {
            if pair[0] == pair[1] {
                return Err(LawError::DuplicateMember { member: pair[0] });
            }
        }
        if members.contains(&1) {
            return Err(LawError::CrossingSetContainsOne);
        }
        Ok(Self { members })
    }

    /// The empty set: no tracked sizes, zero mark coordinates.
    pub fn empty() -> Self {
        Self {
            members: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[u32] {
        &self.members
    }

    pub fn contains(&self, size: u32) -> bool {
        self.members.binary_search(&size).is_ok()
    }

    /// Coordinate of `size` in mark vectors and multi-indices.
    pub fn position(&self, size: u32) -> Option<usize> {
        self.members.binary_search(&size).ok()
    }

    /// Every member must carry a positive rate in `law`; checked whenever a
    /// law and a crossing set are paired.
    pub fn validate_against(&self, law: &OffspringLaw) -> Result<(), LawError> {
        for &member in &self.members {
            if law.rate(member) <= 0.0 {
                return Err(LawError::UnratedMember { member });
            }
        }
        Ok(())
    }
}

/// Tuple of nonnegative counts, one per crossing-set member, in member order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn zero(dim: usize) -> Self {
        Self(vec![0; dim])
    }

    pub fn from_counts(counts: Vec<u32>) -> Self {
        Self(counts)
    }

    /// Unit index `e_pos` with the given dimension.
    pub fn unit(dim: usize, pos: usize) -> Self {
        let mut counts = vec![0; dim];
        counts[pos] += 1;
        Self(counts)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Total order `|k| = sum of counts`.
    pub fn order(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn counts(&self) -> &[u32] {
        &self.0
    }

    pub fn get(&self, pos: usize) -> u32 {
        self.0[pos]
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn plus_unit(&self, pos: usize) -> Self {
        let mut counts = self.0.clone();
        counts[pos] += 1;
        Self(counts)
    }

    /// `k - e_pos`; `None` when the coordinate is already zero (subtraction
    /// below zero is undefined).
    pub fn minus_unit(&self, pos: usize) -> Option<Self> {
        if self.0[pos] == 0 {
            return None;
        }
        let mut counts = self.0.clone();
        counts[pos] -= 1;
        Some(Self(counts))
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dim(), other.dim());
        Self(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    /// Componentwise difference, `None` if any coordinate would go negative.
    pub fn checked_sub(&self, other: &Self) -> Option<Self> {
        debug_assert_eq!(self.dim(), other.dim());
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.checked_sub(*b))
            .collect::<Option<Vec<u32>>>()
            .map(Self)
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Lattice on which a [`CoeffTable`] is complete: `|k| <= kmax`, and
/// `pop <= jmax` for joint-form tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Truncation {
    pub jmax: Option<u32>,
    pub kmax: u32,
}

impl Truncation {
    pub fn marginal(kmax: u32) -> Self {
        Self { jmax: None, kmax }
    }

    pub fn joint(jmax: u32, kmax: u32) -> Self {
        Self {
            jmax: Some(jmax),
            kmax,
        }
    }

    pub fn contains(&self, pop: u32, index: &MultiIndex) -> bool {
        if let Some(jmax) = self.jmax {
            if pop > jmax {
                return false;
            }
        }
        index.order() <= self.kmax
    }
}

/// Whether a table is keyed by crossing counts alone or by
/// `(population, crossing counts)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableForm {
    Marginal,
    Joint,
}

/// Sparse table from multi-indices (marginal form) or
/// `(population, multi-index)` pairs (joint form) to reals.
///
/// Entries must stay above `-slack`; absent entries read as zero. Marginal
/// entries are stored with population 0.
#[derive(Debug, Clone)]
pub struct CoeffTable {
    form: TableForm,
    dim: usize,
    trunc: Truncation,
    slack: f64,
    entries: HashMap<(u32, MultiIndex), f64>,
}

impl CoeffTable {
    pub fn marginal(dim: usize, kmax: u32) -> Self {
        Self::with_slack(
            TableForm::Marginal,
            dim,
            Truncation::marginal(kmax),
            DEFAULT_COEFF_SLACK,
        )
    }

    pub fn joint(dim: usize, jmax: u32, kmax: u32) -> Self {
        Self::with_slack(
            TableForm::Joint,
            dim,
            Truncation::joint(jmax, kmax),
            DEFAULT_COEFF_SLACK,
        )
    }

    pub fn with_slack(form: TableForm, dim: usize, trunc: Truncation, slack: f64) -> Self {
        debug_assert!(matches!(form, TableForm::Joint) == trunc.jmax.is_some());
        Self {
            form,
            dim,
            trunc,
            slack,
            entries: HashMap::new(),
        }
    }

    /// Marginal delta table: mass 1 at the zero index.
    pub fn delta(dim: usize, kmax: u32) -> Self {
        let mut table = Self::marginal(dim, kmax);
        table
            .set(&MultiIndex::zero(dim), 1.0)
            .expect("delta in range");
        table
    }

    /// Joint delta table: mass 1 at `(pop, 0)`.
    pub fn joint_delta(dim: usize, pop: u32, jmax: u32, kmax: u32) -> Self {
        let mut table = Self::joint(dim, jmax, kmax);
        table
            .set_joint(pop, &MultiIndex::zero(dim), 1.0)
            .expect("delta in range");
        table
    }

    pub fn form(&self) -> TableForm {
        self.form
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn truncation(&self) -> Truncation {
        self.trunc
    }

    pub fn slack(&self) -> f64 {
        self.slack
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn set(&mut self, index: &MultiIndex, value: f64) -> Result<(), LawError> {
        assert!(
            matches!(self.form, TableForm::Marginal),
            "marginal accessor on a joint table"
        );
        self.set_raw(0, index, value)
    }

    pub fn set_joint(&mut self, pop: u32, index: &MultiIndex, value: f64) -> Result<(), LawError> {
        assert!(
            matches!(self.form, TableForm::Joint),
            "joint accessor on a marginal table"
        );
        self.set_raw(pop, index, value)
    }

    fn set_raw(&mut self, pop: u32, index: &MultiIndex, value: f64) -> Result<(), LawError> {
        if index.dim() != self.dim {
            return Err(LawError::IndexDimensionMismatch {
                got: index.dim(),
                expected: self.dim,
            });
        }
        debug_assert!(
            self.trunc.contains(pop, index),
            "index ({pop}, {index}) outside declared truncation"
        );
        if value < -self.slack {
            return Err(LawError::NegativeCoefficient {
                key: format!("({pop}, {index})"),
                value,
                slack: self.slack,
            });
        }
        if value == 0.0 {
            self.entries.remove(&(pop, index.clone()));
        } else {
            self.entries.insert((pop, index.clone()), value);
        }
        Ok(())
    }

    pub fn get(&self, index: &MultiIndex) -> f64 {
        assert!(
            matches!(self.form, TableForm::Marginal),
            "marginal accessor on a joint table"
        );
        self.entries.get(&(0, index.clone())).copied().unwrap_or(0.0)
    }

    pub fn get_joint(&self, pop: u32, index: &MultiIndex) -> f64 {
        assert!(
            matches!(self.form, TableForm::Joint),
            "joint accessor on a marginal table"
        );
        self.entries
            .get(&(pop, index.clone()))
            .copied()
            .unwrap_or(0.0)
    }

    /// Raw entries as `(population, index, value)`; population is 0 for
    /// marginal tables.
    pub fn entries(&self) -> impl Iterator<Item = (u32, &MultiIndex, f64)> + '_ {
        self.entries.iter().map(|((pop, idx), &v)| (*pop, idx, v))
    }

    /// Entries sorted by `(population, index)`, for deterministic output.
    pub fn sorted_entries(&self) -> Vec<(u32, MultiIndex, f64)> {
        let mut out: Vec<(u32, MultiIndex, f64)> = self
            .entries
            .iter()
            .map(|((pop, idx), &v)| (*pop, idx.clone(), v))
            .collect();
        out.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
        out
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.values().sum()
    }

    /// Marginal entries as an ordered map.
    pub fn to_marginal_map(&self) -> BTreeMap<MultiIndex, f64> {
        assert!(matches!(self.form, TableForm::Marginal));
        self.entries
            .iter()
            .map(|((_, idx), &v)| (idx.clone(), v))
            .collect()
    }

    /// Joint entries as an ordered map.
    pub fn to_joint_map(&self) -> BTreeMap<(u32, MultiIndex), f64> {
        assert!(matches!(self.form, TableForm::Joint));
        self.entries
            .iter()
            .map(|(key, &v)| (key.clone(), v))
            .collect()
    }

    /// Sums a joint table over the population coordinate.
    pub fn project_marginal(&self) -> CoeffTable {
        assert!(matches!(self.form, TableForm::Joint));
        let mut out = CoeffTable::with_slack(
            TableForm::Marginal,
            self.dim,
            Truncation::marginal(self.trunc.kmax),
            self.slack.max(1e-9),
        );
        let mut acc: HashMap<MultiIndex, f64> = HashMap::new();
        for ((_, idx), &v) in &self.entries {
            *acc.entry(idx.clone()).or_insert(0.0) += v;
        }
        for (idx, v) in acc {
            out.set(&idx, v).expect("projection preserves slack");
        }
        out
    }
}

/// Convolution of two tables: the entry at `l` is `sum_{m + n = l} a_m b_n`,
/// restricted to the target truncation. Joint tables also convolve the
/// population coordinate.
pub fn convolve(a: &CoeffTable, b: &CoeffTable, trunc: Truncation) -> Result<CoeffTable, LawError> {
    if a.form != b.form {
        return Err(LawError::MixedForms);
    }
    if a.dim != b.dim {
        return Err(LawError::IndexDimensionMismatch {
            got: b.dim,
            expected: a.dim,
        });
    }
    if matches!(a.form, TableForm::Joint) && trunc.jmax.is_none() {
        return Err(LawError::MissingPopulationCap);
    }
    let mut acc: HashMap<(u32, MultiIndex), f64> = HashMap::new();
    for ((pa, ka), &va) in &a.entries {
        if va == 0.0 {
            continue;
        }
        for ((pb, kb), &vb) in &b.entries {
            let pop = pa + pb;
            let idx = ka.add(kb);
            if trunc.contains(pop, &idx) {
                *acc.entry((pop, idx)).or_insert(0.0) += va * vb;
            }
        }
    }
    let slack = a.slack.max(b.slack);
    let mut out = CoeffTable::with_slack(a.form, a.dim, trunc, slack);
    out.entries = acc.into_iter().filter(|&(_, v)| v != 0.0).collect();
    Ok(out)
}

/// The `power`-fold convolution `a^{*(power)}`; power 0 is the delta table.
pub fn convolve_power(
    a: &CoeffTable,
    power: u32,
    trunc: Truncation,
) -> Result<CoeffTable, LawError> {
    Ok(convolve_powers(a, power, trunc)?.pop().expect("power + 1 tables"))
}

/// All convolution powers `a^{*(0)} ..= a^{*(max_power)}` in one incremental
/// pass, each power reusing the previous one.
pub fn convolve_powers(
    a: &CoeffTable,
    max_power: u32,
    trunc: Truncation,
) -> Result<Vec<CoeffTable>, LawError> {
    if matches!(a.form, TableForm::Joint) && trunc.jmax.is_none() {
        return Err(LawError::MissingPopulationCap);
    }
    let delta = match a.form {
        TableForm::Marginal => {
            let mut t = CoeffTable::with_slack(a.form, a.dim, trunc, a.slack);
            t.set(&MultiIndex::zero(a.dim), 1.0)?;
            t
        }
        TableForm::Joint => {
            let mut t = CoeffTable::with_slack(a.form, a.dim, trunc, a.slack);
            t.set_joint(0, &MultiIndex::zero(a.dim), 1.0)?;
            t
        }
    };
    let mut powers = vec![delta];
    for _ in 0..max_power {
        let next = convolve(powers.last().expect("nonempty"), a, trunc)?;
        powers.push(next);
    }
    Ok(powers)
}
