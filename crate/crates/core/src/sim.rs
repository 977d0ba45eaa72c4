//! Exact stochastic simulation of the augmented chain `(X(t), Y(t))`:
//! in population `i` the next event fires after an `Exponential(i * -b_1)`
//! holding time, its offspring size is drawn from the normalized rates, the
//! population moves by `size - 1`, and tracked sizes bump their crossing
//! counter. Replicates draw from [`rng::stream`]`(base_seed, index)`, so
//! Monte Carlo aggregates are bit-identical at any parallelism.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::law::{CrossingSet, LawError, MultiIndex, OffspringLaw};
use crate::rng::{self, AliasTable, Xoshiro256StarStar};

/// Default hard cap on the population; supercritical paths grow
/// exponentially and anything beyond this aborts with a diagnostic.
pub const DEFAULT_POPULATION_CAP: u64 = 10_000_000;

/// Population at which [`estimate_extinction`] declares a path non-extinct;
/// the resulting bias is at most `rho^cutoff`.
const EXTINCTION_SURVIVAL_CUTOFF: u64 = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Law(#[from] LawError),
    #[error("population cap {cap} exceeded at t = {at_time}")]
    PopulationCapExceeded { cap: u64, at_time: f64 },
    #[error("at least one replicate is required")]
    ZeroReplicates,
    #[error("at least one thread is required")]
    ZeroThreads,
    #[error("horizon must be finite and nonnegative, got {0}")]
    BadHorizon(f64),
}

/// Knobs for a single simulated path.
#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub population_cap: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            population_cap: DEFAULT_POPULATION_CAP,
        }
    }
}

/// One trajectory of the augmented chain.
#[derive(Debug, Clone)]
pub struct PathRecord {
    /// `(time, offspring size)` per event, times strictly increasing.
    pub events: Vec<(f64, u32)>,
    pub final_population: u64,
    /// Event counts per crossing-set member, in member order.
    pub crossings: MultiIndex,
    /// Reached population 0 before the horizon.
    pub absorbed: bool,
    pub horizon: f64,
}

/// Aggregated Monte Carlo counts over `(final population, crossings)` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalTable {
    pub counts: BTreeMap<(u64, MultiIndex), u64>,
    /// Replicates requested; `sum(counts) = replicates - aborted`.
    pub replicates: u64,
    /// Replicates dropped by the population cap, reported separately.
    pub aborted: u64,
    pub base_seed: u64,
    pub i0: u64,
    pub horizon: f64,
}

impl EmpiricalTable {
    pub fn completed(&self) -> u64 {
        self.replicates - self.aborted
    }

    /// Counts projected onto the crossing coordinates.
    pub fn crossing_counts(&self) -> BTreeMap<MultiIndex, u64> {
        let mut out = BTreeMap::new();
        for ((_, k), &c) in &self.counts {
            *out.entry(k.clone()).or_insert(0) += c;
        }
        out
    }

    /// Counts projected onto the population coordinate.
    pub fn population_counts(&self) -> BTreeMap<u64, u64> {
        let mut out = BTreeMap::new();
        for ((pop, _), &c) in &self.counts {
            *out.entry(*pop).or_insert(0) += c;
        }
        out
    }

    /// Empirical crossing-count PGF at the given marks, with its standard
    /// error (sample standard deviation of `v^Y` over the completed
    /// replicates).
    pub fn crossing_pgf(&self, marks: &[f64]) -> (f64, f64) {
        let n = self.completed() as f64;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for ((_, k), &c) in &self.counts {
            let mut z = 1.0;
            for (pos, &count) in k.counts().iter().enumerate() {
                z *= marks[pos].powi(count as i32);
            }
            sum += c as f64 * z;
            sum_sq += c as f64 * z * z;
        }
        let mean = sum / n;
        let var = (sum_sq / n - mean * mean).max(0.0);
        (mean, (var / n).sqrt())
    }
}

/// Simulates one path to absorption or the horizon.
pub fn simulate_path(
    law: &OffspringLaw,
    set: &CrossingSet,
    i0: u64,
    horizon: f64,
    rng: &mut Xoshiro256StarStar,
    options: &SimOptions,
) -> Result<PathRecord, SimError> {
    set.validate_against(law)?;
    let alias = AliasTable::for_law(law);
    simulate_path_with(law, set, &alias, i0, horizon, rng, options)
}

fn simulate_path_with(
    law: &OffspringLaw,
    set: &CrossingSet,
    alias: &AliasTable,
    i0: u64,
    horizon: f64,
    rng: &mut Xoshiro256StarStar,
    options: &SimOptions,
) -> Result<PathRecord, SimError> {
    if !horizon.is_finite() || horizon < 0.0 {
        return Err(SimError::BadHorizon(horizon));
    }
    let per_particle = law.total_rate();
    let mut population = i0;
    let mut time = 0.0f64;
    let mut events = Vec::new();
    let mut crossings = vec![0u32; set.len()];
    loop {
        if population == 0 {
            break;
        }
        if population > options.population_cap {
            return Err(SimError::PopulationCapExceeded {
                cap: options.population_cap,
                at_time: time,
            });
        }
        time += rng.exponential(population as f64 * per_particle);
        if time > horizon {
            break;
        }
        let size = alias.sample(rng);
        events.push((time, size));
        if let Some(pos) = set.position(size) {
            crossings[pos] += 1;
        }
        population = population + u64::from(size) - 1;
    }
    Ok(PathRecord {
        events,
        final_population: population,
        crossings: MultiIndex::from_counts(crossings),
        absorbed: population == 0,
        horizon,
    })
}

/// Monte Carlo configuration; `threads` only affects wall-clock time, never
/// the aggregated result.
#[derive(Debug, Clone)]
pub struct McConfig {
    pub i0: u64,
    pub horizon: f64,
    pub reps: u64,
    pub base_seed: u64,
    pub threads: usize,
    pub options: SimOptions,
}

impl McConfig {
    pub fn new(i0: u64, horizon: f64, reps: u64, base_seed: u64) -> Self {
        Self {
            i0,
            horizon,
            reps,
            base_seed,
            threads: 1,
            options: SimOptions::default(),
        }
    }

    pub fn threads(mut self, threads: usize) -> Self {
        self.threads = threads;
        self
    }
}

/// Aggregates `reps` replicates of [`simulate_path`], replicate `r` drawing
/// from `stream(base_seed, r)`; cap-aborted replicates are counted in
/// `aborted` and excluded from the cells.
pub fn monte_carlo(
    law: &OffspringLaw,
    set: &CrossingSet,
    cfg: &McConfig,
) -> Result<EmpiricalTable, SimError> {
    set.validate_against(law)?;
    if cfg.reps == 0 {
        return Err(SimError::ZeroReplicates);
    }
    if cfg.threads == 0 {
        return Err(SimError::ZeroThreads);
    }
    if !cfg.horizon.is_finite() || cfg.horizon < 0.0 {
        return Err(SimError::BadHorizon(cfg.horizon));
    }
    let alias = AliasTable::for_law(law);

    type Cells = BTreeMap<(u64, MultiIndex), u64>;
    let worker = |range: std::ops::Range<u64>| -> Result<(Cells, u64), SimError> {
        let mut cells: Cells = BTreeMap::new();
        let mut aborted = 0u64;
        for replicate in range {
            let mut stream = rng::stream(cfg.base_seed, replicate);
            match simulate_path_with(
                law,
                set,
                &alias,
                cfg.i0,
                cfg.horizon,
                &mut stream,
                &cfg.options,
            ) {
                Ok(path) => {
                    *cells
                        .entry((path.final_population, path.crossings))
                        .or_insert(0) += 1;
                }
                Err(SimError::PopulationCapExceeded { .. }) => aborted += 1,
                Err(other) => return Err(other),
            }
        }
        Ok((cells, aborted))
    };

    let threads = cfg.threads.min(cfg.reps as usize).max(1);
    let chunk = cfg.reps.div_ceil(threads as u64);
    let mut merged: Cells = BTreeMap::new();
    let mut aborted = 0u64;
    if threads == 1 {
        let (cells, a) = worker(0..cfg.reps)?;
        merged = cells;
        aborted = a;
    } else {
        let partials = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads as u64)
                .map(|w| {
                    let start = w * chunk;
                    let end = ((w + 1) * chunk).min(cfg.reps);
                    scope.spawn(move || worker(start..end))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect::<Vec<_>>()
        });
        // merge in replicate order; counts are exact integers so the
        // result is independent of scheduling either way
        for partial in partials {
            let (cells, a) = partial?;
            aborted += a;
            for (key, count) in cells {
                *merged.entry(key).or_insert(0) += count;
            }
        }
    }
    Ok(EmpiricalTable {
        counts: merged,
        replicates: cfg.reps,
        aborted,
        base_seed: cfg.base_seed,
        i0: cfg.i0,
        horizon: cfg.horizon,
    })
}

/// Fraction of replicates absorbed by the horizon, with its binomial
/// standard error. The horizon should be large against the law's timescale
/// (heuristic: `horizon >= 50 / -b_1`). Paths reaching population 10^4 are
/// declared non-extinct on the spot, which biases the estimate by at most
/// `rho^10000` and keeps supercritical laws affordable.
pub fn estimate_extinction(
    law: &OffspringLaw,
    i0: u64,
    reps: u64,
    horizon: f64,
    base_seed: u64,
) -> Result<(f64, f64), SimError> {
    if reps == 0 {
        return Err(SimError::ZeroReplicates);
    }
    if !horizon.is_finite() || horizon < 0.0 {
        return Err(SimError::BadHorizon(horizon));
    }
    let alias = AliasTable::for_law(law);
    let per_particle = law.total_rate();

    let absorbed_in = |range: std::ops::Range<u64>| -> u64 {
        let mut absorbed = 0u64;
        for replicate in range {
            let mut stream = rng::stream(base_seed, replicate);
            let mut population = i0;
            let mut time = 0.0f64;
            loop {
                if population == 0 {
                    absorbed += 1;
                    break;
                }
                if population >= EXTINCTION_SURVIVAL_CUTOFF {
                    break; // survived
                }
                time += stream.exponential(population as f64 * per_particle);
                if time > horizon {
                    break;
                }
                population = population + u64::from(alias.sample(&mut stream)) - 1;
            }
        }
        absorbed
    };

    let threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(8)
        .min(reps as usize)
        .max(1);
    let chunk = reps.div_ceil(threads as u64);
    let absorbed: u64 = if threads == 1 {
        absorbed_in(0..reps)
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads as u64)
                .map(|w| {
                    let start = w * chunk;
                    let end = ((w + 1) * chunk).min(reps);
                    scope.spawn(move || absorbed_in(start..end))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker")).sum()
        })
    };
    let estimate = absorbed as f64 / reps as f64;
    let stderr = (estimate * (1.0 - estimate) / reps as f64).sqrt();
    Ok((estimate, stderr))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bd_law() -> OffspringLaw {
        OffspringLaw::new([(0, 1.0), (2, 1.0)]).unwrap()
    }

    #[test]
    fn empty_start_is_absorbed() {
        let law = bd_law();
        let set = CrossingSet::new([0]).unwrap();
        let mut stream = rng::stream(5, 0);
        let path =
            simulate_path(&law, &set, 0, 3.0, &mut stream, &SimOptions::default()).unwrap();
        assert!(path.absorbed);
        assert!(path.events.is_empty());
        assert!(path.crossings.is_zero());
    }

    #[test]
    fn pure_death_single_event() {
        let law = OffspringLaw::new([(0, 1.0)]).unwrap();
        let set = CrossingSet::new([0]).unwrap();
        let mut reached = 0u32;
        let reps = 20_000;
        let t = 1.0;
        for r in 0..reps {
            let mut stream = rng::stream(31, r);
            let path =
                simulate_path(&law, &set, 1, t, &mut stream, &SimOptions::default()).unwrap();
            assert!(path.events.len() <= 1);
            if path.absorbed {
                assert_eq!(path.crossings.counts(), &[1]);
                reached += 1;
            }
        }
        // P(death by t) = 1 - e^{-t}
        let expect = 1.0 - (-t as f64).exp();
        let freq = f64::from(reached) / reps as f64;
        let se = (expect * (1.0 - expect) / reps as f64).sqrt();
        assert!((freq - expect).abs() < 4.0 * se, "{freq} vs {expect}");
    }

    #[test]
    fn population_bookkeeping_identity() {
        let law = OffspringLaw::new([(0, 1.0), (2, 0.7), (3, 0.3)]).unwrap();
        let set = CrossingSet::new([0, 3]).unwrap();
        for r in 0..200 {
            let mut stream = rng::stream(77, r);
            let path =
                simulate_path(&law, &set, 3, 2.0, &mut stream, &SimOptions::default()).unwrap();
            let net: i64 = path
                .events
                .iter()
                .map(|&(_, size)| i64::from(size) - 1)
                .sum();
            assert_eq!(3 + net, path.final_population as i64);
            for pair in path.events.windows(2) {
                assert!(pair[0].0 < pair[1].0);
            }
            assert!(path.events.iter().all(|&(time, _)| time <= 2.0));
            // crossing counts tally events of tracked sizes
            let deaths = path.events.iter().filter(|&&(_, s)| s == 0).count() as u32;
            let triples = path.events.iter().filter(|&&(_, s)| s == 3).count() as u32;
            assert_eq!(path.crossings.counts(), &[deaths, triples]);
            let tracked: u32 = path.crossings.counts().iter().sum();
            assert!(tracked as usize <= path.events.len());
        }
    }

    #[test]
    fn population_cap_aborts() {
        let law = OffspringLaw::new([(2, 5.0)]).unwrap();
        let set = CrossingSet::empty();
        let mut stream = rng::stream(1, 0);
        let options = SimOptions { population_cap: 50 };
        let err = simulate_path(&law, &set, 1, 1e6, &mut stream, &options).unwrap_err();
        assert!(matches!(err, SimError::PopulationCapExceeded { cap: 50, .. }));
    }

    #[test]
    fn monte_carlo_deterministic_across_threads() {
        let law = bd_law();
        let set = CrossingSet::new([0]).unwrap();
        let base = McConfig::new(1, 1.0, 4000, 12345);
        let one = monte_carlo(&law, &set, &base.clone().threads(1)).unwrap();
        let eight = monte_carlo(&law, &set, &base.threads(8)).unwrap();
        assert_eq!(one, eight);
        assert_eq!(
            one.counts.values().sum::<u64>() + one.aborted,
            one.replicates
        );
    }

    #[test]
    fn monte_carlo_rejects_zero_reps() {
        let law = bd_law();
        let set = CrossingSet::new([0]).unwrap();
        assert_eq!(
            monte_carlo(&law, &set, &McConfig::new(1, 1.0, 0, 1)).unwrap_err(),
            SimError::ZeroReplicates
        );
    }

    #[test]
    fn extinction_pure_death_is_certain() {
        let law = OffspringLaw::new([(0, 1.0)]).unwrap();
        let (est, se) = estimate_extinction(&law, 1, 5000, 50.0, 7).unwrap();
        assert_eq!(est, 1.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn extinction_matches_minimal_root_quadratic() {
        // law {0: 0.25 b, 2: 0.75 b}: rho = p/q = 1/3
        let law = OffspringLaw::new([(0, 0.5), (2, 1.5)]).unwrap();
        let (est, se) = estimate_extinction(&law, 1, 40_000, 50.0, 99).unwrap();
        assert!((est - 1.0 / 3.0).abs() < 4.0 * se, "est {est}, se {se}");
    }
}
