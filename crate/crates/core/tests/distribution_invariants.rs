//! Cross-route agreement between the coefficient ODE engine, the analytic
//! closed forms, the minimal-root series, and the uniformization oracle.

use crossings_core::closed_form;
use crossings_core::engine::{self, OdeSettings};
use crossings_core::law::{CrossingSet, MultiIndex, OffspringLaw};
use crossings_core::roots;
use crossings_core::validate;

fn deaths() -> CrossingSet {
    CrossingSet::new([0]).unwrap()
}

fn idx(n: u32) -> MultiIndex {
    MultiIndex::from_counts(vec![n])
}

#[test]
fn engine_matches_bd_quadrature() {
    // birth-death law b = 2, p = q = 1/2
    let law = OffspringLaw::new([(0, 1.0), (2, 1.0)]).unwrap();
    let t = 0.7;
    let analytic = closed_form::bd_death_pmf(0.5, 0.5, 2.0, t, 12).unwrap();
    let table =
        engine::crossing_distribution(&law, &deaths(), t, 12, &OdeSettings::strict()).unwrap();
    for (n, &expect) in analytic.iter().enumerate() {
        let got = table.get(&idx(n as u32));
        assert!(
            (got - expect).abs() < 1e-7,
            "n = {n}: engine {got} vs quadrature {expect}"
        );
    }
}

#[test]
fn engine_matches_cubic_quadrature_and_flow() {
    let law = OffspringLaw::new([(0, 1.0), (3, 1.0)]).unwrap();
    let t = 0.5;
    let analytic = closed_form::cubic_death_pmf(0.5, 0.5, 2.0, t, 10).unwrap();
    let table =
        engine::crossing_distribution(&law, &deaths(), t, 10, &OdeSettings::strict()).unwrap();
    for (n, &expect) in analytic.iter().enumerate() {
        let got = table.get(&idx(n as u32));
        assert!(
            (got - expect).abs() < 1e-7,
            "n = {n}: engine {got} vs quadrature {expect}"
        );
    }
    // aggregating the quadrature sequence against the flow value
    for &v in &[0.2f64, 0.6] {
        let series: f64 = analytic
            .iter()
            .enumerate()
            .map(|(n, &g)| g * v.powi(n as i32))
            .sum();
        let flow =
            engine::joint_pgf(&law, &deaths(), t, 1.0, &[v], &OdeSettings::strict()).unwrap();
        let tail = v.powi(11) / (1.0 - v);
        assert!(
            (series - flow).abs() < tail + 1e-6,
            "v = {v}: {series} vs {flow}"
        );
    }
}

#[test]
fn extinction_series_matches_root_series() {
    for (p, q) in [(0.5, 0.5), (0.4, 0.6)] {
        let law = OffspringLaw::new([(0, p), (2, q)]).unwrap();
        let series = roots::marked_root_series(&law, &deaths(), 10).unwrap();
        let analytic = closed_form::bd_extinction_series(p, q, 10).unwrap();
        for n in 0..=10usize {
            let got = series.get(&idx(n as u32));
            assert!(
                (got - analytic[n]).abs() < 1e-10,
                "p = {p}, n = {n}: {got} vs {}",
                analytic[n]
            );
        }
    }
}

#[test]
fn extinction_conditioned_partial_sums_track_the_explicit_series() {
    // critical birth-death: the conditioned distribution is the Catalan-type
    // series itself (rho = 1), whose tail decays like n^{-3/2}; the partial
    // sums converge to 1 slowly but match the explicit series exactly
    let law = OffspringLaw::new([(0, 1.0), (2, 1.0)]).unwrap();
    let kmax = 50u32;
    let table = engine::extinction_conditioned_distribution(&law, &deaths(), kmax).unwrap();
    let analytic = closed_form::bd_extinction_series(0.5, 0.5, kmax as usize).unwrap();
    let mut partial_table = 0.0;
    let mut partial_series = 0.0;
    for n in 0..=kmax as usize {
        partial_table += table.get(&idx(n as u32));
        partial_series += analytic[n];
    }
    assert!(
        (partial_table - partial_series).abs() < 1e-10,
        "{partial_table} vs {partial_series}"
    );
    // monotone approach to 1 from below
    assert!(partial_table < 1.0);
    let shorter = {
        let table = engine::extinction_conditioned_distribution(&law, &deaths(), 20).unwrap();
        (0..=20u32).map(|n| table.get(&idx(n))).sum::<f64>()
    };
    assert!(shorter < partial_table);
}

#[test]
fn marginal_limit_is_the_root_series() {
    // subcritical law: at large t the crossing distribution settles at the
    // root-series coefficients (extinction is certain, rho = 1)
    let law = OffspringLaw::new([(0, 1.5), (2, 0.5)]).unwrap();
    let series = roots::marked_root_series(&law, &deaths(), 10).unwrap();
    let table =
        engine::crossing_distribution(&law, &deaths(), 30.0, 10, &OdeSettings::strict()).unwrap();
    for n in 0..=10u32 {
        let gap = (table.get(&idx(n)) - series.get(&idx(n))).abs();
        assert!(gap < 1e-6, "n = {n}: gap {gap}");
    }
}

#[test]
fn joint_engine_matches_uniformization() {
    let law = OffspringLaw::new([(0, 1.5), (2, 0.5)]).unwrap();
    let set = deaths();
    let (jmax, kmax, t) = (25u32, 12u32, 1.0);
    let (oracle, leaked) =
        validate::uniformization_distribution(&law, &set, 1, t, jmax, kmax).unwrap();
    assert!(leaked < 1e-8, "leaked {leaked}");
    let table =
        engine::joint_distribution(&law, &set, t, jmax, kmax, &OdeSettings::default()).unwrap();
    for pop in 0..=jmax {
        for n in 0..=kmax {
            let gap = (oracle.get_joint(pop, &idx(n)) - table.get_joint(pop, &idx(n))).abs();
            assert!(gap < 1e-6 + leaked, "({pop}, {n}): gap {gap}");
        }
    }
}

#[test]
fn two_member_crossing_set_consistency() {
    // N = {0, 2} on the birth-death law: every event is tracked, so the
    // joint (population, crossings) support sits on the lattice line
    // population = 1 - k0 + 2 k2... population = i0 - k0 + k2 per event
    // bookkeeping; check marginal projection against the marginal system.
    let law = OffspringLaw::new([(0, 1.0), (2, 1.0)]).unwrap();
    let set = CrossingSet::new([0, 2]).unwrap();
    let settings = OdeSettings::default();
    let t = 0.4;
    let joint = engine::joint_distribution(&law, &set, t, 24, 10, &settings).unwrap();
    let marginal = engine::crossing_distribution(&law, &set, t, 10, &settings).unwrap();
    let projected = joint.project_marginal();
    for (_, k, value) in marginal.entries() {
        let gap = (projected.get(k) - value).abs();
        assert!(gap < 1e-8, "k = {k}: gap {gap}");
    }
    // support constraint: mass only where population = 1 - k0 + k2
    for (pop, k, value) in joint.entries() {
        if value > 1e-12 {
            let expect = 1i64 - i64::from(k.get(0)) + i64::from(k.get(1));
            assert_eq!(
                i64::from(pop),
                expect,
                "mass {value} off the lattice line at ({pop}, {k})"
            );
        }
    }
}
