//! Command-line front end: parse a JSON config, dispatch to the library,
//! and emit tables or reports as TSV or JSON.

mod config;
mod table;

pub use table::{Table, Value};

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use crossings_core::engine::{self};
use crossings_core::law::{convolve_power, CrossingSet, OffspringLaw, Truncation};
use crossings_core::roots;
use crossings_core::sim::{self, McConfig};
use crossings_core::validate::{self, ZReportOptions};

use config::Config;

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation: exit 2.
    Usage(String),
    /// Malformed or incomplete config: exit 2.
    Config(String),
    /// Parameter-domain violation reported by the library: exit 2.
    Domain(String),
    Io(String),
    /// Statistical/validation failure: exit 1.
    Check(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            _ => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m)
            | CliError::Config(m)
            | CliError::Domain(m)
            | CliError::Io(m)
            | CliError::Check(m) => m,
        }
    }
}

fn domain(e: impl std::fmt::Display) -> CliError {
    CliError::Domain(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Tsv,
    Json,
}

#[derive(Parser, Debug)]
#[command(
    name = "crossings",
    version,
    about = "Crossing-count distributions of Markov branching processes",
    after_help = "All numeric inputs come from the JSON config; flags override \
                  config fields where noted. See the README for the schema."
)]
struct Cli {
    /// JSON configuration file (required by every subcommand)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output destination: a file path, or "-" for stdout (default)
    #[arg(long, global = true, default_value = "-", value_name = "PATH|-")]
    output: String,

    /// Output format (default: the config `output` field, else tsv)
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Worker threads for simulate/validate; affects wall-clock only,
    /// never the results (default 1)
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Emit raw values: disable the presentation-time clamping of
    /// probabilities to [0, 1]
    #[arg(long, global = true)]
    raw: bool,

    /// Base RNG seed (overrides the config `seed` field; default 0)
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extinction probability: minimal root of the branching generator
    Rho,
    /// Taylor coefficients of the marked-root series (needs crossing_set, K)
    RhoTaylor,
    /// Marginal crossing-count distribution at time t (needs crossing_set,
    /// K, and t or t_grid)
    Dist,
    /// Joint (population, crossing-count) distribution (additionally Jmax)
    Joint,
    /// Crossing-count PGF from i0 particles at marks v (needs v; i0
    /// defaults to 1)
    Pgf,
    /// Crossing-count distribution at extinction, conditioned on extinction
    ExtinctDist,
    /// Closed-form sequences for the worked laws; with `t` the death pmf at
    /// t, without it the extinction-limit series (K is the length cap)
    ClosedForm {
        #[arg(value_enum)]
        family: Family,
    },
    /// Monte Carlo simulation of the augmented chain (needs i0, reps, and
    /// t or horizon)
    Simulate,
    /// Simulation vs engine z-report, plus a uniformization cross-check
    /// when Jmax is set; exit code 1 on statistical failure. The ensemble
    /// horizon defaults to t; setting `horizon` differently is a deliberate
    /// mismatch the report will flag
    Validate,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Family {
    /// birth-death law: rates at sizes {0, 2}
    Bd,
    /// cubic law: rates at sizes {0, 3}
    Cubic,
}

pub fn run(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok((rendered, exit)) => {
            if let Err(e) = write_output(&cli.output, &rendered) {
                eprintln!("error: {}", e.message());
                return e.exit_code();
            }
            exit
        }
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn write_output(target: &str, rendered: &str) -> Result<(), CliError> {
    if target == "-" {
        print!("{rendered}");
        Ok(())
    } else {
        std::fs::write(target, rendered).map_err(|e| CliError::Io(format!("output {target}: {e}")))
    }
}

fn execute(cli: &Cli) -> Result<(String, i32), CliError> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("missing --config <PATH>".into()))?;
    let cfg = Config::load(config_path)?;
    let format = cli.format.unwrap_or(match cfg.output.as_deref() {
        Some("json") => Format::Json,
        Some("tsv") | None => Format::Tsv,
        Some(other) => {
            return Err(CliError::Config(format!(
                "output: unknown format \"{other}\" (tsv or json)"
            )))
        }
    });
    if cli.threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);

    match &cli.command {
        Command::Rho => cmd_rho(&cfg, format),
        Command::RhoTaylor => cmd_rho_taylor(&cfg, format, cli.raw),
        Command::Dist => cmd_dist(&cfg, format, cli.raw),
        Command::Joint => cmd_joint(&cfg, format, cli.raw),
        Command::Pgf => cmd_pgf(&cfg, format, cli.raw),
        Command::ExtinctDist => cmd_extinct_dist(&cfg, format, cli.raw),
        Command::ClosedForm { family } => cmd_closed_form(&cfg, format, cli.raw, *family),
        Command::Simulate => cmd_simulate(&cfg, format, seed, cli.threads),
        Command::Validate => cmd_validate(&cfg, format, seed, cli.threads),
    }
}

fn k_columns(set: &CrossingSet) -> Vec<String> {
    set.members().iter().map(|m| format!("k{m}")).collect()
}

fn render_table(table: &Table, format: Format) -> String {
    match format {
        Format::Tsv => table.to_tsv(),
        Format::Json => {
            let mut text = table.to_json();
            text.push('\n');
            text
        }
    }
}

fn marginal_table(
    set: &CrossingSet,
    entries: &[(u32, crossings_core::law::MultiIndex, f64)],
    time: Option<f64>,
) -> Table {
    let mut columns = Vec::new();
    if time.is_some() {
        columns.push("t".to_string());
    }
    columns.extend(k_columns(set));
    columns.push("value".to_string());
    let mut table = Table::new(columns);
    for (_, idx, value) in entries {
        let mut row = Vec::new();
        if let Some(t) = time {
            row.push(Value::Float(t));
        }
        row.extend(idx.counts().iter().map(|&c| Value::Int(u64::from(c))));
        row.push(Value::Float(*value));
        table.push(row);
    }
    table
}

fn cmd_rho(cfg: &Config, format: Format) -> Result<(String, i32), CliError> {
    let law = cfg.law()?;
    let root = roots::extinction_probability(&law, roots::DEFAULT_ROOT_TOL).map_err(domain)?;
    let rendered = match format {
        Format::Tsv => format!("{:.12}\n", root.value),
        Format::Json => format!(
            "{}\n",
            json!({ "rho": root.value, "degraded": root.degraded })
        ),
    };
    Ok((rendered, 0))
}

fn cmd_rho_taylor(cfg: &Config, format: Format, raw: bool) -> Result<(String, i32), CliError> {
    let law = cfg.law()?;
    let set = cfg.crossing_set()?;
    let series = roots::marked_root_series(&law, &set, cfg.kmax()?).map_err(domain)?;
    let mut table = marginal_table(&set, &series.sorted_entries(), None);
    if !raw {
        table.clamp_column("value");
    }
    Ok((render_table(&table, format), 0))
}

fn cmd_dist(cfg: &Config, format: Format, raw: bool) -> Result<(String, i32), CliError> {
    let law = cfg.law()?;
    let set = cfg.crossing_set()?;
    let kmax = cfg.kmax()?;
    let settings = cfg.ode_settings();
    let (times, grid) = cfg.times()?;
    let mut combined: Option<Table> = None;
    for &t in &times {
        let dist =
            engine::crossing_distribution(&law, &set, t, kmax, &settings).map_err(domain)?;
        let part = marginal_table(&set, &dist.sorted_entries(), grid.then_some(t));
        match &mut combined {
            None => combined = Some(part),
            Some(table) => table.rows.extend(part.rows),
        }
    }
    let mut table = combined.expect("at least one time");
    if !raw {
        table.clamp_column("value");
    }
    Ok((render_table(&table, format), 0))
}

fn cmd_joint(cfg: &Config, format: Format, raw: bool) -> Result<(String, i32), CliError> {
    let law = cfg.law()?;
    let set = cfg.crossing_set()?;
    let kmax = cfg.kmax()?;
    let jmax = cfg.jmax()?;
    let settings = cfg.ode_settings();
    let (times, grid) = cfg.times()?;
    let mut columns = Vec::new();
    if grid {
        columns.push("t".to_string());
    }
    columns.push("j".to_string());
    columns.extend(k_columns(&set));
    columns.push("value".to_string());
    let mut table = Table::new(columns);
    for &t in &times {
        let dist =
            engine::joint_distribution(&law, &set, t, jmax, kmax, &settings).map_err(domain)?;
        for (pop, idx, value) in dist.sorted_entries() {
            let mut row = Vec::new();
            if grid {
                row.push(Value::Float(t));
            }
            row.push(Value::Int(u64::from(pop)));
            row.extend(idx.counts().iter().map(|&c| Value::Int(u64::from(c))));
            row.push(Value::Float(value));
            table.push(row);
        }
    }
    if !raw {
        table.clamp_column("value");
    }
    Ok((render_table(&table, format), 0))
}

fn cmd_pgf(cfg: &Config, format: Format, raw: bool) -> Result<(String, i32), CliError> {
    let law = cfg.law()?;
    let set = cfg.crossing_set()?;
    let marks = cfg.marks(&set)?;
    let i0: u32 = cfg
        .i0
        .unwrap_or(1)
        .try_into()
        .map_err(|_| CliError::Config("i0: too large".into()))?;
    let settings = cfg.ode_settings();
    let (times, _) = cfg.times()?;
    let mut table = Table::new(vec!["t".to_string(), "value".to_string()]);
    for &t in &times {
        let value = engine::crossing_pgf_from_state(&law, &set, t, &marks, i0, &settings)
            .map_err(domain)?;
        table.push(vec![Value::Float(t), Value::Float(value)]);
    }
    if !raw {
        table.clamp_column("value");
    }
    Ok((render_table(&table, format), 0))
}

fn cmd_extinct_dist(cfg: &Config, format: Format, raw: bool) -> Result<(String, i32), CliError> {
    let law = cfg.law()?;
    let set = cfg.crossing_set()?;
    let dist =
        engine::extinction_conditioned_distribution(&law, &set, cfg.kmax()?).map_err(domain)?;
    let mut table = marginal_table(&set, &dist.sorted_entries(), None);
    if !raw {
        table.clamp_column("value");
    }
    Ok((render_table(&table, format), 0))
}

fn closed_form_params(law: &OffspringLaw, birth_size: u32) -> Result<(f64, f64, f64), CliError> {
    let supported: Vec<u32> = law.support().map(|(j, _)| j).collect();
    if supported != vec![0, birth_size] {
        return Err(CliError::Domain(format!(
            "law: closed form needs positive rates exactly at sizes {{0, {birth_size}}}, got {supported:?}"
        )));
    }
    let b = law.total_rate();
    Ok((law.rate(0) / b, law.rate(birth_size) / b, b))
}

fn cmd_closed_form(
    cfg: &Config,
    format: Format,
    raw: bool,
    family: Family,
) -> Result<(String, i32), CliError> {
    let law = cfg.law()?;
    let nmax = cfg.kmax()? as usize;
    let (p, q, b) = match family {
        Family::Bd => closed_form_params(&law, 2)?,
        Family::Cubic => closed_form_params(&law, 3)?,
    };
    let sequence = match (family, cfg.t) {
        (Family::Bd, Some(t)) => crossings_core::closed_form::bd_death_pmf(p, q, b, t, nmax),
        (Family::Bd, None) => crossings_core::closed_form::bd_extinction_series(p, q, nmax),
        (Family::Cubic, Some(t)) => crossings_core::closed_form::cubic_death_pmf(p, q, b, t, nmax),
        (Family::Cubic, None) => crossings_core::closed_form::cubic_extinction_series(p, q, nmax),
    }
    .map_err(domain)?;
    let mut table = Table::new(vec!["n".to_string(), "value".to_string()]);
    for (n, &value) in sequence.iter().enumerate() {
        table.push(vec![Value::Int(n as u64), Value::Float(value)]);
    }
    if !raw {
        table.clamp_column("value");
    }
    Ok((render_table(&table, format), 0))
}

fn cmd_simulate(
    cfg: &Config,
    format: Format,
    seed: u64,
    threads: usize,
) -> Result<(String, i32), CliError> {
    let law = cfg.law()?;
    let set = cfg.crossing_set()?;
    let horizon = cfg
        .horizon
        .or(cfg.t)
        .ok_or_else(|| CliError::Config("missing field `horizon` or `t`".into()))?;
    let mc = McConfig {
        i0: cfg.i0.unwrap_or(1),
        horizon,
        reps: cfg.reps()?,
        base_seed: seed,
        threads,
        options: Default::default(),
    };
    let empirical = sim::monte_carlo(&law, &set, &mc).map_err(domain)?;

    let mut columns = vec!["j".to_string()];
    columns.extend(k_columns(&set));
    columns.push("count".to_string());
    let mut table = Table::new(columns);
    for ((pop, idx), &count) in &empirical.counts {
        let mut row = vec![Value::Int(*pop)];
        row.extend(idx.counts().iter().map(|&c| Value::Int(u64::from(c))));
        row.push(Value::Int(count));
        table.push(row);
    }
    let rendered = match format {
        Format::Tsv => table.to_tsv(),
        Format::Json => {
            let rows: Vec<serde_json::Value> = table
                .rows
                .iter()
                .map(|row| {
                    serde_json::Value::Array(
                        row.iter()
                            .map(|v| match v {
                                Value::Int(n) => json!(n),
                                Value::Float(x) => json!(x),
                            })
                            .collect(),
                    )
                })
                .collect();
            let body = json!({
                "replicates": empirical.replicates,
                "aborted": empirical.aborted,
                "base_seed": empirical.base_seed,
                "i0": empirical.i0,
                "horizon": empirical.horizon,
                "columns": table.columns,
                "rows": rows,
            });
            format!("{}\n", serde_json::to_string_pretty(&body).expect("json"))
        }
    };
    Ok((rendered, 0))
}

fn cmd_validate(
    cfg: &Config,
    format: Format,
    seed: u64,
    threads: usize,
) -> Result<(String, i32), CliError> {
    let law = cfg.law()?;
    let set = cfg.crossing_set()?;
    let t = cfg
        .t
        .ok_or_else(|| CliError::Config("missing field `t`".into()))?;
    let kmax = cfg.kmax()?;
    let settings = cfg.ode_settings();
    let i0 = cfg.i0.unwrap_or(1);

    // The ensemble runs to `horizon` (default `t`); setting them apart is a
    // deliberate mismatch the report should flag.
    let mc = McConfig {
        i0,
        horizon: cfg.horizon.unwrap_or(t),
        reps: cfg.reps()?,
        base_seed: seed,
        threads,
        options: Default::default(),
    };
    let empirical = sim::monte_carlo(&law, &set, &mc).map_err(domain)?;

    let one = engine::crossing_distribution(&law, &set, t, kmax, &settings).map_err(domain)?;
    let analytic = if i0 <= 1 {
        one
    } else {
        let power: u32 = i0
            .try_into()
            .map_err(|_| CliError::Config("i0: too large".into()))?;
        convolve_power(&one, power, Truncation::marginal(kmax)).map_err(domain)?
    };
    let report = validate::mc_z_report(
        &empirical.crossing_counts(),
        empirical.completed(),
        &analytic.to_marginal_map(),
        &ZReportOptions::default(),
    )
    .map_err(domain)?;

    // optional uniformization cross-check of the joint engine
    let mut oracle_line = None;
    let mut oracle_ok = true;
    if let Some(jmax) = cfg.jmax {
        let start: u32 = i0.try_into().map_err(|_| CliError::Config("i0: too large".into()))?;
        if start != 1 {
            return Err(CliError::Config("Jmax cross-check requires i0 = 1".into()));
        }
        let (oracle, leaked) =
            validate::uniformization_distribution(&law, &set, start, t, jmax, kmax)
                .map_err(domain)?;
        let joint =
            engine::joint_distribution(&law, &set, t, jmax, kmax, &settings).map_err(domain)?;
        let mut max_gap = 0.0f64;
        for (pop, idx, value) in oracle.entries() {
            max_gap = max_gap.max((value - joint.get_joint(pop, idx)).abs());
        }
        for (pop, idx, value) in joint.entries() {
            max_gap = max_gap.max((value - oracle.get_joint(pop, idx)).abs());
        }
        let bound = 1e-6 + leaked;
        oracle_ok = max_gap < bound;
        oracle_line = Some((max_gap, leaked, bound));
    }

    let passed = report.passed && oracle_ok;
    let rendered = match format {
        Format::Tsv => {
            let mut text = format!("{report}\n");
            if let Some((gap, leaked, bound)) = oracle_line {
                text.push_str(&format!(
                    "uniformization cross-check: max |gap| {gap:.3e} vs bound {bound:.3e} (leaked {leaked:.3e}) -> {}\n",
                    if oracle_ok { "PASS" } else { "FAIL" }
                ));
            }
            text.push_str(if passed {
                "VERDICT: PASS\n"
            } else {
                "VERDICT: FAIL\n"
            });
            text
        }
        Format::Json => {
            let cells: Vec<serde_json::Value> = report
                .cells
                .iter()
                .chain(std::iter::once(&report.pooled))
                .map(|cell| {
                    json!({
                        "cell": cell.label,
                        "observed": cell.observed,
                        "expected": cell.expected,
                        "z": cell.z,
                    })
                })
                .collect();
            let oracle = oracle_line.map(|(gap, leaked, bound)| {
                json!({ "max_gap": gap, "leaked": leaked, "bound": bound, "passed": oracle_ok })
            });
            let body = json!({
                "replicates": report.replicates,
                "cells": cells,
                "max_abs_z": report.max_abs_z,
                "z_threshold": report.threshold,
                "total_variation": report.tv,
                "z_passed": report.passed,
                "uniformization": oracle,
                "passed": passed,
            });
            format!("{}\n", serde_json::to_string_pretty(&body).expect("json"))
        }
    };
    Ok((rendered, if passed { 0 } else { 1 }))
}
