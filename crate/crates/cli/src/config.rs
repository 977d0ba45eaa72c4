//! JSON configuration shared by every subcommand. Unknown fields are
//! rejected so typos surface immediately.

use std::collections::BTreeMap;

use crossings_core::engine::OdeSettings;
use crossings_core::law::{CrossingSet, OffspringLaw};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Offspring rates, `"j" -> b_j` with `j != 1`.
    pub law: BTreeMap<String, f64>,
    pub crossing_set: Option<Vec<u32>>,
    pub t: Option<f64>,
    pub t_grid: Option<Vec<f64>>,
    pub i0: Option<u64>,
    #[serde(rename = "K")]
    pub kmax: Option<u32>,
    #[serde(rename = "Jmax")]
    pub jmax: Option<u32>,
    pub v: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub reps: Option<u64>,
    pub horizon: Option<f64>,
    pub ode: Option<OdeTolerances>,
    pub output: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeTolerances {
    pub abs_tol: Option<f64>,
    pub rel_tol: Option<f64>,
}

impl Config {
    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn law(&self) -> Result<OffspringLaw, CliError> {
        let mut rates = Vec::with_capacity(self.law.len());
        for (key, &rate) in &self.law {
            let size: u32 = key.parse().map_err(|_| {
                CliError::Config(format!("law: key \"{key}\" is not a nonnegative integer"))
            })?;
            rates.push((size, rate));
        }
        OffspringLaw::new(rates).map_err(|e| CliError::Domain(format!("law: {e}")))
    }

    pub fn crossing_set(&self) -> Result<CrossingSet, CliError> {
        let members = self
            .crossing_set
            .as_ref()
            .ok_or_else(|| CliError::Config("missing field `crossing_set`".into()))?;
        CrossingSet::new(members.iter().copied())
            .map_err(|e| CliError::Domain(format!("crossing_set: {e}")))
    }

    /// Times to evaluate: `t_grid` wins over `t`.
    pub fn times(&self) -> Result<(Vec<f64>, bool), CliError> {
        if let Some(grid) = &self.t_grid {
            if grid.is_empty() {
                return Err(CliError::Config("t_grid: must not be empty".into()));
            }
            return Ok((grid.clone(), true));
        }
        match self.t {
            Some(t) => Ok((vec![t], false)),
            None => Err(CliError::Config("missing field `t` or `t_grid`".into())),
        }
    }

    pub fn kmax(&self) -> Result<u32, CliError> {
        self.kmax
            .ok_or_else(|| CliError::Config("missing field `K`".into()))
    }

    pub fn jmax(&self) -> Result<u32, CliError> {
        self.jmax
            .ok_or_else(|| CliError::Config("missing field `Jmax`".into()))
    }

    pub fn marks(&self, set: &CrossingSet) -> Result<Vec<f64>, CliError> {
        let v = self
            .v
            .as_ref()
            .ok_or_else(|| CliError::Config("missing field `v`".into()))?;
        if v.len() != set.len() {
            return Err(CliError::Config(format!(
                "v: has {} entries, crossing_set has {}",
                v.len(),
                set.len()
            )));
        }
        Ok(v.clone())
    }

    pub fn reps(&self) -> Result<u64, CliError> {
        self.reps
            .ok_or_else(|| CliError::Config("missing field `reps`".into()))
    }

    pub fn ode_settings(&self) -> OdeSettings {
        let mut settings = OdeSettings::default();
        if let Some(ode) = &self.ode {
            if let Some(abs) = ode.abs_tol {
                settings.abs_tol = abs;
            }
            if let Some(rel) = ode.rel_tol {
                settings.rel_tol = rel;
            }
        }
        settings
    }
}
