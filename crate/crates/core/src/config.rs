//! TOML experiment configuration. Unknown keys are rejected everywhere.
//!
//! ```toml
//! experiment = "speed-change-drift"
//! seed = 11
//!
//! [model]
//! family = "speed_change"   # ssep | speed_change | metropolis
//! b = 0.3
//! rho = 0.4
//! gamma = 0.05
//! L = 512
//!
//! [simulation]
//! horizon = 1000.0
//! replicas = 8
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs;
use crate::lattice::{Coupling, GibbsSpec, LocalFunction, RateFamily, RateTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    Ssep,
    SpeedChange,
    Metropolis,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    pub sites: Vec<i32>,
    pub j: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: FamilyName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default)]
    pub beta: f64,
    /// Interaction of the Gibbs measure; Metropolis defaults to `J η(0)η(1)`, `J = 1`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub couplings: Vec<CouplingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    #[serde(default)]
    pub gamma: f64,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_radius: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_grid: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermoConfig {
    #[serde(default = "one")]
    pub a: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_grid: Option<Vec<f64>>,
}

impl Default for ThermoConfig {
    fn default() -> Self {
        Self { a: 1.0, rho_grid: None }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    pub sites: Vec<i32>,
    pub coefficient: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Observable as a sum of monomials; defaults to `η(0)η(1)`.
    #[serde(default = "default_terms")]
    pub f: Vec<TermConfig>,
    #[serde(default = "half")]
    pub rho: f64,
    #[serde(default = "default_ells")]
    pub ells: Vec<usize>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { f: default_terms(), rho: 0.5, ells: default_ells() }
    }
}

fn default_terms() -> Vec<TermConfig> {
    vec![TermConfig { sites: vec![0, 1], coefficient: 1.0 }]
}

fn half() -> f64 {
    0.5
}

fn default_ells() -> Vec<usize> {
    vec![10, 14, 18, 22]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureConfig {
    pub max_lag: usize,
    pub time_lags: Vec<f64>,
    pub origin_spacing: f64,
    pub origins: usize,
    /// Frame velocity in sites per unit time; omitted means the lab frame.
    #[serde(default)]
    pub velocity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub horizon: f64,
    #[serde(default = "one_usize")]
    pub replicas: usize,
    /// Sampling times; if absent, `sample_every` is used, else only the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_times: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_every: Option<f64>,
    #[serde(default)]
    pub snapshots: bool,
    /// Weak asymmetry: if both are given, `γ = a√ε` replaces `model.gamma`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure: Option<StructureConfig>,
}

fn one_usize() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbeConfig {
    pub cells: usize,
    /// Defaults to `1 / cells`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dx: Option<f64>,
    /// Defaults to a fifth of `Δx²/D`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub steps: usize,
    #[serde(default = "one_usize")]
    pub sample_every: usize,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default = "one_usize")]
    pub replicas: usize,
    pub delta: f64,
    /// Asymmetry `a`; defaults to `thermo.a`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approximate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub model: ModelConfig,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default)]
    pub thermo: ThermoConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensembles: Option<EnsembleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sbe: Option<SbeConfig>,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

/// A model section turned into rates and a measure.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedModel {
    pub family: RateFamily,
    /// Rates including the asymmetry `γ`.
    pub rates: RateTable,
    /// Gibbs measure at the requested density or fugacity.
    pub spec: GibbsSpec,
    pub rho: f64,
}

impl ModelConfig {
    pub fn resolve(&self) -> Result<ResolvedModel> {
        let mut couplings = self
            .couplings
            .iter()
            .map(|c| Coupling::new(&c.sites, c.j))
            .collect::<Result<Vec<_>>>()?;
        if self.family == FamilyName::Metropolis && couplings.is_empty() {
            couplings.push(Coupling::new(&[0, 1], 1.0)?);
        }
        if self.family == FamilyName::SpeedChange && self.b.is_none() {
            return Err(Error::Config("speed_change needs `b`".into()));
        }
        if self.family != FamilyName::SpeedChange && self.b.is_some() {
            return Err(Error::Config("`b` only applies to speed_change".into()));
        }
        let base = GibbsSpec::new(couplings, self.beta, 0.0)?;
        let family = match self.family {
            FamilyName::Ssep => RateFamily::Ssep,
            FamilyName::SpeedChange => RateFamily::SpeedChange { b: self.b.unwrap_or(0.0) },
            FamilyName::Metropolis => RateFamily::Metropolis { spec: base.clone() },
        };
        let spec = match (self.rho, self.phi) {
            (Some(_), Some(_)) => return Err(Error::Config("give `rho` or `phi`, not both".into())),
            (Some(rho), None) => gibbs::spec_at_density(&base, rho)?,
            (None, Some(phi)) => base.with_phi(phi),
            (None, None) => gibbs::spec_at_density(&base, 0.5)?,
        };
        let rho = gibbs::density(&spec)?;
        let rates = RateTable::builtin(&family)?.with_gamma(self.gamma)?;
        Ok(ResolvedModel { family, rates, spec, rho })
    }
}

impl EnsembleConfig {
    pub fn observable(&self) -> LocalFunction {
        let terms: Vec<(Vec<i32>, f64)> = self.f.iter().map(|t| (t.sites.clone(), t.coefficient)).collect();
        LocalFunction::from_terms(&terms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            experiment = "x"
            seed = 3
            [model]
            family = "speed_change"
            b = 0.3
            rho = 0.4
            gamma = 0.05
            L = 64
            "#,
        )
        .unwrap();
        let m = cfg.model.resolve().unwrap();
        assert!((m.rho - 0.4).abs() < 1e-12);
        assert_eq!(m.rates.gamma(), 0.05);
        assert_eq!(cfg.model.size, Some(64));
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_conflicts() {
        assert!(ExperimentConfig::from_toml("experiment = \"x\"\nbogus = 1\n[model]\nfamily = \"ssep\"\n").is_err());
        assert!(ExperimentConfig::from_toml("experiment = \"x\"\n[model]\nfamily = \"ssep\"\ncolour = 2\n").is_err());
        let both = ExperimentConfig::from_toml("experiment = \"x\"\n[model]\nfamily = \"ssep\"\nrho = 0.3\nphi = 0.1\n").unwrap();
        assert!(both.model.resolve().is_err());
        let nob = ExperimentConfig::from_toml("experiment = \"x\"\n[model]\nfamily = \"speed_change\"\n").unwrap();
        assert!(nob.model.resolve().is_err());
    }

    #[test]
    fn metropolis_defaults_to_nearest_neighbour() {
        let cfg = ExperimentConfig::from_toml("experiment = \"m\"\n[model]\nfamily = \"metropolis\"\nbeta = 0.7\n").unwrap();
        let m = cfg.model.resolve().unwrap();
        assert_eq!(m.spec.range(), 1);
        assert!((m.rho - 0.5).abs() < 1e-10);
    }
}
