//! JSON study configuration. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::design::{DesignSpec, DEFAULT_ENUMERATION_CAP};
use crate::error::{Error, Result};
use crate::estimators::{EffectName, EffectSpec, Method};
use crate::simulate::DgpSpec;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buyers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sellers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treated_buyers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treated_sellers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treated_fraction_buyers: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treated_fraction_sellers: Option<f64>,
}

/// A preset name, or explicit coefficients in (tr, ib, is, cc) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EffectEntry {
    Name(EffectName),
    Custom { c: [f64; 4] },
}

impl EffectEntry {
    pub fn resolve(&self) -> Result<EffectSpec> {
        match self {
            EffectEntry::Name(n) => EffectSpec::preset(*n)
                .ok_or_else(|| Error::Config("\"custom\" needs explicit coefficients {\"c\": [..]}".into())),
            EffectEntry::Custom { c } => {
                if c.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config("custom coefficients must be finite".into()));
                }
                Ok(EffectSpec::custom(*c))
            }
        }
    }
}

fn default_effects() -> Vec<EffectEntry> {
    vec![EffectEntry::Name(EffectName::Direct)]
}

fn default_methods() -> Vec<Method> {
    vec![Method::Unadjusted, Method::Ancova, Method::OptNoninteracted]
}

fn default_level() -> f64 {
    0.95
}

fn default_replications() -> usize {
    1000
}

fn default_cap() -> u128 {
    DEFAULT_ENUMERATION_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default)]
    pub design: DesignConfig,
    #[serde(default = "default_effects")]
    pub effects: Vec<EffectEntry>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Redraw potentials in every replication instead of fixing one draw.
    #[serde(default)]
    pub redraw_potentials: bool,
    /// Seed of the potential draw; defaults to `seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dgp_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dgp: Option<DgpSpec>,
    #[serde(default = "default_cap")]
    pub enumeration_cap: u128,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: StudyConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("level must lie in (0, 1), got {}", self.level)));
        }
        if self.effects.is_empty() {
            return Err(Error::Config("effects must not be empty".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods must not be empty".into()));
        }
        for e in &self.effects {
            e.resolve()?;
        }
        let d = &self.design;
        if d.treated_buyers.is_some() && d.treated_fraction_buyers.is_some() {
            return Err(Error::Config("give treated_buyers or treated_fraction_buyers, not both".into()));
        }
        if d.treated_sellers.is_some() && d.treated_fraction_sellers.is_some() {
            return Err(Error::Config("give treated_sellers or treated_fraction_sellers, not both".into()));
        }
        if let Some(dgp) = &self.dgp {
            dgp.validate()?;
        }
        Ok(())
    }

    pub fn resolved_effects(&self) -> Result<Vec<EffectSpec>> {
        self.effects.iter().map(EffectEntry::resolve).collect()
    }

    pub fn dgp_seed(&self) -> u64 {
        self.dgp_seed.unwrap_or(self.seed)
    }

    /// Design on an I×J market. Sizes given in the config must agree with
    /// `dims` when both are present; missing treated counts default to half.
    pub fn resolve_design(&self, dims: Option<(usize, usize)>) -> Result<DesignSpec> {
        let d = &self.design;
        let side = |given: Option<usize>, from_data: Option<usize>, what: &str| -> Result<usize> {
            match (given, from_data) {
                (Some(a), Some(b)) if a != b => Err(Error::Config(format!("config says {a} {what}, data has {b}"))),
                (Some(a), _) | (None, Some(a)) => Ok(a),
                (None, None) => Err(Error::Config(format!("design.{what} is required"))),
            }
        };
        let i = side(d.buyers, dims.map(|x| x.0), "buyers")?;
        let j = side(d.sellers, dims.map(|x| x.1), "sellers")?;
        let count = |n: usize, c: Option<usize>, f: Option<f64>| -> Result<usize> {
            match (c, f) {
                (Some(c), _) => Ok(c),
                (None, Some(f)) if f > 0.0 && f < 1.0 => Ok((f * n as f64).round() as usize),
                (None, Some(f)) => Err(Error::Config(format!("treated fraction {f} is outside (0, 1)"))),
                (None, None) => Ok(n / 2),
            }
        };
        let it = count(i, d.treated_buyers, d.treated_fraction_buyers)?;
        let jt = count(j, d.treated_sellers, d.treated_fraction_sellers)?;
        DesignSpec::new(i, j, it, jt)
    }
}
