use serde::{Deserialize, Serialize};

use crate::design::{DesignSpec, GroupLabel};
use crate::error::{Error, Result};
use crate::moments::Theta;
use crate::variance::{covariance_weight, variance_weight};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectName {
    Total,
    Direct,
    BuyerSpillover,
    SellerSpillover,
    Custom,
}

impl EffectName {
    pub fn as_str(self) -> &'static str {
        match self {
            EffectName::Total => "total",
            EffectName::Direct => "direct",
            EffectName::BuyerSpillover => "buyer_spillover",
            EffectName::SellerSpillover => "seller_spillover",
            EffectName::Custom => "custom",
        }
    }
}

/// A contrast c over (tr, ib, is, cc).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectSpec {
    pub name: EffectName,
    pub c: [f64; 4],
}

impl EffectSpec {
    pub fn total() -> Self {
        Self { name: EffectName::Total, c: [1.0, 0.0, 0.0, -1.0] }
    }
    pub fn direct() -> Self {
        Self { name: EffectName::Direct, c: [1.0, -1.0, -1.0, 1.0] }
    }
    pub fn buyer_spillover() -> Self {
        Self { name: EffectName::BuyerSpillover, c: [0.0, 1.0, 0.0, -1.0] }
    }
    pub fn seller_spillover() -> Self {
        Self { name: EffectName::SellerSpillover, c: [0.0, 0.0, 1.0, -1.0] }
    }
    pub fn custom(c: [f64; 4]) -> Self {
        Self { name: EffectName::Custom, c }
    }

    pub fn presets() -> [EffectSpec; 4] {
        [Self::total(), Self::direct(), Self::buyer_spillover(), Self::seller_spillover()]
    }

    pub fn preset(name: EffectName) -> Option<Self> {
        match name {
            EffectName::Total => Some(Self::total()),
            EffectName::Direct => Some(Self::direct()),
            EffectName::BuyerSpillover => Some(Self::buyer_spillover()),
            EffectName::SellerSpillover => Some(Self::seller_spillover()),
            EffectName::Custom => None,
        }
    }

    pub fn coef(&self, g: GroupLabel) -> f64 {
        self.c[g.index()]
    }

    pub fn is_balanced(&self) -> bool {
        self.c.iter().sum::<f64>().abs() < 1e-12
    }

    /// Groups with a nonzero coefficient.
    pub fn active_groups(&self) -> Vec<GroupLabel> {
        GroupLabel::ALL.into_iter().filter(|g| self.coef(*g) != 0.0).collect()
    }

    pub fn label(&self) -> &'static str {
        self.name.as_str()
    }

    pub(crate) fn require_balanced(&self) -> Result<()> {
        if self.is_balanced() {
            Ok(())
        } else {
            Err(Error::Unsupported(format!("adjustment needs coefficients summing to zero, got {:?}", self.c)))
        }
    }
}

/// Weights a[γ, θ] combining the per-group gram and inner-product terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectCoefficients {
    pub a: [[f64; 3]; 4],
}

impl EffectCoefficients {
    pub fn get(&self, g: GroupLabel, t: Theta) -> f64 {
        self.a[g.index()][t.index()]
    }
}

/// Closed-form coefficient tables for the four preset contrasts.
pub fn noninteracted_coefficients(effect: &EffectSpec, spec: &DesignSpec) -> Result<EffectCoefficients> {
    let i = spec.buyers() as f64;
    let j = spec.sellers() as f64;
    let it = spec.treated_buyers() as f64;
    let jt = spec.treated_sellers() as f64;
    let ic = spec.control_buyers() as f64;
    let jc = spec.control_sellers() as f64;
    let mut a = [[0.0; 3]; 4];
    let (tr, ib, is, cc) = (0, 1, 2, 3);
    let (b, s, bs) = (0, 1, 2);
    match effect.name {
        EffectName::Direct => {
            for g in GroupLabel::ALL {
                let (ni, nj) = spec.group_size(g);
                a[g.index()][bs] = 1.0 / (ni * nj) as f64;
            }
        }
        EffectName::Total => {
            a[tr] = [1.0 / it, 1.0 / jt, (ic * jc / (it * jt) - 1.0) / (i * j)];
            a[cc] = [1.0 / ic, 1.0 / jc, (it * jt / (ic * jc) - 1.0) / (i * j)];
        }
        EffectName::BuyerSpillover => {
            a[ib][b] = 1.0 / it;
            a[cc][b] = 1.0 / ic;
            a[ib][bs] = jt / (it * jc * j);
            a[cc][bs] = jt / (ic * jc * j);
        }
        EffectName::SellerSpillover => {
            a[is][s] = 1.0 / jt;
            a[cc][s] = 1.0 / jc;
            a[is][bs] = it / (jt * ic * i);
            a[cc][bs] = it / (jc * ic * i);
        }
        EffectName::Custom => {
            return Err(Error::Unsupported(
                "no closed-form table for a custom contrast; use generic_coefficients".into(),
            ))
        }
    }
    Ok(EffectCoefficients { a })
}

/// Coefficients for any contrast, read off the variance and covariance weights:
/// a[γ, θ] = c_γ (c_γ k^θ_γ + Σ_{γ'≠γ} c_γ' m^θ_γγ').
pub fn generic_coefficients(c: &[f64; 4], spec: &DesignSpec) -> EffectCoefficients {
    let mut a = [[0.0; 3]; 4];
    for g in GroupLabel::ALL {
        for t in Theta::ALL {
            let mut inner = c[g.index()] * variance_weight(spec, g, t);
            for h in GroupLabel::ALL {
                if h != g {
                    inner += c[h.index()] * covariance_weight(spec, g, h, t);
                }
            }
            a[g.index()][t.index()] = c[g.index()] * inner;
        }
    }
    EffectCoefficients { a }
}

/// Preset table when available, otherwise the generic derivation.
pub fn coefficients_for(effect: &EffectSpec, spec: &DesignSpec) -> EffectCoefficients {
    match effect.name {
        EffectName::Custom => generic_coefficients(&effect.c, spec),
        _ => noninteracted_coefficients(effect, spec).expect("preset table"),
    }
}
