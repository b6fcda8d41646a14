//! CLT bound terms for doubly randomized means, per-group CLT condition
//! ratios for contrast estimators, and a classification of which variance
//! component dominates.
//!
//! Logarithms are natural. All statistics are ratios of deviations to a
//! standard deviation, so adding a constant to every entry leaves them unchanged.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::design::{DesignSpec, GroupLabel};
use crate::error::{Error, Result};
use crate::estimators::{Beta, EffectSpec};
use crate::moments::{col_means, grand_mean, row_means, Potentials, Theta};
use crate::variance::{exact_estimator_variance, exact_group_variance};

pub const POWER_TOLERANCE: f64 = 1e-8;
pub const POWER_MAX_ITER: usize = 10_000;
const POWER_SEED: u64 = 0x5eed_0f0b;

/// Terms on the right-hand side of the Wasserstein bound for one matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CltTerms {
    pub term_sqrt_i: f64,
    pub term_rowmax: f64,
    pub term_colmax: f64,
    pub term_entrymax: f64,
    pub term_opnorm: f64,
    pub sigma_tot: f64,
}

impl CltTerms {
    pub fn to_array(&self) -> [f64; 5] {
        [self.term_sqrt_i, self.term_rowmax, self.term_colmax, self.term_entrymax, self.term_opnorm]
    }

    pub fn sum(&self) -> f64 {
        self.to_array().iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CltBoundReport {
    /// Bound obtained by conditioning on sellers first.
    pub terms: CltTerms,
    /// The same bound applied to the transposed matrix (buyers conditioned first).
    pub transposed: CltTerms,
}

/// Spectral norm by power iteration on AᵀA.
pub fn operator_norm(a: &DMatrix<f64>) -> f64 {
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut v = DVector::from_fn(c, |_, _| rng.random::<f64>() - 0.5);
    let n = v.norm();
    if n == 0.0 {
        return 0.0;
    }
    v /= n;
    let mut sigma = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let av = a * &v;
        let mut w = a.tr_mul(&av);
        let lam = w.norm();
        if lam == 0.0 {
            return 0.0;
        }
        w /= lam;
        let next = lam.sqrt();
        v = w;
        if (next - sigma).abs() <= POWER_TOLERANCE * next {
            return next;
        }
        sigma = next;
    }
    sigma
}

fn terms_for(m: &DMatrix<f64>, spec: &DesignSpec) -> Result<CltTerms> {
    let sigma = exact_group_variance(m, spec, GroupLabel::Tr)?.max(0.0).sqrt();
    let gm = grand_mean(m);
    let scale = m.iter().fold(0.0_f64, |a, v| a.max((v - gm).abs()));
    if !(sigma > 1e-14 * scale.max(f64::MIN_POSITIVE)) || sigma == 0.0 {
        return Err(Error::ZeroVariance("doubly randomized mean has zero variance".into()));
    }
    let (i, j) = (m.nrows() as f64, m.ncols() as f64);
    let rm = row_means(m);
    let cm = col_means(m);
    let rowmax = rm.iter().fold(0.0_f64, |a, v| a.max((v - gm).abs()));
    let colmax = cm.iter().fold(0.0_f64, |a, v| a.max((v - gm).abs()));
    let mut entrymax = 0.0_f64;
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            entrymax = entrymax.max((m[(r, c)] - rm[r]).abs());
        }
    }
    let centered = m.map(|v| v - gm);
    let op = operator_norm(&centered);
    Ok(CltTerms {
        term_sqrt_i: 1.0 / i.sqrt(),
        term_rowmax: rowmax / (i * sigma),
        term_colmax: colmax / (j * sigma),
        term_entrymax: i.ln().sqrt() / i.powf(1.5) * entrymax / sigma,
        term_opnorm: (op / (i * i * sigma)).sqrt(),
        sigma_tot: sigma,
    })
}

/// Bound terms for the mean of `m` over a random I_T × J_T block.
pub fn clt_bound_terms(m: &DMatrix<f64>, spec: &DesignSpec) -> Result<CltBoundReport> {
    let terms = terms_for(m, spec)?;
    let transposed = terms_for(&m.transpose(), &spec.transposed())?;
    Ok(CltBoundReport { terms, transposed })
}

/// Pseudo-outcomes z with τ̂_c equal to the mean of z over the treated block.
pub(crate) fn pseudo_outcomes(potentials: &Potentials, spec: &DesignSpec, c: &[f64; 4]) -> DMatrix<f64> {
    let (ni, nj) = potentials.shape();
    let (i, j) = (ni as f64, nj as f64);
    let (it, jt) = (spec.treated_buyers() as f64, spec.treated_sellers() as f64);
    let (ic, jc) = (spec.control_buyers() as f64, spec.control_sellers() as f64);
    let mut z = DMatrix::zeros(ni, nj);
    for g in GroupLabel::ALL {
        let cg = c[g.index()];
        if cg == 0.0 {
            continue;
        }
        let y = potentials.get(g);
        let rm = row_means(y);
        let cm = col_means(y);
        let gm = grand_mean(y);
        for col in 0..nj {
            for r in 0..ni {
                let v = y[(r, col)];
                let zg = match g {
                    GroupLabel::Tr => v,
                    GroupLabel::Ib => jt / jc * (j / jt * rm[r] - v),
                    GroupLabel::Is => it / ic * (i / it * cm[col] - v),
                    GroupLabel::Cc => {
                        it * jt / (ic * jc) * (i * j / (it * jt) * gm - j / jt * rm[r] - i / it * cm[col] + v)
                    }
                };
                z[(r, col)] += cg * zg;
            }
        }
    }
    z
}

/// The four condition statistics for one potential table, divided by Var(τ̂_c)^{1/2}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionRatios {
    pub group: GroupLabel,
    pub rowmax: f64,
    pub colmax: f64,
    pub entrymax: f64,
    pub opnorm: f64,
}

impl ConditionRatios {
    pub fn max(&self) -> f64 {
        self.rowmax.max(self.colmax).max(self.entrymax).max(self.opnorm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CltConditionReport {
    pub effect: String,
    pub sd_estimator: f64,
    pub groups: Vec<ConditionRatios>,
    /// Bound terms for the pseudo-outcome matrix whose treated-block mean is τ̂_c.
    pub pseudo_outcome_bound: CltBoundReport,
    pub note: &'static str,
}

const CONDITION_NOTE: &str = "ratios are magnitudes for this instance; the asymptotic condition \
requires them to vanish as the market grows and cannot be verified from one instance";

pub fn clt_condition_check(
    potentials: &Potentials,
    spec: &DesignSpec,
    effect: &EffectSpec,
) -> Result<CltConditionReport> {
    let var = exact_estimator_variance(potentials, spec, effect, &Beta::None, None)?;
    let scale = potentials.tables().iter().flat_map(|t| t.iter()).fold(0.0_f64, |a, v| a.max(v.abs()));
    if !(var.total > 1e-24 * scale * scale) || var.total <= 0.0 {
        return Err(Error::ZeroVariance(format!("{} estimator has zero variance", effect.label())));
    }
    let sd = var.total.sqrt();
    let (i, j) = potentials.shape();
    let (fi, fj) = (i as f64, j as f64);
    let mut groups = Vec::new();
    for g in effect.active_groups() {
        let y = potentials.get(g);
        let gm = grand_mean(y);
        let rm = row_means(y);
        let cm = col_means(y);
        let rowmax = rm.iter().fold(0.0_f64, |a, v| a.max((v - gm).abs()));
        let colmax = cm.iter().fold(0.0_f64, |a, v| a.max((v - gm).abs()));
        let mut entrymax = 0.0_f64;
        for col in 0..j {
            for r in 0..i {
                entrymax = entrymax.max((y[(r, col)] - cm[col]).abs());
            }
        }
        let op = operator_norm(&y.map(|v| v - gm));
        groups.push(ConditionRatios {
            group: g,
            rowmax: rowmax / fi / sd,
            colmax: colmax / fj / sd,
            entrymax: fi.ln().sqrt() / fi.powf(1.5) * entrymax / sd,
            opnorm: op / (fi * fi) / sd,
        });
    }
    let z = pseudo_outcomes(potentials, spec, &effect.c);
    let pseudo_outcome_bound = clt_bound_terms(&z, spec)?;
    Ok(CltConditionReport {
        effect: effect.label().to_string(),
        sd_estimator: sd,
        groups,
        pseudo_outcome_bound,
        note: CONDITION_NOTE,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Row and column components dominate; variance of order 1/I.
    BuyerSellerDominated,
    /// The double-decentered component dominates; variance of order 1/(IJ).
    InteractionDominated,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegimeReport {
    pub regime: Regime,
    pub share_buyer: f64,
    pub share_seller: f64,
    pub share_interaction: f64,
    pub variance: f64,
}

/// Share threshold below which a component is treated as negligible.
pub const REGIME_THRESHOLD: f64 = 0.1;

/// Split the exact variance into its buyer, seller and interaction components.
/// Shares are absolute contributions normalized to sum to one.
pub fn variance_regime(potentials: &Potentials, spec: &DesignSpec, effect: &EffectSpec) -> Result<RegimeReport> {
    let var = exact_estimator_variance(potentials, spec, effect, &Beta::None, None)?;
    let comp = var.decomposition.by_component;
    let parts = [comp.get(Theta::B).abs(), comp.get(Theta::S).abs(), comp.get(Theta::BS).abs()];
    let total: f64 = parts.iter().sum();
    if !(total > 0.0) || !(var.total > 0.0) {
        return Err(Error::ZeroVariance(format!("{} estimator has zero variance", effect.label())));
    }
    let [b, s, bs] = parts.map(|p| p / total);
    let regime = if bs < REGIME_THRESHOLD {
        Regime::BuyerSellerDominated
    } else if b + s < REGIME_THRESHOLD {
        Regime::InteractionDominated
    } else {
        Regime::Mixed
    };
    Ok(RegimeReport { regime, share_buyer: b, share_seller: s, share_interaction: bs, variance: var.total })
}
