//! Exact design variances of group means and contrasts, and the observable
//! conservative variance estimator with its confidence interval.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::design::{DesignSpec, GroupLabel, GroupPartition};
use crate::error::{Error, Result};
use crate::estimators::{Beta, EffectName, EffectSpec};
use crate::moments::{omega, xi, CovariateTensor, Decentered, Mode, MomentSummary, Potentials, Theta};
use crate::numeric::normal_quantile;

/// k^θ_γ: the weight of ω^θ_γ in Var(ŷ̄_γ).
pub fn variance_weight(spec: &DesignSpec, g: GroupLabel, t: Theta) -> f64 {
    let (ni, nj) = spec.group_size(g);
    let (i, j) = (spec.buyers() as f64, spec.sellers() as f64);
    let kb = (i - ni as f64) / (ni as f64 * i);
    let ks = (j - nj as f64) / (nj as f64 * j);
    match t {
        Theta::B => kb,
        Theta::S => ks,
        Theta::BS => kb * ks,
    }
}

/// m^θ_γγ' such that Cov(ŷ̄_γ, ŷ̄_γ') = Σ_θ m^θ (ω^θ_γ + ω^θ_γ' - ξ^θ_γγ') / 2.
/// The buyer sign is +1 when the two groups share buyers, and likewise for sellers.
pub fn covariance_weight(spec: &DesignSpec, g: GroupLabel, h: GroupLabel, t: Theta) -> f64 {
    let (gi, gj) = spec.group_size(g);
    let (hi, hj) = spec.group_size(h);
    let (i, j) = (spec.buyers() as f64, spec.sellers() as f64);
    let eta_b = if g.buyer_treated() == h.buyer_treated() { 1.0 } else { -1.0 };
    let eta_s = if g.seller_treated() == h.seller_treated() { 1.0 } else { -1.0 };
    let ib = (spec.treated_buyers() * spec.control_buyers()) as f64;
    let js = (spec.treated_sellers() * spec.control_sellers()) as f64;
    let mb = eta_b * ib / ((gi * hi) as f64 * i);
    let ms = eta_s * js / ((gj * hj) as f64 * j);
    match t {
        Theta::B => mb,
        Theta::S => ms,
        Theta::BS => mb * ms,
    }
}

fn check_shape(m: &DMatrix<f64>, spec: &DesignSpec) -> Result<()> {
    if m.shape() != (spec.buyers(), spec.sellers()) {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {:?}, design is {}x{}",
            m.shape(),
            spec.buyers(),
            spec.sellers()
        )));
    }
    Ok(())
}

/// Var(ŷ̄_γ) = k^B ω^B + k^S ω^S + k^B k^S ω^BS.
pub fn exact_group_variance(m: &DMatrix<f64>, spec: &DesignSpec, g: GroupLabel) -> Result<f64> {
    check_shape(m, spec)?;
    let w = omega(m, Mode::Population)?;
    Ok(Theta::ALL.iter().map(|t| variance_weight(spec, g, *t) * w.get(*t)).sum())
}

fn covariance_from_moments(
    spec: &DesignSpec,
    g: GroupLabel,
    h: GroupLabel,
    wg: &MomentSummary,
    wh: &MomentSummary,
    x: &MomentSummary,
) -> f64 {
    Theta::ALL.iter().map(|t| covariance_weight(spec, g, h, *t) * 0.5 * (wg.get(*t) + wh.get(*t) - x.get(*t))).sum()
}

pub fn exact_group_covariance(
    m_g: &DMatrix<f64>,
    m_h: &DMatrix<f64>,
    spec: &DesignSpec,
    g: GroupLabel,
    h: GroupLabel,
) -> Result<f64> {
    if g == h {
        return Err(Error::Invalid("covariance of a group with itself; use the variance".into()));
    }
    check_shape(m_g, spec)?;
    check_shape(m_h, spec)?;
    let wg = omega(m_g, Mode::Population)?;
    let wh = omega(m_h, Mode::Population)?;
    let x = xi(m_g, m_h)?;
    Ok(covariance_from_moments(spec, g, h, &wg, &wh, &x))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupValues {
    pub tr: f64,
    pub ib: f64,
    pub is: f64,
    pub cc: f64,
}

impl GroupValues {
    pub fn from_array(a: [f64; 4]) -> Self {
        Self { tr: a[0], ib: a[1], is: a[2], cc: a[3] }
    }
    pub fn to_array(self) -> [f64; 4] {
        [self.tr, self.ib, self.is, self.cc]
    }
    pub fn get(&self, g: GroupLabel) -> f64 {
        self.to_array()[g.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairCovariance {
    pub first: GroupLabel,
    pub second: GroupLabel,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceDecomposition {
    /// Contribution of the ω terms.
    pub omega_part: f64,
    /// Contribution of the ξ terms.
    pub xi_part: f64,
    /// Total contribution of each component θ ∈ {B, S, BS}.
    pub by_component: MomentSummary,
}

/// Exact design variance of a contrast estimator (schema v1).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceReport {
    pub schema_version: u32,
    pub effect: EffectName,
    pub c: [f64; 4],
    pub group_variances: GroupValues,
    pub covariances: Vec<PairCovariance>,
    pub total: f64,
    pub decomposition: VarianceDecomposition,
    /// The closed-form expression for preset contrasts, when one exists.
    pub specialized: Option<f64>,
}

/// Relative tolerance used when checking closed forms against the generic assembly.
pub const SPECIALIZED_TOLERANCE: f64 = 1e-10;

/// Per-group ω and pairwise ξ of a set of potential tables.
pub struct PotentialMoments {
    pub omega: [MomentSummary; 4],
    pub xi: [[MomentSummary; 4]; 4],
}

impl PotentialMoments {
    pub fn of(p: &Potentials) -> Result<Self> {
        let mut om = [MomentSummary::default(); 4];
        for g in GroupLabel::ALL {
            om[g.index()] = omega(p.get(g), Mode::Population)?;
        }
        let mut x = [[MomentSummary::default(); 4]; 4];
        for g in GroupLabel::ALL {
            for h in GroupLabel::ALL {
                if g.index() < h.index() {
                    let v = xi(p.get(g), p.get(h))?;
                    x[g.index()][h.index()] = v;
                    x[h.index()][g.index()] = v;
                }
            }
        }
        Ok(Self { omega: om, xi: x })
    }
}

pub fn exact_estimator_variance(
    potentials: &Potentials,
    spec: &DesignSpec,
    effect: &EffectSpec,
    beta: &Beta,
    x: Option<&CovariateTensor>,
) -> Result<VarianceReport> {
    let (r, c) = potentials.shape();
    if (r, c) != (spec.buyers(), spec.sellers()) {
        return Err(Error::DimensionMismatch(format!(
            "potentials are {r}x{c}, design is {}x{}",
            spec.buyers(),
            spec.sellers()
        )));
    }
    let resid = match (beta, x) {
        (Beta::None, _) => potentials.clone(),
        (b, Some(x)) => potentials.residualize(x, &b.per_group(x.dim()))?,
        (_, None) => return Err(Error::Invalid("β supplied without covariates".into())),
    };
    let pm = PotentialMoments::of(&resid)?;
    let cv = effect.c;

    let mut vars = [0.0; 4];
    let mut by_theta = [0.0; 3];
    let mut omega_part = 0.0;
    let mut xi_part = 0.0;
    for g in GroupLabel::ALL {
        let gi = g.index();
        for t in Theta::ALL {
            let term = variance_weight(spec, g, t) * pm.omega[gi].get(t);
            vars[gi] += term;
            let contrib = cv[gi] * cv[gi] * term;
            omega_part += contrib;
            by_theta[t.index()] += contrib;
        }
    }
    let mut covs = Vec::with_capacity(6);
    for g in GroupLabel::ALL {
        for h in GroupLabel::ALL {
            if g.index() >= h.index() {
                continue;
            }
            let (gi, hi) = (g.index(), h.index());
            let value = covariance_from_moments(spec, g, h, &pm.omega[gi], &pm.omega[hi], &pm.xi[gi][hi]);
            covs.push(PairCovariance { first: g, second: h, value });
            let cc = 2.0 * cv[gi] * cv[hi];
            for t in Theta::ALL {
                let m = covariance_weight(spec, g, h, t);
                let om = cc * m * 0.5 * (pm.omega[gi].get(t) + pm.omega[hi].get(t));
                let xp = -cc * m * 0.5 * pm.xi[gi][hi].get(t);
                omega_part += om;
                xi_part += xp;
                by_theta[t.index()] += om + xp;
            }
        }
    }
    let total = omega_part + xi_part;

    let specialized = specialized_variance(effect, spec, &pm);
    if let Some(s) = specialized {
        let scale = omega_part.abs() + xi_part.abs();
        if (s - total).abs() > SPECIALIZED_TOLERANCE * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Numerical(format!(
                "closed-form {} variance {s:e} disagrees with generic {total:e}",
                effect.label()
            )));
        }
    }

    Ok(VarianceReport {
        schema_version: 1,
        effect: effect.name,
        c: cv,
        group_variances: GroupValues::from_array(vars),
        covariances: covs,
        total,
        decomposition: VarianceDecomposition { omega_part, xi_part, by_component: MomentSummary::from_array(by_theta) },
        specialized,
    })
}

/// The simplified variance expressions for the preset contrasts, written
/// term by term in ω and ξ.
pub fn specialized_variance(effect: &EffectSpec, spec: &DesignSpec, pm: &PotentialMoments) -> Option<f64> {
    let i = spec.buyers() as f64;
    let j = spec.sellers() as f64;
    let it = spec.treated_buyers() as f64;
    let jt = spec.treated_sellers() as f64;
    let ic = spec.control_buyers() as f64;
    let jc = spec.control_sellers() as f64;
    let (tr, ib, is, cc) = (0, 1, 2, 3);
    let w = |g: usize| pm.omega[g];
    let x = |g: usize, h: usize| pm.xi[g][h];
    if effect.c != EffectSpec::preset(effect.name)?.c {
        return None;
    }
    let v = match effect.name {
        EffectName::Direct => {
            w(tr).bs / (it * jt)
                + w(ib).bs / (it * jc)
                + w(is).bs / (ic * jt)
                + w(cc).bs / (ic * jc)
                + ic / (it * i) * x(tr, ib).b
                - x(tr, is).b / i
                + x(tr, cc).b / i
                + x(ib, is).b / i
                - x(ib, cc).b / i
                + it / ic / i * x(is, cc).b
                - x(tr, ib).s / j
                + jc / jt / j * x(tr, is).s
                + x(tr, cc).s / j
                + x(ib, is).s / j
                + jt / jc / j * x(ib, cc).s
                - x(is, cc).s / j
                - ic / it / (i * j) * x(tr, ib).bs
                - jc / jt / (i * j) * x(tr, is).bs
                - x(tr, cc).bs / (i * j)
                - x(ib, is).bs / (i * j)
                - jt / jc / (i * j) * x(ib, cc).bs
                - it / ic / (i * j) * x(is, cc).bs
        }
        EffectName::Total => {
            w(tr).b / it
                + w(tr).s / jt
                + (ic * jc / (it * jt) - 1.0) / (i * j) * w(tr).bs
                + w(cc).b / ic
                + w(cc).s / jc
                + (it * jt / (ic * jc) - 1.0) / (i * j) * w(cc).bs
                - x(tr, cc).b / i
                - x(tr, cc).s / j
                + x(tr, cc).bs / (i * j)
        }
        EffectName::BuyerSpillover => {
            w(ib).b / it + w(cc).b / ic + jt / (it * jc * j) * w(ib).bs + jt / (ic * jc * j) * w(cc).bs
                - x(ib, cc).b / i
                + jt / (jc * j) * x(ib, cc).s
                - jt / jc / (i * j) * x(ib, cc).bs
        }
        EffectName::SellerSpillover => {
            w(is).s / jt
                + w(cc).s / jc
                + it / (jt * ic * i) * w(is).bs
                + it / (jc * ic * i) * w(cc).bs
                + it / ic / i * x(is, cc).b
                - x(is, cc).s / j
                - it / ic / (i * j) * x(is, cc).bs
        }
        EffectName::Custom => return None,
    };
    Some(v)
}

/// Within-group pieces of the per-group variance estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConservativeComponents {
    pub group: GroupLabel,
    pub sigma_b: f64,
    pub sigma_s: f64,
    pub sigma_bs: f64,
    pub alpha_b: f64,
    pub alpha_s: f64,
    /// Unbiased estimate of Var(ŷ̄_γ); may be negative before clipping.
    pub sigma_hat: f64,
}

/// Σ̂_γ from the observed block of a group.
///
/// With n = I_γ, m = J_γ, a = 2α^B and b = 2α^S the estimator is
/// a·n/(n-1)·Σ̂^B + b·m/(m-1)·Σ̂^S - a·b·nm/((n-1)(m-1))·Σ̂^BS,
/// which is exactly unbiased for a ω^B + b ω^S + ab ω^BS over the design.
pub fn sigma_hat_gamma(
    y_obs: &DMatrix<f64>,
    partition: &GroupPartition,
    g: GroupLabel,
    spec: &DesignSpec,
) -> Result<ConservativeComponents> {
    check_shape(y_obs, spec)?;
    let s = omega(y_obs, Mode::Group(g, partition))?;
    let (n, m) = partition.size(g);
    let (nf, mf) = (n as f64, m as f64);
    let (i, j) = (spec.buyers() as f64, spec.sellers() as f64);
    let alpha_b = 0.5 * (i - nf) / (i * nf);
    let alpha_s = 0.5 * (j - mf) / (j * mf);
    let (a, b) = (2.0 * alpha_b, 2.0 * alpha_s);
    let sigma_hat =
        a * nf / (nf - 1.0) * s.b + b * mf / (mf - 1.0) * s.s - a * b * nf * mf / ((nf - 1.0) * (mf - 1.0)) * s.bs;
    Ok(ConservativeComponents { group: g, sigma_b: s.b, sigma_s: s.s, sigma_bs: s.bs, alpha_b, alpha_s, sigma_hat })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConservativeVariance {
    pub v_hat: f64,
    pub components: Vec<ConservativeComponents>,
}

/// V̂_c = (Σ_γ |c_γ| sqrt(Σ̂_γ⁺))² over residuals observed under the assignment.
pub fn conservative_variance(
    residual_obs: &DMatrix<f64>,
    partition: &GroupPartition,
    c: &[f64; 4],
    spec: &DesignSpec,
) -> Result<ConservativeVariance> {
    let mut root = 0.0;
    let mut components = Vec::new();
    for g in GroupLabel::ALL {
        let cg = c[g.index()];
        if cg == 0.0 {
            continue;
        }
        let comp = sigma_hat_gamma(residual_obs, partition, g, spec)?;
        root += cg.abs() * comp.sigma_hat.max(0.0).sqrt();
        components.push(comp);
    }
    let v_hat = root * root;
    assert!(v_hat >= 0.0);
    Ok(ConservativeVariance { v_hat, components })
}

/// The population bound V_c = (Σ_γ |c_γ| sqrt(Var(ŷ̄_γ)))².
pub fn conservative_bound(potentials: &Potentials, spec: &DesignSpec, c: &[f64; 4]) -> Result<f64> {
    let mut root = 0.0;
    for g in GroupLabel::ALL {
        let cg = c[g.index()];
        if cg != 0.0 {
            root += cg.abs() * exact_group_variance(potentials.get(g), spec, g)?.max(0.0).sqrt();
        }
    }
    Ok(root * root)
}

/// z_{1-α/2} for a two-sided level.
pub fn z_value(level: f64) -> f64 {
    normal_quantile(0.5 + 0.5 * level)
}

pub fn confidence_interval(point: f64, v_hat: f64, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Invalid(format!("confidence level must lie in (0,1), got {level}")));
    }
    if !(v_hat >= 0.0) {
        return Err(Error::Invalid(format!("variance bound must be nonnegative, got {v_hat}")));
    }
    let h = z_value(level) * v_hat.sqrt();
    Ok((point - h, point + h))
}

/// ANOVA identity check helper: (1/IJ) Σ (y - ȳ̄)² rebuilt from the components.
pub fn anova_total(m: &DMatrix<f64>) -> f64 {
    let d = Decentered::of(m);
    let (i, j) = (m.nrows() as f64, m.ncols() as f64);
    let w = d.inner(&d, [i - 1.0, j - 1.0, (i - 1.0) * (j - 1.0)]);
    w[2] * (i - 1.0) * (j - 1.0) / (i * j) + w[0] * (i - 1.0) / i + w[1] * (j - 1.0) / j
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_values() {
        let spec = DesignSpec::new(4, 4, 2, 2).unwrap();
        let a = crate::design::Assignment::new(vec![true, true, false, false], vec![true, false, true, false]);
        let p = crate::design::partition(&spec, &a).unwrap();
        let y = DMatrix::from_fn(4, 4, |i, j| (i * 3 + j) as f64);
        let c = sigma_hat_gamma(&y, &p, GroupLabel::Tr, &spec).unwrap();
        assert!((c.alpha_b - 0.125).abs() < 1e-15);
        assert!((c.alpha_s - 0.125).abs() < 1e-15);
    }

    #[test]
    fn ci_basics() {
        let (lo, hi) = confidence_interval(3.0, 0.0, 0.95).unwrap();
        assert_eq!((lo, hi), (3.0, 3.0));
        let (lo, hi) = confidence_interval(0.0, 1.0, 0.95).unwrap();
        assert!((hi - 1.959963985).abs() < 1e-8 && (lo + 1.959963985).abs() < 1e-8);
        let (_, h90) = confidence_interval(0.0, 1.0, 0.90).unwrap();
        assert!(h90 < hi);
    }

    #[test]
    fn explicit_covariance_sign() {
        let spec = DesignSpec::new(10, 8, 3, 5).unwrap();
        let w = covariance_weight(&spec, GroupLabel::Tr, GroupLabel::Ib, Theta::B);
        assert!((w / 2.0 - 7.0 / (2.0 * 3.0 * 10.0)).abs() < 1e-15);
    }
}
