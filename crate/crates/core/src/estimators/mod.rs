//! Point estimators for SMRD contrasts: unadjusted, imputation with a shared
//! or per-group covariate adjustment, ANCOVA and the weighted TWFE form.

mod effect;
mod interacted;
mod ols;
mod point;
mod system;

pub use effect::{
    coefficients_for, generic_coefficients, noninteracted_coefficients, EffectCoefficients, EffectName, EffectSpec,
};
pub use interacted::{
    interacted_system, population_interacted_system, solve_interacted, InteractedSolution, InteractedSystem,
    NULL_TOLERANCE,
};
pub use ols::{ancova_beta, ancova_population_beta, wls_twfe_direct, AncovaFit, TwfeFit};
pub use point::{group_mean, grouped_residuals, tau_imputation, tau_interacted, tau_unadjusted};
pub use system::{plugin_system, population_system, solve_beta};

use nalgebra::{DMatrix, DVector};
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::design::{DesignSpec, GroupLabel, GroupPartition};
use crate::error::{Error, Result};
use crate::moments::CovariateTensor;
use crate::variance::{confidence_interval, conservative_variance, ConservativeComponents};

/// Covariate coefficients used by an estimate.
#[derive(Debug, Clone, PartialEq)]
pub enum Beta {
    None,
    Shared(DVector<f64>),
    ByGroup([DVector<f64>; 4]),
}

impl Beta {
    /// Coefficients for each group; zeros when no adjustment is used.
    pub fn per_group(&self, d: usize) -> [DVector<f64>; 4] {
        match self {
            Beta::None => std::array::from_fn(|_| DVector::zeros(d)),
            Beta::Shared(b) => std::array::from_fn(|_| b.clone()),
            Beta::ByGroup(bs) => bs.clone(),
        }
    }
}

impl Serialize for Beta {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Beta::None => s.serialize_none(),
            Beta::Shared(b) => b.as_slice().serialize(s),
            Beta::ByGroup(bs) => {
                let mut m = s.serialize_map(Some(4))?;
                for g in GroupLabel::ALL {
                    m.serialize_entry(g.as_str(), bs[g.index()].as_slice())?;
                }
                m.end()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Unadjusted,
    Ancova,
    OptNoninteracted,
    OptInteracted,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Unadjusted, Method::Ancova, Method::OptNoninteracted, Method::OptInteracted];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Unadjusted => "unadjusted",
            Method::Ancova => "ancova",
            Method::OptNoninteracted => "opt_noninteracted",
            Method::OptInteracted => "opt_interacted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateDiagnostics {
    /// Per-group variance estimator pieces computed on the residuals.
    pub components: Vec<ConservativeComponents>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdjustedEstimate {
    pub effect: EffectSpec,
    pub method: Method,
    pub point: f64,
    pub beta: Beta,
    pub variance_bound: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub diagnostics: EstimateDiagnostics,
}

/// Estimate one contrast with one method, attaching the conservative variance
/// bound and confidence interval computed from the residuals.
pub fn estimate(
    effect: &EffectSpec,
    y_obs: &DMatrix<f64>,
    x: &CovariateTensor,
    p: &GroupPartition,
    spec: &DesignSpec,
    method: Method,
    level: f64,
) -> Result<AdjustedEstimate> {
    x.check_shape(y_obs)?;
    if p.dims != (spec.buyers(), spec.sellers()) {
        return Err(Error::DimensionMismatch("partition does not match design".into()));
    }
    if y_obs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("observed outcomes".into()));
    }
    let mut warnings = Vec::new();
    let (beta, point, resid) = match method {
        Method::Unadjusted => (Beta::None, tau_unadjusted(y_obs, p, &effect.c)?, y_obs.clone()),
        Method::Ancova => {
            effect.require_balanced()?;
            let fit = ancova_beta(y_obs, x, p)?;
            let b = DVector::from_vec(fit.beta);
            let point = tau_imputation(y_obs, x, p, &effect.c, &b)?;
            let resid = y_obs - x.apply(&b);
            (Beta::Shared(b), point, resid)
        }
        Method::OptNoninteracted => {
            let sys = plugin_system(effect, x, y_obs, p, spec)?;
            warnings.extend(sys.warnings.iter().cloned());
            let b = solve_beta(&sys)?;
            let point = tau_imputation(y_obs, x, p, &effect.c, &b)?;
            let resid = y_obs - x.apply(&b);
            (Beta::Shared(b), point, resid)
        }
        Method::OptInteracted => {
            let sys = interacted_system(effect, x, y_obs, p, spec)?;
            let sol = solve_interacted(&sys)?;
            if sol.null_dim > 0 {
                warnings.push(format!(
                    "interacted system has a {}-dimensional null space; coefficients taken orthogonal to the design null space",
                    sol.null_dim
                ));
            }
            let bs = sol.betas;
            let point = tau_interacted(y_obs, x, p, &effect.c, &bs)?;
            let resid = grouped_residuals(y_obs, x, p, &bs);
            (Beta::ByGroup(bs), point, resid)
        }
    };
    let cv = conservative_variance(&resid, p, &effect.c, spec)?;
    let (ci_low, ci_high) = confidence_interval(point, cv.v_hat, level)?;
    Ok(AdjustedEstimate {
        effect: *effect,
        method,
        point,
        beta,
        variance_bound: cv.v_hat,
        ci_low,
        ci_high,
        level,
        diagnostics: EstimateDiagnostics { components: cv.components, warnings },
    })
}
