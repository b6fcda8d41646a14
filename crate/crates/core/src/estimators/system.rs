use nalgebra::{DMatrix, DVector};

use crate::design::{DesignSpec, GroupLabel, GroupPartition};
use crate::error::{Error, Result};
use crate::estimators::effect::{coefficients_for, EffectSpec};
use crate::moments::{
    population_u, population_z, AdjustmentSystem, CovariateTensor, GroupBlock, Potentials, SystemSource, Theta,
};
use crate::numeric::solve_spd;

/// Plug-in system Ẑ_c = Σ a[γ,θ] Ẑ^θ_γ, û_c = Σ a[γ,θ] û^θ_γ built from the observed blocks.
pub fn plugin_system(
    effect: &EffectSpec,
    x: &CovariateTensor,
    y_obs: &DMatrix<f64>,
    p: &GroupPartition,
    spec: &DesignSpec,
) -> Result<AdjustmentSystem> {
    effect.require_balanced()?;
    x.check_shape(y_obs)?;
    let a = coefficients_for(effect, spec);
    let d = x.dim();
    let mut z = DMatrix::zeros(d, d);
    let mut u = DVector::zeros(d);
    let mut warnings = Vec::new();
    for g in GroupLabel::ALL {
        let row = a.a[g.index()];
        if row.iter().all(|w| *w == 0.0) {
            continue;
        }
        let blk = GroupBlock::new(x, Some(y_obs), p, g)?;
        if d >= blk.rows.min(blk.cols) {
            warnings.push(format!(
                "{d} covariates against a {}x{} block in group {g}; the estimated adjustment may be unstable",
                blk.rows, blk.cols
            ));
        }
        let zh = blk.z_hat();
        let uh = blk.u_hat();
        for t in Theta::ALL {
            let w = row[t.index()];
            if w != 0.0 {
                z += &zh[t.index()] * w;
                u += &uh[t.index()] * w;
            }
        }
    }
    Ok(AdjustmentSystem { z, u, source: SystemSource::PlugIn, effect: effect.label().to_string(), warnings })
}

/// Population system Z̃_c, ũ_c; its solution is the exact variance minimizer.
pub fn population_system(
    effect: &EffectSpec,
    x: &CovariateTensor,
    potentials: &Potentials,
    spec: &DesignSpec,
) -> Result<AdjustmentSystem> {
    effect.require_balanced()?;
    let a = coefficients_for(effect, spec);
    let zp = population_z(x)?;
    let d = x.dim();
    let mut z = DMatrix::zeros(d, d);
    let mut u = DVector::zeros(d);
    for g in GroupLabel::ALL {
        let row = a.a[g.index()];
        if row.iter().all(|w| *w == 0.0) {
            continue;
        }
        let ug = population_u(x, potentials.get(g))?;
        for t in Theta::ALL {
            let w = row[t.index()];
            z += &zp[t.index()] * w;
            u += &ug[t.index()] * w;
        }
    }
    Ok(AdjustmentSystem {
        z,
        u,
        source: SystemSource::Population,
        effect: effect.label().to_string(),
        warnings: Vec::new(),
    })
}

/// β = Z⁻¹u by Cholesky; ill-conditioned systems are refused, never pseudo-inverted.
pub fn solve_beta(system: &AdjustmentSystem) -> Result<DVector<f64>> {
    let beta = solve_spd(&system.z, &system.u)?;
    let resid = (&system.z * &beta - &system.u).norm();
    let scale = system.z.norm() * beta.norm() + system.u.norm();
    if resid > 1e-8 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Numerical(format!("solve residual {resid:e} exceeds tolerance")));
    }
    Ok(beta)
}
