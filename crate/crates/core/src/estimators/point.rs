use nalgebra::{DMatrix, DVector};

use crate::design::{GroupLabel, GroupPartition};
use crate::error::{Error, Result};
use crate::moments::{block, grand_mean, CovariateTensor};

fn check(y: &DMatrix<f64>, p: &GroupPartition) -> Result<()> {
    if y.shape() != p.dims {
        return Err(Error::DimensionMismatch(format!("outcomes are {:?}, partition is {:?}", y.shape(), p.dims)));
    }
    Ok(())
}

/// Mean of the observed block of group γ.
pub fn group_mean(y_obs: &DMatrix<f64>, p: &GroupPartition, g: GroupLabel) -> Result<f64> {
    check(y_obs, p)?;
    let (ni, nj) = p.size(g);
    if ni == 0 || nj == 0 {
        return Err(Error::DegenerateGroup(g.as_str()));
    }
    Ok(grand_mean(&block(y_obs, p.buyers_of(g), p.sellers_of(g))))
}

/// Σ_γ c_γ ŷ̄_γ; groups with c_γ = 0 are not touched.
pub fn tau_unadjusted(y_obs: &DMatrix<f64>, p: &GroupPartition, c: &[f64; 4]) -> Result<f64> {
    let mut t = 0.0;
    for g in GroupLabel::ALL {
        if c[g.index()] != 0.0 {
            t += c[g.index()] * group_mean(y_obs, p, g)?;
        }
    }
    Ok(t)
}

pub fn tau_imputation(
    y_obs: &DMatrix<f64>,
    x: &CovariateTensor,
    p: &GroupPartition,
    c: &[f64; 4],
    beta: &DVector<f64>,
) -> Result<f64> {
    x.check_shape(y_obs)?;
    if beta.len() != x.dim() {
        return Err(Error::DimensionMismatch(format!(
            "β has length {}, covariates have dimension {}",
            beta.len(),
            x.dim()
        )));
    }
    tau_unadjusted(&(y_obs - x.apply(beta)), p, c)
}

/// Imputation estimator with a separate β_γ for each group, on covariates
/// centered at their grand mean so that it stays unbiased for τ_c.
pub fn tau_interacted(
    y_obs: &DMatrix<f64>,
    x: &CovariateTensor,
    p: &GroupPartition,
    c: &[f64; 4],
    betas: &[DVector<f64>; 4],
) -> Result<f64> {
    x.check_shape(y_obs)?;
    let x = &x.centered();
    let mut t = 0.0;
    for g in GroupLabel::ALL {
        let cg = c[g.index()];
        if cg == 0.0 {
            continue;
        }
        let b = &betas[g.index()];
        if b.len() != x.dim() {
            return Err(Error::DimensionMismatch(format!(
                "β_{g} has length {}, covariates have dimension {}",
                b.len(),
                x.dim()
            )));
        }
        t += cg * group_mean(&(y_obs - x.apply(b)), p, g)?;
    }
    Ok(t)
}

/// y_ij - (X_ij - X̄̄)ᵀβ_γ(i,j): residuals under per-group coefficients.
pub fn grouped_residuals(
    y_obs: &DMatrix<f64>,
    x: &CovariateTensor,
    p: &GroupPartition,
    betas: &[DVector<f64>; 4],
) -> DMatrix<f64> {
    let x = &x.centered();
    let mut out = y_obs.clone();
    for g in GroupLabel::ALL {
        let b = &betas[g.index()];
        if b.is_empty() {
            continue;
        }
        for &i in p.buyers_of(g) {
            for &j in p.sellers_of(g) {
                let mut fit = 0.0;
                for (k, bk) in b.iter().enumerate() {
                    fit += x.layer(k)[(i, j)] * bk;
                }
                out[(i, j)] -= fit;
            }
        }
    }
    out
}
