//! Regression forms: ANCOVA with a shared slope and the weighted interacted
//! two-way fixed effects regression for the direct effect.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::design::{DesignSpec, GroupLabel, GroupPartition};
use crate::error::{Error, Result};
use crate::moments::{block, grand_mean, CovariateTensor, GroupBlock, Potentials, Theta};
use crate::numeric::{condition_number, dot, MAX_CONDITION};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AncovaFit {
    pub beta: Vec<f64>,
    /// Fitted intercept of each group, in (tr, ib, is, cc) order.
    pub group_means: [f64; 4],
}

/// OLS of y on the four group indicators plus a shared Xᵀβ, solved by
/// demeaning within each group block.
pub fn ancova_beta(y_obs: &DMatrix<f64>, x: &CovariateTensor, p: &GroupPartition) -> Result<AncovaFit> {
    x.check_shape(y_obs)?;
    let d = x.dim();
    let mut xtx = DMatrix::zeros(d, d);
    let mut xty = DVector::zeros(d);
    let mut ybar = [0.0; 4];
    let mut xbar = vec![vec![0.0; d]; 4];
    for g in GroupLabel::ALL {
        let (rows, cols) = (p.buyers_of(g), p.sellers_of(g));
        if rows.is_empty() || cols.is_empty() {
            return Err(Error::DegenerateGroup(g.as_str()));
        }
        let yb = block(y_obs, rows, cols);
        let ym = grand_mean(&yb);
        ybar[g.index()] = ym;
        let yc: Vec<f64> = yb.iter().map(|v| v - ym).collect();
        let xc: Vec<Vec<f64>> = (0..d)
            .map(|k| {
                let xb = block(x.layer(k), rows, cols);
                let m = grand_mean(&xb);
                xbar[g.index()][k] = m;
                xb.iter().map(|v| v - m).collect()
            })
            .collect();
        for a in 0..d {
            xty[a] += dot(&xc[a], &yc);
            for b in a..d {
                let v = dot(&xc[a], &xc[b]);
                xtx[(a, b)] += v;
                if a != b {
                    xtx[(b, a)] += v;
                }
            }
        }
    }
    let beta = if d == 0 {
        DVector::zeros(0)
    } else {
        let cond = condition_number(&xtx);
        if !(cond < MAX_CONDITION) {
            return Err(Error::RankDeficient(format!("within-group covariate gram matrix has condition {cond:.3e}")));
        }
        xtx.cholesky().ok_or_else(|| Error::RankDeficient("within-group covariate gram matrix".into()))?.solve(&xty)
    };
    let mut means = [0.0; 4];
    for g in 0..4 {
        let fit: f64 = (0..d).map(|k| xbar[g][k] * beta[k]).sum();
        means[g] = ybar[g] - fit;
    }
    Ok(AncovaFit { beta: beta.iter().copied().collect(), group_means: means })
}

/// Large-sample limit of the ANCOVA slope for fixed potentials: the pooled
/// within-group regression with each group weighted by its expected share of pairs.
pub fn ancova_population_beta(x: &CovariateTensor, potentials: &Potentials, spec: &DesignSpec) -> Result<DVector<f64>> {
    x.check_shape(potentials.get(GroupLabel::Tr))?;
    let d = x.dim();
    let n = (spec.buyers() * spec.sellers()) as f64;
    let xc: Vec<Vec<f64>> = x
        .layers()
        .iter()
        .map(|l| {
            let m = grand_mean(l);
            l.iter().map(|v| v - m).collect()
        })
        .collect();
    let mut sxx = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in 0..d {
            sxx[(a, b)] = dot(&xc[a], &xc[b]);
        }
    }
    let mut sxy = DVector::zeros(d);
    for g in GroupLabel::ALL {
        let (ni, nj) = spec.group_size(g);
        let share = (ni * nj) as f64 / n;
        let y = potentials.get(g);
        let m = grand_mean(y);
        let yc: Vec<f64> = y.iter().map(|v| v - m).collect();
        for a in 0..d {
            sxy[a] += share * dot(&xc[a], &yc);
        }
    }
    crate::numeric::solve_spd(&sxx, &sxy).map_err(|_| Error::RankDeficient("covariate gram matrix".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwfeFit {
    pub tau: f64,
    pub beta: Vec<f64>,
}

/// Weighted interacted TWFE regression for the direct effect, with weights
/// 1/(I_γ J_γ)² and the eight identifiability constraints on the fixed effects.
///
/// Parameters are laid out as (μ, α, δ, τ), then μ^B, α^B, δ^B, τ^B (length I
/// each), μ^S, α^S, δ^S, τ^S (length J each), then β. The constrained problem is
/// solved on the null space of the constraints by a minimum-norm SVD least squares.
pub fn wls_twfe_direct(
    y_obs: &DMatrix<f64>,
    x: &CovariateTensor,
    p: &GroupPartition,
    spec: &DesignSpec,
) -> Result<TwfeFit> {
    x.check_shape(y_obs)?;
    let (ni, nj) = (spec.buyers(), spec.sellers());
    if p.dims != (ni, nj) {
        return Err(Error::DimensionMismatch("partition does not match design".into()));
    }
    let d = x.dim();
    if d > 0 {
        let mut zdir = DMatrix::zeros(d, d);
        for g in GroupLabel::ALL {
            let blk = GroupBlock::new(x, None, p, g)?;
            zdir += &blk.z_hat()[Theta::BS.index()] / (blk.rows * blk.cols) as f64;
        }
        let cond = condition_number(&zdir);
        if !(cond < MAX_CONDITION) {
            return Err(Error::RankDeficient(format!("doubly decentered covariates have condition {cond:.3e}")));
        }
    }
    let wb: Vec<f64> = (0..ni).map(|i| if p.buyers_of(GroupLabel::Tr).contains(&i) { 1.0 } else { 0.0 }).collect();
    let ws: Vec<f64> = (0..nj).map(|j| if p.sellers_of(GroupLabel::Tr).contains(&j) { 1.0 } else { 0.0 }).collect();
    let mu_b = 4;
    let al_b = mu_b + ni;
    let de_b = al_b + ni;
    let ta_b = de_b + ni;
    let mu_s = ta_b + ni;
    let al_s = mu_s + nj;
    let de_s = al_s + nj;
    let ta_s = de_s + nj;
    let be = ta_s + nj;
    let np = be + d;

    let nobs = ni * nj;
    let mut design = DMatrix::zeros(nobs, np);
    let mut rhs = DVector::zeros(nobs);
    for j in 0..nj {
        for i in 0..ni {
            let r = j * ni + i;
            let (b, s) = (wb[i], ws[j]);
            let g = GroupLabel::from_flags(b == 1.0, s == 1.0);
            let (gi, gj) = p.size(g);
            let sw = 1.0 / (gi * gj) as f64;
            let row = [1.0, b, s, b * s];
            for (k, v) in row.iter().enumerate() {
                design[(r, k)] = sw * v;
                design[(r, mu_b + k * ni + i)] = sw * v;
                design[(r, mu_s + k * nj + j)] = sw * v;
            }
            for k in 0..d {
                design[(r, be + k)] = sw * x.layer(k)[(i, j)];
            }
            rhs[r] = sw * y_obs[(i, j)];
        }
    }

    let mut cons = DMatrix::zeros(8, np);
    for i in 0..ni {
        cons[(0, mu_b + i)] = 1.0 - wb[i];
        cons[(2, de_b + i)] = 1.0 - wb[i];
        cons[(4, mu_b + i)] = wb[i];
        cons[(4, al_b + i)] = wb[i];
        cons[(6, de_b + i)] = wb[i];
        cons[(6, ta_b + i)] = wb[i];
    }
    for j in 0..nj {
        cons[(1, mu_s + j)] = 1.0 - ws[j];
        cons[(3, al_s + j)] = 1.0 - ws[j];
        cons[(5, mu_s + j)] = ws[j];
        cons[(5, de_s + j)] = ws[j];
        cons[(7, al_s + j)] = ws[j];
        cons[(7, ta_s + j)] = ws[j];
    }
    let ctc = cons.transpose() * &cons;
    let eig = SymmetricEigen::new(ctc);
    let emax = eig.eigenvalues.amax().max(1.0);
    let null_cols: Vec<usize> = (0..np).filter(|&k| eig.eigenvalues[k].abs() <= 1e-10 * emax).collect();
    let mut basis = DMatrix::zeros(np, null_cols.len());
    for (c, &k) in null_cols.iter().enumerate() {
        basis.set_column(c, &eig.eigenvectors.column(k));
    }

    let reduced = &design * &basis;
    let svd = reduced.svd(true, true);
    let smax = svd.singular_values.max();
    let eps = 1e-10 * smax.max(f64::MIN_POSITIVE);
    let gamma = svd.solve(&rhs, eps).map_err(|e| Error::Numerical(format!("TWFE least squares: {e}")))?;
    let theta = &basis * gamma;

    Ok(TwfeFit { tau: theta[3], beta: theta.rows(be, d).iter().copied().collect() })
}
