//! Block systems for the interacted estimator, where each active group gets
//! its own coefficient vector β_γ.
//!
//! Every block follows from the group variance and covariance weights:
//! Z[γ,γ'] = Σ_θ c_γ c_γ' w^θ_γγ' Z^θ and u[γ] = Σ_θ Σ_γ' c_γ c_γ' w^θ_γγ' u^θ_γ',
//! with w = k on the diagonal and m off it. In the plug-in version the gram
//! term of block [γ,γ'] is estimated on group γ', the group whose β it
//! multiplies, so that Ẑβ reproduces the shift of û caused by residualizing.
//! That matrix is not symmetric in general.

use nalgebra::{DMatrix, DVector};

use crate::design::{DesignSpec, GroupLabel, GroupPartition};
use crate::error::{Error, Result};
use crate::estimators::effect::EffectSpec;
use crate::moments::{
    population_u, population_z, CovariateTensor, GroupBlock, Potentials, SystemSource, Theta, ThetaMatrices,
    ThetaVectors,
};
use crate::variance::{covariance_weight, variance_weight};

#[derive(Debug, Clone, PartialEq)]
pub struct InteractedSystem {
    pub active: Vec<GroupLabel>,
    /// z_blocks[a][b] is the d×d block for (active[a], active[b]).
    pub z_blocks: Vec<Vec<DMatrix<f64>>>,
    pub u_blocks: Vec<DVector<f64>>,
    pub source: SystemSource,
    pub effect: String,
    pub dim: usize,
    /// Orthonormal columns α over `active` with Σ_h a(γ,h,θ)α_h = 0 for every θ.
    /// β directions α ⊗ w leave the centered estimator unchanged.
    pub structural_null: DMatrix<f64>,
}

impl InteractedSystem {
    pub fn assembled(&self) -> (DMatrix<f64>, DVector<f64>) {
        let d = self.dim;
        let n = self.active.len();
        let mut z = DMatrix::zeros(n * d, n * d);
        let mut u = DVector::zeros(n * d);
        for a in 0..n {
            u.rows_mut(a * d, d).copy_from(&self.u_blocks[a]);
            for b in 0..n {
                z.view_mut((a * d, b * d), (d, d)).copy_from(&self.z_blocks[a][b]);
            }
        }
        (z, u)
    }
}

fn weight(spec: &DesignSpec, g: GroupLabel, h: GroupLabel, t: Theta) -> f64 {
    if g == h {
        variance_weight(spec, g, t)
    } else {
        covariance_weight(spec, g, h, t)
    }
}

fn assemble(
    effect: &EffectSpec,
    spec: &DesignSpec,
    d: usize,
    z_of: impl Fn(GroupLabel) -> ThetaMatrices,
    u_of: &[Option<ThetaVectors>; 4],
    source: SystemSource,
) -> InteractedSystem {
    let active = effect.active_groups();
    let zs: Vec<ThetaMatrices> = active.iter().map(|g| z_of(*g)).collect();
    let n = active.len();
    let mut stacked = DMatrix::zeros(3 * n, n);
    for t in Theta::ALL {
        for (a, &g) in active.iter().enumerate() {
            for (b, &h) in active.iter().enumerate() {
                stacked[(t.index() * n + a, b)] = effect.coef(g) * effect.coef(h) * weight(spec, g, h, t);
            }
        }
    }
    let structural_null = null_basis(&stacked);
    let mut z_blocks = Vec::with_capacity(active.len());
    let mut u_blocks = Vec::with_capacity(active.len());
    for &g in &active {
        let mut row = Vec::with_capacity(active.len());
        for (bi, &h) in active.iter().enumerate() {
            let mut blk = DMatrix::zeros(d, d);
            let cc = effect.coef(g) * effect.coef(h);
            for t in Theta::ALL {
                blk += &zs[bi][t.index()] * (cc * weight(spec, g, h, t));
            }
            row.push(blk);
        }
        z_blocks.push(row);
        let mut ub = DVector::zeros(d);
        for &h in &active {
            let uh = u_of[h.index()].as_ref().expect("outcome moments for active group");
            let cc = effect.coef(g) * effect.coef(h);
            for t in Theta::ALL {
                ub += &uh[t.index()] * (cc * weight(spec, g, h, t));
            }
        }
        u_blocks.push(ub);
    }
    InteractedSystem { active, z_blocks, u_blocks, source, effect: effect.label().to_string(), dim: d, structural_null }
}

fn null_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.ncols();
    // Pad with zero rows so the thin SVD returns all n right singular vectors.
    let mut sq = DMatrix::zeros(m.nrows().max(n), n);
    sq.view_mut((0, 0), m.shape()).copy_from(m);
    let svd = sq.svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let cut = NULL_TOLERANCE * svd.singular_values.max().max(f64::MIN_POSITIVE);
    let keep: Vec<usize> = (0..n).filter(|&k| svd.singular_values[k] <= cut).collect();
    DMatrix::from_fn(n, keep.len(), |r, c| v_t[(keep[c], r)])
}

/// Plug-in interacted system from one observed assignment.
pub fn interacted_system(
    effect: &EffectSpec,
    x: &CovariateTensor,
    y_obs: &DMatrix<f64>,
    p: &GroupPartition,
    spec: &DesignSpec,
) -> Result<InteractedSystem> {
    effect.require_balanced()?;
    x.check_shape(y_obs)?;
    let mut blocks: [Option<GroupBlock>; 4] = Default::default();
    let mut u_of: [Option<ThetaVectors>; 4] = Default::default();
    for g in effect.active_groups() {
        let b = GroupBlock::new(x, Some(y_obs), p, g)?;
        u_of[g.index()] = Some(b.u_hat());
        blocks[g.index()] = Some(b);
    }
    Ok(assemble(
        effect,
        spec,
        x.dim(),
        |g| blocks[g.index()].as_ref().expect("active block").z_hat(),
        &u_of,
        SystemSource::PlugIn,
    ))
}

/// Population interacted system; symmetric positive semidefinite.
pub fn population_interacted_system(
    effect: &EffectSpec,
    x: &CovariateTensor,
    potentials: &Potentials,
    spec: &DesignSpec,
) -> Result<InteractedSystem> {
    effect.require_balanced()?;
    let zp = population_z(x)?;
    let mut u_of: [Option<ThetaVectors>; 4] = Default::default();
    for g in effect.active_groups() {
        u_of[g.index()] = Some(population_u(x, potentials.get(g))?);
    }
    Ok(assemble(effect, spec, x.dim(), |_| zp.clone(), &u_of, SystemSource::Population))
}

/// Per-group coefficients and the rank deficiency of the system they solve.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractedSolution {
    pub betas: [DVector<f64>; 4],
    /// Dimension of the null space of Z.
    pub null_dim: usize,
}

/// Relative singular value cutoff for rank decisions.
pub const NULL_TOLERANCE: f64 = 1e-10;

/// Solve Zβ = u with β orthogonal to the structural null space; inactive
/// groups get β_γ = 0.
///
/// The direct effect system is singular for any data. Its population version
/// is singular exactly along `structural_null` ⊗ R^d, where the estimator does
/// not move, so the population solution is the minimum-norm one. The plug-in
/// Z is singular along slightly different directions that do move the
/// estimator, hence the constraint instead of a plain pseudo-inverse.
pub fn solve_interacted(sys: &InteractedSystem) -> Result<InteractedSolution> {
    let (z, u) = sys.assembled();
    let d = sys.dim;
    let mut betas: [DVector<f64>; 4] = std::array::from_fn(|_| DVector::zeros(d));
    let n = z.nrows();
    if n == 0 {
        return Ok(InteractedSolution { betas, null_dim: 0 });
    }
    if z.iter().chain(u.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("interacted system".into()));
    }
    let smax = z.clone().singular_values().max();
    if !(smax > 0.0) {
        return Err(Error::SingularSystem { condition: f64::INFINITY });
    }
    let cut = NULL_TOLERANCE * smax;
    let null_dim = z.clone().singular_values().iter().filter(|s| **s <= cut).count();

    // Orthonormal basis of the complement of structural_null ⊗ R^d.
    let alpha = &sys.structural_null;
    let mut q = DMatrix::<f64>::identity(n, n);
    if alpha.ncols() > 0 {
        let kron = alpha.kronecker(&DMatrix::<f64>::identity(d, d));
        q -= &kron * kron.transpose();
    }
    let basis = null_basis(&(DMatrix::<f64>::identity(n, n) - &q));
    let zq = &z * &basis;
    let svd = zq.svd(true, true);
    let coords =
        svd.solve(&u, NULL_TOLERANCE * smax).map_err(|e| Error::Numerical(format!("interacted solve: {e}")))?;
    let sol = &basis * coords;
    let resid = (&z * &sol - &u).norm();
    if resid > 1e-8 * (z.norm() * sol.norm() + u.norm()).max(f64::MIN_POSITIVE) {
        let smin = svd.singular_values.min();
        return Err(Error::SingularSystem { condition: smax / smin.max(f64::MIN_POSITIVE) });
    }
    for (a, g) in sys.active.iter().enumerate() {
        betas[g.index()] = sol.rows(a * d, d).into_owned();
    }
    Ok(InteractedSolution { betas, null_dim })
}
