//! Decentering and the finite-population moment quantities ω, ξ, u and Z,
//! together with their within-group empirical counterparts.
//!
//! Population quantities divide by (I-1), (J-1) and (I-1)(J-1); group
//! estimators restrict to a block, decenter with the block's own means and
//! divide by I_γ, J_γ and I_γ J_γ.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::design::{Assignment, GroupLabel, GroupPartition};
use crate::error::{Error, Result};
use crate::numeric::{dot, mean, pairwise_sum};

pub type OutcomeMatrix = DMatrix<f64>;

/// The three variance components: buyer (row means), seller (column means)
/// and interaction (double-decentered entries).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Theta {
    B,
    S,
    BS,
}

impl Theta {
    pub const ALL: [Theta; 3] = [Theta::B, Theta::S, Theta::BS];
    pub fn index(self) -> usize {
        self as usize
    }
}

/// I×J×d covariates stored as d layers of I×J matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateTensor {
    layers: Vec<DMatrix<f64>>,
    rows: usize,
    cols: usize,
}

impl CovariateTensor {
    pub fn new(layers: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = layers.first().ok_or_else(|| Error::Invalid("covariate dimension must be at least 1".into()))?;
        let (rows, cols) = first.shape();
        for (k, l) in layers.iter().enumerate() {
            if l.shape() != (rows, cols) {
                return Err(Error::DimensionMismatch(format!(
                    "covariate layer {k} is {:?}, expected {:?}",
                    l.shape(),
                    (rows, cols)
                )));
            }
            if l.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("covariate layer {k}")));
            }
        }
        Ok(Self { layers, rows, cols })
    }

    /// A tensor with no covariates (d = 0), used by unadjusted paths.
    pub fn none(rows: usize, cols: usize) -> Self {
        Self { layers: Vec::new(), rows, cols }
    }

    pub fn dim(&self) -> usize {
        self.layers.len()
    }
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
    pub fn layer(&self, k: usize) -> &DMatrix<f64> {
        &self.layers[k]
    }
    pub fn layers(&self) -> &[DMatrix<f64>] {
        &self.layers
    }

    pub fn at(&self, i: usize, j: usize) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.layers.iter().map(|l| l[(i, j)]))
    }

    /// Σ_k X_ij,k β_k as an I×J matrix.
    pub fn apply(&self, beta: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows, self.cols);
        for (l, b) in self.layers.iter().zip(beta.iter()) {
            out += l * *b;
        }
        out
    }

    pub fn check_shape(&self, y: &DMatrix<f64>) -> Result<()> {
        if y.shape() != self.shape() {
            return Err(Error::DimensionMismatch(format!(
                "outcomes are {:?}, covariates are {:?}",
                y.shape(),
                self.shape()
            )));
        }
        Ok(())
    }

    /// Each layer minus its grand mean.
    pub fn centered(&self) -> Self {
        let layers = self.layers.iter().map(|l| l.add_scalar(-grand_mean(l))).collect();
        Self { layers, rows: self.rows, cols: self.cols }
    }

    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Vec<DMatrix<f64>> {
        self.layers.iter().map(|l| block(l, rows, cols)).collect()
    }
}

pub fn row_means(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        m.nrows(),
        (0..m.nrows()).map(|i| {
            let row: Vec<f64> = m.row(i).iter().copied().collect();
            mean(&row)
        }),
    )
}

pub fn col_means(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), (0..m.ncols()).map(|j| mean(m.column(j).as_slice())))
}

pub fn grand_mean(m: &DMatrix<f64>) -> f64 {
    mean(m.as_slice())
}

/// M_ij - row mean_i - column mean_j + grand mean.
pub fn double_decenter(m: &DMatrix<f64>) -> DMatrix<f64> {
    Decentered::of(m).dcr
}

pub fn block(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| m[(rows[a], cols[b])])
}

/// Row and column mean deviations plus the double-decentered matrix.
#[derive(Debug, Clone)]
pub struct Decentered {
    pub row: Vec<f64>,
    pub col: Vec<f64>,
    pub dcr: DMatrix<f64>,
}

impl Decentered {
    pub fn of(m: &DMatrix<f64>) -> Self {
        let rm = row_means(m);
        let cm = col_means(m);
        let g = grand_mean(m);
        let dcr = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] - rm[i] - cm[j] + g);
        Self { row: rm.iter().map(|v| v - g).collect(), col: cm.iter().map(|v| v - g).collect(), dcr }
    }

    /// Inner products of the three components, each divided by its denominator.
    pub fn inner(&self, other: &Decentered, denom: [f64; 3]) -> [f64; 3] {
        [
            dot(&self.row, &other.row) / denom[0],
            dot(&self.col, &other.col) / denom[1],
            dot(self.dcr.as_slice(), other.dcr.as_slice()) / denom[2],
        ]
    }
}

fn population_denominators(rows: usize, cols: usize) -> [f64; 3] {
    let (i, j) = ((rows - 1) as f64, (cols - 1) as f64);
    [i, j, i * j]
}

fn group_denominators(rows: usize, cols: usize) -> [f64; 3] {
    let (i, j) = (rows as f64, cols as f64);
    [i, j, i * j]
}

/// ω^B, ω^S, ω^BS (or ξ, or any single component triple).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MomentSummary {
    pub b: f64,
    pub s: f64,
    pub bs: f64,
}

impl MomentSummary {
    pub fn from_array(a: [f64; 3]) -> Self {
        Self { b: a[0], s: a[1], bs: a[2] }
    }
    pub fn to_array(self) -> [f64; 3] {
        [self.b, self.s, self.bs]
    }
    pub fn get(&self, t: Theta) -> f64 {
        self.to_array()[t.index()]
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Mode<'a> {
    Population,
    Group(GroupLabel, &'a GroupPartition),
}

fn group_block(m: &DMatrix<f64>, p: &GroupPartition, g: GroupLabel) -> Result<DMatrix<f64>> {
    if m.shape() != p.dims {
        return Err(Error::DimensionMismatch(format!("matrix is {:?}, partition is {:?}", m.shape(), p.dims)));
    }
    let (ni, nj) = p.size(g);
    if ni < 2 || nj < 2 {
        return Err(Error::DegenerateGroup(g.as_str()));
    }
    Ok(block(m, p.buyers_of(g), p.sellers_of(g)))
}

fn check_population(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() < 2 || m.ncols() < 2 {
        return Err(Error::DimensionMismatch("population moments need at least 2x2".into()));
    }
    Ok(())
}

pub fn omega(m: &DMatrix<f64>, mode: Mode<'_>) -> Result<MomentSummary> {
    match mode {
        Mode::Population => {
            check_population(m)?;
            let d = Decentered::of(m);
            Ok(MomentSummary::from_array(d.inner(&d, population_denominators(m.nrows(), m.ncols()))))
        }
        Mode::Group(g, p) => {
            let b = group_block(m, p, g)?;
            let d = Decentered::of(&b);
            Ok(MomentSummary::from_array(d.inner(&d, group_denominators(b.nrows(), b.ncols()))))
        }
    }
}

/// Population cross moment of two matrices of the same shape.
pub fn cross(m1: &DMatrix<f64>, m2: &DMatrix<f64>) -> Result<[f64; 3]> {
    if m1.shape() != m2.shape() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", m1.shape(), m2.shape())));
    }
    check_population(m1)?;
    Ok(Decentered::of(m1).inner(&Decentered::of(m2), population_denominators(m1.nrows(), m1.ncols())))
}

/// ξ^B, ξ^S, ξ^BS: the ω components of the difference M1 - M2.
pub fn xi(m1: &DMatrix<f64>, m2: &DMatrix<f64>) -> Result<MomentSummary> {
    if m1.shape() != m2.shape() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", m1.shape(), m2.shape())));
    }
    omega(&(m1 - m2), Mode::Population)
}

/// u^θ as three d-vectors.
pub type ThetaVectors = [DVector<f64>; 3];
/// Z^θ as three d×d matrices.
pub type ThetaMatrices = [DMatrix<f64>; 3];

fn inner_vectors(xs: &[Decentered], y: &Decentered, denom: [f64; 3]) -> ThetaVectors {
    let d = xs.len();
    let mut out = [DVector::zeros(d), DVector::zeros(d), DVector::zeros(d)];
    for (k, x) in xs.iter().enumerate() {
        let v = x.inner(y, denom);
        for t in 0..3 {
            out[t][k] = v[t];
        }
    }
    out
}

fn gram(xs: &[Decentered], denom: [f64; 3]) -> ThetaMatrices {
    let d = xs.len();
    let mut out = [DMatrix::zeros(d, d), DMatrix::zeros(d, d), DMatrix::zeros(d, d)];
    for a in 0..d {
        for b in a..d {
            let v = xs[a].inner(&xs[b], denom);
            for t in 0..3 {
                out[t][(a, b)] = v[t];
                out[t][(b, a)] = v[t];
            }
        }
    }
    out
}

pub fn population_u(x: &CovariateTensor, y: &DMatrix<f64>) -> Result<ThetaVectors> {
    x.check_shape(y)?;
    check_population(y)?;
    let xs: Vec<Decentered> = x.layers().iter().map(Decentered::of).collect();
    Ok(inner_vectors(&xs, &Decentered::of(y), population_denominators(y.nrows(), y.ncols())))
}

pub fn population_z(x: &CovariateTensor) -> Result<ThetaMatrices> {
    let (r, c) = x.shape();
    if r < 2 || c < 2 {
        return Err(Error::DimensionMismatch("population moments need at least 2x2".into()));
    }
    let xs: Vec<Decentered> = x.layers().iter().map(Decentered::of).collect();
    Ok(gram(&xs, population_denominators(r, c)))
}

/// Decentered covariate layers and outcomes restricted to one group block,
/// cached so several statistics can share them.
#[derive(Debug, Clone)]
pub struct GroupBlock {
    pub group: GroupLabel,
    pub x: Vec<Decentered>,
    pub y: Option<Decentered>,
    pub rows: usize,
    pub cols: usize,
}

impl GroupBlock {
    pub fn new(x: &CovariateTensor, y: Option<&DMatrix<f64>>, p: &GroupPartition, g: GroupLabel) -> Result<Self> {
        if x.shape() != p.dims {
            return Err(Error::DimensionMismatch(format!("covariates are {:?}, partition is {:?}", x.shape(), p.dims)));
        }
        let (rows, cols) = p.size(g);
        if rows < 2 || cols < 2 {
            return Err(Error::DegenerateGroup(g.as_str()));
        }
        let xb = x.select(p.buyers_of(g), p.sellers_of(g));
        let yd = match y {
            Some(y) => Some(Decentered::of(&group_block(y, p, g)?)),
            None => None,
        };
        Ok(Self { group: g, x: xb.iter().map(Decentered::of).collect(), y: yd, rows, cols })
    }

    fn denom(&self) -> [f64; 3] {
        group_denominators(self.rows, self.cols)
    }

    pub fn u_hat(&self) -> ThetaVectors {
        let y = self.y.as_ref().expect("group block built without outcomes");
        inner_vectors(&self.x, y, self.denom())
    }

    pub fn z_hat(&self) -> ThetaMatrices {
        gram(&self.x, self.denom())
    }
}

pub fn group_u_hat(
    x: &CovariateTensor,
    y_obs: &DMatrix<f64>,
    p: &GroupPartition,
    g: GroupLabel,
) -> Result<ThetaVectors> {
    x.check_shape(y_obs)?;
    Ok(GroupBlock::new(x, Some(y_obs), p, g)?.u_hat())
}

pub fn group_z_hat(x: &CovariateTensor, p: &GroupPartition, g: GroupLabel) -> Result<ThetaMatrices> {
    Ok(GroupBlock::new(x, None, p, g)?.z_hat())
}

/// Where an adjustment system came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemSource {
    Population,
    PlugIn,
}

/// The (Z, u) pair whose solution β = Z⁻¹u minimizes the design variance.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustmentSystem {
    pub z: DMatrix<f64>,
    pub u: DVector<f64>,
    pub source: SystemSource,
    pub effect: String,
    pub warnings: Vec<String>,
}

/// Full potential-outcome tables, one I×J matrix per group in (tr, ib, is, cc) order.
#[derive(Debug, Clone, PartialEq)]
pub struct Potentials {
    y: [OutcomeMatrix; 4],
}

impl Potentials {
    pub fn new(y: [OutcomeMatrix; 4]) -> Result<Self> {
        let shape = y[0].shape();
        for (g, m) in GroupLabel::ALL.iter().zip(&y) {
            if m.shape() != shape {
                return Err(Error::DimensionMismatch(format!(
                    "potential table {g} is {:?}, expected {:?}",
                    m.shape(),
                    shape
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("potential table {g}")));
            }
        }
        Ok(Self { y })
    }

    pub fn get(&self, g: GroupLabel) -> &OutcomeMatrix {
        &self.y[g.index()]
    }

    pub fn tables(&self) -> &[OutcomeMatrix; 4] {
        &self.y
    }

    pub fn shape(&self) -> (usize, usize) {
        self.y[0].shape()
    }

    /// The matrix revealed by an assignment: each cell shows its own group's potential.
    pub fn observe(&self, a: &Assignment) -> OutcomeMatrix {
        let (r, c) = self.shape();
        DMatrix::from_fn(r, c, |i, j| self.y[a.group_of(i, j).index()][(i, j)])
    }

    /// τ_c = Σ_γ c_γ ȳ̄_γ.
    pub fn estimand(&self, c: &[f64; 4]) -> f64 {
        GroupLabel::ALL.iter().map(|g| c[g.index()] * grand_mean(self.get(*g))).sum()
    }

    /// Residual tables y(γ) - (X - X̄̄)β_γ. Centering keeps the contrast of the
    /// residual tables equal to τ_c when the β_γ differ.
    pub fn residualize(&self, x: &CovariateTensor, betas: &[DVector<f64>; 4]) -> Result<Self> {
        x.check_shape(&self.y[0])?;
        let x = x.centered();
        let y =
            std::array::from_fn(
                |k| {
                    if betas[k].is_empty() {
                        self.y[k].clone()
                    } else {
                        &self.y[k] - x.apply(&betas[k])
                    }
                },
            );
        Ok(Self { y })
    }
}

/// Sum of squared entries, pairwise.
pub fn sum_sq(m: &DMatrix<f64>) -> f64 {
    let sq: Vec<f64> = m.iter().map(|v| v * v).collect();
    pairwise_sum(&sq)
}
