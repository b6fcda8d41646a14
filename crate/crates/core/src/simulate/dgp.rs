//! Data-generating processes: iid normal potentials with noisy covariates,
//! a two-sided marketplace with a subsidy, sparse Bernoulli products and
//! rank-one matrices.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Exp, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::design::{Assignment, DesignSpec, GroupLabel};
use crate::error::{Error, Result};
use crate::moments::{CovariateTensor, Potentials};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparseVariant {
    Uniform,
    HeavyTailed,
}

fn one() -> f64 {
    1.0
}

fn fifth() -> f64 {
    0.2
}

fn tenth() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DgpSpec {
    Normal {
        mu: [f64; 4],
        #[serde(default = "one")]
        sd: f64,
        #[serde(default = "one")]
        covariate_noise_sd: f64,
    },
    Marketplace {
        #[serde(default)]
        eta: f64,
        #[serde(default = "one")]
        m_rate: f64,
        #[serde(default = "fifth")]
        r_max: f64,
        #[serde(default = "tenth")]
        obs_noise_sd: f64,
    },
    Sparse {
        mu: f64,
        variant: SparseVariant,
    },
    RankOne {
        x: Vec<f64>,
    },
}

impl DgpSpec {
    /// iid normal potentials with group means (5, 2, 2, 1).
    pub fn standard_normal() -> Self {
        DgpSpec::Normal { mu: [5.0, 2.0, 2.0, 1.0], sd: 1.0, covariate_noise_sd: 1.0 }
    }

    pub fn standard_marketplace() -> Self {
        DgpSpec::Marketplace { eta: 5.0, m_rate: 1.0, r_max: 0.2, obs_noise_sd: 0.1 }
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64, what: &str| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Invalid(format!("{what} must be finite and non-negative, got {v}")))
            }
        };
        match self {
            DgpSpec::Normal { mu, sd, covariate_noise_sd } => {
                if mu.iter().any(|m| !m.is_finite()) {
                    return Err(Error::Invalid("normal means must be finite".into()));
                }
                finite_nonneg(*sd, "sd")?;
                finite_nonneg(*covariate_noise_sd, "covariate_noise_sd")
            }
            DgpSpec::Marketplace { eta, m_rate, r_max, obs_noise_sd } => {
                if !eta.is_finite() {
                    return Err(Error::Invalid("eta must be finite".into()));
                }
                if !(*m_rate > 0.0 && m_rate.is_finite()) {
                    return Err(Error::Invalid(format!("m_rate must be positive, got {m_rate}")));
                }
                if !(*r_max > 0.0 && r_max.is_finite()) {
                    return Err(Error::Invalid(format!("r_max must be positive, got {r_max}")));
                }
                finite_nonneg(*obs_noise_sd, "obs_noise_sd")
            }
            DgpSpec::Sparse { mu, variant } => sparse_probabilities(*mu, *variant).map(|_| ()),
            DgpSpec::RankOne { x } => {
                if x.len() < 4 || x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Invalid("rank-one vector needs at least 4 finite entries".into()));
                }
                Ok(())
            }
        }
    }

    /// Draw the fixed potentials and covariates for a design.
    pub fn realize(&self, spec: &DesignSpec, seed: u64) -> Result<(Potentials, CovariateTensor)> {
        let (i, j) = (spec.buyers(), spec.sellers());
        match self {
            DgpSpec::Normal { .. } => gen_normal(self, i, j, seed),
            DgpSpec::Marketplace { .. } => {
                let m = gen_marketplace(self, i, j, seed)?;
                Ok((m.potentials(spec)?, m.covariates()?))
            }
            DgpSpec::Sparse { .. } => Ok((gen_sparse(self, i, j, seed)?, CovariateTensor::none(i, j))),
            DgpSpec::RankOne { x } => {
                if x.len() != i || i != j {
                    return Err(Error::DimensionMismatch(format!(
                        "rank-one vector has length {}, design is {i}x{j}",
                        x.len()
                    )));
                }
                let m = gen_rank_one(x);
                let pot = Potentials::new(std::array::from_fn(|_| m.clone()))?;
                Ok((pot, CovariateTensor::none(i, j)))
            }
        }
    }
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("validated normal parameters")
}

/// Iid N(μ_γ, sd²) potentials; covariate k is Y(γ_k) plus independent noise.
pub fn gen_normal(dgp: &DgpSpec, i: usize, j: usize, seed: u64) -> Result<(Potentials, CovariateTensor)> {
    dgp.validate()?;
    let DgpSpec::Normal { mu, sd, covariate_noise_sd } = dgp else {
        return Err(Error::Invalid("gen_normal needs a normal DGP".into()));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tables: [DMatrix<f64>; 4] = std::array::from_fn(|g| {
        let d = normal(mu[g], *sd);
        DMatrix::from_fn(i, j, |_, _| d.sample(&mut rng))
    });
    let noise = normal(0.0, *covariate_noise_sd);
    let layers: Vec<DMatrix<f64>> = tables.iter().map(|t| t.map(|v| v + noise.sample(&mut rng))).collect();
    Ok((Potentials::new(tables)?, CovariateTensor::new(layers)?))
}

/// One draw of the marketplace primitives.
#[derive(Debug, Clone, PartialEq)]
pub struct Marketplace {
    pub m: DMatrix<f64>,
    pub m_hat: DMatrix<f64>,
    pub r_creator: Vec<f64>,
    pub r_advertiser: Vec<f64>,
    pub eta: f64,
}

pub fn gen_marketplace(dgp: &DgpSpec, i: usize, j: usize, seed: u64) -> Result<Marketplace> {
    dgp.validate()?;
    let DgpSpec::Marketplace { eta, m_rate, r_max, obs_noise_sd } = dgp else {
        return Err(Error::Invalid("gen_marketplace needs a marketplace DGP".into()));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exp = Exp::new(*m_rate).expect("validated rate");
    let unif = Uniform::new(0.0, *r_max).expect("validated bound");
    let noise = normal(0.0, *obs_noise_sd);
    let m = DMatrix::from_fn(i, j, |_, _| exp.sample(&mut rng));
    let m_hat = m.map(|v| v * (1.0 + noise.sample(&mut rng)));
    let r_creator = (0..i).map(|_| unif.sample(&mut rng)).collect();
    let r_advertiser = (0..j).map(|_| unif.sample(&mut rng)).collect();
    Ok(Marketplace { m, m_hat, r_creator, r_advertiser, eta: *eta })
}

impl Marketplace {
    pub fn shape(&self) -> (usize, usize) {
        self.m.shape()
    }

    /// Revenue of pair (i, j) given its own exposure and the treated fractions
    /// on each side. The quality responses are a surrogate for the equilibrium:
    /// q_i = r_i (m̄_i + η W_i f_S) and q_j = r_j (m̄_j + η W_j f_B).
    pub fn revenue(&self, i: usize, j: usize, wb: bool, ws: bool, frac_b: f64, frac_s: f64) -> f64 {
        let (ni, nj) = self.shape();
        let row_mean = self.m.row(i).sum() / nj as f64;
        let col_mean = self.m.column(j).sum() / ni as f64;
        let b = if wb { 1.0 } else { 0.0 };
        let s = if ws { 1.0 } else { 0.0 };
        let qc = self.r_creator[i] * (row_mean + self.eta * b * frac_s);
        let qa = self.r_advertiser[j] * (col_mean + self.eta * s * frac_b);
        (self.m[(i, j)] + self.eta * b * s) * (qc + qa)
    }

    /// Observed revenue matrix under a full assignment.
    pub fn outcome(&self, a: &Assignment) -> DMatrix<f64> {
        let (ni, nj) = self.shape();
        let fb = a.w_buyer.iter().filter(|w| **w).count() as f64 / ni as f64;
        let fs = a.w_seller.iter().filter(|w| **w).count() as f64 / nj as f64;
        DMatrix::from_fn(ni, nj, |i, j| self.revenue(i, j, a.w_buyer[i], a.w_seller[j], fb, fs))
    }

    /// The four potential tables for a design with fixed treated counts.
    pub fn potentials(&self, spec: &DesignSpec) -> Result<Potentials> {
        let (ni, nj) = self.shape();
        if (ni, nj) != (spec.buyers(), spec.sellers()) {
            return Err(Error::DimensionMismatch("marketplace does not match design".into()));
        }
        let fb = spec.treated_buyers() as f64 / ni as f64;
        let fs = spec.treated_sellers() as f64 / nj as f64;
        let row_means: Vec<f64> = (0..ni).map(|i| self.m.row(i).sum() / nj as f64).collect();
        let col_means: Vec<f64> = (0..nj).map(|j| self.m.column(j).sum() / ni as f64).collect();
        let tables = GroupLabel::ALL.map(|g| {
            let b = if g.buyer_treated() { 1.0 } else { 0.0 };
            let s = if g.seller_treated() { 1.0 } else { 0.0 };
            DMatrix::from_fn(ni, nj, |i, j| {
                let qc = self.r_creator[i] * (row_means[i] + self.eta * b * fs);
                let qa = self.r_advertiser[j] * (col_means[j] + self.eta * s * fb);
                (self.m[(i, j)] + self.eta * b * s) * (qc + qa)
            })
        });
        Potentials::new(tables)
    }

    /// X_ij = (m̂_ij r_i, m̂_ij r_j).
    pub fn covariates(&self) -> Result<CovariateTensor> {
        let (ni, nj) = self.shape();
        let a = DMatrix::from_fn(ni, nj, |i, j| self.m_hat[(i, j)] * self.r_creator[i]);
        let b = DMatrix::from_fn(ni, nj, |i, j| self.m_hat[(i, j)] * self.r_advertiser[j]);
        CovariateTensor::new(vec![a, b])
    }
}

fn sparse_probabilities(mu: f64, variant: SparseVariant) -> Result<(f64, f64)> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::Invalid(format!("sparse mu must be positive, got {mu}")));
    }
    let (pxy, pz) = match variant {
        SparseVariant::Uniform => (0.5, 4.0 * mu),
        SparseVariant::HeavyTailed => ((2.0 * mu).sqrt(), 0.5),
    };
    if pxy > 1.0 || pz > 1.0 {
        return Err(Error::Invalid(format!("sparse mu = {mu} gives a probability above one")));
    }
    Ok((pxy, pz))
}

/// y_ij = X_i Y_j Z_ij with Bernoulli factors, drawn independently per group.
pub fn gen_sparse(dgp: &DgpSpec, i: usize, j: usize, seed: u64) -> Result<Potentials> {
    let DgpSpec::Sparse { mu, variant } = dgp else {
        return Err(Error::Invalid("gen_sparse needs a sparse DGP".into()));
    };
    let (pxy, pz) = sparse_probabilities(*mu, *variant)?;
    let bxy = Bernoulli::new(pxy).expect("checked probability");
    let bz = Bernoulli::new(pz).expect("checked probability");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tables: [DMatrix<f64>; 4] = std::array::from_fn(|_| {
        let xs: Vec<bool> = (0..i).map(|_| bxy.sample(&mut rng)).collect();
        let ys: Vec<bool> = (0..j).map(|_| bxy.sample(&mut rng)).collect();
        DMatrix::from_fn(i, j, |r, c| {
            let z = bz.sample(&mut rng);
            if xs[r] && ys[c] && z {
                1.0
            } else {
                0.0
            }
        })
    });
    Potentials::new(tables)
}

pub fn gen_rank_one(x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| x[i] * x[j])
}

/// A standard normal vector shifted to have mean exactly zero.
pub fn centered_normal_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
    let m = v.iter().sum::<f64>() / n as f64;
    v.into_iter().map(|x| x - m).collect()
}
