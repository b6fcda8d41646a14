//! Simple multiple randomization designs: buyers and sellers are each
//! completely randomized, and every buyer-seller pair falls into one of four
//! exposure groups.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Marketplace dimensions and treated counts on each side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DesignSpec {
    #[serde(rename = "buyers")]
    i: usize,
    #[serde(rename = "sellers")]
    j: usize,
    #[serde(rename = "treated_buyers")]
    i_t: usize,
    #[serde(rename = "treated_sellers")]
    j_t: usize,
}

impl DesignSpec {
    /// Every group must keep at least two buyers and two sellers.
    pub fn new(i: usize, j: usize, i_t: usize, j_t: usize) -> Result<Self> {
        if i_t < 2 || i_t + 2 > i {
            return Err(Error::InvalidDesign(format!("need 2 <= I_T <= I-2, got I={i}, I_T={i_t}")));
        }
        if j_t < 2 || j_t + 2 > j {
            return Err(Error::InvalidDesign(format!("need 2 <= J_T <= J-2, got J={j}, J_T={j_t}")));
        }
        Ok(Self { i, j, i_t, j_t })
    }

    /// Build from treated fractions, rounding to the nearest count.
    pub fn from_fractions(i: usize, j: usize, p_buyer: f64, p_seller: f64) -> Result<Self> {
        if !(p_buyer > 0.0 && p_buyer < 1.0 && p_seller > 0.0 && p_seller < 1.0) {
            return Err(Error::InvalidDesign(format!(
                "treated fractions must lie in (0,1), got {p_buyer}, {p_seller}"
            )));
        }
        let i_t = (p_buyer * i as f64).round() as usize;
        let j_t = (p_seller * j as f64).round() as usize;
        Self::new(i, j, i_t, j_t)
    }

    pub fn buyers(&self) -> usize {
        self.i
    }
    pub fn sellers(&self) -> usize {
        self.j
    }
    pub fn treated_buyers(&self) -> usize {
        self.i_t
    }
    pub fn treated_sellers(&self) -> usize {
        self.j_t
    }
    pub fn control_buyers(&self) -> usize {
        self.i - self.i_t
    }
    pub fn control_sellers(&self) -> usize {
        self.j - self.j_t
    }

    /// (I_γ, J_γ) for a group.
    pub fn group_size(&self, g: GroupLabel) -> (usize, usize) {
        let ni = if g.buyer_treated() { self.i_t } else { self.control_buyers() };
        let nj = if g.seller_treated() { self.j_t } else { self.control_sellers() };
        (ni, nj)
    }

    /// The design with buyers and sellers swapped.
    pub fn transposed(&self) -> Self {
        Self { i: self.j, j: self.i, i_t: self.j_t, j_t: self.i_t }
    }

    /// C(I, I_T) · C(J, J_T), saturating at `u128::MAX`.
    pub fn assignment_count(&self) -> u128 {
        binomial(self.i, self.i_t).saturating_mul(binomial(self.j, self.j_t))
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for t in 0..k {
        acc = match acc.checked_mul((n - t) as u128) {
            Some(v) => v / (t as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Exposure group of a buyer-seller pair, ordered (tr, ib, is, cc).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupLabel {
    Tr,
    Ib,
    Is,
    Cc,
}

impl GroupLabel {
    pub const ALL: [GroupLabel; 4] = [GroupLabel::Tr, GroupLabel::Ib, GroupLabel::Is, GroupLabel::Cc];

    pub fn from_flags(buyer_treated: bool, seller_treated: bool) -> Self {
        match (buyer_treated, seller_treated) {
            (true, true) => GroupLabel::Tr,
            (true, false) => GroupLabel::Ib,
            (false, true) => GroupLabel::Is,
            (false, false) => GroupLabel::Cc,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn buyer_treated(self) -> bool {
        matches!(self, GroupLabel::Tr | GroupLabel::Ib)
    }

    pub fn seller_treated(self) -> bool {
        matches!(self, GroupLabel::Tr | GroupLabel::Is)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GroupLabel::Tr => "tr",
            GroupLabel::Ib => "ib",
            GroupLabel::Is => "is",
            GroupLabel::Cc => "cc",
        }
    }
}

impl std::fmt::Display for GroupLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Realized treatment indicators for both sides.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    pub w_buyer: Vec<bool>,
    pub w_seller: Vec<bool>,
}

impl Assignment {
    pub fn new(w_buyer: Vec<bool>, w_seller: Vec<bool>) -> Self {
        Self { w_buyer, w_seller }
    }

    pub fn group_of(&self, i: usize, j: usize) -> GroupLabel {
        GroupLabel::from_flags(self.w_buyer[i], self.w_seller[j])
    }

    pub fn validate(&self, spec: &DesignSpec) -> Result<()> {
        if self.w_buyer.len() != spec.buyers() || self.w_seller.len() != spec.sellers() {
            return Err(Error::DimensionMismatch(format!(
                "assignment has {}x{} units, design has {}x{}",
                self.w_buyer.len(),
                self.w_seller.len(),
                spec.buyers(),
                spec.sellers()
            )));
        }
        let nb = self.w_buyer.iter().filter(|&&w| w).count();
        let ns = self.w_seller.iter().filter(|&&w| w).count();
        if nb != spec.treated_buyers() || ns != spec.treated_sellers() {
            return Err(Error::Invalid(format!(
                "assignment treats {nb} buyers and {ns} sellers, design expects {} and {}",
                spec.treated_buyers(),
                spec.treated_sellers()
            )));
        }
        Ok(())
    }
}

fn draw_subset(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..n).collect();
    for t in 0..k {
        let r = rng.random_range(t..n);
        idx.swap(t, r);
    }
    let mut w = vec![false; n];
    for &i in &idx[..k] {
        w[i] = true;
    }
    w
}

/// Uniform draw over all assignments. Buyers use ChaCha8 stream 0 and sellers
/// stream 1 of the same seed, so the two sides are independent.
pub fn sample_assignment(spec: &DesignSpec, seed: u64) -> Assignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let w_buyer = draw_subset(&mut rng, spec.buyers(), spec.treated_buyers());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let w_seller = draw_subset(&mut rng, spec.sellers(), spec.treated_sellers());
    Assignment { w_buyer, w_seller }
}

/// All k-subsets of 0..n as indicator vectors, lexicographic in the sorted index tuple.
fn subsets(n: usize, k: usize) -> Vec<Vec<bool>> {
    let mut out = Vec::new();
    let mut c: Vec<usize> = (0..k).collect();
    loop {
        let mut w = vec![false; n];
        for &i in &c {
            w[i] = true;
        }
        out.push(w);
        let mut t = k;
        while t > 0 && c[t - 1] == n - k + t - 1 {
            t -= 1;
        }
        if t == 0 {
            return out;
        }
        c[t - 1] += 1;
        for s in t..k {
            c[s] = c[s - 1] + 1;
        }
    }
}

pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000;

/// Every assignment exactly once; buyer subsets vary slowest.
pub fn enumerate_assignments(spec: &DesignSpec, cap: u128) -> Result<Vec<Assignment>> {
    let count = spec.assignment_count();
    if count > cap {
        return Err(Error::CapExceeded { count, cap });
    }
    let buyers = subsets(spec.buyers(), spec.treated_buyers());
    let sellers = subsets(spec.sellers(), spec.treated_sellers());
    let mut out = Vec::with_capacity(count as usize);
    for b in &buyers {
        for s in &sellers {
            out.push(Assignment { w_buyer: b.clone(), w_seller: s.clone() });
        }
    }
    Ok(out)
}

/// Buyer and seller index lists (0-based, ascending) for each group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupPartition {
    pub buyers: [Vec<usize>; 4],
    pub sellers: [Vec<usize>; 4],
    pub dims: (usize, usize),
}

impl GroupPartition {
    pub fn buyers_of(&self, g: GroupLabel) -> &[usize] {
        &self.buyers[g.index()]
    }
    pub fn sellers_of(&self, g: GroupLabel) -> &[usize] {
        &self.sellers[g.index()]
    }
    pub fn size(&self, g: GroupLabel) -> (usize, usize) {
        (self.buyers[g.index()].len(), self.sellers[g.index()].len())
    }
}

pub fn partition(spec: &DesignSpec, a: &Assignment) -> Result<GroupPartition> {
    a.validate(spec)?;
    let tb: Vec<usize> = (0..spec.buyers()).filter(|&i| a.w_buyer[i]).collect();
    let cb: Vec<usize> = (0..spec.buyers()).filter(|&i| !a.w_buyer[i]).collect();
    let ts: Vec<usize> = (0..spec.sellers()).filter(|&j| a.w_seller[j]).collect();
    let cs: Vec<usize> = (0..spec.sellers()).filter(|&j| !a.w_seller[j]).collect();
    Ok(GroupPartition {
        buyers: [tb.clone(), tb, cb.clone(), cb],
        sellers: [ts.clone(), cs.clone(), ts, cs],
        dims: (spec.buyers(), spec.sellers()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairLabel {
    T,
    C,
}

/// W_ij = T iff both the buyer and the seller are treated.
pub fn assignment_matrix(spec: &DesignSpec, a: &Assignment) -> Result<Vec<Vec<PairLabel>>> {
    a.validate(spec)?;
    Ok(a.w_buyer
        .iter()
        .map(|&b| a.w_seller.iter().map(|&s| if b && s { PairLabel::T } else { PairLabel::C }).collect())
        .collect())
}
