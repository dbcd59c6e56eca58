//! Rating-behavior user similarities within one domain.
//!
//! Three measures are combined into one convex mixture:
//!
//! * common ratings: `exp(-gamma1 * D1 / |C|)`, `D1` the squared rating
//!   difference over co-rated items `C`;
//! * no-interest estimates: `exp(-gamma2 * D2 / (m - |C|))`, `D2` the absolute
//!   signed difference of no-interest probabilities summed over items outside
//!   `C`;
//! * rating bias: `exp(-gamma3 * D3)`, `D3` the absolute difference of the
//!   users' summed TF-IDF style rating-score profiles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::RatingMatrix;
use crate::error::{Error, Result};

pub const SIMILARITY_VERSION: &str = "coldmap-sim-v1";

/// Default no-interest probability of a rated item, indexed by `rating - 1`.
pub const DEFAULT_RATED_MAP: [f64; 5] = [1.0, 0.8, 0.5, 0.2, 0.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityParams {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub sigma: f64,
    pub base: f64,
    pub rho: [f64; 3],
    pub high_rating_threshold: u8,
    pub rated_map: [f64; 5],
}

impl Default for SimilarityParams {
    fn default() -> Self {
        SimilarityParams {
            gamma1: 0.25,
            gamma2: 3.0,
            gamma3: 2.0,
            sigma: 6.0,
            base: 2.0,
            rho: [0.6, 0.2, 0.2],
            high_rating_threshold: 4,
            rated_map: DEFAULT_RATED_MAP,
        }
    }
}

impl SimilarityParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParam(msg));
        if !(self.gamma1 > 0.0 && self.gamma2 > 0.0 && self.gamma3 > 0.0) {
            return bad(format!(
                "gammas must be positive, got ({}, {}, {})",
                self.gamma1, self.gamma2, self.gamma3
            ));
        }
        if !(self.sigma > 0.0) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.base > 1.0) {
            return bad(format!("base must exceed 1, got {}", self.base));
        }
        if self.rho.iter().any(|&r| !(r >= 0.0)) || (self.rho.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return bad(format!("rho {:?} must be nonnegative and sum to 1", self.rho));
        }
        if !(1..=5).contains(&self.high_rating_threshold) {
            return bad(format!(
                "high_rating_threshold {} outside 1..=5",
                self.high_rating_threshold
            ));
        }
        if self.rated_map.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad(format!("rated_map {:?} must lie in [0, 1]", self.rated_map));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    S1,
    S2,
    S3,
    Combined,
}

/// Symmetric user x user similarity with unit diagonal, stored as the strict
/// upper triangle in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    upper: Vec<f64>,
    component: Component,
}

#[derive(Serialize, Deserialize)]
struct SimilarityFile {
    version: String,
    component: Component,
    n_users: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    users: Option<Vec<String>>,
    values: Vec<f64>,
}

#[inline]
fn tri_len(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

impl SimilarityMatrix {
    pub fn from_upper(n: usize, upper: Vec<f64>, component: Component) -> Result<Self> {
        if upper.len() != tri_len(n) {
            return Err(Error::DimensionMismatch(format!(
                "{} upper-triangular values for n={n}, expected {}",
                upper.len(),
                tri_len(n)
            )));
        }
        Ok(SimilarityMatrix { n, upper, component })
    }

    /// Builds from a full matrix, reading only the strict upper triangle.
    pub fn from_fn(n: usize, component: Component, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut upper = Vec::with_capacity(tri_len(n));
        for u in 0..n {
            for v in u + 1..n {
                upper.push(f(u, v));
            }
        }
        SimilarityMatrix { n, upper, component }
    }

    pub fn n_users(&self) -> usize {
        self.n
    }

    pub fn component(&self) -> Component {
        self.component
    }

    pub fn pair_count(&self) -> usize {
        self.upper.len()
    }

    #[inline]
    fn offset(&self, u: usize, v: usize) -> usize {
        debug_assert!(u < v && v < self.n);
        u * (2 * self.n - u - 1) / 2 + (v - u - 1)
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        match u.cmp(&v) {
            std::cmp::Ordering::Equal => 1.0,
            std::cmp::Ordering::Less => self.upper[self.offset(u, v)],
            std::cmp::Ordering::Greater => self.upper[self.offset(v, u)],
        }
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Dense row `u` with a zero diagonal.
    pub fn row(&self, u: usize) -> Vec<f64> {
        (0..self.n).map(|v| if u == v { 0.0 } else { self.get(u, v) }).collect()
    }

    /// `S x` with the diagonal treated as zero.
    pub fn mul_offdiag(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        let mut p = 0;
        for u in 0..self.n {
            let row = &self.upper[p..p + (self.n - u - 1)];
            let xu = x[u];
            let mut acc = 0.0;
            for (off, &s) in row.iter().enumerate() {
                let v = u + 1 + off;
                acc += s * x[v];
                y[v] += s * xu;
            }
            y[u] += acc;
            p += row.len();
        }
        y
    }

    pub fn to_json(&self, users: Option<&[String]>) -> Result<String> {
        let file = SimilarityFile {
            version: SIMILARITY_VERSION.into(),
            component: self.component,
            n_users: self.n,
            users: users.map(<[String]>::to_vec),
            values: self.upper.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    /// Returns the matrix and the user ids when the artifact carries them.
    pub fn from_json(s: &str) -> Result<(Self, Option<Vec<String>>)> {
        let file: SimilarityFile = serde_json::from_str(s)?;
        if file.version != SIMILARITY_VERSION {
            return Err(Error::Version {
                expected: SIMILARITY_VERSION.into(),
                found: file.version,
            });
        }
        if let Some(users) = &file.users {
            if users.len() != file.n_users {
                return Err(Error::DimensionMismatch(format!(
                    "{} user ids for n_users={}",
                    users.len(),
                    file.n_users
                )));
            }
        }
        let m = Self::from_upper(file.n_users, file.values, file.component)?;
        Ok((m, file.users))
    }
}

fn f3(x: f64, sigma: f64) -> f64 {
    2.0 / (1.0 + (-sigma * x).exp()) - 1.0
}

/// Popularity and reputation statistics behind the unrated-item estimate.
#[derive(Debug, Clone)]
pub struct NoInterestProfile {
    rated_map: [f64; 5],
    /// `f1(n_u)` per user.
    f1: Vec<f64>,
    /// `f2(n_i)` per item.
    f2: Vec<f64>,
    /// Second bracket `1 - f3(n_i/n) f3(n_Hi/n_i)` per item.
    disinterest: Vec<f64>,
    /// `sum_i P_ui` over all items, per user.
    totals: Vec<f64>,
}

impl NoInterestProfile {
    pub fn new(m: &RatingMatrix, sigma: f64, rated_map: [f64; 5], high_threshold: u8) -> Self {
        let n = m.n_users() as f64;
        let n_items = m.n_items() as f64;
        let f1: Vec<f64> = (0..m.n_users())
            .map(|u| {
                let r = m.user_count(u) as f64 / n_items;
                (1.0 - r * r).max(0.0).sqrt()
            })
            .collect();
        let mut f2 = Vec::with_capacity(m.n_items());
        let mut disinterest = Vec::with_capacity(m.n_items());
        for i in 0..m.n_items() {
            let (ni, nh) = item_counts(m, i, high_threshold);
            let r = ni / n;
            f2.push((1.0 - r * r).max(0.0).sqrt());
            let reputation = if ni > 0.0 { nh / ni } else { 0.0 };
            disinterest.push(1.0 - f3(ni / n, sigma) * f3(reputation, sigma));
        }
        // sum over all items of the unrated formula, then swap in rated values
        let g_sum: f64 = disinterest.iter().sum();
        let fg_sum: f64 = f2.iter().zip(&disinterest).map(|(a, b)| a * b).sum();
        let totals = (0..m.n_users())
            .map(|u| {
                let mut t = g_sum - f1[u] * fg_sum;
                for e in m.user_entries(u) {
                    let unrated = (1.0 - f1[u] * f2[e.item]) * disinterest[e.item];
                    t += rated_map[e.rating as usize - 1] - unrated;
                }
                t
            })
            .collect();
        NoInterestProfile {
            rated_map,
            f1,
            f2,
            disinterest,
            totals,
        }
    }

    #[inline]
    pub fn rated(&self, rating: u8) -> f64 {
        self.rated_map[rating as usize - 1]
    }

    #[inline]
    pub fn unrated(&self, u: usize, i: usize) -> f64 {
        (1.0 - self.f1[u] * self.f2[i]) * self.disinterest[i]
    }

    pub fn probability(&self, m: &RatingMatrix, u: usize, i: usize) -> f64 {
        match m.get(u, i) {
            Some(r) => self.rated(r),
            None => self.unrated(u, i),
        }
    }

    pub fn user_total(&self, u: usize) -> f64 {
        self.totals[u]
    }
}

fn item_counts(m: &RatingMatrix, i: usize, high_threshold: u8) -> (f64, f64) {
    let mut ni = 0usize;
    let mut nh = 0usize;
    for e in m.item_entries(i) {
        ni += 1;
        if e.rating >= high_threshold {
            nh += 1;
        }
    }
    (ni as f64, nh as f64)
}

/// Probability that user `u` has no interest in item `i`, computed directly
/// from the matrix counts.
pub fn no_interest_probability(
    m: &RatingMatrix,
    u: usize,
    i: usize,
    sigma: f64,
    rated_map: &[f64; 5],
    high_threshold: u8,
) -> f64 {
    if let Some(r) = m.get(u, i) {
        return rated_map[r as usize - 1];
    }
    let n = m.n_users() as f64;
    let n_items = m.n_items() as f64;
    let nu = m.user_count(u) as f64;
    let (ni, nh) = item_counts(m, i, high_threshold);
    let f1 = (1.0 - (nu * nu) / (n_items * n_items)).max(0.0).sqrt();
    let f2 = (1.0 - (ni * ni) / (n * n)).max(0.0).sqrt();
    let reputation = if ni > 0.0 { nh / ni } else { 0.0 };
    (1.0 - f1 * f2) * (1.0 - f3(ni / n, sigma) * f3(reputation, sigma))
}

/// Common-rating similarity; zero when the users share no item.
pub fn common_rating_similarity(m: &RatingMatrix, u: usize, v: usize, gamma1: f64) -> f64 {
    let (common, d1, _) = co_rated(m, u, v, None);
    s1_from(common, d1, gamma1)
}

#[inline]
fn s1_from(common: usize, d1: f64, gamma1: f64) -> f64 {
    if common == 0 {
        0.0
    } else {
        (-gamma1 * d1 / common as f64).exp()
    }
}

/// Merge over the two sorted rating rows: `(|C|, D1, sum_{z in C} (P_uz - P_vz))`.
fn co_rated(
    m: &RatingMatrix,
    u: usize,
    v: usize,
    rated_map: Option<&[f64; 5]>,
) -> (usize, f64, f64) {
    let a = m.user_entries(u);
    let b = m.user_entries(v);
    let (mut i, mut j) = (0, 0);
    let mut count = 0;
    let mut d1 = 0.0;
    let mut p_diff = 0.0;
    while i < a.len() && j < b.len() {
        match a[i].item.cmp(&b[j].item) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                let d = a[i].rating as f64 - b[j].rating as f64;
                d1 += d * d;
                if let Some(map) = rated_map {
                    p_diff += map[a[i].rating as usize - 1] - map[b[j].rating as usize - 1];
                }
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    (count, d1, p_diff)
}

#[inline]
fn s2_from(n_items: usize, common: usize, signed: f64, gamma2: f64) -> f64 {
    let rest = n_items - common;
    if rest == 0 {
        1.0
    } else {
        (-gamma2 * signed.abs() / rest as f64).exp()
    }
}

/// No-interest similarity over the items outside the co-rated set, using the
/// precomputed per-user probability totals.
pub fn no_interest_similarity(
    m: &RatingMatrix,
    profile: &NoInterestProfile,
    u: usize,
    v: usize,
    gamma2: f64,
) -> f64 {
    let (common, _, p_common) = co_rated(m, u, v, Some(&profile.rated_map));
    let signed = (profile.user_total(u) - profile.user_total(v)) - p_common;
    s2_from(m.n_items(), common, signed, gamma2)
}

/// Per-score frequencies of each rating score, weighted by inverse user
/// frequency of that score.
#[derive(Debug, Clone)]
pub struct BiasProfiles {
    profiles: Vec<[f64; 5]>,
    sums: Vec<f64>,
}

impl BiasProfiles {
    pub fn new(m: &RatingMatrix, base: f64) -> Self {
        let n = m.n_users() as f64;
        let mut users_using = [0usize; 5];
        let mut counts = vec![[0usize; 5]; m.n_users()];
        for (u, c) in counts.iter_mut().enumerate() {
            for e in m.user_entries(u) {
                c[e.rating as usize - 1] += 1;
            }
            for (r, &k) in c.iter().enumerate() {
                if k > 0 {
                    users_using[r] += 1;
                }
            }
        }
        let idf: Vec<f64> = users_using
            .iter()
            .map(|&uf| if uf == 0 { 0.0 } else { (n / uf as f64).ln() / base.ln() })
            .collect();
        let profiles: Vec<[f64; 5]> = counts
            .iter()
            .map(|c| {
                let total: usize = c.iter().sum();
                let mut a = [0.0; 5];
                if total > 0 {
                    for r in 0..5 {
                        a[r] = c[r] as f64 / total as f64 * idf[r];
                    }
                }
                a
            })
            .collect();
        let sums = profiles.iter().map(|a| a.iter().sum()).collect();
        BiasProfiles { profiles, sums }
    }

    pub fn profile(&self, u: usize) -> [f64; 5] {
        self.profiles[u]
    }

    pub fn sum(&self, u: usize) -> f64 {
        self.sums[u]
    }
}

/// Rating-bias profile of one user.
pub fn rating_bias_profile(m: &RatingMatrix, u: usize, base: f64) -> [f64; 5] {
    BiasProfiles::new(m, base).profile(u)
}

pub fn rating_bias_similarity(profiles: &BiasProfiles, u: usize, v: usize, gamma3: f64) -> f64 {
    let d: f64 = profiles.profile(u)
        .iter()
        .zip(profiles.profile(v).iter())
        .map(|(a, b)| a - b)
        .sum();
    (-gamma3 * d.abs()).exp()
}

/// The three component matrices and their mixture.
#[derive(Debug, Clone)]
pub struct SimilaritySet {
    pub s1: SimilarityMatrix,
    pub s2: SimilarityMatrix,
    pub s3: SimilarityMatrix,
    pub combined: SimilarityMatrix,
}

impl SimilaritySet {
    /// The mixture under different weights.
    pub fn remix(&self, rho: [f64; 3]) -> SimilarityMatrix {
        let upper = self
            .s1
            .upper()
            .iter()
            .zip(self.s2.upper())
            .zip(self.s3.upper())
            .map(|((a, b), c)| (rho[0] * a + rho[1] * b + rho[2] * c).clamp(0.0, 1.0))
            .collect();
        SimilarityMatrix {
            n: self.s1.n_users(),
            upper,
            component: Component::Combined,
        }
    }
}

struct PairContext<'a> {
    m: &'a RatingMatrix,
    params: &'a SimilarityParams,
    no_interest: NoInterestProfile,
    bias: BiasProfiles,
}

impl<'a> PairContext<'a> {
    fn new(m: &'a RatingMatrix, params: &'a SimilarityParams) -> Self {
        PairContext {
            m,
            params,
            no_interest: NoInterestProfile::new(
                m,
                params.sigma,
                params.rated_map,
                params.high_rating_threshold,
            ),
            bias: BiasProfiles::new(m, params.base),
        }
    }

    fn pair(&self, u: usize, v: usize) -> [f64; 3] {
        let (common, d1, p_common) = co_rated(self.m, u, v, Some(&self.params.rated_map));
        let s1 = s1_from(common, d1, self.params.gamma1);
        let signed = (self.no_interest.user_total(u) - self.no_interest.user_total(v)) - p_common;
        let s2 = s2_from(self.m.n_items(), common, signed, self.params.gamma2);
        let s3 = rating_bias_similarity(&self.bias, u, v, self.params.gamma3);
        [s1, s2, s3]
    }

    fn mix(&self, s: [f64; 3]) -> f64 {
        let r = self.params.rho;
        (r[0] * s[0] + r[1] * s[1] + r[2] * s[2]).clamp(0.0, 1.0)
    }

    /// Rows `u` of the strict upper triangle, computed independently in parallel.
    fn rows<T: Send>(&self, f: impl Fn(usize, usize) -> T + Sync) -> Vec<T> {
        let n = self.m.n_users();
        let rows: Vec<Vec<T>> = (0..n)
            .into_par_iter()
            .map(|u| (u + 1..n).map(|v| f(u, v)).collect())
            .collect();
        rows.into_iter().flatten().collect()
    }
}

/// Mixture `rho1 S1 + rho2 S2 + rho3 S3` over all user pairs.
pub fn combined_similarity_matrix(m: &RatingMatrix, params: &SimilarityParams) -> Result<SimilarityMatrix> {
    params.validate()?;
    let ctx = PairContext::new(m, params);
    let upper = ctx.rows(|u, v| ctx.mix(ctx.pair(u, v)));
    SimilarityMatrix::from_upper(m.n_users(), upper, Component::Combined)
}

/// All three components plus the mixture.
pub fn similarity_set(m: &RatingMatrix, params: &SimilarityParams) -> Result<SimilaritySet> {
    params.validate()?;
    let ctx = PairContext::new(m, params);
    let triples = ctx.rows(|u, v| ctx.pair(u, v));
    let n = m.n_users();
    let take = |k: usize, c: Component| {
        SimilarityMatrix::from_upper(n, triples.iter().map(|t| t[k]).collect(), c)
    };
    Ok(SimilaritySet {
        s1: take(0, Component::S1)?,
        s2: take(1, Component::S2)?,
        s3: take(2, Component::S3)?,
        combined: SimilarityMatrix::from_upper(
            n,
            triples.iter().map(|&t| ctx.mix(t)).collect(),
            Component::Combined,
        )?,
    })
}
