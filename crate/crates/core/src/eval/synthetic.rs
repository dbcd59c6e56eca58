//! Planted-factor cross-domain benchmark.
//!
//! Users belong to clusters. A user's auxiliary latent vector is its cluster
//! center plus spread; the target vector comes from a cross-domain map of the
//! auxiliary vector plus noise. Each user rates a seeded sample of items,
//! drawn preferentially from its cluster's item block, and ratings quantize
//! `3 + rating_scale * dot` to the nearest of `1..=5` (clipped, half up).

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{DomainPair, RatingMatrix, RatingRecord};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::rng::{self, fraction_count, sample_indices, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossMap {
    Linear,
    #[default]
    Piecewise,
    Polynomial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_linked: usize,
    pub n_cold: usize,
    pub n_items_target: usize,
    pub n_items_aux: usize,
    pub k_true: usize,
    pub cross_map: CrossMap,
    pub noise_sd: f64,
    pub density_target: f64,
    pub density_aux: f64,
    pub n_clusters: usize,
    /// Share of a user's ratings drawn from its cluster's item block.
    pub cluster_affinity: f64,
    /// User offset from its cluster center, relative to the center scale.
    pub cluster_spread: f64,
    pub rating_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_linked: 400,
            n_cold: 100,
            n_items_target: 200,
            n_items_aux: 200,
            k_true: 5,
            cross_map: CrossMap::Piecewise,
            noise_sd: 0.1,
            density_target: 0.1,
            density_aux: 0.1,
            n_clusters: 4,
            cluster_affinity: 0.9,
            cluster_spread: 0.3,
            rating_scale: 1.25,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_linked", self.n_linked),
            ("n_cold", self.n_cold),
            ("n_items_target", self.n_items_target),
            ("n_items_aux", self.n_items_aux),
            ("k_true", self.k_true),
            ("n_clusters", self.n_clusters),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidParam(format!("synthetic {name} must be >= 1")));
            }
        }
        for (name, d) in [("density_target", self.density_target), ("density_aux", self.density_aux)] {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::InvalidParam(format!("synthetic {name} {d} not in (0, 1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.cluster_affinity) {
            return Err(Error::InvalidParam("cluster_affinity not in [0, 1]".into()));
        }
        if !(self.noise_sd >= 0.0 && self.cluster_spread >= 0.0 && self.rating_scale > 0.0) {
            return Err(Error::InvalidParam(
                "noise_sd and cluster_spread must be >= 0, rating_scale > 0".into(),
            ));
        }
        Ok(())
    }

    fn n_users(&self) -> usize {
        self.n_linked + self.n_cold
    }
}

/// Planted factors behind a generated pair. Rows follow user index order.
#[derive(Debug, Clone)]
pub struct SyntheticTruth {
    pub aux_users: Matrix,
    pub target_users: Matrix,
    pub aux_items: Matrix,
    pub target_items: Matrix,
    pub cluster: Vec<usize>,
    pub centers: Matrix,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    /// Both domains, every user linked; the cold-start users' target ratings
    /// are still present.
    pub pair: DomainPair,
    pub cold_users: BTreeSet<String>,
    pub user_ids: Vec<String>,
    pub truth: SyntheticTruth,
}

pub fn user_id(u: usize) -> String {
    format!("u{u:05}")
}

fn normal_matrix(rng: &mut SeededRng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Half-up rounding of the clipped affine rescale.
pub fn quantize(score: f64, rating_scale: f64) -> u8 {
    let x = (3.0 + rating_scale * score).clamp(1.0, 5.0);
    (x + 0.5).floor() as u8
}

fn nearest_center(centers: &Matrix, a: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for c in 0..centers.rows() {
        let d: f64 = centers.row(c).iter().zip(a).map(|(x, y)| (x - y) * (x - y)).sum();
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}

fn block(item: usize, n_items: usize, n_clusters: usize) -> usize {
    item * n_clusters / n_items
}

/// Items rated by one user: about `affinity` of them from the user's block.
fn observed_items(
    rng: &mut SeededRng,
    n_items: usize,
    density: f64,
    cluster: usize,
    n_clusters: usize,
    affinity: f64,
) -> Vec<usize> {
    let n_obs = fraction_count(density, n_items).max(1);
    let (inside, outside): (Vec<usize>, Vec<usize>) =
        (0..n_items).partition(|&i| block(i, n_items, n_clusters) == cluster);
    let mut k_in = ((affinity * n_obs as f64).round() as usize).min(inside.len());
    if n_obs - k_in > outside.len() {
        k_in = n_obs - outside.len();
    }
    let k_out = n_obs - k_in;
    let mut items: Vec<usize> = sample_indices(rng, inside.len(), k_in)
        .into_iter()
        .map(|p| inside[p])
        .chain(sample_indices(rng, outside.len(), k_out).into_iter().map(|p| outside[p]))
        .collect();
    items.sort_unstable();
    items
}

fn rate_domain(
    rng: &mut SeededRng,
    prefix: char,
    users: &Matrix,
    items: &Matrix,
    cluster: &[usize],
    spec: &SyntheticSpec,
    density: f64,
) -> Result<RatingMatrix> {
    let mut records = Vec::new();
    for u in 0..users.rows() {
        let obs = observed_items(
            rng,
            items.rows(),
            density,
            cluster[u],
            spec.n_clusters,
            spec.cluster_affinity,
        );
        for i in obs {
            let r = quantize(dot(users.row(u), items.row(i)), spec.rating_scale);
            records.push(RatingRecord::new(user_id(u), format!("{prefix}{i:05}"), r));
        }
    }
    RatingMatrix::from_records(&records)
}

fn cross_map(
    spec: &SyntheticSpec,
    maps: &[Matrix],
    quad: &Matrix,
    centers: &Matrix,
    a: &[f64],
) -> Vec<f64> {
    let k = a.len();
    let m = match spec.cross_map {
        CrossMap::Piecewise => &maps[nearest_center(centers, a)],
        CrossMap::Linear | CrossMap::Polynomial => &maps[0],
    };
    let mut t: Vec<f64> = (0..k).map(|r| dot(m.row(r), a)).collect();
    if spec.cross_map == CrossMap::Polynomial {
        let offset = 1.0 / (k as f64).sqrt();
        let sq: Vec<f64> = a.iter().map(|x| x * x - offset).collect();
        for (r, tr) in t.iter_mut().enumerate() {
            *tr += dot(quad.row(r), &sq);
        }
    }
    t
}

/// Generates the benchmark pair. The last `n_cold` users are the designated
/// cold-start users.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);
    let k = spec.k_true;
    let n = spec.n_users();
    let scale = (k as f64).powf(-0.25);
    let map_scale = 1.0 / (k as f64).sqrt();

    let centers = normal_matrix(&mut rng, spec.n_clusters, k, scale);
    let cluster: Vec<usize> = (0..n).map(|u| u % spec.n_clusters).collect();
    let mut aux_users = normal_matrix(&mut rng, n, k, scale * spec.cluster_spread);
    for u in 0..n {
        let c = centers.row(cluster[u]).to_vec();
        for (x, cx) in aux_users.row_mut(u).iter_mut().zip(c) {
            *x += cx;
        }
    }
    let n_maps = if spec.cross_map == CrossMap::Piecewise {
        spec.n_clusters
    } else {
        1
    };
    let maps: Vec<Matrix> = (0..n_maps).map(|_| normal_matrix(&mut rng, k, k, map_scale)).collect();
    let quad = normal_matrix(&mut rng, k, k, 0.5 * map_scale);
    let mut target_users = Matrix::zeros(n, k);
    for u in 0..n {
        let t = cross_map(spec, &maps, &quad, &centers, aux_users.row(u));
        for (x, tx) in target_users.row_mut(u).iter_mut().zip(t) {
            *x = tx + spec.noise_sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let aux_items = normal_matrix(&mut rng, spec.n_items_aux, k, scale);
    let target_items = normal_matrix(&mut rng, spec.n_items_target, k, scale);

    let auxiliary = rate_domain(&mut rng, 'a', &aux_users, &aux_items, &cluster, spec, spec.density_aux)?;
    let target = rate_domain(
        &mut rng,
        't',
        &target_users,
        &target_items,
        &cluster,
        spec,
        spec.density_target,
    )?;
    let user_ids: Vec<String> = (0..n).map(user_id).collect();
    let cold_users = user_ids[spec.n_linked..].iter().cloned().collect();
    Ok(SyntheticData {
        pair: DomainPair::new(target, auxiliary),
        cold_users,
        user_ids,
        truth: SyntheticTruth {
            aux_users,
            target_users,
            aux_items,
            target_items,
            cluster,
            centers,
        },
    })
}

/// A single cluster-structured domain: the auxiliary side of a generated pair
/// with `n_users` users and `n_items` items.
pub fn generate_single_domain(
    n_users: usize,
    n_items: usize,
    density: f64,
    base: &SyntheticSpec,
) -> Result<SyntheticData> {
    if n_users < 2 {
        return Err(Error::InvalidParam("single domain needs at least 2 users".into()));
    }
    let spec = SyntheticSpec {
        n_linked: n_users - 1,
        n_cold: 1,
        n_items_aux: n_items,
        n_items_target: 1,
        density_aux: density,
        density_target: 1.0,
        ..base.clone()
    };
    generate_synthetic(&spec)
}
