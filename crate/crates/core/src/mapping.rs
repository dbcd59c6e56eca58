//! Neighborhood-gated cross-domain feature mapping.
//!
//! For each cold-start user, the linked users whose auxiliary-domain
//! similarity exceeds a threshold supply `(auxiliary features, target
//! features)` pairs. One boosted model per target dimension is fitted on those
//! pairs, the user's auxiliary features are mapped through it, and target
//! ratings are scored against the target item factors.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DomainPair;
use crate::error::{Error, Result};
use crate::gbt::{fit_gbt, GbtHyper, GbtModel};
use crate::linalg::{dot, Matrix};
use crate::mfus::{train_mfus, FactorModel, MfusHyper};
use crate::similarity::{combined_similarity_matrix, SimilarityMatrix, SimilarityParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingParams {
    /// Neighbors need auxiliary similarity strictly above this.
    pub sim: f64,
    /// Size of the top-similarity fallback when no linked user passes `sim`.
    pub fallback_k: usize,
    /// Clamp reported predictions to `[1, 5]`.
    pub clamp: bool,
}

impl Default for MappingParams {
    fn default() -> Self {
        MappingParams {
            sim: 0.45,
            fallback_k: 50,
            clamp: false,
        }
    }
}

/// Row access to a factor matrix.
pub trait FeatureRows {
    fn width(&self) -> usize;
    fn feature_row(&self, index: usize) -> &[f64];
}

impl FeatureRows for Matrix {
    fn width(&self) -> usize {
        self.cols()
    }

    fn feature_row(&self, index: usize) -> &[f64] {
        self.row(index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborSet {
    /// Auxiliary-domain index of the cold-start user.
    pub owner: usize,
    /// Auxiliary-domain indices, by similarity descending then index.
    pub members: Vec<usize>,
    pub threshold_used: f64,
    /// Number of linked users strictly above the threshold.
    pub gated_count: usize,
    /// Set when `members` came from the top-k fallback.
    pub fallback: bool,
}

/// Linked users with `S_aux(u, v) > sim`; if none qualify, the `fallback_k`
/// most similar linked users (flagged).
pub fn select_neighbors(
    u: usize,
    linked: &[usize],
    s_aux: &SimilarityMatrix,
    sim: f64,
    fallback_k: usize,
) -> Result<NeighborSet> {
    if linked.is_empty() {
        return Err(Error::EmptyInput("no linked users to select neighbors from".into()));
    }
    if !(0.0..1.0).contains(&sim) {
        return Err(Error::InvalidParam(format!("sim threshold {sim} not in [0, 1)")));
    }
    let mut scored: Vec<(f64, usize)> = linked
        .iter()
        .filter(|&&v| v != u)
        .map(|&v| (s_aux.get(u, v), v))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let gated_count = scored.iter().take_while(|(s, _)| *s > sim).count();
    let (members, fallback) = if gated_count > 0 {
        (scored[..gated_count].iter().map(|&(_, v)| v).collect(), false)
    } else {
        let k = fallback_k.min(scored.len());
        (scored[..k].iter().map(|&(_, v)| v).collect(), true)
    };
    Ok(NeighborSet {
        owner: u,
        members,
        threshold_used: sim,
        gated_count,
        fallback,
    })
}

/// One boosted model per target dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingFunction {
    pub owner: Option<String>,
    pub subfunctions: Vec<GbtModel>,
    pub neighbor_count: usize,
}

impl MappingFunction {
    pub fn map(&self, aux: &[f64]) -> Vec<f64> {
        self.subfunctions.iter().map(|f| f.predict(aux)).collect()
    }
}

/// Fits the mapping on `pairs` of `(auxiliary row, target row)` indices.
pub fn train_user_mapping(
    owner: Option<String>,
    pairs: &[(usize, usize)],
    aux_rows: &impl FeatureRows,
    tgt_rows: &impl FeatureRows,
    hyper: &GbtHyper,
) -> Result<MappingFunction> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("mapping neighborhood is empty".into()));
    }
    let x = Matrix::from_fn(pairs.len(), aux_rows.width(), |r, c| {
        aux_rows.feature_row(pairs[r].0)[c]
    });
    let targets: Vec<&[f64]> = pairs.iter().map(|&(_, t)| tgt_rows.feature_row(t)).collect();
    let subfunctions = (0..tgt_rows.width())
        .map(|k| {
            let y: Vec<f64> = targets.iter().map(|row| row[k]).collect();
            fit_gbt(&x, &y, hyper)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MappingFunction {
        owner,
        subfunctions,
        neighbor_count: pairs.len(),
    })
}

pub fn map_features(f: &MappingFunction, aux: &[f64]) -> Vec<f64> {
    f.map(aux)
}

/// `r_hat = V u`.
pub fn predict_ratings(mapped: &[f64], item_factors: &Matrix) -> Result<Vec<f64>> {
    if mapped.len() != item_factors.cols() {
        return Err(Error::DimensionMismatch(format!(
            "mapped features have {} dims, item factors {}",
            mapped.len(),
            item_factors.cols()
        )));
    }
    Ok((0..item_factors.rows())
        .map(|i| dot(item_factors.row(i), mapped))
        .collect())
}

/// Mapped target-domain features of cold-start users, able to score any
/// target item.
#[derive(Debug, Clone)]
pub struct PredictionTable {
    pub users: Vec<String>,
    pub mapped: Matrix,
    pub item_ids: Vec<String>,
    pub item_factors: Matrix,
    pub neighbors: Vec<Option<NeighborSet>>,
    user_index: HashMap<String, usize>,
    item_index: HashMap<String, usize>,
}

impl PredictionTable {
    pub fn new(
        users: Vec<String>,
        mapped: Matrix,
        item_ids: Vec<String>,
        item_factors: Matrix,
        neighbors: Vec<Option<NeighborSet>>,
    ) -> Self {
        let user_index = users.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();
        let item_index = item_ids.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();
        PredictionTable {
            users,
            mapped,
            item_ids,
            item_factors,
            neighbors,
            user_index,
            item_index,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn predict(&self, user: &str, item: &str) -> Option<f64> {
        let u = *self.user_index.get(user)?;
        let i = *self.item_index.get(item)?;
        Some(dot(self.mapped.row(u), self.item_factors.row(i)))
    }

    /// Full row of predictions for one user over all target items.
    pub fn row(&self, user: &str) -> Option<Vec<f64>> {
        let u = *self.user_index.get(user)?;
        predict_ratings(self.mapped.row(u), &self.item_factors).ok()
    }
}

/// Similarities and factor models of both domains.
#[derive(Debug, Clone)]
pub struct DomainModels {
    pub target_sim: Option<SimilarityMatrix>,
    pub auxiliary_sim: SimilarityMatrix,
    pub target: FactorModel,
    pub auxiliary: FactorModel,
}

#[derive(Debug, Clone, Default)]
pub struct PipelineParams {
    pub target_similarity: SimilarityParams,
    pub auxiliary_similarity: SimilarityParams,
    pub target_mfus: MfusHyper,
    pub auxiliary_mfus: MfusHyper,
    pub gbt: GbtHyper,
    pub mapping: MappingParams,
}

/// Trains factorization in both domains. The auxiliary similarity is always
/// computed since neighbor selection needs it.
pub fn train_domain_models(pair: &DomainPair, params: &PipelineParams) -> Result<DomainModels> {
    let target_sim = if params.target_mfus.beta != 0.0 {
        Some(combined_similarity_matrix(&pair.target, &params.target_similarity)?)
    } else {
        None
    };
    let auxiliary_sim = combined_similarity_matrix(&pair.auxiliary, &params.auxiliary_similarity)?;
    let target = train_mfus(&pair.target, target_sim.as_ref(), &params.target_mfus, "target")?;
    let aux_sim = (params.auxiliary_mfus.beta != 0.0).then_some(&auxiliary_sim);
    let auxiliary = train_mfus(&pair.auxiliary, aux_sim, &params.auxiliary_mfus, "auxiliary")?;
    Ok(DomainModels {
        target_sim,
        auxiliary_sim,
        target: target.model,
        auxiliary: auxiliary.model,
    })
}

/// Cold-start users present in the auxiliary matrix, with their aux index.
fn cold_users(pair: &DomainPair) -> Vec<(String, usize)> {
    pair.cold_start_users
        .iter()
        .filter_map(|id| Some((id.clone(), pair.auxiliary.users().index_of(id)?)))
        .collect()
}

fn table(
    pair: &DomainPair,
    target: &FactorModel,
    rows: Vec<(String, Vec<f64>, Option<NeighborSet>)>,
) -> PredictionTable {
    let k_t = target.k();
    let mut users = Vec::with_capacity(rows.len());
    let mut mapped = Matrix::zeros(rows.len(), k_t);
    let mut neighbors = Vec::with_capacity(rows.len());
    for (r, (id, feats, nb)) in rows.into_iter().enumerate() {
        mapped.row_mut(r).copy_from_slice(&feats);
        users.push(id);
        neighbors.push(nb);
    }
    PredictionTable::new(
        users,
        mapped,
        pair.target.items().ids().to_vec(),
        target.items.clone(),
        neighbors,
    )
}

/// Per-user neighborhood mapping over trained domain models.
pub fn cdlfm_predict(
    pair: &DomainPair,
    models: &DomainModels,
    mapping: &MappingParams,
    gbt: &GbtHyper,
) -> Result<PredictionTable> {
    let linked = pair.linked_indices();
    let cold = cold_users(pair);
    if cold.is_empty() {
        return Ok(table(pair, &models.target, Vec::new()));
    }
    let linked_aux: Vec<usize> = linked.iter().map(|&(a, _)| a).collect();
    let tgt_of_aux: HashMap<usize, usize> = linked.iter().copied().collect();
    let rows = cold
        .par_iter()
        .map(|(id, u)| {
            let nb = select_neighbors(*u, &linked_aux, &models.auxiliary_sim, mapping.sim, mapping.fallback_k)?;
            let pairs: Vec<(usize, usize)> = nb.members.iter().map(|a| (*a, tgt_of_aux[a])).collect();
            let f = train_user_mapping(
                Some(id.clone()),
                &pairs,
                &models.auxiliary.users,
                &models.target.users,
                gbt,
            )?;
            let feats = f.map(models.auxiliary.users.row(*u));
            Ok((id.clone(), feats, Some(nb)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(table(pair, &models.target, rows))
}

/// Maps every cold-start user through one shared function.
pub fn apply_shared_mapping(
    pair: &DomainPair,
    target: &FactorModel,
    auxiliary: &FactorModel,
    map: impl Fn(&[f64]) -> Vec<f64>,
) -> PredictionTable {
    let rows = cold_users(pair)
        .into_iter()
        .map(|(id, u)| {
            let feats = map(auxiliary.users.row(u));
            (id, feats, None)
        })
        .collect();
    table(pair, target, rows)
}

/// The full pipeline: factorization in both domains, then the per-user
/// neighborhood mapping.
pub fn run_cdlfm(pair: &DomainPair, params: &PipelineParams) -> Result<(DomainModels, PredictionTable)> {
    let models = train_domain_models(pair, params)?;
    let table = cdlfm_predict(pair, &models, &params.mapping, &params.gbt)?;
    Ok((models, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::Component;

    fn sims(values: &[f64]) -> SimilarityMatrix {
        // user 0 is the cold-start user, similarity to user v is values[v-1]
        let n = values.len() + 1;
        SimilarityMatrix::from_fn(n, Component::Combined, |u, v| {
            if u == 0 {
                values[v - 1]
            } else {
                0.0
            }
        })
    }

    #[test]
    fn threshold_and_ordering() {
        let s = sims(&[0.5, 0.9, 0.45, 0.9, 0.1]);
        let nb = select_neighbors(0, &[1, 2, 3, 4, 5], &s, 0.45, 50).unwrap();
        assert_eq!(nb.members, vec![2, 4, 1]);
        assert!(!nb.fallback);
        assert_eq!(nb.gated_count, 3);

        let nb = select_neighbors(0, &[1, 2, 3, 4, 5], &s, 0.0, 50).unwrap();
        assert_eq!(nb.members.len(), 5);
    }

    #[test]
    fn zero_similarity_is_not_selected_at_zero_threshold() {
        let s = sims(&[0.0, 0.3]);
        let nb = select_neighbors(0, &[1, 2], &s, 0.0, 50).unwrap();
        assert_eq!(nb.members, vec![2]);
    }

    #[test]
    fn fallback_takes_top_k() {
        let values: Vec<f64> = (0..80).map(|i| 0.3 - 0.001 * (i % 7) as f64).collect();
        let s = sims(&values);
        let linked: Vec<usize> = (1..=80).collect();
        let nb = select_neighbors(0, &linked, &s, 0.45, 50).unwrap();
        assert!(nb.fallback);
        assert_eq!(nb.gated_count, 0);
        let mut oracle: Vec<(f64, usize)> = linked.iter().map(|&v| (values[v - 1], v)).collect();
        oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let want: Vec<usize> = oracle[..50].iter().map(|p| p.1).collect();
        assert_eq!(nb.members, want);
    }

    #[test]
    fn selection_errors() {
        let s = sims(&[0.5]);
        assert!(matches!(select_neighbors(0, &[], &s, 0.4, 5), Err(Error::EmptyInput(_))));
        assert!(matches!(select_neighbors(0, &[1], &s, 1.0, 5), Err(Error::InvalidParam(_))));
    }

    #[test]
    fn single_neighbor_maps_to_its_target_row() {
        let aux = Matrix::from_rows(&[vec![0.3, 0.1], vec![0.9, 0.2]]).unwrap();
        let tgt = Matrix::from_rows(&[vec![1.0, -2.0, 0.5]]).unwrap();
        let f = train_user_mapping(None, &[(1, 0)], &aux, &tgt, &GbtHyper::default()).unwrap();
        assert_eq!(f.subfunctions.len(), 3);
        assert_eq!(map_features(&f, &[5.0, -5.0]), vec![1.0, -2.0, 0.5]);
        assert!(train_user_mapping(None, &[], &aux, &tgt, &GbtHyper::default()).is_err());
    }

    #[test]
    fn predictions_are_dot_products() {
        let eye = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(predict_ratings(&[1.0, 0.0], &eye).unwrap(), vec![1.0, 0.0]);
        assert_eq!(predict_ratings(&[0.0, 0.0], &eye).unwrap(), vec![0.0, 0.0]);
        assert!(predict_ratings(&[1.0], &eye).is_err());
    }
}
