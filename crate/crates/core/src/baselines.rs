//! Comparison methods: average filling, plain factorization, a linear
//! transformation-matrix mapping and a single shared boosted mapping.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::RatingMatrix;
use crate::error::{Error, Result};
use crate::gbt::GbtHyper;
use crate::linalg::Matrix;
use crate::mapping::{train_user_mapping, FeatureRows, MappingFunction};
use crate::mfus::{train_mfus, MfusHyper, TrainedFactors};

/// Global mean plus user and item biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AfModel {
    pub global_mean: f64,
    pub user_bias: HashMap<String, f64>,
    pub item_bias: HashMap<String, f64>,
}

impl AfModel {
    pub fn user_bias(&self, user: &str) -> f64 {
        self.user_bias.get(user).copied().unwrap_or(0.0)
    }

    pub fn item_bias(&self, item: &str) -> f64 {
        self.item_bias.get(item).copied().unwrap_or(0.0)
    }

    /// `mu + b_u + b_i`; unseen users and items contribute zero bias.
    pub fn predict(&self, user: &str, item: &str) -> f64 {
        self.global_mean + self.user_bias(user) + self.item_bias(item)
    }
}

pub fn average_filling(train: &RatingMatrix) -> Result<AfModel> {
    if train.is_empty() {
        return Err(Error::EmptyInput("average filling needs training ratings".into()));
    }
    let mean = |it: &mut dyn Iterator<Item = u8>| {
        let (s, c) = it.fold((0.0, 0usize), |(s, c), r| (s + r as f64, c + 1));
        s / c as f64
    };
    let mu = mean(&mut train.entries().iter().map(|e| e.rating));
    let user_bias = (0..train.n_users())
        .map(|u| {
            let m = mean(&mut train.user_entries(u).iter().map(|e| e.rating));
            (train.users().id(u).to_string(), m - mu)
        })
        .collect();
    let item_bias = (0..train.n_items())
        .map(|i| {
            let m = mean(&mut train.item_entries(i).map(|e| e.rating));
            (train.items().id(i).to_string(), m - mu)
        })
        .collect();
    Ok(AfModel {
        global_mean: mu,
        user_bias,
        item_bias,
    })
}

/// Plain matrix factorization: the similarity-regularized trainer with
/// `beta = 0`.
pub fn train_mf(m: &RatingMatrix, hyper: &MfusHyper, domain_tag: &str) -> Result<TrainedFactors> {
    let plain = MfusHyper {
        beta: 0.0,
        ..hyper.clone()
    };
    log::debug!("mf: training {domain_tag} with beta = 0");
    train_mfus(m, None, &plain, domain_tag)
}

/// `t = M a (+ b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearMap {
    /// `K_t x K_a`.
    pub matrix: Matrix,
    pub intercept: Option<Vec<f64>>,
}

impl LinearMap {
    pub fn apply(&self, a: &[f64]) -> Vec<f64> {
        (0..self.matrix.rows())
            .map(|r| {
                let b = self.intercept.as_ref().map_or(0.0, |b| b[r]);
                b + crate::linalg::dot(self.matrix.row(r), a)
            })
            .collect()
    }
}

/// Ridge least squares `min_M sum_v |M a_v - t_v|^2 + ridge |M|_F^2` via the
/// normal equations. The intercept, when fitted, is not penalized.
pub fn fit_transformation_matrix(
    aux_rows: &[&[f64]],
    tgt_rows: &[&[f64]],
    ridge: f64,
    intercept: bool,
) -> Result<LinearMap> {
    if aux_rows.is_empty() || aux_rows.len() != tgt_rows.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} auxiliary rows and {} target rows",
            aux_rows.len(),
            tgt_rows.len()
        )));
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidParam(format!("ridge {ridge} must be >= 0")));
    }
    let n = aux_rows.len();
    let ka = aux_rows[0].len();
    let kt = tgt_rows[0].len();
    let width = ka + usize::from(intercept);
    let x = DMatrix::from_fn(n, width, |r, c| if c < ka { aux_rows[r][c] } else { 1.0 });
    let y = DMatrix::from_fn(n, kt, |r, c| tgt_rows[r][c]);
    let mut gram = x.transpose() * &x;
    for c in 0..ka {
        gram[(c, c)] += ridge;
    }
    let rhs = x.transpose() * &y;
    let chol = gram.cholesky().ok_or_else(|| {
        Error::Singular(if ridge == 0.0 {
            "normal equations are singular; use ridge > 0".into()
        } else {
            "normal equations are not positive definite".into()
        })
    })?;
    let w = chol.solve(&rhs);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("solution is not finite; use ridge > 0".into()));
    }
    let matrix = Matrix::from_fn(kt, ka, |r, c| w[(c, r)]);
    let intercept = intercept.then(|| (0..kt).map(|r| w[(ka, r)]).collect());
    Ok(LinearMap { matrix, intercept })
}

/// Norm of `(X^T X + ridge I) W - X^T Y` for a fitted map without intercept.
pub fn normal_equation_residual(aux_rows: &[&[f64]], tgt_rows: &[&[f64]], ridge: f64, map: &LinearMap) -> f64 {
    let n = aux_rows.len();
    let ka = map.matrix.cols();
    let kt = map.matrix.rows();
    let x = DMatrix::from_fn(n, ka, |r, c| aux_rows[r][c]);
    let y = DMatrix::from_fn(n, kt, |r, c| tgt_rows[r][c]);
    let w = DMatrix::from_fn(ka, kt, |r, c| map.matrix.get(c, r));
    let lhs = (x.transpose() * &x + DMatrix::identity(ka, ka) * ridge) * w;
    (lhs - x.transpose() * y).norm()
}

/// One mapping learned on every linked pair, shared by all cold-start users.
pub fn global_gbt_mapping(
    pairs: &[(usize, usize)],
    aux_rows: &impl FeatureRows,
    tgt_rows: &impl FeatureRows,
    hyper: &GbtHyper,
) -> Result<MappingFunction> {
    train_user_mapping(None, pairs, aux_rows, tgt_rows, hyper)
}
