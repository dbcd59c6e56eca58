//! Matrix factorization with a user-similarity Laplacian penalty.
//!
//! Minimizes
//!
//! ```text
//! F(U, V) = 1/2 sum_{(u,i) observed} (R_ui - U_u . V_i)^2
//!         + alpha/2 tr(V V^T) + 1/2 tr(U^T (alpha I + beta L) U)
//! ```
//!
//! with `L = D - S` the Laplacian of the user similarity graph, by alternating
//! gradient steps over the columns of `U` and the rows of `V`. Each step length
//! comes from an Armijo backtracking search.

use serde::{Deserialize, Serialize};

use crate::dataset::RatingMatrix;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::rng::{self, unit_f64};
use crate::similarity::SimilarityMatrix;

pub const MODEL_VERSION: &str = "coldmap-model-v1";

/// Upper bound on step halvings in one line search.
pub const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfusHyper {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub max_outer_iters: usize,
    pub tol: f64,
    pub ls_shrink: f64,
    pub ls_c: f64,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for MfusHyper {
    fn default() -> Self {
        MfusHyper {
            k: 15,
            alpha: 0.01,
            beta: 0.005,
            max_outer_iters: 500,
            tol: 1e-5,
            ls_shrink: 0.5,
            ls_c: 1e-4,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

impl MfusHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if self.k == 0 {
            return bad("latent dimension k must be positive".into());
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return bad(format!("alpha {} and beta {} must be >= 0", self.alpha, self.beta));
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol {} must be positive", self.tol));
        }
        if !(self.ls_shrink > 0.0 && self.ls_shrink < 1.0 && self.ls_c > 0.0 && self.ls_c < 1.0) {
            return bad(format!(
                "ls_shrink {} and ls_c {} must lie in (0, 1)",
                self.ls_shrink, self.ls_c
            ));
        }
        if !(self.init_scale > 0.0) {
            return bad(format!("init_scale {} must be positive", self.init_scale));
        }
        Ok(())
    }
}

/// User and item latent factors of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub domain_tag: String,
    pub users: Matrix,
    pub items: Matrix,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: String,
    domain_tag: String,
    k: usize,
    #[serde(default)]
    user_ids: Vec<String>,
    #[serde(default)]
    item_ids: Vec<String>,
    users: Vec<Vec<f64>>,
    items: Vec<Vec<f64>>,
}

impl FactorModel {
    pub fn k(&self) -> usize {
        self.users.cols()
    }

    pub fn predict(&self, u: usize, i: usize) -> f64 {
        dot(self.users.row(u), self.items.row(i))
    }

    pub fn is_finite(&self) -> bool {
        self.users.is_finite() && self.items.is_finite()
    }

    /// Serializes with the matrix's id vocabularies so rows can be joined
    /// across domains.
    pub fn to_json(&self, m: &RatingMatrix) -> Result<String> {
        let file = ModelFile {
            version: MODEL_VERSION.into(),
            domain_tag: self.domain_tag.clone(),
            k: self.k(),
            user_ids: m.users().ids().to_vec(),
            item_ids: m.items().ids().to_vec(),
            users: self.users.to_rows(),
            items: self.items.to_rows(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    /// Returns the model with its user and item ids.
    pub fn from_json(s: &str) -> Result<(Self, Vec<String>, Vec<String>)> {
        let file: ModelFile = serde_json::from_str(s)?;
        if file.version != MODEL_VERSION {
            return Err(Error::Version {
                expected: MODEL_VERSION.into(),
                found: file.version,
            });
        }
        let shape_err = || Error::DimensionMismatch("ragged factor rows".into());
        let users = Matrix::from_rows(&file.users).ok_or_else(shape_err)?;
        let items = Matrix::from_rows(&file.items).ok_or_else(shape_err)?;
        if (users.rows() > 0 && users.cols() != file.k) || (items.rows() > 0 && items.cols() != file.k) {
            return Err(Error::DimensionMismatch(format!("factor width differs from k={}", file.k)));
        }
        Ok((
            FactorModel {
                domain_tag: file.domain_tag,
                users,
                items,
            },
            file.user_ids,
            file.item_ids,
        ))
    }
}

/// `L = D - S` applied without materializing it; the diagonal of `S` does not
/// enter the degrees.
#[derive(Debug, Clone)]
pub struct Laplacian<'a> {
    sim: &'a SimilarityMatrix,
    degree: Vec<f64>,
}

impl<'a> Laplacian<'a> {
    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    pub fn n(&self) -> usize {
        self.degree.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let sx = self.sim.mul_offdiag(x);
        self.degree
            .iter()
            .zip(x)
            .zip(sx)
            .map(|((d, xi), s)| d * xi - s)
            .collect()
    }

    pub fn to_dense(&self) -> Matrix {
        let n = self.n();
        Matrix::from_fn(n, n, |u, v| {
            if u == v {
                self.degree[u]
            } else {
                -self.sim.get(u, v)
            }
        })
    }

    /// `x^T L x`.
    pub fn quad(&self, x: &[f64]) -> f64 {
        dot(x, &self.apply(x))
    }
}

pub fn laplacian(sim: &SimilarityMatrix) -> Laplacian<'_> {
    let ones = vec![1.0; sim.n_users()];
    Laplacian {
        sim,
        degree: sim.mul_offdiag(&ones),
    }
}

fn check_dims(m: &RatingMatrix, model: &FactorModel, lap: Option<&Laplacian>) -> Result<()> {
    if model.users.rows() != m.n_users() || model.items.rows() != m.n_items() {
        return Err(Error::DimensionMismatch(format!(
            "model is {}x{} users/items, matrix is {}x{}",
            model.users.rows(),
            model.items.rows(),
            m.n_users(),
            m.n_items()
        )));
    }
    if model.users.cols() != model.items.cols() {
        return Err(Error::DimensionMismatch("user and item factor widths differ".into()));
    }
    if let Some(l) = lap {
        if l.n() != m.n_users() {
            return Err(Error::DimensionMismatch(format!(
                "similarity over {} users, matrix has {}",
                l.n(),
                m.n_users()
            )));
        }
    }
    Ok(())
}

/// Full objective value. `lap` may be `None` only when `beta == 0`.
pub fn objective_value(
    m: &RatingMatrix,
    model: &FactorModel,
    lap: Option<&Laplacian>,
    hyper: &MfusHyper,
) -> Result<f64> {
    check_dims(m, model, lap)?;
    let data: f64 = m
        .entries()
        .iter()
        .map(|e| {
            let r = e.rating as f64 - model.predict(e.user, e.item);
            r * r
        })
        .sum();
    let mut value = 0.5 * data
        + 0.5 * hyper.alpha * model.items.frobenius_sq()
        + 0.5 * hyper.alpha * model.users.frobenius_sq();
    if hyper.beta != 0.0 {
        let lap = lap.ok_or_else(|| {
            Error::InvalidParam("beta > 0 requires a similarity matrix".into())
        })?;
        let tr: f64 = (0..model.k()).map(|k| lap.quad(&model.users.column(k))).sum();
        value += 0.5 * hyper.beta * tr;
    }
    Ok(value)
}

/// `(alpha I + beta L) U_{*k} - x` with `x_u = sum_i Y_ui e_ui V_ik`.
pub fn grad_user_column(
    m: &RatingMatrix,
    model: &FactorModel,
    lap: Option<&Laplacian>,
    hyper: &MfusHyper,
    k: usize,
) -> Result<Vec<f64>> {
    check_dims(m, model, lap)?;
    let col = model.users.column(k);
    let mut x = vec![0.0; m.n_users()];
    for e in m.entries() {
        let r = e.rating as f64 - model.predict(e.user, e.item);
        x[e.user] += r * model.items.get(e.item, k);
    }
    Ok(column_gradient(&col, &x, lap, hyper))
}

fn regularized(col: &[f64], lap: Option<&Laplacian>, hyper: &MfusHyper) -> Vec<f64> {
    let mut out: Vec<f64> = col.iter().map(|c| hyper.alpha * c).collect();
    if hyper.beta != 0.0 {
        let lc = lap.expect("beta > 0 checked by caller").apply(col);
        for (o, l) in out.iter_mut().zip(lc) {
            *o += hyper.beta * l;
        }
    }
    out
}

fn column_gradient(col: &[f64], x: &[f64], lap: Option<&Laplacian>, hyper: &MfusHyper) -> Vec<f64> {
    let mut g = regularized(col, lap, hyper);
    for (gi, xi) in g.iter_mut().zip(x) {
        *gi -= xi;
    }
    g
}

/// `-sum_u Y_ui e_ui U_u + alpha V_i`.
pub fn grad_item_row(m: &RatingMatrix, model: &FactorModel, hyper: &MfusHyper, i: usize) -> Result<Vec<f64>> {
    check_dims(m, model, None)?;
    let mut g: Vec<f64> = model.items.row(i).iter().map(|v| hyper.alpha * v).collect();
    for e in m.item_entries(i) {
        let r = e.rating as f64 - model.predict(e.user, e.item);
        for (gk, uk) in g.iter_mut().zip(model.users.row(e.user)) {
            *gk -= r * uk;
        }
    }
    Ok(g)
}

/// Armijo backtracking along a line: largest `t` in `{1, shrink, shrink^2, ..}`
/// with `phi(t) <= phi0 + c t slope`.
pub fn backtrack_line(
    mut phi: impl FnMut(f64) -> f64,
    phi0: f64,
    slope: f64,
    shrink: f64,
    c: f64,
) -> Result<f64> {
    if !(slope < 0.0) {
        return Err(Error::LineSearch(format!(
            "direction is not a descent direction (slope {slope})"
        )));
    }
    let mut t = 1.0;
    for _ in 0..=MAX_HALVINGS {
        let v = phi(t);
        if v.is_finite() && v <= phi0 + c * t * slope {
            return Ok(t);
        }
        t *= shrink;
    }
    Err(Error::LineSearch(format!(
        "no admissible step after {MAX_HALVINGS} reductions"
    )))
}

/// Backtracking over a vector point: `f(point + t direction)` against the
/// sufficient-decrease bound built from `grad . direction`.
pub fn backtracking_step(
    mut f: impl FnMut(&[f64]) -> f64,
    point: &[f64],
    direction: &[f64],
    grad: &[f64],
    shrink: f64,
    c: f64,
) -> Result<f64> {
    if point.len() != direction.len() || point.len() != grad.len() {
        return Err(Error::DimensionMismatch("point, direction and grad lengths differ".into()));
    }
    let f0 = f(point);
    let slope = dot(grad, direction);
    let mut trial = point.to_vec();
    backtrack_line(
        |t| {
            for ((x, p), d) in trial.iter_mut().zip(point).zip(direction) {
                *x = p + t * d;
            }
            f(&trial)
        },
        f0,
        slope,
        shrink,
        c,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepLog {
    pub sweep: usize,
    pub objective: f64,
    pub mean_user_step: f64,
    pub mean_item_step: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedFactors {
    pub model: FactorModel,
    /// Entry 0 is the objective at initialization.
    pub log: Vec<SweepLog>,
}

impl TrainedFactors {
    pub fn log_csv(&self) -> String {
        let mut s = String::from("sweep,objective,mean_user_step,mean_item_step\n");
        for l in &self.log {
            s.push_str(&format!(
                "{},{:.17e},{:.17e},{:.17e}\n",
                l.sweep, l.objective, l.mean_user_step, l.mean_item_step
            ));
        }
        s
    }
}

fn init_model(m: &RatingMatrix, hyper: &MfusHyper, tag: &str) -> FactorModel {
    let mut r = rng::seeded(hyper.seed);
    let users = Matrix::from_fn(m.n_users(), hyper.k, |_, _| hyper.init_scale * unit_f64(&mut r));
    let items = Matrix::from_fn(m.n_items(), hyper.k, |_, _| hyper.init_scale * unit_f64(&mut r));
    FactorModel {
        domain_tag: tag.to_string(),
        users,
        items,
    }
}

fn residuals(m: &RatingMatrix, model: &FactorModel) -> Vec<f64> {
    m.entries()
        .iter()
        .map(|e| e.rating as f64 - model.predict(e.user, e.item))
        .collect()
}

/// Alternating gradient descent: per sweep, one line-searched step on each
/// column of `U`, then on each row of `V`.
///
/// The objective restricted to one block along a direction is an exact
/// quadratic in the step length, so trial steps are evaluated in closed form;
/// the full objective is recomputed after every sweep.
pub fn train_mfus(
    m: &RatingMatrix,
    sim: Option<&SimilarityMatrix>,
    hyper: &MfusHyper,
    domain_tag: &str,
) -> Result<TrainedFactors> {
    hyper.validate()?;
    let lap = match sim {
        Some(s) if hyper.beta != 0.0 => Some(laplacian(s)),
        None if hyper.beta != 0.0 => {
            return Err(Error::InvalidParam("beta > 0 requires a similarity matrix".into()))
        }
        _ => None,
    };
    let lap = lap.as_ref();
    let mut model = init_model(m, hyper, domain_tag);
    check_dims(m, &model, lap)?;

    let mut objective = objective_value(m, &model, lap, hyper)?;
    if !objective.is_finite() {
        return Err(Error::NonFinite(format!("initial objective {objective}")));
    }
    let mut log = vec![SweepLog {
        sweep: 0,
        objective,
        mean_user_step: 0.0,
        mean_item_step: 0.0,
    }];
    let entries = m.entries();
    let item_pos: Vec<Vec<usize>> = {
        let mut v = vec![Vec::new(); m.n_items()];
        for (p, e) in entries.iter().enumerate() {
            v[e.item].push(p);
        }
        v
    };
    let (n, k_dim) = (m.n_users(), hyper.k);

    for sweep in 1..=hyper.max_outer_iters {
        let mut resid = residuals(m, &model);
        let mut user_steps = 0.0;
        for k in 0..k_dim {
            let col = model.users.column(k);
            let mut x = vec![0.0; n];
            for (p, e) in entries.iter().enumerate() {
                x[e.user] += resid[p] * model.items.get(e.item, k);
            }
            let g = column_gradient(&col, &x, lap, hyper);
            let g2 = dot(&g, &g);
            if g2 == 0.0 {
                continue;
            }
            let d: Vec<f64> = g.iter().map(|v| -v).collect();
            let ad = regularized(&d, lap, hyper);
            let mut curv = dot(&d, &ad);
            for e in entries {
                let z = d[e.user] * model.items.get(e.item, k);
                curv += z * z;
            }
            let slope = -g2;
            let step = backtrack_line(
                |t| t * slope + 0.5 * t * t * curv,
                0.0,
                slope,
                hyper.ls_shrink,
                hyper.ls_c,
            );
            let Ok(t) = step else {
                log::debug!("sweep {sweep}: column {k} line search failed, block skipped");
                continue;
            };
            user_steps += t;
            for (p, e) in entries.iter().enumerate() {
                resid[p] -= t * d[e.user] * model.items.get(e.item, k);
            }
            let new_col: Vec<f64> = col.iter().zip(&d).map(|(c, dv)| c + t * dv).collect();
            model.users.set_column(k, &new_col);
        }

        let mut item_steps = 0.0;
        let mut g = vec![0.0; k_dim];
        for (i, positions) in item_pos.iter().enumerate() {
            for (gk, vk) in g.iter_mut().zip(model.items.row(i)) {
                *gk = hyper.alpha * vk;
            }
            for &p in positions {
                let u = entries[p].user;
                for (gk, uk) in g.iter_mut().zip(model.users.row(u)) {
                    *gk -= resid[p] * uk;
                }
            }
            let g2 = dot(&g, &g);
            if g2 == 0.0 {
                continue;
            }
            let d: Vec<f64> = g.iter().map(|v| -v).collect();
            let mut curv = hyper.alpha * g2;
            for &p in positions {
                let z = dot(model.users.row(entries[p].user), &d);
                curv += z * z;
            }
            let slope = -g2;
            let step = backtrack_line(
                |t| t * slope + 0.5 * t * t * curv,
                0.0,
                slope,
                hyper.ls_shrink,
                hyper.ls_c,
            );
            let Ok(t) = step else {
                log::debug!("sweep {sweep}: item {i} line search failed, block skipped");
                continue;
            };
            item_steps += t;
            for &p in positions {
                resid[p] -= t * dot(model.users.row(entries[p].user), &d);
            }
            for (v, dv) in model.items.row_mut(i).iter_mut().zip(&d) {
                *v += t * dv;
            }
        }

        let next = objective_value(m, &model, lap, hyper)?;
        if !next.is_finite() {
            return Err(Error::NonFinite(format!("objective {next} at sweep {sweep}")));
        }
        log.push(SweepLog {
            sweep,
            objective: next,
            mean_user_step: user_steps / k_dim as f64,
            mean_item_step: if m.n_items() > 0 { item_steps / m.n_items() as f64 } else { 0.0 },
        });
        let rel = (objective - next) / objective.abs().max(f64::MIN_POSITIVE);
        objective = next;
        if rel < hyper.tol {
            break;
        }
    }
    log::debug!(
        "{domain_tag}: {} sweeps, objective {objective:.6}",
        log.len() - 1
    );
    Ok(TrainedFactors { model, log })
}
