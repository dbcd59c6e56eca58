//! Gradient boosted regression trees under squared loss.
//!
//! Base learners are binary CART trees grown greedily on sum of squared
//! errors. Candidate thresholds are midpoints between consecutive distinct
//! feature values; `x[feature] <= threshold` routes left. Equal-score
//! candidates resolve to the lowest feature index, then the lowest threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const GBT_VERSION: &str = "coldmap-gbt-v1";

/// Relative margin a candidate split must beat the incumbent by.
const SCORE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
    pub max_depth: usize,
}

impl RegressionTree {
    pub fn constant(value: f64) -> Self {
        RegressionTree {
            nodes: vec![Node::Leaf { value }],
            max_depth: 0,
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

pub fn tree_predict(tree: &RegressionTree, x: &[f64]) -> f64 {
    tree.predict(x)
}

/// Row indices sorted by each feature (ties by row index), computed once and
/// reused for every tree fitted on the same inputs.
#[derive(Debug, Clone)]
pub struct Presorted<'a> {
    x: &'a Matrix,
    order: Vec<Vec<usize>>,
}

impl<'a> Presorted<'a> {
    pub fn new(x: &'a Matrix) -> Self {
        let order = (0..x.cols())
            .map(|f| {
                let mut idx: Vec<usize> = (0..x.rows()).collect();
                idx.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)).then(a.cmp(&b)));
                idx
            })
            .collect();
        Presorted { x, order }
    }

    pub fn fit(&self, targets: &[f64], max_depth: usize, min_leaf: usize) -> Result<RegressionTree> {
        let n = self.x.rows();
        if n == 0 {
            return Err(Error::EmptyInput("tree training set is empty".into()));
        }
        if targets.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} targets for {} rows",
                targets.len(),
                n
            )));
        }
        if self.x.cols() == 0 {
            return Ok(RegressionTree::constant(targets.iter().sum::<f64>() / n as f64));
        }
        let mut grower = Grower {
            x: self.x,
            y: targets,
            max_depth,
            min_leaf: min_leaf.max(1),
            nodes: Vec::new(),
            mask: vec![false; n],
        };
        grower.grow(self.order.clone(), 0);
        Ok(RegressionTree {
            nodes: grower.nodes,
            max_depth,
        })
    }
}

struct Grower<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
    mask: Vec<bool>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Grower<'_> {
    /// `lists[f]` holds this node's rows sorted by feature `f`. Returns the
    /// node's index.
    fn grow(&mut self, lists: Vec<Vec<usize>>, depth: usize) -> usize {
        let rows = lists[0].clone();
        let id = self.nodes.len();
        let count = rows.len();
        let sum: f64 = rows.iter().map(|&r| self.y[r]).sum();
        let mean = sum / count as f64;
        self.nodes.push(Node::Leaf { value: mean });

        if depth >= self.max_depth || count < 2 * self.min_leaf {
            return id;
        }
        let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
            (lo.min(self.y[r]), hi.max(self.y[r]))
        });
        if lo == hi {
            return id;
        }
        let sse: f64 = rows.iter().map(|&r| (self.y[r] - mean).powi(2)).sum();
        let Some(best) = self.best_split(&lists, mean) else {
            return id;
        };
        if !(best.gain > SCORE_EPS * sse) {
            return id;
        }

        for &r in &rows {
            self.mask[r] = self.x.get(r, best.feature) <= best.threshold;
        }
        let (left_lists, right_lists): (Vec<Vec<usize>>, Vec<Vec<usize>>) = lists
            .into_iter()
            .map(|l| l.into_iter().partition(|&r| self.mask[r]))
            .unzip();
        let left = self.grow(left_lists, depth + 1);
        let right = self.grow(right_lists, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    /// Maximizes the SSE reduction `c_L^2 n / (n_L n_R)`, where `c_L` is the
    /// left child's sum of targets centered on the node mean.
    fn best_split(&self, lists: &[Vec<usize>], mean: f64) -> Option<Candidate> {
        let mut best: Option<Candidate> = None;
        for (f, list) in lists.iter().enumerate() {
            let n = list.len();
            let mut left = 0.0;
            for j in 0..n - 1 {
                left += self.y[list[j]] - mean;
                let n_left = j + 1;
                let n_right = n - n_left;
                if n_left < self.min_leaf || n_right < self.min_leaf {
                    continue;
                }
                let a = self.x.get(list[j], f);
                let b = self.x.get(list[j + 1], f);
                if a == b {
                    continue;
                }
                let gain = left * left * n as f64 / (n_left as f64 * n_right as f64);
                let better = match &best {
                    None => true,
                    Some(c) => gain > c.gain * (1.0 + SCORE_EPS),
                };
                if better {
                    let mut threshold = 0.5 * (a + b);
                    if !(threshold >= a && threshold < b) {
                        threshold = a;
                    }
                    best = Some(Candidate {
                        feature: f,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }
}

/// Fits one CART regression tree on `x` (rows are samples).
pub fn fit_regression_tree(
    x: &Matrix,
    targets: &[f64],
    max_depth: usize,
    min_leaf: usize,
) -> Result<RegressionTree> {
    Presorted::new(x).fit(targets, max_depth, min_leaf)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaPolicy {
    #[default]
    FixedOne,
    ExactLineSearch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtHyper {
    pub nu: f64,
    pub eta_policy: EtaPolicy,
    pub max_stages: usize,
    pub tol: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Reserved; fitting is fully deterministic.
    pub seed: u64,
}

impl Default for GbtHyper {
    fn default() -> Self {
        GbtHyper {
            nu: 0.01,
            eta_policy: EtaPolicy::FixedOne,
            max_stages: 500,
            tol: 1e-6,
            max_depth: 3,
            min_leaf: 2,
            seed: 0,
        }
    }
}

impl GbtHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(Error::InvalidParam(format!("nu {} not in (0, 1]", self.nu)));
        }
        if self.max_depth == 0 || self.min_leaf == 0 {
            return Err(Error::InvalidParam("max_depth and min_leaf must be >= 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidParam(format!("tol {} must be >= 0", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub tree: RegressionTree,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub f0: f64,
    pub stages: Vec<Stage>,
    pub nu: f64,
    /// Mean squared training error after initialization and after each stage.
    pub loss_log: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GbtFile<'a> {
    version: String,
    #[serde(borrow)]
    models: std::borrow::Cow<'a, [GbtModel]>,
}

impl GbtModel {
    pub fn constant(f0: f64) -> Self {
        GbtModel {
            f0,
            stages: Vec::new(),
            nu: 1.0,
            loss_log: vec![0.0],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.stages
            .iter()
            .fold(self.f0, |acc, s| acc + self.nu * s.eta * s.tree.predict(x))
    }
}

pub fn gbt_predict(model: &GbtModel, x: &[f64]) -> f64 {
    model.predict(x)
}

/// Serializes a tuple of boosted models (e.g. one mapping function).
pub fn models_to_json(models: &[GbtModel]) -> Result<String> {
    Ok(serde_json::to_string(&GbtFile {
        version: GBT_VERSION.into(),
        models: std::borrow::Cow::Borrowed(models),
    })?)
}

pub fn models_from_json(s: &str) -> Result<Vec<GbtModel>> {
    let file: GbtFile = serde_json::from_str(s)?;
    if file.version != GBT_VERSION {
        return Err(Error::Version {
            expected: GBT_VERSION.into(),
            found: file.version,
        });
    }
    Ok(file.models.into_owned())
}

fn mean_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64
}

/// Stagewise boosting: `f_m = f_{m-1} + nu eta_m h_m` with `h_m` fitted to the
/// residuals `y - f_{m-1}(x)`.
///
/// Stops when the relative loss decrease of a stage falls below `tol`, after
/// `max_stages`, or when the loss reaches zero. A stage that would raise the
/// loss is discarded, so `loss_log` never increases.
pub fn fit_gbt(x: &Matrix, y: &[f64], hyper: &GbtHyper) -> Result<GbtModel> {
    hyper.validate()?;
    let n = x.rows();
    if n == 0 {
        return Err(Error::EmptyInput("boosting training set is empty".into()));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("{} targets for {n} rows", y.len())));
    }
    let f0 = y.iter().sum::<f64>() / n as f64;
    let mut fitted = vec![f0; n];
    let mut resid: Vec<f64> = y.iter().map(|v| v - f0).collect();
    let mut loss = mean_sq(&resid);
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("initial boosting loss {loss}")));
    }
    let mut model = GbtModel {
        f0,
        stages: Vec::new(),
        nu: hyper.nu,
        loss_log: vec![loss],
    };
    let presorted = Presorted::new(x);
    let mut h = vec![0.0; n];
    let mut trial = vec![0.0; n];
    for _ in 0..hyper.max_stages {
        if loss == 0.0 {
            break;
        }
        let tree = presorted.fit(&resid, hyper.max_depth, hyper.min_leaf)?;
        for (r, hr) in h.iter_mut().enumerate() {
            *hr = tree.predict(x.row(r));
        }
        let eta = match hyper.eta_policy {
            EtaPolicy::FixedOne => 1.0,
            EtaPolicy::ExactLineSearch => {
                let hh: f64 = h.iter().map(|v| v * v).sum();
                if hh == 0.0 {
                    break;
                }
                resid.iter().zip(&h).map(|(r, v)| r * v).sum::<f64>() / hh
            }
        };
        let step = hyper.nu * eta;
        for r in 0..n {
            trial[r] = y[r] - (fitted[r] + step * h[r]);
        }
        let next = mean_sq(&trial);
        if !next.is_finite() {
            return Err(Error::NonFinite(format!("boosting loss {next}")));
        }
        if next > loss {
            break;
        }
        for r in 0..n {
            fitted[r] += step * h[r];
        }
        std::mem::swap(&mut resid, &mut trial);
        model.stages.push(Stage { tree, eta });
        model.loss_log.push(next);
        let rel = (loss - next) / loss;
        loss = next;
        if rel < hyper.tol {
            break;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(values: &[f64]) -> Matrix {
        Matrix::from_fn(values.len(), 1, |r, _| values[r])
    }

    #[test]
    fn constant_targets_give_one_leaf() {
        let x = col(&[0.0, 1.0, 2.0]);
        let t = fit_regression_tree(&x, &[2.5, 2.5, 2.5], 3, 1).unwrap();
        assert_eq!(t.nodes, vec![Node::Leaf { value: 2.5 }]);
        let t = fit_regression_tree(&col(&[4.0]), &[7.0], 3, 1).unwrap();
        assert_eq!(t.nodes, vec![Node::Leaf { value: 7.0 }]);
    }

    #[test]
    fn step_data_splits_at_midpoint() {
        let x = col(&[0.0, 1.0, 2.0, 3.0]);
        let t = fit_regression_tree(&x, &[0.0, 0.0, 1.0, 1.0], 1, 1).unwrap();
        match &t.nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!((*feature, *threshold), (0, 1.5));
            }
            other => panic!("expected split, got {other:?}"),
        }
        assert_eq!(t.predict(&[0.7]), 0.0);
        assert_eq!(t.predict(&[1.5]), 0.0);
        assert_eq!(t.predict(&[2.5]), 1.0);
        assert_eq!(tree_predict(&RegressionTree::constant(3.0), &[9.0]), 3.0);
    }

    #[test]
    fn empty_input_is_an_error() {
        let x = Matrix::zeros(0, 2);
        assert!(matches!(fit_regression_tree(&x, &[], 2, 1), Err(Error::EmptyInput(_))));
        assert!(matches!(fit_gbt(&x, &[], &GbtHyper::default()), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn min_leaf_is_respected() {
        let x = col(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        let t = fit_regression_tree(&x, &[9.0, 0.0, 0.0, 0.0, 0.0], 1, 2).unwrap();
        match &t.nodes[0] {
            Node::Split { threshold, .. } => assert_eq!(*threshold, 1.5),
            other => panic!("expected split, got {other:?}"),
        }
    }

    #[test]
    fn constant_y_boosting_has_no_stages() {
        let x = col(&[0.0, 1.0, 2.0]);
        let m = fit_gbt(&x, &[4.0, 4.0, 4.0], &GbtHyper::default()).unwrap();
        assert_eq!(m.f0, 4.0);
        assert!(m.stages.is_empty());
        assert_eq!(m.predict(&[10.0]), 4.0);
    }

    #[test]
    fn one_full_stage_fits_step_data() {
        let x = col(&[0.0, 1.0, 2.0, 3.0]);
        let y = [0.0, 0.0, 1.0, 1.0];
        let hyper = GbtHyper {
            nu: 1.0,
            max_stages: 1,
            max_depth: 1,
            min_leaf: 1,
            ..Default::default()
        };
        let m = fit_gbt(&x, &y, &hyper).unwrap();
        assert_eq!(m.stages.len(), 1);
        assert_eq!(*m.loss_log.last().unwrap(), 0.0);
        // f0 = 0.5, leaf value 0.5, nu = eta = 1
        assert_eq!(m.predict(&[2.5]), 0.5 + 0.5);
    }

    #[test]
    fn shrunken_first_stage() {
        let x = col(&[0.0, 1.0, 2.0, 3.0]);
        let y = [0.0, 0.0, 1.0, 1.0];
        let hyper = GbtHyper {
            max_stages: 1,
            max_depth: 1,
            min_leaf: 1,
            ..Default::default()
        };
        let m = fit_gbt(&x, &y, &hyper).unwrap();
        let tree = &m.stages[0].tree;
        for v in [0.0, 1.0, 2.5, 3.0] {
            assert_eq!(m.predict(&[v]), m.f0 + 0.01 * tree.predict(&[v]));
        }
        assert_eq!(m.stages[0].eta, 1.0);
    }

    #[test]
    fn json_round_trip() {
        let x = col(&[0.0, 1.0, 2.0, 3.0]);
        let m = fit_gbt(&x, &[0.0, 0.5, 1.0, 3.0], &GbtHyper { max_stages: 5, ..Default::default() }).unwrap();
        let s = models_to_json(std::slice::from_ref(&m)).unwrap();
        assert_eq!(models_from_json(&s).unwrap(), vec![m]);
    }
}
