#![allow(dead_code)]

use coldmap::dataset::{RatingMatrix, RatingRecord};
use coldmap::gbt::{Node, RegressionTree};
use coldmap::linalg::Matrix;
use coldmap::rng::{seeded, unit_f64, SeededRng};
use coldmap::similarity::{no_interest_probability, Component, SimilarityMatrix};
use rand::Rng;

pub fn rng(seed: u64) -> SeededRng {
    seeded(seed)
}

/// Random ratings with each cell observed with probability `p`; at least one
/// rating per user and per item.
pub fn random_matrix(rng: &mut SeededRng, n: usize, m: usize, p: f64) -> RatingMatrix {
    let mut recs = Vec::new();
    for u in 0..n {
        for i in 0..m {
            if unit_f64(rng) < p || i == u % m || u == i % n {
                recs.push(RatingRecord::new(format!("u{u}"), format!("i{i}"), rng.random_range(1..=5)));
            }
        }
    }
    RatingMatrix::from_records(&recs).unwrap()
}

pub fn random_similarity(rng: &mut SeededRng, n: usize) -> SimilarityMatrix {
    SimilarityMatrix::from_fn(n, Component::Combined, |_, _| unit_f64(rng))
}

pub fn random_matrix_values(rng: &mut SeededRng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * (2.0 * unit_f64(rng) - 1.0))
}

/// Direct item-by-item no-interest similarity.
pub fn s2_brute_force(m: &RatingMatrix, u: usize, v: usize, gamma2: f64, sigma: f64, map: &[f64; 5], high: u8) -> f64 {
    let mut sum = 0.0;
    let mut rest = 0usize;
    for i in 0..m.n_items() {
        if m.get(u, i).is_some() && m.get(v, i).is_some() {
            continue;
        }
        rest += 1;
        sum += no_interest_probability(m, u, i, sigma, map, high)
            - no_interest_probability(m, v, i, sigma, map, high);
    }
    if rest == 0 {
        1.0
    } else {
        (-gamma2 * sum.abs() / rest as f64).exp()
    }
}

/// Reference CART by exhaustive enumeration of every split, with children
/// scored by their directly computed SSE. Nodes are emitted in preorder.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleNode {
    Leaf(f64),
    Split(usize, f64),
}

fn sse(y: &[f64], rows: &[usize]) -> f64 {
    let mean = rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64;
    rows.iter().map(|&r| (y[r] - mean).powi(2)).sum()
}

pub fn oracle_tree(x: &Matrix, y: &[f64], max_depth: usize, min_leaf: usize) -> Vec<OracleNode> {
    let mut out = Vec::new();
    let rows: Vec<usize> = (0..x.rows()).collect();
    oracle_grow(x, y, &rows, 0, max_depth, min_leaf, &mut out);
    out
}

fn oracle_grow(
    x: &Matrix,
    y: &[f64],
    rows: &[usize],
    depth: usize,
    max_depth: usize,
    min_leaf: usize,
    out: &mut Vec<OracleNode>,
) {
    let mean = rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64;
    let here = out.len();
    out.push(OracleNode::Leaf(mean));
    let node_sse = sse(y, rows);
    let constant = rows.iter().all(|&r| y[r] == y[rows[0]]);
    if depth >= max_depth || rows.len() < 2 * min_leaf || constant {
        return;
    }
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..x.cols() {
        let mut values: Vec<f64> = rows.iter().map(|&r| x.get(r, f)).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&row| x.get(row, f) <= t);
            if l.len() < min_leaf || r.len() < min_leaf {
                continue;
            }
            let children = sse(y, &l) + sse(y, &r);
            let better = match best {
                None => true,
                Some((b, _, _)) => children < b - 1e-9 * node_sse.max(1e-300),
            };
            if better {
                best = Some((children, f, t));
            }
        }
    }
    let Some((children, f, t)) = best else {
        return;
    };
    if node_sse - children <= 1e-9 * node_sse {
        return;
    }
    out[here] = OracleNode::Split(f, t);
    let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&row| x.get(row, f) <= t);
    oracle_grow(x, y, &l, depth + 1, max_depth, min_leaf, out);
    oracle_grow(x, y, &r, depth + 1, max_depth, min_leaf, out);
}

/// The fitted tree in the oracle's preorder form.
pub fn preorder(tree: &RegressionTree) -> Vec<OracleNode> {
    fn walk(nodes: &[Node], id: usize, out: &mut Vec<OracleNode>) {
        match &nodes[id] {
            Node::Leaf { value } => out.push(OracleNode::Leaf(*value)),
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                out.push(OracleNode::Split(*feature, *threshold));
                walk(nodes, *left, out);
                walk(nodes, *right, out);
            }
        }
    }
    let mut out = Vec::new();
    walk(&tree.nodes, 0, &mut out);
    out
}

pub fn same_tree(a: &[OracleNode], b: &[OracleNode]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|p| match p {
            (OracleNode::Leaf(x), OracleNode::Leaf(y)) => (x - y).abs() <= 1e-12 * (1.0 + x.abs()),
            (OracleNode::Split(f, t), OracleNode::Split(g, s)) => f == g && t == s,
            _ => false,
        })
}

/// Small-integer regression dataset, so ties occur in both x and y.
pub fn small_dataset(rng: &mut SeededRng, n: usize, k: usize) -> (Matrix, Vec<f64>) {
    let x = Matrix::from_fn(n, k, |_, _| rng.random_range(0..4) as f64);
    let y = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
    (x, y)
}

pub fn verdict(name: &str, pass: bool, detail: &str) {
    println!("criterion {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}
