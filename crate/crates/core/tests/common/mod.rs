#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use coursegraph::hin::{EdgeType, HinBuilder, HinGraph, NodeType};
use coursegraph::metapath::{normalize, MetaPath, ViewGraph};
use coursegraph::numerics::{CsrMatrix, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random typed network with at most `max_nodes` nodes and at least one course.
pub fn random_hin(seed: u64, max_nodes: usize) -> HinGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = rng.random_range(1..=max_nodes);
    let mut b = HinBuilder::new();
    let mut ids: BTreeMap<NodeType, Vec<String>> = BTreeMap::new();
    for i in 0..total {
        let kind = if i == 0 { NodeType::Course } else { NodeType::ALL[rng.random_range(0..4)] };
        let id = format!("n{i}");
        b.node(id.clone(), kind);
        ids.entry(kind).or_default().push(id);
    }
    let courses = ids.get(&NodeType::Course).cloned().unwrap_or_default();
    let density: f64 = rng.random_range(0.0..0.6);
    for kind in [NodeType::Student, NodeType::Teacher, NodeType::Subject] {
        let edge = EdgeType::for_partner(kind).unwrap();
        for p in ids.get(&kind).map(Vec::as_slice).unwrap_or(&[]) {
            for c in &courses {
                if rng.random_bool(density) {
                    b.edge(p.clone(), c.clone(), edge);
                }
            }
        }
    }
    b.build().unwrap()
}

/// Counts length-2 paths course–partner–course by walking pairs of edges.
pub fn brute_force_paths(g: &HinGraph, partner: NodeType) -> Vec<Vec<usize>> {
    let n = g.n_courses();
    let mut count = vec![vec![0usize; n]; n];
    let edge_kind = EdgeType::for_partner(partner).unwrap();
    let edges: Vec<_> = g.edges().iter().filter(|e| e.kind == edge_kind).collect();
    for e1 in &edges {
        for e2 in &edges {
            if e1.src != e2.src {
                continue;
            }
            let a = g.course_index(e1.dst).unwrap();
            let b = g.course_index(e2.dst).unwrap();
            if a != b {
                count[a][b] += 1;
            }
        }
    }
    count
}

/// `D^{-1/2} (A + I) D^{-1/2}` on dense values.
pub fn dense_normalize(a: &Tensor) -> Tensor {
    let n = a.rows();
    let mut tilde = a.clone();
    for i in 0..n {
        tilde.set(i, i, tilde.get(i, i) + 1.0);
    }
    let deg: Vec<f64> = (0..n).map(|i| tilde.row(i).iter().sum()).collect();
    let mut out = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, tilde.get(i, j) / deg[i].sqrt() / deg[j].sqrt());
        }
    }
    out
}

pub fn random_symmetric(seed: u64, max_n: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_n);
    let p: f64 = rng.random();
    let mut a = Tensor::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                a.set(i, j, 1.0);
                a.set(j, i, 1.0);
            }
        }
    }
    a
}

pub fn view_from_dense(mp: MetaPath, a: &Tensor) -> ViewGraph {
    let adjacency = CsrMatrix::from_dense(a);
    let normalized = Arc::new(normalize(&adjacency).unwrap());
    ViewGraph { metapath: mp, adjacency, normalized }
}

/// Six courses joined by students, teachers and subjects so that every
/// view has edges and non-edges.
pub fn six_course_hin() -> HinGraph {
    let mut b = HinBuilder::new();
    for c in 0..6 {
        b.node(format!("c{c}"), NodeType::Course);
    }
    for s in 0..4 {
        b.node(format!("s{s}"), NodeType::Student);
        for c in [s, s + 1] {
            b.edge(format!("s{s}"), format!("c{c}"), EdgeType::Click);
        }
    }
    for t in 0..2 {
        b.node(format!("t{t}"), NodeType::Teacher);
        for c in [t, t + 3] {
            b.edge(format!("t{t}"), format!("c{c}"), EdgeType::Upload);
        }
    }
    b.node("sub0", NodeType::Subject).node("sub1", NodeType::Subject);
    for c in [0, 2, 4] {
        b.edge("sub0", format!("c{c}"), EdgeType::Include);
    }
    for c in [1, 5] {
        b.edge("sub1", format!("c{c}"), EdgeType::Include);
    }
    b.build().unwrap()
}

pub fn seeded_tensor(rows: usize, cols: usize, seed: u64, scale: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

pub fn naive_sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Binary cross-entropy of positive and negative scores, averaged per side.
pub fn naive_bce(pos: &[f64], neg: &[f64]) -> f64 {
    let side = |v: &[f64], positive: bool| {
        if v.is_empty() {
            return 0.0;
        }
        v.iter()
            .map(|&s| {
                let p = naive_sigmoid(s);
                -(if positive { p } else { 1.0 - p }).ln()
            })
            .sum::<f64>()
            / v.len() as f64
    };
    side(pos, true) + side(neg, false)
}

/// `xᵀ W y` with explicit loops.
pub fn bilinear(x: &[f64], w: &Tensor, y: &[f64]) -> f64 {
    let mut s = 0.0;
    for a in 0..x.len() {
        for b in 0..y.len() {
            s += x[a] * w.get(a, b) * y[b];
        }
    }
    s
}

/// Per-class counts of one fixture.
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

pub fn class_counts(y: &[usize], pred: &[usize], classes: usize) -> Vec<ClassCounts> {
    (0..classes)
        .map(|c| ClassCounts {
            tp: y.iter().zip(pred).filter(|&(&t, &p)| t == c && p == c).count(),
            fp: y.iter().zip(pred).filter(|&(&t, &p)| t != c && p == c).count(),
            fn_: y.iter().zip(pred).filter(|&(&t, &p)| t == c && p != c).count(),
        })
        .collect()
}

/// Macro-F1 from per-class counts via `2TP / (2TP + FP + FN)`.
pub fn oracle_macro_f1(y: &[usize], pred: &[usize], classes: usize) -> f64 {
    let scores: Vec<f64> = class_counts(y, pred, classes)
        .into_iter()
        .filter(|c| c.tp + c.fp + c.fn_ > 0)
        .map(|c| 2.0 * c.tp as f64 / (2 * c.tp + c.fp + c.fn_) as f64)
        .collect();
    scores.iter().sum::<f64>() / scores.len() as f64
}

/// Metric fixtures `(y, ŷ, accuracy, macro-F1)`; the first five carry
/// hand-computed values, the rest are checked against the count oracle.
pub fn metric_fixtures() -> Vec<(Vec<usize>, Vec<usize>, Option<(f64, f64)>)> {
    let mut f = vec![
        (vec![0, 0, 1, 1], vec![0, 1, 1, 1], Some((0.75, (2.0 / 3.0 + 0.8) / 2.0))),
        (vec![0, 1, 2], vec![0, 1, 2], Some((1.0, 1.0))),
        (vec![0, 1], vec![1, 0], Some((0.0, 0.0))),
        (vec![2, 2, 2, 2], vec![2, 2, 2, 0], Some((0.75, (6.0 / 7.0 + 0.0) / 2.0))),
        (vec![0, 1, 2, 3, 4, 5], vec![0, 1, 2, 3, 4, 4], Some((5.0 / 6.0, (4.0 + 2.0 / 3.0) / 6.0))),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..15 {
        let n = 3 + i * 2;
        let classes = 2 + i % 5;
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let pred: Vec<usize> = y
            .iter()
            .map(|&t| if rng.random_bool(0.6) { t } else { rng.random_range(0..classes) })
            .collect();
        f.push((y, pred, None));
    }
    f
}
