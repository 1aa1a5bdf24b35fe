//! Per-view GCN encoder, inner-product decoder and sampled reconstruction
//! loss.

use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::metapath::ViewGraph;
use crate::numerics::{sigmoid, softplus, CsrMatrix, Tape, Tensor, Var};

/// Propagates `x` through `weights.len()` GCN layers over `a_hat`, with ReLU
/// between layers and none after the last.
pub fn encode(tape: &mut Tape, a_hat: &Arc<CsrMatrix>, x: Var, weights: &[Var]) -> Result<Var> {
    if weights.is_empty() {
        return Err(Error::Config("encoder needs at least one layer".into()));
    }
    let mut h = x;
    for (l, &w) in weights.iter().enumerate() {
        if l > 0 {
            h = tape.relu(h)?;
        }
        // Â(XW) costs less than (ÂX)W whenever the layer narrows.
        let xw = tape.matmul(h, w)?;
        h = tape.sp_matmul(a_hat, xw)?;
    }
    Ok(h)
}

/// [`encode`] on plain tensors.
pub fn encode_tensor(view: &ViewGraph, x: &Tensor, weights: &[Tensor]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone())?;
    let ws = weights
        .iter()
        .map(|w| tape.constant(w.clone()))
        .collect::<Result<Vec<_>>>()?;
    let h = encode(&mut tape, &view.normalized, xv, &ws)?;
    Ok(tape.value(h).clone())
}

/// `σ(⟨h_i, h_j⟩)` for each requested pair. Only the requested entries of the
/// reconstructed adjacency are computed.
pub fn decode_pairs(h: &Tensor, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|&(i, j)| {
            if i >= h.rows() || j >= h.rows() {
                return Err(Error::shape("decode_pairs", format!("pair ({i}, {j}) with {} rows", h.rows())));
            }
            Ok(sigmoid(crate::numerics::dot(h.row(i), h.row(j))))
        })
        .collect()
}

/// Sampled positive (edge) and negative (non-edge) course pairs of one view.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EdgeSampleBatch {
    pub pos: Vec<(usize, usize)>,
    pub neg: Vec<(usize, usize)>,
}

impl EdgeSampleBatch {
    pub fn is_empty(&self) -> bool {
        self.pos.is_empty() && self.neg.is_empty()
    }
}

/// Samples up to `max_pos` edges uniformly without replacement and the same
/// number of distinct non-edges (fewer only when the view has fewer
/// non-edges). Pairs are returned with `i < j`.
pub fn sample_edges<R: Rng + ?Sized>(view: &ViewGraph, rng: &mut R, max_pos: usize) -> EdgeSampleBatch {
    let edges = view.edge_list();
    if edges.is_empty() {
        return EdgeSampleBatch::default();
    }
    let n_pos = max_pos.min(edges.len());
    let mut picked = index::sample(rng, edges.len(), n_pos).into_vec();
    picked.sort_unstable();
    let pos: Vec<(usize, usize)> = picked.into_iter().map(|i| edges[i]).collect();

    let n = view.n_courses();
    let total_pairs = n * (n - 1) / 2;
    let non_edges = total_pairs - edges.len();
    let n_neg = n_pos.min(non_edges);
    let mut neg = Vec::with_capacity(n_neg);
    if n_neg == 0 {
        return EdgeSampleBatch { pos, neg };
    }
    if non_edges <= 2 * n_neg {
        // Dense view: enumerate the complement and sample from it.
        let all: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| !view.has_edge(i, j))
            .collect();
        let mut picked = index::sample(rng, all.len(), n_neg).into_vec();
        picked.sort_unstable();
        neg.extend(picked.into_iter().map(|i| all[i]));
    } else {
        let mut seen = HashSet::with_capacity(n_neg);
        while neg.len() < n_neg {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i == j {
                continue;
            }
            let pair = (i.min(j), i.max(j));
            if view.has_edge(pair.0, pair.1) || !seen.insert(pair) {
                continue;
            }
            neg.push(pair);
        }
    }
    EdgeSampleBatch { pos, neg }
}

fn pair_logits(tape: &mut Tape, h: Var, pairs: &[(usize, usize)]) -> Result<Var> {
    let left: Arc<[usize]> = pairs.iter().map(|p| p.0).collect();
    let right: Arc<[usize]> = pairs.iter().map(|p| p.1).collect();
    let hl = tape.gather_rows(h, left)?;
    let hr = tape.gather_rows(h, right)?;
    tape.row_dot(hl, hr)
}

/// Mean of `-log σ(s)` over positive logits plus mean of `-log(1 - σ(s))`
/// over negative logits, in softplus form. Either side may be absent.
pub fn bce_terms(tape: &mut Tape, pos: Option<Var>, neg: Option<Var>) -> Result<Option<Var>> {
    let pos_term = match pos {
        Some(p) => {
            let m = tape.scale(p, -1.0)?;
            let s = tape.softplus(m)?;
            Some(tape.mean_all(s)?)
        }
        None => None,
    };
    let neg_term = match neg {
        Some(n) => {
            let s = tape.softplus(n)?;
            Some(tape.mean_all(s)?)
        }
        None => None,
    };
    Ok(match (pos_term, neg_term) {
        (Some(a), Some(b)) => Some(tape.add(a, b)?),
        (a, b) => a.or(b),
    })
}

/// Reconstruction loss of one view; `None` for an empty batch.
pub fn view_recon_loss(tape: &mut Tape, h: Var, batch: &EdgeSampleBatch) -> Result<Option<Var>> {
    let pos = if batch.pos.is_empty() { None } else { Some(pair_logits(tape, h, &batch.pos)?) };
    let neg = if batch.neg.is_empty() { None } else { Some(pair_logits(tape, h, &batch.neg)?) };
    bce_terms(tape, pos, neg)
}

/// Per-view reconstruction losses summed and divided by the number of views.
/// Views with empty batches contribute zero.
pub fn recon_loss(tape: &mut Tape, views: &[Var], batches: &[EdgeSampleBatch]) -> Result<Var> {
    if views.len() != batches.len() || views.is_empty() {
        return Err(Error::shape("recon_loss", format!("{} views, {} batches", views.len(), batches.len())));
    }
    let mut total: Option<Var> = None;
    for (&h, batch) in views.iter().zip(batches) {
        if let Some(l) = view_recon_loss(tape, h, batch)? {
            total = Some(match total {
                Some(t) => tape.add(t, l)?,
                None => l,
            });
        }
    }
    match total {
        Some(t) => tape.scale(t, 1.0 / views.len() as f64),
        None => tape.constant(Tensor::scalar(0.0)),
    }
}

/// Reconstruction loss of one view computed directly on values.
pub fn recon_loss_value(h: &Tensor, batch: &EdgeSampleBatch) -> Result<f64> {
    let logit = |&(i, j): &(usize, usize)| crate::numerics::dot(h.row(i), h.row(j));
    decode_pairs(h, &batch.pos)?;
    decode_pairs(h, &batch.neg)?;
    let mean = |v: Vec<f64>| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    Ok(mean(batch.pos.iter().map(|p| softplus(-logit(p))).collect())
        + mean(batch.neg.iter().map(|p| softplus(logit(p))).collect()))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::metapath::{normalize, MetaPath};

    fn view_from_dense(a: &Tensor) -> ViewGraph {
        let adjacency = CsrMatrix::from_dense(a);
        let normalized = Arc::new(normalize(&adjacency).unwrap());
        ViewGraph { metapath: MetaPath::mp1(), adjacency, normalized }
    }

    fn complete(n: usize) -> ViewGraph {
        let mut a = Tensor::filled(n, n, 1.0);
        for i in 0..n {
            a.set(i, i, 0.0);
        }
        view_from_dense(&a)
    }

    #[test]
    fn identity_propagation() {
        let v = view_from_dense(&Tensor::zeros(3, 3));
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(encode_tensor(&v, &x, &[Tensor::identity(2)]).unwrap(), x);
    }

    #[test]
    fn two_node_propagation_and_linearity() {
        let v = view_from_dense(&Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap());
        let h = encode_tensor(&v, &Tensor::identity(2), &[Tensor::identity(2)]).unwrap();
        assert_eq!(h, Tensor::filled(2, 2, 0.5));
        let w = Tensor::from_rows(&[vec![0.3, -1.0], vec![2.0, 0.5]]).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 4.0]]).unwrap();
        let h1 = encode_tensor(&v, &x, std::slice::from_ref(&w)).unwrap();
        let h3 = encode_tensor(&v, &x, &[w.map(|x| 3.0 * x)]).unwrap();
        assert!(h1.map(|x| 3.0 * x).max_abs_diff(&h3) < 1e-12);
    }

    #[test]
    fn decoder_values() {
        let z = Tensor::zeros(3, 2);
        assert_eq!(decode_pairs(&z, &[(0, 1), (1, 2)]).unwrap(), vec![0.5, 0.5]);
        let h = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let p = decode_pairs(&h, &[(0, 1)]).unwrap()[0];
        assert!((p - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!(decode_pairs(&h, &[(0, 2)]).is_err());
    }

    #[test]
    fn chance_level_loss() {
        let batch = EdgeSampleBatch { pos: vec![(0, 1)], neg: vec![(0, 2), (1, 2)] };
        let l = recon_loss_value(&Tensor::zeros(3, 4), &batch).unwrap();
        assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn complete_graph_has_no_negatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = sample_edges(&complete(3), &mut rng, 3);
        assert_eq!(b.pos.len(), 3);
        assert!(b.neg.is_empty());
        let empty = view_from_dense(&Tensor::zeros(4, 4));
        assert!(sample_edges(&empty, &mut rng, 3).is_empty());
    }

    #[test]
    fn dense_views_use_the_complement() {
        // 5 nodes, 10 pairs, 8 edges: only (0,1) and (2,3) are non-edges.
        let mut a = Tensor::filled(5, 5, 1.0);
        for i in 0..5 {
            a.set(i, i, 0.0);
        }
        for (i, j) in [(0, 1), (2, 3)] {
            a.set(i, j, 0.0);
            a.set(j, i, 0.0);
        }
        let v = view_from_dense(&a);
        let b = sample_edges(&v, &mut ChaCha8Rng::seed_from_u64(3), 4);
        assert_eq!(b.pos.len(), 4);
        assert_eq!(b.neg, vec![(0, 1), (2, 3)]);
    }
}
