//! Discriminator objectives on the fused embedding.
//!
//! Each objective scores positive pairs and row-shuffled negative pairs with
//! a bilinear discriminator `σ(xᵀ W y)` and applies binary cross-entropy:
//!
//! * agreement: raw features `X_i` against fused `h_i`, one discriminator per
//!   view (or shared), features shuffled for negatives;
//! * consistency: fused `h_i` against view embedding `h̃_i`, view embedding
//!   shuffled for negatives;
//! * alignment: fused `h_i` against the summary `M = σ(mean_i h_i)`, fused rows
//!   shuffled for negatives.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::encoder::bce_terms;
use crate::error::{Error, Result};
use crate::numerics::{dot, sigmoid, Tape, Tensor, Var};

/// A row permutation used to build negatives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorruptionPlan {
    permutation: Arc<[usize]>,
}

impl CorruptionPlan {
    pub fn new(permutation: Vec<usize>) -> Result<Self> {
        let n = permutation.len();
        let mut seen = vec![false; n];
        for &p in &permutation {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(Error::Invalid(format!("not a permutation of 0..{n}")));
            }
        }
        Ok(CorruptionPlan { permutation: permutation.into() })
    }

    pub fn identity(n: usize) -> Self {
        CorruptionPlan { permutation: (0..n).collect() }
    }

    /// Uniform random permutation of `0..n`, never the identity when `n > 1`.
    pub fn sample<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut p: Vec<usize> = (0..n).collect();
        loop {
            p.shuffle(rng);
            if n <= 1 || p.iter().enumerate().any(|(i, &v)| i != v) {
                break;
            }
        }
        CorruptionPlan { permutation: p.into() }
    }

    pub fn len(&self) -> usize {
        self.permutation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutation.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.permutation.iter().enumerate().all(|(i, &v)| i == v)
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub(crate) fn shared(&self) -> Arc<[usize]> {
        Arc::clone(&self.permutation)
    }
}

/// Row `i` of the output is row `plan[i]` of `t`.
pub fn corrupt_rows(t: &Tensor, plan: &CorruptionPlan) -> Result<Tensor> {
    if plan.len() != t.rows() {
        return Err(Error::shape("corrupt_rows", format!("plan of {} for {} rows", plan.len(), t.rows())));
    }
    t.gather_rows(plan.permutation())
}

/// Plain-value bilinear discriminator.
#[derive(Clone, Debug, PartialEq)]
pub struct BilinearDiscriminator {
    pub name: String,
    pub weights: Tensor,
}

impl BilinearDiscriminator {
    pub fn score(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != self.weights.rows() || y.len() != self.weights.cols() {
            return Err(Error::shape(
                "discriminator",
                format!("{} x {:?} x {}", x.len(), self.weights.shape(), y.len()),
            ));
        }
        let wy: Vec<f64> = (0..self.weights.rows()).map(|r| dot(self.weights.row(r), y)).collect();
        Ok(sigmoid(dot(x, &wy)))
    }
}

fn bce(tape: &mut Tape, pos: Var, neg: Var) -> Result<Var> {
    Ok(bce_terms(tape, Some(pos), Some(neg))?.expect("both sides present"))
}

fn mean_of(tape: &mut Tape, terms: Vec<Var>) -> Result<Var> {
    let n = terms.len();
    let mut it = terms.into_iter();
    let mut acc = it.next().ok_or_else(|| Error::Invalid("no views".into()))?;
    for t in it {
        acc = tape.add(acc, t)?;
    }
    tape.scale(acc, 1.0 / n as f64)
}

/// Agreement between raw features and the fused embedding. `disc` holds one
/// `d × k` matrix per view (repeat the same var to share), `plans` one
/// feature permutation per view.
pub fn agreement_loss(tape: &mut Tape, x: Var, h: Var, disc: &[Var], plans: &[CorruptionPlan]) -> Result<Var> {
    if disc.len() != plans.len() || disc.is_empty() {
        return Err(Error::shape("agreement_loss", format!("{} discriminators, {} plans", disc.len(), plans.len())));
    }
    let mut terms = Vec::with_capacity(disc.len());
    for (&w, plan) in disc.iter().zip(plans) {
        // (X[perm] W)_i = (X W)[perm]_i, so the product is shared.
        let xw = tape.matmul(x, w)?;
        let pos = tape.row_dot(xw, h)?;
        let xw_neg = tape.gather_rows(xw, plan.shared())?;
        let neg = tape.row_dot(xw_neg, h)?;
        terms.push(bce(tape, pos, neg)?);
    }
    mean_of(tape, terms)
}

/// Consistency between the fused embedding and each view embedding with one
/// shared `k × k` discriminator.
pub fn consistency_loss(tape: &mut Tape, h: Var, views: &[Var], disc: Var, plans: &[CorruptionPlan]) -> Result<Var> {
    if views.len() != plans.len() || views.is_empty() {
        return Err(Error::shape("consistency_loss", format!("{} views, {} plans", views.len(), plans.len())));
    }
    let hw = tape.matmul(h, disc)?;
    let mut terms = Vec::with_capacity(views.len());
    for (&v, plan) in views.iter().zip(plans) {
        let pos = tape.row_dot(hw, v)?;
        let shuffled = tape.gather_rows(v, plan.shared())?;
        let neg = tape.row_dot(hw, shuffled)?;
        terms.push(bce(tape, pos, neg)?);
    }
    mean_of(tape, terms)
}

/// `σ(mean of the rows of h)` as a `1 × k` row.
pub fn platform_summary(tape: &mut Tape, h: Var) -> Result<Var> {
    let m = tape.mean_rows(h)?;
    tape.sigmoid(m)
}

pub fn platform_summary_value(h: &Tensor) -> Result<Tensor> {
    if h.rows() == 0 {
        return Err(Error::Invalid("platform summary of an empty embedding".into()));
    }
    Ok(h.mean_rows().map(sigmoid))
}

/// Alignment between fused course rows and the platform summary `m`.
pub fn alignment_loss(tape: &mut Tape, h: Var, m: Var, disc: Var, plan: &CorruptionPlan) -> Result<Var> {
    let mt = tape.transpose(m)?;
    let wm = tape.matmul(disc, mt)?;
    let pos = tape.matmul(h, wm)?;
    let neg = tape.gather_rows(pos, plan.shared())?;
    bce(tape, pos, neg)
}
