//! Semantic attention over view embeddings.
//!
//! Each view `i` gets a scalar importance
//! `a_i = reduce_j tanh(qᵀ(W'ᵀ h̃_ij + b))` from parameters shared by all
//! views; `α = softmax(a)` and the unified embedding is `h = Σ α_i h̃_i`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{softmax, Tape, Tensor, Var};

/// How per-course attention scores are reduced to one view score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AttentionReduce {
    /// Mean over courses.
    #[default]
    MeanOverCourses,
    /// Sum over courses divided by the number of views.
    SumOverViews,
}

impl fmt::Display for AttentionReduce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionReduce::MeanOverCourses => "mean",
            AttentionReduce::SumOverViews => "sum_over_views",
        })
    }
}

impl FromStr for AttentionReduce {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Self::MeanOverCourses),
            "sum_over_views" => Ok(Self::SumOverViews),
            _ => Err(format!("unknown attention reduction '{s}' (mean | sum_over_views)")),
        }
    }
}

/// Attention parameters recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    /// `k × k'` projection.
    pub projection: Var,
    /// `1 × k'` bias.
    pub bias: Var,
    /// `k' × 1` attention vector.
    pub query: Var,
}

/// Plain-value attention parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub projection: Tensor,
    pub bias: Tensor,
    pub query: Tensor,
}

impl AttentionParams {
    fn record(&self, tape: &mut Tape) -> Result<AttentionVars> {
        Ok(AttentionVars {
            projection: tape.constant(self.projection.clone())?,
            bias: tape.constant(self.bias.clone())?,
            query: tape.constant(self.query.clone())?,
        })
    }
}

pub fn view_importance(
    tape: &mut Tape,
    h: Var,
    p: AttentionVars,
    reduce: AttentionReduce,
    n_views: usize,
) -> Result<Var> {
    let proj = tape.matmul(h, p.projection)?;
    let proj = tape.add_bias(proj, p.bias)?;
    let s = tape.matmul(proj, p.query)?;
    let s = tape.tanh(s)?;
    match reduce {
        AttentionReduce::MeanOverCourses => tape.mean_all(s),
        AttentionReduce::SumOverViews => {
            let total = tape.sum_all(s)?;
            tape.scale(total, 1.0 / n_views.max(1) as f64)
        }
    }
}

/// Mean-over-courses importance of one view on plain values.
pub fn view_importance_value(h: &Tensor, p: &AttentionParams) -> Result<f64> {
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone())?;
    let vars = p.record(&mut tape)?;
    let a = view_importance(&mut tape, hv, vars, AttentionReduce::MeanOverCourses, 1)?;
    Ok(tape.value(a).item())
}

/// Softmax of the view scores as a `1 × V` row.
pub fn attention_weights(tape: &mut Tape, scores: &[Var]) -> Result<Var> {
    let a = tape.concat_scalars(scores)?;
    tape.softmax_vec(a)
}

pub fn normalize_weights(a: &[f64]) -> Result<Vec<f64>> {
    if a.is_empty() || a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("view scores must be finite and non-empty".into()));
    }
    Ok(softmax(a))
}

/// `Σ_i α_i h̃_i` with `alpha` a `1 × V` row.
pub fn fuse(tape: &mut Tape, views: &[Var], alpha: Var) -> Result<Var> {
    if views.is_empty() || tape.value(alpha).shape() != (1, views.len()) {
        return Err(Error::shape(
            "fuse",
            format!("{} views with weights {:?}", views.len(), tape.value(alpha).shape()),
        ));
    }
    let mut out: Option<Var> = None;
    for (i, &h) in views.iter().enumerate() {
        let w = tape.element(alpha, i)?;
        let term = tape.mul_scalar(h, w)?;
        out = Some(match out {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    Ok(out.expect("at least one view"))
}

pub fn fuse_tensors(views: &[Tensor], alpha: &[f64]) -> Result<Tensor> {
    if views.is_empty() || views.len() != alpha.len() {
        return Err(Error::shape("fuse", format!("{} views, {} weights", views.len(), alpha.len())));
    }
    let mut tape = Tape::new();
    let vs = views
        .iter()
        .map(|v| tape.constant(v.clone()))
        .collect::<Result<Vec<_>>>()?;
    let a = tape.constant(Tensor::row_vector(alpha.to_vec()))?;
    let h = fuse(&mut tape, &vs, a)?;
    Ok(tape.value(h).clone())
}
