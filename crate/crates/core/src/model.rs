//! Full forward pass: per-view encoders, attention fusion and the four
//! weighted losses.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::encoder::{encode, recon_loss, sample_edges, EdgeSampleBatch};
use crate::error::{Error, Result};
use crate::fusion::{attention_weights, fuse, view_importance, AttentionReduce, AttentionVars};
use crate::hin::HinGraph;
use crate::io::atomic_write;
use crate::metapath::ViewGraph;
use crate::numerics::{ParamStore, Tape, Tensor, Var};
use crate::objectives::{agreement_loss, alignment_loss, consistency_loss, platform_summary, CorruptionPlan};

/// Loss weights of the combined objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub reconstruction: f64,
    pub agreement: f64,
    pub consistency: f64,
    pub alignment: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { reconstruction: 1.0, agreement: 1.0, consistency: 1.0, alignment: 1.0 }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 4] {
        [self.reconstruction, self.agreement, self.consistency, self.alignment]
    }
}

/// Weighted sum of `(L_q, L_j, L_s, L_y)`.
pub fn total_loss(components: [f64; 4], weights: &LossWeights) -> f64 {
    components.iter().zip(weights.as_array()).map(|(c, w)| c * w).sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub agreement: f64,
    pub consistency: f64,
    pub alignment: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn components(&self) -> [f64; 4] {
        [self.reconstruction, self.agreement, self.consistency, self.alignment]
    }
}

/// Architecture choices.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelShape {
    /// Embedding width.
    pub k: usize,
    /// Attention projection width; `0` means `k`.
    pub k_att: usize,
    pub depth: usize,
    pub share_encoder: bool,
    pub share_agreement_disc: bool,
    pub attention_reduce: AttentionReduce,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape {
            k: 128,
            k_att: 0,
            depth: 1,
            share_encoder: false,
            share_agreement_disc: false,
            attention_reduce: AttentionReduce::MeanOverCourses,
        }
    }
}

/// Randomness consumed by one training step.
#[derive(Clone, Debug)]
pub struct EpochSamples {
    pub batches: Vec<EdgeSampleBatch>,
    pub agreement_plans: Vec<CorruptionPlan>,
    pub consistency_plans: Vec<CorruptionPlan>,
    pub alignment_plan: CorruptionPlan,
    /// Inverted-dropout mask over the input features.
    pub dropout_mask: Option<Tensor>,
}

/// Embeddings produced by a forward pass without dropout.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub labels: Vec<String>,
    pub views: Vec<Tensor>,
    pub unified: Tensor,
    pub alpha: Vec<f64>,
}

impl EmbeddingSet {
    /// View embeddings side by side, `N × (V·k)`.
    pub fn concatenated(&self) -> Tensor {
        let n = self.unified.rows();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|r| self.views.iter().flat_map(|v| v.row(r).iter().copied()).collect())
            .collect();
        Tensor::from_rows(&rows).expect("views share a row count")
    }

    /// Writes `embeddings_<label>.tsv` per view and `embeddings_unified.tsv`.
    pub fn write(&self, dir: &Path, g: &HinGraph) -> Result<()> {
        for (label, v) in self.labels.iter().zip(&self.views) {
            crate::hin::write_course_rows(&dir.join(format!("embeddings_{label}.tsv")), g, v, "e")?;
        }
        crate::hin::write_course_rows(&dir.join("embeddings_unified.tsv"), g, &self.unified, "e")
    }

    /// Writes the `metapath<TAB>alpha` table.
    pub fn write_attention(&self, path: &Path) -> Result<()> {
        atomic_write(path, |w| w.write_all(self.attention_tsv().as_bytes()))
    }

    pub fn attention_tsv(&self) -> String {
        let mut s = String::from("metapath\talpha\n");
        for (l, a) in self.labels.iter().zip(&self.alpha) {
            s.push_str(&format!("{l}\t{a:.4}\n"));
        }
        s
    }
}

/// Handles of one recorded forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub views: Vec<Var>,
    pub unified: Var,
    pub alpha: Var,
    pub reconstruction: Var,
    pub agreement: Var,
    pub consistency: Var,
    pub alignment: Var,
    pub total: Var,
}

impl ForwardVars {
    pub fn breakdown(&self, tape: &Tape) -> LossBreakdown {
        let v = |x: Var| tape.value(x).item();
        LossBreakdown {
            reconstruction: v(self.reconstruction),
            agreement: v(self.agreement),
            consistency: v(self.consistency),
            alignment: v(self.alignment),
            total: v(self.total),
        }
    }
}

/// Views and course features bound to an architecture.
#[derive(Clone, Debug)]
pub struct Model {
    views: Vec<ViewGraph>,
    features: Tensor,
    shape: ModelShape,
}

impl Model {
    pub fn new(views: Vec<ViewGraph>, features: Tensor, shape: ModelShape) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::Config("at least one meta-path view is required".into()));
        }
        if shape.k == 0 || shape.depth == 0 {
            return Err(Error::Config("k and depth must be positive".into()));
        }
        let n = features.rows();
        if n == 0 || features.cols() == 0 {
            return Err(Error::Config("feature matrix is empty".into()));
        }
        for v in &views {
            if v.n_courses() != n {
                return Err(Error::shape(
                    "model",
                    format!("view {} has {} courses, features have {n}", v.metapath, v.n_courses()),
                ));
            }
        }
        Ok(Model { views, features, shape })
    }

    pub fn views(&self) -> &[ViewGraph] {
        &self.views
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn n_courses(&self) -> usize {
        self.features.rows()
    }

    pub fn labels(&self) -> Vec<String> {
        self.views.iter().map(|v| v.metapath.label().to_string()).collect()
    }

    fn k_att(&self) -> usize {
        if self.shape.k_att == 0 { self.shape.k } else { self.shape.k_att }
    }

    fn encoder_names(&self, view: usize) -> Vec<String> {
        let owner = if self.shape.share_encoder {
            "shared".to_string()
        } else {
            self.views[view].metapath.label().to_string()
        };
        (0..self.shape.depth).map(|l| format!("encoder.{owner}.w{l}")).collect()
    }

    fn agreement_name(&self, view: usize) -> String {
        if self.shape.share_agreement_disc {
            "disc.agreement.shared".into()
        } else {
            format!("disc.agreement.{}", self.views[view].metapath.label())
        }
    }

    /// Glorot-uniform weights, zero attention bias.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore {
        let d = self.features.cols();
        let k = self.shape.k;
        let ka = self.k_att();
        let mut store = ParamStore::new();
        let mut glorot = |store: &mut ParamStore, name: String, rows: usize, cols: usize| {
            if store.slot(&name).is_some() {
                return;
            }
            let s = (6.0 / (rows + cols) as f64).sqrt();
            let dist = Uniform::new_inclusive(-s, s).expect("finite bounds");
            let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
            store.insert(name, Tensor::from_vec(rows, cols, data).expect("sized"), true);
        };
        for v in 0..self.views.len() {
            for (l, name) in self.encoder_names(v).into_iter().enumerate() {
                let rows = if l == 0 { d } else { k };
                glorot(&mut store, name, rows, k);
            }
        }
        glorot(&mut store, "attention.projection".into(), k, ka);
        store.insert("attention.bias", Tensor::zeros(1, ka), true);
        glorot(&mut store, "attention.query".into(), ka, 1);
        for v in 0..self.views.len() {
            glorot(&mut store, self.agreement_name(v), d, k);
        }
        glorot(&mut store, "disc.consistency".into(), k, k);
        glorot(&mut store, "disc.alignment".into(), k, k);
        store
    }

    pub fn sample_epoch<R: Rng + ?Sized>(&self, rng: &mut R, max_pos: usize, dropout: f64) -> EpochSamples {
        let n = self.n_courses();
        let batches = self.views.iter().map(|v| sample_edges(v, rng, max_pos)).collect();
        let agreement_plans = self.views.iter().map(|_| CorruptionPlan::sample(n, rng)).collect();
        let consistency_plans = self.views.iter().map(|_| CorruptionPlan::sample(n, rng)).collect();
        let alignment_plan = CorruptionPlan::sample(n, rng);
        let dropout_mask = (dropout > 0.0).then(|| {
            let keep = 1.0 / (1.0 - dropout);
            let data = (0..self.features.len())
                .map(|_| if rng.random::<f64>() < dropout { 0.0 } else { keep })
                .collect();
            Tensor::from_vec(n, self.features.cols(), data).expect("sized")
        });
        EpochSamples { batches, agreement_plans, consistency_plans, alignment_plan, dropout_mask }
    }

    /// Records the encoders and attention fusion.
    pub fn record_embeddings(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        dropout_mask: Option<&Tensor>,
    ) -> Result<(Var, Vec<Var>, Var, Var)> {
        let x = tape.constant(self.features.clone())?;
        let x_in = match dropout_mask {
            Some(mask) => {
                let m = tape.constant(mask.clone())?;
                tape.hadamard(x, m)?
            }
            None => x,
        };
        let mut views = Vec::with_capacity(self.views.len());
        for (i, view) in self.views.iter().enumerate() {
            let ws = self
                .encoder_names(i)
                .iter()
                .map(|name| tape.param(store, name))
                .collect::<Result<Vec<_>>>()?;
            views.push(encode(tape, &view.normalized, x_in, &ws)?);
        }
        let att = AttentionVars {
            projection: tape.param(store, "attention.projection")?,
            bias: tape.param(store, "attention.bias")?,
            query: tape.param(store, "attention.query")?,
        };
        let scores = views
            .iter()
            .map(|&h| view_importance(tape, h, att, self.shape.attention_reduce, self.views.len()))
            .collect::<Result<Vec<_>>>()?;
        let alpha = attention_weights(tape, &scores)?;
        let unified = fuse(tape, &views, alpha)?;
        Ok((x, views, alpha, unified))
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        samples: &EpochSamples,
        weights: &LossWeights,
    ) -> Result<ForwardVars> {
        let (x, views, alpha, unified) = self.record_embeddings(tape, store, samples.dropout_mask.as_ref())?;
        let reconstruction = recon_loss(tape, &views, &samples.batches)?;

        let disc_j = (0..self.views.len())
            .map(|v| tape.param(store, &self.agreement_name(v)))
            .collect::<Result<Vec<_>>>()?;
        let agreement = agreement_loss(tape, x, unified, &disc_j, &samples.agreement_plans)?;

        let disc_s = tape.param(store, "disc.consistency")?;
        let consistency = consistency_loss(tape, unified, &views, disc_s, &samples.consistency_plans)?;

        let summary = platform_summary(tape, unified)?;
        let disc_y = tape.param(store, "disc.alignment")?;
        let alignment = alignment_loss(tape, unified, summary, disc_y, &samples.alignment_plan)?;

        let mut total = tape.scale(reconstruction, weights.reconstruction)?;
        for (term, w) in [(agreement, weights.agreement), (consistency, weights.consistency), (alignment, weights.alignment)] {
            let scaled = tape.scale(term, w)?;
            total = tape.add(total, scaled)?;
        }
        Ok(ForwardVars { views, unified, alpha, reconstruction, agreement, consistency, alignment, total })
    }

    /// Loss values for fixed samples, without recording gradients.
    pub fn losses(&self, store: &ParamStore, samples: &EpochSamples, weights: &LossWeights) -> Result<LossBreakdown> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, store, samples, weights)?;
        Ok(f.breakdown(&tape))
    }

    /// Inference-mode embeddings and attention weights.
    pub fn embed(&self, store: &ParamStore) -> Result<EmbeddingSet> {
        let mut tape = Tape::new();
        let (_, views, alpha, unified) = self.record_embeddings(&mut tape, store, None)?;
        Ok(EmbeddingSet {
            labels: self.labels(),
            views: views.iter().map(|&v| tape.value(v).clone()).collect(),
            unified: tape.value(unified).clone(),
            alpha: tape.value(alpha).data().to_vec(),
        })
    }
}
