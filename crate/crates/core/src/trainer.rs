//! Full-batch optimization of the combined objective.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hin::{FeatureMatrix, HinGraph};
use crate::io::atomic_write;
use crate::metapath::{project_all_with, MetaPath};
use crate::model::{EmbeddingSet, LossBreakdown, LossWeights, Model, ModelShape};
use crate::numerics::{Adam, Optimizer, ParamStore, Sgd, Tape};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "adam" => Ok(Self::Adam),
            "sgd" => Ok(Self::Sgd),
            _ => Err(format!("unknown optimizer '{s}' (adam | sgd)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda: LossWeights,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    /// Expected feature width; checked against the feature matrix.
    pub d: usize,
    pub shape: ModelShape,
    pub seed: u64,
    /// Positive pairs sampled per view and epoch.
    pub max_pos: usize,
    /// Epoch interval for checkpoint callbacks; `0` disables them.
    pub checkpoint_every: usize,
    pub optimizer: OptimizerKind,
    /// Store shared-intermediate counts in the view adjacency.
    pub weighted_adjacency: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: LossWeights::default(),
            epochs: 200,
            lr: 0.001,
            weight_decay: 0.001,
            dropout: 0.1,
            d: 128,
            shape: ModelShape::default(),
            seed: 0,
            max_pos: 1000,
            checkpoint_every: 0,
            optimizer: OptimizerKind::Adam,
            weighted_adjacency: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let l = self.lambda.as_array();
        if l.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if l.iter().all(|v| *v == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.shape.k == 0 || self.shape.depth == 0 || self.d == 0 {
            return Err(Error::Config("k, d and depth must be positive".into()));
        }
        Ok(())
    }

    /// Key/value pairs in the config-file vocabulary.
    pub fn echo(&self) -> Vec<(&'static str, String)> {
        vec![
            ("lambda_q", self.lambda.reconstruction.to_string()),
            ("lambda_j", self.lambda.agreement.to_string()),
            ("lambda_s", self.lambda.consistency.to_string()),
            ("lambda_y", self.lambda.alignment.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr", self.lr.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("dropout", self.dropout.to_string()),
            ("d", self.d.to_string()),
            ("k", self.shape.k.to_string()),
            ("k_att", self.shape.k_att.to_string()),
            ("encoder.depth", self.shape.depth.to_string()),
            ("share_encoder", self.shape.share_encoder.to_string()),
            ("share_agreement_disc", self.shape.share_agreement_disc.to_string()),
            ("attention_reduce", self.shape.attention_reduce.to_string()),
            ("seed", self.seed.to_string()),
            ("max_pos", self.max_pos.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("optimizer", self.optimizer.to_string()),
            ("weighted", self.weighted_adjacency.to_string()),
        ]
    }
}

/// Which discriminator objectives a loss variant adds to the base model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossTerm {
    Agreement,
    Consistency,
    Alignment,
}

impl LossTerm {
    pub const ALL: [LossTerm; 3] = [LossTerm::Agreement, LossTerm::Consistency, LossTerm::Alignment];

    pub fn as_str(self) -> &'static str {
        match self {
            LossTerm::Agreement => "J",
            LossTerm::Consistency => "S",
            LossTerm::Alignment => "Y",
        }
    }
}

/// `cfg` with the weights of every objective not in `variant` set to zero.
/// The reconstruction weight is left as is.
pub fn loss_variant(cfg: &TrainConfig, variant: &[LossTerm]) -> TrainConfig {
    let mut out = cfg.clone();
    if !variant.contains(&LossTerm::Agreement) {
        out.lambda.agreement = 0.0;
    }
    if !variant.contains(&LossTerm::Consistency) {
        out.lambda.consistency = 0.0;
    }
    if !variant.contains(&LossTerm::Alignment) {
        out.lambda.alignment = 0.0;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub losses: LossBreakdown,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub rows: Vec<EpochRecord>,
    pub alpha: Vec<(String, f64)>,
    pub wall_clock: Duration,
    pub seed: u64,
    pub config: TrainConfig,
}

pub const LOG_HEADER: &str = "epoch\tL_q\tL_j\tL_s\tL_y\ttotal";

impl TrainReport {
    pub fn log_tsv(&self) -> String {
        let mut s = format!("{LOG_HEADER}\n");
        for r in &self.rows {
            s.push_str(&log_line(r));
            s.push('\n');
        }
        s
    }

    pub fn write_log(&self, path: &Path) -> Result<()> {
        atomic_write(path, |w| w.write_all(self.log_tsv().as_bytes()))
    }

    /// Mean total loss over the last `n` epochs.
    pub fn tail_mean(&self, n: usize) -> Option<f64> {
        let n = n.min(self.rows.len());
        (n > 0).then(|| self.rows[self.rows.len() - n..].iter().map(|r| r.losses.total).sum::<f64>() / n as f64)
    }
}

pub fn log_line(r: &EpochRecord) -> String {
    let l = &r.losses;
    format!("{}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}", r.epoch, l.reconstruction, l.agreement, l.consistency, l.alignment, l.total)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub params: ParamStore,
    pub embeddings: EmbeddingSet,
    pub report: TrainReport,
}

/// Seeded generator streams so that initialization and per-epoch sampling
/// are independent of one another.
pub fn run_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const INIT_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;

/// Projects the meta-path views and trains on them.
pub fn train(g: &HinGraph, x: &FeatureMatrix, mps: &[MetaPath], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let views = project_all_with(g, mps, cfg.weighted_adjacency)?;
    let model = Model::new(views, x.clone(), cfg.shape.clone())?;
    train_model(model, cfg, |_, _| Ok(()))
}

/// Trains `model`. `on_checkpoint(epoch, params)` runs after every
/// `cfg.checkpoint_every` epochs.
pub fn train_model<F>(model: Model, cfg: &TrainConfig, mut on_checkpoint: F) -> Result<TrainOutcome>
where
    F: FnMut(usize, &ParamStore) -> Result<()>,
{
    cfg.validate()?;
    if model.features().cols() != cfg.d {
        return Err(Error::Config(format!(
            "feature width {} does not match d = {}",
            model.features().cols(),
            cfg.d
        )));
    }
    if model.n_courses() == 1 {
        log::warn!("single course: corruption negatives equal positives");
    }
    let start = Instant::now();
    let mut params = model.init_params(&mut run_rng(cfg.seed, INIT_STREAM));
    let mut rng = run_rng(cfg.seed, SAMPLE_STREAM);
    let mut optimizer: Box<dyn Optimizer> = match cfg.optimizer {
        OptimizerKind::Adam => Box::new(Adam::new(cfg.lr, cfg.weight_decay)),
        OptimizerKind::Sgd => Box::new(Sgd { lr: cfg.lr, weight_decay: cfg.weight_decay }),
    };
    let mut rows = Vec::with_capacity(cfg.epochs);
    let mut tape = Tape::new();
    let mut last_good = params.clone();

    for epoch in 1..=cfg.epochs {
        let samples = model.sample_epoch(&mut rng, cfg.max_pos, cfg.dropout);
        tape.reset();
        let diverged = |last_good: &ParamStore| Error::Diverged { epoch, last_good: Box::new(last_good.clone()) };
        let fwd = match model.forward(&mut tape, &params, &samples, &cfg.lambda) {
            Ok(f) => f,
            Err(Error::NumericFault { .. }) => return Err(diverged(&last_good)),
            Err(e) => return Err(e),
        };
        let losses = fwd.breakdown(&tape);
        if !losses.total.is_finite() {
            return Err(diverged(&last_good));
        }
        last_good.clone_from(&params);
        params.zero_grads();
        tape.backward(fwd.total, 1.0, &mut params)?;
        optimizer.step(&mut params);
        let record = EpochRecord { epoch, losses };
        log::debug!("{}", log_line(&record));
        rows.push(record);
        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
            on_checkpoint(epoch, &params)?;
        }
    }
    if !params.is_finite() {
        return Err(Error::Diverged { epoch: cfg.epochs, last_good: Box::new(last_good) });
    }

    let embeddings = model.embed(&params)?;
    let report = TrainReport {
        rows,
        alpha: embeddings.labels.iter().cloned().zip(embeddings.alpha.iter().copied()).collect(),
        wall_clock: start.elapsed(),
        seed: cfg.seed,
        config: cfg.clone(),
    };
    Ok(TrainOutcome { model, params, embeddings, report })
}
