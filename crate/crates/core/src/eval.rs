//! Frozen-embedding course-quality classification, metrics and ablations.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::hin::{CourseLabels, FeatureMatrix, HinGraph};
use crate::io::atomic_write;
use crate::metapath::{combo_label, project_all_with, MetaPath, ViewGraph};
use crate::model::{EmbeddingSet, Model};
use crate::numerics::{Adam, Optimizer, ParamStore, Tape, Tensor};
use crate::par;
use crate::trainer::{loss_variant, run_rng, train_model, LossTerm, TrainConfig};

pub const NUM_CLASSES: usize = 6;
const SPLIT_STREAM: u64 = 3;

/// Disjoint train/test partition of the labelled courses.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    pub ratio: f64,
}

/// Shuffles the labelled courses and puts the first `floor(ratio · n)` in
/// the training set.
pub fn split(labels: &CourseLabels, ratio: f64, seed: u64) -> Result<SplitPlan> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} outside (0, 1)")));
    }
    if labels.len() < 2 {
        return Err(Error::Invalid("need at least two labelled courses to split".into()));
    }
    let mut ids = labels.courses();
    ids.shuffle(&mut run_rng(seed, SPLIT_STREAM));
    let n_train = (ratio * ids.len() as f64).floor() as usize;
    let test = ids.split_off(n_train);
    Ok(SplitPlan { train: ids, test, seed, ratio })
}

pub fn accuracy(y: &[usize], pred: &[usize]) -> Result<f64> {
    check_lengths(y, pred)?;
    Ok(y.iter().zip(pred).filter(|(a, b)| a == b).count() as f64 / y.len() as f64)
}

fn check_lengths(y: &[usize], pred: &[usize]) -> Result<()> {
    if y.is_empty() || y.len() != pred.len() {
        return Err(Error::Invalid(format!("metric on {} labels and {} predictions", y.len(), pred.len())));
    }
    Ok(())
}

/// `matrix[true][predicted]` counts.
pub fn confusion_matrix(y: &[usize], pred: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    check_lengths(y, pred)?;
    let mut m = vec![vec![0; classes]; classes];
    for (&t, &p) in y.iter().zip(pred) {
        if t >= classes || p >= classes {
            return Err(Error::Invalid(format!("class index outside 0..{classes}")));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Unweighted mean of per-class F1 over the classes present in `y` or
/// `pred`. A class with no true positives scores 0.
pub fn macro_f1(y: &[usize], pred: &[usize], classes: usize) -> Result<f64> {
    let m = confusion_matrix(y, pred, classes)?;
    let mut sum = 0.0;
    let mut present = 0;
    for c in 0..classes {
        let tp = m[c][c] as f64;
        let actual: usize = m[c].iter().sum();
        let predicted: usize = m.iter().map(|row| row[c]).sum();
        if actual == 0 && predicted == 0 {
            continue;
        }
        present += 1;
        let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
        let recall = if actual > 0 { tp / actual as f64 } else { 0.0 };
        if precision + recall > 0.0 {
            sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    Ok(sum / present as f64)
}

#[derive(Clone, Debug)]
pub struct ClassifierConfig {
    pub classes: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { classes: NUM_CLASSES, epochs: 500, lr: 0.01 }
    }
}

/// Multinomial logistic regression on standardized inputs.
#[derive(Clone, Debug)]
pub struct SoftmaxClassifier {
    mean: Vec<f64>,
    scale: Vec<f64>,
    weights: Tensor,
    bias: Tensor,
}

impl SoftmaxClassifier {
    fn standardize(&self, x: &Tensor) -> Tensor {
        let mut z = x.clone();
        for r in 0..z.rows() {
            for (c, v) in z.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.scale[c];
            }
        }
        z
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut out = self.standardize(x).matmul(&self.weights)?;
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(self.bias.data()) {
                *o += b;
            }
        }
        Ok(out)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok((0..logits.rows())
            .map(|r| {
                let row = logits.row(r);
                // first maximum wins ties
                (0..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best })
            })
            .collect())
    }
}

fn logits_loss(tape: &mut Tape, store: &ParamStore, z: &Tensor, y: &Arc<[usize]>) -> Result<crate::numerics::Var> {
    let x = tape.constant(z.clone())?;
    let w = tape.param(store, "w")?;
    let b = tape.param(store, "b")?;
    let l = tape.matmul(x, w)?;
    let l = tape.add_bias(l, b)?;
    tape.softmax_cross_entropy(l, Arc::clone(y))
}

/// Full-batch fit from zero weights; deterministic.
pub fn fit_classifier(x: &Tensor, y: &[usize], cfg: &ClassifierConfig) -> Result<SoftmaxClassifier> {
    if x.rows() == 0 || x.rows() != y.len() {
        return Err(Error::Invalid(format!("{} training rows, {} labels", x.rows(), y.len())));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= cfg.classes) {
        return Err(Error::Invalid(format!("label {bad} outside 0..{}", cfg.classes)));
    }
    if y.iter().all(|&c| c == y[0]) {
        log::warn!("training labels contain a single class; classifier is constant");
    }
    let mean = x.mean_rows().into_data();
    let scale: Vec<f64> = (0..x.cols())
        .map(|c| {
            let var = (0..x.rows()).map(|r| (x.get(r, c) - mean[c]).powi(2)).sum::<f64>() / x.rows() as f64;
            let sd = var.sqrt();
            if sd > 1e-12 { sd } else { 1.0 }
        })
        .collect();
    let mut clf = SoftmaxClassifier {
        mean,
        scale,
        weights: Tensor::zeros(x.cols(), cfg.classes),
        bias: Tensor::zeros(1, cfg.classes),
    };
    let z = clf.standardize(x);
    let labels: Arc<[usize]> = y.into();
    let mut store = ParamStore::new();
    store.insert("w", clf.weights.clone(), true);
    store.insert("b", clf.bias.clone(), true);
    let mut opt = Adam::new(cfg.lr, 0.0);
    let mut tape = Tape::new();
    for _ in 0..cfg.epochs {
        tape.reset();
        store.zero_grads();
        let loss = logits_loss(&mut tape, &store, &z, &labels)?;
        tape.backward(loss, 1.0, &mut store)?;
        opt.step(&mut store);
    }
    clf.weights = store.value("w").expect("inserted").clone();
    clf.bias = store.value("b").expect("inserted").clone();
    Ok(clf)
}

/// Which embedding the probe sees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EvalInput {
    #[default]
    Unified,
    Concatenated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub setting: String,
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Fits the probe on the training split and scores the test split.
pub fn evaluate_embedding(h: &Tensor, labels: &CourseLabels, plan: &SplitPlan, cfg: &ClassifierConfig) -> Result<(f64, f64)> {
    let ys = |ids: &[usize]| -> Vec<usize> { ids.iter().map(|&c| labels.get(c).expect("labelled")).collect() };
    let (y_train, y_test) = (ys(&plan.train), ys(&plan.test));
    let clf = fit_classifier(&h.gather_rows(&plan.train)?, &y_train, cfg)?;
    let pred = clf.predict(&h.gather_rows(&plan.test)?)?;
    Ok((accuracy(&y_test, &pred)?, macro_f1(&y_test, &pred, cfg.classes)?))
}

pub fn evaluate(set: &EmbeddingSet, input: EvalInput, labels: &CourseLabels, ratio: f64, seed: u64) -> Result<(f64, f64)> {
    let h = match input {
        EvalInput::Unified => set.unified.clone(),
        EvalInput::Concatenated => set.concatenated(),
    };
    let plan = split(labels, ratio, seed)?;
    evaluate_embedding(&h, labels, &plan, &ClassifierConfig::default())
}

/// Settings evaluated across seeds and reduced to medians.
#[derive(Clone, Debug)]
pub struct AblationOptions {
    pub seeds: Vec<u64>,
    pub ratio: f64,
    pub input: EvalInput,
}

impl Default for AblationOptions {
    fn default() -> Self {
        AblationOptions { seeds: (0..5).collect(), ratio: 0.8, input: EvalInput::Unified }
    }
}

/// Per-seed results of one ablation setting.
#[derive(Clone, Debug)]
pub struct AblationCell {
    pub setting: String,
    pub accuracy: Vec<f64>,
    pub macro_f1: Vec<f64>,
    pub alpha: Vec<Vec<(String, f64)>>,
}

impl AblationCell {
    pub fn median_row(&self) -> MetricsRow {
        MetricsRow {
            setting: self.setting.clone(),
            accuracy: median(&self.accuracy),
            macro_f1: median(&self.macro_f1),
        }
    }
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 { s[m] } else { 0.5 * (s[m - 1] + s[m]) }
}

struct Setting {
    label: String,
    views: Vec<ViewGraph>,
    cfg: TrainConfig,
}

/// Trains and evaluates every (setting, seed) pair; cells run in parallel.
fn run_settings(settings: Vec<Setting>, x: &FeatureMatrix, labels: &CourseLabels, opts: &AblationOptions) -> Result<Vec<AblationCell>> {
    let jobs: Vec<(usize, u64)> = (0..settings.len())
        .flat_map(|s| opts.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let results = par::map(&jobs, |&(s, seed)| -> Result<(f64, f64, Vec<(String, f64)>)> {
        let setting = &settings[s];
        let cfg = TrainConfig { seed, ..setting.cfg.clone() };
        let model = Model::new(setting.views.clone(), x.clone(), cfg.shape.clone())?;
        let out = train_model(model, &cfg, |_, _| Ok(()))?;
        let (acc, f1) = evaluate(&out.embeddings, opts.input, labels, opts.ratio, seed)?;
        Ok((acc, f1, out.report.alpha))
    });
    let mut cells: Vec<AblationCell> = settings
        .iter()
        .map(|s| AblationCell { setting: s.label.clone(), accuracy: vec![], macro_f1: vec![], alpha: vec![] })
        .collect();
    for ((s, _), r) in jobs.into_iter().zip(results) {
        let (acc, f1, alpha) = r?;
        cells[s].accuracy.push(acc);
        cells[s].macro_f1.push(f1);
        cells[s].alpha.push(alpha);
    }
    Ok(cells)
}

/// Every non-empty subset of `mps`, smallest first, in the order
/// MP1, MP2, MP3, MP1&MP2, MP1&MP3, MP2&MP3, MP1&MP2&MP3 for the standard set.
pub fn metapath_subsets(mps: &[MetaPath]) -> Vec<Vec<MetaPath>> {
    let n = mps.len();
    let mut masks: Vec<u32> = (1..(1u32 << n)).collect();
    masks.sort_by_key(|m| {
        let bits: Vec<usize> = (0..n).filter(|i| m & (1 << i) != 0).collect();
        (bits.len(), bits)
    });
    masks
        .into_iter()
        .map(|m| (0..n).filter(|i| m & (1 << i) != 0).map(|i| mps[i].clone()).collect())
        .collect()
}

pub fn ablate_metapaths_cells(
    g: &HinGraph,
    x: &FeatureMatrix,
    labels: &CourseLabels,
    cfg: &TrainConfig,
    opts: &AblationOptions,
) -> Result<Vec<AblationCell>> {
    let all = MetaPath::standard();
    let views = project_all_with(g, &all, cfg.weighted_adjacency)?;
    let settings = metapath_subsets(&all)
        .into_iter()
        .map(|subset| Setting {
            label: combo_label(&subset),
            views: subset
                .iter()
                .map(|mp| views.iter().find(|v| &v.metapath == mp).expect("projected").clone())
                .collect(),
            cfg: cfg.clone(),
        })
        .collect();
    run_settings(settings, x, labels, opts)
}

/// One median row per non-empty meta-path combination.
pub fn ablate_metapaths(g: &HinGraph, x: &FeatureMatrix, labels: &CourseLabels, cfg: &TrainConfig, opts: &AblationOptions) -> Result<Vec<MetricsRow>> {
    Ok(ablate_metapaths_cells(g, x, labels, cfg, opts)?.iter().map(AblationCell::median_row).collect())
}

/// Label of a loss variant: `J`, `S+Y`, ...; the base model is `GAE`.
pub fn variant_label(variant: &[LossTerm]) -> String {
    if variant.is_empty() {
        return "GAE".into();
    }
    variant.iter().map(|t| t.as_str()).collect::<Vec<_>>().join("+")
}

pub fn loss_variants(include_base: bool) -> Vec<Vec<LossTerm>> {
    use LossTerm::{Agreement, Alignment, Consistency};
    let mut v = vec![
        vec![Agreement],
        vec![Consistency],
        vec![Alignment],
        vec![Agreement, Consistency],
        vec![Agreement, Alignment],
        vec![Consistency, Alignment],
        vec![Agreement, Consistency, Alignment],
    ];
    if include_base {
        v.insert(0, vec![]);
    }
    v
}

pub fn ablate_losses_cells(
    g: &HinGraph,
    x: &FeatureMatrix,
    labels: &CourseLabels,
    mps: &[MetaPath],
    cfg: &TrainConfig,
    opts: &AblationOptions,
    include_base: bool,
) -> Result<Vec<AblationCell>> {
    let views = project_all_with(g, mps, cfg.weighted_adjacency)?;
    let settings = loss_variants(include_base)
        .into_iter()
        .map(|v| Setting { label: variant_label(&v), views: views.clone(), cfg: loss_variant(cfg, &v) })
        .collect();
    run_settings(settings, x, labels, opts)
}

/// One median row per loss variant (seven, or eight with the base model).
pub fn ablate_losses(
    g: &HinGraph,
    x: &FeatureMatrix,
    labels: &CourseLabels,
    mps: &[MetaPath],
    cfg: &TrainConfig,
    opts: &AblationOptions,
    include_base: bool,
) -> Result<Vec<MetricsRow>> {
    Ok(ablate_losses_cells(g, x, labels, mps, cfg, opts, include_base)?
        .iter()
        .map(AblationCell::median_row)
        .collect())
}

pub fn report_tsv(rows: &[MetricsRow]) -> String {
    let mut s = String::from("setting\taccuracy\tmacro_f1\n");
    for r in rows {
        s.push_str(&format!("{}\t{:.4}\t{:.4}\n", r.setting, r.accuracy, r.macro_f1));
    }
    s
}

/// Plain-text table in the layout of a results table.
pub fn render_table(rows: &[MetricsRow]) -> String {
    let w = rows.iter().map(|r| r.setting.len()).max().unwrap_or(0).max("Setting".len());
    let mut s = format!("{:<w$} | Accuracy | Macro-F1\n", "Setting");
    s.push_str(&format!("{}-+----------+---------\n", "-".repeat(w)));
    for r in rows {
        s.push_str(&format!("{:<w$} | {:>8.4} | {:>8.4}\n", r.setting, r.accuracy, r.macro_f1));
    }
    s
}

pub fn write_report(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    atomic_write(path, |w| w.write_all(report_tsv(rows).as_bytes()))
}
