//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or schema
//! error, 3 numeric fault. Every command writes only below `--out`, through
//! atomic renames, and leaves a `manifest.txt` that reproduces the run.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{error::ErrorKind, Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{
    ablate_losses_cells, ablate_metapaths_cells, evaluate_embedding, median, render_table, report_tsv, split,
    AblationCell, AblationOptions, ClassifierConfig, EvalInput, MetricsRow,
};
use crate::hin::{degree_filter_types, load_embeddings, load_features, load_hin, load_labels, CourseLabels, FeatureMatrix, HinGraph, NodeType};
use crate::io::{atomic_write, atomic_write_str};
use crate::metapath::{combo_label, dump_adjacency, project_all_with};
use crate::model::Model;
use crate::synth::{self, generate, write_dataset};
use crate::trainer::train_model;

#[derive(Parser, Debug)]
#[command(name = "coursegraph", version, about = "Multi-view course embeddings on a typed course network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory; nothing is written elsewhere.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Data {
    /// Directory holding nodes.tsv, edges.tsv, features.tsv and labels.tsv.
    #[arg(long)]
    data_dir: PathBuf,
}

#[derive(Args, Debug)]
struct Jobs {
    /// Worker threads for independent ablation cells.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic network with planted quality classes.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Project the meta-path views and write their adjacency lists.
    Project {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
    },
    /// Train embeddings and write them with the training log.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        dump_adjacency: bool,
        #[arg(long)]
        report_attention: bool,
    },
    /// Score an embedding file on the course-quality task.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        /// Embedding TSV written by `train`.
        #[arg(long)]
        embeddings: PathBuf,
    },
    /// Train and evaluate every meta-path combination.
    AblateMetapaths {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[command(flatten)]
        jobs: Jobs,
    },
    /// Train and evaluate every objective combination.
    AblateLosses {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[command(flatten)]
        jobs: Jobs,
        /// Also report the reconstruction-only model.
        #[arg(long)]
        include_base: bool,
    },
    /// Project, train and evaluate in one run.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        dump_adjacency: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::Project { .. } => "project",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::AblateMetapaths { .. } => "ablate-metapaths",
            Command::AblateLosses { .. } => "ablate-losses",
            Command::Pipeline { .. } => "pipeline",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Generate { common }
            | Command::Project { common, .. }
            | Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::AblateMetapaths { common, .. }
            | Command::AblateLosses { common, .. }
            | Command::Pipeline { common, .. } => common,
        }
    }

    fn data_dir(&self) -> Option<&Path> {
        match self {
            Command::Generate { .. } => None,
            Command::Project { data, .. }
            | Command::Train { data, .. }
            | Command::Eval { data, .. }
            | Command::AblateMetapaths { data, .. }
            | Command::AblateLosses { data, .. }
            | Command::Pipeline { data, .. } => Some(&data.data_dir),
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve_config(cmd: &Command) -> Result<RunConfig> {
    let c = cmd.common();
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &c.set {
        cfg.apply_override(kv)?;
    }
    if let Some(seed) = c.seed {
        match cmd {
            Command::Generate { .. } => cfg.synth.seed = seed,
            _ => cfg.train.seed = seed,
        }
    }
    if let Some(epochs) = c.epochs {
        cfg.train.epochs = epochs;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_manifest(out: &Path, cmd: &Command, cfg: &RunConfig) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "# coursegraph {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "# command: {}", cmd.name());
    if let Some(d) = cmd.data_dir() {
        let _ = writeln!(s, "# data_dir: {}", d.display());
    }
    s.push_str(&cfg.echo());
    atomic_write_str(&out.join("manifest.txt"), &s)
}

struct Dataset {
    graph: HinGraph,
    features: FeatureMatrix,
}

fn load_dataset(dir: &Path, cfg: &RunConfig) -> Result<Dataset> {
    let graph = load_graph(dir, cfg)?;
    let features = load_features(&dir.join(synth::FEATURES_FILE), &graph, cfg.train.d)?;
    Ok(Dataset { graph, features })
}

fn load_graph(dir: &Path, cfg: &RunConfig) -> Result<HinGraph> {
    let mut graph = load_hin(&dir.join(synth::NODES_FILE), &dir.join(synth::EDGES_FILE))?;
    if cfg.min_links > 0 {
        let mut kinds = vec![NodeType::Student];
        if cfg.filter_teachers {
            kinds.push(NodeType::Teacher);
        }
        let before = graph.n_nodes();
        graph = degree_filter_types(&graph, cfg.min_links, &kinds)?;
        log::info!("link filter removed {} nodes", before - graph.n_nodes());
    }
    Ok(graph)
}

fn labels(dir: &Path, g: &HinGraph) -> Result<CourseLabels> {
    load_labels(&dir.join(synth::LABELS_FILE), g)
}

fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        if jobs > 1 {
            log::warn!("built without parallel support; --jobs {jobs} runs sequentially");
        }
        f()
    }
}

fn ablation_options(cfg: &RunConfig) -> AblationOptions {
    AblationOptions {
        seeds: (0..cfg.ablation_seeds as u64).map(|i| cfg.train.seed + i).collect(),
        ratio: cfg.split_ratio,
        input: cfg.eval_input,
    }
}

fn write_report(out: &Path, rows: &[MetricsRow]) -> Result<()> {
    atomic_write_str(&out.join("report.tsv"), &report_tsv(rows))?;
    atomic_write_str(&out.join("report.txt"), &render_table(rows))?;
    print!("{}", render_table(rows));
    Ok(())
}

/// Per-seed and median attention weights of every ablation cell.
fn write_alpha(out: &Path, cells: &[AblationCell]) -> Result<()> {
    atomic_write(&out.join("alpha.tsv"), |w| {
        use std::io::Write;
        writeln!(w, "setting\tmetapath\tmedian_alpha")?;
        for c in cells {
            let Some(first) = c.alpha.first() else { continue };
            for (i, (label, _)) in first.iter().enumerate() {
                let values: Vec<f64> = c.alpha.iter().map(|a| a[i].1).collect();
                writeln!(w, "{}\t{}\t{:.4}", c.setting, label, median(&values))?;
            }
        }
        Ok(())
    })
}

fn train_and_write(out: &Path, ds: &Dataset, cfg: &RunConfig, dump: bool, attention: bool) -> Result<crate::trainer::TrainOutcome> {
    let views = project_all_with(&ds.graph, &cfg.metapaths, cfg.train.weighted_adjacency)?;
    if dump {
        dump_adjacency(out, &views)?;
    }
    let model = Model::new(views, ds.features.clone(), cfg.train.shape.clone())?;
    let ckpt_dir = out.join("checkpoints");
    let result = train_model(model, &cfg.train, |epoch, params| {
        atomic_write(&ckpt_dir.join(format!("params_epoch{epoch}.txt")), |w| params.write_checkpoint(w))
    });
    let outcome = match result {
        Ok(o) => o,
        Err(Error::Diverged { epoch, last_good }) => {
            atomic_write(&out.join("params_last_good.txt"), |w| last_good.write_checkpoint(w))?;
            return Err(Error::Diverged { epoch, last_good });
        }
        Err(e) => return Err(e),
    };
    outcome.embeddings.write(out, &ds.graph)?;
    outcome.report.write_log(&out.join("train_log.tsv"))?;
    atomic_write(&out.join("params.txt"), |w| outcome.params.write_checkpoint(w))?;
    if attention {
        outcome.embeddings.write_attention(&out.join("attention.tsv"))?;
    }
    log::info!("trained {} epochs in {:.2?}", outcome.report.rows.len(), outcome.report.wall_clock);
    Ok(outcome)
}

fn execute(cmd: &Command) -> Result<()> {
    let cfg = resolve_config(cmd)?;
    let out = &cmd.common().out;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    match cmd {
        Command::Generate { .. } => {
            let data = generate(&cfg.synth)?;
            write_dataset(out, &cfg.synth, &data)?;
        }
        Command::Project { data, .. } => {
            let ds = load_dataset(&data.data_dir, &cfg)?;
            let views = project_all_with(&ds.graph, &cfg.metapaths, cfg.train.weighted_adjacency)?;
            dump_adjacency(out, &views)?;
            for v in &views {
                println!("{}\t{} edges", v.metapath, v.n_edges());
            }
        }
        Command::Train { data, dump_adjacency, report_attention, .. } => {
            let ds = load_dataset(&data.data_dir, &cfg)?;
            train_and_write(out, &ds, &cfg, *dump_adjacency, *report_attention)?;
        }
        Command::Eval { data, embeddings, .. } => {
            let graph = load_graph(&data.data_dir, &cfg)?;
            let h = load_embeddings(embeddings, &graph)?;
            let y = labels(&data.data_dir, &graph)?;
            let plan = split(&y, cfg.split_ratio, cfg.train.seed)?;
            let (accuracy, macro_f1) = evaluate_embedding(&h, &y, &plan, &ClassifierConfig::default())?;
            let setting = embeddings.file_stem().map_or("embedding".into(), |s| s.to_string_lossy().into_owned());
            write_report(out, &[MetricsRow { setting, accuracy, macro_f1 }])?;
        }
        Command::AblateMetapaths { data, jobs, .. } => {
            let ds = load_dataset(&data.data_dir, &cfg)?;
            let y = labels(&data.data_dir, &ds.graph)?;
            let opts = ablation_options(&cfg);
            let cells = with_jobs(jobs.jobs, || ablate_metapaths_cells(&ds.graph, &ds.features, &y, &cfg.train, &opts))?;
            write_alpha(out, &cells)?;
            write_report(out, &cells.iter().map(AblationCell::median_row).collect::<Vec<_>>())?;
        }
        Command::AblateLosses { data, jobs, include_base, .. } => {
            let ds = load_dataset(&data.data_dir, &cfg)?;
            let y = labels(&data.data_dir, &ds.graph)?;
            let opts = ablation_options(&cfg);
            let base = *include_base || cfg.include_base;
            let cells = with_jobs(jobs.jobs, || {
                ablate_losses_cells(&ds.graph, &ds.features, &y, &cfg.metapaths, &cfg.train, &opts, base)
            })?;
            write_report(out, &cells.iter().map(AblationCell::median_row).collect::<Vec<_>>())?;
        }
        Command::Pipeline { data, dump_adjacency, .. } => {
            let ds = load_dataset(&data.data_dir, &cfg)?;
            let y = labels(&data.data_dir, &ds.graph)?;
            let outcome = train_and_write(out, &ds, &cfg, *dump_adjacency, true)?;
            let h = match cfg.eval_input {
                EvalInput::Unified => outcome.embeddings.unified.clone(),
                EvalInput::Concatenated => outcome.embeddings.concatenated(),
            };
            let plan = split(&y, cfg.split_ratio, cfg.train.seed)?;
            let (accuracy, macro_f1) = evaluate_embedding(&h, &y, &plan, &ClassifierConfig::default())?;
            let row = MetricsRow { setting: combo_label(&cfg.metapaths), accuracy, macro_f1 };
            write_report(out, &[row])?;
        }
    }
    write_manifest(out, cmd, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["coursegraph", "train", "--bogus"]), 1);
        assert_eq!(run(["coursegraph"]), 1);
        assert_eq!(run(["coursegraph", "--version"]), 0);
        assert_eq!(run(["coursegraph", "train", "--help"]), 0);
    }

    #[test]
    fn bad_config_values_exit_one() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let code = run(["coursegraph", "generate", "--set", "lr=-1", "--out", out.to_str().unwrap()]);
        assert_eq!(code, 1);
    }
}
