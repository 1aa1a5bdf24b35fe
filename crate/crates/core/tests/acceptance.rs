//! Acceptance checks; prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::time::{Duration, Instant};

use coursegraph::eval::{
    ablate_losses, ablate_metapaths, accuracy, evaluate, macro_f1, median, AblationOptions, EvalInput, MetricsRow,
};
use coursegraph::metapath::{normalize, project, project_all, project_with, MetaPath};
use coursegraph::model::{LossWeights, Model, ModelShape};
use coursegraph::numerics::{check_gradients, CsrMatrix, ParamStore, Tensor};
use coursegraph::synth::{generate, make_noise_view_config, SynthConfig, SynthData};
use coursegraph::trainer::{run_rng, train, train_model, TrainConfig};

use common::*;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn planted(seed: u64) -> SynthConfig {
    SynthConfig {
        n_courses: 300,
        n_students: 200,
        n_teachers: 30,
        n_subjects: 9,
        n_classes: 3,
        d: 16,
        p_in: 0.15,
        p_out: 0.01,
        sigma_f: 0.5,
        seed,
        ..SynthConfig::default()
    }
}

fn train_cfg(seed: u64, d: usize, k: usize) -> TrainConfig {
    TrainConfig { d, seed, shape: ModelShape { k, ..Default::default() }, ..TrainConfig::default() }
}

fn projection_oracle() -> Outcome {
    let start = Instant::now();
    let mut mismatches = 0;
    for seed in 0..200 {
        let g = random_hin(seed, 50);
        for mp in MetaPath::standard() {
            let paths = brute_force_paths(&g, mp.intermediate());
            let binary = project(&g, &mp).to_dense();
            let counts = project_with(&g, &mp, true).to_dense();
            for i in 0..g.n_courses() {
                for j in 0..g.n_courses() {
                    let want = paths[i][j];
                    if binary.get(i, j) != (want > 0) as u8 as f64 || counts.get(i, j) != want as f64 {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    let t = start.elapsed();
    outcome(mismatches == 0 && t < Duration::from_secs(5), format!("200 networks, {mismatches} mismatches, {t:.2?}"))
}

fn normalization() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let a = random_symmetric(seed, 20);
        let got = normalize(&CsrMatrix::from_dense(&a)).unwrap().to_dense();
        worst = worst.max(got.max_abs_diff(&dense_normalize(&a)));
    }
    let identity = (1..=20).all(|n| normalize(&CsrMatrix::zeros(n, n)).unwrap().to_dense() == Tensor::identity(n));
    outcome(worst <= 1e-12 && identity, format!("max abs error {worst:.1e}, zeros give identity: {identity}"))
}

fn six_course_model() -> Model {
    let views = project_all(&six_course_hin(), &MetaPath::standard()).unwrap();
    Model::new(views, seeded_tensor(6, 5, 3, 1.0), ModelShape { k: 4, ..Default::default() }).unwrap()
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let model = six_course_model();
    let mut rng = run_rng(1, 9);
    let store = model.init_params(&mut rng);
    let samples = model.sample_epoch(&mut rng, 100, 0.1);
    let weights = LossWeights::default();
    let report = check_gradients(&store, |tape, s| Ok(model.forward(tape, s, &samples, &weights)?.total), 1e-4).unwrap();
    let t = start.elapsed();
    outcome(
        report.passed() && t < Duration::from_secs(30),
        format!("{} tensors, max relative error {:.2e}, {t:.2?}", report.params.len(), report.max_rel_error()),
    )
}

fn loss_landmarks() -> Outcome {
    let model = six_course_model();
    let mut rng = run_rng(2, 9);
    let mut store: ParamStore = model.init_params(&mut rng);
    store.zero_values();
    let samples = model.sample_epoch(&mut rng, 100, 0.1);
    let l = model.losses(&store, &samples, &LossWeights::default()).unwrap();
    let chance = 2.0 * std::f64::consts::LN_2;
    let worst = l.components().iter().map(|c| (c - chance).abs()).fold(0.0, f64::max);
    outcome(worst <= 1e-9, format!("L_q L_j L_s L_y = {:?}, max deviation {worst:.1e}", l.components()))
}

fn descent() -> Outcome {
    let start = Instant::now();
    let mut ok = 0;
    let mut detail = Vec::new();
    for seed in SEEDS {
        let cfg = SynthConfig { n_courses: 30, n_students: 20, n_teachers: 6, n_subjects: 3, d: 8, seed, ..planted(seed) };
        let data = generate(&cfg).unwrap();
        let out = train(&data.graph, &data.features, &MetaPath::standard(), &train_cfg(seed, 8, 8)).unwrap();
        let first = out.report.rows[0].losses.total;
        let tail = out.report.tail_mean(10).unwrap();
        ok += (tail < first) as usize;
        detail.push(format!("{first:.3}->{tail:.3}"));
    }
    let t = start.elapsed();
    outcome(ok == 5 && t < Duration::from_secs(60), format!("{ok}/5 seeds descend [{}], {t:.2?}", detail.join(", ")))
}

fn run_planted(data: &SynthData, seed: u64) -> (f64, f64, Duration) {
    let start = Instant::now();
    let out = train(&data.graph, &data.features, &MetaPath::standard(), &train_cfg(seed, 16, 16)).unwrap();
    let (acc, f1) = evaluate(&out.embeddings, EvalInput::Unified, &data.labels, 0.8, seed).unwrap();
    (acc, f1, start.elapsed())
}

fn planted_recovery() -> Outcome {
    let mut acc = Vec::new();
    let mut f1 = Vec::new();
    let mut control = Vec::new();
    let mut slowest = Duration::ZERO;
    for seed in SEEDS {
        let (a, f, t) = run_planted(&generate(&planted(seed)).unwrap(), seed);
        acc.push(a);
        f1.push(f);
        slowest = slowest.max(t);
        let blind = MetaPath::standard().iter().fold(planted(seed), |c, mp| make_noise_view_config(&c, mp));
        let blind = SynthConfig { prototype_scale: 0.0, ..blind };
        let (a, _, t) = run_planted(&generate(&blind).unwrap(), seed);
        control.push(a);
        slowest = slowest.max(t);
    }
    let (acc, f1, control) = (median(&acc), median(&f1), median(&control));
    let chance = 1.0 / 3.0;
    let pass = acc >= 0.80 && f1 >= 0.75 && (control - chance).abs() <= 0.10 && slowest < Duration::from_secs(120);
    outcome(
        pass,
        format!("median accuracy {acc:.3}, macro-F1 {f1:.3}; no-signal control accuracy {control:.3}; slowest run {slowest:.2?}"),
    )
}

fn opts() -> AblationOptions {
    AblationOptions { seeds: SEEDS.to_vec(), ratio: 0.8, input: EvalInput::Unified }
}

fn row<'a>(rows: &'a [MetricsRow], setting: &str) -> &'a MetricsRow {
    rows.iter().find(|r| r.setting == setting).unwrap()
}

fn metapath_trend() -> Outcome {
    let data = generate(&planted(0)).unwrap();
    let rows = ablate_metapaths(&data.graph, &data.features, &data.labels, &train_cfg(0, 16, 16), &opts()).unwrap();
    let all = row(&rows, "MP1&MP2&MP3").accuracy;
    let singles: Vec<f64> = ["MP1", "MP2", "MP3"].iter().map(|s| row(&rows, s).accuracy).collect();
    let table: Vec<String> = rows.iter().map(|r| format!("{} {:.3}", r.setting, r.accuracy)).collect();
    outcome(singles.iter().all(|&s| all >= s), format!("median accuracy: {}", table.join(", ")))
}

fn attention_trend() -> Outcome {
    let noise = MetaPath::mp2();
    let data = generate(&make_noise_view_config(&planted(0), &noise)).unwrap();
    let mut alpha: Vec<Vec<f64>> = vec![Vec::new(); 3];
    for seed in SEEDS {
        let cfg = TrainConfig { epochs: 1000, ..train_cfg(seed, 16, 16) };
        let out = train(&data.graph, &data.features, &MetaPath::standard(), &cfg).unwrap();
        for (i, (_, a)) in out.report.alpha.iter().enumerate() {
            alpha[i].push(*a);
        }
    }
    let med: Vec<f64> = alpha.iter().map(|a| median(a)).collect();
    let pass = med[0] > med[1] && med[2] > med[1];
    outcome(pass, format!("median alpha MP1 {:.3}, MP2 (noise) {:.3}, MP3 {:.3}", med[0], med[1], med[2]))
}

fn loss_trend() -> Outcome {
    let data = generate(&planted(0)).unwrap();
    let rows = ablate_losses(&data.graph, &data.features, &data.labels, &MetaPath::standard(), &train_cfg(0, 16, 16), &opts(), true)
        .unwrap();
    let (full, base) = (row(&rows, "J+S+Y"), row(&rows, "GAE"));
    outcome(
        full.accuracy >= base.accuracy && full.macro_f1 >= base.macro_f1,
        format!(
            "full {:.3}/{:.3} vs base {:.3}/{:.3} (accuracy/macro-F1)",
            full.accuracy, full.macro_f1, base.accuracy, base.macro_f1
        ),
    )
}

fn determinism_and_round_trip() -> Outcome {
    let cfg = SynthConfig { n_courses: 30, n_students: 20, n_teachers: 6, n_subjects: 3, d: 8, ..planted(5) };
    let data = generate(&cfg).unwrap();
    let tc = TrainConfig { epochs: 50, ..train_cfg(5, 8, 8) };
    let a = train(&data.graph, &data.features, &MetaPath::standard(), &tc).unwrap();
    let b = train(&data.graph, &data.features, &MetaPath::standard(), &tc).unwrap();
    let same_log = a.report.log_tsv() == b.report.log_tsv();

    let model = a.model.clone();
    let samples = model.sample_epoch(&mut run_rng(99, 2), tc.max_pos, tc.dropout);
    let before = model.losses(&a.params, &samples, &tc.lambda).unwrap();
    let mut buf = Vec::new();
    a.params.write_checkpoint(&mut buf).unwrap();
    let loaded = ParamStore::read_checkpoint(&buf[..], std::path::Path::new("checkpoint")).unwrap();
    let after = model.losses(&loaded, &samples, &tc.lambda).unwrap();
    let drift = before.components().iter().zip(after.components()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let untrained = train_model(model, &TrainConfig { epochs: 0, ..tc.clone() }, |_, _| Ok(())).unwrap();
    outcome(
        same_log && drift <= 1e-12 && untrained.report.rows.is_empty(),
        format!("identical logs: {same_log}, checkpoint loss drift {drift:.1e}"),
    )
}

fn metric_oracles() -> Outcome {
    let fixtures = metric_fixtures();
    let mut bad = 0;
    for (y, pred, hand) in &fixtures {
        let acc = accuracy(y, pred).unwrap();
        let f1 = macro_f1(y, pred, 6).unwrap();
        let hits = y.iter().zip(pred).filter(|(a, b)| a == b).count() as f64 / y.len() as f64;
        let mut ok = (acc - hits).abs() <= 1e-9 && (f1 - oracle_macro_f1(y, pred, 6)).abs() <= 1e-9;
        if let Some((a, f)) = hand {
            ok &= (acc - a).abs() <= 1e-9 && (f1 - f).abs() <= 1e-9;
        }
        bad += !ok as usize;
    }
    let worked = macro_f1(&[0, 0, 1, 1], &[0, 1, 1, 1], 6).unwrap();
    outcome(bad == 0, format!("{} fixtures, {bad} mismatches; worked example macro-F1 {worked:.4}", fixtures.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("projection oracle", projection_oracle),
        ("normalization", normalization),
        ("gradient check", gradient_check),
        ("loss landmarks", loss_landmarks),
        ("descent", descent),
        ("planted recovery", planted_recovery),
        ("meta-path combination trend", metapath_trend),
        ("attention trend", attention_trend),
        ("loss ablation trend", loss_trend),
        ("determinism and round trip", determinism_and_round_trip),
        ("metric oracles", metric_oracles),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failed += !o.pass as usize;
        println!("criterion {:>2} {}: {} ({})", i + 1, name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
