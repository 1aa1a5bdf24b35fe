use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coursegraph")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = "\
# small synthetic run
synth.n_courses = 40
synth.n_students = 30
synth.n_teachers = 6
synth.n_subjects = 3
synth.d = 8
d = 8
k = 8
epochs = 15
max_pos = 50
min_links = 1
ablation_seeds = 2
";

fn dataset(root: &Path) -> std::path::PathBuf {
    let cfg = root.join("run.cfg");
    std::fs::write(&cfg, SMALL).unwrap();
    let data = root.join("data");
    let o = cli(&["generate", "--config", s(&cfg), "--out", s(&data)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    data
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    v.sort();
    v
}

#[test]
fn generate_writes_the_four_tables_and_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    assert_eq!(
        listing(&data),
        ["edges.tsv", "features.tsv", "labels.tsv", "manifest.txt", "nodes.tsv", "synth_manifest.txt"]
    );
    let manifest = std::fs::read_to_string(data.join("synth_manifest.txt")).unwrap();
    assert!(manifest.contains("n_courses = 40"));
}

#[test]
fn pipeline_writes_outputs_only_below_out() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let before = listing(&data);
    let out = dir.path().join("run");
    let o = cli(&["pipeline", "--config", s(&dir.path().join("run.cfg")), "--data-dir", s(&data), "--out", s(&out), "--dump-adjacency"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(listing(&data), before);
    assert_eq!(listing(dir.path()), ["data", "run", "run.cfg"]);
    for f in [
        "embeddings_unified.tsv",
        "embeddings_MP1.tsv",
        "report.tsv",
        "report.txt",
        "attention.tsv",
        "train_log.tsv",
        "params.txt",
        "manifest.txt",
        "adjacency_MP3.tsv",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let report = std::fs::read_to_string(out.join("report.tsv")).unwrap();
    assert!(report.starts_with("setting\taccuracy\tmacro_f1\nMP1&MP2&MP3\t"));
    let attention = std::fs::read_to_string(out.join("attention.tsv")).unwrap();
    assert_eq!(attention.lines().count(), 4);
    let log = std::fs::read_to_string(out.join("train_log.tsv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "epoch\tL_q\tL_j\tL_s\tL_y\ttotal");
    assert_eq!(log.lines().count(), 16);
}

#[test]
fn training_is_reproducible_from_seed_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let cfg = dir.path().join("run.cfg");
    let run = |name: &str, config: &Path| {
        let out = dir.path().join(name);
        let o = cli(&["train", "--config", s(config), "--seed", "7", "--data-dir", s(&data), "--out", s(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out.join("train_log.tsv")).unwrap()
    };
    let a = run("a", &cfg);
    assert_eq!(a, run("b", &cfg));
    assert_eq!(a, run("c", &dir.path().join("a/manifest.txt")));
}

#[test]
fn eval_scores_a_written_embedding() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let cfg = dir.path().join("run.cfg");
    let trained = dir.path().join("t");
    assert!(cli(&["train", "--config", s(&cfg), "--data-dir", s(&data), "--out", s(&trained)]).status.success());
    let out = dir.path().join("e");
    let o = cli(&[
        "eval",
        "--config",
        s(&cfg),
        "--data-dir",
        s(&data),
        "--embeddings",
        s(&trained.join("embeddings_unified.tsv")),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(out.join("report.tsv")).unwrap();
    assert!(report.lines().nth(1).unwrap().starts_with("embeddings_unified\t"));
}

#[test]
fn ablations_report_every_setting() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let cfg = dir.path().join("run.cfg");
    let out = dir.path().join("mp");
    let o = cli(&["ablate-metapaths", "--config", s(&cfg), "--epochs", "3", "--jobs", "2", "--data-dir", s(&data), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let settings: Vec<String> = std::fs::read_to_string(out.join("report.tsv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split('\t').next().unwrap().to_string())
        .collect();
    assert_eq!(settings, ["MP1", "MP2", "MP3", "MP1&MP2", "MP1&MP3", "MP2&MP3", "MP1&MP2&MP3"]);
    assert!(out.join("alpha.tsv").exists());

    let out = dir.path().join("loss");
    let o = cli(&["ablate-losses", "--config", s(&cfg), "--epochs", "3", "--include-base", "--data-dir", s(&data), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(out.join("report.tsv")).unwrap();
    assert_eq!(report.lines().count(), 9);
    assert!(report.lines().nth(1).unwrap().starts_with("GAE\t"));
}

#[test]
fn error_paths_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let cfg = dir.path().join("run.cfg");
    let out = dir.path().join("o");

    assert_eq!(cli(&["train", "--nope", "--out", s(&out)]).status.code(), Some(1));
    assert_eq!(cli(&["train", "--config", s(&cfg), "--set", "bogus=1", "--data-dir", s(&data), "--out", s(&out)]).status.code(), Some(1));
    assert!(cli(&["--help"]).status.success());
    let v = cli(&["--version"]);
    assert_eq!(String::from_utf8_lossy(&v.stdout).trim(), format!("coursegraph {}", env!("CARGO_PKG_VERSION")));

    std::fs::remove_file(data.join("features.tsv")).unwrap();
    let o = cli(&["train", "--config", s(&cfg), "--data-dir", s(&data), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("features.tsv"));

    let fresh = dir.path().join("fresh");
    std::fs::create_dir(&fresh).unwrap();
    let data = dataset(&fresh);
    let o = cli(&["train", "--config", s(&cfg), "--set", "lr=1e308", "--data-dir", s(&data), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("params_last_good.txt").exists());
}
