//! Seeded synthetic networks with planted course-quality classes.
//!
//! Every course, student, teacher and subject draws a class uniformly. An
//! intermediate node links a course with probability `p_in` when their
//! classes match and `p_out` otherwise, so class structure reaches the
//! course views only through the meta-paths. Course features are a scaled
//! ±1 Walsh prototype of the course class plus Gaussian noise.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::hin::{save_features, save_hin, save_labels, CourseLabels, EdgeType, FeatureMatrix, HinBuilder, HinGraph, NodeType};
use crate::io::atomic_write;
use crate::metapath::MetaPath;
use crate::numerics::Tensor;

/// Within- and across-class link probabilities of one relation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkRates {
    pub p_in: f64,
    pub p_out: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_courses: usize,
    pub n_students: usize,
    pub n_teachers: usize,
    pub n_subjects: usize,
    pub n_classes: usize,
    pub d: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub sigma_f: f64,
    /// Multiplier on the class prototypes; `0` removes the feature signal.
    pub prototype_scale: f64,
    pub seed: u64,
    /// Per-relation rates replacing `(p_in, p_out)`, keyed by intermediate type.
    pub overrides: BTreeMap<NodeType, LinkRates>,
}

impl Default for SynthConfig {
    fn default() -> Self {
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
            prototype_scale: 1.0,
            seed: 0,
            overrides: BTreeMap::new(),
        }
    }
}

fn check_rate(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [self.n_courses, self.n_students, self.n_teachers, self.n_subjects, self.n_classes, self.d];
        if counts.contains(&0) {
            return Err(Error::Config("node counts, n_classes and d must be at least 1".into()));
        }
        check_rate("p_in", self.p_in)?;
        check_rate("p_out", self.p_out)?;
        for (kind, r) in &self.overrides {
            check_rate(&format!("{kind}.p_in"), r.p_in)?;
            check_rate(&format!("{kind}.p_out"), r.p_out)?;
        }
        if !(self.sigma_f >= 0.0 && self.sigma_f.is_finite()) {
            return Err(Error::Config("sigma_f must be finite and non-negative".into()));
        }
        if !self.prototype_scale.is_finite() {
            return Err(Error::Config("prototype_scale must be finite".into()));
        }
        Ok(())
    }

    pub fn rates(&self, kind: NodeType) -> LinkRates {
        self.overrides.get(&kind).copied().unwrap_or(LinkRates { p_in: self.p_in, p_out: self.p_out })
    }

    /// Whether any relation carries planted structure.
    pub fn has_planted_signal(&self) -> bool {
        [NodeType::Student, NodeType::Teacher, NodeType::Subject]
            .iter()
            .any(|&k| self.rates(k).p_in > self.rates(k).p_out)
    }

    /// `key = value` lines in the config-file vocabulary.
    pub fn echo(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = [
            ("n_courses", self.n_courses.to_string()),
            ("n_students", self.n_students.to_string()),
            ("n_teachers", self.n_teachers.to_string()),
            ("n_subjects", self.n_subjects.to_string()),
            ("n_classes", self.n_classes.to_string()),
            ("d", self.d.to_string()),
            ("p_in", self.p_in.to_string()),
            ("p_out", self.p_out.to_string()),
            ("sigma_f", self.sigma_f.to_string()),
            ("prototype_scale", self.prototype_scale.to_string()),
            ("seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        for (kind, r) in &self.overrides {
            out.push((format!("{kind}.p_in"), r.p_in.to_string()));
            out.push((format!("{kind}.p_out"), r.p_out.to_string()));
        }
        out
    }
}

/// Makes the relation behind `view` class-blind. Its link rate becomes the
/// class-averaged rate `(p_in + (C - 1) p_out) / C`, which keeps the
/// expected degree of its intermediate nodes unchanged.
pub fn make_noise_view_config(cfg: &SynthConfig, view: &MetaPath) -> SynthConfig {
    let mut out = cfg.clone();
    let kind = view.intermediate();
    let r = cfg.rates(kind);
    let c = cfg.n_classes as f64;
    let p = (r.p_in + (c - 1.0) * r.p_out) / c;
    out.overrides.insert(kind, LinkRates { p_in: p, p_out: p });
    out
}

/// Entry `j` of Walsh pattern `row`: `(-1)^popcount(row & j)`.
fn walsh(row: usize, j: usize) -> f64 {
    if (row & j).count_ones() % 2 == 0 { 1.0 } else { -1.0 }
}

/// `n_classes × d` matrix of ±1 patterns, mutually orthogonal when `d` is a
/// power of two larger than `n_classes`.
pub fn prototypes(n_classes: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(n_classes, d);
    for c in 0..n_classes {
        for j in 0..d {
            t.set(c, j, walsh(c + 1, j));
        }
    }
    t
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub graph: HinGraph,
    pub features: FeatureMatrix,
    pub labels: CourseLabels,
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let course_class: Vec<usize> = (0..cfg.n_courses).map(|_| rng.random_range(0..cfg.n_classes)).collect();

    let mut b = HinBuilder::new();
    let partners = [
        (NodeType::Student, cfg.n_students, EdgeType::Click),
        (NodeType::Teacher, cfg.n_teachers, EdgeType::Upload),
        (NodeType::Subject, cfg.n_subjects, EdgeType::Include),
    ];
    for &(kind, n, _) in &partners[..2] {
        for i in 0..n {
            b.node(format!("{kind}_{i}"), kind);
        }
    }
    for c in 0..cfg.n_courses {
        b.node(format!("course_{c}"), NodeType::Course);
    }
    for i in 0..cfg.n_subjects {
        b.node(format!("subject_{i}"), NodeType::Subject);
    }

    for &(kind, n, edge) in &partners {
        let rates = cfg.rates(kind);
        for i in 0..n {
            let home = rng.random_range(0..cfg.n_classes);
            for (c, &class) in course_class.iter().enumerate() {
                let p = if class == home { rates.p_in } else { rates.p_out };
                if rng.random_bool(p) {
                    b.edge(format!("{kind}_{i}"), format!("course_{c}"), edge);
                }
            }
        }
    }
    let graph = b.build()?;

    let protos = prototypes(cfg.n_classes, cfg.d);
    let noise = Normal::new(0.0, cfg.sigma_f).map_err(|e| Error::Config(e.to_string()))?;
    let mut features = Tensor::zeros(cfg.n_courses, cfg.d);
    for (c, &class) in course_class.iter().enumerate() {
        for j in 0..cfg.d {
            let v = cfg.prototype_scale * protos.get(class, j) + noise.sample(&mut rng);
            features.set(c, j, v);
        }
    }

    let mut labels = CourseLabels::new();
    for (c, &class) in course_class.iter().enumerate() {
        labels.insert(c, class);
    }
    Ok(SynthData { graph, features, labels })
}

pub const NODES_FILE: &str = "nodes.tsv";
pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_FILE: &str = "features.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const MANIFEST_FILE: &str = "synth_manifest.txt";

/// Writes the four network files and a manifest echoing `cfg` into `dir`.
pub fn write_dataset(dir: &Path, cfg: &SynthConfig, data: &SynthData) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_hin(&data.graph, &dir.join(NODES_FILE), &dir.join(EDGES_FILE))?;
    save_features(&dir.join(FEATURES_FILE), &data.graph, &data.features)?;
    save_labels(&dir.join(LABELS_FILE), &data.graph, &data.labels)?;
    atomic_write(&dir.join(MANIFEST_FILE), |w| {
        writeln!(w, "# coursegraph {} synthetic dataset", env!("CARGO_PKG_VERSION"))?;
        for (k, v) in cfg.echo() {
            writeln!(w, "{k} = {v}")?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metapath::project;

    fn small() -> SynthConfig {
        SynthConfig { n_courses: 40, n_students: 20, n_teachers: 6, n_subjects: 3, d: 8, ..SynthConfig::default() }
    }

    #[test]
    fn node_counts_match_config() {
        let cfg = SynthConfig { n_courses: 300, n_students: 200, n_teachers: 30, n_subjects: 9, ..SynthConfig::default() };
        let g = generate(&cfg).unwrap().graph;
        assert_eq!(g.count(NodeType::Course), 300);
        assert_eq!(g.count(NodeType::Student), 200);
        assert_eq!(g.count(NodeType::Teacher), 30);
        assert_eq!(g.count(NodeType::Subject), 9);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels, b.labels);
        let c = generate(&SynthConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn noiseless_features_repeat_within_class() {
        let data = generate(&SynthConfig { sigma_f: 0.0, ..small() }).unwrap();
        for (a, ya) in data.labels.iter() {
            for (b, yb) in data.labels.iter() {
                assert_eq!(ya == yb, data.features.row(a) == data.features.row(b));
            }
        }
    }

    #[test]
    fn prototypes_are_orthogonal() {
        let p = prototypes(3, 16);
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = p.row(a).iter().zip(p.row(b)).map(|(x, y)| x * y).sum();
                assert_eq!(dot, if a == b { 16.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn noise_view_rates() {
        let cfg = make_noise_view_config(&SynthConfig::default(), &MetaPath::mp2());
        let r = cfg.rates(NodeType::Student);
        assert!((r.p_in - (0.15 + 2.0 * 0.01) / 3.0).abs() < 1e-15);
        assert_eq!(r.p_in, r.p_out);
        assert_eq!(cfg.rates(NodeType::Teacher), LinkRates { p_in: 0.15, p_out: 0.01 });
        let all = MetaPath::standard().iter().fold(SynthConfig::default(), |c, mp| make_noise_view_config(&c, mp));
        assert!(!all.has_planted_signal());
    }

    #[test]
    fn planted_views_favour_same_class_pairs() {
        let data = generate(&SynthConfig { n_courses: 90, n_students: 60, ..SynthConfig::default() }).unwrap();
        let a = project(&data.graph, &MetaPath::mp2());
        let (mut same, mut diff) = ((0, 0), (0, 0));
        for i in 0..90 {
            for j in 0..90 {
                if i == j {
                    continue;
                }
                let slot = if data.labels.get(i) == data.labels.get(j) { &mut same } else { &mut diff };
                slot.0 += a.contains(i, j) as usize;
                slot.1 += 1;
            }
        }
        assert!(same.0 as f64 / same.1 as f64 > 2.0 * diff.0 as f64 / diff.1 as f64);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(generate(&SynthConfig { n_teachers: 0, ..small() }).is_err());
        assert!(generate(&SynthConfig { p_in: 1.5, ..small() }).is_err());
        assert!(generate(&SynthConfig { sigma_f: -1.0, ..small() }).is_err());
    }

    #[test]
    fn dataset_round_trips_through_loaders() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let data = generate(&cfg).unwrap();
        write_dataset(dir.path(), &cfg, &data).unwrap();
        let g = crate::hin::load_hin(&dir.path().join(NODES_FILE), &dir.path().join(EDGES_FILE)).unwrap();
        assert_eq!(g, data.graph);
        let x = crate::hin::load_features(&dir.path().join(FEATURES_FILE), &g, cfg.d).unwrap();
        assert_eq!(x, data.features);
        assert_eq!(crate::hin::load_labels(&dir.path().join(LABELS_FILE), &g).unwrap(), data.labels);
    }
}
