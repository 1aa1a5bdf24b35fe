//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Later sources
//! override earlier ones: built-in defaults, then the config file, then
//! `--set key=value` flags, then dedicated flags such as `--seed`.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::EvalInput;
use crate::hin::NodeType;
use crate::metapath::{combo_label, MetaPath};
use crate::synth::{LinkRates, SynthConfig};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub metapaths: Vec<MetaPath>,
    pub split_ratio: f64,
    /// Seeds per ablation cell, counted up from `seed`.
    pub ablation_seeds: usize,
    pub eval_input: EvalInput,
    /// Minimum link count for students; `0` keeps every node.
    pub min_links: usize,
    /// Apply the link filter to teachers as well.
    pub filter_teachers: bool,
    /// Add the reconstruction-only row to loss ablations.
    pub include_base: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            metapaths: MetaPath::standard(),
            split_ratio: 0.8,
            ablation_seeds: 5,
            eval_input: EvalInput::Unified,
            min_links: 3,
            filter_teachers: false,
            include_base: false,
        }
    }
}

fn value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn parsed<T: FromStr<Err = String>>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|e: String| Error::Config(format!("{key}: {e}")))
}

fn intermediate(name: &str) -> Option<NodeType> {
    match name.parse::<NodeType>() {
        Ok(NodeType::Course) | Err(_) => None,
        Ok(k) => Some(k),
    }
}

impl RunConfig {
    /// Applies one setting; unknown keys are rejected.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "lambda_q" => t.lambda.reconstruction = value(key, v)?,
            "lambda_j" => t.lambda.agreement = value(key, v)?,
            "lambda_s" => t.lambda.consistency = value(key, v)?,
            "lambda_y" => t.lambda.alignment = value(key, v)?,
            "epochs" => t.epochs = value(key, v)?,
            "lr" => t.lr = value(key, v)?,
            "weight_decay" => t.weight_decay = value(key, v)?,
            "dropout" => t.dropout = value(key, v)?,
            "d" => t.d = value(key, v)?,
            "k" => t.shape.k = value(key, v)?,
            "k_att" => t.shape.k_att = value(key, v)?,
            "encoder.depth" => t.shape.depth = value(key, v)?,
            "share_encoder" => t.shape.share_encoder = value(key, v)?,
            "share_agreement_disc" => t.shape.share_agreement_disc = value(key, v)?,
            "attention_reduce" => t.shape.attention_reduce = parsed(key, v)?,
            "seed" => t.seed = value(key, v)?,
            "max_pos" => t.max_pos = value(key, v)?,
            "checkpoint_every" => t.checkpoint_every = value(key, v)?,
            "optimizer" => t.optimizer = parsed(key, v)?,
            "weighted" => t.weighted_adjacency = value(key, v)?,
            "metapaths" => self.metapaths = MetaPath::parse_list(v).map_err(|e| Error::Config(format!("{key}: {e}")))?,
            "split_ratio" => self.split_ratio = value(key, v)?,
            "ablation_seeds" => self.ablation_seeds = value(key, v)?,
            "eval_input" => {
                self.eval_input = match v {
                    "unified" => EvalInput::Unified,
                    "concat" => EvalInput::Concatenated,
                    _ => return Err(Error::Config(format!("{key}: expected unified | concat, got '{v}'"))),
                }
            }
            "min_links" => self.min_links = value(key, v)?,
            "filter_teachers" => self.filter_teachers = value(key, v)?,
            "include_base" => self.include_base = value(key, v)?,
            _ => match key.strip_prefix("synth.") {
                Some(rest) => self.set_synth(key, rest, v)?,
                None => return Err(Error::Config(format!("unknown key '{key}'"))),
            },
        }
        Ok(())
    }

    fn set_synth(&mut self, key: &str, rest: &str, v: &str) -> Result<()> {
        let s = &mut self.synth;
        match rest {
            "n_courses" => s.n_courses = value(key, v)?,
            "n_students" => s.n_students = value(key, v)?,
            "n_teachers" => s.n_teachers = value(key, v)?,
            "n_subjects" => s.n_subjects = value(key, v)?,
            "n_classes" => s.n_classes = value(key, v)?,
            "d" => s.d = value(key, v)?,
            "p_in" => s.p_in = value(key, v)?,
            "p_out" => s.p_out = value(key, v)?,
            "sigma_f" => s.sigma_f = value(key, v)?,
            "prototype_scale" => s.prototype_scale = value(key, v)?,
            "seed" => s.seed = value(key, v)?,
            "noise_view" => {
                let mp: MetaPath = parsed(key, v)?;
                *s = crate::synth::make_noise_view_config(s, &mp);
            }
            _ => {
                let (kind, field) = rest
                    .split_once('.')
                    .and_then(|(k, f)| Some((intermediate(k)?, f)))
                    .ok_or_else(|| Error::Config(format!("unknown key '{key}'")))?;
                let current = s.rates(kind);
                let p: f64 = value(key, v)?;
                let rates = match field {
                    "p_in" => LinkRates { p_in: p, ..current },
                    "p_out" => LinkRates { p_out: p, ..current },
                    _ => return Err(Error::Config(format!("unknown key '{key}'"))),
                };
                s.overrides.insert(kind, rates);
            }
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |msg: String| Error::Config(format!("{}:{}: {msg}", origin.display(), i + 1));
            let (k, v) = line.split_once('=').ok_or_else(|| at(format!("expected 'key = value', found '{line}'")))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(at(format!("duplicate key '{k}'")));
            }
            self.set(k, v).map_err(|e| match e {
                Error::Config(m) => at(m),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got '{kv}'")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config("split_ratio must lie in (0, 1)".into()));
        }
        if self.ablation_seeds == 0 {
            return Err(Error::Config("ablation_seeds must be at least 1".into()));
        }
        if self.metapaths.is_empty() {
            return Err(Error::Config("at least one meta-path is required".into()));
        }
        Ok(())
    }

    /// Every setting as `key = value` text that [`RunConfig::apply_text`]
    /// reads back.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.train.echo() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        let eval_input = match self.eval_input {
            EvalInput::Unified => "unified",
            EvalInput::Concatenated => "concat",
        };
        for (k, v) in [
            ("metapaths", combo_label(&self.metapaths)),
            ("split_ratio", self.split_ratio.to_string()),
            ("ablation_seeds", self.ablation_seeds.to_string()),
            ("eval_input", eval_input.to_string()),
            ("min_links", self.min_links.to_string()),
            ("filter_teachers", self.filter_teachers.to_string()),
            ("include_base", self.include_base.to_string()),
        ] {
            s.push_str(&format!("{k} = {v}\n"));
        }
        for (k, v) in self.synth.echo() {
            s.push_str(&format!("synth.{k} = {v}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_and_comments() {
        let mut c = RunConfig::default();
        c.apply_text("# run\n\nepochs = 12\nlr=0.01\nmetapaths = MP1&MP3\nsynth.student.p_in = 0.3\n", Path::new("run.cfg"))
            .unwrap();
        assert_eq!(c.train.epochs, 12);
        assert_eq!(c.train.lr, 0.01);
        assert_eq!(combo_label(&c.metapaths), "MP1&MP3");
        assert_eq!(c.synth.rates(NodeType::Student), LinkRates { p_in: 0.3, p_out: 0.01 });
    }

    #[test]
    fn unknown_and_malformed_lines_name_the_line() {
        let err = RunConfig::default().apply_text("epochs = 3\nbogus = 1\n", Path::new("run.cfg")).unwrap_err();
        assert!(err.to_string().contains("run.cfg:2") && err.to_string().contains("bogus"), "{err}");
        assert!(RunConfig::default().apply_text("epochs 3\n", Path::new("x")).is_err());
        assert!(RunConfig::default().apply_text("epochs = three\n", Path::new("x")).is_err());
        assert!(RunConfig::default().apply_text("seed = 1\nseed = 2\n", Path::new("x")).is_err());
        assert!(RunConfig::default().apply_text("synth.course.p_in = 0.1\n", Path::new("x")).is_err());
    }

    #[test]
    fn overrides_win() {
        let mut c = RunConfig::default();
        c.apply_text("seed = 3\n", Path::new("x")).unwrap();
        c.apply_override("seed=9").unwrap();
        assert_eq!(c.train.seed, 9);
        assert!(c.apply_override("seed").is_err());
    }

    #[test]
    fn echo_reads_back() {
        let mut c = RunConfig::default();
        c.apply_text("k = 8\nattention_reduce = sum_over_views\nsynth.noise_view = MP2\neval_input = concat\n", Path::new("x"))
            .unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&c.echo(), Path::new("echo")).unwrap();
        assert_eq!(back.echo(), c.echo());
        assert_eq!(back.train, c.train);
        assert_eq!(back.synth, c.synth);
    }
}
