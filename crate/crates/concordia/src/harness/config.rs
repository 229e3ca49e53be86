//! Plain-text sectioned key=value configuration. Unknown sections or keys
//! are hard errors; a silent typo is worse than a loud one.

use std::collections::BTreeMap;

use super::{AtomTemplate, HarnessError, MappingConfig, TaskKind};
use crate::concordia::Mode;
use crate::hlmrf::{Penalty, SolverOptions};
use crate::scalar::Real;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    pub sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if let Some(name) = trimmed.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| {
                        HarnessError::Config(format!("line {line}: unterminated section header"))
                    })?
                    .trim();
                current = name.to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("line {line}: expected `key = value`"))
            })?;
            if current.is_empty() {
                return Err(HarnessError::Config(format!(
                    "line {line}: `{}` appears before any [section]",
                    key.trim()
                )));
            }
            let prior = sections
                .get_mut(&current)
                .expect("section exists")
                .insert(key.trim().to_string(), value.trim().to_string());
            if prior.is_some() {
                return Err(HarnessError::Config(format!(
                    "line {line}: duplicate key `{}` in [{current}]",
                    key.trim()
                )));
            }
        }
        Ok(RawConfig { sections })
    }

    /// Hands out one section's keys; the caller's schema check happens in
    /// [`Section::finish`].
    pub fn section(&self, name: &str) -> Section {
        Section {
            name: name.to_string(),
            entries: self.sections.get(name).cloned().unwrap_or_default(),
            touched: Vec::new(),
        }
    }

    pub fn ensure_only_sections(&self, allowed: &[&str]) -> Result<(), HarnessError> {
        for name in self.sections.keys() {
            if !allowed.contains(&name.as_str()) {
                return Err(HarnessError::Config(format!("unknown section [{name}]")));
            }
        }
        Ok(())
    }
}

pub struct Section {
    name: String,
    entries: BTreeMap<String, String>,
    touched: Vec<String>,
}

impl Section {
    pub fn get(&mut self, key: &str) -> Option<String> {
        self.touched.push(key.to_string());
        self.entries.get(key).cloned()
    }

    pub fn require(&mut self, key: &str) -> Result<String, HarnessError> {
        self.get(key).ok_or_else(|| {
            HarnessError::Config(format!("[{}] is missing required key `{key}`", self.name))
        })
    }

    pub fn parsed<T: std::str::FromStr>(
        &mut self,
        key: &str,
        default: T,
    ) -> Result<T, HarnessError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                HarnessError::Config(format!("[{}] {key}: cannot parse `{v}`", self.name))
            }),
        }
    }

    /// Rejects any key that was never asked for.
    pub fn finish(self) -> Result<(), HarnessError> {
        for key in self.entries.keys() {
            if !self.touched.iter().any(|t| t == key) {
                return Err(HarnessError::Config(format!(
                    "unknown key `{key}` in [{}]",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

fn parse_pair<T: Real>(section: &str, key: &str, value: &str) -> Result<(T, T), HarnessError> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(HarnessError::Config(format!(
            "[{section}] {key}: expected `lo,hi`, got `{value}`"
        )));
    }
    let lo = parts[0].parse::<f64>();
    let hi = parts[1].parse::<f64>();
    match (lo, hi) {
        (Ok(lo), Ok(hi)) => Ok((T::of(lo), T::of(hi))),
        _ => Err(HarnessError::Config(format!("[{section}] {key}: non-numeric bound"))),
    }
}

/// Reads a `[mapping]` file (or section text) into a [`MappingConfig`].
pub fn parse_mapping<T: Real>(text: &str) -> Result<MappingConfig<T>, HarnessError> {
    let raw = RawConfig::parse(text)?;
    raw.ensure_only_sections(&["mapping"])?;
    mapping_from(&raw)
}

pub fn mapping_from<T: Real>(raw: &RawConfig) -> Result<MappingConfig<T>, HarnessError> {
    let mut s = raw.section("mapping");
    let task = match s.require("task")?.as_str() {
        "classification" => {
            let classes: Vec<String> = s
                .require("classes")?
                .split(',')
                .map(|c| c.trim().to_string())
                .filter(|c| !c.is_empty())
                .collect();
            if classes.len() < 2 {
                return Err(HarnessError::Config(
                    "[mapping] classes: need at least two classes".into(),
                ));
            }
            TaskKind::Classification { classes }
        }
        "regression" => {
            let (lo, hi) = parse_pair::<T>("mapping", "range", &s.require("range")?)?;
            TaskKind::Regression { lo, hi }
        }
        other => {
            return Err(HarnessError::Config(format!("[mapping] task: unknown task `{other}`")))
        }
    };
    let target = AtomTemplate::parse(&s.require("target")?)?;
    let prior = AtomTemplate::parse(&s.require("prior")?)?;
    let features: usize = s.parsed("features", 0)?;
    if features == 0 {
        return Err(HarnessError::Config("[mapping] features: must be positive".into()));
    }
    let mut feature_ranges = vec![None; features];
    for (i, slot) in feature_ranges.iter_mut().enumerate() {
        // Keys look like `feature_range.3 = 0,10`.
        let key = format!("feature_range.{i}");
        if let Some(v) = s.get(&key) {
            *slot = Some(parse_pair::<T>("mapping", &key, &v)?);
        }
    }
    s.finish()?;
    Ok(MappingConfig { task, target, prior, features, feature_ranges })
}

/// Solver settings shared by the CLI and the runner.
pub fn solver_from<T: Real>(raw: &RawConfig) -> Result<SolverOptions<T>, HarnessError> {
    let mut s = raw.section("solver");
    let penalty = s.parsed("penalty", 2u32)?;
    let opts = SolverOptions {
        penalty: Penalty::from_flag(penalty).ok_or_else(|| {
            HarnessError::Config(format!("[solver] penalty: must be 1 or 2, got {penalty}"))
        })?,
        step: T::of(s.parsed("step", 0.1f64)?),
        max_iters: s.parsed("max_iters", 5000usize)?,
        tolerance: T::of(s.parsed("tolerance", 1e-6f64)?),
        init: T::of(s.parsed("init", 0.5f64)?),
    };
    s.finish()?;
    Ok(opts)
}

pub fn mode_from_str(text: &str) -> Result<Mode, HarnessError> {
    match text {
        "supervised" => Ok(Mode::Supervised),
        "semi" => Ok(Mode::SemiSupervised),
        "unsupervised" => Ok(Mode::Unsupervised),
        other => Err(HarnessError::Config(format!(
            "mode: expected supervised|semi|unsupervised, got `{other}`"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskSource {
    SynthRecommend { users: usize, items: usize, density: f64 },
    SynthChain { frames: usize, boxes_per_frame: usize, noise: f64, distractors: usize },
    Files { rules: String, facts: String, data: String, mapping: String },
}

/// Everything `run` needs, parsed and validated.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig<T> {
    pub source: TaskSource,
    pub seed: u64,
    pub fractions: Vec<f64>,
    pub no_logic: bool,
    pub use_priors: bool,
    pub neural_hidden: Vec<usize>,
    pub neural_seed: u64,
    pub gating_hidden: Vec<usize>,
    pub gating_seed: u64,
    pub solver: SolverOptions<T>,
    pub epochs: usize,
    pub lr_neural: T,
    pub lr_weights: T,
    pub lr_gating: T,
    pub mode: Mode,
}

fn parse_hidden(value: &str, section: &str) -> Result<Vec<usize>, HarnessError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>().map_err(|_| {
                HarnessError::Config(format!("[{section}] hidden: bad layer width `{s}`"))
            })
        })
        .collect()
}

pub fn experiment_from<T: Real>(raw: &RawConfig) -> Result<ExperimentConfig<T>, HarnessError> {
    raw.ensure_only_sections(&[
        "experiment",
        "mapping",
        "neural",
        "gating",
        "solver",
        "training",
    ])?;
    let mut e = raw.section("experiment");
    let task = e.require("task")?;
    let seed: u64 = e.parsed("seed", 0u64)?;
    let fractions: Vec<f64> = match e.get("fractions") {
        None => vec![1.0],
        Some(v) => v
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>().map_err(|_| {
                    HarnessError::Config(format!("[experiment] fractions: bad value `{s}`"))
                })
            })
            .collect::<Result<_, _>>()?,
    };
    for f in &fractions {
        if !(*f > 0.0 && *f <= 1.0) {
            return Err(HarnessError::Config(format!(
                "[experiment] fractions: {f} outside (0, 1]"
            )));
        }
    }
    let no_logic = e.parsed("no_logic", false)?;
    let source = match task.as_str() {
        "synth_recommend" => TaskSource::SynthRecommend {
            users: e.parsed("users", 10usize)?,
            items: e.parsed("items", 10usize)?,
            density: e.parsed("density", 0.3f64)?,
        },
        "synth_chain" => TaskSource::SynthChain {
            frames: e.parsed("frames", 30usize)?,
            boxes_per_frame: e.parsed("boxes_per_frame", 2usize)?,
            noise: e.parsed("noise", 0.0f64)?,
            distractors: e.parsed("distractors", 0usize)?,
        },
        "files" => TaskSource::Files {
            rules: e.require("rules")?,
            facts: e.require("facts")?,
            data: e.require("data")?,
            mapping: e.require("mapping")?,
        },
        other => {
            return Err(HarnessError::Config(format!(
                "[experiment] task: unknown task `{other}`"
            )))
        }
    };
    e.finish()?;

    let mut n = raw.section("neural");
    let neural_hidden = parse_hidden(&n.get("hidden").unwrap_or_else(|| "8".into()), "neural")?;
    let neural_seed: u64 = n.parsed("seed", 1u64)?;
    n.finish()?;

    let mut g = raw.section("gating");
    let gating_hidden = parse_hidden(&g.get("hidden").unwrap_or_else(|| "8".into()), "gating")?;
    let gating_seed: u64 = g.parsed("seed", 2u64)?;
    g.finish()?;

    let solver = solver_from::<T>(raw)?;

    let mut t = raw.section("training");
    let epochs: usize = t.parsed("epochs", 10usize)?;
    let lr_neural = T::of(t.parsed("lr_neural", 0.1f64)?);
    let lr_weights = T::of(t.parsed("lr_weights", 0.05f64)?);
    let lr_gating = T::of(t.parsed("lr_gating", 0.1f64)?);
    let mode = mode_from_str(&t.get("mode").unwrap_or_else(|| "supervised".into()))?;
    let use_priors = t.parsed("priors", true)?;
    t.finish()?;

    Ok(ExperimentConfig {
        source,
        seed,
        fractions,
        no_logic,
        use_priors,
        neural_hidden,
        neural_seed,
        gating_hidden,
        gating_seed,
        solver,
        epochs,
        lr_neural,
        lr_weights,
        lr_gating,
        mode,
    })
}
