//! Experiment plumbing: datasets, datum-to-logic/feature mappings, metric
//! computation, synthetic task generators, and the config-driven runner.

use std::collections::BTreeSet;
use std::path::Path;

use thiserror::Error;

use crate::concordia::{
    infer_concordia, scale_regression, unscale_regression, ConcordiaError, ConcordiaModel,
    Example,
};
use crate::grounder::{
    collect_constants, ground_theory, AtomId, FactSet, GroundError, GroundFactorGraph,
    GroundOptions,
};
use crate::hlmrf::{PartialAssignment, TargetSpec};
use crate::logic_lang::{LogicError, Theory};
use crate::neural::Label;
use crate::scalar::Real;

pub mod config;
pub mod run;
pub mod synth;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}:{line}: {msg}")]
    Data { path: String, line: usize, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error("mapping: {0}")]
    Mapping(String),
    #[error("datum {id}: {msg}")]
    Datum { id: String, msg: String },
    #[error(transparent)]
    Ground(#[from] GroundError),
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error(transparent)]
    Model(#[from] ConcordiaError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// One raw data row: identifying constants, feature values, and an optional
/// label token.
#[derive(Debug, Clone, PartialEq)]
pub struct Datum<T> {
    pub id: String,
    pub split: Split,
    pub args: Vec<String>,
    pub label: Option<String>,
    pub features: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub data: Vec<Datum<T>>,
    pub facts: FactSet<T>,
    pub mapping: MappingConfig<T>,
}

impl<T: Real> Dataset<T> {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Datum<T>> {
        self.data.iter().filter(move |d| d.split == split)
    }
}

/// An atom pattern such as `Doing($0, $class)`: `$k` pulls the datum's k-th
/// constant, `$class` expands per class, anything else is a literal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtomTemplate {
    pub predicate: String,
    pub args: Vec<TemplateArg>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TemplateArg {
    DatumArg(usize),
    Class,
    Const(String),
}

impl AtomTemplate {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let text = text.trim();
        let open = text
            .find('(')
            .ok_or_else(|| HarnessError::Mapping(format!("template `{text}` has no `(`")))?;
        if !text.ends_with(')') {
            return Err(HarnessError::Mapping(format!("template `{text}` has no closing `)`")));
        }
        let predicate = text[..open].trim().to_string();
        if predicate.is_empty() {
            return Err(HarnessError::Mapping(format!("template `{text}` lacks a predicate")));
        }
        let args = text[open + 1..text.len() - 1]
            .split(',')
            .map(|raw| {
                let raw = raw.trim();
                if raw == "$class" {
                    Ok(TemplateArg::Class)
                } else if let Some(num) = raw.strip_prefix('$') {
                    num.parse::<usize>().map(TemplateArg::DatumArg).map_err(|_| {
                        HarnessError::Mapping(format!("bad placeholder `{raw}`"))
                    })
                } else if raw.is_empty() {
                    Err(HarnessError::Mapping(format!("empty argument in `{text}`")))
                } else {
                    Ok(TemplateArg::Const(raw.to_string()))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(AtomTemplate { predicate, args })
    }

    pub fn instantiate(
        &self,
        datum: &Datum<impl Real>,
        class: Option<&str>,
    ) -> Result<(String, Vec<String>), HarnessError> {
        let args = self
            .args
            .iter()
            .map(|a| match a {
                TemplateArg::Const(c) => Ok(c.clone()),
                TemplateArg::Class => class.map(str::to_string).ok_or_else(|| {
                    HarnessError::Mapping("`$class` used in a regression mapping".into())
                }),
                TemplateArg::DatumArg(k) => {
                    datum.args.get(*k).cloned().ok_or_else(|| HarnessError::Datum {
                        id: datum.id.clone(),
                        msg: format!("has no argument ${k}"),
                    })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((self.predicate.clone(), args))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskKind<T> {
    Classification { classes: Vec<String> },
    Regression { lo: T, hi: T },
}

/// The τ/ν configuration: how a datum names its target and prior atoms, and
/// how its raw features map onto network inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingConfig<T> {
    pub task: TaskKind<T>,
    pub target: AtomTemplate,
    pub prior: AtomTemplate,
    pub features: usize,
    /// Optional per-feature affine normalization `(v - lo) / (hi - lo)`.
    pub feature_ranges: Vec<Option<(T, T)>>,
}

impl<T: Real> MappingConfig<T> {
    pub fn classes(&self) -> &[String] {
        match &self.task {
            TaskKind::Classification { classes } => classes,
            TaskKind::Regression { .. } => &[],
        }
    }

    fn normalize(&self, features: &[T]) -> Vec<T> {
        features
            .iter()
            .zip(&self.feature_ranges)
            .map(|(&v, range)| match range {
                Some((lo, hi)) => (v - *lo) / (*hi - *lo),
                None => v,
            })
            .collect()
    }

    /// Label token to the trainer's representation; regression values are
    /// scaled into [0, 1].
    pub fn parse_label(&self, datum: &Datum<T>) -> Result<Option<Label<T>>, HarnessError> {
        let Some(raw) = &datum.label else { return Ok(None) };
        match &self.task {
            TaskKind::Classification { classes } => classes
                .iter()
                .position(|c| c == raw)
                .map(|i| Some(Label::Class(i)))
                .ok_or_else(|| HarnessError::Datum {
                    id: datum.id.clone(),
                    msg: format!("label `{raw}` is not a declared class"),
                }),
            TaskKind::Regression { lo, hi } => {
                let v = raw.parse::<f64>().map_err(|_| HarnessError::Datum {
                    id: datum.id.clone(),
                    msg: format!("label `{raw}` is not numeric"),
                })?;
                Ok(Some(Label::Value(scale_regression(T::of(v), *lo, *hi)?)))
            }
        }
    }
}

/// Parses the data file: one datum per line,
/// `id<TAB>split<TAB>arg,...<TAB>label<TAB>feature,...` with `-` standing
/// for a missing label.
pub fn parse_data<T: Real>(text: &str, path: &str) -> Result<Vec<Datum<T>>, HarnessError> {
    let mut data = Vec::new();
    let mut seen = BTreeSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |msg: String| HarnessError::Data { path: path.to_string(), line, msg };
        let fields: Vec<&str> = raw.split('\t').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(err(format!("expected 5 tab-separated fields, got {}", fields.len())));
        }
        let id = fields[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(err(format!("duplicate datum id `{id}`")));
        }
        let split = match fields[1] {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(err(format!("unknown split `{other}`"))),
        };
        let args: Vec<String> =
            fields[2].split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        if args.is_empty() {
            return Err(err("datum needs at least one constant argument".into()));
        }
        let label = match fields[3] {
            "-" => None,
            other => Some(other.to_string()),
        };
        let features = fields[4]
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map(T::of)
                    .map_err(|_| err(format!("bad feature value `{s}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        data.push(Datum { id, split, args, label, features });
    }
    Ok(data)
}

pub fn load_dataset<T: Real>(
    data_path: &Path,
    facts_path: &Path,
    mapping_path: &Path,
) -> Result<Dataset<T>, HarnessError> {
    let mapping = config::parse_mapping::<T>(&std::fs::read_to_string(mapping_path)?)?;
    let facts = FactSet::parse(&std::fs::read_to_string(facts_path)?)?;
    let data = parse_data(
        &std::fs::read_to_string(data_path)?,
        &data_path.display().to_string(),
    )?;
    for datum in &data {
        if datum.features.len() != mapping.features {
            return Err(HarnessError::Datum {
                id: datum.id.clone(),
                msg: format!(
                    "has {} features, mapping declares {}",
                    datum.features.len(),
                    mapping.features
                ),
            });
        }
    }
    Ok(Dataset { data, facts, mapping })
}

/// Shared grounded context plus one example per datum, in data order.
pub struct Prepared<T> {
    pub graph: GroundFactorGraph<T>,
    pub examples: Vec<Example<T>>,
}

fn datum_atoms<T: Real>(
    graph: &mut GroundFactorGraph<T>,
    template: &AtomTemplate,
    datum: &Datum<T>,
    classes: &[String],
) -> Result<Vec<AtomId>, HarnessError> {
    if classes.is_empty() {
        let (p, args) = template.instantiate(datum, None)?;
        Ok(vec![graph.get_or_insert(&p, args)])
    } else {
        classes
            .iter()
            .map(|c| {
                let (p, args) = template.instantiate(datum, Some(c))?;
                Ok(graph.get_or_insert(&p, args))
            })
            .collect()
    }
}

/// Grounds the theory over the dataset's facts and builds per-datum
/// examples. Each example sees the global observations plus the labels of
/// every *other* labeled training datum clamped onto their target atoms;
/// its own targets stay free.
pub fn prepare<T: Real>(
    dataset: &Dataset<T>,
    theory: &Theory<T>,
    options: &GroundOptions,
) -> Result<Prepared<T>, HarnessError> {
    let dm = collect_constants(theory, &dataset.facts)?;
    let mut graph = ground_theory(theory, &dm, &dataset.facts, options)?;

    let classes = dataset.mapping.classes().to_vec();
    let mut target_ids = Vec::with_capacity(dataset.data.len());
    let mut prior_ids = Vec::with_capacity(dataset.data.len());
    for datum in &dataset.data {
        target_ids.push(datum_atoms(&mut graph, &dataset.mapping.target, datum, &classes)?);
        prior_ids.push(datum_atoms(&mut graph, &dataset.mapping.prior, datum, &classes)?);
    }

    let base = PartialAssignment::from_graph(&graph);
    let labels: Vec<Option<Label<T>>> = dataset
        .data
        .iter()
        .map(|d| dataset.mapping.parse_label(d))
        .collect::<Result<_, _>>()?;

    let mut examples = Vec::with_capacity(dataset.data.len());
    for (i, datum) in dataset.data.iter().enumerate() {
        let mut observed = base.clone();
        for (j, other) in dataset.data.iter().enumerate() {
            if i == j || other.split != Split::Train {
                continue;
            }
            match labels[j] {
                Some(Label::Class(y)) => {
                    for (k, &id) in target_ids[j].iter().enumerate() {
                        observed.set(id, if k == y { T::one() } else { T::zero() });
                    }
                }
                Some(Label::Value(v)) => observed.set(target_ids[j][0], v),
                None => {}
            }
        }
        let targets = if classes.is_empty() {
            TargetSpec::Regression(target_ids[i][0])
        } else {
            TargetSpec::Classification(target_ids[i].clone())
        };
        examples.push(Example {
            features: dataset.mapping.normalize(&datum.features),
            observed,
            targets,
            prior_atoms: prior_ids[i].clone(),
            label: labels[i],
        });
    }
    Ok(Prepared { graph, examples })
}

/// Scores for one prediction stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Score<T> {
    Classification { accuracy: T, precision: T, recall: T, f1: T },
    Regression { rmse: T },
}

impl<T: Real> Score<T> {
    pub fn headline(&self) -> T {
        match self {
            Score::Classification { accuracy, .. } => *accuracy,
            Score::Regression { rmse } => *rmse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics<T> {
    pub neural: Score<T>,
    pub logic: Score<T>,
    pub mixture: Score<T>,
    pub count: usize,
}

fn classification_score<T: Real>(pairs: &[(usize, usize)], n_classes: usize) -> Score<T> {
    let total = pairs.len().max(1);
    let hits = pairs.iter().filter(|(p, y)| p == y).count();
    let accuracy = T::of(hits as f64 / total as f64);
    // Macro-averaged precision/recall over the classes present in the truth.
    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut active = 0usize;
    for c in 0..n_classes {
        let tp = pairs.iter().filter(|(p, y)| *p == c && *y == c).count() as f64;
        let pred_c = pairs.iter().filter(|(p, _)| *p == c).count() as f64;
        let true_c = pairs.iter().filter(|(_, y)| *y == c).count() as f64;
        if true_c == 0.0 {
            continue;
        }
        active += 1;
        precision_sum += if pred_c > 0.0 { tp / pred_c } else { 0.0 };
        recall_sum += tp / true_c;
    }
    let active = active.max(1) as f64;
    let precision = precision_sum / active;
    let recall = recall_sum / active;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Score::Classification {
        accuracy,
        precision: T::of(precision),
        recall: T::of(recall),
        f1: T::of(f1),
    }
}

fn regression_score<T: Real>(pairs: &[(T, T)]) -> Score<T> {
    let total = T::of(pairs.len().max(1) as f64);
    let sse: T = pairs.iter().map(|(p, y)| (*p - *y) * (*p - *y)).sum();
    Score::Regression { rmse: (sse / total).sqrt() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    /// Report the neural stream as the mixture (logic ablation).
    pub no_logic: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { no_logic: false }
    }
}

/// Runs fused inference on the labeled test split and scores each stream.
pub fn evaluate<T: Real>(
    model: &ConcordiaModel<T>,
    graph: &GroundFactorGraph<T>,
    dataset: &Dataset<T>,
    examples: &[Example<T>],
    opts: &EvalOptions,
) -> Result<Metrics<T>, HarnessError> {
    debug_assert_eq!(dataset.data.len(), examples.len());
    let mut class_pairs: [Vec<(usize, usize)>; 3] = [vec![], vec![], vec![]];
    let mut reg_pairs: [Vec<(T, T)>; 3] = [vec![], vec![], vec![]];
    let mut count = 0usize;

    for (datum, example) in dataset.data.iter().zip(examples) {
        if datum.split != Split::Test {
            continue;
        }
        let Some(label) = &example.label else { continue };
        count += 1;
        let fused = infer_concordia(model, graph, example)?;
        let mixture = if opts.no_logic { &fused.neural } else { &fused.mix };
        let streams = [&fused.neural, &fused.logic, mixture];
        match (label, &dataset.mapping.task) {
            (Label::Class(y), _) => {
                for (k, s) in streams.iter().enumerate() {
                    class_pairs[k].push((s.argmax(), *y));
                }
            }
            (Label::Value(_), TaskKind::Regression { lo, hi }) => {
                let truth = T::of(
                    datum.label.as_ref().expect("labeled").parse::<f64>().expect("numeric"),
                );
                for (k, s) in streams.iter().enumerate() {
                    let raw = unscale_regression(
                        s.as_scalar().expect("regression stream"),
                        *lo,
                        *hi,
                    )?;
                    reg_pairs[k].push((raw, truth));
                }
            }
            (Label::Value(_), TaskKind::Classification { .. }) => {
                return Err(HarnessError::Datum {
                    id: datum.id.clone(),
                    msg: "numeric label in a classification task".into(),
                })
            }
        }
    }

    let n_classes = dataset.mapping.classes().len();
    let score = |k: usize| {
        if n_classes > 0 {
            classification_score(&class_pairs[k], n_classes)
        } else {
            regression_score(&reg_pairs[k])
        }
    };
    Ok(Metrics { neural: score(0), logic: score(1), mixture: score(2), count })
}
