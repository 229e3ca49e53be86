//! Config-driven end-to-end runs: generate or load a task, train at each
//! data fraction, evaluate all three streams, and write the report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{experiment_from, ExperimentConfig, RawConfig, TaskSource};
use super::synth::{synth_latent_chain, synth_recommend};
use super::{evaluate, load_dataset, prepare, Dataset, EvalOptions, HarnessError, Metrics,
            Prepared, Score, Split, TaskKind};
use crate::concordia::{train, ConcordiaModel, TrainHistory, TrainOptions};
use crate::grounder::GroundOptions;
use crate::hlmrf::Weights;
use crate::logic_lang::Theory;
use crate::neural::{Mlp, MlpConfig, OutputKind};
use crate::scalar::Real;

/// Keeps the test split intact and a seeded, label-stratified `fraction` of
/// the training split.
pub fn subsample<T: Real>(dataset: &Dataset<T>, fraction: f64, seed: u64) -> Dataset<T> {
    if fraction >= 1.0 {
        return dataset.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Stratify by class for classification; regression labels are all
    // distinct, so its training split forms one pool.
    let stratified = matches!(dataset.mapping.task, TaskKind::Classification { .. });
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, d) in dataset.data.iter().enumerate() {
        if d.split == Split::Train {
            let key =
                if stratified { d.label.clone().unwrap_or_default() } else { String::new() };
            groups.entry(key).or_default().push(i);
        }
    }
    let mut keep: Vec<usize> = dataset
        .data
        .iter()
        .enumerate()
        .filter(|(_, d)| d.split == Split::Test)
        .map(|(i, _)| i)
        .collect();
    for (_, mut members) in groups {
        members.shuffle(&mut rng);
        let take = ((members.len() as f64) * fraction).ceil() as usize;
        keep.extend(members.into_iter().take(take.max(1)));
    }
    keep.sort_unstable();
    Dataset {
        data: keep.iter().map(|&i| dataset.data[i].clone()).collect(),
        facts: dataset.facts.clone(),
        mapping: dataset.mapping.clone(),
    }
}

/// Fresh model matching the mapping's task shape and the config's seeds.
pub fn build_model<T: Real>(
    dataset: &Dataset<T>,
    theory: &Theory<T>,
    cfg: &ExperimentConfig<T>,
) -> ConcordiaModel<T> {
    let output_dim = match &dataset.mapping.task {
        TaskKind::Classification { classes } => classes.len(),
        TaskKind::Regression { .. } => 1,
    };
    let output = match &dataset.mapping.task {
        TaskKind::Classification { .. } => OutputKind::Softmax,
        TaskKind::Regression { .. } => OutputKind::Sigmoid,
    };
    ConcordiaModel {
        theory: theory.clone(),
        weights: Weights::from_theory(theory),
        neural: Mlp::new(
            MlpConfig {
                input_dim: dataset.mapping.features,
                hidden: cfg.neural_hidden.clone(),
                output_dim,
                output,
            },
            cfg.neural_seed,
        ),
        gating: Mlp::new(
            MlpConfig {
                input_dim: dataset.mapping.features,
                hidden: cfg.gating_hidden.clone(),
                output_dim: 1,
                output: OutputKind::Sigmoid,
            },
            cfg.gating_seed,
        ),
        solver: cfg.solver,
        use_priors: cfg.use_priors,
    }
}

pub fn materialize<T: Real>(
    cfg: &ExperimentConfig<T>,
) -> Result<(Dataset<T>, Theory<T>), HarnessError> {
    match &cfg.source {
        TaskSource::SynthRecommend { users, items, density } => {
            synth_recommend(cfg.seed, *users, *items, *density)
        }
        TaskSource::SynthChain { frames, boxes_per_frame, noise, distractors } => {
            synth_latent_chain(cfg.seed, *frames, *boxes_per_frame, *noise, *distractors)
        }
        TaskSource::Files { rules, facts, data, mapping } => {
            let theory =
                crate::logic_lang::parse_theory(&std::fs::read_to_string(rules)?)?;
            let dataset =
                load_dataset(Path::new(data), Path::new(facts), Path::new(mapping))?;
            Ok((dataset, theory))
        }
    }
}

/// One fraction's worth of work: subsample, ground, train, evaluate.
pub fn run_fraction<T: Real>(
    dataset: &Dataset<T>,
    theory: &Theory<T>,
    cfg: &ExperimentConfig<T>,
    fraction: f64,
) -> Result<(Metrics<T>, TrainHistory<T>, ConcordiaModel<T>, Prepared<T>), HarnessError> {
    let subset = subsample(dataset, fraction, cfg.seed ^ 0x5eed);
    if subset.split(Split::Train).next().is_none() {
        return Err(HarnessError::Config("training split is empty".into()));
    }
    let prepared = prepare(
        &subset,
        theory,
        &GroundOptions { drop_statically_satisfied: true, ..GroundOptions::default() },
    )?;
    let mut model = build_model(&subset, theory, cfg);
    let train_examples: Vec<_> = subset
        .data
        .iter()
        .zip(&prepared.examples)
        .filter(|(d, _)| d.split == Split::Train)
        .map(|(_, e)| e.clone())
        .collect();
    let opts = TrainOptions {
        epochs: cfg.epochs,
        lr_neural: cfg.lr_neural,
        lr_weights: cfg.lr_weights,
        lr_gating: cfg.lr_gating,
        seed: cfg.seed,
        mode: cfg.mode,
    };
    let history = train(&mut model, &prepared.graph, &train_examples, &opts)?;
    let metrics = evaluate(
        &model,
        &prepared.graph,
        &subset,
        &prepared.examples,
        &EvalOptions { no_logic: cfg.no_logic },
    )?;
    Ok((metrics, history, model, prepared))
}

fn score_csv<T: Real>(score: &Score<T>) -> String {
    // Columns stay fixed across tasks; inapplicable ones are left empty.
    match score {
        Score::Classification { accuracy, precision, recall, f1 } => format!(
            "{:.6},{:.6},{:.6},{:.6},",
            accuracy.as_f64(),
            precision.as_f64(),
            recall.as_f64(),
            f1.as_f64()
        ),
        Score::Regression { rmse } => format!(",,,,{:.6}", rmse.as_f64()),
    }
}

/// The full report for one config: metrics per (fraction, stream) plus a
/// training history per fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct Report<T> {
    pub rows: Vec<(f64, Metrics<T>)>,
    pub histories: Vec<(f64, TrainHistory<T>)>,
}

/// Renders per-(fraction, stream) metric rows with a fixed header.
pub fn metrics_csv<T: Real>(rows: &[(f64, Metrics<T>)]) -> String {
    let mut out = String::from("fraction,stream,count,accuracy,precision,recall,f1,rmse\n");
    for (fraction, m) in rows {
        for (stream, score) in
            [("neural", &m.neural), ("logic", &m.logic), ("mixture", &m.mixture)]
        {
            writeln!(out, "{fraction},{stream},{},{}", m.count, score_csv(score))
                .expect("string write");
        }
    }
    out
}

/// Renders one training history as CSV, one row per epoch.
pub fn history_csv<T: Real>(history: &TrainHistory<T>) -> String {
    let mut csv = String::from("epoch,mean_loss,mean_imitation,mean_kappa\n");
    for (i, e) in history.epochs.iter().enumerate() {
        writeln!(
            csv,
            "{i},{:.6},{:.6},{:.6}",
            e.mean_loss.as_f64(),
            e.mean_imitation.as_f64(),
            e.mean_kappa.as_f64()
        )
        .expect("string write");
    }
    csv
}

pub fn run_experiment<T: Real>(
    config_text: &str,
    out_dir: &Path,
) -> Result<Report<T>, HarnessError> {
    let raw = RawConfig::parse(config_text)?;
    let cfg = experiment_from::<T>(&raw)?;
    let (dataset, theory) = materialize(&cfg)?;

    let mut report = Report { rows: Vec::new(), histories: Vec::new() };
    for &fraction in &cfg.fractions {
        let (metrics, history, _, _) = run_fraction(&dataset, &theory, &cfg, fraction)?;
        report.rows.push((fraction, metrics));
        report.histories.push((fraction, history));
    }

    std::fs::create_dir_all(out_dir)?;
    let mut summary = String::new();
    for (fraction, m) in &report.rows {
        for (stream, score) in
            [("neural", &m.neural), ("logic", &m.logic), ("mixture", &m.mixture)]
        {
            writeln!(
                summary,
                "fraction {fraction}: {stream} {} = {:.4}",
                match score {
                    Score::Classification { .. } => "accuracy",
                    Score::Regression { .. } => "rmse",
                },
                score.headline().as_f64()
            )
            .expect("string write");
        }
    }
    std::fs::write(out_dir.join("metrics.csv"), metrics_csv(&report.rows))?;
    std::fs::write(out_dir.join("summary.txt"), summary)?;
    for (fraction, history) in &report.histories {
        std::fs::write(out_dir.join(format!("history_{fraction}.csv")), history_csv(history))?;
    }
    Ok(report)
}
