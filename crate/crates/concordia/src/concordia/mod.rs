//! Fusion of the neural predictor and the rule engine.
//!
//! A gating network maps the example features to a confidence `κ` in the
//! neural predictor; the final output is the mixture
//! `κ·P_N + (1-κ)·P_L`. Training interleaves three updates per example:
//! the neural parameters (against the label and the logic teacher), the
//! rule weights, and the gating parameters.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::Distribution;
use crate::grounder::{AtomId, GroundFactorGraph};
use crate::hlmrf::{
    learn_weights_step, target_distribution, HlmrfError, PartialAssignment,
    Penalty, SolverOptions, TargetSpec, Weights,
};
use crate::logic_lang::{format_theory, parse_theory, LogicError, Theory};
use crate::neural::{
    load_checkpoint, save_checkpoint, update_neural, update_through_scalar, Label, LossParts,
    Mlp, NeuralError,
};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum ConcordiaError {
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Logic(#[from] HlmrfError),
    #[error("theory: {0}")]
    Theory(#[from] LogicError),
    #[error("cannot mix a {left}-ary and a {right}-ary distribution")]
    MixArity { left: usize, right: usize },
    #[error("{atoms} prior atoms for a {classes}-way prediction")]
    PriorArity { atoms: usize, classes: usize },
    #[error("regression bounds must satisfy lo < hi, got [{lo}, {hi}]")]
    BadBounds { lo: f64, hi: f64 },
    #[error("classification label {0} has no target atom")]
    LabelRange(usize),
    #[error("bundle io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bundle format: {0}")]
    Format(#[from] serde_json::Error),
    #[error("bundle weights do not match the theory rule count")]
    WeightCount,
}

/// Affine map from `[lo, hi]` onto the soft-truth interval `[0, 1]`.
pub fn scale_regression<T: Real>(value: T, lo: T, hi: T) -> Result<T, ConcordiaError> {
    if !(lo < hi) {
        return Err(ConcordiaError::BadBounds { lo: lo.as_f64(), hi: hi.as_f64() });
    }
    Ok((value - lo) / (hi - lo))
}

pub fn unscale_regression<T: Real>(value: T, lo: T, hi: T) -> Result<T, ConcordiaError> {
    if !(lo < hi) {
        return Err(ConcordiaError::BadBounds { lo: lo.as_f64(), hi: hi.as_f64() });
    }
    Ok(lo + value * (hi - lo))
}

/// `κ·P_N + (1-κ)·P_L`, elementwise for categorical pairs.
pub fn mixture<T: Real>(
    kappa: T,
    neural: &Distribution<T>,
    logic: &Distribution<T>,
) -> Result<Distribution<T>, ConcordiaError> {
    if neural.arity() != logic.arity() {
        return Err(ConcordiaError::MixArity { left: neural.arity(), right: logic.arity() });
    }
    let one_m = T::one() - kappa;
    Ok(match (neural, logic) {
        (Distribution::Scalar(a), Distribution::Scalar(b)) => {
            Distribution::Scalar(kappa * *a + one_m * *b)
        }
        _ => Distribution::Categorical(
            neural
                .probs()
                .iter()
                .zip(logic.probs())
                .map(|(&a, &b)| kappa * a + one_m * b)
                .collect(),
        ),
    })
}

/// Writes the neural prediction into the observation overlay at the atoms
/// standing for the network's per-class outputs.
pub fn translate<T: Real>(
    observed: &mut PartialAssignment<T>,
    prior_atoms: &[AtomId],
    prediction: &Distribution<T>,
) -> Result<(), ConcordiaError> {
    if prior_atoms.len() != prediction.arity() {
        return Err(ConcordiaError::PriorArity {
            atoms: prior_atoms.len(),
            classes: prediction.arity(),
        });
    }
    for (&id, &p) in prior_atoms.iter().zip(prediction.probs()) {
        observed.set(id, p);
    }
    Ok(())
}

/// One training or evaluation unit: features for the networks, an
/// observation overlay for the shared factor graph, the atoms addressed by
/// the prediction, and an optional label (regression labels already scaled
/// to `[0, 1]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Example<T> {
    pub features: Vec<T>,
    pub observed: PartialAssignment<T>,
    pub targets: TargetSpec,
    pub prior_atoms: Vec<AtomId>,
    pub label: Option<Label<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcordiaModel<T> {
    pub theory: Theory<T>,
    pub weights: Weights<T>,
    pub neural: Mlp<T>,
    pub gating: Mlp<T>,
    pub solver: SolverOptions<T>,
    /// When false the rule engine never sees the neural prediction.
    pub use_priors: bool,
}

impl<T: Real> ConcordiaModel<T> {
    pub fn gate(&self, features: &[T]) -> Result<T, ConcordiaError> {
        Ok(self
            .gating
            .predict(features)?
            .as_scalar()
            .expect("gating network has a scalar head"))
    }
}

/// All intermediate quantities of one fused prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Fused<T> {
    pub neural: Distribution<T>,
    pub logic: Distribution<T>,
    pub kappa: T,
    pub mix: Distribution<T>,
    /// The logic side had no opinion and fell back to uniform.
    pub degenerate_logic: bool,
}

/// Fused prediction: neural forward pass, prior translation, MAP on the
/// rule side, then the gated mixture.
pub fn infer_concordia<T: Real>(
    model: &ConcordiaModel<T>,
    graph: &GroundFactorGraph<T>,
    example: &Example<T>,
) -> Result<Fused<T>, ConcordiaError> {
    let neural = model.neural.predict(&example.features)?;
    let mut overlay = example.observed.clone();
    if model.use_priors {
        translate(&mut overlay, &example.prior_atoms, &neural)?;
    }
    let logic_out = target_distribution(
        graph,
        &model.theory,
        &model.weights,
        &overlay,
        &example.targets,
        &model.solver,
    )?;
    let kappa = model.gate(&example.features)?;
    let mix = mixture(kappa, &neural, &logic_out.dist)?;
    Ok(Fused {
        neural,
        logic: logic_out.dist,
        kappa,
        mix,
        degenerate_logic: logic_out.degenerate,
    })
}

/// Joint prediction over several task heads sharing one factor graph and
/// one gating value: a single MAP pass covers every head's targets.
pub struct TaskHead<'a, T> {
    pub neural: &'a Mlp<T>,
    pub targets: &'a TargetSpec,
    pub prior_atoms: &'a [AtomId],
}

pub fn infer_multitask<T: Real>(
    theory: &Theory<T>,
    graph: &GroundFactorGraph<T>,
    weights: &Weights<T>,
    gating: &Mlp<T>,
    heads: &[TaskHead<'_, T>],
    features: &[T],
    observed: &PartialAssignment<T>,
    solver: &SolverOptions<T>,
    use_priors: bool,
) -> Result<Vec<Fused<T>>, ConcordiaError> {
    let mut overlay = observed.clone();
    let mut neural_preds = Vec::with_capacity(heads.len());
    for head in heads {
        let pred = head.neural.predict(features)?;
        if use_priors {
            translate(&mut overlay, head.prior_atoms, &pred)?;
        }
        neural_preds.push(pred);
    }
    let map = crate::hlmrf::map_infer(graph, theory, weights, &overlay, solver);
    let kappa = gating
        .predict(features)?
        .as_scalar()
        .expect("gating network has a scalar head");
    heads
        .iter()
        .zip(neural_preds)
        .map(|(head, neural)| {
            let (logic, degenerate) = match head.targets {
                TargetSpec::Regression(id) => {
                    (Distribution::Scalar(map.interpretation.value(*id)), false)
                }
                TargetSpec::Classification(ids) => {
                    let raw: Vec<T> =
                        ids.iter().map(|&id| map.interpretation.value(id)).collect();
                    let total: T = raw.iter().copied().sum();
                    if total <= T::zero() {
                        (Distribution::uniform(ids.len()), true)
                    } else {
                        (
                            Distribution::Categorical(
                                raw.into_iter().map(|v| v / total).collect(),
                            ),
                            false,
                        )
                    }
                }
            };
            let mix = mixture(kappa, &neural, &logic)?;
            Ok(Fused { neural, logic, kappa, mix, degenerate_logic: degenerate })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Supervised,
    SemiSupervised,
    Unsupervised,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions<T> {
    pub epochs: usize,
    pub lr_neural: T,
    pub lr_weights: T,
    pub lr_gating: T,
    pub seed: u64,
    pub mode: Mode,
}

impl<T: Real> Default for TrainOptions<T> {
    fn default() -> Self {
        TrainOptions {
            epochs: 10,
            lr_neural: T::of(0.1),
            lr_weights: T::of(0.05),
            lr_gating: T::of(0.1),
            seed: 0,
            mode: Mode::Supervised,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepStats<T> {
    pub neural: LossParts<T>,
    pub kappa: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats<T> {
    pub mean_loss: T,
    pub mean_imitation: T,
    pub mean_kappa: T,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory<T> {
    pub epochs: Vec<EpochStats<T>>,
}

/// Extends the example's overlay with its label clamped onto the target
/// atoms, giving the fully observed side of the weight-learning objective.
fn clamp_label<T: Real>(
    overlay: &PartialAssignment<T>,
    targets: &TargetSpec,
    label: &Label<T>,
) -> Result<PartialAssignment<T>, ConcordiaError> {
    let mut clamped = overlay.clone();
    match (targets, label) {
        (TargetSpec::Classification(ids), Label::Class(y)) => {
            if *y >= ids.len() {
                return Err(ConcordiaError::LabelRange(*y));
            }
            for (j, &id) in ids.iter().enumerate() {
                clamped.set(id, if j == *y { T::one() } else { T::zero() });
            }
        }
        (TargetSpec::Regression(id), Label::Value(v)) => clamped.set(*id, *v),
        (TargetSpec::Classification(_), Label::Value(_)) => {
            return Err(ConcordiaError::LabelRange(usize::MAX))
        }
        (TargetSpec::Regression(_), Label::Class(y)) => {
            return Err(ConcordiaError::LabelRange(*y))
        }
    }
    Ok(clamped)
}

fn has_learnable<T: Real>(theory: &Theory<T>) -> bool {
    theory
        .rules
        .iter()
        .any(|r| !r.hard && matches!(r.weight, crate::logic_lang::Weight::Learnable))
}

/// One example's worth of updates, in order: the logic teacher is computed
/// at the current weights, then the neural parameters move, then the rule
/// weights, then the gating parameters against the refreshed components.
/// Without a usable label only the neural imitation update runs.
pub fn update_concordia<T: Real>(
    model: &mut ConcordiaModel<T>,
    graph: &GroundFactorGraph<T>,
    example: &Example<T>,
    opts: &TrainOptions<T>,
) -> Result<StepStats<T>, ConcordiaError> {
    let label = match opts.mode {
        Mode::Unsupervised => None,
        _ => example.label,
    };

    // Teacher at the current weights.
    let neural_pred = model.neural.predict(&example.features)?;
    let mut overlay = example.observed.clone();
    if model.use_priors {
        translate(&mut overlay, &example.prior_atoms, &neural_pred)?;
    }
    let teacher = target_distribution(
        graph,
        &model.theory,
        &model.weights,
        &overlay,
        &example.targets,
        &model.solver,
    )?;

    let neural_stats = update_neural(
        &mut model.neural,
        &example.features,
        label.as_ref(),
        Some(&teacher.dist),
        opts.lr_neural,
    )?;

    if let Some(label) = &label {
        // A zero rate skips the two extra MAP passes entirely.
        if opts.lr_weights > T::zero() && has_learnable(&model.theory) {
            let clamped = clamp_label(&overlay, &example.targets, label)?;
            let full = crate::hlmrf::map_infer(
                graph,
                &model.theory,
                &model.weights,
                &clamped,
                &model.solver,
            );
            model.weights = learn_weights_step(
                graph,
                &model.theory,
                &full.interpretation,
                &overlay,
                &model.weights,
                opts.lr_weights,
                &model.solver,
            );
        }

        // Gating step against the refreshed neural and logic outputs.
        let neural_new = model.neural.predict(&example.features)?;
        let mut overlay_new = example.observed.clone();
        if model.use_priors {
            translate(&mut overlay_new, &example.prior_atoms, &neural_new)?;
        }
        let logic_new = target_distribution(
            graph,
            &model.theory,
            &model.weights,
            &overlay_new,
            &example.targets,
            &model.solver,
        )?;
        let kappa = model.gate(&example.features)?;
        let upstream = match (label, &example.targets) {
            (Label::Class(y), _) => {
                let pn = neural_new.probs()[*y];
                let pl = logic_new.dist.probs()[*y];
                let mix = (kappa * pn + (T::one() - kappa) * pl).max(T::of(1e-12));
                -(pn - pl) / mix
            }
            (Label::Value(y), _) => {
                let pn = neural_new.as_scalar().expect("regression head");
                let pl = logic_new.dist.as_scalar().expect("regression target");
                let mix = kappa * pn + (T::one() - kappa) * pl;
                T::of(2.0) * (mix - *y) * (pn - pl)
            }
        };
        let kappa = update_through_scalar(
            &mut model.gating,
            &example.features,
            upstream,
            opts.lr_gating,
        )?;
        return Ok(StepStats { neural: neural_stats, kappa });
    }

    let kappa = model.gate(&example.features)?;
    Ok(StepStats { neural: neural_stats, kappa })
}

/// Epoch loop with a seeded shuffle; byte-identical given identical inputs.
pub fn train<T: Real>(
    model: &mut ConcordiaModel<T>,
    graph: &GroundFactorGraph<T>,
    examples: &[Example<T>],
    opts: &TrainOptions<T>,
) -> Result<TrainHistory<T>, ConcordiaError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = TrainHistory::default();
    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = T::zero();
        let mut imit_sum = T::zero();
        let mut kappa_sum = T::zero();
        for &i in &order {
            let stats = update_concordia(model, graph, &examples[i], opts)?;
            loss_sum = loss_sum + stats.neural.total;
            imit_sum = imit_sum + stats.neural.imitation;
            kappa_sum = kappa_sum + stats.kappa;
        }
        let n = T::of(examples.len().max(1) as f64);
        history.epochs.push(EpochStats {
            mean_loss: loss_sum / n,
            mean_imitation: imit_sum / n,
            mean_kappa: kappa_sum / n,
        });
    }
    Ok(history)
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleMeta {
    penalty: u32,
    step: f64,
    max_iters: usize,
    tolerance: f64,
    init: f64,
    use_priors: bool,
    weights: Vec<f64>,
}

/// Persists a model as a directory: the theory in source form, the two
/// networks as JSON checkpoints, and solver settings plus rule weights in a
/// metadata file.
pub fn save_model<T: Real>(model: &ConcordiaModel<T>, dir: &Path) -> Result<(), ConcordiaError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("theory.txt"), format_theory(&model.theory))?;
    save_checkpoint(&model.neural, &dir.join("neural.json"))?;
    save_checkpoint(&model.gating, &dir.join("gating.json"))?;
    let meta = BundleMeta {
        penalty: model.solver.penalty.exponent(),
        step: model.solver.step.as_f64(),
        max_iters: model.solver.max_iters,
        tolerance: model.solver.tolerance.as_f64(),
        init: model.solver.init.as_f64(),
        use_priors: model.use_priors,
        weights: model.weights.lambda.iter().map(|w| w.as_f64()).collect(),
    };
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn load_model<T: Real>(dir: &Path) -> Result<ConcordiaModel<T>, ConcordiaError> {
    let theory: Theory<T> = parse_theory(&std::fs::read_to_string(dir.join("theory.txt"))?)?;
    let meta: BundleMeta =
        serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
    if meta.weights.len() != theory.rules.len() {
        return Err(ConcordiaError::WeightCount);
    }
    Ok(ConcordiaModel {
        weights: Weights { lambda: meta.weights.iter().map(|&w| T::of(w)).collect() },
        theory,
        neural: load_checkpoint(&dir.join("neural.json"))?,
        gating: load_checkpoint(&dir.join("gating.json"))?,
        solver: SolverOptions {
            penalty: Penalty::from_flag(meta.penalty).unwrap_or(Penalty::Quadratic),
            step: T::of(meta.step),
            max_iters: meta.max_iters,
            tolerance: T::of(meta.tolerance),
            init: T::of(meta.init),
        },
        use_priors: meta.use_priors,
    })
}
