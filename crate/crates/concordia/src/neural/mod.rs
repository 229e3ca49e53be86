//! A small feed-forward predictor with tanh hidden layers.
//!
//! Training minimizes a task loss (cross-entropy for classification,
//! squared error for regression) plus an imitation term pulling the
//! network's distribution toward a teacher distribution.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::Distribution;
use crate::scalar::Real;

/// Uniform mass mixed into both sides of a KL divergence so the logarithms
/// stay finite.
pub const KL_SMOOTHING: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("input has {found} features, model expects {expected}")]
    InputDim { expected: usize, found: usize },
    #[error("teacher arity {teacher} does not match model output {model}")]
    TeacherArity { teacher: usize, model: usize },
    #[error("class label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(#[from] serde_json::Error),
    #[error("checkpoint shape does not match its stated config")]
    ShapeMismatch,
}

/// Output nonlinearity; softmax yields a categorical distribution, sigmoid a
/// single value in (0,1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputKind {
    Softmax,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub output: OutputKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    /// Row-major `out x in`.
    pub w: Vec<T>,
    pub b: Vec<T>,
    pub rows: usize,
    pub cols: usize,
}

impl<T: Real> Layer<T> {
    fn zeros(rows: usize, cols: usize) -> Self {
        Layer { w: vec![T::zero(); rows * cols], b: vec![T::zero(); rows], rows, cols }
    }

    fn forward(&self, x: &[T]) -> Vec<T> {
        (0..self.rows)
            .map(|r| {
                let row = &self.w[r * self.cols..(r + 1) * self.cols];
                row.iter().zip(x).map(|(w, v)| *w * *v).sum::<T>() + self.b[r]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub config: MlpConfig,
    pub layers: Vec<Layer<T>>,
}

fn softmax<T: Real>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = z.iter().map(|v| (*v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn sigmoid<T: Real>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

impl<T: Real> Mlp<T> {
    /// Xavier-uniform initialization from a seeded generator; the same seed
    /// always produces the same parameters.
    pub fn new(config: MlpConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![config.input_dim];
        dims.extend(&config.hidden);
        dims.push(config.output_dim);
        let layers = dims
            .windows(2)
            .map(|d| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    w: (0..fan_in * fan_out)
                        .map(|_| T::of(rng.random_range(-limit..limit)))
                        .collect(),
                    b: vec![T::zero(); fan_out],
                    rows: fan_out,
                    cols: fan_in,
                }
            })
            .collect();
        Mlp { config, layers }
    }

    /// Activations per layer: input, each tanh hidden layer, and the output
    /// probabilities.
    fn forward(&self, x: &[T]) -> Result<Vec<Vec<T>>, NeuralError> {
        if x.len() != self.config.input_dim {
            return Err(NeuralError::InputDim {
                expected: self.config.input_dim,
                found: x.len(),
            });
        }
        let mut acts = vec![x.to_vec()];
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(acts.last().expect("nonempty"));
            let a = if i < last {
                z.into_iter().map(|v| v.tanh()).collect()
            } else {
                match self.config.output {
                    OutputKind::Softmax => softmax(&z),
                    OutputKind::Sigmoid => z.into_iter().map(sigmoid).collect(),
                }
            };
            acts.push(a);
        }
        Ok(acts)
    }

    pub fn predict(&self, x: &[T]) -> Result<Distribution<T>, NeuralError> {
        let acts = self.forward(x)?;
        let out = acts.last().expect("output layer").clone();
        Ok(match self.config.output {
            OutputKind::Softmax => Distribution::Categorical(out),
            OutputKind::Sigmoid => {
                if out.len() == 1 {
                    Distribution::Scalar(out[0])
                } else {
                    Distribution::Categorical(out)
                }
            }
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn get_param(&self, mut index: usize) -> T {
        for layer in &self.layers {
            if index < layer.w.len() {
                return layer.w[index];
            }
            index -= layer.w.len();
            if index < layer.b.len() {
                return layer.b[index];
            }
            index -= layer.b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut index: usize, value: T) {
        for layer in &mut self.layers {
            if index < layer.w.len() {
                layer.w[index] = value;
                return;
            }
            index -= layer.w.len();
            if index < layer.b.len() {
                layer.b[index] = value;
                return;
            }
            index -= layer.b.len();
        }
        panic!("parameter index out of range");
    }
}

/// Supervision for one example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Label<T> {
    Class(usize),
    Value(T),
}

fn smooth<T: Real>(p: T, arity: usize) -> T {
    let eps = T::of(KL_SMOOTHING);
    (T::one() - eps) * p + eps / T::of(arity as f64)
}

/// `KL(p || q)` with both distributions mixed toward uniform by the
/// smoothing constant. Scalars are lifted to Bernoulli distributions.
pub fn kl_divergence<T: Real>(p: &Distribution<T>, q: &Distribution<T>) -> T {
    match (p, q) {
        (Distribution::Scalar(a), Distribution::Scalar(b)) => {
            let bern = |v: T| Distribution::Categorical(vec![v, T::one() - v]);
            kl_divergence(&bern(*a), &bern(*b))
        }
        _ => {
            let (pp, qq) = (p.probs(), q.probs());
            debug_assert_eq!(pp.len(), qq.len());
            let n = pp.len();
            pp.iter()
                .zip(qq)
                .map(|(&a, &b)| {
                    let a = smooth(a, n);
                    let b = smooth(b, n);
                    a * (a / b).ln()
                })
                .sum()
        }
    }
}

/// Loss pieces for one example: the supervised data term, the teacher
/// imitation term, and their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts<T> {
    pub data: T,
    pub imitation: T,
    pub total: T,
}

fn data_loss<T: Real>(pred: &Distribution<T>, label: &Label<T>) -> Result<T, NeuralError> {
    match (pred, label) {
        (Distribution::Categorical(p), Label::Class(y)) => {
            if *y >= p.len() {
                return Err(NeuralError::LabelRange { label: *y, classes: p.len() });
            }
            Ok(-smooth(p[*y], p.len()).ln())
        }
        (Distribution::Scalar(v), Label::Value(y)) => {
            let d = *v - *y;
            Ok(d * d)
        }
        (Distribution::Scalar(_), Label::Class(y)) => {
            Err(NeuralError::LabelRange { label: *y, classes: 1 })
        }
        (Distribution::Categorical(p), Label::Value(_)) => {
            Err(NeuralError::LabelRange { label: usize::MAX, classes: p.len() })
        }
    }
}

/// Example loss: data term (skipped when the label is missing) plus KL from
/// the prediction to the teacher (skipped when the teacher is missing).
pub fn loss<T: Real>(
    pred: &Distribution<T>,
    label: Option<&Label<T>>,
    teacher: Option<&Distribution<T>>,
) -> Result<LossParts<T>, NeuralError> {
    let data = match label {
        Some(l) => data_loss(pred, l)?,
        None => T::zero(),
    };
    let imitation = match teacher {
        Some(t) => {
            if t.arity() != pred.arity() {
                return Err(NeuralError::TeacherArity {
                    teacher: t.arity(),
                    model: pred.arity(),
                });
            }
            kl_divergence(pred, t)
        }
        None => T::zero(),
    };
    Ok(LossParts { data, imitation, total: data + imitation })
}

/// Parameter gradients in the same layout as [`Mlp::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend_from_slice(&layer.w);
            out.extend_from_slice(&layer.b);
        }
        out
    }
}

/// d(loss)/d(output probability) for the combined objective. The teacher is
/// held constant: no gradient flows into it.
fn output_prob_grad<T: Real>(
    probs: &[T],
    label: Option<&Label<T>>,
    teacher: Option<&Distribution<T>>,
) -> Vec<T> {
    let n = probs.len();
    let eps = T::of(KL_SMOOTHING);
    let scale = T::one() - eps;
    let mut grad = vec![T::zero(); n];
    if let Some(Label::Class(y)) = label {
        let sm = smooth(probs[*y], n);
        grad[*y] = grad[*y] - scale / sm;
    }
    if let Some(t) = teacher {
        // d/dp [ sm(p) ln(sm(p)/sm(q)) ] = (1-eps)(ln(sm(p)/sm(q)) + 1)
        let tq = t.probs();
        let tq: Vec<T> = if tq.len() == n {
            tq.to_vec()
        } else {
            // Bernoulli lift of a scalar teacher against a 2-probability head.
            vec![tq[0], T::one() - tq[0]]
        };
        for i in 0..n {
            let a = smooth(probs[i], n);
            let b = smooth(tq[i], n);
            grad[i] = grad[i] + scale * ((a / b).ln() + T::one());
        }
    }
    grad
}

fn backprop<T: Real>(
    model: &Mlp<T>,
    x: &[T],
    label: Option<&Label<T>>,
    teacher: Option<&Distribution<T>>,
) -> Result<(Gradients<T>, LossParts<T>), NeuralError> {
    let acts = model.forward(x)?;
    let pred = match model.config.output {
        OutputKind::Sigmoid if model.config.output_dim == 1 => {
            Distribution::Scalar(acts.last().expect("output")[0])
        }
        _ => Distribution::Categorical(acts.last().expect("output").clone()),
    };
    let parts = loss(&pred, label, teacher)?;

    let out = acts.last().expect("output");
    let mut delta: Vec<T> = match model.config.output {
        OutputKind::Softmax => {
            let g = output_prob_grad(out, label, teacher);
            // Softmax Jacobian: dz_i = p_i (g_i - sum_j g_j p_j).
            let dot: T = g.iter().zip(out).map(|(a, b)| *a * *b).sum();
            out.iter().zip(&g).map(|(&p, &gi)| p * (gi - dot)).collect()
        }
        OutputKind::Sigmoid => {
            // Squared-error data term plus Bernoulli KL imitation term,
            // through dσ/dz = σ(1-σ).
            let v = out[0];
            let mut dv = T::zero();
            if let Some(Label::Value(y)) = label {
                dv = dv + T::of(2.0) * (v - *y);
            }
            if let Some(t) = teacher {
                let q = t.as_scalar().unwrap_or_else(|| t.probs()[0]);
                let a = smooth(v, 2);
                let b = smooth(q, 2);
                let an = smooth(T::one() - v, 2);
                let bn = smooth(T::one() - q, 2);
                dv = dv + (T::one() - T::of(KL_SMOOTHING)) * ((a / b).ln() - (an / bn).ln());
            }
            vec![dv * v * (T::one() - v)]
        }
    };

    let grads = backward_from_delta(model, &acts, &mut delta);
    Ok((grads, parts))
}

/// Propagates an output pre-activation gradient back through the layers.
fn backward_from_delta<T: Real>(
    model: &Mlp<T>,
    acts: &[Vec<T>],
    delta: &mut Vec<T>,
) -> Gradients<T> {
    let mut grads: Vec<Layer<T>> =
        model.layers.iter().map(|l| Layer::zeros(l.rows, l.cols)).collect();
    for i in (0..model.layers.len()).rev() {
        let input = &acts[i];
        let layer = &model.layers[i];
        for r in 0..layer.rows {
            for c in 0..layer.cols {
                grads[i].w[r * layer.cols + c] = delta[r] * input[c];
            }
            grads[i].b[r] = delta[r];
        }
        if i > 0 {
            // Through the tanh of the previous hidden layer.
            let mut prev = vec![T::zero(); layer.cols];
            for (c, p) in prev.iter_mut().enumerate() {
                for r in 0..layer.rows {
                    *p = *p + layer.w[r * layer.cols + c] * delta[r];
                }
                let h = input[c];
                *p = *p * (T::one() - h * h);
            }
            *delta = prev;
        }
    }
    Gradients { layers: grads }
}

fn apply_sgd<T: Real>(model: &mut Mlp<T>, grads: &Gradients<T>, lr: T) {
    for (layer, g) in model.layers.iter_mut().zip(&grads.layers) {
        for (w, gw) in layer.w.iter_mut().zip(&g.w) {
            *w = *w - lr * *gw;
        }
        for (b, gb) in layer.b.iter_mut().zip(&g.b) {
            *b = *b - lr * *gb;
        }
    }
}

/// SGD step for a sigmoid scalar head driven by an externally supplied
/// `d(loss)/d(output)`; returns the pre-update output.
pub fn update_through_scalar<T: Real>(
    model: &mut Mlp<T>,
    x: &[T],
    upstream: T,
    lr: T,
) -> Result<T, NeuralError> {
    debug_assert_eq!(model.config.output, OutputKind::Sigmoid);
    debug_assert_eq!(model.config.output_dim, 1);
    let acts = model.forward(x)?;
    let v = acts.last().expect("output")[0];
    let mut delta = vec![upstream * v * (T::one() - v)];
    let grads = backward_from_delta(model, &acts, &mut delta);
    apply_sgd(model, &grads, lr);
    Ok(v)
}

/// One SGD step on a single example; returns the pre-update loss.
pub fn update_neural<T: Real>(
    model: &mut Mlp<T>,
    x: &[T],
    label: Option<&Label<T>>,
    teacher: Option<&Distribution<T>>,
    lr: T,
) -> Result<LossParts<T>, NeuralError> {
    let (grads, parts) = backprop(model, x, label, teacher)?;
    apply_sgd(model, &grads, lr);
    Ok(parts)
}

/// Analytic gradients for one example, exposed for verification.
pub fn gradients<T: Real>(
    model: &Mlp<T>,
    x: &[T],
    label: Option<&Label<T>>,
    teacher: Option<&Distribution<T>>,
) -> Result<Gradients<T>, NeuralError> {
    backprop(model, x, label, teacher).map(|(g, _)| g)
}

/// Largest relative error between analytic and central-difference gradients
/// over all parameters.
pub fn grad_check<T: Real>(
    model: &Mlp<T>,
    x: &[T],
    label: Option<&Label<T>>,
    teacher: Option<&Distribution<T>>,
    h: T,
) -> Result<T, NeuralError> {
    let analytic = gradients(model, x, label, teacher)?.flatten();
    let mut probe = model.clone();
    let mut worst = T::zero();
    for (i, &g) in analytic.iter().enumerate() {
        let original = probe.get_param(i);
        probe.set_param(i, original + h);
        let plus = loss(&probe.predict(x)?, label, teacher)?.total;
        probe.set_param(i, original - h);
        let minus = loss(&probe.predict(x)?, label, teacher)?.total;
        probe.set_param(i, original);
        let numeric = (plus - minus) / (T::of(2.0) * h);
        let denom = g.abs().max(numeric.abs()).max(T::of(1e-8));
        worst = worst.max((g - numeric).abs() / denom);
    }
    Ok(worst)
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerCheckpoint {
    w: Vec<f64>,
    b: Vec<f64>,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    config: MlpConfig,
    layers: Vec<LayerCheckpoint>,
}

/// Writes the model as JSON. Parameters are stored at full f64 precision so
/// an f64 model round-trips bit-exactly.
pub fn save_checkpoint<T: Real>(model: &Mlp<T>, path: &Path) -> Result<(), NeuralError> {
    let ckpt = Checkpoint {
        config: model.config.clone(),
        layers: model
            .layers
            .iter()
            .map(|l| LayerCheckpoint {
                w: l.w.iter().map(|v| v.as_f64()).collect(),
                b: l.b.iter().map(|v| v.as_f64()).collect(),
                rows: l.rows,
                cols: l.cols,
            })
            .collect(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Mlp<T>, NeuralError> {
    let ckpt: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let mut dims = vec![ckpt.config.input_dim];
    dims.extend(&ckpt.config.hidden);
    dims.push(ckpt.config.output_dim);
    if ckpt.layers.len() + 1 != dims.len() {
        return Err(NeuralError::ShapeMismatch);
    }
    for (layer, d) in ckpt.layers.iter().zip(dims.windows(2)) {
        if layer.cols != d[0]
            || layer.rows != d[1]
            || layer.w.len() != layer.rows * layer.cols
            || layer.b.len() != layer.rows
        {
            return Err(NeuralError::ShapeMismatch);
        }
    }
    Ok(Mlp {
        config: ckpt.config,
        layers: ckpt
            .layers
            .into_iter()
            .map(|l| Layer {
                w: l.w.into_iter().map(T::of).collect(),
                b: l.b.into_iter().map(T::of).collect(),
                rows: l.rows,
                cols: l.cols,
            })
            .collect(),
    })
}
