//! The logical component: Lukasiewicz rule evaluation, hinge-loss
//! potentials, constrained MAP inference by projected gradient descent,
//! target-distribution extraction, and weight learning.
//!
//! Convention: the joint is `P(x) ∝ exp(-Σ_i λ_i Σ_j f_{i,j}(x))` with
//! `f = (1 - rule truth)^p`, so satisfying rules raises probability and MAP
//! is the energy minimizer.

use thiserror::Error;

use crate::dist::Distribution;
use crate::grounder::{AtomId, AtomStatus, GroundFactorGraph, GroundRule};
use crate::logic_lang::{Theory, Weight};
use crate::scalar::Real;

/// Energy weight standing in for an inviolable rule.
pub const HARD_RULE_WEIGHT: f64 = 1000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HlmrfError {
    #[error("target atom {0} is observed; targets must be unobserved")]
    ObservedTarget(AtomId),
    #[error("classification target spec needs at least 2 atoms, got {0}")]
    TooFewTargets(usize),
}

/// Soft truth values for every ground atom, indexed by atom id.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpretation<T> {
    pub values: Vec<T>,
}

impl<T: Real> Interpretation<T> {
    pub fn constant(n: usize, value: T) -> Self {
        Interpretation { values: vec![value; n] }
    }

    pub fn value(&self, id: AtomId) -> T {
        self.values[id]
    }
}

/// Observed-atom overlay: `Some` pins an atom, `None` leaves it free.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialAssignment<T> {
    pub values: Vec<Option<T>>,
}

impl<T: Real> PartialAssignment<T> {
    pub fn free(n: usize) -> Self {
        PartialAssignment { values: vec![None; n] }
    }

    /// Observations recorded in the graph's atom table.
    pub fn from_graph(graph: &GroundFactorGraph<T>) -> Self {
        PartialAssignment {
            values: graph
                .atoms
                .iter()
                .map(|a| match a.status {
                    AtomStatus::Observed(v) => Some(v),
                    AtomStatus::Unobserved => None,
                })
                .collect(),
        }
    }

    pub fn set(&mut self, id: AtomId, value: T) {
        self.values[id] = Some(value);
    }

    pub fn clear(&mut self, id: AtomId) {
        self.values[id] = None;
    }

    pub fn is_observed(&self, id: AtomId) -> bool {
        self.values[id].is_some()
    }
}

/// One weight per theory rule; entries for hard rules are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub lambda: Vec<T>,
}

impl<T: Real> Weights<T> {
    /// Fixed weights from the theory; learnable weights initialize to 1.
    pub fn from_theory(theory: &Theory<T>) -> Self {
        Weights {
            lambda: theory
                .rules
                .iter()
                .map(|r| match r.weight {
                    Weight::Fixed(w) => w,
                    Weight::Learnable => T::one(),
                })
                .collect(),
        }
    }

    pub fn effective(&self, theory: &Theory<T>, rule_index: usize) -> T {
        if theory.rules[rule_index].hard {
            T::of(HARD_RULE_WEIGHT)
        } else {
            self.lambda[rule_index]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Penalty {
    Linear,
    Quadratic,
}

impl Penalty {
    pub fn exponent(self) -> u32 {
        match self {
            Penalty::Linear => 1,
            Penalty::Quadratic => 2,
        }
    }

    pub fn from_flag(p: u32) -> Option<Self> {
        match p {
            1 => Some(Penalty::Linear),
            2 => Some(Penalty::Quadratic),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions<T> {
    pub penalty: Penalty,
    pub step: T,
    pub max_iters: usize,
    pub tolerance: T,
    pub init: T,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        SolverOptions {
            penalty: Penalty::Quadratic,
            step: T::of(0.1),
            max_iters: 5000,
            tolerance: T::of(1e-6),
            init: T::of(0.5),
        }
    }
}

/// Target atoms per class, or the single regression atom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetSpec {
    Classification(Vec<AtomId>),
    Regression(AtomId),
}

/// Lukasiewicz truth of a ground rule: body = max(0, Σ premise - (n-1)),
/// truth = min(1, 1 - body + conclusion). Empty premises have body 1.
pub fn rule_truth<T: Real>(gr: &GroundRule, interp: &Interpretation<T>) -> T {
    let body = premise_body(gr, &interp.values);
    (T::one() - body + interp.values[gr.conclusion_id]).min(T::one())
}

fn premise_body<T: Real>(gr: &GroundRule, values: &[T]) -> T {
    if gr.premise_ids.is_empty() {
        return T::one();
    }
    let sum: T = gr.premise_ids.iter().map(|&id| values[id]).sum();
    (sum - T::of(gr.premise_ids.len() as f64 - 1.0)).max(T::zero())
}

/// Distance to satisfaction, `max(0, body - conclusion)`.
fn violation<T: Real>(gr: &GroundRule, values: &[T]) -> T {
    (premise_body(gr, values) - values[gr.conclusion_id]).max(T::zero())
}

/// Hinge-loss potential `(1 - rule_truth)^p`.
pub fn potential<T: Real>(gr: &GroundRule, interp: &Interpretation<T>, penalty: Penalty) -> T {
    let v = violation(gr, &interp.values);
    match penalty {
        Penalty::Linear => v,
        Penalty::Quadratic => v * v,
    }
}

/// Weighted sum of potentials; lower energy means higher probability.
pub fn energy<T: Real>(
    graph: &GroundFactorGraph<T>,
    theory: &Theory<T>,
    weights: &Weights<T>,
    interp: &Interpretation<T>,
    penalty: Penalty,
) -> T {
    // Fixed summation order keeps results bit-stable across runs.
    graph
        .ground_rules
        .iter()
        .map(|gr| weights.effective(theory, gr.rule_index) * potential(gr, interp, penalty))
        .sum()
}

/// Euclidean projection of `values` onto `{v >= 0, Σ v = target}` restricted
/// to the `free` coordinates (observed coordinates contribute to the budget
/// but do not move).
fn project_group_masked<T: Real>(values: &mut [T], free: &[bool], ids: &[AtomId], target: T) {
    let observed_sum: T =
        ids.iter().filter(|&&id| !free[id]).map(|&id| values[id]).sum();
    let budget = (target - observed_sum).max(T::zero());
    let free_ids: Vec<AtomId> = ids.iter().copied().filter(|&id| free[id]).collect();
    if free_ids.is_empty() {
        return;
    }
    // Sort-based simplex projection.
    let mut sorted: Vec<T> = free_ids.iter().map(|&id| values[id]).collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite truth values"));
    let mut cumulative = T::zero();
    let mut theta = T::zero();
    let mut k = 0;
    for (j, &u) in sorted.iter().enumerate() {
        cumulative = cumulative + u;
        let candidate = (cumulative - budget) / T::of(j as f64 + 1.0);
        if u - candidate > T::zero() {
            theta = candidate;
            k = j + 1;
        }
    }
    if k == 0 {
        // Budget zero and all entries nonpositive: everything clamps to 0.
        theta = sorted.first().copied().unwrap_or(T::zero());
    }
    for &id in &free_ids {
        values[id] = (values[id] - theta).max(T::zero());
    }
}

/// Projects each constraint group onto its simplex, then clips to [0,1].
pub fn project_constraints<T: Real>(
    interp: &Interpretation<T>,
    graph: &GroundFactorGraph<T>,
) -> Interpretation<T> {
    let mut values = interp.values.clone();
    let free = vec![true; values.len()];
    for group in &graph.constraint_groups {
        project_group_masked(&mut values, &free, &group.atom_ids, group.target);
    }
    for v in &mut values {
        *v = v.max(T::zero()).min(T::one());
    }
    Interpretation { values }
}

/// Solver diagnostics exported alongside the MAP interpretation.
#[derive(Debug, Clone, PartialEq)]
pub struct MapResult<T> {
    pub interpretation: Interpretation<T>,
    pub converged: bool,
    pub iterations: usize,
    pub residual: T,
    pub energy: T,
    pub energy_trace: Vec<T>,
}

fn apply_step_and_project<T: Real>(
    values: &[T],
    grad: &[T],
    free: &[bool],
    step: T,
    graph: &GroundFactorGraph<T>,
) -> Vec<T> {
    let mut next: Vec<T> = values
        .iter()
        .zip(grad)
        .zip(free)
        .map(|((&v, &g), &is_free)| if is_free { v - step * g } else { v })
        .collect();
    for group in &graph.constraint_groups {
        project_group_masked(&mut next, free, &group.atom_ids, group.target);
    }
    for (v, &is_free) in next.iter_mut().zip(free) {
        if is_free {
            *v = v.max(T::zero()).min(T::one());
        }
    }
    next
}

fn energy_gradient<T: Real>(
    graph: &GroundFactorGraph<T>,
    theory: &Theory<T>,
    weights: &Weights<T>,
    values: &[T],
    penalty: Penalty,
    grad: &mut [T],
) {
    for g in grad.iter_mut() {
        *g = T::zero();
    }
    for gr in &graph.ground_rules {
        let v = violation(gr, values);
        if v <= T::zero() {
            continue; // subgradient of max(0, .) at 0 taken as 0
        }
        let w = weights.effective(theory, gr.rule_index);
        let scale = match penalty {
            Penalty::Linear => w,
            Penalty::Quadratic => w * T::of(2.0) * v,
        };
        let body_active = premise_body(gr, values) > T::zero();
        if body_active {
            for &p in &gr.premise_ids {
                grad[p] = grad[p] + scale;
            }
        }
        grad[gr.conclusion_id] = grad[gr.conclusion_id] - scale;
    }
}

/// Constrained MAP by projected gradient descent with per-iteration step
/// halving, which keeps the energy monotone. Starts all free atoms at
/// `opts.init`; stops when the largest coordinate change drops below
/// `opts.tolerance`.
pub fn map_infer<T: Real>(
    graph: &GroundFactorGraph<T>,
    theory: &Theory<T>,
    weights: &Weights<T>,
    observed: &PartialAssignment<T>,
    opts: &SolverOptions<T>,
) -> MapResult<T> {
    let n = graph.atoms.len();
    debug_assert_eq!(observed.values.len(), n);
    let free: Vec<bool> = observed.values.iter().map(Option::is_none).collect();
    let mut values: Vec<T> = observed
        .values
        .iter()
        .map(|v| v.unwrap_or(opts.init))
        .collect();
    // Start feasible with respect to the constraint groups.
    for group in &graph.constraint_groups {
        project_group_masked(&mut values, &free, &group.atom_ids, group.target);
    }

    let mut grad = vec![T::zero(); n];
    let mut current = energy(graph, theory, weights, &Interpretation { values: values.clone() }, opts.penalty);
    let mut trace = vec![current];
    let mut working_step = opts.step;
    let min_step = opts.step * T::of(1e-9);
    let mut residual = T::zero();
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..opts.max_iters {
        iterations = iter + 1;
        energy_gradient(graph, theory, weights, &values, opts.penalty, &mut grad);
        let mut step = working_step;
        let mut candidate;
        let mut cand_energy;
        loop {
            candidate = apply_step_and_project(&values, &grad, &free, step, graph);
            cand_energy = energy(
                graph,
                theory,
                weights,
                &Interpretation { values: candidate.clone() },
                opts.penalty,
            );
            if cand_energy <= current || step <= min_step {
                break;
            }
            step = step * T::of(0.5);
        }
        if cand_energy > current {
            // No descent direction within step limits: stationary.
            converged = true;
            residual = T::zero();
            break;
        }
        debug_assert!(cand_energy <= current, "energy must not increase");
        residual = values
            .iter()
            .zip(&candidate)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max);
        values = candidate;
        current = cand_energy;
        trace.push(current);
        working_step = (step * T::of(2.0)).min(opts.step);
        if residual < opts.tolerance {
            converged = true;
            break;
        }
    }

    MapResult {
        interpretation: Interpretation { values },
        converged,
        iterations,
        residual,
        energy: current,
        energy_trace: trace,
    }
}

/// Target distribution read off the MAP state.
#[derive(Debug, Clone, PartialEq)]
pub struct LogicOutput<T> {
    pub dist: Distribution<T>,
    /// All target values were 0 after MAP; a uniform fallback was returned.
    pub degenerate: bool,
    pub map: MapResult<T>,
}

/// Runs MAP and turns the target atoms' soft values into a distribution
/// (classification renormalizes; regression returns the raw soft value).
pub fn target_distribution<T: Real>(
    graph: &GroundFactorGraph<T>,
    theory: &Theory<T>,
    weights: &Weights<T>,
    observed: &PartialAssignment<T>,
    targets: &TargetSpec,
    opts: &SolverOptions<T>,
) -> Result<LogicOutput<T>, HlmrfError> {
    match targets {
        TargetSpec::Classification(ids) if ids.len() < 2 => {
            return Err(HlmrfError::TooFewTargets(ids.len()))
        }
        TargetSpec::Classification(ids) => {
            for &id in ids {
                if observed.is_observed(id) {
                    return Err(HlmrfError::ObservedTarget(id));
                }
            }
        }
        TargetSpec::Regression(id) => {
            if observed.is_observed(*id) {
                return Err(HlmrfError::ObservedTarget(*id));
            }
        }
    }
    let map = map_infer(graph, theory, weights, observed, opts);
    let (dist, degenerate) = match targets {
        TargetSpec::Regression(id) => (Distribution::Scalar(map.interpretation.value(*id)), false),
        TargetSpec::Classification(ids) => {
            let raw: Vec<T> = ids.iter().map(|&id| map.interpretation.value(id)).collect();
            let total: T = raw.iter().copied().sum();
            if total <= T::zero() {
                (Distribution::uniform(ids.len()), true)
            } else {
                (Distribution::Categorical(raw.into_iter().map(|v| v / total).collect()), false)
            }
        }
    };
    Ok(LogicOutput { dist, degenerate, map })
}

/// One step of MAP-approximation weight learning: for each rule,
/// `g_i = Σ_j f_{i,j}(MAP(partial)) - Σ_j f_{i,j}(full)` and
/// `λ_i <- max(0, λ_i + lr * g_i)`. Weight-tied rules (desugared `<->`)
/// accumulate a shared gradient; hard rules and fixed-weight rules are left
/// untouched.
pub fn learn_weights_step<T: Real>(
    graph: &GroundFactorGraph<T>,
    theory: &Theory<T>,
    full_assignment: &Interpretation<T>,
    partial_assignment: &PartialAssignment<T>,
    weights: &Weights<T>,
    lr: T,
    opts: &SolverOptions<T>,
) -> Weights<T> {
    let map = map_infer(graph, theory, weights, partial_assignment, opts);
    let mut grad = vec![T::zero(); theory.rules.len()];
    for gr in &graph.ground_rules {
        let at_map = potential(gr, &map.interpretation, opts.penalty);
        let at_truth = potential(gr, full_assignment, opts.penalty);
        let tie = theory.rules[gr.rule_index].tie;
        grad[tie] = grad[tie] + (at_map - at_truth);
    }
    let mut next = weights.clone();
    for (i, rule) in theory.rules.iter().enumerate() {
        if rule.hard || !matches!(rule.weight, Weight::Learnable) {
            continue;
        }
        next.lambda[i] = (weights.lambda[rule.tie] + lr * grad[rule.tie]).max(T::zero());
    }
    next
}

#[cfg(test)]
mod tests;
