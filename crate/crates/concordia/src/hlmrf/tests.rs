use proptest::prelude::*;

use super::*;
use crate::grounder::{collect_constants, ground_theory, ConstraintGroup, FactSet, GroundOptions};
use crate::logic_lang::parse_theory;

fn setup(rules: &str, facts: &str) -> (Theory<f64>, GroundFactorGraph<f64>) {
    let theory = parse_theory(rules).expect("rules parse");
    let facts: FactSet<f64> = FactSet::parse(facts).expect("facts parse");
    let dm = collect_constants(&theory, &facts).expect("domains");
    let graph =
        ground_theory(&theory, &dm, &facts, &GroundOptions::default()).expect("grounding");
    (theory, graph)
}

fn ground(premise_ids: Vec<AtomId>, conclusion_id: AtomId) -> GroundRule {
    GroundRule { rule_index: 0, premise_ids, conclusion_id }
}

#[test]
fn rule_truth_two_premises() {
    let gr = ground(vec![0, 1], 2);
    let interp: Interpretation<f64> = Interpretation { values: vec![0.8, 0.9, 0.5] };
    // body = max(0, 0.8 + 0.9 - 1) = 0.7; truth = min(1, 1 - 0.7 + 0.5)
    assert!((rule_truth(&gr, &interp) - 0.8).abs() < 1e-12);
    assert!((potential(&gr, &interp, Penalty::Quadratic) - 0.04).abs() < 1e-12);
    assert!((potential(&gr, &interp, Penalty::Linear) - 0.2).abs() < 1e-12);
}

#[test]
fn rule_truth_empty_premise_is_conclusion() {
    let gr = ground(vec![], 0);
    let interp: Interpretation<f64> = Interpretation { values: vec![0.3] };
    assert!((rule_truth(&gr, &interp) - 0.3).abs() < 1e-12);
    assert!((potential(&gr, &interp, Penalty::Linear) - 0.7).abs() < 1e-12);
}

#[test]
fn weak_premises_clamp_body_to_zero() {
    let gr = ground(vec![0, 1], 2);
    let interp = Interpretation { values: vec![0.2, 0.3, 0.0] };
    assert_eq!(rule_truth(&gr, &interp), 1.0);
    assert_eq!(potential(&gr, &interp, Penalty::Quadratic), 0.0);
}

#[test]
fn satisfied_rule_has_zero_potential() {
    let gr = ground(vec![0], 1);
    let interp = Interpretation { values: vec![0.4, 0.9] };
    assert_eq!(rule_truth(&gr, &interp), 1.0);
    assert_eq!(potential(&gr, &interp, Penalty::Quadratic), 0.0);
}

#[test]
fn weights_from_theory_mix_fixed_and_learnable() {
    let theory: Theory<f64> =
        parse_theory("2.5 :: A(X) -> B(X) .\nLEARN :: B(X) -> C(X) .\nhard :: C(X) -> D(X) .")
            .unwrap();
    let w = Weights::from_theory(&theory);
    assert_eq!(w.lambda[0], 2.5);
    assert_eq!(w.lambda[1], 1.0);
    assert_eq!(w.effective(&theory, 2), HARD_RULE_WEIGHT);
    assert_eq!(w.effective(&theory, 0), 2.5);
}

#[test]
fn energy_sums_weighted_potentials() {
    let (theory, graph) = setup("2.0 :: A(X) -> B(X) .", "A\tx\t1.0\nB\tx\t0.5");
    let interp = Interpretation {
        values: graph
            .atoms
            .iter()
            .map(|a| match a.status {
                AtomStatus::Observed(v) => v,
                AtomStatus::Unobserved => 0.0,
            })
            .collect(),
    };
    let w = Weights::from_theory(&theory);
    // one grounding, violation 0.5, quadratic: 2 * 0.25
    assert!((energy(&graph, &theory, &w, &interp, Penalty::Quadratic) - 0.5).abs() < 1e-12);
    assert!((energy(&graph, &theory, &w, &interp, Penalty::Linear) - 1.0).abs() < 1e-12);
}

fn grid_best_single_free(
    graph: &GroundFactorGraph<f64>,
    theory: &Theory<f64>,
    w: &Weights<f64>,
    free_id: AtomId,
    base: &[f64],
    penalty: Penalty,
) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..=1000 {
        let y = k as f64 / 1000.0;
        let mut values = base.to_vec();
        values[free_id] = y;
        let e = energy(graph, theory, w, &Interpretation { values }, penalty);
        if e < best.0 {
            best = (e, y);
        }
    }
    best.1
}

#[test]
fn map_chain_balances_opposing_rules() {
    let (theory, graph) =
        setup("1.0 :: A(X) -> Y(X) .\n1.0 :: Y(X) -> B(X) .", "A\tx\t0.9\nB\tx\t0.2");
    let w = Weights::from_theory(&theory);
    let observed = PartialAssignment::from_graph(&graph);
    let y_id = graph.atom_id("Y", &["x".into()]).unwrap();
    assert!(!observed.is_observed(y_id));
    let opts = SolverOptions::default();
    let result = map_infer(&graph, &theory, &w, &observed, &opts);
    assert!(result.converged);
    let y = result.interpretation.value(y_id);
    assert!((y - 0.55).abs() < 0.01, "got {y}");

    // Independent grid search over the one free atom.
    let base: Vec<f64> = observed.values.iter().map(|v| v.unwrap_or(0.0)).collect();
    let oracle = grid_best_single_free(&graph, &theory, &w, y_id, &base, opts.penalty);
    assert!((y - oracle).abs() <= 0.002, "map {y} vs grid {oracle}");
}

#[test]
fn map_single_rule_tracks_premise() {
    let (theory, graph) = setup("1.0 :: A(X) -> Y(X) .", "A\tx\t0.9");
    let w = Weights::from_theory(&theory);
    let observed = PartialAssignment::from_graph(&graph);
    let y_id = graph.atom_id("Y", &["x".into()]).unwrap();
    let result = map_infer(&graph, &theory, &w, &observed, &SolverOptions::default());
    assert!(result.converged);
    assert!((result.interpretation.value(y_id) - 0.9).abs() < 0.01);
}

#[test]
fn map_scaling_all_weights_keeps_argmin() {
    let (theory, graph) =
        setup("1.0 :: A(X) -> Y(X) .\n1.0 :: Y(X) -> B(X) .", "A\tx\t0.9\nB\tx\t0.2");
    let observed = PartialAssignment::from_graph(&graph);
    let y_id = graph.atom_id("Y", &["x".into()]).unwrap();
    let mut w = Weights::from_theory(&theory);
    for l in &mut w.lambda {
        *l = *l * 3.0;
    }
    let result = map_infer(&graph, &theory, &w, &observed, &SolverOptions::default());
    assert!((result.interpretation.value(y_id) - 0.55).abs() < 0.01);
}

#[test]
fn map_energy_trace_is_monotone() {
    let (theory, graph) = setup(
        "1.0 :: A(X) -> Y(X) .\n1.0 :: Y(X) -> B(X) .\n0.5 :: B(X) -> Y(X) .",
        "A\tx\t0.9\nB\tx\t0.2\nA\ty\t0.4\nB\ty\t0.7",
    );
    let w = Weights::from_theory(&theory);
    let observed = PartialAssignment::from_graph(&graph);
    let result = map_infer(&graph, &theory, &w, &observed, &SolverOptions::default());
    for pair in result.energy_trace.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-12, "energy rose: {} -> {}", pair[0], pair[1]);
    }
    assert!(result.converged);
}

#[test]
fn map_hard_rule_forces_conclusion() {
    let (theory, graph) = setup("hard :: A(X) -> B(X) .", "A\tx\t1.0");
    let w = Weights::from_theory(&theory);
    let observed = PartialAssignment::from_graph(&graph);
    let b_id = graph.atom_id("B", &["x".into()]).unwrap();
    let result = map_infer(&graph, &theory, &w, &observed, &SolverOptions::default());
    assert!((result.interpretation.value(b_id) - 1.0).abs() < 1e-3);
}

#[test]
fn map_deterministic_across_runs() {
    let (theory, graph) =
        setup("1.0 :: A(X) -> Y(X) .\n1.0 :: Y(X) -> B(X) .", "A\tx\t0.9\nB\tx\t0.2");
    let w = Weights::from_theory(&theory);
    let observed = PartialAssignment::from_graph(&graph);
    let a = map_infer(&graph, &theory, &w, &observed, &SolverOptions::default());
    let b = map_infer(&graph, &theory, &w, &observed, &SolverOptions::default());
    assert_eq!(a.interpretation.values, b.interpretation.values);
    assert_eq!(a.iterations, b.iterations);
}

fn constraint_only_graph(n: usize, target: f64) -> GroundFactorGraph<f64> {
    let mut graph = GroundFactorGraph::<f64>::default();
    let ids: Vec<AtomId> =
        (0..n).map(|i| graph.get_or_insert("T", vec![format!("c{i}")])).collect();
    graph.constraint_groups.push(ConstraintGroup { atom_ids: ids, target });
    graph
}

#[test]
fn simplex_projection_matches_known_answer() {
    let graph = constraint_only_graph(3, 1.0);
    let interp = Interpretation { values: vec![0.8, 0.4, 0.2] };
    let projected = project_constraints(&interp, &graph);
    let expected = [2.0 / 3.0, 4.0 / 15.0, 1.0 / 15.0];
    for (got, want) in projected.values.iter().zip(expected) {
        assert!((got - want).abs() < 1e-9, "got {got}, want {want}");
    }
    assert!((projected.values.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn projection_adds_mass_when_short() {
    let graph = constraint_only_graph(2, 1.0);
    let projected = project_constraints(&Interpretation { values: vec![0.1, 0.3] }, &graph);
    assert!((projected.values[0] - 0.4).abs() < 1e-9);
    assert!((projected.values[1] - 0.6).abs() < 1e-9);
}

#[test]
fn projection_with_zero_budget_zeroes_group() {
    let graph = constraint_only_graph(3, 0.0);
    let projected =
        project_constraints(&Interpretation { values: vec![0.5, 0.2, 0.9] }, &graph);
    assert_eq!(projected.values, vec![0.0, 0.0, 0.0]);
}

#[test]
fn constraint_only_map_is_uniform() {
    let theory = Theory::<f64>::default();
    let graph = constraint_only_graph(4, 1.0);
    let w = Weights { lambda: vec![] };
    let observed = PartialAssignment::free(4);
    let result = map_infer(&graph, &theory, &w, &observed, &SolverOptions::default());
    assert!(result.converged);
    for v in &result.interpretation.values {
        assert!((v - 0.25).abs() < 1e-9);
    }
}

#[test]
fn observed_group_members_consume_budget() {
    let theory = Theory::<f64>::default();
    let graph = constraint_only_graph(3, 1.0);
    let w = Weights { lambda: vec![] };
    let mut observed = PartialAssignment::free(3);
    observed.set(2, 0.3);
    let result = map_infer(&graph, &theory, &w, &observed, &SolverOptions::default());
    assert!((result.interpretation.value(0) - 0.35).abs() < 1e-9);
    assert!((result.interpretation.value(1) - 0.35).abs() < 1e-9);
    assert_eq!(result.interpretation.value(2), 0.3);
}

#[test]
fn target_distribution_normalizes_classification() {
    let (theory, graph) = setup(
        "1.0 :: A(X) -> T(X) .",
        "A\tc1\t0.9\nA\tc2\t0.3",
    );
    let w = Weights::from_theory(&theory);
    let observed = PartialAssignment::from_graph(&graph);
    let t1 = graph.atom_id("T", &["c1".into()]).unwrap();
    let t2 = graph.atom_id("T", &["c2".into()]).unwrap();
    let out = target_distribution(
        &graph,
        &theory,
        &w,
        &observed,
        &TargetSpec::Classification(vec![t1, t2]),
        &SolverOptions::default(),
    )
    .unwrap();
    assert!(!out.degenerate);
    assert!(out.dist.is_valid(1e-9));
    assert_eq!(out.dist.argmax(), 0);
    // T(c1) is pulled to 0.9; T(c2) feels no gradient and stays at 0.5.
    let p = out.dist.probs();
    assert!((p[0] - 0.9 / 1.4).abs() < 0.02, "got {p:?}");
}

#[test]
fn target_distribution_all_zero_falls_back_to_uniform() {
    let (theory, graph) = setup(
        "1.0 :: T(X) -> F(X) .",
        "F\tc1\t0.0\nF\tc2\t0.0\nT\tc1\t0.5\nT\tc2\t0.5",
    );
    // Re-free the target atoms; the fact file only seeded them into the graph.
    let mut observed = PartialAssignment::from_graph(&graph);
    let t1 = graph.atom_id("T", &["c1".into()]).unwrap();
    let t2 = graph.atom_id("T", &["c2".into()]).unwrap();
    observed.clear(t1);
    observed.clear(t2);
    let w = Weights::from_theory(&theory);
    let opts = SolverOptions { penalty: Penalty::Linear, ..SolverOptions::default() };
    let out = target_distribution(
        &graph,
        &theory,
        &w,
        &observed,
        &TargetSpec::Classification(vec![t1, t2]),
        &opts,
    )
    .unwrap();
    assert!(out.degenerate);
    assert_eq!(out.dist.probs(), &[0.5, 0.5]);
}

#[test]
fn target_distribution_regression_returns_soft_value() {
    let (theory, graph) = setup("1.0 :: A(X) -> Y(X) .", "A\tx\t0.9");
    let w = Weights::from_theory(&theory);
    let observed = PartialAssignment::from_graph(&graph);
    let y_id = graph.atom_id("Y", &["x".into()]).unwrap();
    let out = target_distribution(
        &graph,
        &theory,
        &w,
        &observed,
        &TargetSpec::Regression(y_id),
        &SolverOptions::default(),
    )
    .unwrap();
    assert!((out.dist.as_scalar().unwrap() - 0.9).abs() < 0.01);
}

#[test]
fn target_distribution_rejects_observed_targets() {
    let (theory, graph) = setup("1.0 :: A(X) -> Y(X) .", "A\tx\t0.9\nY\tx\t1.0");
    let w = Weights::from_theory(&theory);
    let observed = PartialAssignment::from_graph(&graph);
    let y_id = graph.atom_id("Y", &["x".into()]).unwrap();
    let err = target_distribution(
        &graph,
        &theory,
        &w,
        &observed,
        &TargetSpec::Regression(y_id),
        &SolverOptions::default(),
    )
    .unwrap_err();
    assert_eq!(err, HlmrfError::ObservedTarget(y_id));
}

#[test]
fn target_distribution_rejects_single_class() {
    let (theory, graph) = setup("1.0 :: A(X) -> Y(X) .", "A\tx\t0.9");
    let w = Weights::from_theory(&theory);
    let observed = PartialAssignment::from_graph(&graph);
    let y_id = graph.atom_id("Y", &["x".into()]).unwrap();
    let err = target_distribution(
        &graph,
        &theory,
        &w,
        &observed,
        &TargetSpec::Classification(vec![y_id]),
        &SolverOptions::default(),
    )
    .unwrap_err();
    assert_eq!(err, HlmrfError::TooFewTargets(1));
}

#[test]
fn learn_step_noop_when_map_matches_truth() {
    let (theory, graph) = setup("LEARN :: A(X) -> Y(X) .", "A\tx\t1.0");
    let w = Weights::from_theory(&theory);
    let observed = PartialAssignment::from_graph(&graph);
    let opts = SolverOptions::default();
    // Ground truth agrees with what MAP infers.
    let map = map_infer(&graph, &theory, &w, &observed, &opts);
    let next =
        learn_weights_step(&graph, &theory, &map.interpretation, &observed, &w, 0.5, &opts);
    assert!((next.lambda[0] - w.lambda[0]).abs() < 1e-3);
}

#[test]
fn learn_step_shrinks_weight_of_contradicted_rule() {
    let (theory, graph) = setup("LEARN :: A(X) -> Y(X) .", "A\tx\t1.0");
    let w = Weights::from_theory(&theory);
    let observed = PartialAssignment::from_graph(&graph);
    let y_id = graph.atom_id("Y", &["x".into()]).unwrap();
    let mut truth_values: Vec<f64> =
        observed.values.iter().map(|v| v.unwrap_or(0.0)).collect();
    truth_values[y_id] = 0.0; // the label contradicts the rule
    let truth = Interpretation { values: truth_values };
    let opts = SolverOptions::default();
    // MAP drives Y to ~1, so pot(MAP) ~ 0 while pot(truth) = 1: gradient ~ -1.
    let next = learn_weights_step(&graph, &theory, &truth, &observed, &w, 0.4, &opts);
    assert!((next.lambda[0] - 0.6).abs() < 0.01, "got {}", next.lambda[0]);
}

#[test]
fn learn_step_projects_weights_to_nonnegative() {
    let (theory, graph) = setup("LEARN :: A(X) -> Y(X) .", "A\tx\t1.0");
    let w = Weights::from_theory(&theory);
    let observed = PartialAssignment::from_graph(&graph);
    let y_id = graph.atom_id("Y", &["x".into()]).unwrap();
    let mut truth_values: Vec<f64> =
        observed.values.iter().map(|v| v.unwrap_or(0.0)).collect();
    truth_values[y_id] = 0.0;
    let truth = Interpretation { values: truth_values };
    let next = learn_weights_step(
        &graph,
        &theory,
        &truth,
        &observed,
        &w,
        5.0,
        &SolverOptions::default(),
    );
    assert_eq!(next.lambda[0], 0.0);
}

#[test]
fn learn_step_leaves_fixed_and_hard_weights_alone() {
    let (theory, graph) = setup(
        "2.0 :: A(X) -> Y(X) .\nhard :: Y(X) -> B(X) .",
        "A\tx\t1.0\nB\tx\t0.0",
    );
    let w = Weights::from_theory(&theory);
    let observed = PartialAssignment::from_graph(&graph);
    let truth = Interpretation {
        values: observed.values.iter().map(|v| v.unwrap_or(0.0)).collect(),
    };
    let next = learn_weights_step(
        &graph,
        &theory,
        &truth,
        &observed,
        &w,
        0.5,
        &SolverOptions::default(),
    );
    assert_eq!(next.lambda, w.lambda);
}

#[test]
fn learn_step_ties_bidirectional_halves() {
    let (theory, graph) = setup("LEARN :: A(X) <-> B(X) .", "A\tx\t1.0");
    assert_eq!(theory.rules.len(), 2);
    let w = Weights::from_theory(&theory);
    let mut observed = PartialAssignment::from_graph(&graph);
    let b_id = graph.atom_id("B", &["x".into()]).unwrap();
    observed.clear(b_id);
    let mut truth_values: Vec<f64> =
        observed.values.iter().map(|v| v.unwrap_or(0.0)).collect();
    truth_values[b_id] = 0.0; // truth breaks the A -> B direction
    let truth = Interpretation { values: truth_values };
    let next = learn_weights_step(
        &graph,
        &theory,
        &truth,
        &observed,
        &w,
        0.4,
        &SolverOptions::default(),
    );
    assert_eq!(next.lambda[0], next.lambda[1]);
    assert!(next.lambda[0] < w.lambda[0]);
}

fn simplex_oracle(values: &[f64], target: f64) -> Vec<f64> {
    // Bisect the threshold t with sum_i max(0, v_i - t) = target.
    let mut lo =
        values.iter().cloned().fold(f64::INFINITY, f64::min) - target - 1.0;
    let mut hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let s: f64 = values.iter().map(|v| (v - mid).max(0.0)).sum();
        if s > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    values.iter().map(|v| (v - t).max(0.0)).collect()
}

proptest! {
    #[test]
    fn projection_matches_bisection_oracle(
        values in prop::collection::vec(0.0f64..=1.0, 2..6),
        target in 0.05f64..=1.0,
    ) {
        let graph = constraint_only_graph(values.len(), target);
        let projected =
            project_constraints(&Interpretation { values: values.clone() }, &graph);
        let oracle = simplex_oracle(&values, target);
        for (got, want) in projected.values.iter().zip(&oracle) {
            prop_assert!((got - want).abs() < 1e-7, "got {got}, want {want}");
        }
        let sum: f64 = projected.values.iter().sum();
        prop_assert!((sum - target).abs() < 1e-7);
    }

    #[test]
    fn rule_truth_and_potential_stay_bounded(
        premises in prop::collection::vec(0.0f64..=1.0, 0..4),
        conclusion in 0.0f64..=1.0,
    ) {
        let n = premises.len();
        let gr = ground((0..n).collect(), n);
        let mut values = premises;
        values.push(conclusion);
        let interp = Interpretation { values };
        let truth = rule_truth(&gr, &interp);
        prop_assert!((0.0..=1.0).contains(&truth));
        for penalty in [Penalty::Linear, Penalty::Quadratic] {
            let f = potential(&gr, &interp, penalty);
            prop_assert!((0.0..=1.0).contains(&f));
            if truth >= 1.0 {
                prop_assert!(f.abs() < 1e-12);
            }
        }
    }
}
