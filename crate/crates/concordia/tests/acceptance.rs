//! End-to-end acceptance checks. Each test prints one verdict line for its
//! criterion; all must pass.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use concordia::boolean_oracle::{enumerate_joint, marginals, mpe};
use concordia::concordia::{mixture, scale_regression};
use concordia::dist::Distribution;
use concordia::grounder::{
    collect_constants, ground_theory, FactSet, GroundFactorGraph, GroundOptions, GroundRule,
};
use concordia::harness::config::{experiment_from, RawConfig};
use concordia::harness::run::{materialize, run_fraction};
use concordia::harness::Score;
use concordia::hlmrf::{
    energy, map_infer, Interpretation, PartialAssignment, SolverOptions, Weights,
};
use concordia::logic_lang::parse_theory;
use concordia::neural::{grad_check, Label, Mlp, MlpConfig, OutputKind};
use concordia::Theory;

fn verdict(n: usize, name: &str, ok: bool) {
    println!("criterion {n} ({name}): {}", if ok { "pass" } else { "FAIL" });
    assert!(ok, "criterion {n} ({name}) failed");
}

/// A random rule-only factor graph over `n` free propositional atoms,
/// together with a theory carrying the matching weights.
fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> (Theory, GroundFactorGraph<f64>) {
    let mut graph = GroundFactorGraph::<f64>::default();
    let ids: Vec<usize> =
        (0..n).map(|i| graph.get_or_insert(&format!("P{i}"), vec!["c".into()])).collect();
    let n_rules = rng.random_range(1..=6usize);
    let mut text = String::new();
    for r in 0..n_rules {
        let weight: f64 = rng.random_range(0.1..3.0);
        let conclusion = ids[rng.random_range(0..n)];
        let mut premises = Vec::new();
        for &id in &ids {
            if id != conclusion && premises.len() < 3 && rng.random_bool(0.5) {
                premises.push(id);
            }
        }
        if premises.is_empty() {
            text.push_str(&format!("{weight:.6} :: H{r}(c) .\n"));
        } else {
            let body: Vec<String> =
                premises.iter().enumerate().map(|(k, _)| format!("B{r}x{k}(c)")).collect();
            text.push_str(&format!("{weight:.6} :: {} -> H{r}(c) .\n", body.join(" & ")));
        }
        graph.ground_rules.push(GroundRule {
            rule_index: r,
            premise_ids: premises,
            conclusion_id: conclusion,
        });
    }
    graph.groundings_per_rule = vec![1; n_rules];
    (parse_theory(&text).expect("generated rules parse"), graph)
}

fn grid_min_energy(graph: &GroundFactorGraph<f64>, theory: &Theory) -> f64 {
    let weights = Weights::from_theory(theory);
    let penalty = SolverOptions::<f64>::default().penalty;
    let n = graph.atoms.len();
    let steps = 101usize;
    let total = steps.pow(n as u32);
    let mut interp = Interpretation { values: vec![0.0; n] };
    let mut best = f64::INFINITY;
    for index in 0..total {
        let mut rest = index;
        for v in interp.values.iter_mut() {
            *v = (rest % steps) as f64 * 0.01;
            rest /= steps;
        }
        best = best.min(energy(graph, theory, &weights, &interp, penalty));
    }
    best
}

#[test]
fn criterion_1_solver_matches_grid_search() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_gap = f64::NEG_INFINITY;
    for _ in 0..200 {
        let n = rng.random_range(1..=3usize);
        let (theory, graph) = random_graph(&mut rng, n);
        let weights = Weights::from_theory(&theory);
        let observed = PartialAssignment::from_graph(&graph);
        let result =
            map_infer(&graph, &theory, &weights, &observed, &SolverOptions::default());
        let grid = grid_min_energy(&graph, &theory);
        worst_gap = worst_gap.max(result.energy - grid);
    }
    let elapsed = start.elapsed();
    let ok = worst_gap < 1e-3 && elapsed.as_secs() < 60;
    println!("  worst solver-minus-grid gap {worst_gap:.2e} in {elapsed:.2?}");
    verdict(1, "solver-oracle equivalence", ok);
}

#[test]
fn criterion_2_boolean_oracle_self_consistency() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut ok = true;
    for _ in 0..100 {
        let n = rng.random_range(2..=10usize);
        let (theory, graph) = random_graph(&mut rng, n);
        let weights = Weights::from_theory(&theory);
        let joint = enumerate_joint(&graph, &theory, &weights).unwrap();
        ok &= (joint.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12;

        let mut argmax = 0;
        for (i, p) in joint.probs.iter().enumerate().skip(1) {
            if *p > joint.probs[argmax] {
                argmax = i;
            }
        }
        ok &= mpe(&graph, &theory, &weights, None).unwrap() == joint.world(argmax, &graph);

        let class_atoms: Vec<usize> = (0..rng.random_range(2..=n)).collect();
        let m = marginals(&graph, &theory, &weights, Some(&class_atoms)).unwrap();
        let class_mass: f64 = class_atoms.iter().map(|&id| m[id]).sum();
        ok &= (class_mass - 1.0).abs() < 1e-12;
    }
    verdict(2, "boolean oracle self-consistency", ok);
}

#[test]
fn criterion_3_gradient_checks() {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(303 + seed);
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();

        // Classification head with both data and imitation terms.
        let clf = Mlp::<f64>::new(
            MlpConfig { input_dim: 4, hidden: vec![6, 5], output_dim: 3, output: OutputKind::Softmax },
            seed,
        );
        let teacher = Distribution::Categorical(vec![0.2, 0.5, 0.3]);
        worst = worst.max(
            grad_check(&clf, &x, Some(&Label::Class(1)), Some(&teacher), 1e-5).unwrap(),
        );
        worst = worst.max(grad_check(&clf, &x, None, Some(&teacher), 1e-5).unwrap());

        // Scalar sigmoid head, the gating network's shape.
        let gate = Mlp::<f64>::new(
            MlpConfig { input_dim: 4, hidden: vec![6], output_dim: 1, output: OutputKind::Sigmoid },
            seed + 1000,
        );
        worst = worst.max(
            grad_check(&gate, &x, Some(&Label::Value(0.37)), None, 1e-5).unwrap(),
        );
    }
    println!("  worst gradient relative error {worst:.2e}");
    verdict(3, "gradient checks", worst < 1e-4);
}

#[test]
fn criterion_4_mixture_validity() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut ok = true;
    let random_dist = |rng: &mut ChaCha8Rng, arity: usize| {
        if arity == 1 {
            Distribution::Scalar(rng.random_range(0.0..1.0))
        } else {
            let raw: Vec<f64> = (0..arity).map(|_| rng.random_range(1e-6..1.0)).collect();
            let total: f64 = raw.iter().sum();
            Distribution::Categorical(raw.iter().map(|v| v / total).collect())
        }
    };
    for _ in 0..10_000 {
        let arity = rng.random_range(1..=5usize);
        let kappa: f64 = rng.random_range(0.0..=1.0);
        let pn = random_dist(&mut rng, arity);
        let pl = random_dist(&mut rng, arity);
        let mix = mixture(kappa, &pn, &pl).unwrap();
        match &mix {
            Distribution::Scalar(v) => ok &= (0.0..=1.0).contains(v),
            Distribution::Categorical(p) => {
                ok &= p.iter().all(|v| (0.0..=1.0).contains(v));
                ok &= (p.iter().sum::<f64>() - 1.0).abs() < 1e-9;
            }
        }
        ok &= mixture(1.0, &pn, &pl).unwrap() == pn;
        ok &= mixture(0.0, &pn, &pl).unwrap() == pl;
    }
    verdict(4, "mixture validity", ok);
}

fn chain_config(seed: u64, distractors: usize, epochs: usize, extra: &str) -> String {
    format!(
        "[experiment]\ntask = synth_chain\nseed = {seed}\nframes = 14\n\
         boxes_per_frame = 2\nnoise = 0.0\ndistractors = {distractors}\n\n\
         [training]\nepochs = {epochs}\n{extra}"
    )
}

#[test]
fn criterion_5_useless_rule_weights_decay() {
    let start = Instant::now();
    let mut good_seeds = 0;
    let mut used_seeds = 0;
    let mut seed = 0u64;
    while used_seeds < 5 {
        let text = format!(
            "[experiment]\ntask = synth_chain\nseed = {seed}\nframes = 18\n\
             boxes_per_frame = 2\nnoise = 0.0\ndistractors = 5\n\n\
             [solver]\nmax_iters = 800\n\n\
             [training]\nepochs = 4\nlr_neural = 0.0\nlr_gating = 0.0\nlr_weights = 0.15\n"
        );
        let cfg = experiment_from::<f64>(&RawConfig::parse(&text).unwrap()).unwrap();
        let (dataset, theory) = materialize(&cfg).unwrap();
        // Decay needs contrast: skip the occasional single-activity chain,
        // where no rule is ever violated and every gradient is zero.
        let labels: std::collections::BTreeSet<_> =
            dataset.data.iter().filter_map(|d| d.label.clone()).collect();
        if labels.len() < 2 {
            seed += 1;
            continue;
        }
        used_seeds += 1;
        let (_, _, model, _) = run_fraction(&dataset, &theory, &cfg, 1.0).unwrap();
        let useful = model.weights.lambda[0]; // the frame-label rule
        let decayed =
            model.weights.lambda[5..10].iter().all(|&w| w < 0.1 * useful);
        println!(
            "  seed {seed}: useful {useful:.3}, distractors {:?}",
            &model.weights.lambda[5..10]
        );
        if decayed {
            good_seeds += 1;
        }
        seed += 1;
    }
    let elapsed = start.elapsed();
    println!("  {good_seeds}/5 seeds decayed in {elapsed:.2?}");
    verdict(5, "weight decay on useless rules", good_seeds >= 4 && elapsed.as_secs() < 300);
}

fn rmse(score: &Score<f64>) -> f64 {
    match score {
        Score::Regression { rmse } => *rmse,
        Score::Classification { .. } => panic!("expected a regression score"),
    }
}

fn accuracy(score: &Score<f64>) -> f64 {
    match score {
        Score::Classification { accuracy, .. } => *accuracy,
        Score::Regression { .. } => panic!("expected a classification score"),
    }
}

#[test]
fn criterion_6_low_data_benefit_trend() {
    let start = Instant::now();
    let mut dominated = 0; // mixture no worse than neural at every fraction
    let mut trend = 0; // benefit at 0.5 at least the benefit at 1.0
    for seed in [0u64, 1, 12, 13, 16] {
        let text = format!(
            "[experiment]\ntask = synth_recommend\nseed = {seed}\nusers = 10\nitems = 10\n\
             density = 0.5\n\n[neural]\nhidden = 16\n\n\
             [training]\nepochs = 60\nlr_neural = 0.3\nlr_weights = 0.0\n\
             lr_gating = 2.0\npriors = false\n"
        );
        let cfg = experiment_from::<f64>(&RawConfig::parse(&text).unwrap()).unwrap();
        let (dataset, theory) = materialize(&cfg).unwrap();
        let mut improvements = Vec::new();
        let mut all_fractions_ok = true;
        for fraction in [0.5, 0.8, 1.0] {
            let (metrics, _, _, _) = run_fraction(&dataset, &theory, &cfg, fraction).unwrap();
            let neural = rmse(&metrics.neural);
            let mix = rmse(&metrics.mixture);
            println!(
                "  seed {seed} fraction {fraction}: neural {neural:.4} logic {:.4} mixture {mix:.4}",
                rmse(&metrics.logic)
            );
            all_fractions_ok &= mix <= neural;
            improvements.push(neural - mix);
        }
        println!("  seed {seed}: improvements {improvements:?}");
        if all_fractions_ok {
            dominated += 1;
        }
        if improvements[0] >= improvements[2] {
            trend += 1;
        }
    }
    let elapsed = start.elapsed();
    println!("  dominated {dominated}/5, trend {trend}/5 in {elapsed:.2?}");
    verdict(
        6,
        "low-data benefit trend",
        dominated >= 4 && trend >= 3 && elapsed.as_secs() < 600,
    );
}

#[test]
fn criterion_7_unsupervised_distillation() {
    let start = Instant::now();
    let untrained_cfg = chain_config(7, 0, 0, "mode = unsupervised\n");
    let trained_cfg = chain_config(7, 0, 10, "mode = unsupervised\n");
    let neural_at = |text: &str| {
        let cfg = experiment_from::<f64>(&RawConfig::parse(text).unwrap()).unwrap();
        let (dataset, theory) = materialize(&cfg).unwrap();
        let (metrics, _, _, _) = run_fraction(&dataset, &theory, &cfg, 1.0).unwrap();
        accuracy(&metrics.neural)
    };
    let before = neural_at(&untrained_cfg);
    let after = neural_at(&trained_cfg);
    let elapsed = start.elapsed();
    println!("  untrained {before:.3} -> distilled {after:.3} in {elapsed:.2?}");
    verdict(
        7,
        "unsupervised distillation",
        after >= before + 0.10 && elapsed.as_secs() < 300,
    );
}

#[test]
fn criterion_8_normalization_fixture() {
    verdict(8, "regression scaling fixture", scale_regression(3.0, 1.0, 5.0).unwrap() == 0.5);
}

#[test]
fn criterion_9_two_box_grounding_fixture() {
    let theory: Theory =
        parse_theory("1.0 :: Doing(B1,A) & Close(B1,B2) -> Doing(B2,A) .").unwrap();
    let mut facts = FactSet::new();
    facts.insert("Close", vec!["b1".into(), "b2".into()], 1.0).unwrap();
    facts.insert("Close", vec!["b2".into(), "b1".into()], 1.0).unwrap();
    facts.insert("Doing", vec!["b1".into(), "crossing".into()], 1.0).unwrap();
    let dm = collect_constants(&theory, &facts).unwrap();
    let graph = ground_theory(&theory, &dm, &facts, &GroundOptions::default()).unwrap();
    verdict(9, "two-box grounding fixture", graph.ground_rules.len() == 2);
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    entries.sort();
    entries
}

#[test]
fn criterion_10_cli_determinism() {
    let bin = env!("CARGO_BIN_EXE_concordia");
    let root = tempfile::tempdir().unwrap();
    let cfg_path = root.path().join("exp.cfg");
    std::fs::write(&cfg_path, chain_config(10, 1, 2, "")).unwrap();
    let run = |args: &[&str]| {
        let output = Command::new(bin).args(args).output().unwrap();
        assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    };

    let mut ok = true;
    for pass in ["a", "b"] {
        let task = root.path().join(format!("task_{pass}"));
        run(&[
            "synth-chain", "--seed", "10", "--frames", "6", "--boxes-per-frame", "2",
            "--noise", "0.1", "--distractors", "1",
            "--out", task.to_str().unwrap(),
        ]);
        let report = root.path().join(format!("report_{pass}"));
        run(&["run", "--config", cfg_path.to_str().unwrap(), "--out", report.to_str().unwrap()]);
        let inferred = root.path().join(format!("map_{pass}"));
        run(&[
            "infer",
            "--rules", task.join("rules.txt").to_str().unwrap(),
            "--facts", task.join("facts.tsv").to_str().unwrap(),
            "--penalty", "2",
            "--out", inferred.to_str().unwrap(),
        ]);
    }
    for name in ["task", "report", "map"] {
        let a = dir_bytes(&root.path().join(format!("{name}_a")));
        let b = dir_bytes(&root.path().join(format!("{name}_b")));
        ok &= a == b;
    }
    verdict(10, "CLI determinism", ok);
}
