//! Command-line front end: rule validation, grounding stats, MAP inference,
//! weight learning, full training/evaluation, synthetic task generation, and
//! config-driven experiment runs. All artifacts are deterministic given the
//! same inputs and seed.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use concordia::concordia::{load_model, save_model, train, Mode, TrainOptions};
use concordia::grounder::{collect_constants, ground_theory, FactSet, GroundOptions};
use concordia::harness::config::{experiment_from, mode_from_str, ExperimentConfig, RawConfig};
use concordia::harness::run::{
    build_model, history_csv, materialize, metrics_csv, run_experiment, run_fraction, subsample,
};
use concordia::harness::synth::{synth_latent_chain, synth_recommend, write_task};
use concordia::harness::{evaluate, prepare, Dataset, EvalOptions, Split};
use concordia::hlmrf::{map_infer, PartialAssignment, Penalty, SolverOptions, Weights};
use concordia::logic_lang::parse_theory;
use concordia::Theory;

#[derive(Parser)]
#[command(name = "concordia", version, about = "Parallel neurosymbolic engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags that tweak a config file from the command line. Absent flags leave
/// the config's values untouched.
#[derive(Args, Default)]
struct Overrides {
    /// Master seed for generation, subsampling, and training order.
    #[arg(long)]
    seed: Option<u64>,
    /// Hinge exponent: 1 (linear) or 2 (squared).
    #[arg(long)]
    penalty: Option<u32>,
    /// Training regime.
    #[arg(long, value_parser = ["supervised", "semi", "unsupervised"])]
    mode: Option<String>,
    /// Whether neural predictions are written onto prior atoms before MAP.
    #[arg(long, value_parser = ["on", "off"])]
    priors: Option<String>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a rule file and report what it declares.
    Parse {
        #[arg(long)]
        rules: PathBuf,
    },
    /// Ground a theory over a fact file and print grounding statistics.
    Ground {
        #[arg(long)]
        rules: PathBuf,
        #[arg(long)]
        facts: PathBuf,
        /// Also write the full ground atom table here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// MAP inference over the grounded graph; free atom values as CSV.
    Infer {
        #[arg(long)]
        rules: PathBuf,
        #[arg(long)]
        facts: PathBuf,
        #[arg(long)]
        penalty: Option<u32>,
        /// Write `map.csv` here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Learn rule weights only (network and gate frozen); weights as CSV.
    LearnWeights {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        fraction: Option<f64>,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the fused model at one data fraction and save the bundle.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        fraction: Option<f64>,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a saved model bundle on the config's test split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Directory a previous `train` run wrote its `model/` into.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the latent-factor recommendation task.
    SynthRecommend {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        users: usize,
        #[arg(long, default_value_t = 10)]
        items: usize,
        #[arg(long, default_value_t = 0.3)]
        density: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the latent-chain activity task.
    SynthChain {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        frames: usize,
        #[arg(long, default_value_t = 2)]
        boxes_per_frame: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        distractors: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a full config-driven experiment (fraction sweep, reports).
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    if let Err(e) = dispatch(Cli::parse().command) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn load_theory(path: &Path) -> Result<Theory, Box<dyn std::error::Error>> {
    Ok(parse_theory(&std::fs::read_to_string(path)?)?)
}

fn load_config(
    path: &Path,
    overrides: &Overrides,
) -> Result<ExperimentConfig<f64>, Box<dyn std::error::Error>> {
    let raw = RawConfig::parse(&std::fs::read_to_string(path)?)?;
    let mut cfg = experiment_from::<f64>(&raw)?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(p) = overrides.penalty {
        cfg.solver.penalty =
            Penalty::from_flag(p).ok_or_else(|| format!("--penalty must be 1 or 2, got {p}"))?;
    }
    if let Some(mode) = &overrides.mode {
        cfg.mode = mode_from_str(mode)?;
    }
    if let Some(priors) = &overrides.priors {
        cfg.use_priors = priors == "on";
    }
    if let Some(epochs) = overrides.epochs {
        cfg.epochs = epochs;
    }
    Ok(cfg)
}

fn solver_with_penalty(penalty: Option<u32>) -> Result<SolverOptions<f64>, String> {
    let mut opts = SolverOptions::default();
    if let Some(p) = penalty {
        opts.penalty =
            Penalty::from_flag(p).ok_or_else(|| format!("--penalty must be 1 or 2, got {p}"))?;
    }
    Ok(opts)
}

fn write_or_print(out: Option<&Path>, file: &str, text: &str) -> std::io::Result<()> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(file), text)
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn dispatch(command: Command) -> Result<(), Box<dyn std::error::Error>> {
    match command {
        Command::Parse { rules } => {
            let theory = load_theory(&rules)?;
            println!(
                "ok: {} rules, {} constraints, {} predicate declarations",
                theory.rules.len(),
                theory.constraints.len(),
                theory.predicates.len()
            );
        }
        Command::Ground { rules, facts, out } => {
            let theory = load_theory(&rules)?;
            let facts = FactSet::<f64>::parse(&std::fs::read_to_string(facts)?)?;
            let dm = collect_constants(&theory, &facts)?;
            let graph = ground_theory(&theory, &dm, &facts, &GroundOptions::default())?;
            let observed = graph.atoms.iter().filter(|a| a.status.is_observed()).count();
            println!(
                "atoms: {} ({} observed, {} free)",
                graph.atoms.len(),
                observed,
                graph.atoms.len() - observed
            );
            println!("ground rules: {}", graph.ground_rules.len());
            println!("constraint groups: {}", graph.constraint_groups.len());
            for (i, n) in graph.groundings_per_rule.iter().enumerate() {
                println!("rule {i}: {n} groundings");
            }
            if let Some(dir) = out {
                let mut table = String::from("id\tpredicate\targs\tstatus\n");
                for a in &graph.atoms {
                    let status = match &a.status {
                        s if s.is_observed() => "observed".to_string(),
                        _ => "free".to_string(),
                    };
                    table.push_str(&format!(
                        "{}\t{}\t{}\t{status}\n",
                        a.id,
                        a.predicate,
                        a.constants.join(",")
                    ));
                }
                write_or_print(Some(&dir), "grounding.tsv", &table)?;
            }
        }
        Command::Infer { rules, facts, penalty, out } => {
            let theory = load_theory(&rules)?;
            let facts = FactSet::<f64>::parse(&std::fs::read_to_string(facts)?)?;
            let dm = collect_constants(&theory, &facts)?;
            let graph = ground_theory(&theory, &dm, &facts, &GroundOptions::default())?;
            let weights = Weights::from_theory(&theory);
            let observed = PartialAssignment::from_graph(&graph);
            let opts = solver_with_penalty(penalty)?;
            let result = map_infer(&graph, &theory, &weights, &observed, &opts);
            let mut csv = String::from("predicate,args,value\n");
            for a in &graph.atoms {
                if !a.status.is_observed() {
                    csv.push_str(&format!(
                        "{},{},{:.6}\n",
                        a.predicate,
                        a.constants.join(" "),
                        result.interpretation.values[a.id]
                    ));
                }
            }
            write_or_print(out.as_deref(), "map.csv", &csv)?;
            eprintln!(
                "energy {:.6} after {} iterations (converged: {})",
                result.energy, result.iterations, result.converged
            );
        }
        Command::LearnWeights { config, fraction, overrides, out } => {
            let cfg = load_config(&config, &overrides)?;
            let (dataset, theory) = materialize(&cfg)?;
            let subset = subsample(&dataset, fraction.unwrap_or(1.0), cfg.seed ^ 0x5eed);
            let prepared = prepare(
                &subset,
                &theory,
                &GroundOptions { drop_statically_satisfied: true, ..GroundOptions::default() },
            )?;
            let mut model = build_model(&subset, &theory, &cfg);
            let examples: Vec<_> = subset
                .data
                .iter()
                .zip(&prepared.examples)
                .filter(|(d, _)| d.split == Split::Train)
                .map(|(_, e)| e.clone())
                .collect();
            let opts = TrainOptions {
                epochs: cfg.epochs,
                lr_neural: 0.0,
                lr_weights: cfg.lr_weights,
                lr_gating: 0.0,
                seed: cfg.seed,
                mode: Mode::Supervised,
            };
            train(&mut model, &prepared.graph, &examples, &opts)?;
            let mut csv = String::from("rule,weight\n");
            for (i, w) in model.weights.lambda.iter().enumerate() {
                csv.push_str(&format!("{i},{w:.6}\n"));
            }
            write_or_print(Some(&out), "weights.csv", &csv)?;
        }
        Command::Train { config, fraction, overrides, out } => {
            let cfg = load_config(&config, &overrides)?;
            let (dataset, theory) = materialize(&cfg)?;
            let f = fraction.unwrap_or(1.0);
            let (metrics, history, model, _) = run_fraction(&dataset, &theory, &cfg, f)?;
            std::fs::create_dir_all(&out)?;
            save_model(&model, &out.join("model"))?;
            std::fs::write(out.join("history.csv"), history_csv(&history))?;
            std::fs::write(out.join("metrics.csv"), metrics_csv(&[(f, metrics)]))?;
        }
        Command::Eval { config, model, overrides, out } => {
            let cfg = load_config(&config, &overrides)?;
            let (dataset, theory) = materialize(&cfg)?;
            drop(theory); // the bundle carries its own theory and weights
            let model = load_model::<f64>(&model)?;
            let prepared = prepare(
                &dataset,
                &model.theory.clone(),
                &GroundOptions { drop_statically_satisfied: true, ..GroundOptions::default() },
            )?;
            let metrics = evaluate(
                &model,
                &prepared.graph,
                &dataset,
                &prepared.examples,
                &EvalOptions { no_logic: cfg.no_logic },
            )?;
            write_or_print(Some(&out), "metrics.csv", &metrics_csv(&[(1.0, metrics)]))?;
        }
        Command::SynthRecommend { seed, users, items, density, out } => {
            let (dataset, theory): (Dataset<f64>, _) =
                synth_recommend(seed, users, items, density)?;
            write_task(&out, &dataset, &theory)?;
            println!("wrote {} data rows, {} facts", dataset.data.len(), dataset.facts.len());
        }
        Command::SynthChain { seed, frames, boxes_per_frame, noise, distractors, out } => {
            let (dataset, theory): (Dataset<f64>, _) =
                synth_latent_chain(seed, frames, boxes_per_frame, noise, distractors)?;
            write_task(&out, &dataset, &theory)?;
            println!("wrote {} data rows, {} facts", dataset.data.len(), dataset.facts.len());
        }
        Command::Run { config, out } => {
            let report = run_experiment::<f64>(&std::fs::read_to_string(config)?, &out)?;
            for (fraction, m) in &report.rows {
                println!(
                    "fraction {fraction}: mixture headline {:.4} over {} test data",
                    m.mixture.headline(),
                    m.count
                );
            }
        }
    }
    Ok(())
}
