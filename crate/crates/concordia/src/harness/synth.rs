//! Seeded synthetic tasks: a recommendation-style regression problem and a
//! latent-chain activity classification problem. Both emit a dataset, the
//! matching rule theory, and a τ/ν mapping, all reproducible per seed.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Datum, HarnessError, MappingConfig, Split, TaskKind};
use crate::grounder::FactSet;
use crate::logic_lang::{format_theory, parse_theory, Theory};
use crate::scalar::Real;

pub const SIMILARITY_THRESHOLD: f64 = 0.7;
pub const RECOMMEND_CLASSES: (f64, f64) = (1.0, 5.0);
pub const CHAIN_CLASSES: [&str; 2] = ["walk", "wave"];

fn unit3(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 1e-3 {
            return [v[0] / norm, v[1] / norm, v[2] / norm];
        }
    }
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Latent-factor recommendation data. Users and items carry random unit
/// factors; the true rating is `3 + 2·cosine` in [1, 5]. Each (user, item)
/// pair becomes a datum with probability `density`. Facts: thresholded
/// user/user and item/item similarities plus per-entity average ratings
/// scaled to [0, 1].
pub fn synth_recommend<T: Real>(
    seed: u64,
    n_users: usize,
    n_items: usize,
    density: f64,
) -> Result<(Dataset<T>, Theory<T>), HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users: Vec<[f64; 3]> = (0..n_users).map(|_| unit3(&mut rng)).collect();
    let items: Vec<[f64; 3]> = (0..n_items).map(|_| unit3(&mut rng)).collect();
    let rating = |u: usize, i: usize| 3.0 + 2.0 * dot(&users[u], &items[i]);
    let (lo, hi) = RECOMMEND_CLASSES;

    let mut facts = FactSet::new();
    for a in 0..n_users {
        for b in 0..n_users {
            if a != b && dot(&users[a], &users[b]) > SIMILARITY_THRESHOLD {
                facts.insert("SimilarUsers", vec![format!("u{a}"), format!("u{b}")], T::one())?;
            }
        }
    }
    for a in 0..n_items {
        for b in 0..n_items {
            if a != b && dot(&items[a], &items[b]) > SIMILARITY_THRESHOLD {
                facts.insert("SimilarItems", vec![format!("i{a}"), format!("i{b}")], T::one())?;
            }
        }
    }
    for u in 0..n_users {
        let avg = (0..n_items).map(|i| rating(u, i)).sum::<f64>() / n_items as f64;
        facts.insert("AvgUserRating", vec![format!("u{u}")], T::of((avg - lo) / (hi - lo)))?;
    }
    for i in 0..n_items {
        let avg = (0..n_users).map(|u| rating(u, i)).sum::<f64>() / n_users as f64;
        facts.insert("AvgItemRating", vec![format!("i{i}")], T::of((avg - lo) / (hi - lo)))?;
    }

    let mut data = Vec::new();
    for u in 0..n_users {
        for i in 0..n_items {
            if !rng.random_bool(density.clamp(0.0, 1.0)) {
                continue;
            }
            let split = if rng.random_bool(0.25) { Split::Test } else { Split::Train };
            let mut features = Vec::with_capacity(6);
            features.extend(users[u].iter().map(|&v| T::of(v)));
            features.extend(items[i].iter().map(|&v| T::of(v)));
            data.push(Datum {
                id: format!("u{u}_i{i}"),
                split,
                args: vec![format!("u{u}"), format!("i{i}")],
                label: Some(format!("{:.4}", rating(u, i))),
                features,
            });
        }
    }

    let theory = parse_theory(
        "pred SimilarUsers/2 closed .\n\
         pred SimilarItems/2 closed .\n\
         pred AvgUserRating/1 closed .\n\
         pred AvgItemRating/1 closed .\n\
         pred Rates/2 open .\n\
         pred Dnn/2 open .\n\
         LEARN :: SimilarUsers(U1, U2) & Rates(U1, I) -> Rates(U2, I) .\n\
         LEARN :: SimilarItems(I1, I2) & Rates(U, I1) -> Rates(U, I2) .\n\
         LEARN :: AvgUserRating(U) <-> Rates(U, I) .\n\
         LEARN :: AvgItemRating(I) <-> Rates(U, I) .\n\
         LEARN :: Dnn(U, I) -> Rates(U, I) .\n",
    )?;
    let mapping = MappingConfig {
        task: TaskKind::Regression { lo: T::of(lo), hi: T::of(hi) },
        target: super::AtomTemplate::parse("Rates($0, $1)")?,
        prior: super::AtomTemplate::parse("Dnn($0, $1)")?,
        features: 6,
        feature_ranges: vec![None; 6],
    };
    Ok((Dataset { data, facts, mapping }, theory))
}

/// Latent-chain activity data. One actor moves through `n_frames` frames,
/// its activity persisting over random-length segments; every box in a
/// frame shares that activity. Frame-level labels (`FLabel`) are correct
/// except for a `noise` fraction of frames; box features carry a noisy
/// class signal. `distractors` extra rules fire over random box pairs and
/// carry no signal.
pub fn synth_latent_chain<T: Real>(
    seed: u64,
    n_frames: usize,
    boxes_per_frame: usize,
    noise: f64,
    distractors: usize,
) -> Result<(Dataset<T>, Theory<T>), HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = CHAIN_CLASSES;

    // Piecewise-constant activity per frame.
    let mut activity = Vec::with_capacity(n_frames);
    let mut current = rng.random_range(0..classes.len());
    for _ in 0..n_frames {
        if rng.random_bool(0.2) {
            current = rng.random_range(0..classes.len());
        }
        activity.push(current);
    }

    let box_id = |f: usize, k: usize| format!("b{f}_{k}");
    let frame_id = |f: usize| format!("f{f}");

    let mut facts = FactSet::new();
    for f in 0..n_frames {
        let flip = rng.random_bool(noise.clamp(0.0, 1.0));
        for (c, name) in classes.iter().enumerate() {
            let correct = c == activity[f];
            let shown = if flip { !correct } else { correct };
            facts.insert(
                "FLabel",
                vec![frame_id(f), name.to_string()],
                if shown { T::one() } else { T::zero() },
            )?;
        }
        for k in 0..boxes_per_frame {
            facts.insert("Frame", vec![box_id(f, k), frame_id(f)], T::one())?;
        }
        if f + 1 < n_frames {
            facts.insert("Sequence", vec![frame_id(f), frame_id(f + 1)], T::one())?;
        }
    }
    // Boxes in the same or consecutive frames are close, both orientations.
    // A single box per frame means no co-occurring boxes at all.
    let mut close = Vec::new();
    let close_frames = if boxes_per_frame >= 2 { n_frames } else { 0 };
    for f in 0..close_frames {
        for k1 in 0..boxes_per_frame {
            for k2 in 0..boxes_per_frame {
                if k1 != k2 {
                    close.push((box_id(f, k1), box_id(f, k2)));
                }
                if f + 1 < n_frames {
                    close.push((box_id(f, k1), box_id(f + 1, k2)));
                    close.push((box_id(f + 1, k2), box_id(f, k1)));
                }
            }
        }
    }
    for (a, b) in close {
        facts.insert("Close", vec![a, b], T::one())?;
    }
    // Distractor evidence: random box pairs with no relation to the labels.
    let n_boxes = n_frames * boxes_per_frame;
    let all_boxes: Vec<String> = (0..n_frames)
        .flat_map(|f| (0..boxes_per_frame).map(move |k| box_id(f, k)))
        .collect();
    for j in 0..distractors {
        let pred = format!("Noise{j}");
        let mut used = std::collections::BTreeSet::new();
        for _ in 0..n_boxes.max(4) {
            let a = rng.random_range(0..all_boxes.len());
            let b = rng.random_range(0..all_boxes.len());
            if a != b && used.insert((a, b)) {
                facts.insert(
                    &pred,
                    vec![all_boxes[a].clone(), all_boxes[b].clone()],
                    T::one(),
                )?;
            }
        }
    }

    let mut data = Vec::new();
    for f in 0..n_frames {
        for k in 0..boxes_per_frame {
            let split = if rng.random_bool(0.3) { Split::Test } else { Split::Train };
            let mut features = Vec::with_capacity(classes.len() + 1);
            for c in 0..classes.len() {
                let signal = if c == activity[f] { 1.0 } else { 0.0 };
                features.push(T::of(0.7 * signal + 0.3 * rng.random_range(0.0..1.0)));
            }
            features.push(T::of(rng.random_range(0.0..1.0)));
            data.push(Datum {
                id: box_id(f, k),
                split,
                args: vec![box_id(f, k)],
                label: Some(classes[activity[f]].to_string()),
                features,
            });
        }
    }

    let mut rules = String::from(
        "pred Frame/2 closed .\n\
         pred FLabel/2 closed .\n\
         pred Close/2 closed .\n\
         pred Sequence/2 closed .\n\
         pred Doing/2 open .\n\
         pred Same/2 open .\n\
         pred Dnn/2 open .\n\
         LEARN :: Frame(B, F) & FLabel(F, A) -> Doing(B, A) .\n\
         LEARN :: Doing(B1, A) & Close(B1, B2) -> Doing(B2, A) .\n\
         LEARN :: Sequence(F1, F2) & Frame(B1, F1) & Frame(B2, F2) & Close(B1, B2) -> Same(B1, B2) .\n\
         LEARN :: Same(B1, B2) & Doing(B1, A) -> Doing(B2, A) .\n\
         LEARN :: Dnn(B, A) -> Doing(B, A) .\n",
    );
    for j in 0..distractors {
        rules.push_str(&format!("pred Noise{j}/2 closed .\n"));
        rules.push_str(&format!(
            "LEARN :: Noise{j}(B1, B2) & Doing(B1, A) -> Doing(B2, A) .\n"
        ));
    }
    rules.push_str("constraint: Doing(B, +A) = 1 .\n");
    let theory = parse_theory(&rules)?;

    let mapping = MappingConfig {
        task: TaskKind::Classification {
            classes: classes.iter().map(|c| c.to_string()).collect(),
        },
        target: super::AtomTemplate::parse("Doing($0, $class)")?,
        prior: super::AtomTemplate::parse("Dnn($0, $class)")?,
        features: classes.len() + 1,
        feature_ranges: vec![None; classes.len() + 1],
    };
    Ok((Dataset { data, facts, mapping }, theory))
}

pub fn data_to_text<T: Real>(data: &[Datum<T>]) -> String {
    let mut out = String::new();
    for d in data {
        let split = match d.split {
            Split::Train => "train",
            Split::Test => "test",
        };
        let features: Vec<String> = d.features.iter().map(|f| format!("{}", f.as_f64())).collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            d.id,
            split,
            d.args.join(","),
            d.label.as_deref().unwrap_or("-"),
            features.join(","),
        ));
    }
    out
}

pub fn mapping_to_text<T: Real>(mapping: &MappingConfig<T>) -> String {
    let mut out = String::from("[mapping]\n");
    match &mapping.task {
        TaskKind::Classification { classes } => {
            out.push_str("task = classification\n");
            out.push_str(&format!("classes = {}\n", classes.join(",")));
        }
        TaskKind::Regression { lo, hi } => {
            out.push_str("task = regression\n");
            out.push_str(&format!("range = {},{}\n", lo.as_f64(), hi.as_f64()));
        }
    }
    let template = |t: &super::AtomTemplate| {
        let args: Vec<String> = t
            .args
            .iter()
            .map(|a| match a {
                super::TemplateArg::DatumArg(k) => format!("${k}"),
                super::TemplateArg::Class => "$class".to_string(),
                super::TemplateArg::Const(c) => c.clone(),
            })
            .collect();
        format!("{}({})", t.predicate, args.join(", "))
    };
    out.push_str(&format!("target = {}\n", template(&mapping.target)));
    out.push_str(&format!("prior = {}\n", template(&mapping.prior)));
    out.push_str(&format!("features = {}\n", mapping.features));
    for (i, range) in mapping.feature_ranges.iter().enumerate() {
        if let Some((lo, hi)) = range {
            out.push_str(&format!("feature_range.{i} = {},{}\n", lo.as_f64(), hi.as_f64()));
        }
    }
    out
}

/// Writes the generated task as the four files `load_dataset` consumes:
/// `rules.txt`, `facts.tsv`, `data.tsv`, `mapping.cfg`.
pub fn write_task<T: Real>(
    dir: &Path,
    dataset: &Dataset<T>,
    theory: &Theory<T>,
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("rules.txt"), format_theory(theory))?;
    std::fs::write(dir.join("facts.tsv"), dataset.facts.to_text())?;
    std::fs::write(dir.join("data.tsv"), data_to_text(&dataset.data))?;
    std::fs::write(dir.join("mapping.cfg"), mapping_to_text(&dataset.mapping))?;
    Ok(())
}
