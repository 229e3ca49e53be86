use proptest::prelude::*;

use super::*;
use crate::logic_lang::{parse_theory, Atom};

type Th = Theory<f64>;

fn theory(src: &str) -> Th {
    parse_theory(src).expect("parse")
}

fn facts(entries: &[(&str, &[&str], f64)]) -> FactSet<f64> {
    let mut f = FactSet::new();
    for (p, c, v) in entries {
        f.insert(*p, c.iter().map(|s| s.to_string()).collect(), *v).expect("fact");
    }
    f
}

const EQ1: &str = "2.0 :: Similar(I1,I2) & Rates(U,I1) -> Rates(U,I2) .";
const CAD2: &str = "1.0 :: Doing(B1,A) & Close(B1,B2) -> Doing(B2,A) .";

#[test]
fn collect_constants_merges_linked_positions() {
    let t = theory(EQ1);
    let f = facts(&[("Rates", &["alice", "t1"], 0.5)]);
    let dm = collect_constants(&t, &f).unwrap();
    assert_eq!(dm.domain("Rates", 0), vec!["alice"]);
    assert_eq!(dm.domain("Rates", 1), vec!["t1"]);
    // Item positions of Similar share the Rates item pool through I1/I2.
    assert_eq!(dm.domain("Similar", 0), vec!["t1"]);
    assert_eq!(dm.domain("Similar", 1), vec!["t1"]);
}

#[test]
fn collect_constants_empty_facts_gives_empty_domains() {
    let t = theory(EQ1);
    let dm = collect_constants(&t, &FactSet::new()).unwrap();
    assert!(dm.domain("Rates", 0).is_empty());
    assert!(dm.domain("Similar", 1).is_empty());
}

#[test]
fn collect_constants_two_boxes_one_activity() {
    let t = theory(CAD2);
    let f = facts(&[
        ("Close", &["b1", "b2"], 1.0),
        ("Close", &["b2", "b1"], 1.0),
        ("Doing", &["b1", "crossing"], 1.0),
    ]);
    let dm = collect_constants(&t, &f).unwrap();
    assert_eq!(dm.domain("Doing", 0).len(), 2);
    assert_eq!(dm.domain("Doing", 1).len(), 1);
}

#[test]
fn collect_constants_rejects_undeclared_predicate() {
    let t = theory(EQ1);
    let f = facts(&[("Elsewhere", &["x"], 1.0)]);
    assert!(matches!(
        collect_constants(&t, &f),
        Err(GroundError::UndeclaredPredicate(p)) if p == "Elsewhere"
    ));
}

#[test]
fn two_boxes_one_activity_grounds_twice() {
    let t = theory(CAD2);
    let f = facts(&[
        ("Close", &["b1", "b2"], 1.0),
        ("Close", &["b2", "b1"], 1.0),
        ("Doing", &["b1", "crossing"], 1.0),
    ]);
    let dm = collect_constants(&t, &f).unwrap();
    let g = ground_theory(&t, &dm, &f, &GroundOptions::default()).unwrap();
    // Reflexive substitutions make the premise contain the conclusion and
    // are dropped, leaving the two cross-box instantiations.
    assert_eq!(g.ground_rules.len(), 2);
    assert_eq!(g.groundings_per_rule, vec![2]);
}

#[test]
fn zero_rule_theory_grounds_only_facts() {
    let mut t = Th::default();
    t.declare("P", 1, false, false);
    let f = facts(&[("P", &["a"], 1.0), ("P", &["b"], 0.25)]);
    let dm = collect_constants(&t, &f).unwrap();
    let g = ground_theory(&t, &dm, &f, &GroundOptions::default()).unwrap();
    assert_eq!(g.atoms.len(), 2);
    assert!(g.ground_rules.is_empty());
    assert_eq!(g.atoms[1].status, AtomStatus::Observed(0.25));
}

#[test]
fn unary_rule_over_three_constants() {
    let t = theory("1.0 :: P(X) -> Q(X) .");
    let f = facts(&[("P", &["a"], 1.0), ("P", &["b"], 1.0), ("P", &["c"], 1.0)]);
    let dm = collect_constants(&t, &f).unwrap();
    let g = ground_theory(&t, &dm, &f, &GroundOptions::default()).unwrap();
    assert_eq!(g.ground_rules.len(), 3);
    assert_eq!(g.atoms.len(), 6);
}

#[test]
fn apply_substitution_instantiates_rule() {
    let t = theory(EQ1);
    let mut g = GroundFactorGraph::<f64>::default();
    let subst: Substitution = [("I1", "t1"), ("I2", "t2"), ("U", "alice")]
        .iter()
        .map(|(v, c)| (v.to_string(), c.to_string()))
        .collect();
    let gr = g.apply_substitution(&t.rules[0], 0, &subst).unwrap();
    assert_eq!(g.atoms[gr.premise_ids[0]].predicate, "Similar");
    assert_eq!(g.atoms[gr.premise_ids[0]].constants, vec!["t1", "t2"]);
    assert_eq!(g.atoms[gr.premise_ids[1]].constants, vec!["alice", "t1"]);
    assert_eq!(g.atoms[gr.conclusion_id].constants, vec!["alice", "t2"]);
}

#[test]
fn apply_substitution_identity_on_ground_rule() {
    let t = theory("1.0 :: P(a) -> Q(b) .");
    let mut g = GroundFactorGraph::<f64>::default();
    let gr = g.apply_substitution(&t.rules[0], 0, &Substitution::new()).unwrap();
    assert_eq!(g.atoms[gr.premise_ids[0]].constants, vec!["a"]);
    assert_eq!(g.atoms[gr.conclusion_id].constants, vec!["b"]);
}

#[test]
fn apply_substitution_rejects_partial_mapping() {
    let t = theory(EQ1);
    let mut g = GroundFactorGraph::<f64>::default();
    let mut subst = Substitution::new();
    subst.bind("I1", "t1");
    let err = g.apply_substitution(&t.rules[0], 0, &subst).unwrap_err();
    assert!(matches!(err, GroundError::PartialSubstitution(_)));
}

#[test]
fn cap_guard_names_the_offending_rule() {
    let t = theory("1.0 :: P(X) -> Q(X) .\n1.0 :: R(X,Y) -> S(X,Y) .");
    let f = facts(&[
        ("P", &["a"], 1.0),
        ("R", &["a", "a"], 1.0),
        ("R", &["b", "b"], 1.0),
        ("R", &["c", "c"], 1.0),
    ]);
    let dm = collect_constants(&t, &f).unwrap();
    let opts = GroundOptions { cap: 4, ..GroundOptions::default() };
    let err = ground_theory(&t, &dm, &f, &opts).unwrap_err();
    assert!(matches!(err, GroundError::DomainExplosion { rule: 1, estimate: 9, cap: 4 }));
}

#[test]
fn closed_predicates_default_to_observed_false() {
    let t = theory("pred Close/2 closed .\n1.0 :: Doing(B1,A) & Close(B1,B2) -> Doing(B2,A) .");
    let f = facts(&[
        ("Close", &["b1", "b2"], 1.0),
        ("Doing", &["b1", "crossing"], 1.0),
        ("Doing", &["b2", "crossing"], 0.0),
    ]);
    let dm = collect_constants(&t, &f).unwrap();
    let g = ground_theory(&t, &dm, &f, &GroundOptions::default()).unwrap();
    // Close(b2, b1) never appears in the facts: observed 0 by closed world.
    let id = g.atom_id("Close", &["b2".to_string(), "b1".to_string()]).unwrap();
    assert_eq!(g.atoms[id].status, AtomStatus::Observed(0.0));
}

#[test]
fn statically_satisfied_groundings_can_be_dropped() {
    let t = theory("pred Close/2 closed .\n1.0 :: Doing(B1,A) & Close(B1,B2) -> Doing(B2,A) .");
    let f = facts(&[
        ("Close", &["b1", "b2"], 1.0),
        ("Doing", &["b1", "crossing"], 1.0),
        ("Doing", &["b2", "crossing"], 0.5),
    ]);
    let dm = collect_constants(&t, &f).unwrap();
    let full = ground_theory(&t, &dm, &f, &GroundOptions::default()).unwrap();
    let opts = GroundOptions { drop_statically_satisfied: true, ..GroundOptions::default() };
    let pruned = ground_theory(&t, &dm, &f, &opts).unwrap();
    // Only the b1 -> b2 direction survives: the reverse uses Close(b2,b1)=0.
    assert_eq!(full.ground_rules.len(), 2);
    assert_eq!(pruned.ground_rules.len(), 1);
}

#[test]
fn grounding_is_deterministic() {
    let t = theory(&format!("{EQ1}\n{CAD2}"));
    let f = facts(&[
        ("Rates", &["alice", "t1"], 0.5),
        ("Rates", &["bob", "t2"], 0.75),
        ("Similar", &["t1", "t2"], 1.0),
        ("Close", &["b1", "b2"], 1.0),
        ("Doing", &["b1", "walk"], 1.0),
    ]);
    let dm = collect_constants(&t, &f).unwrap();
    let g1 = ground_theory(&t, &dm, &f, &GroundOptions::default()).unwrap();
    let g2 = ground_theory(&t, &collect_constants(&t, &f).unwrap(), &f, &GroundOptions::default()).unwrap();
    assert_eq!(g1, g2);
}

#[test]
fn constraint_groups_instantiate_per_fixed_argument() {
    let t = theory(
        "1.0 :: Near(B1,B2) & Doing(B1,A) -> Doing(B2,A) .\nconstraint: Doing(B, +A) = 1 .",
    );
    let f = facts(&[
        ("Near", &["b1", "b2"], 1.0),
        ("Doing", &["b1", "walk"], 1.0),
        ("Doing", &["b1", "talk"], 0.0),
    ]);
    let dm = collect_constants(&t, &f).unwrap();
    let g = ground_theory(&t, &dm, &f, &GroundOptions::default()).unwrap();
    // One group per box, each summing over both activities.
    assert_eq!(g.constraint_groups.len(), 2);
    for group in &g.constraint_groups {
        assert_eq!(group.atom_ids.len(), 2);
        assert_eq!(group.target, 1.0);
    }
}

#[test]
fn fact_file_round_trip_and_default_value() {
    let f: FactSet<f64> = FactSet::parse("Rates\talice\tt1\t0.5\nSimilar\tt1\tt2\n").unwrap();
    let entries: Vec<_> = f.iter().collect();
    assert_eq!(entries[0].2, 0.5);
    assert_eq!(entries[1].2, 1.0);
    let again: FactSet<f64> = FactSet::parse(&f.to_text()).unwrap();
    assert_eq!(again, f);
}

#[test]
fn fact_file_rejects_out_of_range_value_with_line() {
    let err = FactSet::<f64>::parse("Rates\talice\tt1\t0.5\nRates\tbob\tt2\t1.5\n").unwrap_err();
    assert!(matches!(err, GroundError::FactParse { line: 2, .. }));
}

#[test]
fn duplicate_fact_is_an_error() {
    let mut f = FactSet::<f64>::new();
    f.insert("P", vec!["a".into()], 1.0).unwrap();
    assert!(matches!(
        f.insert("P", vec!["a".into()], 0.5),
        Err(GroundError::DuplicateFact { .. })
    ));
}

// Independent string-level substitution enumerator used as a counting oracle.
fn brute_force_count(t: &Th, dm: &DomainMap, rule_index: usize) -> usize {
    let rule = &t.rules[rule_index];
    let mut vars: Vec<(String, Vec<String>)> = Vec::new();
    for atom in rule.premise.iter().chain(std::iter::once(&rule.conclusion)) {
        for (pos, term) in atom.args.iter().enumerate() {
            if let crate::logic_lang::Term::Variable(v) = term {
                if !vars.iter().any(|(name, _)| name == v) {
                    vars.push((v.clone(), dm.domain(&atom.predicate, pos)));
                }
            }
        }
    }
    fn instantiate(atom: &Atom, binding: &BTreeMap<String, String>) -> (String, Vec<String>) {
        let consts = atom
            .args
            .iter()
            .map(|t| match t {
                crate::logic_lang::Term::Constant(c) => c.clone(),
                crate::logic_lang::Term::Variable(v) => binding[v].clone(),
            })
            .collect();
        (atom.predicate.clone(), consts)
    }
    let mut seen = BTreeSet::new();
    let mut count = 0usize;
    let mut stack: Vec<BTreeMap<String, String>> = vec![BTreeMap::new()];
    while let Some(binding) = stack.pop() {
        if binding.len() == vars.len() {
            let premise: Vec<_> = rule.premise.iter().map(|a| instantiate(a, &binding)).collect();
            let conclusion = instantiate(&rule.conclusion, &binding);
            if premise.contains(&conclusion) {
                continue;
            }
            if seen.insert((premise, conclusion)) {
                count += 1;
            }
            continue;
        }
        let (name, domain) = &vars[binding.len()];
        for constant in domain {
            let mut next = binding.clone();
            next.insert(name.clone(), constant.clone());
            stack.push(next);
        }
    }
    count
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn grounding_counts_match_brute_force(
        n_consts in 1..5usize,
        n_facts in 0..8usize,
        seed in any::<u64>(),
    ) {
        let t = theory(
            "1.0 :: P(X) -> Q(X) .\n\
             1.0 :: Q(X) & L(X,Y) -> Q(Y) .\n\
             1.0 :: L(X,Y) & L(Y,Z) -> L(X,Z) .",
        );
        let consts: Vec<String> = (0..n_consts).map(|i| format!("c{i}")).collect();
        let mut f = FactSet::<f64>::new();
        let mut s = seed;
        for _ in 0..n_facts {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let a = &consts[(s >> 33) as usize % consts.len()];
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let b = &consts[(s >> 33) as usize % consts.len()];
            let _ = f.insert("L", vec![a.clone(), b.clone()], 1.0);
        }
        let _ = f.insert("P", vec![consts[0].clone()], 1.0);
        let dm = collect_constants(&t, &f).unwrap();
        let g = ground_theory(&t, &dm, &f, &GroundOptions::default()).unwrap();
        prop_assume!(g.ground_rules.len() <= 500);
        for i in 0..t.rules.len() {
            prop_assert_eq!(g.groundings_per_rule[i], brute_force_count(&t, &dm, i));
        }
        prop_assert_eq!(g.groundings_per_rule.iter().sum::<usize>(), g.ground_rules.len());
    }
}
