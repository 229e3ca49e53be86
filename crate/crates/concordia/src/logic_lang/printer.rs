use std::fmt::Write;

use super::{Rule, Theory, Weight};
use crate::scalar::Real;

fn weight_text<T: Real>(rule: &Rule<T>) -> String {
    if rule.hard {
        return "hard".to_string();
    }
    match rule.weight {
        Weight::Learnable => "LEARN".to_string(),
        Weight::Fixed(w) => {
            let w = w.as_f64();
            if w.fract() == 0.0 && w.abs() < 1e15 {
                format!("{w:.1}")
            } else {
                format!("{w}")
            }
        }
    }
}

fn target_text<T: Real>(target: T) -> String {
    super::parser::format_const_number(target.as_f64())
}

/// Canonical textual form; `parse_theory(format_theory(t))` is structurally
/// equal to `t`.
pub fn format_theory<T: Real>(theory: &Theory<T>) -> String {
    let mut out = String::new();
    for p in &theory.predicates {
        if p.explicit {
            let mode = if p.closed { " closed" } else { "" };
            writeln!(out, "pred {}/{}{} .", p.name, p.arity, mode).expect("string write");
        }
    }
    let mut i = 0;
    while i < theory.rules.len() {
        let rule = &theory.rules[i];
        // A desugared `<->` pair prints back as one bidirectional statement.
        let bidirectional = theory.rules.get(i + 1).is_some_and(|next| {
            rule.tie == i
                && next.tie == i
                && rule.premise.len() == 1
                && next.premise.len() == 1
                && next.premise[0] == rule.conclusion
                && next.conclusion == rule.premise[0]
                && next.weight == rule.weight
                && next.hard == rule.hard
        });
        if bidirectional {
            writeln!(
                out,
                "{} :: {} <-> {} .",
                weight_text(rule),
                rule.premise[0],
                rule.conclusion
            )
            .expect("string write");
            i += 2;
            continue;
        }
        let w = weight_text(rule);
        if rule.premise.is_empty() {
            writeln!(out, "{} :: {} .", w, rule.conclusion).expect("string write");
        } else {
            let premise: Vec<String> = rule.premise.iter().map(|a| a.to_string()).collect();
            writeln!(out, "{} :: {} -> {} .", w, premise.join(" & "), rule.conclusion)
                .expect("string write");
        }
        i += 1;
    }
    for c in &theory.constraints {
        // The summed variable's name is not part of the structure; pick a
        // canonical one that avoids clashing with the fixed arguments.
        let mut summed = "A".to_string();
        let mut n = 0;
        while c.fixed_args.iter().any(|t| t.name() == summed) {
            summed = format!("A{n}");
            n += 1;
        }
        let mut args = Vec::with_capacity(c.arity());
        let mut fixed = c.fixed_args.iter();
        for pos in 0..c.arity() {
            if pos == c.summed_position {
                args.push(format!("+{summed}"));
            } else {
                args.push(fixed.next().expect("fixed args cover non-summed positions").to_string());
            }
        }
        writeln!(out, "constraint: {}({}) = {} .", c.predicate, args.join(", "), target_text(c.target))
            .expect("string write");
    }
    out
}
