//! The weighted first-order rule language: AST, parsing, validation and
//! canonical printing.
//!
//! Statements are line-oriented and terminated by `.`:
//!
//! ```text
//! pred Similar/2 closed .
//! 1.0 :: Dnn(U, I) -> Rates(U, I) .
//! LEARN :: Similar(I1, I2) & Rates(U, I1) -> Rates(U, I2) .
//! 0.5 :: AvgUserRating(U) <-> Rates(U, I) .
//! hard :: Frame(B, F) -> InScene(B) .
//! constraint: Doing(B, +A) = 1 .
//! ```
//!
//! `<->` desugars into two directed rules sharing one weight. Comments start
//! with `#`. Variables start uppercase; constants start lowercase or are
//! double-quoted.

mod parser;
mod printer;

pub use parser::parse_theory;
pub use printer::format_theory;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::scalar::Real;

/// A variable or a constant.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Variable(String),
    Constant(String),
}

impl Term {
    pub fn is_variable(&self) -> bool {
        matches!(self, Term::Variable(_))
    }

    pub fn name(&self) -> &str {
        match self {
            Term::Variable(n) | Term::Constant(n) => n,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Variable(n) => write!(f, "{n}"),
            Term::Constant(n) => {
                if n.chars().next().is_some_and(|c| c.is_lowercase() || c == '_')
                    && n.chars().all(|c| c.is_alphanumeric() || c == '_')
                {
                    write!(f, "{n}")
                } else {
                    write!(f, "\"{n}\"")
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Atom {
    pub predicate: String,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(predicate: impl Into<String>, args: Vec<Term>) -> Self {
        Atom { predicate: predicate.into(), args }
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.args.iter().filter_map(|t| match t {
            Term::Variable(n) => Some(n.as_str()),
            Term::Constant(_) => None,
        })
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.predicate)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

/// A rule weight: fixed at parse time or learnable (initialized by the
/// weight-learning module).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weight<T> {
    Fixed(T),
    Learnable,
}

/// A weighted (or hard) conjunctive rule `premise -> conclusion`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule<T> {
    pub weight: Weight<T>,
    pub premise: Vec<Atom>,
    pub conclusion: Atom,
    pub hard: bool,
    /// Weight-tie group leader. Equals the rule's own index for untied rules;
    /// the two halves of a desugared `<->` share the first half's index.
    pub tie: usize,
}

/// `constraint: Pred(fixed..., +Var) = target .` — the soft truth values of
/// the summed position must total `target` in every instantiation.
#[derive(Debug, Clone, PartialEq)]
pub struct SumConstraint<T> {
    pub predicate: String,
    pub fixed_args: Vec<Term>,
    pub summed_position: usize,
    pub target: T,
}

impl<T> SumConstraint<T> {
    pub fn arity(&self) -> usize {
        self.fixed_args.len() + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateDecl {
    pub name: String,
    pub arity: usize,
    /// Closed-world predicates: ground atoms absent from the facts are
    /// observed false rather than free.
    pub closed: bool,
    /// Whether the declaration was written explicitly (printed back) or
    /// inferred from first use (not printed).
    pub explicit: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theory<T> {
    pub rules: Vec<Rule<T>>,
    pub constraints: Vec<SumConstraint<T>>,
    pub predicates: Vec<PredicateDecl>,
}

impl<T> Default for Theory<T> {
    fn default() -> Self {
        Theory { rules: Vec::new(), constraints: Vec::new(), predicates: Vec::new() }
    }
}

impl<T: Real> Theory<T> {
    pub fn predicate(&self, name: &str) -> Option<&PredicateDecl> {
        self.predicates.iter().find(|p| p.name == name)
    }

    /// Registers `name/arity` on first use; returns the declared arity.
    /// The table stays sorted by name so structure is independent of
    /// statement order.
    pub fn declare(&mut self, name: &str, arity: usize, closed: bool, explicit: bool) -> usize {
        match self.predicates.binary_search_by(|p| p.name.as_str().cmp(name)) {
            Ok(i) => self.predicates[i].arity,
            Err(i) => {
                self.predicates.insert(
                    i,
                    PredicateDecl { name: name.to_string(), arity, closed, explicit },
                );
                arity
            }
        }
    }

    /// True when the rule at `index` is one half of a desugared `<->` pair.
    pub fn is_bidirectional_half(&self, index: usize) -> bool {
        self.rules
            .iter()
            .enumerate()
            .any(|(j, r)| j != index && r.tie == self.rules[index].tie)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LogicError {
    #[error("{line}:{col}: syntax error: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: predicate {predicate} used with arity {found}, declared with arity {expected}")]
    ArityMismatch { line: usize, col: usize, predicate: String, expected: usize, found: usize },
    #[error("{line}:{col}: unsafe rule: conclusion variable {variable} does not occur in any premise atom")]
    UnsafeRule { line: usize, col: usize, variable: String },
    #[error("{line}:{col}: rule weight must be nonnegative, got {weight}")]
    NegativeWeight { line: usize, col: usize, weight: f64 },
    #[error("{line}:{col}: constraint target must be positive, got {target}")]
    NonPositiveTarget { line: usize, col: usize, target: f64 },
}

/// One problem found by [`validate_theory`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationIssue {
    UnsafeRule { rule: usize, variable: String },
    ArityConflict { predicate: String, declared: usize, used: usize, rule: usize },
    UndeclaredPredicate { predicate: String },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::UnsafeRule { rule, variable } => {
                write!(f, "rule {rule}: conclusion variable {variable} unbound in premise")
            }
            ValidationIssue::ArityConflict { predicate, declared, used, rule } => write!(
                f,
                "rule {rule}: predicate {predicate} used with arity {used}, declared {declared}"
            ),
            ValidationIssue::UndeclaredPredicate { predicate } => {
                write!(f, "predicate {predicate} is not declared")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Checks safety, arity consistency and predicate declarations. All problems
/// become report entries; a well-formed theory yields an empty report.
pub fn validate_theory<T: Real>(theory: &Theory<T>) -> ValidationReport {
    let mut report = ValidationReport::default();
    let declared: BTreeMap<&str, usize> =
        theory.predicates.iter().map(|p| (p.name.as_str(), p.arity)).collect();
    // Arity of first use, for theories built without declarations.
    let mut first_use: BTreeMap<String, usize> = BTreeMap::new();
    let has_decls = !theory.predicates.is_empty();

    let mut check_atom = |atom: &Atom, rule: usize, report: &mut ValidationReport| {
        let expected = declared
            .get(atom.predicate.as_str())
            .copied()
            .or_else(|| first_use.get(atom.predicate.as_str()).copied());
        match expected {
            Some(expected) if expected != atom.args.len() => {
                report.issues.push(ValidationIssue::ArityConflict {
                    predicate: atom.predicate.clone(),
                    declared: expected,
                    used: atom.args.len(),
                    rule,
                });
            }
            Some(_) => {}
            None => {
                if has_decls {
                    report
                        .issues
                        .push(ValidationIssue::UndeclaredPredicate { predicate: atom.predicate.clone() });
                }
                first_use.insert(atom.predicate.clone(), atom.args.len());
            }
        }
    };

    for (i, rule) in theory.rules.iter().enumerate() {
        for atom in rule.premise.iter().chain(std::iter::once(&rule.conclusion)) {
            check_atom(atom, i, &mut report);
        }
        // Halves of a `<->` pair are grounded over the union of both sides'
        // variables, so head-only variables are fine there.
        if !theory.is_bidirectional_half(i) {
            for var in rule.conclusion.variables() {
                let bound = rule.premise.iter().any(|a| a.variables().any(|v| v == var));
                if !bound {
                    report
                        .issues
                        .push(ValidationIssue::UnsafeRule { rule: i, variable: var.to_string() });
                }
            }
        }
    }
    for c in &theory.constraints {
        if !declared.contains_key(c.predicate.as_str())
            && !first_use.contains_key(c.predicate.as_str())
        {
            report
                .issues
                .push(ValidationIssue::UndeclaredPredicate { predicate: c.predicate.clone() });
        }
    }
    report
}
