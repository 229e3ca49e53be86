//! Grounding: build the Herbrand base from a theory plus observed facts and
//! instantiate every rule into ground rules with tied weights.
//!
//! Domains are typed: each (predicate, argument position) has its own
//! constant pool, inferred from the facts, and positions linked by a shared
//! variable in any rule are merged into one pool.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::logic_lang::{Rule, Term, Theory};
use crate::scalar::Real;

pub type AtomId = usize;

pub const DEFAULT_GROUNDING_CAP: u64 = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroundError {
    #[error("undeclared predicate {0}")]
    UndeclaredPredicate(String),
    #[error("predicate {predicate} has arity {expected}, got {found} constants")]
    ArityMismatch { predicate: String, expected: usize, found: usize },
    #[error("duplicate fact for {predicate}({constants:?})")]
    DuplicateFact { predicate: String, constants: Vec<String> },
    #[error("fact value {value} for {predicate} outside [0,1]")]
    ValueOutOfRange { predicate: String, value: f64 },
    #[error("facts line {line}: {msg}")]
    FactParse { line: usize, msg: String },
    #[error("rule {rule} would produce about {estimate} groundings, above the cap of {cap}")]
    DomainExplosion { rule: usize, estimate: u64, cap: u64 },
    #[error("substitution does not cover variable {0}")]
    PartialSubstitution(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AtomStatus<T> {
    Observed(T),
    Unobserved,
}

impl<T: Real> AtomStatus<T> {
    pub fn is_observed(&self) -> bool {
        matches!(self, AtomStatus::Observed(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundAtom<T> {
    pub id: AtomId,
    pub predicate: String,
    pub constants: Vec<String>,
    pub status: AtomStatus<T>,
}

/// One instantiation of a rule; `rule_index` points at the shared weight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundRule {
    pub rule_index: usize,
    pub premise_ids: Vec<AtomId>,
    pub conclusion_id: AtomId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintGroup<T> {
    pub atom_ids: Vec<AtomId>,
    pub target: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundFactorGraph<T> {
    pub atoms: Vec<GroundAtom<T>>,
    pub ground_rules: Vec<GroundRule>,
    pub constraint_groups: Vec<ConstraintGroup<T>>,
    pub groundings_per_rule: Vec<usize>,
    index: BTreeMap<(String, Vec<String>), AtomId>,
    /// True once closed-world predicates default to observed-false atoms.
    closed: BTreeSet<String>,
}

impl<T: Real> Default for GroundFactorGraph<T> {
    fn default() -> Self {
        GroundFactorGraph {
            atoms: Vec::new(),
            ground_rules: Vec::new(),
            constraint_groups: Vec::new(),
            groundings_per_rule: Vec::new(),
            index: BTreeMap::new(),
            closed: BTreeSet::new(),
        }
    }
}

impl<T: Real> GroundFactorGraph<T> {
    pub fn atom_id(&self, predicate: &str, constants: &[String]) -> Option<AtomId> {
        self.index.get(&(predicate.to_string(), constants.to_vec())).copied()
    }

    pub fn get_or_insert(&mut self, predicate: &str, constants: Vec<String>) -> AtomId {
        let key = (predicate.to_string(), constants);
        if let Some(&id) = self.index.get(&key) {
            return id;
        }
        let id = self.atoms.len();
        let status = if self.closed.contains(predicate) {
            AtomStatus::Observed(T::zero())
        } else {
            AtomStatus::Unobserved
        };
        self.atoms.push(GroundAtom {
            id,
            predicate: key.0.clone(),
            constants: key.1.clone(),
            status,
        });
        self.index.insert(key, id);
        id
    }

    pub fn observe(&mut self, id: AtomId, value: T) {
        self.atoms[id].status = AtomStatus::Observed(value);
    }

    pub fn free_atoms(&self) -> impl Iterator<Item = &GroundAtom<T>> {
        self.atoms.iter().filter(|a| !a.status.is_observed())
    }

    /// Applies a total substitution to one rule, registering any new atoms.
    pub fn apply_substitution(
        &mut self,
        rule: &Rule<T>,
        rule_index: usize,
        subst: &Substitution,
    ) -> Result<GroundRule, GroundError> {
        let mut ground_atom = |atom: &crate::logic_lang::Atom| -> Result<AtomId, GroundError> {
            let mut constants = Vec::with_capacity(atom.args.len());
            for term in &atom.args {
                match term {
                    Term::Constant(c) => constants.push(c.clone()),
                    Term::Variable(v) => constants.push(
                        subst
                            .get(v)
                            .ok_or_else(|| GroundError::PartialSubstitution(v.clone()))?
                            .to_string(),
                    ),
                }
            }
            Ok(self.get_or_insert(&atom.predicate, constants))
        };
        let premise_ids =
            rule.premise.iter().map(&mut ground_atom).collect::<Result<Vec<_>, _>>()?;
        let conclusion_id = ground_atom(&rule.conclusion)?;
        Ok(GroundRule { rule_index, premise_ids, conclusion_id })
    }

    /// Re-sorts the atom table by (predicate, constants) and remaps every id,
    /// making the layout independent of insertion order.
    fn canonicalize(&mut self) {
        let mut order: Vec<AtomId> = (0..self.atoms.len()).collect();
        order.sort_by(|&a, &b| {
            (&self.atoms[a].predicate, &self.atoms[a].constants)
                .cmp(&(&self.atoms[b].predicate, &self.atoms[b].constants))
        });
        let mut remap = vec![0usize; self.atoms.len()];
        for (new_id, &old_id) in order.iter().enumerate() {
            remap[old_id] = new_id;
        }
        let mut atoms: Vec<GroundAtom<T>> = Vec::with_capacity(self.atoms.len());
        for &old_id in &order {
            let mut atom = self.atoms[old_id].clone();
            atom.id = atoms.len();
            atoms.push(atom);
        }
        self.atoms = atoms;
        self.index = self
            .atoms
            .iter()
            .map(|a| ((a.predicate.clone(), a.constants.clone()), a.id))
            .collect();
        for gr in &mut self.ground_rules {
            for p in &mut gr.premise_ids {
                *p = remap[*p];
            }
            gr.conclusion_id = remap[gr.conclusion_id];
        }
        for group in &mut self.constraint_groups {
            for a in &mut group.atom_ids {
                *a = remap[*a];
            }
        }
    }
}

/// A total mapping from variables to constants.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Substitution(BTreeMap<String, String>);

impl Substitution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, variable: impl Into<String>, constant: impl Into<String>) {
        self.0.insert(variable.into(), constant.into());
    }

    pub fn get(&self, variable: &str) -> Option<&str> {
        self.0.get(variable).map(String::as_str)
    }
}

impl FromIterator<(String, String)> for Substitution {
    fn from_iter<I: IntoIterator<Item = (String, String)>>(iter: I) -> Self {
        Substitution(iter.into_iter().collect())
    }
}

/// A set of observed ground facts with soft truth values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FactSet<T> {
    entries: Vec<(String, Vec<String>, T)>,
    keys: BTreeSet<(String, Vec<String>)>,
}

impl<T: Real> FactSet<T> {
    pub fn new() -> Self {
        FactSet { entries: Vec::new(), keys: BTreeSet::new() }
    }

    pub fn insert(
        &mut self,
        predicate: impl Into<String>,
        constants: Vec<String>,
        value: T,
    ) -> Result<(), GroundError> {
        let predicate = predicate.into();
        if value < T::zero() || value > T::one() {
            return Err(GroundError::ValueOutOfRange { predicate, value: value.as_f64() });
        }
        let key = (predicate, constants);
        if !self.keys.insert(key.clone()) {
            return Err(GroundError::DuplicateFact { predicate: key.0, constants: key.1 });
        }
        self.entries.push((key.0, key.1, value));
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String], T)> {
        self.entries.iter().map(|(p, c, v)| (p.as_str(), c.as_slice(), *v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Tab-separated lines: `predicate<TAB>const...<TAB>value`; a trailing
    /// numeric field is the value, otherwise the fact holds with value 1.
    pub fn parse(text: &str) -> Result<Self, GroundError> {
        let mut facts = FactSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').map(str::trim).collect();
            if fields.len() < 2 {
                return Err(GroundError::FactParse {
                    line,
                    msg: "expected at least a predicate and one constant".into(),
                });
            }
            let (value, consts) = match fields.last().and_then(|f| f.parse::<f64>().ok()) {
                Some(v) if fields.len() > 2 => (v, &fields[1..fields.len() - 1]),
                _ => (1.0, &fields[1..]),
            };
            if !(0.0..=1.0).contains(&value) {
                return Err(GroundError::FactParse {
                    line,
                    msg: format!("value {value} outside [0,1]"),
                });
            }
            facts
                .insert(
                    fields[0],
                    consts.iter().map(|s| s.to_string()).collect(),
                    T::of(value),
                )
                .map_err(|e| GroundError::FactParse { line, msg: e.to_string() })?;
        }
        Ok(facts)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (p, c, v) in self.iter() {
            out.push_str(p);
            for k in c {
                out.push('\t');
                out.push_str(k);
            }
            out.push('\t');
            out.push_str(&format!("{}", v.as_f64()));
            out.push('\n');
        }
        out
    }
}

/// Per argument-position constant pools; positions linked by shared rule
/// variables collapse into one pool.
#[derive(Debug, Clone, Default)]
pub struct DomainMap {
    parent: BTreeMap<(String, usize), (String, usize)>,
    constants: BTreeMap<(String, usize), BTreeSet<String>>,
}

impl DomainMap {
    fn find(&self, key: &(String, usize)) -> (String, usize) {
        let mut cur = key.clone();
        while let Some(p) = self.parent.get(&cur) {
            if *p == cur {
                break;
            }
            cur = p.clone();
        }
        cur
    }

    fn ensure(&mut self, key: (String, usize)) {
        self.parent.entry(key.clone()).or_insert_with(|| key.clone());
        self.constants.entry(key).or_default();
    }

    fn union(&mut self, a: (String, usize), b: (String, usize)) {
        self.ensure(a.clone());
        self.ensure(b.clone());
        let ra = self.find(&a);
        let rb = self.find(&b);
        if ra == rb {
            return;
        }
        // Deterministic: the lexicographically smaller root wins.
        let (winner, loser) = if ra <= rb { (ra, rb) } else { (rb, ra) };
        let moved = self.constants.remove(&loser).unwrap_or_default();
        self.constants.entry(winner.clone()).or_default().extend(moved);
        self.parent.insert(loser, winner);
    }

    fn add_constant(&mut self, key: (String, usize), constant: &str) {
        self.ensure(key.clone());
        let root = self.find(&key);
        self.constants.get_mut(&root).expect("root exists").insert(constant.to_string());
    }

    /// Sorted constant pool for one argument position.
    pub fn domain(&self, predicate: &str, position: usize) -> Vec<String> {
        let key = (predicate.to_string(), position);
        if !self.parent.contains_key(&key) {
            return Vec::new();
        }
        let root = self.find(&key);
        self.constants.get(&root).map(|s| s.iter().cloned().collect()).unwrap_or_default()
    }
}

fn variable_positions<'a, T>(
    rule: &'a Rule<T>,
) -> BTreeMap<&'a str, Vec<(String, usize)>> {
    let mut map: BTreeMap<&str, Vec<(String, usize)>> = BTreeMap::new();
    for atom in rule.premise.iter().chain(std::iter::once(&rule.conclusion)) {
        for (pos, term) in atom.args.iter().enumerate() {
            if let Term::Variable(v) = term {
                map.entry(v.as_str()).or_default().push((atom.predicate.clone(), pos));
            }
        }
    }
    map
}

/// Infers per-position domains from the facts, merging positions linked by
/// shared rule variables.
pub fn collect_constants<T: Real>(
    theory: &Theory<T>,
    facts: &FactSet<T>,
) -> Result<DomainMap, GroundError> {
    let mut dm = DomainMap::default();
    for decl in &theory.predicates {
        for pos in 0..decl.arity {
            dm.ensure((decl.name.clone(), pos));
        }
    }
    for rule in &theory.rules {
        for positions in variable_positions(rule).values() {
            for pair in positions.windows(2) {
                dm.union(pair[0].clone(), pair[1].clone());
            }
        }
    }
    for (predicate, constants, _) in facts.iter() {
        let decl = theory
            .predicate(predicate)
            .ok_or_else(|| GroundError::UndeclaredPredicate(predicate.to_string()))?;
        if decl.arity != constants.len() {
            return Err(GroundError::ArityMismatch {
                predicate: predicate.to_string(),
                expected: decl.arity,
                found: constants.len(),
            });
        }
        for (pos, constant) in constants.iter().enumerate() {
            dm.add_constant((predicate.to_string(), pos), constant);
        }
    }
    Ok(dm)
}

#[derive(Debug, Clone, Copy)]
pub struct GroundOptions {
    /// Refuse rules whose substitution count exceeds this.
    pub cap: u64,
    /// Drop groundings that can never be violated: a premise atom observed at
    /// 0 or a conclusion observed at 1.
    pub drop_statically_satisfied: bool,
}

impl Default for GroundOptions {
    fn default() -> Self {
        GroundOptions { cap: DEFAULT_GROUNDING_CAP, drop_statically_satisfied: false }
    }
}

/// Instantiates every rule over the inferred domains. Atoms present in the
/// facts are observed with their value; closed-world predicates default to
/// observed 0; tautological groundings (a premise atom equal to the
/// conclusion) are dropped; duplicate groundings of one rule are kept once.
pub fn ground_theory<T: Real>(
    theory: &Theory<T>,
    dm: &DomainMap,
    facts: &FactSet<T>,
    options: &GroundOptions,
) -> Result<GroundFactorGraph<T>, GroundError> {
    let mut graph = GroundFactorGraph::default();
    graph.closed =
        theory.predicates.iter().filter(|p| p.closed).map(|p| p.name.clone()).collect();

    // Register fact atoms first so observation status is set before rules
    // touch them.
    for (predicate, constants, value) in facts.iter() {
        let decl = theory
            .predicate(predicate)
            .ok_or_else(|| GroundError::UndeclaredPredicate(predicate.to_string()))?;
        if decl.arity != constants.len() {
            return Err(GroundError::ArityMismatch {
                predicate: predicate.to_string(),
                expected: decl.arity,
                found: constants.len(),
            });
        }
        let id = graph.get_or_insert(predicate, constants.to_vec());
        graph.observe(id, value);
    }

    graph.groundings_per_rule = vec![0; theory.rules.len()];
    for (rule_index, rule) in theory.rules.iter().enumerate() {
        let var_positions = variable_positions(rule);
        let variables: Vec<&str> = var_positions.keys().copied().collect();
        let domains: Vec<Vec<String>> = variables
            .iter()
            .map(|v| {
                let (pred, pos) = &var_positions[v][0];
                dm.domain(pred, *pos)
            })
            .collect();

        let mut estimate: u64 = 1;
        for d in &domains {
            estimate = estimate.saturating_mul(d.len() as u64);
        }
        if estimate > options.cap {
            return Err(GroundError::DomainExplosion { rule: rule_index, estimate, cap: options.cap });
        }
        if domains.iter().any(Vec::is_empty) && !variables.is_empty() {
            continue;
        }

        let mut seen: BTreeSet<(Vec<AtomId>, AtomId)> = BTreeSet::new();
        let mut indices = vec![0usize; variables.len()];
        loop {
            let subst: Substitution = variables
                .iter()
                .enumerate()
                .map(|(slot, v)| (v.to_string(), domains[slot][indices[slot]].clone()))
                .collect();
            let gr = graph.apply_substitution(rule, rule_index, &subst)?;

            let tautology = gr.premise_ids.contains(&gr.conclusion_id);
            let statically_satisfied = options.drop_statically_satisfied
                && (gr.premise_ids.iter().any(|&p| {
                    matches!(graph.atoms[p].status, AtomStatus::Observed(v) if v <= T::zero())
                }) || matches!(
                    graph.atoms[gr.conclusion_id].status,
                    AtomStatus::Observed(v) if v >= T::one()
                ));
            if !tautology
                && !statically_satisfied
                && seen.insert((gr.premise_ids.clone(), gr.conclusion_id))
            {
                graph.ground_rules.push(gr);
                graph.groundings_per_rule[rule_index] += 1;
            }

            // Advance the odometer (empty when the rule is variable-free).
            if variables.is_empty() {
                break;
            }
            let mut k = variables.len();
            loop {
                if k == 0 {
                    break;
                }
                k -= 1;
                indices[k] += 1;
                if indices[k] < domains[k].len() {
                    break;
                }
                indices[k] = 0;
                if k == 0 {
                    break;
                }
            }
            if indices.iter().all(|&i| i == 0) {
                break;
            }
        }
    }

    // Instantiate sum-constraint groups.
    for c in &theory.constraints {
        let summed_domain = dm.domain(&c.predicate, c.summed_position);
        if summed_domain.is_empty() {
            continue;
        }
        // Enumerate instantiations of the fixed arguments.
        let fixed_positions: Vec<usize> =
            (0..c.arity()).filter(|&p| p != c.summed_position).collect();
        let fixed_domains: Vec<Vec<String>> = fixed_positions
            .iter()
            .zip(&c.fixed_args)
            .map(|(&pos, term)| match term {
                Term::Constant(k) => vec![k.clone()],
                Term::Variable(_) => dm.domain(&c.predicate, pos),
            })
            .collect();
        if fixed_domains.iter().any(Vec::is_empty) {
            continue;
        }
        let mut indices = vec![0usize; fixed_domains.len()];
        loop {
            let mut atom_ids = Vec::with_capacity(summed_domain.len());
            for summed_constant in &summed_domain {
                let mut constants = vec![String::new(); c.arity()];
                for (slot, (&pos, idx)) in fixed_positions.iter().zip(&indices).enumerate() {
                    constants[pos] = fixed_domains[slot][*idx].clone();
                }
                constants[c.summed_position] = summed_constant.clone();
                atom_ids.push(graph.get_or_insert(&c.predicate, constants));
            }
            graph.constraint_groups.push(ConstraintGroup { atom_ids, target: c.target });

            if indices.is_empty() {
                break;
            }
            let mut k = indices.len();
            loop {
                if k == 0 {
                    break;
                }
                k -= 1;
                indices[k] += 1;
                if indices[k] < fixed_domains[k].len() {
                    break;
                }
                indices[k] = 0;
                if k == 0 {
                    break;
                }
            }
            if indices.iter().all(|&i| i == 0) {
                break;
            }
        }
    }

    graph.canonicalize();
    Ok(graph)
}

#[cfg(test)]
mod tests;
