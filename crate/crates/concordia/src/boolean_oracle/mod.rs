//! Exact Boolean reference semantics.
//!
//! Replaces soft truth values with classical two-valued logic and computes
//! the joint by brute-force enumeration over the free atoms. Intended as an
//! independent check on the relaxed solver, so it shares no inference code
//! with [`crate::hlmrf`].

use thiserror::Error;

use crate::grounder::{AtomId, AtomStatus, GroundFactorGraph};
use crate::hlmrf::{Weights, HARD_RULE_WEIGHT};
use crate::logic_lang::Theory;
use crate::scalar::Real;

/// Enumeration covers 2^n worlds, so the free-atom count is capped.
pub const MAX_FREE_ATOMS: usize = 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("{count} free atoms exceed the enumeration limit of {max}")]
    TooManyFreeAtoms { count: usize, max: usize },
    #[error("sum constraints have no two-valued counterpart here")]
    ConstraintsUnsupported,
    #[error("no world satisfies the mutual-exclusion filter")]
    NoFeasibleWorld,
}

/// Exact joint over the free atoms. World `i` assigns free atom `j` the
/// value of bit `n-1-j` of `i`, so increasing indices walk the assignments
/// in lexicographic order and world 0 is all-false.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable<T> {
    pub free_ids: Vec<AtomId>,
    pub probs: Vec<T>,
}

impl<T: Real> JointTable<T> {
    /// Full truth assignment (observed atoms included) for one world index.
    pub fn world(&self, index: usize, graph: &GroundFactorGraph<T>) -> Vec<bool> {
        let mut assignment = observed_bits(graph);
        let n = self.free_ids.len();
        for (j, &id) in self.free_ids.iter().enumerate() {
            assignment[id] = (index >> (n - 1 - j)) & 1 == 1;
        }
        assignment
    }
}

/// Observed values binarized at 0.5 (>= 0.5 reads as true); free atoms false.
fn observed_bits<T: Real>(graph: &GroundFactorGraph<T>) -> Vec<bool> {
    graph
        .atoms
        .iter()
        .map(|a| match a.status {
            AtomStatus::Observed(v) => v >= T::of(0.5),
            AtomStatus::Unobserved => false,
        })
        .collect()
}

/// Classical energy: each ground rule whose premises are all true and whose
/// conclusion is false contributes its weight.
fn world_energy<T: Real>(
    graph: &GroundFactorGraph<T>,
    theory: &Theory<T>,
    weights: &Weights<T>,
    assignment: &[bool],
) -> f64 {
    let mut energy = 0.0;
    for gr in &graph.ground_rules {
        let fired = gr.premise_ids.iter().all(|&id| assignment[id]);
        if fired && !assignment[gr.conclusion_id] {
            energy += if theory.rules[gr.rule_index].hard {
                HARD_RULE_WEIGHT
            } else {
                weights.lambda[gr.rule_index].as_f64()
            };
        }
    }
    energy
}

/// Enumerates every assignment of the free atoms and returns the normalized
/// Boltzmann distribution `P(x) ∝ exp(-energy(x))`.
pub fn enumerate_joint<T: Real>(
    graph: &GroundFactorGraph<T>,
    theory: &Theory<T>,
    weights: &Weights<T>,
) -> Result<JointTable<T>, OracleError> {
    if !graph.constraint_groups.is_empty() {
        return Err(OracleError::ConstraintsUnsupported);
    }
    let free_ids: Vec<AtomId> = graph.free_atoms().map(|a| a.id).collect();
    if free_ids.len() > MAX_FREE_ATOMS {
        return Err(OracleError::TooManyFreeAtoms {
            count: free_ids.len(),
            max: MAX_FREE_ATOMS,
        });
    }
    let n = free_ids.len();
    let base = observed_bits(graph);
    let mut energies = Vec::with_capacity(1 << n);
    let mut min_energy = f64::INFINITY;
    for index in 0..(1usize << n) {
        let mut assignment = base.clone();
        for (j, &id) in free_ids.iter().enumerate() {
            assignment[id] = (index >> (n - 1 - j)) & 1 == 1;
        }
        let e = world_energy(graph, theory, weights, &assignment);
        min_energy = min_energy.min(e);
        energies.push(e);
    }
    // Shift by the minimum before exponentiating for numeric stability.
    let unnormalized: Vec<f64> = energies.iter().map(|e| (-(e - min_energy)).exp()).collect();
    let total: f64 = unnormalized.iter().sum();
    Ok(JointTable {
        free_ids,
        probs: unnormalized.into_iter().map(|p| T::of(p / total)).collect(),
    })
}

/// True when the exclusion filter admits the assignment: exactly one of the
/// listed atoms is true. An empty filter admits everything.
fn admits(assignment: &[bool], exclusion: Option<&[AtomId]>) -> bool {
    match exclusion {
        None => true,
        Some(ids) => ids.iter().filter(|&&id| assignment[id]).count() == 1,
    }
}

/// Per-atom probability of being true, optionally conditioned on exactly one
/// of the `exclusion` atoms holding. Indexed by atom id; observed atoms keep
/// their binarized value.
pub fn marginals<T: Real>(
    graph: &GroundFactorGraph<T>,
    theory: &Theory<T>,
    weights: &Weights<T>,
    exclusion: Option<&[AtomId]>,
) -> Result<Vec<T>, OracleError> {
    let joint = enumerate_joint(graph, theory, weights)?;
    let mut mass = vec![0.0f64; graph.atoms.len()];
    let mut admitted = 0.0f64;
    for (index, p) in joint.probs.iter().enumerate() {
        let assignment = joint.world(index, graph);
        if !admits(&assignment, exclusion) {
            continue;
        }
        admitted += p.as_f64();
        for (id, &bit) in assignment.iter().enumerate() {
            if bit {
                mass[id] += p.as_f64();
            }
        }
    }
    if admitted <= 0.0 {
        return Err(OracleError::NoFeasibleWorld);
    }
    Ok(mass.into_iter().map(|m| T::of(m / admitted)).collect())
}

/// Most probable world, optionally under the mutual-exclusion filter. Ties
/// break toward the lexicographically smallest assignment (all-false first).
pub fn mpe<T: Real>(
    graph: &GroundFactorGraph<T>,
    theory: &Theory<T>,
    weights: &Weights<T>,
    exclusion: Option<&[AtomId]>,
) -> Result<Vec<bool>, OracleError> {
    let joint = enumerate_joint(graph, theory, weights)?;
    let mut best: Option<(f64, Vec<bool>)> = None;
    for (index, p) in joint.probs.iter().enumerate() {
        let assignment = joint.world(index, graph);
        if !admits(&assignment, exclusion) {
            continue;
        }
        let p = p.as_f64();
        if best.as_ref().map(|(bp, _)| p > *bp).unwrap_or(true) {
            best = Some((p, assignment));
        }
    }
    best.map(|(_, a)| a).ok_or(OracleError::NoFeasibleWorld)
}
