//! Distributions over the target domain.

use crate::scalar::Real;

/// Normalized likelihoods over a finite class set, or a single soft value
/// for regression.
#[derive(Debug, Clone, PartialEq)]
pub enum Distribution<T> {
    Categorical(Vec<T>),
    Scalar(T),
}

impl<T: Real> Distribution<T> {
    pub fn uniform(n: usize) -> Self {
        Distribution::Categorical(vec![T::one() / T::of(n as f64); n])
    }

    /// Index of the largest entry; ties break toward the lowest index.
    pub fn argmax(&self) -> usize {
        match self {
            Distribution::Scalar(_) => 0,
            Distribution::Categorical(p) => {
                let mut best = 0;
                for (i, v) in p.iter().enumerate().skip(1) {
                    if *v > p[best] {
                        best = i;
                    }
                }
                best
            }
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Distribution::Scalar(_) => 1,
            Distribution::Categorical(p) => p.len(),
        }
    }

    pub fn as_scalar(&self) -> Option<T> {
        match self {
            Distribution::Scalar(v) => Some(*v),
            Distribution::Categorical(_) => None,
        }
    }

    pub fn probs(&self) -> &[T] {
        match self {
            Distribution::Categorical(p) => p,
            Distribution::Scalar(v) => std::slice::from_ref(v),
        }
    }

    /// Entries in [0,1] and (for the categorical case) summing to 1 within
    /// `tol`.
    pub fn is_valid(&self, tol: T) -> bool {
        match self {
            Distribution::Scalar(v) => *v >= T::zero() && *v <= T::one(),
            Distribution::Categorical(p) => {
                p.iter().all(|v| *v >= T::zero() && *v <= T::one())
                    && (p.iter().copied().sum::<T>() - T::one()).abs() <= tol
            }
        }
    }
}
