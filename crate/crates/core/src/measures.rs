//! Total variation distance on finite discrete distributions, computed
//! through three independent characterisations: the supremum over events,
//! the failure probability of a maximal coupling, and the partition form
//! `1 - sum_k min(p_k, q_k)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NORMALISATION_TOL: f64 = 1e-12;

/// A probability distribution on finitely many atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    atoms: Vec<f64>,
}

impl DiscreteDistribution {
    /// Validates nonnegativity and normalisation (within `1e-12`).
    pub fn new(atoms: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidDistribution {
                reason: "no atoms".into(),
            });
        }
        for (k, a) in atoms.iter().enumerate() {
            if !a.is_finite() || *a < 0.0 {
                return Err(Error::InvalidDistribution {
                    reason: format!("atom {k} = {a} is not a finite nonnegative mass"),
                });
            }
        }
        let total: f64 = atoms.iter().sum();
        if (total - 1.0).abs() > NORMALISATION_TOL {
            return Err(Error::InvalidDistribution {
                reason: format!("atoms sum to {total}, expected 1 within {NORMALISATION_TOL}"),
            });
        }
        Ok(Self { atoms })
    }

    /// Normalises a vector of nonnegative weights (e.g. histogram counts).
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidDistribution {
                reason: format!("weights sum to {total}; need a positive finite total"),
            });
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

/// The three total-variation characterisations, returned separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvDistances {
    /// Largest discrepancy over events, realised as `0.5 * sum |p_k - q_k|`.
    pub sup: f64,
    /// `1 - P(X = Y)` under an explicitly constructed maximal coupling.
    pub coupling: f64,
    /// `1 - sum_k min(p_k, q_k)` over the singleton partition.
    pub partition: f64,
}

/// Computes all three characterisations for two distributions with equal
/// atom counts.
pub fn tv_all(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<TvDistances> {
    if p.len() != q.len() {
        return Err(Error::AtomCountMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    let pa = p.atoms();
    let qa = q.atoms();

    let sup = 0.5 * pa.iter().zip(qa).map(|(a, b)| (a - b).abs()).sum::<f64>();

    let coupling = 1.0 - maximal_coupling_equal_mass(pa, qa);

    let partition = 1.0 - pa.iter().zip(qa).map(|(a, b)| a.min(*b)).sum::<f64>();

    Ok(TvDistances {
        sup,
        coupling,
        partition,
    })
}

/// Builds the greedy maximal coupling: put `min(p_k, q_k)` on the diagonal,
/// then match the residual mass of `p` against the residual mass of `q`
/// northwest-corner style. Returns the diagonal (equality) mass.
fn maximal_coupling_equal_mass(p: &[f64], q: &[f64]) -> f64 {
    let k = p.len();
    let mut diag_mass = 0.0;
    let mut p_exc: Vec<f64> = Vec::with_capacity(k);
    let mut q_exc: Vec<f64> = Vec::with_capacity(k);
    for i in 0..k {
        let d = p[i].min(q[i]);
        diag_mass += d;
        p_exc.push(p[i] - d);
        q_exc.push(q[i] - d);
    }
    // distribute the off-diagonal mass; this never touches the diagonal
    // because p_exc[i] > 0 forces q_exc[i] = 0
    let mut j = 0usize;
    for (i, excess) in p_exc.iter().enumerate() {
        let mut rem = *excess;
        while rem > 0.0 && j < k {
            if q_exc[j] <= 0.0 {
                j += 1;
                continue;
            }
            let m = rem.min(q_exc[j]);
            debug_assert!(i != j || m == 0.0);
            q_exc[j] -= m;
            rem -= m;
            if q_exc[j] <= f64::EPSILON * 4.0 {
                q_exc[j] = 0.0;
            }
        }
    }
    diag_mass
}
