//! Policy operators mapping action values to per-state action distributions.

use rand::Rng;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lfa::FeatureMap;
use crate::types::ActionSpace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyOperator {
    /// Boltzmann policy with the given inverse temperature.
    Softmax(f64),
    /// Greedy policy, ties broken toward the lowest action index.
    Argmax,
}

/// Action distribution at one state. `q` holds a value for every action;
/// entries outside `feasible` are ignored and receive probability zero.
pub fn apply_policy(op: PolicyOperator, q: &[f64], feasible: &[usize]) -> Result<Vec<f64>> {
    let mut p = vec![0.0; q.len()];
    apply_policy_into(op, q, feasible, &mut p)?;
    Ok(p)
}

pub(crate) fn apply_policy_into(
    op: PolicyOperator,
    q: &[f64],
    feasible: &[usize],
    out: &mut [f64],
) -> Result<()> {
    let (&first, rest) = feasible
        .split_first()
        .ok_or_else(|| Error::config("feasible", "empty action mask"))?;
    out.iter_mut().for_each(|x| *x = 0.0);
    let mut best = first;
    for &a in rest {
        if q[a] > q[best] {
            best = a;
        }
    }
    match op {
        PolicyOperator::Argmax => {
            out[best] = 1.0;
        }
        PolicyOperator::Softmax(beta) => {
            let qmax = q[best];
            let mut total = 0.0;
            for &a in feasible {
                let w = (beta * (q[a] - qmax)).exp();
                out[a] = w;
                total += w;
            }
            for &a in feasible {
                out[a] /= total;
            }
        }
    }
    Ok(())
}

/// Inverse-CDF draw over action indices in increasing order.
pub fn sample_action(dist: &[f64], rng: &mut (impl RngCore + ?Sized)) -> usize {
    let u: f64 = rng.gen();
    sample_index(dist, u)
}

pub(crate) fn sample_index(dist: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > 0.0 {
            cum += p;
            last = i;
            if u < cum {
                return i;
            }
        }
    }
    last
}

/// A stochastic policy over a finite state-action space, stored row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    probs: Vec<Vec<f64>>,
}

impl PolicyTable {
    pub fn new(probs: Vec<Vec<f64>>) -> Self {
        Self { probs }
    }

    /// Applies `op` to the action values `<phi, theta>` at every state.
    pub fn from_theta(
        op: PolicyOperator,
        phi: &FeatureMap,
        theta: &[f64],
        actions: &ActionSpace,
    ) -> Result<Self> {
        let probs = (0..phi.n_states())
            .map(|s| {
                apply_policy(op, &phi.q_row(theta, s), actions.feasible(s))
                    .map_err(|_| Error::EmptyMask(s))
            })
            .collect::<Result<_>>()?;
        Ok(Self { probs })
    }

    /// Applies `op` to a `|S| x |A|` action-value table.
    pub fn from_q(op: PolicyOperator, q: &[Vec<f64>], actions: &ActionSpace) -> Result<Self> {
        let probs = q
            .iter()
            .enumerate()
            .map(|(s, row)| {
                apply_policy(op, row, actions.feasible(s)).map_err(|_| Error::EmptyMask(s))
            })
            .collect::<Result<_>>()?;
        Ok(Self { probs })
    }

    /// Uniform over feasible actions.
    pub fn uniform(actions: &ActionSpace, n_states: usize) -> Self {
        let probs = (0..n_states)
            .map(|s| {
                let f = actions.feasible(s);
                let mut row = vec![0.0; actions.size()];
                for &a in f {
                    row[a] = 1.0 / f.len() as f64;
                }
                row
            })
            .collect();
        Self { probs }
    }

    pub fn n_states(&self) -> usize {
        self.probs.len()
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s][a]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.probs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_equal_values_is_uniform() {
        let p = apply_policy(PolicyOperator::Softmax(3.0), &[0.7; 3], &[0, 1, 2]).unwrap();
        for x in p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_closed_form() {
        let p = apply_policy(PolicyOperator::Softmax(1.0), &[1.0, 0.0], &[0, 1]).unwrap();
        let e = std::f64::consts::E;
        assert!((p[0] - e / (1.0 + e)).abs() < 1e-15);
        assert!((p[1] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((p[0] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let p = apply_policy(PolicyOperator::Argmax, &[0.5, 0.5], &[0, 1]).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn infeasible_actions_get_zero() {
        let q = [10.0, 0.0, 1.0];
        for op in [PolicyOperator::Softmax(1.0), PolicyOperator::Argmax] {
            let p = apply_policy(op, &q, &[1, 2]).unwrap();
            assert_eq!(p[0], 0.0);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_mask_is_an_error() {
        assert!(apply_policy(PolicyOperator::Argmax, &[1.0], &[]).is_err());
    }

    #[test]
    fn huge_inverse_temperature_does_not_overflow() {
        let p = apply_policy(
            PolicyOperator::Softmax(1e9),
            &[1e3, 1e3 - 1e-6, -5.0],
            &[0, 1, 2],
        )
        .unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn point_mass_is_always_sampled() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_eq!(sample_action(&[0.0, 0.0, 1.0], &mut rng), 2);
        }
    }

    #[test]
    fn inverse_cdf_convention() {
        assert_eq!(sample_index(&[0.5, 0.5], 0.3), 0);
        assert_eq!(sample_index(&[0.5, 0.5], 0.7), 1);
        assert_eq!(sample_index(&[0.0, 0.5, 0.0, 0.5], 0.999_999), 3);
    }

    #[test]
    fn empirical_frequencies_within_three_sigma() {
        let dist = [0.1, 0.0, 0.25, 0.65];
        let n = 100_000;
        let mut counts = [0usize; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..n {
            counts[sample_action(&dist, &mut rng)] += 1;
        }
        for (p, c) in dist.iter().zip(counts) {
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (c as f64 - n as f64 * p).abs() <= 3.0 * sigma + 1e-9,
                "{p} {c}"
            );
        }
    }
}
