use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Environment, Transition};
use crate::error::{Error, Result};
use crate::lfa::{basis_from_masses, MeasureBasis};
use crate::types::{ActionSpace, StateSpace};

/// Small random linear mean field game.
///
/// Kernel `P(s'|s,a,mu) = (1 - eps) P0(s'|s,a) + eps mu(s')` and reward
/// `r(s,a,mu) = r0(s,a) - crowd * mu(s)`, both drawn from a seeded stream.
/// With a `rank`, `P0(.|s,a)` mixes `rank` random base measures, so every
/// induced population lies in their span.
#[derive(Debug, Clone)]
pub struct ToyEnv {
    states: StateSpace,
    actions: ActionSpace,
    gamma: f64,
    epsilon: f64,
    crowd: f64,
    base_kernel: Vec<Vec<f64>>,
    base_reward: Vec<f64>,
    base_measures: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct ToyEnvBuilder {
    n_states: usize,
    n_actions: usize,
    seed: u64,
    epsilon: f64,
    gamma: f64,
    crowd: f64,
    rank: Option<usize>,
}

/// Default toy game: `eps = 0.1`, `gamma = 0.9`, crowd aversion 0.5.
pub fn toy_finite_env(n_states: usize, n_actions: usize, seed: u64) -> Result<ToyEnv> {
    ToyEnv::builder(n_states, n_actions, seed).build()
}

fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // Shifted away from zero so every chain is irreducible.
    let raw: Vec<f64> = (0..n).map(|_| 0.05 + rng.gen::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

impl ToyEnvBuilder {
    pub fn epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn discount(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn crowd(mut self, crowd: f64) -> Self {
        self.crowd = crowd;
        self
    }

    pub fn rank(mut self, rank: usize) -> Self {
        self.rank = Some(rank);
        self
    }

    pub fn build(self) -> Result<ToyEnv> {
        let (n, m) = (self.n_states, self.n_actions);
        if !(1..=6).contains(&n) || !(1..=6).contains(&m) {
            return Err(Error::config(
                "toy",
                "state and action counts must lie in 1..=6",
            ));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config("toy.epsilon", "must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("toy.discount", "must lie in [0, 1)"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (base_kernel, base_measures) = match self.rank {
            None => (
                (0..n * m)
                    .map(|_| random_distribution(&mut rng, n))
                    .collect(),
                None,
            ),
            Some(k) => {
                if k == 0 || k > n {
                    return Err(Error::config("toy.rank", format!("must lie in 1..={n}")));
                }
                let rho: Vec<Vec<f64>> = (0..k).map(|_| random_distribution(&mut rng, n)).collect();
                let kernel = (0..n * m)
                    .map(|_| {
                        let w = random_distribution(&mut rng, k);
                        (0..n)
                            .map(|s2| w.iter().zip(&rho).map(|(wi, r)| wi * r[s2]).sum())
                            .collect()
                    })
                    .collect();
                (kernel, Some(rho))
            }
        };
        let base_reward = (0..n * m).map(|_| rng.gen::<f64>()).collect();
        Ok(ToyEnv {
            states: StateSpace::finite(n)?,
            actions: ActionSpace::unrestricted(m, n)?,
            gamma: self.gamma,
            epsilon: self.epsilon,
            crowd: self.crowd,
            base_kernel,
            base_reward,
            base_measures,
        })
    }
}

impl ToyEnv {
    pub fn builder(n_states: usize, n_actions: usize, seed: u64) -> ToyEnvBuilder {
        ToyEnvBuilder {
            n_states,
            n_actions,
            seed,
            epsilon: 0.1,
            gamma: 0.9,
            crowd: 0.5,
            rank: None,
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `P0(.|s,a)`.
    pub fn base_kernel(&self, s: usize, a: usize) -> &[f64] {
        &self.base_kernel[s * self.actions.size() + a]
    }

    /// The measures spanning every `P0` row, for low-rank instances.
    pub fn population_basis(&self) -> Option<Result<MeasureBasis>> {
        self.base_measures.clone().map(basis_from_masses)
    }
}

impl Environment for ToyEnv {
    fn name(&self) -> &str {
        "toy"
    }

    fn states(&self) -> &StateSpace {
        &self.states
    }

    fn actions(&self) -> &ActionSpace {
        &self.actions
    }

    fn discount(&self) -> f64 {
        self.gamma
    }

    fn reward_bound(&self) -> f64 {
        self.crowd.max(1.0)
    }

    fn reward(&self, s: usize, a: usize, mu: &[f64]) -> f64 {
        self.base_reward[s * self.actions.size() + a] - self.crowd * mu[s]
    }

    fn kernel(&self, s: usize, a: usize, mu: &[f64]) -> Transition {
        let base = self.base_kernel(s, a);
        if self.epsilon == 0.0 {
            return base.iter().copied().enumerate().collect();
        }
        base.iter()
            .zip(mu)
            .map(|(p, m)| (1.0 - self.epsilon) * p + self.epsilon * m)
            .enumerate()
            .collect()
    }

    fn initial_distribution(&self) -> Vec<f64> {
        let n = self.states.size();
        vec![1.0 / n as f64; n]
    }

    fn population_independent(&self) -> bool {
        self.epsilon == 0.0
    }

    fn default_inverse_temperature(&self) -> f64 {
        1e9
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::test_support::check_kernel;

    #[test]
    fn reproducible_from_seed() {
        let a = toy_finite_env(3, 2, 7).unwrap();
        let b = toy_finite_env(3, 2, 7).unwrap();
        assert_eq!(a.base_kernel, b.base_kernel);
        assert_eq!(a.base_reward, b.base_reward);
        let c = toy_finite_env(3, 2, 8).unwrap();
        assert_ne!(a.base_reward, c.base_reward);
    }

    #[test]
    fn zero_epsilon_is_population_independent() {
        let env = ToyEnv::builder(4, 3, 1).epsilon(0.0).build().unwrap();
        assert!(env.population_independent());
        let mu1 = [0.25; 4];
        let mu2 = [0.7, 0.1, 0.1, 0.1];
        for s in 0..4 {
            for a in 0..3 {
                assert_eq!(env.kernel(s, a, &mu1), env.kernel(s, a, &mu2));
            }
        }
    }

    #[test]
    fn size_limits() {
        assert!(toy_finite_env(7, 2, 0).is_err());
        assert!(toy_finite_env(0, 2, 0).is_err());
        assert!(ToyEnv::builder(3, 2, 0).rank(4).build().is_err());
    }

    #[test]
    fn low_rank_rows_lie_in_the_basis_span() {
        let env = ToyEnv::builder(6, 2, 5).rank(3).build().unwrap();
        let basis = env.population_basis().unwrap().unwrap();
        assert_eq!(basis.dim(), 3);
        for s in 0..6 {
            for a in 0..2 {
                let row = env.base_kernel(s, a);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kernel_rows_and_sampling() {
        for seed in 0..3 {
            check_kernel(&toy_finite_env(6, 3, seed).unwrap(), 34, 10_000, seed);
        }
    }
}
