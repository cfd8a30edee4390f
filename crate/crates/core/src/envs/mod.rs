//! Benchmark mean field games.
//!
//! Every environment exposes its reward, an exact (sparse) transition kernel
//! and a sampler, all as functions of the population vector `mu` given as
//! per-state masses.

mod flocking;
mod ring_road;
mod routing;
mod toy;

pub use flocking::{flocking_env, neighbor, Flocking};
pub use ring_road::{ring_road_env, ring_road_env_with, RingRoad};
pub use routing::{sioux_falls_env, Network, Routing, SIOUX_FALLS};
pub use toy::{toy_finite_env, ToyEnv, ToyEnvBuilder};

use rand::{Rng, RngCore};

use crate::types::{ActionSpace, StateSpace};

/// Sparse distribution over next states.
pub type Transition = Vec<(usize, f64)>;

pub trait Environment: Send + Sync {
    fn name(&self) -> &str;
    fn states(&self) -> &StateSpace;
    fn actions(&self) -> &ActionSpace;
    fn discount(&self) -> f64;
    /// Declared bound `R >= |reward|`.
    fn reward_bound(&self) -> f64;
    fn reward(&self, s: usize, a: usize, mu: &[f64]) -> f64;
    fn kernel(&self, s: usize, a: usize, mu: &[f64]) -> Transition;
    fn initial_distribution(&self) -> Vec<f64>;
    /// Whether `kernel` ignores `mu`.
    fn population_independent(&self) -> bool;
    /// Inverse temperature used for near-greedy softmax policies.
    fn default_inverse_temperature(&self) -> f64;

    /// One uniform draw, inverted through the kernel in listed order.
    fn sample_next(&self, s: usize, a: usize, mu: &[f64], rng: &mut dyn RngCore) -> usize {
        let u: f64 = rng.gen();
        let next = self.kernel(s, a, mu);
        let mut cum = 0.0;
        for &(s2, p) in &next {
            cum += p;
            if u < cum {
                return s2;
            }
        }
        next.last().map(|&(s2, _)| s2).unwrap_or(s)
    }
}

/// Moves `s` by `displacement` cells (non-negative, possibly fractional) on
/// a ring of `n` cells: `floor` cells with probability `1 - frac`, one more
/// with probability `frac`.
pub(crate) fn stochastic_shift(s: usize, displacement: f64, n: usize) -> Transition {
    let whole = displacement.floor();
    let frac = displacement - whole;
    let base = (s + whole as usize) % n;
    if frac == 0.0 {
        vec![(base, 1.0)]
    } else {
        vec![(base, 1.0 - frac), ((base + 1) % n, frac)]
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Kernel rows sum to one and sampling matches them in total variation.
    pub fn check_kernel(env: &dyn Environment, probes: usize, draws: usize, seed: u64) {
        let n = env.states().size();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..probes {
            let s = rng.gen_range(0..n);
            let feas = env.actions().feasible(s);
            let a = feas[rng.gen_range(0..feas.len())];
            let mut mu: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let total: f64 = mu.iter().sum();
            mu.iter_mut().for_each(|x| *x /= total);
            let k = env.kernel(s, a, &mu);
            let sum: f64 = k.iter().map(|(_, p)| p).sum();
            assert!((sum - 1.0).abs() < 1e-12, "row sum {sum}");
            let r = env.reward(s, a, &mu);
            assert!(r.abs() <= env.reward_bound(), "reward {r} exceeds bound");
            let mut counts = vec![0usize; n];
            for _ in 0..draws {
                counts[env.sample_next(s, a, &mu, &mut rng)] += 1;
            }
            let mut exact = vec![0.0; n];
            for (s2, p) in k {
                exact[s2] += p;
            }
            let tv: f64 = 0.5
                * exact
                    .iter()
                    .zip(&counts)
                    .map(|(p, c)| (p - *c as f64 / draws as f64).abs())
                    .sum::<f64>();
            assert!(tv <= 0.05, "tv {tv}");
        }
    }
}
