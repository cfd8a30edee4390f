use super::{stochastic_shift, Environment, Transition};
use crate::error::Result;
use crate::types::{ActionSpace, StateSpace};

/// Flocking on `[0, 1]` with the destination glued back to the start.
#[derive(Debug, Clone)]
pub struct Flocking {
    states: StateSpace,
    actions: ActionSpace,
    n_actions: usize,
    gamma: f64,
    alignment: f64,
    radius: f64,
    destination: f64,
}

pub fn flocking_env() -> Flocking {
    Flocking::new(50, 50).expect("static sizes are valid")
}

impl Flocking {
    pub fn new(n_states: usize, n_actions: usize) -> Result<Self> {
        Ok(Self {
            states: StateSpace::interval_grid(n_states, true)?,
            actions: ActionSpace::unrestricted(n_actions, n_states)?,
            n_actions,
            gamma: 0.98,
            alignment: 0.5,
            radius: 0.1,
            destination: 1.0,
        })
    }

    pub fn speed(&self, a: usize) -> f64 {
        a as f64 / self.n_actions as f64
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

/// Mass-weighted mean location of the cells within `radius` of cell `s`.
/// Cells are at `i * ds`; mass outside the grid counts as zero. Returns the
/// location of `s` itself when the window carries no mass.
pub fn neighbor(mu: &[f64], s: usize, radius: f64, ds: f64) -> f64 {
    let reach = (radius / ds + 1e-9).floor() as usize;
    let lo = s.saturating_sub(reach);
    let hi = (s + reach).min(mu.len() - 1);
    let (mut num, mut den) = (0.0, 0.0);
    for (j, m) in mu.iter().enumerate().take(hi + 1).skip(lo) {
        num += j as f64 * ds * m;
        den += m;
    }
    if den > 0.0 {
        num / den
    } else {
        s as f64 * ds
    }
}

impl Environment for Flocking {
    fn name(&self) -> &str {
        "flocking"
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
        self.states.cell_width() * (1.0 + self.alignment)
    }

    fn reward(&self, s: usize, a: usize, mu: &[f64]) -> f64 {
        let ds = self.states.cell_width();
        let speed = self.speed(a);
        let lag = self.destination - neighbor(mu, s, self.radius, ds);
        -(speed * speed + self.alignment * lag * lag) * ds
    }

    fn kernel(&self, s: usize, a: usize, _mu: &[f64]) -> Transition {
        stochastic_shift(s, self.speed(a), self.states.size())
    }

    fn initial_distribution(&self) -> Vec<f64> {
        let n = self.states.size();
        vec![1.0 / n as f64; n]
    }

    fn population_independent(&self) -> bool {
        true
    }

    fn default_inverse_temperature(&self) -> f64 {
        1e6
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::test_support::check_kernel;

    #[test]
    fn uniform_population_interior_neighbor_is_self() {
        let mu = vec![0.02; 50];
        assert!((neighbor(&mu, 25, 0.1, 0.02) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_padding_at_left_boundary() {
        // Cells 0, 0.02, ..., 0.1 carry equal mass: mean 0.05.
        let mu = vec![0.02; 50];
        assert!((neighbor(&mu, 0, 0.1, 0.02) - 0.05).abs() < 1e-12);
        let fine = vec![0.001; 1000];
        assert!((neighbor(&fine, 0, 0.1, 0.001) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn point_mass_and_empty_window() {
        let mut mu = vec![0.0; 50];
        mu[27] = 1.0;
        assert!((neighbor(&mu, 25, 0.1, 0.02) - 0.54).abs() < 1e-12);
        assert!((neighbor(&mu, 5, 0.1, 0.02) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn resting_agent_pays_only_the_alignment_lag() {
        let env = flocking_env();
        // The last cell sits at 0.98, so put the crowd there and read the lag.
        let mut mu = vec![0.0; 50];
        mu[49] = 1.0;
        let r = env.reward(45, 0, &mu);
        assert!((r + 0.5 * 0.02f64.powi(2) * 0.02).abs() < 1e-15);
    }

    #[test]
    fn kernel_rows_and_sampling() {
        check_kernel(&flocking_env(), 100, 10_000, 2);
    }
}
