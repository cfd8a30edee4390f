use super::{stochastic_shift, Environment, Transition};
use crate::error::Result;
use crate::types::{ActionSpace, StateSpace};

/// Speed control on a ring road.
///
/// Location and speed grids both cover `[0, 1)`; the time step equals the
/// location spacing, so a vehicle at speed `a` advances `a` cells per step
/// in expectation.
#[derive(Debug, Clone)]
pub struct RingRoad {
    states: StateSpace,
    actions: ActionSpace,
    n_actions: usize,
    gamma: f64,
    jam_density: f64,
    max_speed: f64,
    bound: f64,
}

/// The standard 50 x 50 instance.
pub fn ring_road_env() -> RingRoad {
    ring_road_env_with(50, 50).expect("static sizes are valid")
}

pub fn ring_road_env_with(n_states: usize, n_actions: usize) -> Result<RingRoad> {
    let states = StateSpace::interval_grid(n_states, true)?;
    let actions = ActionSpace::unrestricted(n_actions, n_states)?;
    let jam_density = 3.0 / n_states as f64;
    let max_speed = 1.0;
    let ds = 1.0 / n_states as f64;
    // |b + (1 - mu/jam)/2 - a/amax| is largest at b = 0.2, mu = 1, a = amax * (1 - da).
    let a_top = (n_actions - 1) as f64 / n_actions as f64;
    let low = 0.2 + 0.5 * (1.0 - 1.0 / jam_density) - a_top / max_speed;
    let high = 0.6 + 0.5;
    let bound = 0.5 * low.abs().max(high).powi(2) * ds;
    Ok(RingRoad {
        states,
        actions,
        n_actions,
        gamma: 0.98,
        jam_density,
        max_speed,
        bound,
    })
}

impl RingRoad {
    /// Location-dependent desired-speed stimulus.
    pub fn stimulus(s: f64) -> f64 {
        0.2 * ((4.0 * std::f64::consts::PI * s).sin() + 2.0)
    }

    pub fn speed(&self, a: usize) -> f64 {
        a as f64 / self.n_actions as f64
    }

    pub fn jam_density(&self) -> f64 {
        self.jam_density
    }
}

impl Environment for RingRoad {
    fn name(&self) -> &str {
        "ring-road"
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
        self.bound
    }

    fn reward(&self, s: usize, a: usize, mu: &[f64]) -> f64 {
        let x = self.states.position(s);
        let gap = Self::stimulus(x) + 0.5 * (1.0 - mu[s] / self.jam_density)
            - self.speed(a) / self.max_speed;
        -0.5 * gap * gap * self.states.cell_width()
    }

    fn kernel(&self, s: usize, a: usize, _mu: &[f64]) -> Transition {
        // a * dt / ds with dt == ds.
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
        1e9
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::test_support::check_kernel;

    #[test]
    fn stimulus_at_origin() {
        assert!((RingRoad::stimulus(0.0) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn reward_vanishes_at_jam_density_and_desired_speed() {
        let env = ring_road_env();
        // Exactly zero where b(s) hits the action grid.
        let mut mu = vec![0.0; 50];
        mu[0] = env.jam_density();
        assert_eq!(env.reward(0, 20, &mu), 0.0);
    }

    #[test]
    fn displacement_table_under_stochastic_rounding() {
        let env = ring_road_env();
        let mu = vec![0.02; 50];
        // Speed index k moves one cell with probability k / 50.
        for k in 0..50 {
            let t = env.kernel(10, k, &mu);
            if k == 0 {
                assert_eq!(t, vec![(10, 1.0)]);
            } else {
                assert_eq!(t.len(), 2);
                assert_eq!(t[0].0, 10);
                assert_eq!(t[1].0, 11);
                assert!((t[1].1 - k as f64 / 50.0).abs() < 1e-15);
            }
        }
        // s = 0.2 with a = 0.5: s' = 0.21 lands on cell 10 or 11 with equal odds.
        assert_eq!(env.kernel(10, 25, &mu), vec![(10, 0.5), (11, 0.5)]);
        // Wrap-around.
        assert_eq!(env.kernel(49, 49, &mu)[1].0, 0);
    }

    #[test]
    fn kernel_ignores_population() {
        let env = ring_road_env();
        let a: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let total: f64 = a.iter().sum();
        let a: Vec<f64> = a.iter().map(|x| x / total).collect();
        let b = vec![0.02; 50];
        for s in 0..50 {
            for k in 0..50 {
                assert_eq!(env.kernel(s, k, &a), env.kernel(s, k, &b));
            }
        }
    }

    #[test]
    fn kernel_rows_and_sampling() {
        check_kernel(&ring_road_env(), 100, 10_000, 1);
    }
}
