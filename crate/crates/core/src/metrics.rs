//! Evaluation metrics and exact model-based quantities on finite games.

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use crate::envs::{Environment, Transition};
use crate::error::{Error, Result};
use crate::lfa::{dot, FeatureMap, MeasureBasis};
use crate::policy::{PolicyOperator, PolicyTable};
use crate::types::UnifiedParameter;

/// Convergence threshold for induced populations, in total variation.
pub const POPULATION_TOL: f64 = 1e-12;
/// Bellman iteration threshold used for exploitability.
pub const VALUE_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 1_000_000;
const PLAIN_SWEEPS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSnapshot {
    pub step: u64,
    pub mse: f64,
    pub exploitability: Option<f64>,
    /// `|xi_t - xi_ref|`, when a reference parameter is known.
    pub param_norm_gap: Option<f64>,
}

/// Squared Euclidean distance between two population vectors.
pub fn mse(m: &[f64], m_ref: &[f64]) -> Result<f64> {
    if m.len() != m_ref.len() {
        return Err(Error::LengthMismatch {
            expected: m_ref.len(),
            got: m.len(),
        });
    }
    Ok(m.iter().zip(m_ref).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// `ceil(log(tol (1 - gamma) / R) / log gamma) + 10`.
pub fn default_max_iters(gamma: f64, reward_bound: f64, tol: f64) -> usize {
    if gamma <= 0.0 {
        return 11;
    }
    let ratio = (tol * (1.0 - gamma) / reward_bound.max(f64::MIN_POSITIVE)).ln() / gamma.ln();
    ratio.max(0.0).ceil() as usize + 10
}

/// The MDP obtained by freezing the population argument of a game.
#[derive(Debug, Clone)]
pub struct FrozenMdp {
    pub gamma: f64,
    pub reward_bound: f64,
    /// `reward[s][a]`, zero for infeasible actions.
    pub reward: Vec<Vec<f64>>,
    /// `kernel[s][a]`, empty for infeasible actions.
    pub kernel: Vec<Vec<Transition>>,
    pub feasible: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct ValueSolution {
    pub v: Vec<f64>,
    /// `q[s][a]`, zero for infeasible actions.
    pub q: Vec<Vec<f64>>,
    pub greedy: PolicyTable,
    pub iterations: usize,
}

impl FrozenMdp {
    pub fn new(env: &dyn Environment, mu: &[f64]) -> Self {
        let n = env.states().size();
        let m = env.actions().size();
        let mut reward = vec![vec![0.0; m]; n];
        let mut kernel = vec![vec![Vec::new(); m]; n];
        let feasible: Vec<Vec<usize>> =
            (0..n).map(|s| env.actions().feasible(s).to_vec()).collect();
        for s in 0..n {
            for &a in &feasible[s] {
                reward[s][a] = env.reward(s, a, mu);
                kernel[s][a] = env.kernel(s, a, mu);
            }
        }
        Self {
            gamma: env.discount(),
            reward_bound: env.reward_bound(),
            reward,
            kernel,
            feasible,
        }
    }

    pub fn n_states(&self) -> usize {
        self.reward.len()
    }

    fn backup(&self, v: &[f64], s: usize, a: usize) -> f64 {
        let next: f64 = self.kernel[s][a].iter().map(|&(s2, p)| p * v[s2]).sum();
        self.reward[s][a] + self.gamma * next
    }

    /// Bellman-optimality iteration from `v0` (zero if absent) until the
    /// sup-norm change drops below `tol`.
    pub fn value_iteration(
        &self,
        v0: Option<&[f64]>,
        tol: f64,
        max_iters: usize,
    ) -> Result<ValueSolution> {
        let n = self.n_states();
        let mut v = v0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
        let mut q = self.reward.clone();
        let mut residual = f64::INFINITY;
        for it in 1..=max_iters {
            residual = 0.0;
            let mut next = vec![0.0; n];
            for s in 0..n {
                let mut best = f64::NEG_INFINITY;
                for &a in &self.feasible[s] {
                    q[s][a] = self.backup(&v, s, a);
                    best = best.max(q[s][a]);
                }
                next[s] = best;
                residual = residual.max((best - v[s]).abs());
            }
            v = next;
            if residual < tol {
                // One more backup so that q is consistent with the returned v.
                for s in 0..n {
                    for &a in &self.feasible[s] {
                        q[s][a] = self.backup(&v, s, a);
                    }
                }
                let greedy = self.greedy(&q)?;
                return Ok(ValueSolution {
                    v,
                    q,
                    greedy,
                    iterations: it,
                });
            }
        }
        Err(Error::NoConvergence {
            what: "value iteration",
            iterations: max_iters,
            residual,
        })
    }

    fn greedy(&self, q: &[Vec<f64>]) -> Result<PolicyTable> {
        let m = q.first().map_or(0, Vec::len);
        let rows = q
            .iter()
            .zip(&self.feasible)
            .enumerate()
            .map(|(s, (row, feas))| {
                let &first = feas.first().ok_or(Error::EmptyMask(s))?;
                let best = feas
                    .iter()
                    .fold(first, |b, &a| if row[a] > row[b] { a } else { b });
                let mut p = vec![0.0; m];
                p[best] = 1.0;
                Ok(p)
            })
            .collect::<Result<_>>()?;
        Ok(PolicyTable::new(rows))
    }

    /// Iterates the Bellman operator of a fixed policy.
    pub fn evaluate(&self, pi: &PolicyTable, tol: f64, max_iters: usize) -> Result<Vec<f64>> {
        let n = self.n_states();
        let mut v = vec![0.0; n];
        let mut residual = f64::INFINITY;
        for _ in 0..max_iters {
            residual = 0.0;
            let next: Vec<f64> = (0..n)
                .map(|s| {
                    self.feasible[s]
                        .iter()
                        .map(|&a| pi.prob(s, a))
                        .zip(&self.feasible[s])
                        .filter(|(p, _)| *p > 0.0)
                        .map(|(p, &a)| p * self.backup(&v, s, a))
                        .sum()
                })
                .collect();
            for (a, b) in next.iter().zip(&v) {
                residual = residual.max((a - b).abs());
            }
            v = next;
            if residual < tol {
                return Ok(v);
            }
        }
        Err(Error::NoConvergence {
            what: "policy evaluation",
            iterations: max_iters,
            residual,
        })
    }

    /// Sparse state-transition rows under `pi`.
    pub fn chain(&self, pi: &PolicyTable) -> Vec<Transition> {
        (0..self.n_states())
            .map(|s| {
                let mut row: Transition = Vec::new();
                for &a in &self.feasible[s] {
                    let p = pi.prob(s, a);
                    if p > 0.0 {
                        for &(s2, q) in &self.kernel[s][a] {
                            row.push((s2, p * q));
                        }
                    }
                }
                row
            })
            .collect()
    }
}

pub fn value_iteration(
    env: &dyn Environment,
    mu: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<ValueSolution> {
    FrozenMdp::new(env, mu).value_iteration(None, tol, max_iters)
}

pub fn policy_evaluation(
    env: &dyn Environment,
    pi: &PolicyTable,
    mu: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<Vec<f64>> {
    FrozenMdp::new(env, mu).evaluate(pi, tol, max_iters)
}

fn push_forward(chain: &[Transition], m: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.len()];
    for (row, &w) in chain.iter().zip(m) {
        if w != 0.0 {
            for &(s2, p) in row {
                out[s2] += w * p;
            }
        }
    }
    out
}

fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

fn normalize(v: &mut [f64]) {
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
}

/// Iterates `step` from uniform until successive iterates differ by less than
/// [`POPULATION_TOL`] in total variation. Switches to the half-lazy map
/// `m -> (m + step(m)) / 2`, which has the same fixed points, when plain
/// iteration stalls (periodic chains).
fn fixed_point(n: usize, mut step: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Vec<f64>> {
    let mut m = vec![1.0 / n as f64; n];
    let mut change = f64::INFINITY;
    for sweep in 0..MAX_SWEEPS {
        let mut next = step(&m);
        if sweep >= PLAIN_SWEEPS {
            next.iter_mut()
                .zip(&m)
                .for_each(|(x, y)| *x = 0.5 * (*x + y));
        }
        normalize(&mut next);
        change = tv(&next, &m);
        m = next;
        if change < POPULATION_TOL {
            return Ok(m);
        }
    }
    Err(Error::NoConvergence {
        what: "induced population",
        iterations: MAX_SWEEPS,
        residual: change,
    })
}

/// Stationary law of an irreducible chain restricted to `states`, by a dense
/// solve of `m P = m`, `sum m = 1`.
fn class_stationary(chain: &[Transition], states: &[usize], index: &[usize]) -> Option<Vec<f64>> {
    let k = states.len();
    let mut a = DMatrix::<f64>::zeros(k, k);
    for (i, &s) in states.iter().enumerate() {
        for &(s2, p) in &chain[s] {
            a[(index[s2], i)] += p;
        }
        a[(i, i)] -= 1.0;
    }
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(k);
    b[k - 1] = 1.0;
    let x = a.lu().solve(&b)?;
    if x.iter().any(|v| !v.is_finite() || *v < -1e-10) {
        return None;
    }
    Some(x.iter().map(|v| v.max(0.0)).collect())
}

/// Long-run (Cesaro) distribution of the chain started from uniform, solved
/// exactly: every closed communicating class carries its own stationary law,
/// weighted by the mass absorbed into it. `None` on a singular solve or a
/// result that fails the fixed-point check.
fn direct_stationary(chain: &[Transition]) -> Option<Vec<f64>> {
    let n = chain.len();
    let mut graph = DiGraph::<(), ()>::with_capacity(n, n);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for (s, row) in chain.iter().enumerate() {
        for &(s2, p) in row {
            if p > 0.0 {
                graph.add_edge(nodes[s], nodes[s2], ());
            }
        }
    }
    let classes: Vec<Vec<usize>> = tarjan_scc(&graph)
        .into_iter()
        .map(|c| {
            let mut states: Vec<usize> = c.iter().map(|v| v.index()).collect();
            states.sort_unstable();
            states
        })
        .collect();
    let mut class_of = vec![0; n];
    let mut index = vec![0; n];
    for (c, states) in classes.iter().enumerate() {
        for (i, &s) in states.iter().enumerate() {
            class_of[s] = c;
            index[s] = i;
        }
    }
    let closed: Vec<bool> = classes
        .iter()
        .enumerate()
        .map(|(c, states)| {
            states.iter().all(|&s| {
                chain[s]
                    .iter()
                    .all(|&(s2, p)| p == 0.0 || class_of[s2] == c)
            })
        })
        .collect();

    let u = 1.0 / n as f64;
    let mut absorbed = vec![0.0; classes.len()];
    let transient: Vec<usize> = (0..n).filter(|&s| !closed[class_of[s]]).collect();
    for s in 0..n {
        if closed[class_of[s]] {
            absorbed[class_of[s]] += u;
        }
    }
    if !transient.is_empty() {
        // Expected visits v solve v (I - P_TT) = u_T.
        let k = transient.len();
        let mut pos = vec![usize::MAX; n];
        for (i, &t) in transient.iter().enumerate() {
            pos[t] = i;
        }
        let mut a = DMatrix::<f64>::identity(k, k);
        for (i, &t) in transient.iter().enumerate() {
            for &(s2, p) in &chain[t] {
                if pos[s2] != usize::MAX {
                    a[(pos[s2], i)] -= p;
                }
            }
        }
        let visits = a.lu().solve(&DVector::from_element(k, u))?;
        for (i, &t) in transient.iter().enumerate() {
            for &(s2, p) in &chain[t] {
                if closed[class_of[s2]] {
                    absorbed[class_of[s2]] += visits[i] * p;
                }
            }
        }
    }

    let mut m = vec![0.0; n];
    for (c, states) in classes.iter().enumerate() {
        if closed[c] && absorbed[c] > 0.0 {
            let law = class_stationary(chain, states, &index)?;
            for (&s, p) in states.iter().zip(law) {
                m[s] = absorbed[c] * p;
            }
        }
    }
    if m.iter().any(|x| !x.is_finite()) {
        return None;
    }
    normalize(&mut m);
    let residual = tv(&push_forward(chain, &m), &m);
    (residual < POPULATION_TOL).then_some(m)
}

/// Stationary distribution of a fixed chain started from uniform.
pub fn stationary_distribution(chain: &[Transition]) -> Result<Vec<f64>> {
    if chain.is_empty() {
        return Err(Error::config("chain", "no states"));
    }
    if let Some(m) = direct_stationary(chain) {
        return Ok(m);
    }
    fixed_point(chain.len(), |m| push_forward(chain, m))
}

/// Fixed point of the population update `M -> sum M(s) pi(a|s) P(.|s,a,M)`.
pub fn induced_population(pi: &PolicyTable, env: &dyn Environment) -> Result<Vec<f64>> {
    let n = env.states().size();
    if pi.n_states() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: pi.n_states(),
        });
    }
    if env.population_independent() {
        let uniform = vec![1.0 / n as f64; n];
        let chain = FrozenMdp::new(env, &uniform).chain(pi);
        return stationary_distribution(&chain);
    }
    let actions = env.actions();
    fixed_point(n, |m| {
        let mut out = vec![0.0; n];
        for (s, &w) in m.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for &a in actions.feasible(s) {
                let p = pi.prob(s, a);
                if p > 0.0 {
                    for (s2, q) in env.kernel(s, a, m) {
                        out[s2] += w * p * q;
                    }
                }
            }
        }
        out
    })
}

/// Best-response gain `E_{mu_pi}[V_BR - V_pi]` at the population `pi` induces.
pub fn exploitability(pi: &PolicyTable, env: &dyn Environment) -> Result<f64> {
    let mu = induced_population(pi, env)?;
    exploitability_at(pi, env, &mu)
}

/// Exploitability with the induced population already known.
pub fn exploitability_at(pi: &PolicyTable, env: &dyn Environment, mu: &[f64]) -> Result<f64> {
    let mdp = FrozenMdp::new(env, mu);
    let iters = default_max_iters(mdp.gamma, mdp.reward_bound, VALUE_TOL);
    let best = mdp.value_iteration(None, VALUE_TOL, iters)?;
    let own = mdp.evaluate(pi, VALUE_TOL, iters)?;
    let gap: f64 = mu
        .iter()
        .zip(best.v.iter().zip(&own))
        .map(|(m, (b, o))| m * (b - o))
        .sum();
    // Each value is within tol * gamma / (1 - gamma) of its fixed point.
    let slack = VALUE_TOL * mdp.gamma.max(1e-3) / (1.0 - mdp.gamma);
    if gap < -10.0 * slack {
        return Err(Error::NegativeExploitability(gap));
    }
    Ok(gap.max(0.0))
}

/// Exact expectation of both semi-gradients under the stationary law of the
/// chain with policy `pol(<phi, theta>)` and kernel frozen at `<psi, eta>`.
/// Returns `(theta-block; eta-block)`.
pub fn mean_path_semigradient(
    xi: &UnifiedParameter,
    env: &dyn Environment,
    phi: &FeatureMap,
    basis: &MeasureBasis,
    pol: PolicyOperator,
) -> Result<Vec<f64>> {
    let mu = basis.represent(&xi.eta).into_owned();
    let mdp = FrozenMdp::new(env, &mu);
    let pi = PolicyTable::from_theta(pol, phi, &xi.theta, env.actions())?;
    let chain = mdp.chain(&pi);
    let d = stationary_distribution(&chain)?;
    let gamma = mdp.gamma;

    // Expected next-step value under the policy, per state.
    let n = mdp.n_states();
    let next_value: Vec<f64> = (0..n)
        .map(|s| {
            let row = phi.q_row(&xi.theta, s);
            mdp.feasible[s]
                .iter()
                .map(|&a| pi.prob(s, a) * row[a])
                .sum()
        })
        .collect();

    let mut g_theta = vec![0.0; phi.dim()];
    for s in 0..n {
        if d[s] == 0.0 {
            continue;
        }
        for &a in &mdp.feasible[s] {
            let w = d[s] * pi.prob(s, a);
            if w == 0.0 {
                continue;
            }
            let ahead: f64 = mdp.kernel[s][a]
                .iter()
                .map(|&(s2, p)| p * next_value[s2])
                .sum();
            let delta = phi.value(&xi.theta, s, a) - gamma * ahead - mdp.reward[s][a];
            phi.add_scaled(&mut g_theta, s, a, w * delta);
        }
    }

    let next_law = push_forward(&chain, &d);
    let mut g_eta: Vec<f64> = basis.gram().iter().map(|row| dot(row, &xi.eta)).collect();
    for (s2, &w) in next_law.iter().enumerate() {
        if w != 0.0 {
            for (g, p) in g_eta.iter_mut().zip(basis.evaluate(s2)) {
                *g -= w * p;
            }
        }
    }
    g_theta.extend(g_eta);
    Ok(g_theta)
}

/// Euclidean distance from `mu` to the span of the basis measures.
pub fn span_residual(mu: &[f64], basis: &MeasureBasis) -> Result<f64> {
    if mu.len() != basis.n_states() {
        return Err(Error::LengthMismatch {
            expected: basis.n_states(),
            got: mu.len(),
        });
    }
    let d = basis.dim();
    let n = basis.n_states();
    let b = DMatrix::from_fn(d, n, |i, s| basis.masses(i)[s]);
    let m = DVector::from_column_slice(mu);
    let normal = &b * b.transpose();
    let rhs = &b * &m;
    let coef = match normal.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => (normal + DMatrix::identity(d, d) * 1e-12)
            .cholesky()
            .ok_or(Error::DegenerateBasis(0))?
            .solve(&rhs),
    };
    Ok((m - b.transpose() * coef).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{toy_finite_env, ToyEnv};
    use crate::lfa::{one_hot_feature_map, one_hot_measure_basis};

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(mse(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
        assert!(mse(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn max_iters_formula() {
        // log(1e-10 * 0.1 / 1) / log 0.9 = 240.4...
        assert_eq!(default_max_iters(0.9, 1.0, 1e-10), 251);
    }

    #[test]
    fn gamma_zero_value_iteration_is_one_sweep_max() {
        let env = ToyEnv::builder(3, 2, 4).discount(0.0).build().unwrap();
        let mu = [0.2, 0.3, 0.5];
        let sol = value_iteration(&env, &mu, 1e-12, 5).unwrap();
        for s in 0..3 {
            let best = env.reward(s, 0, &mu).max(env.reward(s, 1, &mu));
            assert_eq!(sol.v[s], best);
        }
        let uniform = PolicyTable::uniform(env.actions(), 3);
        let v = policy_evaluation(&env, &uniform, &mu, 1e-12, 5).unwrap();
        for s in 0..3 {
            let avg = 0.5 * (env.reward(s, 0, &mu) + env.reward(s, 1, &mu));
            assert!((v[s] - avg).abs() < 1e-15);
        }
    }

    #[test]
    fn greedy_evaluation_matches_optimal_value() {
        let env = toy_finite_env(4, 3, 2).unwrap();
        let mu = [0.1, 0.2, 0.3, 0.4];
        let sol = value_iteration(&env, &mu, 1e-12, 1000).unwrap();
        let v = policy_evaluation(&env, &sol.greedy, &mu, 1e-12, 1000).unwrap();
        for (a, b) in v.iter().zip(&sol.v) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn value_iteration_reports_residual_on_budget_exhaustion() {
        let env = toy_finite_env(3, 2, 1).unwrap();
        match value_iteration(&env, &[0.3, 0.3, 0.4], 1e-12, 3) {
            Err(Error::NoConvergence {
                iterations,
                residual,
                ..
            }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 0.0);
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn induced_population_is_a_fixed_point() {
        let env = toy_finite_env(5, 2, 9).unwrap();
        let pi = PolicyTable::uniform(env.actions(), 5);
        let mu = induced_population(&pi, &env).unwrap();
        assert!(crate::types::in_simplex(&mu, 1e-12));
        let chain = FrozenMdp::new(&env, &mu).chain(&pi);
        assert!(tv(&push_forward(&chain, &mu), &mu) < 1e-11);
    }

    #[test]
    fn periodic_chain_converges() {
        // Two-cycle: plain iteration from a non-uniform start would oscillate.
        let chain = vec![vec![(1, 1.0)], vec![(0, 1.0)], vec![(0, 1.0)]];
        let m = stationary_distribution(&chain).unwrap();
        assert!((m[0] - 0.5).abs() < 1e-12 && (m[1] - 0.5).abs() < 1e-12);
        let m = fixed_point(3, |m| push_forward(&chain, m)).unwrap();
        assert!((m[0] - 0.5).abs() < 1e-9 && m[2] < 1e-9);
    }

    #[test]
    fn fully_mixing_kernel_gives_its_row() {
        let rho = vec![(0, 0.2), (1, 0.5), (2, 0.3)];
        let chain = vec![rho.clone(), rho.clone(), rho.clone()];
        let m = push_forward(&chain, &[1.0 / 3.0; 3]);
        assert!((m[1] - 0.5).abs() < 1e-15);
        let m = stationary_distribution(&chain).unwrap();
        assert!((m[2] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn single_action_game_is_unexploitable() {
        let env = toy_finite_env(4, 1, 3).unwrap();
        let pi = PolicyTable::uniform(env.actions(), 4);
        assert_eq!(exploitability(&pi, &env).unwrap(), 0.0);
    }

    #[test]
    fn eta_block_vanishes_at_the_stationary_distribution() {
        let env = ToyEnv::builder(4, 2, 6).epsilon(0.0).build().unwrap();
        let phi = one_hot_feature_map(env.states(), env.actions());
        let basis = one_hot_measure_basis(env.states());
        let theta: Vec<f64> = (0..8).map(|i| (i as f64 * 0.37).sin()).collect();
        let pol = PolicyOperator::Softmax(2.0);
        let pi = PolicyTable::from_theta(pol, &phi, &theta, env.actions()).unwrap();
        let eta = induced_population(&pi, &env).unwrap();
        let xi = UnifiedParameter::new(theta, eta);
        let g = mean_path_semigradient(&xi, &env, &phi, &basis, pol).unwrap();
        assert!(g[8..].iter().all(|x| x.abs() <= 1e-10));
    }

    #[test]
    fn span_residual_examples() {
        let env = ToyEnv::builder(6, 2, 5).rank(3).build().unwrap();
        let basis = env.population_basis().unwrap().unwrap();
        assert!(span_residual(basis.masses(1), &basis).unwrap() < 1e-10);
        let full = one_hot_measure_basis(env.states());
        let mu = [0.1, 0.3, 0.05, 0.25, 0.2, 0.1];
        assert!(span_residual(&mu, &full).unwrap() < 1e-12);
    }
}
