use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::metrics::{
    default_max_iters, exploitability, exploitability_at, induced_population, FrozenMdp,
};
use crate::policy::PolicyTable;
use crate::types::in_simplex;

/// Approximate mean field equilibrium computed from the exact model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    /// Optimal action values at `mu_star`, `|S| x |A|`.
    pub q_star: Vec<Vec<f64>>,
    pub mu_star: Vec<f64>,
    /// Equilibrium policy: the final greedy policy when a pure equilibrium is
    /// reached, the population-weighted average of all iterates otherwise.
    pub policy: Vec<Vec<f64>>,
    pub iterations: usize,
    pub final_exploitability: f64,
    /// Exploitability after each outer iteration.
    pub history: Vec<f64>,
}

impl ReferenceSolution {
    pub fn policy_table(&self) -> PolicyTable {
        PolicyTable::new(self.policy.clone())
    }
}

/// Model-based fixed-point iteration with fictitious play.
///
/// Each outer iteration computes the greedy best response to the averaged
/// population by value iteration (warm-started, stopped when the sup-norm
/// change is below `vi_tol`), its exact induced population, and folds that
/// population into the running average. Stops early when the greedy policy is
/// a best response to its own induced population.
pub fn model_based_fpi_fp(
    env: &dyn Environment,
    outer_iters: usize,
    vi_iters: usize,
    vi_tol: f64,
) -> Result<ReferenceSolution> {
    if outer_iters == 0 {
        return Err(Error::config("outer_iters", "must be at least 1"));
    }
    let n = env.states().size();
    let m = env.actions().size();
    let mut mu_hist = env.initial_distribution();
    let mut v: Option<Vec<f64>> = None;
    let mut weighted = vec![vec![0.0; m]; n];
    let mut mass = vec![0.0; n];
    let mut history = Vec::with_capacity(outer_iters);
    let mut averaged = PolicyTable::uniform(env.actions(), n);

    for k in 0..outer_iters {
        let best = FrozenMdp::new(env, &mu_hist).value_iteration(v.as_deref(), vi_tol, vi_iters)?;
        let pi = best.greedy;
        v = Some(best.v);
        let mu = induced_population(&pi, env)?;

        let response = FrozenMdp::new(env, &mu).value_iteration(v.as_deref(), vi_tol, vi_iters)?;
        let slack = 10.0 * vi_tol / (1.0 - env.discount());
        if response.greedy == pi || is_best_response(&pi, &response.q, &mu, env, slack) {
            let expl = exploitability_at(&pi, env, &mu)?;
            history.push(expl);
            return Ok(ReferenceSolution {
                q_star: response.q,
                mu_star: mu,
                policy: pi.rows().to_vec(),
                iterations: k + 1,
                final_exploitability: expl,
                history,
            });
        }

        for s in 0..n {
            mass[s] += mu[s];
            for (w, p) in weighted[s].iter_mut().zip(pi.row(s)) {
                *w += mu[s] * p;
            }
        }
        let kf = k as f64;
        mu_hist
            .iter_mut()
            .zip(&mu)
            .for_each(|(h, x)| *h = (kf * *h + x) / (kf + 1.0));
        averaged = average_policy(&weighted, &mass, &pi);
        // With a fixed kernel the running average is stationary for the
        // averaged policy, which may have several stationary laws.
        history.push(if env.population_independent() {
            exploitability_at(&averaged, env, &mu_hist)?
        } else {
            exploitability(&averaged, env)?
        });
    }

    if !in_simplex(&mu_hist, 1e-9) {
        return Err(Error::NonFinite("reference population"));
    }
    let fp_expl = *history.last().expect("at least one iteration");
    if let Some(r) = refine(env, &averaged)? {
        if r.exploitability < fp_expl {
            return Ok(ReferenceSolution {
                q_star: r.q,
                mu_star: r.mu,
                policy: r.policy.rows().to_vec(),
                iterations: outer_iters,
                final_exploitability: r.exploitability,
                history,
            });
        }
    }
    let q_star = FrozenMdp::new(env, &mu_hist)
        .value_iteration(v.as_deref(), vi_tol, vi_iters)?
        .q;
    Ok(ReferenceSolution {
        q_star,
        mu_star: mu_hist,
        policy: averaged.rows().to_vec(),
        iterations: outer_iters,
        final_exploitability: fp_expl,
        history,
    })
}

/// Actions below this averaged probability are dropped from the support.
const SUPPORT_THRESHOLD: f64 = 0.01;
const MAX_FREE: usize = 64;
const REFINE_TOL: f64 = 1e-13;

struct Refined {
    policy: PolicyTable,
    mu: Vec<f64>,
    q: Vec<Vec<f64>>,
    exploitability: f64,
}

/// Mixed-strategy refinement of a fictitious-play average: keeps the support
/// of `averaged` fixed and solves the indifference conditions
/// `Q*(s, a) = Q*(s, a')` on every mixed state by Newton's method with a
/// finite-difference Jacobian. `None` when the support is pure or too large,
/// Newton leaves the simplex, or the result is not a best response.
fn refine(env: &dyn Environment, averaged: &PolicyTable) -> Result<Option<Refined>> {
    let tol = REFINE_TOL;
    let max_iters = default_max_iters(env.discount(), env.reward_bound(), tol);
    let support: Vec<Vec<usize>> = (0..averaged.n_states())
        .map(|s| {
            let row = averaged.row(s);
            let mut sup: Vec<usize> = env
                .actions()
                .feasible(s)
                .iter()
                .copied()
                .filter(|&a| row[a] >= SUPPORT_THRESHOLD)
                .collect();
            if sup.is_empty() {
                let top = (0..row.len()).fold(0, |b, a| if row[a] > row[b] { a } else { b });
                sup.push(top);
            }
            sup
        })
        .collect();
    let free: usize = support.iter().map(|s| s.len() - 1).sum();
    if free == 0 || free > MAX_FREE {
        return Ok(None);
    }
    let m = env.actions().size();
    let policy_of = |x: &[f64]| -> Option<PolicyTable> {
        let mut k = 0;
        let mut rows = Vec::with_capacity(support.len());
        for sup in &support {
            let mut row = vec![0.0; m];
            let mut rest = 1.0;
            for &a in &sup[..sup.len() - 1] {
                row[a] = x[k];
                rest -= x[k];
                k += 1;
            }
            row[sup[sup.len() - 1]] = rest;
            if row.iter().any(|p| !(*p >= 0.0 && *p <= 1.0)) {
                return None;
            }
            rows.push(row);
        }
        Some(PolicyTable::new(rows))
    };
    let residual = |pi: &PolicyTable| -> Result<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
        let mu = induced_population(pi, env)?;
        let q = FrozenMdp::new(env, &mu)
            .value_iteration(None, tol, max_iters)?
            .q;
        let mut f = Vec::with_capacity(free);
        for (s, sup) in support.iter().enumerate() {
            let last = sup[sup.len() - 1];
            for &a in &sup[..sup.len() - 1] {
                f.push(q[s][a] - q[s][last]);
            }
        }
        Ok((f, mu, q))
    };

    let mut x: Vec<f64> = Vec::with_capacity(free);
    for (s, sup) in support.iter().enumerate() {
        let total: f64 = sup.iter().map(|&a| averaged.prob(s, a)).sum();
        for &a in &sup[..sup.len() - 1] {
            x.push(averaged.prob(s, a) / total);
        }
    }
    let h = 1e-7;
    for _ in 0..30 {
        let Some(pi) = policy_of(&x) else {
            return Ok(None);
        };
        let (f, mu, q) = residual(&pi)?;
        if f.iter().all(|r| r.abs() < 1e-11) {
            let optimal = support.iter().enumerate().all(|(s, sup)| {
                let best = q[s][sup[0]];
                env.actions()
                    .feasible(s)
                    .iter()
                    .all(|&a| q[s][a] <= best + 1e-9)
            });
            if !optimal {
                return Ok(None);
            }
            let exploitability = exploitability_at(&pi, env, &mu)?;
            return Ok(Some(Refined {
                policy: pi,
                mu,
                q,
                exploitability,
            }));
        }
        let mut jac = DMatrix::<f64>::zeros(free, free);
        for j in 0..free {
            let mut xh = x.clone();
            let step = if x[j] + h <= 1.0 { h } else { -h };
            xh[j] += step;
            let Some(pih) = policy_of(&xh) else {
                return Ok(None);
            };
            let (fh, _, _) = residual(&pih)?;
            for i in 0..free {
                jac[(i, j)] = (fh[i] - f[i]) / step;
            }
        }
        let Some(dx) = jac.lu().solve(&DVector::from_vec(f)) else {
            return Ok(None);
        };
        x.iter_mut().zip(dx.iter()).for_each(|(xi, d)| *xi -= d);
    }
    Ok(None)
}

/// Whether `pi` only uses actions within `slack` of the best on the support
/// of `mu`.
fn is_best_response(
    pi: &PolicyTable,
    q: &[Vec<f64>],
    mu: &[f64],
    env: &dyn Environment,
    slack: f64,
) -> bool {
    (0..pi.n_states()).filter(|&s| mu[s] > 0.0).all(|s| {
        let feas = env.actions().feasible(s);
        let best = feas
            .iter()
            .map(|&a| q[s][a])
            .fold(f64::NEG_INFINITY, f64::max);
        feas.iter()
            .all(|&a| pi.prob(s, a) == 0.0 || q[s][a] >= best - slack)
    })
}

/// `sum_k mu_k(s) pi_k(.|s) / sum_k mu_k(s)`, falling back to `fallback`
/// where no iterate put mass on `s`.
fn average_policy(weighted: &[Vec<f64>], mass: &[f64], fallback: &PolicyTable) -> PolicyTable {
    let rows = weighted
        .iter()
        .zip(mass)
        .enumerate()
        .map(|(s, (w, &total))| {
            if total > 0.0 {
                w.iter().map(|x| x / total).collect()
            } else {
                fallback.row(s).to_vec()
            }
        })
        .collect();
    PolicyTable::new(rows)
}
