//! Feature maps, measure bases and their Gram matrices, the two semi-gradients
//! and the projections that keep the unified parameter feasible.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::types::{ActionSpace, Observation, SpaceKind, StateSpace, SIMPLEX_TOL};

/// Value-function features `phi(s, a)` with `|phi(s, a)|_2 <= 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    /// `phi(s, a) = e_{s * n_actions + a}`.
    OneHot { n_states: usize, n_actions: usize },
    /// Arbitrary features, one row per `(s, a)` in row-major order.
    Dense {
        n_states: usize,
        n_actions: usize,
        dim: usize,
        table: Vec<Vec<f64>>,
    },
}

pub fn one_hot_feature_map(states: &StateSpace, actions: &ActionSpace) -> FeatureMap {
    FeatureMap::OneHot {
        n_states: states.size(),
        n_actions: actions.size(),
    }
}

impl FeatureMap {
    pub fn dense(n_states: usize, n_actions: usize, table: Vec<Vec<f64>>) -> Result<Self> {
        if table.len() != n_states * n_actions {
            return Err(Error::LengthMismatch {
                expected: n_states * n_actions,
                got: table.len(),
            });
        }
        let dim = table.first().map_or(0, Vec::len);
        if dim == 0 || table.iter().any(|row| row.len() != dim) {
            return Err(Error::config(
                "features",
                "rows must share a positive dimension",
            ));
        }
        let map = FeatureMap::Dense {
            n_states,
            n_actions,
            dim,
            table,
        };
        if map.max_norm() > 1.0 + 1e-12 {
            return Err(Error::config("features", "feature norm exceeds 1"));
        }
        Ok(map)
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::OneHot {
                n_states,
                n_actions,
            } => n_states * n_actions,
            FeatureMap::Dense { dim, .. } => *dim,
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            FeatureMap::OneHot { n_actions, .. } | FeatureMap::Dense { n_actions, .. } => {
                *n_actions
            }
        }
    }

    pub fn n_states(&self) -> usize {
        match self {
            FeatureMap::OneHot { n_states, .. } | FeatureMap::Dense { n_states, .. } => *n_states,
        }
    }

    pub fn evaluate(&self, s: usize, a: usize) -> Vec<f64> {
        match self {
            FeatureMap::OneHot { n_actions, .. } => {
                let mut v = vec![0.0; self.dim()];
                v[s * n_actions + a] = 1.0;
                v
            }
            FeatureMap::Dense {
                n_actions, table, ..
            } => table[s * n_actions + a].clone(),
        }
    }

    /// `<phi(s, a), theta>`.
    pub fn value(&self, theta: &[f64], s: usize, a: usize) -> f64 {
        match self {
            FeatureMap::OneHot { n_actions, .. } => theta[s * n_actions + a],
            FeatureMap::Dense {
                n_actions, table, ..
            } => dot(&table[s * n_actions + a], theta),
        }
    }

    /// All action values at `s`.
    pub fn q_row<'a>(&self, theta: &'a [f64], s: usize) -> Cow<'a, [f64]> {
        match self {
            FeatureMap::OneHot { n_actions, .. } => {
                Cow::Borrowed(&theta[s * n_actions..(s + 1) * n_actions])
            }
            FeatureMap::Dense { n_actions, .. } => {
                Cow::Owned((0..*n_actions).map(|a| self.value(theta, s, a)).collect())
            }
        }
    }

    /// `theta += coef * phi(s, a)`.
    pub fn add_scaled(&self, theta: &mut [f64], s: usize, a: usize, coef: f64) {
        match self {
            FeatureMap::OneHot { n_actions, .. } => theta[s * n_actions + a] += coef,
            FeatureMap::Dense {
                n_actions, table, ..
            } => {
                for (t, f) in theta.iter_mut().zip(&table[s * n_actions + a]) {
                    *t += coef * f;
                }
            }
        }
    }

    /// Exhaustive `max_{s,a} |phi(s, a)|_2`.
    pub fn max_norm(&self) -> f64 {
        match self {
            FeatureMap::OneHot { .. } => 1.0,
            FeatureMap::Dense { table, .. } => table
                .iter()
                .map(|row| dot(row, row).sqrt())
                .fold(0.0, f64::max),
        }
    }
}

/// A family of `d2` probability measures over a finite state grid.
///
/// `eval_at[s]` is the vector `psi(s)` that enters the semi-gradient and
/// `masses[i]` the per-cell mass that basis measure `i` places on the grid.
/// For grid densities the two differ by the cell width; for tabular bases
/// they coincide.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureBasis {
    dim: usize,
    n_states: usize,
    cell_width: f64,
    eval_at: Vec<Vec<f64>>,
    masses: Vec<Vec<f64>>,
    gram: Vec<Vec<f64>>,
    norm_bound: f64,
    identity: bool,
}

/// Dirac measure at each state; the Gram matrix is the identity.
pub fn one_hot_measure_basis(states: &StateSpace) -> MeasureBasis {
    let n = states.size();
    let unit = |i: usize| {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    };
    let eval_at: Vec<Vec<f64>> = (0..n).map(unit).collect();
    let masses = eval_at.clone();
    let gram = eval_at.clone();
    MeasureBasis {
        dim: n,
        n_states: n,
        cell_width: 1.0,
        eval_at,
        masses,
        gram,
        norm_bound: 1.0,
        identity: true,
    }
}

/// Tabular basis over a coarse partition of a fine grid: `d2` contiguous
/// blocks, each represented on the fine grid by a uniform measure.
pub fn coarse_grid_basis(n_fine: usize, d2: usize) -> Result<MeasureBasis> {
    if d2 == 0 || d2 > n_fine {
        return Err(Error::config("d2", format!("must lie in 1..={n_fine}")));
    }
    let block = |s: usize| s * d2 / n_fine;
    let mut counts = vec![0usize; d2];
    for s in 0..n_fine {
        counts[block(s)] += 1;
    }
    let mut masses = vec![vec![0.0; n_fine]; d2];
    let mut eval_at = vec![vec![0.0; d2]; n_fine];
    for s in 0..n_fine {
        let b = block(s);
        masses[b][s] = 1.0 / counts[b] as f64;
        eval_at[s][b] = 1.0;
    }
    let gram = (0..d2)
        .map(|i| (0..d2).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    Ok(MeasureBasis {
        dim: d2,
        n_states: n_fine,
        cell_width: 1.0,
        eval_at,
        masses,
        gram,
        norm_bound: 1.0,
        identity: d2 == n_fine,
    })
}

/// Normal density with mean 0 and variance `v`.
fn normal_pdf(x: f64, v: f64) -> f64 {
    (-x * x / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
}

/// Inverted-bump basis on the periodic unit interval:
/// `psi_i(s) = c f(0) - f(tan((s - s_i) pi))`, `f` the `N(0, v)` density,
/// centers `s_i = i / d2`. Each function is clamped at zero and normalized
/// to unit integral over the grid.
pub fn tan_normal_basis(states: &StateSpace, d2: usize, c: f64, v: f64) -> Result<MeasureBasis> {
    let (cell_width, n) = match states.kind() {
        SpaceKind::IntervalGrid { cell_width, .. } => (cell_width, states.size()),
        _ => {
            return Err(Error::config(
                "basis",
                "tan-normal basis needs an interval grid",
            ))
        }
    };
    if d2 == 0 {
        return Err(Error::config("d2", "must be at least 1"));
    }
    if !(v > 0.0) || !c.is_finite() {
        return Err(Error::config("basis", "need finite c and v > 0"));
    }
    let peak = normal_pdf(0.0, v);
    let mut densities = Vec::with_capacity(d2);
    for i in 0..d2 {
        let center = i as f64 / d2 as f64;
        let mut psi: Vec<f64> = (0..n)
            .map(|s| {
                let x = ((states.position(s) - center) * std::f64::consts::PI).tan();
                (c * peak - normal_pdf(x, v)).max(0.0)
            })
            .collect();
        let integral: f64 = psi.iter().sum::<f64>() * cell_width;
        if !(integral > 0.0) {
            return Err(Error::DegenerateBasis(i));
        }
        psi.iter_mut().for_each(|p| *p /= integral);
        densities.push(psi);
    }
    let eval_at: Vec<Vec<f64>> = (0..n)
        .map(|s| densities.iter().map(|psi| psi[s]).collect())
        .collect();
    let gram = gram_matrix(&eval_at, cell_width);
    let masses = densities
        .iter()
        .map(|psi| psi.iter().map(|p| p * cell_width).collect())
        .collect();
    let norm_bound = eval_at
        .iter()
        .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    Ok(MeasureBasis {
        dim: d2,
        n_states: n,
        cell_width,
        eval_at,
        masses,
        gram,
        norm_bound,
        identity: false,
    })
}

/// Builds a basis directly from per-cell probability vectors (tabular convention).
pub fn basis_from_masses(masses: Vec<Vec<f64>>) -> Result<MeasureBasis> {
    let d2 = masses.len();
    let n = masses.first().map_or(0, Vec::len);
    if d2 == 0 || n == 0 {
        return Err(Error::config("basis", "empty basis"));
    }
    for (i, m) in masses.iter().enumerate() {
        if m.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: m.len(),
            });
        }
        if !m.iter().all(|x| x.is_finite() && *x >= 0.0)
            || (m.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::config(
                "basis",
                format!("basis measure {i} is not a probability vector"),
            ));
        }
    }
    let eval_at: Vec<Vec<f64>> = (0..n)
        .map(|s| masses.iter().map(|m| m[s]).collect())
        .collect();
    let gram = gram_matrix(&eval_at, 1.0);
    let norm_bound = eval_at
        .iter()
        .map(|row| row.iter().sum::<f64>())
        .fold(0.0, f64::max);
    Ok(MeasureBasis {
        dim: d2,
        n_states: n,
        cell_width: 1.0,
        eval_at,
        masses,
        gram,
        norm_bound,
        identity: false,
    })
}

impl MeasureBasis {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn cell_width(&self) -> f64 {
        self.cell_width
    }

    /// `psi(s)`.
    pub fn evaluate(&self, s: usize) -> &[f64] {
        &self.eval_at[s]
    }

    pub fn gram(&self) -> &[Vec<f64>] {
        &self.gram
    }

    /// `sup_s |psi(s)|_1`.
    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    /// Per-cell masses of basis measure `i`.
    pub fn masses(&self, i: usize) -> &[f64] {
        &self.masses[i]
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    /// The population `<psi, eta>` as per-cell masses on the state grid.
    pub fn represent<'a>(&self, eta: &'a [f64]) -> Cow<'a, [f64]> {
        if self.identity {
            return Cow::Borrowed(eta);
        }
        let mut mu = vec![0.0; self.n_states];
        for (w, m) in eta.iter().zip(&self.masses) {
            if *w != 0.0 {
                for (x, p) in mu.iter_mut().zip(m) {
                    *x += w * p;
                }
            }
        }
        Cow::Owned(mu)
    }
}

/// `G[i][j] = ds * sum_s psi_i(s) psi_j(s)` from per-state evaluations
/// `evals[s][i]`, symmetrized exactly.
pub fn gram_matrix(evals: &[Vec<f64>], ds: f64) -> Vec<Vec<f64>> {
    let d = evals.first().map_or(0, Vec::len);
    let mut g = vec![vec![0.0; d]; d];
    for row in evals {
        for i in 0..d {
            if row[i] == 0.0 {
                continue;
            }
            for j in 0..d {
                g[i][j] += row[i] * row[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            let avg = 0.5 * (g[i][j] + g[j][i]) * ds;
            g[i][j] = avg;
            g[j][i] = avg;
        }
        g[i][i] *= ds;
    }
    g
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
/// Points already in the simplex (within [`SIMPLEX_TOL`]) are returned as-is.
pub fn project_simplex(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::config("project_simplex", "empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("project_simplex input"));
    }
    if v.iter().all(|x| *x >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL {
        return Ok(v.to_vec());
    }
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        } else {
            break;
        }
    }
    Ok(v.iter().map(|x| (x - tau).max(0.0)).collect())
}

/// Radial projection onto the ball of radius `radius`.
pub fn project_ball(v: &[f64], radius: f64) -> Vec<f64> {
    let mut out = v.to_vec();
    project_ball_in_place(&mut out, radius);
    out
}

pub(crate) fn project_ball_in_place(v: &mut [f64], radius: f64) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > radius {
        let scale = radius / norm;
        v.iter_mut().for_each(|x| *x *= scale);
    }
}

/// Scalar TD error `<phi(s,a) - gamma phi(s',a'), theta> - r`.
pub fn td_error(theta: &[f64], obs: &Observation, phi: &FeatureMap, gamma: f64) -> f64 {
    phi.value(theta, obs.s, obs.a) - gamma * phi.value(theta, obs.s_next, obs.a_next) - obs.r
}

/// `phi(s,a) (<phi(s,a) - gamma phi(s',a'), theta> - r)`.
pub fn semi_gradient_theta(
    theta: &[f64],
    obs: &Observation,
    phi: &FeatureMap,
    gamma: f64,
) -> Vec<f64> {
    let delta = td_error(theta, obs, phi, gamma);
    let mut g = vec![0.0; phi.dim()];
    phi.add_scaled(&mut g, obs.s, obs.a, delta);
    g
}

/// `G eta - psi(s')`.
pub fn semi_gradient_eta(eta: &[f64], s_next: usize, basis: &MeasureBasis) -> Vec<f64> {
    let psi = basis.evaluate(s_next);
    if basis.is_identity() {
        return eta.iter().zip(psi).map(|(e, p)| e - p).collect();
    }
    basis
        .gram()
        .iter()
        .zip(psi)
        .map(|(row, p)| dot(row, eta) - p)
        .collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
