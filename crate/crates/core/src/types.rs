//! Domain types shared by every module: discrete spaces, the unified
//! parameter, observations and run configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on `sum(eta) == 1` after a projected update.
pub const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SpaceKind {
    /// Uniform grid over the unit interval, cell `i` sitting at `i * cell_width`.
    IntervalGrid { cell_width: f64, wrap: bool },
    /// Directed edges of a graph, one state per edge.
    GraphEdges { edge_count: usize },
    /// Unstructured finite set.
    Finite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpace {
    size: usize,
    kind: SpaceKind,
}

impl StateSpace {
    pub fn finite(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::config("state_space.size", "must be at least 1"));
        }
        Ok(Self {
            size,
            kind: SpaceKind::Finite,
        })
    }

    /// `size` cells covering `[0, 1)` (or `[0, 1]` without wrap), so `size * cell_width == 1`.
    pub fn interval_grid(size: usize, wrap: bool) -> Result<Self> {
        if size == 0 {
            return Err(Error::config("state_space.size", "must be at least 1"));
        }
        Ok(Self {
            size,
            kind: SpaceKind::IntervalGrid {
                cell_width: 1.0 / size as f64,
                wrap,
            },
        })
    }

    pub fn graph_edges(edge_count: usize) -> Result<Self> {
        if edge_count == 0 {
            return Err(Error::config("state_space.size", "graph has no edges"));
        }
        Ok(Self {
            size: edge_count,
            kind: SpaceKind::GraphEdges { edge_count },
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    /// Grid spacing for interval grids, 1 for everything else.
    pub fn cell_width(&self) -> f64 {
        match self.kind {
            SpaceKind::IntervalGrid { cell_width, .. } => cell_width,
            _ => 1.0,
        }
    }

    /// Continuous coordinate of a grid cell.
    pub fn position(&self, s: usize) -> f64 {
        s as f64 * self.cell_width()
    }
}

/// Action set with an optional per-state feasibility mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpace {
    size: usize,
    feasible: Vec<Vec<usize>>,
    masked: bool,
}

impl ActionSpace {
    /// Every action is feasible in every one of `n_states` states.
    pub fn unrestricted(size: usize, n_states: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::config("action_space.size", "must be at least 1"));
        }
        let all: Vec<usize> = (0..size).collect();
        Ok(Self {
            size,
            feasible: vec![all; n_states],
            masked: false,
        })
    }

    pub fn masked(size: usize, feasible: Vec<Vec<usize>>) -> Result<Self> {
        if size == 0 {
            return Err(Error::config("action_space.size", "must be at least 1"));
        }
        let mut feasible = feasible;
        for (s, acts) in feasible.iter_mut().enumerate() {
            if acts.is_empty() {
                return Err(Error::EmptyMask(s));
            }
            acts.sort_unstable();
            acts.dedup();
            if acts.iter().any(|&a| a >= size) {
                return Err(Error::config(
                    "action_space.feasible",
                    format!("state {s} lists an action outside 0..{size}"),
                ));
            }
        }
        Ok(Self {
            size,
            feasible,
            masked: true,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Feasible actions at `s`, sorted ascending.
    pub fn feasible(&self, s: usize) -> &[usize] {
        &self.feasible[s]
    }

    pub fn is_feasible(&self, s: usize, a: usize) -> bool {
        self.feasible[s].binary_search(&a).is_ok()
    }

    pub fn is_masked(&self) -> bool {
        self.masked
    }
}

/// One online sample `(s, a, r, s', a')`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
    pub a_next: usize,
}

/// Value weights `theta` concatenated with population weights `eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnifiedParameter {
    pub theta: Vec<f64>,
    pub eta: Vec<f64>,
}

impl UnifiedParameter {
    pub fn new(theta: Vec<f64>, eta: Vec<f64>) -> Self {
        Self { theta, eta }
    }

    /// Flattened `(theta; eta)`.
    pub fn concat(&self) -> Vec<f64> {
        self.theta.iter().chain(&self.eta).copied().collect()
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn in_simplex(v: &[f64], tol: f64) -> bool {
    !v.is_empty()
        && v.iter().all(|x| x.is_finite() && *x >= 0.0)
        && (v.iter().sum::<f64>() - 1.0).abs() <= tol
}

/// True iff `eta` lies in the simplex and `theta` in the configured ball.
pub fn validate_parameter(xi: &UnifiedParameter, cfg: &RunConfig) -> bool {
    let norm = l2_norm(&xi.theta);
    in_simplex(&xi.eta, SIMPLEX_TOL) && norm.is_finite() && norm <= cfg.ball_radius * (1.0 + 1e-12)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepSchedule {
    Constant(f64),
    /// `a0 / (1 + b t)`.
    LinearDecay {
        a0: f64,
        b: f64,
    },
}

impl StepSchedule {
    pub fn at(&self, t: u64) -> Result<f64> {
        let alpha = match *self {
            StepSchedule::Constant(a) => a,
            StepSchedule::LinearDecay { a0, b } => a0 / (1.0 + b * t as f64),
        };
        if alpha > 0.0 && alpha < 1.0 {
            Ok(alpha)
        } else {
            Err(Error::config(
                "step_size",
                format!("step size {alpha} at t={t} is outside (0, 1)"),
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FpiVariant {
    Vanilla,
    /// Fictitious play: population mixing.
    Fp,
    /// Mirror descent: incremental Q mixing.
    Md,
    /// Entropy regularization: low inverse temperature.
    Er,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    #[default]
    Semisgd,
    FpiVanilla,
    FpiFp,
    FpiMd,
    FpiEr,
}

impl Algorithm {
    pub fn fpi_variant(self) -> Option<FpiVariant> {
        match self {
            Algorithm::Semisgd => None,
            Algorithm::FpiVanilla => Some(FpiVariant::Vanilla),
            Algorithm::FpiFp => Some(FpiVariant::Fp),
            Algorithm::FpiMd => Some(FpiVariant::Md),
            Algorithm::FpiEr => Some(FpiVariant::Er),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Semisgd => "semisgd",
            Algorithm::FpiVanilla => "fpi-vanilla",
            Algorithm::FpiFp => "fpi-fp",
            Algorithm::FpiMd => "fpi-md",
            Algorithm::FpiEr => "fpi-er",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semisgd" => Ok(Algorithm::Semisgd),
            "fpi-vanilla" | "fpi" => Ok(Algorithm::FpiVanilla),
            "fpi-fp" => Ok(Algorithm::FpiFp),
            "fpi-md" => Ok(Algorithm::FpiMd),
            "fpi-er" => Ok(Algorithm::FpiEr),
            other => Err(Error::config(
                "algorithm",
                format!("unknown algorithm `{other}`"),
            )),
        }
    }
}

/// Which projections the update applies. Disabling them is only meaningful
/// for tabular runs, where the updates stay feasible on their own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Projections {
    pub ball: bool,
    pub simplex: bool,
}

impl Default for Projections {
    fn default() -> Self {
        Self {
            ball: true,
            simplex: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub total_steps: u64,
    pub step_size: StepSchedule,
    pub discount: f64,
    pub inverse_temperature: f64,
    pub ball_radius: f64,
    pub seed: u64,
    /// Inner-loop length for the FPI family.
    pub inner_loop: usize,
    pub algorithm: Algorithm,
    /// Steps between metric snapshots.
    pub cadence: u64,
    /// Steps between exploitability evaluations; `None` disables them.
    pub exploitability_cadence: Option<u64>,
    pub projections: Projections,
    /// Store the full parameter every this many steps.
    pub record_parameters_every: Option<u64>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::config("discount", "must lie in [0, 1)"));
        }
        if !(self.inverse_temperature > 0.0 && self.inverse_temperature.is_finite()) {
            return Err(Error::config("inverse_temperature", "must be positive"));
        }
        if !(self.ball_radius > 0.0) {
            return Err(Error::config("ball_radius", "must be positive"));
        }
        if self.cadence == 0 {
            return Err(Error::config("cadence", "must be at least 1"));
        }
        if self.exploitability_cadence == Some(0) {
            return Err(Error::config(
                "exploitability_cadence",
                "must be at least 1",
            ));
        }
        if self.algorithm.fpi_variant().is_some() {
            if self.inner_loop == 0 {
                return Err(Error::config("inner_loop", "must be at least 1"));
            }
            if self.inner_loop as u64 > self.total_steps {
                return Err(Error::config(
                    "inner_loop",
                    format!(
                        "inner loop {} exceeds the sample budget {}",
                        self.inner_loop, self.total_steps
                    ),
                ));
            }
        }
        // The schedule is monotone non-increasing, so checking both ends covers every t.
        self.step_size.at(0)?;
        self.step_size.at(self.total_steps)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(radius: f64) -> RunConfig {
        RunConfig {
            total_steps: 10,
            step_size: StepSchedule::Constant(1e-3),
            discount: 0.9,
            inverse_temperature: 1.0,
            ball_radius: radius,
            seed: 0,
            inner_loop: 1,
            algorithm: Algorithm::Semisgd,
            cadence: 1,
            exploitability_cadence: None,
            projections: Projections::default(),
            record_parameters_every: None,
        }
    }

    #[test]
    fn uniform_eta_and_zero_theta_is_valid() {
        let xi = UnifiedParameter::new(vec![0.0; 4], vec![0.25; 4]);
        assert!(validate_parameter(&xi, &cfg(1.0)));
    }

    #[test]
    fn eta_off_simplex_is_invalid() {
        let xi = UnifiedParameter::new(vec![0.0; 2], vec![0.5, 0.6]);
        assert!(!validate_parameter(&xi, &cfg(1.0)));
    }

    #[test]
    fn theta_outside_ball_is_invalid() {
        let xi = UnifiedParameter::new(vec![2.0, 0.0], vec![1.0]);
        assert!(!validate_parameter(&xi, &cfg(1.0)));
        assert!(validate_parameter(&xi, &cfg(2.0)));
    }

    #[test]
    fn schedules() {
        assert_eq!(StepSchedule::Constant(1e-3).at(999).unwrap(), 1e-3);
        let lin = StepSchedule::LinearDecay { a0: 0.5, b: 1.0 };
        assert_eq!(lin.at(0).unwrap(), 0.5);
        assert!((lin.at(9).unwrap() - 0.05).abs() < 1e-15);
        assert!(StepSchedule::Constant(1.0).at(0).is_err());
        assert!(StepSchedule::Constant(0.0).at(0).is_err());
    }

    #[test]
    fn grid_width_times_size_is_one() {
        let s = StateSpace::interval_grid(50, true).unwrap();
        assert!((s.cell_width() * 50.0 - 1.0).abs() < 1e-15);
        assert!((s.position(10) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn masked_space_rejects_empty_state() {
        assert!(matches!(
            ActionSpace::masked(3, vec![vec![0], vec![]]),
            Err(Error::EmptyMask(1))
        ));
        let sp = ActionSpace::masked(3, vec![vec![2, 0], vec![1]]).unwrap();
        assert_eq!(sp.feasible(0), &[0, 2]);
        assert!(sp.is_feasible(1, 1) && !sp.is_feasible(1, 0));
    }

    #[test]
    fn fpi_requires_inner_loop_within_budget() {
        let mut c = cfg(1.0);
        c.algorithm = Algorithm::FpiVanilla;
        c.inner_loop = 11;
        assert!(c.validate().is_err());
        c.inner_loop = 10;
        assert!(c.validate().is_ok());
    }
}
