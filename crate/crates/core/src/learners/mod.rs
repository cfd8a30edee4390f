//! SemiSGD, the online fixed-point iteration family and the model-based
//! reference solver.

mod fpi;
mod reference;

pub use fpi::run_online_fpi;
pub use reference::{model_based_fpi_fp, ReferenceSolution};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::lfa::{project_ball_in_place, project_simplex, td_error, FeatureMap, MeasureBasis};
use crate::metrics::{exploitability, mse, MetricSnapshot};
use crate::policy::{apply_policy_into, sample_action, PolicyOperator, PolicyTable};
use crate::types::{l2_norm, Algorithm, Observation, RunConfig, StepSchedule, UnifiedParameter};

/// `alpha_t` from a schedule; errors when it leaves `(0, 1)`.
pub fn step_size(schedule: &StepSchedule, t: u64) -> Result<f64> {
    schedule.at(t)
}

/// Online learner state: parameter, current Markov state and random stream.
#[derive(Debug, Clone)]
pub struct LearnerState {
    pub xi: UnifiedParameter,
    pub s: usize,
    /// Last action drawn at the current state.
    pub a: usize,
    pub t: u64,
    rng: ChaCha8Rng,
    probs: Vec<f64>,
}

impl LearnerState {
    /// `theta = 0`, `eta` the simplex projection of i.i.d. uniforms, `s_0`
    /// from the initial distribution, all drawn from `seed`.
    pub fn initial(
        env: &dyn Environment,
        phi: &FeatureMap,
        basis: &MeasureBasis,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..basis.dim()).map(|_| rng.gen::<f64>()).collect();
        let eta = project_simplex(&raw)?;
        let s = sample_action(&env.initial_distribution(), &mut rng);
        Ok(Self {
            xi: UnifiedParameter::new(vec![0.0; phi.dim()], eta),
            s,
            a: env.actions().feasible(s)[0],
            t: 0,
            rng,
            probs: vec![0.0; env.actions().size()],
        })
    }

    pub fn with_parameter(mut self, xi: UnifiedParameter) -> Self {
        self.xi = xi;
        self
    }

    fn draw_action(
        &mut self,
        env: &dyn Environment,
        phi: &FeatureMap,
        q: &[f64],
        op: PolicyOperator,
        s: usize,
    ) -> Result<usize> {
        apply_policy_into(
            op,
            &phi.q_row(q, s),
            env.actions().feasible(s),
            &mut self.probs,
        )
        .map_err(|_| Error::EmptyMask(s))?;
        Ok(sample_action(&self.probs, &mut self.rng))
    }

    /// One transition with actions drawn from `op(<phi, q>)` and the game's
    /// population argument fixed to `mu`. Moves the chain to `s'`.
    fn observe(
        &mut self,
        env: &dyn Environment,
        phi: &FeatureMap,
        q: &[f64],
        op: PolicyOperator,
        mu: &[f64],
    ) -> Result<Observation> {
        let s = self.s;
        let a = self.draw_action(env, phi, q, op, s)?;
        let r = env.reward(s, a, mu);
        let s_next = env.sample_next(s, a, mu, &mut self.rng);
        let a_next = self.draw_action(env, phi, q, op, s_next)?;
        self.s = s_next;
        self.a = a_next;
        Ok(Observation {
            s,
            a,
            r,
            s_next,
            a_next,
        })
    }

    /// Both semi-gradient steps from the same observation and step size.
    fn update(
        &mut self,
        obs: &Observation,
        phi: &FeatureMap,
        basis: &MeasureBasis,
        alpha: f64,
        cfg: &RunConfig,
    ) -> Result<()> {
        let delta = td_error(&self.xi.theta, obs, phi, cfg.discount);
        let psi = basis.evaluate(obs.s_next);
        let eta = &self.xi.eta;
        let mut next_eta: Vec<f64> = if basis.is_identity() {
            eta.iter()
                .zip(psi)
                .map(|(e, p)| e - alpha * (e - p))
                .collect()
        } else {
            basis
                .gram()
                .iter()
                .zip(psi)
                .zip(eta)
                .map(|((row, p), e)| e - alpha * (crate::lfa::dot(row, eta) - p))
                .collect()
        };
        phi.add_scaled(&mut self.xi.theta, obs.s, obs.a, -alpha * delta);
        if cfg.projections.ball {
            project_ball_in_place(&mut self.xi.theta, cfg.ball_radius);
        }
        if cfg.projections.simplex {
            next_eta = project_simplex(&next_eta)?;
        } else if next_eta.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("population weights"));
        }
        self.xi.eta = next_eta;
        self.t += 1;
        Ok(())
    }
}

/// One SemiSGD step: observe under `pol(<phi, theta_t>)` at the represented
/// population `<psi, eta_t>`, then update both blocks.
pub fn semisgd_step(
    ls: &mut LearnerState,
    env: &dyn Environment,
    phi: &FeatureMap,
    basis: &MeasureBasis,
    pol: PolicyOperator,
    alpha: f64,
    cfg: &RunConfig,
) -> Result<Observation> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(
            "step_size",
            format!("{alpha} is outside (0, 1)"),
        ));
    }
    let mu = basis.represent(&ls.xi.eta).into_owned();
    let theta = std::mem::take(&mut ls.xi.theta);
    let obs = ls.observe(env, phi, &theta, pol, &mu);
    ls.xi.theta = theta;
    let obs = obs?;
    ls.update(&obs, phi, basis, alpha, cfg)?;
    Ok(obs)
}

/// Metric trace of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub snapshots: Vec<MetricSnapshot>,
    /// `(t, xi_t)` at the configured parameter cadence.
    pub parameters: Vec<(u64, UnifiedParameter)>,
    pub final_parameter: UnifiedParameter,
    /// The population estimate the run reports, as per-state masses.
    pub final_population: Vec<f64>,
}

/// What snapshots are measured against.
#[derive(Debug, Clone, Copy)]
pub struct Target<'a> {
    pub mu_ref: &'a [f64],
    pub xi_ref: Option<&'a UnifiedParameter>,
}

pub(crate) struct Recorder<'a> {
    env: &'a dyn Environment,
    phi: &'a FeatureMap,
    cfg: &'a RunConfig,
    target: Target<'a>,
    pub(crate) record: RunRecord,
}

impl<'a> Recorder<'a> {
    pub(crate) fn new(
        env: &'a dyn Environment,
        phi: &'a FeatureMap,
        cfg: &'a RunConfig,
        target: Target<'a>,
        xi0: &UnifiedParameter,
    ) -> Self {
        Self {
            env,
            phi,
            cfg,
            target,
            record: RunRecord {
                algorithm: cfg.algorithm,
                seed: cfg.seed,
                snapshots: Vec::new(),
                parameters: Vec::new(),
                final_parameter: xi0.clone(),
                final_population: Vec::new(),
            },
        }
    }

    pub(crate) fn due(&self, t: u64) -> bool {
        t % self.cfg.cadence == 0
            || t == self.cfg.total_steps
            || self.cfg.record_parameters_every.is_some_and(|k| t % k == 0)
    }

    /// `q` and `op` define the policy the run would report at step `t`.
    pub(crate) fn observe(
        &mut self,
        t: u64,
        xi: &UnifiedParameter,
        population: &[f64],
        q: &[f64],
        op: PolicyOperator,
    ) -> Result<()> {
        let last = t == self.cfg.total_steps;
        if self.cfg.record_parameters_every.is_some_and(|k| t % k == 0)
            || (last && self.cfg.record_parameters_every.is_some())
        {
            if self.record.parameters.last().map(|(s, _)| *s) != Some(t) {
                self.record.parameters.push((t, xi.clone()));
            }
        }
        if t % self.cfg.cadence != 0 && !last {
            return Ok(());
        }
        let expl = match self.cfg.exploitability_cadence {
            Some(k) if t % k == 0 || last => {
                let pi = PolicyTable::from_theta(op, self.phi, q, self.env.actions())?;
                Some(exploitability(&pi, self.env)?)
            }
            _ => None,
        };
        let mse = mse(population, self.target.mu_ref)?;
        if !mse.is_finite() {
            return Err(Error::NonFinite("mse"));
        }
        let gap = self.target.xi_ref.map(|r| {
            let d: Vec<f64> = xi
                .concat()
                .iter()
                .zip(r.concat())
                .map(|(a, b)| a - b)
                .collect();
            l2_norm(&d)
        });
        self.record.snapshots.push(MetricSnapshot {
            step: t,
            mse,
            exploitability: expl,
            param_norm_gap: gap,
        });
        if last {
            self.record.final_parameter = xi.clone();
            self.record.final_population = population.to_vec();
        }
        Ok(())
    }
}

/// `T` sequential SemiSGD steps from [`LearnerState::initial`], with
/// snapshots at `t = 0`, every `cadence` steps and at `T`.
pub fn run_semisgd(
    env: &dyn Environment,
    cfg: &RunConfig,
    phi: &FeatureMap,
    basis: &MeasureBasis,
    pol: PolicyOperator,
    target: Target<'_>,
) -> Result<RunRecord> {
    cfg.validate()?;
    let mut ls = LearnerState::initial(env, phi, basis, cfg.seed)?;
    let mut rec = Recorder::new(env, phi, cfg, target, &ls.xi);
    rec.observe(0, &ls.xi, &basis.represent(&ls.xi.eta), &ls.xi.theta, pol)?;
    for t in 0..cfg.total_steps {
        let alpha = step_size(&cfg.step_size, t)?;
        semisgd_step(&mut ls, env, phi, basis, pol, alpha, cfg)?;
        if rec.due(t + 1) {
            rec.observe(
                t + 1,
                &ls.xi,
                &basis.represent(&ls.xi.eta),
                &ls.xi.theta,
                pol,
            )?;
        }
    }
    Ok(rec.record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{toy_finite_env, ToyEnv};
    use crate::lfa::{one_hot_feature_map, one_hot_measure_basis};
    use crate::types::Projections;

    pub(crate) fn config(steps: u64, alpha: f64, seed: u64) -> RunConfig {
        RunConfig {
            total_steps: steps,
            step_size: StepSchedule::Constant(alpha),
            discount: 0.9,
            inverse_temperature: 1e9,
            ball_radius: 1e6,
            seed,
            inner_loop: 1,
            algorithm: Algorithm::Semisgd,
            cadence: 100,
            exploitability_cadence: None,
            projections: Projections::default(),
            record_parameters_every: None,
        }
    }

    #[test]
    fn step_size_examples() {
        assert_eq!(step_size(&StepSchedule::Constant(1e-3), 999).unwrap(), 1e-3);
        let lin = StepSchedule::LinearDecay { a0: 0.5, b: 1.0 };
        assert_eq!(step_size(&lin, 0).unwrap(), 0.5);
        assert_eq!(step_size(&lin, 9).unwrap(), 0.05);
        assert!(step_size(&StepSchedule::Constant(1.0), 0).is_err());
    }

    #[test]
    fn tabular_update_arithmetic() {
        // gamma = 0, r = 1, alpha = 0.5: theta(s, a) moves halfway to 1.
        let env = ToyEnv::builder(2, 2, 0).build().unwrap();
        let phi = one_hot_feature_map(env.states(), env.actions());
        let basis = one_hot_measure_basis(env.states());
        let mut cfg = config(1, 0.5, 0);
        cfg.discount = 0.0;
        let mut ls = LearnerState::initial(&env, &phi, &basis, 0)
            .unwrap()
            .with_parameter(UnifiedParameter::new(vec![0.0; 4], vec![0.5, 0.5]));
        let obs = Observation {
            s: 1,
            a: 0,
            r: 1.0,
            s_next: 0,
            a_next: 1,
        };
        ls.update(&obs, &phi, &basis, 0.5, &cfg).unwrap();
        assert_eq!(ls.xi.theta, vec![0.0, 0.0, 0.5, 0.0]);
        assert_eq!(ls.xi.eta, vec![0.75, 0.25]);

        let mut ls = ls.with_parameter(UnifiedParameter::new(vec![0.0; 4], vec![0.5, 0.5]));
        ls.update(&obs, &phi, &basis, 0.1, &cfg).unwrap();
        assert!((ls.xi.eta[0] - 0.55).abs() < 1e-15 && (ls.xi.eta[1] - 0.45).abs() < 1e-15);
    }

    #[test]
    fn zero_semi_gradient_leaves_parameter_unchanged() {
        let env = ToyEnv::builder(2, 1, 0).build().unwrap();
        let phi = one_hot_feature_map(env.states(), env.actions());
        let basis = one_hot_measure_basis(env.states());
        let mut cfg = config(1, 0.3, 0);
        cfg.discount = 0.5;
        // theta(0) = r + 0.5 theta(1) with theta = 2 and r = 1; eta already at s'.
        let xi = UnifiedParameter::new(vec![2.0, 2.0], vec![0.0, 1.0]);
        let mut ls = LearnerState::initial(&env, &phi, &basis, 0)
            .unwrap()
            .with_parameter(xi.clone());
        let obs = Observation {
            s: 0,
            a: 0,
            r: 1.0,
            s_next: 1,
            a_next: 0,
        };
        ls.update(&obs, &phi, &basis, 0.3, &cfg).unwrap();
        assert_eq!(ls.xi, xi);
    }

    #[test]
    fn zero_steps_returns_initial_parameter() {
        let env = toy_finite_env(3, 2, 1).unwrap();
        let phi = one_hot_feature_map(env.states(), env.actions());
        let basis = one_hot_measure_basis(env.states());
        let cfg = config(0, 0.1, 4);
        let mu_ref = [1.0 / 3.0; 3];
        let target = Target {
            mu_ref: &mu_ref,
            xi_ref: None,
        };
        let rec = run_semisgd(&env, &cfg, &phi, &basis, PolicyOperator::Argmax, target).unwrap();
        let init = LearnerState::initial(&env, &phi, &basis, 4).unwrap();
        assert_eq!(rec.final_parameter, init.xi);
        assert_eq!(rec.snapshots.len(), 1);
    }

    #[test]
    fn runs_are_reproducible() {
        let env = toy_finite_env(4, 3, 2).unwrap();
        let phi = one_hot_feature_map(env.states(), env.actions());
        let basis = one_hot_measure_basis(env.states());
        let mut cfg = config(2000, 0.05, 11);
        cfg.exploitability_cadence = Some(500);
        let mu_ref = [0.25; 4];
        let target = Target {
            mu_ref: &mu_ref,
            xi_ref: None,
        };
        let pol = PolicyOperator::Softmax(50.0);
        let a = run_semisgd(&env, &cfg, &phi, &basis, pol, target).unwrap();
        let b = run_semisgd(&env, &cfg, &phi, &basis, pol, target).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.snapshots.len(), 21);
        assert_eq!(
            a.snapshots
                .iter()
                .filter(|s| s.exploitability.is_some())
                .count(),
            5
        );
    }
}
