//! Experiment orchestration: JSON specs, reference caching, seed fan-out and
//! CSV output.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{
    flocking_env, ring_road_env_with, sioux_falls_env, Environment, Flocking, Routing, ToyEnv,
};
use crate::error::{Error, Result};
use crate::learners::{
    model_based_fpi_fp, run_online_fpi, run_semisgd, ReferenceSolution, RunRecord, Target,
};
use crate::lfa::{
    coarse_grid_basis, one_hot_feature_map, one_hot_measure_basis, tan_normal_basis, FeatureMap,
    MeasureBasis,
};
use crate::metrics::{default_max_iters, VALUE_TOL};
use crate::policy::PolicyOperator;
use crate::types::{Algorithm, Projections, RunConfig, StepSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvSpec {
    RingRoad {
        #[serde(default)]
        states: Option<usize>,
        #[serde(default)]
        actions: Option<usize>,
    },
    Flocking {
        #[serde(default)]
        states: Option<usize>,
        #[serde(default)]
        actions: Option<usize>,
    },
    SiouxFalls {
        /// Network file; the bundled network when absent.
        #[serde(default)]
        path: Option<PathBuf>,
    },
    Toy {
        n: usize,
        m: usize,
        seed: u64,
    },
}

impl Default for EnvSpec {
    fn default() -> Self {
        EnvSpec::RingRoad {
            states: None,
            actions: None,
        }
    }
}

impl std::str::FromStr for EnvSpec {
    type Err = Error;

    /// `ring-road[:S,A]`, `flocking[:S,A]`, `sioux-falls[:path]` or `toy[:n,m,seed]`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = s.split_once(':').unwrap_or((s, ""));
        let nums = || -> Result<Vec<u64>> {
            args.split(',')
                .filter(|x| !x.is_empty())
                .map(|x| {
                    x.trim()
                        .parse()
                        .map_err(|_| Error::config("env", format!("bad number `{x}`")))
                })
                .collect()
        };
        let pair = |v: Vec<u64>| -> Result<(Option<usize>, Option<usize>)> {
            match v.as_slice() {
                [] => Ok((None, None)),
                [a, b] => Ok((Some(*a as usize), Some(*b as usize))),
                _ => Err(Error::config("env", "expected `name:states,actions`")),
            }
        };
        match name {
            "ring-road" => {
                let (states, actions) = pair(nums()?)?;
                Ok(EnvSpec::RingRoad { states, actions })
            }
            "flocking" => {
                let (states, actions) = pair(nums()?)?;
                Ok(EnvSpec::Flocking { states, actions })
            }
            "sioux-falls" => Ok(EnvSpec::SiouxFalls {
                path: (!args.is_empty()).then(|| PathBuf::from(args)),
            }),
            "toy" => match nums()?.as_slice() {
                [] => Ok(EnvSpec::Toy {
                    n: 3,
                    m: 2,
                    seed: 7,
                }),
                [n, m, seed] => Ok(EnvSpec::Toy {
                    n: *n as usize,
                    m: *m as usize,
                    seed: *seed,
                }),
                _ => Err(Error::config("env", "expected `toy:n,m,seed`")),
            },
            other => Err(Error::config(
                "env",
                format!("unknown environment `{other}`"),
            )),
        }
    }
}

impl EnvSpec {
    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvSpec::RingRoad { states, actions } => Box::new(ring_road_env_with(
                states.unwrap_or(50),
                actions.unwrap_or(50),
            )?),
            EnvSpec::Flocking { states, actions } => match (states, actions) {
                (None, None) => Box::new(flocking_env()),
                _ => Box::new(Flocking::new(states.unwrap_or(50), actions.unwrap_or(50))?),
            },
            EnvSpec::SiouxFalls { path: Some(p) } => Box::new(sioux_falls_env(p)?),
            EnvSpec::SiouxFalls { path: None } => Box::new(Routing::bundled()?),
            EnvSpec::Toy { n, m, seed } => Box::new(ToyEnv::builder(*n, *m, *seed).build()?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BasisSpec {
    #[default]
    OneHot,
    /// Defaults `c = 1.2`, `v = d2 / 2`.
    TanNormal {
        d2: usize,
        #[serde(default)]
        c: Option<f64>,
        #[serde(default)]
        v: Option<f64>,
    },
}

impl BasisSpec {
    pub fn build(&self, env: &dyn Environment) -> Result<MeasureBasis> {
        match *self {
            BasisSpec::OneHot => Ok(one_hot_measure_basis(env.states())),
            BasisSpec::TanNormal { d2, c, v } => tan_normal_basis(
                env.states(),
                d2,
                c.unwrap_or(1.2),
                v.unwrap_or(d2 as f64 / 2.0),
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyChoice {
    /// Softmax at `inverse_temperature`.
    #[default]
    Softmax,
    Argmax,
}

fn default_steps() -> u64 {
    100_000
}
fn default_step_size() -> StepSchedule {
    StepSchedule::Constant(1e-3)
}
fn default_inner_loop() -> usize {
    500
}
fn default_cadence() -> u64 {
    100
}
fn default_expl_cadence() -> Option<u64> {
    Some(5000)
}
fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}
fn default_reference_iters() -> usize {
    1000
}

/// A complete experiment description, read from a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub env: EnvSpec,
    #[serde(default)]
    pub algorithm: Algorithm,
    #[serde(default = "default_steps")]
    pub total_steps: u64,
    #[serde(default = "default_step_size")]
    pub step_size: StepSchedule,
    /// Environment default when absent.
    #[serde(default)]
    pub inverse_temperature: Option<f64>,
    /// `sqrt(d1) R / (1 - gamma)` when absent.
    #[serde(default)]
    pub ball_radius: Option<f64>,
    #[serde(default = "default_inner_loop")]
    pub inner_loop: usize,
    #[serde(default = "default_cadence")]
    pub cadence: u64,
    #[serde(default = "default_expl_cadence")]
    pub exploitability_cadence: Option<u64>,
    #[serde(default)]
    pub projections: Projections,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub seed_offset: u64,
    #[serde(default)]
    pub basis: BasisSpec,
    #[serde(default)]
    pub policy: PolicyChoice,
    /// Cached reference file; computed and written to the output directory when absent.
    #[serde(default)]
    pub reference: Option<PathBuf>,
    #[serde(default = "default_reference_iters")]
    pub reference_iters: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Seeds after applying `seed_offset`.
    pub fn run_seeds(&self) -> Result<Vec<u64>> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        self.seeds
            .iter()
            .map(|s| {
                s.checked_add(self.seed_offset)
                    .ok_or_else(|| Error::config("seed_offset", "seed overflow"))
            })
            .collect()
    }

    pub fn policy_operator(&self, env: &dyn Environment) -> PolicyOperator {
        match self.policy {
            PolicyChoice::Softmax => PolicyOperator::Softmax(
                self.inverse_temperature
                    .unwrap_or_else(|| env.default_inverse_temperature()),
            ),
            PolicyChoice::Argmax => PolicyOperator::Argmax,
        }
    }

    pub fn run_config(&self, env: &dyn Environment, phi: &FeatureMap, seed: u64) -> RunConfig {
        let gamma = env.discount();
        RunConfig {
            total_steps: self.total_steps,
            step_size: self.step_size,
            discount: gamma,
            inverse_temperature: self
                .inverse_temperature
                .unwrap_or_else(|| env.default_inverse_temperature()),
            ball_radius: self
                .ball_radius
                .unwrap_or_else(|| (phi.dim() as f64).sqrt() * env.reward_bound() / (1.0 - gamma)),
            seed,
            inner_loop: self.inner_loop,
            algorithm: self.algorithm,
            cadence: self.cadence,
            exploitability_cadence: self.exploitability_cadence,
            projections: self.projections,
            record_parameters_every: None,
        }
    }
}

/// The reference solver with the standard value-iteration budget.
pub fn solve_reference(env: &dyn Environment, outer_iters: usize) -> Result<ReferenceSolution> {
    let vi_iters = default_max_iters(env.discount(), env.reward_bound(), VALUE_TOL);
    model_based_fpi_fp(env, outer_iters, vi_iters, VALUE_TOL)
}

fn cell(x: f64) -> Result<String> {
    if x.is_finite() {
        Ok(x.to_string())
    } else {
        Err(Error::NonFinite("csv cell"))
    }
}

fn opt_cell(x: Option<f64>) -> Result<String> {
    x.map_or(Ok(String::new()), cell)
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `reference.csv` (long format `section,i,j,value`) and `mu_star.txt`.
pub fn write_reference(sol: &ReferenceSolution, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    let mut push = |section: &str, i: usize, j: usize, v: f64| -> Result<()> {
        rows.push(vec![
            section.to_string(),
            i.to_string(),
            j.to_string(),
            cell(v)?,
        ]);
        Ok(())
    };
    for (s, &m) in sol.mu_star.iter().enumerate() {
        push("mu", s, 0, m)?;
    }
    for (s, row) in sol.q_star.iter().enumerate() {
        for (a, &q) in row.iter().enumerate() {
            push("q", s, a, q)?;
        }
    }
    for (s, row) in sol.policy.iter().enumerate() {
        for (a, &p) in row.iter().enumerate() {
            push("policy", s, a, p)?;
        }
    }
    for (k, &e) in sol.history.iter().enumerate() {
        push("expl", k, 0, e)?;
    }
    push("final", 0, 0, sol.final_exploitability)?;
    push("iterations", 0, 0, sol.iterations as f64)?;
    write_csv(
        &out.join("reference.csv"),
        &["section", "i", "j", "value"],
        &rows,
    )?;
    let mut text = String::new();
    for &m in &sol.mu_star {
        text.push_str(&cell(m)?);
        text.push('\n');
    }
    fs::write(out.join("mu_star.txt"), text)?;
    Ok(())
}

/// Reads a `reference.csv` written by [`write_reference`].
pub fn load_reference(path: &Path) -> Result<ReferenceSolution> {
    let bad = |msg: String| Error::Reference(format!("{}: {msg}", path.display()));
    let mut rdr = csv::Reader::from_path(path)?;
    let mut sol = ReferenceSolution {
        q_star: Vec::new(),
        mu_star: Vec::new(),
        policy: Vec::new(),
        iterations: 0,
        final_exploitability: f64::NAN,
        history: Vec::new(),
    };
    let place = |table: &mut Vec<Vec<f64>>, i: usize, j: usize, v: f64| {
        if table.len() <= i {
            table.resize(i + 1, Vec::new());
        }
        if table[i].len() <= j {
            table[i].resize(j + 1, f64::NAN);
        }
        table[i][j] = v;
    };
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 4 {
            return Err(bad(format!("row {} has {} fields", line + 2, rec.len())));
        }
        let parse_idx = |k: usize| -> Result<usize> {
            rec[k]
                .parse()
                .map_err(|_| bad(format!("row {}: bad index `{}`", line + 2, &rec[k])))
        };
        let (i, j) = (parse_idx(1)?, parse_idx(2)?);
        let v: f64 = rec[3]
            .parse()
            .map_err(|_| bad(format!("row {}: bad value `{}`", line + 2, &rec[3])))?;
        match &rec[0] {
            "mu" => {
                if sol.mu_star.len() <= i {
                    sol.mu_star.resize(i + 1, f64::NAN);
                }
                sol.mu_star[i] = v;
            }
            "q" => place(&mut sol.q_star, i, j, v),
            "policy" => place(&mut sol.policy, i, j, v),
            "expl" => {
                if sol.history.len() <= i {
                    sol.history.resize(i + 1, f64::NAN);
                }
                sol.history[i] = v;
            }
            "final" => sol.final_exploitability = v,
            "iterations" => sol.iterations = v as usize,
            other => return Err(bad(format!("unknown section `{other}`"))),
        }
    }
    let finite = sol.mu_star.iter().all(|x| x.is_finite())
        && sol.history.iter().all(|x| x.is_finite())
        && sol.final_exploitability.is_finite()
        && sol
            .q_star
            .iter()
            .chain(&sol.policy)
            .all(|r| r.iter().all(|x| x.is_finite()));
    if sol.mu_star.is_empty() || !finite {
        return Err(bad("missing or incomplete sections".into()));
    }
    Ok(sol)
}

/// Computes the reference for `spec.env` and writes it under `out`.
pub fn cmd_reference(spec: &ExperimentSpec, out: &Path) -> Result<ReferenceSolution> {
    let env = spec.env.build()?;
    let sol = solve_reference(env.as_ref(), spec.reference_iters)?;
    write_reference(&sol, out)?;
    Ok(sol)
}

fn obtain_reference(
    spec: &ExperimentSpec,
    env: &dyn Environment,
    out: &Path,
) -> Result<ReferenceSolution> {
    match &spec.reference {
        Some(path) => {
            let sol = load_reference(path)?;
            if sol.mu_star.len() != env.states().size() {
                return Err(Error::Reference(format!(
                    "{} has {} states, environment has {}",
                    path.display(),
                    sol.mu_star.len(),
                    env.states().size()
                )));
            }
            Ok(sol)
        }
        None => {
            let sol = solve_reference(env, spec.reference_iters)?;
            write_reference(&sol, out)?;
            Ok(sol)
        }
    }
}

/// One run per seed, in parallel, returned in seed order.
pub fn run_seeds(
    spec: &ExperimentSpec,
    env: &dyn Environment,
    phi: &FeatureMap,
    basis: &MeasureBasis,
    mu_ref: &[f64],
) -> Result<Vec<RunRecord>> {
    let seeds = spec.run_seeds()?;
    let pol = spec.policy_operator(env);
    let target = Target {
        mu_ref,
        xi_ref: None,
    };
    seeds
        .par_iter()
        .map(|&seed| {
            let cfg = spec.run_config(env, phi, seed);
            match spec.algorithm.fpi_variant() {
                None => run_semisgd(env, &cfg, phi, basis, pol, target),
                Some(v) => run_online_fpi(env, &cfg, v, phi, basis, pol, target),
            }
        })
        .collect()
}

/// Mean and standard deviation (with `n - 1`, zero for one sample).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub step: u64,
    pub mse_mean: f64,
    pub mse_std: f64,
    /// Present when every seed evaluated exploitability at this step.
    pub expl: Option<(f64, f64)>,
}

pub fn aggregate(records: &[RunRecord]) -> Result<Vec<AggregateRow>> {
    let first = records
        .first()
        .ok_or_else(|| Error::config("seeds", "at least one seed is required"))?;
    (0..first.snapshots.len())
        .map(|k| {
            let step = first.snapshots[k].step;
            let mut mses = Vec::with_capacity(records.len());
            let mut expls = Vec::with_capacity(records.len());
            for r in records {
                let snap =
                    r.snapshots
                        .get(k)
                        .filter(|s| s.step == step)
                        .ok_or(Error::LengthMismatch {
                            expected: first.snapshots.len(),
                            got: r.snapshots.len(),
                        })?;
                mses.push(snap.mse);
                expls.extend(snap.exploitability);
            }
            let (mse_mean, mse_std) = mean_std(&mses);
            let expl = (expls.len() == records.len()).then(|| mean_std(&expls));
            Ok(AggregateRow {
                step,
                mse_mean,
                mse_std,
                expl,
            })
        })
        .collect()
}

fn write_run(rec: &RunRecord, path: &Path) -> Result<()> {
    let rows = rec
        .snapshots
        .iter()
        .map(|s| {
            Ok(vec![
                s.step.to_string(),
                cell(s.mse)?,
                opt_cell(s.exploitability)?,
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    write_csv(path, &["step", "mse", "exploitability"], &rows)
}

fn aggregate_cells(row: &AggregateRow) -> Result<Vec<String>> {
    Ok(vec![
        cell(row.mse_mean)?,
        cell(row.mse_std)?,
        opt_cell(row.expl.map(|e| e.0))?,
        opt_cell(row.expl.map(|e| e.1))?,
    ])
}

fn write_aggregate(rows: &[AggregateRow], path: &Path) -> Result<()> {
    let rows = rows
        .iter()
        .map(|r| {
            let mut cells = vec![r.step.to_string()];
            cells.extend(aggregate_cells(r)?);
            Ok(cells)
        })
        .collect::<Result<Vec<_>>>()?;
    write_csv(
        path,
        &["step", "mse_mean", "mse_std", "expl_mean", "expl_std"],
        &rows,
    )
}

struct Prepared {
    env: Box<dyn Environment>,
    phi: FeatureMap,
    basis: MeasureBasis,
    reference: ReferenceSolution,
}

fn prepare(spec: &ExperimentSpec, out: &Path) -> Result<Prepared> {
    fs::create_dir_all(out)?;
    let env = spec.env.build()?;
    let phi = one_hot_feature_map(env.states(), env.actions());
    let basis = spec.basis.build(env.as_ref())?;
    let reference = obtain_reference(spec, env.as_ref(), out)?;
    Ok(Prepared {
        env,
        phi,
        basis,
        reference,
    })
}

/// Runs every seed and writes `run_seed<k>.csv` and `aggregate.csv`.
pub fn cmd_run(spec: &ExperimentSpec, out: &Path) -> Result<Vec<AggregateRow>> {
    let p = prepare(spec, out)?;
    let records = run_seeds(spec, p.env.as_ref(), &p.phi, &p.basis, &p.reference.mu_star)?;
    for rec in &records {
        write_run(rec, &out.join(format!("run_seed{}.csv", rec.seed)))?;
    }
    let rows = aggregate(&records)?;
    write_aggregate(&rows, &out.join("aggregate.csv"))?;
    Ok(rows)
}

/// One final aggregate row per inner-loop length, same budget throughout.
/// Uses the configured FPI variant, vanilla when the algorithm is SemiSGD.
pub fn cmd_sweep_k(
    spec: &ExperimentSpec,
    k_list: &[usize],
    out: &Path,
) -> Result<Vec<(usize, AggregateRow)>> {
    if k_list.is_empty() {
        return Err(Error::config("k_list", "must not be empty"));
    }
    let p = prepare(spec, out)?;
    let algorithm = match spec.algorithm {
        Algorithm::Semisgd => Algorithm::FpiVanilla,
        a => a,
    };
    let mut results = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let mut s = spec.clone();
        s.algorithm = algorithm;
        s.inner_loop = k;
        let records = run_seeds(&s, p.env.as_ref(), &p.phi, &p.basis, &p.reference.mu_star)?;
        let last = aggregate(&records)?
            .pop()
            .ok_or(Error::NonFinite("empty run"))?;
        results.push((k, last));
    }
    let rows = results
        .iter()
        .map(|(k, r)| {
            let mut cells = vec![k.to_string()];
            cells.extend(aggregate_cells(r)?);
            Ok(cells)
        })
        .collect::<Result<Vec<_>>>()?;
    write_csv(
        &out.join("sweep_k.csv"),
        &["k", "mse_mean", "mse_std", "expl_mean", "expl_std"],
        &rows,
    )?;
    Ok(results)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LfaMethod {
    Discretization,
    PaLfa,
}

impl LfaMethod {
    pub fn name(self) -> &'static str {
        match self {
            LfaMethod::Discretization => "discretization",
            LfaMethod::PaLfa => "pa-lfa",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LfaRow {
    pub d2: usize,
    pub method: LfaMethod,
    pub mse_mean: f64,
    pub mse_std: f64,
}

/// SemiSGD with a `d2`-dimensional population estimate: `d2` grid blocks
/// versus `d2` tan-normal basis measures. Action values stay at the native
/// resolution of `spec.env`; both arms are scored at the final step.
pub fn cmd_compare_lfa(
    spec: &ExperimentSpec,
    d2_list: &[usize],
    out: &Path,
) -> Result<Vec<LfaRow>> {
    if d2_list.is_empty() {
        return Err(Error::config("d2_list", "must not be empty"));
    }
    let p = prepare(spec, out)?;
    let n = p.env.states().size();
    let mut s = spec.clone();
    s.algorithm = Algorithm::Semisgd;
    let mut results = Vec::with_capacity(2 * d2_list.len());
    for &d2 in d2_list {
        let (c, v) = match spec.basis {
            BasisSpec::TanNormal { c, v, .. } => (c, v),
            BasisSpec::OneHot => (None, None),
        };
        let arms = [
            (LfaMethod::Discretization, coarse_grid_basis(n, d2)?),
            (
                LfaMethod::PaLfa,
                BasisSpec::TanNormal { d2, c, v }.build(p.env.as_ref())?,
            ),
        ];
        for (method, basis) in arms {
            let records = run_seeds(&s, p.env.as_ref(), &p.phi, &basis, &p.reference.mu_star)?;
            let finals: Vec<f64> = records
                .iter()
                .map(|r| r.snapshots.last().map_or(f64::NAN, |x| x.mse))
                .collect();
            let (mse_mean, mse_std) = mean_std(&finals);
            results.push(LfaRow {
                d2,
                method,
                mse_mean,
                mse_std,
            });
        }
    }
    let rows = results
        .iter()
        .map(|r| {
            Ok(vec![
                r.d2.to_string(),
                r.method.name().to_string(),
                cell(r.mse_mean)?,
                cell(r.mse_std)?,
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    write_csv(
        &out.join("compare_lfa.csv"),
        &["d2", "method", "mse_mean", "mse_std"],
        &rows,
    )?;
    Ok(results)
}

/// Speed control at the 1/200 reference granularity, `T = 1e4`, no
/// exploitability evaluations.
pub fn compare_lfa_defaults() -> ExperimentSpec {
    ExperimentSpec {
        env: EnvSpec::RingRoad {
            states: Some(200),
            actions: Some(50),
        },
        total_steps: 10_000,
        exploitability_cadence: None,
        ..ExperimentSpec::default()
    }
}
