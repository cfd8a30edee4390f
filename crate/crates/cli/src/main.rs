use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use semisgd::experiment::{
    cmd_compare_lfa, cmd_reference, cmd_run, cmd_sweep_k, compare_lfa_defaults, EnvSpec,
    ExperimentSpec,
};
use semisgd::types::{Algorithm, StepSchedule};
use semisgd::{Error, ErrorKind, Result};

#[derive(Parser)]
#[command(
    name = "semisgd",
    version,
    about = "Mean field game learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the reference equilibrium and write reference.csv.
    Reference(Common),
    /// Run every seed and write per-seed and aggregate CSVs.
    Run(Common),
    /// Sweep the inner-loop length of online FPI at a fixed budget.
    SweepK {
        #[command(flatten)]
        common: Common,
        /// Comma-separated inner-loop lengths.
        #[arg(long, default_value = "1,10,100,500")]
        k_list: String,
    },
    /// Grid discretization versus tan-normal basis for the population.
    CompareLfa {
        #[command(flatten)]
        common: Common,
        /// Comma-separated basis sizes.
        #[arg(long, default_value = "2,5,8,10,20,25,40,50")]
        d2_list: String,
    },
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// ring-road[:S,A], flocking[:S,A], sioux-falls[:path] or toy[:n,m,seed].
    #[arg(long)]
    env: Option<String>,
    /// semisgd or fpi.
    #[arg(long)]
    algo: Option<String>,
    /// FPI variant: vanilla, fp, md or er.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    steps: Option<u64>,
    /// Constant step size.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    inner_k: Option<usize>,
    /// Number of seeds, numbered from 0.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    seed_offset: Option<u64>,
    #[arg(long)]
    cadence: Option<u64>,
    #[arg(long)]
    no_exploitability: bool,
    /// Cached reference.csv to reuse.
    #[arg(long)]
    reference: Option<PathBuf>,
}

impl Common {
    fn spec(&self, base: ExperimentSpec) -> Result<ExperimentSpec> {
        let mut spec = match &self.config {
            Some(path) => ExperimentSpec::load(path)?,
            None => base,
        };
        if let Some(env) = &self.env {
            spec.env = env.parse::<EnvSpec>()?;
        }
        match (self.algo.as_deref(), self.variant.as_deref()) {
            (None, None) => {}
            (Some("semisgd"), Some(_)) => {
                return Err(Error::config("variant", "only applies to fpi"));
            }
            (Some("semisgd"), None) => spec.algorithm = Algorithm::Semisgd,
            (Some("fpi") | None, Some(v)) => spec.algorithm = format!("fpi-{v}").parse()?,
            (Some(a), None) => spec.algorithm = a.parse()?,
            (Some(a), Some(_)) => {
                return Err(Error::config("algo", format!("unknown algorithm `{a}`")))
            }
        }
        if let Some(t) = self.steps {
            spec.total_steps = t;
        }
        if let Some(a) = self.alpha {
            spec.step_size = StepSchedule::Constant(a);
        }
        if let Some(k) = self.inner_k {
            spec.inner_loop = k;
        }
        if let Some(n) = self.seeds {
            spec.seeds = (0..n).collect();
        }
        if let Some(o) = self.seed_offset {
            spec.seed_offset = o;
        }
        if let Some(c) = self.cadence {
            spec.cadence = c;
        }
        if self.no_exploitability {
            spec.exploitability_cadence = None;
        }
        if let Some(r) = &self.reference {
            spec.reference = Some(r.clone());
        }
        spec.run_seeds()?;
        Ok(spec)
    }
}

fn parse_list(field: &str, text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| {
            x.parse()
                .map_err(|_| Error::config(field, format!("bad entry `{x}`")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Reference(c) => {
            let sol = cmd_reference(&c.spec(ExperimentSpec::default())?, &c.out)?;
            println!(
                "reference: {} iterations, exploitability {:e}",
                sol.iterations, sol.final_exploitability
            );
        }
        Command::Run(c) => {
            let rows = cmd_run(&c.spec(ExperimentSpec::default())?, &c.out)?;
            if let Some(last) = rows.last() {
                println!(
                    "step {}: mse {:e} ± {:e}",
                    last.step, last.mse_mean, last.mse_std
                );
            }
        }
        Command::SweepK { common, k_list } => {
            for (k, row) in cmd_sweep_k(
                &common.spec(ExperimentSpec::default())?,
                &parse_list("k_list", &k_list)?,
                &common.out,
            )? {
                println!("K={k}: mse {:e} ± {:e}", row.mse_mean, row.mse_std);
            }
        }
        Command::CompareLfa { common, d2_list } => {
            for row in cmd_compare_lfa(
                &common.spec(compare_lfa_defaults())?,
                &parse_list("d2_list", &d2_list)?,
                &common.out,
            )? {
                println!(
                    "d2={} {}: mse {:e} ± {:e}",
                    row.d2,
                    row.method.name(),
                    row.mse_mean,
                    row.mse_std
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Numeric => 3,
                ErrorKind::Io => 4,
            })
        }
    }
}
