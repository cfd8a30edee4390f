use super::{step_size, LearnerState, Recorder, RunRecord, Target};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::lfa::{FeatureMap, MeasureBasis};
use crate::policy::PolicyOperator;
use crate::types::{FpiVariant, RunConfig};

/// Inverse-temperature divisor of the entropy-regularized variant.
pub const ER_TEMPERATURE_DIVISOR: f64 = 1e5;

/// `(1 - alpha) hist + alpha fresh`, renormalized to unit mass.
pub(crate) fn fp_mix(hist: &[f64], fresh: &[f64], alpha: f64) -> Vec<f64> {
    let mut mixed: Vec<f64> = hist
        .iter()
        .zip(fresh)
        .map(|(h, f)| (1.0 - alpha) * h + alpha * f)
        .collect();
    let total: f64 = mixed.iter().sum();
    mixed.iter_mut().for_each(|x| *x /= total);
    mixed
}

/// `hist + alpha fresh`.
pub(crate) fn md_mix(hist: &[f64], fresh: &[f64], alpha: f64) -> Vec<f64> {
    hist.iter().zip(fresh).map(|(h, f)| h + alpha * f).collect()
}

/// Online fixed-point iteration: `T / K` outer loops of `K` samples each.
///
/// Within a loop the behavior policy `op(<phi, q>)` and the game's population
/// argument are frozen at their loop-start values while every sample updates
/// the population estimate (Monte Carlo) and the action values (TD) of the
/// frozen policy. The loop end hands the fresh estimates to the next loop,
/// mixed according to `variant`. The Markov chain is never reset.
pub fn run_online_fpi(
    env: &dyn Environment,
    cfg: &RunConfig,
    variant: FpiVariant,
    phi: &FeatureMap,
    basis: &MeasureBasis,
    pol: PolicyOperator,
    target: Target<'_>,
) -> Result<RunRecord> {
    cfg.validate()?;
    let k = cfg.inner_loop as u64;
    if k == 0 || k > cfg.total_steps.max(1) {
        return Err(Error::config(
            "inner_loop",
            format!("inner loop {k} must lie in 1..={}", cfg.total_steps),
        ));
    }
    let op = match (variant, pol) {
        (FpiVariant::Er, PolicyOperator::Softmax(beta)) => {
            PolicyOperator::Softmax(beta / ER_TEMPERATURE_DIVISOR)
        }
        (FpiVariant::Er, PolicyOperator::Argmax) => {
            PolicyOperator::Softmax(cfg.inverse_temperature / ER_TEMPERATURE_DIVISOR)
        }
        _ => pol,
    };

    let mut ls = LearnerState::initial(env, phi, basis, cfg.seed)?;
    let mut q = ls.xi.theta.clone();
    let mut q_hist = vec![0.0; q.len()];
    let mut mu = basis.represent(&ls.xi.eta).into_owned();
    let mut rec = Recorder::new(env, phi, cfg, target, &ls.xi);
    rec.observe(0, &ls.xi, &mu, &q, op)?;

    let mut t = 0;
    while t < cfg.total_steps {
        let start = t;
        let end = (start + k).min(cfg.total_steps);
        while t < end {
            let alpha = step_size(&cfg.step_size, t)?;
            let obs = ls.observe(env, phi, &q, op, &mu)?;
            ls.update(&obs, phi, basis, alpha, cfg)?;
            t += 1;
            if t == end {
                let alpha = step_size(&cfg.step_size, start)?;
                let fresh = basis.represent(&ls.xi.eta);
                match variant {
                    FpiVariant::Vanilla | FpiVariant::Er => {
                        q.copy_from_slice(&ls.xi.theta);
                        mu = fresh.into_owned();
                    }
                    FpiVariant::Fp => {
                        q.copy_from_slice(&ls.xi.theta);
                        mu = fp_mix(&mu, &fresh, alpha);
                    }
                    FpiVariant::Md => {
                        q = md_mix(&q_hist, &ls.xi.theta, alpha);
                        q_hist.copy_from_slice(&q);
                        mu = fresh.into_owned();
                    }
                }
            }
            if rec.due(t) {
                let reported = match variant {
                    FpiVariant::Fp => mu.clone(),
                    _ => basis.represent(&ls.xi.eta).into_owned(),
                };
                rec.observe(t, &ls.xi, &reported, &q, op)?;
            }
        }
    }
    Ok(rec.record)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fp_with_unit_weight_replaces_the_population() {
        let hist = [0.7, 0.2, 0.1];
        let fresh = [0.1, 0.1, 0.8];
        assert_eq!(fp_mix(&hist, &fresh, 1.0), fresh.to_vec());
        let half = fp_mix(&hist, &fresh, 0.5);
        assert!((half[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn md_with_zero_weight_keeps_q() {
        let hist = [1.0, -2.0, 0.5];
        assert_eq!(md_mix(&hist, &[9.0, 9.0, 9.0], 0.0), hist.to_vec());
    }
}
