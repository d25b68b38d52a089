//! Experiment driver: runs one policy against one seeded environment for a
//! fixed horizon, emitting a per-iteration record stream plus end-of-run
//! statistics. The CLI layers file formats on top of this; tests drive it
//! directly.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::baselines::{
    avg_step, default_order, eat_probabilities, order_select, weight_proportional_probs,
    BaselineError, EAT_REFRESH_PERIOD,
};
use crate::env::{
    accuracy_proxy, generate_clean_risk, generate_risks, generate_theta, train_step, EnvError,
    EnvState, QuadraticRisk,
};
use crate::rng::{sample_categorical, substream};
use crate::scheduler::{PerturbationSpec, SchedulerConfig, SchedulerError, SchedulerState};

#[derive(Debug, Error, PartialEq)]
pub enum DriverError {
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("experiment has {specs} arm specs but {risks} risks")]
    ArmRiskMismatch { specs: usize, risks: usize },
}

/// Selection policy for a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Policy {
    /// The CAS scheduler.
    Cas,
    /// Fixed weight-proportional sampling probabilities.
    Sat,
    /// Error-proportional sampling from a periodically refreshed accuracy
    /// snapshot.
    Eat { refresh_period: u64 },
    /// Deterministic cycling in descending-weight order.
    Order,
    /// Joint training on the weighted average of every adversarial risk.
    Avg,
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Cas => "cas",
            Policy::Sat => "sat",
            Policy::Eat { .. } => "eat",
            Policy::Order => "order",
            Policy::Avg => "avg",
        }
    }

    pub fn default_eat() -> Self {
        Policy::Eat { refresh_period: EAT_REFRESH_PERIOD }
    }
}

/// A fully materialized experiment: arms, risk surfaces, and the model state.
/// Risk strengths already include each arm's epsilon.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub specs: Vec<PerturbationSpec>,
    pub scheduler_config: SchedulerConfig,
    pub risks: Vec<QuadraticRisk>,
    pub clean: QuadraticRisk,
    pub env: EnvState,
    pub horizon: u64,
}

impl Experiment {
    /// Build the standard seeded experiment: one generated risk per arm
    /// (scaled by the arm's epsilon), a clean risk, and a generated starting
    /// point.
    #[allow(clippy::too_many_arguments)]
    pub fn generate(
        specs: Vec<PerturbationSpec>,
        scheduler_config: SchedulerConfig,
        dimension: usize,
        conflict: f64,
        learning_rate: f64,
        noise_scale: f64,
        risk_seed: u64,
        horizon: u64,
    ) -> Result<Self, DriverError> {
        let base = generate_risks(specs.len(), dimension, conflict, risk_seed);
        let mut risks = Vec::with_capacity(specs.len());
        for (spec, risk) in specs.iter().zip(base) {
            risks.push(risk.with_strength(spec.epsilon)?);
        }
        let clean = generate_clean_risk(dimension, risk_seed);
        let env = EnvState::new(generate_theta(dimension, risk_seed), learning_rate, noise_scale)?;
        Ok(Self { specs, scheduler_config, risks, clean, env, horizon })
    }

    fn weights(&self) -> Vec<f64> {
        self.specs.iter().map(|s| s.weight).collect()
    }
}

/// One trace row: what was selected, what it cost, and the sampling
/// distribution it was drawn from. `arm` is `None` for AVG, which trains on
/// every arm each iteration.
#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub arm: Option<usize>,
    pub loss: f64,
    pub self_reward: f64,
    pub tradeoff_reward: f64,
    pub probabilities: Vec<f64>,
}

/// End-of-run statistics.
#[derive(Debug, Clone, Serialize)]
pub struct RunStats {
    pub final_accuracies: Vec<f64>,
    pub weighted_accuracy: f64,
    pub selection_frequencies: Vec<f64>,
    pub grad_evals: u64,
    pub iterations: u64,
}

/// What the scheduler observes after training on an arm: the arm's
/// post-update adversarial loss, under the same multiplicative log-normal
/// noise model as the training loss.
fn observe_adv_loss<R: Rng>(
    env: &EnvState,
    risk: &QuadraticRisk,
    rng: &mut R,
) -> Result<f64, EnvError> {
    let mut value = risk.value(&env.theta)?;
    if env.noise_scale > 0.0 {
        let z: f64 = rng.sample(StandardNormal);
        value *= (env.noise_scale * z).exp();
    }
    Ok(value)
}

fn train_and_observe<R: Rng>(
    env: &mut EnvState,
    risk: &QuadraticRisk,
    clean: &QuadraticRisk,
    beta: f64,
    rng: &mut R,
) -> Result<f64, EnvError> {
    train_step(env, risk, clean, beta, rng)?;
    observe_adv_loss(env, risk, rng)
}

/// Run `policy` on the experiment, calling `sink` once per iteration. All
/// randomness derives from `seed` through the fixed substream tags
/// `"policy-select"` and `"env-noise"`, so a (experiment, policy, seed)
/// triple fully determines the output.
///
/// The per-iteration `loss` is the selected arm's observed adversarial loss
/// (what the CAS reward machinery windows); the hybrid loss drives the
/// parameter update inside `train_step` but is not recorded. For AVG the
/// reported loss is the weighted mean adversarial loss across arms.
pub fn run_policy<F>(
    experiment: &Experiment,
    policy: &Policy,
    seed: u64,
    mut sink: F,
) -> Result<RunStats, DriverError>
where
    F: FnMut(&IterationRecord),
{
    let arms = experiment.specs.len();
    if experiment.risks.len() != arms {
        return Err(DriverError::ArmRiskMismatch { specs: arms, risks: experiment.risks.len() });
    }
    let weights = experiment.weights();
    let beta = experiment.scheduler_config.beta;
    let mut env = experiment.env.clone();
    let mut policy_rng = substream(seed, "policy-select");
    let mut env_rng = substream(seed, "env-noise");
    let mut counts = vec![0u64; arms];

    let mut scheduler = match policy {
        Policy::Cas => Some(SchedulerState::new(
            experiment.specs.clone(),
            experiment.scheduler_config,
        )?),
        _ => None,
    };
    let sat_probs = match policy {
        Policy::Sat => Some(weight_proportional_probs(&weights)?),
        _ => None,
    };
    let order_sequence = match policy {
        Policy::Order => Some(default_order(&experiment.specs)),
        _ => None,
    };
    let mut eat_probs: Option<Vec<f64>> = None;
    let avg_probabilities = weight_proportional_probs(&weights)?;

    for t in 0..experiment.horizon {
        let record = match policy {
            Policy::Cas => {
                let state = scheduler.as_mut().expect("cas scheduler initialized");
                let snapshot = state.evaluate()?;
                let arm = sample_categorical(&snapshot.probabilities, &mut policy_rng);
                let loss = train_and_observe(
                    &mut env,
                    &experiment.risks[arm],
                    &experiment.clean,
                    beta,
                    &mut env_rng,
                )?;
                state.record_observation(arm, loss)?;
                counts[arm] += 1;
                IterationRecord {
                    iteration: t,
                    arm: Some(arm),
                    loss,
                    self_reward: snapshot.self_rewards[arm],
                    tradeoff_reward: snapshot.tradeoff_rewards[arm],
                    probabilities: snapshot.probabilities,
                }
            }
            Policy::Sat => {
                let probs = sat_probs.as_ref().expect("sat probabilities initialized");
                let arm = sample_categorical(probs, &mut policy_rng);
                let loss = train_and_observe(
                    &mut env,
                    &experiment.risks[arm],
                    &experiment.clean,
                    beta,
                    &mut env_rng,
                )?;
                counts[arm] += 1;
                IterationRecord {
                    iteration: t,
                    arm: Some(arm),
                    loss,
                    self_reward: 0.0,
                    tradeoff_reward: 0.0,
                    probabilities: probs.clone(),
                }
            }
            Policy::Eat { refresh_period } => {
                let period = (*refresh_period).max(1);
                if t % period == 0 || eat_probs.is_none() {
                    let accuracies: Result<Vec<f64>, EnvError> = experiment
                        .risks
                        .iter()
                        .map(|r| accuracy_proxy(r.value(&env.theta)?))
                        .collect();
                    eat_probs = Some(eat_probabilities(&accuracies?)?);
                }
                let probs = eat_probs.as_ref().expect("eat snapshot initialized");
                let arm = sample_categorical(probs, &mut policy_rng);
                let loss = train_and_observe(
                    &mut env,
                    &experiment.risks[arm],
                    &experiment.clean,
                    beta,
                    &mut env_rng,
                )?;
                counts[arm] += 1;
                IterationRecord {
                    iteration: t,
                    arm: Some(arm),
                    loss,
                    self_reward: 0.0,
                    tradeoff_reward: 0.0,
                    probabilities: probs.clone(),
                }
            }
            Policy::Order => {
                let sequence = order_sequence.as_ref().expect("order sequence initialized");
                let arm = order_select(sequence, t)?;
                let loss = train_and_observe(
                    &mut env,
                    &experiment.risks[arm],
                    &experiment.clean,
                    beta,
                    &mut env_rng,
                )?;
                counts[arm] += 1;
                let mut probabilities = vec![0.0; arms];
                probabilities[arm] = 1.0;
                IterationRecord {
                    iteration: t,
                    arm: Some(arm),
                    loss,
                    self_reward: 0.0,
                    tradeoff_reward: 0.0,
                    probabilities,
                }
            }
            Policy::Avg => {
                let values = avg_step(&mut env, &experiment.risks, &experiment.clean, &weights, beta)?;
                let weight_total: f64 = weights.iter().sum();
                let loss: f64 =
                    values.iter().zip(&weights).map(|(v, w)| v * w).sum::<f64>() / weight_total;
                IterationRecord {
                    iteration: t,
                    arm: None,
                    loss,
                    self_reward: 0.0,
                    tradeoff_reward: 0.0,
                    probabilities: avg_probabilities.clone(),
                }
            }
        };
        sink(&record);
    }

    let mut final_accuracies = Vec::with_capacity(arms);
    for risk in &experiment.risks {
        final_accuracies.push(accuracy_proxy(risk.value(&env.theta)?)?);
    }
    let weight_total: f64 = weights.iter().sum();
    let weighted_accuracy = final_accuracies
        .iter()
        .zip(&weights)
        .map(|(a, w)| a * w)
        .sum::<f64>()
        / weight_total;
    let selection_frequencies: Vec<f64> = if experiment.horizon == 0 {
        vec![0.0; arms]
    } else if matches!(policy, Policy::Avg) {
        // AVG trains every arm each step with these effective shares
        weight_proportional_probs(&weights)?
    } else {
        counts.iter().map(|&c| c as f64 / experiment.horizon as f64).collect()
    };
    Ok(RunStats {
        final_accuracies,
        weighted_accuracy,
        selection_frequencies,
        grad_evals: env.grad_evals,
        iterations: experiment.horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specs(weights: &[f64]) -> Vec<PerturbationSpec> {
        weights
            .iter()
            .enumerate()
            .map(|(id, &weight)| PerturbationSpec { id, weight, epsilon: 1.0 })
            .collect()
    }

    fn experiment(weights: &[f64], horizon: u64, noise: f64) -> Experiment {
        Experiment::generate(
            specs(weights),
            SchedulerConfig::default(),
            6,
            0.7,
            0.05,
            noise,
            1234,
            horizon,
        )
        .unwrap()
    }

    fn collect_run(
        exp: &Experiment,
        policy: &Policy,
        seed: u64,
    ) -> (Vec<IterationRecord>, RunStats) {
        let mut rows = Vec::new();
        let stats = run_policy(exp, policy, seed, |r| rows.push(r.clone())).unwrap();
        (rows, stats)
    }

    #[test]
    fn every_policy_is_deterministic_under_seed() {
        let exp = experiment(&[6.0, 1.0, 1.0], 300, 0.1);
        for policy in [Policy::Cas, Policy::Sat, Policy::default_eat(), Policy::Order, Policy::Avg]
        {
            let (rows_a, stats_a) = collect_run(&exp, &policy, 99);
            let (rows_b, stats_b) = collect_run(&exp, &policy, 99);
            assert_eq!(rows_a.len(), rows_b.len());
            for (a, b) in rows_a.iter().zip(&rows_b) {
                assert_eq!(a.arm, b.arm);
                assert_eq!(a.loss.to_bits(), b.loss.to_bits());
            }
            assert_eq!(stats_a.weighted_accuracy.to_bits(), stats_b.weighted_accuracy.to_bits());
        }
    }

    #[test]
    fn gradient_counts_separate_samplers_from_avg() {
        let exp = experiment(&[1.0, 1.0, 1.0, 1.0], 200, 0.0);
        for policy in [Policy::Cas, Policy::Sat, Policy::default_eat(), Policy::Order] {
            let (_, stats) = collect_run(&exp, &policy, 7);
            assert_eq!(stats.grad_evals, 200, "{} should cost T gradients", policy.name());
        }
        let (_, stats) = collect_run(&exp, &Policy::Avg, 7);
        assert_eq!(stats.grad_evals, 4 * 200);
    }

    #[test]
    fn frequencies_sum_to_one() {
        let exp = experiment(&[2.0, 3.0, 5.0], 500, 0.0);
        for policy in [Policy::Cas, Policy::Sat, Policy::default_eat(), Policy::Order, Policy::Avg]
        {
            let (_, stats) = collect_run(&exp, &policy, 5);
            let sum: f64 = stats.selection_frequencies.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "{}: {sum}", policy.name());
        }
    }

    #[test]
    fn order_trace_is_rng_independent() {
        let exp = experiment(&[6.0, 1.0, 6.0], 30, 0.0);
        let (rows_a, _) = collect_run(&exp, &Policy::Order, 1);
        let (rows_b, _) = collect_run(&exp, &Policy::Order, 2);
        let arms_a: Vec<_> = rows_a.iter().map(|r| r.arm).collect();
        let arms_b: Vec<_> = rows_b.iter().map(|r| r.arm).collect();
        assert_eq!(arms_a, arms_b);
        // descending weight, ties by id: 0, 2, 1
        assert_eq!(rows_a[0].arm, Some(0));
        assert_eq!(rows_a[1].arm, Some(2));
        assert_eq!(rows_a[2].arm, Some(1));
    }

    #[test]
    fn zero_horizon_reports_initial_state() {
        let exp = experiment(&[1.0, 1.0], 0, 0.0);
        let (rows, stats) = collect_run(&exp, &Policy::Cas, 3);
        assert!(rows.is_empty());
        assert_eq!(stats.grad_evals, 0);
        assert_eq!(stats.selection_frequencies, vec![0.0, 0.0]);
        assert!(stats.weighted_accuracy > 0.0);
    }

    #[test]
    fn training_improves_weighted_accuracy() {
        let exp = experiment(&[1.0, 1.0, 1.0], 2_000, 0.0);
        let before = {
            let zero = Experiment { horizon: 0, ..exp.clone() };
            collect_run(&zero, &Policy::Cas, 11).1.weighted_accuracy
        };
        let (_, stats) = collect_run(&exp, &Policy::Cas, 11);
        assert!(
            stats.weighted_accuracy > before,
            "training should improve the weighted proxy ({before} -> {})",
            stats.weighted_accuracy
        );
    }
}
