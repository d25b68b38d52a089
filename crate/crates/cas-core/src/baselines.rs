//! Baseline selection policies: SAT (fixed-probability sampling), E-AT
//! (error-proportional sampling from a periodically refreshed accuracy
//! snapshot), Order (fixed cycling), and AVG (joint weighted-average
//! training). They share the environment's observation interfaces so a
//! head-to-head run differs from the CAS scheduler only in how the next
//! perturbation is chosen.

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::env::{EnvError, EnvState, QuadraticRisk};
use crate::linalg::axpy;
use crate::rng::sample_categorical;
use crate::scheduler::PerturbationSpec;

/// Simplex validation slack for fixed sampling probabilities.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// How often (in steps) E-AT refreshes its accuracy snapshot by default.
pub const EAT_REFRESH_PERIOD: u64 = 100;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("probabilities must be nonnegative and sum to 1 (sum = {sum})")]
    InvalidSimplex { sum: f64 },
    #[error("accuracy {value} is outside (0, 1]")]
    AccuracyOutOfRange { value: f64 },
    #[error("order sequence is empty")]
    EmptySequence,
    #[error("at least one arm is required")]
    NoArms,
    #[error("weight must be positive, got {value}")]
    NonPositiveWeight { value: f64 },
}

/// Which baseline drives selection, with its policy-specific state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum BaselinePolicy {
    Sat { probs: Vec<f64> },
    Eat { accuracies: Vec<f64>, refresh_period: u64 },
    Order { sequence: Vec<usize> },
    Avg,
}

/// Normalize positive weights into SAT's default sampling probabilities.
pub fn weight_proportional_probs(weights: &[f64]) -> Result<Vec<f64>, BaselineError> {
    if weights.is_empty() {
        return Err(BaselineError::NoArms);
    }
    for &w in weights {
        if !(w > 0.0 && w.is_finite()) {
            return Err(BaselineError::NonPositiveWeight { value: w });
        }
    }
    let total: f64 = weights.iter().sum();
    Ok(weights.iter().map(|w| w / total).collect())
}

/// Categorical draw from fixed probabilities.
pub fn sat_select<R: Rng>(probs: &[f64], rng: &mut R) -> Result<usize, BaselineError> {
    if probs.is_empty() {
        return Err(BaselineError::NoArms);
    }
    let sum: f64 = probs.iter().sum();
    if probs.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(BaselineError::InvalidSimplex { sum });
    }
    Ok(sample_categorical(probs, rng))
}

/// E-AT sampling weights: probability proportional to the error rate
/// 1 - accuracy, falling back to uniform when every accuracy is 1.
pub fn eat_probabilities(accuracies: &[f64]) -> Result<Vec<f64>, BaselineError> {
    if accuracies.is_empty() {
        return Err(BaselineError::NoArms);
    }
    for &a in accuracies {
        if !(a > 0.0 && a <= 1.0) {
            return Err(BaselineError::AccuracyOutOfRange { value: a });
        }
    }
    let errors: Vec<f64> = accuracies.iter().map(|a| 1.0 - a).collect();
    let total: f64 = errors.iter().sum();
    if total <= 0.0 {
        let uniform = 1.0 / accuracies.len() as f64;
        return Ok(vec![uniform; accuracies.len()]);
    }
    Ok(errors.into_iter().map(|e| e / total).collect())
}

/// Sample an arm with probability proportional to its error rate.
pub fn eat_select<R: Rng>(accuracies: &[f64], rng: &mut R) -> Result<usize, BaselineError> {
    let probs = eat_probabilities(accuracies)?;
    Ok(sample_categorical(&probs, rng))
}

/// Fixed cycling: the arm at position `step` modulo the sequence length.
pub fn order_select(sequence: &[usize], step: u64) -> Result<usize, BaselineError> {
    if sequence.is_empty() {
        return Err(BaselineError::EmptySequence);
    }
    Ok(sequence[(step % sequence.len() as u64) as usize])
}

/// Default cycling order: arms sorted by descending weight, ties broken by
/// ascending id.
pub fn default_order(specs: &[PerturbationSpec]) -> Vec<usize> {
    let mut order: Vec<(usize, f64)> = specs.iter().map(|s| (s.id, s.weight)).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    order.into_iter().map(|(id, _)| id).collect()
}

/// One joint training step on the weighted mean of all adversarial risks,
/// hybridized with the clean risk. Evaluates every risk's gradient (cost
/// grows with the number of arms, unlike the samplers) and returns every
/// post-step risk value.
pub fn avg_step(
    env: &mut EnvState,
    risks: &[QuadraticRisk],
    clean: &QuadraticRisk,
    weights: &[f64],
    beta: f64,
) -> Result<Vec<f64>, EnvError> {
    if risks.is_empty() {
        return Err(EnvError::EmptyRisks);
    }
    if risks.len() != weights.len() {
        return Err(EnvError::DimensionMismatch { expected: risks.len(), got: weights.len() });
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(EnvError::BetaOutOfRange { value: beta });
    }
    for &w in weights {
        if !(w > 0.0 && w.is_finite()) {
            return Err(EnvError::InvalidParameter { name: "weight", value: w });
        }
    }
    let weight_total: f64 = weights.iter().sum();
    let mut adv_grad = vec![0.0; env.theta.len()];
    for (risk, &w) in risks.iter().zip(weights) {
        let g = risk.gradient(&env.theta)?;
        env.grad_evals += 1;
        axpy(&mut adv_grad, &g, w / weight_total);
    }
    let clean_grad = clean.gradient(&env.theta)?;
    axpy(&mut env.theta, &adv_grad, -env.learning_rate * beta);
    axpy(&mut env.theta, &clean_grad, -env.learning_rate * (1.0 - beta));
    env.step += 1;
    if env.theta.iter().any(|x| !x.is_finite()) {
        return Err(EnvError::Diverged { step: env.step });
    }
    risks.iter().map(|r| r.value(&env.theta)).collect()
}
