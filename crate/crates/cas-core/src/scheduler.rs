//! The calibrated adversarial sampling (CAS) scheduler.
//!
//! Each perturbation type is a bandit arm. Per iteration the scheduler scores
//! every arm with a two-part reward — the negated slope of its windowed
//! log-loss trajectory (self reward) plus the credit it earned for how other
//! arms' losses moved across their selection intervals (trade-off reward) —
//! exponentiates the reward, adds a UCB exploration bonus, and samples an arm
//! from the weight-scaled normalization of those scores.
//!
//! Rewards operate on log-losses throughout, so rescaling every observed loss
//! by a common positive constant changes neither reward nor, under a fixed
//! seed, the selection trace.
//!
//! Bookkeeping conventions:
//! - Pull counts start at 1 per arm so the exploration bonus is finite from
//!   the first iteration.
//! - An arm's reward terms are 0 until the data they need exists (two window
//!   entries for the self reward, two selections of the credited arm for the
//!   trade-off reward); until then the scheduler degenerates to weighted UCB
//!   exploration.
//! - Slope regression runs over positions 0..len-1 within the window, not
//!   global iteration stamps, so gaps between an arm's selections do not
//!   shrink its slope.

use std::collections::VecDeque;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::rng::sample_categorical;

/// Exponent clamp for `exp(alpha * reward)`: keeps Eq-style scores finite
/// while preserving their ordering for any realistic reward scale.
pub const EXP_CLAMP: f64 = 50.0;

/// Every arm starts with this many virtual pulls.
pub const INITIAL_PULLS: u64 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum SchedulerError {
    #[error("at least one perturbation spec is required")]
    NoArms,
    #[error("arm ids must be unique and contiguous from 0 (spec {position} has id {id})")]
    BadArmIds { position: usize, id: usize },
    #[error("arm {arm} has non-positive weight {value}")]
    NonPositiveArmWeight { arm: usize, value: f64 },
    #[error("arm {arm} has non-positive epsilon {value}")]
    NonPositiveEpsilon { arm: usize, value: f64 },
    #[error("sliding window must hold at least 2 entries, got {window}")]
    WindowTooSmall { window: usize },
    #[error("hybrid-loss weight must lie in [0, 1], got {value}")]
    BetaOutOfRange { value: f64 },
    #[error("regression needs at least 2 points, got {count}")]
    NotEnoughPoints { count: usize },
    #[error("regression indices are not distinct")]
    IdenticalIndices,
    #[error("arm {arm} is out of range for {arms} arms")]
    ArmOutOfRange { arm: usize, arms: usize },
    #[error("observed loss must be positive and finite, got {value}")]
    NonPositiveLoss { value: f64 },
    #[error("window stamps must be strictly increasing")]
    NonIncreasingStamp,
    #[error("score must be positive and finite, got {value}")]
    NonPositiveScore { value: f64 },
    #[error("weight must be positive and finite, got {value}")]
    NonPositiveWeight { value: f64 },
    #[error("score/weight vectors have mismatched lengths ({scores} vs {weights})")]
    LengthMismatch { scores: usize, weights: usize },
    #[error("UCB augmentation is undefined for an unpulled arm")]
    UnpulledArm,
}

/// Error from one full scheduler iteration: either the scheduler itself or
/// the caller-supplied observation callback failed.
#[derive(Debug, Error)]
pub enum CasStepError<E> {
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error("observation failed: {0}")]
    Observation(E),
}

/// One adversarial perturbation type treated as a bandit arm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationSpec {
    pub id: usize,
    pub weight: f64,
    pub epsilon: f64,
}

/// Sliding window of (iteration stamp, log-loss) pairs, most recent last.
#[derive(Debug, Clone)]
pub struct LossWindow {
    capacity: usize,
    entries: VecDeque<(u64, f64)>,
}

impl LossWindow {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, entries: VecDeque::with_capacity(capacity) }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.entries.iter().copied()
    }

    /// Append the log of a positive loss observed at `stamp`, evicting the
    /// oldest entry once the window is full.
    pub fn record(&mut self, stamp: u64, loss: f64) -> Result<(), SchedulerError> {
        if !(loss > 0.0 && loss.is_finite()) {
            return Err(SchedulerError::NonPositiveLoss { value: loss });
        }
        if let Some(&(last, _)) = self.entries.back() {
            if stamp <= last {
                return Err(SchedulerError::NonIncreasingStamp);
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((stamp, loss.ln()));
        Ok(())
    }
}

/// Per-arm cross-type record: the losses at the arm's two most recent
/// selections and who was trained in between.
#[derive(Debug, Clone)]
struct ArmRecord {
    prev_loss: Option<f64>,
    last_loss: Option<f64>,
    /// Counts n_{j,k} for the closed interval between the arm's two most
    /// recent selections; this is what the trade-off reward reads.
    interval_counts: Vec<u64>,
    /// Counts accumulating since the arm's most recent selection; promoted to
    /// `interval_counts` when the arm is selected again.
    open_counts: Vec<u64>,
}

impl ArmRecord {
    fn new(arms: usize) -> Self {
        Self {
            prev_loss: None,
            last_loss: None,
            interval_counts: vec![0; arms],
            open_counts: vec![0; arms],
        }
    }
}

/// Cross-type ledger over all arms.
#[derive(Debug, Clone)]
pub struct CrossTypeLedger {
    records: Vec<ArmRecord>,
}

impl CrossTypeLedger {
    pub fn new(arms: usize) -> Self {
        Self { records: (0..arms).map(|_| ArmRecord::new(arms)).collect() }
    }

    pub fn arm_count(&self) -> usize {
        self.records.len()
    }

    /// Losses at arm `k`'s two most recent selections, oldest first.
    pub fn loss_pair(&self, k: usize) -> Option<(f64, f64)> {
        let rec = &self.records[k];
        Some((rec.prev_loss?, rec.last_loss?))
    }

    /// How many times arm `j` was selected strictly between arm `k`'s two
    /// most recent selections.
    pub fn interleave_count(&self, j: usize, k: usize) -> u64 {
        self.records[k].interval_counts[j]
    }

    /// Register that `arm` was selected with observed loss `loss`.
    fn observe(&mut self, arm: usize, loss: f64) {
        let rec = &mut self.records[arm];
        rec.interval_counts.copy_from_slice(&rec.open_counts);
        rec.open_counts.iter_mut().for_each(|c| *c = 0);
        rec.prev_loss = rec.last_loss;
        rec.last_loss = Some(loss);
        for (k, other) in self.records.iter_mut().enumerate() {
            if k != arm && other.last_loss.is_some() {
                other.open_counts[arm] += 1;
            }
        }
    }
}

/// Scheduler hyperparameters: reward scale, hybrid-loss weight, window size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SchedulerConfig {
    pub alpha: f64,
    pub beta: f64,
    pub window: usize,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self { alpha: 10.0, beta: 8.0 / 9.0, window: 20 }
    }
}

impl SchedulerConfig {
    fn validate(&self) -> Result<(), SchedulerError> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(SchedulerError::BetaOutOfRange { value: self.beta });
        }
        if self.window < 2 {
            return Err(SchedulerError::WindowTooSmall { window: self.window });
        }
        Ok(())
    }
}

/// Full scheduler state: one loss window and pull counter per arm plus the
/// shared cross-type ledger.
#[derive(Debug, Clone)]
pub struct SchedulerState {
    specs: Vec<PerturbationSpec>,
    pull_counts: Vec<u64>,
    windows: Vec<LossWindow>,
    ledger: CrossTypeLedger,
    iteration: u64,
    config: SchedulerConfig,
}

/// All per-arm quantities behind one selection, in arm order.
#[derive(Debug, Clone, Serialize)]
pub struct SelectionSnapshot {
    pub self_rewards: Vec<f64>,
    pub tradeoff_rewards: Vec<f64>,
    pub rewards: Vec<f64>,
    pub scores: Vec<f64>,
    pub probabilities: Vec<f64>,
}

/// Outcome of one full scheduler iteration.
#[derive(Debug, Clone)]
pub struct CasIteration {
    pub arm: usize,
    pub loss: f64,
    pub snapshot: SelectionSnapshot,
}

impl SchedulerState {
    pub fn new(
        specs: Vec<PerturbationSpec>,
        config: SchedulerConfig,
    ) -> Result<Self, SchedulerError> {
        if specs.is_empty() {
            return Err(SchedulerError::NoArms);
        }
        for (position, spec) in specs.iter().enumerate() {
            if spec.id != position {
                return Err(SchedulerError::BadArmIds { position, id: spec.id });
            }
            if !(spec.weight > 0.0 && spec.weight.is_finite()) {
                return Err(SchedulerError::NonPositiveArmWeight {
                    arm: spec.id,
                    value: spec.weight,
                });
            }
            if !(spec.epsilon > 0.0 && spec.epsilon.is_finite()) {
                return Err(SchedulerError::NonPositiveEpsilon {
                    arm: spec.id,
                    value: spec.epsilon,
                });
            }
        }
        config.validate()?;
        let arms = specs.len();
        Ok(Self {
            specs,
            pull_counts: vec![INITIAL_PULLS; arms],
            windows: (0..arms).map(|_| LossWindow::new(config.window)).collect(),
            ledger: CrossTypeLedger::new(arms),
            iteration: 0,
            config,
        })
    }

    pub fn arm_count(&self) -> usize {
        self.specs.len()
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn specs(&self) -> &[PerturbationSpec] {
        &self.specs
    }

    pub fn pull_counts(&self) -> &[u64] {
        &self.pull_counts
    }

    pub fn window(&self, arm: usize) -> &LossWindow {
        &self.windows[arm]
    }

    pub fn ledger(&self) -> &CrossTypeLedger {
        &self.ledger
    }

    pub fn weights(&self) -> Vec<f64> {
        self.specs.iter().map(|s| s.weight).collect()
    }

    /// Recompute rewards, augmented scores, and sampling probabilities for
    /// every arm from the current state. Mutates nothing.
    pub fn evaluate(&self) -> Result<SelectionSnapshot, SchedulerError> {
        let weights = self.weights();
        let total_pulls: u64 = self.pull_counts.iter().sum();
        let arms = self.arm_count();
        let mut self_rewards = Vec::with_capacity(arms);
        let mut tradeoff_rewards = Vec::with_capacity(arms);
        let mut rewards = Vec::with_capacity(arms);
        let mut scores = Vec::with_capacity(arms);
        for v in 0..arms {
            let self_r = self_reward(&self.windows[v], weights[v]);
            let trade_r = tradeoff_reward(&self.ledger, v, &weights);
            let reward = total_reward(self_r, trade_r);
            scores.push(ucb_augment(reward, self.pull_counts[v], total_pulls, self.config.alpha)?);
            self_rewards.push(self_r);
            tradeoff_rewards.push(trade_r);
            rewards.push(reward);
        }
        let probabilities = sampling_distribution(&scores, &weights)?;
        Ok(SelectionSnapshot { self_rewards, tradeoff_rewards, rewards, scores, probabilities })
    }

    /// Sample one arm from the current sampling distribution. Recomputes the
    /// distribution from state; records nothing.
    pub fn select_arm<R: Rng>(&self, rng: &mut R) -> Result<usize, SchedulerError> {
        let snapshot = self.evaluate()?;
        Ok(sample_categorical(&snapshot.probabilities, rng))
    }

    /// Record the loss observed after training on `arm`: bumps the pull and
    /// iteration counters, appends to the arm's window, and rolls the ledger.
    pub fn record_observation(&mut self, arm: usize, loss: f64) -> Result<(), SchedulerError> {
        if arm >= self.arm_count() {
            return Err(SchedulerError::ArmOutOfRange { arm, arms: self.arm_count() });
        }
        if !(loss > 0.0 && loss.is_finite()) {
            return Err(SchedulerError::NonPositiveLoss { value: loss });
        }
        self.iteration += 1;
        self.pull_counts[arm] += 1;
        self.windows[arm].record(self.iteration, loss)?;
        self.ledger.observe(arm, loss);
        Ok(())
    }

    /// One full iteration: evaluate, sample an arm, hand it to `observe`
    /// (which trains against that perturbation and returns the observed
    /// loss), and record the result.
    pub fn step<R, F, E>(&mut self, rng: &mut R, observe: F) -> Result<CasIteration, CasStepError<E>>
    where
        R: Rng,
        F: FnOnce(usize) -> Result<f64, E>,
    {
        let snapshot = self.evaluate()?;
        let arm = sample_categorical(&snapshot.probabilities, rng);
        let loss = observe(arm).map_err(CasStepError::Observation)?;
        self.record_observation(arm, loss)?;
        Ok(CasIteration { arm, loss, snapshot })
    }
}

/// Ordinary-least-squares slope of `value` against `index`.
pub fn regression_slope(series: &[(f64, f64)]) -> Result<f64, SchedulerError> {
    if series.len() < 2 {
        return Err(SchedulerError::NotEnoughPoints { count: series.len() });
    }
    let n = series.len() as f64;
    let mean_x = series.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = series.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(x, y) in series {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx <= 0.0 {
        return Err(SchedulerError::IdenticalIndices);
    }
    Ok(sxy / sxx)
}

/// Negated windowed log-loss slope scaled by the arm weight; positive when
/// the loss is falling. Zero until the window holds two entries.
pub fn self_reward(window: &LossWindow, weight: f64) -> f64 {
    if window.len() < 2 {
        return 0.0;
    }
    let series: Vec<(f64, f64)> = window
        .entries()
        .enumerate()
        .map(|(pos, (_, log_loss))| (pos as f64, log_loss))
        .collect();
    let slope = regression_slope(&series).expect("window positions are distinct");
    -slope * weight
}

/// Credit arm `candidate` earns from other arms' loss movement: for each arm
/// k selected at least twice, the candidate's share of the selections made
/// between k's two most recent selections, weighted by w_k and signed by the
/// log-ratio of k's losses. Intervals with no interleaved selections and
/// arms without a loss pair contribute 0.
pub fn tradeoff_reward(ledger: &CrossTypeLedger, candidate: usize, weights: &[f64]) -> f64 {
    let mut reward = 0.0;
    for k in 0..ledger.arm_count() {
        if k == candidate {
            continue;
        }
        let Some((prev, last)) = ledger.loss_pair(k) else { continue };
        let total: u64 = (0..ledger.arm_count()).map(|j| ledger.interleave_count(j, k)).sum();
        if total == 0 {
            continue;
        }
        let share = ledger.interleave_count(candidate, k) as f64 / total as f64;
        reward += weights[k] * share * (prev / last).ln();
    }
    reward
}

/// Total reward: self term plus cross-type term.
pub fn total_reward(self_reward: f64, tradeoff_reward: f64) -> f64 {
    self_reward + tradeoff_reward
}

/// Exponentiated reward plus the UCB exploration bonus. The exponent is
/// clamped to ±[`EXP_CLAMP`] to keep the score finite.
pub fn ucb_augment(
    reward: f64,
    pulls: u64,
    total_pulls: u64,
    alpha: f64,
) -> Result<f64, SchedulerError> {
    if pulls == 0 || total_pulls == 0 {
        return Err(SchedulerError::UnpulledArm);
    }
    let exponent = (alpha * reward).clamp(-EXP_CLAMP, EXP_CLAMP);
    Ok(exponent.exp() + (2.0 * (total_pulls as f64).ln() / pulls as f64).sqrt())
}

/// Normalize weight-scaled scores into sampling probabilities.
pub fn sampling_distribution(scores: &[f64], weights: &[f64]) -> Result<Vec<f64>, SchedulerError> {
    if scores.len() != weights.len() {
        return Err(SchedulerError::LengthMismatch {
            scores: scores.len(),
            weights: weights.len(),
        });
    }
    for &s in scores {
        if !(s > 0.0 && s.is_finite()) {
            return Err(SchedulerError::NonPositiveScore { value: s });
        }
    }
    for &w in weights {
        if !(w > 0.0 && w.is_finite()) {
            return Err(SchedulerError::NonPositiveWeight { value: w });
        }
    }
    let products: Vec<f64> = scores.iter().zip(weights).map(|(s, w)| s * w).collect();
    let total: f64 = products.iter().sum();
    Ok(products.into_iter().map(|p| p / total).collect())
}

/// TRADES-style convex combination of adversarial and clean loss.
pub fn hybrid_loss(adv_loss: f64, clean_loss: f64, beta: f64) -> Result<f64, SchedulerError> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(SchedulerError::BetaOutOfRange { value: beta });
    }
    Ok(beta * adv_loss + (1.0 - beta) * clean_loss)
}
