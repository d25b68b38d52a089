//! Stochastic multi-armed bandits: UCB1, Bernoulli Thompson sampling, and
//! pseudo-regret accounting.
//!
//! These are the textbook algorithms the CAS scheduler's exploration term is
//! built on, kept as a standalone module so their regret behavior can be
//! validated independently of the scheduler. Rewards are assumed bounded in
//! [0, 1]; recording enforces that rather than clamping silently, since the
//! Chernoff-Hoeffding confidence bonus is only valid for bounded rewards.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::Serialize;
use thiserror::Error;

/// Suboptimality gaps below this are treated as zero (the arm counts as
/// optimal) so the logarithmic bound cannot blow up on vacuous gaps.
pub const GAP_EPSILON: f64 = 1e-9;

/// Additive per-arm slack standing in for the O(1) constant of the
/// logarithmic regret bound.
pub const DEFAULT_REGRET_SLACK: f64 = 8.0;

#[derive(Debug, Error, PartialEq)]
pub enum BanditError {
    #[error("UCB index is undefined for an unpulled arm")]
    UnpulledArm,
    #[error("reward {value} is outside [0, 1]")]
    RewardOutOfRange { value: f64 },
    #[error("Bernoulli reward must be exactly 0 or 1, got {value}")]
    NonBinaryReward { value: f64 },
    #[error("beta parameters must be positive, got alpha = {alpha}, beta = {beta}")]
    InvalidBetaParams { alpha: f64, beta: f64 },
    #[error("arm mean {value} is not a probability")]
    InvalidMean { value: f64 },
    #[error("at least one arm is required")]
    NoArms,
}

/// Pull count and reward tally for one arm.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ArmStats {
    pulls: u64,
    reward_sum: f64,
}

impl ArmStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pulls(&self) -> u64 {
        self.pulls
    }

    pub fn reward_sum(&self) -> f64 {
        self.reward_sum
    }

    /// Mean observed reward; `None` until the arm has been pulled.
    pub fn empirical_mean(&self) -> Option<f64> {
        (self.pulls > 0).then(|| self.reward_sum / self.pulls as f64)
    }

    /// Record one observation. Rewards outside [0, 1] are an error.
    pub fn record(&mut self, reward: f64) -> Result<(), BanditError> {
        if !(0.0..=1.0).contains(&reward) {
            return Err(BanditError::RewardOutOfRange { value: reward });
        }
        self.pulls += 1;
        self.reward_sum += reward;
        Ok(())
    }
}

/// Beta posterior over a Bernoulli arm's mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, BanditError> {
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(BanditError::InvalidBetaParams { alpha, beta });
        }
        Ok(Self { alpha, beta })
    }

    /// The uniform prior Beta(1, 1).
    pub fn uniform_prior() -> Self {
        Self { alpha: 1.0, beta: 1.0 }
    }
}

/// Record of one simulated bandit run.
#[derive(Debug, Clone, Serialize)]
pub struct BanditTrace {
    pub horizon: usize,
    pub chosen_arms: Vec<usize>,
    pub rewards: Vec<f64>,
    pub true_means: Vec<f64>,
}

impl BanditTrace {
    /// Per-arm pull counts over the whole trace.
    pub fn pull_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.true_means.len()];
        for &arm in &self.chosen_arms {
            counts[arm] += 1;
        }
        counts
    }

    /// Cumulative pseudo-regret of the recorded choices.
    pub fn pseudo_regret(&self) -> f64 {
        pseudo_regret(&self.true_means, &self.pull_counts())
    }
}

/// Optimistic index: empirical mean plus the sqrt(2 ln t / n) bonus.
pub fn ucb_index(mean: f64, pulls: u64, total_pulls: u64) -> Result<f64, BanditError> {
    if pulls == 0 || total_pulls == 0 {
        return Err(BanditError::UnpulledArm);
    }
    Ok(mean + (2.0 * (total_pulls as f64).ln() / pulls as f64).sqrt())
}

/// Argmax of the UCB index across arms at round `round`; ties go to the
/// lowest index. Every arm must have been pulled at least once.
pub fn ucb_select(stats: &[ArmStats], round: u64) -> Result<usize, BanditError> {
    if stats.is_empty() {
        return Err(BanditError::NoArms);
    }
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for (arm, s) in stats.iter().enumerate() {
        let mean = s.empirical_mean().ok_or(BanditError::UnpulledArm)?;
        let score = ucb_index(mean, s.pulls, round)?;
        if score > best_score {
            best = arm;
            best_score = score;
        }
    }
    Ok(best)
}

/// One posterior sample per arm, pick the argmax; ties go to the lowest index.
pub fn thompson_select<R: Rng>(params: &[BetaParams], rng: &mut R) -> Result<usize, BanditError> {
    if params.is_empty() {
        return Err(BanditError::NoArms);
    }
    let mut best = 0usize;
    let mut best_sample = f64::NEG_INFINITY;
    for (arm, p) in params.iter().enumerate() {
        let dist = Beta::new(p.alpha, p.beta)
            .map_err(|_| BanditError::InvalidBetaParams { alpha: p.alpha, beta: p.beta })?;
        let sample = dist.sample(rng);
        if sample > best_sample {
            best = arm;
            best_sample = sample;
        }
    }
    Ok(best)
}

/// Conjugate posterior update for a Bernoulli observation.
pub fn thompson_update(params: &BetaParams, reward: f64) -> Result<BetaParams, BanditError> {
    if reward != 0.0 && reward != 1.0 {
        return Err(BanditError::NonBinaryReward { value: reward });
    }
    BetaParams::new(params.alpha + reward, params.beta + (1.0 - reward))
}

/// Cumulative pseudo-regret: sum over arms of pulls times the gap to the
/// best mean.
pub fn pseudo_regret(true_means: &[f64], pulls: &[u64]) -> f64 {
    assert_eq!(true_means.len(), pulls.len(), "means/pulls length mismatch");
    let best = true_means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    true_means
        .iter()
        .zip(pulls)
        .map(|(&mu, &n)| n as f64 * (best - mu))
        .sum()
}

/// Logarithmic regret bound with the default additive slack.
pub fn regret_bound(true_means: &[f64], horizon: u64) -> f64 {
    regret_bound_with_slack(true_means, horizon, DEFAULT_REGRET_SLACK)
}

/// Sum over suboptimal arms of 8 ln(T) / gap, plus `slack` per such arm.
/// Arms with a gap below [`GAP_EPSILON`] are treated as optimal.
pub fn regret_bound_with_slack(true_means: &[f64], horizon: u64, slack: f64) -> f64 {
    assert!(horizon >= 2, "regret bound needs a horizon of at least 2");
    let best = true_means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_t = (horizon as f64).ln();
    true_means
        .iter()
        .map(|&mu| best - mu)
        .filter(|&gap| gap >= GAP_EPSILON)
        .map(|gap| 8.0 * log_t / gap + slack)
        .sum()
}

fn validate_means(true_means: &[f64]) -> Result<(), BanditError> {
    if true_means.is_empty() {
        return Err(BanditError::NoArms);
    }
    for &mu in true_means {
        if !(0.0..=1.0).contains(&mu) {
            return Err(BanditError::InvalidMean { value: mu });
        }
    }
    Ok(())
}

fn bernoulli_draw<R: Rng>(p: f64, rng: &mut R) -> f64 {
    if rng.random::<f64>() < p {
        1.0
    } else {
        0.0
    }
}

/// Simulate UCB1 on a Bernoulli bandit: pull each arm once, then follow the
/// index. The trace is fully determined by the rng seed.
pub fn run_ucb<R: Rng>(
    true_means: &[f64],
    horizon: usize,
    rng: &mut R,
) -> Result<BanditTrace, BanditError> {
    validate_means(true_means)?;
    let arms = true_means.len();
    let mut stats = vec![ArmStats::new(); arms];
    let mut chosen = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let arm = if t <= arms { t - 1 } else { ucb_select(&stats, t as u64)? };
        let reward = bernoulli_draw(true_means[arm], rng);
        stats[arm].record(reward)?;
        chosen.push(arm);
        rewards.push(reward);
    }
    Ok(BanditTrace { horizon, chosen_arms: chosen, rewards, true_means: true_means.to_vec() })
}

/// Simulate Thompson sampling with the uniform Beta prior. Returns the trace
/// and the final posterior parameters.
pub fn run_thompson<R: Rng>(
    true_means: &[f64],
    horizon: usize,
    rng: &mut R,
) -> Result<(BanditTrace, Vec<BetaParams>), BanditError> {
    validate_means(true_means)?;
    let arms = true_means.len();
    let mut params = vec![BetaParams::uniform_prior(); arms];
    let mut chosen = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let arm = thompson_select(&params, rng)?;
        let reward = bernoulli_draw(true_means[arm], rng);
        params[arm] = thompson_update(&params[arm], reward)?;
        chosen.push(arm);
        rewards.push(reward);
    }
    let trace =
        BanditTrace { horizon, chosen_arms: chosen, rewards, true_means: true_means.to_vec() };
    Ok((trace, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use proptest::prelude::*;

    fn assert_close(actual: f64, expected: f64, tol: f64) {
        assert!(
            (actual - expected).abs() <= tol,
            "expected {expected}, got {actual} (tol {tol})"
        );
    }

    #[test]
    fn ucb_index_no_bonus_at_round_one() {
        assert_eq!(ucb_index(0.5, 1, 1).unwrap(), 0.5);
    }

    #[test]
    fn ucb_index_closed_form() {
        // 0.5 + sqrt(2 ln 100 / 4)
        let expected = 0.5 + (2.0 * 100f64.ln() / 4.0).sqrt();
        assert_close(ucb_index(0.5, 4, 100).unwrap(), expected, 1e-15);
        assert_close(expected, 2.017_427_129_385_146_5, 1e-12);
    }

    #[test]
    fn ucb_bonus_vanishes_with_pulls() {
        let mut last = f64::INFINITY;
        for n in [10u64, 100, 10_000, 1_000_000] {
            let v = ucb_index(0.0, n, n).unwrap();
            assert!(v < last);
            last = v;
        }
        assert!(last < 0.01);
    }

    #[test]
    fn ucb_index_rejects_zero_pulls() {
        assert_eq!(ucb_index(0.5, 0, 10), Err(BanditError::UnpulledArm));
    }

    #[test]
    fn ucb_select_breaks_ties_low() {
        let mut stats = vec![ArmStats::new(), ArmStats::new()];
        for s in &mut stats {
            s.record(0.5).unwrap();
        }
        assert_eq!(ucb_select(&stats, 2).unwrap(), 0);
    }

    #[test]
    fn ucb_select_prefers_higher_mean_at_equal_pulls() {
        let mut a = ArmStats::new();
        let mut b = ArmStats::new();
        for _ in 0..50 {
            a.record(0.9).unwrap();
            b.record(0.1).unwrap();
        }
        assert_eq!(ucb_select(&[a, b], 100).unwrap(), 0);
    }

    #[test]
    fn ucb_select_bonus_dominates_small_mean_gap() {
        // means (0.6, 0.5), pulls (100, 2): the sqrt(2 ln 102 / 2) bonus on
        // arm 1 dwarfs the 0.1 mean advantage of arm 0.
        let mut a = ArmStats::new();
        let mut b = ArmStats::new();
        for _ in 0..100 {
            a.record(0.6).unwrap();
        }
        for _ in 0..2 {
            b.record(0.5).unwrap();
        }
        assert_eq!(ucb_select(&[a, b], 102).unwrap(), 1);
    }

    #[test]
    fn ucb_select_requires_all_arms_pulled() {
        let mut a = ArmStats::new();
        a.record(1.0).unwrap();
        assert_eq!(ucb_select(&[a, ArmStats::new()], 2), Err(BanditError::UnpulledArm));
    }

    #[test]
    fn record_rejects_out_of_range() {
        let mut s = ArmStats::new();
        assert!(matches!(s.record(1.5), Err(BanditError::RewardOutOfRange { .. })));
        assert!(matches!(s.record(-0.1), Err(BanditError::RewardOutOfRange { .. })));
        assert_eq!(s.pulls(), 0);
    }

    #[test]
    fn thompson_single_arm() {
        let mut rng = substream(1, "test");
        let params = [BetaParams::uniform_prior()];
        assert_eq!(thompson_select(&params, &mut rng).unwrap(), 0);
    }

    #[test]
    fn thompson_separated_posteriors_pick_the_good_arm() {
        let params = [
            BetaParams::new(1000.0, 1.0).unwrap(),
            BetaParams::new(1.0, 1000.0).unwrap(),
        ];
        let mut rng = substream(2, "test");
        let draws = 10_000;
        let hits = (0..draws)
            .filter(|_| thompson_select(&params, &mut rng).unwrap() == 0)
            .count();
        assert!(hits as f64 / draws as f64 > 0.99, "arm 0 frequency {hits}/{draws}");
    }

    #[test]
    fn thompson_select_deterministic_under_seed() {
        let params = [BetaParams::new(3.0, 2.0).unwrap(), BetaParams::new(2.0, 3.0).unwrap()];
        let a = thompson_select(&params, &mut substream(9, "t")).unwrap();
        let b = thompson_select(&params, &mut substream(9, "t")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn thompson_update_rules() {
        let prior = BetaParams::uniform_prior();
        assert_eq!(thompson_update(&prior, 1.0).unwrap(), BetaParams { alpha: 2.0, beta: 1.0 });
        assert_eq!(thompson_update(&prior, 0.0).unwrap(), BetaParams { alpha: 1.0, beta: 2.0 });
        assert!(matches!(
            thompson_update(&prior, 0.5),
            Err(BanditError::NonBinaryReward { .. })
        ));
    }

    #[test]
    fn pseudo_regret_examples() {
        assert_eq!(pseudo_regret(&[0.7], &[100]), 0.0);
        assert_close(pseudo_regret(&[0.9, 0.1], &[90, 10]), 8.0, 1e-12);
        assert_eq!(pseudo_regret(&[0.4, 0.4, 0.4], &[1, 2, 3]), 0.0);
    }

    #[test]
    fn regret_bound_closed_form() {
        let expected = 8.0 * 10_000f64.ln() / 0.8 + DEFAULT_REGRET_SLACK;
        assert_close(regret_bound(&[0.9, 0.1], 10_000), expected, 1e-12);
        assert_close(expected, 100.103_403_719_761_84, 1e-9);
    }

    #[test]
    fn regret_bound_single_arm_and_vacuous_gaps() {
        assert_eq!(regret_bound(&[0.5], 100), 0.0);
        // a 1e-10 gap is below GAP_EPSILON and must not explode the bound
        assert_eq!(regret_bound(&[0.5, 0.5 - 1e-10], 100), 0.0);
    }

    #[test]
    fn runs_are_deterministic_under_seed() {
        let means = [0.9, 0.1];
        let a = run_ucb(&means, 500, &mut substream(3, "ucb")).unwrap();
        let b = run_ucb(&means, 500, &mut substream(3, "ucb")).unwrap();
        assert_eq!(a.chosen_arms, b.chosen_arms);
        assert_eq!(a.rewards, b.rewards);
        let (ta, _) = run_thompson(&means, 500, &mut substream(3, "ts")).unwrap();
        let (tb, _) = run_thompson(&means, 500, &mut substream(3, "ts")).unwrap();
        assert_eq!(ta.chosen_arms, tb.chosen_arms);
    }

    #[test]
    fn thompson_conserves_posterior_mass() {
        let means = [0.6, 0.3, 0.8];
        let (trace, params) = run_thompson(&means, 400, &mut substream(4, "ts")).unwrap();
        let pulls = trace.pull_counts();
        for (arm, p) in params.iter().enumerate() {
            assert_eq!(p.alpha + p.beta, 2.0 + pulls[arm] as f64);
        }
    }

    proptest! {
        #[test]
        fn bonus_monotone_in_pulls_and_total(
            mean in 0.0f64..1.0,
            pulls in 1u64..1000,
            total in 2u64..100_000,
        ) {
            prop_assume!(pulls < total);
            let base = ucb_index(mean, pulls, total).unwrap();
            prop_assert!(ucb_index(mean, pulls + 1, total).unwrap() < base);
            prop_assert!(ucb_index(mean, pulls, total * 2).unwrap() > base);
        }

        #[test]
        fn conjugacy_conserved(rewards in proptest::collection::vec(0u8..2, 0..64)) {
            let mut p = BetaParams::uniform_prior();
            for r in &rewards {
                p = thompson_update(&p, *r as f64).unwrap();
            }
            prop_assert_eq!(p.alpha + p.beta, 2.0 + rewards.len() as f64);
        }

        #[test]
        fn pseudo_regret_nonnegative(
            (means, pulls) in (1usize..6).prop_flat_map(|n| (
                proptest::collection::vec(0.0f64..1.0, n),
                proptest::collection::vec(0u64..1000, n),
            )),
        ) {
            prop_assert!(pseudo_regret(&means, &pulls) >= 0.0);
        }
    }
}
