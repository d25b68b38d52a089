//! Run configuration: a TOML file with nested sections, parsed strictly
//! (unknown keys are an error) and echoed back verbatim into every run's
//! artifacts so a run can be reproduced from its outputs alone.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cas_core::driver::{Experiment, Policy};
use cas_core::env::{
    calibrate_epsilon, generate_risks, generate_theta, CalibrationOutcome, CALIBRATION_MAX_ITERS,
    CALIBRATION_TARGET,
};
use cas_core::scheduler::{PerturbationSpec, SchedulerConfig};

use crate::CliError;

fn default_beta() -> f64 {
    8.0 / 9.0
}

fn default_alpha() -> f64 {
    10.0
}

fn default_window() -> usize {
    20
}

fn default_weight() -> f64 {
    1.0
}

fn default_lambda() -> f64 {
    0.5
}

/// Top-level run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub policy: PolicyName,
    pub horizon: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub env: EnvSection,
    #[serde(default)]
    pub scheduler: SchedulerSection,
    pub arms: Vec<ArmSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyName {
    Cas,
    Sat,
    Eat,
    Order,
    Avg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub dimension: usize,
    pub conflict: f64,
    pub learning_rate: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub noise_scale: f64,
    /// Seed for risk-surface generation; defaults to the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerSection {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_window")]
    pub window: usize,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        Self { alpha: default_alpha(), window: default_window() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSection {
    pub id: usize,
    #[serde(default = "default_weight")]
    pub weight: f64,
    #[serde(default)]
    pub epsilon: EpsilonSpec,
    /// Calibration hyperparameter, used when epsilon = "calibrate".
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

/// Either a fixed attack strength or the literal string "calibrate".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonSpec {
    Fixed(f64),
    Keyword(String),
}

impl Default for EpsilonSpec {
    fn default() -> Self {
        EpsilonSpec::Fixed(1.0)
    }
}

/// One arm's resolved strength, with the calibration record when it was
/// derived rather than given.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedArm {
    pub id: usize,
    pub weight: f64,
    pub epsilon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationOutcome>,
}

/// Everything a run needs, derived deterministically from a config.
pub struct Materialized {
    pub experiment: Experiment,
    pub policy: Policy,
    pub arms: Vec<ResolvedArm>,
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Usage(format!("cannot read config {}: {e}", path.display()))
    })?;
    let config: RunConfig = toml::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    validate(&config)?;
    Ok(config)
}

pub fn validate(config: &RunConfig) -> Result<(), CliError> {
    let usage = |msg: String| Err(CliError::Usage(msg));
    if config.arms.is_empty() {
        return usage("arms: at least one arm is required".into());
    }
    let mut ids: Vec<usize> = config.arms.iter().map(|a| a.id).collect();
    ids.sort_unstable();
    for (expect, &id) in ids.iter().enumerate() {
        if id != expect {
            return usage(format!(
                "arms: ids must be unique and contiguous from 0, found {id:?} where {expect} was expected"
            ));
        }
    }
    for arm in &config.arms {
        if !(arm.weight > 0.0 && arm.weight.is_finite()) {
            return usage(format!("arms[{}].weight must be positive, got {}", arm.id, arm.weight));
        }
        match &arm.epsilon {
            EpsilonSpec::Fixed(eps) if !(*eps > 0.0 && eps.is_finite()) => {
                return usage(format!(
                    "arms[{}].epsilon must be positive or \"calibrate\", got {eps}",
                    arm.id
                ));
            }
            EpsilonSpec::Keyword(word) if word != "calibrate" => {
                return usage(format!(
                    "arms[{}].epsilon: unknown keyword {word:?}, only \"calibrate\" is supported",
                    arm.id
                ));
            }
            _ => {}
        }
    }
    if config.env.dimension == 0 {
        return usage("env.dimension must be at least 1".into());
    }
    if !(0.0..=1.0).contains(&config.env.conflict) {
        return usage(format!("env.conflict must lie in [0, 1], got {}", config.env.conflict));
    }
    if !(config.env.learning_rate >= 0.0 && config.env.learning_rate.is_finite()) {
        return usage(format!(
            "env.learning_rate must be nonnegative, got {}",
            config.env.learning_rate
        ));
    }
    if !(0.0..=1.0).contains(&config.env.beta) {
        return usage(format!("env.beta must lie in [0, 1], got {}", config.env.beta));
    }
    if !(config.env.noise_scale >= 0.0 && config.env.noise_scale.is_finite()) {
        return usage(format!(
            "env.noise_scale must be nonnegative, got {}",
            config.env.noise_scale
        ));
    }
    if config.scheduler.window < 2 {
        return usage(format!(
            "scheduler.window must be at least 2, got {}",
            config.scheduler.window
        ));
    }
    if !config.scheduler.alpha.is_finite() {
        return usage(format!("scheduler.alpha must be finite, got {}", config.scheduler.alpha));
    }
    Ok(())
}

impl RunConfig {
    pub fn risk_seed(&self) -> u64 {
        self.env.risk_seed.unwrap_or(self.seed)
    }

    /// Envs must match exactly for paired comparisons.
    pub fn same_environment(&self, other: &RunConfig) -> bool {
        self.env == other.env
            && self.arms == other.arms
            && self.horizon == other.horizon
            && self.seed == other.seed
    }
}

/// Resolve calibrated strengths and build the experiment. Deterministic for
/// a fixed config.
pub fn materialize(config: &RunConfig) -> Result<Materialized, CliError> {
    let risk_seed = config.risk_seed();
    let dim = config.env.dimension;
    let mut arms: Vec<ArmSection> = config.arms.clone();
    arms.sort_by_key(|a| a.id);

    let base_risks = generate_risks(arms.len(), dim, config.env.conflict, risk_seed);
    let theta0 = generate_theta(dim, risk_seed);
    let mut resolved = Vec::with_capacity(arms.len());
    for (arm, base) in arms.iter().zip(&base_risks) {
        let (epsilon, calibration) = match &arm.epsilon {
            EpsilonSpec::Fixed(eps) => (*eps, None),
            EpsilonSpec::Keyword(_) => {
                let outcome = calibrate_epsilon(
                    arm.lambda,
                    1.0,
                    base,
                    &theta0,
                    CALIBRATION_TARGET,
                    CALIBRATION_MAX_ITERS,
                )
                .map_err(|e| CliError::Usage(format!("arms[{}] calibration: {e}", arm.id)))?;
                (outcome.epsilon, Some(outcome))
            }
        };
        resolved.push(ResolvedArm { id: arm.id, weight: arm.weight, epsilon, calibration });
    }

    let specs: Vec<PerturbationSpec> = resolved
        .iter()
        .map(|a| PerturbationSpec { id: a.id, weight: a.weight, epsilon: a.epsilon })
        .collect();
    let scheduler_config = SchedulerConfig {
        alpha: config.scheduler.alpha,
        beta: config.env.beta,
        window: config.scheduler.window,
    };
    let experiment = Experiment::generate(
        specs,
        scheduler_config,
        dim,
        config.env.conflict,
        config.env.learning_rate,
        config.env.noise_scale,
        risk_seed,
        config.horizon,
    )
    .map_err(|e| CliError::Usage(format!("building the experiment: {e}")))?;
    let policy = match config.policy {
        PolicyName::Cas => Policy::Cas,
        PolicyName::Sat => Policy::Sat,
        PolicyName::Eat => Policy::default_eat(),
        PolicyName::Order => Policy::Order,
        PolicyName::Avg => Policy::Avg,
    };
    Ok(Materialized { experiment, policy, arms: resolved })
}

/// Serialize a config in the input format (the echo artifact).
pub fn echo_toml(config: &RunConfig) -> Result<String, CliError> {
    toml::to_string_pretty(config)
        .map_err(|e| CliError::Usage(format!("serializing config echo: {e}")))
}
