//! Calibrated adversarial sampling (CAS) at desk scale.
//!
//! This crate bundles four pieces that together make a bandit-driven
//! multi-robustness fine-tuning loop fully simulable on a laptop:
//!
//! - [`bandit`] — textbook stochastic multi-armed bandits (UCB1, Bernoulli
//!   Thompson sampling) with pseudo-regret accounting and the logarithmic
//!   regret bound they are tested against.
//! - [`scheduler`] — the CAS state machine: sliding-window self rewards,
//!   cross-type trade-off ledger, UCB score augmentation, and softmax-weighted
//!   arm sampling.
//! - [`env`] — a synthetic stand-in for adversarial fine-tuning: per-attack
//!   quadratic risk surfaces over a shared parameter vector, gradient-descent
//!   training steps, and exact drift/curvature diagnostics.
//! - [`baselines`] — the comparison samplers (SAT, E-AT, Order, AVG) sharing
//!   the same observation interfaces so head-to-head runs differ only in the
//!   selection policy.
//!
//! [`analysis`] layers experiment procedures on top (trade-off matrices,
//! equilibrium checks, Robbins-Monro convergence runs, sequential-failure
//! demos), and [`rng`] pins down the deterministic random-stream derivation
//! that makes every run byte-reproducible.
//!
//! Inner loops that sweep over seeds, repeats, or matrix rows go through
//! [`parallel`], which uses rayon when the default `parallel` feature is
//! enabled and falls back to plain iteration without it.

pub mod analysis;
pub mod bandit;
pub mod baselines;
pub mod driver;
pub mod env;
pub mod linalg;
pub mod parallel;
pub mod rng;
pub mod scheduler;
