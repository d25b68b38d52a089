//! Synthetic multi-robustness environment.
//!
//! Each attack type gets a quadratic risk surface over a shared parameter
//! vector: R_k(theta) = eps_k * (0.5 (theta - mu_k)' A_k (theta - mu_k) + c_k)
//! with A_k symmetric PSD. Quadratics make every second-order quantity exact —
//! gradients are linear, Hessians are constant, and the Taylor expansion of a
//! risk change has no cubic term — so the drift bound and safe-drift threshold
//! can be checked as identities instead of asymptotic claims.
//!
//! Training is plain gradient descent on the hybrid (adversarial/clean) loss,
//! with optional multiplicative log-normal observation noise. The noise is
//! multiplicative to keep observed losses positive and to preserve the
//! scheduler's log-scale invariance.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{axpy, dot, norm, scaled, sub, SquareMatrix};
use crate::rng::substream;
use crate::scheduler::{hybrid_loss, EXP_CLAMP};

/// Symmetry tolerance for risk matrices.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Relative tolerance at which power iteration stops by default.
pub const POWER_ITERATION_TOLERANCE: f64 = 1e-8;

/// Default iteration cap for power iteration.
pub const POWER_ITERATION_MAX_ITERS: usize = 10_000;

/// Default accuracy-proxy target band for epsilon calibration.
pub const CALIBRATION_TARGET: (f64, f64) = (0.2, 0.6);

/// Default iteration cap for epsilon calibration.
pub const CALIBRATION_MAX_ITERS: u32 = 100;

/// Gradient norms below this make an angle undefined.
pub const ANGLE_NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("risk matrix is asymmetric (max |a_ij - a_ji| = {max_abs:e})")]
    AsymmetricMatrix { max_abs: f64 },
    #[error("risk matrix is not positive semidefinite (pivot {pivot:e})")]
    NotPositiveSemidefinite { pivot: f64 },
    #[error("risk offset must be nonnegative, got {value}")]
    NegativeOffset { value: f64 },
    #[error("risk strength must be positive, got {value}")]
    NonPositiveStrength { value: f64 },
    #[error("hybrid-loss weight must lie in [0, 1], got {value}")]
    BetaOutOfRange { value: f64 },
    #[error("parameter vector diverged (non-finite value) at step {step}")]
    Diverged { step: u64 },
    #[error("power iteration did not converge within {iterations} iterations")]
    PowerIterationDidNotConverge { iterations: usize },
    #[error("angle undefined: gradient norm below {ANGLE_NORM_FLOOR:e}")]
    ZeroGradient,
    #[error("drift threshold requires positive top curvature, got lambda_max = {value}")]
    NonPositiveCurvature { value: f64 },
    #[error("accuracy proxy requires a nonnegative risk, got {value}")]
    NegativeRisk { value: f64 },
    #[error("at least one risk is required")]
    EmptyRisks,
    #[error("{name} must be finite and nonnegative, got {value}")]
    InvalidParameter { name: &'static str, value: f64 },
}

/// One attack type's risk surface.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadraticRisk {
    matrix: SquareMatrix,
    center: Vec<f64>,
    offset: f64,
    strength: f64,
}

impl QuadraticRisk {
    /// Build a risk surface, validating symmetry (within 1e-12), positive
    /// semidefiniteness (LDL' pivots above a scale-relative floor),
    /// nonnegative offset, and positive strength.
    pub fn new(
        matrix: SquareMatrix,
        center: Vec<f64>,
        offset: f64,
        strength: f64,
    ) -> Result<Self, EnvError> {
        if center.len() != matrix.dim() {
            return Err(EnvError::DimensionMismatch {
                expected: matrix.dim(),
                got: center.len(),
            });
        }
        let asym = matrix.max_asymmetry();
        if asym > SYMMETRY_TOLERANCE {
            return Err(EnvError::AsymmetricMatrix { max_abs: asym });
        }
        validate_psd(&matrix)?;
        if !(offset >= 0.0 && offset.is_finite()) {
            return Err(EnvError::NegativeOffset { value: offset });
        }
        if !(strength > 0.0 && strength.is_finite()) {
            return Err(EnvError::NonPositiveStrength { value: strength });
        }
        Ok(Self { matrix, center, offset, strength })
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.matrix
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    /// Same surface with a different strength multiplier.
    pub fn with_strength(&self, strength: f64) -> Result<Self, EnvError> {
        if !(strength > 0.0 && strength.is_finite()) {
            return Err(EnvError::NonPositiveStrength { value: strength });
        }
        Ok(Self { strength, ..self.clone() })
    }

    fn check_dim(&self, theta: &[f64]) -> Result<(), EnvError> {
        if theta.len() != self.dim() {
            return Err(EnvError::DimensionMismatch { expected: self.dim(), got: theta.len() });
        }
        Ok(())
    }

    /// Risk value eps * (0.5 (theta - mu)' A (theta - mu) + c).
    pub fn value(&self, theta: &[f64]) -> Result<f64, EnvError> {
        self.value_with_strength(theta, self.strength)
    }

    /// Risk value with the strength multiplier overridden (used by the
    /// epsilon-calibration loop).
    pub fn value_with_strength(&self, theta: &[f64], strength: f64) -> Result<f64, EnvError> {
        self.check_dim(theta)?;
        let diff = sub(theta, &self.center);
        Ok(strength * (0.5 * self.matrix.quadratic_form(&diff) + self.offset))
    }

    /// Analytic gradient eps * A (theta - mu).
    pub fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>, EnvError> {
        self.check_dim(theta)?;
        let diff = sub(theta, &self.center);
        Ok(scaled(&self.matrix.mat_vec(&diff), self.strength))
    }

    /// Hessian eps * A, constant over theta.
    pub fn hessian(&self) -> SquareMatrix {
        self.matrix.scaled(self.strength)
    }
}

/// LDL' factorization with pivots checked against a scale-relative floor.
/// Zero-pivot columns are skipped, which is the correct continuation for a
/// semidefinite matrix.
fn validate_psd(matrix: &SquareMatrix) -> Result<(), EnvError> {
    let n = matrix.dim();
    let scale = matrix.gershgorin_upper().max(1.0);
    let floor = -1e-10 * scale;
    let zero = 1e-14 * scale;
    let mut l = vec![0.0f64; n * n];
    let mut d = vec![0.0f64; n];
    for j in 0..n {
        let mut dj = matrix.get(j, j);
        for k in 0..j {
            dj -= l[j * n + k] * l[j * n + k] * d[k];
        }
        if dj < floor {
            return Err(EnvError::NotPositiveSemidefinite { pivot: dj });
        }
        d[j] = dj;
        for i in (j + 1)..n {
            if dj.abs() <= zero {
                l[i * n + j] = 0.0;
                continue;
            }
            let mut lij = matrix.get(i, j);
            for k in 0..j {
                lij -= l[i * n + k] * l[j * n + k] * d[k];
            }
            l[i * n + j] = lij / dj;
        }
    }
    Ok(())
}

/// The trained model: parameter vector, step counter, and the two knobs of
/// the synthetic training loop. `grad_evals` counts adversarial risk-gradient
/// evaluations, the cost unit that separates samplers from joint averaging.
#[derive(Debug, Clone, Serialize)]
pub struct EnvState {
    pub theta: Vec<f64>,
    pub step: u64,
    pub learning_rate: f64,
    pub noise_scale: f64,
    pub grad_evals: u64,
}

impl EnvState {
    pub fn new(theta: Vec<f64>, learning_rate: f64, noise_scale: f64) -> Result<Self, EnvError> {
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(EnvError::Diverged { step: 0 });
        }
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(EnvError::InvalidParameter { name: "learning_rate", value: learning_rate });
        }
        if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
            return Err(EnvError::InvalidParameter { name: "noise_scale", value: noise_scale });
        }
        Ok(Self { theta, step: 0, learning_rate, noise_scale, grad_evals: 0 })
    }
}

/// One gradient step on the hybrid loss beta * R_adv + (1 - beta) * R_clean.
/// Returns the post-update hybrid loss, times log-normal observation noise
/// when `noise_scale` is positive.
pub fn train_step<R: Rng>(
    env: &mut EnvState,
    risk: &QuadraticRisk,
    clean: &QuadraticRisk,
    beta: f64,
    rng: &mut R,
) -> Result<f64, EnvError> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(EnvError::BetaOutOfRange { value: beta });
    }
    let grad_adv = risk.gradient(&env.theta)?;
    env.grad_evals += 1;
    let grad_clean = clean.gradient(&env.theta)?;
    axpy(&mut env.theta, &grad_adv, -env.learning_rate * beta);
    axpy(&mut env.theta, &grad_clean, -env.learning_rate * (1.0 - beta));
    env.step += 1;
    if env.theta.iter().any(|x| !x.is_finite()) {
        return Err(EnvError::Diverged { step: env.step });
    }
    let adv = risk.value(&env.theta)?;
    let clean_value = clean.value(&env.theta)?;
    let mut loss = hybrid_loss(adv, clean_value, beta).expect("beta validated above");
    if env.noise_scale > 0.0 {
        let z: f64 = rng.sample(StandardNormal);
        loss *= (env.noise_scale * z).exp();
    }
    if !loss.is_finite() {
        return Err(EnvError::Diverged { step: env.step });
    }
    Ok(loss)
}

/// Unweighted mean risk over a set of surfaces.
pub fn avg_risk(risks: &[QuadraticRisk], theta: &[f64]) -> Result<f64, EnvError> {
    if risks.is_empty() {
        return Err(EnvError::EmptyRisks);
    }
    let mut total = 0.0;
    for risk in risks {
        total += risk.value(theta)?;
    }
    Ok(total / risks.len() as f64)
}

/// Gradient of the mean risk (the mean of the gradients).
pub fn avg_risk_gradient(risks: &[QuadraticRisk], theta: &[f64]) -> Result<Vec<f64>, EnvError> {
    if risks.is_empty() {
        return Err(EnvError::EmptyRisks);
    }
    let mut total = vec![0.0; theta.len()];
    for risk in risks {
        axpy(&mut total, &risk.gradient(theta)?, 1.0);
    }
    Ok(scaled(&total, 1.0 / risks.len() as f64))
}

/// Mean Hessian of a set of quadratic risks (constant over theta).
pub fn mean_hessian(risks: &[QuadraticRisk]) -> Result<SquareMatrix, EnvError> {
    if risks.is_empty() {
        return Err(EnvError::EmptyRisks);
    }
    let mut acc = SquareMatrix::zeros(risks[0].dim());
    for risk in risks {
        acc.add_assign_scaled(risk.matrix(), risk.strength());
    }
    Ok(acc.scaled(1.0 / risks.len() as f64))
}

/// Map a nonnegative risk to a (0, 1] robust-accuracy surrogate exp(-risk):
/// strictly decreasing, 1 exactly at zero risk.
pub fn accuracy_proxy(risk_value: f64) -> Result<f64, EnvError> {
    if !(risk_value >= 0.0) {
        return Err(EnvError::NegativeRisk { value: risk_value });
    }
    Ok((-risk_value).exp())
}

/// Top eigenvalue of a symmetric matrix by power iteration with a fixed
/// internal start vector. Stops when the residual |Av - lambda v| drops to
/// `tolerance` relative to |lambda|; for symmetric matrices the residual norm
/// bounds the distance from lambda to the nearest true eigenvalue, so the
/// returned value is certified, not just settled.
pub fn lambda_max(
    matrix: &SquareMatrix,
    tolerance: f64,
    max_iters: usize,
) -> Result<f64, EnvError> {
    let dim = matrix.dim();
    let mut start_rng = substream(0x9e37_79b9, "power-iteration-start");
    let mut v: Vec<f64> = (0..dim).map(|_| start_rng.sample::<f64, _>(StandardNormal)).collect();
    let v_norm = norm(&v);
    for x in v.iter_mut() {
        *x /= v_norm;
    }
    for _ in 0..max_iters {
        let w = matrix.mat_vec(&v);
        let w_norm = norm(&w);
        if w_norm < 1e-300 {
            // start vector is annihilated: the PSD matrix is (numerically) zero
            return Ok(0.0);
        }
        let estimate = dot(&v, &w);
        let residual_sq: f64 = w
            .iter()
            .zip(&v)
            .map(|(wi, vi)| {
                let r = wi - estimate * vi;
                r * r
            })
            .sum();
        if residual_sq.sqrt() <= tolerance * estimate.abs().max(1e-300) {
            return Ok(estimate);
        }
        v = w.into_iter().map(|x| x / w_norm).collect();
    }
    Err(EnvError::PowerIterationDidNotConverge { iterations: max_iters })
}

/// Top eigenvalue of the mean Hessian of `risks` at default tolerances.
pub fn hessian_lambda_max(risks: &[QuadraticRisk]) -> Result<f64, EnvError> {
    hessian_lambda_max_with(risks, POWER_ITERATION_TOLERANCE, POWER_ITERATION_MAX_ITERS)
}

pub fn hessian_lambda_max_with(
    risks: &[QuadraticRisk],
    tolerance: f64,
    max_iters: usize,
) -> Result<f64, EnvError> {
    lambda_max(&mean_hessian(risks)?, tolerance, max_iters)
}

/// Cosine of the angle between two nonzero vectors, clamped into [-1, 1].
pub fn cos_psi(grad_avg: &[f64], grad_q: &[f64]) -> Result<f64, EnvError> {
    if grad_avg.len() != grad_q.len() {
        return Err(EnvError::DimensionMismatch {
            expected: grad_avg.len(),
            got: grad_q.len(),
        });
    }
    let norm_a = norm(grad_avg);
    let norm_b = norm(grad_q);
    if norm_a < ANGLE_NORM_FLOOR || norm_b < ANGLE_NORM_FLOOR {
        return Err(EnvError::ZeroGradient);
    }
    Ok((dot(grad_avg, grad_q) / (norm_a * norm_b)).clamp(-1.0, 1.0))
}

/// Right-hand side of the average-risk drift bound:
/// -|grad| |drift| cos(psi) + 0.5 lambda_max |drift|^2.
pub fn lemma1_bound(grad_avg_norm: f64, drift_norm: f64, cos_psi: f64, lambda_max: f64) -> f64 {
    -grad_avg_norm * drift_norm * cos_psi + 0.5 * lambda_max * drift_norm * drift_norm
}

/// Safe parameter-drift threshold 2 |grad| cos(psi) / lambda_max. Returns 0
/// when cos(psi) <= 0 (no positive drift is guaranteed safe); positive top
/// curvature is required.
pub fn drift_threshold(
    grad_avg_norm: f64,
    cos_psi: f64,
    lambda_max: f64,
) -> Result<f64, EnvError> {
    if !(lambda_max > 0.0) {
        return Err(EnvError::NonPositiveCurvature { value: lambda_max });
    }
    if cos_psi <= 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * grad_avg_norm * cos_psi / lambda_max)
}

/// Everything the drift analysis measures at one step of a fine-tuning phase.
#[derive(Debug, Clone, Serialize)]
pub struct DriftReport {
    pub grad_avg_norm: f64,
    pub cos_psi: f64,
    pub lambda_max: f64,
    pub drift_norm: f64,
    pub threshold: f64,
    pub bound_value: f64,
    pub actual_delta: f64,
}

/// Result of the iterative epsilon calibration.
#[derive(Debug, Clone, Serialize)]
pub struct CalibrationOutcome {
    pub epsilon: f64,
    pub accuracy: f64,
    /// False when the iteration cap was hit before the accuracy landed in
    /// the target band; `epsilon` then holds the last iterate.
    pub converged: bool,
    pub iterations: u32,
}

/// Iterate eps <- (lambda_k + accuracy(eps)) * epsilon_base until the proxy
/// accuracy of the risk at `theta` lands in `target`, or the cap is hit.
pub fn calibrate_epsilon(
    lambda_k: f64,
    epsilon_base: f64,
    risk: &QuadraticRisk,
    theta: &[f64],
    target: (f64, f64),
    max_iters: u32,
) -> Result<CalibrationOutcome, EnvError> {
    if !(epsilon_base > 0.0 && epsilon_base.is_finite()) {
        return Err(EnvError::NonPositiveStrength { value: epsilon_base });
    }
    let mut epsilon = epsilon_base;
    let mut accuracy = accuracy_proxy(risk.value_with_strength(theta, epsilon)?)?;
    for iteration in 0..max_iters {
        if accuracy >= target.0 && accuracy <= target.1 {
            return Ok(CalibrationOutcome { epsilon, accuracy, converged: true, iterations: iteration });
        }
        epsilon = (lambda_k + accuracy) * epsilon_base;
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(EnvError::NonPositiveStrength { value: epsilon });
        }
        accuracy = accuracy_proxy(risk.value_with_strength(theta, epsilon)?)?;
    }
    Ok(CalibrationOutcome { epsilon, accuracy, converged: false, iterations: max_iters })
}

/// Aggregate update direction sum_k w_k exp(alpha R_k) grad_k, with the same
/// exponent clamp as the scheduler's score augmentation. With all rewards
/// zero this reduces to the static scalarization sum_k w_k grad_k.
pub fn pareto_reweighted_direction(
    grads: &[Vec<f64>],
    weights: &[f64],
    rewards: &[f64],
    alpha: f64,
) -> Result<Vec<f64>, EnvError> {
    if grads.is_empty() {
        return Err(EnvError::EmptyRisks);
    }
    if grads.len() != weights.len() || grads.len() != rewards.len() {
        return Err(EnvError::DimensionMismatch { expected: grads.len(), got: weights.len() });
    }
    let dim = grads[0].len();
    let mut direction = vec![0.0; dim];
    for ((grad, &w), &r) in grads.iter().zip(weights).zip(rewards) {
        if grad.len() != dim {
            return Err(EnvError::DimensionMismatch { expected: dim, got: grad.len() });
        }
        let factor = w * (alpha * r).clamp(-EXP_CLAMP, EXP_CLAMP).exp();
        axpy(&mut direction, grad, factor);
    }
    Ok(direction)
}

// ---------------------------------------------------------------------------
// Seeded instance generators
// ---------------------------------------------------------------------------

/// Distance of risk centers from the origin at full conflict.
pub const CENTER_RADIUS: f64 = 1.2;

/// Baseline risk offset; keeps observed losses strictly positive even at a
/// risk's minimizer.
pub const RISK_OFFSET: f64 = 0.05;

/// Eigenvalue range for generated risk curvatures.
pub const EIGENVALUE_RANGE: (f64, f64) = (0.5, 1.5);

fn random_unit<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-6 {
            return scaled(&v, 1.0 / n);
        }
    }
}

/// Random orthogonal basis via Gram-Schmidt on Gaussian columns.
fn random_orthogonal<R: Rng>(dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for b in &basis {
            let proj = dot(&v, b);
            axpy(&mut v, b, -proj);
        }
        let n = norm(&v);
        if n > 1e-8 {
            basis.push(scaled(&v, 1.0 / n));
        }
    }
    basis
}

fn psd_from_basis(basis: &[Vec<f64>], eigenvalues: &[f64]) -> SquareMatrix {
    let dim = eigenvalues.len();
    let mut m = SquareMatrix::zeros(dim);
    for (vec, &lam) in basis.iter().zip(eigenvalues) {
        for i in 0..dim {
            for j in 0..dim {
                m.set(i, j, m.get(i, j) + lam * vec[i] * vec[j]);
            }
        }
    }
    // wipe rounding asymmetry so the constructor's symmetry check passes
    let mut sym = SquareMatrix::zeros(dim);
    for i in 0..dim {
        for j in 0..dim {
            sym.set(i, j, 0.5 * (m.get(i, j) + m.get(j, i)));
        }
    }
    sym
}

fn generated_risk<R: Rng>(dim: usize, conflict: f64, rng: &mut R) -> QuadraticRisk {
    let (lo, hi) = EIGENVALUE_RANGE;
    let eigenvalues: Vec<f64> = (0..dim).map(|_| rng.random_range(lo..hi)).collect();
    let basis = random_orthogonal(dim, rng);
    let matrix = psd_from_basis(&basis, &eigenvalues);
    let direction = random_unit(dim, rng);
    let center = scaled(&direction, conflict * CENTER_RADIUS);
    QuadraticRisk::new(matrix, center, RISK_OFFSET, 1.0).expect("generated matrix is PSD")
}

/// Generate `count` seeded risk surfaces. `conflict` in [0, 1] scales how far
/// the risk centers spread from the shared origin: 0 puts every minimizer at
/// the same point (training on any attack helps all of them), 1 spreads them
/// on a sphere of radius [`CENTER_RADIUS`] so training on one attack drags
/// parameters away from the others.
pub fn generate_risks(count: usize, dim: usize, conflict: f64, seed: u64) -> Vec<QuadraticRisk> {
    (0..count)
        .map(|k| {
            let mut rng = substream(seed, &format!("risk-{k}"));
            generated_risk(dim, conflict, &mut rng)
        })
        .collect()
}

/// The clean-accuracy surface: same construction as the attack risks but
/// always centered at the origin.
pub fn generate_clean_risk(dim: usize, seed: u64) -> QuadraticRisk {
    let mut rng = substream(seed, "risk-clean");
    generated_risk(dim, 0.0, &mut rng)
}

/// A seeded (R_p, R_q) pair sharing one curvature matrix, with centers
/// rotated apart by `conflict * pi`: 0 gives identical risks, 1 gives
/// opposing minimizers.
pub fn conflict_pair(dim: usize, conflict: f64, seed: u64) -> (QuadraticRisk, QuadraticRisk) {
    assert!(dim >= 2, "a conflict pair needs at least 2 dimensions");
    let mut rng = substream(seed, "pair");
    let (lo, hi) = EIGENVALUE_RANGE;
    let eigenvalues: Vec<f64> = (0..dim).map(|_| rng.random_range(lo..hi)).collect();
    let basis = random_orthogonal(dim, &mut rng);
    let matrix = psd_from_basis(&basis, &eigenvalues);
    let u = random_unit(dim, &mut rng);
    let mut v = random_unit(dim, &mut rng);
    let proj = dot(&v, &u);
    axpy(&mut v, &u, -proj);
    let v = scaled(&v, 1.0 / norm(&v));
    let angle = conflict * std::f64::consts::PI;
    let center_p = scaled(&u, CENTER_RADIUS);
    let mut center_q = scaled(&u, CENTER_RADIUS * angle.cos());
    axpy(&mut center_q, &v, CENTER_RADIUS * angle.sin());
    let risk_p = QuadraticRisk::new(matrix.clone(), center_p, RISK_OFFSET, 1.0).expect("PSD");
    let risk_q = QuadraticRisk::new(matrix, center_q, RISK_OFFSET, 1.0).expect("PSD");
    (risk_p, risk_q)
}

/// Seeded starting parameters, scaled so typical generated risks start with
/// an accuracy proxy well inside (0, 1).
pub fn generate_theta(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = substream(seed, "theta0");
    let raw: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    scaled(&raw, 0.5 / (dim as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(actual: f64, expected: f64, tol: f64) {
        assert!(
            (actual - expected).abs() <= tol,
            "expected {expected}, got {actual} (tol {tol})"
        );
    }

    fn identity_risk(dim: usize) -> QuadraticRisk {
        QuadraticRisk::new(SquareMatrix::identity(dim), vec![0.0; dim], 0.0, 1.0).unwrap()
    }

    #[test]
    fn value_at_center_is_scaled_offset() {
        let risk = QuadraticRisk::new(
            SquareMatrix::diagonal(&[2.0, 5.0]),
            vec![1.0, -3.0],
            0.25,
            4.0,
        )
        .unwrap();
        assert_close(risk.value(&[1.0, -3.0]).unwrap(), 4.0 * 0.25, 1e-15);
    }

    #[test]
    fn value_identity_case() {
        let risk = identity_risk(2);
        assert_close(risk.value(&[3.0, 4.0]).unwrap(), 12.5, 1e-15);
    }

    #[test]
    fn value_linear_in_strength() {
        let risk = identity_risk(3);
        let theta = [1.0, 2.0, -1.0];
        let base = risk.value(&theta).unwrap();
        let doubled = risk.with_strength(2.0).unwrap().value(&theta).unwrap();
        assert_close(doubled, 2.0 * base, 1e-15);
    }

    #[test]
    fn gradient_zero_at_center_and_identity_case() {
        let risk = identity_risk(2);
        assert_eq!(risk.gradient(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(risk.gradient(&[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let risk = identity_risk(2);
        assert!(matches!(
            risk.value(&[1.0, 2.0, 3.0]),
            Err(EnvError::DimensionMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn constructor_rejects_asymmetric_and_indefinite() {
        let asym = SquareMatrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            QuadraticRisk::new(asym, vec![0.0, 0.0], 0.0, 1.0),
            Err(EnvError::AsymmetricMatrix { .. })
        ));
        let indefinite = SquareMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(
            QuadraticRisk::new(indefinite, vec![0.0, 0.0], 0.0, 1.0),
            Err(EnvError::NotPositiveSemidefinite { .. })
        ));
        // semidefinite (one zero eigenvalue) must pass
        let semi = SquareMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(QuadraticRisk::new(semi, vec![0.0, 0.0], 0.0, 1.0).is_ok());
    }

    #[test]
    fn avg_risk_examples() {
        let a = identity_risk(2);
        let b = identity_risk(2).with_strength(3.0).unwrap();
        let theta = [1.0, 1.0]; // values 1.0 and 3.0
        assert_close(avg_risk(&[a.clone(), b], &theta).unwrap(), 2.0, 1e-15);
        assert_close(avg_risk(&[a.clone(), a.clone()], &theta).unwrap(), 1.0, 1e-15);
        assert!(matches!(avg_risk(&[], &theta), Err(EnvError::EmptyRisks)));
    }

    #[test]
    fn train_step_zero_learning_rate_keeps_theta() {
        let risk = identity_risk(2);
        let clean = identity_risk(2);
        let mut env = EnvState::new(vec![1.0, 2.0], 0.0, 0.0).unwrap();
        let mut rng = crate::rng::substream(0, "env");
        train_step(&mut env, &risk, &clean, 1.0, &mut rng).unwrap();
        assert_eq!(env.theta, vec![1.0, 2.0]);
        assert_eq!(env.step, 1);
        assert_eq!(env.grad_evals, 1);
    }

    #[test]
    fn train_step_explicit_gradient_step() {
        let risk = identity_risk(2);
        let clean = identity_risk(2);
        let mut env = EnvState::new(vec![1.0, 0.0], 0.1, 0.0).unwrap();
        let mut rng = crate::rng::substream(0, "env");
        let loss = train_step(&mut env, &risk, &clean, 1.0, &mut rng).unwrap();
        assert_close(env.theta[0], 0.9, 1e-15);
        assert_close(env.theta[1], 0.0, 1e-15);
        assert_close(loss, 0.5 * 0.81, 1e-15);
    }

    #[test]
    fn train_step_monotone_descent_under_stable_rate() {
        let risk = identity_risk(3);
        let clean = identity_risk(3);
        let mut env = EnvState::new(vec![1.0, -2.0, 0.5], 0.5, 0.0).unwrap();
        let mut rng = crate::rng::substream(0, "env");
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            let loss = train_step(&mut env, &risk, &clean, 0.9, &mut rng).unwrap();
            assert!(loss <= last);
            last = loss;
        }
    }

    #[test]
    fn train_step_detects_divergence() {
        let risk = identity_risk(2);
        let clean = identity_risk(2);
        let mut env = EnvState::new(vec![1.0, 1.0], 1e6, 0.0).unwrap();
        let mut rng = crate::rng::substream(0, "env");
        let mut saw_divergence = false;
        for _ in 0..10_000 {
            match train_step(&mut env, &risk, &clean, 1.0, &mut rng) {
                Ok(_) => continue,
                Err(EnvError::Diverged { step }) => {
                    assert!(step > 0);
                    saw_divergence = true;
                    break;
                }
                Err(other) => panic!("unexpected error {other}"),
            }
        }
        assert!(saw_divergence);
    }

    #[test]
    fn accuracy_proxy_contract() {
        assert_eq!(accuracy_proxy(0.0).unwrap(), 1.0);
        assert_close(accuracy_proxy(2f64.ln()).unwrap(), 0.5, 1e-15);
        assert!(accuracy_proxy(1.0).unwrap() > accuracy_proxy(2.0).unwrap());
        assert!(matches!(accuracy_proxy(-0.1), Err(EnvError::NegativeRisk { .. })));
        assert!(matches!(accuracy_proxy(f64::NAN), Err(EnvError::NegativeRisk { .. })));
    }

    #[test]
    fn hessian_lambda_max_diagonal_cases() {
        let a = QuadraticRisk::new(SquareMatrix::diagonal(&[3.0, 1.0]), vec![0.0; 2], 0.0, 1.0)
            .unwrap();
        assert_close(hessian_lambda_max(&[a.clone()]).unwrap(), 3.0, 1e-7);
        let b = QuadraticRisk::new(SquareMatrix::diagonal(&[1.0, 3.0]), vec![0.0; 2], 0.0, 1.0)
            .unwrap();
        // mean Hessian is 2 I; power iteration converges immediately
        assert_close(hessian_lambda_max(&[a, b]).unwrap(), 2.0, 1e-7);
    }

    #[test]
    fn lambda_max_respects_strength() {
        let risk = QuadraticRisk::new(SquareMatrix::diagonal(&[2.0, 1.0]), vec![0.0; 2], 0.0, 3.0)
            .unwrap();
        assert_close(hessian_lambda_max(&[risk]).unwrap(), 6.0, 1e-6);
    }

    #[test]
    fn cos_psi_cases() {
        assert_close(cos_psi(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 1.0, 1e-15);
        assert_close(cos_psi(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0, 1e-15);
        assert_close(
            cos_psi(&[1.0, 0.0], &[1.0, 1.0]).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            1e-15,
        );
        assert!(matches!(cos_psi(&[0.0, 0.0], &[1.0, 0.0]), Err(EnvError::ZeroGradient)));
    }

    #[test]
    fn lemma1_bound_cases() {
        assert_eq!(lemma1_bound(2.0, 0.0, 1.0, 5.0), 0.0);
        assert_close(lemma1_bound(1.0, 1.0, 1.0, 1.0), -0.5, 1e-15);
    }

    #[test]
    fn drift_threshold_canonical_two_sided() {
        // R_avg = 0.5 |theta|^2 at theta = (1, 0): threshold is 2
        let risk = identity_risk(2);
        let theta1 = [1.0, 0.0];
        let grad = avg_risk_gradient(&[risk.clone(), risk.clone()], &theta1).unwrap();
        let lam = hessian_lambda_max(&[risk.clone(), risk.clone()]).unwrap();
        let threshold = drift_threshold(norm(&grad), 1.0, lam).unwrap();
        assert_close(threshold, 2.0, 1e-7);
        let value_after = |drift: f64| {
            let theta2 = [1.0 - drift, 0.0];
            avg_risk(&[risk.clone(), risk.clone()], &theta2).unwrap()
        };
        assert_close(value_after(1.9), 0.405, 1e-12);
        assert_close(value_after(2.1), 0.605, 1e-12);
    }

    #[test]
    fn drift_threshold_edge_cases() {
        assert_eq!(drift_threshold(3.0, 0.0, 1.0).unwrap(), 0.0);
        assert_eq!(drift_threshold(3.0, -0.4, 1.0).unwrap(), 0.0);
        assert_close(
            drift_threshold(2.0, 0.5, 1.0).unwrap(),
            2.0 * drift_threshold(1.0, 0.5, 1.0).unwrap(),
            1e-15,
        );
        assert!(matches!(
            drift_threshold(1.0, 0.5, 0.0),
            Err(EnvError::NonPositiveCurvature { .. })
        ));
    }

    #[test]
    fn calibration_fixed_point_when_accuracy_is_zero() {
        // an enormous risk keeps the proxy at ~0, so eps = (1 + 0) * base forever
        let risk = QuadraticRisk::new(SquareMatrix::diagonal(&[1.0]), vec![0.0], 1e6, 1.0).unwrap();
        let out = calibrate_epsilon(1.0, 2.0, &risk, &[0.0], CALIBRATION_TARGET, 25).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 25);
        assert_close(out.epsilon, 2.0, 1e-12);
    }

    #[test]
    fn calibration_lands_in_target_band() {
        // base risk value 4 at theta; eps_base 0.5, lambda 0.058 puts the
        // fixed point's accuracy inside [0.2, 0.6]
        let risk = QuadraticRisk::new(SquareMatrix::diagonal(&[2.0]), vec![0.0], 0.0, 1.0).unwrap();
        let theta = [2.0];
        assert_close(risk.value(&theta).unwrap(), 4.0, 1e-15);
        let out =
            calibrate_epsilon(0.058, 0.5, &risk, &theta, CALIBRATION_TARGET, CALIBRATION_MAX_ITERS)
                .unwrap();
        assert!(out.converged, "calibration should land: {out:?}");
        assert!(out.accuracy >= 0.2 && out.accuracy <= 0.6);
    }

    #[test]
    fn calibration_single_substitution() {
        // lambda 0, starting accuracy 0.4, unreachable band: one update gives
        // eps = 0.4 * base
        let risk =
            QuadraticRisk::new(SquareMatrix::diagonal(&[2.0]), vec![0.0], 0.0, 1.0).unwrap();
        let theta = [(2.5f64.ln()).sqrt()]; // risk value ln 2.5, proxy 0.4
        let out = calibrate_epsilon(0.0, 1.0, &risk, &theta, (0.8, 0.9), 1).unwrap();
        assert!(!out.converged);
        assert_close(out.epsilon, 0.4, 1e-12);
    }

    #[test]
    fn pareto_direction_cases() {
        let grads = vec![vec![1.0, 0.0], vec![0.0, 2.0]];
        let zero_rewards = pareto_reweighted_direction(&grads, &[2.0, 3.0], &[0.0, 0.0], 10.0)
            .unwrap();
        assert_eq!(zero_rewards, vec![2.0, 6.0]);

        let single = pareto_reweighted_direction(&grads[..1], &[2.0], &[0.1], 10.0).unwrap();
        let factor = 2.0 * 1f64.exp();
        assert_close(single[0], factor, 1e-12);
        assert_close(single[1], 0.0, 1e-12);

        // opposing gradients with a positive reward on the first: the first wins
        let opposing = vec![vec![1.0, 1.0], vec![-1.0, -1.0]];
        let dir =
            pareto_reweighted_direction(&opposing, &[1.0, 1.0], &[0.2, 0.0], 10.0).unwrap();
        assert!(dir[0] > 0.0 && dir[1] > 0.0);
    }

    #[test]
    fn generators_are_deterministic_and_valid() {
        let a = generate_risks(4, 6, 0.8, 99);
        let b = generate_risks(4, 6, 0.8, 99);
        assert_eq!(a.len(), 4);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x, y);
        }
        // centers scale with conflict
        let zero_conflict = generate_risks(3, 6, 0.0, 99);
        for risk in &zero_conflict {
            assert!(norm(risk.center()) < 1e-12);
        }
    }

    #[test]
    fn conflict_pair_extremes() {
        let (p0, q0) = conflict_pair(5, 0.0, 7);
        assert_eq!(p0, q0);
        let (p1, q1) = conflict_pair(5, 1.0, 7);
        let dot_centers = dot(p1.center(), q1.center());
        assert_close(dot_centers, -CENTER_RADIUS * CENTER_RADIUS, 1e-9);
    }

    #[test]
    fn generated_start_has_moderate_risk() {
        let theta = generate_theta(8, 123);
        let risks = generate_risks(5, 8, 1.0, 123);
        for risk in &risks {
            let proxy = accuracy_proxy(risk.value(&theta).unwrap()).unwrap();
            assert!(proxy > 0.05 && proxy < 0.95, "proxy {proxy} out of the useful band");
        }
    }
}
