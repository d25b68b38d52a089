//! Desk-scale experiment procedures: the sequential fine-tuning trade-off
//! matrix, the frozen-reward equilibrium check, Robbins-Monro convergence
//! runs, and the sequential-failure drift demonstration.

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::env::{
    accuracy_proxy, avg_risk, avg_risk_gradient, cos_psi, drift_threshold, hessian_lambda_max,
    lemma1_bound, train_step, DriftReport, EnvError, EnvState, QuadraticRisk,
};
use crate::linalg::{axpy, norm, scaled, sub, SquareMatrix};
use crate::parallel::par_map_range;
use crate::rng::{sample_categorical, substream};
use crate::scheduler::{sampling_distribution, ucb_augment, SchedulerError, EXP_CLAMP};

/// Pull count per arm used to suppress the exploration bonus in equilibrium
/// checks: large and equal, so the bonus is a common additive constant.
pub const EQUILIBRIUM_PULLS: u64 = 1_000_000;

/// Default convergence criterion: final squared distance below this fraction
/// of the initial one.
pub const CONVERGENCE_TOLERANCE_RATIO: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error("row {row} diverged: {source}")]
    RowDiverged { row: usize, source: EnvError },
    #[error("composite Hessian is singular: the sampled objective is not strongly convex")]
    NotStronglyConvex,
}

/// Whether each matrix row restarts from the shared checkpoint or continues
/// from where the previous row left off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MatrixMode {
    /// Reset parameters to the checkpoint before every row (default; makes
    /// the matrix independent of row order).
    ResetPerRow,
    /// Carry parameters across rows; entries are still deltas over each
    /// row's own starting point.
    Cumulative,
}

/// M x M matrix of accuracy-proxy changes: entry (v, k) is how attack k's
/// proxy moved after fine-tuning against attack v for `epochs_per_row` steps.
#[derive(Debug, Clone, Serialize)]
pub struct TradeoffMatrix {
    pub entries: SquareMatrix,
    pub epochs_per_row: usize,
    pub baseline_accuracies: Vec<f64>,
    pub mode: MatrixMode,
}

/// Aggregate indicators of a trade-off matrix.
#[derive(Debug, Clone, Serialize)]
pub struct MatrixStats {
    pub total_sum: f64,
    pub asymmetry_norm: f64,
    pub row_sums: Vec<f64>,
    pub col_sums: Vec<f64>,
}

/// Outcome of a frozen-reward equilibrium check.
#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumReport {
    pub target: Vec<f64>,
    pub empirical: Vec<f64>,
    pub max_abs_deviation: f64,
}

/// Step-size schedule eta_t = c / t^p for t >= 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EtaSchedule {
    pub coefficient: f64,
    pub exponent: f64,
}

impl EtaSchedule {
    pub fn new(coefficient: f64, exponent: f64) -> Self {
        Self { coefficient, exponent }
    }

    pub fn inverse_t(coefficient: f64) -> Self {
        Self::new(coefficient, 1.0)
    }

    pub fn constant(coefficient: f64) -> Self {
        Self::new(coefficient, 0.0)
    }

    pub fn eta(&self, t: u64) -> f64 {
        debug_assert!(t >= 1);
        self.coefficient / (t as f64).powf(self.exponent)
    }

    /// Closed-form classification for the c / t^p family: the step sum
    /// diverges iff p <= 1 and the squared sum converges iff p > 1/2, so the
    /// schedule is valid iff 1/2 < p <= 1 (with c > 0).
    pub fn is_robbins_monro(&self) -> bool {
        self.coefficient > 0.0 && self.exponent > 0.5 && self.exponent <= 1.0
    }
}

/// Prefix sums of a schedule at a finite horizon, next to its closed-form
/// classification.
#[derive(Debug, Clone, Serialize)]
pub struct RobbinsMonroReport {
    pub eta_sum: f64,
    pub eta_sq_sum: f64,
    pub sum_divergent: bool,
    pub sq_sum_convergent: bool,
    pub valid: bool,
}

/// Evaluate the Robbins-Monro conditions for a c / t^p schedule.
pub fn robbins_monro_check(schedule: &EtaSchedule, horizon: u64) -> RobbinsMonroReport {
    assert!(horizon >= 10, "horizon too short to say anything about a schedule");
    let mut eta_sum = 0.0;
    let mut eta_sq_sum = 0.0;
    for t in 1..=horizon {
        let eta = schedule.eta(t);
        eta_sum += eta;
        eta_sq_sum += eta * eta;
    }
    let sum_divergent = schedule.coefficient > 0.0 && schedule.exponent <= 1.0;
    let sq_sum_convergent = schedule.exponent > 0.5 || schedule.coefficient == 0.0;
    RobbinsMonroReport {
        eta_sum,
        eta_sq_sum,
        sum_divergent,
        sq_sum_convergent,
        valid: schedule.is_robbins_monro(),
    }
}

/// Trajectory record of one stochastic gradient run.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    /// V_t = 0.5 |theta_t - theta*|^2 for t = 0..=horizon.
    pub v_series: Vec<f64>,
    pub eta_sum: f64,
    pub eta_sq_sum: f64,
    pub schedule_valid: bool,
    pub converged: bool,
    pub tolerance_ratio: f64,
}

impl ConvergenceReport {
    pub fn v_initial(&self) -> f64 {
        self.v_series[0]
    }

    pub fn v_final(&self) -> f64 {
        *self.v_series.last().expect("series is never empty")
    }
}

/// Run the sequential fine-tuning experiment: for each row v, start from the
/// checkpoint (or the running state in cumulative mode), take
/// `epochs_per_row` hybrid training steps against risk v, and record every
/// attack's accuracy-proxy change over that row.
///
/// Observation noise never enters: the matrix is built from exact risk
/// values, so only the parameter trajectory matters and it is noise-free by
/// construction. Rows run in parallel in reset mode.
pub fn tradeoff_matrix(
    checkpoint: &EnvState,
    risks: &[QuadraticRisk],
    clean: &QuadraticRisk,
    beta: f64,
    epochs_per_row: usize,
    mode: MatrixMode,
) -> Result<TradeoffMatrix, AnalysisError> {
    if risks.is_empty() {
        return Err(AnalysisError::Env(EnvError::EmptyRisks));
    }
    let arms = risks.len();
    let mut baseline_accuracies = Vec::with_capacity(arms);
    for risk in risks {
        baseline_accuracies.push(accuracy_proxy(risk.value(&checkpoint.theta)?)?);
    }

    let run_row = |row: usize, start: &EnvState| -> Result<(Vec<f64>, EnvState), AnalysisError> {
        let before: Result<Vec<f64>, EnvError> = risks
            .iter()
            .map(|r| accuracy_proxy(r.value(&start.theta)?))
            .collect();
        let before = before?;
        let mut env = start.clone();
        let mut rng = substream(0, "tradeoff-noise"); // drawn only if noise is configured
        for _ in 0..epochs_per_row {
            train_step(&mut env, &risks[row], clean, beta, &mut rng)
                .map_err(|source| AnalysisError::RowDiverged { row, source })?;
        }
        let mut deltas = Vec::with_capacity(arms);
        for (risk, b) in risks.iter().zip(&before) {
            deltas.push(accuracy_proxy(risk.value(&env.theta)?)? - b);
        }
        Ok((deltas, env))
    };

    let mut entries = SquareMatrix::zeros(arms);
    match mode {
        MatrixMode::ResetPerRow => {
            let rows: Vec<Result<(Vec<f64>, EnvState), AnalysisError>> =
                par_map_range(arms, |row| run_row(row, checkpoint));
            for (row, result) in rows.into_iter().enumerate() {
                let (deltas, _) = result?;
                for (k, d) in deltas.into_iter().enumerate() {
                    entries.set(row, k, d);
                }
            }
        }
        MatrixMode::Cumulative => {
            let mut state = checkpoint.clone();
            for row in 0..arms {
                let (deltas, next) = run_row(row, &state)?;
                for (k, d) in deltas.into_iter().enumerate() {
                    entries.set(row, k, d);
                }
                state = next;
            }
        }
    }
    Ok(TradeoffMatrix { entries, epochs_per_row, baseline_accuracies, mode })
}

/// Total sum, relative asymmetry, and row/column sums of a square matrix.
pub fn matrix_stats(matrix: &SquareMatrix) -> MatrixStats {
    let n = matrix.dim();
    let mut total_sum = 0.0;
    let mut row_sums = vec![0.0; n];
    let mut col_sums = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let v = matrix.get(i, j);
            total_sum += v;
            row_sums[i] += v;
            col_sums[j] += v;
        }
    }
    let asymmetry = matrix.sub(&matrix.transpose()).frobenius_norm();
    let scale = matrix.frobenius_norm().max(1e-12);
    MatrixStats { total_sum, asymmetry_norm: asymmetry / scale, row_sums, col_sums }
}

/// Freeze rewards, suppress the exploration bonus by evaluating it at large
/// equalized pull counts, draw `draws` selections, and compare empirical
/// frequencies to the closed-form target pi_v proportional to
/// w_v exp(alpha R_v).
pub fn equilibrium_check<R: Rng>(
    rewards: &[f64],
    weights: &[f64],
    alpha: f64,
    draws: usize,
    rng: &mut R,
) -> Result<EquilibriumReport, AnalysisError> {
    assert!(draws >= 10_000, "equilibrium frequencies need at least 1e4 draws");
    let arms = rewards.len();
    let total_pulls = EQUILIBRIUM_PULLS * arms as u64;
    let scores: Result<Vec<f64>, SchedulerError> = rewards
        .iter()
        .map(|&r| ucb_augment(r, EQUILIBRIUM_PULLS, total_pulls, alpha))
        .collect();
    let probabilities = sampling_distribution(&scores?, weights)?;

    let exp_terms: Vec<f64> =
        rewards.iter().map(|&r| (alpha * r).clamp(-EXP_CLAMP, EXP_CLAMP).exp()).collect();
    let target = sampling_distribution(&exp_terms, weights)?;

    let mut counts = vec![0u64; arms];
    for _ in 0..draws {
        counts[sample_categorical(&probabilities, rng)] += 1;
    }
    let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / draws as f64).collect();
    let max_abs_deviation = empirical
        .iter()
        .zip(&target)
        .map(|(e, t)| (e - t).abs())
        .fold(0.0f64, f64::max);
    Ok(EquilibriumReport { target, empirical, max_abs_deviation })
}

/// Minimizer of the pi-weighted composite of quadratic risks, solved from
/// the stationarity condition.
pub fn composite_minimizer(
    risks: &[QuadraticRisk],
    pi: &[f64],
) -> Result<Vec<f64>, AnalysisError> {
    if risks.is_empty() {
        return Err(AnalysisError::Env(EnvError::EmptyRisks));
    }
    let dim = risks[0].dim();
    let mut hessian = SquareMatrix::zeros(dim);
    let mut rhs = vec![0.0; dim];
    for (risk, &p) in risks.iter().zip(pi) {
        let weighted = risk.hessian().scaled(p);
        axpy(&mut rhs, &weighted.mat_vec(risk.center()), 1.0);
        hessian.add_assign_scaled(&weighted, 1.0);
    }
    hessian.solve(&rhs).map_err(|_| AnalysisError::NotStronglyConvex)
}

/// Run stochastic gradient descent on the pi-sampled composite: at each step
/// draw an arm from `pi` and descend that risk's gradient with step size
/// eta_t. Records V_t = 0.5 |theta_t - theta*|^2 against the analytic
/// minimizer.
pub fn convergence_run<R: Rng>(
    risks: &[QuadraticRisk],
    pi: &[f64],
    theta0: &[f64],
    schedule: &EtaSchedule,
    horizon: u64,
    tolerance_ratio: f64,
    rng: &mut R,
) -> Result<ConvergenceReport, AnalysisError> {
    let optimum = composite_minimizer(risks, pi)?;
    let v_of = |theta: &[f64]| {
        let diff = sub(theta, &optimum);
        0.5 * crate::linalg::dot(&diff, &diff)
    };
    let mut theta = theta0.to_vec();
    let mut v_series = Vec::with_capacity(horizon as usize + 1);
    v_series.push(v_of(&theta));
    let mut eta_sum = 0.0;
    let mut eta_sq_sum = 0.0;
    for t in 1..=horizon {
        let arm = sample_categorical(pi, rng);
        let grad = risks[arm].gradient(&theta)?;
        let eta = schedule.eta(t);
        eta_sum += eta;
        eta_sq_sum += eta * eta;
        axpy(&mut theta, &grad, -eta);
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(AnalysisError::Env(EnvError::Diverged { step: t }));
        }
        v_series.push(v_of(&theta));
    }
    let converged = v_series.last().unwrap() < &(tolerance_ratio * v_series[0]);
    Ok(ConvergenceReport {
        v_series,
        eta_sum,
        eta_sq_sum,
        schedule_valid: schedule.is_robbins_monro(),
        converged,
        tolerance_ratio,
    })
}

/// Fine-tune on risk p, then on risk q, and report the drift diagnostics
/// after every q-phase step: accumulated drift norm against the safe
/// threshold, and the measured average-risk change against the second-order
/// bound. Both phases are pure gradient descent on the single active risk.
///
/// The reported cos(psi) is measured against the realized drift direction
/// (for the first q step this coincides with the angle between the two
/// gradients), which keeps the bound an exact-quadratic identity even after
/// the drift direction starts to curve.
pub fn sequential_failure_demo(
    start: &EnvState,
    risk_p: &QuadraticRisk,
    risk_q: &QuadraticRisk,
    phase_p: usize,
    phase_q: usize,
) -> Result<Vec<DriftReport>, AnalysisError> {
    let pair = [risk_p.clone(), risk_q.clone()];
    let mut theta = start.theta.clone();
    for _ in 0..phase_p {
        let grad = risk_p.gradient(&theta)?;
        axpy(&mut theta, &grad, -start.learning_rate);
    }
    let theta1 = theta.clone();
    let grad_avg = avg_risk_gradient(&pair, &theta1)?;
    let grad_avg_norm = norm(&grad_avg);
    let lambda = hessian_lambda_max(&pair)?;
    let r_avg_start = avg_risk(&pair, &theta1)?;

    let mut reports = Vec::with_capacity(phase_q);
    for _ in 0..phase_q {
        let grad = risk_q.gradient(&theta)?;
        axpy(&mut theta, &grad, -start.learning_rate);
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(AnalysisError::Env(EnvError::Diverged { step: 0 }));
        }
        let drift = sub(&theta, &theta1);
        let drift_norm = norm(&drift);
        let cos = cos_psi(&grad_avg, &scaled(&drift, -1.0))?;
        reports.push(DriftReport {
            grad_avg_norm,
            cos_psi: cos,
            lambda_max: lambda,
            drift_norm,
            threshold: drift_threshold(grad_avg_norm, cos, lambda)?,
            bound_value: lemma1_bound(grad_avg_norm, drift_norm, cos, lambda),
            actual_delta: avg_risk(&pair, &theta)? - r_avg_start,
        });
    }
    Ok(reports)
}

/// Index of the first report whose measured average-risk change is positive.
pub fn first_crossing(reports: &[DriftReport]) -> Option<usize> {
    reports.iter().position(|r| r.actual_delta > 0.0)
}

/// The pinned strongly convex instance used by convergence checks: three
/// risks sharing a diagonal curvature (eigenvalues 0.8..1.2), centers spread
/// along a fast coordinate so arm sampling injects gradient noise, and a
/// start far out along the slowest coordinate. Returns (risks, pi, theta0).
pub fn canonical_convergence_instance() -> (Vec<QuadraticRisk>, Vec<f64>, Vec<f64>) {
    let curvature = [0.8, 1.0, 1.0, 1.2];
    let mk = |center: Vec<f64>| {
        QuadraticRisk::new(
            crate::linalg::SquareMatrix::diagonal(&curvature),
            center,
            0.0,
            1.0,
        )
        .expect("diagonal PSD")
    };
    let risks = vec![
        mk(vec![0.0, 0.0, 0.8, 0.0]),
        mk(vec![0.0, 0.0, -0.8, 0.0]),
        mk(vec![0.0, 0.0, 0.0, 0.0]),
    ];
    let pi = vec![1.0 / 3.0; 3];
    let theta0 = vec![10.0, 0.0, 0.0, 0.0];
    (risks, pi, theta0)
}
