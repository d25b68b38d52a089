//! Subcommand implementations. Every command resolves its configuration,
//! computes through cas-core, and writes artifacts through the atomic
//! output stage; stdout gets a short human summary.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use cas_core::analysis::{
    canonical_convergence_instance, convergence_run, equilibrium_check, first_crossing,
    matrix_stats, sequential_failure_demo, tradeoff_matrix, AnalysisError, EtaSchedule,
    MatrixMode,
};
use cas_core::bandit::{regret_bound, run_thompson, run_ucb};
use cas_core::driver::{run_policy, DriverError, IterationRecord, RunStats};
use cas_core::env::{
    conflict_pair, generate_theta, hessian_lambda_max, EnvError, EnvState,
};
use cas_core::parallel::par_map_range;
use cas_core::rng::{repeat_seed, substream};

use crate::cli::{
    CompareArgs, ConvergenceArgs, DriftArgs, EquilibriumArgs, RegretArgs, RunArgs, TradeoffArgs,
};
use crate::config::{echo_toml, load_config, materialize, Materialized, ResolvedArm, RunConfig};
use crate::output::{csv_field, fmt_f64, OutputStage};
use crate::CliError;

fn divergence_or_usage_env(err: EnvError) -> CliError {
    match err {
        EnvError::Diverged { .. } => CliError::Divergence(err.to_string()),
        other => CliError::Usage(other.to_string()),
    }
}

fn divergence_or_usage(err: DriverError) -> CliError {
    match err {
        DriverError::Env(inner) => divergence_or_usage_env(inner),
        other => CliError::Usage(other.to_string()),
    }
}

fn divergence_or_usage_analysis(err: AnalysisError) -> CliError {
    match err {
        AnalysisError::Env(inner) => divergence_or_usage_env(inner),
        AnalysisError::RowDiverged { .. } => CliError::Divergence(err.to_string()),
        other => CliError::Usage(other.to_string()),
    }
}

fn out_dir(cli_out: &Option<PathBuf>, config_out: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    cli_out
        .clone()
        .or_else(|| config_out.clone())
        .ok_or_else(|| {
            CliError::Usage("no output directory: set output_dir in the config or pass --out".into())
        })
}

fn parse_f64_list(raw: &str, flag: &str) -> Result<Vec<f64>, CliError> {
    raw.split(',')
        .map(|item| {
            item.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Usage(format!("{flag}: cannot parse {item:?}: {e}")))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

/// Everything a finished run reports, in stable key order. Wall-clock time
/// is measurement metadata and the only field that varies between identical
/// runs; the trace and config echo are byte-reproducible.
#[derive(Serialize)]
struct RunSummary<'a> {
    policy: &'a str,
    seed: u64,
    horizon: u64,
    final_accuracies: &'a [f64],
    weighted_accuracy: f64,
    selection_frequencies: &'a [f64],
    grad_evals: u64,
    arms: &'a [ResolvedArm],
    artifacts: Vec<String>,
    config: &'a RunConfig,
    wall_clock_seconds: f64,
}

fn trace_csv(records: &[IterationRecord], arms: usize) -> String {
    let mut csv = String::new();
    csv.push_str("# one row per iteration; arm is -1 for the joint AVG update\n");
    csv.push_str("# pi_k is the selection probability of arm k at that iteration\n");
    let mut header = String::from("iteration,arm,loss,self_reward,tradeoff_reward");
    for k in 0..arms {
        header.push_str(&format!(",pi_{k}"));
    }
    csv.push_str(&header);
    csv.push('\n');
    for r in records {
        let arm = r.arm.map_or(-1i64, |a| a as i64);
        csv.push_str(&format!(
            "{},{},{},{},{}",
            r.iteration,
            arm,
            fmt_f64(r.loss),
            fmt_f64(r.self_reward),
            fmt_f64(r.tradeoff_reward)
        ));
        for p in &r.probabilities {
            csv.push(',');
            csv.push_str(&fmt_f64(*p));
        }
        csv.push('\n');
    }
    csv
}

fn execute_run(config: &RunConfig) -> Result<(Materialized, Vec<IterationRecord>, RunStats), CliError> {
    let materialized = materialize(config)?;
    let mut records = Vec::with_capacity(config.horizon as usize);
    let stats = run_policy(&materialized.experiment, &materialized.policy, config.seed, |r| {
        records.push(r.clone());
    })
    .map_err(divergence_or_usage)?;
    Ok((materialized, records, stats))
}

pub fn run(args: &RunArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let mut config = load_config(&args.common.config)?;
    if let Some(seed) = args.common.seed {
        config.seed = seed;
    }
    let dir = out_dir(&args.common.out, &config.output_dir)?;
    let (materialized, records, stats) = execute_run(&config)?;

    let mut stage = OutputStage::new(&dir)?;
    stage.write("trace.csv", &trace_csv(&records, materialized.arms.len()))?;
    stage.write("config_echo.toml", &echo_toml(&config)?)?;
    let summary = RunSummary {
        policy: materialized.policy.name(),
        seed: config.seed,
        horizon: config.horizon,
        final_accuracies: &stats.final_accuracies,
        weighted_accuracy: stats.weighted_accuracy,
        selection_frequencies: &stats.selection_frequencies,
        grad_evals: stats.grad_evals,
        arms: &materialized.arms,
        artifacts: vec!["trace.csv".into(), "config_echo.toml".into(), "summary.json".into()],
        config: &config,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    let summary_json = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::Usage(format!("serializing summary: {e}")))?;
    stage.write("summary.json", &summary_json)?;
    stage.commit()?;
    println!(
        "{}: {} iterations, weighted accuracy {:.4}, {} gradient evals -> {}",
        materialized.policy.name(),
        stats.iterations,
        stats.weighted_accuracy,
        stats.grad_evals,
        dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct CompareRow {
    label: String,
    policy: String,
    repeats: usize,
    mean_weighted_accuracy: f64,
    std_weighted_accuracy: f64,
}

fn label_for(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "config".into())
}

pub fn compare(args: &CompareArgs) -> Result<(), CliError> {
    if args.configs.len() < 2 {
        return Err(CliError::Usage("compare needs at least two --config files".into()));
    }
    let mut configs = Vec::new();
    for path in &args.configs {
        let mut config = load_config(path)?;
        if let Some(seed) = args.seed {
            config.seed = seed;
        }
        configs.push((label_for(path), config));
    }
    let (_, first) = &configs[0];
    for (label, config) in &configs[1..] {
        if !first.same_environment(config) {
            return Err(CliError::Usage(format!(
                "config {label}: environment, arms, horizon, and seed must match the first config for a paired comparison"
            )));
        }
    }
    let dir = out_dir(&args.out, &first.output_dir)?;
    let repeats = args.repeats.max(1);

    let mut rows = Vec::new();
    for (label, config) in &configs {
        let materialized = materialize(config)?;
        let outcomes = par_map_range(repeats, |r| {
            let seed = repeat_seed(config.seed, r as u64);
            run_policy(&materialized.experiment, &materialized.policy, seed, |_| {})
                .map(|stats| stats.weighted_accuracy)
        });
        let mut accuracies = Vec::with_capacity(repeats);
        for outcome in outcomes {
            accuracies.push(outcome.map_err(divergence_or_usage)?);
        }
        let mean = accuracies.iter().sum::<f64>() / repeats as f64;
        let std = if repeats < 2 {
            0.0
        } else {
            let ss: f64 = accuracies.iter().map(|a| (a - mean) * (a - mean)).sum();
            (ss / (repeats - 1) as f64).sqrt()
        };
        rows.push(CompareRow {
            label: label.clone(),
            policy: materialized.policy.name().to_string(),
            repeats,
            mean_weighted_accuracy: mean,
            std_weighted_accuracy: std,
        });
    }

    let mut csv = String::from("label,policy,repeats,mean_weighted_accuracy,std_weighted_accuracy\n");
    let mut text = format!(
        "{:<24} {:<8} {:>8} {:>12} {:>12}\n",
        "label", "policy", "repeats", "mean", "std"
    );
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            csv_field(&row.label),
            row.policy,
            row.repeats,
            fmt_f64(row.mean_weighted_accuracy),
            fmt_f64(row.std_weighted_accuracy)
        ));
        text.push_str(&format!(
            "{:<24} {:<8} {:>8} {:>12.6} {:>12.6}\n",
            row.label, row.policy, row.repeats, row.mean_weighted_accuracy, row.std_weighted_accuracy
        ));
    }
    let mut stage = OutputStage::new(&dir)?;
    stage.write("comparison.csv", &csv)?;
    stage.write("comparison.txt", &text)?;
    stage.commit()?;
    print!("{text}");
    Ok(())
}

// ---------------------------------------------------------------------------
// tradeoff-matrix
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct TradeoffSummary {
    arms: usize,
    epochs_per_row: usize,
    mode: MatrixMode,
    total_sum: f64,
    asymmetry_norm: f64,
    row_sums: Vec<f64>,
    col_sums: Vec<f64>,
    baseline_accuracies: Vec<f64>,
}

pub fn tradeoff(args: &TradeoffArgs) -> Result<(), CliError> {
    let mut config = load_config(&args.common.config)?;
    if let Some(seed) = args.common.seed {
        config.seed = seed;
    }
    let dir = out_dir(&args.common.out, &config.output_dir)?;
    let materialized = materialize(&config)?;
    let mode = if args.cumulative { MatrixMode::Cumulative } else { MatrixMode::ResetPerRow };
    let matrix = tradeoff_matrix(
        &materialized.experiment.env,
        &materialized.experiment.risks,
        &materialized.experiment.clean,
        config.env.beta,
        args.epochs,
        mode,
    )
    .map_err(divergence_or_usage_analysis)?;
    let stats = matrix_stats(&matrix.entries);

    let arms = materialized.arms.len();
    let mut csv = String::new();
    csv.push_str("# entry (row v, column k): accuracy-proxy change of attack k after fine-tuning against attack v\n");
    let mut header = String::from("trained_against");
    for k in 0..arms {
        header.push_str(&format!(",attack_{k}"));
    }
    csv.push_str(&header);
    csv.push('\n');
    for (v, row) in matrix.entries.rows().enumerate() {
        csv.push_str(&v.to_string());
        for value in row {
            csv.push(',');
            csv.push_str(&fmt_f64(*value));
        }
        csv.push('\n');
    }

    let summary = TradeoffSummary {
        arms,
        epochs_per_row: matrix.epochs_per_row,
        mode,
        total_sum: stats.total_sum,
        asymmetry_norm: stats.asymmetry_norm,
        row_sums: stats.row_sums,
        col_sums: stats.col_sums,
        baseline_accuracies: matrix.baseline_accuracies,
    };
    let mut stage = OutputStage::new(&dir)?;
    stage.write("matrix.csv", &csv)?;
    stage.write(
        "matrix_stats.json",
        &serde_json::to_string_pretty(&summary)
            .map_err(|e| CliError::Usage(format!("serializing matrix stats: {e}")))?,
    )?;
    stage.commit()?;
    println!(
        "trade-off matrix ({arms}x{arms}, {} steps/row): total {:+.4}, asymmetry {:.4} -> {}",
        args.epochs,
        summary.total_sum,
        summary.asymmetry_norm,
        dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// regret-bench
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct RegretSummary {
    means: Vec<f64>,
    horizon: usize,
    runs: usize,
    bound: f64,
    ucb_mean_regret: f64,
    thompson_mean_regret: f64,
    ucb_within_bound: bool,
    thompson_within_bound: bool,
}

pub fn regret_bench(args: &RegretArgs) -> Result<(), CliError> {
    let means = parse_f64_list(&args.means, "--means")?;
    if means.is_empty() || means.iter().any(|m| !(0.0..=1.0).contains(m)) {
        return Err(CliError::Usage("--means must be probabilities in [0, 1]".into()));
    }
    let base_seed = args.seed.unwrap_or(0);
    let dir = args
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("regret-bench needs --out for its artifacts".into()))?;
    let bound = regret_bound(&means, args.horizon as u64);

    let per_run: Vec<(f64, f64)> = par_map_range(args.runs, |i| {
        let seed = repeat_seed(base_seed, i as u64);
        let ucb = run_ucb(&means, args.horizon, &mut substream(seed, "regret-ucb"))
            .expect("validated means")
            .pseudo_regret();
        let (trace, _) = run_thompson(&means, args.horizon, &mut substream(seed, "regret-thompson"))
            .expect("validated means");
        (ucb, trace.pseudo_regret())
    });

    let mut csv = String::from("algorithm,run,regret,bound\n");
    for (i, (ucb, _)) in per_run.iter().enumerate() {
        csv.push_str(&format!("ucb,{i},{},{}\n", fmt_f64(*ucb), fmt_f64(bound)));
    }
    for (i, (_, thompson)) in per_run.iter().enumerate() {
        csv.push_str(&format!("thompson,{i},{},{}\n", fmt_f64(*thompson), fmt_f64(bound)));
    }
    let ucb_mean = per_run.iter().map(|(u, _)| u).sum::<f64>() / args.runs as f64;
    let ts_mean = per_run.iter().map(|(_, t)| t).sum::<f64>() / args.runs as f64;
    let summary = RegretSummary {
        means,
        horizon: args.horizon,
        runs: args.runs,
        bound,
        ucb_mean_regret: ucb_mean,
        thompson_mean_regret: ts_mean,
        ucb_within_bound: ucb_mean <= bound,
        thompson_within_bound: ts_mean <= bound,
    };
    let mut stage = OutputStage::new(&dir)?;
    stage.write("regret.csv", &csv)?;
    stage.write(
        "regret_summary.json",
        &serde_json::to_string_pretty(&summary)
            .map_err(|e| CliError::Usage(format!("serializing regret summary: {e}")))?,
    )?;
    stage.commit()?;
    println!(
        "regret over {} runs at T = {}: UCB {:.2}, Thompson {:.2}, bound {:.2} -> {}",
        args.runs,
        args.horizon,
        ucb_mean,
        ts_mean,
        bound,
        dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// convergence-check
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ConvergenceSummary {
    seeds: usize,
    horizon: u64,
    lambda_max: f64,
    tolerance_ratio: f64,
    valid_all_converged: bool,
    invalid_all_stalled: bool,
    pass: bool,
}

pub fn convergence_check(args: &ConvergenceArgs) -> Result<(), CliError> {
    let base_seed = args.seed.unwrap_or(0);
    let dir = args
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("convergence-check needs --out for its artifacts".into()))?;
    let (risks, pi, theta0) = canonical_convergence_instance();
    let lambda = hessian_lambda_max(&risks).map_err(divergence_or_usage_env)?;
    let valid = EtaSchedule::new(1.0 / lambda, 1.0);
    let invalid = EtaSchedule::new(1.0 / lambda, 2.0);

    let outcomes = par_map_range(args.seeds, |i| {
        let seed = repeat_seed(base_seed, i as u64);
        let ok = convergence_run(
            &risks,
            &pi,
            &theta0,
            &valid,
            args.horizon,
            1e-3,
            &mut substream(seed, "convergence-valid"),
        );
        let bad = convergence_run(
            &risks,
            &pi,
            &theta0,
            &invalid,
            args.horizon,
            1e-3,
            &mut substream(seed, "convergence-invalid"),
        );
        (ok, bad)
    });

    let mut csv = String::from("seed,ratio_valid,converged,ratio_invalid,stalled\n");
    let mut all_converged = true;
    let mut all_stalled = true;
    for (i, (ok, bad)) in outcomes.into_iter().enumerate() {
        let ok = ok.map_err(divergence_or_usage_analysis)?;
        let bad = bad.map_err(divergence_or_usage_analysis)?;
        let ratio_ok = ok.v_final() / ok.v_initial();
        let ratio_bad = bad.v_final() / bad.v_initial();
        let stalled = ratio_bad > 1e-2;
        all_converged &= ok.converged;
        all_stalled &= stalled;
        csv.push_str(&format!(
            "{i},{},{},{},{}\n",
            fmt_f64(ratio_ok),
            ok.converged,
            fmt_f64(ratio_bad),
            stalled
        ));
    }
    let summary = ConvergenceSummary {
        seeds: args.seeds,
        horizon: args.horizon,
        lambda_max: lambda,
        tolerance_ratio: 1e-3,
        valid_all_converged: all_converged,
        invalid_all_stalled: all_stalled,
        pass: all_converged && all_stalled,
    };
    let mut stage = OutputStage::new(&dir)?;
    stage.write("convergence.csv", &csv)?;
    stage.write(
        "convergence_summary.json",
        &serde_json::to_string_pretty(&summary)
            .map_err(|e| CliError::Usage(format!("serializing convergence summary: {e}")))?,
    )?;
    stage.commit()?;
    println!(
        "convergence over {} seeds at T = {}: 1/t converged = {}, 1/t^2 stalled = {} -> {}",
        args.seeds,
        args.horizon,
        summary.valid_all_converged,
        summary.invalid_all_stalled,
        dir.display()
    );
    if summary.pass {
        Ok(())
    } else {
        Err(CliError::CheckFailed("convergence check failed".into()))
    }
}

// ---------------------------------------------------------------------------
// equilibrium-check
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct EquilibriumSummary {
    alpha: f64,
    draws: usize,
    seeds: usize,
    tolerance: f64,
    target: Vec<f64>,
    mean_empirical: Vec<f64>,
    max_abs_deviation: f64,
    pass: bool,
}

pub fn equilibrium(args: &EquilibriumArgs) -> Result<(), CliError> {
    let rewards = parse_f64_list(&args.rewards, "--rewards")?;
    let weights = parse_f64_list(&args.weights, "--weights")?;
    if rewards.len() != weights.len() || rewards.is_empty() {
        return Err(CliError::Usage(
            "--rewards and --weights must be nonempty lists of equal length".into(),
        ));
    }
    let base_seed = args.seed.unwrap_or(0);
    let dir = args
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("equilibrium-check needs --out for its artifacts".into()))?;

    let reports = par_map_range(args.seeds, |i| {
        let seed = repeat_seed(base_seed, i as u64);
        equilibrium_check(
            &rewards,
            &weights,
            args.alpha,
            args.draws,
            &mut substream(seed, "equilibrium"),
        )
    });
    let mut mean_empirical = vec![0.0; rewards.len()];
    let mut target = Vec::new();
    for report in reports {
        let report = report.map_err(divergence_or_usage_analysis)?;
        for (m, e) in mean_empirical.iter_mut().zip(&report.empirical) {
            *m += e / args.seeds as f64;
        }
        target = report.target;
    }
    let max_abs_deviation = mean_empirical
        .iter()
        .zip(&target)
        .map(|(e, t)| (e - t).abs())
        .fold(0.0f64, f64::max);

    let mut csv = String::from("arm,target,mean_empirical,abs_deviation\n");
    for (arm, (t, e)) in target.iter().zip(&mean_empirical).enumerate() {
        csv.push_str(&format!("{arm},{},{},{}\n", fmt_f64(*t), fmt_f64(*e), fmt_f64((e - t).abs())));
    }
    let summary = EquilibriumSummary {
        alpha: args.alpha,
        draws: args.draws,
        seeds: args.seeds,
        tolerance: args.tolerance,
        target,
        mean_empirical,
        max_abs_deviation,
        pass: max_abs_deviation < args.tolerance,
    };
    let mut stage = OutputStage::new(&dir)?;
    stage.write("equilibrium.csv", &csv)?;
    stage.write(
        "equilibrium_summary.json",
        &serde_json::to_string_pretty(&summary)
            .map_err(|e| CliError::Usage(format!("serializing equilibrium summary: {e}")))?,
    )?;
    stage.commit()?;
    println!(
        "equilibrium over {} seeds x {} draws: max deviation {:.4} (tolerance {}) -> {}",
        args.seeds,
        args.draws,
        summary.max_abs_deviation,
        args.tolerance,
        dir.display()
    );
    if summary.pass {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "equilibrium deviation {:.4} exceeds tolerance {}",
            summary.max_abs_deviation, args.tolerance
        )))
    }
}

// ---------------------------------------------------------------------------
// drift-demo
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct DriftSummary {
    dimension: usize,
    conflict: f64,
    learning_rate: f64,
    phase_p: usize,
    phase_q: usize,
    crossing_step: Option<usize>,
    threshold_first_step: f64,
    final_drift_norm: f64,
    final_delta: f64,
}

pub fn drift_demo(args: &DriftArgs) -> Result<(), CliError> {
    let (dimension, conflict, learning_rate, risk_seed) = match &args.config {
        Some(path) => {
            let mut config = load_config(path)?;
            if let Some(seed) = args.seed {
                config.seed = seed;
            }
            (
                config.env.dimension,
                config.env.conflict,
                config.env.learning_rate,
                config.risk_seed(),
            )
        }
        None => (4, args.conflict, 0.08, args.seed.unwrap_or(23)),
    };
    if dimension < 2 {
        return Err(CliError::Usage("drift-demo needs env.dimension of at least 2".into()));
    }
    let dir = args
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("drift-demo needs --out for its artifacts".into()))?;

    let (risk_p, risk_q) = conflict_pair(dimension, conflict, risk_seed);
    let start = EnvState::new(generate_theta(dimension, risk_seed), learning_rate, 0.0)
        .map_err(divergence_or_usage_env)?;
    let reports = sequential_failure_demo(&start, &risk_p, &risk_q, args.phase_p, args.phase_q)
        .map_err(divergence_or_usage_analysis)?;

    let mut csv = String::from(
        "step,drift_norm,threshold,cos_psi,lambda_max,bound_value,actual_delta\n",
    );
    for (step, r) in reports.iter().enumerate() {
        csv.push_str(&format!(
            "{step},{},{},{},{},{},{}\n",
            fmt_f64(r.drift_norm),
            fmt_f64(r.threshold),
            fmt_f64(r.cos_psi),
            fmt_f64(r.lambda_max),
            fmt_f64(r.bound_value),
            fmt_f64(r.actual_delta)
        ));
    }
    let summary = DriftSummary {
        dimension,
        conflict,
        learning_rate,
        phase_p: args.phase_p,
        phase_q: args.phase_q,
        crossing_step: first_crossing(&reports),
        threshold_first_step: reports.first().map(|r| r.threshold).unwrap_or(0.0),
        final_drift_norm: reports.last().map(|r| r.drift_norm).unwrap_or(0.0),
        final_delta: reports.last().map(|r| r.actual_delta).unwrap_or(0.0),
    };
    let mut stage = OutputStage::new(&dir)?;
    stage.write("drift.csv", &csv)?;
    stage.write(
        "drift_summary.json",
        &serde_json::to_string_pretty(&summary)
            .map_err(|e| CliError::Usage(format!("serializing drift summary: {e}")))?,
    )?;
    stage.commit()?;
    match summary.crossing_step {
        Some(step) => println!(
            "average risk starts increasing at q-step {step} (threshold {:.4}) -> {}",
            summary.threshold_first_step,
            dir.display()
        ),
        None => println!(
            "average risk never increased over {} q-steps -> {}",
            args.phase_q,
            dir.display()
        ),
    }
    Ok(())
}
