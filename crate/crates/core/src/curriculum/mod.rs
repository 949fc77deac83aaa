//! Self-paced context-distribution updates and baseline curriculum schedules.
//!
//! Each update either maximizes the importance-weighted value of the context
//! distribution (while the learner is below the performance threshold) or
//! moves the distribution toward the target under the same performance bound.
//! Both stages keep every step inside a KL trust region around the current
//! distribution.

mod solver;

use serde::{Deserialize, Serialize};

use crate::context::{ContextSpec, ContextVector, GaussianContextDistribution};
use crate::error::{Error, Result};
use solver::{Evaluation, TrustRegion};

/// Importance weights are clipped to `[0, MAX_IMPORTANCE_WEIGHT]`.
pub const MAX_IMPORTANCE_WEIGHT: f64 = 20.0;

/// Hard cap on penalty doublings in the KL stage.
const MAX_PENALTY_ROUNDS: usize = 48;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumConfig {
    /// Performance threshold `V_LB` on the mean initial-state value.
    pub perf_lb: f64,
    /// Per-update KL bound between successive distributions.
    #[serde(default = "default_max_kl")]
    pub max_kl: f64,
    /// Per-dimension std floor, enforced until the clamp is released.
    pub std_lower_bound: Vec<f64>,
    /// The std clamp is released once `KL(ν_k ‖ μ)` first drops below this.
    #[serde(default = "default_kl_threshold")]
    pub kl_threshold: f64,
    #[serde(default = "default_solver_iters")]
    pub solver_iters: usize,
    #[serde(default = "default_solver_tolerance")]
    pub solver_tolerance: f64,
    /// Dimensions pinned at the target (ablations that adapt only one context).
    #[serde(default)]
    pub frozen_dims: Vec<usize>,
}

fn default_max_kl() -> f64 {
    0.05
}
fn default_kl_threshold() -> f64 {
    8000.0
}
fn default_solver_iters() -> usize {
    200
}
fn default_solver_tolerance() -> f64 {
    1e-4
}

impl CurriculumConfig {
    pub fn new(perf_lb: f64, std_lower_bound: Vec<f64>) -> Self {
        Self {
            perf_lb,
            max_kl: default_max_kl(),
            std_lower_bound,
            kl_threshold: default_kl_threshold(),
            solver_iters: default_solver_iters(),
            solver_tolerance: default_solver_tolerance(),
            frozen_dims: Vec::new(),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.max_kl >= 0.0) || !self.perf_lb.is_finite() {
            return Err(Error::InvalidConfig("max_kl must be non-negative and perf_lb finite".into()));
        }
        if self.solver_iters == 0 {
            return Err(Error::InvalidConfig("solver_iters must be at least 1".into()));
        }
        if self.std_lower_bound.len() != dim || self.std_lower_bound.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "std_lower_bound needs {dim} positive entries"
            )));
        }
        if let Some(&i) = self.frozen_dims.iter().find(|&&i| i >= dim) {
            return Err(Error::InvalidConfig(format!("frozen dim {i} out of range")));
        }
        Ok(())
    }
}

/// A context as sampled (before realization) with the critic's estimate of
/// the initial-state value in the realized task.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueSample {
    pub context: ContextVector,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    PerformanceMax,
    KLMin,
    Hold,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::PerformanceMax => "PerformanceMax",
            Stage::KLMin => "KLMin",
            Stage::Hold => "Hold",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurriculumState {
    pub current: GaussianContextDistribution,
    pub iteration: usize,
    /// Stage taken by the most recent update; `None` before the first.
    pub stage: Option<Stage>,
    /// Set once `KL(ν_k ‖ μ)` has dropped below the threshold; never reset.
    pub clamp_released: bool,
}

impl CurriculumState {
    pub fn new(initial: GaussianContextDistribution) -> Self {
        Self {
            current: initial,
            iteration: 0,
            stage: None,
            clamp_released: false,
        }
    }

    /// Starting state for `spec`, with frozen dimensions pinned at the target.
    pub fn from_spec(spec: &ContextSpec, config: &CurriculumConfig) -> Self {
        let mut initial = spec.initial.clone();
        for &i in &config.frozen_dims {
            initial.mean[i] = spec.target.mean[i];
            initial.log_std[i] = spec.target.log_std[i];
        }
        Self::new(initial)
    }

    pub fn clamp_active(&self) -> bool {
        !self.clamp_released
    }
}

/// Result of a single stage solve.
#[derive(Clone, Debug, PartialEq)]
pub struct StageOutcome {
    pub distribution: GaussianContextDistribution,
    /// The solver could not produce an acceptable step; `distribution` is `ν_k`.
    pub held: bool,
}

impl StageOutcome {
    fn hold(current: &GaussianContextDistribution) -> Self {
        Self {
            distribution: current.clone(),
            held: true,
        }
    }
}

/// Precomputed importance-weighted estimator of `E_{ν}[V]` from samples drawn
/// under `ν_k`.
///
/// With `baseline = b`, the estimate is `b + mean(w_i (v_i - b))`; `b = 0` gives
/// the plain estimator, `b = mean(v)` the control-variate form used by the
/// stage solvers (identical at `ν = ν_k`, but constant when all values agree).
struct ImportanceEstimator<'a> {
    samples: &'a [ValueSample],
    log_p_current: Vec<f64>,
    baseline: f64,
}

impl<'a> ImportanceEstimator<'a> {
    fn new(
        current: &GaussianContextDistribution,
        samples: &'a [ValueSample],
        centered: bool,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySamples);
        }
        let mut log_p_current = Vec::with_capacity(samples.len());
        for s in samples {
            if !s.value.is_finite() {
                return Err(Error::NonFinite("value sample"));
            }
            log_p_current.push(current.log_pdf(&s.context)?);
        }
        let baseline = if centered {
            samples.iter().map(|s| s.value).sum::<f64>() / samples.len() as f64
        } else {
            0.0
        };
        Ok(Self {
            samples,
            log_p_current,
            baseline,
        })
    }

    fn evaluate(&self, candidate: &GaussianContextDistribution) -> Evaluation {
        let d = candidate.dim();
        let m = self.samples.len() as f64;
        let std = candidate.std();
        let mut eval = Evaluation::zeros(self.baseline, d);
        for (s, &lp_old) in self.samples.iter().zip(&self.log_p_current) {
            let c = s.context.values();
            let lp_new = candidate.log_pdf_unchecked(c);
            let raw = (lp_new - lp_old).exp();
            let w = raw.min(MAX_IMPORTANCE_WEIGHT);
            let centered = s.value - self.baseline;
            eval.value += w * centered / m;
            if raw < MAX_IMPORTANCE_WEIGHT {
                let coef = w * centered / m;
                for i in 0..d {
                    let z = (c[i] - candidate.mean[i]) / std[i];
                    eval.d_mean[i] += coef * z / std[i];
                    eval.d_log_std[i] += coef * (z * z - 1.0);
                }
            }
        }
        eval
    }
}

/// `(1/M) Σ min(p(c_i|candidate)/p(c_i|current), 20) · v_i`.
pub fn iw_objective(
    candidate: &GaussianContextDistribution,
    current: &GaussianContextDistribution,
    samples: &[ValueSample],
) -> Result<f64> {
    check_dims(candidate, current)?;
    Ok(ImportanceEstimator::new(current, samples, false)?.evaluate(candidate).value)
}

/// Control-variate form of [`iw_objective`] maximized by the solvers:
/// `v̄ + (1/M) Σ w_i (v_i - v̄)` with `v̄` the sample mean.
pub fn centered_iw_objective(
    candidate: &GaussianContextDistribution,
    current: &GaussianContextDistribution,
    samples: &[ValueSample],
) -> Result<f64> {
    check_dims(candidate, current)?;
    Ok(ImportanceEstimator::new(current, samples, true)?.evaluate(candidate).value)
}

fn check_dims(a: &GaussianContextDistribution, b: &GaussianContextDistribution) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: b.dim(),
            got: a.dim(),
        });
    }
    Ok(())
}

fn clamp_bound<'c>(state: &CurriculumState, config: &'c CurriculumConfig) -> Option<&'c [f64]> {
    state.clamp_active().then_some(config.std_lower_bound.as_slice())
}

/// Maximizes the importance-weighted value inside the trust region.
pub fn solve_performance_stage(
    state: &CurriculumState,
    samples: &[ValueSample],
    config: &CurriculumConfig,
    spec: &ContextSpec,
) -> Result<StageOutcome> {
    let current = &state.current;
    let estimator = ImportanceEstimator::new(current, samples, true)?;
    if config.max_kl <= 0.0 {
        return Ok(StageOutcome {
            distribution: current.clone(),
            held: false,
        });
    }
    let region = TrustRegion::new(
        current,
        spec,
        clamp_bound(state, config),
        &config.frozen_dims,
        config.max_kl,
    );
    let objective = |d: &GaussianContextDistribution| estimator.evaluate(d);
    let start = region.start();
    let z = region.ascend(&objective, start.clone(), config.solver_iters);

    let start_value = estimator.evaluate(&region.to_dist(&start)).value;
    let candidate = region.to_dist(&z);
    let value = estimator.evaluate(&candidate).value;
    let step_kl = candidate.kl_divergence(current)?;
    if !value.is_finite() || !candidate.mean.iter().chain(&candidate.log_std).all(|x| x.is_finite()) {
        return Ok(StageOutcome::hold(current));
    }
    if step_kl > config.max_kl * (1.0 + config.solver_tolerance) {
        return Ok(StageOutcome::hold(current));
    }
    if value <= start_value {
        // No improving direction; a zero step is a valid result, not a failure.
        return Ok(StageOutcome {
            distribution: region.to_dist(&start),
            held: false,
        });
    }
    Ok(StageOutcome {
        distribution: candidate,
        held: false,
    })
}

/// Moves toward the target while the importance-weighted value stays above
/// `perf_lb`; returns `ν_k` with `held = true` when no such move exists.
pub fn solve_kl_stage(
    state: &CurriculumState,
    samples: &[ValueSample],
    config: &CurriculumConfig,
    spec: &ContextSpec,
) -> Result<StageOutcome> {
    let current = &state.current;
    let target = &spec.target;
    check_dims(current, target)?;
    let estimator = ImportanceEstimator::new(current, samples, true)?;
    let kl_now = current.kl_divergence(target)?;
    if kl_now == 0.0 || config.max_kl <= 0.0 {
        return Ok(StageOutcome {
            distribution: current.clone(),
            held: kl_now > 0.0,
        });
    }
    let region = TrustRegion::new(
        current,
        spec,
        clamp_bound(state, config),
        &config.frozen_dims,
        config.max_kl,
    );
    let tol = config.solver_tolerance;
    let perf_lb = config.perf_lb;
    let feasible_perf = |z: &[f64]| estimator.evaluate(&region.to_dist(z)).value >= perf_lb;

    let start = region.start();
    if !feasible_perf(&start) {
        return Ok(StageOutcome::hold(current));
    }

    let mut z = start.clone();
    let mut rho = 1.0;
    for _ in 0..MAX_PENALTY_ROUNDS {
        let objective = |d: &GaussianContextDistribution| kl_stage_objective(d, target, &estimator, perf_lb, rho);
        z = region.ascend(&objective, z, config.solver_iters);
        let violation = perf_lb - estimator.evaluate(&region.to_dist(&z)).value;
        if violation <= 0.0 {
            break;
        }
        rho *= 2.0;
    }
    if !feasible_perf(&z) {
        // Largest feasible point on the segment from the start; the trust
        // region and boxes are convex so only the value bound needs checking.
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let zm = lerp(&start, &z, mid);
            if feasible_perf(&zm) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        z = lerp(&start, &z, lo);
    }

    let candidate = region.to_dist(&z);
    let kl_new = candidate.kl_divergence(target)?;
    let kl_start = region.to_dist(&start).kl_divergence(target)?;
    let step_ok = candidate.kl_divergence(current)? <= config.max_kl * (1.0 + tol);
    if kl_new.is_finite() && kl_new < kl_start && step_ok && feasible_perf(&z) {
        Ok(StageOutcome {
            distribution: candidate,
            held: false,
        })
    } else {
        Ok(StageOutcome::hold(current))
    }
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}

/// `-KL(ν ‖ μ) - ρ·max(0, V_LB - Ĵ(ν))²` and its gradient.
fn kl_stage_objective(
    candidate: &GaussianContextDistribution,
    target: &GaussianContextDistribution,
    estimator: &ImportanceEstimator<'_>,
    perf_lb: f64,
    rho: f64,
) -> Evaluation {
    let d = candidate.dim();
    let mut eval = Evaluation::zeros(0.0, d);
    for i in 0..d {
        let inv_var_q = (-2.0 * target.log_std[i]).exp();
        let diff = candidate.mean[i] - target.mean[i];
        let var_ratio = (2.0 * (candidate.log_std[i] - target.log_std[i])).exp();
        eval.value -= (target.log_std[i] - candidate.log_std[i]) + 0.5 * (var_ratio + diff * diff * inv_var_q) - 0.5;
        eval.d_mean[i] = -diff * inv_var_q;
        eval.d_log_std[i] = -(var_ratio - 1.0);
    }
    let perf = estimator.evaluate(candidate);
    let violation = perf_lb - perf.value;
    if violation > 0.0 {
        eval.value -= rho * violation * violation;
        for i in 0..d {
            eval.d_mean[i] += 2.0 * rho * violation * perf.d_mean[i];
            eval.d_log_std[i] += 2.0 * rho * violation * perf.d_log_std[i];
        }
    }
    eval
}

/// One step of the self-paced curriculum.
pub fn update_distribution(
    state: &CurriculumState,
    samples: &[ValueSample],
    config: &CurriculumConfig,
    spec: &ContextSpec,
) -> Result<CurriculumState> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut working = state.clone();
    if !working.clamp_released && working.current.kl_divergence(&spec.target)? < config.kl_threshold {
        working.clamp_released = true;
    }
    let mean_value = samples.iter().map(|s| s.value).sum::<f64>() / samples.len() as f64;
    let (outcome, stage) = if mean_value < config.perf_lb {
        (
            solve_performance_stage(&working, samples, config, spec)?,
            Stage::PerformanceMax,
        )
    } else {
        (solve_kl_stage(&working, samples, config, spec)?, Stage::KLMin)
    };
    log::debug!(
        "curriculum update {}: mean value {mean_value:.4}, stage {:?}, held {}",
        working.iteration,
        stage,
        outcome.held
    );
    Ok(CurriculumState {
        current: outcome.distribution,
        iteration: working.iteration + 1,
        stage: Some(if outcome.held { Stage::Hold } else { stage }),
        clamp_released: working.clamp_released,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleKind {
    LinearIncrease,
    LinearDecrease,
    Fixed,
}

/// Context for a hand-designed schedule at `step` of `total_steps`.
///
/// Increase and decrease differ only in the `start` the caller supplies.
pub fn baseline_schedule(
    kind: ScheduleKind,
    step: usize,
    total_steps: usize,
    start: &ContextVector,
    end: &ContextVector,
    spec: &ContextSpec,
) -> ContextVector {
    if kind == ScheduleKind::Fixed || total_steps == 0 {
        return spec.realize(end);
    }
    let t = step.min(total_steps) as f64 / total_steps as f64;
    let values = start
        .values()
        .iter()
        .zip(end.values())
        .map(|(a, b)| a + t * (b - a))
        .collect();
    spec.realize(&ContextVector(values))
}
