//! Experiment configuration, the outer curriculum/training loop, and CSV
//! records.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::context::{ContextSpec, ContextVector, GaussianContextDistribution, SimRng};
use crate::curriculum::{
    baseline_schedule, update_distribution, CurriculumConfig, CurriculumState, ScheduleKind, Stage,
};
use crate::env::{Aggregation, EnvSpec, ParticleConfig, ParticleTask, PursuitConfig};
use crate::error::{Error, Result};
use crate::nn::{load_checkpoint, save_checkpoint};
use crate::ppo::{
    collect_rollouts, compute_gae, evaluate, ppo_update, ContextSource, Learner, PPOConfig, Policy,
};

/// Separates the evaluation random stream from the training stream so the
/// evaluation cadence never changes what is trained.
const EVAL_STREAM: u64 = 0x5EED_E7A1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    SelfPaced,
    /// Self-paced over the agent count only; other dimensions sit at the target.
    SelfPacedNumOnly,
    /// Self-paced over the grid size only (pursuit).
    SelfPacedGridOnly,
    LinearIncrease,
    LinearDecrease,
    /// No curriculum: always the target context.
    Fixed,
}

impl Strategy {
    pub fn is_self_paced(self) -> bool {
        matches!(
            self,
            Strategy::SelfPaced | Strategy::SelfPacedNumOnly | Strategy::SelfPacedGridOnly
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::SelfPaced => "SelfPaced",
            Strategy::SelfPacedNumOnly => "SelfPacedNumOnly",
            Strategy::SelfPacedGridOnly => "SelfPacedGridOnly",
            Strategy::LinearIncrease => "LinearIncrease",
            Strategy::LinearDecrease => "LinearDecrease",
            Strategy::Fixed => "Fixed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub environment: EnvSpec,
    pub strategy: Strategy,
    pub aggregation: Aggregation,
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default)]
    pub ppo: PPOConfig,
    pub curriculum: CurriculumConfig,
    pub context: ContextSpec,
}

fn default_eval_every() -> usize {
    1
}
fn default_eval_episodes() -> usize {
    10
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let env_dim = self.environment.context_dim();
        self.context.validate()?;
        if self.context.dim() != env_dim {
            return Err(Error::InvalidConfig(format!(
                "{} takes a {env_dim}-dimensional context, config has {}",
                self.environment.name(),
                self.context.dim()
            )));
        }
        if self.strategy == Strategy::SelfPacedGridOnly && !matches!(self.environment, EnvSpec::Pursuit(_)) {
            return Err(Error::InvalidConfig("SelfPacedGridOnly requires the pursuit environment".into()));
        }
        if self.iterations == 0 || self.eval_every == 0 {
            return Err(Error::InvalidConfig("iterations and eval_every must be positive".into()));
        }
        self.effective_curriculum().validate(env_dim)?;
        let episode_length = match &self.environment {
            EnvSpec::Pursuit(c) => c.episode_length,
            EnvSpec::Spread(c) | EnvSpec::Push(c) => c.episode_length,
        };
        self.ppo.validate(episode_length)
    }

    /// The curriculum settings with the strategy's frozen dimensions applied.
    pub fn effective_curriculum(&self) -> CurriculumConfig {
        let mut config = self.curriculum.clone();
        let agent_dim = self.environment.agent_dim();
        let frozen: Vec<usize> = match self.strategy {
            Strategy::SelfPacedNumOnly => (0..self.context.dim()).filter(|&d| d != agent_dim).collect(),
            Strategy::SelfPacedGridOnly => vec![agent_dim],
            _ => Vec::new(),
        };
        for d in frozen {
            if !config.frozen_dims.contains(&d) {
                config.frozen_dims.push(d);
            }
        }
        config.frozen_dims.sort_unstable();
        config
    }

    /// Start of a linear baseline schedule. Increasing schedules start every
    /// dimension at its lower bound; decreasing ones start the agent count at
    /// its upper bound.
    fn schedule_start(&self) -> ContextVector {
        let mut start = self.context.lower_bounds.clone();
        if self.strategy == Strategy::LinearDecrease {
            let d = self.environment.agent_dim();
            start[d] = self.context.upper_bounds[d];
        }
        ContextVector(start)
    }

    /// Pursuit with the full-size settings: 30×30 grid, 10 pursuers and
    /// evaders as the target, contexts in `[20, 40] × [3, 20]`.
    pub fn pursuit() -> Self {
        Self {
            environment: EnvSpec::Pursuit(PursuitConfig::new(30, 10)),
            strategy: Strategy::SelfPaced,
            aggregation: Aggregation::Sum,
            iterations: 500,
            seed: 0,
            eval_every: 1,
            eval_episodes: 10,
            ppo: PPOConfig::default(),
            curriculum: CurriculumConfig::new(0.0, vec![0.2, 0.1]),
            context: ContextSpec {
                lower_bounds: vec![20.0, 3.0],
                upper_bounds: vec![40.0, 20.0],
                integer_dims: vec![0, 1],
                initial: gaussian(&[20.0, 5.0], &[400.0, 225.0]),
                target: gaussian(&[30.0, 10.0], &[4e-3, 4e-3]),
            },
        }
    }

    /// Spread with 8 agents on 8 landmarks as the target.
    pub fn spread() -> Self {
        Self::particle(ParticleTask::Spread, 0.6)
    }

    /// Push with 8 agents, 8 landmarks and a random adversary as the target.
    pub fn push() -> Self {
        Self::particle(ParticleTask::Push, 0.1)
    }

    fn particle(task: ParticleTask, std_lower_bound: f64) -> Self {
        let base = ParticleConfig::new(task, 8);
        Self {
            environment: match task {
                ParticleTask::Spread => EnvSpec::Spread(base),
                ParticleTask::Push => EnvSpec::Push(base),
            },
            strategy: Strategy::SelfPaced,
            aggregation: Aggregation::Sum,
            iterations: 500,
            seed: 0,
            eval_every: 1,
            eval_episodes: 10,
            ppo: PPOConfig::default(),
            curriculum: CurriculumConfig::new(-20.0, vec![std_lower_bound]),
            context: ContextSpec {
                lower_bounds: vec![5.0],
                upper_bounds: vec![12.0],
                integer_dims: vec![0],
                initial: gaussian(&[9.0], &[16.0]),
                target: gaussian(&[8.0], &[4e-3]),
            },
        }
    }

    /// A desk-scale pursuit setup: 12×12 grid, 2 evaders, 4 pursuers as the
    /// target, contexts in `[8, 16] × [2, 8]`, about two million
    /// environment steps.
    pub fn pursuit_scaled() -> Self {
        let mut env = PursuitConfig::new(12, 4);
        env.n_evaders = 2;
        env.episode_length = 50;
        Self {
            environment: EnvSpec::Pursuit(env),
            strategy: Strategy::SelfPaced,
            aggregation: Aggregation::Sum,
            iterations: 200,
            seed: 0,
            eval_every: 10,
            eval_episodes: 200,
            ppo: PPOConfig {
                steps_per_iteration: 10_000,
                epochs: 2,
                hidden: 32,
                learning_rate: 3e-4,
                ..PPOConfig::default()
            },
            curriculum: CurriculumConfig::new(2.0, vec![0.2, 0.1]),
            context: ContextSpec {
                lower_bounds: vec![8.0, 2.0],
                upper_bounds: vec![16.0, 8.0],
                integer_dims: vec![0, 1],
                initial: gaussian(&[8.0, 3.0], &[64.0, 25.0]),
                target: gaussian(&[12.0, 4.0], &[4e-3, 4e-3]),
            },
        }
    }
}

fn gaussian(mean: &[f64], variance: &[f64]) -> GaussianContextDistribution {
    GaussianContextDistribution::from_variance(mean.to_vec(), variance.to_vec()).expect("valid preset")
}

/// The stage column of a record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageLabel {
    Curriculum(Stage),
    Baseline,
}

impl fmt::Display for StageLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageLabel::Curriculum(s) => f.write_str(s.as_str()),
            StageLabel::Baseline => f.write_str("Baseline"),
        }
    }
}

impl FromStr for StageLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "PerformanceMax" => StageLabel::Curriculum(Stage::PerformanceMax),
            "KLMin" => StageLabel::Curriculum(Stage::KLMin),
            "Hold" => StageLabel::Curriculum(Stage::Hold),
            "Baseline" => StageLabel::Baseline,
            other => return Err(format!("unknown stage {other:?}")),
        })
    }
}

/// One row of `records.csv`. For self-paced strategies the context columns
/// describe the distribution after this iteration's update; for baselines
/// they hold the scheduled context with zero spread.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub env_steps: u64,
    pub train_return: f64,
    /// Absent on iterations without an evaluation.
    pub eval_return: Option<f64>,
    pub ctx_mean: Vec<f64>,
    pub ctx_std: Vec<f64>,
    /// Absent for baselines, whose point contexts have no finite KL.
    pub kl_to_target: Option<f64>,
    pub stage: StageLabel,
}

/// What a finished run leaves behind.
pub struct TrainingOutcome {
    pub records: Vec<IterationRecord>,
    pub policy: Policy,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<IterationRecord>> {
    Ok(train(config)?.records)
}

/// Runs the full loop: rollouts, policy update, curriculum step, evaluation.
/// Deterministic given the config (including its seed).
pub fn train(config: &ExperimentConfig) -> Result<TrainingOutcome> {
    config.validate()?;
    let env = &config.environment;
    let spec = &config.context;
    let curriculum = config.effective_curriculum();
    let mut rng = SimRng::seed_from_u64(config.seed);
    let mut eval_rng = SimRng::seed_from_u64(config.seed ^ EVAL_STREAM);

    let input_dim = env.obs_dim() + spec.dim();
    let policy = Policy::new(input_dim, config.ppo.hidden, env.n_actions(), &mut rng);
    let mut learner = Learner::new(policy, config.ppo.learning_rate);
    let mut state = CurriculumState::from_spec(spec, &curriculum);
    let target_context = spec.realize(&ContextVector(spec.target.mean.clone()));
    let schedule_kind = match config.strategy {
        Strategy::LinearIncrease => Some(ScheduleKind::LinearIncrease),
        Strategy::LinearDecrease => Some(ScheduleKind::LinearDecrease),
        Strategy::Fixed => Some(ScheduleKind::Fixed),
        _ => None,
    };
    let schedule_start = config.schedule_start();
    let target_mean = ContextVector(spec.target.mean.clone());

    let mut records = Vec::with_capacity(config.iterations);
    let mut env_steps = 0u64;
    for k in 0..config.iterations {
        let iteration = k + 1;
        let wrap = |e: Error| Error::Iteration {
            iteration,
            source: Box::new(e),
        };

        let scheduled = schedule_kind.map(|kind| {
            baseline_schedule(kind, k, config.iterations - 1, &schedule_start, &target_mean, spec)
        });
        let source = match &scheduled {
            Some(c) => ContextSource::Fixed(c.clone()),
            None => ContextSource::Distribution(&state.current),
        };
        let batch = collect_rollouts(env, &source, spec, &learner.policy, &config.ppo, config.aggregation, &mut rng)
            .map_err(wrap)?;
        env_steps += batch.env_steps as u64;
        let advantages = compute_gae(&batch, config.ppo.gamma, config.ppo.gae_lambda);
        let stats = ppo_update(&mut learner, &batch, &advantages, &config.ppo, &mut rng).map_err(wrap)?;
        if stats.failed {
            log::warn!("iteration {iteration}: policy update skipped after a non-finite loss");
        }

        let (ctx_mean, ctx_std, kl_to_target, stage) = match scheduled {
            Some(c) => (c.0, vec![0.0; spec.dim()], None, StageLabel::Baseline),
            None => {
                let samples = batch.value_samples_with(&learner.policy.critic).map_err(wrap)?;
                state = update_distribution(&state, &samples, &curriculum, spec).map_err(wrap)?;
                let kl = state.current.kl_divergence(&spec.target).map_err(wrap)?;
                let stage = state.stage.unwrap_or(Stage::Hold);
                (state.current.mean.clone(), state.current.std(), Some(kl), StageLabel::Curriculum(stage))
            }
        };

        let eval_return = if iteration % config.eval_every == 0 || iteration == config.iterations {
            Some(
                evaluate(
                    env,
                    spec,
                    &learner.policy,
                    &target_context,
                    config.eval_episodes,
                    config.aggregation,
                    &mut eval_rng,
                )
                .map_err(wrap)?,
            )
        } else {
            None
        };

        let record = IterationRecord {
            iteration,
            env_steps,
            train_return: batch.mean_team_return(),
            eval_return,
            ctx_mean,
            ctx_std,
            kl_to_target,
            stage,
        };
        log::info!(
            "iter {iteration} steps {env_steps} train {:.3} eval {} ctx {:?} stage {}",
            record.train_return,
            record.eval_return.map_or("-".to_string(), |v| format!("{v:.3}")),
            record.ctx_mean,
            record.stage
        );
        records.push(record);
    }
    Ok(TrainingOutcome {
        records,
        policy: learner.policy,
    })
}

pub fn save_policy(path: &Path, policy: &Policy) -> Result<()> {
    save_checkpoint(path, &[("actor", &policy.actor), ("critic", &policy.critic)])
}

pub fn load_policy(path: &Path) -> Result<Policy> {
    let mut nets: BTreeMap<String, _> = load_checkpoint(path)?.into_iter().collect();
    let mut take = |name: &str| {
        nets.remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("no network named {name}")))
    };
    let policy = Policy {
        actor: take("actor")?,
        critic: take("critic")?,
    };
    policy.validate()?;
    Ok(policy)
}

/// Evaluates a saved policy on the config's target context.
pub fn evaluate_checkpoint(config: &ExperimentConfig, policy: &Policy, episodes: usize) -> Result<f64> {
    let env = &config.environment;
    let expected = env.obs_dim() + config.context.dim();
    if policy.input_dim() != expected || policy.n_actions() != env.n_actions() {
        return Err(Error::Checkpoint("checkpoint does not match the environment".into()));
    }
    let target = config.context.realize(&ContextVector(config.context.target.mean.clone()));
    let mut rng = SimRng::seed_from_u64(config.seed ^ EVAL_STREAM);
    evaluate(env, &config.context, policy, &target, episodes, config.aggregation, &mut rng)
}

pub fn records_header(context_dim: usize) -> Vec<String> {
    let mut header: Vec<String> = ["iteration", "env_steps", "train_return", "eval_return"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..context_dim).map(|i| format!("ctx_mean_{i}")));
    header.extend((0..context_dim).map(|i| format!("ctx_std_{i}")));
    header.push("kl_to_target".into());
    header.push("stage".into());
    header
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

pub fn write_records(path: &Path, records: &[IterationRecord], context_dim: usize) -> Result<()> {
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(records_header(context_dim)).map_err(csv_io)?;
    for r in records {
        if r.ctx_mean.len() != context_dim || r.ctx_std.len() != context_dim {
            return Err(Error::DimensionMismatch {
                expected: context_dim,
                got: r.ctx_mean.len(),
            });
        }
        let mut row = vec![
            r.iteration.to_string(),
            r.env_steps.to_string(),
            r.train_return.to_string(),
            opt(r.eval_return),
        ];
        row.extend(r.ctx_mean.iter().map(f64::to_string));
        row.extend(r.ctx_std.iter().map(f64::to_string));
        row.push(opt(r.kl_to_target));
        row.push(r.stage.to_string());
        out.write_record(&row).map_err(csv_io)?;
    }
    let bytes = out.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    fs::write(path, bytes)?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn read_records(path: &Path) -> Result<Vec<IterationRecord>> {
    let text = fs::read_to_string(path)?;
    parse_records(&text)
}

pub fn parse_records(text: &str) -> Result<Vec<IterationRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = reader.records();
    let bad = |line: u64, message: String| Error::Records { line, message };

    let header = rows
        .next()
        .ok_or_else(|| bad(1, "missing header".into()))?
        .map_err(|e| bad(1, e.to_string()))?;
    let n_ctx = header.iter().filter(|h| h.starts_with("ctx_mean_")).count();
    let expected = records_header(n_ctx);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(bad(1, format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }

    let mut records = Vec::new();
    for (i, row) in rows.enumerate() {
        let line = i as u64 + 2;
        let row = row.map_err(|e| bad(line, e.to_string()))?;
        if row.len() != expected.len() {
            return Err(bad(line, format!("expected {} fields, got {}", expected.len(), row.len())));
        }
        let field = |j: usize| &row[j];
        let num = |j: usize| -> Result<f64> {
            field(j)
                .parse::<f64>()
                .map_err(|_| bad(line, format!("column {}: bad number {:?}", expected[j], field(j))))
        };
        let opt_num = |j: usize| -> Result<Option<f64>> {
            if field(j).is_empty() {
                Ok(None)
            } else {
                num(j).map(Some)
            }
        };
        let int = |j: usize| -> Result<u64> {
            field(j)
                .parse::<u64>()
                .map_err(|_| bad(line, format!("column {}: bad integer {:?}", expected[j], field(j))))
        };
        let stage_col = 5 + 2 * n_ctx;
        records.push(IterationRecord {
            iteration: int(0)? as usize,
            env_steps: int(1)?,
            train_return: num(2)?,
            eval_return: opt_num(3)?,
            ctx_mean: (0..n_ctx).map(|d| num(4 + d)).collect::<Result<_>>()?,
            ctx_std: (0..n_ctx).map(|d| num(4 + n_ctx + d)).collect::<Result<_>>()?,
            kl_to_target: opt_num(4 + 2 * n_ctx)?,
            stage: field(stage_col).parse().map_err(|m| bad(line, m))?,
        });
    }
    Ok(records)
}

/// Every `*.csv` file under `dir`, recursively, in sorted order.
pub fn find_record_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv") {
                found.push(path);
            }
        }
    }
    found.sort();
    Ok(found)
}

/// Per-iteration mean and population standard deviation across runs.
/// Only iterations present in every run are kept; missing optional values
/// are skipped.
pub fn aggregate(runs: &[Vec<IterationRecord>]) -> Result<String> {
    if runs.is_empty() {
        return Err(Error::EmptySamples);
    }
    let n_ctx = runs[0].first().map_or(0, |r| r.ctx_mean.len());
    let columns: Vec<String> = records_header(n_ctx)[1..records_header(n_ctx).len() - 1].to_vec();
    let mut header = vec!["iteration".to_string(), "runs".to_string()];
    for c in &columns {
        header.push(format!("{c}_mean"));
        header.push(format!("{c}_std"));
    }

    let mut by_iter: BTreeMap<usize, Vec<&IterationRecord>> = BTreeMap::new();
    for run in runs {
        for r in run {
            if r.ctx_mean.len() != n_ctx {
                return Err(Error::DimensionMismatch {
                    expected: n_ctx,
                    got: r.ctx_mean.len(),
                });
            }
            by_iter.entry(r.iteration).or_default().push(r);
        }
    }

    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(&header).map_err(csv_io)?;
    for (iteration, rows) in by_iter.into_iter().filter(|(_, rows)| rows.len() == runs.len()) {
        let mut line = vec![iteration.to_string(), rows.len().to_string()];
        let values = |r: &IterationRecord| -> Vec<Option<f64>> {
            let mut v = vec![Some(r.env_steps as f64), Some(r.train_return), r.eval_return];
            v.extend(r.ctx_mean.iter().map(|&x| Some(x)));
            v.extend(r.ctx_std.iter().map(|&x| Some(x)));
            v.push(r.kl_to_target);
            v
        };
        let table: Vec<Vec<Option<f64>>> = rows.iter().map(|r| values(r)).collect();
        for c in 0..columns.len() {
            let present: Vec<f64> = table.iter().filter_map(|row| row[c]).collect();
            match mean_std(&present) {
                Some((m, s)) => {
                    line.push(m.to_string());
                    line.push(s.to_string());
                }
                None => {
                    line.push(String::new());
                    line.push(String::new());
                }
            }
        }
        out.write_record(&line).map_err(csv_io)?;
    }
    let bytes = out.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    // Identical inputs must give exactly zero spread.
    if values.iter().all(|&v| v == values[0]) {
        return Some((values[0], 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_pursuit(strategy: Strategy) -> ExperimentConfig {
        let mut c = ExperimentConfig::pursuit_scaled();
        c.strategy = strategy;
        c.iterations = 4;
        c.eval_every = 2;
        c.eval_episodes = 2;
        c.ppo.steps_per_iteration = 200;
        c.ppo.minibatch_size = 64;
        c.ppo.epochs = 1;
        c.ppo.hidden = 8;
        if let EnvSpec::Pursuit(p) = &mut c.environment {
            p.episode_length = 50;
        }
        c
    }

    #[test]
    fn paper_pursuit_preset() {
        let c = ExperimentConfig::pursuit();
        assert_eq!(c.context.initial.mean, vec![20.0, 5.0]);
        for (s, e) in c.context.initial.std().iter().zip([20.0, 15.0]) {
            assert!((s - e).abs() < 1e-12);
        }
        assert_eq!(c.context.target.mean, vec![30.0, 10.0]);
        for s in c.context.target.std() {
            assert!((s - 0.063_245_553_203_367_6).abs() < 1e-12);
        }
        assert_eq!(c.curriculum.std_lower_bound, vec![0.2, 0.1]);
        assert_eq!(c.curriculum.kl_threshold, 8000.0);
        assert_eq!(c.curriculum.max_kl, 0.05);
        assert_eq!(c.ppo.steps_per_iteration, 10_000);
        assert_eq!(c.ppo.epochs, 80);
        c.validate().unwrap();
        ExperimentConfig::spread().validate().unwrap();
        ExperimentConfig::push().validate().unwrap();
        ExperimentConfig::pursuit_scaled().validate().unwrap();
    }

    #[test]
    fn grid_only_requires_pursuit() {
        let mut c = ExperimentConfig::spread();
        c.strategy = Strategy::SelfPacedGridOnly;
        assert!(c.validate().is_err());
    }

    #[test]
    fn ablations_freeze_the_other_dimension() {
        let mut c = ExperimentConfig::pursuit();
        c.strategy = Strategy::SelfPacedNumOnly;
        assert_eq!(c.effective_curriculum().frozen_dims, vec![0]);
        c.strategy = Strategy::SelfPacedGridOnly;
        assert_eq!(c.effective_curriculum().frozen_dims, vec![1]);
        c.strategy = Strategy::SelfPaced;
        assert!(c.effective_curriculum().frozen_dims.is_empty());
    }

    #[test]
    fn config_json_round_trip() {
        let c = ExperimentConfig::pursuit_scaled();
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn fixed_strategy_trains_on_target() {
        let records = run_experiment(&tiny_pursuit(Strategy::Fixed)).unwrap();
        assert_eq!(records.len(), 4);
        for r in &records {
            assert_eq!(r.ctx_mean, vec![12.0, 4.0]);
            assert_eq!(r.stage, StageLabel::Baseline);
        }
        let evals: Vec<bool> = records.iter().map(|r| r.eval_return.is_some()).collect();
        assert_eq!(evals, vec![false, true, false, true]);
        assert!(records.windows(2).all(|w| w[0].env_steps < w[1].env_steps));
    }

    #[test]
    fn linear_increase_is_monotone_to_target() {
        let mut c = tiny_pursuit(Strategy::LinearIncrease);
        c.iterations = 6;
        let records = run_experiment(&c).unwrap();
        let agents: Vec<f64> = records.iter().map(|r| r.ctx_mean[1]).collect();
        assert_eq!(agents[0], 2.0);
        assert_eq!(*agents.last().unwrap(), 4.0);
        assert!(agents.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn linear_decrease_starts_with_most_agents() {
        let records = run_experiment(&tiny_pursuit(Strategy::LinearDecrease)).unwrap();
        assert_eq!(records[0].ctx_mean, vec![8.0, 8.0]);
        assert_eq!(records.last().unwrap().ctx_mean, vec![12.0, 4.0]);
    }

    #[test]
    fn self_paced_records_respect_trust_region() {
        let c = tiny_pursuit(Strategy::SelfPaced);
        let records = run_experiment(&c).unwrap();
        let mut prev = c.context.initial.clone();
        for r in &records {
            let cur = GaussianContextDistribution::from_std(r.ctx_mean.clone(), r.ctx_std.clone()).unwrap();
            assert!(cur.kl_divergence(&prev).unwrap() <= c.curriculum.max_kl * 1.01);
            assert!(r.kl_to_target.is_some());
            assert!(matches!(r.stage, StageLabel::Curriculum(_)));
            prev = cur;
        }
    }

    #[test]
    fn num_only_keeps_grid_column_fixed() {
        let records = run_experiment(&tiny_pursuit(Strategy::SelfPacedNumOnly)).unwrap();
        assert!(records.iter().all(|r| r.ctx_mean[0] == 12.0));
    }

    #[test]
    fn records_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.csv");
        write_records(&path, &[], 2).unwrap();
        assert_eq!(
            fs::read_to_string(&path).unwrap().trim_end(),
            "iteration,env_steps,train_return,eval_return,ctx_mean_0,ctx_mean_1,ctx_std_0,ctx_std_1,kl_to_target,stage"
        );
        assert!(read_records(&path).unwrap().is_empty());

        let err = parse_records("iteration,env_steps,train_return,eval_return,kl_to_target,stage\n1,2,x,,,Hold\n")
            .unwrap_err();
        assert!(matches!(err, Error::Records { line: 2, .. }), "{err}");
        let err = parse_records("iteration,env_steps,train_return,eval_return,kl_to_target,stage\n1,2,0.5,,,Nope\n")
            .unwrap_err();
        assert!(matches!(err, Error::Records { line: 2, .. }));
    }

    #[test]
    fn aggregate_identical_runs_has_zero_spread() {
        let run = vec![IterationRecord {
            iteration: 1,
            env_steps: 100,
            train_return: 0.1 + 0.2,
            eval_return: Some(1.0 / 3.0),
            ctx_mean: vec![7.3],
            ctx_std: vec![0.9],
            kl_to_target: Some(2.5),
            stage: StageLabel::Curriculum(Stage::KLMin),
        }];
        let text = aggregate(&[run.clone(), run.clone(), run]).unwrap();
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        for (h, v) in header.iter().zip(&row) {
            if h.ends_with("_std") {
                assert_eq!(*v, "0", "{h}");
            }
        }
    }
}
