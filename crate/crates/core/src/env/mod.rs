//! Cooperative multi-agent environments and their shared plumbing.

pub mod particle;
pub mod pursuit;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::context::{ContextVector, SimRng};
use crate::error::{Error, Result};

pub use particle::{ParticleConfig, ParticleEnv, ParticleTask};
pub use pursuit::{PursuitConfig, PursuitEnv};

/// How per-agent local rewards combine into the shared global reward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregation {
    Sum,
    Average,
}

pub fn global_reward(locals: &[f64], mode: Aggregation) -> f64 {
    let sum: f64 = locals.iter().sum();
    match mode {
        Aggregation::Sum => sum,
        Aggregation::Average if locals.is_empty() => 0.0,
        Aggregation::Average => sum / locals.len() as f64,
    }
}

/// Output of one environment transition.
#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Vec<f64>>,
    /// Local reward of each controlled agent.
    pub rewards: Vec<f64>,
    pub done: bool,
}

/// One entity in a trajectory dump.
#[derive(Clone, Debug, PartialEq)]
pub struct EntitySnapshot {
    pub kind: &'static str,
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub alive: bool,
}

/// An episode of a homogeneous cooperative task. Every controlled agent sees
/// an observation of the same length and picks from the same action set.
pub trait MultiAgentEnv {
    fn n_agents(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn episode_length(&self) -> usize;
    fn observations(&self) -> Vec<Vec<f64>>;
    fn step(&mut self, actions: &[usize], rng: &mut SimRng) -> Result<StepResult>;
    fn snapshot(&self) -> Vec<EntitySnapshot>;
}

pub(crate) fn check_actions(actions: &[usize], n_agents: usize, n_actions: usize) -> Result<()> {
    if actions.len() != n_agents {
        return Err(Error::Environment(format!(
            "expected {n_agents} actions, got {}",
            actions.len()
        )));
    }
    if let Some(a) = actions.iter().find(|&&a| a >= n_actions) {
        return Err(Error::Environment(format!("action {a} out of range")));
    }
    Ok(())
}

/// Which task family an experiment runs, with the settings that the context
/// does not control.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EnvSpec {
    Pursuit(PursuitConfig),
    Spread(ParticleConfig),
    Push(ParticleConfig),
}

impl EnvSpec {
    /// Context layout: pursuit `[grid_size, n_pursuers]`, particle tasks
    /// `[n_agents]`.
    pub fn context_dim(&self) -> usize {
        match self {
            EnvSpec::Pursuit(_) => 2,
            _ => 1,
        }
    }

    /// Index of the agent-count dimension.
    pub fn agent_dim(&self) -> usize {
        match self {
            EnvSpec::Pursuit(_) => 1,
            _ => 0,
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            EnvSpec::Pursuit(c) => c.obs_window * c.obs_window * 3,
            _ => particle::OBS_DIM,
        }
    }

    pub fn n_actions(&self) -> usize {
        5
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvSpec::Pursuit(_) => "pursuit",
            EnvSpec::Spread(_) => "spread",
            EnvSpec::Push(_) => "push",
        }
    }

    /// Builds and resets an episode for a realized context.
    pub fn build(&self, context: &ContextVector, rng: &mut SimRng) -> Result<Box<dyn MultiAgentEnv>> {
        if context.dim() != self.context_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.context_dim(),
                got: context.dim(),
            });
        }
        match self {
            EnvSpec::Pursuit(base) => {
                let config = PursuitConfig {
                    grid_size: context.as_count(0),
                    n_pursuers: context.as_count(1),
                    ..base.clone()
                };
                Ok(Box::new(PursuitEnv::reset(config, rng)?))
            }
            EnvSpec::Spread(base) | EnvSpec::Push(base) => {
                let task = if matches!(self, EnvSpec::Spread(_)) {
                    ParticleTask::Spread
                } else {
                    ParticleTask::Push
                };
                let config = ParticleConfig {
                    task,
                    n_agents: context.as_count(0),
                    ..base.clone()
                };
                Ok(Box::new(ParticleEnv::reset(config, rng)?))
            }
        }
    }
}

/// Writes one line per entity per step: `step entity id x y alive`.
pub struct TrajectoryWriter<W: Write> {
    out: W,
}

impl<W: Write> TrajectoryWriter<W> {
    pub const HEADER: &'static str = "# step entity id x y alive";

    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{}", Self::HEADER)?;
        Ok(Self { out })
    }

    pub fn record(&mut self, step: usize, env: &dyn MultiAgentEnv) -> Result<()> {
        for e in env.snapshot() {
            writeln!(
                self.out,
                "{step} {} {} {} {} {}",
                e.kind, e.id, e.x, e.y, e.alive as u8
            )?;
        }
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
