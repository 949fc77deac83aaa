//! Two-dimensional particle tasks with landmark coverage.
//!
//! `Spread`: `n` agents cover `n` landmarks. `Push`: `n` agents cover a fixed
//! set of landmarks while an adversary taking uniform-random actions moves
//! among them. Agents see only their four nearest agent-like neighbors and
//! four nearest landmarks, so the observation length does not depend on `n`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_actions, EntitySnapshot, MultiAgentEnv, StepResult};
use crate::context::SimRng;
use crate::error::{Error, Result};

pub const OBS_DIM: usize = 20;
const NEAREST: usize = 4;

/// No-op, +x, -x, +y, -y.
const DIRECTIONS: [[f64; 2]; 5] = [[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];

pub type Vec2 = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParticleTask {
    Spread,
    Push,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleConfig {
    pub task: ParticleTask,
    #[serde(default = "default_agents")]
    pub n_agents: usize,
    /// Landmark count for `Push`; `Spread` always uses `n_agents`.
    #[serde(default = "default_push_landmarks")]
    pub push_landmarks: usize,
    #[serde(default = "default_episode_length")]
    pub episode_length: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_damping")]
    pub damping: f64,
    #[serde(default = "default_radius")]
    pub agent_radius: f64,
    #[serde(default = "default_force")]
    pub force_scale: f64,
    #[serde(default = "default_extent")]
    pub world_extent: f64,
    #[serde(default = "default_collision")]
    pub collision_penalty: f64,
}

fn default_agents() -> usize {
    8
}
fn default_push_landmarks() -> usize {
    8
}
fn default_episode_length() -> usize {
    25
}
fn default_dt() -> f64 {
    0.1
}
fn default_damping() -> f64 {
    0.25
}
fn default_radius() -> f64 {
    0.15
}
fn default_force() -> f64 {
    1.0
}
fn default_extent() -> f64 {
    1.0
}
fn default_collision() -> f64 {
    1.0
}

impl ParticleConfig {
    pub fn new(task: ParticleTask, n_agents: usize) -> Self {
        Self {
            task,
            n_agents,
            push_landmarks: default_push_landmarks(),
            episode_length: default_episode_length(),
            dt: default_dt(),
            damping: default_damping(),
            agent_radius: default_radius(),
            force_scale: default_force(),
            world_extent: default_extent(),
            collision_penalty: default_collision(),
        }
    }

    pub fn n_landmarks(&self) -> usize {
        match self.task {
            ParticleTask::Spread => self.n_agents,
            ParticleTask::Push => self.push_landmarks,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return Err(Error::Environment("need at least one agent".into()));
        }
        if !(self.agent_radius > 0.0 && self.world_extent > 0.0 && self.dt > 0.0) {
            return Err(Error::Environment("radius, extent and dt must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.damping) {
            return Err(Error::Environment("damping must lie in [0, 1]".into()));
        }
        if self.episode_length == 0 || self.n_landmarks() == 0 {
            return Err(Error::Environment("episode length and landmark count must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Body {
    pub pos: Vec2,
    pub vel: Vec2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleState {
    pub agents: Vec<Body>,
    pub landmarks: Vec<Vec2>,
    pub adversary: Option<Body>,
    pub step: usize,
}

fn dist(a: Vec2, b: Vec2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Sum over landmarks of the distance to the closest agent.
pub fn coverage_penalty(agents: &[Vec2], landmarks: &[Vec2]) -> f64 {
    landmarks
        .iter()
        .map(|&l| agents.iter().map(|&a| dist(l, a)).fold(f64::INFINITY, f64::min))
        .sum()
}

/// Indices of the `k` points closest to `origin`, by distance then index.
fn nearest(origin: Vec2, points: &[(usize, Vec2)], k: usize) -> Vec<Vec2> {
    let mut ranked: Vec<(f64, usize, Vec2)> = points.iter().map(|&(i, p)| (dist(origin, p), i, p)).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ranked.into_iter().take(k).map(|(_, _, p)| p).collect()
}

pub struct ParticleEnv {
    pub config: ParticleConfig,
    pub state: ParticleState,
}

impl ParticleEnv {
    pub fn reset(config: ParticleConfig, rng: &mut SimRng) -> Result<Self> {
        config.validate()?;
        let e = config.world_extent;
        let mut point = || [rng.gen_range(-e..=e), rng.gen_range(-e..=e)];
        let agents = (0..config.n_agents)
            .map(|_| Body {
                pos: point(),
                vel: [0.0; 2],
            })
            .collect();
        let landmarks = (0..config.n_landmarks()).map(|_| point()).collect();
        let adversary = (config.task == ParticleTask::Push).then(|| Body {
            pos: point(),
            vel: [0.0; 2],
        });
        Ok(Self {
            config,
            state: ParticleState {
                agents,
                landmarks,
                adversary,
                step: 0,
            },
        })
    }

    pub fn from_state(config: ParticleConfig, state: ParticleState) -> Self {
        Self { config, state }
    }

    /// `[vel(2), pos(2), 4 nearest agent-like offsets (8), 4 nearest landmark
    /// offsets (8)]`, zero-padded. The adversary is listed among agents.
    pub fn observe(&self, agent: usize) -> Vec<f64> {
        let me = &self.state.agents[agent];
        let mut obs = Vec::with_capacity(OBS_DIM);
        obs.extend_from_slice(&me.vel);
        obs.extend_from_slice(&me.pos);

        let mut others: Vec<(usize, Vec2)> = self
            .state
            .agents
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != agent)
            .map(|(i, b)| (i, b.pos))
            .collect();
        if let Some(adv) = &self.state.adversary {
            others.push((self.state.agents.len(), adv.pos));
        }
        let landmarks: Vec<(usize, Vec2)> = self.state.landmarks.iter().copied().enumerate().collect();
        for group in [nearest(me.pos, &others, NEAREST), nearest(me.pos, &landmarks, NEAREST)] {
            for k in 0..NEAREST {
                match group.get(k) {
                    Some(p) => obs.extend_from_slice(&[p[0] - me.pos[0], p[1] - me.pos[1]]),
                    None => obs.extend_from_slice(&[0.0, 0.0]),
                }
            }
        }
        obs
    }

    fn integrate(&self, body: &mut Body, action: usize) {
        let c = &self.config;
        let dir = DIRECTIONS[action];
        for k in 0..2 {
            let force = c.force_scale * dir[k];
            body.vel[k] = body.vel[k] * (1.0 - c.damping) + force * c.dt;
            body.pos[k] = (body.pos[k] + body.vel[k] * c.dt).clamp(-c.world_extent, c.world_extent);
        }
    }

    /// Local rewards: shared `-P/n` plus each agent's own collision penalty.
    pub fn local_rewards(&self) -> Vec<f64> {
        let n = self.state.agents.len();
        let positions: Vec<Vec2> = self.state.agents.iter().map(|b| b.pos).collect();
        let shared = -coverage_penalty(&positions, &self.state.landmarks) / n as f64;
        let contact = 2.0 * self.config.agent_radius;
        (0..n)
            .map(|i| {
                let hits = (0..n)
                    .filter(|&j| j != i && dist(positions[i], positions[j]) < contact)
                    .count();
                shared - self.config.collision_penalty * hits as f64
            })
            .collect()
    }
}

impl MultiAgentEnv for ParticleEnv {
    fn n_agents(&self) -> usize {
        self.state.agents.len()
    }

    fn obs_dim(&self) -> usize {
        OBS_DIM
    }

    fn n_actions(&self) -> usize {
        DIRECTIONS.len()
    }

    fn episode_length(&self) -> usize {
        self.config.episode_length
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        (0..self.n_agents()).map(|i| self.observe(i)).collect()
    }

    fn step(&mut self, actions: &[usize], rng: &mut SimRng) -> Result<StepResult> {
        check_actions(actions, self.n_agents(), DIRECTIONS.len())?;
        let mut agents = std::mem::take(&mut self.state.agents);
        for (body, &a) in agents.iter_mut().zip(actions) {
            self.integrate(body, a);
        }
        self.state.agents = agents;
        if let Some(mut adv) = self.state.adversary.take() {
            let a = rng.gen_range(0..DIRECTIONS.len());
            self.integrate(&mut adv, a);
            self.state.adversary = Some(adv);
        }
        self.state.step += 1;
        Ok(StepResult {
            observations: self.observations(),
            rewards: self.local_rewards(),
            done: self.state.step >= self.config.episode_length,
        })
    }

    fn snapshot(&self) -> Vec<EntitySnapshot> {
        let mut out: Vec<EntitySnapshot> = self
            .state
            .agents
            .iter()
            .enumerate()
            .map(|(i, b)| EntitySnapshot {
                kind: "agent",
                id: i,
                x: b.pos[0],
                y: b.pos[1],
                alive: true,
            })
            .collect();
        out.extend(self.state.landmarks.iter().enumerate().map(|(i, p)| EntitySnapshot {
            kind: "landmark",
            id: i,
            x: p[0],
            y: p[1],
            alive: true,
        }));
        if let Some(adv) = &self.state.adversary {
            out.push(EntitySnapshot {
                kind: "adversary",
                id: 0,
                x: adv.pos[0],
                y: adv.pos[1],
                alive: true,
            });
        }
        out
    }
}
