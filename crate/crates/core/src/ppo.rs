//! Independent PPO with one actor and one critic shared by every agent.
//!
//! Each agent acts on its own observation with the normalized realized context
//! appended. Agents are trained on the team reward (the aggregated global
//! reward of the step), so the choice of aggregation shapes what the shared
//! critic learns and, through it, the curriculum.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::context::{ContextSpec, ContextVector, GaussianContextDistribution, SimRng};
use crate::curriculum::ValueSample;
use crate::env::{global_reward, Aggregation, EnvSpec, MultiAgentEnv};
use crate::error::{Error, Result};
use crate::nn::{softmax_in_place, Adam, ForwardCache, Mlp};

/// How many times a context is resampled when its environment cannot be built.
pub const MAX_CONTEXT_RETRIES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PPOConfig {
    /// Environment steps (not agent transitions) per policy update.
    #[serde(default = "default_steps")]
    pub steps_per_iteration: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_clip")]
    pub clip: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_lambda")]
    pub gae_lambda: f64,
    #[serde(default = "default_minibatch")]
    pub minibatch_size: usize,
    #[serde(default = "default_value_coef")]
    pub value_coef: f64,
    #[serde(default)]
    pub entropy_coef: f64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
}

fn default_steps() -> usize {
    10_000
}
fn default_epochs() -> usize {
    80
}
fn default_clip() -> f64 {
    0.2
}
fn default_gamma() -> f64 {
    0.99
}
fn default_lambda() -> f64 {
    0.95
}
fn default_minibatch() -> usize {
    256
}
fn default_value_coef() -> f64 {
    0.5
}
fn default_lr() -> f64 {
    1e-4
}
fn default_hidden() -> usize {
    64
}

impl Default for PPOConfig {
    fn default() -> Self {
        Self {
            steps_per_iteration: default_steps(),
            epochs: default_epochs(),
            clip: default_clip(),
            gamma: default_gamma(),
            gae_lambda: default_lambda(),
            minibatch_size: default_minibatch(),
            value_coef: default_value_coef(),
            entropy_coef: 0.0,
            learning_rate: default_lr(),
            hidden: default_hidden(),
        }
    }
}

impl PPOConfig {
    pub fn validate(&self, episode_length: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("ppo: {m}")));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("discount must lie in (0, 1]");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if self.steps_per_iteration < episode_length {
            return bad("steps_per_iteration must cover at least one episode");
        }
        if self.minibatch_size == 0 || self.hidden == 0 {
            return bad("minibatch_size and hidden must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

/// Anything that can build a fresh episode for a realized context.
pub trait EnvFactory {
    fn obs_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn build(&self, context: &ContextVector, rng: &mut SimRng) -> Result<Box<dyn MultiAgentEnv>>;
}

impl EnvFactory for EnvSpec {
    fn obs_dim(&self) -> usize {
        EnvSpec::obs_dim(self)
    }

    fn n_actions(&self) -> usize {
        EnvSpec::n_actions(self)
    }

    fn build(&self, context: &ContextVector, rng: &mut SimRng) -> Result<Box<dyn MultiAgentEnv>> {
        EnvSpec::build(self, context, rng)
    }
}

/// Where episode contexts come from.
#[derive(Clone, Debug)]
pub enum ContextSource<'a> {
    /// A fresh sample per episode.
    Distribution(&'a GaussianContextDistribution),
    /// The same context every episode (baseline schedules, evaluation).
    Fixed(ContextVector),
}

impl ContextSource<'_> {
    fn draw(&self, rng: &mut SimRng) -> ContextVector {
        match self {
            ContextSource::Distribution(d) => d.sample(rng),
            ContextSource::Fixed(c) => c.clone(),
        }
    }
}

/// The shared actor (softmax policy) and critic.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub actor: Mlp,
    pub critic: Mlp,
}

impl Policy {
    /// Orthogonal initialization with a small actor output gain so the
    /// initial policy is close to uniform.
    pub fn new(input_dim: usize, hidden: usize, n_actions: usize, rng: &mut SimRng) -> Self {
        Self {
            actor: Mlp::new(input_dim, hidden, n_actions, 0.01, rng),
            critic: Mlp::new(input_dim, hidden, 1, 1.0, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn n_actions(&self) -> usize {
        self.actor.output_dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.actor.validate()?;
        self.critic.validate()?;
        if self.critic.input_dim() != self.actor.input_dim() || self.critic.output_dim() != 1 {
            return Err(Error::InvalidConfig("actor and critic shapes disagree".into()));
        }
        Ok(())
    }

    pub fn action_probs(&self, input: &[f64]) -> Result<Vec<f64>> {
        crate::nn::forward_policy(&self.actor, input)
    }

    pub fn value(&self, input: &[f64]) -> Result<f64> {
        crate::nn::forward_value(&self.critic, input)
    }
}

/// Draws an index from a probability vector.
pub fn sample_categorical(probs: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Network input: observation followed by the normalized realized context.
pub fn policy_input(observation: &[f64], normalized_context: &[f64]) -> Vec<f64> {
    let mut input = Vec::with_capacity(observation.len() + normalized_context.len());
    input.extend_from_slice(observation);
    input.extend_from_slice(normalized_context);
    input
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    /// Full network input (observation with the normalized context appended).
    pub input: Vec<f64>,
    pub action: usize,
    pub log_prob: f64,
    /// The agent's local reward.
    pub reward: f64,
    /// Aggregated global reward of the step; this is what training uses.
    pub team_reward: f64,
    pub value: f64,
    pub done: bool,
    pub agent_id: usize,
    pub episode_id: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    /// The context as drawn, before realization.
    pub sampled_context: ContextVector,
    pub realized_context: ContextVector,
    /// One trajectory per agent, all of the same length.
    pub trajectories: Vec<Vec<Transition>>,
    /// Aggregated global return of the episode.
    pub team_return: f64,
    pub value_sample: ValueSample,
}

impl Episode {
    pub fn n_steps(&self) -> usize {
        self.trajectories.first().map_or(0, Vec::len)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBatch {
    pub episodes: Vec<Episode>,
    /// Environment steps summed over episodes.
    pub env_steps: usize,
}

impl RolloutBatch {
    /// Transitions in episode → agent → time order.
    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.episodes
            .iter()
            .flat_map(|e| e.trajectories.iter().flat_map(|t| t.iter()))
    }

    pub fn n_transitions(&self) -> usize {
        self.episodes
            .iter()
            .map(|e| e.trajectories.iter().map(Vec::len).sum::<usize>())
            .sum()
    }

    pub fn mean_team_return(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().map(|e| e.team_return).sum::<f64>() / self.episodes.len() as f64
    }

    /// Value samples recorded during collection.
    pub fn value_samples(&self) -> Vec<ValueSample> {
        self.episodes.iter().map(|e| e.value_sample.clone()).collect()
    }

    /// Re-evaluates each episode's initial-state value with `critic`, averaged
    /// over agents.
    pub fn value_samples_with(&self, critic: &Mlp) -> Result<Vec<ValueSample>> {
        self.episodes
            .iter()
            .map(|e| {
                let mut total = 0.0;
                for traj in &e.trajectories {
                    total += crate::nn::forward_value(critic, &traj[0].input)?;
                }
                Ok(ValueSample {
                    context: e.sampled_context.clone(),
                    value: total / e.trajectories.len() as f64,
                })
            })
            .collect()
    }
}

fn build_with_retries(
    factory: &dyn EnvFactory,
    source: &ContextSource,
    spec: &ContextSpec,
    rng: &mut SimRng,
) -> Result<(ContextVector, ContextVector, Box<dyn MultiAgentEnv>)> {
    let mut last = String::new();
    for _ in 0..=MAX_CONTEXT_RETRIES {
        let sampled = source.draw(rng);
        let realized = spec.realize(&sampled);
        match factory.build(&realized, rng) {
            Ok(env) => return Ok((sampled, realized, env)),
            Err(e) => {
                log::debug!("context {:?} rejected: {e}", realized.values());
                last = e.to_string();
            }
        }
    }
    Err(Error::ContextRetriesExhausted {
        retries: MAX_CONTEXT_RETRIES,
        last,
    })
}

/// Runs whole episodes with the shared policy until at least
/// `config.steps_per_iteration` environment steps have been taken.
pub fn collect_rollouts(
    factory: &dyn EnvFactory,
    source: &ContextSource,
    spec: &ContextSpec,
    policy: &Policy,
    config: &PPOConfig,
    aggregation: Aggregation,
    rng: &mut SimRng,
) -> Result<RolloutBatch> {
    let expected = factory.obs_dim() + spec.dim();
    if policy.input_dim() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: policy.input_dim(),
        });
    }
    let mut batch = RolloutBatch::default();
    while batch.env_steps < config.steps_per_iteration {
        let episode_id = batch.episodes.len();
        let episode = run_episode(factory, source, spec, policy, aggregation, episode_id, rng)?;
        batch.env_steps += episode.n_steps();
        batch.episodes.push(episode);
    }
    Ok(batch)
}

fn run_episode(
    factory: &dyn EnvFactory,
    source: &ContextSource,
    spec: &ContextSpec,
    policy: &Policy,
    aggregation: Aggregation,
    episode_id: usize,
    rng: &mut SimRng,
) -> Result<Episode> {
    let (sampled, realized, mut env) = build_with_retries(factory, source, spec, rng)?;
    let norm = spec.normalize(&realized);
    let n = env.n_agents();
    let mut trajectories: Vec<Vec<Transition>> = vec![Vec::with_capacity(env.episode_length()); n];
    let mut observations = env.observations();
    let mut actor_cache = ForwardCache::default();
    let mut critic_cache = ForwardCache::default();
    let mut team_return = 0.0;
    let mut initial_value = 0.0;
    let mut actions = vec![0; n];
    let mut pending: Vec<(Vec<f64>, f64, f64)> = Vec::with_capacity(n);

    for t in 0..env.episode_length() {
        pending.clear();
        for (a, obs) in observations.iter().enumerate() {
            let input = policy_input(obs, &norm);
            let mut probs = policy.actor.forward_cached(&input, &mut actor_cache)?.to_vec();
            softmax_in_place(&mut probs);
            let value = policy.critic.forward_cached(&input, &mut critic_cache)?[0];
            let action = sample_categorical(&probs, rng);
            actions[a] = action;
            if t == 0 {
                initial_value += value;
            }
            pending.push((input, probs[action].ln(), value));
        }
        let out = env.step(&actions, rng)?;
        let team = global_reward(&out.rewards, aggregation);
        team_return += team;
        let done = out.done || t + 1 == env.episode_length();
        for (a, (input, log_prob, value)) in pending.drain(..).enumerate() {
            trajectories[a].push(Transition {
                input,
                action: actions[a],
                log_prob,
                reward: out.rewards[a],
                team_reward: team,
                value,
                done,
                agent_id: a,
                episode_id,
            });
        }
        observations = out.observations;
        if done {
            break;
        }
    }

    Ok(Episode {
        value_sample: ValueSample {
            context: sampled.clone(),
            value: initial_value / n as f64,
        },
        sampled_context: sampled,
        realized_context: realized,
        trajectories,
        team_return,
    })
}

/// Per-transition advantages and returns in [`RolloutBatch::transitions`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Advantages {
    /// Normalized to zero mean and unit variance over the batch.
    pub advantages: Vec<f64>,
    /// Unnormalized `advantage + value` targets for the critic.
    pub returns: Vec<f64>,
}

/// Generalized advantage estimation on the team reward, per agent
/// trajectory, bootstrapping with zero after the last step.
pub fn compute_gae(batch: &RolloutBatch, gamma: f64, lambda: f64) -> Advantages {
    let mut raw = Vec::with_capacity(batch.n_transitions());
    let mut returns = Vec::with_capacity(batch.n_transitions());
    for episode in &batch.episodes {
        for traj in &episode.trajectories {
            let start = raw.len();
            raw.resize(start + traj.len(), 0.0);
            let mut next_value = 0.0;
            let mut next_adv = 0.0;
            for (t, tr) in traj.iter().enumerate().rev() {
                let (next_value_t, next_adv_t) = if tr.done { (0.0, 0.0) } else { (next_value, next_adv) };
                let delta = tr.team_reward + gamma * next_value_t - tr.value;
                let adv = delta + gamma * lambda * next_adv_t;
                raw[start + t] = adv;
                next_value = tr.value;
                next_adv = adv;
            }
            returns.extend(traj.iter().zip(&raw[start..]).map(|(tr, a)| a + tr.value));
        }
    }
    Advantages {
        advantages: normalize(&raw),
        returns,
    }
}

fn normalize(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = var.sqrt() + 1e-8;
    values.iter().map(|v| (v - mean) / scale).collect()
}

/// Per-sample clipped surrogate `min(ρA, clip(ρ, 1-ε, 1+ε)A)`.
pub fn clipped_objective(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// Policy parameters with their optimizer state.
#[derive(Clone, Debug)]
pub struct Learner {
    pub policy: Policy,
    actor_opt: Adam,
    critic_opt: Adam,
}

impl Learner {
    pub fn new(policy: Policy, learning_rate: f64) -> Self {
        Self {
            actor_opt: Adam::new(&policy.actor, learning_rate),
            critic_opt: Adam::new(&policy.critic, learning_rate),
            policy,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateStats {
    /// Mean actor loss over the last epoch.
    pub actor_loss: f64,
    /// Mean critic loss over the last epoch.
    pub critic_loss: f64,
    pub entropy: f64,
    /// Fraction of samples whose ratio was clipped in the last epoch.
    pub clip_fraction: f64,
    /// A non-finite loss or gradient aborted the update.
    pub failed: bool,
}

/// Clipped-PPO epochs over shuffled minibatches. On a non-finite loss the
/// learner is restored to its state before the call and `failed` is set.
pub fn ppo_update(
    learner: &mut Learner,
    batch: &RolloutBatch,
    advantages: &Advantages,
    config: &PPOConfig,
    rng: &mut SimRng,
) -> Result<UpdateStats> {
    let samples: Vec<&Transition> = batch.transitions().collect();
    if samples.len() != advantages.advantages.len() || samples.len() != advantages.returns.len() {
        return Err(Error::DimensionMismatch {
            expected: samples.len(),
            got: advantages.advantages.len(),
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let backup = learner.clone();
    match run_epochs(learner, &samples, advantages, config, rng) {
        Ok(stats) => Ok(stats),
        Err(Error::NonFinite(what)) => {
            log::warn!("ppo update aborted: non-finite {what}");
            *learner = backup;
            Ok(UpdateStats {
                failed: true,
                ..UpdateStats::default()
            })
        }
        Err(e) => Err(e),
    }
}

fn run_epochs(
    learner: &mut Learner,
    samples: &[&Transition],
    adv: &Advantages,
    config: &PPOConfig,
    rng: &mut SimRng,
) -> Result<UpdateStats> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut actor_grads = learner.policy.actor.zeros_like();
    let mut critic_grads = learner.policy.critic.zeros_like();
    let mut actor_cache = ForwardCache::default();
    let mut critic_cache = ForwardCache::default();
    let n_actions = learner.policy.n_actions();
    let mut d_logits = vec![0.0; n_actions];
    let mut stats = UpdateStats::default();

    for _ in 0..config.epochs {
        order.shuffle(rng);
        let (mut actor_sum, mut critic_sum, mut entropy_sum, mut clipped) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(config.minibatch_size) {
            actor_grads.params_mut().for_each(|g| *g = 0.0);
            critic_grads.params_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let tr = samples[i];
                let a = adv.advantages[i];

                let mut probs = learner.policy.actor.forward_cached(&tr.input, &mut actor_cache)?.to_vec();
                softmax_in_place(&mut probs);
                let log_p = probs[tr.action].ln();
                let ratio = (log_p - tr.log_prob).exp();
                let objective = clipped_objective(ratio, a, config.clip);
                let entropy: f64 = -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
                let loss = -objective - config.entropy_coef * entropy;
                if !loss.is_finite() {
                    return Err(Error::NonFinite("actor loss"));
                }
                actor_sum += loss;
                entropy_sum += entropy;

                // Gradient flows only when the min picks the unclipped term.
                let unclipped_active = ratio * a <= ratio.clamp(1.0 - config.clip, 1.0 + config.clip) * a;
                let g_ratio = if unclipped_active { -a * scale } else { 0.0 };
                if !unclipped_active {
                    clipped += 1;
                }
                for (j, d) in d_logits.iter_mut().enumerate() {
                    let onehot = if j == tr.action { 1.0 } else { 0.0 };
                    // ∂ρ/∂z_j = ρ(1[j=a] - p_j); ∂H/∂z_j = -p_j(ln p_j + H).
                    let log_pj = if probs[j] > 0.0 { probs[j].ln() } else { 0.0 };
                    let d_entropy = -probs[j] * (log_pj + entropy);
                    *d = g_ratio * ratio * (onehot - probs[j]) - config.entropy_coef * scale * d_entropy;
                }
                learner.policy.actor.backward(&actor_cache, &d_logits, &mut actor_grads);

                let v = learner.policy.critic.forward_cached(&tr.input, &mut critic_cache)?[0];
                let err = v - adv.returns[i];
                let critic_loss = config.value_coef * err * err;
                if !critic_loss.is_finite() {
                    return Err(Error::NonFinite("critic loss"));
                }
                critic_sum += critic_loss;
                learner
                    .policy
                    .critic
                    .backward(&critic_cache, &[2.0 * config.value_coef * err * scale], &mut critic_grads);
            }
            learner.actor_opt.step(&mut learner.policy.actor, &actor_grads)?;
            learner.critic_opt.step(&mut learner.policy.critic, &critic_grads)?;
        }
        let n = samples.len() as f64;
        stats = UpdateStats {
            actor_loss: actor_sum / n,
            critic_loss: critic_sum / n,
            entropy: entropy_sum / n,
            clip_fraction: clipped as f64 / n,
            failed: false,
        };
    }
    Ok(stats)
}

/// Mean aggregated global return of the stochastic policy over `episodes`
/// episodes at a fixed context.
pub fn evaluate(
    factory: &dyn EnvFactory,
    spec: &ContextSpec,
    policy: &Policy,
    context: &ContextVector,
    episodes: usize,
    aggregation: Aggregation,
    rng: &mut SimRng,
) -> Result<f64> {
    if episodes == 0 {
        return Ok(0.0);
    }
    let source = ContextSource::Fixed(spec.realize(context));
    let mut total = 0.0;
    for id in 0..episodes {
        total += run_episode(factory, &source, spec, policy, aggregation, id, rng)?.team_return;
    }
    Ok(total / episodes as f64)
}
