use std::ops::Range;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use serde_json::json;
use thiserror::Error;

use super::{epsilon_at, sigma_at, AgentError, Learner, ReplayBuffer, Transition, UpdateStats};
use crate::env::{Env, EnvError};
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("non-finite loss at episode {episode}, step {step}: {stats:?} (diagnostic checkpoint: {checkpoint:?})")]
    NonFinite { episode: u64, step: u64, stats: UpdateStats, checkpoint: Option<PathBuf> },
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Episode indices to run; resuming passes a later start.
    pub episodes: Range<u64>,
    /// Total episodes of the whole run, for the exploration schedules.
    pub schedule_episodes: u64,
    /// Periodic checkpoints go here as `ckpt_<episode>.json`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Written when a loss turns non-finite.
    pub diagnostic_path: Option<PathBuf>,
    /// Stored as `run` in the metadata of every checkpoint written here.
    pub run_meta: serde_json::Value,
}

impl TrainOptions {
    pub fn new(episodes: u64) -> Self {
        Self { episodes: 0..episodes, schedule_episodes: episodes, ..Self::default() }
    }
}

/// One row of the training log. Losses are means over the episode's
/// learning steps (NaN when there were none).
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: u64,
    pub ret: f64,
    pub critic1_loss: f64,
    pub critic2_loss: f64,
    pub actor_loss: f64,
    pub q_loss: f64,
    pub epsilon: f64,
    pub sigma: f64,
    pub violations: usize,
    pub mean_delay: f64,
    pub wall_secs: f64,
}

impl EpisodeLog {
    pub fn header() -> Vec<&'static str> {
        vec!["episode", "return", "critic1_loss", "critic2_loss", "actor_loss", "q_loss", "epsilon", "sigma", "violations", "mean_delay", "wall_secs"]
    }

    pub fn record(&self) -> Vec<String> {
        let f = |v: f64| format!("{v:e}");
        vec![
            self.episode.to_string(),
            f(self.ret),
            f(self.critic1_loss),
            f(self.critic2_loss),
            f(self.actor_loss),
            f(self.q_loss),
            f(self.epsilon),
            f(self.sigma),
            self.violations.to_string(),
            f(self.mean_delay),
            format!("{:.3}", self.wall_secs),
        ]
    }
}

#[derive(Default)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }

    fn get(&self) -> f64 {
        if self.n == 0 { f64::NAN } else { self.sum / self.n as f64 }
    }
}

/// Runs the learner over `opts.episodes`. Each step selects both actions,
/// stores the transition and, once the buffer holds a batch, updates TD3
/// and then DQN from one shared sample. `on_episode` sees each log row as
/// it is produced.
pub fn train<L: Learner, R: Rng + ?Sized>(
    env: &mut Env,
    agent: &mut L,
    opts: &TrainOptions,
    rng: &mut R,
    mut on_episode: impl FnMut(&EpisodeLog),
) -> Result<Vec<EpisodeLog>, TrainError> {
    let slots = env.config().slots as u64;
    let total_steps = opts.schedule_episodes.max(opts.episodes.end) * slots;
    let mut buffer = ReplayBuffer::new(agent.config().buffer_capacity);
    let started = Instant::now();
    let mut log = Vec::new();

    for episode in opts.episodes.clone() {
        let mut state = Arc::new(env.reset(episode));
        let (mut c1, mut c2, mut act, mut q) = (Mean::default(), Mean::default(), Mean::default(), Mean::default());
        let (mut ret, mut violations, mut delay) = (0.0, 0, Mean::default());
        let mut eps;
        let mut sigma;
        loop {
            let step = episode * slots + env.slot() as u64;
            eps = epsilon_at(agent.config(), step, total_steps);
            sigma = sigma_at(agent.config(), step, total_steps);
            let (action, order) = agent.explore(&state, eps, sigma, rng)?;
            let result = env.step(&env.decode(&action, order)?)?;
            let next = Arc::new(result.next_state);
            ret += result.outcome.reward;
            violations += result.outcome.report.deadline_violations;
            delay.add(result.outcome.report.avg);
            buffer.push(Transition {
                state,
                action,
                order,
                reward: result.outcome.reward,
                next_state: next.clone(),
                done: result.done,
            });
            state = next;

            if buffer.len() >= agent.config().batch {
                let batch = buffer.sample(agent.config().batch, rng);
                let stats = agent.learn(&batch, rng)?;
                if !stats.is_finite() {
                    let checkpoint = opts.diagnostic_path.clone();
                    if let Some(p) = &checkpoint {
                        agent.save(p, json!({"episode": episode, "step": step, "diagnostic": true, "run": opts.run_meta}))?;
                    }
                    return Err(TrainError::NonFinite { episode, step, stats, checkpoint });
                }
                if let Some(v) = stats.critic1 {
                    c1.add(v);
                }
                if let Some(v) = stats.critic2 {
                    c2.add(v);
                }
                q.add(stats.q);
                if let Some(a) = stats.actor {
                    act.add(a);
                }
            }
            if result.done {
                break;
            }
        }
        let row = EpisodeLog {
            episode,
            ret,
            critic1_loss: c1.get(),
            critic2_loss: c2.get(),
            actor_loss: act.get(),
            q_loss: q.get(),
            epsilon: eps,
            sigma,
            violations,
            mean_delay: delay.get(),
            wall_secs: started.elapsed().as_secs_f64(),
        };
        on_episode(&row);
        log.push(row);

        let every = agent.config().checkpoint_every as u64;
        if let Some(dir) = opts.checkpoint_dir.as_ref().filter(|_| every > 0 && (episode + 1) % every == 0) {
            agent.save(&dir.join(format!("ckpt_{}.json", episode + 1)), json!({"next_episode": episode + 1, "run": opts.run_meta}))?;
        }
    }
    Ok(log)
}

/// Episode returns of a policy drawing raw actions uniformly from `[−1, 1]`
/// and orders uniformly, on the given episodes.
pub fn random_policy_returns<R: Rng + ?Sized>(env: &mut Env, episodes: Range<u64>, rng: &mut R) -> Result<Vec<f64>, EnvError> {
    let dim = env.layout().dim();
    let orders = crate::rsma::factorial(env.config().users);
    let mut out = Vec::new();
    for episode in episodes {
        env.reset(episode);
        let mut ret = 0.0;
        loop {
            let raw: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let d = env.decode(&raw, rng.random_range(0..orders))?;
            let r = env.step(&d)?;
            ret += r.outcome.reward;
            if r.done {
                break;
            }
        }
        out.push(ret);
    }
    Ok(out)
}
