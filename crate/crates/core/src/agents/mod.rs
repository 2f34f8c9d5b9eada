//! Hierarchical learner: TD3 for the continuous decisions, DQN for the
//! decoding order, both trained from one shared replay buffer.

mod cdeh;
mod dqn_only;
mod replay;
mod train;

pub use cdeh::Cdeh;
pub use dqn_only::DqnOnly;
pub use replay::{ReplayBuffer, Transition};
pub use train::{random_policy_returns, train, EpisodeLog, TrainError, TrainOptions};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::config::{AgentConfig, SystemConfig};
use crate::env::StateTensors;
use crate::nn::{Checkpoint, CheckpointError, Network, NnError};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint does not match this agent: {0}")]
    Mismatch(String),
}

/// Losses from one learning step. Critic losses are absent for learners
/// without critics; `actor` is set on delayed-update steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic1: Option<f64>,
    pub critic2: Option<f64>,
    pub actor: Option<f64>,
    pub q: f64,
}

impl UpdateStats {
    pub fn is_finite(&self) -> bool {
        [self.critic1, self.critic2, self.actor].iter().all(|v| v.is_none_or(f64::is_finite)) && self.q.is_finite()
    }
}

/// Which learner produced a trained agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearnerKind {
    /// TD3 for the continuous decisions plus DQN for the order.
    Cdeh,
    /// One branching DQN over a grid of every decision.
    DqnOnly,
}

impl LearnerKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Cdeh => "cdeh",
            Self::DqnOnly => "dqn-only",
        }
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LearnerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cdeh" => Ok(Self::Cdeh),
            "dqn-only" => Ok(Self::DqnOnly),
            _ => Err(format!("unknown learner `{s}` (expected cdeh or dqn-only)")),
        }
    }
}

/// Either learner, as loaded from a checkpoint of unknown kind.
#[derive(Debug, Clone)]
pub enum Agent {
    Cdeh(Cdeh),
    DqnOnly(DqnOnly),
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(kind: LearnerKind, sys: &SystemConfig, cfg: &AgentConfig, rng: &mut R) -> Result<Self, NnError> {
        Ok(match kind {
            LearnerKind::Cdeh => Self::Cdeh(Cdeh::new(sys, cfg, rng)?),
            LearnerKind::DqnOnly => Self::DqnOnly(DqnOnly::new(sys, cfg, rng)?),
        })
    }

    /// Learner kind recorded in a checkpoint's metadata.
    pub fn checkpoint_kind(ck: &Checkpoint) -> Result<LearnerKind, AgentError> {
        ck.meta["kind"]
            .as_str()
            .and_then(|k| k.parse().ok())
            .ok_or_else(|| AgentError::Mismatch(format!("unknown agent kind {}", ck.meta["kind"])))
    }

    pub fn restore(&mut self, ck: &Checkpoint) -> Result<(), AgentError> {
        match self {
            Self::Cdeh(a) => a.restore(ck),
            Self::DqnOnly(a) => a.restore(ck),
        }
    }

    /// Builds whichever learner the checkpoint at `path` holds. Returns the
    /// stored `extra` metadata too.
    pub fn load(path: &Path, sys: &SystemConfig, cfg: &AgentConfig) -> Result<(Self, serde_json::Value), AgentError> {
        let ck = Checkpoint::load(path)?;
        let mut agent = Self::new(Self::checkpoint_kind(&ck)?, sys, cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
        agent.restore(&ck)?;
        Ok((agent, ck.meta["extra"].clone()))
    }
}

impl Controller for Agent {
    fn kind(&self) -> LearnerKind {
        match self {
            Self::Cdeh(a) => a.kind(),
            Self::DqnOnly(a) => a.kind(),
        }
    }

    fn act(&self, s: &StateTensors) -> Result<(Vec<f64>, usize), NnError> {
        match self {
            Self::Cdeh(a) => Controller::act(a, s),
            Self::DqnOnly(a) => a.act(s),
        }
    }
}

impl Learner for Agent {
    fn config(&self) -> &AgentConfig {
        match self {
            Self::Cdeh(a) => a.config(),
            Self::DqnOnly(a) => a.config(),
        }
    }

    fn explore<R: Rng + ?Sized>(&self, s: &StateTensors, eps: f64, sigma: f64, rng: &mut R) -> Result<(Vec<f64>, usize), NnError> {
        match self {
            Self::Cdeh(a) => a.explore(s, eps, sigma, rng),
            Self::DqnOnly(a) => a.explore(s, eps, sigma, rng),
        }
    }

    fn learn<R: Rng + ?Sized>(&mut self, batch: &[&Transition], rng: &mut R) -> Result<UpdateStats, NnError> {
        match self {
            Self::Cdeh(a) => a.learn(batch, rng),
            Self::DqnOnly(a) => a.learn(batch, rng),
        }
    }

    fn save(&self, path: &Path, extra: serde_json::Value) -> Result<(), AgentError> {
        match self {
            Self::Cdeh(a) => Learner::save(a, path, extra),
            Self::DqnOnly(a) => Learner::save(a, path, extra),
        }
    }
}

/// A trained policy: raw action in `[−1, 1]^dim` plus an order index.
pub trait Controller {
    fn kind(&self) -> LearnerKind;

    /// Greedy decision for one state.
    fn act(&self, s: &StateTensors) -> Result<(Vec<f64>, usize), NnError>;
}

/// A controller that learns from replayed transitions.
pub trait Learner: Controller {
    fn config(&self) -> &AgentConfig;

    /// Decision with exploration: `eps` for discrete choices, `sigma` for
    /// continuous ones.
    fn explore<R: Rng + ?Sized>(&self, s: &StateTensors, eps: f64, sigma: f64, rng: &mut R) -> Result<(Vec<f64>, usize), NnError>;

    fn learn<R: Rng + ?Sized>(&mut self, batch: &[&Transition], rng: &mut R) -> Result<UpdateStats, NnError>;

    fn save(&self, path: &Path, extra: serde_json::Value) -> Result<(), AgentError>;
}

/// Linear interpolation from `start` to `end` over `span` steps, then flat.
pub fn linear_schedule(start: f64, end: f64, span: f64, step: u64) -> f64 {
    if span <= 0.0 {
        return end;
    }
    let f = (step as f64 / span).min(1.0);
    start + (end - start) * f
}

/// Greedy-exploration probability after `step` of `total_steps`.
pub fn epsilon_at(cfg: &AgentConfig, step: u64, total_steps: u64) -> f64 {
    linear_schedule(cfg.eps_start, cfg.eps_end, cfg.eps_decay_fraction * total_steps as f64, step).clamp(0.0, 1.0)
}

/// Exploration noise scale after `step` of `total_steps`.
pub fn sigma_at(cfg: &AgentConfig, step: u64, total_steps: u64) -> f64 {
    linear_schedule(cfg.sigma_explore_start, cfg.sigma_explore_end, total_steps as f64, step)
}

/// `clamp(μ + N(0, σ), −1, 1)` componentwise.
pub fn add_exploration<R: Rng + ?Sized>(mean: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    if sigma <= 0.0 {
        return mean.iter().map(|m| m.clamp(-1.0, 1.0)).collect();
    }
    let noise = Normal::new(0.0, sigma).expect("finite sigma");
    mean.iter().map(|m| (m + noise.sample(rng)).clamp(-1.0, 1.0)).collect()
}

/// Actor output for one state (evaluation mode) plus exploration noise.
pub fn td3_select<R: Rng + ?Sized>(actor: &Network, state: &StateTensors, sigma: f64, rng: &mut R) -> Result<Vec<f64>, NnError> {
    let mean = actor.infer(&[state], None)?;
    Ok(add_exploration(mean.row(0).as_slice().expect("contiguous row"), sigma, rng))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy choice over `q`.
pub fn epsilon_greedy<R: Rng + ?Sized>(q: &[f64], eps: f64, rng: &mut R) -> usize {
    if rng.random::<f64>() < eps {
        rng.random_range(0..q.len())
    } else {
        argmax(q)
    }
}

pub fn dqn_select<R: Rng + ?Sized>(qnet: &Network, state: &StateTensors, eps: f64, rng: &mut R) -> Result<usize, NnError> {
    let q = qnet.infer(&[state], None)?;
    Ok(epsilon_greedy(q.row(0).as_slice().expect("contiguous row"), eps, rng))
}

/// `clamp(a + clip(N(0, σ), −c, c), −1, 1)` for target smoothing.
pub fn smooth_target_actions<R: Rng + ?Sized>(a: &Array2<f64>, sigma: f64, clip: f64, rng: &mut R) -> Array2<f64> {
    if sigma <= 0.0 {
        return a.mapv(|v| v.clamp(-1.0, 1.0));
    }
    let noise = Normal::new(0.0, sigma).expect("finite sigma");
    a.mapv(|v| (v + noise.sample(rng).clamp(-clip, clip)).clamp(-1.0, 1.0))
}

/// `y = r + γ·min(q1′, q2′)`, without the bootstrap on terminal transitions.
pub fn critic_targets(rewards: &[f64], done: &[bool], q1: &[f64], q2: &[f64], gamma: f64) -> Vec<f64> {
    (0..rewards.len())
        .map(|i| if done[i] { rewards[i] } else { rewards[i] + gamma * q1[i].min(q2[i]) })
        .collect()
}

/// `y = r + γ·max_a Q′(s′, a)`, without the bootstrap on terminal transitions.
pub fn dqn_targets(rewards: &[f64], done: &[bool], next_q: &Array2<f64>, gamma: f64) -> Vec<f64> {
    (0..rewards.len())
        .map(|i| {
            if done[i] {
                rewards[i]
            } else {
                rewards[i] + gamma * next_q.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(99)
    }

    #[test]
    fn exploration_noise() {
        let mut r = rng();
        let mean = [0.3, -0.2, 1.0];
        assert_eq!(add_exploration(&mean, 0.0, &mut r), mean.to_vec());
        let draws: Vec<f64> = (0..100_000).map(|_| add_exploration(&[0.0], 0.1, &mut r)[0]).collect();
        assert!(draws.iter().all(|v| (-1.0..=1.0).contains(v)));
        let m = draws.iter().sum::<f64>() / draws.len() as f64;
        let sd = (draws.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / draws.len() as f64).sqrt();
        assert!((sd - 0.1).abs() < 0.005, "{sd}");
        let wide = add_exploration(&[0.99; 50], 5.0, &mut r);
        assert!(wide.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn greedy_choice() {
        let mut r = rng();
        let q = [1.0, 3.0, 3.0, -2.0];
        assert_eq!(argmax(&q), 1);
        for _ in 0..100 {
            assert_eq!(epsilon_greedy(&q, 0.0, &mut r), 1);
        }
    }

    #[test]
    fn uniform_exploration_passes_chi_square() {
        let mut r = rng();
        let q = [0.0; 6];
        let n = 100_000;
        let mut counts = [0usize; 6];
        for _ in 0..n {
            counts[epsilon_greedy(&q, 1.0, &mut r)] += 1;
        }
        let e = n as f64 / 6.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        let p = 1.0 - ChiSquared::new(5.0).unwrap().cdf(chi2);
        assert!(p > 0.001, "chi2 {chi2}, p {p}");
    }

    #[test]
    fn td3_targets() {
        assert_eq!(critic_targets(&[1.0], &[false], &[3.0], &[5.0], 0.9), vec![1.0 + 0.9 * 3.0]);
        assert_eq!(critic_targets(&[1.0], &[true], &[3.0], &[5.0], 0.9), vec![1.0]);
        assert_eq!(critic_targets(&[0.5, 2.0], &[false, false], &[4.0, -1.0], &[4.0, -1.0], 0.5), vec![2.5, 1.5]);
    }

    #[test]
    fn dqn_target_values() {
        let next = array![[0.5, 2.0, -1.0], [7.0, 1.0, 1.0]];
        assert_eq!(dqn_targets(&[0.0, 3.0], &[false, true], &next, 0.5), vec![1.0, 3.0]);
    }

    #[test]
    fn smoothing_noise_is_clipped() {
        let mut r = rng();
        let a = Array2::zeros((200, 4));
        let s = smooth_target_actions(&a, 10.0, 0.5, &mut r);
        assert!(s.iter().all(|v| v.abs() <= 0.5));
        assert_eq!(smooth_target_actions(&array![[2.0, -0.3]], 0.0, 0.5, &mut r), array![[1.0, -0.3]]);
    }

    #[test]
    fn schedules() {
        let cfg = AgentConfig::default();
        assert_eq!(epsilon_at(&cfg, 0, 1000), 1.0);
        assert!((epsilon_at(&cfg, 150, 1000) - 0.525).abs() < 1e-12);
        assert!((epsilon_at(&cfg, 300, 1000) - 0.05).abs() < 1e-12);
        assert!((epsilon_at(&cfg, 900, 1000) - 0.05).abs() < 1e-12);
        assert!((sigma_at(&cfg, 500, 1000) - 0.06).abs() < 1e-12);
        for s in 0..1000 {
            assert!((0.0..=1.0).contains(&epsilon_at(&cfg, s, 1000)));
        }
    }

    proptest::proptest! {
        #[test]
        fn target_never_exceeds_either_critic(r in -5.0..5.0f64, q1 in -10.0..10.0f64, q2 in -10.0..10.0f64, g in 0.0..1.0f64) {
            let y = critic_targets(&[r], &[false], &[q1], &[q2], g)[0];
            proptest::prop_assert!(y <= r + g * q1 && y <= r + g * q2);
        }
    }

    /// Two states, two actions, deterministic transitions. Updating a table
    /// with the same targets and squared loss reaches value iteration's fixed
    /// point.
    #[test]
    fn tabular_chain_converges() {
        let gamma = 0.9;
        // next[s][a], reward[s][a]
        let next = [[0usize, 1], [0, 1]];
        let reward = [[0.0, 1.0], [2.0, 0.0]];
        let mut qstar = [[0.0f64; 2]; 2];
        for _ in 0..2000 {
            let mut new = qstar;
            for s in 0..2 {
                for a in 0..2 {
                    let n = next[s][a];
                    new[s][a] = reward[s][a] + gamma * qstar[n][0].max(qstar[n][1]);
                }
            }
            qstar = new;
        }
        let mut q = array![[0.0, 0.0], [0.0, 0.0]];
        let mut qt = q.clone();
        let mut r = rng();
        let (lr, tau) = (0.1, 0.05);
        for _ in 0..20_000 {
            let s = r.random_range(0..2);
            let a = r.random_range(0..2);
            let n = next[s][a];
            let y = dqn_targets(&[reward[s][a]], &[false], &qt.slice(ndarray::s![n..n + 1, ..]).to_owned(), gamma)[0];
            q[[s, a]] -= lr * 2.0 * (q[[s, a]] - y);
            qt = &q * tau + &qt * (1.0 - tau);
        }
        for s in 0..2 {
            for a in 0..2 {
                assert!((q[[s, a]] - qstar[s][a]).abs() < 1e-2, "{s} {a}: {} vs {}", q[[s, a]], qstar[s][a]);
            }
        }
    }
}
