//! Reference strategies, each a fixed policy over the same environment.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::agents::{Controller, LearnerKind};
use crate::channel::{composite_channel, ChannelMask, IrsPhase};
use crate::config::MAX_ENUMERATED_USERS;
use crate::env::{Env, EnvError, SlotDecision, SlotOutcome};
use crate::nn::NnError;
use crate::rsma::{factorial, AccessScheme, Beamformer, DecodingOrder, RsmaError};

/// First episode index of the evaluation set, far from training episodes.
pub const EVAL_EPISODE_BASE: u64 = 1 << 32;

/// Evaluation episodes `EVAL_EPISODE_BASE + 0..n`.
pub fn eval_episodes(n: u64) -> Range<u64> {
    EVAL_EPISODE_BASE..EVAL_EPISODE_BASE + n
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy `{0}` has learned components but no trained agent was supplied")]
    MissingAgent(String),
    #[error("policy `{policy}` needs a {expected} agent, got {got}")]
    WrongAgent { policy: String, expected: LearnerKind, got: LearnerKind },
    #[error("exhaustive order search supports at most {MAX_ENUMERATED_USERS} users, got {0}")]
    TooManyUsers(usize),
    #[error("unknown {kind} `{value}`")]
    Parse { kind: &'static str, value: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Rsma(#[from] RsmaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderPolicy {
    Learned,
    Reverse,
    Sequential,
    /// One seeded permutation for the whole run.
    Fixed(u64),
    /// A fresh permutation every slot.
    Random,
    /// The order with the lowest slot delay given the other decisions.
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhasePolicy {
    Learned,
    /// Fresh uniform phases every slot.
    Random,
    /// One seeded phase vector for the whole run.
    Fixed(u64),
    /// Reflected path only.
    OnlyIrs,
    /// Direct path only.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffloadPolicy {
    Learned,
    FullLocal,
    FullOffload,
}

/// Every name accepted by [`PolicySpec::preset`].
pub const PRESET_NAMES: [&str; 15] = [
    "cdeh",
    "dqn-only",
    "reverse",
    "sequential",
    "fixed-order",
    "random-order",
    "exhaustive",
    "random-phase",
    "fixed-phase",
    "only-irs",
    "direct",
    "full-local",
    "full-offload",
    "noma",
    "sic-rsma",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySpec {
    pub name: String,
    pub order: OrderPolicy,
    pub phase: PhasePolicy,
    pub offload: OffloadPolicy,
    pub scheme: AccessScheme,
    /// Learner whose agent supplies the learned components.
    pub learner: LearnerKind,
}

impl PolicySpec {
    pub fn learned() -> Self {
        Self {
            name: "cdeh".into(),
            order: OrderPolicy::Learned,
            phase: PhasePolicy::Learned,
            offload: OffloadPolicy::Learned,
            scheme: AccessScheme::ProposedRsma,
            learner: LearnerKind::Cdeh,
        }
    }

    pub fn needs_agent(&self) -> bool {
        self.order == OrderPolicy::Learned || self.phase == PhasePolicy::Learned || self.offload == OffloadPolicy::Learned
    }

    /// Named presets, see [`PRESET_NAMES`]. Components a preset does not
    /// name come from the CDEH agent, except `dqn-only`, which takes all of
    /// them from the discretised baseline.
    pub fn preset(name: &str) -> Result<Self, PolicyError> {
        let base = Self { name: name.to_string(), ..Self::learned() };
        let spec = match name {
            "cdeh" => base,
            "dqn-only" => Self { learner: LearnerKind::DqnOnly, ..base },
            "reverse" => Self { order: OrderPolicy::Reverse, ..base },
            "sequential" => Self { order: OrderPolicy::Sequential, ..base },
            "fixed-order" => Self { order: OrderPolicy::Fixed(0), ..base },
            "random-order" => Self { order: OrderPolicy::Random, ..base },
            "exhaustive" => Self { order: OrderPolicy::Exhaustive, ..base },
            "random-phase" => Self { phase: PhasePolicy::Random, ..base },
            "fixed-phase" => Self { phase: PhasePolicy::Fixed(0), ..base },
            "only-irs" => Self { phase: PhasePolicy::OnlyIrs, ..base },
            "direct" => Self { phase: PhasePolicy::Direct, ..base },
            "full-local" => Self { offload: OffloadPolicy::FullLocal, order: OrderPolicy::Sequential, phase: PhasePolicy::Fixed(0), ..base },
            "full-offload" => Self { offload: OffloadPolicy::FullOffload, ..base },
            "noma" => Self { scheme: AccessScheme::Noma, ..base },
            "sic-rsma" => Self { scheme: AccessScheme::SicRsma, ..base },
            _ => return Err(PolicyError::Parse { kind: "policy", value: name.to_string() }),
        };
        Ok(spec)
    }
}

impl FromStr for PolicySpec {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::preset(s)
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Continuous decisions used when no trained actor is available: matched
/// combiner on the composite channel, even power and data splits.
const HEURISTIC_SPLIT: f64 = 0.5;

/// A [`PolicySpec`] bound to an optional agent and its run-level draws.
pub struct Policy<'a> {
    spec: PolicySpec,
    agent: Option<&'a dyn Controller>,
    rng: ChaCha8Rng,
    fixed_order: Option<DecodingOrder>,
    fixed_phase: Option<IrsPhase>,
}

impl<'a> Policy<'a> {
    /// `seed` drives the random and fixed components.
    pub fn new(spec: PolicySpec, agent: Option<&'a dyn Controller>, env: &Env, seed: u64) -> Result<Self, PolicyError> {
        if spec.needs_agent() {
            let got = agent.ok_or_else(|| PolicyError::MissingAgent(spec.name.clone()))?.kind();
            if got != spec.learner {
                return Err(PolicyError::WrongAgent { policy: spec.name.clone(), expected: spec.learner, got });
            }
        }
        let users = env.config().users;
        if spec.order == OrderPolicy::Exhaustive && users > MAX_ENUMERATED_USERS {
            return Err(PolicyError::TooManyUsers(users));
        }
        let fixed_order = match spec.order {
            OrderPolicy::Fixed(s) => Some(random_order(users, &mut ChaCha8Rng::seed_from_u64(s))),
            _ => None,
        };
        let fixed_phase = match spec.phase {
            PhasePolicy::Fixed(s) => Some(IrsPhase::random(env.config().irs_elements, &mut ChaCha8Rng::seed_from_u64(s))),
            _ => None,
        };
        Ok(Self { spec, agent, rng: ChaCha8Rng::seed_from_u64(seed), fixed_order, fixed_phase })
    }

    pub fn spec(&self) -> &PolicySpec {
        &self.spec
    }

    /// Channel mask and access scheme this policy evaluates under.
    pub fn apply_settings(&self, env: &mut Env) {
        env.settings.mask = match self.spec.phase {
            PhasePolicy::OnlyIrs => ChannelMask::OnlyIrs,
            PhasePolicy::Direct => ChannelMask::DirectOnly,
            _ => ChannelMask::Full,
        };
        env.settings.scheme = self.spec.scheme;
    }

    /// Decision for the environment's current slot. Expects
    /// [`Policy::apply_settings`] to have been called on `env`.
    pub fn decide(&mut self, env: &Env) -> Result<SlotDecision, PolicyError> {
        let cfg = env.config();
        let n = cfg.users;
        let (mut d, learned_order) = match self.agent {
            Some(agent) => {
                let (raw, order) = agent.act(&env.state())?;
                (env.decode(&raw, order)?, Some(order))
            }
            None => {
                let d = SlotDecision {
                    beta: vec![0.0; n],
                    eta: vec![HEURISTIC_SPLIT; n],
                    gamma: vec![HEURISTIC_SPLIT; n],
                    p: vec![cfg.p_max; n],
                    phase: IrsPhase::zeros(cfg.irs_elements),
                    w: Beamformer::new(ndarray::Array2::zeros((cfg.antennas, n))),
                    order: DecodingOrder::sequential(n),
                    rho: None,
                };
                (d, None)
            }
        };

        match self.spec.offload {
            OffloadPolicy::Learned => {}
            OffloadPolicy::FullLocal => d.beta = vec![0.0; n],
            OffloadPolicy::FullOffload => d.beta = vec![1.0; n],
        }
        match self.spec.phase {
            PhasePolicy::Random => d.phase = IrsPhase::random(cfg.irs_elements, &mut self.rng),
            PhasePolicy::Fixed(_) => d.phase = self.fixed_phase.clone().expect("drawn at construction"),
            PhasePolicy::Learned | PhasePolicy::OnlyIrs | PhasePolicy::Direct => {}
        }
        if self.agent.is_none() {
            let h = composite_channel(&env.channels().masked(env.settings.mask), &d.phase).map_err(EnvError::from)?;
            d.w = Beamformer::matched(&h);
        }
        if self.spec.scheme == AccessScheme::Noma {
            d.gamma = vec![1.0; n];
            d.eta = vec![1.0; n];
        }
        d.order = match self.spec.order {
            OrderPolicy::Learned => DecodingOrder::from_index(n, learned_order.expect("agent present"))?,
            OrderPolicy::Reverse => DecodingOrder::reverse(n),
            OrderPolicy::Sequential => DecodingOrder::sequential(n),
            OrderPolicy::Fixed(_) => self.fixed_order.clone().expect("drawn at construction"),
            OrderPolicy::Random => random_order(n, &mut self.rng),
            OrderPolicy::Exhaustive => best_order(env, &d)?.0,
        };
        Ok(d)
    }
}

fn random_order<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DecodingOrder {
    let mut seq: Vec<usize> = (0..n).collect();
    seq.shuffle(rng);
    DecodingOrder::from_sequence(&seq).expect("a permutation")
}

/// Order with the lowest mean slot delay for `d`'s other decisions; ties go
/// to the lowest order index.
pub fn best_order(env: &Env, d: &SlotDecision) -> Result<(DecodingOrder, SlotOutcome), PolicyError> {
    let n = env.config().users;
    if n > MAX_ENUMERATED_USERS {
        return Err(PolicyError::TooManyUsers(n));
    }
    let mut best: Option<(DecodingOrder, SlotOutcome)> = None;
    let mut trial = d.clone();
    for i in 0..factorial(n) {
        trial.order = DecodingOrder::from_index(n, i)?;
        let out = env.evaluate(&trial)?;
        if best.as_ref().is_none_or(|(_, b)| out.report.avg < b.report.avg) {
            best = Some((trial.order.clone(), out));
        }
    }
    Ok(best.expect("at least one order"))
}

/// One evaluated slot.
#[derive(Debug, Clone)]
pub struct SlotRecord {
    pub episode: u64,
    pub t: usize,
    pub order_index: usize,
    pub outcome: SlotOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyMetrics {
    pub policy: String,
    /// Mean over episodes of the per-episode mean slot delay.
    pub mean_delay: f64,
    /// Sample standard deviation of the per-episode mean delays.
    pub std_delay: f64,
    pub mean_return: f64,
    pub violations: usize,
    pub episodes: usize,
}

/// Runs `policy` on `episodes` and summarises the average delay.
pub fn evaluate_policy(
    policy: &mut Policy<'_>,
    env: &mut Env,
    episodes: Range<u64>,
    mut on_slot: impl FnMut(&SlotRecord),
) -> Result<PolicyMetrics, PolicyError> {
    let saved = env.settings;
    policy.apply_settings(env);
    let mut per_episode = Vec::new();
    let (mut returns, mut violations) = (0.0, 0);
    let result = (|| {
        for episode in episodes {
            env.reset(episode);
            let mut sum = 0.0;
            loop {
                let d = policy.decide(env)?;
                let order_index = d.order.to_index();
                let t = env.slot();
                let step = env.step(&d)?;
                sum += step.outcome.report.avg;
                returns += step.outcome.reward;
                violations += step.outcome.report.deadline_violations;
                on_slot(&SlotRecord { episode, t, order_index, outcome: step.outcome });
                if step.done {
                    break;
                }
            }
            per_episode.push(sum / env.config().slots as f64);
        }
        Ok::<(), PolicyError>(())
    })();
    env.settings = saved;
    result?;
    let (mean, std) = mean_std(&per_episode);
    Ok(PolicyMetrics {
        policy: policy.spec.name.clone(),
        mean_delay: mean,
        std_delay: std,
        mean_return: returns / per_episode.len().max(1) as f64,
        violations,
        episodes: per_episode.len(),
    })
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
