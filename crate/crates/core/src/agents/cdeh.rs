use std::path::Path;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{critic_targets, dqn_select, dqn_targets, smooth_target_actions, td3_select, AgentError, Controller, Learner, LearnerKind, Transition, UpdateStats};
use crate::config::{AgentConfig, SystemConfig};
use crate::env::{ActionLayout, StateTensors};
use crate::nn::{Adam, Checkpoint, CheckpointError, HeadKind, Mode, NetSpec, Network, NnError};
use crate::rsma::factorial;


/// TD3 actor/critics and the DQN order selector, with their targets and
/// optimisers.
#[derive(Debug, Clone)]
pub struct Cdeh {
    pub cfg: AgentConfig,
    pub actor: Network,
    pub actor_target: Network,
    pub critic1: Network,
    pub critic2: Network,
    pub critic1_target: Network,
    pub critic2_target: Network,
    pub q: Network,
    pub q_target: Network,
    opt_actor: Adam,
    opt_critic1: Adam,
    opt_critic2: Adam,
    opt_q: Adam,
    updates: u64,
    actor_updates: u64,
}

pub(super) fn target_of(net: &Network) -> Network {
    // A clone starts with identical values but its own identity.
    net.clone()
}

pub(super) fn mse_and_grad(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let n = pred.len() as f64;
    let loss = pred.iter().zip(target).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / n;
    let grad = pred.iter().zip(target).map(|(p, y)| 2.0 * (p - y) / n).collect();
    (loss, grad)
}

impl Cdeh {
    pub fn new<R: Rng + ?Sized>(sys: &SystemConfig, cfg: &AgentConfig, rng: &mut R) -> Result<Self, NnError> {
        let layout = ActionLayout::new(sys);
        let base = NetSpec {
            antennas: sys.antennas,
            users: sys.users,
            irs_elements: sys.irs_elements,
            pooled_len: cfg.pooled_len,
            dense_width: cfg.dense_width,
            head_width: cfg.head_width,
            action_in: 0,
            out_dim: layout.dim(),
            head: HeadKind::Actor,
            bn_momentum: cfg.bn_momentum,
        };
        let critic_spec = NetSpec { action_in: layout.dim(), out_dim: 1, head: HeadKind::Linear, ..base };
        let q_spec = NetSpec { out_dim: factorial(sys.users), head: HeadKind::Linear, ..base };
        let actor = Network::new(base, rng)?;
        let critic1 = Network::new(critic_spec, rng)?;
        let critic2 = Network::new(critic_spec, rng)?;
        let q = Network::new(q_spec, rng)?;
        Ok(Self {
            cfg: cfg.clone(),
            actor_target: target_of(&actor),
            critic1_target: target_of(&critic1),
            critic2_target: target_of(&critic2),
            q_target: target_of(&q),
            opt_actor: Adam::new(actor.params(), cfg.lr_actor),
            opt_critic1: Adam::new(critic1.params(), cfg.lr_critic),
            opt_critic2: Adam::new(critic2.params(), cfg.lr_critic),
            opt_q: Adam::new(q.params(), cfg.lr_q),
            actor,
            critic1,
            critic2,
            q,
            updates: 0,
            actor_updates: 0,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.actor.spec().out_dim
    }

    pub fn order_count(&self) -> usize {
        self.q.spec().out_dim
    }

    /// Learning steps taken so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn actor_updates(&self) -> u64 {
        self.actor_updates
    }

    /// Continuous action with exploration noise `sigma`.
    pub fn select_action<R: Rng + ?Sized>(&self, s: &StateTensors, sigma: f64, rng: &mut R) -> Result<Vec<f64>, NnError> {
        td3_select(&self.actor, s, sigma, rng)
    }

    /// Decoding-order index, ε-greedy.
    pub fn select_order<R: Rng + ?Sized>(&self, s: &StateTensors, eps: f64, rng: &mut R) -> Result<usize, NnError> {
        dqn_select(&self.q, s, eps, rng)
    }

    /// Noise-free action and greedy order.
    pub fn act(&self, s: &StateTensors) -> Result<(Vec<f64>, usize), NnError> {
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        Ok((td3_select(&self.actor, s, 0.0, &mut unused)?, dqn_select(&self.q, s, 0.0, &mut unused)?))
    }

    /// Critic targets for `batch` with smoothed target actions.
    pub fn critic_targets<R: Rng + ?Sized>(&self, batch: &[&Transition], rng: &mut R) -> Result<Vec<f64>, NnError> {
        let next: Vec<&StateTensors> = batch.iter().map(|t| t.next_state.as_ref()).collect();
        let a = self.actor_target.infer(&next, None)?;
        let a = smooth_target_actions(&a, self.cfg.sigma_target, self.cfg.noise_clip, rng);
        let q1 = self.critic1_target.infer(&next, Some(&a))?.column(0).to_vec();
        let q2 = self.critic2_target.infer(&next, Some(&a))?.column(0).to_vec();
        let (r, done) = rewards_done(batch);
        Ok(critic_targets(&r, &done, &q1, &q2, self.cfg.gamma_disc))
    }

    /// One TD3 step followed by one DQN step on the same batch.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &[&Transition], rng: &mut R) -> Result<UpdateStats, NnError> {
        self.updates += 1;
        let states: Vec<&StateTensors> = batch.iter().map(|t| t.state.as_ref()).collect();
        let dim = self.action_dim();
        let mut actions = Array2::zeros((batch.len(), dim));
        for (mut row, t) in actions.axis_iter_mut(Axis(0)).zip(batch) {
            if t.action.len() != dim {
                return Err(NnError::Shape(format!("stored action has {} entries, expected {dim}", t.action.len())));
            }
            row.assign(&ndarray::ArrayView1::from(&t.action));
        }

        let y = self.critic_targets(batch, rng)?;
        let critic1 = fit_critic(&mut self.critic1, &mut self.opt_critic1, &states, &actions, &y)?;
        let critic2 = fit_critic(&mut self.critic2, &mut self.opt_critic2, &states, &actions, &y)?;

        let mut actor = None;
        if self.updates % self.cfg.policy_delay as u64 == 0 {
            actor = Some(self.update_actor(&states)?);
            self.actor_updates += 1;
            let tau = self.cfg.tau_soft;
            self.actor_target.params_mut().soft_update_from(self.actor.params(), tau)?;
            self.critic1_target.params_mut().soft_update_from(self.critic1.params(), tau)?;
            self.critic2_target.params_mut().soft_update_from(self.critic2.params(), tau)?;
        }

        let q = self.update_q(batch, &states)?;
        Ok(UpdateStats { critic1: Some(critic1), critic2: Some(critic2), actor, q })
    }

    /// Ascends `Q1(s, π(s))` less `actor_reg` times the mean squared
    /// pre-activation norm; returns the loss `−mean Q1` without that term.
    fn update_actor(&mut self, states: &[&StateTensors]) -> Result<f64, NnError> {
        let (a, actor_tape) = self.actor.forward(states, None, Mode::Train)?;
        let (qv, critic_tape) = self.critic1.forward_frozen(states, Some(&a), Mode::Train)?;
        let b = states.len() as f64;
        let dq = Array2::from_elem(qv.dim(), -1.0 / b);
        let da = self.critic1.backward(critic_tape, &dq)?.action.expect("critic takes an action");
        let reg = self.cfg.actor_reg;
        let grad_pre = (reg > 0.0).then(|| actor_tape.pre_activation().mapv(|u| 2.0 * reg * u / b));
        let grads = self.actor.backward_with_pre(actor_tape, &da, grad_pre.as_ref())?.grads;
        self.opt_actor.step(&mut self.actor, &grads)?;
        Ok(-qv.sum() / b)
    }

    fn update_q(&mut self, batch: &[&Transition], states: &[&StateTensors]) -> Result<f64, NnError> {
        let next: Vec<&StateTensors> = batch.iter().map(|t| t.next_state.as_ref()).collect();
        let next_q = self.q_target.infer(&next, None)?;
        let (r, done) = rewards_done(batch);
        let y = dqn_targets(&r, &done, &next_q, self.cfg.gamma_disc);
        let (out, tape) = self.q.forward(states, None, Mode::Train)?;
        let taken: Vec<f64> = batch.iter().enumerate().map(|(i, t)| out[[i, t.order]]).collect();
        let (loss, g) = mse_and_grad(&taken, &y);
        let mut grad_out = Array2::zeros(out.dim());
        for (i, t) in batch.iter().enumerate() {
            grad_out[[i, t.order]] = g[i];
        }
        let grads = self.q.backward(tape, &grad_out)?.grads;
        self.opt_q.step(&mut self.q, &grads)?;
        self.q_target.params_mut().soft_update_from(self.q.params(), self.cfg.tau_soft)?;
        Ok(loss)
    }

    fn nets(&self) -> [(&'static str, &Network); 8] {
        [
            ("actor", &self.actor),
            ("actor_target", &self.actor_target),
            ("critic1", &self.critic1),
            ("critic2", &self.critic2),
            ("critic1_target", &self.critic1_target),
            ("critic2_target", &self.critic2_target),
            ("q", &self.q),
            ("q_target", &self.q_target),
        ]
    }

    fn optimisers(&self) -> [(&'static str, &Adam, &Network); 4] {
        [
            ("actor", &self.opt_actor, &self.actor),
            ("critic1", &self.opt_critic1, &self.critic1),
            ("critic2", &self.opt_critic2, &self.critic2),
            ("q", &self.opt_q, &self.q),
        ]
    }

    /// Every network, optimiser moment and counter. `extra` is stored under
    /// `meta.extra`.
    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        let mut steps = serde_json::Map::new();
        for (name, opt, _) in self.optimisers() {
            steps.insert(name.to_string(), json!(opt.t));
        }
        let mut ck = Checkpoint::new(json!({
            "kind": "cdeh",
            "action_dim": self.action_dim(),
            "order_count": self.order_count(),
            "updates": self.updates,
            "actor_updates": self.actor_updates,
            "adam_steps": steps,
            "extra": extra,
        }));
        for (name, net) in self.nets() {
            ck.push_params(name, net.params());
        }
        for (name, opt, net) in self.optimisers() {
            push_adam(&mut ck, name, opt, net);
        }
        ck
    }

    /// Overwrites this agent's state from `ck`. Network shapes must match.
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<(), AgentError> {
        if ck.meta["kind"] != "cdeh" {
            return Err(AgentError::Mismatch("not an agent checkpoint".into()));
        }
        let counter = |key: &str| ck.meta[key].as_u64().ok_or_else(|| AgentError::Mismatch(format!("missing `{key}`")));
        let updates = counter("updates")?;
        let actor_updates = counter("actor_updates")?;
        for (name, net) in [
            ("actor", &mut self.actor),
            ("actor_target", &mut self.actor_target),
            ("critic1", &mut self.critic1),
            ("critic2", &mut self.critic2),
            ("critic1_target", &mut self.critic1_target),
            ("critic2_target", &mut self.critic2_target),
            ("q", &mut self.q),
            ("q_target", &mut self.q_target),
        ] {
            ck.restore_params(name, net.params_mut())?;
        }
        for (name, opt, net) in [
            ("actor", &mut self.opt_actor, &self.actor),
            ("critic1", &mut self.opt_critic1, &self.critic1),
            ("critic2", &mut self.opt_critic2, &self.critic2),
            ("q", &mut self.opt_q, &self.q),
        ] {
            restore_adam(ck, name, opt, net)?;
        }
        self.updates = updates;
        self.actor_updates = actor_updates;
        Ok(())
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<(), AgentError> {
        Ok(self.to_checkpoint(extra).save(path)?)
    }

    /// Builds an agent for `sys`/`cfg` and fills it from the checkpoint at
    /// `path`. Returns the stored `extra` metadata too.
    pub fn load(path: &Path, sys: &SystemConfig, cfg: &AgentConfig) -> Result<(Self, serde_json::Value), AgentError> {
        let ck = Checkpoint::load(path)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut agent = Self::new(sys, cfg, &mut rng)?;
        agent.restore(&ck)?;
        Ok((agent, ck.meta["extra"].clone()))
    }

    pub fn is_finite(&self) -> bool {
        self.nets().iter().all(|(_, n)| n.params().is_finite())
    }
}

pub(super) fn push_adam(ck: &mut Checkpoint, name: &str, opt: &Adam, net: &Network) {
    for (i, a) in net.params().arrays().iter().enumerate() {
        ck.push(format!("adam.{name}.m/{}", a.name), a.shape.clone(), opt.m[i].clone());
        ck.push(format!("adam.{name}.v/{}", a.name), a.shape.clone(), opt.v[i].clone());
    }
}

/// Step count from `meta.adam_steps.<name>` and both moment tensors.
pub(super) fn restore_adam(ck: &Checkpoint, name: &str, opt: &mut Adam, net: &Network) -> Result<(), AgentError> {
    opt.t = ck.meta["adam_steps"][name].as_u64().ok_or_else(|| AgentError::Mismatch(format!("missing optimiser step for {name}")))?;
    for (i, a) in net.params().arrays().iter().enumerate() {
        for (kind, dst) in [("m", &mut opt.m[i]), ("v", &mut opt.v[i])] {
            let key = format!("adam.{name}.{kind}/{}", a.name);
            let t = ck.get(&key).filter(|t| t.data.len() == dst.len()).ok_or(CheckpointError::Missing(key))?;
            dst.copy_from_slice(&t.data);
        }
    }
    Ok(())
}

pub(super) fn rewards_done(batch: &[&Transition]) -> (Vec<f64>, Vec<bool>) {
    (batch.iter().map(|t| t.reward).collect(), batch.iter().map(|t| t.done).collect())
}

fn fit_critic(net: &mut Network, opt: &mut Adam, states: &[&StateTensors], actions: &Array2<f64>, y: &[f64]) -> Result<f64, NnError> {
    let (out, tape) = net.forward(states, Some(actions), Mode::Train)?;
    let (loss, g) = mse_and_grad(out.column(0).as_slice().expect("single column"), y);
    let grad_out = Array2::from_shape_vec(out.dim(), g).expect("one gradient per row");
    let grads = net.backward(tape, &grad_out)?.grads;
    opt.step(net, &grads)?;
    Ok(loss)
}

impl Controller for Cdeh {
    fn kind(&self) -> LearnerKind {
        LearnerKind::Cdeh
    }

    fn act(&self, s: &StateTensors) -> Result<(Vec<f64>, usize), NnError> {
        Cdeh::act(self, s)
    }
}

impl Learner for Cdeh {
    fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    fn explore<R: Rng + ?Sized>(&self, s: &StateTensors, eps: f64, sigma: f64, rng: &mut R) -> Result<(Vec<f64>, usize), NnError> {
        Ok((self.select_action(s, sigma, rng)?, self.select_order(s, eps, rng)?))
    }

    fn learn<R: Rng + ?Sized>(&mut self, batch: &[&Transition], rng: &mut R) -> Result<UpdateStats, NnError> {
        self.update(batch, rng)
    }

    fn save(&self, path: &Path, extra: serde_json::Value) -> Result<(), AgentError> {
        Cdeh::save(self, path, extra)
    }
}
