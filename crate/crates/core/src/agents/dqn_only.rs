use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::cdeh::{mse_and_grad, push_adam, restore_adam, rewards_done, target_of};
use super::{argmax, epsilon_greedy, AgentError, Controller, Learner, LearnerKind, Transition, UpdateStats};
use crate::config::{AgentConfig, SystemConfig};
use crate::env::{ActionLayout, StateTensors};
use crate::nn::{Adam, Checkpoint, HeadKind, Mode, NetSpec, Network, NnError};
use crate::rsma::factorial;

/// Value grid of one raw-action coordinate. Cyclic grids (phases) leave out
/// the upper end, which maps to the same phase as the lower one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub levels: usize,
    pub cyclic: bool,
}

impl Grid {
    pub fn value(self, level: usize) -> f64 {
        let l = level as f64;
        if self.cyclic {
            -1.0 + 2.0 * l / self.levels as f64
        } else {
            -1.0 + 2.0 * l / (self.levels - 1) as f64
        }
    }

    /// Nearest level to a raw value in `[−1, 1]`.
    pub fn level(self, v: f64) -> usize {
        let u = (v.clamp(-1.0, 1.0) + 1.0) / 2.0;
        if self.cyclic {
            (u * self.levels as f64).round() as usize % self.levels
        } else {
            ((u * (self.levels - 1) as f64).round() as usize).min(self.levels - 1)
        }
    }
}

/// Discretised baseline: one Q-network with a branch for the decoding
/// order and one per raw-action coordinate. Each branch picks its level
/// independently; all branches regress onto the shared target
/// `r + γ · mean_b max_l Q′_b(s′, l)`.
#[derive(Debug, Clone)]
pub struct DqnOnly {
    pub cfg: AgentConfig,
    pub q: Network,
    pub q_target: Network,
    grids: Vec<Grid>,
    orders: usize,
    opt: Adam,
    updates: u64,
}

impl DqnOnly {
    pub fn new<R: Rng + ?Sized>(sys: &SystemConfig, cfg: &AgentConfig, rng: &mut R) -> Result<Self, NnError> {
        let layout = ActionLayout::new(sys);
        let phases = layout.phase_range();
        let grids: Vec<Grid> = (0..layout.dim())
            .map(|i| {
                if phases.contains(&i) {
                    Grid { levels: cfg.dqn_phase_levels, cyclic: true }
                } else {
                    Grid { levels: cfg.dqn_scalar_levels, cyclic: false }
                }
            })
            .collect();
        let orders = factorial(sys.users);
        let spec = NetSpec {
            antennas: sys.antennas,
            users: sys.users,
            irs_elements: sys.irs_elements,
            pooled_len: cfg.pooled_len,
            dense_width: cfg.dense_width,
            head_width: cfg.head_width,
            action_in: 0,
            out_dim: orders + grids.iter().map(|g| g.levels).sum::<usize>(),
            head: HeadKind::Linear,
            bn_momentum: cfg.bn_momentum,
        };
        let q = Network::new(spec, rng)?;
        Ok(Self { cfg: cfg.clone(), q_target: target_of(&q), opt: Adam::new(q.params(), cfg.lr_q), q, grids, orders, updates: 0 })
    }

    pub fn action_dim(&self) -> usize {
        self.grids.len()
    }

    pub fn grids(&self) -> &[Grid] {
        &self.grids
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Output columns of each branch, order branch first.
    fn branches(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = vec![0..self.orders];
        let mut start = self.orders;
        for g in &self.grids {
            out.push(start..start + g.levels);
            start += g.levels;
        }
        out
    }

    /// Chosen level per branch for a stored transition.
    fn levels_of(&self, t: &Transition) -> Vec<usize> {
        std::iter::once(t.order).chain(self.grids.iter().zip(&t.action).map(|(g, &v)| g.level(v))).collect()
    }

    fn decode_levels(&self, levels: &[usize]) -> (Vec<f64>, usize) {
        (self.grids.iter().zip(&levels[1..]).map(|(g, &l)| g.value(l)).collect(), levels[0])
    }

    fn choose<R: Rng + ?Sized>(&self, s: &StateTensors, eps: f64, rng: &mut R) -> Result<(Vec<f64>, usize), NnError> {
        let q = self.q.infer(&[s], None)?;
        let row = q.row(0);
        let row = row.as_slice().expect("contiguous row");
        let levels: Vec<usize> = self.branches().into_iter().map(|r| if eps > 0.0 { epsilon_greedy(&row[r], eps, rng) } else { argmax(&row[r]) }).collect();
        Ok(self.decode_levels(&levels))
    }

    /// One gradient step on `batch`; returns the mean squared branch error.
    pub fn update(&mut self, batch: &[&Transition]) -> Result<f64, NnError> {
        self.updates += 1;
        if let Some(t) = batch.iter().find(|t| t.action.len() != self.grids.len()) {
            return Err(NnError::Shape(format!("stored action has {} entries, expected {}", t.action.len(), self.grids.len())));
        }
        let branches = self.branches();
        let nb = branches.len() as f64;
        let states: Vec<&StateTensors> = batch.iter().map(|t| t.state.as_ref()).collect();
        let next: Vec<&StateTensors> = batch.iter().map(|t| t.next_state.as_ref()).collect();
        let next_q = self.q_target.infer(&next, None)?;
        let (r, done) = rewards_done(batch);
        let y: Vec<f64> = (0..batch.len())
            .map(|i| {
                if done[i] {
                    return r[i];
                }
                let row = next_q.row(i);
                let boot = branches.iter().map(|b| row.slice(ndarray::s![b.clone()]).fold(f64::NEG_INFINITY, |m, &v| m.max(v))).sum::<f64>() / nb;
                r[i] + self.cfg.gamma_disc * boot
            })
            .collect();

        let (out, tape) = self.q.forward(&states, None, Mode::Train)?;
        let mut cols = Vec::with_capacity(batch.len() * branches.len());
        let mut pred = Vec::with_capacity(cols.capacity());
        let mut target = Vec::with_capacity(cols.capacity());
        for (i, t) in batch.iter().enumerate() {
            for (b, l) in branches.iter().zip(self.levels_of(t)) {
                cols.push((i, b.start + l));
                pred.push(out[[i, b.start + l]]);
                target.push(y[i]);
            }
        }
        let (loss, g) = mse_and_grad(&pred, &target);
        let mut grad_out = Array2::zeros(out.dim());
        for (&(i, c), gv) in cols.iter().zip(g) {
            grad_out[[i, c]] += gv;
        }
        let grads = self.q.backward(tape, &grad_out)?.grads;
        self.opt.step(&mut self.q, &grads)?;
        self.q_target.params_mut().soft_update_from(self.q.params(), self.cfg.tau_soft)?;
        Ok(loss)
    }

    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        let mut ck = Checkpoint::new(json!({
            "kind": LearnerKind::DqnOnly.name(),
            "action_dim": self.action_dim(),
            "order_count": self.orders,
            "scalar_levels": self.cfg.dqn_scalar_levels,
            "phase_levels": self.cfg.dqn_phase_levels,
            "updates": self.updates,
            "adam_steps": { "q": self.opt.t },
            "extra": extra,
        }));
        ck.push_params("q", self.q.params());
        ck.push_params("q_target", self.q_target.params());
        push_adam(&mut ck, "q", &self.opt, &self.q);
        ck
    }

    pub fn restore(&mut self, ck: &Checkpoint) -> Result<(), AgentError> {
        if ck.meta["kind"] != LearnerKind::DqnOnly.name() {
            return Err(AgentError::Mismatch("not a dqn-only checkpoint".into()));
        }
        let updates = ck.meta["updates"].as_u64().ok_or_else(|| AgentError::Mismatch("missing `updates`".into()))?;
        ck.restore_params("q", self.q.params_mut())?;
        ck.restore_params("q_target", self.q_target.params_mut())?;
        restore_adam(ck, "q", &mut self.opt, &self.q)?;
        self.updates = updates;
        Ok(())
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<(), AgentError> {
        Ok(self.to_checkpoint(extra).save(path)?)
    }

    pub fn load(path: &Path, sys: &SystemConfig, cfg: &AgentConfig) -> Result<(Self, serde_json::Value), AgentError> {
        let ck = Checkpoint::load(path)?;
        let mut agent = Self::new(sys, cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
        agent.restore(&ck)?;
        Ok((agent, ck.meta["extra"].clone()))
    }
}

impl Controller for DqnOnly {
    fn kind(&self) -> LearnerKind {
        LearnerKind::DqnOnly
    }

    fn act(&self, s: &StateTensors) -> Result<(Vec<f64>, usize), NnError> {
        self.choose(s, 0.0, &mut ChaCha8Rng::seed_from_u64(0))
    }
}

impl Learner for DqnOnly {
    fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    /// Every branch explores independently with probability `eps`; `sigma`
    /// is unused.
    fn explore<R: Rng + ?Sized>(&self, s: &StateTensors, eps: f64, _sigma: f64, rng: &mut R) -> Result<(Vec<f64>, usize), NnError> {
        self.choose(s, eps, rng)
    }

    fn learn<R: Rng + ?Sized>(&mut self, batch: &[&Transition], _rng: &mut R) -> Result<UpdateStats, NnError> {
        Ok(UpdateStats { critic1: None, critic2: None, actor: None, q: self.update(batch)? })
    }

    fn save(&self, path: &Path, extra: serde_json::Value) -> Result<(), AgentError> {
        DqnOnly::save(self, path, extra)
    }
}
