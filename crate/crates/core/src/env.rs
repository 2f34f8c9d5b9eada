//! MDP wrapper: state tensors, action decoding, slot evaluation and episodes.

use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::channel::{composite_channel, place_users, sample_channels, ChannelError, ChannelMask, ChannelState, IrsPhase};
use crate::config::{Combiner, Point, RhoPolicy, SystemConfig};
use crate::mec::{self, ComputeParams, DelayReport, OffloadDecision, TaskBatch};
use crate::rsma::{self, AccessScheme, Beamformer, DecodingOrder, RatePair, RsmaError, TxAllocation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("action has length {got}, expected {expected}")]
    ActionLength { got: usize, expected: usize },
    #[error("action entry {0} is not finite")]
    NonFiniteAction(usize),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Rsma(#[from] RsmaError),
    #[error("decision shape mismatch: {0}")]
    Shape(String),
}

/// Real/imaginary planes of the three channel matrices, shapes `(2,M,N)`,
/// `(2,K,N)` and `(2,M,K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTensors {
    pub s_dir: Array3<f64>,
    pub s_irs: Array3<f64>,
    pub s_g: Array3<f64>,
}

impl StateTensors {
    pub fn is_finite(&self) -> bool {
        [&self.s_dir, &self.s_irs, &self.s_g].iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn tensors(&self) -> [&Array3<f64>; 3] {
        [&self.s_dir, &self.s_irs, &self.s_g]
    }
}

fn split(m: &Array2<Complex64>) -> Array3<f64> {
    let (r, c) = m.dim();
    Array3::from_shape_fn((2, r, c), |(p, i, j)| if p == 0 { m[[i, j]].re } else { m[[i, j]].im })
}

fn join(t: &Array3<f64>) -> Array2<Complex64> {
    let (_, r, c) = t.dim();
    Array2::from_shape_fn((r, c), |(i, j)| Complex64::new(t[[0, i, j]], t[[1, i, j]]))
}

/// Lossless real/imaginary split, before standardisation.
pub fn split_state(cs: &ChannelState) -> StateTensors {
    StateTensors { s_dir: split(&cs.h_dir), s_irs: split(&cs.h_irs), s_g: split(&cs.g) }
}

/// Inverse of [`split_state`]; positions are not part of the state.
pub fn reconstruct(s: &StateTensors) -> ChannelState {
    ChannelState { h_dir: join(&s.s_dir), h_irs: join(&s.s_irs), g: join(&s.s_g), positions: Vec::new() }
}

/// Per-plane divisors: `[tensor][plane]` for dir, irs, g.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateScale {
    pub rms: [[f64; 2]; 3],
}

impl StateScale {
    pub fn identity() -> Self {
        Self { rms: [[1.0; 2]; 3] }
    }

    /// RMS of each plane over `cfg.state_scale_draws` independent deployments.
    pub fn calibrate(cfg: &SystemConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(CALIBRATION_STREAM);
        let mut sums = [[0.0f64; 2]; 3];
        let mut counts = [0usize; 3];
        for _ in 0..cfg.state_scale_draws {
            let pos = place_users(cfg, &mut rng);
            let cs = sample_channels(cfg, &pos, &mut rng);
            for (i, m) in [&cs.h_dir, &cs.h_irs, &cs.g].into_iter().enumerate() {
                for z in m.iter() {
                    sums[i][0] += z.re * z.re;
                    sums[i][1] += z.im * z.im;
                }
                counts[i] += m.len();
            }
        }
        let mut rms = [[1.0; 2]; 3];
        for i in 0..3 {
            for p in 0..2 {
                let r = (sums[i][p] / counts[i].max(1) as f64).sqrt();
                if r > 0.0 && r.is_finite() {
                    rms[i][p] = r;
                }
            }
        }
        Self { rms }
    }
}

/// Builds the standardised state of a slot.
pub fn build_state(cs: &ChannelState, scale: &StateScale) -> StateTensors {
    let mut s = split_state(cs);
    for (i, t) in [&mut s.s_dir, &mut s.s_irs, &mut s.s_g].into_iter().enumerate() {
        for p in 0..2 {
            let d = scale.rms[i][p];
            t.index_axis_mut(ndarray::Axis(0), p).mapv_inplace(|v| v / d);
        }
    }
    s
}

/// Positions of the fields inside a raw continuous action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionLayout {
    pub users: usize,
    pub irs_elements: usize,
    pub antennas: usize,
    pub power: bool,
    pub rho: bool,
    /// The combiner is part of the action.
    pub combiner: bool,
}

impl ActionLayout {
    pub fn new(cfg: &SystemConfig) -> Self {
        Self {
            users: cfg.users,
            irs_elements: cfg.irs_elements,
            antennas: cfg.antennas,
            power: cfg.power_action,
            rho: cfg.rho_policy == RhoPolicy::Action,
            combiner: cfg.combiner == Combiner::Learned,
        }
    }

    /// `3N + K`, plus `2MN` for a learned combiner and `N` for each other
    /// optional field.
    pub fn dim(&self) -> usize {
        let n = self.users;
        3 * n + self.irs_elements + 2 * self.combiner_len() + n * (self.power as usize + self.rho as usize)
    }

    /// Raw-action entries holding the IRS phases.
    pub fn phase_range(&self) -> std::ops::Range<usize> {
        let theta = self.offsets()[3];
        theta..theta + self.irs_elements
    }

    fn combiner_len(&self) -> usize {
        if self.combiner { self.antennas * self.users } else { 0 }
    }

    fn offsets(&self) -> [usize; 8] {
        let n = self.users;
        let mn = self.combiner_len();
        let beta = 0;
        let eta = beta + n;
        let gamma = eta + n;
        let theta = gamma + n;
        let w_re = theta + self.irs_elements;
        let w_im = w_re + mn;
        let p = w_im + mn;
        let rho = p + if self.power { n } else { 0 };
        [beta, eta, gamma, theta, w_re, w_im, p, rho]
    }
}

/// Everything needed to evaluate one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotDecision {
    pub beta: Vec<f64>,
    pub eta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub p: Vec<f64>,
    pub phase: IrsPhase,
    /// Placeholder columns when the config uses a matched combiner.
    pub w: Beamformer,
    pub order: DecodingOrder,
    /// Edge shares chosen by the agent; `None` applies the configured rule.
    pub rho: Option<Vec<f64>>,
}

fn unit(raw: f64) -> f64 {
    ((raw.clamp(-1.0, 1.0) + 1.0) / 2.0).clamp(0.0, 1.0)
}

/// Maps a raw action in `[-1,1]^dim` onto the feasible decision set.
/// Inputs outside the box are clipped.
pub fn decode_action(raw: &[f64], layout: &ActionLayout, p_max: f64, order: DecodingOrder) -> Result<SlotDecision, EnvError> {
    if raw.len() != layout.dim() {
        return Err(EnvError::ActionLength { got: raw.len(), expected: layout.dim() });
    }
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(EnvError::NonFiniteAction(i));
    }
    let n = layout.users;
    let m = layout.antennas;
    let [beta, eta, gamma, theta, w_re, w_im, p, rho] = layout.offsets();
    let field = |start: usize, len: usize| raw[start..start + len].iter().map(|&v| unit(v)).collect::<Vec<f64>>();
    let phase = IrsPhase::new(raw[theta..theta + layout.irs_elements].iter().map(|&v| PI * (v.clamp(-1.0, 1.0) + 1.0)).collect());
    let mut w = if layout.combiner {
        Array2::from_shape_fn((m, n), |(r, c)| Complex64::new(raw[w_re + r * n + c], raw[w_im + r * n + c]))
    } else {
        Array2::zeros((m, n))
    };
    let fallback = Complex64::new(1.0 / (m as f64).sqrt(), 0.0);
    for mut col in w.columns_mut() {
        let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 0.0 {
            col.mapv_inplace(|z| z / norm);
        } else {
            col.fill(fallback);
        }
    }
    Ok(SlotDecision {
        beta: field(beta, n),
        eta: field(eta, n),
        gamma: field(gamma, n),
        p: if layout.power { field(p, n).into_iter().map(|u| u * p_max).collect() } else { vec![p_max; n] },
        phase,
        w: Beamformer::new(w),
        order,
        rho: if layout.rho { Some(mec::normalize_shares(&field(rho, n))) } else { None },
    })
}

/// Scheme and channel mask used when a slot is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalSettings {
    pub scheme: AccessScheme,
    pub mask: ChannelMask,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { scheme: AccessScheme::ProposedRsma, mask: ChannelMask::Full }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    pub rates: RatePair,
    pub rho: Vec<f64>,
    pub report: DelayReport,
    pub reward: f64,
}

pub fn compute_params(cfg: &SystemConfig) -> ComputeParams {
    ComputeParams { f_gu: cfg.f_gu, c_gu: cfg.c_gu, f_mec: cfg.f_mec, c_mec: cfg.c_mec, delay_cap: cfg.delay_cap() }
}

/// `−mean delay − penalty · violations / N`.
pub fn reward(report: &DelayReport, penalty: f64) -> f64 {
    let n = report.t_total.len().max(1) as f64;
    -report.avg - penalty * report.deadline_violations as f64 / n
}

/// Composite channel → rates → delays → reward for one slot. Under NOMA each
/// task travels on its single stream, so `η` is taken as one.
pub fn evaluate_slot(
    cfg: &SystemConfig,
    cs: &ChannelState,
    tasks: &TaskBatch,
    d: &SlotDecision,
    settings: EvalSettings,
) -> Result<SlotOutcome, EnvError> {
    let n = cfg.users;
    for (name, len) in [("beta", d.beta.len()), ("eta", d.eta.len()), ("gamma", d.gamma.len()), ("p", d.p.len()), ("tasks", tasks.len())] {
        if len != n {
            return Err(EnvError::Shape(format!("{name} has {len} entries for {n} users")));
        }
    }
    let h = composite_channel(&cs.masked(settings.mask), &d.phase)?;
    let alloc = TxAllocation::new(d.p.clone(), d.gamma.clone());
    let matched;
    let w = match cfg.combiner {
        Combiner::Learned => &d.w,
        Combiner::Matched => {
            matched = Beamformer::matched(&h);
            &matched
        }
    };
    let rates = rsma::scheme_rates(settings.scheme, &h, w, &alloc, &d.order, cfg.noise_power, cfg.bandwidth)?;
    let eta = if settings.scheme == AccessScheme::Noma { vec![1.0; n] } else { d.eta.clone() };
    let rho = match &d.rho {
        Some(r) => r.clone(),
        None => mec::assign_rho(cfg.rho_policy, &tasks.bits, &d.beta),
    };
    let off = OffloadDecision { beta: d.beta.clone(), eta, rho_mec: rho.clone() };
    let report = mec::evaluate(tasks, &off, &rates, &compute_params(cfg), cfg.slot_duration);
    let reward = reward(&report, cfg.penalty);
    Ok(SlotOutcome { rates, rho, report, reward })
}

const POSITION_STREAM: u64 = 1 << 40;
const TASK_STREAM: u64 = 1 << 41;
const CALIBRATION_STREAM: u64 = 1 << 42;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Generator for one `(seed, episode, stream)` triple. Channels of slot `t`
/// use stream `t`, so every slot is reproducible on its own and independent
/// of array sizes.
pub fn episode_rng(seed: u64, episode: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(episode)));
    rng.set_stream(stream);
    rng
}

pub fn episode_positions(cfg: &SystemConfig, episode: u64) -> Vec<Point> {
    place_users(cfg, &mut episode_rng(cfg.seed, episode, POSITION_STREAM))
}

pub fn slot_channels(cfg: &SystemConfig, positions: &[Point], episode: u64, t: usize) -> ChannelState {
    sample_channels(cfg, positions, &mut episode_rng(cfg.seed, episode, t as u64))
}

pub fn slot_tasks(cfg: &SystemConfig, episode: u64, t: usize) -> TaskBatch {
    let mut rng = episode_rng(cfg.seed, episode, TASK_STREAM + t as u64);
    TaskBatch::sample(cfg.users, cfg.task_bits, &mut rng)
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub outcome: SlotOutcome,
    pub next_state: StateTensors,
    pub done: bool,
}

/// Episodic environment: `T` slots per episode, one GU placement per episode.
#[derive(Debug, Clone)]
pub struct Env {
    cfg: SystemConfig,
    scale: StateScale,
    layout: ActionLayout,
    pub settings: EvalSettings,
    episode: u64,
    t: usize,
    positions: Vec<Point>,
    cs: ChannelState,
    tasks: TaskBatch,
}

impl Env {
    pub fn new(cfg: SystemConfig) -> Self {
        let scale = StateScale::calibrate(&cfg);
        Self::with_scale(cfg, scale)
    }

    pub fn with_scale(cfg: SystemConfig, scale: StateScale) -> Self {
        let layout = ActionLayout::new(&cfg);
        let positions = episode_positions(&cfg, 0);
        let cs = slot_channels(&cfg, &positions, 0, 0);
        let tasks = slot_tasks(&cfg, 0, 0);
        Self { cfg, scale, layout, settings: EvalSettings::default(), episode: 0, t: 0, positions, cs, tasks }
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    pub fn scale(&self) -> &StateScale {
        &self.scale
    }

    pub fn layout(&self) -> &ActionLayout {
        &self.layout
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn slot(&self) -> usize {
        self.t
    }

    pub fn channels(&self) -> &ChannelState {
        &self.cs
    }

    pub fn tasks(&self) -> &TaskBatch {
        &self.tasks
    }

    /// Starts `episode`; its placement, channels and tasks depend only on
    /// the seed and the episode index.
    pub fn reset(&mut self, episode: u64) -> StateTensors {
        self.episode = episode;
        self.t = 0;
        self.positions = episode_positions(&self.cfg, episode);
        self.cs = slot_channels(&self.cfg, &self.positions, episode, 0);
        self.tasks = slot_tasks(&self.cfg, episode, 0);
        self.state()
    }

    pub fn state(&self) -> StateTensors {
        build_state(&self.cs, &self.scale)
    }

    pub fn decode(&self, raw: &[f64], order_index: usize) -> Result<SlotDecision, EnvError> {
        let order = DecodingOrder::from_index(self.cfg.users, order_index)?;
        decode_action(raw, &self.layout, self.cfg.p_max, order)
    }

    /// Evaluates the current slot without advancing.
    pub fn evaluate(&self, d: &SlotDecision) -> Result<SlotOutcome, EnvError> {
        evaluate_slot(&self.cfg, &self.cs, &self.tasks, d, self.settings)
    }

    /// Evaluates the current slot and moves to the next one. The slot after
    /// the last is still sampled so the transition has a next state.
    pub fn step(&mut self, d: &SlotDecision) -> Result<StepResult, EnvError> {
        let outcome = self.evaluate(d)?;
        self.t += 1;
        self.cs = slot_channels(&self.cfg, &self.positions, self.episode, self.t);
        self.tasks = slot_tasks(&self.cfg, self.episode, self.t);
        Ok(StepResult { outcome, next_state: self.state(), done: self.t >= self.cfg.slots })
    }
}

/// One CSV row of an episode trace: episode, slot, per-user delays, reward,
/// violation count and order index.
pub fn trace_record(episode: u64, t: usize, outcome: &SlotOutcome, order_index: usize) -> Vec<String> {
    let mut row = vec![episode.to_string(), t.to_string()];
    row.extend(outcome.report.t_total.iter().map(|v| format!("{v:e}")));
    row.push(format!("{:e}", outcome.reward));
    row.push(outcome.report.deadline_violations.to_string());
    row.push(order_index.to_string());
    row
}

pub fn trace_header(users: usize) -> Vec<String> {
    let mut h = vec!["episode".to_string(), "t".to_string()];
    h.extend((1..=users).map(|n| format!("delay_{n}")));
    h.extend(["reward", "violations", "order_index"].map(String::from));
    h
}

/// Rough per-path SNRs (dB, per receive antenna, at `p_max`) for a user at
/// the ring centre: direct path, and reflected path with coherent phases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub direct_snr_db: f64,
    pub reflected_snr_db: f64,
    /// Local delay of a mid-range task.
    pub local_delay: f64,
}

pub fn link_budget(cfg: &SystemConfig) -> Result<LinkBudget, ChannelError> {
    use crate::channel::path_loss_db;
    let u = cfg.gu_ring_center;
    let p_dbm = 10.0 * (cfg.p_max * 1e3).log10();
    let n_dbm = 10.0 * (cfg.noise_power * 1e3).log10();
    let dir = path_loss_db(u.distance(&cfg.bs_pos), cfg.carrier_freq, cfg.loss_nlos_db)?;
    let refl = path_loss_db(u.distance(&cfg.irs_pos), cfg.carrier_freq, cfg.loss_los_db)?
        + path_loss_db(cfg.irs_pos.distance(&cfg.bs_pos), cfg.carrier_freq, cfg.loss_los_db)?
        - 20.0 * (cfg.irs_elements as f64).log10();
    let bits = 0.5 * (cfg.task_bits.0 + cfg.task_bits.1);
    Ok(LinkBudget {
        direct_snr_db: p_dbm - dir - n_dbm,
        reflected_snr_db: p_dbm - refl - n_dbm,
        local_delay: bits * cfg.c_gu / cfg.f_gu,
    })
}
