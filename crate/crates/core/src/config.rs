//! Run configuration and its flat `key = value` text form.
//!
//! A config file is a sequence of lines, each either blank, a `#` comment or
//! a single `key = value` assignment. Every key has a default, so an empty
//! file is a valid config. Pairs and points are written as `a, b`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Largest user count for which the `N!` decoding-order head is built.
pub const MAX_ENUMERATED_USERS: usize = 7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read config {path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// How the edge server's CPU is split between users.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoPolicy {
    /// Share proportional to each user's offloaded bits.
    Proportional,
    /// `1/N` for everyone.
    Equal,
    /// Extra `N` continuous action outputs, normalised to sum to one.
    Action,
}

/// Where the receive combiner comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combiner {
    /// `2MN` continuous action outputs, column-normalised.
    Learned,
    /// Column-normalised composite channel, recomputed every slot.
    Matched,
}

/// Physical, computing and reward parameters of the simulated system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// BS antennas (M).
    pub antennas: usize,
    /// Ground users (N).
    pub users: usize,
    /// IRS reflecting elements (K).
    pub irs_elements: usize,
    /// Slots per episode (T).
    pub slots: usize,
    /// Slot length in seconds; also the per-slot deadline.
    pub slot_duration: f64,
    pub bandwidth: f64,
    /// Noise power per receive antenna, watts.
    pub noise_power: f64,
    /// Per-user power budget, watts.
    pub p_max: f64,
    pub carrier_freq: f64,
    /// Rician factor, linear.
    pub rician_k: f64,
    pub loss_los_db: f64,
    pub loss_nlos_db: f64,
    /// Element spacing of both arrays, metres.
    pub antenna_spacing: f64,
    pub bs_pos: Point,
    pub irs_pos: Point,
    pub gu_ring_center: Point,
    pub gu_ring_radii: (f64, f64),
    /// Task size range, bits.
    pub task_bits: (f64, f64),
    /// Local CPU speed, cycles/s.
    pub f_gu: f64,
    /// Edge CPU speed, cycles/s.
    pub f_mec: f64,
    /// Local cycles per bit.
    pub c_gu: f64,
    /// Edge cycles per bit.
    pub c_mec: f64,
    /// Reward penalty per violating user fraction.
    pub penalty: f64,
    pub rho_policy: RhoPolicy,
    pub combiner: Combiner,
    /// Adds `p_n / p_max` to the continuous action.
    pub power_action: bool,
    /// Builds the `N!` decoding-order head; requires `users <= 7`.
    pub enumerate_orders: bool,
    /// Channel draws used to calibrate state standardisation.
    pub state_scale_draws: usize,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        let carrier_freq = 2.4e9;
        Self {
            antennas: 20,
            users: 5,
            irs_elements: 50,
            slots: 10,
            slot_duration: 0.1,
            bandwidth: 400e3,
            noise_power: dbm_to_watts(-70.0),
            p_max: 5.0,
            carrier_freq,
            rician_k: 10.0,
            loss_los_db: 0.0,
            loss_nlos_db: 20.0,
            antenna_spacing: SPEED_OF_LIGHT / carrier_freq / 2.0,
            bs_pos: Point::new(0.0, 0.0),
            irs_pos: Point::new(100.0, 0.0),
            gu_ring_center: Point::new(150.0, 0.0),
            gu_ring_radii: (2.0, 10.0),
            task_bits: (400.0, 1600.0),
            f_gu: 1e8,
            f_mec: 5e9,
            c_gu: 1000.0,
            c_mec: 1000.0,
            penalty: 1.0,
            rho_policy: RhoPolicy::Proportional,
            combiner: Combiner::Learned,
            power_action: false,
            enumerate_orders: true,
            state_scale_draws: 1000,
            seed: 0,
        }
    }
}

impl SystemConfig {
    /// Small system that trains in minutes on one core.
    pub fn desk() -> Self {
        Self {
            antennas: 4,
            users: 3,
            irs_elements: 8,
            loss_nlos_db: DESK_NLOS_LOSS_DB,
            noise_power: dbm_to_watts(DESK_NOISE_DBM),
            combiner: Combiner::Matched,
            ..Self::default()
        }
    }

    /// Penalty delay used when a positive volume meets a zero rate or share.
    pub fn delay_cap(&self) -> f64 {
        10.0 * self.slot_duration
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.antennas == 0 || self.users == 0 || self.irs_elements == 0 || self.slots == 0 {
            return bad("antennas, users, irs_elements and slots must all be >= 1");
        }
        let positive = [
            ("slot_duration", self.slot_duration),
            ("bandwidth", self.bandwidth),
            ("noise_power", self.noise_power),
            ("p_max", self.p_max),
            ("carrier_freq", self.carrier_freq),
            ("antenna_spacing", self.antenna_spacing),
            ("f_gu", self.f_gu),
            ("f_mec", self.f_mec),
            ("c_gu", self.c_gu),
            ("c_mec", self.c_mec),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::Invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if !(self.rician_k >= 0.0) || !(self.penalty >= 0.0) {
            return bad("rician_k and penalty must be >= 0");
        }
        let (r0, r1) = self.gu_ring_radii;
        if !(r0 >= 0.0 && r0 <= r1) {
            return bad("gu_ring_radii must satisfy 0 <= r_min <= r_max");
        }
        let (b0, b1) = self.task_bits;
        if !(b0 >= 0.0 && b0 <= b1) {
            return bad("task_bits must satisfy 0 <= min <= max");
        }
        if self.enumerate_orders && self.users > MAX_ENUMERATED_USERS {
            return Err(ConfigError::Invalid(format!(
                "users = {} exceeds {MAX_ENUMERATED_USERS}, the largest N with an N! order head",
                self.users
            )));
        }
        if self.state_scale_draws == 0 {
            return bad("state_scale_draws must be >= 1");
        }
        Ok(())
    }
}

/// Direct-link excess loss used by the desk preset. Puts the direct path
/// below the 4-element reflected path.
pub const DESK_NLOS_LOSS_DB: f64 = 60.0;

/// Receiver noise of the desk preset; keeps the reflected path above the
/// noise floor at the desk array sizes.
pub const DESK_NOISE_DBM: f64 = -100.0;

/// Actor pre-activation penalty of the desk preset. Without it the actor
/// drifts into saturated outputs that starve one RSMA stream.
pub const DESK_ACTOR_REG: f64 = 0.01;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Learner hyperparameters and network widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub episodes: usize,
    pub buffer_capacity: usize,
    pub batch: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_q: f64,
    pub gamma_disc: f64,
    pub tau_soft: f64,
    pub policy_delay: usize,
    pub sigma_explore_start: f64,
    pub sigma_explore_end: f64,
    pub sigma_target: f64,
    pub noise_clip: f64,
    /// Weight of the squared actor pre-activations added to the actor loss;
    /// keeps the output squashing away from saturation.
    pub actor_reg: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of all training steps over which epsilon decays.
    pub eps_decay_fraction: f64,
    /// Pooled feature length per CSI branch (D).
    pub pooled_len: usize,
    /// Dense-block layer width (H1).
    pub dense_width: usize,
    /// Head hidden width (H2).
    pub head_width: usize,
    pub bn_momentum: f64,
    /// Episodes between periodic checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    /// Grid levels per non-phase coordinate of the discretised baseline.
    pub dqn_scalar_levels: usize,
    /// Grid levels per IRS phase of the discretised baseline.
    pub dqn_phase_levels: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            episodes: 2000,
            buffer_capacity: 100_000,
            batch: 64,
            lr_actor: 3e-4,
            lr_critic: 3e-4,
            lr_q: 3e-4,
            gamma_disc: 0.99,
            tau_soft: 0.005,
            policy_delay: 2,
            sigma_explore_start: 0.1,
            sigma_explore_end: 0.02,
            sigma_target: 0.2,
            noise_clip: 0.5,
            actor_reg: 0.0,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_fraction: 0.3,
            pooled_len: 64,
            dense_width: 128,
            head_width: 128,
            bn_momentum: 0.1,
            checkpoint_every: 0,
            dqn_scalar_levels: 4,
            dqn_phase_levels: 8,
        }
    }
}

impl AgentConfig {
    /// Narrower networks for single-core desk runs, with the actor kept off
    /// the saturated corners of the action box.
    pub fn desk() -> Self {
        Self { pooled_len: 32, dense_width: 64, head_width: 64, actor_reg: DESK_ACTOR_REG, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.batch == 0 || self.buffer_capacity < self.batch {
            return bad("batch must be >= 1 and buffer_capacity >= batch");
        }
        if self.policy_delay == 0 {
            return bad("policy_delay must be >= 1");
        }
        if self.pooled_len == 0 || self.dense_width == 0 || self.head_width == 0 {
            return bad("network widths must be >= 1");
        }
        if self.dqn_scalar_levels < 2 || self.dqn_phase_levels == 0 {
            return bad("dqn_scalar_levels must be >= 2 and dqn_phase_levels >= 1");
        }
        for (name, v) in [
            ("gamma_disc", self.gamma_disc),
            ("tau_soft", self.tau_soft),
            ("eps_start", self.eps_start),
            ("eps_end", self.eps_end),
            ("eps_decay_fraction", self.eps_decay_fraction),
            ("bn_momentum", self.bn_momentum),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError::Invalid(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        for (name, v) in [
            ("lr_actor", self.lr_actor),
            ("lr_critic", self.lr_critic),
            ("lr_q", self.lr_q),
            ("sigma_explore_start", self.sigma_explore_start),
            ("sigma_explore_end", self.sigma_explore_end),
            ("sigma_target", self.sigma_target),
            ("noise_clip", self.noise_clip),
            ("actor_reg", self.actor_reg),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::Invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Everything a run needs, as loaded from one config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub agent: AgentConfig,
}

impl ExperimentConfig {
    pub fn desk() -> Self {
        Self { system: SystemConfig::desk(), agent: AgentConfig::desk() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.system.validate()?;
        self.agent.validate()
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Parses the flat text form on top of the desk defaults unless the file
    /// sets `preset = full`.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((k, v)) = content.split_once('=') else {
                return Err(ConfigError::Line { line, msg: format!("expected `key = value`, got `{content}`") });
            };
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError::Line { line, msg: "empty key".into() });
            }
            if let Some((prev, _)) = entries.get(&key) {
                return Err(ConfigError::Line { line, msg: format!("duplicate key `{key}` (first set on line {prev})") });
            }
            entries.insert(key, (line, v.trim().to_string()));
        }

        let mut cfg = match entries.remove("preset") {
            None => Self::desk(),
            Some((line, v)) => match v.as_str() {
                "desk" => Self::desk(),
                "full" => Self::default(),
                other => return Err(ConfigError::Line { line, msg: format!("unknown preset `{other}` (desk|full)") }),
            },
        };
        // Derived default follows the carrier unless set explicitly.
        let spacing_set = entries.contains_key("antenna_spacing");
        for (key, (line, value)) in &entries {
            cfg.assign(key, value).map_err(|msg| ConfigError::Line { line: *line, msg })?;
        }
        if !spacing_set {
            cfg.system.antenna_spacing = cfg.system.wavelength() / 2.0;
        }
        cfg.validate().map_err(|e| match e {
            ConfigError::Invalid(msg) => match blame_line(&msg, &entries) {
                Some(line) => ConfigError::Line { line, msg },
                None => ConfigError::Invalid(msg),
            },
            other => other,
        })?;
        Ok(cfg)
    }

    fn assign(&mut self, key: &str, v: &str) -> Result<(), String> {
        let s = &mut self.system;
        let a = &mut self.agent;
        match key {
            "antennas" | "M" => s.antennas = parse_num(v)?,
            "users" | "N" => s.users = parse_num(v)?,
            "irs_elements" | "K" => s.irs_elements = parse_num(v)?,
            "slots" | "T" => s.slots = parse_num(v)?,
            "slot_duration" => s.slot_duration = parse_num(v)?,
            "bandwidth" => s.bandwidth = parse_num(v)?,
            "noise_power" => s.noise_power = parse_num(v)?,
            "noise_power_dbm" => s.noise_power = dbm_to_watts(parse_num(v)?),
            "p_max" => s.p_max = parse_num(v)?,
            "carrier_freq" => s.carrier_freq = parse_num(v)?,
            "rician_k" => s.rician_k = parse_num(v)?,
            "loss_los_db" => s.loss_los_db = parse_num(v)?,
            "loss_nlos_db" => s.loss_nlos_db = parse_num(v)?,
            "antenna_spacing" => s.antenna_spacing = parse_num(v)?,
            "bs_pos" => s.bs_pos = parse_point(v)?,
            "irs_pos" => s.irs_pos = parse_point(v)?,
            "gu_ring_center" => s.gu_ring_center = parse_point(v)?,
            "gu_ring_radii" => s.gu_ring_radii = parse_pair(v)?,
            "task_bits" => s.task_bits = parse_pair(v)?,
            "f_gu" => s.f_gu = parse_num(v)?,
            "f_mec" => s.f_mec = parse_num(v)?,
            "c_gu" => s.c_gu = parse_num(v)?,
            "c_mec" => s.c_mec = parse_num(v)?,
            "penalty" => s.penalty = parse_num(v)?,
            "rho_policy" => {
                s.rho_policy = match v {
                    "proportional" => RhoPolicy::Proportional,
                    "equal" => RhoPolicy::Equal,
                    "action" => RhoPolicy::Action,
                    _ => return Err(format!("unknown rho_policy `{v}` (proportional|equal|action)")),
                }
            }
            "combiner" => {
                s.combiner = match v {
                    "learned" => Combiner::Learned,
                    "matched" => Combiner::Matched,
                    _ => return Err(format!("unknown combiner `{v}` (learned|matched)")),
                }
            }
            "power_action" => s.power_action = parse_bool(v)?,
            "enumerate_orders" => s.enumerate_orders = parse_bool(v)?,
            "state_scale_draws" => s.state_scale_draws = parse_num(v)?,
            "seed" => s.seed = parse_num(v)?,
            "episodes" => a.episodes = parse_num(v)?,
            "buffer_capacity" => a.buffer_capacity = parse_num(v)?,
            "batch" => a.batch = parse_num(v)?,
            "lr" => {
                let lr = parse_num(v)?;
                a.lr_actor = lr;
                a.lr_critic = lr;
                a.lr_q = lr;
            }
            "lr_actor" => a.lr_actor = parse_num(v)?,
            "lr_critic" => a.lr_critic = parse_num(v)?,
            "lr_q" => a.lr_q = parse_num(v)?,
            "gamma_disc" => a.gamma_disc = parse_num(v)?,
            "tau_soft" => a.tau_soft = parse_num(v)?,
            "policy_delay" => a.policy_delay = parse_num(v)?,
            "sigma_explore_start" => a.sigma_explore_start = parse_num(v)?,
            "sigma_explore_end" => a.sigma_explore_end = parse_num(v)?,
            "sigma_target" => a.sigma_target = parse_num(v)?,
            "noise_clip" => a.noise_clip = parse_num(v)?,
            "actor_reg" => a.actor_reg = parse_num(v)?,
            "eps_start" => a.eps_start = parse_num(v)?,
            "eps_end" => a.eps_end = parse_num(v)?,
            "eps_decay_fraction" => a.eps_decay_fraction = parse_num(v)?,
            "pooled_len" => a.pooled_len = parse_num(v)?,
            "dense_width" => a.dense_width = parse_num(v)?,
            "head_width" => a.head_width = parse_num(v)?,
            "bn_momentum" => a.bn_momentum = parse_num(v)?,
            "checkpoint_every" => a.checkpoint_every = parse_num(v)?,
            "dqn_scalar_levels" => a.dqn_scalar_levels = parse_num(v)?,
            "dqn_phase_levels" => a.dqn_phase_levels = parse_num(v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields an identical config.
    pub fn to_text(&self) -> String {
        let s = &self.system;
        let a = &self.agent;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("preset", "desk".into());
        put("antennas", s.antennas.to_string());
        put("users", s.users.to_string());
        put("irs_elements", s.irs_elements.to_string());
        put("slots", s.slots.to_string());
        put("slot_duration", fmt_f(s.slot_duration));
        put("bandwidth", fmt_f(s.bandwidth));
        put("noise_power", fmt_f(s.noise_power));
        put("p_max", fmt_f(s.p_max));
        put("carrier_freq", fmt_f(s.carrier_freq));
        put("rician_k", fmt_f(s.rician_k));
        put("loss_los_db", fmt_f(s.loss_los_db));
        put("loss_nlos_db", fmt_f(s.loss_nlos_db));
        put("antenna_spacing", fmt_f(s.antenna_spacing));
        put("bs_pos", format!("{}, {}", fmt_f(s.bs_pos.x), fmt_f(s.bs_pos.y)));
        put("irs_pos", format!("{}, {}", fmt_f(s.irs_pos.x), fmt_f(s.irs_pos.y)));
        put("gu_ring_center", format!("{}, {}", fmt_f(s.gu_ring_center.x), fmt_f(s.gu_ring_center.y)));
        put("gu_ring_radii", format!("{}, {}", fmt_f(s.gu_ring_radii.0), fmt_f(s.gu_ring_radii.1)));
        put("task_bits", format!("{}, {}", fmt_f(s.task_bits.0), fmt_f(s.task_bits.1)));
        put("f_gu", fmt_f(s.f_gu));
        put("f_mec", fmt_f(s.f_mec));
        put("c_gu", fmt_f(s.c_gu));
        put("c_mec", fmt_f(s.c_mec));
        put("penalty", fmt_f(s.penalty));
        put(
            "rho_policy",
            match s.rho_policy {
                RhoPolicy::Proportional => "proportional",
                RhoPolicy::Equal => "equal",
                RhoPolicy::Action => "action",
            }
            .into(),
        );
        put(
            "combiner",
            match s.combiner {
                Combiner::Learned => "learned",
                Combiner::Matched => "matched",
            }
            .into(),
        );
        put("power_action", s.power_action.to_string());
        put("enumerate_orders", s.enumerate_orders.to_string());
        put("state_scale_draws", s.state_scale_draws.to_string());
        put("seed", s.seed.to_string());
        put("episodes", a.episodes.to_string());
        put("buffer_capacity", a.buffer_capacity.to_string());
        put("batch", a.batch.to_string());
        put("lr_actor", fmt_f(a.lr_actor));
        put("lr_critic", fmt_f(a.lr_critic));
        put("lr_q", fmt_f(a.lr_q));
        put("gamma_disc", fmt_f(a.gamma_disc));
        put("tau_soft", fmt_f(a.tau_soft));
        put("policy_delay", a.policy_delay.to_string());
        put("sigma_explore_start", fmt_f(a.sigma_explore_start));
        put("sigma_explore_end", fmt_f(a.sigma_explore_end));
        put("sigma_target", fmt_f(a.sigma_target));
        put("noise_clip", fmt_f(a.noise_clip));
        put("actor_reg", fmt_f(a.actor_reg));
        put("eps_start", fmt_f(a.eps_start));
        put("eps_end", fmt_f(a.eps_end));
        put("eps_decay_fraction", fmt_f(a.eps_decay_fraction));
        put("pooled_len", a.pooled_len.to_string());
        put("dense_width", a.dense_width.to_string());
        put("head_width", a.head_width.to_string());
        put("bn_momentum", fmt_f(a.bn_momentum));
        put("checkpoint_every", a.checkpoint_every.to_string());
        put("dqn_scalar_levels", a.dqn_scalar_levels.to_string());
        put("dqn_phase_levels", a.dqn_phase_levels.to_string());
        out
    }

    /// First 16 hex digits of the SHA-256 of [`Self::to_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().take(8).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Shortest round-trip representation of an f64.
fn fmt_f(v: f64) -> String {
    format!("{v:?}")
}

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.trim().parse::<T>().map_err(|e| format!("bad value `{v}`: {e}"))
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("bad boolean `{v}`")),
    }
}

fn parse_pair(v: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = v.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected `a, b`, got `{v}`"));
    }
    Ok((parse_num(parts[0])?, parse_num(parts[1])?))
}

fn parse_point(v: &str) -> Result<Point, String> {
    parse_pair(v).map(|(x, y)| Point::new(x, y))
}

/// Finds the line of the first key named in a validation message.
fn blame_line(msg: &str, entries: &BTreeMap<String, (usize, String)>) -> Option<usize> {
    entries
        .iter()
        .filter(|(k, _)| msg.contains(k.as_str()))
        .map(|(_, (line, _))| *line)
        .min()
}
