//! SINRs and achievable rates of the uplink access schemes.
//!
//! The proposed scheme SIC-decodes every public sub-message first, in the
//! order given by a [`DecodingOrder`], and then decodes each private
//! sub-message treating the other users' private streams as noise. NOMA
//! (one stream per user, SIC) and conventional SIC-RSMA (SIC over all `2N`
//! sub-messages) are provided as references.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::MAX_ENUMERATED_USERS;

/// SINRs are clamped here so `log2(1 + ρ)` stays finite.
pub const SINR_CAP: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RsmaError {
    #[error("combiner column {0} has zero norm")]
    ZeroCombiner(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("not a permutation: {0}")]
    InvalidOrder(String),
    #[error("order enumeration supports at most {MAX_ENUMERATED_USERS} users, got {0}")]
    TooManyUsers(usize),
}

/// Per-user transmit powers and public/private power split.
#[derive(Debug, Clone, PartialEq)]
pub struct TxAllocation {
    pub p: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl TxAllocation {
    pub fn new(p: Vec<f64>, gamma: Vec<f64>) -> Self {
        Self { p, gamma }
    }

    pub fn users(&self) -> usize {
        self.p.len()
    }

    pub fn public_power(&self, n: usize) -> f64 {
        self.gamma[n] * self.p[n]
    }

    pub fn private_power(&self, n: usize) -> f64 {
        (1.0 - self.gamma[n]) * self.p[n]
    }
}

/// BS receive combiners, one column per user.
#[derive(Debug, Clone, PartialEq)]
pub struct Beamformer {
    pub w: Array2<Complex64>,
}

impl Beamformer {
    pub fn new(w: Array2<Complex64>) -> Self {
        Self { w }
    }

    /// Matched filter: `w_n = H_n / ‖H_n‖`, or the first unit vector when a
    /// column of `H` vanishes.
    pub fn matched(h: &Array2<Complex64>) -> Self {
        let mut w = h.clone();
        for mut col in w.columns_mut() {
            let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm > 0.0 {
                col.mapv_inplace(|z| z / norm);
            } else {
                col.fill(Complex64::new(0.0, 0.0));
                col[0] = Complex64::new(1.0, 0.0);
            }
        }
        Self { w }
    }
}

/// `positions[n]` is the 0-based slot at which user `n`'s public message is decoded.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DecodingOrder {
    positions: Vec<usize>,
}

impl DecodingOrder {
    pub fn from_positions(positions: Vec<usize>) -> Result<Self, RsmaError> {
        let n = positions.len();
        let mut seen = vec![false; n];
        for &p in &positions {
            if p >= n || seen[p] {
                return Err(RsmaError::InvalidOrder(format!("{positions:?}")));
            }
            seen[p] = true;
        }
        Ok(Self { positions })
    }

    /// Builds the order from the users listed in decoding sequence.
    pub fn from_sequence(sequence: &[usize]) -> Result<Self, RsmaError> {
        let n = sequence.len();
        let mut positions = vec![usize::MAX; n];
        for (slot, &u) in sequence.iter().enumerate() {
            if u >= n || positions[u] != usize::MAX {
                return Err(RsmaError::InvalidOrder(format!("{sequence:?}")));
            }
            positions[u] = slot;
        }
        Ok(Self { positions })
    }

    /// User 1 first, then 2, …
    pub fn sequential(n: usize) -> Self {
        Self { positions: (0..n).collect() }
    }

    /// User N first, down to user 1.
    pub fn reverse(n: usize) -> Self {
        Self { positions: (0..n).rev().collect() }
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    /// 1-based positions, as conventionally written.
    pub fn one_based(&self) -> Vec<usize> {
        self.positions.iter().map(|p| p + 1).collect()
    }

    /// Users in the order they are decoded.
    pub fn sequence(&self) -> Vec<usize> {
        let mut seq = vec![0; self.positions.len()];
        for (u, &p) in self.positions.iter().enumerate() {
            seq[p] = u;
        }
        seq
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Lexicographic rank of the position vector among all `N!` permutations.
    pub fn to_index(&self) -> usize {
        let n = self.positions.len();
        let mut index = 0;
        for i in 0..n {
            let smaller = self.positions[i + 1..].iter().filter(|&&p| p < self.positions[i]).count();
            index += smaller * factorial(n - 1 - i);
        }
        index
    }

    pub fn from_index(n: usize, index: usize) -> Result<Self, RsmaError> {
        if n > MAX_ENUMERATED_USERS {
            return Err(RsmaError::TooManyUsers(n));
        }
        if index >= factorial(n) {
            return Err(RsmaError::InvalidOrder(format!("index {index} >= {n}!")));
        }
        let mut pool: Vec<usize> = (0..n).collect();
        let mut rest = index;
        let mut positions = Vec::with_capacity(n);
        for i in 0..n {
            let f = factorial(n - 1 - i);
            positions.push(pool.remove(rest / f));
            rest %= f;
        }
        Ok(Self { positions })
    }
}

pub fn factorial(n: usize) -> usize {
    (1..=n).product()
}

/// All `N!` orders, sorted lexicographically by position vector.
pub fn enumerate_orders(n: usize) -> Result<Vec<DecodingOrder>, RsmaError> {
    if n > MAX_ENUMERATED_USERS {
        return Err(RsmaError::TooManyUsers(n));
    }
    (0..factorial(n)).map(|i| DecodingOrder::from_index(n, i)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatePair {
    pub r_pub: Vec<f64>,
    pub r_pri: Vec<f64>,
    pub sinr_pub: Vec<f64>,
    pub sinr_pri: Vec<f64>,
}

/// Combined-channel powers `gain[n][l] = |w_nᴴ H_l|²` and noise terms `‖w_n‖²σ²`.
#[derive(Debug, Clone)]
pub struct LinkGains {
    pub gain: Array2<f64>,
    pub noise: Vec<f64>,
}

impl LinkGains {
    pub fn new(h: &Array2<Complex64>, w: &Beamformer, noise_power: f64) -> Result<Self, RsmaError> {
        let (m, n) = h.dim();
        if w.w.dim() != (m, n) {
            return Err(RsmaError::Shape(format!("H {:?} vs W {:?}", h.dim(), w.w.dim())));
        }
        let mut noise = Vec::with_capacity(n);
        for (i, col) in w.w.columns().into_iter().enumerate() {
            let norm2: f64 = col.iter().map(|z| z.norm_sqr()).sum();
            if !(norm2 > 0.0) {
                return Err(RsmaError::ZeroCombiner(i));
            }
            noise.push(norm2 * noise_power);
        }
        // (Wᴴ H)[n, l] = w_nᴴ H_l
        let proj = w.w.t().mapv(|z| z.conj()).dot(h);
        Ok(Self { gain: proj.mapv(|z| z.norm_sqr()), noise })
    }

    pub fn users(&self) -> usize {
        self.noise.len()
    }
}

fn check_users(g: &LinkGains, alloc: &TxAllocation) -> Result<(), RsmaError> {
    if alloc.p.len() != g.users() || alloc.gamma.len() != g.users() {
        return Err(RsmaError::Shape(format!(
            "{} users but p has {} and gamma {} entries",
            g.users(),
            alloc.p.len(),
            alloc.gamma.len()
        )));
    }
    Ok(())
}

fn check_order(g: &LinkGains, order: &DecodingOrder) -> Result<(), RsmaError> {
    if order.len() != g.users() {
        return Err(RsmaError::Shape(format!("order of length {} for {} users", order.len(), g.users())));
    }
    Ok(())
}

fn ratio(num: f64, den: f64) -> f64 {
    (num / den).min(SINR_CAP)
}

/// Public-stream SINRs: later-decoded publics and every private stream (the
/// user's own included) interfere.
pub fn sinr_public_from_gains(g: &LinkGains, alloc: &TxAllocation, order: &DecodingOrder) -> Result<Vec<f64>, RsmaError> {
    check_users(g, alloc)?;
    check_order(g, order)?;
    let n = g.users();
    let pos = order.positions();
    Ok((0..n)
        .map(|u| {
            let mut den = g.noise[u];
            for l in 0..n {
                if pos[l] > pos[u] {
                    den += g.gain[[u, l]] * alloc.public_power(l);
                }
                den += g.gain[[u, l]] * alloc.private_power(l);
            }
            ratio(g.gain[[u, u]] * alloc.public_power(u), den)
        })
        .collect())
}

/// Private-stream SINRs after all publics are cancelled; other users'
/// private streams are treated as noise.
pub fn sinr_private_from_gains(g: &LinkGains, alloc: &TxAllocation) -> Result<Vec<f64>, RsmaError> {
    check_users(g, alloc)?;
    let n = g.users();
    Ok((0..n)
        .map(|u| {
            let den = g.noise[u]
                + (0..n).filter(|&l| l != u).map(|l| g.gain[[u, l]] * alloc.private_power(l)).sum::<f64>();
            ratio(g.gain[[u, u]] * alloc.private_power(u), den)
        })
        .collect())
}

pub fn sinr_public(
    h: &Array2<Complex64>,
    w: &Beamformer,
    alloc: &TxAllocation,
    order: &DecodingOrder,
    noise_power: f64,
) -> Result<Vec<f64>, RsmaError> {
    sinr_public_from_gains(&LinkGains::new(h, w, noise_power)?, alloc, order)
}

pub fn sinr_private(
    h: &Array2<Complex64>,
    w: &Beamformer,
    alloc: &TxAllocation,
    noise_power: f64,
) -> Result<Vec<f64>, RsmaError> {
    sinr_private_from_gains(&LinkGains::new(h, w, noise_power)?, alloc)
}

/// Shannon rate `B·log2(1 + ρ)`.
pub fn rate(sinr: f64, bandwidth: f64) -> f64 {
    bandwidth * (1.0 + sinr.max(0.0)).log2()
}

pub fn rates(sinr_pub: &[f64], sinr_pri: &[f64], bandwidth: f64) -> RatePair {
    RatePair {
        r_pub: sinr_pub.iter().map(|&s| rate(s, bandwidth)).collect(),
        r_pri: sinr_pri.iter().map(|&s| rate(s, bandwidth)).collect(),
        sinr_pub: sinr_pub.to_vec(),
        sinr_pri: sinr_pri.to_vec(),
    }
}

/// Single-stream SIC SINRs: only later-decoded users interfere.
pub fn noma_sinr_from_gains(g: &LinkGains, p: &[f64], order: &DecodingOrder) -> Result<Vec<f64>, RsmaError> {
    check_order(g, order)?;
    if p.len() != g.users() {
        return Err(RsmaError::Shape(format!("p has {} entries for {} users", p.len(), g.users())));
    }
    let n = g.users();
    let pos = order.positions();
    Ok((0..n)
        .map(|u| {
            let den = g.noise[u] + (0..n).filter(|&l| pos[l] > pos[u]).map(|l| g.gain[[u, l]] * p[l]).sum::<f64>();
            ratio(g.gain[[u, u]] * p[u], den)
        })
        .collect())
}

pub fn noma_rates(
    h: &Array2<Complex64>,
    w: &Beamformer,
    p: &[f64],
    order: &DecodingOrder,
    noise_power: f64,
    bandwidth: f64,
) -> Result<Vec<f64>, RsmaError> {
    let g = LinkGains::new(h, w, noise_power)?;
    Ok(noma_sinr_from_gains(&g, p, order)?.into_iter().map(|s| rate(s, bandwidth)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stream {
    Public,
    Private,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubMessage {
    pub user: usize,
    pub stream: Stream,
}

impl SubMessage {
    pub fn public(user: usize) -> Self {
        Self { user, stream: Stream::Public }
    }

    pub fn private(user: usize) -> Self {
        Self { user, stream: Stream::Private }
    }
}

/// Publics by descending `|w_nᴴH_n|²` (ties to the lower index), then the
/// privates in the same user order.
pub fn default_sic_order(g: &LinkGains) -> Vec<SubMessage> {
    let n = g.users();
    let mut users: Vec<usize> = (0..n).collect();
    users.sort_by(|&a, &b| g.gain[[b, b]].total_cmp(&g.gain[[a, a]]).then(a.cmp(&b)));
    users.iter().map(|&u| SubMessage::public(u)).chain(users.iter().map(|&u| SubMessage::private(u))).collect()
}

/// Conventional SIC-RSMA: each of the `2N` sub-messages is decoded in turn and
/// only the ones still undecoded interfere.
pub fn sic_rsma_from_gains(
    g: &LinkGains,
    alloc: &TxAllocation,
    full_order: &[SubMessage],
    bandwidth: f64,
) -> Result<RatePair, RsmaError> {
    check_users(g, alloc)?;
    let n = g.users();
    if full_order.len() != 2 * n {
        return Err(RsmaError::InvalidOrder(format!("{} sub-messages for {n} users", full_order.len())));
    }
    let mut seen = vec![[false; 2]; n];
    for m in full_order {
        let k = m.stream as usize;
        if m.user >= n || seen[m.user][k] {
            return Err(RsmaError::InvalidOrder(format!("{full_order:?}")));
        }
        seen[m.user][k] = true;
    }
    let power = |m: &SubMessage| match m.stream {
        Stream::Public => alloc.public_power(m.user),
        Stream::Private => alloc.private_power(m.user),
    };
    let mut sinr_pub = vec![0.0; n];
    let mut sinr_pri = vec![0.0; n];
    for (i, m) in full_order.iter().enumerate() {
        let u = m.user;
        let den = g.noise[u] + full_order[i + 1..].iter().map(|later| g.gain[[u, later.user]] * power(later)).sum::<f64>();
        let s = ratio(g.gain[[u, u]] * power(m), den);
        match m.stream {
            Stream::Public => sinr_pub[u] = s,
            Stream::Private => sinr_pri[u] = s,
        }
    }
    Ok(rates(&sinr_pub, &sinr_pri, bandwidth))
}

pub fn sic_rsma_rates(
    h: &Array2<Complex64>,
    w: &Beamformer,
    alloc: &TxAllocation,
    full_order: &[SubMessage],
    noise_power: f64,
    bandwidth: f64,
) -> Result<RatePair, RsmaError> {
    sic_rsma_from_gains(&LinkGains::new(h, w, noise_power)?, alloc, full_order, bandwidth)
}

/// Uplink access scheme used to turn a slot's decisions into rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessScheme {
    /// Public streams by SIC, private streams treating each other as noise.
    ProposedRsma,
    /// SIC over all `2N` sub-messages in [`default_sic_order`].
    SicRsma,
    /// One stream per user at full power; reported as the public rate.
    Noma,
}

/// Rates for one slot under `scheme`. For NOMA the whole power goes to the
/// single stream, reported in `r_pub`, and `r_pri` is zero.
pub fn scheme_rates(
    scheme: AccessScheme,
    h: &Array2<Complex64>,
    w: &Beamformer,
    alloc: &TxAllocation,
    order: &DecodingOrder,
    noise_power: f64,
    bandwidth: f64,
) -> Result<RatePair, RsmaError> {
    let g = LinkGains::new(h, w, noise_power)?;
    match scheme {
        AccessScheme::ProposedRsma => {
            let sp = sinr_public_from_gains(&g, alloc, order)?;
            let sq = sinr_private_from_gains(&g, alloc)?;
            Ok(rates(&sp, &sq, bandwidth))
        }
        AccessScheme::SicRsma => sic_rsma_from_gains(&g, alloc, &default_sic_order(&g), bandwidth),
        AccessScheme::Noma => {
            let s = noma_sinr_from_gains(&g, &alloc.p, order)?;
            let zeros = vec![0.0; s.len()];
            Ok(rates(&s, &zeros, bandwidth))
        }
    }
}
