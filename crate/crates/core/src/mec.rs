//! Task generation and the local / transmission / edge delay model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::RhoPolicy;
use crate::rsma::RatePair;

/// Task sizes `B_n` (bits) for one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskBatch {
    pub bits: Vec<f64>,
}

impl TaskBatch {
    pub fn new(bits: Vec<f64>) -> Self {
        Self { bits }
    }

    /// Uniform task sizes in `[lo, hi]`.
    pub fn sample<R: Rng + ?Sized>(users: usize, range: (f64, f64), rng: &mut R) -> Self {
        let (lo, hi) = range;
        let bits = (0..users).map(|_| if hi > lo { rng.random_range(lo..=hi) } else { lo }).collect();
        Self { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffloadDecision {
    pub beta: Vec<f64>,
    pub eta: Vec<f64>,
    pub rho_mec: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayReport {
    pub t_local: Vec<f64>,
    pub t_trans: Vec<f64>,
    pub t_mec: Vec<f64>,
    pub t_total: Vec<f64>,
    pub avg: f64,
    pub deadline_violations: usize,
}

/// Compute constants of the GUs and the edge server.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComputeParams {
    pub f_gu: f64,
    pub c_gu: f64,
    pub f_mec: f64,
    pub c_mec: f64,
    /// Returned in place of an infinite delay.
    pub delay_cap: f64,
}

pub fn local_delay(bits: &[f64], beta: &[f64], f_gu: f64, c_gu: f64) -> Vec<f64> {
    bits.iter().zip(beta).map(|(&b, &be)| (1.0 - be) * b * c_gu / f_gu).collect()
}

/// `(public bits, private bits)` per user.
pub fn offload_volumes(bits: &[f64], beta: &[f64], eta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut pub_bits = Vec::with_capacity(bits.len());
    let mut pri_bits = Vec::with_capacity(bits.len());
    for ((&b, &be), &e) in bits.iter().zip(beta).zip(eta) {
        let off = be * b;
        let p = off * e;
        pub_bits.push(p);
        pri_bits.push(off - p);
    }
    (pub_bits, pri_bits)
}

fn send_time(volume: f64, rate: f64, cap: f64) -> f64 {
    if volume <= 0.0 {
        0.0
    } else if rate > 0.0 {
        volume / rate
    } else {
        cap
    }
}

pub fn trans_delay(pub_bits: &[f64], pri_bits: &[f64], rates: &RatePair, delay_cap: f64) -> Vec<f64> {
    (0..pub_bits.len())
        .map(|n| {
            let t = send_time(pub_bits[n], rates.r_pub[n], delay_cap) + send_time(pri_bits[n], rates.r_pri[n], delay_cap);
            t.min(delay_cap)
        })
        .collect()
}

pub fn mec_delay(bits: &[f64], beta: &[f64], rho: &[f64], f_mec: f64, c_mec: f64, delay_cap: f64) -> Vec<f64> {
    (0..bits.len())
        .map(|n| {
            let work = beta[n] * bits[n] * c_mec;
            if work <= 0.0 {
                0.0
            } else if rho[n] > 0.0 {
                (work / (rho[n] * f_mec)).min(delay_cap)
            } else {
                delay_cap
            }
        })
        .collect()
}

pub fn total_delay(t_local: &[f64], t_trans: &[f64], t_mec: &[f64], tau: f64) -> DelayReport {
    let t_total: Vec<f64> = (0..t_local.len()).map(|n| t_local[n].max(t_trans[n] + t_mec[n])).collect();
    let avg = if t_total.is_empty() { 0.0 } else { t_total.iter().sum::<f64>() / t_total.len() as f64 };
    let deadline_violations = t_total.iter().filter(|&&t| t > tau).count();
    DelayReport {
        t_local: t_local.to_vec(),
        t_trans: t_trans.to_vec(),
        t_mec: t_mec.to_vec(),
        t_total,
        avg,
        deadline_violations,
    }
}

/// Edge compute shares for the fixed policies. `Action` shares come from the
/// agent; see [`normalize_shares`].
pub fn assign_rho(policy: RhoPolicy, bits: &[f64], beta: &[f64]) -> Vec<f64> {
    let n = bits.len();
    let uniform = vec![1.0 / n as f64; n];
    match policy {
        RhoPolicy::Equal | RhoPolicy::Action => uniform,
        RhoPolicy::Proportional => {
            let work: Vec<f64> = bits.iter().zip(beta).map(|(&b, &be)| be * b).collect();
            let total: f64 = work.iter().sum();
            if total > 0.0 {
                work.iter().map(|w| w / total).collect()
            } else {
                uniform
            }
        }
    }
}

/// Scales non-negative raw shares down so they sum to at most one.
pub fn normalize_shares(raw: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = raw.iter().map(|r| r.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total > 1.0 {
        clipped.iter().map(|r| r / total).collect()
    } else {
        clipped
    }
}

/// Full delay evaluation for one slot.
pub fn evaluate(tasks: &TaskBatch, d: &OffloadDecision, rates: &RatePair, c: &ComputeParams, tau: f64) -> DelayReport {
    let t_local = local_delay(&tasks.bits, &d.beta, c.f_gu, c.c_gu);
    let (pub_bits, pri_bits) = offload_volumes(&tasks.bits, &d.beta, &d.eta);
    let t_trans = trans_delay(&pub_bits, &pri_bits, rates, c.delay_cap);
    let t_mec = mec_delay(&tasks.bits, &d.beta, &d.rho_mec, c.f_mec, c.c_mec, c.delay_cap);
    total_delay(&t_local, &t_trans, &t_mec, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn pair(r_pub: Vec<f64>, r_pri: Vec<f64>) -> RatePair {
        RatePair { sinr_pub: vec![0.0; r_pub.len()], sinr_pri: vec![0.0; r_pri.len()], r_pub, r_pri }
    }

    #[test]
    fn local_delay_values() {
        assert_relative_eq!(local_delay(&[1000.0], &[0.0], 1e8, 1000.0)[0], 0.01, epsilon = 1e-15);
        assert_eq!(local_delay(&[1000.0], &[1.0], 1e8, 1000.0)[0], 0.0);
        let a = local_delay(&[1234.0], &[0.3], 1e8, 1000.0)[0];
        let b = local_delay(&[1234.0], &[0.3], 2e8, 1000.0)[0];
        assert_relative_eq!(a, 2.0 * b, max_relative = 1e-15);
    }

    #[test]
    fn volumes() {
        assert_eq!(offload_volumes(&[1000.0], &[1.0], &[0.5]), (vec![500.0], vec![500.0]));
        assert_eq!(offload_volumes(&[1000.0], &[0.7], &[1.0]).1, vec![0.0]);
        assert_eq!(offload_volumes(&[1000.0], &[0.0], &[0.3]), (vec![0.0], vec![0.0]));
    }

    #[test]
    fn trans_delay_conventions() {
        let cap = 1.0;
        assert_relative_eq!(trans_delay(&[400e3], &[0.0], &pair(vec![400e3], vec![0.0]), 10.0)[0], 1.0);
        assert_eq!(trans_delay(&[0.0], &[0.0], &pair(vec![0.0], vec![0.0]), cap)[0], 0.0);
        assert_eq!(trans_delay(&[1.0], &[0.0], &pair(vec![0.0], vec![5.0]), cap)[0], cap);
        assert_eq!(trans_delay(&[0.0], &[1.0], &pair(vec![5.0], vec![0.0]), cap)[0], cap);
    }

    #[test]
    fn mec_delay_values() {
        let t = mec_delay(&[1000.0], &[1.0], &[0.2], 5e9, 1000.0, 1.0)[0];
        assert_relative_eq!(t, 1e6 / 1e9, epsilon = 1e-15);
        assert_relative_eq!(mec_delay(&[1000.0], &[1.0], &[0.1], 5e9, 1000.0, 1.0)[0], 2.0 * t, max_relative = 1e-15);
        assert_eq!(mec_delay(&[1000.0], &[0.0], &[0.2], 5e9, 1000.0, 1.0)[0], 0.0);
        assert_eq!(mec_delay(&[1000.0], &[0.5], &[0.0], 5e9, 1000.0, 1.0)[0], 1.0);
        assert_eq!(mec_delay(&[1000.0], &[0.0], &[0.0], 5e9, 1000.0, 1.0)[0], 0.0);
    }

    #[test]
    fn total_delay_max() {
        let r = total_delay(&[2.0], &[0.6], &[0.4], 0.1);
        assert_eq!(r.t_total, vec![2.0]);
        assert_eq!(r.deadline_violations, 1);
        let r = total_delay(&[0.01, 0.05], &[0.0, 0.2], &[0.0, 0.0], 0.1);
        assert_eq!(r.t_total, vec![0.01, 0.2]);
        assert_relative_eq!(r.avg, 0.105);
        assert_eq!(r.deadline_violations, 1);
    }

    #[test]
    fn evaluate_extremes() {
        let c = ComputeParams { f_gu: 1e8, c_gu: 1000.0, f_mec: 5e9, c_mec: 1000.0, delay_cap: 1.0 };
        let tasks = TaskBatch::new(vec![1000.0, 1500.0]);
        let rates = pair(vec![1e5, 2e5], vec![3e5, 1e5]);
        let local = OffloadDecision { beta: vec![0.0; 2], eta: vec![0.4; 2], rho_mec: vec![0.5; 2] };
        let r = evaluate(&tasks, &local, &rates, &c, 0.1);
        assert_eq!(r.t_total, r.t_local);
        let full = OffloadDecision { beta: vec![1.0; 2], eta: vec![0.4; 2], rho_mec: vec![0.5; 2] };
        let r = evaluate(&tasks, &full, &rates, &c, 0.1);
        for n in 0..2 {
            assert_eq!(r.t_total[n], r.t_trans[n] + r.t_mec[n]);
        }
    }

    #[test]
    fn rho_policies() {
        let bits = [1000.0, 3000.0, 500.0];
        let rho = assign_rho(RhoPolicy::Proportional, &bits, &[1.0, 0.5, 0.0]);
        assert_relative_eq!(rho[0], 0.4);
        assert_relative_eq!(rho[1], 0.6);
        assert_eq!(rho[2], 0.0);
        assert_eq!(assign_rho(RhoPolicy::Proportional, &bits, &[0.0; 3]), vec![1.0 / 3.0; 3]);
        assert_eq!(assign_rho(RhoPolicy::Equal, &bits, &[1.0; 3]), vec![1.0 / 3.0; 3]);
        assert_eq!(normalize_shares(&[0.2, 0.3]), vec![0.2, 0.3]);
        let s = normalize_shares(&[1.0, 3.0, -1.0]);
        assert_eq!(s, vec![0.25, 0.75, 0.0]);
    }

    #[test]
    fn task_sampling_in_range() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let t = TaskBatch::sample(1000, (400.0, 1600.0), &mut rng);
        assert!(t.bits.iter().all(|&b| (400.0..=1600.0).contains(&b)));
        assert_eq!(TaskBatch::sample(2, (5.0, 5.0), &mut rng).bits, vec![5.0, 5.0]);
    }

    proptest! {
        #[test]
        fn max_dominance(b in 1.0..1e4f64, beta in 0.0..=1.0f64, eta in 0.0..=1.0f64, rp in 0.0..1e6f64, rq in 0.0..1e6f64, rho in 0.0..=1.0f64) {
            let c = ComputeParams { f_gu: 1e8, c_gu: 1000.0, f_mec: 5e9, c_mec: 1000.0, delay_cap: 1.0 };
            let d = OffloadDecision { beta: vec![beta], eta: vec![eta], rho_mec: vec![rho] };
            let r = evaluate(&TaskBatch::new(vec![b]), &d, &pair(vec![rp], vec![rq]), &c, 0.1);
            let off = r.t_trans[0] + r.t_mec[0];
            prop_assert!(r.t_total[0] >= r.t_local[0] && r.t_total[0] >= off);
            prop_assert!(r.t_total[0] == r.t_local[0] || r.t_total[0] == off);
        }

        #[test]
        fn volume_conservation(b in 0.0..1e5f64, beta in 0.0..=1.0f64, eta in 0.0..=1.0f64) {
            let (p, q) = offload_volumes(&[b], &[beta], &[eta]);
            prop_assert!((p[0] + q[0] - beta * b).abs() <= 4.0 * f64::EPSILON * beta * b);
        }

        #[test]
        fn mec_homogeneity(b in 1.0..1e4f64, beta in 0.01..=1.0f64, rho in 0.01..=1.0f64, k in 0.1..10.0f64) {
            let a = mec_delay(&[b], &[beta], &[rho], 5e9, 1000.0, f64::INFINITY)[0];
            let s = mec_delay(&[b], &[beta], &[rho], 5e9 * k, 1000.0, f64::INFINITY)[0];
            prop_assert!((s - a / k).abs() <= 1e-12 * a);
        }

        #[test]
        fn delay_monotone_in_rate(b in 1.0..1e4f64, beta in 0.0..=1.0f64, eta in 0.0..=1.0f64, rp in 0.0..1e6f64, rq in 0.0..1e6f64, bump in 0.0..1e5f64) {
            let c = ComputeParams { f_gu: 1e8, c_gu: 1000.0, f_mec: 5e9, c_mec: 1000.0, delay_cap: 1.0 };
            let d = OffloadDecision { beta: vec![beta], eta: vec![eta], rho_mec: vec![0.5] };
            let tasks = TaskBatch::new(vec![b]);
            let base = evaluate(&tasks, &d, &pair(vec![rp], vec![rq]), &c, 0.1).t_total[0];
            let up_pub = evaluate(&tasks, &d, &pair(vec![rp + bump], vec![rq]), &c, 0.1).t_total[0];
            let up_pri = evaluate(&tasks, &d, &pair(vec![rp], vec![rq + bump]), &c, 0.1).t_total[0];
            prop_assert!(up_pub <= base && up_pri <= base);
        }

        #[test]
        fn proportional_shares_sum_to_one(bits in proptest::collection::vec(1.0..1e4f64, 1..8), seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let beta: Vec<f64> = bits.iter().map(|_| rand::Rng::random_range(&mut rng, 0.0..=1.0)).collect();
            let rho = assign_rho(RhoPolicy::Proportional, &bits, &beta);
            prop_assert!((rho.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
