//! Stochastic IRS-assisted uplink channel: user placement, free-space path
//! loss, Rayleigh/Rician small-scale fading and the composite channel.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Point, SystemConfig, SPEED_OF_LIGHT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// One slot's CSI: direct GU→BS, GU→IRS and IRS→BS channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    /// M×N.
    pub h_dir: Array2<Complex64>,
    /// K×N.
    pub h_irs: Array2<Complex64>,
    /// M×K.
    pub g: Array2<Complex64>,
    pub positions: Vec<Point>,
}

/// Which propagation paths a baseline keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMask {
    Full,
    /// Drops the direct link.
    OnlyIrs,
    /// Drops the reflected link.
    DirectOnly,
}

impl ChannelState {
    pub fn antennas(&self) -> usize {
        self.h_dir.nrows()
    }

    pub fn users(&self) -> usize {
        self.h_dir.ncols()
    }

    pub fn irs_elements(&self) -> usize {
        self.h_irs.nrows()
    }

    pub fn is_finite(&self) -> bool {
        self.h_dir.iter().chain(&self.h_irs).chain(&self.g).all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn masked(&self, mask: ChannelMask) -> ChannelState {
        let mut out = self.clone();
        match mask {
            ChannelMask::Full => {}
            ChannelMask::OnlyIrs => out.h_dir.fill(Complex64::new(0.0, 0.0)),
            ChannelMask::DirectOnly => out.g.fill(Complex64::new(0.0, 0.0)),
        }
        out
    }
}

/// IRS phase vector; reflection amplitudes are fixed at one.
#[derive(Debug, Clone, PartialEq)]
pub struct IrsPhase {
    theta: Vec<f64>,
}

impl IrsPhase {
    /// Wraps every angle into `[0, 2π)`.
    pub fn new(theta: Vec<f64>) -> Self {
        Self { theta: theta.into_iter().map(wrap_phase).collect() }
    }

    pub fn zeros(k: usize) -> Self {
        Self { theta: vec![0.0; k] }
    }

    pub fn random<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Self {
        Self::new((0..k).map(|_| rng.random::<f64>() * 2.0 * PI).collect())
    }

    pub fn angles(&self) -> &[f64] {
        &self.theta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// `e^{jθ_k}` for every element.
    pub fn coefficients(&self) -> Vec<Complex64> {
        self.theta.iter().map(|&t| Complex64::from_polar(1.0, t)).collect()
    }
}

pub fn wrap_phase(t: f64) -> f64 {
    let w = t.rem_euclid(2.0 * PI);
    // rem_euclid can round up to exactly 2π for tiny negative inputs.
    if w >= 2.0 * PI {
        0.0
    } else {
        w
    }
}

/// Uniform-in-area positions on the configured annulus (radius-CDF sampling).
pub fn place_users<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Vec<Point> {
    let (r_min, r_max) = cfg.gu_ring_radii;
    let c = cfg.gu_ring_center;
    (0..cfg.users)
        .map(|_| {
            let u: f64 = rng.random();
            let r = (r_min * r_min + u * (r_max * r_max - r_min * r_min)).sqrt();
            let phi = rng.random::<f64>() * 2.0 * PI;
            Point::new(c.x + r * phi.cos(), c.y + r * phi.sin())
        })
        .collect()
}

/// Free-space loss in dB plus an excess term.
pub fn path_loss_db(distance: f64, carrier_freq: f64, extra_loss_db: f64) -> Result<f64, ChannelError> {
    if !(distance > 0.0) {
        return Err(ChannelError::NonPositiveDistance(distance));
    }
    Ok(20.0 * distance.log10()
        + 20.0 * carrier_freq.log10()
        + 20.0 * (4.0 * PI / SPEED_OF_LIGHT).log10()
        + extra_loss_db)
}

/// Linear power gain of a loss in dB.
pub fn db_to_gain(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

/// Uniform linear array response `[1, e^{-j2π(d/λ)φ}, …]` for direction cosine `φ`.
pub fn steering(len: usize, cos_angle: f64, spacing_over_wavelength: f64) -> Array1<Complex64> {
    Array1::from_iter(
        (0..len).map(|k| Complex64::from_polar(1.0, -2.0 * PI * spacing_over_wavelength * k as f64 * cos_angle)),
    )
}

fn cn01<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Draws one slot's channels for the given user positions.
///
/// Draw order is fixed (`h_dir`, then `h_irs`, then `g`) so the direct channel
/// of a slot does not depend on the IRS size.
pub fn sample_channels<R: Rng + ?Sized>(cfg: &SystemConfig, positions: &[Point], rng: &mut R) -> ChannelState {
    let m = cfg.antennas;
    let n = positions.len();
    let k = cfg.irs_elements;
    let ratio = cfg.antenna_spacing / cfg.wavelength();
    let kappa = cfg.rician_k;
    let (los_w, nlos_w) = if kappa.is_infinite() {
        (1.0, 0.0)
    } else {
        ((kappa / (1.0 + kappa)).sqrt(), (1.0 / (1.0 + kappa)).sqrt())
    };
    let amp = |d: f64, extra: f64| db_to_gain(path_loss_db(d.max(1e-3), cfg.carrier_freq, extra).unwrap()).sqrt();

    let mut h_dir = Array2::zeros((m, n));
    for (u, p) in positions.iter().enumerate() {
        let a = amp(p.distance(&cfg.bs_pos), cfg.loss_nlos_db);
        for r in 0..m {
            h_dir[[r, u]] = cn01(rng) * a;
        }
    }

    let mut h_irs = Array2::zeros((k, n));
    for (u, p) in positions.iter().enumerate() {
        let d = p.distance(&cfg.irs_pos).max(1e-3);
        let a = amp(d, cfg.loss_los_db);
        let los = steering(k, (cfg.irs_pos.x - p.x) / d, ratio);
        for e in 0..k {
            h_irs[[e, u]] = (los[e] * los_w + cn01(rng) * nlos_w) * a;
        }
    }

    let d_ib = cfg.irs_pos.distance(&cfg.bs_pos).max(1e-3);
    let a = amp(d_ib, cfg.loss_los_db);
    let cos_ib = (cfg.irs_pos.x - cfg.bs_pos.x) / d_ib;
    let rx = steering(m, cos_ib, ratio);
    let tx = steering(k, cos_ib, ratio);
    let mut g = Array2::zeros((m, k));
    for r in 0..m {
        for e in 0..k {
            g[[r, e]] = (rx[r] * tx[e] * los_w + cn01(rng) * nlos_w) * a;
        }
    }

    ChannelState { h_dir, h_irs, g, positions: positions.to_vec() }
}

/// Effective channel `G·diag(e^{jθ})·h_irs + h_dir`, one column per user.
pub fn composite_channel(cs: &ChannelState, phase: &IrsPhase) -> Result<Array2<Complex64>, ChannelError> {
    let (m, n) = cs.h_dir.dim();
    let (k, n2) = cs.h_irs.dim();
    if n2 != n || cs.g.dim() != (m, k) || phase.len() != k {
        return Err(ChannelError::Shape(format!(
            "h_dir {:?}, h_irs {:?}, g {:?}, theta {}",
            cs.h_dir.dim(),
            cs.h_irs.dim(),
            cs.g.dim(),
            phase.len()
        )));
    }
    let coeffs = Array1::from(phase.coefficients());
    let mut reflected = cs.h_irs.clone();
    for (mut row, c) in reflected.rows_mut().into_iter().zip(coeffs.iter()) {
        row.mapv_inplace(|z| z * c);
    }
    Ok(cs.g.dot(&reflected) + &cs.h_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn degenerate_annulus() {
        let cfg = SystemConfig { gu_ring_radii: (5.0, 5.0), users: 7, ..SystemConfig::desk() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in place_users(&cfg, &mut rng) {
            assert_relative_eq!(p.distance(&cfg.gu_ring_center), 5.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn placement_is_seeded() {
        let cfg = SystemConfig::desk();
        let a = place_users(&cfg, &mut ChaCha8Rng::seed_from_u64(9));
        let b = place_users(&cfg, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn placement_mean_radius_matches_closed_form() {
        let cfg = SystemConfig { users: 1, ..SystemConfig::default() };
        let (r0, r1) = cfg.gu_ring_radii;
        let expected = 2.0 / 3.0 * (r1.powi(3) - r0.powi(3)) / (r1.powi(2) - r0.powi(2));
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 100_000;
        let mean: f64 = (0..draws)
            .map(|_| place_users(&cfg, &mut rng)[0].distance(&cfg.gu_ring_center))
            .sum::<f64>()
            / draws as f64;
        assert!((mean - expected).abs() / expected < 0.01, "{mean} vs {expected}");
        // 2/3 (1000-8)/(100-4) = 6.8888...
        assert_relative_eq!(expected, 6.888_888_888_888_889, epsilon = 1e-12);
    }

    #[test]
    fn path_loss_values() {
        assert_relative_eq!(path_loss_db(1.0, SPEED_OF_LIGHT / (4.0 * PI), 0.0).unwrap(), 0.0, epsilon = 1e-9);
        // 40 + 187.6042 - 147.5545 + 20, evaluated independently.
        assert!((path_loss_db(100.0, 2.4e9, 20.0).unwrap() - 100.05).abs() < 0.01);
        let a = path_loss_db(37.0, 2.4e9, 3.0).unwrap();
        let b = path_loss_db(74.0, 2.4e9, 3.0).unwrap();
        assert_relative_eq!(b - a, 6.0206, epsilon = 1e-4);
        assert!(matches!(path_loss_db(0.0, 2.4e9, 0.0), Err(ChannelError::NonPositiveDistance(_))));
        assert!(path_loss_db(-1.0, 2.4e9, 0.0).is_err());
    }

    #[test]
    fn gain_decreases_with_distance() {
        let mut last = f64::INFINITY;
        for d in [0.5, 1.0, 2.0, 10.0, 150.0, 1e4] {
            let g = db_to_gain(path_loss_db(d, 2.4e9, 0.0).unwrap());
            assert!(g < last);
            last = g;
        }
    }

    #[test]
    fn steering_at_zero_cosine() {
        let s = steering(3, 0.0, 0.5);
        for z in s.iter() {
            assert_eq!(*z, c(1.0, 0.0));
        }
    }

    #[test]
    fn pure_los_has_constant_modulus() {
        let cfg = SystemConfig { rician_k: 1e12, ..SystemConfig::desk() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pos = place_users(&cfg, &mut rng);
        let cs = sample_channels(&cfg, &pos, &mut rng);
        for (u, p) in pos.iter().enumerate() {
            let d = p.distance(&cfg.irs_pos);
            let amp = db_to_gain(path_loss_db(d, cfg.carrier_freq, cfg.loss_los_db).unwrap()).sqrt();
            for e in 0..cfg.irs_elements {
                assert!((cs.h_irs[[e, u]].norm() - amp).abs() / amp < 1e-3);
            }
        }
    }

    #[test]
    fn rayleigh_irs_variance() {
        let cfg = SystemConfig { rician_k: 0.0, users: 1, irs_elements: 10, ..SystemConfig::desk() };
        let pos = vec![Point::new(150.0, 5.0)];
        let gain = db_to_gain(path_loss_db(pos[0].distance(&cfg.irs_pos), cfg.carrier_freq, cfg.loss_los_db).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut acc = 0.0;
        let mut count = 0usize;
        while count < 100_000 {
            let cs = sample_channels(&cfg, &pos, &mut rng);
            for z in cs.h_irs.iter() {
                acc += z.norm_sqr();
                count += 1;
            }
        }
        let var = acc / count as f64;
        assert!((var - gain).abs() / gain < 0.05, "{var} vs {gain}");
    }

    #[test]
    fn sampling_is_seeded_and_finite() {
        let cfg = SystemConfig::desk();
        let pos = place_users(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let a = sample_channels(&cfg, &pos, &mut ChaCha8Rng::seed_from_u64(2));
        let b = sample_channels(&cfg, &pos, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(a, b);
        assert!(a.is_finite());
        assert_eq!(a.h_dir.dim(), (4, 3));
        assert_eq!(a.h_irs.dim(), (8, 3));
        assert_eq!(a.g.dim(), (4, 8));
    }

    #[test]
    fn direct_channel_independent_of_irs_size() {
        let small = SystemConfig { irs_elements: 4, ..SystemConfig::desk() };
        let large = SystemConfig { irs_elements: 16, ..SystemConfig::desk() };
        let pos = place_users(&small, &mut ChaCha8Rng::seed_from_u64(1));
        let a = sample_channels(&small, &pos, &mut ChaCha8Rng::seed_from_u64(7));
        let b = sample_channels(&large, &pos, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a.h_dir, b.h_dir);
    }

    #[test]
    fn phases_have_unit_modulus() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ph = IrsPhase::random(64, &mut rng);
        for (z, t) in ph.coefficients().iter().zip(ph.angles()) {
            assert!((z.norm() - 1.0).abs() < 1e-12);
            assert!((0.0..2.0 * PI).contains(t));
        }
        assert_eq!(wrap_phase(2.0 * PI), 0.0);
        assert_eq!(wrap_phase(-1e-300), 0.0);
    }

    fn state(h_dir: Array2<Complex64>, h_irs: Array2<Complex64>, g: Array2<Complex64>) -> ChannelState {
        let n = h_dir.ncols();
        ChannelState { h_dir, h_irs, g, positions: vec![Point::new(0.0, 0.0); n] }
    }

    #[test]
    fn composite_without_reflection_is_direct() {
        let h_dir = Array2::from_shape_fn((3, 2), |(i, j)| c(i as f64, j as f64 - 0.5));
        let h_irs = Array2::from_shape_fn((4, 2), |(i, j)| c(1.0 + i as f64, j as f64));
        let cs = state(h_dir.clone(), h_irs, Array2::zeros((3, 4)));
        let h = composite_channel(&cs, &IrsPhase::new(vec![0.3, 1.0, 2.0, 4.0])).unwrap();
        assert_eq!(h, h_dir);
    }

    #[test]
    fn composite_single_element() {
        let g = Array2::from_shape_vec((2, 1), vec![c(1.0, 2.0), c(-0.5, 0.25)]).unwrap();
        let h_irs = Array2::from_shape_vec((1, 3), vec![c(0.5, -1.0), c(2.0, 0.0), c(0.0, 1.0)]).unwrap();
        let cs = state(Array2::zeros((2, 3)), h_irs.clone(), g.clone());
        let h = composite_channel(&cs, &IrsPhase::zeros(1)).unwrap();
        for n in 0..3 {
            for m in 0..2 {
                assert_eq!(h[[m, n]], g[[m, 0]] * h_irs[[0, n]]);
            }
        }
    }

    #[test]
    fn composite_hand_expansion() {
        // M = N = K = 2, values chosen by hand.
        let h_dir = Array2::from_shape_vec((2, 2), vec![c(0.1, 0.0), c(0.0, 0.2), c(-0.3, 0.1), c(0.4, -0.4)]).unwrap();
        let h_irs = Array2::from_shape_vec((2, 2), vec![c(1.0, 1.0), c(0.5, 0.0), c(0.0, -1.0), c(2.0, 1.0)]).unwrap();
        let g = Array2::from_shape_vec((2, 2), vec![c(1.0, 0.0), c(0.0, 1.0), c(2.0, -1.0), c(-1.0, 0.5)]).unwrap();
        let theta = [PI / 2.0, PI];
        let cs = state(h_dir.clone(), h_irs.clone(), g.clone());
        let h = composite_channel(&cs, &IrsPhase::new(theta.to_vec())).unwrap();
        // e^{jπ/2} = j, e^{jπ} = -1.
        let e = [c(0.0, 1.0), c(-1.0, 0.0)];
        for m in 0..2 {
            for n in 0..2 {
                let expected = g[[m, 0]] * e[0] * h_irs[[0, n]] + g[[m, 1]] * e[1] * h_irs[[1, n]] + h_dir[[m, n]];
                assert!((h[[m, n]] - expected).norm() < 1e-12);
            }
        }
        // Column 0 row 0 worked out by hand: 1·j·(1+j) + j·(-1)·(-j) + 0.1 = (-1+j) + (-1) + 0.1.
        assert!((h[[0, 0]] - c(-1.9, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn composite_rejects_bad_shapes() {
        let cs = state(Array2::zeros((2, 2)), Array2::zeros((3, 2)), Array2::zeros((2, 3)));
        assert!(composite_channel(&cs, &IrsPhase::zeros(2)).is_err());
        let cs = state(Array2::zeros((2, 2)), Array2::zeros((3, 1)), Array2::zeros((2, 3)));
        assert!(composite_channel(&cs, &IrsPhase::zeros(3)).is_err());
    }

    #[test]
    fn masks_partition_the_composite() {
        let cfg = SystemConfig::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pos = place_users(&cfg, &mut rng);
        let cs = sample_channels(&cfg, &pos, &mut rng);
        let ph = IrsPhase::random(cfg.irs_elements, &mut rng);
        let full = composite_channel(&cs, &ph).unwrap();
        let irs = composite_channel(&cs.masked(ChannelMask::OnlyIrs), &ph).unwrap();
        let dir = composite_channel(&cs.masked(ChannelMask::DirectOnly), &ph).unwrap();
        assert_eq!(dir, cs.h_dir);
        for ((a, b), f) in irs.iter().zip(dir.iter()).zip(full.iter()) {
            assert!((a + b - f).norm() <= 1e-12 * f.norm().max(1e-30));
        }
    }

    #[test]
    fn composite_is_linear() {
        let cfg = SystemConfig::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pos = place_users(&cfg, &mut rng);
        let a = sample_channels(&cfg, &pos, &mut rng);
        let b = sample_channels(&cfg, &pos, &mut rng);
        let ph = IrsPhase::random(cfg.irs_elements, &mut rng);
        let mut sum = a.clone();
        sum.h_dir = &a.h_dir + &b.h_dir;
        sum.h_irs = &a.h_irs + &b.h_irs;
        // Hold g fixed: linear in (h_dir, h_irs) jointly.
        let mut b_same_g = b.clone();
        b_same_g.g = a.g.clone();
        let lhs = composite_channel(&sum, &ph).unwrap();
        let rhs = composite_channel(&a, &ph).unwrap() + composite_channel(&b_same_g, &ph).unwrap();
        for (x, y) in lhs.iter().zip(rhs.iter()) {
            assert!((x - y).norm() <= 1e-9 * x.norm().max(1e-30));
        }
    }
}
