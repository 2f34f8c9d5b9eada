//! Central finite-difference check of [`Network::backward`].

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;

use super::{Mode, Network, NnError};
use crate::env::StateTensors;

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayCheck {
    pub name: String,
    pub size: usize,
    pub checked: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub arrays: Vec<ArrayCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.arrays.iter().map(|a| a.max_rel_err).fold(0.0, f64::max)
    }

    /// True when every array had `min(per_array, size)` coordinates checked.
    pub fn complete(&self, per_array: usize) -> bool {
        self.arrays.iter().all(|a| a.checked >= per_array.min(a.size))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Coordinates per array (all of them if the array is smaller).
    pub per_array: usize,
    /// Denominator floor for the relative error.
    pub floor: f64,
    pub mode: Mode,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-4, per_array: 10, floor: 1e-6, mode: Mode::Train }
    }
}

/// Gives every trainable bias and offset a small random value so no
/// rectifier sits exactly at zero, as it can right after initialisation.
pub fn jitter_biases<R: Rng + ?Sized>(net: &mut Network, rng: &mut R) {
    let params = net.params_mut();
    for i in 0..params.len() {
        let a = &params.arrays()[i];
        if a.trainable && (a.name.ends_with(".b") || a.name.ends_with(".beta")) {
            for v in params.data_mut(i) {
                *v = rng.random_range(-0.1..0.1);
            }
        }
    }
}

/// Compares analytic and central-difference gradients of `Σ out ⊙ R` for a
/// fixed random `R`. Coordinates where a rectifier flips inside `±eps` are
/// skipped and replaced by fresh ones.
pub fn check<R: Rng + ?Sized>(
    net: &mut Network,
    states: &[&StateTensors],
    action: Option<&Array2<f64>>,
    opts: GradCheckOptions,
    rng: &mut R,
) -> Result<GradCheckReport, NnError> {
    let (out, tape) = net.forward_frozen(states, action, opts.mode)?;
    let weights = Array2::from_shape_fn(out.dim(), |_| rng.random_range(-1.0..1.0));
    let pattern = tape.activation_pattern();
    let analytic = net.backward(tape, &weights)?.grads;

    let loss_at = |net: &mut Network, i: usize, j: usize, x: f64| -> Result<(f64, bool), NnError> {
        net.params_mut().data_mut(i)[j] = x;
        let (o, t) = net.forward_frozen(states, action, opts.mode)?;
        Ok(((o * &weights).sum(), t.activation_pattern() == pattern))
    };

    let mut arrays = Vec::new();
    for i in 0..net.params().len() {
        let a = &net.params().arrays()[i];
        if !a.trainable {
            continue;
        }
        let name = a.name.clone();
        let len = a.data.len();
        let want = opts.per_array.min(len);
        let mut candidates: Vec<usize> = sample(rng, len, len).into_vec();
        let mut checked = 0;
        let mut max_rel_err = 0.0f64;
        while checked < want {
            let Some(j) = candidates.pop() else { break };
            let x0 = net.params().data(i)[j];
            let (lp, okp) = loss_at(net, i, j, x0 + opts.eps)?;
            let (lm, okm) = loss_at(net, i, j, x0 - opts.eps)?;
            net.params_mut().data_mut(i)[j] = x0;
            if !(okp && okm) {
                continue;
            }
            let numeric = (lp - lm) / (2.0 * opts.eps);
            let exact = analytic.0[i][j];
            let rel = (numeric - exact).abs() / numeric.abs().max(exact.abs()).max(opts.floor);
            max_rel_err = max_rel_err.max(rel);
            checked += 1;
        }
        arrays.push(ArrayCheck { name, size: len, checked, max_rel_err });
    }
    Ok(GradCheckReport { arrays })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{HeadKind, NetSpec};
    use ndarray::Array3;
    use rand::SeedableRng;

    fn states<R: Rng>(b: usize, rng: &mut R) -> Vec<StateTensors> {
        (0..b)
            .map(|_| {
                let mut t = |r, c| Array3::from_shape_fn((2, r, c), |_| rng.random_range(-1.5..1.5));
                StateTensors { s_dir: t(4, 3), s_irs: t(8, 3), s_g: t(4, 8) }
            })
            .collect()
    }

    fn spec(action_in: usize, out_dim: usize, head: HeadKind) -> NetSpec {
        NetSpec {
            antennas: 4,
            users: 3,
            irs_elements: 8,
            pooled_len: 8,
            dense_width: 6,
            head_width: 5,
            action_in,
            out_dim,
            head,
            bn_momentum: 0.1,
        }
    }

    #[test]
    fn actor_and_critic_pass() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let st = states(4, &mut rng);
        let refs: Vec<&StateTensors> = st.iter().collect();
        for mode in [Mode::Train, Mode::Eval] {
            let mut actor = Network::new(spec(0, 5, HeadKind::Actor), &mut rng).unwrap();
            jitter_biases(&mut actor, &mut rng);
            let r = check(&mut actor, &refs, None, GradCheckOptions { mode, ..Default::default() }, &mut rng).unwrap();
            assert!(r.max_rel_err() < 1e-4, "{mode:?}: {:?}", r.arrays);
            assert!(r.complete(10), "{:?}", r.arrays.iter().filter(|a| a.checked < 10.min(a.size)).collect::<Vec<_>>());
            let mut critic = Network::new(spec(5, 1, HeadKind::Linear), &mut rng).unwrap();
            jitter_biases(&mut critic, &mut rng);
            let a = Array2::from_shape_fn((4, 5), |_| rng.random_range(-1.0..1.0));
            let r = check(&mut critic, &refs, Some(&a), GradCheckOptions { mode, ..Default::default() }, &mut rng).unwrap();
            assert!(r.max_rel_err() < 1e-4, "{mode:?}: {:?}", r.arrays);
            assert!(r.complete(10));
        }
    }

    #[test]
    fn detects_wrong_gradient() {
        // A perturbed analytic gradient must fail: compare against a network
        // whose parameters moved after the analytic pass.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let st = states(2, &mut rng);
        let refs: Vec<&StateTensors> = st.iter().collect();
        let mut net = Network::new(spec(0, 2, HeadKind::Linear), &mut rng).unwrap();
        let (out, tape) = net.forward_frozen(&refs, None, Mode::Eval).unwrap();
        let g = net.backward(tape, &Array2::ones(out.dim())).unwrap().grads;
        let i = net.params().index_of("head.2.w").unwrap();
        let eps = 1e-4;
        let x0 = net.params().data(i)[0];
        net.params_mut().data_mut(i)[0] = x0 + eps;
        let lp = net.infer(&refs, None).unwrap().sum();
        net.params_mut().data_mut(i)[0] = x0 - eps;
        let lm = net.infer(&refs, None).unwrap().sum();
        let fd = (lp - lm) / (2.0 * eps);
        assert!((fd - g.0[i][0]).abs() < 1e-8);
        assert!((fd - 1.01 * g.0[i][0]).abs() > 1e-8 || g.0[i][0] == 0.0);
    }
}
