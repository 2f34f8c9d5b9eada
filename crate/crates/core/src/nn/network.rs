use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;

use super::layers::{self, BnCache, ConvGeom};
use super::{Grads, NetParams, NnError};
use crate::env::StateTensors;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Output layer of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// `tanh` output in `[-1, 1]`.
    Actor,
    /// Linear output.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Frozen running statistics.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetSpec {
    pub antennas: usize,
    pub users: usize,
    pub irs_elements: usize,
    /// Length each directional path is pooled to.
    pub pooled_len: usize,
    pub dense_width: usize,
    pub head_width: usize,
    /// Width of an action vector appended to the features (0 for none).
    pub action_in: usize,
    pub out_dim: usize,
    pub head: HeadKind,
    pub bn_momentum: f64,
}

impl NetSpec {
    /// `(rows, cols)` of the dir, irs and g inputs.
    pub fn branch_dims(&self) -> [(usize, usize); 3] {
        [(self.antennas, self.users), (self.irs_elements, self.users), (self.antennas, self.irs_elements)]
    }

    pub fn feature_len(&self) -> usize {
        3 * self.pooled_len
    }

    /// Input widths of the three dense layers.
    pub fn dense_inputs(&self) -> [usize; 3] {
        let x0 = self.feature_len() + self.action_in;
        [x0, x0 + self.dense_width, x0 + 2 * self.dense_width]
    }
}

const BRANCHES: [&str; 3] = ["dir", "irs", "g"];
const MID_CHANNELS: usize = 3;

#[derive(Debug, Clone)]
struct Path {
    conv: ConvGeom,
    conv_w: usize,
    conv_b: usize,
    gamma: usize,
    beta: usize,
    running_mean: usize,
    running_var: usize,
    pw: ConvGeom,
    pw_w: usize,
    pw_b: usize,
    pool: Array2<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Lin {
    w: usize,
    b: usize,
    out: usize,
}

struct PathCache {
    cols: Array2<f64>,
    bn: BnCache,
    act: Array2<f64>,
    pw_cols: Array2<f64>,
}

/// Record of one forward pass, consumed by [`Network::backward`].
pub struct Tape {
    id: u64,
    version: u64,
    paths: Vec<PathCache>,
    dense_in: Vec<Array2<f64>>,
    dense_out: Vec<Array2<f64>>,
    head_in: Vec<Array2<f64>>,
    pre: Array2<f64>,
    out: Array2<f64>,
}

impl Tape {
    /// Sign pattern of every rectifier in the pass.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut v = Vec::new();
        for p in &self.paths {
            v.extend(p.act.iter().map(|&x| x > 0.0));
        }
        for a in self.dense_out.iter().chain(&self.head_in[1..]) {
            v.extend(a.iter().map(|&x| x > 0.0));
        }
        v
    }

    pub fn output(&self) -> &Array2<f64> {
        &self.out
    }

    /// Head output before the squashing nonlinearity.
    pub fn pre_activation(&self) -> &Array2<f64> {
        &self.pre
    }
}

pub struct Backward {
    pub grads: Grads,
    /// Gradient with respect to the appended action, if any.
    pub action: Option<Array2<f64>>,
}

/// CNN feature extractor (three branches), dense block and three-layer head.
#[derive(Debug)]
pub struct Network {
    spec: NetSpec,
    params: NetParams,
    paths: Vec<Path>,
    dense: [Lin; 3],
    head: [Lin; 3],
    id: u64,
    version: u64,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec,
            params: self.params.clone(),
            paths: self.paths.clone(),
            dense: self.dense,
            head: self.head,
            id: fresh_id(),
            version: 0,
        }
    }
}

fn uniform<R: Rng + ?Sized>(n: usize, fan_in: usize, rng: &mut R) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

impl Network {
    pub fn new<R: Rng + ?Sized>(spec: NetSpec, rng: &mut R) -> Result<Self, NnError> {
        if spec.pooled_len == 0 || spec.dense_width == 0 || spec.head_width == 0 || spec.out_dim == 0 {
            return Err(NnError::Shape(format!("degenerate widths in {spec:?}")));
        }
        let mut params = NetParams::new();
        let mut paths = Vec::with_capacity(6);
        for (name, (rows, cols)) in BRANCHES.iter().zip(spec.branch_dims()) {
            for (dir, (kh, kw)) in [("h", (rows, 1)), ("v", (1, cols))] {
                let pre = format!("{name}.{dir}");
                let conv = ConvGeom::new(2, MID_CHANNELS, rows, cols, kh, kw)?;
                let conv_w = params.push(&format!("{pre}.conv.w"), &[MID_CHANNELS, 2, kh, kw], uniform(conv.kernel_len(), conv.patch_len(), rng), true)?;
                let conv_b = params.push(&format!("{pre}.conv.b"), &[MID_CHANNELS], vec![0.0; MID_CHANNELS], true)?;
                let gamma = params.push(&format!("{pre}.bn.gamma"), &[MID_CHANNELS], vec![1.0; MID_CHANNELS], true)?;
                let beta = params.push(&format!("{pre}.bn.beta"), &[MID_CHANNELS], vec![0.0; MID_CHANNELS], true)?;
                let running_mean = params.push(&format!("{pre}.bn.running_mean"), &[MID_CHANNELS], vec![0.0; MID_CHANNELS], false)?;
                let running_var = params.push(&format!("{pre}.bn.running_var"), &[MID_CHANNELS], vec![1.0; MID_CHANNELS], false)?;
                let pw = ConvGeom::new(MID_CHANNELS, 1, conv.out_h(), conv.out_w(), 1, 1)?;
                let pw_w = params.push(&format!("{pre}.pw.w"), &[1, MID_CHANNELS, 1, 1], uniform(MID_CHANNELS, MID_CHANNELS, rng), true)?;
                let pw_b = params.push(&format!("{pre}.pw.b"), &[1], vec![0.0], true)?;
                let pool = layers::adaptive_pool_matrix(pw.out_spatial(), spec.pooled_len);
                paths.push(Path { conv, conv_w, conv_b, gamma, beta, running_mean, running_var, pw, pw_w, pw_b, pool });
            }
        }
        let mut lin = |name: String, input: usize, out: usize, params: &mut NetParams| -> Result<Lin, NnError> {
            let w = params.push(&format!("{name}.w"), &[out, input], uniform(out * input, input, rng), true)?;
            let b = params.push(&format!("{name}.b"), &[out], vec![0.0; out], true)?;
            Ok(Lin { w, b, out })
        };
        let di = spec.dense_inputs();
        let h1 = spec.dense_width;
        let h2 = spec.head_width;
        let dense = [
            lin("dense.0".into(), di[0], h1, &mut params)?,
            lin("dense.1".into(), di[1], h1, &mut params)?,
            lin("dense.2".into(), di[2], h1, &mut params)?,
        ];
        let head = [
            lin("head.0".into(), h1, h2, &mut params)?,
            lin("head.1".into(), h2, h2, &mut params)?,
            lin("head.2".into(), h2, spec.out_dim, &mut params)?,
        ];
        Ok(Self { spec, params, paths, dense, head, id: fresh_id(), version: 0 })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &NetParams {
        &self.params
    }

    /// Mutable access; invalidates outstanding tapes.
    pub fn params_mut(&mut self) -> &mut NetParams {
        self.version += 1;
        &mut self.params
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    fn stack_inputs(&self, states: &[&StateTensors]) -> Result<[Array2<f64>; 3], NnError> {
        let dims = self.spec.branch_dims();
        let b = states.len();
        if b == 0 {
            return Err(NnError::Shape("empty batch".into()));
        }
        let mut out = dims.map(|(r, c)| Array2::zeros((b, 2 * r * c)));
        for (i, st) in states.iter().enumerate() {
            for (j, t) in st.tensors().into_iter().enumerate() {
                let (r, c) = dims[j];
                if t.dim() != (2, r, c) {
                    return Err(NnError::Shape(format!("{} input {:?}, expected {:?}", BRANCHES[j], t.dim(), (2, r, c))));
                }
                out[j].row_mut(i).iter_mut().zip(t.iter()).for_each(|(d, &v)| *d = v);
            }
        }
        Ok(out)
    }

    fn lin(&self, l: &Lin, x: &Array2<f64>) -> Array2<f64> {
        layers::linear_forward(x, self.params.data(l.w), self.params.data(l.b), l.out)
    }

    #[allow(clippy::type_complexity)]
    fn run_with_stats(
        &self,
        states: &[&StateTensors],
        action: Option<&Array2<f64>>,
        mode: Mode,
    ) -> Result<(Array2<f64>, Tape, Vec<(usize, Vec<f64>, Vec<f64>)>), NnError> {
        let inputs = self.stack_inputs(states)?;
        let b = states.len();
        let train = mode == Mode::Train;
        let mut caches = Vec::with_capacity(6);
        let mut stat_updates = Vec::new();
        let mut branch_feats = Vec::with_capacity(3);
        for (j, x) in inputs.iter().enumerate() {
            let mut feat = Array2::<f64>::zeros((b, self.spec.pooled_len));
            for (pi, path) in self.paths[2 * j..2 * j + 2].iter().enumerate() {
                let p = &self.params;
                let (z1, cols) = layers::conv_forward(x.view(), p.data(path.conv_w), p.data(path.conv_b), &path.conv);
                let (z2, bn, stats) = layers::bn_forward(
                    &z1,
                    MID_CHANNELS,
                    p.data(path.gamma),
                    p.data(path.beta),
                    (p.data(path.running_mean), p.data(path.running_var)),
                    train,
                );
                if let Some((mean, var)) = stats {
                    stat_updates.push((2 * j + pi, mean, var));
                }
                let act = layers::relu(&z2);
                let (z3, pw_cols) = layers::conv_forward(act.view(), p.data(path.pw_w), p.data(path.pw_b), &path.pw);
                feat += &z3.dot(&path.pool.t());
                caches.push(PathCache { cols, bn, act, pw_cols });
            }
            branch_feats.push(feat);
        }
        let mut parts: Vec<ArrayView2<f64>> = branch_feats.iter().map(|f| f.view()).collect();
        match (action, self.spec.action_in) {
            (None, 0) => {}
            (Some(a), w) if w > 0 && a.dim() == (b, w) => parts.push(a.view()),
            (a, w) => {
                return Err(NnError::Shape(format!("action input {:?} for width {w} and batch {b}", a.map(|a| a.dim()))));
            }
        }
        let x0 = concatenate(Axis(1), &parts).expect("feature concat");

        let mut dense_in = Vec::with_capacity(3);
        let mut dense_out: Vec<Array2<f64>> = Vec::with_capacity(3);
        for l in &self.dense {
            let mut views = vec![x0.view()];
            views.extend(dense_out.iter().map(|o| o.view()));
            let input = concatenate(Axis(1), &views).expect("dense concat");
            let y = layers::relu(&self.lin(l, &input));
            dense_in.push(input);
            dense_out.push(y);
        }
        let mut head_in = vec![dense_out[2].clone()];
        let h1 = layers::relu(&self.lin(&self.head[0], &head_in[0]));
        head_in.push(h1);
        let h2 = layers::relu(&self.lin(&self.head[1], &head_in[1]));
        head_in.push(h2);
        let pre = self.lin(&self.head[2], &head_in[2]);
        let out = if self.spec.head == HeadKind::Actor { pre.mapv(f64::tanh) } else { pre.clone() };
        let tape = Tape { id: self.id, version: self.version, paths: caches, dense_in, dense_out, head_in, pre, out: out.clone() };
        Ok((out, tape, stat_updates))
    }

    /// Forward pass that leaves the running statistics untouched.
    pub fn forward_frozen(&self, states: &[&StateTensors], action: Option<&Array2<f64>>, mode: Mode) -> Result<(Array2<f64>, Tape), NnError> {
        let (out, tape, _) = self.run_with_stats(states, action, mode)?;
        Ok((out, tape))
    }

    /// Forward pass recording a tape. Training mode also moves the running
    /// statistics.
    pub fn forward(&mut self, states: &[&StateTensors], action: Option<&Array2<f64>>, mode: Mode) -> Result<(Array2<f64>, Tape), NnError> {
        let (out, tape, updates) = self.run_with_stats(states, action, mode)?;
        let m = self.spec.bn_momentum;
        for (pi, mean, var) in updates {
            let path = &self.paths[pi];
            let (rm, rv) = (path.running_mean, path.running_var);
            for (r, v) in self.params.data_mut(rm).iter_mut().zip(&mean) {
                *r = (1.0 - m) * *r + m * v;
            }
            for (r, v) in self.params.data_mut(rv).iter_mut().zip(&var) {
                *r = (1.0 - m) * *r + m * v;
            }
        }
        Ok((out, tape))
    }

    /// Evaluation-mode forward pass without a tape.
    pub fn infer(&self, states: &[&StateTensors], action: Option<&Array2<f64>>) -> Result<Array2<f64>, NnError> {
        Ok(self.run_with_stats(states, action, Mode::Eval)?.0)
    }

    /// Concatenated branch features (evaluation mode), `B × 3D`.
    pub fn features(&self, states: &[&StateTensors]) -> Result<Array2<f64>, NnError> {
        let (_, tape, _) = self.run_with_stats(states, self.dummy_action(states.len()).as_ref(), Mode::Eval)?;
        Ok(tape.dense_in[0].slice(s![.., ..self.spec.feature_len()]).to_owned())
    }

    fn dummy_action(&self, b: usize) -> Option<Array2<f64>> {
        (self.spec.action_in > 0).then(|| Array2::zeros((b, self.spec.action_in)))
    }

    /// Reverse pass for an upstream gradient `d loss / d output`.
    pub fn backward(&self, tape: Tape, grad_out: &Array2<f64>) -> Result<Backward, NnError> {
        self.backward_with_pre(tape, grad_out, None)
    }

    /// Like [`Network::backward`], plus a gradient that enters directly at
    /// the pre-activation of the head output.
    pub fn backward_with_pre(&self, tape: Tape, grad_out: &Array2<f64>, grad_pre: Option<&Array2<f64>>) -> Result<Backward, NnError> {
        if tape.id != self.id {
            return Err(NnError::ForeignTape);
        }
        if tape.version != self.version {
            return Err(NnError::StaleTape { tape: tape.version, current: self.version });
        }
        if grad_out.dim() != tape.out.dim() {
            return Err(NnError::Shape(format!("grad {:?} vs output {:?}", grad_out.dim(), tape.out.dim())));
        }
        let p = &self.params;
        let mut grads = Grads::zeros_like(p);
        let put = |i: usize, g: Vec<f64>, grads: &mut Grads| grads.0[i] = g;

        let mut d = if self.spec.head == HeadKind::Actor { layers::tanh_backward(grad_out, &tape.out) } else { grad_out.clone() };
        if let Some(g) = grad_pre {
            if g.dim() != d.dim() {
                return Err(NnError::Shape(format!("pre-activation grad {:?} vs output {:?}", g.dim(), d.dim())));
            }
            d += g;
        }
        for li in (0..3).rev() {
            let l = self.head[li];
            let g = layers::linear_backward(&d, &tape.head_in[li], p.data(l.w));
            put(l.w, g.w, &mut grads);
            put(l.b, g.b, &mut grads);
            // head_in[li] is a rectifier output for every layer.
            d = layers::relu_backward(&g.input, &tape.head_in[li]);
        }

        let x0w = self.spec.dense_inputs()[0];
        let h1 = self.spec.dense_width;
        let b = d.nrows();
        let mut d_out: Vec<Array2<f64>> = vec![Array2::zeros((b, h1)), Array2::zeros((b, h1)), d];
        let mut dx0 = Array2::<f64>::zeros((b, x0w));
        for li in (0..3).rev() {
            let l = self.dense[li];
            let dz = if li == 2 { d_out[2].clone() } else { layers::relu_backward(&d_out[li], &tape.dense_out[li]) };
            let g = layers::linear_backward(&dz, &tape.dense_in[li], p.data(l.w));
            put(l.w, g.w, &mut grads);
            put(l.b, g.b, &mut grads);
            dx0 += &g.input.slice(s![.., ..x0w]);
            for prev in 0..li {
                let off = x0w + prev * h1;
                d_out[prev] += &g.input.slice(s![.., off..off + h1]);
            }
        }

        let dl = self.spec.pooled_len;
        for (k, (path, cache)) in self.paths.iter().zip(tape.paths).enumerate() {
            let branch = k / 2;
            let dfeat = dx0.slice(s![.., branch * dl..(branch + 1) * dl]);
            let dz3 = dfeat.dot(&path.pool);
            let pw = layers::conv_backward(&dz3, &cache.pw_cols, p.data(path.pw_w), &path.pw, true);
            put(path.pw_w, pw.kernel, &mut grads);
            put(path.pw_b, pw.bias, &mut grads);
            let dz2 = layers::relu_backward(&pw.input.expect("pointwise input grad"), &cache.act);
            let bn = layers::bn_backward(&dz2, &cache.bn, MID_CHANNELS, p.data(path.gamma));
            put(path.gamma, bn.gamma, &mut grads);
            put(path.beta, bn.beta, &mut grads);
            let conv = layers::conv_backward(&bn.input, &cache.cols, p.data(path.conv_w), &path.conv, false);
            put(path.conv_w, conv.kernel, &mut grads);
            put(path.conv_b, conv.bias, &mut grads);
        }
        let action = (self.spec.action_in > 0).then(|| dx0.slice(s![.., 3 * dl..]).to_owned());
        Ok(Backward { grads, action })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::Array3;
    use rand::SeedableRng;

    pub(crate) fn spec(action_in: usize, out_dim: usize, head: HeadKind) -> NetSpec {
        NetSpec {
            antennas: 4,
            users: 3,
            irs_elements: 8,
            pooled_len: 6,
            dense_width: 5,
            head_width: 4,
            action_in,
            out_dim,
            head,
            bn_momentum: 0.1,
        }
    }

    fn random_state<R: Rng>(rng: &mut R) -> StateTensors {
        let mut t = |r, c| Array3::from_shape_fn((2, r, c), |_| rng.random_range(-1.5..1.5));
        StateTensors { s_dir: t(4, 3), s_irs: t(8, 3), s_g: t(4, 8) }
    }

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(5)
    }

    /// Single-sample evaluation-mode forward written with explicit loops.
    fn naive_forward(net: &Network, st: &StateTensors, action: &[f64]) -> Vec<f64> {
        let p = net.params();
        let get = |name: &str| p.data(p.index_of(name).unwrap()).to_vec();
        let sp = net.spec();
        let mut feats = Vec::new();
        for (bname, t) in BRANCHES.iter().zip(st.tensors()) {
            let (_, rows, cols) = t.dim();
            let mut sum = vec![0.0; sp.pooled_len];
            for dir in ["h", "v"] {
                let pre = format!("{bname}.{dir}");
                let (kh, kw) = if dir == "h" { (rows, 1) } else { (1, cols) };
                let (oh, ow) = (rows - kh + 1, cols - kw + 1);
                let (w, b) = (get(&format!("{pre}.conv.w")), get(&format!("{pre}.conv.b")));
                let (ga, be) = (get(&format!("{pre}.bn.gamma")), get(&format!("{pre}.bn.beta")));
                let (rm, rv) = (get(&format!("{pre}.bn.running_mean")), get(&format!("{pre}.bn.running_var")));
                let (pw, pb) = (get(&format!("{pre}.pw.w")), get(&format!("{pre}.pw.b")));
                let mut flat = vec![0.0; oh * ow];
                for y in 0..oh {
                    for x in 0..ow {
                        let mut acc = pb[0];
                        for o in 0..3 {
                            let mut z = b[o];
                            for c in 0..2 {
                                for u in 0..kh {
                                    for v in 0..kw {
                                        z += w[((o * 2 + c) * kh + u) * kw + v] * t[[c, y + u, x + v]];
                                    }
                                }
                            }
                            let z = ga[o] * (z - rm[o]) / (rv[o] + layers::BN_EPS).sqrt() + be[o];
                            acc += pw[o] * z.max(0.0);
                        }
                        flat[y * ow + x] = acc;
                    }
                }
                let l = flat.len();
                for (i, s) in sum.iter_mut().enumerate() {
                    let (a, e) = (i * l / sp.pooled_len, ((i + 1) * l).div_ceil(sp.pooled_len));
                    *s += flat[a..e].iter().sum::<f64>() / (e - a) as f64;
                }
            }
            feats.extend(sum);
        }
        feats.extend_from_slice(action);
        let affine = |name: &str, x: &[f64]| -> Vec<f64> {
            let w = get(&format!("{name}.w"));
            let b = get(&format!("{name}.b"));
            (0..b.len()).map(|o| b[o] + (0..x.len()).map(|i| w[o * x.len() + i] * x[i]).sum::<f64>()).collect()
        };
        let relu = |v: Vec<f64>| v.into_iter().map(|x| x.max(0.0)).collect::<Vec<_>>();
        let o1 = relu(affine("dense.0", &feats));
        let in2: Vec<f64> = feats.iter().chain(&o1).copied().collect();
        let o2 = relu(affine("dense.1", &in2));
        let in3: Vec<f64> = feats.iter().chain(&o1).chain(&o2).copied().collect();
        let o3 = relu(affine("dense.2", &in3));
        let h1 = relu(affine("head.0", &o3));
        let h2 = relu(affine("head.1", &h1));
        let out = affine("head.2", &h2);
        if sp.head == HeadKind::Actor {
            out.into_iter().map(f64::tanh).collect()
        } else {
            out
        }
    }

    fn perturb_stats(net: &mut Network, r: &mut impl Rng) {
        let n = net.params().len();
        for i in 0..n {
            if net.params().arrays()[i].name.contains("running") {
                for v in net.params_mut().data_mut(i) {
                    *v = r.random_range(0.5..1.5);
                }
            }
        }
    }

    #[test]
    fn forward_matches_loop_oracle() {
        let mut r = rng();
        for (a, out, head) in [(0, 7, HeadKind::Actor), (5, 1, HeadKind::Linear)] {
            let mut net = Network::new(spec(a, out, head), &mut r).unwrap();
            perturb_stats(&mut net, &mut r);
            let states: Vec<StateTensors> = (0..3).map(|_| random_state(&mut r)).collect();
            let refs: Vec<&StateTensors> = states.iter().collect();
            let act = Array2::from_shape_fn((3, a), |_| r.random_range(-1.0..1.0));
            let y = net.infer(&refs, (a > 0).then_some(&act)).unwrap();
            for (i, st) in states.iter().enumerate() {
                let e = naive_forward(&net, st, act.row(i).as_slice().unwrap());
                for (got, want) in y.row(i).iter().zip(&e) {
                    assert_relative_eq!(got, want, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn shapes_and_counts() {
        let mut r = rng();
        let sp = spec(0, 7, HeadKind::Actor);
        let net = Network::new(sp, &mut r).unwrap();
        let st = random_state(&mut r);
        assert_eq!(net.features(&[&st]).unwrap().dim(), (1, 18));
        assert_eq!(sp.dense_inputs(), [18, 23, 28]);
        // Per path: directional kernel + bias, BN scale/offset, pointwise 3 + 1.
        let path = |k: usize| 3 * 2 * k + 3 + 6 + 4;
        let cnn: usize = [(4, 3), (8, 3), (4, 8)].iter().map(|&(r, c)| path(r) + path(c)).sum();
        let dense = (18 * 5 + 5) + (23 * 5 + 5) + (28 * 5 + 5);
        let head = (5 * 4 + 4) + (4 * 4 + 4) + (4 * 7 + 7);
        assert_eq!(net.params().trainable_count(), cnn + dense + head);
        let y = net.infer(&[&st], None).unwrap();
        assert!(y.iter().all(|v| (-1.0..=1.0).contains(v)));
        let dqn = Network::new(NetSpec { out_dim: 120, users: 5, head: HeadKind::Linear, ..sp }, &mut r).unwrap();
        assert_eq!(dqn.spec().out_dim, 120);
    }

    #[test]
    fn zero_input_zero_features() {
        let mut r = rng();
        let net = Network::new(spec(0, 2, HeadKind::Linear), &mut r).unwrap();
        let z = StateTensors { s_dir: Array3::zeros((2, 4, 3)), s_irs: Array3::zeros((2, 8, 3)), s_g: Array3::zeros((2, 4, 8)) };
        assert!(net.features(&[&z]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn branches_are_not_shared() {
        let mut r = rng();
        let sp = NetSpec { antennas: 3, users: 3, irs_elements: 3, ..spec(0, 2, HeadKind::Linear) };
        let net = Network::new(sp, &mut r).unwrap();
        let t = Array3::from_shape_fn((2, 3, 3), |_| r.random_range(-1.0..1.0));
        let u = Array3::from_shape_fn((2, 3, 3), |_| r.random_range(-1.0..1.0));
        let a = StateTensors { s_dir: t.clone(), s_irs: u.clone(), s_g: t.clone() };
        let b = StateTensors { s_dir: u.clone(), s_irs: t.clone(), s_g: t };
        assert_ne!(net.features(&[&a]).unwrap(), net.features(&[&b]).unwrap());
    }

    #[test]
    fn eval_is_deterministic_and_train_differs_only_via_bn() {
        let mut r = rng();
        let mut net = Network::new(spec(0, 3, HeadKind::Linear), &mut r).unwrap();
        let states: Vec<StateTensors> = (0..4).map(|_| random_state(&mut r)).collect();
        let refs: Vec<&StateTensors> = states.iter().collect();
        let a = net.infer(&refs, None).unwrap();
        assert_eq!(a, net.infer(&refs, None).unwrap());
        let before = net.params().clone();
        let (t, _) = net.forward(&refs, None, Mode::Train).unwrap();
        assert_ne!(t, a);
        for (x, y) in before.arrays().iter().zip(net.params().arrays()) {
            if x.trainable {
                assert_eq!(x.data, y.data);
            } else if x.name.ends_with("running_mean") {
                assert_ne!(x.data, y.data);
            }
        }
    }

    #[test]
    fn running_stats_update() {
        let mut r = rng();
        let mut net = Network::new(spec(0, 1, HeadKind::Linear), &mut r).unwrap();
        let states: Vec<StateTensors> = (0..2).map(|_| random_state(&mut r)).collect();
        let refs: Vec<&StateTensors> = states.iter().collect();
        let rm = net.params().index_of("dir.h.bn.running_mean").unwrap();
        let inputs = net.stack_inputs(&refs).unwrap();
        let path = &net.paths[0];
        let (z1, _) = layers::conv_forward(inputs[0].view(), net.params().data(path.conv_w), net.params().data(path.conv_b), &path.conv);
        let mean0 = z1.slice(s![.., 0..3]).sum() / 6.0;
        net.forward(&refs, None, Mode::Train).unwrap();
        assert_relative_eq!(net.params().data(rm)[0], 0.1 * mean0, epsilon = 1e-12);
    }

    #[test]
    fn stale_and_foreign_tapes() {
        let mut r = rng();
        let mut net = Network::new(spec(0, 1, HeadKind::Linear), &mut r).unwrap();
        let other = net.clone();
        let st = random_state(&mut r);
        let (y, tape) = net.forward(&[&st], None, Mode::Eval).unwrap();
        assert!(matches!(other.backward(tape, &y), Err(NnError::ForeignTape)));
        let (y, tape) = net.forward(&[&st], None, Mode::Eval).unwrap();
        net.params_mut();
        assert!(matches!(net.backward(tape, &y), Err(NnError::StaleTape { .. })));
        let (y, tape) = net.forward(&[&st], None, Mode::Eval).unwrap();
        assert!(matches!(net.backward(tape, &Array2::zeros((2, 1))), Err(NnError::Shape(_))));
        let (_, tape) = net.forward(&[&st], None, Mode::Eval).unwrap();
        assert!(net.backward(tape, &Array2::zeros(y.dim())).unwrap().grads.0.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn input_shape_errors() {
        let mut r = rng();
        let net = Network::new(spec(2, 1, HeadKind::Linear), &mut r).unwrap();
        let st = random_state(&mut r);
        assert!(net.infer(&[&st], None).is_err());
        assert!(net.infer(&[&st], Some(&Array2::zeros((1, 3)))).is_err());
        assert!(net.infer(&[], Some(&Array2::zeros((0, 2)))).is_err());
        let bad = StateTensors { s_dir: Array3::zeros((2, 3, 3)), ..st };
        assert!(net.infer(&[&bad], Some(&Array2::zeros((1, 2)))).is_err());
    }

    #[test]
    fn pre_activation_gradient_enters_below_tanh() {
        let mut r = rng();
        let mut net = Network::new(spec(0, 4, HeadKind::Actor), &mut r).unwrap();
        let st = random_state(&mut r);
        let g = Array2::from_shape_fn((1, 4), |_| r.random_range(-1.0..1.0));
        let (_, tape) = net.forward(&[&st], None, Mode::Eval).unwrap();
        let through_tanh = layers::tanh_backward(&g, tape.output());
        let a = net.backward(tape, &g).unwrap().grads;
        let (_, tape) = net.forward(&[&st], None, Mode::Eval).unwrap();
        let b = net.backward_with_pre(tape, &Array2::zeros((1, 4)), Some(&through_tanh)).unwrap().grads;
        assert_eq!(a, b);
    }

    #[test]
    fn action_gradient_matches_difference() {
        let mut r = rng();
        let net = Network::new(spec(3, 1, HeadKind::Linear), &mut r).unwrap();
        let st = random_state(&mut r);
        let a = Array2::from_shape_fn((1, 3), |_| r.random_range(-1.0..1.0));
        let mut net = net;
        let (_, tape) = net.forward(&[&st], Some(&a), Mode::Eval).unwrap();
        let pattern = tape.activation_pattern();
        let g = net.backward(tape, &Array2::ones((1, 1))).unwrap().action.unwrap();
        let eps = 1e-6;
        for j in 0..3 {
            let mut ap = a.clone();
            ap[[0, j]] += eps;
            let mut am = a.clone();
            am[[0, j]] -= eps;
            let (fp, tp) = net.forward(&[&st], Some(&ap), Mode::Eval).unwrap();
            let (fm, tm) = net.forward(&[&st], Some(&am), Mode::Eval).unwrap();
            if tp.activation_pattern() != pattern || tm.activation_pattern() != pattern {
                continue;
            }
            let fd = (fp[[0, 0]] - fm[[0, 0]]) / (2.0 * eps);
            assert_relative_eq!(fd, g[[0, j]], epsilon = 1e-7, max_relative = 1e-6);
        }
    }
}
