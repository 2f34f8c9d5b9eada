//! Batched layer kernels. Activations are `B × F` matrices whose rows hold
//! one sample, flattened channel-major (`c, h, w`).

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView2, Axis};

use super::NnError;

pub const BN_EPS: f64 = 1e-5;

/// Valid, stride-1 cross-correlation geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeom {
    pub fn new(c_in: usize, c_out: usize, h: usize, w: usize, kh: usize, kw: usize) -> Result<Self, NnError> {
        if kh == 0 || kw == 0 || kh > h || kw > w {
            return Err(NnError::Shape(format!("kernel {kh}x{kw} does not fit input {h}x{w}")));
        }
        Ok(Self { c_in, c_out, h, w, kh, kw })
    }

    pub fn out_h(&self) -> usize {
        self.h - self.kh + 1
    }

    pub fn out_w(&self) -> usize {
        self.w - self.kw + 1
    }

    /// Output positions per channel.
    pub fn out_spatial(&self) -> usize {
        self.out_h() * self.out_w()
    }

    pub fn in_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    pub fn out_len(&self) -> usize {
        self.c_out * self.out_spatial()
    }

    pub fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn kernel_len(&self) -> usize {
        self.c_out * self.patch_len()
    }
}

/// Rows are `(sample, out_y, out_x)`, columns `(c_in, ky, kx)`.
pub fn im2col(x: ArrayView2<f64>, g: &ConvGeom) -> Array2<f64> {
    let b = x.nrows();
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut cols = Array2::zeros((b * oh * ow, g.patch_len()));
    for s in 0..b {
        let row = x.row(s);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut out = cols.row_mut((s * oh + oy) * ow + ox);
                let mut j = 0;
                for c in 0..g.c_in {
                    for ky in 0..g.kh {
                        let base = (c * g.h + oy + ky) * g.w + ox;
                        for kx in 0..g.kw {
                            out[j] = row[base + kx];
                            j += 1;
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(dcols: &Array2<f64>, g: &ConvGeom, batch: usize) -> Array2<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut dx = Array2::zeros((batch, g.in_len()));
    for s in 0..batch {
        let mut row = dx.row_mut(s);
        for oy in 0..oh {
            for ox in 0..ow {
                let src = dcols.row((s * oh + oy) * ow + ox);
                let mut j = 0;
                for c in 0..g.c_in {
                    for ky in 0..g.kh {
                        let base = (c * g.h + oy + ky) * g.w + ox;
                        for kx in 0..g.kw {
                            row[base + kx] += src[j];
                            j += 1;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Returns the output and the patch matrix needed by [`conv_backward`].
pub fn conv_forward(x: ArrayView2<f64>, kernel: &[f64], bias: &[f64], g: &ConvGeom) -> (Array2<f64>, Array2<f64>) {
    let b = x.nrows();
    let cols = im2col(x, g);
    let wm = ArrayView2::from_shape((g.c_out, g.patch_len()), kernel).expect("kernel length");
    let y = cols.dot(&wm.t());
    let sp = g.out_spatial();
    let mut out = Array2::zeros((b, g.out_len()));
    for s in 0..b {
        for p in 0..sp {
            let yr = y.row(s * sp + p);
            for o in 0..g.c_out {
                out[[s, o * sp + p]] = yr[o] + bias[o];
            }
        }
    }
    (out, cols)
}

pub struct ConvGrads {
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
    pub input: Option<Array2<f64>>,
}

pub fn conv_backward(dy: &Array2<f64>, cols: &Array2<f64>, kernel: &[f64], g: &ConvGeom, need_input: bool) -> ConvGrads {
    let b = dy.nrows();
    let sp = g.out_spatial();
    let mut dyr = Array2::zeros((b * sp, g.c_out));
    for s in 0..b {
        for o in 0..g.c_out {
            for p in 0..sp {
                dyr[[s * sp + p, o]] = dy[[s, o * sp + p]];
            }
        }
    }
    let dw = dyr.t().dot(cols);
    let db = dyr.sum_axis(Axis(0));
    let input = need_input.then(|| {
        let wm = ArrayView2::from_shape((g.c_out, g.patch_len()), kernel).expect("kernel length");
        col2im(&dyr.dot(&wm), g, b)
    });
    ConvGrads { kernel: dw.into_iter().collect(), bias: db.to_vec(), input }
}

/// Single-sample convolution of a `C_in×H×W` input with a `C_out×C_in×kh×kw` kernel.
pub fn conv2d(input: &Array3<f64>, kernel: &Array4<f64>, bias: &[f64]) -> Result<Array3<f64>, NnError> {
    let (c_in, h, w) = input.dim();
    let (c_out, k_in, kh, kw) = kernel.dim();
    if k_in != c_in || bias.len() != c_out {
        return Err(NnError::Shape(format!("input {:?}, kernel {:?}, bias {}", input.dim(), kernel.dim(), bias.len())));
    }
    let g = ConvGeom::new(c_in, c_out, h, w, kh, kw)?;
    let x = Array2::from_shape_vec((1, g.in_len()), input.iter().copied().collect()).expect("input length");
    let k: Vec<f64> = kernel.iter().copied().collect();
    let (y, _) = conv_forward(x.view(), &k, bias, &g);
    Ok(Array3::from_shape_vec((c_out, g.out_h(), g.out_w()), y.into_iter().collect()).expect("output length"))
}

/// Normalisation statistics for one batch-norm call.
pub struct BnCache {
    pub xhat: Array2<f64>,
    pub inv_std: Vec<f64>,
    pub train: bool,
}

/// Per-channel batch normalisation over samples and positions. In training
/// mode also returns the batch mean and unbiased variance for the running
/// statistics.
pub fn bn_forward(
    x: &Array2<f64>,
    channels: usize,
    gamma: &[f64],
    beta: &[f64],
    running: (&[f64], &[f64]),
    train: bool,
) -> (Array2<f64>, BnCache, Option<(Vec<f64>, Vec<f64>)>) {
    let b = x.nrows();
    let sp = x.ncols() / channels;
    let count = (b * sp) as f64;
    let mut mean = running.0.to_vec();
    let mut var = running.1.to_vec();
    let mut unbiased = var.clone();
    if train {
        for c in 0..channels {
            let block = x.slice(s![.., c * sp..(c + 1) * sp]);
            let m = block.sum() / count;
            let v = block.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / count;
            mean[c] = m;
            var[c] = v;
            unbiased[c] = if count > 1.0 { v * count / (count - 1.0) } else { v };
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = x.clone();
    let mut y = x.clone();
    for c in 0..channels {
        xhat.slice_mut(s![.., c * sp..(c + 1) * sp]).mapv_inplace(|v| (v - mean[c]) * inv_std[c]);
        let xh = xhat.slice(s![.., c * sp..(c + 1) * sp]);
        y.slice_mut(s![.., c * sp..(c + 1) * sp]).assign(&xh.mapv(|v| gamma[c] * v + beta[c]));
    }
    let stats = train.then_some((mean, unbiased));
    (y, BnCache { xhat, inv_std, train }, stats)
}

pub struct BnGrads {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub input: Array2<f64>,
}

pub fn bn_backward(dy: &Array2<f64>, cache: &BnCache, channels: usize, gamma: &[f64]) -> BnGrads {
    let b = dy.nrows();
    let sp = dy.ncols() / channels;
    let count = (b * sp) as f64;
    let mut dgamma = vec![0.0; channels];
    let mut dbeta = vec![0.0; channels];
    let mut dx = Array2::zeros(dy.dim());
    for c in 0..channels {
        let cols = s![.., c * sp..(c + 1) * sp];
        let g = dy.slice(cols);
        let xh = cache.xhat.slice(cols);
        let sum_g: f64 = g.sum();
        let sum_gx: f64 = g.iter().zip(xh.iter()).map(|(a, b)| a * b).sum();
        dgamma[c] = sum_gx;
        dbeta[c] = sum_g;
        let k = gamma[c] * cache.inv_std[c];
        let mut out = dx.slice_mut(cols);
        if cache.train {
            ndarray::Zip::from(&mut out).and(&g).and(&xh).for_each(|o, &gi, &xi| {
                *o = k * (gi - sum_g / count - xi * sum_gx / count);
            });
        } else {
            ndarray::Zip::from(&mut out).and(&g).for_each(|o, &gi| *o = k * gi);
        }
    }
    BnGrads { gamma: dgamma, beta: dbeta, input: dx }
}

/// `out_len × in_len` averaging matrix with the usual adaptive-pooling bins:
/// bin `i` covers `[⌊i·L/D⌋, ⌈(i+1)·L/D⌉)`. Works for `D > L` too.
pub fn adaptive_pool_matrix(in_len: usize, out_len: usize) -> Array2<f64> {
    let mut p = Array2::zeros((out_len, in_len));
    for i in 0..out_len {
        let start = i * in_len / out_len;
        let end = ((i + 1) * in_len).div_ceil(out_len);
        let w = 1.0 / (end - start) as f64;
        for j in start..end {
            p[[i, j]] = w;
        }
    }
    p
}

/// `y = x·Wᵀ + b` with `W` stored `out × in`.
pub fn linear_forward(x: &Array2<f64>, w: &[f64], bias: &[f64], out: usize) -> Array2<f64> {
    let wm = ArrayView2::from_shape((out, x.ncols()), w).expect("weight length");
    x.dot(&wm.t()) + &ArrayView2::from_shape((1, out), bias).expect("bias length")
}

pub struct LinearGrads {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub input: Array2<f64>,
}

pub fn linear_backward(dy: &Array2<f64>, x: &Array2<f64>, w: &[f64]) -> LinearGrads {
    let wm = ArrayView2::from_shape((dy.ncols(), x.ncols()), w).expect("weight length");
    LinearGrads {
        w: dy.t().dot(x).into_iter().collect(),
        b: dy.sum_axis(Axis(0)).to_vec(),
        input: dy.dot(&wm),
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(dy: &Array2<f64>, y: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    ndarray::Zip::from(&mut dx).and(y).for_each(|d, &v| {
        if v <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

/// Gradient through `tanh` given its output.
pub fn tanh_backward(dy: &Array2<f64>, y: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    ndarray::Zip::from(&mut dx).and(y).for_each(|d, &v| *d *= 1.0 - v * v);
    dx
}

pub fn mse(pred: &Array1<f64>, target: &Array1<f64>) -> f64 {
    let n = pred.len().max(1) as f64;
    pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n
}

/// `d mse / d pred`.
pub fn mse_grad(pred: &Array1<f64>, target: &Array1<f64>) -> Array1<f64> {
    let n = pred.len().max(1) as f64;
    (pred - target) * (2.0 / n)
}
