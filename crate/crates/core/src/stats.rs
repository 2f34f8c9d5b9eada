//! Small statistics helpers for training curves and policy comparisons.

use statrs::distribution::{ContinuousCDF, StudentsT};

/// Trailing moving average; element `i` averages `v[i + 1 - w ..= i]`.
/// Empty when `v` is shorter than `w`.
pub fn moving_average(v: &[f64], w: usize) -> Vec<f64> {
    if w == 0 || v.len() < w {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(v.len() + 1 - w);
    let mut sum: f64 = v[..w].iter().sum();
    out.push(sum / w as f64);
    for i in w..v.len() {
        sum += v[i] - v[i - w];
        out.push(sum / w as f64);
    }
    out
}

/// Means of consecutive non-overlapping blocks of `w` values; a trailing
/// partial block is dropped.
pub fn block_means(v: &[f64], w: usize) -> Vec<f64> {
    if w == 0 {
        return Vec::new();
    }
    v.chunks_exact(w).map(|c| c.iter().sum::<f64>() / w as f64).collect()
}

pub fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|p| p[1] > p[0])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchTest {
    pub t: f64,
    pub dof: f64,
    /// One-sided p-value for `mean(a) > mean(b)`.
    pub p_greater: f64,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
}

/// Two-sample t-test without the equal-variance assumption. Needs at least
/// two values per sample; returns `None` otherwise or when both samples are
/// constant.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Option<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 <= 0.0 {
        return None;
    }
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, dof).ok()?;
    Some(WelchTest { t, dof, p_greater: 1.0 - dist.cdf(t) })
}
