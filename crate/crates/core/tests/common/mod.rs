//! Independent reference implementations shared by the integration tests
//! and the acceptance runner.

#![allow(dead_code)]

pub mod gradcheck;

use std::collections::HashMap;

use rand::Rng;
use railscan::model::{LayerKind, Network};
use railscan::nn::Activation;
use railscan::Tensor;

const BN_EPS: f64 = 1e-5;

/// How the reference normalizes batch-norm stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefNorm {
    Running,
    Instance,
}

/// One sample's activations, `(c, h, w)` flattened, in f64.
#[derive(Debug, Clone)]
pub struct Plane {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

fn direct_conv(x: &Plane, w: &[f32], b: Option<&[f32]>, out_c: usize, k: usize, s: usize, p: usize) -> Plane {
    let oh = (x.h + 2 * p - k) / s + 1;
    let ow = (x.w + 2 * p - k) / s + 1;
    let mut v = vec![0.0; out_c * oh * ow];
    for o in 0..out_c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b.map_or(0.0, |b| b[o] as f64);
                for c in 0..x.c {
                    for ky in 0..k {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix < 0 || ix >= x.w as isize {
                                continue;
                            }
                            let wi = ((o * x.c + c) * k + ky) * k + kx;
                            acc += w[wi] as f64 * x.v[(c * x.h + iy as usize) * x.w + ix as usize];
                        }
                    }
                }
                v[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    Plane { c: out_c, h: oh, w: ow, v }
}

#[allow(clippy::too_many_arguments)]
fn direct_conv_transpose(
    x: &Plane,
    w: &[f32],
    b: Option<&[f32]>,
    out_c: usize,
    k: usize,
    s: usize,
    p: usize,
    op: usize,
) -> Plane {
    let oh = (x.h - 1) * s + k + op - 2 * p;
    let ow = (x.w - 1) * s + k + op - 2 * p;
    let mut v = vec![0.0; out_c * oh * ow];
    for c in 0..x.c {
        for iy in 0..x.h {
            for ix in 0..x.w {
                let xv = x.v[(c * x.h + iy) * x.w + ix];
                for o in 0..out_c {
                    for ky in 0..k {
                        let oy = (iy * s + ky) as isize - p as isize;
                        if oy < 0 || oy >= oh as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ox = (ix * s + kx) as isize - p as isize;
                            if ox < 0 || ox >= ow as isize {
                                continue;
                            }
                            let wi = ((c * out_c + o) * k + ky) * k + kx;
                            v[(o * oh + oy as usize) * ow + ox as usize] += w[wi] as f64 * xv;
                        }
                    }
                }
            }
        }
    }
    if let Some(b) = b {
        for o in 0..out_c {
            v[o * oh * ow..(o + 1) * oh * ow].iter_mut().for_each(|e| *e += b[o] as f64);
        }
    }
    Plane { c: out_c, h: oh, w: ow, v }
}

fn activate(a: Activation, v: f64) -> f64 {
    match a {
        Activation::LeakyRelu => {
            if v > 0.0 {
                v
            } else {
                0.01 * v
            }
        }
        Activation::Relu => v.max(0.0),
        Activation::Tanh => v.tanh(),
        Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
        Activation::None => v,
    }
}

/// Post-activation output of every stage for one sample, eval semantics
/// (no dropout).
pub fn reference_forward(net: &Network, sample: &[f32], shape: (usize, usize, usize), norm: RefNorm) -> Vec<Plane> {
    let params: HashMap<String, Vec<f32>> = net.named_tensors().into_iter().map(|t| (t.name, t.data)).collect();
    let role = net.role().name();
    let mut x = Plane {
        c: shape.0,
        h: shape.1,
        w: shape.2,
        v: sample.iter().map(|&v| v as f64).collect(),
    };
    let mut outs = Vec::new();
    for (i, spec) in net.layers().iter().enumerate() {
        let w = &params[&format!("{role}.{i}.weight")];
        let b = params.get(&format!("{role}.{i}.bias")).map(|b| b.as_slice());
        let mut y = match spec.kind {
            LayerKind::TransposedConv => direct_conv_transpose(
                &x,
                w,
                b,
                spec.filters,
                spec.kernel,
                spec.stride,
                spec.padding,
                spec.output_padding,
            ),
            _ => direct_conv(&x, w, b, spec.filters, spec.kernel, spec.stride, spec.padding),
        };
        if spec.batch_norm {
            let gamma = &params[&format!("{role}.{i}.bn.gamma")];
            let beta = &params[&format!("{role}.{i}.bn.beta")];
            let rm = &params[&format!("{role}.{i}.bn.running_mean")];
            let rv = &params[&format!("{role}.{i}.bn.running_var")];
            let plane = y.h * y.w;
            for c in 0..y.c {
                let ch = &mut y.v[c * plane..(c + 1) * plane];
                let (mean, var) = match norm {
                    RefNorm::Running => (rm[c] as f64, rv[c] as f64),
                    RefNorm::Instance => {
                        let m = ch.iter().sum::<f64>() / plane as f64;
                        (m, ch.iter().map(|v| (v - m).powi(2)).sum::<f64>() / plane as f64)
                    }
                };
                let inv = 1.0 / (var + BN_EPS).sqrt();
                ch.iter_mut()
                    .for_each(|v| *v = gamma[c] as f64 * (*v - mean) * inv + beta[c] as f64);
            }
        }
        y.v.iter_mut().for_each(|v| *v = activate(spec.activation, *v));
        outs.push(y.clone());
        x = y;
    }
    outs
}

/// Fills every batch-norm tensor with random values so running-statistic
/// paths are exercised; variances stay positive.
pub fn randomize_norm_stats<R: Rng>(net: &mut Network, rng: &mut R) {
    let tensors = net.named_tensors();
    let replaced: HashMap<String, railscan::model::NamedTensor> = tensors
        .into_iter()
        .map(|mut t| {
            if t.name.ends_with("running_var") {
                t.data.iter_mut().for_each(|v| *v = rng.random_range(0.5..2.0));
            } else if t.name.ends_with("running_mean") || t.name.ends_with("bn.beta") {
                t.data.iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
            } else if t.name.ends_with("bn.gamma") {
                t.data.iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
            }
            (t.name.clone(), t)
        })
        .collect();
    net.load_named(&|n| replaced.get(n).cloned()).unwrap();
}

/// `||a - b|| / ||b||`.
pub fn rel_err(a: &[f32], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

/// Fraction of positive/negative pairs ranked correctly, ties counting half.
pub fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// `(tp, fp)` at threshold `t` by direct counting.
pub fn recount(scores: &[f64], labels: &[bool], t: f64) -> (usize, usize) {
    let mut tp = 0;
    let mut fp = 0;
    for (&s, &l) in scores.iter().zip(labels) {
        if s >= t {
            if l {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    (tp, fp)
}

/// Random scores on a coarse grid so ties are common; both labels present.
pub fn random_scored_set<R: Rng>(rng: &mut R, max_n: usize) -> (Vec<f64>, Vec<bool>) {
    loop {
        let n = rng.random_range(2..=max_n);
        let levels = rng.random_range(2..=n.max(3));
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
            return (scores, labels);
        }
    }
}

/// Central-difference gradient of `f` at `x`. The actual step taken in f32
/// is used as the denominator.
pub fn numeric_grad(x: &Tensor, h: f32, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus.data_mut()[i] += h;
        minus.data_mut()[i] -= h;
        let step = plus.data()[i] as f64 - minus.data()[i] as f64;
        g.push((f(&plus) - f(&minus)) / step);
    }
    g
}

/// Vector relative error `||a - n|| / max(||a||, ||n||)`.
pub fn grad_rel_err(analytic: &[f32], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a as f64 - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = analytic.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-12)
}
