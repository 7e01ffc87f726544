//! Per-channel normalization: batch statistics, frozen running statistics,
//! or per-sample (instance) statistics.

use crate::tensor::Tensor;

pub const BN_EPSILON: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

/// Which statistics normalize the activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormStats {
    /// Statistics over `(N, H, W)` per channel; running estimates are updated.
    Batch,
    /// Frozen running estimates.
    Running,
    /// Statistics over `(H, W)` per sample and channel.
    Instance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

/// Saved state for the backward pass.
#[derive(Debug, Clone)]
pub struct NormCache {
    stats: NormStats,
    xhat: Tensor,
    /// Batch mean and unbiased variance per channel, present for [`NormStats::Batch`].
    batch_moments: Option<(Vec<f32>, Vec<f32>)>,
    /// One entry per normalization group (channel, or sample-channel pair).
    inv_std: Vec<f32>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes `x`. Never touches the running estimates; see
    /// [`BatchNorm2d::update_running`].
    pub fn forward(&self, x: &Tensor, stats: NormStats) -> (Tensor, NormCache) {
        let s = x.shape();
        let plane = s.plane();
        let c_count = s.c;
        let data = x.data();
        let mut xhat = Tensor::zeros(s);
        let mut y = Tensor::zeros(s);
        let inv_std: Vec<f32>;
        let mut batch_moments = None;

        match stats {
            NormStats::Batch | NormStats::Running => {
                let mut istd = vec![0.0f32; c_count];
                let mut means = vec![0.0f32; c_count];
                let mut vars = vec![0.0f32; c_count];
                for c in 0..c_count {
                    let (mean, inv) = if stats == NormStats::Batch {
                        let m = (s.n * plane) as f64;
                        let mut sum = 0.0f64;
                        for n in 0..s.n {
                            let off = (n * c_count + c) * plane;
                            sum += data[off..off + plane].iter().map(|&v| v as f64).sum::<f64>();
                        }
                        let mean = sum / m;
                        let mut sq = 0.0f64;
                        for n in 0..s.n {
                            let off = (n * c_count + c) * plane;
                            sq += data[off..off + plane]
                                .iter()
                                .map(|&v| (v as f64 - mean).powi(2))
                                .sum::<f64>();
                        }
                        let var = sq / m;
                        let unbiased = if m > 1.0 { sq / (m - 1.0) } else { var };
                        means[c] = mean as f32;
                        vars[c] = unbiased as f32;
                        (mean as f32, (1.0 / (var + BN_EPSILON as f64).sqrt()) as f32)
                    } else {
                        (
                            self.running_mean[c],
                            1.0 / (self.running_var[c] + BN_EPSILON).sqrt(),
                        )
                    };
                    istd[c] = inv;
                    for n in 0..s.n {
                        let off = (n * c_count + c) * plane;
                        self.normalize_group(data, &mut xhat, &mut y, off, plane, c, mean, inv);
                    }
                }
                inv_std = istd;
                if stats == NormStats::Batch {
                    batch_moments = Some((means, vars));
                }
            }
            NormStats::Instance => {
                let mut istd = vec![0.0f32; s.n * c_count];
                for n in 0..s.n {
                    for c in 0..c_count {
                        let off = (n * c_count + c) * plane;
                        let chunk = &data[off..off + plane];
                        let mean = chunk.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
                        let var = chunk.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>()
                            / plane as f64;
                        let inv = (1.0 / (var + BN_EPSILON as f64).sqrt()) as f32;
                        istd[n * c_count + c] = inv;
                        self.normalize_group(data, &mut xhat, &mut y, off, plane, c, mean as f32, inv);
                    }
                }
                inv_std = istd;
            }
        }
        (
            y,
            NormCache {
                stats,
                xhat,
                batch_moments,
                inv_std,
            },
        )
    }

    /// Folds the batch moments of a [`NormStats::Batch`] pass into the
    /// running estimates with momentum [`BN_MOMENTUM`].
    pub fn update_running(&mut self, cache: &NormCache) {
        if let Some((mean, var)) = &cache.batch_moments {
            let mom = BN_MOMENTUM;
            for c in 0..self.channels() {
                self.running_mean[c] = (1.0 - mom) * self.running_mean[c] + mom * mean[c];
                self.running_var[c] = (1.0 - mom) * self.running_var[c] + mom * var[c];
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn normalize_group(
        &self,
        data: &[f32],
        xhat: &mut Tensor,
        y: &mut Tensor,
        off: usize,
        len: usize,
        c: usize,
        mean: f32,
        inv: f32,
    ) {
        let (g, b) = (self.gamma[c], self.beta[c]);
        let xh = &mut xhat.data_mut()[off..off + len];
        for (dst, &v) in xh.iter_mut().zip(&data[off..off + len]) {
            *dst = (v - mean) * inv;
        }
        for (dst, &v) in y.data_mut()[off..off + len].iter_mut().zip(xhat.data()[off..off + len].iter()) {
            *dst = v * g + b;
        }
    }

    /// Accumulates `dgamma`, `dbeta` and returns the input gradient.
    pub fn backward(&self, cache: &NormCache, dy: &Tensor, grad_gamma: &mut [f32], grad_beta: &mut [f32]) -> Tensor {
        let s = dy.shape();
        let plane = s.plane();
        let c_count = s.c;
        let xhat = cache.xhat.data();
        let g = dy.data();
        let mut dx = Tensor::zeros(s);

        for c in 0..c_count {
            let mut dgamma = 0.0f64;
            let mut dbeta = 0.0f64;
            for n in 0..s.n {
                let off = (n * c_count + c) * plane;
                for i in off..off + plane {
                    dgamma += g[i] as f64 * xhat[i] as f64;
                    dbeta += g[i] as f64;
                }
            }
            grad_gamma[c] += dgamma as f32;
            grad_beta[c] += dbeta as f32;
        }

        let out = dx.data_mut();
        match cache.stats {
            NormStats::Running => {
                for n in 0..s.n {
                    for c in 0..c_count {
                        let scale = self.gamma[c] * cache.inv_std[c];
                        let off = (n * c_count + c) * plane;
                        for i in off..off + plane {
                            out[i] = g[i] * scale;
                        }
                    }
                }
            }
            NormStats::Batch => {
                let m = (s.n * plane) as f64;
                for c in 0..c_count {
                    let (mut sum_g, mut sum_gx) = (0.0f64, 0.0f64);
                    for n in 0..s.n {
                        let off = (n * c_count + c) * plane;
                        for i in off..off + plane {
                            sum_g += g[i] as f64;
                            sum_gx += g[i] as f64 * xhat[i] as f64;
                        }
                    }
                    let k = self.gamma[c] as f64 * cache.inv_std[c] as f64 / m;
                    for n in 0..s.n {
                        let off = (n * c_count + c) * plane;
                        for i in off..off + plane {
                            out[i] = (k * (m * g[i] as f64 - sum_g - xhat[i] as f64 * sum_gx)) as f32;
                        }
                    }
                }
            }
            NormStats::Instance => {
                let m = plane as f64;
                for n in 0..s.n {
                    for c in 0..c_count {
                        let off = (n * c_count + c) * plane;
                        let range = off..off + plane;
                        let sum_g: f64 = g[range.clone()].iter().map(|&v| v as f64).sum();
                        let sum_gx: f64 = g[range.clone()]
                            .iter()
                            .zip(&xhat[range.clone()])
                            .map(|(&a, &b)| a as f64 * b as f64)
                            .sum();
                        let k = self.gamma[c] as f64 * cache.inv_std[n * c_count + c] as f64 / m;
                        for i in range {
                            out[i] = (k * (m * g[i] as f64 - sum_g - xhat[i] as f64 * sum_gx)) as f32;
                        }
                    }
                }
            }
        }
        dx
    }
}
