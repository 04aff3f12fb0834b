use alloc::vec;
use alloc::vec::Vec;

use crate::params::{impl_parameterized, Param};
use crate::FeatureMap;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Which statistics batch normalization uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Statistics of the current batch (training).
    Batch,
    /// Stored running statistics (inference, gradient checks).
    Running,
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub momentum: f64,
    pub eps: f64,
}

impl_parameterized!(BatchNorm2d {
    gamma,
    beta,
    running_mean,
    running_var
});

#[derive(Debug, Clone)]
pub struct BnCache {
    mode: NormMode,
    xhat: Vec<FeatureMap>,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
    count: usize,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(&[channels], vec![1.0; channels]),
            beta: Param::zeros(&[channels]),
            running_mean: Param::buffer(&[channels], 0.0),
            running_var: Param::buffer(&[channels], 1.0),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, xs: &[FeatureMap], mode: NormMode) -> (Vec<FeatureMap>, BnCache) {
        let channels = self.channels();
        let count = xs.iter().map(FeatureMap::plane_len).sum::<usize>();
        let (mean, var) = match mode {
            NormMode::Batch => {
                let mut mean = vec![0.0; channels];
                let mut var = vec![0.0; channels];
                for c in 0..channels {
                    let s: f64 = xs.iter().map(|x| x.plane(c).iter().sum::<f64>()).sum();
                    let m = s / count as f64;
                    let v: f64 = xs
                        .iter()
                        .map(|x| x.plane(c).iter().map(|&v| (v - m) * (v - m)).sum::<f64>())
                        .sum();
                    mean[c] = m;
                    var[c] = v / count as f64;
                }
                (mean, var)
            }
            NormMode::Running => (
                self.running_mean.value.clone(),
                self.running_var.value.clone(),
            ),
        };
        let inv_std: Vec<f64> = var
            .iter()
            .map(|&v| 1.0 / libm::sqrt(v + self.eps))
            .collect();
        let mut xhat = Vec::with_capacity(xs.len());
        let mut out = Vec::with_capacity(xs.len());
        for x in xs {
            let mut h = x.clone();
            let mut y = x.clone();
            for c in 0..channels {
                let (m, s, g, b) = (mean[c], inv_std[c], self.gamma.value[c], self.beta.value[c]);
                for (hv, yv) in h.plane_mut(c).iter_mut().zip(y.plane_mut(c)) {
                    *hv = (*hv - m) * s;
                    *yv = g * *hv + b;
                }
            }
            xhat.push(h);
            out.push(y);
        }
        (
            out,
            BnCache {
                mode,
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
                count,
            },
        )
    }

    pub fn backward(&mut self, cache: &BnCache, grad_out: &[FeatureMap]) -> Vec<FeatureMap> {
        let channels = self.channels();
        let mut sum_dy = vec![0.0; channels];
        let mut sum_dy_xhat = vec![0.0; channels];
        for (gy, xh) in grad_out.iter().zip(&cache.xhat) {
            for c in 0..channels {
                for (&g, &h) in gy.plane(c).iter().zip(xh.plane(c)) {
                    sum_dy[c] += g;
                    sum_dy_xhat[c] += g * h;
                }
            }
        }
        for (slot, v) in self.gamma.grad_mut().iter_mut().zip(&sum_dy_xhat) {
            *slot += v;
        }
        for (slot, v) in self.beta.grad_mut().iter_mut().zip(&sum_dy) {
            *slot += v;
        }
        let n = cache.count as f64;
        grad_out
            .iter()
            .zip(&cache.xhat)
            .map(|(gy, xh)| {
                let mut gx = gy.clone();
                for c in 0..channels {
                    let scale = self.gamma.value[c] * cache.inv_std[c];
                    match cache.mode {
                        NormMode::Running => gx.plane_mut(c).iter_mut().for_each(|g| *g *= scale),
                        NormMode::Batch => {
                            let (mean_dy, mean_dy_xhat) = (sum_dy[c] / n, sum_dy_xhat[c] / n);
                            for (g, &h) in gx.plane_mut(c).iter_mut().zip(xh.plane(c)) {
                                *g = scale * (*g - mean_dy - h * mean_dy_xhat);
                            }
                        }
                    }
                }
                gx
            })
            .collect()
    }

    /// Folds batch statistics into the running estimates (unbiased variance).
    pub fn update_running(&mut self, cache: &BnCache) {
        if cache.mode != NormMode::Batch {
            return;
        }
        let m = self.momentum;
        let correction = if cache.count > 1 {
            cache.count as f64 / (cache.count - 1) as f64
        } else {
            1.0
        };
        for c in 0..self.channels() {
            self.running_mean.value[c] =
                (1.0 - m) * self.running_mean.value[c] + m * cache.batch_mean[c];
            self.running_var.value[c] =
                (1.0 - m) * self.running_var.value[c] + m * cache.batch_var[c] * correction;
        }
    }
}
