//! Additive attention gate.
//!
//! Given a coarse gating map `x` (`ch_x x h x w`) and a skip map `y`
//! (`ch_y x 2h x 2w`):
//!
//! ```text
//! a    = up(C_x^T x) + C_y^T y + b_x        (projection, then bilinear upsampling)
//! b    = phi^T relu(a) + b_phi
//! beta = sigmoid(b)                         (one coefficient per pixel)
//! out  = y * beta                           (broadcast over channels)
//! ```
//!
//! `C_x` carries no bias, so projecting before upsampling is the same as
//! upsampling first and is four times cheaper.

use alloc::format;
use alloc::vec::Vec;

use crate::init::{Initializer, LINEAR_GAIN};
use crate::nn::{bilinear_resample, bilinear_resample_backward, relu, sigmoid, Conv2d};
use crate::params::{impl_parameterized, Param};
use crate::{Error, FeatureMap, Result};

/// Intermediate width `Ch_T` when none is configured: half the skip channels, at least 1.
pub fn default_intermediate_channels(skip_channels: usize) -> usize {
    (skip_channels / 2).max(1)
}

/// Learnable parameters of one gate: `C_x`, `C_y`, `b_x`, `phi`, `b_phi`.
#[derive(Debug, Clone)]
pub struct AttentionGate {
    pub c_x: Conv2d,
    pub c_y: Conv2d,
    pub b_x: Param,
    pub phi: Conv2d,
    pub b_phi: Param,
}

impl_parameterized!(AttentionGate {
    c_x,
    c_y,
    b_x,
    phi,
    b_phi
});

/// Per-pixel attention coefficients, `1 x H x W`, each in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub coeffs: FeatureMap,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    /// `a` before the rectifier, at skip resolution.
    pre: Vec<FeatureMap>,
    beta: Vec<FeatureMap>,
    gated: Vec<FeatureMap>,
}

impl AttentionCache {
    pub fn gated(&self) -> &[FeatureMap] {
        &self.gated
    }

    pub fn coefficients(&self) -> &[FeatureMap] {
        &self.beta
    }
}

impl AttentionGate {
    pub fn new(
        gate_channels: usize,
        skip_channels: usize,
        intermediate: usize,
        init: &mut Initializer,
    ) -> Result<Self> {
        if intermediate == 0 || gate_channels == 0 || skip_channels == 0 {
            return Err(Error::InvalidConfig(
                "attention gate channel counts must be >= 1".into(),
            ));
        }
        Ok(Self {
            c_x: Conv2d::pointwise(gate_channels, intermediate, false, LINEAR_GAIN, init),
            c_y: Conv2d::pointwise(skip_channels, intermediate, false, LINEAR_GAIN, init),
            b_x: Param::zeros(&[intermediate]),
            phi: Conv2d::pointwise(intermediate, 1, false, LINEAR_GAIN, init),
            b_phi: Param::zeros(&[1]),
        })
    }

    pub fn gate_channels(&self) -> usize {
        self.c_x.in_channels()
    }

    pub fn skip_channels(&self) -> usize {
        self.c_y.in_channels()
    }

    pub fn intermediate_channels(&self) -> usize {
        self.b_x.len()
    }

    fn check(&self, gate: &FeatureMap, skip: &FeatureMap) -> Result<()> {
        if gate.channels() != self.gate_channels() {
            return Err(Error::Channel {
                expected: self.gate_channels(),
                actual: gate.channels(),
            });
        }
        if skip.channels() != self.skip_channels() {
            return Err(Error::Channel {
                expected: self.skip_channels(),
                actual: skip.channels(),
            });
        }
        if skip.height() != 2 * gate.height() || skip.width() != 2 * gate.width() {
            return Err(Error::ShapeMismatch(format!(
                "attention gate expects the skip at twice the gating resolution, got {}x{} gating and {}x{} skip",
                gate.height(),
                gate.width(),
                skip.height(),
                skip.width()
            )));
        }
        Ok(())
    }

    /// Gates a single skip map. Returns the gated skip and the coefficients.
    pub fn forward(
        &self,
        gate: &FeatureMap,
        skip: &FeatureMap,
    ) -> Result<(FeatureMap, AttentionMap)> {
        let mut cache =
            self.forward_batch(core::slice::from_ref(gate), core::slice::from_ref(skip))?;
        let gated = cache.gated.pop().expect("one sample in, one sample out");
        let coeffs = cache.beta.pop().expect("one sample in, one sample out");
        Ok((gated, AttentionMap { coeffs }))
    }

    pub fn forward_batch(
        &self,
        gates: &[FeatureMap],
        skips: &[FeatureMap],
    ) -> Result<AttentionCache> {
        if gates.len() != skips.len() {
            return Err(Error::ShapeMismatch(
                "gating and skip batches differ in length".into(),
            ));
        }
        let mut cache = AttentionCache {
            pre: Vec::with_capacity(gates.len()),
            beta: Vec::with_capacity(gates.len()),
            gated: Vec::with_capacity(gates.len()),
        };
        for (x, y) in gates.iter().zip(skips) {
            self.check(x, y)?;
            let gx = self.c_x.forward(x)?;
            let mut a = bilinear_resample(&gx, y.height(), y.width())?;
            a.add_assign(&self.c_y.forward(y)?);
            for (t, &b) in self.b_x.value.iter().enumerate() {
                a.plane_mut(t).iter_mut().for_each(|v| *v += b);
            }
            let b = self.phi.forward(&a.map(relu))?;
            let b_phi = self.b_phi.value[0];
            let beta = b.map(|v| sigmoid(v + b_phi));
            let mut gated = y.clone();
            for c in 0..gated.channels() {
                gated
                    .plane_mut(c)
                    .iter_mut()
                    .zip(beta.data())
                    .for_each(|(g, &s)| *g *= s);
            }
            cache.pre.push(a);
            cache.beta.push(beta);
            cache.gated.push(gated);
        }
        Ok(cache)
    }

    /// Returns `(d gate, d skip)`.
    pub fn backward(
        &mut self,
        gates: &[FeatureMap],
        skips: &[FeatureMap],
        cache: &AttentionCache,
        grad_gated: &[FeatureMap],
    ) -> (Vec<FeatureMap>, Vec<FeatureMap>) {
        let mut d_gates = Vec::with_capacity(gates.len());
        let mut d_skips = Vec::with_capacity(gates.len());
        for (i, ((x, y), dg)) in gates.iter().zip(skips).zip(grad_gated).enumerate() {
            let beta = &cache.beta[i];
            let pre = &cache.pre[i];
            let mut d_skip = dg.clone();
            let mut d_beta = FeatureMap::zeros(1, y.height(), y.width());
            for c in 0..y.channels() {
                let (dgp, yp) = (dg.plane(c), y.plane(c));
                for (p, ds) in d_skip.plane_mut(c).iter_mut().enumerate() {
                    *ds *= beta.data()[p];
                }
                for (p, db) in d_beta.data_mut().iter_mut().enumerate() {
                    *db += dgp[p] * yp[p];
                }
            }
            // through the sigmoid
            for (db, &s) in d_beta.data_mut().iter_mut().zip(beta.data()) {
                *db *= s * (1.0 - s);
            }
            self.b_phi.grad_mut()[0] += d_beta.data().iter().sum::<f64>();
            let rectified = pre.map(relu);
            let mut d_pre = self
                .phi
                .backward(
                    core::slice::from_ref(&rectified),
                    core::slice::from_ref(&d_beta),
                    true,
                )
                .expect("input gradient requested")
                .pop()
                .expect("one sample");
            for (d, &a) in d_pre.data_mut().iter_mut().zip(pre.data()) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            let gb = self.b_x.grad_mut();
            for (t, slot) in gb.iter_mut().enumerate() {
                *slot += d_pre.plane(t).iter().sum::<f64>();
            }
            let d_proj_y = self
                .c_y
                .backward(
                    core::slice::from_ref(y),
                    core::slice::from_ref(&d_pre),
                    true,
                )
                .expect("input gradient requested")
                .pop()
                .expect("one sample");
            d_skip.add_assign(&d_proj_y);
            let d_gx = bilinear_resample_backward(&d_pre, x.height(), x.width());
            let d_gate = self
                .c_x
                .backward(core::slice::from_ref(x), core::slice::from_ref(&d_gx), true)
                .expect("input gradient requested")
                .pop()
                .expect("one sample");
            d_gates.push(d_gate);
            d_skips.push(d_skip);
        }
        (d_gates, d_skips)
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::params::Parameterized;
    use alloc::vec;

    fn zero_gate(ch_x: usize, ch_y: usize, ch_t: usize) -> AttentionGate {
        let mut g = AttentionGate::new(ch_x, ch_y, ch_t, &mut Initializer::new(0)).unwrap();
        g.visit_mut("", &mut |_, p| p.value.iter_mut().for_each(|v| *v = 0.0));
        g
    }

    fn random_map(
        c: usize,
        h: usize,
        w: usize,
        init: &mut Initializer,
        lo: f64,
        hi: f64,
    ) -> FeatureMap {
        let v = init
            .uniform(c * h * w, 1.0)
            .into_iter()
            .map(|u| lo + (u + 1.0) * 0.5 * (hi - lo))
            .collect();
        FeatureMap::from_vec(c, h, w, v).unwrap()
    }

    #[test]
    fn zero_parameters_give_half() {
        let gate = zero_gate(3, 2, 1);
        let mut init = Initializer::new(7);
        let x = random_map(3, 2, 3, &mut init, -1.0, 1.0);
        let y = random_map(2, 4, 6, &mut init, -1.0, 1.0);
        let (gated, attn) = gate.forward(&x, &y).unwrap();
        assert!(attn.coeffs.data().iter().all(|&b| b == 0.5));
        for (g, s) in gated.data().iter().zip(y.data()) {
            assert_eq!(*g, 0.5 * s);
        }
    }

    #[test]
    fn hand_evaluated_scalar_case() {
        // C_x=[2], C_y=[3], b_x=[-1], phi=[1], b_phi=0, x=1.0, y=0.5
        let mut gate = zero_gate(1, 1, 1);
        gate.c_x.weight.value = vec![2.0];
        gate.c_y.weight.value = vec![3.0];
        gate.b_x.value = vec![-1.0];
        gate.phi.weight.value = vec![1.0];
        let x = FeatureMap::filled(1, 1, 1, 1.0);
        let y = FeatureMap::filled(1, 2, 2, 0.5);
        let (gated, attn) = gate.forward(&x, &y).unwrap();
        let a = 2.0 * 1.0 + 3.0 * 0.5 - 1.0;
        assert_eq!(a, 2.5);
        let beta = 1.0 / (1.0 + (-2.5f64).exp());
        for &b in attn.coeffs.data() {
            assert!((b - beta).abs() < 1e-15);
        }
        for &g in gated.data() {
            assert!((g - 0.5 * beta).abs() < 1e-15);
        }
    }

    #[test]
    fn coefficients_strictly_inside_unit_interval() {
        let mut init = Initializer::new(11);
        let gate = AttentionGate::new(4, 3, 2, &mut init).unwrap();
        for _ in 0..20 {
            let x = random_map(4, 3, 3, &mut init, -5.0, 5.0);
            let y = random_map(3, 6, 6, &mut init, -5.0, 5.0);
            let (_, attn) = gate.forward(&x, &y).unwrap();
            assert!(attn.coeffs.data().iter().all(|&b| b > 0.0 && b < 1.0));
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let gate = zero_gate(2, 2, 1);
        let x = FeatureMap::zeros(2, 2, 2);
        assert!(matches!(
            gate.forward(&x, &FeatureMap::zeros(2, 3, 4)),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            gate.forward(&x, &FeatureMap::zeros(3, 4, 4)),
            Err(Error::Channel { .. })
        ));
        assert!(matches!(
            gate.forward(&FeatureMap::zeros(1, 2, 2), &FeatureMap::zeros(2, 4, 4)),
            Err(Error::Channel { .. })
        ));
    }

    #[test]
    fn gated_over_skip_equals_beta() {
        let mut init = Initializer::new(5);
        let gate = AttentionGate::new(2, 3, 2, &mut init).unwrap();
        let x = random_map(2, 2, 2, &mut init, -1.0, 1.0);
        let y = random_map(3, 4, 4, &mut init, 0.1, 2.0);
        let (gated, attn) = gate.forward(&x, &y).unwrap();
        for c in 0..3 {
            for p in 0..16 {
                let ratio = gated.plane(c)[p] / y.plane(c)[p];
                assert!((ratio - attn.coeffs.data()[p]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn coefficients_invariant_to_skip_channel_permutation() {
        let mut init = Initializer::new(9);
        let gate = AttentionGate::new(2, 3, 2, &mut init).unwrap();
        let x = random_map(2, 2, 2, &mut init, -1.0, 1.0);
        let y = random_map(3, 4, 4, &mut init, -1.0, 1.0);
        let perm = [2usize, 0, 1];
        let y_perm = FeatureMap::from_fn(3, 4, 4, |c, i, j| y.get(perm[c], i, j));
        let mut permuted = gate.clone();
        // C_y weight layout is [ch_t, ch_y]; permute its input columns the same way
        for t in 0..2 {
            for c in 0..3 {
                permuted.c_y.weight.value[t * 3 + c] = gate.c_y.weight.value[t * 3 + perm[c]];
            }
        }
        let (_, a) = gate.forward(&x, &y).unwrap();
        let (_, b) = permuted.forward(&x, &y_perm).unwrap();
        for (u, v) in a.coeffs.data().iter().zip(b.coeffs.data()) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut init = Initializer::new(17);
        let mut gate = AttentionGate::new(2, 2, 2, &mut init).unwrap();
        gate.b_x.value = vec![0.1, -0.05];
        gate.b_phi.value = vec![0.2];
        let x = random_map(2, 2, 2, &mut init, -1.0, 1.0);
        let y = random_map(2, 4, 4, &mut init, -1.0, 1.0);
        let w = random_map(2, 4, 4, &mut init, -1.0, 1.0);
        let objective = |g: &AttentionGate, x: &FeatureMap, y: &FeatureMap| -> f64 {
            let (gated, _) = g.forward(x, y).unwrap();
            gated.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
        };
        let cache = gate
            .forward_batch(core::slice::from_ref(&x), core::slice::from_ref(&y))
            .unwrap();
        let (dx, dy) = gate.backward(
            core::slice::from_ref(&x),
            core::slice::from_ref(&y),
            &cache,
            core::slice::from_ref(&w),
        );
        let h = 1e-6;

        let mut analytic = Vec::new();
        gate.visit("", &mut |_, p| analytic.extend_from_slice(&p.grad));
        let mut idx = 0;
        let mut probe = gate.clone();
        for (name, shape) in gate.tensor_layout() {
            let n: usize = shape.iter().product();
            for i in 0..n {
                let orig = probe.scalar(&name, i).unwrap();
                probe.set_scalar(&name, i, orig + h);
                let up = objective(&probe, &x, &y);
                probe.set_scalar(&name, i, orig - h);
                let down = objective(&probe, &x, &y);
                probe.set_scalar(&name, i, orig);
                let numeric = (up - down) / (2.0 * h);
                assert!(
                    rel_err(analytic[idx], numeric) < 1e-4,
                    "{name}[{i}]: {} vs {numeric}",
                    analytic[idx]
                );
                idx += 1;
            }
        }

        for i in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let numeric = (objective(&gate, &xp, &y) - objective(&gate, &xm, &y)) / (2.0 * h);
            assert!(rel_err(dx[0].data()[i], numeric) < 1e-4);
        }
        for i in 0..y.data().len() {
            let mut yp = y.clone();
            yp.data_mut()[i] += h;
            let mut ym = y.clone();
            ym.data_mut()[i] -= h;
            let numeric = (objective(&gate, &x, &yp) - objective(&gate, &x, &ym)) / (2.0 * h);
            assert!(rel_err(dy[0].data()[i], numeric) < 1e-4);
        }
    }
}
