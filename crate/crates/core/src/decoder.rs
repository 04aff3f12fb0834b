//! Attention upsampling blocks. Both double spatial resolution.
//!
//! The multi-scale block runs three transposed convolutions (kernels 2, 4
//! and 6) in parallel. Each branch is resampled onto the skip grid,
//! concatenated with the attention-gated skip and projected back to
//! `ch_out` channels by a 1x1 convolution. The three branches are
//! concatenated (`3 * ch_out` channels) and fused by a 1x1 convolution
//! followed by batch normalization and a leaky rectifier.
//!
//! The single-scale block has one 4x4 transposed convolution and an
//! optional gated skip.

use alloc::format;
use alloc::vec::Vec;

use crate::attention::{AttentionCache, AttentionGate};
use crate::init::{Initializer, LINEAR_GAIN, RECTIFIER_GAIN};
use crate::nn::{
    bilinear_resample, bilinear_resample_backward, Conv2d, ConvBnAct, ConvBnActCache, ConvKind,
    ConvTranspose2d, NormMode,
};
use crate::params::impl_parameterized;
use crate::{Error, FeatureMap, Result};

/// Kernel sizes of the three multi-scale branches.
pub const MSAB_KERNELS: [usize; 3] = [2, 4, 6];
/// Kernel of the single-scale block.
pub const AB_KERNEL: usize = 4;

fn check_pair(x: &FeatureMap, skip: &FeatureMap) -> Result<()> {
    if skip.height() != 2 * x.height() || skip.width() != 2 * x.width() {
        return Err(Error::ShapeMismatch(format!(
            "skip must be twice the input resolution: input {}x{}, skip {}x{}",
            x.height(),
            x.width(),
            skip.height(),
            skip.width()
        )));
    }
    Ok(())
}

fn check_channels(maps: &[FeatureMap], expected: usize) -> Result<()> {
    match maps.iter().find(|m| m.channels() != expected) {
        Some(m) => Err(Error::Channel {
            expected,
            actual: m.channels(),
        }),
        None => Ok(()),
    }
}

fn resample_all(maps: &[FeatureMap], targets: &[FeatureMap]) -> Result<Vec<FeatureMap>> {
    maps.iter()
        .zip(targets)
        .map(|(m, t)| bilinear_resample(m, t.height(), t.width()))
        .collect()
}

fn resample_back(grads: Vec<FeatureMap>, originals: &[FeatureMap]) -> Vec<FeatureMap> {
    grads
        .into_iter()
        .zip(originals)
        .map(|(g, o)| bilinear_resample_backward(&g, o.height(), o.width()))
        .collect()
}

fn concat_batches(a: &[FeatureMap], b: &[FeatureMap]) -> Result<Vec<FeatureMap>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| FeatureMap::concat_channels(&[x, y]))
        .collect()
}

fn accumulate(into: &mut [FeatureMap], from: &[FeatureMap]) {
    for (a, b) in into.iter_mut().zip(from) {
        a.add_assign(b);
    }
}

/// Multi-scaled attention upsampling block.
#[derive(Debug, Clone)]
pub struct Msab {
    pub gate: AttentionGate,
    /// Transposed convolution + BN + leaky rectifier, one per kernel in [`MSAB_KERNELS`].
    pub up: Vec<ConvBnAct>,
    /// Per-branch 1x1 projection `(ch_out + ch_skip) -> ch_out`.
    pub proj: Vec<Conv2d>,
    /// `C_f`: 1x1 fuse `3 * ch_out -> ch_out`, then BN + leaky rectifier.
    pub fuse: ConvBnAct,
    ch_in: usize,
    ch_skip: usize,
    ch_out: usize,
}

impl_parameterized!(Msab {
    gate,
    up,
    proj,
    fuse
});

#[derive(Debug, Clone)]
pub struct MsabCache {
    attention: AttentionCache,
    up: Vec<ConvBnActCache>,
    /// Per branch: concatenation of the resampled upsampling and the gated skip.
    branch_inputs: Vec<Vec<FeatureMap>>,
    prefuse: Vec<FeatureMap>,
    fuse: ConvBnActCache,
}

impl MsabCache {
    pub fn output(&self) -> &[FeatureMap] {
        self.fuse.output()
    }

    /// Channel count of the concatenation entering `C_f`.
    pub fn prefuse_channels(&self) -> usize {
        self.prefuse.first().map_or(0, FeatureMap::channels)
    }

    pub fn attention(&self) -> &AttentionCache {
        &self.attention
    }
}

impl Msab {
    pub fn new(
        ch_in: usize,
        ch_skip: usize,
        ch_out: usize,
        gate_channels: usize,
        init: &mut Initializer,
    ) -> Result<Self> {
        if ch_in == 0 || ch_skip == 0 || ch_out == 0 {
            return Err(Error::InvalidConfig(
                "decoder block channel counts must be >= 1".into(),
            ));
        }
        let gate = AttentionGate::new(ch_in, ch_skip, gate_channels, init)?;
        let up = MSAB_KERNELS
            .iter()
            .map(|&k| {
                Ok(ConvBnAct::new(ConvKind::Transposed(ConvTranspose2d::new(
                    ch_in,
                    ch_out,
                    k,
                    RECTIFIER_GAIN,
                    init,
                )?)))
            })
            .collect::<Result<Vec<_>>>()?;
        let proj = MSAB_KERNELS
            .iter()
            .map(|_| Conv2d::pointwise(ch_out + ch_skip, ch_out, false, LINEAR_GAIN, init))
            .collect();
        let fuse = ConvBnAct::new(ConvKind::Regular(Conv2d::pointwise(
            3 * ch_out,
            ch_out,
            false,
            RECTIFIER_GAIN,
            init,
        )));
        Ok(Self {
            gate,
            up,
            proj,
            fuse,
            ch_in,
            ch_skip,
            ch_out,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.ch_in
    }

    pub fn skip_channels(&self) -> usize {
        self.ch_skip
    }

    pub fn out_channels(&self) -> usize {
        self.ch_out
    }

    pub fn forward(
        &self,
        xs: &[FeatureMap],
        skips: &[FeatureMap],
        mode: NormMode,
    ) -> Result<MsabCache> {
        if xs.len() != skips.len() {
            return Err(Error::ShapeMismatch(
                "input and skip batches differ in length".into(),
            ));
        }
        check_channels(xs, self.ch_in)?;
        check_channels(skips, self.ch_skip)?;
        for (x, s) in xs.iter().zip(skips) {
            check_pair(x, s)?;
        }
        let attention = self.gate.forward_batch(xs, skips)?;
        let mut up = Vec::with_capacity(3);
        let mut branch_inputs = Vec::with_capacity(3);
        let mut branches = Vec::with_capacity(3);
        for (up_layer, proj) in self.up.iter().zip(&self.proj) {
            let cache = up_layer.forward(xs, mode)?;
            let on_skip_grid = resample_all(cache.output(), skips)?;
            let cat = concat_batches(&on_skip_grid, attention.gated())?;
            branches.push(proj.forward_batch(&cat)?);
            branch_inputs.push(cat);
            up.push(cache);
        }
        // align branches 1 and 3 with branch 2
        let reference = branches[1].clone();
        let b1 = resample_all(&branches[0], &reference)?;
        let b3 = resample_all(&branches[2], &reference)?;
        let prefuse = (0..xs.len())
            .map(|i| FeatureMap::concat_channels(&[&b1[i], &reference[i], &b3[i]]))
            .collect::<Result<Vec<_>>>()?;
        let fuse = self.fuse.forward(&prefuse, mode)?;
        Ok(MsabCache {
            attention,
            up,
            branch_inputs,
            prefuse,
            fuse,
        })
    }

    /// Returns `(d input, d skip)`.
    pub fn backward(
        &mut self,
        xs: &[FeatureMap],
        skips: &[FeatureMap],
        cache: &MsabCache,
        grad_out: Vec<FeatureMap>,
    ) -> (Vec<FeatureMap>, Vec<FeatureMap>) {
        let ch_out = self.ch_out;
        let d_prefuse = self
            .fuse
            .backward(&cache.prefuse, &cache.fuse, grad_out, true)
            .expect("input gradient requested");
        let mut d_branches: [Vec<FeatureMap>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for d in d_prefuse {
            let mut parts = d.split_channels(&[ch_out, ch_out, ch_out]).into_iter();
            for slot in d_branches.iter_mut() {
                slot.push(parts.next().expect("three branches"));
            }
        }
        let mut d_x: Vec<FeatureMap> = xs
            .iter()
            .map(|x| FeatureMap::zeros(x.channels(), x.height(), x.width()))
            .collect();
        let mut d_gated: Vec<FeatureMap> = skips
            .iter()
            .map(|s| FeatureMap::zeros(s.channels(), s.height(), s.width()))
            .collect();
        for (k, d_branch) in d_branches.into_iter().enumerate() {
            // the branch-2 alignment resample is the identity on this grid; its adjoint maps back
            let d_branch = resample_back(d_branch, &cache.branch_inputs[k]);
            let d_cat = self.proj[k]
                .backward(&cache.branch_inputs[k], &d_branch, true)
                .expect("input gradient requested");
            let mut d_up = Vec::with_capacity(d_cat.len());
            for (i, d) in d_cat.into_iter().enumerate() {
                let mut parts = d.split_channels(&[ch_out, self.ch_skip]).into_iter();
                d_up.push(parts.next().expect("upsampled part"));
                d_gated[i].add_assign(&parts.next().expect("gated part"));
            }
            let d_up = resample_back(d_up, cache.up[k].output());
            let d_in = self.up[k]
                .backward(xs, &cache.up[k], d_up, true)
                .expect("input gradient requested");
            accumulate(&mut d_x, &d_in);
        }
        let (d_gate_x, d_skip) = self.gate.backward(xs, skips, &cache.attention, &d_gated);
        accumulate(&mut d_x, &d_gate_x);
        (d_x, d_skip)
    }

    pub fn update_running(&mut self, cache: &MsabCache) {
        for (layer, c) in self.up.iter_mut().zip(&cache.up) {
            layer.update_running(c);
        }
        self.fuse.update_running(&cache.fuse);
    }
}

/// Single-scaled attention upsampling block.
#[derive(Debug, Clone)]
pub struct Ab {
    pub up: ConvBnAct,
    /// Present exactly when the block consumes a skip.
    pub gate: Option<AttentionGate>,
    /// 1x1 `(ch_out + ch_skip) -> ch_out`, or `ch_out -> ch_out` without a skip.
    pub fuse: ConvBnAct,
    ch_in: usize,
    ch_out: usize,
}

impl_parameterized!(Ab { up, gate, fuse });

#[derive(Debug, Clone)]
pub struct AbCache {
    up: ConvBnActCache,
    attention: Option<AttentionCache>,
    /// Fuse input when a skip is concatenated; otherwise the fuse reads `up`'s output.
    fuse_input: Option<Vec<FeatureMap>>,
    fuse: ConvBnActCache,
}

impl AbCache {
    pub fn output(&self) -> &[FeatureMap] {
        self.fuse.output()
    }
}

impl Ab {
    /// `skip` is `(skip channels, gate intermediate channels)` when the block has a skip.
    pub fn new(
        ch_in: usize,
        ch_out: usize,
        skip: Option<(usize, usize)>,
        init: &mut Initializer,
    ) -> Result<Self> {
        if ch_in == 0 || ch_out == 0 {
            return Err(Error::InvalidConfig(
                "decoder block channel counts must be >= 1".into(),
            ));
        }
        let up = ConvBnAct::new(ConvKind::Transposed(ConvTranspose2d::new(
            ch_in,
            ch_out,
            AB_KERNEL,
            RECTIFIER_GAIN,
            init,
        )?));
        let (gate, fuse_in) = match skip {
            Some((ch_skip, ch_t)) => (
                Some(AttentionGate::new(ch_in, ch_skip, ch_t, init)?),
                ch_out + ch_skip,
            ),
            None => (None, ch_out),
        };
        let fuse = ConvBnAct::new(ConvKind::Regular(Conv2d::pointwise(
            fuse_in,
            ch_out,
            false,
            RECTIFIER_GAIN,
            init,
        )));
        Ok(Self {
            up,
            gate,
            fuse,
            ch_in,
            ch_out,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.ch_in
    }

    pub fn out_channels(&self) -> usize {
        self.ch_out
    }

    pub fn has_skip(&self) -> bool {
        self.gate.is_some()
    }

    pub fn forward(
        &self,
        xs: &[FeatureMap],
        skips: Option<&[FeatureMap]>,
        mode: NormMode,
    ) -> Result<AbCache> {
        check_channels(xs, self.ch_in)?;
        let up = self.up.forward(xs, mode)?;
        let (attention, fuse_input) = match (&self.gate, skips) {
            (Some(gate), Some(skips)) => {
                if xs.len() != skips.len() {
                    return Err(Error::ShapeMismatch(
                        "input and skip batches differ in length".into(),
                    ));
                }
                for (x, s) in xs.iter().zip(skips) {
                    check_pair(x, s)?;
                }
                let attention = gate.forward_batch(xs, skips)?;
                let on_skip_grid = resample_all(up.output(), skips)?;
                let cat = concat_batches(&on_skip_grid, attention.gated())?;
                (Some(attention), Some(cat))
            }
            (None, None) => (None, None),
            (Some(_), None) => {
                return Err(Error::ShapeMismatch(
                    "block expects a skip connection".into(),
                ))
            }
            (None, Some(_)) => {
                return Err(Error::ShapeMismatch("block has no skip connection".into()))
            }
        };
        let fuse = self
            .fuse
            .forward(fuse_input.as_deref().unwrap_or(up.output()), mode)?;
        Ok(AbCache {
            up,
            attention,
            fuse_input,
            fuse,
        })
    }

    /// Returns `(d input, d skip)`; the skip gradient is `None` without a skip.
    pub fn backward(
        &mut self,
        xs: &[FeatureMap],
        skips: Option<&[FeatureMap]>,
        cache: &AbCache,
        grad_out: Vec<FeatureMap>,
    ) -> (Vec<FeatureMap>, Option<Vec<FeatureMap>>) {
        let fuse_input = cache.fuse_input.as_deref().unwrap_or(cache.up.output());
        let d_fuse_in = self
            .fuse
            .backward(fuse_input, &cache.fuse, grad_out, true)
            .expect("input gradient requested");
        match (&mut self.gate, skips, &cache.attention) {
            (Some(gate), Some(skips), Some(attention)) => {
                let mut d_up = Vec::with_capacity(d_fuse_in.len());
                let mut d_gated = Vec::with_capacity(d_fuse_in.len());
                for d in d_fuse_in {
                    let mut parts = d
                        .split_channels(&[self.ch_out, gate.skip_channels()])
                        .into_iter();
                    d_up.push(parts.next().expect("upsampled part"));
                    d_gated.push(parts.next().expect("gated part"));
                }
                let d_up = resample_back(d_up, cache.up.output());
                let mut d_x = self
                    .up
                    .backward(xs, &cache.up, d_up, true)
                    .expect("input gradient requested");
                let (d_gate_x, d_skip) = gate.backward(xs, skips, attention, &d_gated);
                accumulate(&mut d_x, &d_gate_x);
                (d_x, Some(d_skip))
            }
            _ => (
                self.up
                    .backward(xs, &cache.up, d_fuse_in, true)
                    .expect("input gradient requested"),
                None,
            ),
        }
    }

    pub fn update_running(&mut self, cache: &AbCache) {
        self.up.update_running(&cache.up);
        self.fuse.update_running(&cache.fuse);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Parameterized;
    use alloc::vec;

    fn random_map(c: usize, h: usize, w: usize, init: &mut Initializer) -> FeatureMap {
        FeatureMap::from_vec(c, h, w, init.uniform(c * h * w, 1.0)).unwrap()
    }

    fn zero_weights<M: Parameterized>(m: &mut M) {
        m.visit_mut("", &mut |name, p| {
            if !name.ends_with("gamma") && !name.ends_with("running_var") {
                p.value.iter_mut().for_each(|v| *v = 0.0)
            }
        });
    }

    #[test]
    fn msab_doubles_and_prefuse_is_three_times_out() {
        let mut init = Initializer::new(3);
        let block = Msab::new(6, 4, 5, 2, &mut init).unwrap();
        let xs = vec![
            random_map(6, 3, 4, &mut init),
            random_map(6, 3, 4, &mut init),
        ];
        let skips = vec![
            random_map(4, 6, 8, &mut init),
            random_map(4, 6, 8, &mut init),
        ];
        let cache = block.forward(&xs, &skips, NormMode::Batch).unwrap();
        assert_eq!(cache.output()[0].shape(), (5, 6, 8));
        assert_eq!(cache.prefuse_channels(), 15);
    }

    #[test]
    fn msab_zero_weights_give_zero_output() {
        let mut init = Initializer::new(4);
        let mut block = Msab::new(3, 2, 4, 1, &mut init).unwrap();
        zero_weights(&mut block);
        let xs = vec![random_map(3, 2, 2, &mut init)];
        let skips = vec![random_map(2, 4, 4, &mut init)];
        for mode in [NormMode::Batch, NormMode::Running] {
            let cache = block.forward(&xs, &skips, mode).unwrap();
            assert_eq!(cache.output()[0].shape(), (4, 4, 4));
            assert!(cache.output()[0].data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn msab_rejects_misaligned_skip() {
        let mut init = Initializer::new(4);
        let block = Msab::new(3, 2, 4, 1, &mut init).unwrap();
        let xs = vec![random_map(3, 2, 2, &mut init)];
        let bad = vec![random_map(2, 5, 4, &mut init)];
        assert!(matches!(
            block.forward(&xs, &bad, NormMode::Batch),
            Err(Error::ShapeMismatch(_))
        ));
        let wrong_ch = vec![random_map(3, 4, 4, &mut init)];
        assert!(matches!(
            block.forward(&xs, &wrong_ch, NormMode::Batch),
            Err(Error::Channel { .. })
        ));
    }

    /// With the gate zeroed, the skip enters only as `0.5 * skip`; doubling the
    /// skip and halving the projection columns that read it is a no-op.
    #[test]
    fn zero_gate_skip_enters_only_through_half_scaled_term() {
        let mut init = Initializer::new(8);
        let mut block = Msab::new(3, 2, 4, 1, &mut init).unwrap();
        zero_weights(&mut block.gate);
        let xs = vec![random_map(3, 2, 2, &mut init)];
        let skips = vec![random_map(2, 4, 4, &mut init)];
        let doubled: Vec<FeatureMap> = skips.iter().map(|s| s.map(|v| 2.0 * v)).collect();
        let mut halved = block.clone();
        for proj in &mut halved.proj {
            let cols = proj.in_channels();
            for (i, w) in proj.weight.value.iter_mut().enumerate() {
                if i % cols >= 4 {
                    *w *= 0.5;
                }
            }
        }
        let a = block.forward(&xs, &skips, NormMode::Running).unwrap();
        let b = halved.forward(&xs, &doubled, NormMode::Running).unwrap();
        for (u, v) in a.output()[0].data().iter().zip(b.output()[0].data()) {
            assert!((u - v).abs() < 1e-13);
        }
        let beta = &a.attention().coefficients()[0];
        assert!(beta.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn ab_with_and_without_skip() {
        let mut init = Initializer::new(5);
        let with = Ab::new(8, 4, Some((3, 1)), &mut init).unwrap();
        let without = Ab::new(4, 2, None, &mut init).unwrap();
        let xs = vec![random_map(8, 4, 4, &mut init)];
        let skips = vec![random_map(3, 8, 8, &mut init)];
        let c1 = with.forward(&xs, Some(&skips), NormMode::Batch).unwrap();
        assert_eq!(c1.output()[0].shape(), (4, 8, 8));
        let c2 = without.forward(c1.output(), None, NormMode::Batch).unwrap();
        assert_eq!(c2.output()[0].shape(), (2, 16, 16));
        assert_eq!(without.fuse.conv.out_channels(), 2);
        assert!(with.forward(&xs, None, NormMode::Batch).is_err());
        assert!(without
            .forward(c1.output(), Some(&skips), NormMode::Batch)
            .is_err());
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    fn check_block_gradients<M: Parameterized + Clone>(
        block: &mut M,
        objective: &dyn Fn(&M) -> f64,
        run_backward: &mut dyn FnMut(&mut M),
    ) {
        block.zero_grad();
        run_backward(block);
        let mut analytic = Vec::new();
        block.visit("", &mut |name, p| {
            if p.trainable {
                for (i, g) in p.grad.iter().enumerate() {
                    analytic.push((alloc::string::String::from(name), i, *g));
                }
            }
        });
        let h = 1e-5;
        let mut probe = block.clone();
        // every 3rd scalar keeps the test fast while touching every tensor
        for (name, i, g) in analytic.iter().step_by(3) {
            let orig = probe.scalar(name, *i).unwrap();
            probe.set_scalar(name, *i, orig + h);
            let up = objective(&probe);
            probe.set_scalar(name, *i, orig - h);
            let down = objective(&probe);
            probe.set_scalar(name, *i, orig);
            let numeric = (up - down) / (2.0 * h);
            assert!(
                rel_err(*g, numeric) < 1e-3,
                "{name}[{i}]: analytic {g} numeric {numeric}"
            );
        }
    }

    #[test]
    fn msab_parameter_gradients_match_finite_differences() {
        let mut init = Initializer::new(31);
        let mut block = Msab::new(2, 2, 2, 1, &mut init).unwrap();
        let xs = vec![
            random_map(2, 2, 2, &mut init),
            random_map(2, 2, 2, &mut init),
        ];
        let skips = vec![
            random_map(2, 4, 4, &mut init),
            random_map(2, 4, 4, &mut init),
        ];
        let w: Vec<FeatureMap> = (0..2).map(|_| random_map(2, 4, 4, &mut init)).collect();
        let objective = |b: &Msab| -> f64 {
            let c = b.forward(&xs, &skips, NormMode::Batch).unwrap();
            c.output()
                .iter()
                .zip(&w)
                .map(|(o, w)| {
                    o.data()
                        .iter()
                        .zip(w.data())
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                })
                .sum()
        };
        check_block_gradients(&mut block, &objective, &mut |b: &mut Msab| {
            let c = b.forward(&xs, &skips, NormMode::Batch).unwrap();
            b.backward(&xs, &skips, &c, w.clone());
        });
    }

    #[test]
    fn msab_input_gradients_match_finite_differences() {
        let mut init = Initializer::new(32);
        let mut block = Msab::new(2, 2, 2, 1, &mut init).unwrap();
        let xs = vec![random_map(2, 2, 2, &mut init)];
        let skips = vec![random_map(2, 4, 4, &mut init)];
        let w = vec![random_map(2, 4, 4, &mut init)];
        let objective = |b: &Msab, xs: &[FeatureMap], skips: &[FeatureMap]| -> f64 {
            let c = b.forward(xs, skips, NormMode::Running).unwrap();
            c.output()[0]
                .data()
                .iter()
                .zip(w[0].data())
                .map(|(a, b)| a * b)
                .sum()
        };
        let c = block.forward(&xs, &skips, NormMode::Running).unwrap();
        let (dx, ds) = block.backward(&xs, &skips, &c, w.clone());
        let h = 1e-5;
        for i in 0..xs[0].data().len() {
            let mut p = xs.clone();
            p[0].data_mut()[i] += h;
            let mut m = xs.clone();
            m[0].data_mut()[i] -= h;
            let numeric =
                (objective(&block, &p, &skips) - objective(&block, &m, &skips)) / (2.0 * h);
            assert!(rel_err(dx[0].data()[i], numeric) < 1e-3);
        }
        for i in 0..skips[0].data().len() {
            let mut p = skips.clone();
            p[0].data_mut()[i] += h;
            let mut m = skips.clone();
            m[0].data_mut()[i] -= h;
            let numeric = (objective(&block, &xs, &p) - objective(&block, &xs, &m)) / (2.0 * h);
            assert!(rel_err(ds[0].data()[i], numeric) < 1e-3);
        }
    }

    #[test]
    fn ab_parameter_gradients_match_finite_differences() {
        let mut init = Initializer::new(33);
        for skip in [Some((2, 1)), None] {
            let mut block = Ab::new(2, 2, skip, &mut init).unwrap();
            let xs = vec![
                random_map(2, 2, 2, &mut init),
                random_map(2, 2, 2, &mut init),
            ];
            let skips: Option<Vec<FeatureMap>> =
                skip.map(|_| (0..2).map(|_| random_map(2, 4, 4, &mut init)).collect());
            let w: Vec<FeatureMap> = (0..2).map(|_| random_map(2, 4, 4, &mut init)).collect();
            let objective = |b: &Ab| -> f64 {
                let c = b.forward(&xs, skips.as_deref(), NormMode::Batch).unwrap();
                c.output()
                    .iter()
                    .zip(&w)
                    .map(|(o, w)| {
                        o.data()
                            .iter()
                            .zip(w.data())
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                    })
                    .sum()
            };
            check_block_gradients(&mut block, &objective, &mut |b: &mut Ab| {
                let c = b.forward(&xs, skips.as_deref(), NormMode::Batch).unwrap();
                b.backward(&xs, skips.as_deref(), &c, w.clone());
            });
        }
    }
}
