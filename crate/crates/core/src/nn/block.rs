use alloc::vec::Vec;

use super::{
    leaky_relu, leaky_relu_backward_from_output, BatchNorm2d, BnCache, Conv2d, ConvTranspose2d,
    NormMode,
};
use crate::params::{impl_parameterized, Param, Parameterized};
use crate::{FeatureMap, Result};

/// The convolution feeding a [`ConvBnAct`] block.
#[derive(Debug, Clone)]
pub enum ConvKind {
    Regular(Conv2d),
    Transposed(ConvTranspose2d),
}

impl ConvKind {
    pub fn out_channels(&self) -> usize {
        match self {
            ConvKind::Regular(c) => c.out_channels(),
            ConvKind::Transposed(c) => c.out_channels(),
        }
    }

    fn forward_batch(&self, xs: &[FeatureMap]) -> Result<Vec<FeatureMap>> {
        match self {
            ConvKind::Regular(c) => c.forward_batch(xs),
            ConvKind::Transposed(c) => c.forward_batch(xs),
        }
    }

    fn backward(
        &mut self,
        inputs: &[FeatureMap],
        grad: &[FeatureMap],
        need_input_grad: bool,
    ) -> Option<Vec<FeatureMap>> {
        match self {
            ConvKind::Regular(c) => c.backward(inputs, grad, need_input_grad),
            ConvKind::Transposed(c) => c.backward(inputs, grad, need_input_grad),
        }
    }
}

impl Parameterized for ConvKind {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        match self {
            ConvKind::Regular(c) => c.visit(prefix, f),
            ConvKind::Transposed(c) => c.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        match self {
            ConvKind::Regular(c) => c.visit_mut(prefix, f),
            ConvKind::Transposed(c) => c.visit_mut(prefix, f),
        }
    }
}

/// Convolution, batch normalization, leaky rectifier.
#[derive(Debug, Clone)]
pub struct ConvBnAct {
    pub conv: ConvKind,
    pub bn: BatchNorm2d,
}

impl_parameterized!(ConvBnAct { conv, bn });

#[derive(Debug, Clone)]
pub struct ConvBnActCache {
    bn: BnCache,
    output: Vec<FeatureMap>,
}

impl ConvBnActCache {
    pub fn output(&self) -> &[FeatureMap] {
        &self.output
    }

    pub fn into_output(self) -> Vec<FeatureMap> {
        self.output
    }
}

impl ConvBnAct {
    pub fn new(conv: ConvKind) -> Self {
        let bn = BatchNorm2d::new(conv.out_channels());
        Self { conv, bn }
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels()
    }

    pub fn forward(&self, xs: &[FeatureMap], mode: NormMode) -> Result<ConvBnActCache> {
        let pre = self.conv.forward_batch(xs)?;
        let (mut output, bn) = self.bn.forward(&pre, mode);
        drop(pre);
        for y in &mut output {
            y.data_mut().iter_mut().for_each(|v| *v = leaky_relu(*v));
        }
        Ok(ConvBnActCache { bn, output })
    }

    /// `inputs` must be the batch passed to the matching forward call.
    pub fn backward(
        &mut self,
        inputs: &[FeatureMap],
        cache: &ConvBnActCache,
        grad_out: Vec<FeatureMap>,
        need_input_grad: bool,
    ) -> Option<Vec<FeatureMap>> {
        let mut grad = grad_out;
        for (g, y) in grad.iter_mut().zip(&cache.output) {
            leaky_relu_backward_from_output(y, g);
        }
        let grad = self.bn.backward(&cache.bn, &grad);
        self.conv.backward(inputs, &grad, need_input_grad)
    }

    pub fn update_running(&mut self, cache: &ConvBnActCache) {
        self.bn.update_running(&cache.bn);
    }
}
