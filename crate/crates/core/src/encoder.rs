//! Contracting path: image to bottleneck plus five skip slots.
//!
//! An encoder has six stages. Stage 0 is a stride-1 stem; stages 1-4 halve
//! resolution and provide the skips; stage 5 is the stride-32 bottleneck.
//! Skip slot 0 is the deepest (stride 16), slot 3 the stride-2 post-stem
//! feature, and slot 4 is always empty.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::init::{Initializer, RECTIFIER_GAIN};
use crate::nn::{Conv2d, ConvBnAct, ConvBnActCache, ConvKind, NormMode};
use crate::params::{Param, Parameterized};
use crate::{Error, FeatureMap, Result};

pub const NUM_STAGES: usize = 6;
pub const NUM_SKIPS: usize = 5;
/// Total downsampling of the bottleneck.
pub const OUTPUT_STRIDE: usize = 32;
const INPUT_CHANNELS: usize = 3;
/// DenseNet-style names of the stage outputs.
pub const STAGE_NAMES: [&str; NUM_STAGES] = [
    "stem",
    "relu0",
    "denseblock1",
    "denseblock2",
    "denseblock3",
    "denseblock4",
];

/// Channel and stride geometry of an encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderSpec {
    pub name: String,
    /// Stem, four skip stages, bottleneck.
    pub stage_channels: Vec<usize>,
    /// Cumulative downsampling factor of each stage's output.
    pub stage_strides: Vec<usize>,
}

impl EncoderSpec {
    /// Smallest encoder honoring the pyramid contract, for desk-scale runs.
    pub fn tiny() -> Self {
        Self {
            name: "tiny".into(),
            stage_channels: vec![16, 16, 32, 64, 128, 256],
            stage_strides: vec![1, 2, 4, 8, 16, 32],
        }
    }

    /// DenseNet-169 feature geometry: 64 channels after the stem (`relu0`),
    /// 256/512/1280 after dense blocks 1-3 and a 2208-channel bottleneck.
    ///
    /// Canonical DenseNet-169 ends in 1664 channels; 2208 is kept because it
    /// is the width the decoder was designed against.
    pub fn densenet169() -> Self {
        Self {
            name: "densenet169".into(),
            stage_channels: vec![64, 64, 256, 512, 1280, 2208],
            stage_strides: vec![1, 2, 4, 8, 16, 32],
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "tiny" => Some(Self::tiny()),
            "densenet169" => Some(Self::densenet169()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidSpec(msg));
        if self.stage_channels.len() != NUM_STAGES || self.stage_strides.len() != NUM_STAGES {
            return invalid(format!(
                "expected {NUM_STAGES} stage channels and strides, got {} and {}",
                self.stage_channels.len(),
                self.stage_strides.len()
            ));
        }
        if let Some(i) = self.stage_channels.iter().position(|&c| c == 0) {
            return invalid(format!("stage {i} has zero channels"));
        }
        if self.stage_strides[0] == 0 || self.stage_strides.windows(2).any(|w| w[1] <= w[0]) {
            return invalid(format!(
                "stage strides {:?} are not strictly increasing",
                self.stage_strides
            ));
        }
        let last = self.stage_strides[NUM_STAGES - 1];
        if last != OUTPUT_STRIDE {
            return invalid(format!("final stride is {last}, expected {OUTPUT_STRIDE}"));
        }
        // skip slot i must sit at 2^(i+1) times the bottleneck resolution
        for (stage, &stride) in self.stage_strides.iter().enumerate().skip(1) {
            let want = OUTPUT_STRIDE >> (NUM_STAGES - 1 - stage);
            if stride != want {
                return invalid(format!(
                    "stage {stage} has stride {stride}, the skip pyramid needs {want}"
                ));
            }
        }
        Ok(())
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.stage_channels[NUM_STAGES - 1]
    }

    /// Channels of skip slot `i`; `None` for the empty shallowest slot.
    pub fn skip_channels(&self, slot: usize) -> Option<usize> {
        (slot < NUM_SKIPS - 1).then(|| self.stage_channels[NUM_STAGES - 2 - slot])
    }

    /// Name of the stage feeding skip slot `slot`.
    pub fn skip_source(slot: usize) -> Option<&'static str> {
        Self::skip_stage(slot).map(|s| STAGE_NAMES[s])
    }

    /// Stage index feeding skip slot `slot`.
    pub fn skip_stage(slot: usize) -> Option<usize> {
        (slot < NUM_SKIPS - 1).then(|| NUM_STAGES - 2 - slot)
    }
}

/// Initialized encoder weights.
#[derive(Debug, Clone)]
pub struct EncoderState {
    spec: EncoderSpec,
    pub stages: Vec<ConvBnAct>,
}

impl Parameterized for EncoderState {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.stages.visit(&crate::params::join(prefix, "stages"), f)
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.stages
            .visit_mut(&crate::params::join(prefix, "stages"), f)
    }
}

/// Encoder output for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    pub bottleneck: FeatureMap,
    /// Index 0 is the deepest skip; index 4 is always `None`.
    pub skips: [Option<FeatureMap>; NUM_SKIPS],
}

/// Builds an encoder with fan-in-scaled uniform convolution weights,
/// batch-norm scale 1 and shift 0.
pub fn build_encoder(spec: &EncoderSpec, seed: u64) -> Result<EncoderState> {
    let mut init = Initializer::new(seed);
    EncoderState::new(spec, &mut init)
}

impl EncoderState {
    pub fn new(spec: &EncoderSpec, init: &mut Initializer) -> Result<Self> {
        spec.validate()?;
        let mut stages = Vec::with_capacity(NUM_STAGES);
        let mut in_ch = INPUT_CHANNELS;
        let mut prev_stride = 1;
        for (&out_ch, &stride) in spec.stage_channels.iter().zip(&spec.stage_strides) {
            let step = stride / prev_stride;
            let conv = Conv2d::new(in_ch, out_ch, 3, step, 1, false, RECTIFIER_GAIN, init);
            stages.push(ConvBnAct::new(ConvKind::Regular(conv)));
            in_ch = out_ch;
            prev_stride = stride;
        }
        Ok(Self {
            spec: spec.clone(),
            stages,
        })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    fn check_input(&self, image: &FeatureMap) -> Result<()> {
        if image.channels() != INPUT_CHANNELS {
            return Err(Error::Channel {
                expected: INPUT_CHANNELS,
                actual: image.channels(),
            });
        }
        if image.height() == 0
            || image.width() == 0
            || !image.height().is_multiple_of(OUTPUT_STRIDE)
            || !image.width().is_multiple_of(OUTPUT_STRIDE)
        {
            return Err(Error::Dimension(format!(
                "input {}x{} is not a positive multiple of {OUTPUT_STRIDE}",
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, images: &[FeatureMap], mode: NormMode) -> Result<EncoderCache> {
        for image in images {
            self.check_input(image)?;
        }
        let mut stages: Vec<ConvBnActCache> = Vec::with_capacity(NUM_STAGES);
        for stage in &self.stages {
            let input = stages.last().map_or(images, |c| c.output());
            let cache = stage.forward(input, mode)?;
            stages.push(cache);
        }
        Ok(EncoderCache { stages })
    }

    /// Gradients arrive for the bottleneck and for each populated skip slot.
    pub fn backward(
        &mut self,
        images: &[FeatureMap],
        cache: &EncoderCache,
        grad_bottleneck: Vec<FeatureMap>,
        mut grad_skips: [Option<Vec<FeatureMap>>; NUM_SKIPS],
    ) {
        let mut grad = grad_bottleneck;
        for stage in (0..NUM_STAGES).rev() {
            if let Some(slot) = (0..NUM_SKIPS).find(|&s| EncoderSpec::skip_stage(s) == Some(stage))
            {
                if let Some(extra) = grad_skips[slot].take() {
                    for (g, e) in grad.iter_mut().zip(&extra) {
                        g.add_assign(e);
                    }
                }
            }
            let input = if stage == 0 {
                images
            } else {
                cache.stages[stage - 1].output()
            };
            let need_input = stage > 0;
            match self.stages[stage].backward(input, &cache.stages[stage], grad, need_input) {
                Some(g) => grad = g,
                None => break,
            }
        }
    }

    pub fn update_running_stats(&mut self, cache: &EncoderCache) {
        for (stage, c) in self.stages.iter_mut().zip(&cache.stages) {
            stage.update_running(c);
        }
    }
}

/// Per-stage activations of a batched encoder pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    stages: Vec<ConvBnActCache>,
}

impl EncoderCache {
    pub fn bottleneck(&self) -> &[FeatureMap] {
        self.stages[NUM_STAGES - 1].output()
    }

    pub fn skip(&self, slot: usize) -> Option<&[FeatureMap]> {
        EncoderSpec::skip_stage(slot).map(|s| self.stages[s].output())
    }

    pub fn stage_output(&self, stage: usize) -> &[FeatureMap] {
        self.stages[stage].output()
    }

    /// Splits a batched pass into per-image pyramids.
    pub fn pyramids(&self) -> Vec<FeaturePyramid> {
        (0..self.bottleneck().len())
            .map(|b| FeaturePyramid {
                bottleneck: self.bottleneck()[b].clone(),
                skips: core::array::from_fn(|slot| self.skip(slot).map(|s| s[b].clone())),
            })
            .collect()
    }
}

/// Runs the encoder on one image using running batch-norm statistics.
pub fn encode(image: &FeatureMap, encoder: &EncoderState) -> Result<FeaturePyramid> {
    let cache = encoder.forward(core::slice::from_ref(image), NormMode::Running)?;
    Ok(cache
        .pyramids()
        .pop()
        .expect("one image in, one pyramid out"))
}
