//! Full encoder-decoder: encoder, three multi-scale blocks, two single-scale
//! blocks and a 1x1 classifier head producing raw logits.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::attention::default_intermediate_channels;
use crate::decoder::{Ab, AbCache, Msab, MsabCache};
use crate::encoder::{EncoderCache, EncoderSpec, EncoderState, NUM_SKIPS, OUTPUT_STRIDE};
use crate::init::{Initializer, LINEAR_GAIN};
use crate::nn::{Conv2d, NormMode};
use crate::params::impl_parameterized;
use crate::{ClassMask, Error, FeatureMap, Result};

pub const DEFAULT_DECODER_CHANNELS: [usize; 5] = [256, 128, 64, 32, 16];
pub const NUM_MSAB: usize = 3;
pub const NUM_AB: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MsauNetConfig {
    pub encoder: EncoderSpec,
    /// Output channels of the five decoder blocks, deepest first.
    pub decoder_channels: Vec<usize>,
    pub num_classes: usize,
    /// `(height, width)`; both multiples of 32.
    pub input_size: (usize, usize),
}

impl MsauNetConfig {
    pub fn new(encoder: EncoderSpec, num_classes: usize, input_size: (usize, usize)) -> Self {
        Self {
            encoder,
            decoder_channels: DEFAULT_DECODER_CHANNELS.to_vec(),
            num_classes,
            input_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let ch = &self.decoder_channels;
        if ch.len() != NUM_MSAB + NUM_AB {
            return Err(Error::InvalidConfig(format!(
                "decoder_channels needs 5 entries, got {}",
                ch.len()
            )));
        }
        if ch[ch.len() - 1] == 0 || ch.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "decoder_channels must be strictly decreasing and positive: {ch:?}"
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % OUTPUT_STRIDE != 0 || w % OUTPUT_STRIDE != 0 {
            return Err(Error::InvalidConfig(format!(
                "input size {h}x{w} must be a positive multiple of {OUTPUT_STRIDE}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MsauNet {
    config: MsauNetConfig,
    pub encoder: EncoderState,
    pub msab: Vec<Msab>,
    pub ab: Vec<Ab>,
    pub head: Conv2d,
}

impl_parameterized!(MsauNet {
    encoder,
    msab,
    ab,
    head
});

/// Activations of a batched forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct NetCache {
    encoder: EncoderCache,
    msab: Vec<MsabCache>,
    ab: Vec<AbCache>,
    logits: Vec<FeatureMap>,
}

impl NetCache {
    pub fn logits(&self) -> &[FeatureMap] {
        &self.logits
    }

    pub fn into_logits(self) -> Vec<FeatureMap> {
        self.logits
    }

    pub fn encoder(&self) -> &EncoderCache {
        &self.encoder
    }

    pub fn msab(&self) -> &[MsabCache] {
        &self.msab
    }

    /// Block-by-block shapes of the first image in the batch.
    pub fn trace(&self) -> Vec<TraceEntry> {
        let enc = &self.encoder;
        let mut out = Vec::with_capacity(NUM_MSAB + NUM_AB + 1);
        let mut input = enc.bottleneck()[0].shape();
        let outputs = self
            .msab
            .iter()
            .map(|c| c.output())
            .chain(self.ab.iter().map(|c| c.output()));
        for (slot, output) in outputs.enumerate() {
            let block = if slot < NUM_MSAB {
                format!("msab{}", slot + 1)
            } else {
                format!("ab{}", slot - NUM_MSAB + 1)
            };
            let output = output[0].shape();
            out.push(TraceEntry {
                block,
                input,
                skip_source: EncoderSpec::skip_source(slot),
                skip: enc.skip(slot).map(|s| s[0].shape()),
                output,
            });
            input = output;
        }
        out.push(TraceEntry {
            block: "head".into(),
            input,
            skip_source: None,
            skip: None,
            output: self.logits[0].shape(),
        });
        out
    }
}

/// One decoder step as seen by shape tracing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub block: String,
    pub input: (usize, usize, usize),
    /// Encoder stage feeding the skip, if any.
    pub skip_source: Option<&'static str>,
    pub skip: Option<(usize, usize, usize)>,
    pub output: (usize, usize, usize),
}

impl MsauNet {
    pub fn new(config: MsauNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Initializer::new(seed);
        let encoder = EncoderState::new(&config.encoder, &mut init)?;
        let ch = &config.decoder_channels;
        let mut msab = Vec::with_capacity(NUM_MSAB);
        let mut ch_in = config.encoder.bottleneck_channels();
        for (slot, &ch_out) in ch.iter().enumerate().take(NUM_MSAB) {
            let ch_skip = config
                .encoder
                .skip_channels(slot)
                .expect("msab slots carry skips");
            msab.push(Msab::new(
                ch_in,
                ch_skip,
                ch_out,
                default_intermediate_channels(ch_skip),
                &mut init,
            )?);
            ch_in = ch_out;
        }
        let mut ab = Vec::with_capacity(NUM_AB);
        for (slot, &ch_out) in ch.iter().enumerate().skip(NUM_MSAB) {
            let skip = config
                .encoder
                .skip_channels(slot)
                .map(|c| (c, default_intermediate_channels(c)));
            ab.push(Ab::new(ch_in, ch_out, skip, &mut init)?);
            ch_in = ch_out;
        }
        let head = Conv2d::pointwise(ch_in, config.num_classes, true, LINEAR_GAIN, &mut init);
        Ok(Self {
            config,
            encoder,
            msab,
            ab,
            head,
        })
    }

    pub fn config(&self) -> &MsauNetConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn check_input(&self, image: &FeatureMap) -> Result<()> {
        let (h, w) = self.config.input_size;
        if image.height() != h || image.width() != w {
            return Err(Error::Dimension(format!(
                "image is {}x{}, network expects {h}x{w}",
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }

    pub fn forward_batch(&self, images: &[FeatureMap], mode: NormMode) -> Result<NetCache> {
        for image in images {
            self.check_input(image)?;
        }
        let encoder = self.encoder.forward(images, mode)?;
        let mut msab: Vec<MsabCache> = Vec::with_capacity(NUM_MSAB);
        for (slot, block) in self.msab.iter().enumerate() {
            let x = msab.last().map_or(encoder.bottleneck(), |c| c.output());
            let skip = encoder.skip(slot).expect("msab slots carry skips");
            msab.push(block.forward(x, skip, mode)?);
        }
        let mut ab: Vec<AbCache> = Vec::with_capacity(NUM_AB);
        for (i, block) in self.ab.iter().enumerate() {
            let x = ab
                .last()
                .map_or(msab[NUM_MSAB - 1].output(), |c| c.output());
            ab.push(block.forward(x, encoder.skip(NUM_MSAB + i), mode)?);
        }
        let logits = self.head.forward_batch(ab[NUM_AB - 1].output())?;
        Ok(NetCache {
            encoder,
            msab,
            ab,
            logits,
        })
    }

    /// Raw logits `N x H x W` for one image, using running batch-norm statistics.
    pub fn forward(&self, image: &FeatureMap) -> Result<FeatureMap> {
        let cache = self.forward_batch(core::slice::from_ref(image), NormMode::Running)?;
        Ok(cache
            .into_logits()
            .pop()
            .expect("one image in, one logit map out"))
    }

    /// Accumulates parameter gradients for `d loss / d logits`.
    pub fn backward(
        &mut self,
        images: &[FeatureMap],
        cache: &NetCache,
        grad_logits: &[FeatureMap],
    ) {
        let mut grad = self
            .head
            .backward(cache.ab[NUM_AB - 1].output(), grad_logits, true)
            .expect("input gradient requested");
        let mut grad_skips: [Option<Vec<FeatureMap>>; NUM_SKIPS] = Default::default();
        for i in (0..NUM_AB).rev() {
            let x = if i == 0 {
                cache.msab[NUM_MSAB - 1].output()
            } else {
                cache.ab[i - 1].output()
            };
            let slot = NUM_MSAB + i;
            let (dx, dskip) = self.ab[i].backward(x, cache.encoder.skip(slot), &cache.ab[i], grad);
            grad = dx;
            grad_skips[slot] = dskip;
        }
        for i in (0..NUM_MSAB).rev() {
            let x = if i == 0 {
                cache.encoder.bottleneck()
            } else {
                cache.msab[i - 1].output()
            };
            let skip = cache.encoder.skip(i).expect("msab slots carry skips");
            let (dx, dskip) = self.msab[i].backward(x, skip, &cache.msab[i], grad);
            grad = dx;
            grad_skips[i] = Some(dskip);
        }
        self.encoder
            .backward(images, &cache.encoder, grad, grad_skips);
    }

    /// Folds the batch statistics of a training pass into the running estimates.
    pub fn update_running_stats(&mut self, cache: &NetCache) {
        self.encoder.update_running_stats(&cache.encoder);
        for (block, c) in self.msab.iter_mut().zip(&cache.msab) {
            block.update_running(c);
        }
        for (block, c) in self.ab.iter_mut().zip(&cache.ab) {
            block.update_running(c);
        }
    }

    /// Shapes entering and leaving each decoder block and the head.
    pub fn trace(&self, image: &FeatureMap) -> Result<Vec<TraceEntry>> {
        Ok(self
            .forward_batch(core::slice::from_ref(image), NormMode::Running)?
            .trace())
    }
}

/// Per-pixel argmax over classes; ties go to the lowest class index.
pub fn predict_mask(logits: &FeatureMap) -> Result<ClassMask> {
    let n = logits.channels();
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 classes, got {n}"
        )));
    }
    let plane = logits.plane_len();
    let mut labels = vec![0u16; plane];
    for (p, label) in labels.iter_mut().enumerate() {
        let mut best = logits.data()[p];
        for c in 1..n {
            let v = logits.data()[c * plane + p];
            if v > best {
                best = v;
                *label = c as u16;
            }
        }
    }
    ClassMask::new(logits.height(), logits.width(), n, None, labels)
}
