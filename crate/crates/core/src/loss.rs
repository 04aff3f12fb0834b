//! Compound segmentation loss: soft IoU, smoothed Dice and boundary-weighted
//! cross-entropy, with analytic gradients with respect to the logits.
//!
//! All functions work on one image. Void pixels of the target mask are left
//! out of every sum and receive zero gradient.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{ClassMask, Error, FeatureMap, Result};

/// Floor applied to probabilities inside the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;
/// Unions below this are treated as an empty class.
pub const UNION_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    /// Divide by the number of non-void pixels.
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompoundLossConfig {
    pub w_iou: f64,
    pub w_dice: f64,
    pub w_wce: f64,
    pub dice_alpha: f64,
    /// Extra cross-entropy weight on pixels at a class boundary.
    pub eps1: f64,
    /// Extra cross-entropy weight on background pixels.
    pub eps2: f64,
    pub background_class: u16,
    pub wce_reduction: Reduction,
}

impl Default for CompoundLossConfig {
    fn default() -> Self {
        Self {
            w_iou: 1.0,
            w_dice: 0.01,
            w_wce: 0.8,
            dice_alpha: 1.0,
            eps1: 1.0,
            eps2: 1.0,
            background_class: 0,
            wce_reduction: Reduction::Mean,
        }
    }
}

impl CompoundLossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.w_iou, self.w_dice, self.w_wce, self.eps1, self.eps2];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidConfig(
                "loss weights must be finite and >= 0".into(),
            ));
        }
        if !(self.dice_alpha.is_finite() && self.dice_alpha > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "dice_alpha must be > 0, got {}",
                self.dice_alpha
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbabilityKind {
    /// Sums to one over classes at every pixel.
    Softmax,
    /// Each class channel is an independent probability.
    Independent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    kind: ProbabilityKind,
    probs: FeatureMap,
}

impl ProbabilityMap {
    pub fn softmax(logits: &FeatureMap) -> Self {
        Self {
            kind: ProbabilityKind::Softmax,
            probs: softmax(logits),
        }
    }

    /// Wraps precomputed probabilities; softmax-tagged maps must sum to one
    /// over classes within 1e-6.
    pub fn new(kind: ProbabilityKind, probs: FeatureMap) -> Result<Self> {
        if probs.data().iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidSpec(
                "probabilities must lie in [0, 1]".into(),
            ));
        }
        if kind == ProbabilityKind::Softmax {
            let plane = probs.plane_len();
            for p in 0..plane {
                let s: f64 = (0..probs.channels())
                    .map(|c| probs.data()[c * plane + p])
                    .sum();
                if (s - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidSpec(format!(
                        "softmax probabilities sum to {s} at pixel {p}"
                    )));
                }
            }
        }
        Ok(Self { kind, probs })
    }

    pub fn kind(&self) -> ProbabilityKind {
        self.kind
    }

    pub fn probs(&self) -> &FeatureMap {
        &self.probs
    }
}

/// One-hot encoding of a mask; void pixels have no active class.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotTarget {
    onehot: FeatureMap,
    valid: Vec<bool>,
    source: ClassMask,
}

impl OneHotTarget {
    pub fn from_mask(mask: &ClassMask) -> Self {
        let (h, w, n) = (mask.height(), mask.width(), mask.num_classes());
        let mut onehot = FeatureMap::zeros(n, h, w);
        let mut valid = vec![false; h * w];
        for (p, &label) in mask.labels().iter().enumerate() {
            if !mask.is_void(label) {
                onehot.data_mut()[label as usize * h * w + p] = 1.0;
                valid[p] = true;
            }
        }
        Self {
            onehot,
            valid,
            source: mask.clone(),
        }
    }

    pub fn onehot(&self) -> &FeatureMap {
        &self.onehot
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn source(&self) -> &ClassMask {
        &self.source
    }
}

fn check_shape(map: &FeatureMap, gt: &OneHotTarget) -> Result<()> {
    if map.shape() != gt.onehot.shape() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            map.shape(),
            gt.onehot.shape()
        )));
    }
    Ok(())
}

/// Numerically stable softmax over the class axis.
pub fn softmax(logits: &FeatureMap) -> FeatureMap {
    let (n, plane) = (logits.channels(), logits.plane_len());
    let mut out = FeatureMap::zeros(n, logits.height(), logits.width());
    let (src, dst) = (logits.data(), out.data_mut());
    for p in 0..plane {
        let max = (0..n)
            .map(|c| src[c * plane + p])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for c in 0..n {
            let e = libm::exp(src[c * plane + p] - max);
            dst[c * plane + p] = e;
            sum += e;
        }
        for c in 0..n {
            dst[c * plane + p] /= sum;
        }
    }
    out
}

/// Chains `d loss / d softmax` back to the logits.
pub fn softmax_backward(probs: &FeatureMap, grad_probs: &FeatureMap) -> FeatureMap {
    let (n, plane) = (probs.channels(), probs.plane_len());
    let mut out = FeatureMap::zeros(n, probs.height(), probs.width());
    let (a, g, dst) = (probs.data(), grad_probs.data(), out.data_mut());
    for p in 0..plane {
        let dot: f64 = (0..n).map(|c| a[c * plane + p] * g[c * plane + p]).sum();
        for c in 0..n {
            dst[c * plane + p] = a[c * plane + p] * (g[c * plane + p] - dot);
        }
    }
    out
}

/// `1 + eps1 * [a 4-neighbour has another label] + eps2 * [label == background]`.
///
/// Void neighbours do not create a boundary.
pub fn boundary_weights(gt: &ClassMask, eps1: f64, eps2: f64, background_class: u16) -> Vec<f64> {
    let (h, w) = (gt.height(), gt.width());
    let labels = gt.labels();
    let mut out = vec![1.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            let differs = |ny: usize, nx: usize| {
                let n = labels[ny * w + nx];
                n != l && !gt.is_void(n)
            };
            let edge = (y > 0 && differs(y - 1, x))
                || (y + 1 < h && differs(y + 1, x))
                || (x > 0 && differs(y, x - 1))
                || (x + 1 < w && differs(y, x + 1));
            let theta = &mut out[y * w + x];
            if edge {
                *theta += eps1;
            }
            if l == background_class {
                *theta += eps2;
            }
        }
    }
    out
}

fn reduce(sum: f64, gt: &OneHotTarget, reduction: Reduction) -> f64 {
    match reduction {
        Reduction::Sum => sum,
        Reduction::Mean => sum / gt.num_valid().max(1) as f64,
    }
}

/// `-sum theta * G * log max(P, 1e-12)` over non-void pixels.
pub fn weighted_cross_entropy(
    probs: &ProbabilityMap,
    gt: &OneHotTarget,
    weights: &[f64],
    reduction: Reduction,
) -> Result<f64> {
    if probs.kind != ProbabilityKind::Softmax {
        return Err(Error::InvalidSpec(
            "cross-entropy needs softmax-normalized probabilities".into(),
        ));
    }
    check_shape(&probs.probs, gt)?;
    let plane = probs.probs.plane_len();
    if weights.len() != plane {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {plane} pixels",
            weights.len()
        )));
    }
    let mut sum = 0.0;
    for (p, &label) in gt.source.labels().iter().enumerate() {
        if gt.valid[p] {
            let prob = probs.probs.data()[label as usize * plane + p];
            sum -= weights[p] * libm::log(prob.max(LOG_FLOOR));
        }
    }
    Ok(reduce(sum, gt, reduction))
}

/// Cross-entropy straight from logits through log-softmax, with its gradient.
pub fn weighted_cross_entropy_with_grad(
    logits: &FeatureMap,
    gt: &OneHotTarget,
    weights: &[f64],
    reduction: Reduction,
) -> Result<(f64, FeatureMap)> {
    check_shape(logits, gt)?;
    let (n, plane) = (logits.channels(), logits.plane_len());
    if weights.len() != plane {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {plane} pixels",
            weights.len()
        )));
    }
    let probs = softmax(logits);
    let scale = match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / gt.num_valid().max(1) as f64,
    };
    let log_floor = libm::log(LOG_FLOOR);
    let mut grad = FeatureMap::zeros(n, logits.height(), logits.width());
    let mut sum = 0.0;
    for (p, &label) in gt.source.labels().iter().enumerate() {
        if !gt.valid[p] {
            continue;
        }
        let t = label as usize;
        let max = (0..n)
            .map(|c| logits.data()[c * plane + p])
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = max
            + libm::log(
                (0..n)
                    .map(|c| libm::exp(logits.data()[c * plane + p] - max))
                    .sum::<f64>(),
            );
        let log_p = logits.data()[t * plane + p] - lse;
        if log_p > log_floor {
            sum -= weights[p] * log_p;
            for c in 0..n {
                let onehot = if c == t { 1.0 } else { 0.0 };
                grad.data_mut()[c * plane + p] =
                    scale * weights[p] * (probs.data()[c * plane + p] - onehot);
            }
        } else {
            // clamped: constant in the logits
            sum -= weights[p] * log_floor;
        }
    }
    Ok((reduce(sum, gt, reduction), grad))
}

/// One Dice class term `1 - (2 sum G A + alpha) / (sum G^2 + A^2 + alpha)`.
pub fn dice_term(probs: &[f64], gt: &[f64], alpha: f64) -> f64 {
    let inter: f64 = probs.iter().zip(gt).map(|(a, g)| a * g).sum();
    let sq: f64 = probs.iter().zip(gt).map(|(a, g)| a * a + g * g).sum();
    1.0 - (2.0 * inter + alpha) / (sq + alpha)
}

fn masked_planes(probs: &FeatureMap, gt: &OneHotTarget) -> FeatureMap {
    let mut out = probs.clone();
    for c in 0..probs.channels() {
        for (v, ok) in out.plane_mut(c).iter_mut().zip(&gt.valid) {
            if !ok {
                *v = 0.0;
            }
        }
    }
    out
}

/// Dice summed over classes on already-normalized probabilities.
pub fn dice_loss_from_probs(probs: &ProbabilityMap, gt: &OneHotTarget, alpha: f64) -> Result<f64> {
    check_shape(&probs.probs, gt)?;
    let a = masked_planes(&probs.probs, gt);
    Ok((0..a.channels())
        .map(|c| dice_term(a.plane(c), gt.onehot.plane(c), alpha))
        .sum())
}

/// Dice summed over classes; softmax is applied to the logits first.
pub fn dice_loss(logits: &FeatureMap, gt: &OneHotTarget, alpha: f64) -> Result<f64> {
    dice_loss_from_probs(&ProbabilityMap::softmax(logits), gt, alpha)
}

pub fn dice_loss_with_grad(
    logits: &FeatureMap,
    gt: &OneHotTarget,
    alpha: f64,
) -> Result<(f64, FeatureMap)> {
    check_shape(logits, gt)?;
    let probs = softmax(logits);
    let a = masked_planes(&probs, gt);
    let mut grad_a = FeatureMap::zeros(a.channels(), a.height(), a.width());
    let mut loss = 0.0;
    for c in 0..a.channels() {
        let (ap, gp) = (a.plane(c), gt.onehot.plane(c));
        let num = 2.0 * ap.iter().zip(gp).map(|(x, g)| x * g).sum::<f64>() + alpha;
        let den = ap.iter().zip(gp).map(|(x, g)| x * x + g * g).sum::<f64>() + alpha;
        loss += 1.0 - num / den;
        for (p, d) in grad_a.plane_mut(c).iter_mut().enumerate() {
            if gt.valid[p] {
                *d = -(2.0 * gp[p] * den - num * 2.0 * ap[p]) / (den * den);
            }
        }
    }
    Ok((loss, softmax_backward(&probs, &grad_a)))
}

fn intersection_union(probs: &[f64], gt: &[f64], valid: &[bool]) -> (f64, f64) {
    let mut i = 0.0;
    let mut u = 0.0;
    for ((y, g), ok) in probs.iter().zip(gt).zip(valid) {
        if *ok {
            i += y * g;
            u += y + g - y * g;
        }
    }
    (i, u)
}

/// Soft IoU loss `1 - I/U`, one-vs-rest per class and averaged over classes.
pub fn iou_loss(probs: &ProbabilityMap, gt: &OneHotTarget) -> Result<f64> {
    check_shape(&probs.probs, gt)?;
    let n = probs.probs.channels();
    let total: f64 = (0..n)
        .map(|c| {
            let (i, u) = intersection_union(probs.probs.plane(c), gt.onehot.plane(c), &gt.valid);
            if u < UNION_FLOOR {
                0.0
            } else {
                1.0 - i / u
            }
        })
        .sum();
    Ok(total / n as f64)
}

/// Piecewise analytic gradient of [`iou_loss`] for binary targets:
/// `-1/U` where the target is 1, `I/U^2` elsewhere, divided by the class count.
pub fn iou_loss_grad(probs: &ProbabilityMap, gt: &OneHotTarget) -> Result<FeatureMap> {
    check_shape(&probs.probs, gt)?;
    let n = probs.probs.channels();
    let mut grad = FeatureMap::zeros(n, probs.probs.height(), probs.probs.width());
    for c in 0..n {
        let g = gt.onehot.plane(c);
        let (i, u) = intersection_union(probs.probs.plane(c), g, &gt.valid);
        if u < UNION_FLOOR {
            continue;
        }
        for (p, d) in grad.plane_mut(c).iter_mut().enumerate() {
            if gt.valid[p] {
                *d = if g[p] == 1.0 { -1.0 / u } else { i / (u * u) } / n as f64;
            }
        }
    }
    Ok(grad)
}

/// Quotient-rule gradient `-(G U - I (1 - G)) / U^2` of [`iou_loss`], valid
/// for soft targets too.
pub fn iou_loss_grad_quotient(probs: &ProbabilityMap, gt: &OneHotTarget) -> Result<FeatureMap> {
    check_shape(&probs.probs, gt)?;
    let n = probs.probs.channels();
    let mut grad = FeatureMap::zeros(n, probs.probs.height(), probs.probs.width());
    for c in 0..n {
        let g = gt.onehot.plane(c);
        let (i, u) = intersection_union(probs.probs.plane(c), g, &gt.valid);
        if u < UNION_FLOOR {
            continue;
        }
        for (p, d) in grad.plane_mut(c).iter_mut().enumerate() {
            if gt.valid[p] {
                let di = g[p];
                let du = 1.0 - g[p];
                *d = -(di * u - i * du) / (u * u) / n as f64;
            }
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub iou: f64,
    pub dice: f64,
    pub wce: f64,
}

impl LossBreakdown {
    pub fn from_components(iou: f64, dice: f64, wce: f64, config: &CompoundLossConfig) -> Self {
        Self {
            total: config.w_iou * iou + config.w_dice * dice + config.w_wce * wce,
            iou,
            dice,
            wce,
        }
    }

    fn add_scaled(&mut self, other: &LossBreakdown, s: f64) {
        self.total += s * other.total;
        self.iou += s * other.iou;
        self.dice += s * other.dice;
        self.wce += s * other.wce;
    }
}

fn target_for(logits: &FeatureMap, gt: &ClassMask) -> Result<OneHotTarget> {
    if gt.num_classes() != logits.channels() {
        return Err(Error::ShapeMismatch(format!(
            "{} logit channels for {} classes",
            logits.channels(),
            gt.num_classes()
        )));
    }
    let target = OneHotTarget::from_mask(gt);
    check_shape(logits, &target)?;
    Ok(target)
}

pub fn compound_loss(
    logits: &FeatureMap,
    gt: &ClassMask,
    config: &CompoundLossConfig,
) -> Result<LossBreakdown> {
    let target = target_for(logits, gt)?;
    let probs = ProbabilityMap::softmax(logits);
    let theta = boundary_weights(gt, config.eps1, config.eps2, config.background_class);
    let iou = iou_loss(&probs, &target)?;
    let dice = dice_loss(logits, &target, config.dice_alpha)?;
    let wce = weighted_cross_entropy(&probs, &target, &theta, config.wce_reduction)?;
    Ok(LossBreakdown::from_components(iou, dice, wce, config))
}

/// Compound loss and its gradient with respect to the logits.
pub fn compound_loss_with_grad(
    logits: &FeatureMap,
    gt: &ClassMask,
    config: &CompoundLossConfig,
) -> Result<(LossBreakdown, FeatureMap)> {
    let target = target_for(logits, gt)?;
    let probs = ProbabilityMap::softmax(logits);
    let theta = boundary_weights(gt, config.eps1, config.eps2, config.background_class);

    let iou = iou_loss(&probs, &target)?;
    let mut grad = softmax_backward(&probs.probs, &iou_loss_grad(&probs, &target)?);
    grad.scale(config.w_iou);

    let (dice, mut d_dice) = dice_loss_with_grad(logits, &target, config.dice_alpha)?;
    d_dice.scale(config.w_dice);
    grad.add_assign(&d_dice);

    let (wce, mut d_wce) =
        weighted_cross_entropy_with_grad(logits, &target, &theta, config.wce_reduction)?;
    d_wce.scale(config.w_wce);
    grad.add_assign(&d_wce);

    Ok((LossBreakdown::from_components(iou, dice, wce, config), grad))
}

/// Mean of per-image compound losses, with per-image logit gradients.
pub fn batch_compound_loss_with_grad(
    logits: &[FeatureMap],
    gts: &[ClassMask],
    config: &CompoundLossConfig,
) -> Result<(LossBreakdown, Vec<FeatureMap>)> {
    if logits.len() != gts.len() || logits.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} logit maps for {} masks",
            logits.len(),
            gts.len()
        )));
    }
    let s = 1.0 / logits.len() as f64;
    let mut mean = LossBreakdown::default();
    let mut grads = Vec::with_capacity(logits.len());
    for (l, g) in logits.iter().zip(gts) {
        let (b, mut d) = compound_loss_with_grad(l, g, config)?;
        mean.add_scaled(&b, s);
        d.scale(s);
        grads.push(d);
    }
    Ok((mean, grads))
}

/// Mean of per-image compound losses.
pub fn batch_compound_loss(
    logits: &[FeatureMap],
    gts: &[ClassMask],
    config: &CompoundLossConfig,
) -> Result<LossBreakdown> {
    if logits.len() != gts.len() || logits.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} logit maps for {} masks",
            logits.len(),
            gts.len()
        )));
    }
    let s = 1.0 / logits.len() as f64;
    let mut mean = LossBreakdown::default();
    for (l, g) in logits.iter().zip(gts) {
        mean.add_scaled(&compound_loss(l, g, config)?, s);
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::Initializer;
    use approx::assert_relative_eq;

    fn mask(h: usize, w: usize, n: usize, labels: &[u16]) -> ClassMask {
        ClassMask::new(h, w, n, None, labels.to_vec()).unwrap()
    }

    fn independent(n: usize, h: usize, w: usize, v: &[f64]) -> ProbabilityMap {
        ProbabilityMap::new(
            ProbabilityKind::Independent,
            FeatureMap::from_vec(n, h, w, v.to_vec()).unwrap(),
        )
        .unwrap()
    }

    fn binary_target(h: usize, w: usize, fg: &[u16]) -> OneHotTarget {
        // class 0 of a two-class mask holds the foreground; only plane 0 is used
        let labels: Vec<u16> = fg.iter().map(|&f| 1 - f).collect();
        let t = OneHotTarget::from_mask(&mask(h, w, 2, &labels));
        let plane0 = FeatureMap::from_vec(1, h, w, t.onehot().plane(0).to_vec()).unwrap();
        OneHotTarget {
            onehot: plane0,
            valid: t.valid.clone(),
            source: t.source,
        }
    }

    #[test]
    fn boundary_weight_examples() {
        // 3x3 of class 1 with background in the corner
        let m = mask(3, 3, 2, &[1, 1, 1, 1, 1, 1, 1, 1, 0]);
        let theta = boundary_weights(&m, 1.0, 1.0, 0);
        assert_eq!(theta[0], 1.0);
        assert_eq!(theta[8], 3.0);

        let mut labels = [0u16; 16];
        for (y, x) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
            labels[y * 4 + x] = 1;
        }
        let m = mask(4, 4, 2, &labels);
        let theta = boundary_weights(&m, 1.0, 0.0, 0);
        let mut expected = [1.0; 16];
        for y in 0..4i32 {
            for x in 0..4i32 {
                let l = labels[(y * 4 + x) as usize];
                let edge = [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dy, dx)| {
                    let (ny, nx) = (y + dy, x + dx);
                    (0..4).contains(&ny)
                        && (0..4).contains(&nx)
                        && labels[(ny * 4 + nx) as usize] != l
                });
                if edge {
                    expected[(y * 4 + x) as usize] = 2.0;
                }
            }
        }
        assert_eq!(theta, expected);
        assert_eq!(theta.iter().filter(|&&t| t == 2.0).count(), 12);
    }

    #[test]
    fn wce_examples() {
        let gt = OneHotTarget::from_mask(&mask(1, 1, 2, &[0]));
        let p = ProbabilityMap::new(
            ProbabilityKind::Softmax,
            FeatureMap::from_vec(2, 1, 1, vec![0.5, 0.5]).unwrap(),
        )
        .unwrap();
        let l = weighted_cross_entropy(&p, &gt, &[1.0], Reduction::Sum).unwrap();
        assert_relative_eq!(l, -libm::log(0.5), max_relative = 1e-12);
        let l2 = weighted_cross_entropy(&p, &gt, &[2.0], Reduction::Sum).unwrap();
        assert_eq!(l2, 2.0 * l);

        let perfect = ProbabilityMap::new(
            ProbabilityKind::Softmax,
            FeatureMap::from_vec(2, 1, 1, vec![1.0, 0.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(
            weighted_cross_entropy(&perfect, &gt, &[1.0], Reduction::Sum).unwrap(),
            0.0
        );

        let wrong = ProbabilityMap::new(
            ProbabilityKind::Softmax,
            FeatureMap::from_vec(2, 1, 1, vec![0.0, 1.0]).unwrap(),
        )
        .unwrap();
        let clamped = weighted_cross_entropy(&wrong, &gt, &[1.0], Reduction::Sum).unwrap();
        assert_relative_eq!(clamped, -libm::log(LOG_FLOOR));

        let indep = independent(2, 1, 1, &[0.5, 0.5]);
        assert!(weighted_cross_entropy(&indep, &gt, &[1.0], Reduction::Sum).is_err());
    }

    #[test]
    fn dice_examples() {
        // perfect overlap
        assert_eq!(dice_term(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0], 1.0), 0.0);
        // disjoint, four foreground pixels each
        let a = [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let g = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        assert_relative_eq!(dice_term(&a, &g, 1.0), 8.0 / 9.0, max_relative = 1e-15);
        assert!(dice_term(&a, &g, 1e12) < 1e-11);
    }

    #[test]
    fn iou_examples() {
        let gt = binary_target(1, 2, &[1, 0]);
        let p = independent(1, 1, 2, &[0.5, 0.5]);
        assert_relative_eq!(iou_loss(&p, &gt).unwrap(), 2.0 / 3.0, max_relative = 1e-15);
        let g = iou_loss_grad(&p, &gt).unwrap();
        assert_relative_eq!(g.data()[0], -1.0 / 1.5, max_relative = 1e-15);
        assert_relative_eq!(g.data()[1], 0.5 / 2.25, max_relative = 1e-15);
        let q = iou_loss_grad_quotient(&p, &gt).unwrap();
        assert_eq!(g.data(), q.data());

        let gt = binary_target(2, 2, &[1, 1, 0, 1]);
        let exact = independent(1, 2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert_eq!(iou_loss(&exact, &gt).unwrap(), 0.0);
        let g = iou_loss_grad(&exact, &gt).unwrap();
        assert_relative_eq!(g.data()[0], -1.0 / 3.0);
        let empty = independent(1, 2, 2, &[0.0; 4]);
        assert_eq!(iou_loss(&empty, &gt).unwrap(), 1.0);

        // empty union: no contribution, no gradient
        let none = binary_target(1, 2, &[0, 0]);
        let z = independent(1, 1, 2, &[0.0, 0.0]);
        assert_eq!(iou_loss(&z, &none).unwrap(), 0.0);
        assert!(iou_loss_grad(&z, &none)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn iou_grad_matches_finite_differences() {
        let mut init = Initializer::new(17);
        for _ in 0..20 {
            let raw = init.uniform(64, 1.0);
            let fg: Vec<u16> = raw.iter().map(|v| (*v > 0.0) as u16).collect();
            let gt = binary_target(8, 8, &fg);
            let probs: Vec<f64> = init.uniform(64, 0.45).iter().map(|v| 0.5 + v).collect();
            let p = independent(1, 8, 8, &probs);
            let g = iou_loss_grad(&p, &gt).unwrap();
            let h = 1e-6;
            for k in 0..64 {
                let mut up = probs.clone();
                up[k] += h;
                let mut dn = probs.clone();
                dn[k] -= h;
                let fd = (iou_loss(&independent(1, 8, 8, &up), &gt).unwrap()
                    - iou_loss(&independent(1, 8, 8, &dn), &gt).unwrap())
                    / (2.0 * h);
                let rel = (fd - g.data()[k]).abs() / fd.abs().max(g.data()[k].abs()).max(1e-6);
                assert!(rel < 1e-4, "pixel {k}: fd {fd} analytic {}", g.data()[k]);
            }
            let q = iou_loss_grad_quotient(&p, &gt).unwrap();
            for (a, b) in g.data().iter().zip(q.data()) {
                assert!((a - b).abs() <= 4.0 * f64::EPSILON * a.abs().max(b.abs()));
            }
        }
    }

    #[test]
    fn compound_weighting_and_degenerate_weights() {
        let c = CompoundLossConfig::default();
        assert_relative_eq!(
            LossBreakdown::from_components(0.6, 0.5, 0.2, &c).total,
            0.765,
            max_relative = 1e-15
        );

        let m = mask(2, 2, 3, &[0, 1, 2, 1]);
        let logits = FeatureMap::from_vec(3, 2, 2, Initializer::new(3).uniform(12, 2.0)).unwrap();
        let only_iou = CompoundLossConfig {
            w_dice: 0.0,
            w_wce: 0.0,
            ..c.clone()
        };
        let b = compound_loss(&logits, &m, &only_iou).unwrap();
        let probs = ProbabilityMap::softmax(&logits);
        assert_eq!(
            b.total,
            iou_loss(&probs, &OneHotTarget::from_mask(&m)).unwrap()
        );
    }

    #[test]
    fn near_perfect_prediction_has_near_zero_components() {
        let m = mask(2, 2, 2, &[0, 1, 1, 0]);
        let logits = FeatureMap::from_fn(2, 2, 2, |c, y, x| {
            if m.get(y, x) as usize == c {
                40.0
            } else {
                -40.0
            }
        });
        let b = compound_loss(&logits, &m, &CompoundLossConfig::default()).unwrap();
        assert!(
            b.total < 1e-12 && b.iou < 1e-12 && b.dice < 1e-12 && b.wce < 1e-12,
            "{b:?}"
        );
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn compound_grad_matches_finite_differences() {
        let mut init = Initializer::new(23);
        let labels: Vec<u16> = (0..20).map(|i| (i * 7 % 3) as u16).collect();
        let mut m = ClassMask::new(4, 5, 3, Some(255), labels).unwrap();
        let mut with_void = m.labels().to_vec();
        with_void[6] = 255;
        m = ClassMask::new(4, 5, 3, Some(255), with_void).unwrap();
        let logits = FeatureMap::from_vec(3, 4, 5, init.uniform(60, 2.0)).unwrap();
        for reduction in [Reduction::Mean, Reduction::Sum] {
            let config = CompoundLossConfig {
                wce_reduction: reduction,
                w_dice: 0.3,
                ..Default::default()
            };
            let (b, g) = compound_loss_with_grad(&logits, &m, &config).unwrap();
            assert_relative_eq!(
                b.total,
                compound_loss(&logits, &m, &config).unwrap().total,
                max_relative = 1e-14
            );
            let h = 1e-6;
            for k in 0..60 {
                let mut up = logits.clone();
                up.data_mut()[k] += h;
                let mut dn = logits.clone();
                dn.data_mut()[k] -= h;
                let fd = (compound_loss(&up, &m, &config).unwrap().total
                    - compound_loss(&dn, &m, &config).unwrap().total)
                    / (2.0 * h);
                assert!(
                    rel(fd, g.data()[k]) < 1e-5,
                    "{k}: fd {fd} analytic {}",
                    g.data()[k]
                );
            }
            // void pixel 6 gets no gradient
            assert!((0..3).all(|c| g.data()[c * 20 + 6] == 0.0));
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let m = mask(2, 2, 3, &[0, 1, 2, 1]);
        let logits = FeatureMap::zeros(2, 2, 2);
        assert!(matches!(
            compound_loss(&logits, &m, &CompoundLossConfig::default()),
            Err(Error::ShapeMismatch(_))
        ));
        let logits = FeatureMap::zeros(3, 2, 3);
        assert!(matches!(
            compound_loss(&logits, &m, &CompoundLossConfig::default()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn batch_loss_is_mean_of_samples() {
        let m1 = mask(2, 2, 2, &[0, 1, 1, 0]);
        let m2 = mask(2, 2, 2, &[1, 1, 1, 0]);
        let mut init = Initializer::new(5);
        let l1 = FeatureMap::from_vec(2, 2, 2, init.uniform(8, 1.0)).unwrap();
        let l2 = FeatureMap::from_vec(2, 2, 2, init.uniform(8, 1.0)).unwrap();
        let c = CompoundLossConfig::default();
        let (b, g) =
            batch_compound_loss_with_grad(&[l1.clone(), l2.clone()], &[m1.clone(), m2.clone()], &c)
                .unwrap();
        let e = (compound_loss(&l1, &m1, &c).unwrap().total
            + compound_loss(&l2, &m2, &c).unwrap().total)
            / 2.0;
        assert_relative_eq!(b.total, e, max_relative = 1e-14);
        let (_, g1) = compound_loss_with_grad(&l1, &m1, &c).unwrap();
        assert_relative_eq!(g[0].data()[3], g1.data()[3] / 2.0, max_relative = 1e-14);
    }
}
