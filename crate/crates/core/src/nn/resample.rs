//! Corner-aligned bilinear resampling.
//!
//! Output pixel `o` samples source coordinate `o * (in - 1) / (out - 1)`, so
//! corners map onto corners and resampling to the same size is the identity.

use alloc::vec::Vec;

use crate::{Error, FeatureMap, Result};

/// For each output index: (lower source index, upper source index, weight of upper).
fn axis_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    (0..output)
        .map(|o| {
            if output == 1 || input == 1 {
                return (0, 0, 0.0);
            }
            let src = o as f64 * (input - 1) as f64 / (output - 1) as f64;
            let lo = (libm::floor(src) as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

pub fn bilinear_resample(
    input: &FeatureMap,
    target_h: usize,
    target_w: usize,
) -> Result<FeatureMap> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::Dimension(alloc::format!(
            "invalid resample target {target_h}x{target_w}"
        )));
    }
    if input.height() == target_h && input.width() == target_w {
        return Ok(input.clone());
    }
    if input.height() == 0 || input.width() == 0 {
        return Err(Error::Dimension("cannot resample an empty map".into()));
    }
    let ty = axis_taps(input.height(), target_h);
    let tx = axis_taps(input.width(), target_w);
    let mut out = FeatureMap::zeros(input.channels(), target_h, target_w);
    let w = input.width();
    for c in 0..input.channels() {
        let src = input.plane(c);
        let dst = out.plane_mut(c);
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - wx) + src[y0 * w + x1] * wx;
                let bottom = src[y1 * w + x0] * (1.0 - wx) + src[y1 * w + x1] * wx;
                dst[oy * target_w + ox] = top * (1.0 - wy) + bottom * wy;
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`bilinear_resample`]: maps an output-grid gradient back to the
/// `input_h x input_w` grid.
pub fn bilinear_resample_backward(
    grad_out: &FeatureMap,
    input_h: usize,
    input_w: usize,
) -> FeatureMap {
    if grad_out.height() == input_h && grad_out.width() == input_w {
        return grad_out.clone();
    }
    let ty = axis_taps(input_h, grad_out.height());
    let tx = axis_taps(input_w, grad_out.width());
    let mut gin = FeatureMap::zeros(grad_out.channels(), input_h, input_w);
    let ow = grad_out.width();
    for c in 0..grad_out.channels() {
        let g = grad_out.plane(c);
        let dst = gin.plane_mut(c);
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                let v = g[oy * ow + ox];
                dst[y0 * input_w + x0] += v * (1.0 - wy) * (1.0 - wx);
                dst[y0 * input_w + x1] += v * (1.0 - wy) * wx;
                dst[y1 * input_w + x0] += v * wy * (1.0 - wx);
                dst[y1 * input_w + x1] += v * wy * wx;
            }
        }
    }
    gin
}
