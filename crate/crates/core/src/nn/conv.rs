//! Strided 2-D convolution and its transpose, via im2col/col2im and GEMM.
//!
//! A stride-2 transposed convolution with kernel `k` and padding `p` is the
//! adjoint of the convolution with the same kernel geometry applied to the
//! (twice as large) output grid, so both layers share one im2col/col2im pair.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::gemm::{gemm, Op};
use crate::init::Initializer;
use crate::params::{impl_parameterized, Param};
use crate::{Error, FeatureMap, Result};

/// Geometry of a convolution reading a `channels x img_h x img_w` image and
/// producing an `out_h x out_w` grid.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    img_h: usize,
    img_w: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds receptive fields into a `(channels*k*k) x (out_h*out_w)` matrix.
fn im2col(img: &[f64], g: &Geometry) -> Vec<f64> {
    let mut cols = vec![0.0; g.rows() * g.cols()];
    let (k, s, p) = (g.kernel as isize, g.stride as isize, g.pad as isize);
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &img[c * g.img_h * g.img_w..(c + 1) * g.img_h * g.img_w];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut cols[row * g.cols()..(row + 1) * g.cols()];
                for oy in 0..g.out_h {
                    let iy = oy as isize * s + ky - p;
                    if iy < 0 || iy >= g.img_h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.img_w..(iy as usize + 1) * g.img_w];
                    let out_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = ox as isize * s + kx - p;
                        if ix >= 0 && ix < g.img_w as isize {
                            *o = src[ix as usize];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back onto the image, accumulating.
fn col2im(cols: &[f64], g: &Geometry, img: &mut [f64]) {
    let (k, s, p) = (g.kernel as isize, g.stride as isize, g.pad as isize);
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut img[c * g.img_h * g.img_w..(c + 1) * g.img_h * g.img_w];
        for ky in 0..k {
            for kx in 0..k {
                let src = &cols[row * g.cols()..(row + 1) * g.cols()];
                for oy in 0..g.out_h {
                    let iy = oy as isize * s + ky - p;
                    if iy < 0 || iy >= g.img_h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.img_w..(iy as usize + 1) * g.img_w];
                    let in_row = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, &v) in in_row.iter().enumerate() {
                        let ix = ox as isize * s + kx - p;
                        if ix >= 0 && ix < g.img_w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Lays `blocks` (each `rows x n`, row-major) side by side as one `rows x (len * n)` matrix.
fn stack_columns<'a>(
    blocks: impl ExactSizeIterator<Item = &'a [f64]>,
    rows: usize,
    n: usize,
) -> Vec<f64> {
    let count = blocks.len();
    let mut out = vec![0.0; rows * n * count];
    for (b, block) in blocks.enumerate() {
        for r in 0..rows {
            out[r * n * count + b * n..][..n].copy_from_slice(&block[r * n..][..n]);
        }
    }
    out
}

/// Copies column block `b` of a `rows x (count * n)` matrix into `dst` (`rows x n`).
fn column_block(all: &[f64], rows: usize, n: usize, count: usize, b: usize, dst: &mut [f64]) {
    for r in 0..rows {
        dst[r * n..][..n].copy_from_slice(&all[r * n * count + b * n..][..n]);
    }
}

/// True when every map shares the first one's shape, so the batch can be
/// folded into a single matrix product.
fn uniform(xs: &[FeatureMap]) -> bool {
    xs.len() > 1 && xs.iter().all(|x| x.shape() == xs[0].shape())
}

fn check_channels(x: &FeatureMap, expected: usize) -> Result<()> {
    if x.channels() != expected {
        return Err(Error::Channel {
            expected,
            actual: x.channels(),
        });
    }
    Ok(())
}

/// Square-kernel convolution. Weight layout `[out, in, k, k]`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
}

impl_parameterized!(Conv2d { weight, bias });

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        gain: f64,
        init: &mut Initializer,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let shape = [out_channels, in_channels, kernel, kernel];
        let weight = Param::new(
            &shape,
            init.fan_in_uniform(shape.iter().product(), fan_in, gain),
        );
        Self {
            weight,
            bias: bias.then(|| Param::zeros(&[out_channels])),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    /// 1x1, stride 1, no padding.
    pub fn pointwise(
        in_channels: usize,
        out_channels: usize,
        bias: bool,
        gain: f64,
        init: &mut Initializer,
    ) -> Self {
        Self::new(in_channels, out_channels, 1, 1, 0, bias, gain, init)
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.padding).saturating_sub(self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.padding).saturating_sub(self.kernel) / self.stride + 1;
        (oh, ow)
    }

    fn geometry(&self, x: &FeatureMap) -> Geometry {
        let (out_h, out_w) = self.output_size(x.height(), x.width());
        Geometry {
            channels: self.in_channels,
            img_h: x.height(),
            img_w: x.width(),
            kernel: self.kernel,
            stride: self.stride,
            pad: self.padding,
            out_h,
            out_w,
        }
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        check_channels(x, self.in_channels)?;
        if x.height() + 2 * self.padding < self.kernel || x.width() + 2 * self.padding < self.kernel
        {
            return Err(Error::Dimension(format!(
                "{}x{} input is smaller than a {}x{} kernel",
                x.height(),
                x.width(),
                self.kernel,
                self.kernel
            )));
        }
        let g = self.geometry(x);
        let mut out = FeatureMap::zeros(self.out_channels, g.out_h, g.out_w);
        let k = g.rows();
        let n = g.cols();
        if self.is_pointwise() {
            gemm(
                self.out_channels,
                k,
                n,
                &self.weight.value,
                Op::N,
                x.data(),
                Op::N,
                0.0,
                out.data_mut(),
            );
        } else {
            let cols = im2col(x.data(), &g);
            gemm(
                self.out_channels,
                k,
                n,
                &self.weight.value,
                Op::N,
                &cols,
                Op::N,
                0.0,
                out.data_mut(),
            );
        }
        if let Some(bias) = &self.bias {
            for (c, &b) in bias.value.iter().enumerate() {
                out.plane_mut(c).iter_mut().for_each(|v| *v += b);
            }
        }
        Ok(out)
    }

    pub fn forward_batch(&self, xs: &[FeatureMap]) -> Result<Vec<FeatureMap>> {
        if !uniform(xs) {
            return xs.iter().map(|x| self.forward(x)).collect();
        }
        check_channels(&xs[0], self.in_channels)?;
        let g = self.geometry(&xs[0]);
        let (k, n, count) = (g.rows(), g.cols(), xs.len());
        let cols = self.stacked_cols(xs, &g);
        let mut all = vec![0.0; self.out_channels * n * count];
        gemm(
            self.out_channels,
            k,
            n * count,
            &self.weight.value,
            Op::N,
            &cols,
            Op::N,
            0.0,
            &mut all,
        );
        let outs = (0..count)
            .map(|b| {
                let mut out = FeatureMap::zeros(self.out_channels, g.out_h, g.out_w);
                column_block(&all, self.out_channels, n, count, b, out.data_mut());
                if let Some(bias) = &self.bias {
                    for (c, &v) in bias.value.iter().enumerate() {
                        out.plane_mut(c).iter_mut().for_each(|y| *y += v);
                    }
                }
                out
            })
            .collect();
        Ok(outs)
    }

    /// im2col of every image, laid side by side.
    fn stacked_cols(&self, xs: &[FeatureMap], g: &Geometry) -> Vec<f64> {
        if self.is_pointwise() {
            stack_columns(xs.iter().map(|x| x.data()), g.rows(), g.cols())
        } else {
            let per_image: Vec<Vec<f64>> = xs.iter().map(|x| im2col(x.data(), g)).collect();
            stack_columns(per_image.iter().map(|c| c.as_slice()), g.rows(), g.cols())
        }
    }

    /// Accumulates weight/bias gradients; returns input gradients when asked.
    pub fn backward(
        &mut self,
        inputs: &[FeatureMap],
        grad_out: &[FeatureMap],
        need_input_grad: bool,
    ) -> Option<Vec<FeatureMap>> {
        assert_eq!(
            inputs.len(),
            grad_out.len(),
            "conv backward: batch size mismatch"
        );
        if inputs.is_empty() {
            return need_input_grad.then(Vec::new);
        }
        if !uniform(inputs) {
            let mut grads_in = need_input_grad.then(|| Vec::with_capacity(inputs.len()));
            for (x, gy) in inputs.iter().zip(grad_out) {
                let gx = self.backward_stacked(
                    core::slice::from_ref(x),
                    core::slice::from_ref(gy),
                    need_input_grad,
                );
                if let (Some(all), Some(gx)) = (&mut grads_in, gx) {
                    all.extend(gx);
                }
            }
            return grads_in;
        }
        self.backward_stacked(inputs, grad_out, need_input_grad)
    }

    fn backward_stacked(
        &mut self,
        inputs: &[FeatureMap],
        grad_out: &[FeatureMap],
        need_input_grad: bool,
    ) -> Option<Vec<FeatureMap>> {
        let g = self.geometry(&inputs[0]);
        let (k, n, count) = (g.rows(), g.cols(), inputs.len());
        for gy in grad_out {
            assert_eq!(
                gy.shape(),
                (self.out_channels, g.out_h, g.out_w),
                "conv backward: gradient shape"
            );
        }
        let gy_all = stack_columns(grad_out.iter().map(|gy| gy.data()), self.out_channels, n);
        let cols = self.stacked_cols(inputs, &g);
        gemm(
            self.out_channels,
            n * count,
            k,
            &gy_all,
            Op::N,
            &cols,
            Op::T,
            1.0,
            self.weight.grad_mut(),
        );
        drop(cols);
        if let Some(bias) = &mut self.bias {
            let gb = bias.grad_mut();
            for gy in grad_out {
                for (c, slot) in gb.iter_mut().enumerate() {
                    *slot += gy.plane(c).iter().sum::<f64>();
                }
            }
        }
        if !need_input_grad {
            return None;
        }
        let mut dcols_all = vec![0.0; k * n * count];
        gemm(
            k,
            self.out_channels,
            n * count,
            &self.weight.value,
            Op::T,
            &gy_all,
            Op::N,
            0.0,
            &mut dcols_all,
        );
        let pointwise = self.is_pointwise();
        let mut dcols = vec![0.0; if pointwise { 0 } else { k * n }];
        let grads = (0..count)
            .map(|b| {
                let mut gx = FeatureMap::zeros(self.in_channels, g.img_h, g.img_w);
                if pointwise {
                    column_block(&dcols_all, k, n, count, b, gx.data_mut());
                } else {
                    column_block(&dcols_all, k, n, count, b, &mut dcols);
                    col2im(&dcols, &g, gx.data_mut());
                }
                gx
            })
            .collect();
        Some(grads)
    }
}

/// Padding that makes a stride-2 transposed convolution with kernel `k`
/// produce exactly twice the input size: `(in - 1) * 2 - 2p + k = 2 * in`.
pub fn transposed_padding(kernel: usize) -> Result<usize> {
    match kernel {
        2 | 4 | 6 => Ok((kernel - 2) / 2),
        other => Err(Error::UnsupportedKernel(other)),
    }
}

/// Stride-2 transposed convolution that doubles spatial resolution.
/// Weight layout `[in, out, k, k]`; no bias (always followed by normalization).
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: Param,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    padding: usize,
}

impl_parameterized!(ConvTranspose2d { weight });

const UPSAMPLE_STRIDE: usize = 2;

impl ConvTranspose2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        gain: f64,
        init: &mut Initializer,
    ) -> Result<Self> {
        let padding = transposed_padding(kernel)?;
        // each output pixel receives in_channels * (k / stride)^2 contributions
        let fan_in = in_channels * kernel * kernel / (UPSAMPLE_STRIDE * UPSAMPLE_STRIDE);
        let shape = [in_channels, out_channels, kernel, kernel];
        let weight = Param::new(
            &shape,
            init.fan_in_uniform(shape.iter().product(), fan_in, gain),
        );
        Ok(Self {
            weight,
            in_channels,
            out_channels,
            kernel,
            padding,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    /// `(in - 1) * stride - 2 * pad + k`
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let f = |n: usize| (n - 1) * UPSAMPLE_STRIDE + self.kernel - 2 * self.padding;
        (f(h), f(w))
    }

    fn geometry(&self, x: &FeatureMap) -> Geometry {
        let (oh, ow) = self.output_size(x.height(), x.width());
        Geometry {
            channels: self.out_channels,
            img_h: oh,
            img_w: ow,
            kernel: self.kernel,
            stride: UPSAMPLE_STRIDE,
            pad: self.padding,
            out_h: x.height(),
            out_w: x.width(),
        }
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        Ok(self.forward_batch(core::slice::from_ref(x))?.remove(0))
    }

    pub fn forward_batch(&self, xs: &[FeatureMap]) -> Result<Vec<FeatureMap>> {
        if xs.len() > 1 && !uniform(xs) {
            return xs.iter().map(|x| self.forward(x)).collect();
        }
        let Some(x0) = xs.first() else {
            return Ok(Vec::new());
        };
        check_channels(x0, self.in_channels)?;
        if x0.height() == 0 || x0.width() == 0 {
            return Err(Error::Dimension(
                "empty input to transposed convolution".into(),
            ));
        }
        let g = self.geometry(x0);
        let (rows, n, count) = (g.rows(), g.cols(), xs.len());
        let x_all = stack_columns(xs.iter().map(|x| x.data()), self.in_channels, n);
        let mut cols_all = vec![0.0; rows * n * count];
        gemm(
            rows,
            self.in_channels,
            n * count,
            &self.weight.value,
            Op::T,
            &x_all,
            Op::N,
            0.0,
            &mut cols_all,
        );
        let mut cols = vec![0.0; rows * n];
        let outs = (0..count)
            .map(|b| {
                column_block(&cols_all, rows, n, count, b, &mut cols);
                let mut out = FeatureMap::zeros(self.out_channels, g.img_h, g.img_w);
                col2im(&cols, &g, out.data_mut());
                out
            })
            .collect();
        Ok(outs)
    }

    pub fn backward(
        &mut self,
        inputs: &[FeatureMap],
        grad_out: &[FeatureMap],
        need_input_grad: bool,
    ) -> Option<Vec<FeatureMap>> {
        assert_eq!(
            inputs.len(),
            grad_out.len(),
            "transposed conv backward: batch size mismatch"
        );
        if inputs.len() > 1 && !uniform(inputs) {
            let mut grads_in = need_input_grad.then(|| Vec::with_capacity(inputs.len()));
            for (x, gy) in inputs.iter().zip(grad_out) {
                let gx = self.backward(
                    core::slice::from_ref(x),
                    core::slice::from_ref(gy),
                    need_input_grad,
                );
                if let (Some(all), Some(gx)) = (&mut grads_in, gx) {
                    all.extend(gx);
                }
            }
            return grads_in;
        }
        let Some(x0) = inputs.first() else {
            return need_input_grad.then(Vec::new);
        };
        let g = self.geometry(x0);
        let (rows, n, count) = (g.rows(), g.cols(), inputs.len());
        for gy in grad_out {
            assert_eq!(
                gy.shape(),
                (self.out_channels, g.img_h, g.img_w),
                "transposed conv backward: gradient shape"
            );
        }
        let per_image: Vec<Vec<f64>> = grad_out.iter().map(|gy| im2col(gy.data(), &g)).collect();
        let dcols = stack_columns(per_image.iter().map(|c| c.as_slice()), rows, n);
        drop(per_image);
        let x_all = stack_columns(inputs.iter().map(|x| x.data()), self.in_channels, n);
        gemm(
            self.in_channels,
            n * count,
            rows,
            &x_all,
            Op::N,
            &dcols,
            Op::T,
            1.0,
            self.weight.grad_mut(),
        );
        if !need_input_grad {
            return None;
        }
        let mut gx_all = vec![0.0; self.in_channels * n * count];
        gemm(
            self.in_channels,
            rows,
            n * count,
            &self.weight.value,
            Op::N,
            &dcols,
            Op::N,
            0.0,
            &mut gx_all,
        );
        let grads = (0..count)
            .map(|b| {
                let mut gx = FeatureMap::zeros(self.in_channels, x0.height(), x0.width());
                column_block(&gx_all, self.in_channels, n, count, b, gx.data_mut());
                gx
            })
            .collect();
        Some(grads)
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::init::LINEAR_GAIN;

    /// Direct-summation reference convolution.
    fn conv_reference(conv: &Conv2d, x: &FeatureMap) -> FeatureMap {
        let (oh, ow) = conv.output_size(x.height(), x.width());
        let k = conv.kernel;
        FeatureMap::from_fn(conv.out_channels, oh, ow, |o, oy, ox| {
            let mut s = conv.bias.as_ref().map_or(0.0, |b| b.value[o]);
            for i in 0..conv.in_channels {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * conv.stride + ky) as isize - conv.padding as isize;
                        let ix = (ox * conv.stride + kx) as isize - conv.padding as isize;
                        if iy >= 0
                            && ix >= 0
                            && (iy as usize) < x.height()
                            && (ix as usize) < x.width()
                        {
                            s += conv.weight.value[((o * conv.in_channels + i) * k + ky) * k + kx]
                                * x.get(i, iy as usize, ix as usize);
                        }
                    }
                }
            }
            s
        })
    }

    /// Scatter-form reference transposed convolution.
    fn transposed_reference(t: &ConvTranspose2d, x: &FeatureMap) -> FeatureMap {
        let (oh, ow) = t.output_size(x.height(), x.width());
        let mut out = FeatureMap::zeros(t.out_channels, oh, ow);
        let k = t.kernel;
        for i in 0..t.in_channels {
            for y in 0..x.height() {
                for xx in 0..x.width() {
                    for o in 0..t.out_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let oy = (y * 2 + ky) as isize - t.padding as isize;
                                let ox = (xx * 2 + kx) as isize - t.padding as isize;
                                if oy >= 0 && ox >= 0 && (oy as usize) < oh && (ox as usize) < ow {
                                    let w = t.weight.value
                                        [((i * t.out_channels + o) * k + ky) * k + kx];
                                    let prev = out.get(o, oy as usize, ox as usize);
                                    out.set(
                                        o,
                                        oy as usize,
                                        ox as usize,
                                        prev + w * x.get(i, y, xx),
                                    );
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn random_map(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
        let v = Initializer::new(seed).uniform(c * h * w, 1.0);
        FeatureMap::from_vec(c, h, w, v).unwrap()
    }

    #[test]
    fn conv_matches_direct_summation() {
        let mut init = Initializer::new(3);
        for (k, s, p) in [(3, 1, 1), (3, 2, 1), (1, 1, 0), (2, 2, 0)] {
            let mut conv = Conv2d::new(2, 3, k, s, p, true, LINEAR_GAIN, &mut init);
            conv.bias.as_mut().unwrap().value = vec![0.1, -0.2, 0.3];
            let x = random_map(2, 6, 8, 9);
            let got = conv.forward(&x).unwrap();
            let want = conv_reference(&conv, &x);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12, "k={k} s={s} p={p}");
            }
        }
    }

    #[test]
    fn transposed_matches_scatter_reference_and_doubles() {
        let mut init = Initializer::new(5);
        for k in [2, 4, 6] {
            let t = ConvTranspose2d::new(3, 2, k, LINEAR_GAIN, &mut init).unwrap();
            let x = random_map(3, 7, 5, 11);
            let got = t.forward(&x).unwrap();
            assert_eq!(got.shape(), (2, 14, 10));
            let want = transposed_reference(&t, &x);
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12, "k={k}");
            }
        }
    }

    #[test]
    fn transposed_size_formula() {
        // independent evaluation of out = (in - 1) * s - 2p + k
        let formula = |input: usize, s: usize, p: usize, k: usize| (input - 1) * s + k - 2 * p;
        assert_eq!(formula(7, 2, 0, 2), 14);
        assert_eq!(formula(7, 2, 1, 4), 14);
        assert_eq!(formula(7, 2, 2, 6), 14);
        let mut init = Initializer::new(0);
        for k in [2, 4, 6] {
            let t = ConvTranspose2d::new(1, 1, k, LINEAR_GAIN, &mut init).unwrap();
            assert_eq!(t.output_size(7, 7), (14, 14));
        }
    }

    #[test]
    fn unsupported_kernel_rejected() {
        let mut init = Initializer::new(0);
        for k in [1, 3, 5, 8] {
            assert_eq!(
                ConvTranspose2d::new(1, 1, k, LINEAR_GAIN, &mut init).err(),
                Some(Error::UnsupportedKernel(k))
            );
        }
    }

    #[test]
    fn conv_rejects_wrong_channels() {
        let mut init = Initializer::new(0);
        let conv = Conv2d::pointwise(3, 2, false, LINEAR_GAIN, &mut init);
        assert_eq!(
            conv.forward(&FeatureMap::zeros(2, 4, 4)),
            Err(Error::Channel {
                expected: 3,
                actual: 2
            })
        );
    }

    /// Dot-product test: <conv(x), y> == <x, conv^T(y)> for both layers.
    #[test]
    fn backward_is_adjoint_of_forward() {
        let mut init = Initializer::new(8);
        let x = random_map(2, 6, 6, 1);
        let mut conv = Conv2d::new(2, 3, 3, 2, 1, false, LINEAR_GAIN, &mut init);
        let y = conv.forward(&x).unwrap();
        let gy = random_map(3, y.height(), y.width(), 2);
        let gx = conv
            .backward(core::slice::from_ref(&x), core::slice::from_ref(&gy), true)
            .unwrap();
        let lhs: f64 = y.data().iter().zip(gy.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(gx[0].data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);

        let mut t = ConvTranspose2d::new(2, 3, 6, LINEAR_GAIN, &mut init).unwrap();
        let y = t.forward(&x).unwrap();
        let gy = random_map(3, y.height(), y.width(), 3);
        let gx = t
            .backward(core::slice::from_ref(&x), core::slice::from_ref(&gy), true)
            .unwrap();
        let lhs: f64 = y.data().iter().zip(gy.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(gx[0].data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    /// Weight gradients against central differences of <forward(x), gy>.
    #[test]
    fn weight_gradients_match_finite_differences() {
        let mut init = Initializer::new(21);
        let x = random_map(2, 5, 5, 4);
        let mut conv = Conv2d::new(2, 2, 3, 2, 1, true, LINEAR_GAIN, &mut init);
        let gy = random_map(2, 3, 3, 5);
        conv.backward(core::slice::from_ref(&x), core::slice::from_ref(&gy), false);
        let analytic = conv.weight.grad.clone();
        let h = 1e-6;
        for idx in 0..conv.weight.len() {
            let orig = conv.weight.value[idx];
            let mut probe = |v: f64| {
                conv.weight.value[idx] = v;
                let y = conv.forward(&x).unwrap();
                y.data()
                    .iter()
                    .zip(gy.data())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            };
            let numeric = (probe(orig + h) - probe(orig - h)) / (2.0 * h);
            conv.weight.value[idx] = orig;
            assert!((numeric - analytic[idx]).abs() < 1e-7);
        }

        let mut t = ConvTranspose2d::new(2, 2, 4, LINEAR_GAIN, &mut init).unwrap();
        let gy = random_map(2, 10, 10, 6);
        t.backward(core::slice::from_ref(&x), core::slice::from_ref(&gy), false);
        let analytic = t.weight.grad.clone();
        for idx in 0..t.weight.len() {
            let orig = t.weight.value[idx];
            let mut probe = |v: f64| {
                t.weight.value[idx] = v;
                let y = t.forward(&x).unwrap();
                y.data()
                    .iter()
                    .zip(gy.data())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            };
            let numeric = (probe(orig + h) - probe(orig - h)) / (2.0 * h);
            t.weight.value[idx] = orig;
            assert!((numeric - analytic[idx]).abs() < 1e-7);
        }
    }
}
