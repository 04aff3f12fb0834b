//! Dense feature maps and integer class masks.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// A `channels x height x width` array of `f64`, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "buffer of {} values cannot hold {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`
    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_spatial(&self, other: &FeatureMap) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FeatureMap {
        FeatureMap {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Adds `other` elementwise. Shapes must agree.
    pub fn add_assign(&mut self, other: &FeatureMap) {
        assert_eq!(self.shape(), other.shape(), "add_assign: shape mismatch");
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// Stacks maps of equal spatial size along the channel axis.
    pub fn concat_channels(parts: &[&FeatureMap]) -> Result<FeatureMap> {
        let first = parts
            .first()
            .ok_or_else(|| Error::ShapeMismatch("concatenating zero maps".into()))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        let mut channels = 0;
        for p in parts {
            if p.height != h || p.width != w {
                return Err(Error::ShapeMismatch(format!(
                    "cannot concatenate {}x{} with {}x{}",
                    h, w, p.height, p.width
                )));
            }
            channels += p.channels;
            data.extend_from_slice(&p.data);
        }
        Ok(FeatureMap {
            channels,
            height: h,
            width: w,
            data,
        })
    }

    /// Inverse of [`FeatureMap::concat_channels`].
    pub fn split_channels(&self, sizes: &[usize]) -> Vec<FeatureMap> {
        assert_eq!(
            sizes.iter().sum::<usize>(),
            self.channels,
            "split sizes must cover all channels"
        );
        let n = self.plane_len();
        let mut start = 0;
        sizes
            .iter()
            .map(|&c| {
                let part = FeatureMap {
                    channels: c,
                    height: self.height,
                    width: self.width,
                    data: self.data[start * n..(start + c) * n].to_vec(),
                };
                start += c;
                part
            })
            .collect()
    }
}

/// A `height x width` map of per-pixel class labels.
///
/// Every label is either `< num_classes` or equal to the optional void label,
/// which marks pixels excluded from losses and metrics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMask {
    height: usize,
    width: usize,
    num_classes: usize,
    void_label: Option<u16>,
    labels: Vec<u16>,
}

impl ClassMask {
    pub fn new(
        height: usize,
        width: usize,
        num_classes: usize,
        void_label: Option<u16>,
        labels: Vec<u16>,
    ) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} labels cannot fill a {height}x{width} mask",
                labels.len()
            )));
        }
        if let Some(v) = void_label {
            if (v as usize) < num_classes {
                return Err(Error::InvalidConfig(format!(
                    "void label {v} collides with a class index (num_classes = {num_classes})"
                )));
            }
        }
        if let Some(&bad) = labels
            .iter()
            .find(|&&l| (l as usize) >= num_classes && Some(l) != void_label)
        {
            return Err(Error::LabelOutOfRange {
                label: bad,
                num_classes,
            });
        }
        Ok(Self {
            height,
            width,
            num_classes,
            void_label,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, num_classes: usize, label: u16) -> Result<Self> {
        Self::new(
            height,
            width,
            num_classes,
            None,
            vec![label; height * width],
        )
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn void_label(&self) -> Option<u16> {
        self.void_label
    }

    #[inline]
    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn is_void(&self, label: u16) -> bool {
        Some(label) == self.void_label
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split_restores_parts() {
        let a = FeatureMap::from_fn(2, 3, 4, |c, y, x| (c * 100 + y * 10 + x) as f64);
        let b = FeatureMap::filled(1, 3, 4, -1.0);
        let cat = FeatureMap::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), (3, 3, 4));
        assert_eq!(cat.get(1, 2, 3), 123.0);
        assert_eq!(cat.get(2, 0, 0), -1.0);
        let parts = cat.split_channels(&[2, 1]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = FeatureMap::zeros(1, 2, 2);
        let b = FeatureMap::zeros(1, 4, 4);
        assert!(matches!(
            FeatureMap::concat_channels(&[&a, &b]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn class_mask_validates_labels() {
        assert!(ClassMask::new(1, 2, 3, None, vec![0, 2]).is_ok());
        assert_eq!(
            ClassMask::new(1, 2, 3, None, vec![0, 3]),
            Err(Error::LabelOutOfRange {
                label: 3,
                num_classes: 3
            })
        );
        let m = ClassMask::new(1, 2, 3, Some(255), vec![255, 1]).unwrap();
        assert!(m.is_void(m.get(0, 0)));
        assert!(ClassMask::new(1, 1, 3, Some(2), vec![0]).is_err());
    }
}
