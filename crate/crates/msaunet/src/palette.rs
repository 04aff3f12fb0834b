//! Indexed-colour mask output.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::{Rgb, RgbImage};
use msaunet_core::ClassMask;

use crate::{Error, Result};

/// The usual VOC colour map: bits of the index spread over R, G and B.
pub fn voc_palette() -> [[u8; 3]; 256] {
    let mut palette = [[0u8; 3]; 256];
    for (i, entry) in palette.iter_mut().enumerate() {
        let mut c = i;
        for j in 0..8 {
            for (ch, v) in entry.iter_mut().enumerate() {
                *v |= (((c >> ch) & 1) as u8) << (7 - j);
            }
            c >>= 3;
        }
    }
    palette
}

/// Writes `mask` as an 8-bit palette PNG whose indices are the labels.
pub fn write_indexed_png(mask: &ClassMask, path: &Path) -> Result<()> {
    if mask.labels().iter().any(|&l| l > 255) {
        return Err(Error::Dataset(
            "labels above 255 do not fit an 8-bit palette".into(),
        ));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        mask.width() as u32,
        mask.height() as u32,
    );
    encoder.set_color(png::ColorType::Indexed);
    encoder.set_depth(png::BitDepth::Eight);
    encoder.set_palette(voc_palette().concat());
    let encode_err = |e: png::EncodingError| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut writer = encoder.write_header().map_err(encode_err)?;
    let data: Vec<u8> = mask.labels().iter().map(|&l| l as u8).collect();
    writer.write_image_data(&data).map_err(encode_err)?;
    writer.finish().map_err(encode_err)
}

/// Half-and-half blend of an image with the mask colours.
pub fn overlay(image: &RgbImage, mask: &ClassMask) -> RgbImage {
    let palette = voc_palette();
    RgbImage::from_fn(image.width(), image.height(), |x, y| {
        let label = mask.get(y as usize, x as usize).min(255) as usize;
        let p = image.get_pixel(x, y);
        Rgb(std::array::from_fn(|c| {
            ((p[c] as u16 + palette[label][c] as u16) / 2) as u8
        }))
    })
}
