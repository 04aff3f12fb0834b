//! Dataset ingestion: mask decoding, resizing, normalization, a synthetic
//! rectangles corpus and seeded batching.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Luma, Rgb, RgbImage};
use msaunet_core::{ClassMask, FeatureMap};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MaskEncoding {
    /// Palette index (or grey value) is the class.
    IndexedPalette,
    /// `class = (R / 10) * 256 + G`; the B channel is ignored.
    AdeRgChannels,
    /// Single-channel class indices.
    RawClassIndex,
}

/// Mask pixels as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RawMask {
    /// Palette indices or grey values.
    Single {
        width: u32,
        height: u32,
        values: Vec<u16>,
    },
    Rgb(RgbImage),
}

impl RawMask {
    pub fn dimensions(&self) -> (u32, u32) {
        match self {
            RawMask::Single { width, height, .. } => (*width, *height),
            RawMask::Rgb(img) => img.dimensions(),
        }
    }
}

fn unpack(row: &[u8], depth: u8, width: usize, out: &mut Vec<u16>) {
    match depth {
        8 => out.extend(row[..width].iter().map(|&v| v as u16)),
        16 => out.extend(
            row[..2 * width]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]])),
        ),
        d => {
            let per_byte = 8 / d as usize;
            let mask = (1u16 << d) - 1;
            out.extend((0..width).map(|x| {
                let byte = row[x / per_byte] as u16;
                let shift = 8 - d as usize * (x % per_byte + 1);
                (byte >> shift) & mask
            }));
        }
    }
}

/// Reads mask pixels without expanding palettes.
pub fn load_raw_mask(path: &Path) -> Result<RawMask> {
    let bad = |message: String| Error::Image {
        path: path.to_path_buf(),
        message,
    };
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut decoder = png::Decoder::new(BufReader::new(file));
        decoder.set_transformations(png::Transformations::IDENTITY);
        let mut reader = decoder.read_info().map_err(|e| bad(e.to_string()))?;
        let (color, depth) = reader.output_color_type();
        if matches!(color, png::ColorType::Indexed | png::ColorType::Grayscale) {
            let size = reader
                .output_buffer_size()
                .ok_or_else(|| bad("image too large".into()))?;
            let mut buf = vec![0; size];
            let info = reader
                .next_frame(&mut buf)
                .map_err(|e| bad(e.to_string()))?;
            let mut values = Vec::with_capacity((info.width * info.height) as usize);
            for row in buf.chunks(info.line_size).take(info.height as usize) {
                unpack(row, depth as u8, info.width as usize, &mut values);
            }
            return Ok(RawMask::Single {
                width: info.width,
                height: info.height,
                values,
            });
        }
    }
    let img = image::open(path).map_err(|e| bad(e.to_string()))?;
    Ok(RawMask::Rgb(img.to_rgb8()))
}

/// Converts stored mask pixels to class labels; labels `>= num_classes`
/// become `void_label`.
pub fn decode_mask(
    raw: &RawMask,
    encoding: MaskEncoding,
    num_classes: usize,
    void_label: u16,
) -> Result<ClassMask> {
    let (w, h) = raw.dimensions();
    let clamp = |class: u32| {
        if (class as usize) < num_classes {
            class as u16
        } else {
            void_label
        }
    };
    let labels: Vec<u16> = match (encoding, raw) {
        (
            MaskEncoding::IndexedPalette | MaskEncoding::RawClassIndex,
            RawMask::Single { values, .. },
        ) => values.iter().map(|&v| clamp(v as u32)).collect(),
        (MaskEncoding::AdeRgChannels, RawMask::Rgb(img)) => img
            .pixels()
            .map(|p| clamp((p[0] as u32 / 10) * 256 + p[1] as u32))
            .collect(),
        (MaskEncoding::AdeRgChannels, RawMask::Single { .. }) => {
            return Err(Error::Dataset(
                "ade-rg-channels masks must be RGB images".into(),
            ))
        }
        (_, RawMask::Rgb(_)) => {
            return Err(Error::Dataset(format!(
                "{encoding:?} masks must be single-channel or palette images"
            )))
        }
    };
    Ok(ClassMask::new(
        h as usize,
        w as usize,
        num_classes,
        Some(void_label),
        labels,
    )?)
}

/// Per-channel `(x - mean) / std` on values scaled to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    /// Statistics of the usual pretrained-backbone corpus.
    fn default() -> Self {
        Self {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

impl Normalization {
    pub fn half() -> Self {
        Self {
            mean: [0.5; 3],
            std: [0.5; 3],
        }
    }
}

/// Bilinear resize to `(height, width)` followed by normalization.
pub fn preprocess(image: &RgbImage, size: (usize, usize), norm: &Normalization) -> FeatureMap {
    let (h, w) = size;
    let resized = if image.dimensions() == (w as u32, h as u32) {
        image.clone()
    } else {
        imageops::resize(image, w as u32, h as u32, FilterType::Triangle)
    };
    FeatureMap::from_fn(3, h, w, |c, y, x| {
        let v = resized.get_pixel(x as u32, y as u32)[c] as f64 / 255.0;
        (v - norm.mean[c]) / norm.std[c]
    })
}

/// Nearest-neighbour resize of a mask.
pub fn resize_mask(mask: &ClassMask, size: (usize, usize)) -> Result<ClassMask> {
    let (h, w) = size;
    if (mask.height(), mask.width()) == (h, w) {
        return Ok(mask.clone());
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(
        mask.width() as u32,
        mask.height() as u32,
        mask.labels().to_vec(),
    )
    .expect("label buffer matches mask size");
    let resized = imageops::resize(&buf, w as u32, h as u32, FilterType::Nearest);
    Ok(ClassMask::new(
        h,
        w,
        mask.num_classes(),
        mask.void_label(),
        resized.into_raw(),
    )?)
}

pub fn load_image(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: FeatureMap,
    pub mask: ClassMask,
    pub id: String,
}

/// Where a directory dataset lives and how its masks are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetLayout {
    pub root: PathBuf,
    pub image_dir: String,
    pub mask_dir: String,
    pub split_list: Option<PathBuf>,
    pub mask_encoding: MaskEncoding,
    pub num_classes: usize,
    pub void_label: u16,
}

const IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

fn stem_of(path: &Path) -> Option<String> {
    path.file_stem().and_then(|s| s.to_str()).map(str::to_owned)
}

/// Files in `dir` whose stem is `stem` and whose extension is an image type.
fn find_by_stem(dir: &Path, stem: &str) -> Result<PathBuf> {
    let mut hits: Vec<PathBuf> = IMAGE_EXTENSIONS
        .iter()
        .flat_map(|ext| [ext.to_string(), ext.to_uppercase()])
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .filter(|p| p.is_file())
        .collect();
    hits.dedup();
    match hits.len() {
        1 => Ok(hits.remove(0)),
        0 => Err(Error::Dataset(format!(
            "no file for stem `{stem}` in {}",
            dir.display()
        ))),
        _ => Err(Error::Dataset(format!(
            "stem `{stem}` is ambiguous in {}",
            dir.display()
        ))),
    }
}

/// Sorted stems of the image files in `dir`.
pub fn list_stems(dir: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut stems = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if is_image {
            stems.extend(stem_of(&path));
        }
    }
    stems.sort();
    Ok(stems)
}

impl DatasetLayout {
    pub fn stems(&self) -> Result<Vec<String>> {
        match &self.split_list {
            Some(list) => {
                let path = self.root.join(list);
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                Ok(text
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(str::to_owned)
                    .collect())
            }
            None => list_stems(&self.root.join(&self.mask_dir)),
        }
    }

    pub fn load(&self, size: (usize, usize), norm: &Normalization) -> Result<Vec<Sample>> {
        let image_dir = self.root.join(&self.image_dir);
        let mask_dir = self.root.join(&self.mask_dir);
        let mut samples = Vec::new();
        for stem in self.stems()? {
            let image = load_image(&find_by_stem(&image_dir, &stem)?)?;
            let raw = load_raw_mask(&find_by_stem(&mask_dir, &stem)?)?;
            if raw.dimensions() != image.dimensions() {
                return Err(Error::Dataset(format!(
                    "`{stem}`: image and mask sizes differ"
                )));
            }
            let mask = decode_mask(&raw, self.mask_encoding, self.num_classes, self.void_label)?;
            samples.push(Sample {
                image: preprocess(&image, size, norm),
                mask: resize_mask(&mask, size)?,
                id: stem,
            });
        }
        if samples.is_empty() {
            return Err(Error::Dataset(format!(
                "no samples under {}",
                self.root.display()
            )));
        }
        Ok(samples)
    }
}

/// Colour used for class `c` in synthetic images; class 0 is a dark background.
fn synthetic_color(c: usize) -> [u8; 3] {
    const COLORS: [[u8; 3]; 8] = [
        [40, 40, 40],
        [220, 60, 50],
        [50, 200, 80],
        [60, 90, 230],
        [230, 210, 40],
        [200, 60, 210],
        [40, 210, 210],
        [240, 240, 240],
    ];
    if c < COLORS.len() {
        COLORS[c]
    } else {
        let v = (c * 97 % 200 + 40) as u8;
        [v, v.wrapping_mul(3), v.wrapping_mul(7)]
    }
}

/// Raw synthetic corpus: up to three axis-aligned rectangles of random
/// foreground classes on a background. Each rectangle side is at most half
/// the image, so background always remains.
pub fn synthetic_raw(
    num_samples: usize,
    size: usize,
    num_classes: usize,
    seed: u64,
) -> Result<Vec<(String, RgbImage, ClassMask)>> {
    if num_classes < 2 {
        return Err(Error::Config(format!(
            "synthetic data needs >= 2 classes, got {num_classes}"
        )));
    }
    if size < 4 {
        return Err(Error::Config(format!(
            "synthetic image size {size} is too small"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(num_samples);
    for i in 0..num_samples {
        let mut labels = vec![0u16; size * size];
        for _ in 0..rng.gen_range(1..=3) {
            let class = rng.gen_range(1..num_classes) as u16;
            let rh = rng.gen_range(size / 8..=size / 2).max(1);
            let rw = rng.gen_range(size / 8..=size / 2).max(1);
            let y0 = rng.gen_range(0..=size - rh);
            let x0 = rng.gen_range(0..=size - rw);
            for y in y0..y0 + rh {
                labels[y * size + x0..y * size + x0 + rw].fill(class);
            }
        }
        let mut image = RgbImage::new(size as u32, size as u32);
        for (p, px) in image.pixels_mut().enumerate() {
            let base = synthetic_color(labels[p] as usize);
            let jitter: i16 = rng.gen_range(-12..=12);
            *px = Rgb(base.map(|v| (v as i16 + jitter).clamp(0, 255) as u8));
        }
        let mask = ClassMask::new(size, size, num_classes, None, labels)?;
        out.push((format!("synthetic_{i:04}"), image, mask));
    }
    Ok(out)
}

/// Normalized synthetic corpus (mean 0.5, std 0.5).
pub fn synthetic_shapes(
    num_samples: usize,
    size: usize,
    num_classes: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    synthetic_samples(num_samples, size, num_classes, seed, &Normalization::half())
}

pub fn synthetic_samples(
    num_samples: usize,
    size: usize,
    num_classes: usize,
    seed: u64,
    norm: &Normalization,
) -> Result<Vec<Sample>> {
    Ok(synthetic_raw(num_samples, size, num_classes, seed)?
        .into_iter()
        .map(|(id, image, mask)| Sample {
            image: preprocess(&image, (size, size), norm),
            mask,
            id,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub images: Vec<FeatureMap>,
    pub masks: Vec<ClassMask>,
    pub ids: Vec<String>,
}

/// Sample indices per batch for one epoch; the shuffle depends only on
/// `(seed, epoch)` and the last batch may be short.
pub fn batch_order(
    len: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>> {
    if len == 0 {
        return Err(Error::Dataset("cannot batch an empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

pub fn batches(
    dataset: &[Sample],
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<impl Iterator<Item = Batch> + '_> {
    let order = batch_order(dataset.len(), batch_size, seed, epoch)?;
    Ok(order.into_iter().map(move |idx| Batch {
        images: idx.iter().map(|&i| dataset[i].image.clone()).collect(),
        masks: idx.iter().map(|&i| dataset[i].mask.clone()).collect(),
        ids: idx.iter().map(|&i| dataset[i].id.clone()).collect(),
    }))
}
