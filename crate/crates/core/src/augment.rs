//! Image transforms used to build augmented inputs, and the eight policies
//! combining them.
//!
//! Images are dense `H × W × C` arrays of `f64` in `[0, max_value]`, stored
//! row-major with channels innermost. Brightness and contrast clamp their
//! result back into that range. Crops keep `round(0.8 · H) × round(0.8 · W)`
//! pixels and are not resized.
//!
//! Two file formats are supported. The tensor format (`.tns`) is an 8-byte
//! magic `TTATNS01`, then `H`, `W`, `C` as little-endian `u32`, `max_value` as
//! little-endian `f64`, then the `H·W·C` pixel values as little-endian `f64`.
//! Binary PGM/PPM files (`.pgm`, `.ppm`, `.pnm`) are accepted for
//! interchange, with `max_value` set to the format's sample maximum.

use std::fmt;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageError, ImageFormat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Side ratio kept by a crop.
pub const CROP_RATIO: f64 = 0.8;
/// Brightness shifts `β` are drawn from `[-BRIGHTNESS_RANGE, BRIGHTNESS_RANGE]`.
pub const BRIGHTNESS_RANGE: f64 = 0.5;
/// Contrast factors `α` are drawn from `[-CONTRAST_RANGE, CONTRAST_RANGE]`.
pub const CONTRAST_RANGE: f64 = 0.2;

const TENSOR_MAGIC: &[u8; 8] = b"TTATNS01";

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
    max_value: f64,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>, max_value: f64) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if data.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "image of {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if !(max_value > 0.0 && max_value.is_finite()) {
            return Err(Error::invalid("max_value must be positive and finite"));
        }
        if data.iter().any(|v| !(0.0..=max_value).contains(v)) {
            return Err(Error::invalid("pixel values must lie in [0, max_value]"));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
            max_value,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64, max_value: f64) -> Result<Self> {
        Image::new(height, width, channels, vec![value; height * width * channels], max_value)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn max_value(&self) -> f64 {
        self.max_value
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    /// Largest pixel value present in the image.
    pub fn peak(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    fn map_clamped(&self, f: impl Fn(f64) -> f64) -> Image {
        let max = self.max_value;
        Image {
            data: self.data.iter().map(|&v| f(v).clamp(0.0, max)).collect(),
            ..self.clone()
        }
    }
}

/// Mirror around the vertical axis.
pub fn flip(img: &Image) -> Image {
    let (w, c) = (img.width, img.channels);
    let mut data = Vec::with_capacity(img.data.len());
    for row in img.data.chunks(w * c) {
        for px in row.chunks(c).rev() {
            data.extend_from_slice(px);
        }
    }
    Image { data, ..img.clone() }
}

/// Output size of a crop along one axis.
pub fn crop_extent(dim: usize) -> usize {
    (CROP_RATIO * dim as f64).round() as usize
}

/// The sub-block of size `crop_extent(H) × crop_extent(W)` at `(top, left)`.
pub fn crop_at(img: &Image, top: usize, left: usize) -> Result<Image> {
    if img.height < 2 || img.width < 2 {
        return Err(Error::invalid(format!(
            "cannot crop a {}x{} image",
            img.height, img.width
        )));
    }
    let (h, w) = (crop_extent(img.height), crop_extent(img.width));
    if top + h > img.height || left + w > img.width {
        return Err(Error::invalid(format!("crop corner ({top}, {left}) out of range")));
    }
    let c = img.channels;
    let mut data = Vec::with_capacity(h * w * c);
    for r in top..top + h {
        let start = (r * img.width + left) * c;
        data.extend_from_slice(&img.data[start..start + w * c]);
    }
    Ok(Image {
        height: h,
        width: w,
        data,
        ..img.clone()
    })
}

/// Crop at a corner drawn uniformly from the valid positions.
pub fn crop<R: Rng + ?Sized>(img: &Image, rng: &mut R) -> Result<Image> {
    if img.height < 2 || img.width < 2 {
        return crop_at(img, 0, 0);
    }
    let top = rng.random_range(0..=img.height - crop_extent(img.height));
    let left = rng.random_range(0..=img.width - crop_extent(img.width));
    crop_at(img, top, left)
}

/// Adds `beta` times the image peak to every pixel.
pub fn brightness_with(img: &Image, beta: f64) -> Image {
    let shift = beta * img.peak();
    img.map_clamped(|v| v + shift)
}

pub fn brightness<R: Rng + ?Sized>(img: &Image, rng: &mut R) -> Image {
    brightness_with(img, rng.random_range(-BRIGHTNESS_RANGE..=BRIGHTNESS_RANGE))
}

/// Scales every pixel by `1 + alpha`.
pub fn contrast_with(img: &Image, alpha: f64) -> Image {
    img.map_clamped(|v| v * (1.0 + alpha))
}

pub fn contrast<R: Rng + ?Sized>(img: &Image, rng: &mut R) -> Image {
    contrast_with(img, rng.random_range(-CONTRAST_RANGE..=CONTRAST_RANGE))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Flip,
    Crop,
    Brightness,
    Contrast,
}

impl TransformKind {
    pub fn tag(self) -> &'static str {
        match self {
            TransformKind::Flip => "F",
            TransformKind::Crop => "Cr",
            TransformKind::Brightness => "B",
            TransformKind::Contrast => "Ct",
        }
    }

    pub fn apply<R: Rng + ?Sized>(self, img: &Image, rng: &mut R) -> Result<Image> {
        Ok(match self {
            TransformKind::Flip => flip(img),
            TransformKind::Crop => crop(img, rng)?,
            TransformKind::Brightness => brightness(img, rng),
            TransformKind::Contrast => contrast(img, rng),
        })
    }
}

/// Augmentation types with their replicate counts.
#[derive(Debug, Clone, PartialEq)]
pub struct AugPolicy {
    entries: Vec<(TransformKind, usize)>,
    seed: u64,
}

/// Number of predefined policies.
pub const POLICY_COUNT: usize = 8;

impl AugPolicy {
    pub fn new(entries: Vec<(TransformKind, usize)>, seed: u64) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("a policy needs at least one transform"));
        }
        if entries.iter().any(|&(_, n)| n == 0) {
            return Err(Error::invalid("replicate counts must be at least one"));
        }
        Ok(AugPolicy { entries, seed })
    }

    /// Predefined policy `index` in `1..=8`.
    pub fn table(index: usize, seed: u64) -> Result<Self> {
        use TransformKind::*;
        let entries = match index {
            1 => vec![(Flip, 1), (Crop, 5)],
            2 => vec![(Flip, 1), (Brightness, 5)],
            3 => vec![(Crop, 5), (Brightness, 5)],
            4 => vec![(Flip, 1), (Crop, 5), (Brightness, 5)],
            5 => vec![(Flip, 1), (Crop, 5), (Contrast, 5)],
            6 => vec![(Flip, 1), (Brightness, 5), (Contrast, 5)],
            7 => vec![(Crop, 5), (Brightness, 5), (Contrast, 5)],
            8 => vec![(Flip, 1), (Crop, 5), (Brightness, 5), (Contrast, 5)],
            _ => {
                return Err(Error::invalid(format!(
                    "policy must be in 1..={POLICY_COUNT}, got {index}"
                )))
            }
        };
        AugPolicy::new(entries, seed)
    }

    pub fn entries(&self) -> &[(TransformKind, usize)] {
        &self.entries
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        AugPolicy {
            seed,
            ..self.clone()
        }
    }

    /// Number of augmentation types `m`.
    pub fn types(&self) -> usize {
        self.entries.len()
    }

    /// Total images produced per input.
    pub fn image_count(&self) -> usize {
        self.entries.iter().map(|&(_, n)| n).sum()
    }
}

impl fmt::Display for AugPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .entries
            .iter()
            .map(|&(kind, n)| {
                if n == 1 {
                    kind.tag().to_string()
                } else {
                    format!("{n}{}", kind.tag())
                }
            })
            .collect();
        write!(f, "{}", parts.join("+"))
    }
}

/// The `replicate`-th image of augmentation type `aug_type`.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub aug_type: usize,
    pub replicate: usize,
    pub image: Image,
}

fn replicate_rng(seed: u64, aug_type: usize, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((aug_type as u64) << 32) | replicate as u64);
    rng
}

/// All augmented copies of `img`, grouped by type in policy order.
pub fn apply_policy(img: &Image, policy: &AugPolicy) -> Result<Vec<Augmented>> {
    let jobs: Vec<(usize, usize, TransformKind)> = policy
        .entries
        .iter()
        .enumerate()
        .flat_map(|(i, &(kind, n))| (0..n).map(move |j| (i, j, kind)))
        .collect();
    jobs.into_par_iter()
        .map(|(i, j, kind)| {
            let mut rng = replicate_rng(policy.seed, i, j);
            Ok(Augmented {
                aug_type: i,
                replicate: j,
                image: kind.apply(img, &mut rng)?,
            })
        })
        .collect()
}

fn image_error(err: ImageError) -> Error {
    match err {
        ImageError::IoError(e) => Error::Io(e),
        other => Error::invalid(other.to_string()),
    }
}

pub fn write_tensor<W: Write>(img: &Image, mut out: W) -> Result<()> {
    let dim = |d: usize| u32::try_from(d).map_err(|_| Error::invalid("image dimension exceeds u32"));
    out.write_all(TENSOR_MAGIC)?;
    for d in [img.height, img.width, img.channels] {
        out.write_all(&dim(d)?.to_le_bytes())?;
    }
    out.write_all(&img.max_value.to_le_bytes())?;
    let mut buf = Vec::with_capacity(img.data.len() * 8);
    for v in &img.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor<R: Read>(mut input: R) -> Result<Image> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::invalid("not an image tensor file"));
    }
    let mut u32buf = [0u8; 4];
    let mut dims = [0usize; 3];
    for d in &mut dims {
        input.read_exact(&mut u32buf)?;
        *d = u32::from_le_bytes(u32buf) as usize;
    }
    let mut f64buf = [0u8; 8];
    input.read_exact(&mut f64buf)?;
    let max_value = f64::from_le_bytes(f64buf);
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::invalid("image dimensions overflow"))?;
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() != count * 8 {
        return Err(Error::invalid(format!(
            "tensor body holds {} bytes, expected {}",
            bytes.len(),
            count * 8
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    Image::new(dims[0], dims[1], dims[2], data, max_value)
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let decoded = image::load_from_memory_with_format(bytes, ImageFormat::Pnm).map_err(image_error)?;
    let (h, w) = (decoded.height() as usize, decoded.width() as usize);
    let (channels, max_value, data): (usize, f64, Vec<f64>) = match decoded {
        DynamicImage::ImageLuma8(b) => (1, 255.0, b.into_raw().into_iter().map(f64::from).collect()),
        DynamicImage::ImageLuma16(b) => (1, 65535.0, b.into_raw().into_iter().map(f64::from).collect()),
        DynamicImage::ImageRgb16(b) => (3, 65535.0, b.into_raw().into_iter().map(f64::from).collect()),
        other => (3, 255.0, other.into_rgb8().into_raw().into_iter().map(f64::from).collect()),
    };
    Image::new(h, w, channels, data, max_value)
}

/// Binary PGM (one channel) or PPM (three channels), quantized to 8 bits.
pub fn encode_pnm(img: &Image) -> Result<Vec<u8>> {
    let (subtype, color) = match img.channels {
        1 => (PnmSubtype::Graymap(SampleEncoding::Binary), ExtendedColorType::L8),
        3 => (PnmSubtype::Pixmap(SampleEncoding::Binary), ExtendedColorType::Rgb8),
        c => return Err(Error::invalid(format!("PNM output needs 1 or 3 channels, got {c}"))),
    };
    let samples: Vec<u8> = img
        .data
        .iter()
        .map(|v| (v / img.max_value * 255.0).round() as u8)
        .collect();
    let mut out = Cursor::new(Vec::new());
    PnmEncoder::new(&mut out)
        .with_subtype(subtype)
        .write_image(&samples, img.width as u32, img.height as u32, color)
        .map_err(image_error)?;
    Ok(out.into_inner())
}

fn is_pnm(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("pgm" | "ppm" | "pnm" | "pbm")
    )
}

/// Whether `path` has an extension this module can read.
pub fn is_image_path(path: &Path) -> bool {
    is_pnm(path) || path.extension().is_some_and(|e| e.eq_ignore_ascii_case("tns"))
}

/// Reads a PNM or tensor file, chosen by extension.
pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path)?;
    if is_pnm(path) {
        decode_pnm(&bytes)
    } else {
        read_tensor(bytes.as_slice())
    }
}

pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    let bytes = if is_pnm(path) {
        encode_pnm(img)?
    } else {
        let mut buf = Vec::new();
        write_tensor(img, &mut buf)?;
        buf
    };
    std::fs::write(path, bytes)?;
    Ok(())
}
