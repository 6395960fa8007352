//! Images, shadow masks, segmentation label maps and the pixel/patch sample
//! containers that the rest of the crate operates on.
//!
//! Colors are stored as `f64` triples in `[0, 1]`. Loading divides by the
//! bit-depth maximum; saving quantizes to 8-bit PNG.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use image::{ColorType, DynamicImage, ImageReader};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An RGB color with channels in `[0, 1]`.
pub type Rgb = [f64; 3];

/// A pixel coordinate as `(row, col)`.
pub type Coord = (usize, usize);

/// Fraction of the frame that may be claimed by more than one `seg_<id>.png`
/// mask before [`load_labelmap`] attaches a warning to its result.
pub const OVERLAP_WARN_FRACTION: f64 = 0.01;

fn check_dims(height: usize, width: usize, len: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidImage(format!(
            "zero-sized raster ({height}x{width})"
        )));
    }
    if height * width != len {
        return Err(Error::InvalidImage(format!(
            "buffer of {len} pixels does not match {height}x{width}"
        )));
    }
    Ok(())
}

/// An `H x W` color image with every channel finite and in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<Rgb>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<Rgb>) -> Result<Self> {
        check_dims(height, width, data.len())?;
        if let Some((i, px)) = data
            .iter()
            .enumerate()
            .find(|(_, px)| px.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0))
        {
            return Err(Error::InvalidImage(format!(
                "pixel {} ({}, {}) has channel outside [0,1]: {:?}",
                i,
                i / width,
                i % width,
                px
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds an image from a per-pixel closure. Values are validated, not clamped.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> Rgb,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, color: Rgb) -> Result<Self> {
        Self::new(height, width, vec![color; height * width])
    }

    /// Wraps data that the caller already clamped to `[0, 1]`.
    pub(crate) fn from_clamped(height: usize, width: usize, data: Vec<Rgb>) -> Self {
        debug_assert_eq!(height * width, data.len());
        debug_assert!(data.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Rgb {
        self.data[row * self.width + col]
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.data
    }

    pub fn contains(&self, (row, col): Coord) -> bool {
        row < self.height && col < self.width
    }

    /// Quantizes to an 8-bit buffer (round to nearest).
    pub fn to_rgb8(&self) -> image::RgbImage {
        let mut out = image::RgbImage::new(self.width as u32, self.height as u32);
        for (i, px) in self.data.iter().enumerate() {
            let p = out.get_pixel_mut((i % self.width) as u32, (i / self.width) as u32);
            p.0 = px.map(quantize8);
        }
        out
    }
}

#[inline]
pub(crate) fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// A boolean per-pixel mask; `true` marks shadow / foreground.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        check_dims(height, width, data.len())?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.width + col] = value;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    /// True coordinates in raster order.
    pub fn coords(&self) -> Vec<Coord> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(|(i, _)| (i / self.width, i % self.width))
            .collect()
    }

    pub fn not(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| !v).collect(),
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(bool, bool) -> bool) -> Result<Self> {
        self.ensure_dims(other.dims())?;
        Ok(Self {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn and(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a || b)
    }

    /// `self AND NOT other`.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn ensure_dims(&self, dims: (usize, usize)) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: dims,
            });
        }
        Ok(())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = image::GrayImage::new(self.width as u32, self.height as u32);
        for (i, &v) in self.data.iter().enumerate() {
            out.get_pixel_mut((i % self.width) as u32, (i / self.width) as u32)
                .0 = [if v { 255 } else { 0 }];
        }
        save_dynamic(&DynamicImage::ImageLuma8(out), path.as_ref())
    }
}

/// Segment id per pixel; 0 is unlabeled and never forms a region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u32>) -> Result<Self> {
        check_dims(height, width, data.len())?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> u32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, data)
    }

    /// Every pixel labeled 1. Used when no segmentation is available.
    pub fn single_segment(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![1; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.data[row * self.width + col]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.data
    }

    /// Distinct nonzero ids, ascending.
    pub fn segment_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.data.iter().copied().filter(|&id| id != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn segment_mask(&self, id: u32) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| v == id).collect(),
        }
    }

    /// Writes an 8-bit grayscale PNG, or 16-bit when an id exceeds 255.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let (w, h) = (self.width as u32, self.height as u32);
        let max = self.data.iter().copied().max().unwrap_or(0);
        let img = if max <= u8::MAX as u32 {
            DynamicImage::ImageLuma8(image::GrayImage::from_fn(w, h, |x, y| {
                image::Luma([self.get(y as usize, x as usize) as u8])
            }))
        } else if max <= u16::MAX as u32 {
            DynamicImage::ImageLuma16(image::ImageBuffer::from_fn(w, h, |x, y| {
                image::Luma([self.get(y as usize, x as usize) as u16])
            }))
        } else {
            return Err(Error::Unsupported {
                path: path.as_ref().to_path_buf(),
                message: format!("segment id {max} does not fit a 16-bit PNG"),
            });
        };
        save_dynamic(&img, path.as_ref())
    }
}

/// Result of [`load_labelmap`].
#[derive(Debug, Clone)]
pub struct LabelMapLoad {
    pub labels: LabelMap,
    /// Pixels claimed by more than one mask file (directory mode only).
    pub overlap_count: usize,
    /// Set when `overlap_count` exceeds [`OVERLAP_WARN_FRACTION`] of the frame.
    pub warning: Option<String>,
}

/// Pixel coordinates with the colors read from one image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PixelSet {
    coords: Vec<Coord>,
    colors: Vec<Rgb>,
}

impl PixelSet {
    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn colors(&self) -> &[Rgb] {
        &self.colors
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Concatenates sets in order.
    pub fn concat<'a>(sets: impl IntoIterator<Item = &'a PixelSet>) -> PixelSet {
        let mut out = PixelSet::default();
        for s in sets {
            out.coords.extend_from_slice(&s.coords);
            out.colors.extend_from_slice(&s.colors);
        }
        out
    }
}

/// Reads the colors at `coords` in the given order.
pub fn gather_colors(image: &RgbImage, coords: &[Coord]) -> Result<PixelSet> {
    let mut colors = Vec::with_capacity(coords.len());
    for &(row, col) in coords {
        if !image.contains((row, col)) {
            return Err(Error::OutOfBounds {
                row,
                col,
                height: image.height,
                width: image.width,
            });
        }
        colors.push(image.get(row, col));
    }
    Ok(PixelSet {
        coords: coords.to_vec(),
        colors,
    })
}

/// A square `size x size` window copied out of an image.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    top: usize,
    left: usize,
    size: usize,
    pixels: Vec<Rgb>,
}

impl Patch {
    pub fn extract(image: &RgbImage, top: usize, left: usize, size: usize) -> Result<Self> {
        if size == 0 || top + size > image.height || left + size > image.width {
            return Err(Error::OutOfBounds {
                row: top + size.saturating_sub(1),
                col: left + size.saturating_sub(1),
                height: image.height,
                width: image.width,
            });
        }
        let mut pixels = Vec::with_capacity(size * size);
        for r in top..top + size {
            pixels.extend_from_slice(
                &image.data[r * image.width + left..r * image.width + left + size],
            );
        }
        Ok(Self {
            top,
            left,
            size,
            pixels,
        })
    }

    /// Builds a patch from raw row-major pixels (not tied to any image).
    pub fn from_pixels(size: usize, pixels: Vec<Rgb>) -> Result<Self> {
        check_dims(size, size, pixels.len())?;
        Ok(Self {
            top: 0,
            left: 0,
            size,
            pixels,
        })
    }

    pub fn top_left(&self) -> Coord {
        (self.top, self.left)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Rgb {
        self.pixels[row * self.size + col]
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }
}

/// Position and size of a patch, without pixel data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchRect {
    pub top: usize,
    pub left: usize,
    pub size: usize,
}

impl From<&Patch> for PatchRect {
    fn from(p: &Patch) -> Self {
        PatchRect {
            top: p.top,
            left: p.left,
            size: p.size,
        }
    }
}

fn decode(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| match e {
        image::ImageError::Unsupported(u) => Error::Unsupported {
            path: path.to_path_buf(),
            message: u.to_string(),
        },
        other => Error::Decode {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })?;
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::InvalidImage(format!(
            "{} is zero-sized",
            path.display()
        )));
    }
    Ok(img)
}

fn is_wide(color: ColorType) -> bool {
    matches!(
        color,
        ColorType::L16 | ColorType::La16 | ColorType::Rgb16 | ColorType::Rgba16
    )
}

/// Converts to unit-range RGB, dropping alpha.
fn to_unit_rgb(img: &DynamicImage) -> (usize, usize, Vec<Rgb>) {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = if is_wide(img.color()) {
        img.to_rgb16()
            .pixels()
            .map(|p| p.0.map(|v| v as f64 / u16::MAX as f64))
            .collect()
    } else if matches!(img.color(), ColorType::Rgb32F | ColorType::Rgba32F) {
        img.to_rgb32f()
            .pixels()
            .map(|p| p.0.map(|v| (v as f64).clamp(0.0, 1.0)))
            .collect()
    } else {
        img.to_rgb8()
            .pixels()
            .map(|p| p.0.map(|v| v as f64 / u8::MAX as f64))
            .collect()
    };
    (h, w, data)
}

/// Loads a PNG or JPEG as unit-range RGB.
pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let img = decode(path)?;
    let (h, w, data) = to_unit_rgb(&img);
    Ok(RgbImage::from_clamped(h, w, data))
}

/// Saves as an 8-bit RGB PNG.
pub fn save_image(image: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    save_dynamic(&DynamicImage::ImageRgb8(image.to_rgb8()), path.as_ref())
}

pub(crate) fn save_dynamic(img: &DynamicImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Encode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Loads a mask; a pixel is set iff the mean of its channels exceeds `threshold`.
pub fn load_mask(path: impl AsRef<Path>, threshold: f64) -> Result<BinaryMask> {
    if !threshold.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "mask threshold must be finite, got {threshold}"
        )));
    }
    let img = decode(path.as_ref())?;
    let (h, w, data) = to_unit_rgb(&img);
    BinaryMask::new(
        h,
        w,
        data.iter()
            .map(|px| (px[0] + px[1] + px[2]) / 3.0 > threshold)
            .collect(),
    )
}

/// Loads a segmentation from either a grayscale/indexed PNG (pixel value is
/// the segment id) or a directory of `seg_<id>.png` binary masks.
///
/// In directory mode masks are applied in ascending id order, so a later id
/// overwrites earlier ones where masks overlap. The number of pixels claimed
/// more than once is reported in [`LabelMapLoad::overlap_count`].
pub fn load_labelmap(source: impl AsRef<Path>) -> Result<LabelMapLoad> {
    let source = source.as_ref();
    if source.is_dir() {
        load_labelmap_dir(source)
    } else {
        Ok(LabelMapLoad {
            labels: load_labelmap_png(source)?,
            overlap_count: 0,
            warning: None,
        })
    }
}

fn parse_seg_id(name: &str) -> Option<&str> {
    name.strip_prefix("seg_")?.strip_suffix(".png")
}

fn load_labelmap_dir(dir: &Path) -> Result<LabelMapLoad> {
    let mut files: Vec<(u32, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(digits) = name.to_str().and_then(parse_seg_id) else {
            continue;
        };
        let id = digits
            .parse::<u32>()
            .ok()
            .filter(|&id| id > 0 && digits.bytes().all(|b| b.is_ascii_digit()))
            .ok_or_else(|| Error::Unsupported {
                path: entry.path(),
                message: "segment id must be a positive decimal integer".into(),
            })?;
        files.push((id, entry.path()));
    }
    if files.is_empty() {
        return Err(Error::Empty(
            "no seg_<id>.png masks in segmentation directory",
        ));
    }
    files.sort();
    if let Some(w) = files.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Unsupported {
            path: w[1].1.clone(),
            message: format!("segment id {} appears twice", w[0].0),
        });
    }

    let mut data: Vec<u32> = Vec::new();
    let mut claimed: Vec<u8> = Vec::new();
    let mut dims = None;
    for (id, path) in &files {
        let mask = load_mask(path, 0.5)?;
        match dims {
            None => {
                dims = Some(mask.dims());
                data = vec![0; mask.height * mask.width];
                claimed = vec![0; data.len()];
            }
            Some(d) if d != mask.dims() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: mask.dims(),
                })
            }
            _ => {}
        }
        for (i, _) in mask.data.iter().enumerate().filter(|(_, &v)| v) {
            data[i] = *id;
            claimed[i] = claimed[i].saturating_add(1);
        }
    }
    let (h, w) = dims.expect("at least one mask file");
    let overlap_count = claimed.iter().filter(|&&n| n > 1).count();
    let warning = (overlap_count as f64 > OVERLAP_WARN_FRACTION * (h * w) as f64).then(|| {
        format!(
            "{overlap_count} pixels ({:.2}% of the frame) are claimed by more than one mask; later ids win",
            100.0 * overlap_count as f64 / (h * w) as f64
        )
    });
    Ok(LabelMapLoad {
        labels: LabelMap::new(h, w, data)?,
        overlap_count,
        warning,
    })
}

fn load_labelmap_png(path: &Path) -> Result<LabelMap> {
    let decode_err = |e: png::DecodingError| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(decode_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::InvalidImage(format!("{} is too large to decode", path.display())))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(decode_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    if w == 0 || h == 0 {
        return Err(Error::InvalidImage(format!(
            "{} is zero-sized",
            path.display()
        )));
    }
    let samples = match info.color_type {
        png::ColorType::Grayscale | png::ColorType::Indexed => 1,
        png::ColorType::GrayscaleAlpha => 2,
        other => {
            return Err(Error::Unsupported {
                path: path.to_path_buf(),
                message: format!("label maps must be grayscale or indexed, found {other:?}"),
            })
        }
    };
    let depth = info.bit_depth as usize;
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        let line = &buf[y * info.line_size..(y + 1) * info.line_size];
        for x in 0..w {
            let bit = x * samples * depth;
            let v = match depth {
                16 => u16::from_be_bytes([line[bit / 8], line[bit / 8 + 1]]) as u32,
                8 => line[bit / 8] as u32,
                1 | 2 | 4 => {
                    let shift = 8 - depth - (bit % 8);
                    ((line[bit / 8] >> shift) & ((1u8 << depth) - 1)) as u32
                }
                _ => unreachable!("png bit depths are 1, 2, 4, 8 or 16"),
            };
            data.push(v);
        }
    }
    LabelMap::new(h, w, data)
}
