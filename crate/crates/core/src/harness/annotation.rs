//! Edge-pixel annotations: shadow-side (red) and non-shadow-side (green)
//! coordinates used for CDD evaluation.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use image::{DynamicImage, Rgb as Rgb8};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::{save_dynamic, BinaryMask, Coord};
use crate::morphology::{inner_band, outer_band, StructuringElement};

pub const SHADOW_COLOR: [u8; 3] = [255, 0, 0];
pub const NONSHADOW_COLOR: [u8; 3] = [0, 255, 0];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    s_pixels: Vec<Coord>,
    ns_pixels: Vec<Coord>,
}

#[derive(Serialize, Deserialize)]
struct AnnotationFile {
    s: Vec<[usize; 2]>,
    ns: Vec<[usize; 2]>,
}

impl Annotation {
    /// Both sides must be nonempty and disjoint.
    pub fn new(s_pixels: Vec<Coord>, ns_pixels: Vec<Coord>) -> Result<Self> {
        if s_pixels.is_empty() {
            return Err(Error::Annotation("no shadow-side pixels".into()));
        }
        if ns_pixels.is_empty() {
            return Err(Error::Annotation("no non-shadow-side pixels".into()));
        }
        let s: HashSet<Coord> = s_pixels.iter().copied().collect();
        if let Some(&(r, c)) = ns_pixels.iter().find(|p| s.contains(p)) {
            return Err(Error::Annotation(format!(
                "pixel ({r}, {c}) is marked on both sides"
            )));
        }
        Ok(Self {
            s_pixels,
            ns_pixels,
        })
    }

    pub fn s_pixels(&self) -> &[Coord] {
        &self.s_pixels
    }

    pub fn ns_pixels(&self) -> &[Coord] {
        &self.ns_pixels
    }

    /// Red/green overlay on black.
    pub fn to_overlay(&self, height: usize, width: usize) -> Result<image::RgbImage> {
        let mut img = image::RgbImage::new(width as u32, height as u32);
        for (coords, color) in [
            (&self.s_pixels, SHADOW_COLOR),
            (&self.ns_pixels, NONSHADOW_COLOR),
        ] {
            for &(row, col) in coords {
                if row >= height || col >= width {
                    return Err(Error::OutOfBounds {
                        row,
                        col,
                        height,
                        width,
                    });
                }
                img.put_pixel(col as u32, row as u32, Rgb8(color));
            }
        }
        Ok(img)
    }
}

/// Shadow side is the inner band of `shadow`, non-shadow side the outer band.
pub fn auto_annotate(shadow: &BinaryMask, se: StructuringElement) -> Result<Annotation> {
    Annotation::new(
        inner_band(shadow, se).coords(),
        outer_band(shadow, se).coords(),
    )
}

/// Reads a JSON annotation (`{"s": [[r, c], ...], "ns": [...]}`, file order
/// kept) or a PNG overlay (exact red / green pixels, raster order).
pub fn load_annotation(path: impl AsRef<Path>) -> Result<Annotation> {
    let path = path.as_ref();
    let is_json = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: AnnotationFile = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let to_coords = |v: Vec<[usize; 2]>| v.into_iter().map(|[r, c]| (r, c)).collect();
        return Annotation::new(to_coords(file.s), to_coords(file.ns));
    }
    let img = image::open(path)
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (mut s, mut ns) = (Vec::new(), Vec::new());
    for (col, row, px) in img.enumerate_pixels() {
        let coord = (row as usize, col as usize);
        if px.0 == SHADOW_COLOR {
            s.push(coord);
        } else if px.0 == NONSHADOW_COLOR {
            ns.push(coord);
        }
    }
    // enumerate_pixels walks rows in order, so both lists are in raster order.
    Annotation::new(s, ns)
}

/// Writes the lossless JSON form.
pub fn save_annotation(annotation: &Annotation, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = AnnotationFile {
        s: annotation.s_pixels.iter().map(|&(r, c)| [r, c]).collect(),
        ns: annotation.ns_pixels.iter().map(|&(r, c)| [r, c]).collect(),
    };
    let text = serde_json::to_string(&file).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the red/green PNG overlay form.
pub fn save_annotation_png(
    annotation: &Annotation,
    height: usize,
    width: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let overlay = annotation.to_overlay(height, width)?;
    save_dynamic(&DynamicImage::ImageRgb8(overlay), path.as_ref())
}
