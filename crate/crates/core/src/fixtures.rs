//! Synthetic scenes with known ground truth, for tests, benchmarks and the
//! `synth` command.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::harness::{write_text, ManifestEntry};
use crate::imagery::{save_image, BinaryMask, LabelMap, Rgb, RgbImage};
use crate::refine::synth_shadow;

const BASE_COLORS: [Rgb; 6] = [
    [0.62, 0.38, 0.24],
    [0.30, 0.52, 0.34],
    [0.36, 0.40, 0.60],
    [0.55, 0.55, 0.30],
    [0.48, 0.30, 0.50],
    [0.40, 0.46, 0.46],
];

/// Stationary texture around `base`: iid uniform noise plus a diagonal
/// sinusoid of period 8. Values stay below 0.8, so brightening a halved copy
/// by 2 never clamps.
fn textured_pixel(base: Rgb, r: usize, c: usize, rng: &mut ChaCha8Rng) -> Rgb {
    let wave = 0.06 * (TAU * (r + c) as f64 / 8.0).sin();
    [0, 1, 2].map(|k| {
        let v = base[k] * (1.0 + wave + rng.random_range(-0.15..0.15));
        v.clamp(0.0, 1.0)
    })
}

/// A single-material textured image.
pub fn texture(height: usize, width: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RgbImage::from_fn(height, width, |r, c| {
        textured_pixel(BASE_COLORS[0], r, c, &mut rng)
    })
    .expect("fixture dimensions are nonzero")
}

/// Rows `r0..r1` and columns `c0..c1` set.
pub fn rect_mask(
    height: usize,
    width: usize,
    r0: usize,
    c0: usize,
    r1: usize,
    c1: usize,
) -> BinaryMask {
    BinaryMask::from_fn(height, width, |r, c| {
        (r0..r1).contains(&r) && (c0..c1).contains(&c)
    })
    .expect("fixture dimensions are nonzero")
}

/// Pixels whose centre lies within `radius` of `(cy, cx)`.
pub fn disk_mask(height: usize, width: usize, cy: f64, cx: f64, radius: f64) -> BinaryMask {
    BinaryMask::from_fn(height, width, |r, c| {
        (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2) <= radius * radius
    })
    .expect("fixture dimensions are nonzero")
}

/// A shadow-free scene with its material segmentation and a shadow mask.
#[derive(Debug, Clone)]
pub struct Scene {
    pub image: RgbImage,
    pub shadow: BinaryMask,
    pub labels: LabelMap,
}

impl Scene {
    /// Three vertical material stripes (ids 1..=3), each with its own base
    /// color and texture. The shadow is one rectangle per stripe, inset from
    /// the stripe sides and covering the middle half of the rows, so every
    /// stripe has shadow and lit pixels of the same material along the
    /// boundary.
    pub fn textured(height: usize, width: usize, seed: u64) -> Self {
        Self::striped(height, width, 3, seed)
    }

    /// As [`Scene::textured`] with `stripes` materials (at most 6).
    pub fn striped(height: usize, width: usize, stripes: usize, seed: u64) -> Self {
        assert!((1..=BASE_COLORS.len()).contains(&stripes), "1..=6 stripes");
        assert!(height >= 16 && width >= 16 * stripes, "scene too small");
        let stripe_of = |c: usize| (c * stripes / width).min(stripes - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let image = RgbImage::from_fn(height, width, |r, c| {
            let base = BASE_COLORS[(stripe_of(c) + seed as usize) % BASE_COLORS.len()];
            textured_pixel(base, r, c, &mut rng)
        })
        .expect("fixture dimensions are nonzero");
        let labels = LabelMap::from_fn(height, width, |_, c| stripe_of(c) as u32 + 1)
            .expect("fixture dimensions are nonzero");
        let (r0, r1) = (height / 4, height - height / 4);
        let shadow = BinaryMask::from_fn(height, width, |r, c| {
            let s = stripe_of(c);
            let (lo, hi) = (s * width / stripes, (s + 1) * width / stripes);
            let inset = (hi - lo) / 5;
            (r0..r1).contains(&r) && (lo + inset..hi - inset).contains(&c)
        })
        .expect("fixture dimensions are nonzero");
        Self {
            image,
            shadow,
            labels,
        }
    }
}

/// Writes `<id>.png` (the scene darkened by `w_dark` inside its shadow,
/// plus seeded noise), `<id>_mask.png`, `<id>_labels.png` and the shadow-free
/// `<id>_gt.png` into `dir`. The returned entry uses paths relative to `dir`
/// and lists no result or annotation.
pub fn write_synthetic_entry(
    dir: &Path,
    id: &str,
    size: usize,
    seed: u64,
    w_dark: f64,
    noise_sd: f64,
) -> Result<ManifestEntry> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let scene = Scene::textured(size, size, seed);
    let shadowed = synth_shadow(
        &scene.image,
        &scene.shadow,
        [w_dark; 3],
        [0.0; 3],
        0.0,
        noise_sd,
        seed,
    )?;
    let name = |suffix: &str| PathBuf::from(format!("{id}{suffix}.png"));
    save_image(&shadowed, dir.join(name("")))?;
    save_image(&scene.image, dir.join(name("_gt")))?;
    scene.shadow.save_png(dir.join(name("_mask")))?;
    scene.labels.save_png(dir.join(name("_labels")))?;
    Ok(ManifestEntry {
        id: id.to_string(),
        image_path: name(""),
        shadow_mask_path: name("_mask"),
        labelmap_path: Some(name("_labels")),
        annotation_path: None,
        result_path: None,
    })
}

/// Writes `count` synthetic entries (ids `scene_00`, ...) with shadow
/// strengths cycling through 0.5, 0.4, 0.6, 0.7, and `manifest.json` listing them.
/// Returns the manifest path.
pub fn write_synthetic_dataset(
    dir: &Path,
    count: usize,
    size: usize,
    seed: u64,
    noise_sd: f64,
) -> Result<PathBuf> {
    const STRENGTHS: [f64; 4] = [0.5, 0.4, 0.6, 0.7];
    let entries = (0..count)
        .map(|i| {
            let id = format!("scene_{i:02}");
            write_synthetic_entry(
                dir,
                &id,
                size,
                seed + i as u64,
                STRENGTHS[i % STRENGTHS.len()],
                noise_sd,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&entries).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    write_text(&path, &text)?;
    Ok(path)
}
