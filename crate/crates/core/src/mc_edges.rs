//! Material-consistent shadow edges.
//!
//! A shadow edge is only useful as supervision where both of its sides lie on
//! the same surface. Given a material segmentation, a segment qualifies when
//! it holds enough pixels of both the inner and the outer shadow band; the
//! band pixels inside it become the paired sets `S_in`/`S_out`, and square
//! patches drawn from its eroded interior on either side become
//! `P_in`/`P_out`.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::{
    gather_colors, BinaryMask, Coord, LabelMap, Patch, PatchRect, PixelSet, RgbImage,
};
use crate::morphology::{erode, inner_band, outer_band, StructuringElement};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Element used to carve the inner/outer shadow bands.
    pub band_se: StructuringElement,
    pub min_region_area: usize,
    /// Minimum band pixels a segment must hold on each side.
    pub tau_band: usize,
    pub patch_count: usize,
    pub patch_size: usize,
    /// Erosion applied to a segment before patch positions are drawn.
    pub material_erosion: StructuringElement,
    pub rng_seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            band_se: StructuringElement::default(),
            min_region_area: 500,
            tau_band: 20,
            patch_count: 8,
            patch_size: 16,
            material_erosion: StructuringElement::default(),
            rng_seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 2 || self.patch_count < 1 || self.tau_band < 1 {
            return Err(Error::InvalidConfig(format!(
                "sampler needs patch_size >= 2, patch_count >= 1, tau_band >= 1 (got {}, {}, {})",
                self.patch_size, self.patch_count, self.tau_band
            )));
        }
        Ok(())
    }
}

/// A segment whose area and band overlap have been measured.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialRegion {
    pub segment_id: u32,
    pub mask: BinaryMask,
    pub area: usize,
    pub in_band_count: usize,
    pub out_band_count: usize,
}

/// Inner and outer shadow bands.
#[derive(Debug, Clone)]
pub struct EdgeBands {
    pub inner: BinaryMask,
    pub outer: BinaryMask,
}

impl EdgeBands {
    pub fn new(shadow: &BinaryMask, se: StructuringElement) -> Self {
        Self {
            inner: inner_band(shadow, se),
            outer: outer_band(shadow, se),
        }
    }
}

#[derive(Default, Clone, Copy)]
struct Tally {
    area: usize,
    inner: usize,
    outer: usize,
}

/// Segments of at least `min_region_area` pixels that hold at least
/// `tau_band` pixels of both shadow bands, ordered by segment id.
pub fn extract_regions(
    labels: &LabelMap,
    shadow: &BinaryMask,
    cfg: &SamplerConfig,
) -> Result<Vec<MaterialRegion>> {
    shadow.ensure_dims(labels.dims())?;
    let bands = EdgeBands::new(shadow, cfg.band_se);
    Ok(regions_from_bands(labels, &bands, cfg))
}

fn regions_from_bands(
    labels: &LabelMap,
    bands: &EdgeBands,
    cfg: &SamplerConfig,
) -> Vec<MaterialRegion> {
    let mut tallies: BTreeMap<u32, Tally> = BTreeMap::new();
    for (i, &id) in labels.as_slice().iter().enumerate() {
        if id == 0 {
            continue;
        }
        let t = tallies.entry(id).or_default();
        t.area += 1;
        t.inner += bands.inner.as_slice()[i] as usize;
        t.outer += bands.outer.as_slice()[i] as usize;
    }
    tallies
        .into_iter()
        .filter(|(_, t)| {
            t.area >= cfg.min_region_area && t.inner >= cfg.tau_band && t.outer >= cfg.tau_band
        })
        .map(|(id, t)| MaterialRegion {
            segment_id: id,
            mask: labels.segment_mask(id),
            area: t.area,
            in_band_count: t.inner,
            out_band_count: t.outer,
        })
        .collect()
}

/// All inner-band and outer-band pixels inside `region`, in raster order.
pub fn sample_edge_pixels(
    image: &RgbImage,
    region: &MaterialRegion,
    shadow: &BinaryMask,
    cfg: &SamplerConfig,
) -> Result<(PixelSet, PixelSet)> {
    shadow.ensure_dims(image.dims())?;
    edge_pixels_from_bands(image, region, &EdgeBands::new(shadow, cfg.band_se))
}

fn edge_pixels_from_bands(
    image: &RgbImage,
    region: &MaterialRegion,
    bands: &EdgeBands,
) -> Result<(PixelSet, PixelSet)> {
    let s_in = bands.inner.and(&region.mask)?.coords();
    let s_out = bands.outer.and(&region.mask)?.coords();
    if s_in.is_empty() || s_out.is_empty() {
        return Err(Error::Empty(
            "region has no band pixels on one side of the shadow edge",
        ));
    }
    Ok((gather_colors(image, &s_in)?, gather_colors(image, &s_out)?))
}

/// Top-left positions whose `size x size` footprint lies entirely inside `allowed`.
pub fn valid_patch_positions(allowed: &BinaryMask, size: usize) -> Vec<Coord> {
    let (h, w) = allowed.dims();
    if size == 0 || size > h || size > w {
        return Vec::new();
    }
    // summed-area table with a zero border row/column
    let stride = w + 1;
    let mut sat = vec![0u32; (h + 1) * stride];
    for y in 0..h {
        let mut row = 0u32;
        for x in 0..w {
            row += allowed.get(y, x) as u32;
            sat[(y + 1) * stride + x + 1] = sat[y * stride + x + 1] + row;
        }
    }
    let full = (size * size) as u32;
    let mut out = Vec::new();
    for y in 0..=h - size {
        for x in 0..=w - size {
            let (y1, x1) = (y + size, x + size);
            let sum = sat[y1 * stride + x1] + sat[y * stride + x]
                - sat[y * stride + x1]
                - sat[y1 * stride + x];
            if sum == full {
                out.push((y, x));
            }
        }
    }
    out
}

fn draw_patches(
    image: &RgbImage,
    positions: &[Coord],
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Patch>> {
    let take = cfg.patch_count.min(positions.len());
    let mut picked = rand::seq::index::sample(rng, positions.len(), take).into_vec();
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|i| {
            let (top, left) = positions[i];
            Patch::extract(image, top, left, cfg.patch_size)
        })
        .collect()
}

/// Per-region RNG so that results do not depend on processing order.
fn region_rng(cfg: &SamplerConfig, segment_id: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ segment_id as u64)
}

/// Draws up to `patch_count` patches on each side of the shadow boundary,
/// uniformly without replacement among footprints that fit inside the eroded
/// region. A side with no valid footprint yields an empty list.
pub fn sample_patches(
    image: &RgbImage,
    region: &MaterialRegion,
    shadow: &BinaryMask,
    cfg: &SamplerConfig,
) -> Result<(Vec<Patch>, Vec<Patch>)> {
    cfg.validate()?;
    shadow.ensure_dims(image.dims())?;
    region.mask.ensure_dims(image.dims())?;
    let core = erode(&region.mask, cfg.material_erosion);
    let allowed_in = core.and(shadow)?;
    let allowed_out = core.difference(shadow)?;
    let mut rng = region_rng(cfg, region.segment_id);
    let p_in = draw_patches(
        image,
        &valid_patch_positions(&allowed_in, cfg.patch_size),
        cfg,
        &mut rng,
    )?;
    let p_out = draw_patches(
        image,
        &valid_patch_positions(&allowed_out, cfg.patch_size),
        cfg,
        &mut rng,
    )?;
    Ok((p_in, p_out))
}

/// Patches drawn within one material region.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGroup {
    pub region_id: u32,
    pub p_in: Vec<Patch>,
    pub p_out: Vec<Patch>,
}

impl PatchGroup {
    /// Both sides have at least one patch.
    pub fn is_usable(&self) -> bool {
        !self.p_in.is_empty() && !self.p_out.is_empty()
    }
}

/// Supervision for one region, or for all regions pooled (`region_id == 0`).
/// Patches always stay grouped by the region they were drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSampleSet {
    pub region_id: u32,
    pub s_in: PixelSet,
    pub s_out: PixelSet,
    pub patch_groups: Vec<PatchGroup>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    PerRegion,
    #[default]
    Pooled,
}

/// Concatenates per-region sets into one pooled set with `region_id` 0.
pub fn pool_sample_sets(sets: &[EdgeSampleSet]) -> Option<EdgeSampleSet> {
    if sets.is_empty() {
        return None;
    }
    Some(EdgeSampleSet {
        region_id: 0,
        s_in: PixelSet::concat(sets.iter().map(|s| &s.s_in)),
        s_out: PixelSet::concat(sets.iter().map(|s| &s.s_out)),
        patch_groups: sets
            .iter()
            .flat_map(|s| s.patch_groups.iter().cloned())
            .collect(),
    })
}

/// Qualifying regions together with their sample sets.
#[derive(Debug, Clone)]
pub struct McSamples {
    pub regions: Vec<MaterialRegion>,
    pub sets: Vec<EdgeSampleSet>,
}

/// Extracts regions and samples every one of them (per-region layout).
pub fn sample_regions(
    image: &RgbImage,
    labels: &LabelMap,
    shadow: &BinaryMask,
    cfg: &SamplerConfig,
) -> Result<McSamples> {
    cfg.validate()?;
    shadow.ensure_dims(image.dims())?;
    shadow.ensure_dims(labels.dims())?;
    let bands = EdgeBands::new(shadow, cfg.band_se);
    let regions = regions_from_bands(labels, &bands, cfg);
    let sets = regions
        .iter()
        .map(|region| {
            let (s_in, s_out) = edge_pixels_from_bands(image, region, &bands)?;
            let (p_in, p_out) = sample_patches(image, region, shadow, cfg)?;
            Ok(EdgeSampleSet {
                region_id: region.segment_id,
                s_in,
                s_out,
                patch_groups: vec![PatchGroup {
                    region_id: region.segment_id,
                    p_in,
                    p_out,
                }],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(McSamples { regions, sets })
}

/// One set per qualifying region, or a single pooled set. Empty when no
/// segment straddles the shadow boundary.
pub fn build_sample_sets(
    image: &RgbImage,
    labels: &LabelMap,
    shadow: &BinaryMask,
    cfg: &SamplerConfig,
    mode: SamplingMode,
) -> Result<Vec<EdgeSampleSet>> {
    let samples = sample_regions(image, labels, shadow, cfg)?;
    Ok(match mode {
        SamplingMode::PerRegion => samples.sets,
        SamplingMode::Pooled => pool_sample_sets(&samples.sets).into_iter().collect(),
    })
}

const RED: [u8; 3] = [255, 0, 0];
const GREEN: [u8; 3] = [0, 255, 0];
/// Outline colors for `P_in` / `P_out` patches.
pub const P_IN_OUTLINE: [u8; 3] = [255, 255, 0];
pub const P_OUT_OUTLINE: [u8; 3] = [0, 255, 255];

/// Draws `S_in` in pure red, `S_out` in pure green and outlines patches
/// (yellow inside the shadow, cyan outside) over an 8-bit copy of `image`.
pub fn render_visualization(image: &RgbImage, sets: &[EdgeSampleSet]) -> image::RgbImage {
    let mut out = image.to_rgb8();
    let mut put = |(r, c): Coord, color: [u8; 3]| out.get_pixel_mut(c as u32, r as u32).0 = color;
    for set in sets {
        for group in &set.patch_groups {
            for (patches, color) in [(&group.p_in, P_IN_OUTLINE), (&group.p_out, P_OUT_OUTLINE)] {
                for p in patches {
                    let (top, left) = p.top_left();
                    let last = p.size() - 1;
                    for k in 0..=last {
                        put((top, left + k), color);
                        put((top + last, left + k), color);
                        put((top + k, left), color);
                        put((top + k, left + last), color);
                    }
                }
            }
        }
        for &c in set.s_in.coords() {
            put(c, RED);
        }
        for &c in set.s_out.coords() {
            put(c, GREEN);
        }
    }
    out
}

/// JSON description of the extracted supervision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub height: usize,
    pub width: usize,
    pub config: SamplerConfig,
    pub regions: Vec<RegionSamples>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSamples {
    pub segment_id: u32,
    pub area: usize,
    pub in_band_count: usize,
    pub out_band_count: usize,
    pub s_in: Vec<Coord>,
    pub s_out: Vec<Coord>,
    pub p_in: Vec<PatchRect>,
    pub p_out: Vec<PatchRect>,
}

impl SampleManifest {
    pub fn new(dims: (usize, usize), cfg: &SamplerConfig, samples: &McSamples) -> Self {
        let regions = samples
            .regions
            .iter()
            .zip(&samples.sets)
            .map(|(r, s)| RegionSamples {
                segment_id: r.segment_id,
                area: r.area,
                in_band_count: r.in_band_count,
                out_band_count: r.out_band_count,
                s_in: s.s_in.coords().to_vec(),
                s_out: s.s_out.coords().to_vec(),
                p_in: s
                    .patch_groups
                    .iter()
                    .flat_map(|g| g.p_in.iter().map(PatchRect::from))
                    .collect(),
                p_out: s
                    .patch_groups
                    .iter()
                    .flat_map(|g| g.p_out.iter().map(PatchRect::from))
                    .collect(),
            })
            .collect();
        Self {
            height: dims.0,
            width: dims.1,
            config: *cfg,
            regions,
        }
    }
}
