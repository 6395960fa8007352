//! Test-time refinement of a parametric shadow-relighting model.
//!
//! Shadowed pixels are corrected with a per-channel affine map
//! `clamp(w * x + b)`, either one map for the whole shadow or one per
//! material region. The parameters are fitted by projected gradient descent
//! on the edge-consistency losses, with gradients from central finite
//! differences. Sample coordinates are fixed once; every objective
//! evaluation re-reads their colors from the relit image.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::{BinaryMask, Coord, LabelMap, Patch, PatchRect, Rgb, RgbImage};
use crate::mc_edges::{sample_regions, MaterialRegion, McSamples, SamplerConfig};
use crate::metrics::{
    cdd, l_distance, l_distribution, l_texture, l_total, LossComponents, LossReport, LossWeights,
    PooledLosses, RegionLosses, DEFAULT_BINS,
};
use crate::morphology::distance_to_background;

/// Bound on the magnitude of each offset channel.
pub const OFFSET_BOUND: f64 = 0.5;

/// Per-channel `clamp(scale * x + offset)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub scale: [f64; 3],
    pub offset: [f64; 3],
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        scale: [1.0; 3],
        offset: [0.0; 3],
    };

    pub fn uniform(scale: f64, offset: f64) -> Self {
        Self {
            scale: [scale; 3],
            offset: [offset; 3],
        }
    }

    #[inline]
    pub fn apply(&self, px: Rgb) -> Rgb {
        [0, 1, 2].map(|c| (self.scale[c] * px[c] + self.offset[c]).clamp(0.0, 1.0))
    }
}

/// Relighting parameters: a global map, plus optional per-region maps keyed
/// by segment id. Shadow pixels outside every listed region use `global`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelightParams {
    pub global: Affine,
    pub regions: BTreeMap<u32, Affine>,
}

impl RelightParams {
    pub fn identity() -> Self {
        Self::global(Affine::IDENTITY)
    }

    pub fn global(a: Affine) -> Self {
        Self {
            global: a,
            regions: BTreeMap::new(),
        }
    }

    /// Per-region maps; the fallback is their channel-wise mean.
    pub fn per_region(regions: BTreeMap<u32, Affine>) -> Self {
        let global = if regions.is_empty() {
            Affine::IDENTITY
        } else {
            let n = regions.len() as f64;
            let mut mean = Affine::uniform(0.0, 0.0);
            for a in regions.values() {
                for c in 0..3 {
                    mean.scale[c] += a.scale[c] / n;
                    mean.offset[c] += a.offset[c] / n;
                }
            }
            mean
        };
        Self { global, regions }
    }

    #[inline]
    fn for_region(&self, id: u32) -> &Affine {
        self.regions.get(&id).unwrap_or(&self.global)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamMode {
    /// One affine map for the whole shadow.
    #[default]
    Global,
    /// One affine map per qualifying region.
    PerRegion,
}

/// Which loss terms drive the refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Pixel and patch losses per region, then averaged.
    PerMask,
    /// Pooled pixel losses only.
    Pixels,
    /// Pooled pixel losses plus per-region patch loss.
    #[default]
    PixelsAndPatches,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub max_iters: usize,
    /// Initial step length, in parameter units along the normalized gradient.
    pub step: f64,
    pub fd_step: f64,
    /// Penumbra ramp width in pixels; 0 applies the full correction to every
    /// shadow pixel.
    pub blend_width: f64,
    pub weights: LossWeights,
    pub mode: ParamMode,
    pub variant: Variant,
    /// Stop when the loss improved by less than this fraction over the last
    /// [`CONVERGENCE_WINDOW`] iterations.
    pub convergence_tol: f64,
    pub rng_seed: u64,
    pub bins: usize,
    /// Upper bound on each scale channel (lower bound is 1).
    pub w_max: f64,
    pub sampler: SamplerConfig,
}

pub const CONVERGENCE_WINDOW: usize = 10;

const MIN_MOVE: f64 = 1e-10;

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            step: 0.05,
            fd_step: 1e-3,
            blend_width: 0.0,
            weights: LossWeights::default(),
            mode: ParamMode::Global,
            variant: Variant::PixelsAndPatches,
            convergence_tol: 1e-6,
            rng_seed: 0,
            bins: DEFAULT_BINS,
            w_max: 8.0,
            sampler: SamplerConfig::default(),
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.step) || !positive(self.fd_step) {
            return Err(Error::InvalidConfig(
                "step and fd_step must be positive".into(),
            ));
        }
        if !(self.blend_width.is_finite() && self.blend_width >= 0.0) {
            return Err(Error::InvalidConfig("blend_width must be >= 0".into()));
        }
        if !(self.convergence_tol.is_finite() && self.convergence_tol >= 0.0) {
            return Err(Error::InvalidConfig("convergence_tol must be >= 0".into()));
        }
        if !(self.w_max.is_finite() && self.w_max >= 1.0) {
            return Err(Error::InvalidConfig("w_max must be >= 1".into()));
        }
        if self.bins < 2 {
            return Err(Error::InvalidConfig("bins must be >= 2".into()));
        }
        self.sampler.validate()
    }

    fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            rng_seed: self.rng_seed,
            ..self.sampler
        }
    }
}

/// Blend weight per pixel: 0 outside the mask, rising linearly with the
/// Euclidean distance to the nearest non-mask pixel and reaching 1 at
/// `width` pixels. A zero width gives 1 everywhere inside the mask.
pub fn blend_alpha(mask: &BinaryMask, width: f64) -> Vec<f64> {
    if width <= 0.0 {
        return mask
            .as_slice()
            .iter()
            .map(|&m| if m { 1.0 } else { 0.0 })
            .collect();
    }
    distance_to_background(mask)
        .into_iter()
        .zip(mask.as_slice())
        .map(|(d, &m)| if m { (d / width).min(1.0) } else { 0.0 })
        .collect()
}

#[inline]
fn blend(px: Rgb, target: Rgb, alpha: f64) -> Rgb {
    if alpha >= 1.0 {
        target
    } else {
        [0, 1, 2].map(|c| (px[c] + alpha * (target[c] - px[c])).clamp(0.0, 1.0))
    }
}

fn region_lookup(dims: (usize, usize), regions: &[MaterialRegion]) -> Result<Vec<u32>> {
    let mut ids = vec![0u32; dims.0 * dims.1];
    for r in regions {
        r.mask.ensure_dims(dims)?;
        for (slot, &m) in ids.iter_mut().zip(r.mask.as_slice()) {
            if m {
                *slot = r.segment_id;
            }
        }
    }
    Ok(ids)
}

/// Applies `params` inside the shadow mask, blended by [`blend_alpha`].
/// Pixels outside the mask are copied unchanged.
pub fn apply_relight(
    input: &RgbImage,
    shadow: &BinaryMask,
    regions: &[MaterialRegion],
    params: &RelightParams,
    blend_width: f64,
) -> Result<RgbImage> {
    shadow.ensure_dims(input.dims())?;
    let alpha = blend_alpha(shadow, blend_width);
    let region_of = region_lookup(input.dims(), regions)?;
    let data = input
        .pixels()
        .iter()
        .enumerate()
        .map(|(i, &px)| {
            if alpha[i] == 0.0 {
                px
            } else {
                blend(px, params.for_region(region_of[i]).apply(px), alpha[i])
            }
        })
        .collect();
    Ok(RgbImage::from_clamped(input.height(), input.width(), data))
}

/// Darkens `input` inside `mask` with `clamp(w_dark * x + b_dark)`, ramped
/// over `penumbra` pixels like [`apply_relight`], then adds seeded Gaussian
/// noise of standard deviation `noise_sd` to every pixel.
pub fn synth_shadow(
    input: &RgbImage,
    mask: &BinaryMask,
    w_dark: [f64; 3],
    b_dark: [f64; 3],
    penumbra: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<RgbImage> {
    mask.ensure_dims(input.dims())?;
    if w_dark.iter().any(|w| !(*w > 0.0 && *w <= 1.0)) {
        return Err(Error::InvalidConfig(format!(
            "shadow scale must lie in (0, 1], got {w_dark:?}"
        )));
    }
    if b_dark.iter().any(|b| !b.is_finite()) || !(penumbra.is_finite() && penumbra >= 0.0) {
        return Err(Error::InvalidConfig(
            "shadow offset and penumbra must be finite".into(),
        ));
    }
    let noise = if noise_sd > 0.0 {
        Some(Normal::new(0.0, noise_sd).map_err(|e| Error::InvalidConfig(e.to_string()))?)
    } else if noise_sd == 0.0 {
        None
    } else {
        return Err(Error::InvalidConfig(format!(
            "noise_sd must be >= 0, got {noise_sd}"
        )));
    };
    let darken = Affine {
        scale: w_dark,
        offset: b_dark,
    };
    let alpha = blend_alpha(mask, penumbra);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = input
        .pixels()
        .iter()
        .zip(&alpha)
        .map(|(&px, &a)| {
            let shaded = if a == 0.0 {
                px
            } else {
                blend(px, darken.apply(px), a)
            };
            match &noise {
                Some(n) => shaded.map(|v| (v + n.sample(&mut rng)).clamp(0.0, 1.0)),
                None => shaded,
            }
        })
        .collect();
    Ok(RgbImage::from_clamped(input.height(), input.width(), data))
}

#[derive(Debug, Clone)]
struct RegionCoords {
    region_id: u32,
    s_in: Vec<Coord>,
    s_out: Vec<Coord>,
    p_in: Vec<PatchRect>,
    p_out: Vec<PatchRect>,
}

/// The refinement loss as a function of [`RelightParams`].
///
/// Holds the sample coordinates from material-consistent edge extraction;
/// each evaluation relights just the pixels it needs.
pub struct Objective<'a> {
    input: &'a RgbImage,
    alpha: Vec<f64>,
    region_of: Vec<u32>,
    lit_pixels: Vec<usize>,
    regions: Vec<RegionCoords>,
    pooled_in: Vec<Coord>,
    pooled_out: Vec<Coord>,
    variant: Variant,
    weights: LossWeights,
    bins: usize,
}

impl<'a> Objective<'a> {
    pub fn new(
        input: &'a RgbImage,
        shadow: &BinaryMask,
        samples: &McSamples,
        cfg: &RefineConfig,
    ) -> Result<Self> {
        shadow.ensure_dims(input.dims())?;
        if samples.sets.is_empty() {
            return Err(Error::NoMcEdges);
        }
        let regions: Vec<RegionCoords> = samples
            .sets
            .iter()
            .map(|s| RegionCoords {
                region_id: s.region_id,
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
        let pooled_in = regions
            .iter()
            .flat_map(|r| r.s_in.iter().copied())
            .collect();
        let pooled_out = regions
            .iter()
            .flat_map(|r| r.s_out.iter().copied())
            .collect();
        Ok(Self {
            input,
            alpha: blend_alpha(shadow, cfg.blend_width),
            region_of: region_lookup(input.dims(), &samples.regions)?,
            lit_pixels: (0..shadow.as_slice().len())
                .filter(|&i| !shadow.as_slice()[i])
                .collect(),
            regions,
            pooled_in,
            pooled_out,
            variant: cfg.variant,
            weights: cfg.weights,
            bins: cfg.bins,
        })
    }

    #[inline]
    fn relit_index(&self, i: usize, params: &RelightParams) -> Rgb {
        let px = self.input.pixels()[i];
        if self.alpha[i] == 0.0 {
            px
        } else {
            blend(
                px,
                params.for_region(self.region_of[i]).apply(px),
                self.alpha[i],
            )
        }
    }

    fn relit(&self, coords: &[Coord], params: &RelightParams) -> Vec<Rgb> {
        let w = self.input.width();
        coords
            .iter()
            .map(|&(r, c)| self.relit_index(r * w + c, params))
            .collect()
    }

    fn relit_patches(&self, rects: &[PatchRect], params: &RelightParams) -> Result<Vec<Patch>> {
        rects
            .iter()
            .map(|p| {
                let coords: Vec<Coord> = (p.top..p.top + p.size)
                    .flat_map(|r| (p.left..p.left + p.size).map(move |c| (r, c)))
                    .collect();
                Patch::from_pixels(p.size, self.relit(&coords, params))
            })
            .collect()
    }

    fn texture(&self, r: &RegionCoords, params: &RelightParams) -> Result<Option<f64>> {
        if r.p_in.is_empty() || r.p_out.is_empty() {
            return Ok(None);
        }
        let p_in = self.relit_patches(&r.p_in, params)?;
        let p_out = self.relit_patches(&r.p_out, params)?;
        l_texture(&p_in, &p_out).map(Some)
    }

    /// Mean squared change of the non-shadow pixels.
    fn nonshadow(&self, params: &RelightParams) -> f64 {
        let mut sum = 0.0;
        for &i in &self.lit_pixels {
            let (o, x) = (self.relit_index(i, params), self.input.pixels()[i]);
            sum += (o[0] - x[0]).powi(2) + (o[1] - x[1]).powi(2) + (o[2] - x[2]).powi(2);
        }
        if self.lit_pixels.is_empty() {
            0.0
        } else {
            sum / (3 * self.lit_pixels.len()) as f64
        }
    }

    pub fn evaluate(&self, params: &RelightParams) -> Result<LossReport> {
        let per_region_pixels = self.variant == Variant::PerMask;
        let with_patches = self.variant != Variant::Pixels;
        let mut regions = Vec::with_capacity(self.regions.len());
        for r in &self.regions {
            let (l_dist, l_distr) = if per_region_pixels {
                let s_in = self.relit(&r.s_in, params);
                let s_out = self.relit(&r.s_out, params);
                (
                    Some(l_distance(&s_in, &s_out)?),
                    Some(l_distribution(&s_in, &s_out, self.bins)?),
                )
            } else {
                (None, None)
            };
            regions.push(RegionLosses {
                region_id: r.region_id,
                l_distance: l_dist,
                l_distribution: l_distr,
                l_per: if with_patches {
                    self.texture(r, params)?
                } else {
                    None
                },
            });
        }
        let pooled = if per_region_pixels {
            None
        } else {
            let s_in = self.relit(&self.pooled_in, params);
            let s_out = self.relit(&self.pooled_out, params);
            Some(PooledLosses {
                l_distance: l_distance(&s_in, &s_out)?,
                l_distribution: l_distribution(&s_in, &s_out, self.bins)?,
            })
        };
        let report = l_total(
            &LossComponents {
                regions,
                pooled,
                l_nonshadow: self.nonshadow(params),
            },
            &self.weights,
        )?;
        if !report.l_total.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        Ok(report)
    }

    /// Pooled shadow-side and lit-side sample coordinates.
    pub fn pooled_coords(&self) -> (&[Coord], &[Coord]) {
        (&self.pooled_in, &self.pooled_out)
    }
}

/// Maps between [`RelightParams`] and the flat vector the optimizer works on.
///
/// Each affine block is stored as `(w, m)` with `m = w * c + b`, the output
/// at the block's mean shadow-side sample color `c`. Changing `w` then
/// rotates the map about `c` instead of shifting every output, which keeps
/// scale and offset from trading off along a narrow valley.
struct Layout {
    mode: ParamMode,
    region_ids: Vec<u32>,
    centers: Vec<Rgb>,
    w_max: f64,
}

impl Layout {
    fn new(mode: ParamMode, samples: &McSamples, w_max: f64) -> Self {
        let mean = |colors: &[Rgb]| -> Rgb {
            let n = colors.len().max(1) as f64;
            [0, 1, 2].map(|c| colors.iter().map(|p| p[c]).sum::<f64>() / n)
        };
        let centers = match mode {
            ParamMode::Global => {
                let all: Vec<Rgb> = samples
                    .sets
                    .iter()
                    .flat_map(|s| s.s_in.colors().iter().copied())
                    .collect();
                vec![mean(&all)]
            }
            ParamMode::PerRegion => {
                let by_id: BTreeMap<u32, Rgb> = samples
                    .sets
                    .iter()
                    .map(|s| (s.region_id, mean(s.s_in.colors())))
                    .collect();
                samples
                    .regions
                    .iter()
                    .map(|r| by_id.get(&r.segment_id).copied().unwrap_or([0.0; 3]))
                    .collect()
            }
        };
        Self {
            mode,
            region_ids: samples.regions.iter().map(|r| r.segment_id).collect(),
            centers,
            w_max,
        }
    }

    fn affine(x: &[f64], center: Rgb) -> Affine {
        Affine {
            scale: [x[0], x[1], x[2]],
            offset: [0, 1, 2].map(|k| x[3 + k] - x[k] * center[k]),
        }
    }

    fn store(a: &Affine, center: Rgb, out: &mut [f64]) {
        for k in 0..3 {
            out[k] = a.scale[k];
            out[3 + k] = a.offset[k] + a.scale[k] * center[k];
        }
    }

    fn affines(&self, x: &[f64]) -> Vec<Affine> {
        x.chunks_exact(6)
            .zip(&self.centers)
            .map(|(chunk, &c)| Self::affine(chunk, c))
            .collect()
    }

    fn to_params(&self, x: &[f64]) -> RelightParams {
        let affines = self.affines(x);
        match self.mode {
            ParamMode::Global => RelightParams::global(affines[0]),
            ParamMode::PerRegion => {
                RelightParams::per_region(self.region_ids.iter().copied().zip(affines).collect())
            }
        }
    }

    fn pack(&self, affines: &[Affine]) -> Vec<f64> {
        let mut x = vec![0.0; 6 * self.centers.len()];
        for ((chunk, a), &c) in x.chunks_exact_mut(6).zip(affines).zip(&self.centers) {
            Self::store(a, c, chunk);
        }
        x
    }

    fn identity(&self) -> Vec<f64> {
        self.pack(&vec![Affine::IDENTITY; self.centers.len()])
    }

    /// Clamps each block's scale and offset into their boxes.
    fn project(&self, x: &[f64]) -> Vec<f64> {
        let clamped: Vec<Affine> = self
            .affines(x)
            .into_iter()
            .map(|a| Affine {
                scale: a.scale.map(|w| w.clamp(1.0, self.w_max)),
                offset: a.offset.map(|b| b.clamp(-OFFSET_BOUND, OFFSET_BOUND)),
            })
            .collect();
        self.pack(&clamped)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineResult {
    pub output: RgbImage,
    /// Best parameters found (lowest total loss).
    pub params: RelightParams,
    /// Initial report followed by one report per accepted iteration.
    pub loss_trace: Vec<LossReport>,
    /// Unscaled CDD over the pooled edge samples, before and after.
    pub cdd_before: f64,
    pub cdd_after: f64,
    pub iterations_run: usize,
    pub converged: bool,
    pub region_ids: Vec<u32>,
}

fn scaled_identity(n: usize, scale: f64) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = scale;
    }
    h
}

/// BFGS update of a row-major inverse-Hessian estimate. Pairs with
/// non-positive curvature are skipped.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64]) {
    let n = s.len();
    let sy: f64 = s.iter().zip(y).map(|(a, b)| a * b).sum();
    let yy: f64 = y.iter().map(|v| v * v).sum();
    let ss: f64 = s.iter().map(|v| v * v).sum();
    if !(sy > 1e-12 * (ss * yy).sqrt()) {
        return;
    }
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum())
        .collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] +=
                -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Fits relighting parameters to the material-consistent edges of one image.
///
/// Projected quasi-Newton descent: each iteration estimates the gradient by
/// central differences, preconditions it with a BFGS inverse-Hessian
/// estimate, projects the resulting point into the parameter box and halves
/// the move until the loss decreases. The estimate starts as a scaled
/// identity, so the first move is a gradient step of max-norm `cfg.step`,
/// and is reset to that whenever the preconditioned move fails. If the plain
/// gradient step fails too, single coordinates are probed in both
/// directions with steps from `cfg.step` down to `cfg.fd_step`. An iteration
/// in which nothing decreases the loss ends the run. Only improving steps
/// are taken, so the last iterate is the best.
pub fn optimize(
    input: &RgbImage,
    shadow: &BinaryMask,
    labels: &LabelMap,
    cfg: &RefineConfig,
) -> Result<RefineResult> {
    cfg.validate()?;
    shadow.ensure_dims(input.dims())?;
    shadow.ensure_dims(labels.dims())?;
    let samples = sample_regions(input, labels, shadow, &cfg.sampler())?;
    if samples.sets.is_empty() {
        return Err(Error::NoMcEdges);
    }
    let objective = Objective::new(input, shadow, &samples, cfg)?;
    let layout = Layout::new(cfg.mode, &samples, cfg.w_max);
    let eval = |x: &[f64]| objective.evaluate(&layout.to_params(x));
    let gradient = |x: &[f64]| {
        (0..x.len())
            .into_par_iter()
            .map(|k| {
                let mut plus = x.to_vec();
                let mut minus = x.to_vec();
                plus[k] += cfg.fd_step;
                minus[k] -= cfg.fd_step;
                let g = (eval(&plus)?.l_total - eval(&minus)?.l_total) / (2.0 * cfg.fd_step);
                if g.is_finite() {
                    Ok(g)
                } else {
                    Err(Error::NonFiniteLoss)
                }
            })
            .collect::<Result<Vec<f64>>>()
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
    let max_abs = |a: &[f64]| a.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut x = layout.identity();
    let mut current = eval(&x)?;
    let mut trace = vec![current.clone()];
    let mut converged = false;
    let mut iterations_run = 0;
    let n = x.len();
    let mut inverse_hessian: Option<Vec<f64>> = None;
    let mut previous: Option<(Vec<f64>, Vec<f64>)> = None;

    for _ in 0..cfg.max_iters {
        let grad = gradient(&x)?;
        let gmax = max_abs(&grad);
        if gmax == 0.0 {
            converged = true;
            break;
        }
        if let (Some((s, g_prev)), Some(h)) = (&previous, inverse_hessian.as_mut()) {
            let y: Vec<f64> = grad.iter().zip(g_prev).map(|(a, b)| a - b).collect();
            bfgs_update(h, s, &y);
        }

        let search = |direction: &[f64], min_move: f64| -> Result<Option<(Vec<f64>, LossReport)>> {
            let mut t = 1.0;
            while t * max_abs(direction) >= min_move {
                let moved: Vec<f64> = x.iter().zip(direction).map(|(v, d)| v + t * d).collect();
                let trial = layout.project(&moved);
                let report = eval(&trial)?;
                if report.l_total < current.l_total {
                    return Ok(Some((trial, report)));
                }
                t *= 0.5;
            }
            Ok(None)
        };
        let projected_step = |step: Vec<f64>| -> Vec<f64> {
            let target: Vec<f64> = x.iter().zip(&step).map(|(v, d)| v + d).collect();
            layout
                .project(&target)
                .iter()
                .zip(&x)
                .map(|(p, v)| p - v)
                .collect()
        };

        let mut accepted = None;
        if let Some(h) = &inverse_hessian {
            let step: Vec<f64> = (0..n)
                .map(|i| -dot(&h[i * n..(i + 1) * n], &grad))
                .collect();
            if dot(&step, &grad) < 0.0 {
                accepted = search(&projected_step(step), MIN_MOVE)?;
            }
            if accepted.is_none() {
                inverse_hessian = None;
            }
        }
        if accepted.is_none() {
            let step = grad.iter().map(|g| -cfg.step / gmax * g).collect();
            accepted = search(&projected_step(step), MIN_MOVE)?;
        }
        // Kinks in the histogram terms can make the difference quotient a
        // non-descent direction; probe each coordinate before giving up.
        'compass: for k in 0..n {
            if accepted.is_some() {
                break;
            }
            let downhill = if grad[k] > 0.0 { -1.0 } else { 1.0 };
            for sign in [downhill, -downhill] {
                let mut step = vec![0.0; n];
                step[k] = sign * cfg.step;
                accepted = search(&projected_step(step), cfg.fd_step)?;
                if accepted.is_some() {
                    break 'compass;
                }
            }
        }
        let Some((next, report)) = accepted else {
            converged = true;
            break;
        };
        if inverse_hessian.is_none() {
            inverse_hessian = Some(scaled_identity(n, cfg.step / gmax));
        }
        let s: Vec<f64> = next.iter().zip(&x).map(|(a, b)| a - b).collect();
        previous = Some((s, grad));
        x = next;
        current = report;
        trace.push(current.clone());
        iterations_run += 1;

        if trace.len() > CONVERGENCE_WINDOW {
            let old = trace[trace.len() - 1 - CONVERGENCE_WINDOW].l_total;
            if old - current.l_total <= cfg.convergence_tol * old.abs() {
                converged = true;
                break;
            }
        }
    }

    let params = layout.to_params(&x);
    let output = apply_relight(input, shadow, &samples.regions, &params, cfg.blend_width)?;
    let (s, ns) = objective.pooled_coords();
    let colors = |img: &RgbImage, coords: &[Coord]| -> Vec<Rgb> {
        coords.iter().map(|&(r, c)| img.get(r, c)).collect()
    };
    let cdd_before = cdd(&colors(input, s), &colors(input, ns), cfg.bins)?;
    let cdd_after = cdd(&colors(&output, s), &colors(&output, ns), cfg.bins)?;
    Ok(RefineResult {
        output,
        params,
        loss_trace: trace,
        cdd_before,
        cdd_after,
        iterations_run,
        converged,
        region_ids: layout.region_ids,
    })
}
