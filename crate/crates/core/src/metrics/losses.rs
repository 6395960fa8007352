//! Edge-consistency losses used to drive refinement.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::histogram::{channel_emd, histogram};
use crate::error::{Error, Result};
use crate::imagery::{BinaryMask, Patch, Rgb, RgbImage};

#[inline]
fn dist_sq(a: &Rgb, b: &Rgb) -> f64 {
    let d0 = a[0] - b[0];
    let d1 = a[1] - b[1];
    let d2 = a[2] - b[2];
    d0 * d0 + d1 * d1 + d2 * d2
}

const LEAF: usize = 8;

/// Static 3-d tree over colors for exact nearest-neighbour queries.
#[derive(Debug, Clone)]
pub struct ColorIndex {
    points: Vec<Rgb>,
}

impl ColorIndex {
    pub fn new(colors: &[Rgb]) -> Self {
        let mut points = colors.to_vec();
        build(&mut points, 0);
        Self { points }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Squared distance to the closest indexed color (`INFINITY` when empty).
    pub fn nearest_sq(&self, q: &Rgb) -> f64 {
        let mut best = f64::INFINITY;
        search(&self.points, 0, q, &mut best);
        best
    }

    /// `(1/M) * sum_i min_j |q_i - p_j|`.
    pub fn mean_nearest_distance(&self, queries: &[Rgb]) -> f64 {
        let sum: f64 = queries.iter().map(|q| self.nearest_sq(q).sqrt()).sum();
        sum / queries.len() as f64
    }
}

fn build(points: &mut [Rgb], depth: usize) {
    if points.len() <= LEAF {
        return;
    }
    let axis = depth % 3;
    let mid = points.len() / 2;
    points.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
    let (left, right) = points.split_at_mut(mid);
    build(left, depth + 1);
    build(&mut right[1..], depth + 1);
}

fn search(points: &[Rgb], depth: usize, q: &Rgb, best: &mut f64) {
    if points.len() <= LEAF {
        for p in points {
            let d = dist_sq(p, q);
            if d < *best {
                *best = d;
            }
        }
        return;
    }
    let axis = depth % 3;
    let mid = points.len() / 2;
    let pivot = &points[mid];
    let d = dist_sq(pivot, q);
    if d < *best {
        *best = d;
    }
    let delta = q[axis] - pivot[axis];
    let (near, far) = if delta < 0.0 {
        (&points[..mid], &points[mid + 1..])
    } else {
        (&points[mid + 1..], &points[..mid])
    };
    search(near, depth + 1, q, best);
    if delta * delta <= *best {
        search(far, depth + 1, q, best);
    }
}

/// Mean over `s_in` of the Euclidean RGB distance to the nearest color in `s_out`.
pub fn l_distance(s_in: &[Rgb], s_out: &[Rgb]) -> Result<f64> {
    if s_in.is_empty() || s_out.is_empty() {
        return Err(Error::Empty("distance loss needs pixels on both sides"));
    }
    Ok(ColorIndex::new(s_out).mean_nearest_distance(s_in))
}

/// Channel-averaged EMD between the two sides' color histograms.
pub fn l_distribution(s_in: &[Rgb], s_out: &[Rgb], bins: usize) -> Result<f64> {
    if s_in.is_empty() || s_out.is_empty() {
        return Err(Error::Empty("distribution loss needs pixels on both sides"));
    }
    channel_emd(&histogram(s_in, bins)?, &histogram(s_out, bins)?)
}

/// Length of [`patch_descriptor`] output.
pub const DESCRIPTOR_LEN: usize = 14;
const GRADIENT_BINS: usize = 8;

/// Statistical texture descriptor of a patch.
///
/// Layout: per-channel mean (3), per-channel population standard deviation
/// (3), then an 8-bin normalized histogram of luminance gradient magnitude
/// (8). Luminance is the channel mean. Gradients are forward differences and
/// are zero where the forward neighbour falls outside the patch. Magnitudes
/// span `[0, sqrt(2)]` and are binned uniformly over that range.
pub fn patch_descriptor(p: &Patch) -> Result<[f64; DESCRIPTOR_LEN]> {
    let n = p.size();
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "patch descriptor needs at least 2x2 pixels, got {n}x{n}"
        )));
    }
    let count = (n * n) as f64;
    let mut out = [0.0; DESCRIPTOR_LEN];
    let mut mean = [0.0; 3];
    for px in p.pixels() {
        for c in 0..3 {
            mean[c] += px[c];
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    out[..3].copy_from_slice(&mean);
    let mut var = [0.0; 3];
    for px in p.pixels() {
        for c in 0..3 {
            var[c] += (px[c] - mean[c]).powi(2);
        }
    }
    for c in 0..3 {
        out[3 + c] = (var[c] / count).sqrt();
    }

    let lum: Vec<f64> = p
        .pixels()
        .iter()
        .map(|px| (px[0] + px[1] + px[2]) / 3.0)
        .collect();
    let max_mag = std::f64::consts::SQRT_2;
    for r in 0..n {
        for c in 0..n {
            let l = lum[r * n + c];
            let gx = if c + 1 < n {
                lum[r * n + c + 1] - l
            } else {
                0.0
            };
            let gy = if r + 1 < n {
                lum[(r + 1) * n + c] - l
            } else {
                0.0
            };
            let mag = (gx * gx + gy * gy).sqrt();
            let bin =
                ((mag / max_mag * GRADIENT_BINS as f64).floor() as usize).min(GRADIENT_BINS - 1);
            out[6 + bin] += 1.0;
        }
    }
    for v in &mut out[6..] {
        *v /= count;
    }
    Ok(out)
}

/// A dissimilarity between two patches. Implement this to plug in an
/// external perceptual scorer.
pub trait PatchDistance {
    fn distance(&self, a: &Patch, b: &Patch) -> Result<f64>;
}

/// Euclidean distance between [`patch_descriptor`] vectors.
#[derive(Debug, Clone, Copy, Default)]
pub struct DescriptorDistance;

impl PatchDistance for DescriptorDistance {
    fn distance(&self, a: &Patch, b: &Patch) -> Result<f64> {
        Ok(descriptor_distance(
            &patch_descriptor(a)?,
            &patch_descriptor(b)?,
        ))
    }
}

impl<F> PatchDistance for F
where
    F: Fn(&Patch, &Patch) -> f64,
{
    fn distance(&self, a: &Patch, b: &Patch) -> Result<f64> {
        Ok(self(a, b))
    }
}

fn descriptor_distance(a: &[f64; DESCRIPTOR_LEN], b: &[f64; DESCRIPTOR_LEN]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn mean_of_minima(rows: impl Iterator<Item = Result<f64>>, m: usize) -> Result<f64> {
    let mut sum = 0.0;
    for r in rows {
        sum += r?;
    }
    Ok(sum / m as f64)
}

/// Mean over `p_in` of the smallest descriptor distance to any patch of `p_out`.
pub fn l_texture(p_in: &[Patch], p_out: &[Patch]) -> Result<f64> {
    if p_in.is_empty() || p_out.is_empty() {
        return Err(Error::Empty("texture loss needs patches on both sides"));
    }
    let d_out = p_out
        .iter()
        .map(patch_descriptor)
        .collect::<Result<Vec<_>>>()?;
    mean_of_minima(
        p_in.iter().map(|p| {
            let d = patch_descriptor(p)?;
            Ok(d_out
                .iter()
                .map(|q| descriptor_distance(&d, q))
                .fold(f64::INFINITY, f64::min))
        }),
        p_in.len(),
    )
}

/// [`l_texture`] with a caller-supplied patch distance.
pub fn l_texture_with(p_in: &[Patch], p_out: &[Patch], dist: &dyn PatchDistance) -> Result<f64> {
    if p_in.is_empty() || p_out.is_empty() {
        return Err(Error::Empty("texture loss needs patches on both sides"));
    }
    mean_of_minima(
        p_in.iter().map(|p| {
            let mut best = f64::INFINITY;
            for q in p_out {
                best = best.min(dist.distance(p, q)?);
            }
            Ok(best)
        }),
        p_in.len(),
    )
}

/// Mean squared error over the non-shadow pixels and all three channels.
pub fn l_nonshadow(output: &RgbImage, input: &RgbImage, shadow: &BinaryMask) -> Result<f64> {
    shadow.ensure_dims(output.dims())?;
    shadow.ensure_dims(input.dims())?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((o, i), &s) in output
        .pixels()
        .iter()
        .zip(input.pixels())
        .zip(shadow.as_slice())
    {
        if !s {
            sum += (o[0] - i[0]).powi(2) + (o[1] - i[1]).powi(2) + (o[2] - i[2]).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("shadow mask leaves no non-shadow pixels"));
    }
    Ok(sum / (3 * n) as f64)
}

/// Weights of the distance, distribution, texture and non-shadow terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub distance: f64,
    pub distribution: f64,
    pub texture: f64,
    pub nonshadow: f64,
}

impl LossWeights {
    pub fn new(distance: f64, distribution: f64, texture: f64, nonshadow: f64) -> Result<Self> {
        let w = Self {
            distance,
            distribution,
            texture,
            nonshadow,
        };
        if w.as_array().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "loss weights must be finite and nonnegative, got {:?}",
                w.as_array()
            )));
        }
        Ok(w)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [
            self.distance,
            self.distribution,
            self.texture,
            self.nonshadow,
        ]
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            distance: 1.0,
            distribution: 1.0,
            texture: 0.1,
            nonshadow: 10.0,
        }
    }
}

impl FromStr for LossWeights {
    type Err = Error;

    /// Parses `"l1,l2,l3,l4"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidConfig(format!("bad weight list {s:?}: {e}")))?;
        match parts.as_slice() {
            &[a, b, c, d] => Self::new(a, b, c, d),
            _ => Err(Error::InvalidConfig(format!(
                "expected four comma-separated weights, got {s:?}"
            ))),
        }
    }
}

/// Loss terms measured on one material region. `None` means the term was
/// not computed for this region (e.g. no patches fit on one side).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionLosses {
    pub region_id: u32,
    pub l_distance: Option<f64>,
    pub l_distribution: Option<f64>,
    pub l_per: Option<f64>,
}

/// Pixel losses computed once on the union of all regions' edge samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PooledLosses {
    pub l_distance: f64,
    pub l_distribution: f64,
}

/// Everything [`l_total`] combines.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossComponents {
    pub regions: Vec<RegionLosses>,
    /// When set, replaces the per-region pixel losses.
    pub pooled: Option<PooledLosses>,
    pub l_nonshadow: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_distance: f64,
    pub l_distribution: f64,
    pub l_per: f64,
    pub l_nonshadow: f64,
    pub l_total: f64,
    pub per_region: Vec<RegionLosses>,
}

fn mean_some(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Averages per-region terms over the regions that have them and forms the
/// weighted sum. Regions without patches only contribute pixel terms; if no
/// region has patches the texture term is zero.
pub fn l_total(components: &LossComponents, w: &LossWeights) -> Result<LossReport> {
    let (l_distance, l_distribution) = match components.pooled {
        Some(p) => (p.l_distance, p.l_distribution),
        None => (
            mean_some(components.regions.iter().map(|r| r.l_distance))
                .ok_or(Error::Empty("no region with valid edge samples"))?,
            mean_some(components.regions.iter().map(|r| r.l_distribution))
                .ok_or(Error::Empty("no region with valid edge samples"))?,
        ),
    };
    let l_per = mean_some(components.regions.iter().map(|r| r.l_per)).unwrap_or(0.0);
    let l_nonshadow = components.l_nonshadow;
    let l_total = w.distance * l_distance
        + w.distribution * l_distribution
        + w.texture * l_per
        + w.nonshadow * l_nonshadow;
    Ok(LossReport {
        l_distance,
        l_distribution,
        l_per,
        l_nonshadow,
        l_total,
        per_region: components.regions.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_l_distance(a: &[Rgb], b: &[Rgb]) -> f64 {
        let mut sum = 0.0;
        for u in a {
            let mut best = f64::INFINITY;
            for v in b {
                let d =
                    ((u[0] - v[0]).powi(2) + (u[1] - v[1]).powi(2) + (u[2] - v[2]).powi(2)).sqrt();
                best = best.min(d);
            }
            sum += best;
        }
        sum / a.len() as f64
    }

    fn random_colors(rng: &mut ChaCha8Rng, n: usize) -> Vec<Rgb> {
        (0..n)
            .map(|_| [rng.random(), rng.random(), rng.random()])
            .collect()
    }

    #[test]
    fn distance_single_pair() {
        let d = l_distance(&[[0.1, 0.2, 0.3]], &[[0.4, 0.2, 0.3]]).unwrap();
        assert!((d - 0.3).abs() < 1e-15);
    }

    #[test]
    fn distance_zero_when_contained() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = random_colors(&mut rng, 50);
        let inn: Vec<Rgb> = out.iter().step_by(3).copied().collect();
        assert_eq!(l_distance(&inn, &out).unwrap(), 0.0);
        assert!(l_distance(&[], &out).is_err());
    }

    #[test]
    fn distance_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_colors(&mut rng, 200);
        let b = random_colors(&mut rng, 300);
        let got = l_distance(&a, &b).unwrap();
        assert!((got - brute_l_distance(&a, &b)).abs() < 1e-12);
        assert!(got <= 3f64.sqrt());
    }

    #[test]
    fn distribution_extremes() {
        let black = vec![[0.0; 3]; 10];
        let white = vec![[1.0; 3]; 7];
        let v = l_distribution(&black, &white, 256).unwrap();
        assert!((v - 255.0 / 256.0).abs() < 1e-12);
        assert_eq!(l_distribution(&white, &white, 256).unwrap(), 0.0);
    }

    #[test]
    fn constant_patch_descriptor() {
        let p = Patch::from_pixels(4, vec![[0.2, 0.4, 0.6]; 16]).unwrap();
        let d = patch_descriptor(&p).unwrap();
        assert!(
            (d[0] - 0.2).abs() < 1e-15 && (d[1] - 0.4).abs() < 1e-15 && (d[2] - 0.6).abs() < 1e-15
        );
        assert!(d[3..6].iter().all(|s| s.abs() < 1e-15));
        assert_eq!(d[6], 1.0);
        assert!(d[7..].iter().all(|&v| v == 0.0));
        assert!(patch_descriptor(&Patch::from_pixels(1, vec![[0.0; 3]]).unwrap()).is_err());
    }

    #[test]
    fn step_edge_descriptor_by_hand() {
        // 4x4, left two columns black, right two white
        let px: Vec<Rgb> = (0..16)
            .map(|i| if i % 4 < 2 { [0.0; 3] } else { [1.0; 3] })
            .collect();
        let p = Patch::from_pixels(4, px).unwrap();
        let d = patch_descriptor(&p).unwrap();
        assert_eq!(&d[0..3], &[0.5; 3]);
        assert_eq!(&d[3..6], &[0.5; 3]);
        // column 1 has gx = 1 -> magnitude 1, bin floor(1/sqrt2*8) = 5; other 12 pixels 0
        let mut hist = [0.0; 8];
        hist[0] = 12.0 / 16.0;
        hist[5] = 4.0 / 16.0;
        assert_eq!(&d[6..], &hist);
    }

    fn random_patch(rng: &mut ChaCha8Rng, size: usize) -> Patch {
        Patch::from_pixels(size, random_colors(rng, size * size)).unwrap()
    }

    #[test]
    fn texture_matches_brute_force_and_pluggable_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p_in: Vec<Patch> = (0..5).map(|_| random_patch(&mut rng, 6)).collect();
        let p_out: Vec<Patch> = (0..7).map(|_| random_patch(&mut rng, 6)).collect();
        let mut sum = 0.0;
        for p in &p_in {
            let dp = patch_descriptor(p).unwrap();
            let mut best = f64::INFINITY;
            for q in &p_out {
                let dq = patch_descriptor(q).unwrap();
                let d: f64 = (0..DESCRIPTOR_LEN)
                    .map(|k| (dp[k] - dq[k]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                best = best.min(d);
            }
            sum += best;
        }
        let oracle = sum / 5.0;
        assert!((l_texture(&p_in, &p_out).unwrap() - oracle).abs() < 1e-12);
        assert!(
            (l_texture_with(&p_in, &p_out, &DescriptorDistance).unwrap() - oracle).abs() < 1e-12
        );
        let constant = |_: &Patch, _: &Patch| 0.25;
        assert_eq!(l_texture_with(&p_in, &p_out, &constant).unwrap(), 0.25);
        // exact copies on the other side
        let mut with_copies = p_out.clone();
        with_copies.extend(p_in.iter().cloned());
        assert_eq!(l_texture(&p_in, &with_copies).unwrap(), 0.0);
        assert!(l_texture(&[], &p_out).is_err());
    }

    #[test]
    fn nonshadow_mse() {
        let input = RgbImage::from_fn(4, 4, |r, c| [0.1 * r as f64, 0.05 * c as f64, 0.3]).unwrap();
        let shadow = BinaryMask::from_fn(4, 4, |_, c| c < 2).unwrap();
        assert_eq!(l_nonshadow(&input, &input, &shadow).unwrap(), 0.0);
        let shifted = RgbImage::from_fn(4, 4, |r, c| input.get(r, c).map(|v| v + 0.1)).unwrap();
        assert!((l_nonshadow(&shifted, &input, &shadow).unwrap() - 0.01).abs() < 1e-12);
        let all = BinaryMask::filled(4, 4, true).unwrap();
        assert!(l_nonshadow(&shifted, &input, &all).is_err());
        let small = BinaryMask::filled(3, 4, false).unwrap();
        assert!(matches!(
            l_nonshadow(&input, &input, &small),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn nonshadow_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let input =
            RgbImage::from_fn(9, 7, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap();
        let output = RgbImage::from_fn(9, 7, |r, c| {
            input
                .get(r, c)
                .map(|v| (v + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0))
        })
        .unwrap();
        let shadow = BinaryMask::from_fn(9, 7, |r, c| (r + c) % 3 == 0).unwrap();
        let mut sum = 0.0;
        let mut n = 0.0;
        for r in 0..9 {
            for c in 0..7 {
                if !shadow.get(r, c) {
                    for k in 0..3 {
                        sum += (output.get(r, c)[k] - input.get(r, c)[k]).powi(2);
                        n += 1.0;
                    }
                }
            }
        }
        assert!((l_nonshadow(&output, &input, &shadow).unwrap() - sum / n).abs() < 1e-15);
    }

    #[test]
    fn total_arithmetic() {
        let w = LossWeights::default();
        let zero = LossComponents {
            regions: vec![RegionLosses {
                region_id: 1,
                l_distance: Some(0.0),
                l_distribution: Some(0.0),
                l_per: Some(0.0),
            }],
            pooled: None,
            l_nonshadow: 0.0,
        };
        assert_eq!(l_total(&zero, &w).unwrap().l_total, 0.0);
        let c = LossComponents {
            regions: vec![RegionLosses {
                region_id: 1,
                l_distance: Some(0.2),
                l_distribution: Some(0.1),
                l_per: Some(0.5),
            }],
            pooled: None,
            l_nonshadow: 0.01,
        };
        let r = l_total(&c, &w).unwrap();
        assert!((r.l_total - 0.45).abs() < 1e-12);
    }

    #[test]
    fn total_averages_regions() {
        let c = LossComponents {
            regions: vec![
                RegionLosses {
                    region_id: 3,
                    l_distance: Some(0.2),
                    l_distribution: Some(0.4),
                    l_per: Some(1.0),
                },
                RegionLosses {
                    region_id: 7,
                    l_distance: Some(0.6),
                    l_distribution: Some(0.2),
                    l_per: None,
                },
            ],
            pooled: None,
            l_nonshadow: 0.0,
        };
        let r = l_total(&c, &LossWeights::new(1.0, 2.0, 0.5, 0.0).unwrap()).unwrap();
        assert!((r.l_distance - 0.4).abs() < 1e-15);
        assert!((r.l_distribution - 0.3).abs() < 1e-15);
        assert_eq!(r.l_per, 1.0);
        assert!((r.l_total - (0.4 + 0.6 + 0.5)).abs() < 1e-12);

        let pooled = LossComponents {
            pooled: Some(PooledLosses {
                l_distance: 0.05,
                l_distribution: 0.07,
            }),
            ..c
        };
        let r = l_total(&pooled, &LossWeights::default()).unwrap();
        assert_eq!((r.l_distance, r.l_distribution), (0.05, 0.07));
        assert!(l_total(&LossComponents::default(), &LossWeights::default()).is_err());
    }

    #[test]
    fn weights_parse_and_validate() {
        let w: LossWeights = "1,1,0.1,10".parse().unwrap();
        assert_eq!(w, LossWeights::default());
        assert!("1,2,3".parse::<LossWeights>().is_err());
        assert!("1,-1,0,0".parse::<LossWeights>().is_err());
        assert!("1,x,0,0".parse::<LossWeights>().is_err());
    }

    proptest! {
        #[test]
        fn distance_properties(
            a in proptest::collection::vec(proptest::array::uniform3(0.0f64..=1.0), 1..30),
            b in proptest::collection::vec(proptest::array::uniform3(0.0f64..=1.0), 1..30),
        ) {
            prop_assert_eq!(l_distance(&a, &a).unwrap(), 0.0);
            let d = l_distance(&a, &b).unwrap();
            prop_assert!((d - brute_l_distance(&a, &b)).abs() < 1e-12);
            prop_assert!(d <= 3f64.sqrt() + 1e-12);
            let mut ra = a.clone();
            ra.reverse();
            let mut rb = b.clone();
            rb.rotate_left(b.len() / 2);
            prop_assert!((l_distance(&ra, &rb).unwrap() - d).abs() < 1e-12);
        }

        #[test]
        fn total_is_weighted_sum(
            comps in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, proptest::option::of(0.0f64..1.0)), 1..5),
            ns in 0.0f64..0.1,
            w in proptest::array::uniform4(0.0f64..10.0),
        ) {
            let regions = comps.iter().enumerate().map(|(i, &(d, e, p))| RegionLosses {
                region_id: i as u32 + 1, l_distance: Some(d), l_distribution: Some(e), l_per: p,
            }).collect();
            let weights = LossWeights::new(w[0], w[1], w[2], w[3]).unwrap();
            let r = l_total(&LossComponents { regions, pooled: None, l_nonshadow: ns }, &weights).unwrap();
            prop_assert_eq!(
                r.l_total,
                w[0] * r.l_distance + w[1] * r.l_distribution + w[2] * r.l_per + w[3] * r.l_nonshadow
            );
        }
    }
}
