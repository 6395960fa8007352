//! Binary morphology with square structuring elements, boundary bands, and
//! the exact Euclidean distance transform.
//!
//! Pixels outside the image count as background for both erosion and
//! dilation, so erosion eats in from the image border and dilation is
//! clipped at it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::BinaryMask;

/// A `(2 * radius + 1)^2` square applied `iterations` times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuringElement {
    radius: usize,
    iterations: usize,
}

impl StructuringElement {
    pub fn new(radius: usize, iterations: usize) -> Result<Self> {
        if radius == 0 || iterations == 0 {
            return Err(Error::InvalidConfig(format!(
                "structuring element needs radius >= 1 and iterations >= 1 (got {radius}, {iterations})"
            )));
        }
        Ok(Self { radius, iterations })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }
}

impl Default for StructuringElement {
    /// Radius 1, two iterations: the default shadow-band width.
    fn default() -> Self {
        Self {
            radius: 1,
            iterations: 2,
        }
    }
}

#[derive(Clone, Copy)]
enum Op {
    Erode,
    Dilate,
}

/// One pass along a line of `len` samples spaced `stride` apart.
fn pass_line(
    src: &[bool],
    dst: &mut [bool],
    start: usize,
    stride: usize,
    len: usize,
    r: usize,
    op: Op,
    prefix: &mut Vec<u32>,
) {
    prefix.clear();
    prefix.push(0);
    let mut acc = 0u32;
    for i in 0..len {
        acc += src[start + i * stride] as u32;
        prefix.push(acc);
    }
    for i in 0..len {
        let lo = i.saturating_sub(r);
        let hi = (i + r).min(len - 1);
        let count = prefix[hi + 1] - prefix[lo];
        dst[start + i * stride] = match op {
            // a window that leaves the image touches background
            Op::Erode => i >= r && i + r < len && count as usize == 2 * r + 1,
            Op::Dilate => count > 0,
        };
    }
}

fn square_pass(mask: &BinaryMask, r: usize, op: Op) -> BinaryMask {
    let (h, w) = mask.dims();
    let mut prefix = Vec::with_capacity(h.max(w) + 1);
    let mut rows = vec![false; h * w];
    for y in 0..h {
        pass_line(mask.as_slice(), &mut rows, y * w, 1, w, r, op, &mut prefix);
    }
    let mut out = vec![false; h * w];
    for x in 0..w {
        pass_line(&rows, &mut out, x, w, h, r, op, &mut prefix);
    }
    BinaryMask::new(h, w, out).expect("dimensions preserved")
}

fn apply(mask: &BinaryMask, se: StructuringElement, op: Op) -> BinaryMask {
    let mut cur = square_pass(mask, se.radius, op);
    for _ in 1..se.iterations {
        cur = square_pass(&cur, se.radius, op);
    }
    cur
}

/// A pixel survives iff its whole window is set (out-of-bounds is unset).
pub fn erode(mask: &BinaryMask, se: StructuringElement) -> BinaryMask {
    apply(mask, se, Op::Erode)
}

/// A pixel is set iff any in-bounds pixel of its window is set.
pub fn dilate(mask: &BinaryMask, se: StructuringElement) -> BinaryMask {
    apply(mask, se, Op::Dilate)
}

/// `mask AND NOT erode(mask)`: the ring just inside the mask boundary.
pub fn inner_band(mask: &BinaryMask, se: StructuringElement) -> BinaryMask {
    mask.difference(&erode(mask, se))
        .expect("erosion preserves dimensions")
}

/// `dilate(mask) AND NOT mask`: the ring just outside the mask boundary.
pub fn outer_band(mask: &BinaryMask, se: StructuringElement) -> BinaryMask {
    dilate(mask, se)
        .difference(mask)
        .expect("dilation preserves dimensions")
}

const FAR: f64 = 1e20;

/// 1-D squared distance transform of a sampled function (lower envelope of
/// parabolas).
fn dt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        loop {
            let p = v[k] as f64;
            let s = ((f[q] + qf * qf) - (f[v[k]] + p * p)) / (2.0 * qf - 2.0 * p);
            if s <= z[k] && k > 0 {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let p = v[k] as f64;
        *o = (qf - p) * (qf - p) + f[v[k]];
    }
}

/// Euclidean distance from every pixel to the nearest pixel where `mask` is
/// unset. Unset pixels map to 0; if the mask is set everywhere, every pixel is
/// `f64::INFINITY`. The image border is not treated as background.
pub fn distance_to_background(mask: &BinaryMask) -> Vec<f64> {
    let (h, w) = mask.dims();
    let n = h.max(w);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0f64; n + 1]);
    let mut grid: Vec<f64> = mask
        .as_slice()
        .iter()
        .map(|&set| if set { FAR } else { 0.0 })
        .collect();

    let mut col = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        dt_1d(&col, &mut col_out, &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = col_out[y];
        }
    }
    let mut row_out = vec![0.0; w];
    for y in 0..h {
        dt_1d(&grid[y * w..(y + 1) * w], &mut row_out, &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&row_out);
    }
    grid.into_iter()
        .map(|d2| {
            if d2 >= FAR / 2.0 {
                f64::INFINITY
            } else {
                d2.sqrt()
            }
        })
        .collect()
}
