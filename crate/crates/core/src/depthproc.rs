//! Depth normalization and flow-aligned temporal smoothing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{DepthMap, Grid, Mask};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DepthError {
    #[error("depth clip is empty")]
    EmptyClip,
    #[error("depth range must satisfy 0 < near < far, got ({near}, {far})")]
    InvalidRange { near: f64, far: f64 },
    #[error("raw depth {value} at frame {frame} ({x}, {y}) is not a positive number")]
    InvalidSample {
        frame: usize,
        x: usize,
        y: usize,
        value: f32,
    },
    #[error("frame {frame} is {got:?}, expected {expected:?}")]
    ShapeMismatch {
        frame: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("expected {expected} flow fields for {frames} frames, got {got}")]
    FlowCount {
        frames: usize,
        expected: usize,
        got: usize,
    },
    #[error("smoothing radius must be at least 1 and sigma positive")]
    InvalidKernel,
}

/// Per-pixel displacement from frame `i` to frame `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub flow: Grid<[f32; 2]>,
    pub valid: Mask,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            flow: Grid::filled(width, height, [0.0; 2]),
            valid: Mask::filled(width, height, true),
        }
    }

    /// Bilinear flow at a continuous position. `None` when the position is
    /// outside the grid or its nearest pixel is flagged invalid.
    pub fn sample(&self, x: f64, y: f64) -> Option<[f64; 2]> {
        let (w, h) = self.flow.dims();
        if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
            return None;
        }
        let (nx, ny) = (x.round() as usize, y.round() as usize);
        if !self.valid[(nx, ny)] {
            return None;
        }
        let u = bilinear(w, h, x, y, |i, j| f64::from(self.flow[(i, j)][0]));
        let v = bilinear(w, h, x, y, |i, j| f64::from(self.flow[(i, j)][1]));
        Some([u, v])
    }
}

fn bilinear(w: usize, h: usize, x: f64, y: f64, at: impl Fn(usize, usize) -> f64) -> f64 {
    let x0 = (x.floor() as usize).min(w - 1);
    let y0 = (y.floor() as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

fn sample_depth(d: &DepthMap, x: f64, y: f64) -> Option<f64> {
    let (w, h) = d.dims();
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return None;
    }
    Some(bilinear(w, h, x, y, |i, j| f64::from(d[(i, j)])))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthClip {
    pub depths: Vec<DepthMap>,
    pub range: (f64, f64),
}

impl DepthClip {
    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }
}

/// Maps the clip-wide `[min, max]` affinely onto `[d_near, d_far]`. A clip
/// with a single distinct value maps to the midpoint of the range.
pub fn normalize_depth(raw: &[DepthMap], d_near: f64, d_far: f64) -> Result<DepthClip, DepthError> {
    if !(d_near > 0.0 && d_far > d_near && d_far.is_finite()) {
        return Err(DepthError::InvalidRange {
            near: d_near,
            far: d_far,
        });
    }
    let first = raw.first().ok_or(DepthError::EmptyClip)?;
    let dims = first.dims();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (frame, d) in raw.iter().enumerate() {
        if d.dims() != dims {
            return Err(DepthError::ShapeMismatch {
                frame,
                expected: dims,
                got: d.dims(),
            });
        }
        for (i, &v) in d.data().iter().enumerate() {
            if !(v.is_finite() && v > 0.0) {
                return Err(DepthError::InvalidSample {
                    frame,
                    x: i % dims.0,
                    y: i / dims.0,
                    value: v,
                });
            }
            lo = lo.min(f64::from(v));
            hi = hi.max(f64::from(v));
        }
    }
    let depths = if hi > lo {
        let scale = (d_far - d_near) / (hi - lo);
        raw.iter()
            .map(|d| d.map(|&v| (d_near + (f64::from(v) - lo) * scale) as f32))
            .collect()
    } else {
        let mid = (0.5 * (d_near + d_far)) as f32;
        raw.iter().map(|d| d.map(|_| mid)).collect()
    };
    Ok(DepthClip {
        depths,
        range: (d_near, d_far),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub radius: usize,
    pub sigma: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            radius: 2,
            sigma: 1.0,
        }
    }
}

impl SmoothingConfig {
    pub fn weight(&self, offset: usize) -> f64 {
        let j = offset as f64;
        (-(j * j) / (2.0 * self.sigma * self.sigma)).exp()
    }
}

/// Gaussian temporal filter along flow trajectories.
///
/// `forward[i]` maps frame `i` to `i + 1`. `backward[i]`, when supplied, maps
/// frame `i + 1` to `i`; otherwise backward steps negate the forward flow of
/// the earlier frame sampled at the current position. A trajectory stops at
/// the first invalid or out-of-frame flow sample, and weights are
/// renormalized over the samples actually gathered.
pub fn temporal_smooth(
    clip: &DepthClip,
    forward: &[FlowField],
    backward: Option<&[FlowField]>,
    cfg: &SmoothingConfig,
) -> Result<DepthClip, DepthError> {
    if cfg.radius == 0 || !(cfg.sigma > 0.0) {
        return Err(DepthError::InvalidKernel);
    }
    let n = clip.len();
    if n == 0 {
        return Err(DepthError::EmptyClip);
    }
    let expected = n - 1;
    if forward.len() != expected {
        return Err(DepthError::FlowCount {
            frames: n,
            expected,
            got: forward.len(),
        });
    }
    if let Some(b) = backward {
        if b.len() != expected {
            return Err(DepthError::FlowCount {
                frames: n,
                expected,
                got: b.len(),
            });
        }
    }
    let dims = clip.depths[0].dims();
    for (frame, f) in forward.iter().chain(backward.unwrap_or(&[])).enumerate() {
        if f.flow.dims() != dims || f.valid.dims() != dims {
            return Err(DepthError::ShapeMismatch {
                frame: frame % expected.max(1),
                expected: dims,
                got: f.flow.dims(),
            });
        }
    }
    let (lo, hi) = clip.range;
    let weights: Vec<f64> = (0..=cfg.radius).map(|j| cfg.weight(j)).collect();
    let depths = (0..n)
        .into_par_iter()
        .map(|s| {
            Grid::from_fn(dims.0, dims.1, |x, y| {
                let center = f64::from(clip.depths[s][(x, y)]);
                let mut acc = weights[0] * center;
                let mut wsum = weights[0];
                let (mut px, mut py) = (x as f64, y as f64);
                for j in 1..=cfg.radius {
                    let to = s + j;
                    if to >= n {
                        break;
                    }
                    let Some([u, v]) = forward[to - 1].sample(px, py) else {
                        break;
                    };
                    px += u;
                    py += v;
                    let Some(d) = sample_depth(&clip.depths[to], px, py) else {
                        break;
                    };
                    acc += weights[j] * d;
                    wsum += weights[j];
                }
                let (mut px, mut py) = (x as f64, y as f64);
                for j in 1..=cfg.radius.min(s) {
                    let to = s - j;
                    let step = match backward {
                        Some(b) => b[to].sample(px, py),
                        None => forward[to].sample(px, py).map(|[u, v]| [-u, -v]),
                    };
                    let Some([u, v]) = step else {
                        break;
                    };
                    px += u;
                    py += v;
                    let Some(d) = sample_depth(&clip.depths[to], px, py) else {
                        break;
                    };
                    acc += weights[j] * d;
                    wsum += weights[j];
                }
                (acc / wsum).clamp(lo, hi) as f32
            })
        })
        .collect();
    Ok(DepthClip {
        depths,
        range: clip.range,
    })
}
