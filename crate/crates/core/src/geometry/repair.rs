//! Per-plane artifact repair.
//!
//! Both passes are iterated to a fixpoint: removing a point can isolate its
//! neighbor, and filling a crack can expose the next crack pixel. The masks
//! converge because removal only shrinks and filling only grows the support.

use serde::{Deserialize, Serialize};

use crate::image::Mask;

use super::PlaneLayer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepairConfig {
    /// Occupied pixels whose 3×3 box response falls below this are removed.
    pub isolated_threshold: f64,
    /// Empty pixels whose 3×3 Gaussian response exceeds this are filled.
    pub crack_threshold: f64,
    /// σ of the normalized 3×3 crack kernel.
    pub crack_sigma: f64,
}

impl Default for RepairConfig {
    fn default() -> Self {
        Self {
            isolated_threshold: 0.5,
            crack_threshold: 0.2,
            crack_sigma: 0.5,
        }
    }
}

impl RepairConfig {
    pub fn apply(&self, layer: &mut PlaneLayer) {
        remove_isolated(layer, self.isolated_threshold);
        fill_cracks(layer, self.crack_threshold, self.crack_sigma);
    }
}

/// Normalized 3×3 Gaussian, `k[dy + 1][dx + 1]`.
pub fn crack_kernel(sigma: f64) -> [[f64; 3]; 3] {
    let mut k = [[0.0; 3]; 3];
    let mut sum = 0.0;
    for (j, row) in k.iter_mut().enumerate() {
        for (i, v) in row.iter_mut().enumerate() {
            let (dx, dy) = (i as f64 - 1.0, j as f64 - 1.0);
            *v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            sum += *v;
        }
    }
    for row in &mut k {
        for v in row {
            *v /= sum;
        }
    }
    k
}

const OFFSETS: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Normalized box-filter response at `(x, y)`, zero outside the grid.
pub fn box_response(mask: &Mask, x: usize, y: usize) -> f64 {
    let mut n = usize::from(mask[(x, y)]);
    for (dx, dy) in OFFSETS {
        if let Some(true) = mask.get(x as isize + dx, y as isize + dy) {
            n += 1;
        }
    }
    n as f64 / 9.0
}

pub fn gaussian_response(mask: &Mask, kernel: &[[f64; 3]; 3], x: usize, y: usize) -> f64 {
    let mut r = if mask[(x, y)] { kernel[1][1] } else { 0.0 };
    for (dx, dy) in OFFSETS {
        if let Some(true) = mask.get(x as isize + dx, y as isize + dy) {
            r += kernel[(dy + 1) as usize][(dx + 1) as usize];
        }
    }
    r
}

fn neighbors(w: usize, h: usize, i: usize) -> impl Iterator<Item = usize> {
    let (x, y) = ((i % w) as isize, (i / w) as isize);
    OFFSETS.iter().filter_map(move |&(dx, dy)| {
        let (nx, ny) = (x + dx, y + dy);
        (nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h)
            .then(|| ny as usize * w + nx as usize)
    })
}

/// Clears occupied pixels with box response `< threshold` until none remain.
/// Returns the number of pixels removed.
pub fn remove_isolated(layer: &mut PlaneLayer, threshold: f64) -> usize {
    let (w, h) = layer.mask.dims();
    let mut candidates: Vec<usize> = (0..w * h).filter(|&i| layer.mask.data()[i]).collect();
    let mut stamp = vec![0u32; w * h];
    let mut round = 0u32;
    let mut removed = 0;
    loop {
        let doomed: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|&i| layer.mask.data()[i] && box_response(&layer.mask, i % w, i / w) < threshold)
            .collect();
        if doomed.is_empty() {
            return removed;
        }
        for &i in &doomed {
            layer.mask.data_mut()[i] = false;
            layer.color.data_mut()[i] = [0.0; 3];
            layer.depth.data_mut()[i] = 0.0;
        }
        removed += doomed.len();
        round += 1;
        candidates.clear();
        for &i in &doomed {
            for n in neighbors(w, h, i) {
                if layer.mask.data()[n] && stamp[n] != round {
                    stamp[n] = round;
                    candidates.push(n);
                }
            }
        }
    }
}

/// Fills empty pixels with Gaussian response `> threshold` until none remain.
/// A filled pixel takes the kernel-weighted mean color and depth of its
/// occupied neighbors. Returns the number of pixels filled.
pub fn fill_cracks(layer: &mut PlaneLayer, threshold: f64, sigma: f64) -> usize {
    let kernel = crack_kernel(sigma);
    let (w, h) = layer.mask.dims();
    let mut candidates: Vec<usize> = (0..w * h).filter(|&i| !layer.mask.data()[i]).collect();
    let mut stamp = vec![0u32; w * h];
    let mut round = 0u32;
    let mut filled = 0;
    loop {
        let mut fills: Vec<(usize, [f32; 3], f32)> = Vec::new();
        for &i in &candidates {
            if layer.mask.data()[i] {
                continue;
            }
            let (x, y) = (i % w, i / w);
            if gaussian_response(&layer.mask, &kernel, x, y) <= threshold {
                continue;
            }
            let mut acc = [0.0f64; 3];
            let mut dacc = 0.0f64;
            let mut wsum = 0.0f64;
            for (dx, dy) in OFFSETS {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if let Some(true) = layer.mask.get(nx, ny) {
                    let kw = kernel[(dy + 1) as usize][(dx + 1) as usize];
                    let (nx, ny) = (nx as usize, ny as usize);
                    let c = layer.color[(nx, ny)];
                    for ch in 0..3 {
                        acc[ch] += kw * f64::from(c[ch]);
                    }
                    dacc += kw * f64::from(layer.depth[(nx, ny)]);
                    wsum += kw;
                }
            }
            let color = [
                (acc[0] / wsum) as f32,
                (acc[1] / wsum) as f32,
                (acc[2] / wsum) as f32,
            ];
            fills.push((i, color, (dacc / wsum) as f32));
        }
        if fills.is_empty() {
            return filled;
        }
        for &(i, c, d) in &fills {
            layer.mask.data_mut()[i] = true;
            layer.color.data_mut()[i] = c;
            layer.depth.data_mut()[i] = d;
        }
        filled += fills.len();
        round += 1;
        candidates.clear();
        for &(i, _, _) in &fills {
            for n in neighbors(w, h, i) {
                if !layer.mask.data()[n] && stamp[n] != round {
                    stamp[n] = round;
                    candidates.push(n);
                }
            }
        }
    }
}
