use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::image::{ColorImage, FrameError, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoissonConfig {
    /// Stop once the estimated remaining error, in pixel values, falls
    /// below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Over-relaxation factor in `(0, 2)`; 1 is plain Gauss-Seidel.
    pub omega: f64,
}

impl Default for PoissonConfig {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            max_iters: 10_000,
            omega: 1.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoissonReport {
    pub iterations: usize,
    /// Largest per-pixel correction of the last sweep.
    pub residual: f64,
    /// `step·ρ/(1-ρ)` with `ρ` the observed contraction of the steps.
    pub error_estimate: f64,
    pub converged: bool,
    /// Unknown pixels in regions with no known neighbour, left as generated.
    pub fallback_pixels: usize,
}

const NEIGHBORS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// Gradient-domain blend of `generated` into `warped` over the unknown part
/// of `mask` (`true` = known). Known pixels are copied verbatim; unknown
/// pixels take the gradients of `generated` with the surrounding known
/// pixels as boundary values. The image border is a free boundary.
pub fn poisson_blend(
    generated: &ColorImage,
    warped: &ColorImage,
    mask: &Mask,
    cfg: &PoissonConfig,
) -> Result<(ColorImage, PoissonReport), FrameError> {
    generated.check_dims(warped)?;
    generated.check_dims(mask)?;
    let (w, h) = mask.dims();
    let mut out = warped.clone();
    let mut report = PoissonReport {
        converged: true,
        ..Default::default()
    };
    let neighbor = |i: usize, (dx, dy): (isize, isize)| -> Option<usize> {
        let (x, y) = ((i % w) as isize + dx, (i / w) as isize + dy);
        (x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h).then(|| y as usize * w + x as usize)
    };

    // unknown pixels whose 4-connected component touches a known pixel
    let mut solvable = vec![false; w * h];
    let mut seen = vec![false; w * h];
    for start in 0..w * h {
        if mask.data()[start] || seen[start] {
            continue;
        }
        let mut component = vec![start];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut anchored = false;
        while let Some(i) = queue.pop_front() {
            for d in NEIGHBORS {
                let Some(j) = neighbor(i, d) else { continue };
                if mask.data()[j] {
                    anchored = true;
                } else if !seen[j] {
                    seen[j] = true;
                    component.push(j);
                    queue.push_back(j);
                }
            }
        }
        for &i in &component {
            if anchored {
                solvable[i] = true;
            } else {
                out.data_mut()[i] = generated.data()[i];
            }
        }
        if !anchored {
            report.fallback_pixels += component.len();
        }
    }

    let unknown: Vec<usize> = (0..w * h).filter(|&i| solvable[i]).collect();
    if unknown.is_empty() {
        return Ok((out, report));
    }
    let g = |i: usize| generated.data()[i].map(f64::from);
    let mut f: Vec<[f64; 3]> = (0..w * h)
        .map(|i| {
            if solvable[i] {
                g(i)
            } else {
                out.data()[i].map(f64::from)
            }
        })
        .collect();
    // per-pixel neighbour lists and guidance sums
    let stencil: Vec<(Vec<usize>, [f64; 3])> = unknown
        .iter()
        .map(|&i| {
            let nb: Vec<usize> = NEIGHBORS.iter().filter_map(|&d| neighbor(i, d)).collect();
            let mut b = [0.0; 3];
            for &j in &nb {
                let (gi, gj) = (g(i), g(j));
                for c in 0..3 {
                    b[c] += gi[c] - gj[c];
                }
            }
            (nb, b)
        })
        .collect();
    report.converged = false;
    // ratios of successive sweep corrections; the largest recent one is a
    // conservative contraction estimate even when SOR oscillates
    let mut ratios = [1.0f64; 3];
    let mut prev = f64::INFINITY;
    for iter in 1..=cfg.max_iters {
        let mut residual = 0.0f64;
        for (&i, (nb, b)) in unknown.iter().zip(&stencil) {
            let inv = 1.0 / nb.len() as f64;
            let mut target = *b;
            for &j in nb {
                for c in 0..3 {
                    target[c] += f[j][c];
                }
            }
            for c in 0..3 {
                let delta = target[c] * inv - f[i][c];
                residual = residual.max(delta.abs());
                f[i][c] += cfg.omega * delta;
            }
        }
        report.iterations = iter;
        report.residual = residual;
        if residual == 0.0 {
            report.error_estimate = 0.0;
            report.converged = true;
            break;
        }
        ratios[iter % 3] = if prev.is_finite() { residual / prev } else { 1.0 };
        prev = residual;
        let rho = ratios.iter().copied().fold(0.0, f64::max);
        report.error_estimate = if rho < 1.0 {
            cfg.omega * residual * rho / (1.0 - rho)
        } else {
            f64::INFINITY
        };
        if report.error_estimate < cfg.tol {
            report.converged = true;
            break;
        }
    }
    for &i in &unknown {
        out.data_mut()[i] = f[i].map(|v| v as f32);
    }
    Ok((out, report))
}
