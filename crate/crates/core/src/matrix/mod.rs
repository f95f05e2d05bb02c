//! The frame matrix: a grid of latents indexed by timestamp (rows) and
//! viewpoint (columns), inpainted by alternating temporal and spatial
//! denoising passes.

mod poisson;
mod sampler;

use rayon::prelude::*;
use thiserror::Error;

use crate::diffusion::{DiffusionError, LatentCodec, LatentFrame, NoiseKey, NoiseSource, Purpose};
use crate::geometry::{CameraRig, RigMode, WarpResult};
use crate::image::{ColorImage, Grid, Mask};

pub use poisson::{poisson_blend, PoissonConfig, PoissonReport};
pub use sampler::{
    boundary_reinjection, denoise_frame_matrix, denoise_sequence, denoise_single_video, PassNoise,
    ReinjectMode, Sampler, SamplerEvent, SequenceInput,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatrixError {
    #[error("frame matrix has no cells")]
    Empty,
    #[error("cell (time {time}, view {view}) is {got:?}, expected {expected:?}")]
    ShapeMismatch {
        time: usize,
        view: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("reference view has unknown pixels at time {time}")]
    ReferenceUnknown { time: usize },
    #[error("rig has {cameras} cameras for {views} views")]
    RigSize { cameras: usize, views: usize },
    #[error("stereo extraction needs at least two views")]
    NoStereoPair,
    #[error("single-video path needs exactly one view, got {views}")]
    NotSingleVideo { views: usize },
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

/// Latent grids are indexed `(view, time)`: rows share a timestamp, columns
/// share a viewpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    pub latents: Grid<LatentFrame>,
    pub known_latents: Grid<LatentFrame>,
    /// Latent-resolution masks, `true` = known.
    pub latent_masks: Grid<Mask>,
    pub image_known: Grid<ColorImage>,
    pub image_masks: Grid<Mask>,
    pub rig: Option<CameraRig>,
    pub condition: u32,
}

impl FrameMatrix {
    pub fn views(&self) -> usize {
        self.latents.width()
    }

    pub fn frames(&self) -> usize {
        self.latents.height()
    }
}

/// AND-pooling of an image mask over `f×f` blocks.
pub fn pool_mask(mask: &Mask, factor: usize) -> Mask {
    let (w, h) = (mask.width() / factor, mask.height() / factor);
    Mask::from_fn(w, h, |bx, by| {
        (by * factor..(by + 1) * factor).all(|y| (bx * factor..(bx + 1) * factor).all(|x| mask[(x, y)]))
    })
}

/// Encodes the warped grid, pools its masks and draws `z_T` for every cell.
pub fn build_frame_matrix(
    warps: &Grid<WarpResult>,
    codec: &dyn LatentCodec,
    condition: u32,
    rig: Option<CameraRig>,
    noise: NoiseSource,
    t_start: usize,
) -> Result<FrameMatrix, MatrixError> {
    let (views, frames) = warps.dims();
    if views == 0 || frames == 0 {
        return Err(MatrixError::Empty);
    }
    if let Some(rig) = &rig {
        if rig.len() != views {
            return Err(MatrixError::RigSize {
                cameras: rig.len(),
                views,
            });
        }
    }
    let dims = warps[(0, 0)].frame.color.dims();
    for time in 0..frames {
        for view in 0..views {
            let w = &warps[(view, time)];
            for got in [w.frame.color.dims(), w.disocclusion.dims()] {
                if got != dims {
                    return Err(MatrixError::ShapeMismatch {
                        time,
                        view,
                        expected: dims,
                        got,
                    });
                }
            }
        }
    }
    if matches!(&rig, Some(r) if r.mode == RigMode::Stereo) {
        if let Some(time) = (0..frames).find(|&s| warps[(0, s)].disocclusion.data().contains(&false)) {
            return Err(MatrixError::ReferenceUnknown { time });
        }
    }
    let shape = codec.latent_shape(dims.0, dims.1)?;
    let cells: Vec<(usize, usize)> = (0..frames).flat_map(|s| (0..views).map(move |v| (v, s))).collect();
    let encoded = cells
        .par_iter()
        .map(|&(v, s)| {
            let w = &warps[(v, s)];
            let image = masked(&w.frame.color, &w.disocclusion);
            let known = codec.encode(&image)?;
            let z = noise.normal(NoiseKey::new(Purpose::Init, t_start, 0, s, v), shape);
            Ok((image, known, pool_mask(&w.disocclusion, codec.factor()), z))
        })
        .collect::<Result<Vec<_>, DiffusionError>>()?;
    let mut image_known = Vec::with_capacity(cells.len());
    let mut known_latents = Vec::with_capacity(cells.len());
    let mut latent_masks = Vec::with_capacity(cells.len());
    let mut latents = Vec::with_capacity(cells.len());
    for (image, known, mask, z) in encoded {
        image_known.push(image);
        known_latents.push(known);
        latent_masks.push(mask);
        latents.push(z);
    }
    fn grid<T>(views: usize, frames: usize, v: Vec<T>) -> Grid<T> {
        Grid::from_vec(views, frames, v).expect("cell count")
    }
    Ok(FrameMatrix {
        latents: grid(views, frames, latents),
        known_latents: grid(views, frames, known_latents),
        latent_masks: grid(views, frames, latent_masks),
        image_known: grid(views, frames, image_known),
        image_masks: Grid::from_fn(views, frames, |v, s| warps[(v, s)].disocclusion.clone()),
        rig,
        condition,
    })
}

fn masked(color: &ColorImage, mask: &Mask) -> ColorImage {
    let mut out = color.clone();
    for (c, &m) in out.data_mut().iter_mut().zip(mask.data()) {
        if !m {
            *c = [0.0; 3];
        }
    }
    out
}

/// Leftmost and rightmost columns of a decoded grid.
pub fn extract_stereo(frames: &Grid<ColorImage>) -> Result<(Vec<ColorImage>, Vec<ColorImage>), MatrixError> {
    let (views, times) = frames.dims();
    if views < 2 {
        return Err(MatrixError::NoStereoPair);
    }
    let column = |v| (0..times).map(|s| frames[(v, s)].clone()).collect();
    Ok((column(0), column(views - 1)))
}
