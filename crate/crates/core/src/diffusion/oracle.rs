use std::sync::Arc;

use super::{DenoiserOutput, DiffusionError, LatentFrame, NoiseSchedule};
use crate::image::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Direction {
    /// A column of the frame matrix: one view over time.
    Temporal = 0,
    /// A row of the frame matrix: one timestamp across views.
    Spatial = 1,
}

/// Position of a latent in the frame matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cell {
    pub time: usize,
    pub view: usize,
}

/// One sequence handed to a denoiser. `cells[i]` locates `frames[i]`.
#[derive(Debug, Clone, Copy)]
pub struct DenoiseRequest<'a> {
    pub direction: Direction,
    pub t: usize,
    pub condition: u32,
    pub frames: &'a [LatentFrame],
    pub cells: &'a [Cell],
}

/// A noise predictor. Implementations return one output per input frame,
/// shaped like that frame, and must be deterministic in their inputs.
pub trait DenoiserOracle: Send + Sync {
    fn predict(&self, req: &DenoiseRequest<'_>) -> Result<Vec<DenoiserOutput>, DiffusionError>;
}

impl<O: DenoiserOracle + ?Sized> DenoiserOracle for Arc<O> {
    fn predict(&self, req: &DenoiseRequest<'_>) -> Result<Vec<DenoiserOutput>, DiffusionError> {
        (**self).predict(req)
    }
}

impl<O: DenoiserOracle + ?Sized> DenoiserOracle for &O {
    fn predict(&self, req: &DenoiseRequest<'_>) -> Result<Vec<DenoiserOutput>, DiffusionError> {
        (**self).predict(req)
    }
}

fn check_request(req: &DenoiseRequest<'_>) -> Result<(), DiffusionError> {
    if req.frames.len() != req.cells.len() {
        return Err(DiffusionError::FrameCount {
            expected: req.frames.len(),
            got: req.cells.len(),
        });
    }
    if req.t == 0 {
        return Err(DiffusionError::TimestepOutOfRange { t: 0, max: 0 });
    }
    Ok(())
}

/// Test denoiser that knows the clean latent of every cell and returns the
/// noise that explains `z_t` exactly, with zero variance.
#[derive(Debug, Clone)]
pub struct ExactOracle {
    sched: NoiseSchedule,
    /// Indexed `(view, time)`.
    targets: Grid<LatentFrame>,
}

impl ExactOracle {
    pub fn new(sched: NoiseSchedule, targets: Grid<LatentFrame>) -> Self {
        Self { sched, targets }
    }

    pub fn target(&self, cell: Cell) -> Result<&LatentFrame, DiffusionError> {
        self.targets
            .get(cell.view as isize, cell.time as isize)
            .ok_or(DiffusionError::UnknownCell {
                time: cell.time,
                view: cell.view,
            })
    }
}

impl DenoiserOracle for ExactOracle {
    fn predict(&self, req: &DenoiseRequest<'_>) -> Result<Vec<DenoiserOutput>, DiffusionError> {
        check_request(req)?;
        let a = self.sched.alpha_bar(req.t)?;
        let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
        req.frames
            .iter()
            .zip(req.cells)
            .map(|(z, &cell)| {
                let eps = z.zip_map(self.target(cell)?, |z, z0| (z - sa * z0) / sn)?;
                Ok(DenoiserOutput::deterministic(eps))
            })
            .collect()
    }
}

/// Denoiser without ground truth: predicts a clean latent equal to the
/// local 3×3 mean of `z_t / √ᾱ_t`, clamped to `[0, 1]`, and reports the
/// one-step posterior variance.
#[derive(Debug, Clone)]
pub struct SmoothingOracle {
    sched: NoiseSchedule,
}

impl SmoothingOracle {
    pub fn new(sched: NoiseSchedule) -> Self {
        Self { sched }
    }
}

fn local_mean(z: &LatentFrame) -> LatentFrame {
    let (h, w, c) = z.shape();
    let mut out = LatentFrame::zeros(z.shape());
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let (mut sum, mut n) = (0.0, 0.0);
                for yy in y.saturating_sub(1)..(y + 2).min(h) {
                    for xx in x.saturating_sub(1)..(x + 2).min(w) {
                        sum += z.at(yy, xx, ch);
                        n += 1.0;
                    }
                }
                let i = out.index(y, x, ch);
                out.data_mut()[i] = sum / n;
            }
        }
    }
    out
}

impl DenoiserOracle for SmoothingOracle {
    fn predict(&self, req: &DenoiseRequest<'_>) -> Result<Vec<DenoiserOutput>, DiffusionError> {
        check_request(req)?;
        let a = self.sched.alpha_bar(req.t)?;
        let a_prev = self.sched.alpha_bar(req.t - 1)?;
        let beta = self.sched.beta(req.t)?;
        let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
        let var = beta * (1.0 - a_prev) / (1.0 - a);
        req.frames
            .iter()
            .map(|z| {
                let z0 = local_mean(z).map(|m| (m / sa).clamp(0.0, 1.0));
                Ok(DenoiserOutput {
                    epsilon: z.zip_map(&z0, |z, z0| (z - sa * z0) / sn)?,
                    variance: LatentFrame::filled(z.shape(), var),
                })
            })
            .collect()
    }
}

/// Null denoiser: `ε = 0`, `Σ = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroOracle;

impl DenoiserOracle for ZeroOracle {
    fn predict(&self, req: &DenoiseRequest<'_>) -> Result<Vec<DenoiserOutput>, DiffusionError> {
        check_request(req)?;
        Ok(req
            .frames
            .iter()
            .map(|z| DenoiserOutput::deterministic(LatentFrame::zeros(z.shape())))
            .collect())
    }
}
