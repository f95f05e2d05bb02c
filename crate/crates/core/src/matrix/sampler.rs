use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FrameMatrix, MatrixError};
use crate::diffusion::{
    forward_noise, posterior_step, predict_z0, resample_noise, Cell, DenoiseRequest, DenoiserOracle,
    DenoiserOutput, DiffusionError, Direction, LatentCodec, LatentFrame, NoiseKey, NoiseSchedule,
    NoiseSource, PlannedStep, Purpose, SamplingPlan, Step,
};
use crate::image::{ColorImage, Grid, Mask};

/// When decoded predictions are folded back into the known latents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReinjectMode {
    /// Once per outer step, in its last pass.
    PerStep,
    /// In every pass.
    PerPass,
}

/// Progress notifications from the samplers.
#[derive(Debug)]
pub enum SamplerEvent<'a> {
    Pass {
        step: Step,
        n: usize,
        direction: Direction,
        sequences: usize,
        oracle_calls: usize,
        latents: &'a Grid<LatentFrame>,
        known_latents: &'a Grid<LatentFrame>,
    },
    Resample {
        step: Step,
        n: usize,
    },
    Reinject {
        step: Step,
        n: usize,
        cells: usize,
        known_latents: &'a Grid<LatentFrame>,
    },
    Freeze {
        step: Step,
        views: Vec<usize>,
    },
}

type Hook<'h> = Option<&'h mut dyn FnMut(&SamplerEvent<'_>)>;

/// Noise draws of one pass, keyed by cell.
#[derive(Debug, Clone, Copy)]
pub struct PassNoise {
    pub source: NoiseSource,
    pub step: Step,
    pub pass: usize,
}

impl PassNoise {
    pub fn draw(&self, purpose: Purpose, cell: Cell, shape: (usize, usize, usize)) -> LatentFrame {
        self.source.normal(
            NoiseKey::new(purpose, self.step.t, self.pass, cell.time, cell.view),
            shape,
        )
    }
}

fn fully_known(mask: &Mask) -> bool {
    !mask.data().contains(&false)
}

fn composite(known: &LatentFrame, unknown: &LatentFrame, mask: &Mask) -> LatentFrame {
    let c = known.channels();
    let mut out = unknown.clone();
    for (i, &m) in mask.data().iter().enumerate() {
        if m {
            out.data_mut()[i * c..(i + 1) * c].copy_from_slice(&known.data()[i * c..(i + 1) * c]);
        }
    }
    out
}

/// Known latents re-noised to `step.prev`, denoised latents from the
/// posterior, joined by the mask.
fn update_cell(
    z: &LatentFrame,
    out: Option<&DenoiserOutput>,
    known: &LatentFrame,
    mask: &Mask,
    cell: Cell,
    sched: &NoiseSchedule,
    noise: &PassNoise,
) -> Result<LatentFrame, DiffusionError> {
    let shape = z.shape();
    let step = noise.step;
    let all_known = fully_known(mask);
    let known_prev = if !mask.data().contains(&true) {
        None
    } else if step.prev == 0 {
        Some(known.clone())
    } else {
        let eps = noise.draw(Purpose::Known, cell, shape);
        Some(forward_noise(known, step.prev, &eps, sched)?)
    };
    if all_known {
        return Ok(known_prev.expect("known cell"));
    }
    let out = out.expect("prediction for a cell with unknown elements");
    let xi = if step.is_final() || out.variance.data().iter().all(|&v| v == 0.0) {
        LatentFrame::zeros(shape)
    } else {
        noise.draw(Purpose::Posterior, cell, shape)
    };
    let unknown = posterior_step(z, out, step, sched, &xi)?;
    Ok(match known_prev {
        Some(k) => composite(&k, &unknown, mask),
        None => unknown,
    })
}

fn check_outputs(outs: &[DenoiserOutput], frames: &[&LatentFrame]) -> Result<(), DiffusionError> {
    if outs.len() != frames.len() {
        return Err(DiffusionError::FrameCount {
            expected: frames.len(),
            got: outs.len(),
        });
    }
    for (o, z) in outs.iter().zip(frames) {
        o.check(z.shape())?;
    }
    Ok(())
}

/// One sequence of the frame matrix with its known latents and masks.
#[derive(Debug, Clone, Copy)]
pub struct SequenceInput<'a> {
    pub frames: &'a [LatentFrame],
    pub known: &'a [LatentFrame],
    pub masks: &'a [Mask],
    pub cells: &'a [Cell],
    pub direction: Direction,
    pub condition: u32,
}

/// Denoises one sequence from `noise.step.t` to `noise.step.prev` and
/// composites the result with the re-noised known latents.
pub fn denoise_sequence(
    input: &SequenceInput<'_>,
    oracle: &dyn DenoiserOracle,
    sched: &NoiseSchedule,
    noise: &PassNoise,
) -> Result<Vec<LatentFrame>, DiffusionError> {
    let n = input.frames.len();
    for len in [input.known.len(), input.masks.len(), input.cells.len()] {
        if len != n {
            return Err(DiffusionError::FrameCount { expected: n, got: len });
        }
    }
    let outs = if input.masks.iter().all(fully_known) {
        None
    } else {
        let outs = oracle.predict(&DenoiseRequest {
            direction: input.direction,
            t: noise.step.t,
            condition: input.condition,
            frames: input.frames,
            cells: input.cells,
        })?;
        check_outputs(&outs, &input.frames.iter().collect::<Vec<_>>())?;
        Some(outs)
    };
    (0..n)
        .map(|i| {
            update_cell(
                &input.frames[i],
                outs.as_ref().map(|o| &o[i]),
                &input.known[i],
                &input.masks[i],
                input.cells[i],
                sched,
                noise,
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Alternation {
    /// Odd passes run columns, even passes run rows.
    Matrix,
    /// Every pass runs whole columns.
    TemporalOnly,
}

/// Everything the samplers need besides the frame matrix itself.
#[derive(Clone, Copy)]
pub struct Sampler<'a> {
    pub plan: &'a SamplingPlan,
    pub oracle: &'a dyn DenoiserOracle,
    pub codec: &'a dyn LatentCodec,
    pub sched: &'a NoiseSchedule,
    pub noise: NoiseSource,
    pub reinject: Option<ReinjectMode>,
}

/// Alternating temporal/spatial denoising of the whole matrix, returning the
/// decoded grid. Latents end up composited with the known latents.
pub fn denoise_frame_matrix(
    fm: &mut FrameMatrix,
    sampler: &Sampler<'_>,
    hook: Hook<'_>,
) -> Result<Grid<ColorImage>, MatrixError> {
    sampler.run(fm, Alternation::Matrix, hook)
}

/// Denoising inpainting of a single video, every pass over the whole clip.
pub fn denoise_single_video(
    fm: &mut FrameMatrix,
    sampler: &Sampler<'_>,
    hook: Hook<'_>,
) -> Result<Grid<ColorImage>, MatrixError> {
    if fm.views() != 1 {
        return Err(MatrixError::NotSingleVideo { views: fm.views() });
    }
    sampler.run(fm, Alternation::TemporalOnly, hook)
}

/// Replaces the known latents of every cell with unknown pixels by
/// `encode(M ⊙ X_warp + (1 - M) ⊙ decode(z̃_0))`, where `z̃_0` is predicted from
/// the current latents at `t`. Returns the number of cells updated.
pub fn boundary_reinjection(
    fm: &mut FrameMatrix,
    t: usize,
    oracle: &dyn DenoiserOracle,
    codec: &dyn LatentCodec,
    sched: &NoiseSchedule,
) -> Result<usize, MatrixError> {
    let sequences: Vec<Vec<Cell>> = (0..fm.views())
        .map(|view| (0..fm.frames()).map(|time| Cell { time, view }).collect())
        .collect();
    let preds = predict_all(fm, &sequences, Direction::Temporal, t, oracle)?;
    let estimates = estimate_all(fm, &preds, t, sched)?;
    Ok(reinject_cells(fm, &estimates, codec)?)
}

type Predictions = Vec<(Cell, Option<DenoiserOutput>)>;

fn predict_all(
    fm: &FrameMatrix,
    sequences: &[Vec<Cell>],
    direction: Direction,
    t: usize,
    oracle: &dyn DenoiserOracle,
) -> Result<Predictions, DiffusionError> {
    let per_seq = sequences
        .par_iter()
        .map(|cells| {
            if cells.iter().all(|c| fully_known(&fm.latent_masks[(c.view, c.time)])) {
                return Ok(None);
            }
            let frames: Vec<LatentFrame> = cells.iter().map(|c| fm.latents[(c.view, c.time)].clone()).collect();
            let outs = oracle.predict(&DenoiseRequest {
                direction,
                t,
                condition: fm.condition,
                frames: &frames,
                cells,
            })?;
            check_outputs(&outs, &frames.iter().collect::<Vec<_>>())?;
            Ok(Some(outs))
        })
        .collect::<Result<Vec<_>, DiffusionError>>()?;
    let mut flat = Vec::new();
    for (cells, outs) in sequences.iter().zip(per_seq) {
        match outs {
            Some(outs) => flat.extend(cells.iter().copied().zip(outs.into_iter().map(Some))),
            None => flat.extend(cells.iter().map(|&c| (c, None))),
        }
    }
    Ok(flat)
}

fn estimate_all(
    fm: &FrameMatrix,
    preds: &Predictions,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Vec<(Cell, LatentFrame)>, DiffusionError> {
    preds
        .par_iter()
        .filter_map(|(c, o)| {
            o.as_ref()
                .map(|o| predict_z0(&fm.latents[(c.view, c.time)], o, t, sched).map(|z| (*c, z)))
        })
        .collect()
}

fn reinject_cells(
    fm: &mut FrameMatrix,
    estimates: &[(Cell, LatentFrame)],
    codec: &dyn LatentCodec,
) -> Result<usize, DiffusionError> {
    let fresh = estimates
        .par_iter()
        .filter(|(c, _)| !fully_known(&fm.image_masks[(c.view, c.time)]))
        .map(|(c, z0)| {
            let mask = &fm.image_masks[(c.view, c.time)];
            let warped = &fm.image_known[(c.view, c.time)];
            let mut image = codec.decode(z0)?;
            if image.dims() != mask.dims() {
                return Err(DiffusionError::Oracle(format!(
                    "codec decoded {:?} for a {:?} frame",
                    image.dims(),
                    mask.dims()
                )));
            }
            for ((px, &m), &w) in image.data_mut().iter_mut().zip(mask.data()).zip(warped.data()) {
                if m {
                    *px = w;
                }
            }
            Ok((*c, codec.encode(&image)?))
        })
        .collect::<Result<Vec<_>, DiffusionError>>()?;
    let count = fresh.len();
    for (c, z) in fresh {
        fm.known_latents[(c.view, c.time)] = z;
    }
    Ok(count)
}

impl Sampler<'_> {
    fn active_views(&self, planned: &PlannedStep, views: usize) -> Vec<usize> {
        match self.plan.active_views(planned) {
            Some(v) => {
                let mut v: Vec<usize> = v.iter().copied().filter(|&i| i < views).collect();
                v.sort_unstable();
                v.dedup();
                v
            }
            None => (0..views).collect(),
        }
    }

    fn run(
        &self,
        fm: &mut FrameMatrix,
        alternation: Alternation,
        mut hook: Hook<'_>,
    ) -> Result<Grid<ColorImage>, MatrixError> {
        let steps = self.plan.steps(self.sched)?;
        let (views, frames) = (fm.views(), fm.frames());
        let mut emit = |e: SamplerEvent<'_>| {
            if let Some(h) = hook.as_mut() {
                h(&e);
            }
        };
        for (i, planned) in steps.iter().enumerate() {
            let step = planned.step;
            let active = self.active_views(planned, views);
            let next_active = steps.get(i + 1).map(|p| self.active_views(p, views));
            let freezing: Vec<usize> = match &next_active {
                Some(next) => active.iter().copied().filter(|v| !next.contains(v)).collect(),
                None => Vec::new(),
            };
            let passes = planned.passes;
            let mut estimates = Vec::new();
            for n in 1..=passes {
                let direction = match alternation {
                    Alternation::Matrix if n % 2 == 0 => Direction::Spatial,
                    _ => Direction::Temporal,
                };
                let sequences: Vec<Vec<Cell>> = match direction {
                    Direction::Temporal => active
                        .iter()
                        .map(|&view| (0..frames).map(|time| Cell { time, view }).collect())
                        .collect(),
                    Direction::Spatial => (0..frames)
                        .map(|time| active.iter().map(|&view| Cell { time, view }).collect())
                        .collect(),
                };
                let reinject_now = match self.reinject {
                    Some(ReinjectMode::PerStep) => n == passes,
                    Some(ReinjectMode::PerPass) => true,
                    None => false,
                };
                let keep_estimates = n == passes && !freezing.is_empty();
                let preds = predict_all(fm, &sequences, direction, step.t, self.oracle)?;
                let oracle_calls = sequences
                    .iter()
                    .filter(|cells| preds.iter().any(|(c, o)| o.is_some() && cells.contains(c)))
                    .count();
                if reinject_now || keep_estimates {
                    estimates = estimate_all(fm, &preds, step.t, self.sched)?;
                    if reinject_now {
                        let cells = reinject_cells(fm, &estimates, self.codec)?;
                        emit(SamplerEvent::Reinject {
                            step,
                            n,
                            cells,
                            known_latents: &fm.known_latents,
                        });
                    }
                }
                let noise = PassNoise {
                    source: self.noise,
                    step,
                    pass: n,
                };
                let updated = preds
                    .par_iter()
                    .map(|(c, o)| {
                        let (v, s) = (c.view, c.time);
                        update_cell(
                            &fm.latents[(v, s)],
                            o.as_ref(),
                            &fm.known_latents[(v, s)],
                            &fm.latent_masks[(v, s)],
                            *c,
                            self.sched,
                            &noise,
                        )
                    })
                    .collect::<Result<Vec<_>, DiffusionError>>()?;
                for ((c, _), z) in preds.iter().zip(updated) {
                    fm.latents[(c.view, c.time)] = z;
                }
                emit(SamplerEvent::Pass {
                    step,
                    n,
                    direction,
                    sequences: sequences.len(),
                    oracle_calls,
                    latents: &fm.latents,
                    known_latents: &fm.known_latents,
                });
                if n < passes {
                    let cells: Vec<Cell> = sequences.iter().flatten().copied().collect();
                    let renoised = cells
                        .par_iter()
                        .map(|c| {
                            let z = &fm.latents[(c.view, c.time)];
                            resample_noise(z, step, self.sched, &noise.draw(Purpose::Resample, *c, z.shape()))
                        })
                        .collect::<Result<Vec<_>, DiffusionError>>()?;
                    for (c, z) in cells.iter().zip(renoised) {
                        fm.latents[(c.view, c.time)] = z;
                    }
                    emit(SamplerEvent::Resample { step, n });
                }
            }
            if !freezing.is_empty() {
                for &view in &freezing {
                    for time in 0..frames {
                        let cell = Cell { time, view };
                        let known = &fm.known_latents[(view, time)];
                        let clean = estimates
                            .iter()
                            .find(|(c, _)| *c == cell)
                            .map_or(known, |(_, z)| z);
                        fm.latents[(view, time)] = composite(known, clean, &fm.latent_masks[(view, time)]);
                    }
                }
                emit(SamplerEvent::Freeze { step, views: freezing });
            }
        }
        let cells: Vec<(usize, usize)> = (0..frames).flat_map(|s| (0..views).map(move |v| (v, s))).collect();
        let finished: Vec<(LatentFrame, ColorImage)> = cells
            .par_iter()
            .map(|&(v, s)| {
                let z = composite(&fm.known_latents[(v, s)], &fm.latents[(v, s)], &fm.latent_masks[(v, s)]);
                let image = self.codec.decode(&z)?;
                Ok((z, image))
            })
            .collect::<Result<Vec<_>, DiffusionError>>()?;
        let mut images = Vec::with_capacity(finished.len());
        for (&(v, s), (z, image)) in cells.iter().zip(finished) {
            fm.latents[(v, s)] = z;
            images.push(image);
        }
        Ok(Grid::from_vec(views, frames, images).expect("cell count"))
    }
}
