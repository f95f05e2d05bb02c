//! End-to-end run: depth processing, optional outpainting, warping,
//! frame-matrix denoising, Poisson blending and export.

use std::error::Error as StdError;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blend_export::{compose_anaglyph, compose_side_by_side, export_spatial, verify_spatial, SpatialDataset};
use crate::bridge::BridgeOracle;
use crate::config::{BandDepth, OracleConfig, PipelineConfig};
use crate::depthproc::{normalize_depth, temporal_smooth, DepthClip};
use crate::diffusion::{
    DenoiserOracle, ExactOracle, LatentCodec, LatentFrame, NoiseSchedule, NoiseSource, SamplingPlan,
    SmoothingOracle, ZeroOracle,
};
use crate::geometry::{build_rig, outpaint_padding, warp_frame, Camera, RigMode, WarpResult};
use crate::image::{psnr, ColorImage, DepthMap, Grid, Mask, RgbdFrame};
use crate::ingest::{read_input, Intrinsics};
use crate::io;
use crate::matrix::{
    build_frame_matrix, denoise_frame_matrix, denoise_single_video, extract_stereo, poisson_blend, PoissonReport, Sampler, SamplerEvent,
};
use crate::synthetic::{gt_padded_path, gt_view_path};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Depth,
    Outpaint,
    Warp,
    Matrix,
    Poisson,
    Export,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Ingest => "ingest",
            Stage::Depth => "depth",
            Stage::Outpaint => "outpaint",
            Stage::Warp => "warp",
            Stage::Matrix => "matrix",
            Stage::Poisson => "poisson",
            Stage::Export => "export",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
#[error("{stage} stage{}: {source}", cell_suffix(*.cell))]
pub struct PipelineError {
    pub stage: Stage,
    /// `(time, view)` of the failing cell, when there is one.
    pub cell: Option<(usize, Option<usize>)>,
    #[source]
    pub source: Box<dyn StdError + Send + Sync>,
}

fn cell_suffix(cell: Option<(usize, Option<usize>)>) -> String {
    match cell {
        None => String::new(),
        Some((t, None)) => format!(" (time {t})"),
        Some((t, Some(v))) => format!(" (time {t}, view {v})"),
    }
}

fn fail<E: Into<Box<dyn StdError + Send + Sync>>>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError {
        stage,
        cell: None,
        source: e.into(),
    }
}

fn fail_at<E: Into<Box<dyn StdError + Send + Sync>>>(
    stage: Stage,
    time: usize,
    view: Option<usize>,
) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError {
        stage,
        cell: Some((time, view)),
        source: e.into(),
    }
}

/// Outpainting canvas: `pad` columns on each side, plus `extra` on the right
/// so the width divides by the codec factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutpaintLayout {
    pub pad: usize,
    pub extra: usize,
}

impl OutpaintLayout {
    pub fn new(width: usize, pad: usize, factor: usize) -> Self {
        let factor = factor.max(1);
        Self {
            pad,
            extra: (factor - (width + 2 * pad) % factor) % factor,
        }
    }

    pub fn canvas_width(&self, width: usize) -> usize {
        width + 2 * self.pad + self.extra
    }
}

/// Band width `fx·extent/d_min` for the configured rig, or `None` when
/// outpainting is off or the band would be empty. `d_min` is the normalized
/// near bound, or the smallest raw depth when depth is metric.
pub fn outpaint_layout(cfg: &PipelineConfig, intr: &Intrinsics, raw_depths: &[DepthMap]) -> Option<OutpaintLayout> {
    if !cfg.outpaint.enabled {
        return None;
    }
    let d_min = if cfg.depth.normalize {
        cfg.depth.near
    } else {
        raw_depths
            .iter()
            .flat_map(|d| d.data().iter())
            .filter(|d| d.is_finite() && **d > 0.0)
            .fold(f64::INFINITY, |m, &d| m.min(f64::from(d)))
    };
    let pad = outpaint_padding(intr.fx, cfg.extent(), d_min).ok()?;
    (pad > 0).then(|| OutpaintLayout::new(intr.width, pad, cfg.codec.factor))
}

/// Places each frame at column `pad` of a wider canvas. The band is unknown;
/// its depth is copied from the nearest frame column or set to a constant.
pub fn embed_frames(
    frames: &[ColorImage],
    depths: &[DepthMap],
    layout: OutpaintLayout,
    band: BandDepth,
    constant_depth: f64,
) -> Vec<RgbdFrame> {
    frames
        .iter()
        .zip(depths)
        .map(|(f, d)| {
            let (w, h) = f.dims();
            let cw = layout.canvas_width(w);
            let src_x = |x: usize| x.saturating_sub(layout.pad).min(w - 1);
            let inside = |x: usize| x >= layout.pad && x < layout.pad + w;
            let color = ColorImage::from_fn(cw, h, |x, y| if inside(x) { f[(src_x(x), y)] } else { [0.0; 3] });
            let depth = DepthMap::from_fn(cw, h, |x, y| match (inside(x), band) {
                (false, BandDepth::Constant) => constant_depth as f32,
                _ => d[(src_x(x), y)],
            });
            let mask = Mask::from_fn(cw, h, |x, _| inside(x));
            RgbdFrame::new(color, depth, mask).expect("embedded frame is consistent")
        })
        .collect()
}

/// Counters collected from sampler events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SamplerStats {
    pub passes: usize,
    pub oracle_calls: usize,
    pub resamples: usize,
    pub reinjected_cells: usize,
    pub freezes: usize,
}

impl SamplerStats {
    fn record(&mut self, ev: &SamplerEvent<'_>) {
        match ev {
            SamplerEvent::Pass { oracle_calls, .. } => {
                self.passes += 1;
                self.oracle_calls += oracle_calls;
            }
            SamplerEvent::Resample { .. } => self.resamples += 1,
            SamplerEvent::Reinject { cells, .. } => self.reinjected_cells += cells,
            SamplerEvent::Freeze { .. } => self.freezes += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoissonSummary {
    pub frames: usize,
    pub max_iterations: usize,
    pub max_residual: f64,
    pub all_converged: bool,
    pub fallback_pixels: usize,
}

impl PoissonSummary {
    fn from_reports<'a>(reports: impl IntoIterator<Item = &'a PoissonReport>) -> Self {
        let mut s = Self {
            all_converged: true,
            ..Default::default()
        };
        for r in reports {
            s.frames += 1;
            s.max_iterations = s.max_iterations.max(r.iterations);
            s.max_residual = s.max_residual.max(r.residual);
            s.all_converged &= r.converged;
            s.fallback_pixels += r.fallback_pixels;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl InvariantCheck {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// PSNR of one output column against ground truth, split by warp mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quality {
    pub view: usize,
    pub psnr_all: Option<f64>,
    pub psnr_known: Option<f64>,
    pub psnr_disoccluded: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub config_hash: String,
    pub mode: RigMode,
    pub views: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub outpaint: Option<OutpaintLayout>,
    /// Wall-clock milliseconds per stage, in execution order.
    pub timings_ms: Vec<(Stage, f64)>,
    pub sampler: SamplerStats,
    pub outpaint_sampler: Option<SamplerStats>,
    pub poisson: PoissonSummary,
    pub outpaint_poisson: Option<PoissonSummary>,
    pub invariants: Vec<InvariantCheck>,
    pub quality: Option<Quality>,
}

impl RunReport {
    pub fn all_passed(&self) -> bool {
        self.invariants.iter().all(|c| c.passed)
    }
}

fn read_ground_truth(
    root: &Path,
    rel: impl Fn(usize, usize) -> String + Sync,
    views: usize,
    frames: usize,
) -> Result<Grid<ColorImage>, io::IoError> {
    let cells: Vec<(usize, usize)> = (0..frames).flat_map(|t| (0..views).map(move |v| (v, t))).collect();
    let images = cells
        .par_iter()
        .map(|&(v, t)| io::read_png(&root.join(rel(v, t))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Grid::from_vec(views, frames, images).expect("cell count"))
}

fn encode_grid(codec: &dyn LatentCodec, images: &Grid<ColorImage>) -> Result<Grid<LatentFrame>, PipelineError> {
    let (w, h) = images.dims();
    let cells: Vec<(usize, usize)> = (0..h).flat_map(|t| (0..w).map(move |v| (v, t))).collect();
    let latents = cells
        .par_iter()
        .map(|&(v, t)| codec.encode(&images[(v, t)]).map_err(fail_at(Stage::Matrix, t, Some(v))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Grid::from_vec(w, h, latents).expect("cell count"))
}

/// Builds the denoiser for one stage. `targets` supplies the ground-truth
/// grid for the exact oracle.
fn make_oracle(
    cfg: &PipelineConfig,
    sched: &NoiseSchedule,
    codec: &dyn LatentCodec,
    stage: Stage,
    targets: impl FnOnce(&Path) -> Result<Grid<ColorImage>, io::IoError>,
) -> Result<Arc<dyn DenoiserOracle>, PipelineError> {
    Ok(match &cfg.oracle {
        OracleConfig::Exact { ground_truth } => {
            let images = targets(ground_truth).map_err(fail(stage))?;
            let latents = encode_grid(codec, &images).map_err(|e| PipelineError { stage, ..e })?;
            Arc::new(ExactOracle::new(sched.clone(), latents))
        }
        OracleConfig::Smoothing => Arc::new(SmoothingOracle::new(sched.clone())),
        OracleConfig::Zero => Arc::new(ZeroOracle),
        OracleConfig::Bridge { address, .. } => Arc::new(
            BridgeOracle::connect(address, cfg.bridge_timeout().expect("bridge timeout")).map_err(fail(stage))?,
        ),
    })
}

/// Padded reference frames with the band filled by single-video denoising
/// inpainting and Poisson-blended against the known frame.
pub struct OutpaintResult {
    pub frames: Vec<RgbdFrame>,
    pub camera: Camera,
    pub stats: SamplerStats,
    pub poisson: PoissonSummary,
}

/// Widens the clip by `layout` and fills the band. A zero-width layout
/// returns the frames unchanged without running the sampler.
#[allow(clippy::too_many_arguments)]
pub fn outpaint_then_inpaint(
    frames: &[ColorImage],
    depths: &[DepthMap],
    camera: &Camera,
    layout: OutpaintLayout,
    cfg: &PipelineConfig,
    oracle: &dyn DenoiserOracle,
    codec: &dyn LatentCodec,
    sched: &NoiseSchedule,
) -> Result<OutpaintResult, PipelineError> {
    let embedded = embed_frames(frames, depths, layout, cfg.outpaint.band_depth, cfg.outpaint.constant_depth);
    let wide = camera.widened(layout.pad, layout.extra);
    if layout.pad == 0 && layout.extra == 0 {
        return Ok(OutpaintResult {
            frames: embedded,
            camera: wide,
            stats: SamplerStats::default(),
            poisson: PoissonSummary::default(),
        });
    }
    let warps = Grid::from_vec(1, embedded.len(), embedded.iter().cloned().map(WarpResult::from_frame).collect())
        .expect("one column");
    let noise = NoiseSource::new(cfg.seed).substream(1);
    let mut fm = build_frame_matrix(&warps, codec, cfg.condition, None, noise, sched.steps())
        .map_err(fail(Stage::Outpaint))?;
    let plan = SamplingPlan {
        refinement_views: None,
        ..cfg.sampling_plan()
    };
    let sampler = Sampler {
        plan: &plan,
        oracle,
        codec,
        sched,
        noise,
        reinject: cfg.reinject_mode(),
    };
    let mut stats = SamplerStats::default();
    let mut hook = |ev: &SamplerEvent<'_>| stats.record(ev);
    let decoded = denoise_single_video(&mut fm, &sampler, Some(&mut hook)).map_err(fail(Stage::Outpaint))?;
    let blended = (0..embedded.len())
        .into_par_iter()
        .map(|t| {
            let e = &embedded[t];
            let (color, report) =
                poisson_blend(&decoded[(0, t)], &e.color, &e.mask, &cfg.poisson).map_err(fail_at(Stage::Outpaint, t, None))?;
            let frame = RgbdFrame::dense(color, e.depth.clone()).map_err(fail_at(Stage::Outpaint, t, None))?;
            Ok((frame, report))
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let poisson = PoissonSummary::from_reports(blended.iter().map(|(_, r)| r));
    Ok(OutpaintResult {
        frames: blended.into_iter().map(|(f, _)| f).collect(),
        camera: wide,
        stats,
        poisson,
    })
}

fn process_depth(cfg: &PipelineConfig, clip: &crate::ingest::InputClip) -> Result<DepthClip, PipelineError> {
    let (near, far) = (cfg.depth.near, cfg.depth.far);
    let depth = if cfg.depth.normalize {
        normalize_depth(&clip.depths, near, far).map_err(fail(Stage::Depth))?
    } else {
        for (t, d) in clip.depths.iter().enumerate() {
            if let Some(bad) = d.data().iter().find(|&&v| !(f64::from(v) >= near && f64::from(v) <= far)) {
                return Err(fail_at(Stage::Depth, t, None)(format!(
                    "depth {bad} lies outside the configured range [{near}, {far}]"
                )));
            }
        }
        DepthClip {
            depths: clip.depths.clone(),
            range: (near, far),
        }
    };
    if !cfg.depth.smoothing || clip.frames.len() < 2 {
        return Ok(depth);
    }
    temporal_smooth(&depth, &clip.forward, clip.backward.as_deref(), &cfg.smoothing()).map_err(fail(Stage::Depth))
}

fn timed<T>(timings: &mut Vec<(Stage, f64)>, stage: Stage, f: impl FnOnce() -> Result<T, PipelineError>) -> Result<T, PipelineError> {
    let start = Instant::now();
    let out = f()?;
    timings.push((stage, start.elapsed().as_secs_f64() * 1e3));
    Ok(out)
}

fn mask_image(mask: &Mask) -> ColorImage {
    mask.map(|&m| if m { [1.0; 3] } else { [0.0; 3] })
}

pub fn view_frame_path(view: usize, time: usize) -> String {
    format!("v{view:03}/t{time:03}.png")
}

/// Runs the whole pipeline on `input` and writes every artifact to `output`.
/// Everything except `report.json` is a deterministic function of the
/// configuration and input.
pub fn run_pipeline(cfg: &PipelineConfig, input: &Path, output: &Path) -> Result<RunReport, PipelineError> {
    cfg.validate().map_err(fail(Stage::Ingest))?;
    let mut timings = Vec::new();
    let clip = timed(&mut timings, Stage::Ingest, || {
        read_input(input, cfg.depth.smoothing).map_err(fail(Stage::Ingest))
    })?;
    let frames = clip.frames.len();
    let intr = clip.intrinsics;
    let template = intr.camera().map_err(fail(Stage::Ingest))?;
    let depth = timed(&mut timings, Stage::Depth, || process_depth(cfg, &clip))?;

    let sched = cfg.noise_schedule().map_err(fail(Stage::Matrix))?;
    let codec = cfg.codec().map_err(fail(Stage::Matrix))?;
    let rig = build_rig(cfg.mode, cfg.views(), cfg.extent(), &template).map_err(fail(Stage::Warp))?;
    let views = rig.len();

    let layout = outpaint_layout(cfg, &intr, &clip.depths);
    let mut outpaint_stats = None;
    let mut outpaint_poisson = None;
    let (sources, src_cam) = match layout {
        Some(layout) => {
            let result = timed(&mut timings, Stage::Outpaint, || {
                let oracle = make_oracle(cfg, &sched, &codec, Stage::Outpaint, |gt| {
                    read_ground_truth(gt, |_, t| gt_padded_path(t), 1, frames)
                })?;
                outpaint_then_inpaint(&clip.frames, &depth.depths, &template, layout, cfg, &*oracle, &codec, &sched)
            })?;
            outpaint_stats = Some(result.stats);
            outpaint_poisson = Some(result.poisson);
            (result.frames, result.camera)
        }
        None => {
            let frames = clip
                .frames
                .iter()
                .zip(&depth.depths)
                .enumerate()
                .map(|(t, (f, d))| RgbdFrame::dense(f.clone(), d.clone()).map_err(fail_at(Stage::Depth, t, None)))
                .collect::<Result<Vec<_>, _>>()?;
            (frames, template.clone())
        }
    };

    let warp_cfg = cfg.warp_config(depth.range.0, depth.range.1).map_err(fail(Stage::Warp))?;
    let warps = timed(&mut timings, Stage::Warp, || {
        let cells: Vec<(usize, usize)> = (0..frames).flat_map(|t| (0..views).map(move |v| (v, t))).collect();
        let results = cells
            .par_iter()
            .map(|&(v, t)| {
                let cam = &rig.cameras[v];
                if cam.same_view(&template) {
                    let frame = RgbdFrame::dense(clip.frames[t].clone(), depth.depths[t].clone())
                        .map_err(fail_at(Stage::Warp, t, Some(v)))?;
                    return Ok(WarpResult::from_frame(frame));
                }
                warp_frame(&sources[t], &src_cam, cam, &warp_cfg).map_err(fail_at(Stage::Warp, t, Some(v)))
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        Ok(Grid::from_vec(views, frames, results).expect("cell count"))
    })?;

    let mut stats = SamplerStats::default();
    let (fm, decoded) = timed(&mut timings, Stage::Matrix, || {
        let oracle = make_oracle(cfg, &sched, &codec, Stage::Matrix, |gt| {
            read_ground_truth(gt, gt_view_path, views, frames)
        })?;
        let noise = NoiseSource::new(cfg.seed);
        let mut fm = build_frame_matrix(&warps, &codec, cfg.condition, Some(rig.clone()), noise, sched.steps())
            .map_err(fail(Stage::Matrix))?;
        let plan = cfg.sampling_plan();
        let sampler = Sampler {
            plan: &plan,
            oracle: &*oracle,
            codec: &codec,
            sched: &sched,
            noise,
            reinject: cfg.reinject_mode(),
        };
        let mut hook = |ev: &SamplerEvent<'_>| stats.record(ev);
        let decoded = denoise_frame_matrix(&mut fm, &sampler, Some(&mut hook)).map_err(fail(Stage::Matrix))?;
        Ok((fm, decoded))
    })?;

    let (finals, reports) = timed(&mut timings, Stage::Poisson, || {
        let cells: Vec<(usize, usize)> = (0..frames).flat_map(|t| (0..views).map(move |v| (v, t))).collect();
        let blended = cells
            .par_iter()
            .map(|&(v, t)| {
                poisson_blend(&decoded[(v, t)], &fm.image_known[(v, t)], &fm.image_masks[(v, t)], &cfg.poisson)
                    .map_err(fail_at(Stage::Poisson, t, Some(v)))
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        let (images, reports): (Vec<_>, Vec<_>) = blended.into_iter().unzip();
        Ok((Grid::from_vec(views, frames, images).expect("cell count"), reports))
    })?;

    let mut invariants = matrix_invariants(cfg, &fm, &finals);
    let quality = match &cfg.oracle {
        OracleConfig::Exact { ground_truth } => {
            let v = views - 1;
            let gt = read_ground_truth(ground_truth, gt_view_path, views, frames).map_err(fail(Stage::Export))?;
            Some(column_quality(&finals, &fm.image_masks, &gt, v))
        }
        _ => None,
    };

    timed(&mut timings, Stage::Export, || {
        export(cfg, output, &finals, &warps, &sources, layout.is_some(), &depth, &rig.cameras, &mut invariants)
    })?;

    let report = RunReport {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        mode: cfg.mode,
        views,
        frames,
        width: intr.width,
        height: intr.height,
        outpaint: layout,
        timings_ms: timings,
        sampler: stats,
        outpaint_sampler: outpaint_stats,
        poisson: PoissonSummary::from_reports(&reports),
        outpaint_poisson,
        invariants,
        quality,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    io::write_text(&output.join("report.json"), &(json + "\n")).map_err(fail(Stage::Export))?;
    Ok(report)
}

fn column_quality(finals: &Grid<ColorImage>, masks: &Grid<Mask>, gt: &Grid<ColorImage>, view: usize) -> Quality {
    let concat = |g: &Grid<ColorImage>| {
        let frames: Vec<&ColorImage> = (0..g.height()).map(|t| &g[(view, t)]).collect();
        let (w, h) = frames[0].dims();
        ColorImage::from_fn(w, h * frames.len(), |x, y| frames[y / h][(x, y % h)])
    };
    let m: Vec<&Mask> = (0..masks.height()).map(|t| &masks[(view, t)]).collect();
    let (w, h) = m[0].dims();
    let known = Mask::from_fn(w, h * m.len(), |x, y| m[y / h][(x, y % h)]);
    let unknown = known.map(|k| !k);
    let (out, truth) = (concat(finals), concat(gt));
    let q = |a: &ColorImage| io::quantize(a);
    let (out, truth) = (q(&out), q(&truth));
    Quality {
        view,
        psnr_all: psnr(&out, &truth, None),
        psnr_known: psnr(&out, &truth, Some(&known)),
        psnr_disoccluded: psnr(&out, &truth, Some(&unknown)),
    }
}

fn matrix_invariants(cfg: &PipelineConfig, fm: &crate::matrix::FrameMatrix, finals: &Grid<ColorImage>) -> Vec<InvariantCheck> {
    let mut checks = Vec::new();
    let (views, frames) = finals.dims();
    let mut changed = 0usize;
    for t in 0..frames {
        for v in 0..views {
            let (out, known, mask) = (&finals[(v, t)], &fm.image_known[(v, t)], &fm.image_masks[(v, t)]);
            changed += out
                .data()
                .iter()
                .zip(known.data())
                .zip(mask.data())
                .filter(|((o, k), m)| **m && o != k)
                .count();
        }
    }
    checks.push(InvariantCheck::new(
        "known_pixels_preserved",
        changed == 0,
        format!("{changed} known pixels differ from the warped input"),
    ));
    if cfg.mode == RigMode::Stereo {
        let unknown: usize = (0..frames)
            .map(|t| fm.image_masks[(0, t)].data().iter().filter(|m| !**m).count())
            .sum();
        checks.push(InvariantCheck::new(
            "reference_column_known",
            unknown == 0,
            format!("{unknown} unknown pixels in the reference column"),
        ));
    }
    let finite = fm.latents.data().iter().all(LatentFrame::is_finite)
        && finals.data().iter().all(|f| f.data().iter().all(|p| p.iter().all(|c| c.is_finite())));
    checks.push(InvariantCheck::new("finite_outputs", finite, "latents and frames are finite"));
    checks
}

#[allow(clippy::too_many_arguments)]
fn export(
    cfg: &PipelineConfig,
    out: &Path,
    finals: &Grid<ColorImage>,
    warps: &Grid<WarpResult>,
    sources: &[RgbdFrame],
    outpainted: bool,
    depth: &DepthClip,
    cameras: &[Camera],
    invariants: &mut Vec<InvariantCheck>,
) -> Result<(), PipelineError> {
    let (views, frames) = finals.dims();
    let mut jobs: Vec<(PathBuf, ColorImage)> = Vec::new();
    for t in 0..frames {
        for v in 0..views {
            let rel = view_frame_path(v, t);
            jobs.push((out.join("frames").join(&rel), finals[(v, t)].clone()));
            jobs.push((out.join("warped").join(&rel), warps[(v, t)].frame.color.clone()));
            jobs.push((out.join("masks").join(&rel), mask_image(&warps[(v, t)].disocclusion)));
        }
        if outpainted {
            jobs.push((out.join(format!("outpaint/t{t:03}.png")), sources[t].color.clone()));
        }
    }
    match cfg.mode {
        RigMode::Stereo => {
            let (left, right) = extract_stereo(finals).map_err(fail(Stage::Export))?;
            let sbs = compose_side_by_side(&left, &right).map_err(fail(Stage::Export))?;
            let ana = compose_anaglyph(&left, &right).map_err(fail(Stage::Export))?;
            for (name, seq) in [("left", left), ("right", right), ("sbs", sbs), ("anaglyph", ana)] {
                for (t, img) in seq.into_iter().enumerate() {
                    jobs.push((out.join(format!("{name}/t{t:03}.png")), img));
                }
            }
        }
        RigMode::Spatial => {
            let ds = SpatialDataset::new(finals.clone(), vec![depth.depths[0].clone()], cameras.to_vec())
                .map_err(fail(Stage::Export))?;
            let dir = out.join("spatial");
            let manifest = export_spatial(&ds, &dir).map_err(fail(Stage::Export))?;
            let verified = verify_spatial(&dir).is_ok();
            invariants.push(InvariantCheck::new(
                "spatial_manifest",
                verified && manifest.image_count() == views * frames,
                format!("{} images listed", manifest.image_count()),
            ));
        }
    }
    jobs.par_iter()
        .map(|(p, img)| io::write_png(p, img))
        .collect::<Result<Vec<_>, _>>()
        .map_err(fail(Stage::Export))?;
    io::write_text(&out.join("config.toml"), &cfg.to_toml()).map_err(fail(Stage::Export))?;
    Ok(())
}

fn count_frames(dir: &Path, view: usize) -> usize {
    (0..).take_while(|&t| dir.join(view_frame_path(view, t)).is_file()).count()
}

/// Re-checks an output directory: configuration and report parse, the frame
/// grid is complete, known pixels match the warped frames, stereo packaging
/// agrees with the frame grid and the spatial manifest verifies.
pub fn verify_output(dir: &Path) -> Result<Vec<InvariantCheck>, PipelineError> {
    let cfg = PipelineConfig::load(&dir.join("config.toml")).map_err(fail(Stage::Export))?;
    let report: RunReport = serde_json::from_str(&io::read_text(&dir.join("report.json")).map_err(fail(Stage::Export))?)
        .map_err(fail(Stage::Export))?;
    let mut checks = Vec::new();
    checks.push(InvariantCheck::new(
        "config_hash",
        report.config_hash == cfg.hash(),
        format!("report {} vs config {}", report.config_hash, cfg.hash()),
    ));
    let frames_dir = dir.join("frames");
    let (views, frames) = (report.views, report.frames);
    let complete = (0..views).all(|v| count_frames(&frames_dir, v) == frames);
    checks.push(InvariantCheck::new(
        "frame_grid_complete",
        complete,
        format!("{views} views × {frames} frames"),
    ));
    if !complete {
        return Ok(checks);
    }
    let read = |sub: &str, v: usize, t: usize| io::read_png(&dir.join(sub).join(view_frame_path(v, t)));
    let cells: Vec<(usize, usize)> = (0..frames).flat_map(|t| (0..views).map(move |v| (v, t))).collect();
    let mismatched = cells
        .par_iter()
        .map(|&(v, t)| {
            let (out, warped, mask) = (read("frames", v, t)?, read("warped", v, t)?, read("masks", v, t)?);
            Ok(out
                .data()
                .iter()
                .zip(warped.data())
                .zip(mask.data())
                .filter(|((o, w), m)| m[0] > 0.5 && o != w)
                .count())
        })
        .collect::<Result<Vec<usize>, io::IoError>>()
        .map_err(fail(Stage::Export))?
        .into_iter()
        .sum::<usize>();
    checks.push(InvariantCheck::new(
        "known_pixels_preserved",
        mismatched == 0,
        format!("{mismatched} known pixels differ from the warped frames"),
    ));
    match cfg.mode {
        RigMode::Stereo => {
            let mut bad = Vec::new();
            for t in 0..frames {
                let load = |p: String| io::read_png(&dir.join(p));
                let (l, r) = (read("frames", 0, t), read("frames", views - 1, t));
                let (pl, pr) = (load(format!("left/t{t:03}.png")), load(format!("right/t{t:03}.png")));
                let (sbs, ana) = (load(format!("sbs/t{t:03}.png")), load(format!("anaglyph/t{t:03}.png")));
                match (l, r, pl, pr, sbs, ana) {
                    (Ok(l), Ok(r), Ok(pl), Ok(pr), Ok(sbs), Ok(ana)) => {
                        let pair = (std::slice::from_ref(&l), std::slice::from_ref(&r));
                        let ok = pl == l
                            && pr == r
                            && compose_side_by_side(pair.0, pair.1).map(|v| v[0] == sbs).unwrap_or(false)
                            && compose_anaglyph(pair.0, pair.1).map(|v| v[0] == ana).unwrap_or(false);
                        if !ok {
                            bad.push(t);
                        }
                    }
                    _ => bad.push(t),
                }
            }
            checks.push(InvariantCheck::new(
                "stereo_packaging",
                bad.is_empty(),
                if bad.is_empty() {
                    "left, right, side-by-side and anaglyph agree with the frame grid".to_string()
                } else {
                    format!("mismatch at frames {bad:?}")
                },
            ));
        }
        RigMode::Spatial => {
            let verdict = verify_spatial(&dir.join("spatial"));
            checks.push(InvariantCheck::new(
                "spatial_manifest",
                verdict.is_ok(),
                match verdict {
                    Ok(m) => format!("{} files verified", m.files.len()),
                    Err(e) => e.to_string(),
                },
            ));
        }
    }
    Ok(checks)
}
