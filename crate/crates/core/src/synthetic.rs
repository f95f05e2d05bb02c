//! Procedural two-layer scenes with exact depth, flow and per-camera ground
//! truth.
//!
//! The scene lives in the reference camera's frame: a static background
//! plane at `background_depth` and fronto-parallel textured rectangles in
//! front of it. Rectangles are placed and moved in reference-image pixels;
//! textures are attached to the surfaces, so moving layers carry theirs.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{OracleConfig, PipelineConfig};
use crate::depthproc::FlowField;
use crate::geometry::{build_rig, Camera, GeometryError};
use crate::image::{ColorImage, DepthMap, Grid, Mask};
use crate::ingest::{write_input, InputClip, Intrinsics};
use crate::io::{self, IoError};
use crate::pipeline::outpaint_layout;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid scene: {0}")]
    Invalid(String),
}

/// `base + amplitude·sin(·)·cos(·)` per channel, with a phase offset per
/// channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Texture {
    pub base: [f32; 3],
    pub amplitude: f32,
    /// Wavelength in reference pixels.
    pub period: f64,
}

impl Texture {
    pub fn at(&self, u: f64, v: f64) -> [f32; 3] {
        std::array::from_fn(|c| {
            let phase = c as f64 * 2.1;
            let s = (TAU * u / self.period + phase).sin() * (TAU * v / (1.3 * self.period) + 0.7 * phase).cos();
            (self.base[c] + self.amplitude * s as f32).clamp(0.0, 1.0)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub depth: f64,
    /// Top-left corner and size in reference pixels at frame 0. Covers pixel
    /// centers in `[x0, x0 + width) × [y0, y0 + height)`.
    pub x0: f64,
    pub y0: f64,
    pub width: f64,
    pub height: f64,
    /// Reference-pixel motion per frame.
    pub velocity: [f64; 2],
    pub texture: Texture,
}

impl Layer {
    fn offset(&self, t: usize) -> [f64; 2] {
        [self.velocity[0] * t as f64, self.velocity[1] * t as f64]
    }

    fn contains(&self, u: f64, v: f64, t: usize) -> bool {
        let [ox, oy] = self.offset(t);
        let (x0, y0) = (self.x0 + ox, self.y0 + oy);
        u >= x0 && u < x0 + self.width && v >= y0 && v < y0 + self.height
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticScene {
    pub intrinsics: Intrinsics,
    pub frames: usize,
    pub background_depth: f64,
    pub background: Texture,
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Hit {
    /// Index into `layers`, or `layers.len()` for the background.
    surface: usize,
    depth: f64,
    color: [f32; 3],
}

// keeps pixel-center tests stable against rounding in the ray algebra
fn snap(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

impl SyntheticScene {
    /// A textured rectangle drifting downward in front of a background
    /// twice as far away.
    pub fn two_layer(width: usize, height: usize, frames: usize) -> Self {
        let (w, h) = (width as f64, height as f64);
        Self {
            intrinsics: Intrinsics {
                fx: 500.0 * w / 576.0,
                fy: 500.0 * w / 576.0,
                cx: (w - 1.0) / 2.0,
                cy: (h - 1.0) / 2.0,
                width,
                height,
            },
            frames,
            background_depth: 7.0,
            background: Texture {
                base: [0.2, 0.5, 0.7],
                amplitude: 0.15,
                period: 96.0,
            },
            layers: vec![Layer {
                depth: 3.5,
                x0: (w * 0.35).round(),
                y0: (h * 0.25).round(),
                width: (w * 0.25).round(),
                height: (h * 0.3).round(),
                velocity: [0.0, 2.0 * h / 320.0],
                texture: Texture {
                    base: [0.85, 0.3, 0.2],
                    amplitude: 0.1,
                    period: 40.0,
                },
            }],
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.frames == 0 {
            return Err(SynthError::Invalid("no frames".into()));
        }
        self.camera()?;
        let depths = self.layers.iter().map(|l| l.depth).chain([self.background_depth]);
        if depths.clone().any(|d| !(d > 0.0 && d.is_finite())) {
            return Err(SynthError::Invalid("layer depths must be positive".into()));
        }
        if self.layers.iter().any(|l| l.depth >= self.background_depth) {
            return Err(SynthError::Invalid("layers must lie in front of the background".into()));
        }
        if self.layers.iter().any(|l| !(l.texture.period > 0.0)) || !(self.background.period > 0.0) {
            return Err(SynthError::Invalid("texture periods must be positive".into()));
        }
        Ok(())
    }

    pub fn camera(&self) -> Result<Camera, GeometryError> {
        self.intrinsics.camera()
    }

    pub fn depth_range(&self) -> (f64, f64) {
        let near = self.layers.iter().map(|l| l.depth).fold(self.background_depth, f64::min);
        (near, self.background_depth)
    }

    fn surfaces(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.layers.len()).collect();
        order.sort_by(|&a, &b| self.layers[a].depth.total_cmp(&self.layers[b].depth));
        order
    }

    fn hit(&self, order: &[usize], cam: &Camera, x: f64, y: f64, t: usize) -> Hit {
        let i = &self.intrinsics;
        let ray = cam.ray(x, y);
        let local_z = |p: &Vector3<f64>| (cam.orientation.transpose() * (p - cam.position)).z;
        let on_plane = |d: f64| {
            let s = (d - cam.position.z) / ray.z;
            let p = cam.position + ray * s;
            (snap(i.fx * p.x / d + i.cx), snap(i.fy * p.y / d + i.cy), local_z(&p))
        };
        for &k in order {
            let layer = &self.layers[k];
            let (u, v, z) = on_plane(layer.depth);
            if z > 0.0 && layer.contains(u, v, t) {
                let [ox, oy] = layer.offset(t);
                return Hit {
                    surface: k,
                    depth: z,
                    color: layer.texture.at(u - ox, v - oy),
                };
            }
        }
        let (u, v, z) = on_plane(self.background_depth);
        Hit {
            surface: self.layers.len(),
            depth: z,
            color: self.background.at(u, v),
        }
    }

    /// Color and z-depth seen by `cam` at frame `t`, sampled at pixel centers.
    pub fn render(&self, cam: &Camera, t: usize) -> (ColorImage, DepthMap) {
        let order = self.surfaces();
        let hits: Vec<Hit> = (0..cam.width * cam.height)
            .into_par_iter()
            .map(|i| self.hit(&order, cam, (i % cam.width) as f64, (i / cam.width) as f64, t))
            .collect();
        let (w, h) = (cam.width, cam.height);
        (
            ColorImage::from_fn(w, h, |x, y| hits[y * w + x].color),
            DepthMap::from_fn(w, h, |x, y| hits[y * w + x].depth as f32),
        )
    }

    fn surface_map(&self, cam: &Camera, t: usize) -> Grid<usize> {
        let order = self.surfaces();
        Grid::from_fn(cam.width, cam.height, |x, y| self.hit(&order, cam, x as f64, y as f64, t).surface)
    }

    /// Reference-view flow from frame `t` to `t + 1` (`forward`) or `t - 1`.
    /// A pixel is valid when its surface is still visible at the target.
    pub fn flow(&self, t: usize, forward: bool) -> Result<FlowField, GeometryError> {
        let cam = self.camera()?;
        let target = if forward { t + 1 } else { t - 1 };
        let (here, there) = (self.surface_map(&cam, t), self.surface_map(&cam, target));
        let sign = if forward { 1.0 } else { -1.0 };
        let motion = |s: usize| match self.layers.get(s) {
            Some(l) => [sign * l.velocity[0], sign * l.velocity[1]],
            None => [0.0; 2],
        };
        let (w, h) = (cam.width, cam.height);
        let flow = Grid::from_fn(w, h, |x, y| motion(here[(x, y)]).map(|m| m as f32));
        let valid = Mask::from_fn(w, h, |x, y| {
            let s = here[(x, y)];
            let [dx, dy] = motion(s);
            let (tx, ty) = (x as f64 + dx, y as f64 + dy);
            tx >= 0.0
                && ty >= 0.0
                && tx <= (w - 1) as f64
                && ty <= (h - 1) as f64
                && there[(tx.round() as usize, ty.round() as usize)] == s
        });
        Ok(FlowField { flow, valid })
    }

    /// Reference video, exact depth and exact forward/backward flow.
    pub fn input_clip(&self) -> Result<InputClip, SynthError> {
        self.validate()?;
        let cam = self.camera()?;
        let (frames, depths): (Vec<_>, Vec<_>) = (0..self.frames).map(|t| self.render(&cam, t)).unzip();
        let forward = (0..self.frames - 1)
            .map(|t| self.flow(t, true))
            .collect::<Result<_, _>>()?;
        let backward = (1..self.frames)
            .map(|t| self.flow(t, false))
            .collect::<Result<_, _>>()?;
        Ok(InputClip {
            intrinsics: self.intrinsics,
            frames: frames.iter().map(io::quantize).collect(),
            depths,
            forward,
            backward: Some(backward),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub input: PathBuf,
    pub ground_truth: PathBuf,
    /// A run configuration matching the scene: metric depth over the scene's
    /// range and the exact oracle pointed at the ground truth.
    pub config: PathBuf,
}

pub fn gt_view_path(view: usize, time: usize) -> String {
    format!("v{view:03}/t{time:03}.png")
}

pub fn gt_padded_path(time: usize) -> String {
    format!("padded/t{time:03}.png")
}

/// Writes `input/`, `gt/` and `config.toml` under `dir`. Ground truth covers
/// every camera of the rig `base` describes, plus the widened reference
/// canvas when outpainting is enabled.
pub fn make_synthetic(scene: &SyntheticScene, base: &PipelineConfig, dir: &Path) -> Result<SynthOutput, SynthError> {
    let clip = scene.input_clip()?;
    let input = dir.join("input");
    let gt = dir.join("gt");
    write_input(&clip, &input)?;

    let mut cfg = base.clone();
    let (near, far) = scene.depth_range();
    cfg.depth.normalize = false;
    cfg.depth.near = near;
    cfg.depth.far = far;
    let gt_abs = std::path::absolute(&gt).map_err(|e| IoError::io(&gt, e))?;
    cfg.oracle = OracleConfig::Exact { ground_truth: gt_abs };
    cfg.validate().map_err(|e| SynthError::Invalid(e.to_string()))?;

    let template = scene.camera()?;
    let rig = build_rig(cfg.mode, cfg.views(), cfg.extent(), &template)?;
    let cells: Vec<(usize, usize)> = (0..rig.len())
        .flat_map(|v| (0..scene.frames).map(move |t| (v, t)))
        .collect();
    cells
        .iter()
        .map(|&(v, t)| io::write_png(&gt.join(gt_view_path(v, t)), &scene.render(&rig.cameras[v], t).0))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(layout) = outpaint_layout(&cfg, &scene.intrinsics, &clip.depths) {
        let wide = template.widened(layout.pad, layout.extra);
        for t in 0..scene.frames {
            io::write_png(&gt.join(gt_padded_path(t)), &scene.render(&wide, t).0)?;
        }
    }
    let config = dir.join("config.toml");
    io::write_text(&config, &cfg.to_toml())?;
    Ok(SynthOutput {
        input,
        ground_truth: gt,
        config,
    })
}
