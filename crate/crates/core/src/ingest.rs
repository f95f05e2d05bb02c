//! Input clip layout.
//!
//! ```text
//! intrinsics.json          fx, fy, cx, cy, width, height
//! frames/t000.png ...      reference video, 8-bit RGB
//! depth/t000.pfm ...       z-depth per frame
//! flow/t000_u.pfm, _v.pfm  forward flow from frame t to t+1 (NaN = invalid)
//! flow_back/t001_u.pfm ... optional backward flow from frame t to t-1
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depthproc::FlowField;
use crate::geometry::{Camera, GeometryError};
use crate::image::{ColorImage, DepthMap, Grid, Mask};
use crate::io::{self, IoError};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing input file {path}")]
    Missing { path: PathBuf },
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn camera(&self) -> Result<Camera, GeometryError> {
        Camera::pinhole(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputClip {
    pub intrinsics: Intrinsics,
    pub frames: Vec<ColorImage>,
    pub depths: Vec<DepthMap>,
    /// `forward[t]` maps frame `t` to `t + 1`.
    pub forward: Vec<FlowField>,
    /// `backward[t]` maps frame `t + 1` to `t`.
    pub backward: Option<Vec<FlowField>>,
}

pub fn frame_path(t: usize) -> String {
    format!("frames/t{t:03}.png")
}

pub fn depth_path(t: usize) -> String {
    format!("depth/t{t:03}.pfm")
}

fn flow_paths(dir: &str, t: usize) -> [String; 2] {
    [format!("{dir}/t{t:03}_u.pfm"), format!("{dir}/t{t:03}_v.pfm")]
}

fn require(root: &Path, rel: &str) -> Result<PathBuf, IngestError> {
    let path = root.join(rel);
    if path.is_file() {
        Ok(path)
    } else {
        Err(IngestError::Missing { path })
    }
}

fn read_flow(root: &Path, dir: &str, t: usize, dims: (usize, usize)) -> Result<FlowField, IngestError> {
    let [pu, pv] = flow_paths(dir, t).map(|rel| require(root, &rel));
    let (pu, pv) = (pu?, pv?);
    let (u, v) = (io::read_pfm(&pu)?, io::read_pfm(&pv)?);
    for (p, m) in [(&pu, &u), (&pv, &v)] {
        if m.dims() != dims {
            return Err(IngestError::Invalid {
                path: p.clone(),
                message: format!("flow is {:?}, frames are {dims:?}", m.dims()),
            });
        }
    }
    let valid = Mask::from_fn(dims.0, dims.1, |x, y| u[(x, y)].is_finite() && v[(x, y)].is_finite());
    let flow = Grid::from_fn(dims.0, dims.1, |x, y| if valid[(x, y)] { [u[(x, y)], v[(x, y)]] } else { [0.0; 2] });
    Ok(FlowField { flow, valid })
}

fn write_flow(root: &Path, dir: &str, t: usize, f: &FlowField) -> Result<(), IoError> {
    let [pu, pv] = flow_paths(dir, t);
    for (rel, c) in [(pu, 0), (pv, 1)] {
        let (w, h) = f.flow.dims();
        let map = DepthMap::from_fn(w, h, |x, y| if f.valid[(x, y)] { f.flow[(x, y)][c] } else { f32::NAN });
        io::write_pfm(&root.join(rel), &map)?;
    }
    Ok(())
}

/// Reads a clip. Frames are counted from `t000` upward; every frame needs a
/// depth map, and forward flow when `need_flow` is set. The first missing
/// file is reported by path.
pub fn read_input(root: &Path, need_flow: bool) -> Result<InputClip, IngestError> {
    let ipath = require(root, "intrinsics.json")?;
    let intrinsics: Intrinsics = serde_json::from_str(&io::read_text(&ipath)?).map_err(|e| IngestError::Invalid {
        path: ipath.clone(),
        message: e.to_string(),
    })?;
    let count = (0..).take_while(|&t| root.join(frame_path(t)).is_file()).count();
    if count == 0 {
        return Err(IngestError::Missing {
            path: root.join(frame_path(0)),
        });
    }
    let dims = (intrinsics.width, intrinsics.height);
    let mut frames = Vec::with_capacity(count);
    let mut depths = Vec::with_capacity(count);
    for t in 0..count {
        let p = root.join(frame_path(t));
        let f = io::read_png(&p)?;
        let d = io::read_pfm(&require(root, &depth_path(t))?)?;
        for (what, got) in [("frame", f.dims()), ("depth", d.dims())] {
            if got != dims {
                return Err(IngestError::Invalid {
                    path: p.clone(),
                    message: format!("{what} is {got:?}, intrinsics say {dims:?}"),
                });
            }
        }
        frames.push(f);
        depths.push(d);
    }
    let mut forward = Vec::new();
    let mut backward = None;
    if need_flow {
        forward = (0..count - 1)
            .map(|t| read_flow(root, "flow", t, dims))
            .collect::<Result<_, _>>()?;
        if root.join("flow_back").is_dir() {
            backward = Some(
                (1..count)
                    .map(|t| read_flow(root, "flow_back", t, dims))
                    .collect::<Result<_, _>>()?,
            );
        }
    }
    Ok(InputClip {
        intrinsics,
        frames,
        depths,
        forward,
        backward,
    })
}

pub fn write_input(clip: &InputClip, root: &Path) -> Result<(), IoError> {
    let json = serde_json::to_string_pretty(&clip.intrinsics).expect("intrinsics serialize");
    io::write_text(&root.join("intrinsics.json"), &(json + "\n"))?;
    for (t, (f, d)) in clip.frames.iter().zip(&clip.depths).enumerate() {
        io::write_png(&root.join(frame_path(t)), f)?;
        io::write_pfm(&root.join(depth_path(t)), d)?;
    }
    for (t, f) in clip.forward.iter().enumerate() {
        write_flow(root, "flow", t, f)?;
    }
    for (t, f) in clip.backward.iter().flatten().enumerate() {
        write_flow(root, "flow_back", t + 1, f)?;
    }
    Ok(())
}
