//! Stereo packaging and the posed multi-view dataset export.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Camera;
use crate::image::{ColorImage, DepthMap, Grid};
use crate::io::{self, IoError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("checksum mismatch for {path}")]
    Checksum { path: PathBuf },
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
}

fn check_pair(left: &[ColorImage], right: &[ColorImage]) -> Result<(), ExportError> {
    if left.len() != right.len() {
        return Err(ExportError::Invalid(format!(
            "left has {} frames, right has {}",
            left.len(),
            right.len()
        )));
    }
    for (i, (l, r)) in left.iter().zip(right).enumerate() {
        if l.dims() != r.dims() {
            return Err(ExportError::Invalid(format!(
                "frame {i}: left is {:?}, right is {:?}",
                l.dims(),
                r.dims()
            )));
        }
    }
    Ok(())
}

/// Left and right frames concatenated horizontally.
pub fn compose_side_by_side(left: &[ColorImage], right: &[ColorImage]) -> Result<Vec<ColorImage>, ExportError> {
    check_pair(left, right)?;
    Ok(left
        .iter()
        .zip(right)
        .map(|(l, r)| {
            let w = l.width();
            ColorImage::from_fn(2 * w, l.height(), |x, y| if x < w { l[(x, y)] } else { r[(x - w, y)] })
        })
        .collect())
}

/// Red from the left view, green and blue from the right.
pub fn compose_anaglyph(left: &[ColorImage], right: &[ColorImage]) -> Result<Vec<ColorImage>, ExportError> {
    check_pair(left, right)?;
    Ok(left
        .iter()
        .zip(right)
        .map(|(l, r)| {
            ColorImage::from_fn(l.width(), l.height(), |x, y| {
                let (a, b) = (l[(x, y)], r[(x, y)]);
                [a[0], b[1], b[2]]
            })
        })
        .collect())
}

/// Frames indexed `(view, time)`, held at 8-bit levels so that they survive
/// the PNG export unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialDataset {
    pub frames: Grid<ColorImage>,
    /// Reference-view depth; the first entry is time 0, further entries are
    /// the remaining timestamps when exported.
    pub depths: Vec<DepthMap>,
    pub cameras: Vec<Camera>,
    pub timestamps: Vec<f64>,
}

pub fn normalized_timestamps(frames: usize) -> Vec<f64> {
    match frames {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

impl SpatialDataset {
    pub fn new(frames: Grid<ColorImage>, depths: Vec<DepthMap>, cameras: Vec<Camera>) -> Result<Self, ExportError> {
        let ds = Self {
            timestamps: normalized_timestamps(frames.height()),
            frames: frames.map(io::quantize),
            depths,
            cameras,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), ExportError> {
        let (views, times) = self.frames.dims();
        if views == 0 || times == 0 {
            return Err(ExportError::Invalid("empty frame grid".into()));
        }
        if self.cameras.len() != views {
            return Err(ExportError::Invalid(format!(
                "{} cameras for {views} views",
                self.cameras.len()
            )));
        }
        if self.timestamps.len() != times || self.timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ExportError::Invalid("timestamps must be strictly increasing, one per frame".into()));
        }
        if self.depths.is_empty() || self.depths.len() > times {
            return Err(ExportError::Invalid(format!(
                "{} depth maps for {times} frames",
                self.depths.len()
            )));
        }
        let dims = self.frames[(0, 0)].dims();
        if self.frames.data().iter().any(|f| f.dims() != dims) || self.depths.iter().any(|d| d.dims() != dims) {
            return Err(ExportError::Invalid("frames and depth maps must share one resolution".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CameraFile {
    width: usize,
    height: usize,
    views: Vec<ViewEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ViewEntry {
    index: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    /// World to camera, row-major 3×4.
    extrinsics: [[f64; 4]; 3],
    /// Camera to world rotation and optical center.
    orientation: [[f64; 3]; 3],
    position: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: u32,
    pub views: usize,
    pub frames: usize,
    pub timestamps: Vec<f64>,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn image_count(&self) -> usize {
        self.files.iter().filter(|f| f.path.starts_with("frames/")).count()
    }
}

pub fn frame_path(view: usize, time: usize) -> String {
    format!("frames/v{view:03}/t{time:03}.png")
}

pub fn depth_path(time: usize) -> String {
    format!("depth/t{time:03}_v000.pfm")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExportError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| ExportError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(io::write_text(path, &(text + "\n"))?)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ExportError> {
    serde_json::from_str(&io::read_text(path)?).map_err(|e| ExportError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes images, depth and cameras, then the manifest listing every file
/// with its checksum.
pub fn export_spatial(ds: &SpatialDataset, dir: &Path) -> Result<Manifest, ExportError> {
    ds.validate()?;
    let (views, times) = ds.frames.dims();
    let (width, height) = ds.frames[(0, 0)].dims();
    let cameras = CameraFile {
        width,
        height,
        views: ds
            .cameras
            .iter()
            .enumerate()
            .map(|(index, c)| ViewEntry {
                index,
                fx: c.fx,
                fy: c.fy,
                cx: c.cx,
                cy: c.cy,
                extrinsics: c.extrinsics(),
                orientation: std::array::from_fn(|r| std::array::from_fn(|k| c.orientation[(r, k)])),
                position: [c.position.x, c.position.y, c.position.z],
            })
            .collect(),
    };
    write_json(&dir.join("cameras.json"), &cameras)?;
    let mut rel: Vec<String> = vec!["cameras.json".into()];
    let images: Vec<(usize, usize)> = (0..views).flat_map(|v| (0..times).map(move |t| (v, t))).collect();
    images
        .par_iter()
        .map(|&(v, t)| io::write_png(&dir.join(frame_path(v, t)), &ds.frames[(v, t)]))
        .collect::<Result<Vec<_>, IoError>>()?;
    rel.extend(images.iter().map(|&(v, t)| frame_path(v, t)));
    for (t, d) in ds.depths.iter().enumerate() {
        io::write_pfm(&dir.join(depth_path(t)), d)?;
        rel.push(depth_path(t));
    }
    let files = rel
        .par_iter()
        .map(|p| {
            Ok(ManifestEntry {
                path: p.clone(),
                checksum: io::checksum_file(&dir.join(p))?,
            })
        })
        .collect::<Result<Vec<_>, IoError>>()?;
    let manifest = Manifest {
        schema: SCHEMA_VERSION,
        views,
        frames: times,
        timestamps: ds.timestamps.clone(),
        files,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Re-hashes every listed file; the first mismatch is reported by path.
pub fn verify_spatial(dir: &Path) -> Result<Manifest, ExportError> {
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    if manifest.schema != SCHEMA_VERSION {
        return Err(ExportError::Invalid(format!("unsupported schema {}", manifest.schema)));
    }
    if manifest.image_count() != manifest.views * manifest.frames {
        return Err(ExportError::Invalid(format!(
            "manifest lists {} images for a {}×{} grid",
            manifest.image_count(),
            manifest.frames,
            manifest.views
        )));
    }
    for entry in &manifest.files {
        let path = dir.join(&entry.path);
        if io::checksum_file(&path)? != entry.checksum {
            return Err(ExportError::Checksum { path });
        }
    }
    Ok(manifest)
}

pub fn import_spatial(dir: &Path) -> Result<SpatialDataset, ExportError> {
    let manifest = verify_spatial(dir)?;
    let cams: CameraFile = read_json(&dir.join("cameras.json"))?;
    let cameras = cams
        .views
        .iter()
        .map(|v| {
            Camera::new(
                v.fx,
                v.fy,
                v.cx,
                v.cy,
                Vector3::from(v.position),
                Matrix3::from_fn(|r, k| v.orientation[r][k]),
                cams.width,
                cams.height,
            )
            .map_err(|e| ExportError::Invalid(format!("view {}: {e}", v.index)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let cells: Vec<(usize, usize)> = (0..manifest.frames)
        .flat_map(|t| (0..manifest.views).map(move |v| (v, t)))
        .collect();
    let frames = cells
        .par_iter()
        .map(|&(v, t)| io::read_png(&dir.join(frame_path(v, t))))
        .collect::<Result<Vec<_>, IoError>>()?;
    let depths = (0..manifest.frames)
        .map(|t| depth_path(t))
        .take_while(|p| manifest.files.iter().any(|f| &f.path == p))
        .map(|p| io::read_pfm(&dir.join(p)))
        .collect::<Result<Vec<_>, IoError>>()?;
    let ds = SpatialDataset {
        frames: Grid::from_vec(manifest.views, manifest.frames, frames)
            .map_err(|e| ExportError::Invalid(e.to_string()))?,
        depths,
        cameras,
        timestamps: manifest.timestamps,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_rig, RigMode};

    fn video(n: usize, w: usize, h: usize, c: [f32; 3]) -> Vec<ColorImage> {
        (0..n).map(|_| ColorImage::filled(w, h, c)).collect()
    }

    #[test]
    fn side_by_side_doubles_width() {
        let l = video(16, 576, 320, [0.1, 0.2, 0.3]);
        let r = video(16, 576, 320, [0.9, 0.8, 0.7]);
        let sbs = compose_side_by_side(&l, &r).unwrap();
        assert_eq!(sbs.len(), 16);
        assert_eq!(sbs[0].dims(), (1152, 320));
        assert_eq!(sbs[3][(575, 10)], [0.1, 0.2, 0.3]);
        assert_eq!(sbs[3][(576, 10)], [0.9, 0.8, 0.7]);
        let one = compose_side_by_side(&l[..1], &r[..1]).unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn side_by_side_of_equal_views_is_mirror_symmetric_about_the_seam() {
        let l: Vec<ColorImage> = vec![ColorImage::from_fn(4, 2, |x, y| [x as f32, y as f32, 0.0])];
        let sbs = compose_side_by_side(&l, &l).unwrap();
        for y in 0..2 {
            for x in 0..4 {
                assert_eq!(sbs[0][(x, y)], sbs[0][(x + 4, y)]);
            }
        }
    }

    #[test]
    fn anaglyph_channels() {
        let img = vec![ColorImage::from_fn(3, 3, |x, y| [x as f32 * 0.1, y as f32 * 0.2, 0.5])];
        assert_eq!(compose_anaglyph(&img, &img).unwrap(), img);
        let red = video(1, 2, 2, [1.0, 0.0, 0.0]);
        let black = video(1, 2, 2, [0.0; 3]);
        let white = video(1, 2, 2, [1.0; 3]);
        assert_eq!(compose_anaglyph(&red, &black).unwrap()[0][(1, 1)], [1.0, 0.0, 0.0]);
        assert_eq!(compose_anaglyph(&black, &white).unwrap()[0][(0, 0)], [0.0, 1.0, 1.0]);
        assert!(compose_anaglyph(&red, &video(1, 3, 2, [0.0; 3])).is_err());
        assert!(compose_side_by_side(&red, &video(2, 2, 2, [0.0; 3])).is_err());
    }

    fn dataset(views: usize, times: usize) -> SpatialDataset {
        let cam = Camera::pinhole(50.0, 50.0, 7.5, 3.5, 16, 8).unwrap();
        let rig = build_rig(RigMode::Spatial, views, 0.07, &cam).unwrap();
        let frames = Grid::from_fn(views, times, |v, t| {
            ColorImage::from_fn(16, 8, |x, y| [(x + v) as f32 / 20.0, (y + t) as f32 / 30.0, 0.123_456])
        });
        let depth = DepthMap::from_fn(16, 8, |x, y| 1.0 + (x * y) as f32 / 7.0);
        SpatialDataset::new(frames, vec![depth], rig.cameras).unwrap()
    }

    #[test]
    fn sixteen_by_sixteen_export_lists_every_image() {
        let dir = tempfile::tempdir().unwrap();
        let m = export_spatial(&dataset(16, 16), dir.path()).unwrap();
        assert_eq!(m.image_count(), 256);
        assert_eq!(m.files.len(), 258);
        assert!(dir.path().join("frames/v015/t015.png").exists());
        assert!(dir.path().join("depth/t000_v000.pfm").exists());
        assert_eq!(m.timestamps.first(), Some(&0.0));
        assert_eq!(m.timestamps.last(), Some(&1.0));
    }

    #[test]
    fn export_import_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = dataset(4, 3);
        export_spatial(&ds, dir.path()).unwrap();
        let back = import_spatial(dir.path()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn tampering_is_reported_by_path() {
        let dir = tempfile::tempdir().unwrap();
        export_spatial(&dataset(3, 2), dir.path()).unwrap();
        let victim = dir.path().join("frames/v001/t001.png");
        let mut img = io::read_png(&victim).unwrap();
        img[(0, 0)] = [1.0, 1.0, 1.0];
        io::write_png(&victim, &img).unwrap();
        match verify_spatial(dir.path()) {
            Err(ExportError::Checksum { path }) => assert_eq!(path, victim),
            other => panic!("expected checksum error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_datasets_are_rejected() {
        let mut ds = dataset(3, 2);
        ds.cameras.pop();
        assert!(ds.validate().is_err());
        let mut ds = dataset(3, 2);
        ds.timestamps = vec![0.5, 0.5];
        assert!(ds.validate().is_err());
    }
}
