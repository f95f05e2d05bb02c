use crate::image::{ColorImage, DepthMap, Grid, Mask, RgbdFrame};

use super::{Camera, GeometryError, RepairConfig};

/// Continuous destination coordinates for every source pixel. Invalid source
/// pixels, and points behind the destination camera, carry `NaN`.
#[derive(Debug, Clone)]
pub struct WarpCoords {
    pub coords: Grid<[f64; 2]>,
    pub depth: Grid<f64>,
}

impl WarpCoords {
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.depth[(x, y)].is_finite()
    }
}

pub fn warp_coordinates(
    src: &RgbdFrame,
    src_cam: &Camera,
    dst_cam: &Camera,
) -> Result<WarpCoords, GeometryError> {
    src_cam.validate()?;
    dst_cam.validate()?;
    if src.color.dims() != (src_cam.width, src_cam.height) {
        return Err(GeometryError::ResolutionMismatch {
            frame: src.color.dims(),
            camera: (src_cam.width, src_cam.height),
        });
    }
    let (w, h) = src.color.dims();
    let mut coords = Grid::filled(w, h, [f64::NAN; 2]);
    let mut depth = Grid::filled(w, h, f64::NAN);
    for y in 0..h {
        for x in 0..w {
            if !src.mask[(x, y)] {
                continue;
            }
            let d = f64::from(src.depth[(x, y)]);
            let world = src_cam.unproject(x as f64, y as f64, d);
            if let Some((u, v, z)) = dst_cam.project(&world) {
                coords[(x, y)] = [u, v];
                depth[(x, y)] = z;
            }
        }
    }
    Ok(WarpCoords { coords, depth })
}

/// Stratification of the view frustum into `k` planes, uniform in disparity
/// (inverse depth) between `near` and `far`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneStrata {
    pub k: usize,
    pub near: f64,
    pub far: f64,
}

impl PlaneStrata {
    pub fn new(k: usize, near: f64, far: f64) -> Result<Self, GeometryError> {
        let s = Self { k, near, far };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.k == 0 {
            return Err(GeometryError::InvalidPlaneCount);
        }
        if !(self.near > 0.0 && self.far > self.near && self.far.is_finite()) {
            return Err(GeometryError::InvalidDepthBounds {
                near: self.near,
                far: self.far,
            });
        }
        Ok(())
    }

    /// `k + 1` disparity boundaries, strictly decreasing from `1/near`.
    pub fn bounds(&self) -> Vec<f64> {
        let (hi, lo) = (1.0 / self.near, 1.0 / self.far);
        (0..=self.k)
            .map(|i| hi + (lo - hi) * i as f64 / self.k as f64)
            .collect()
    }

    /// Plane index (0 = nearest) for a destination depth; depths outside the
    /// bounds land on the end planes.
    pub fn plane_of(&self, depth: f64) -> usize {
        let (hi, lo) = (1.0 / self.near, 1.0 / self.far);
        let f = (hi - 1.0 / depth) / (hi - lo) * self.k as f64;
        if f.is_nan() || f <= 0.0 {
            0
        } else {
            (f.floor() as usize).min(self.k - 1)
        }
    }
}

/// One stratum of a multi-plane image. Color and depth are zero where the
/// mask is unset.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneLayer {
    pub color: ColorImage,
    pub depth: DepthMap,
    pub mask: Mask,
}

impl PlaneLayer {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            color: ColorImage::filled(width, height, [0.0; 3]),
            depth: DepthMap::filled(width, height, 0.0),
            mask: Mask::filled(width, height, false),
        }
    }

    pub fn occupied(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiPlaneImage {
    /// Index 0 is the nearest plane.
    pub planes: Vec<PlaneLayer>,
    pub bounds: Vec<f64>,
}

/// Warped frame plus its disocclusion mask (`true` = known).
#[derive(Debug, Clone, PartialEq)]
pub struct WarpResult {
    pub frame: RgbdFrame,
    pub disocclusion: Mask,
}

impl WarpResult {
    /// Wraps an already-aligned frame, zeroing color where it is unknown.
    pub fn from_frame(mut frame: RgbdFrame) -> Self {
        for (c, &m) in frame.color.data_mut().iter_mut().zip(frame.mask.data()) {
            if !m {
                *c = [0.0; 3];
            }
        }
        let disocclusion = frame.mask.clone();
        Self {
            frame,
            disocclusion,
        }
    }
}

pub fn project_to_planes(
    src: &RgbdFrame,
    src_cam: &Camera,
    dst_cam: &Camera,
    strata: &PlaneStrata,
) -> Result<MultiPlaneImage, GeometryError> {
    strata.validate()?;
    if !src.mask.data().iter().any(|&m| m) {
        return Err(GeometryError::EmptyInput);
    }
    let warp = warp_coordinates(src, src_cam, dst_cam)?;
    let (dw, dh) = (dst_cam.width, dst_cam.height);
    let mut planes: Vec<PlaneLayer> = (0..strata.k).map(|_| PlaneLayer::empty(dw, dh)).collect();
    let (sw, sh) = src.color.dims();
    for y in 0..sh {
        for x in 0..sw {
            if !warp.is_valid(x, y) {
                continue;
            }
            let [u, v] = warp.coords[(x, y)];
            // half-up so a uniform shift never splits around zero
            let (ui, vi) = ((u + 0.5).floor(), (v + 0.5).floor());
            if ui < 0.0 || vi < 0.0 || ui >= dw as f64 || vi >= dh as f64 {
                continue;
            }
            let (ui, vi) = (ui as usize, vi as usize);
            let z = warp.depth[(x, y)];
            let plane = &mut planes[strata.plane_of(z)];
            let zf = z as f32;
            if !plane.mask[(ui, vi)] || zf < plane.depth[(ui, vi)] {
                plane.mask[(ui, vi)] = true;
                plane.depth[(ui, vi)] = zf;
                plane.color[(ui, vi)] = src.color[(x, y)];
            }
        }
    }
    Ok(MultiPlaneImage {
        planes,
        bounds: strata.bounds(),
    })
}

/// Back-to-front composite: planes are visited from the farthest to the
/// nearest, each overwriting the accumulator where its mask is set.
pub fn blend_planes(mpi: &MultiPlaneImage) -> WarpResult {
    let (w, h) = mpi
        .planes
        .first()
        .map(|p| p.color.dims())
        .expect("multi-plane image without planes");
    let mut color = ColorImage::filled(w, h, [0.0; 3]);
    let mut depth = DepthMap::filled(w, h, 0.0);
    let mut mask = Mask::filled(w, h, false);
    for plane in mpi.planes.iter().rev() {
        for i in 0..w * h {
            if plane.mask.data()[i] {
                color.data_mut()[i] = plane.color.data()[i];
                depth.data_mut()[i] = plane.depth.data()[i];
                mask.data_mut()[i] = true;
            }
        }
    }
    let disocclusion = mask.clone();
    WarpResult {
        frame: RgbdFrame { color, depth, mask },
        disocclusion,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpConfig {
    pub strata: PlaneStrata,
    pub repair: RepairConfig,
}

/// Full forward warp: plane projection, per-plane repair, blending.
/// Identical cameras return the source frame untouched.
pub fn warp_frame(
    src: &RgbdFrame,
    src_cam: &Camera,
    dst_cam: &Camera,
    cfg: &WarpConfig,
) -> Result<WarpResult, GeometryError> {
    if src_cam.same_view(dst_cam) {
        src_cam.validate()?;
        return Ok(WarpResult::from_frame(src.clone()));
    }
    let mut mpi = project_to_planes(src, src_cam, dst_cam, &cfg.strata)?;
    for plane in &mut mpi.planes {
        cfg.repair.apply(plane);
    }
    Ok(blend_planes(&mpi))
}

/// Outpainting band width: the largest disparity `fx·b/d_min`, rounded up.
pub fn outpaint_padding(fx: f64, baseline: f64, d_min: f64) -> Result<usize, GeometryError> {
    if !(d_min > 0.0) {
        return Err(GeometryError::Domain(format!(
            "minimum depth must be positive, got {d_min}"
        )));
    }
    if !(fx > 0.0) || !(baseline >= 0.0) {
        return Err(GeometryError::Domain(format!(
            "focal length and baseline must be non-negative (fx={fx}, b={baseline})"
        )));
    }
    let p = fx * baseline / d_min;
    // absorb representation error such as 100·0.07/7 = 1.0000000000000002
    Ok((p - 1e-9).ceil().max(0.0) as usize)
}
