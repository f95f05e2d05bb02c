use nalgebra::{Matrix3, Vector3};

use super::GeometryError;

/// Pinhole camera. `orientation` maps camera axes to world axes (columns are
/// the camera's x/y/z directions in world coordinates); `position` is the
/// optical center. Pixel centers sit at integer coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub position: Vector3<f64>,
    pub orientation: Matrix3<f64>,
    pub width: usize,
    pub height: usize,
}

pub const MIN_IMAGE_SIDE: usize = 8;

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        position: Vector3<f64>,
        orientation: Matrix3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            position,
            orientation,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at the world origin looking down +z.
    pub fn pinhole(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        Self::new(
            fx,
            fy,
            cx,
            cy,
            Vector3::zeros(),
            Matrix3::identity(),
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics {
                fx: self.fx,
                fy: self.fy,
            });
        }
        let gram = self.orientation.transpose() * self.orientation;
        let dev = (gram - Matrix3::identity()).amax();
        if !(dev <= 1e-9) {
            return Err(GeometryError::NotOrthonormal { deviation: dev });
        }
        if self.width < MIN_IMAGE_SIDE || self.height < MIN_IMAGE_SIDE {
            return Err(GeometryError::ImageTooSmall {
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }

    pub fn with_position(mut self, position: Vector3<f64>) -> Self {
        self.position = position;
        self
    }

    /// Same intrinsics and pose on a canvas grown by `pad` pixels on the left
    /// and right (and `extra_right` more on the right).
    pub fn widened(&self, pad: usize, extra_right: usize) -> Self {
        let mut cam = self.clone();
        cam.cx += pad as f64;
        cam.width += 2 * pad + extra_right;
        cam
    }

    /// World point seen at pixel `(u, v)` with z-depth `depth`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        let local = Vector3::new(
            (u - self.cx) / self.fx * depth,
            (v - self.cy) / self.fy * depth,
            depth,
        );
        self.orientation * local + self.position
    }

    /// Pixel coordinates and z-depth of a world point, or `None` when the
    /// point is not in front of the camera.
    pub fn project(&self, world: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let local = self.orientation.transpose() * (world - self.position);
        if local.z <= 0.0 {
            return None;
        }
        Some((
            self.fx * local.x / local.z + self.cx,
            self.fy * local.y / local.z + self.cy,
            local.z,
        ))
    }

    /// Unit-free ray direction in world coordinates through pixel `(u, v)`,
    /// scaled so that its camera-space z component is 1.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        self.orientation * Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// World-to-camera `[R | t]`, row-major 3×4.
    pub fn extrinsics(&self) -> [[f64; 4]; 3] {
        let rt = self.orientation.transpose();
        let t = -(rt * self.position);
        let mut out = [[0.0; 4]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for c in 0..3 {
                row[c] = rt[(r, c)];
            }
            row[3] = t[r];
        }
        out
    }

    /// True when both cameras image the world identically.
    pub fn same_view(&self, other: &Camera) -> bool {
        self == other
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_intrinsics_and_rotation() {
        assert!(matches!(
            Camera::pinhole(0.0, 1.0, 0.0, 0.0, 8, 8),
            Err(GeometryError::InvalidIntrinsics { .. })
        ));
        let skew = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            Camera::new(1.0, 1.0, 0.0, 0.0, Vector3::zeros(), skew, 8, 8),
            Err(GeometryError::NotOrthonormal { .. })
        ));
        assert!(matches!(
            Camera::pinhole(1.0, 1.0, 0.0, 0.0, 7, 8),
            Err(GeometryError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn project_inverts_unproject() {
        let rot = nalgebra::Rotation3::from_euler_angles(0.1, -0.2, 0.05);
        let cam = Camera::new(
            420.0,
            410.0,
            31.5,
            23.5,
            Vector3::new(0.3, -0.1, 0.2),
            *rot.matrix(),
            64,
            48,
        )
        .unwrap();
        let p = cam.unproject(12.25, 40.0, 3.5);
        let (u, v, z) = cam.project(&p).unwrap();
        assert!((u - 12.25).abs() < 1e-9 && (v - 40.0).abs() < 1e-9 && (z - 3.5).abs() < 1e-9);
        let e = cam.extrinsics();
        let local = nalgebra::Vector4::new(p.x, p.y, p.z, 1.0);
        let zc: f64 = (0..4).map(|i| e[2][i] * local[i]).sum();
        assert!((zc - 3.5).abs() < 1e-9);
    }
}
