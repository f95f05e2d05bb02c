use std::f64::consts::TAU;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{Camera, GeometryError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RigMode {
    /// Cameras along the interocular baseline, left to right.
    Stereo,
    /// Cameras on a closed circle around the reference viewpoint.
    Spatial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    pub mode: RigMode,
    pub cameras: Vec<Camera>,
}

impl CameraRig {
    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }
}

/// Stereo: `n_views` cameras evenly spaced over `extent` meters along the
/// template's x axis, view 0 at the template. Spatial: `n_views` cameras on a
/// circle of radius `extent` in the template's image plane with angular step
/// `2π/(n_views-1)`, so the last view closes the loop onto the first.
pub fn build_rig(
    mode: RigMode,
    n_views: usize,
    extent: f64,
    template: &Camera,
) -> Result<CameraRig, GeometryError> {
    template.validate()?;
    let min = match mode {
        RigMode::Stereo => 2,
        RigMode::Spatial => 3,
    };
    if n_views < min {
        return Err(GeometryError::InvalidViewCount {
            mode,
            n: n_views,
            min,
        });
    }
    if !(extent.is_finite() && extent >= 0.0) {
        return Err(GeometryError::Domain(format!(
            "rig extent must be a non-negative distance, got {extent}"
        )));
    }
    let axes = template.orientation;
    let offsets: Vec<Vector3<f64>> = match mode {
        RigMode::Stereo => (0..n_views)
            .map(|i| Vector3::new(extent * i as f64 / (n_views - 1) as f64, 0.0, 0.0))
            .collect(),
        RigMode::Spatial => {
            let step = TAU / (n_views - 1) as f64;
            let mut v: Vec<Vector3<f64>> = (0..n_views - 1)
                .map(|i| {
                    let a = step * i as f64;
                    Vector3::new(extent * a.cos(), extent * a.sin(), 0.0)
                })
                .collect();
            v.push(v[0]);
            v
        }
    };
    let cameras = offsets
        .into_iter()
        .map(|o| template.clone().with_position(template.position + axes * o))
        .collect();
    Ok(CameraRig { mode, cameras })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn template() -> Camera {
        Camera::pinhole(500.0, 500.0, 287.5, 159.5, 576, 320).unwrap()
    }

    #[test]
    fn six_stereo_cameras_are_evenly_spaced() {
        let rig = build_rig(RigMode::Stereo, 6, 0.07, &template()).unwrap();
        assert_eq!(rig.len(), 6);
        for (i, cam) in rig.cameras.iter().enumerate() {
            assert!((cam.position.x - 0.014 * i as f64).abs() < 1e-12);
            assert_eq!(cam.position.y, 0.0);
            assert_eq!(cam.orientation, template().orientation);
        }
        assert_eq!(rig.cameras[0], template());
    }

    #[test]
    fn two_view_stereo_is_left_and_right() {
        let rig = build_rig(RigMode::Stereo, 2, 0.07, &template()).unwrap();
        assert_eq!(rig.cameras[0].position.x, 0.0);
        assert!((rig.cameras[1].position.x - 0.07).abs() < 1e-15);
    }

    #[test]
    fn spatial_circle_closes_on_first_view() {
        let rig = build_rig(RigMode::Spatial, 16, 0.07, &template()).unwrap();
        assert_eq!(rig.len(), 16);
        assert_eq!(rig.cameras[15].position, rig.cameras[0].position);
        let step = TAU / 15.0;
        for (i, cam) in rig.cameras.iter().take(15).enumerate() {
            let p = cam.position;
            assert!((p.norm() - 0.07).abs() < 1e-12);
            assert!(p.z.abs() < 1e-15);
            let a = p.y.atan2(p.x).rem_euclid(TAU);
            let expected = (step * i as f64).rem_euclid(TAU);
            assert!((a - expected).abs() < 1e-9, "view {i}");
        }
    }

    #[test]
    fn rotated_template_moves_along_its_own_axes() {
        let rot = nalgebra::Rotation3::from_euler_angles(0.0, 0.3, 0.0);
        let mut t = template();
        t.orientation = *rot.matrix();
        let rig = build_rig(RigMode::Stereo, 2, 0.1, &t).unwrap();
        let d = rig.cameras[1].position - rig.cameras[0].position;
        let local = t.orientation.transpose() * d;
        assert!((local - Vector3::new(0.1, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn too_few_views_is_a_configuration_error() {
        assert!(build_rig(RigMode::Stereo, 1, 0.07, &template()).is_err());
        assert!(build_rig(RigMode::Spatial, 2, 0.07, &template()).is_err());
        assert!(build_rig(RigMode::Spatial, 3, 0.07, &template()).is_ok());
    }
}
