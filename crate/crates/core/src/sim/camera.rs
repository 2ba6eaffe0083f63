use serde::{Deserialize, Serialize};

use super::vec3::{Aabb, Vec3};
use crate::{Error, Result};

/// Discrete set of camera positions on a sphere around the scene; the action space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSphere {
    pub center: Vec3,
    pub radius: f64,
    pub azimuth_count: usize,
    /// Elevation angles in radians.
    pub elevations: Vec<f64>,
}

impl Default for ViewSphere {
    fn default() -> Self {
        Self::from_degrees(Vec3::new(0.0, 0.0, 0.05), 1.25, 12, &[20.0, 40.0, 60.0])
    }
}

impl ViewSphere {
    pub fn from_degrees(center: Vec3, radius: f64, azimuth_count: usize, elevations_deg: &[f64]) -> Self {
        Self {
            center,
            radius,
            azimuth_count,
            elevations: elevations_deg.iter().map(|d| d.to_radians()).collect(),
        }
    }

    /// Number of actions.
    pub fn len(&self) -> usize {
        self.azimuth_count * self.elevations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self, bounds: Option<&Aabb>) -> Result<()> {
        if self.len() < 2 {
            return Err(Error::Config("view sphere needs at least two viewpoints".into()));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::Config("view sphere radius must be positive".into()));
        }
        if let Some(b) = bounds {
            for i in 1..=self.len() {
                let p = self.viewpoint_pose(i)?.position;
                if b.contains(p) {
                    return Err(Error::Config(format!("viewpoint {i} lies inside the scene bounds")));
                }
            }
        }
        Ok(())
    }

    /// (azimuth, elevation) in radians of a 1-based action index.
    pub fn angles(&self, index: usize) -> Result<(f64, f64)> {
        if index == 0 || index > self.len() {
            return Err(Error::Domain(format!(
                "viewpoint index {index} outside 1..={}",
                self.len()
            )));
        }
        let k = index - 1;
        let phi = std::f64::consts::TAU * (k % self.azimuth_count) as f64 / self.azimuth_count as f64;
        Ok((phi, self.elevations[k / self.azimuth_count]))
    }

    /// Camera pose for a 1-based action index, looking at the sphere center.
    pub fn viewpoint_pose(&self, index: usize) -> Result<Pose> {
        let (phi, e) = self.angles(index)?;
        Ok(self.orbit_pose(phi, e, self.radius))
    }

    pub fn orbit_pose(&self, azimuth: f64, elevation: f64, radius: f64) -> Pose {
        let (se, ce) = elevation.sin_cos();
        let (sp, cp) = azimuth.sin_cos();
        Pose::look_at(self.center + Vec3::new(ce * cp, ce * sp, se) * radius, self.center)
    }

    pub fn poses(&self) -> Vec<Pose> {
        (1..=self.len())
            .map(|i| self.viewpoint_pose(i).expect("index in range"))
            .collect()
    }
}

/// Camera position, look-at target and up hint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub target: Vec3,
    pub up: Vec3,
}

impl Pose {
    pub fn look_at(position: Vec3, target: Vec3) -> Self {
        Self {
            position,
            target,
            up: Vec3::Z,
        }
    }

    /// Orthonormal camera basis `(right, up, forward)`.
    pub fn basis(&self) -> Result<(Vec3, Vec3, Vec3)> {
        let f = self.target - self.position;
        if f.norm() <= 1e-12 {
            return Err(Error::Geometry("pose position coincides with its target".into()));
        }
        let forward = f.normalized();
        let mut right = forward.cross(self.up);
        if right.norm() < 1e-9 {
            // up hint parallel to the view direction
            right = forward.cross(Vec3::new(0.0, 1.0, 0.0));
            if right.norm() < 1e-9 {
                right = forward.cross(Vec3::new(1.0, 0.0, 0.0));
            }
        }
        let right = right.normalized();
        let up = right.cross(forward).normalized();
        Ok((right, up, forward))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    /// Vertical field of view in radians.
    pub fov_y: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            width: 96,
            height: 96,
            fov_y: 50f64.to_radians(),
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(Error::Config("image must be at least 16x16".into()));
        }
        if !(self.fov_y > 0.0 && self.fov_y < std::f64::consts::PI) {
            return Err(Error::Config("field of view must lie in (0, pi)".into()));
        }
        Ok(())
    }

    fn half_extents(&self) -> (f64, f64) {
        let ty = (self.fov_y * 0.5).tan();
        (ty * self.width as f64 / self.height as f64, ty)
    }
}

/// Precomputed camera for ray generation and projection.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Camera {
    pub origin: Vec3,
    right: Vec3,
    up: Vec3,
    forward: Vec3,
    tan_x: f64,
    tan_y: f64,
    width: usize,
    height: usize,
}

impl Camera {
    pub fn new(pose: &Pose, intrinsics: &CameraIntrinsics) -> Result<Self> {
        intrinsics.validate()?;
        let (right, up, forward) = pose.basis()?;
        let (tan_x, tan_y) = intrinsics.half_extents();
        Ok(Self {
            origin: pose.position,
            right,
            up,
            forward,
            tan_x,
            tan_y,
            width: intrinsics.width,
            height: intrinsics.height,
        })
    }

    /// Unit direction through the center of pixel `(col, row)`.
    pub fn ray_dir(&self, col: usize, row: usize) -> Vec3 {
        let x = (2.0 * (col as f64 + 0.5) / self.width as f64 - 1.0) * self.tan_x;
        let y = (1.0 - 2.0 * (row as f64 + 0.5) / self.height as f64) * self.tan_y;
        (self.forward + self.right * x + self.up * y).normalized()
    }

    /// Pixel `(col, row)` that a world point projects into, if it is in front and inside the image.
    pub fn project(&self, p: Vec3) -> Option<(usize, usize)> {
        let v = p - self.origin;
        let z = v.dot(self.forward);
        if z <= 1e-9 {
            return None;
        }
        let x = v.dot(self.right) / z / self.tan_x;
        let y = v.dot(self.up) / z / self.tan_y;
        let fc = (x + 1.0) * 0.5 * self.width as f64;
        let fr = (1.0 - y) * 0.5 * self.height as f64;
        if fc < 0.0 || fr < 0.0 {
            return None;
        }
        let (c, r) = (fc as usize, fr as usize);
        (c < self.width && r < self.height).then_some((c, r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_index_closed_form() {
        let s = ViewSphere::from_degrees(Vec3::ZERO, 1.0, 12, &[20.0]);
        let p = s.viewpoint_pose(1).unwrap().position;
        assert!((p.x - 0.9396926207859084).abs() < 1e-12);
        assert!(p.y.abs() < 1e-12);
        assert!((p.z - 0.3420201433256687).abs() < 1e-12);
    }

    #[test]
    fn index_zero_and_past_end_are_domain_errors() {
        let s = ViewSphere::from_degrees(Vec3::ZERO, 1.0, 12, &[20.0]);
        assert!(matches!(s.viewpoint_pose(0), Err(Error::Domain(_))));
        assert!(matches!(s.viewpoint_pose(13), Err(Error::Domain(_))));
    }

    #[test]
    fn index_thirteen_wraps_to_second_ring() {
        let s = ViewSphere::from_degrees(Vec3::ZERO, 1.0, 12, &[20.0, 40.0]);
        let (phi, e) = s.angles(13).unwrap();
        assert_eq!(phi, 0.0);
        assert!((e - 40f64.to_radians()).abs() < 1e-15);
        let p = s.viewpoint_pose(13).unwrap().position;
        assert!((p.z - 40f64.to_radians().sin()).abs() < 1e-12);
        assert!(p.y.abs() < 1e-12);
    }

    #[test]
    fn basis_is_orthonormal_even_looking_straight_down() {
        for pose in [
            Pose::look_at(Vec3::new(0.0, 0.0, 2.0), Vec3::ZERO),
            Pose::look_at(Vec3::new(1.0, 2.0, 0.5), Vec3::new(0.1, 0.0, 0.0)),
        ] {
            let (r, u, f) = pose.basis().unwrap();
            assert!(r.dot(u).abs() <= 1e-9 && r.dot(f).abs() <= 1e-9 && u.dot(f).abs() <= 1e-9);
            for v in [r, u, f] {
                assert!((v.norm() - 1.0).abs() < 1e-12);
            }
        }
        assert!(Pose::look_at(Vec3::ZERO, Vec3::ZERO).basis().is_err());
    }

    #[test]
    fn projection_inverts_ray_generation() {
        let cam = Camera::new(
            &Pose::look_at(Vec3::new(2.0, 0.3, 0.8), Vec3::ZERO),
            &CameraIntrinsics::default(),
        )
        .unwrap();
        for (c, r) in [(0, 0), (10, 50), (95, 95), (47, 48)] {
            let p = cam.origin + cam.ray_dir(c, r) * 1.7;
            assert_eq!(cam.project(p), Some((c, r)));
        }
    }
}
