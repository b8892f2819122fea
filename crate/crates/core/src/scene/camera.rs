use crate::error::{Error, Result};
use crate::geom::{Mat3, Vec3};

/// Pinhole camera with a rigid world-to-camera pose `p_cam = R p + t`.
///
/// Camera axes: +x right, +y down, +z forward. Pixel `(px, py)` has its center
/// at continuous image coordinates `(px + 0.5, py + 0.5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    rotation: Mat3,
    translation: Vec3,
    origin: Vec3,
}

/// Result of projecting a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Continuous image column (pixel centers at `i + 0.5`).
    pub u: f64,
    /// Continuous image row.
    pub v: f64,
    /// Euclidean distance from the camera origin.
    pub dist: f64,
    /// Camera-space depth along the optical axis.
    pub depth: f64,
    pub visible: bool,
}

const ORTHO_TOL: f64 = 1e-9;

impl Camera {
    pub fn new(
        width: usize,
        height: usize,
        focal: f64,
        cx: f64,
        cy: f64,
        rotation: Mat3,
        translation: Vec3,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("camera dimensions must be at least 1"));
        }
        if !(focal > 0.0 && focal.is_finite()) {
            return Err(Error::invalid("focal length must be positive"));
        }
        let rrt = rotation.mul_mat(&rotation.transpose());
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                if (rrt.0[i][j] - want).abs() > ORTHO_TOL {
                    return Err(Error::invalid("rotation is not orthonormal"));
                }
            }
        }
        if (rotation.determinant() - 1.0).abs() > ORTHO_TOL {
            return Err(Error::invalid("rotation determinant is not +1"));
        }
        if !translation.is_finite() || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::invalid("non-finite camera parameters"));
        }
        let origin = -rotation.transpose().mul_vec(translation);
        Ok(Camera {
            width,
            height,
            focal,
            cx,
            cy,
            rotation,
            translation,
            origin,
        })
    }

    /// Camera at `eye` looking at `target`; principal point at the image center.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        width: usize,
        height: usize,
        focal: f64,
    ) -> Result<Self> {
        let forward = (target - eye).normalized();
        let right = forward.cross(up);
        if right.norm() < 1e-12 {
            return Err(Error::invalid("up vector parallel to viewing direction"));
        }
        let right = right.normalized();
        let down = forward.cross(right);
        let rotation = Mat3::from_rows(right, down, forward);
        let translation = -rotation.mul_vec(eye);
        Camera::new(
            width,
            height,
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            rotation,
            translation,
        )
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    /// World-space camera center `o`.
    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Unit world-space ray through the center of pixel `(px, py)`.
    pub fn ray_direction(&self, px: usize, py: usize) -> Result<Vec3> {
        if px >= self.width || py >= self.height {
            return Err(Error::invalid(format!(
                "pixel ({px}, {py}) outside {}x{}",
                self.width, self.height
            )));
        }
        Ok(self.ray_through(px as f64 + 0.5, py as f64 + 0.5))
    }

    /// Unit world-space ray through continuous image coordinates `(u, v)`.
    pub fn ray_through(&self, u: f64, v: f64) -> Vec3 {
        let cam = Vec3::new((u - self.cx) / self.focal, (v - self.cy) / self.focal, 1.0);
        self.rotation.transpose().mul_vec(cam).normalized()
    }

    pub fn project(&self, p: Vec3) -> Projection {
        let pc = self.rotation.mul_vec(p) + self.translation;
        let dist = (p - self.origin).norm();
        let visible = pc.z > 1e-12 && dist > 0.0;
        let (u, v) = if visible {
            (
                self.focal * pc.x / pc.z + self.cx,
                self.focal * pc.y / pc.z + self.cy,
            )
        } else {
            (f64::NAN, f64::NAN)
        };
        Projection {
            u,
            v,
            dist,
            depth: pc.z,
            visible,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(f: f64, cx: f64, cy: f64) -> Camera {
        Camera::new(100, 100, f, cx, cy, Mat3::IDENTITY, Vec3::ZERO).unwrap()
    }

    #[test]
    fn axis_ray_at_principal_point() {
        let cam = identity(100.0, 50.5, 50.5);
        let d = cam.ray_direction(50, 50).unwrap();
        assert_eq!(d, Vec3::new(0.0, 0.0, 1.0));
        let cam = Camera::new(1, 1, 1.0, 0.5, 0.5, Mat3::IDENTITY, Vec3::ZERO).unwrap();
        assert_eq!(cam.ray_direction(0, 0).unwrap(), Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn out_of_range_pixel_rejected() {
        let cam = identity(100.0, 50.0, 50.0);
        assert!(cam.ray_direction(100, 0).is_err());
        assert!(cam.ray_direction(0, 100).is_err());
    }

    #[test]
    fn on_axis_projection() {
        let cam = identity(100.0, 50.0, 50.0);
        let p = cam.project(Vec3::new(0.0, 0.0, 2.0));
        assert!(p.visible);
        assert_eq!((p.u, p.v, p.dist), (50.0, 50.0, 2.0));
    }

    #[test]
    fn origin_and_behind_are_invisible() {
        let cam = identity(100.0, 50.0, 50.0);
        assert!(!cam.project(cam.origin()).visible);
        assert!(!cam.project(Vec3::new(0.0, 0.0, -1.0)).visible);
    }

    #[test]
    fn rejects_bad_rotation_and_dims() {
        let mut bad = Mat3::IDENTITY;
        bad.0[0][0] = -1.0; // reflection
        assert!(Camera::new(4, 4, 1.0, 2.0, 2.0, bad, Vec3::ZERO).is_err());
        bad.0[0][0] = 1.1;
        assert!(Camera::new(4, 4, 1.0, 2.0, 2.0, bad, Vec3::ZERO).is_err());
        assert!(Camera::new(0, 4, 1.0, 2.0, 2.0, Mat3::IDENTITY, Vec3::ZERO).is_err());
        assert!(Camera::new(4, 4, 0.0, 2.0, 2.0, Mat3::IDENTITY, Vec3::ZERO).is_err());
    }

    #[test]
    fn origin_inverts_pose() {
        let rot = Mat3::rotation(Vec3::new(0.3, -1.0, 0.2), 0.7);
        let t = Vec3::new(0.5, -0.25, 4.0);
        let cam = Camera::new(64, 48, 60.0, 32.0, 24.0, rot, t).unwrap();
        let back = rot.mul_vec(cam.origin()) + t;
        assert!(back.norm() < 1e-12);
    }

    #[test]
    fn ray_then_project_returns_pixel_center() {
        let rot = Mat3::rotation(Vec3::new(1.0, 2.0, -0.5), 1.1);
        let cam = Camera::new(64, 48, 55.0, 30.0, 25.0, rot, Vec3::new(0.2, 0.1, 3.0)).unwrap();
        for (px, py) in [(0, 0), (17, 40), (63, 47)] {
            let d = cam.ray_direction(px, py).unwrap();
            assert!((d.norm() - 1.0).abs() < 1e-12);
            let pr = cam.project(cam.origin() + d * 5.0);
            assert!((pr.u - (px as f64 + 0.5)).abs() < 1e-9);
            assert!((pr.v - (py as f64 + 0.5)).abs() < 1e-9);
            assert!((pr.dist - 5.0).abs() < 1e-12);
        }
    }
}
