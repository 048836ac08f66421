//! Pinhole cameras and rays.
//!
//! Poses are camera-to-world 4×4 matrices in the NeRF-Synthetic
//! convention: right-handed, the camera looks along its local −z axis with
//! +y up, and pixel `(x, y)` has its center at `(x + 0.5, y + 0.5)`.

use crate::error::{Error, Result};
use crate::geometry::{rotation_is_orthonormal, Aabb, Mat4, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub width: u32,
    pub height: u32,
    /// Horizontal field of view in radians.
    pub camera_angle_x: f64,
    pub pose: Mat4,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3, t_near: f64, t_far: f64) -> Result<Self> {
        if !(origin.iter().all(|v| v.is_finite()) && direction.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("ray"));
        }
        if (direction.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument("ray direction must be unit length".into()));
        }
        if !(t_near < t_far) {
            return Err(Error::InvalidArgument(format!(
                "ray interval [{t_near}, {t_far}] is empty"
            )));
        }
        Ok(Ray {
            origin,
            direction,
            t_near,
            t_far,
        })
    }

    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    /// Restricts the ray interval to its overlap with `bounds`.
    pub fn clip(&self, bounds: &Aabb) -> Option<Ray> {
        let (t0, t1) = bounds.intersect(&self.origin, &self.direction)?;
        let t_near = t0.max(self.t_near);
        let t_far = t1.min(self.t_far);
        (t_near < t_far).then_some(Ray {
            t_near,
            t_far,
            ..*self
        })
    }
}

impl Camera {
    pub fn new(width: u32, height: u32, camera_angle_x: f64, pose: Mat4) -> Result<Self> {
        let cam = Camera {
            width,
            height,
            camera_angle_x,
            pose,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 1 || self.height < 1 {
            return Err(Error::InvalidArgument(format!(
                "camera resolution {}x{} must be at least 1x1",
                self.width, self.height
            )));
        }
        if !(self.camera_angle_x > 0.0 && self.camera_angle_x < std::f64::consts::PI) {
            return Err(Error::out_of_range(
                "camera_angle_x",
                self.camera_angle_x,
                "(0, pi)",
            ));
        }
        if self.pose.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("camera pose"));
        }
        if !rotation_is_orthonormal(&self.pose, 1e-4) {
            return Err(Error::InvalidArgument(
                "camera pose rotation block is not orthonormal".into(),
            ));
        }
        Ok(())
    }

    pub fn focal(&self) -> f64 {
        0.5 * self.width as f64 / (0.5 * self.camera_angle_x).tan()
    }

    pub fn origin(&self) -> Vec3 {
        Vec3::new(self.pose[(0, 3)], self.pose[(1, 3)], self.pose[(2, 3)])
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Ray through the center of pixel `(x, y)`, unbounded in `t`.
    pub fn ray(&self, x: u32, y: u32) -> Result<Ray> {
        if x >= self.width || y >= self.height {
            return Err(Error::out_of_range(
                "pixel",
                format!("({x}, {y})"),
                format!("inside {}x{}", self.width, self.height),
            ));
        }
        Ok(self.ray_through(x as f64 + 0.5, y as f64 + 0.5))
    }

    /// Ray through continuous image coordinates `(u, v)`.
    pub fn ray_through(&self, u: f64, v: f64) -> Ray {
        let f = self.focal();
        let d_cam = Vec3::new(
            (u - 0.5 * self.width as f64) / f,
            -(v - 0.5 * self.height as f64) / f,
            -1.0,
        );
        let rot = self.pose.fixed_view::<3, 3>(0, 0);
        let direction = (rot * d_cam).normalize();
        Ray {
            origin: self.origin(),
            direction,
            t_near: 0.0,
            t_far: f64::INFINITY,
        }
    }

    pub fn generate_rays(&self, pixels: &[(u32, u32)]) -> Result<Vec<Ray>> {
        pixels.iter().map(|&(x, y)| self.ray(x, y)).collect()
    }

    /// All pixel rays in row-major order.
    pub fn all_rays(&self) -> Vec<Ray> {
        let mut out = Vec::with_capacity(self.pixel_count());
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(self.ray_through(x as f64 + 0.5, y as f64 + 0.5));
            }
        }
        out
    }

    /// Continuous image coordinates of a world point, or `None` when it is
    /// not in front of the camera.
    pub fn project(&self, world: &Vec3) -> Option<(f64, f64)> {
        let rot = self.pose.fixed_view::<3, 3>(0, 0);
        let c = rot.transpose() * (world - self.origin());
        if c.z >= -1e-12 {
            return None;
        }
        let f = self.focal();
        let u = 0.5 * self.width as f64 + f * c.x / -c.z;
        let v = 0.5 * self.height as f64 - f * c.y / -c.z;
        Some((u, v))
    }
}
