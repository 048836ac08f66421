//! Small geometric helpers shared by the renderer, scene builders and warping.

use nalgebra::{Matrix4, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Mat4 = Matrix4<f64>;

/// Axis-aligned box in scene units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for Aabb {
    fn default() -> Self {
        Self::unit()
    }
}

impl Aabb {
    pub const fn unit() -> Self {
        Aabb {
            min: [0.0; 3],
            max: [1.0; 3],
        }
    }

    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Aabb { min, max }
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|i| self.min[i].is_finite() && self.max[i].is_finite() && self.min[i] < self.max[i])
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }

    pub fn center(&self) -> Vec3 {
        Vec3::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        )
    }

    /// Maps a point to `[0,1]^3` box coordinates, clamping outside points.
    #[inline]
    pub fn normalize_clamped(&self, p: &[f64; 3]) -> [f64; 3] {
        let mut u = [0.0; 3];
        for i in 0..3 {
            u[i] = ((p[i] - self.min[i]) / (self.max[i] - self.min[i])).clamp(0.0, 1.0);
        }
        u
    }

    /// Slab test. Returns the parametric entry/exit distances of the ray
    /// `origin + t * dir` restricted to `t >= 0`, or `None` on a miss.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            let inv = 1.0 / dir[i];
            let mut a = (self.min[i] - origin[i]) * inv;
            let mut b = (self.max[i] - origin[i]) * inv;
            if a.is_nan() || b.is_nan() {
                // parallel ray sitting exactly on a slab plane
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        if t1 > t0 {
            Some((t0, t1))
        } else {
            None
        }
    }
}

/// Builds a camera-to-world pose looking from `eye` at `target`. The camera
/// looks down its local −z axis with +y up.
pub fn look_at(eye: Vec3, target: Vec3, up_hint: Vec3) -> Mat4 {
    let back = (eye - target).normalize();
    let mut up = up_hint;
    if back.cross(&up).norm() < 1e-6 {
        up = if back.y.abs() < 0.9 {
            Vec3::y()
        } else {
            Vec3::x()
        };
    }
    let right = up.cross(&back).normalize();
    let true_up = back.cross(&right);
    let mut m = Mat4::identity();
    for r in 0..3 {
        m[(r, 0)] = right[r];
        m[(r, 1)] = true_up[r];
        m[(r, 2)] = back[r];
        m[(r, 3)] = eye[r];
    }
    m
}

/// True when the upper-left 3×3 block is orthonormal within `tol`.
pub fn rotation_is_orthonormal(pose: &Mat4, tol: f64) -> bool {
    let r = pose.fixed_view::<3, 3>(0, 0);
    let rtr = r.transpose() * r;
    (0..3).all(|i| (0..3).all(|j| (rtr[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs() <= tol))
}
