//! Ground-truth scene generators.
//!
//! [`SyntheticScene`] is a closed-form test scene. [`VoxelPlaneScene`] turns
//! a 2D style image into a one-voxel-thick colored plane in the middle of
//! the unit cube so the style can be trained like any other posed scene.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Ray};
use crate::dataset::{Background, View, ViewDataset};
use crate::error::{Error, Result};
use crate::geometry::{look_at, Aabb, Mat4, Vec3};
use crate::imaging::RgbImage;

/// Longest image edge kept when building a voxel plane.
pub const MAX_PLANE_EDGE: u32 = 128;
/// World-space length of the plane's long edge.
pub const PLANE_SPAN: f64 = 0.8;
pub const MIN_ELEVATION_DEG: f64 = 15.0;
pub const MAX_ELEVATION_DEG: f64 = 90.0;

/// Anything that renders exact ground truth for a camera.
pub trait GroundTruth: Sync {
    /// Color seen along `ray`, or `None` when it misses the scene.
    fn trace(&self, ray: &Ray) -> Option<[f64; 3]>;

    fn render(&self, camera: &Camera, background: [f64; 3]) -> RgbImage {
        let data = camera
            .all_rays()
            .par_iter()
            .map(|r| self.trace(r).unwrap_or(background))
            .collect();
        RgbImage {
            width: camera.width,
            height: camera.height,
            data,
        }
    }
}

/// Index of the box face through which a ray enters: 0/1 for -x/+x, 2/3
/// for -y/+y, 4/5 for -z/+z.
fn entry_face(bounds: &Aabb, ray: &Ray) -> Option<(usize, f64)> {
    let (t0, _) = bounds.intersect(&ray.origin, &ray.direction)?;
    let mut best = None;
    let mut best_t = f64::NEG_INFINITY;
    for a in 0..3 {
        let d = ray.direction[a];
        if d == 0.0 {
            continue;
        }
        let (plane, face) = if d > 0.0 { (bounds.min[a], 2 * a) } else { (bounds.max[a], 2 * a + 1) };
        let t = (plane - ray.origin[a]) / d;
        if t > best_t {
            best_t = t;
            best = Some(face);
        }
    }
    // rays starting inside the box have no entry face
    if best_t < 0.0 {
        return None;
    }
    best.map(|f| (f, t0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticScene {
    /// Box with one flat color per face, ordered -x, +x, -y, +y, -z, +z.
    ColoredCube { bounds: Aabb, face_colors: [[f64; 3]; 6] },
    /// Flat-colored sphere.
    Sphere { center: [f64; 3], radius: f64, color: [f64; 3] },
}

impl SyntheticScene {
    /// The cube `[0.25, 0.75]^3` with six distinct face colors.
    pub fn colored_cube() -> Self {
        SyntheticScene::ColoredCube {
            bounds: Aabb::new([0.25; 3], [0.75; 3]),
            face_colors: [
                [0.85, 0.15, 0.15],
                [0.15, 0.75, 0.2],
                [0.2, 0.25, 0.85],
                [0.9, 0.8, 0.15],
                [0.75, 0.2, 0.75],
                [0.15, 0.7, 0.8],
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let colors_ok = |c: &[f64; 3]| c.iter().all(|v| (0.0..=1.0).contains(v));
        match self {
            SyntheticScene::ColoredCube { bounds, face_colors } => {
                if !bounds.is_valid() {
                    return Err(Error::InvalidArgument("cube bounds are degenerate".into()));
                }
                if !face_colors.iter().all(colors_ok) {
                    return Err(Error::InvalidArgument("face colors must lie in [0, 1]".into()));
                }
            }
            SyntheticScene::Sphere { center, radius, color } => {
                if !(center.iter().all(|v| v.is_finite()) && *radius > 0.0 && radius.is_finite()) {
                    return Err(Error::InvalidArgument("sphere needs a finite center and positive radius".into()));
                }
                if !colors_ok(color) {
                    return Err(Error::InvalidArgument("sphere color must lie in [0, 1]".into()));
                }
            }
        }
        Ok(())
    }
}

impl GroundTruth for SyntheticScene {
    fn trace(&self, ray: &Ray) -> Option<[f64; 3]> {
        match self {
            SyntheticScene::ColoredCube { bounds, face_colors } => {
                entry_face(bounds, ray).map(|(f, _)| face_colors[f])
            }
            SyntheticScene::Sphere { center, radius, color } => {
                let oc = ray.origin - Vec3::from(*center);
                let b = oc.dot(&ray.direction);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                (disc >= 0.0 && -b + disc.sqrt() > 0.0).then_some(*color)
            }
        }
    }
}

/// A style image laid out as a plane of colored voxels with normal +z.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelPlaneScene {
    pub width: u32,
    pub height: u32,
    pub colors: Vec<[f64; 3]>,
    pub voxel_size: f64,
    pub center: [f64; 3],
}

impl VoxelPlaneScene {
    pub fn voxel_count(&self) -> usize {
        self.colors.len()
    }

    pub fn bounds(&self) -> Aabb {
        let half = [
            0.5 * self.width as f64 * self.voxel_size,
            0.5 * self.height as f64 * self.voxel_size,
            0.5 * self.voxel_size,
        ];
        let c = self.center;
        Aabb::new([c[0] - half[0], c[1] - half[1], c[2] - half[2]], [c[0] + half[0], c[1] + half[1], c[2] + half[2]])
    }

    /// Center of the voxel built from image pixel `(x, y)`; image rows run
    /// toward -y.
    pub fn voxel_center(&self, x: u32, y: u32) -> [f64; 3] {
        let s = self.voxel_size;
        [
            self.center[0] + (x as f64 + 0.5 - 0.5 * self.width as f64) * s,
            self.center[1] - (y as f64 + 0.5 - 0.5 * self.height as f64) * s,
            self.center[2],
        ]
    }
}

/// Builds the voxel plane. Images with a long edge above `max_edge` are
/// downsampled first, preserving the aspect ratio.
pub fn image_to_voxel_scene(image: &RgbImage, max_edge: u32) -> Result<VoxelPlaneScene> {
    if image.is_empty() || image.width == 0 || image.height == 0 {
        return Err(Error::Empty("style image"));
    }
    if max_edge == 0 {
        return Err(Error::out_of_range("max_edge", 0, ">= 1"));
    }
    let long = image.width.max(image.height);
    let img = if long > max_edge {
        let scale = max_edge as f64 / long as f64;
        let w = ((image.width as f64 * scale).round() as u32).clamp(1, max_edge);
        let h = ((image.height as f64 * scale).round() as u32).clamp(1, max_edge);
        image.resize(w, h)
    } else {
        image.clone()
    };
    let colors = img.data.iter().map(|c| c.map(|v| v.clamp(0.0, 1.0))).collect();
    Ok(VoxelPlaneScene {
        width: img.width,
        height: img.height,
        voxel_size: PLANE_SPAN / img.width.max(img.height) as f64,
        colors,
        center: [0.5; 3],
    })
}

impl GroundTruth for VoxelPlaneScene {
    /// The slab is one voxel thick, so the first voxel hit is the one
    /// containing the entry point.
    fn trace(&self, ray: &Ray) -> Option<[f64; 3]> {
        let bounds = self.bounds();
        let (_, t0) = entry_face(&bounds, ray)?;
        let p = ray.at(t0);
        let s = self.voxel_size;
        let fx = ((p.x - bounds.min[0]) / s).floor();
        let fy = ((bounds.max[1] - p.y) / s).floor();
        let x = (fx.max(0.0) as u32).min(self.width - 1);
        let y = (fy.max(0.0) as u32).min(self.height - 1);
        Some(self.colors[(y * self.width + x) as usize])
    }
}

pub fn render_voxel_scene(scene: &VoxelPlaneScene, camera: &Camera, background: [f64; 3]) -> RgbImage {
    scene.render(camera, background)
}

/// Camera-to-world poses on the upper (+z) hemisphere around `center`,
/// area-uniform over elevations in `[15°, 90°]`, all looking at `center`.
pub fn sample_hemisphere_poses<R: Rng + ?Sized>(n: usize, radius: f64, center: Vec3, rng: &mut R) -> Result<Vec<Mat4>> {
    if n == 0 {
        return Err(Error::out_of_range("view count", 0, ">= 1"));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::out_of_range("radius", radius, "> 0"));
    }
    let z_lo = MIN_ELEVATION_DEG.to_radians().sin();
    let z_hi = MAX_ELEVATION_DEG.to_radians().sin();
    Ok((0..n)
        .map(|_| {
            let z: f64 = rng.gen_range(z_lo..=z_hi);
            let phi: f64 = rng.gen_range(0.0..2.0 * PI);
            let r = (1.0 - z * z).max(0.0).sqrt();
            let eye = center + radius * Vec3::new(r * phi.cos(), r * phi.sin(), z);
            look_at(eye, center, Vec3::z())
        })
        .collect())
}

/// `n` poses evenly spaced along a horizontal arc from `start_deg` to
/// `end_deg` azimuth (inclusive) at a fixed elevation, looking at `center`.
pub fn arc_poses(n: usize, radius: f64, elevation_deg: f64, center: Vec3, start_deg: f64, end_deg: f64) -> Vec<Mat4> {
    let el = elevation_deg.to_radians();
    (0..n)
        .map(|i| {
            let f = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            let phi = (start_deg + f * (end_deg - start_deg)).to_radians();
            let eye = center + radius * Vec3::new(el.cos() * phi.cos(), el.cos() * phi.sin(), el.sin());
            look_at(eye, center, Vec3::z())
        })
        .collect()
}

/// Resolution, field of view and orbit radius of a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub n_views: usize,
    pub width: u32,
    pub height: u32,
    pub camera_angle_x: f64,
    pub radius: f64,
}

impl ViewSpec {
    /// Style-plane capture: 64 views at radius 1.2.
    pub fn style_default() -> Self {
        ViewSpec {
            n_views: 64,
            width: 64,
            height: 64,
            camera_angle_x: 0.9,
            radius: 1.2,
        }
    }

    pub fn content_default() -> Self {
        ViewSpec {
            n_views: 32,
            width: 64,
            height: 64,
            camera_angle_x: 0.7,
            radius: 2.0,
        }
    }
}

/// Renders a ground-truth scene from random hemisphere poses around the
/// center of the unit cube, over a white background.
pub fn make_dataset<S: GroundTruth + ?Sized, R: Rng + ?Sized>(scene: &S, spec: &ViewSpec, rng: &mut R) -> Result<ViewDataset> {
    let poses = sample_hemisphere_poses(spec.n_views, spec.radius, Vec3::from([0.5; 3]), rng)?;
    views_from_poses(scene, spec, &poses)
}

pub fn views_from_poses<S: GroundTruth + ?Sized>(scene: &S, spec: &ViewSpec, poses: &[Mat4]) -> Result<ViewDataset> {
    let background = Background::White;
    let views = poses
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let cam = Camera::new(spec.width, spec.height, spec.camera_angle_x, *pose)?;
            Ok(View {
                pose: *pose,
                image: scene.render(&cam, background.rgb()),
                file_path: format!("images/r_{i:04}.png"),
            })
        })
        .collect::<Result<_>>()?;
    let ds = ViewDataset {
        camera_angle_x: spec.camera_angle_x,
        width: spec.width,
        height: spec.height,
        background,
        views,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn make_synthetic_dataset<R: Rng + ?Sized>(scene: &SyntheticScene, spec: &ViewSpec, rng: &mut R) -> Result<ViewDataset> {
    scene.validate()?;
    make_dataset(scene, spec, rng)
}

/// Voxel plane built from `image` plus its rendered training views.
pub fn make_style_dataset<R: Rng + ?Sized>(image: &RgbImage, spec: &ViewSpec, rng: &mut R) -> Result<(VoxelPlaneScene, ViewDataset)> {
    let scene = image_to_voxel_scene(image, MAX_PLANE_EDGE)?;
    let ds = make_dataset(&scene, spec, rng)?;
    Ok((scene, ds))
}

/// Smooth multi-color test pattern used as a stand-in style image.
pub fn procedural_style_image(width: u32, height: u32) -> RgbImage {
    RgbImage::from_fn(width, height, |x, y| {
        let (u, v) = (x as f64 / width as f64, y as f64 / height as f64);
        let band = ((4.0 * u + 2.0 * v) * PI).sin();
        [
            0.5 + 0.4 * band,
            0.5 + 0.4 * (2.0 * PI * v).cos(),
            0.45 + 0.35 * ((3.0 * u - v) * PI).cos(),
        ]
    })
}
