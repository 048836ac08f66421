//! Posed image datasets in the `transforms.json` layout.
//!
//! A dataset directory holds a manifest with `camera_angle_x` and a list of
//! frames, each with a `file_path` (relative to the manifest, extension
//! optional) and a 4×4 camera-to-world `transform_matrix`. Optional keys:
//! `white_background` (bool) and `w`/`h` (image size, required only for
//! pose files that carry no images).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Ray};
use crate::error::{Error, Result};
use crate::geometry::Mat4;
use crate::imaging::RgbImage;

pub const MANIFEST_NAME: &str = "transforms.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    White,
    Black,
}

impl Background {
    pub fn rgb(self) -> [f64; 3] {
        match self {
            Background::White => [1.0; 3],
            Background::Black => [0.0; 3],
        }
    }
}

impl std::str::FromStr for Background {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white" => Ok(Background::White),
            "black" => Ok(Background::Black),
            other => Err(Error::InvalidArgument(format!(
                "unknown background '{other}' (expected white or black)"
            ))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub camera_angle_x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub white_background: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<u32>,
    pub frames: Vec<Frame>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Frame {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub file_path: String,
    pub transform_matrix: Vec<Vec<f64>>,
}

impl Frame {
    pub fn pose(&self) -> std::result::Result<Mat4, String> {
        let m = &self.transform_matrix;
        if m.len() != 4 || m.iter().any(|row| row.len() != 4) {
            let cols = m.first().map_or(0, Vec::len);
            return Err(format!(
                "transform_matrix must be 4x4, found {}x{}",
                m.len(),
                cols
            ));
        }
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err("transform_matrix contains non-finite values".into());
        }
        Ok(Mat4::from_fn(|r, c| m[r][c]))
    }

    pub fn from_pose(file_path: String, pose: &Mat4) -> Self {
        Frame {
            file_path,
            transform_matrix: (0..4).map(|r| (0..4).map(|c| pose[(r, c)]).collect()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub pose: Mat4,
    pub image: RgbImage,
    pub file_path: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewDataset {
    pub camera_angle_x: f64,
    pub width: u32,
    pub height: u32,
    pub background: Background,
    pub views: Vec<View>,
}

impl ViewDataset {
    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::Empty("dataset has no views"));
        }
        for (i, v) in self.views.iter().enumerate() {
            if (v.image.width, v.image.height) != (self.width, self.height) {
                return Err(Error::InvalidArgument(format!(
                    "view {i} is {}x{} but the dataset is {}x{}",
                    v.image.width, v.image.height, self.width, self.height
                )));
            }
            self.camera(i)?;
        }
        Ok(())
    }

    pub fn camera(&self, index: usize) -> Result<Camera> {
        Camera::new(self.width, self.height, self.camera_angle_x, self.views[index].pose)
    }

    pub fn cameras(&self) -> Result<Vec<Camera>> {
        (0..self.views.len()).map(|i| self.camera(i)).collect()
    }

    pub fn pixel_count(&self) -> usize {
        self.views.len() * self.width as usize * self.height as usize
    }

    /// Every pixel ray of every view with its target color, view-major.
    pub fn ray_pool(&self) -> Result<(Vec<Ray>, Vec<[f64; 3]>)> {
        let mut rays = Vec::with_capacity(self.pixel_count());
        let mut targets = Vec::with_capacity(self.pixel_count());
        for (i, v) in self.views.iter().enumerate() {
            rays.extend(self.camera(i)?.all_rays());
            targets.extend_from_slice(&v.image.data);
        }
        Ok((rays, targets))
    }
}

fn resolve_manifest(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    }
}

pub fn read_manifest(path: &Path) -> Result<(Manifest, PathBuf)> {
    let manifest_path = resolve_manifest(path);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::Dataset {
        path: manifest_path.clone(),
        message: format!("cannot read manifest: {e}"),
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Dataset {
        path: manifest_path.clone(),
        message: format!("invalid manifest: {e}"),
    })?;
    if manifest.frames.is_empty() {
        return Err(Error::Dataset {
            path: manifest_path,
            message: "manifest lists no frames".into(),
        });
    }
    let base = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    Ok((manifest, base))
}

fn frame_image_path(base: &Path, file_path: &str) -> PathBuf {
    let p = base.join(file_path);
    if p.exists() {
        return p;
    }
    let with_ext = base.join(format!("{file_path}.png"));
    if with_ext.exists() {
        with_ext
    } else {
        p
    }
}

/// Loads a dataset directory (or manifest path). `background` overrides the
/// manifest's `white_background` flag; white is the fallback.
pub fn load_dataset(path: &Path, background: Option<Background>) -> Result<ViewDataset> {
    let (manifest, base) = read_manifest(path)?;
    let manifest_path = resolve_manifest(path);
    let bg = background.unwrap_or(match manifest.white_background {
        Some(false) => Background::Black,
        _ => Background::White,
    });
    let mut views = Vec::with_capacity(manifest.frames.len());
    for (i, frame) in manifest.frames.iter().enumerate() {
        let pose = frame.pose().map_err(|message| Error::Dataset {
            path: manifest_path.clone(),
            message: format!("frame {i}: {message}"),
        })?;
        if frame.file_path.is_empty() {
            return Err(Error::Dataset {
                path: manifest_path.clone(),
                message: format!("frame {i} has no file_path"),
            });
        }
        let image_path = frame_image_path(&base, &frame.file_path);
        let image = RgbImage::load(&image_path, bg.rgb())?;
        views.push(View {
            pose,
            image,
            file_path: frame.file_path.clone(),
        });
    }
    let (width, height) = (views[0].image.width, views[0].image.height);
    let ds = ViewDataset {
        camera_angle_x: manifest.camera_angle_x,
        width,
        height,
        background: bg,
        views,
    };
    ds.validate().map_err(|e| Error::Dataset {
        path: manifest_path,
        message: e.to_string(),
    })?;
    Ok(ds)
}

/// Writes `dir/transforms.json` and one PNG per view under `dir/images/`.
pub fn save_dataset(ds: &ViewDataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut frames = Vec::with_capacity(ds.views.len());
    for (i, v) in ds.views.iter().enumerate() {
        let rel = format!("images/r_{i:04}.png");
        v.image.save_png(&dir.join(&rel))?;
        frames.push(Frame::from_pose(rel, &v.pose));
    }
    let manifest = Manifest {
        camera_angle_x: ds.camera_angle_x,
        white_background: Some(ds.background == Background::White),
        w: Some(ds.width),
        h: Some(ds.height),
        frames,
    };
    write_manifest(&manifest, &dir.join(MANIFEST_NAME))
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Cameras from a pose file in the manifest layout. Image size comes from
/// `w`/`h`, falling back to `resolution`.
pub fn load_poses(path: &Path, resolution: Option<(u32, u32)>) -> Result<Vec<Camera>> {
    let (manifest, _) = read_manifest(path)?;
    let manifest_path = resolve_manifest(path);
    let (w, h) = match (manifest.w, manifest.h, resolution) {
        (_, _, Some(r)) => r,
        (Some(w), Some(h), None) => (w, h),
        _ => {
            return Err(Error::Dataset {
                path: manifest_path,
                message: "pose file needs 'w' and 'h' (or an explicit resolution)".into(),
            })
        }
    };
    manifest
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let pose = f.pose().map_err(|message| Error::Dataset {
                path: manifest_path.clone(),
                message: format!("frame {i}: {message}"),
            })?;
            Camera::new(w, h, manifest.camera_angle_x, pose)
        })
        .collect()
}

/// Writes a pose-only manifest for `cameras` (all must share intrinsics).
pub fn save_poses(cameras: &[Camera], path: &Path) -> Result<()> {
    let first = cameras.first().ok_or(Error::Empty("pose list"))?;
    let manifest = Manifest {
        camera_angle_x: first.camera_angle_x,
        white_background: None,
        w: Some(first.width),
        h: Some(first.height),
        frames: cameras
            .iter()
            .map(|c| Frame::from_pose(String::new(), &c.pose))
            .collect(),
    };
    write_manifest(&manifest, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_one_view(dir: &Path, matrix: &str) {
        let img = RgbImage::from_fn(5, 3, |x, _| [x as f64 / 4.0, 0.2, 0.9]);
        fs::create_dir_all(dir.join("train")).unwrap();
        img.save_png(&dir.join("train/r_0.png")).unwrap();
        fs::write(
            dir.join(MANIFEST_NAME),
            format!(r#"{{"camera_angle_x": 0.6911112070083618, "frames": [{{"file_path": "./train/r_0", "transform_matrix": {matrix}}}]}}"#),
        )
        .unwrap();
    }

    const POSE: &str = "[[-0.9999021887779236, 0.004192245192825794, -0.013345719315111637, -0.05379832163453102], [-0.013988681137561798, -0.2996590733528137, 0.95394366979599, 3.845470428466797], [-4.656612873077393e-10, 0.9540371894836426, 0.29968830943107605, 1.2080823183059692], [0.0, 0.0, 0.0, 1.0]]";

    #[test]
    fn minimal_dataset_loads() {
        let dir = tempfile::tempdir().unwrap();
        write_one_view(dir.path(), POSE);
        let ds = load_dataset(dir.path(), None).unwrap();
        assert_eq!((ds.width, ds.height, ds.views.len()), (5, 3, 1));
        assert_eq!(ds.background, Background::White);
        // poses pass through untouched
        assert_eq!(ds.views[0].pose[(0, 0)], -0.9999021887779236);
        assert_eq!(ds.views[0].pose[(1, 3)], 3.845470428466797);
        assert_eq!(ds.views[0].pose[(2, 0)], -4.656612873077393e-10);
    }

    #[test]
    fn three_by_four_pose_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_one_view(dir.path(), "[[1,0,0,0],[0,1,0,0],[0,0,1,0]]");
        let err = load_dataset(dir.path(), None).unwrap_err();
        assert!(err.to_string().contains("must be 4x4"), "{err}");
    }

    #[test]
    fn missing_manifest_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path(), None), Err(Error::Dataset { .. })));
    }

    #[test]
    fn rgba_composites_over_background() {
        let dir = tempfile::tempdir().unwrap();
        write_one_view(dir.path(), POSE);
        let rgba = image::RgbaImage::from_pixel(5, 3, image::Rgba([255, 0, 0, 0]));
        rgba.save(dir.path().join("train/r_0.png")).unwrap();
        let ds = load_dataset(dir.path(), Some(Background::Black)).unwrap();
        assert!(ds.views[0].image.data.iter().all(|p| *p == [0.0; 3]));
    }
}
