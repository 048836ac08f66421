//! On-disk render sequences: posed RGB frames with depth and opacity maps.
//!
//! Layout under a directory: `transforms.json` (poses with `w`/`h`),
//! `images/r_XXXX.png`, `depth/r_XXXX.depth` plus a 16-bit preview
//! `depth/r_XXXX.png`, and `opacity/r_XXXX.opacity`.

use std::fs;
use std::path::Path;

use crate::consistency::RenderedView;
use crate::dataset::{read_manifest, write_manifest, Frame, Manifest, MANIFEST_NAME};
use crate::error::{Error, Result};
use crate::imaging::{RgbImage, ScalarMap};
use crate::camera::Camera;

fn stem(i: usize) -> String {
    format!("r_{i:04}")
}

pub fn save_rendered_views(views: &[RenderedView], dir: &Path) -> Result<()> {
    let first = views.first().ok_or(Error::Empty("render sequence"))?;
    for sub in ["images", "depth", "opacity"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let max_depth = views
        .iter()
        .flat_map(|v| v.depth.data.iter().copied())
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let mut frames = Vec::with_capacity(views.len());
    for (i, v) in views.iter().enumerate() {
        let s = stem(i);
        let rel = format!("images/{s}.png");
        v.rgb.save_png(&dir.join(&rel))?;
        v.depth.save_raw(&dir.join(format!("depth/{s}.depth")))?;
        v.depth.save_png16(&dir.join(format!("depth/{s}.png")), max_depth)?;
        v.opacity.save_raw(&dir.join(format!("opacity/{s}.opacity")))?;
        frames.push(Frame::from_pose(rel, &v.camera.pose));
    }
    let manifest = Manifest {
        camera_angle_x: first.camera.camera_angle_x,
        white_background: None,
        w: Some(first.camera.width),
        h: Some(first.camera.height),
        frames,
    };
    write_manifest(&manifest, &dir.join(MANIFEST_NAME))
}

pub fn load_rendered_views(dir: &Path) -> Result<Vec<RenderedView>> {
    let (manifest, root) = read_manifest(dir)?;
    let manifest_path = root.join(MANIFEST_NAME);
    let (Some(w), Some(h)) = (manifest.w, manifest.h) else {
        return Err(Error::Dataset {
            path: manifest_path,
            message: "render sequence manifest needs 'w' and 'h'".into(),
        });
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
            let camera = Camera::new(w, h, manifest.camera_angle_x, pose)?;
            let s = stem(i);
            let rgb = RgbImage::load(&root.join(&f.file_path), [1.0; 3])?;
            let depth = ScalarMap::load_raw(&root.join(format!("depth/{s}.depth")))?;
            let opacity = ScalarMap::load_raw(&root.join(format!("opacity/{s}.opacity")))?;
            for (what, size) in [
                ("image", (rgb.width, rgb.height)),
                ("depth map", (depth.width, depth.height)),
                ("opacity map", (opacity.width, opacity.height)),
            ] {
                if size != (w, h) {
                    return Err(Error::Dataset {
                        path: manifest_path.clone(),
                        message: format!("frame {i}: {what} is {}x{}, expected {w}x{h}", size.0, size.1),
                    });
                }
            }
            Ok(RenderedView {
                camera,
                rgb,
                depth,
                opacity,
            })
        })
        .collect()
}
