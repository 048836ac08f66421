//! Multi-view consistency via depth-based backward warping.
//!
//! View `j` is warped into view `i` using the rendered expected depth of
//! `i`, and the masked RMS color difference measures disagreement. This is
//! a photometric stand-in for a perceptual metric.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::imaging::{RgbImage, ScalarMap};

pub const DEFAULT_GAPS: [usize; 2] = [5, 15];

/// Label written into every report.
pub const METRIC_NAME: &str = "masked RMSE (photometric substitute for a perceptual metric)";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarpParams {
    /// Allowed gap between reprojected distance and the target's depth.
    pub depth_tolerance: f64,
    /// Minimum source opacity for a pixel to take part.
    pub opacity_threshold: f64,
}

impl Default for WarpParams {
    fn default() -> Self {
        WarpParams {
            depth_tolerance: 0.02,
            opacity_threshold: 0.5,
        }
    }
}

/// One rendered frame with the geometry needed for warping.
#[derive(Clone, Debug)]
pub struct RenderedView {
    pub camera: Camera,
    pub rgb: RgbImage,
    pub depth: ScalarMap,
    pub opacity: ScalarMap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WarpResult {
    pub width: u32,
    pub height: u32,
    pub warped: RgbImage,
    pub mask: Vec<bool>,
    /// Reprojected continuous coordinates in the other view, when in front
    /// of its camera.
    pub coords: Vec<Option<(f64, f64)>>,
}

impl WarpResult {
    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

fn check_size(what: &'static str, w: u32, h: u32, got: (u32, u32)) -> Result<()> {
    if (w, h) != got {
        return Err(Error::dims(what, (w as usize) * (h as usize), got.0 as usize * got.1 as usize));
    }
    Ok(())
}

/// Bilinear lookup at continuous coordinates with pixel centers at
/// `i + 0.5`. `None` outside the pixel-center hull.
fn bilinear<T: Copy>(
    w: u32,
    h: u32,
    u: f64,
    v: f64,
    get: impl Fn(usize) -> T,
    lerp: impl Fn(T, T, f64) -> T,
) -> Option<T> {
    const SLACK: f64 = 1e-9;
    let (x, y) = (u - 0.5, v - 0.5);
    let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);
    if !(x >= -SLACK && y >= -SLACK && x <= xmax + SLACK && y <= ymax + SLACK) {
        return None;
    }
    let (x, y) = (x.clamp(0.0, xmax), y.clamp(0.0, ymax));
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w as usize - 1), (y0 + 1).min(h as usize - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let idx = |xx: usize, yy: usize| yy * w as usize + xx;
    let top = lerp(get(idx(x0, y0)), get(idx(x1, y0)), fx);
    let bottom = lerp(get(idx(x0, y1)), get(idx(x1, y1)), fx);
    Some(lerp(top, bottom, fy))
}

fn lerp_f(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a + (b - a) * t
    }
}

fn lerp_rgb(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|c| lerp_f(a[c], b[c], t))
}

/// Warped color, validity and sample position of one source pixel.
type WarpedPixel = ([f64; 3], bool, Option<(f64, f64)>);

/// Warps `target` (seen from `camera_j`) into the frame of `camera_i`.
pub fn backward_warp(
    source: &RenderedView,
    target: &RenderedView,
    params: &WarpParams,
) -> Result<WarpResult> {
    let (w, h) = (source.camera.width, source.camera.height);
    check_size("source image", w, h, (source.rgb.width, source.rgb.height))?;
    check_size("source depth", w, h, (source.depth.width, source.depth.height))?;
    check_size("source opacity", w, h, (source.opacity.width, source.opacity.height))?;
    check_size("target camera", w, h, (target.camera.width, target.camera.height))?;
    check_size("target image", w, h, (target.rgb.width, target.rgb.height))?;
    check_size("target depth", w, h, (target.depth.width, target.depth.height))?;
    source.camera.validate()?;
    target.camera.validate()?;
    let origin_j = target.camera.origin();
    let per_pixel: Vec<WarpedPixel> = (0..source.camera.pixel_count())
        .into_par_iter()
        .map(|p| {
            let (x, y) = ((p % w as usize) as u32, (p / w as usize) as u32);
            let ray = source.camera.ray_through(x as f64 + 0.5, y as f64 + 0.5);
            let point = ray.at(source.depth.data[p]);
            let Some((u, v)) = target.camera.project(&point) else {
                return ([0.0; 3], false, None);
            };
            let color = bilinear(w, h, u, v, |i| target.rgb.data[i], lerp_rgb);
            let depth = bilinear(w, h, u, v, |i| target.depth.data[i], lerp_f);
            match (color, depth) {
                (Some(c), Some(d)) => {
                    let dist = (point - origin_j).norm();
                    let ok = source.opacity.data[p] > params.opacity_threshold
                        && (dist - d).abs() < params.depth_tolerance;
                    (c, ok, Some((u, v)))
                }
                _ => ([0.0; 3], false, Some((u, v))),
            }
        })
        .collect();
    let mut warped = RgbImage::filled(w, h, [0.0; 3]);
    let mut mask = Vec::with_capacity(per_pixel.len());
    let mut coords = Vec::with_capacity(per_pixel.len());
    for (i, (c, m, uv)) in per_pixel.into_iter().enumerate() {
        warped.data[i] = c;
        mask.push(m);
        coords.push(uv);
    }
    Ok(WarpResult {
        width: w,
        height: h,
        warped,
        mask,
        coords,
    })
}

/// Root-mean-square color difference over the masked pixels.
pub fn masked_error(image: &RgbImage, warp: &WarpResult) -> Result<f64> {
    check_size("warp result", image.width, image.height, (warp.width, warp.height))?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((a, b), &m) in image.data.iter().zip(&warp.warped.data).zip(&warp.mask) {
        if m {
            sum += (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Empty("warp mask has no valid pixel"));
    }
    Ok((sum / (3 * count) as f64).sqrt())
}

/// Error of the pair `(i, j)`: the mean of both warp directions, or the
/// one direction whose mask is non-empty. `None` when neither is.
pub fn pair_error(a: &RenderedView, b: &RenderedView, params: &WarpParams) -> Result<Option<f64>> {
    let mut errs = Vec::with_capacity(2);
    for (src, dst) in [(a, b), (b, a)] {
        let warp = backward_warp(src, dst, params)?;
        if warp.valid_count() > 0 {
            errs.push(masked_error(&src.rgb, &warp)?);
        }
    }
    Ok(match errs.len() {
        0 => None,
        n => Some(errs.iter().sum::<f64>() / n as f64),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapScore {
    pub gap: usize,
    /// Pairs that contributed a score.
    pub pairs: usize,
    /// Pairs skipped because no pixel survived the mask.
    pub skipped: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub metric: String,
    pub params: WarpParams,
    pub views: usize,
    pub gaps: Vec<GapScore>,
}

impl ConsistencyReport {
    pub fn score(&self, gap: usize) -> Option<&GapScore> {
        self.gaps.iter().find(|g| g.gap == gap)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# metric: {}\n# views: {}  depth tolerance: {}  opacity threshold: {}\n",
            self.metric, self.views, self.params.depth_tolerance, self.params.opacity_threshold
        );
        s.push_str("gap\tpairs\tskipped\tmean\tstd\n");
        for g in &self.gaps {
            s.push_str(&format!("{}\t{}\t{}\t{:.6}\t{:.6}\n", g.gap, g.pairs, g.skipped, g.mean, g.std));
        }
        s
    }
}

/// Scores every pair `(i, i + gap)` of a view sequence for each gap.
pub fn consistency_score(views: &[RenderedView], gaps: &[usize], params: &WarpParams) -> Result<ConsistencyReport> {
    if gaps.is_empty() {
        return Err(Error::Empty("gap list"));
    }
    if let Some(&g) = gaps.iter().find(|&&g| g == 0) {
        return Err(Error::out_of_range("gap", g, ">= 1"));
    }
    let max_gap = *gaps.iter().max().unwrap();
    if views.len() < max_gap + 1 {
        return Err(Error::InvalidArgument(format!(
            "sequence of {} views is too short for gap {max_gap} (need {})",
            views.len(),
            max_gap + 1
        )));
    }
    let mut out = Vec::with_capacity(gaps.len());
    for &gap in gaps {
        let mut scores = Vec::new();
        let mut skipped = 0;
        for i in 0..views.len() - gap {
            match pair_error(&views[i], &views[i + gap], params)? {
                Some(e) => scores.push(e),
                None => skipped += 1,
            }
        }
        let (mean, std) = if scores.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let n = scores.len() as f64;
            let mean = scores.iter().sum::<f64>() / n;
            let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        };
        out.push(GapScore {
            gap,
            pairs: scores.len(),
            skipped,
            mean,
            std,
        });
    }
    Ok(ConsistencyReport {
        metric: METRIC_NAME.to_string(),
        params: *params,
        views: views.len(),
        gaps: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{look_at, Vec3};
    use nalgebra::{Matrix3, Vector3};

    const W: u32 = 24;
    const H: u32 = 20;
    const FOV: f64 = 0.8;
    const PLANE_Z: f64 = 0.5;

    fn camera(eye: Vec3) -> Camera {
        Camera::new(W, H, FOV, look_at(eye, Vec3::new(0.5, 0.5, PLANE_Z), Vec3::y())).unwrap()
    }

    fn texture(p: &Vec3) -> [f64; 3] {
        [0.5 + 0.5 * (9.0 * p.x).sin(), 0.5 + 0.5 * (7.0 * p.y).cos(), 0.5 + 0.3 * (5.0 * (p.x + p.y)).sin()]
    }

    /// Analytic render of the textured plane `z = PLANE_Z`.
    fn plane_view(cam: Camera) -> RenderedView {
        let mut rgb = RgbImage::filled(W, H, [1.0; 3]);
        let mut depth = vec![0.0; cam.pixel_count()];
        let mut opacity = vec![0.0; cam.pixel_count()];
        for (i, ray) in cam.all_rays().iter().enumerate() {
            if ray.direction.z.abs() < 1e-12 {
                continue;
            }
            let t = (PLANE_Z - ray.origin.z) / ray.direction.z;
            if t > 0.0 {
                rgb.data[i] = texture(&ray.at(t));
                depth[i] = t;
                opacity[i] = 1.0;
            }
        }
        RenderedView {
            camera: cam,
            rgb,
            depth: ScalarMap { width: W, height: H, data: depth },
            opacity: ScalarMap { width: W, height: H, data: opacity },
        }
    }

    #[test]
    fn identity_warp() {
        let v = plane_view(camera(Vec3::new(0.6, 0.4, 2.0)));
        let warp = backward_warp(&v, &v, &WarpParams::default()).unwrap();
        for (i, &m) in warp.mask.iter().enumerate() {
            assert_eq!(m, v.opacity.data[i] > 0.5);
            if m {
                for c in 0..3 {
                    assert!((warp.warped.data[i][c] - v.rgb.data[i][c]).abs() < 1e-9);
                }
            }
        }
        assert!(warp.valid_count() > 0);
        assert!(masked_error(&v.rgb, &warp).unwrap() < 1e-9);
    }

    #[test]
    fn out_of_view_is_masked() {
        let a = plane_view(camera(Vec3::new(0.5, 0.5, 2.0)));
        let b = plane_view(Camera::new(W, H, FOV, look_at(Vec3::new(0.5, 0.5, 2.0), Vec3::new(3.0, 0.5, 1.5), Vec3::y())).unwrap());
        let warp = backward_warp(&a, &b, &WarpParams::default()).unwrap();
        for (i, uv) in warp.coords.iter().enumerate() {
            let inside = matches!(uv, Some((u, v)) if *u >= 0.5 && *u <= W as f64 - 0.5 && *v >= 0.5 && *v <= H as f64 - 0.5);
            if !inside {
                assert!(!warp.mask[i]);
            }
        }
        assert!(warp.mask.iter().any(|m| !m));
    }

    fn intrinsics() -> Matrix3<f64> {
        let f = 0.5 * W as f64 / (0.5 * FOV).tan();
        // image y grows downward and the camera looks down -z
        Matrix3::new(f, 0.0, 0.5 * W as f64, 0.0, -f, 0.5 * H as f64, 0.0, 0.0, 1.0)
            * Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0)
    }

    #[test]
    fn warp_matches_plane_homography() {
        let ci = camera(Vec3::new(0.45, 0.55, 1.9));
        let cj = camera(Vec3::new(0.75, 0.35, 1.7));
        let (a, b) = (plane_view(ci.clone()), plane_view(cj.clone()));
        let warp = backward_warp(&a, &b, &WarpParams::default()).unwrap();
        // world-from-camera rotation and translation
        let rot = |c: &Camera| c.pose.fixed_view::<3, 3>(0, 0).into_owned();
        let (ri, rj) = (rot(&ci), rot(&cj));
        let (oi, oj) = (ci.origin(), cj.origin());
        // plane n.X = d in camera-i coordinates
        let n_w = Vector3::new(0.0, 0.0, 1.0);
        let n_i = ri.transpose() * n_w;
        let d_i = PLANE_Z - n_w.dot(&oi);
        let r_ji = rj.transpose() * ri;
        let t_ji = rj.transpose() * (oi - oj);
        let k = intrinsics();
        let hmat = k * (r_ji + t_ji * n_i.transpose() / d_i) * k.try_inverse().unwrap();
        let mut checked = 0;
        for y in 0..H {
            for x in 0..W {
                let p = (y * W + x) as usize;
                if !warp.mask[p] {
                    continue;
                }
                let q = hmat * Vector3::new(x as f64 + 0.5, y as f64 + 0.5, 1.0);
                let (u, v) = warp.coords[p].unwrap();
                assert!((u - q.x / q.z).abs() < 0.5 && (v - q.y / q.z).abs() < 0.5, "pixel ({x},{y})");
                assert!((u - q.x / q.z).abs() < 1e-6 && (v - q.y / q.z).abs() < 1e-6);
                checked += 1;
            }
        }
        assert!(checked > 50, "only {checked} pixels checked");
    }

    #[test]
    fn mask_shrinks_with_tolerance() {
        let a = plane_view(camera(Vec3::new(0.45, 0.55, 1.9)));
        let mut b = plane_view(camera(Vec3::new(0.8, 0.3, 1.6)));
        // perturb the depth so tolerance matters
        for (i, d) in b.depth.data.iter_mut().enumerate() {
            *d += 0.03 * ((i % 7) as f64 / 6.0 - 0.5);
        }
        let mut last = usize::MAX;
        for tol in [1.0, 0.02, 0.01, 0.005, 0.001] {
            let warp = backward_warp(&a, &b, &WarpParams { depth_tolerance: tol, ..Default::default() }).unwrap();
            assert!(warp.valid_count() <= last);
            last = warp.valid_count();
        }
    }

    #[test]
    fn masked_error_examples() {
        let v = plane_view(camera(Vec3::new(0.5, 0.5, 2.0)));
        let mut warp = backward_warp(&v, &v, &WarpParams::default()).unwrap();
        warp.warped = v.rgb.clone();
        assert_eq!(masked_error(&v.rgb, &warp).unwrap(), 0.0);
        for (c, m) in warp.warped.data.iter_mut().zip(&warp.mask) {
            if *m {
                *c = c.map(|x| x + 0.1);
            }
        }
        assert!((masked_error(&v.rgb, &warp).unwrap() - 0.1).abs() < 1e-12);
        // scalar loop oracle on an irregular difference
        for (i, c) in warp.warped.data.iter_mut().enumerate() {
            c[i % 3] += (i as f64 * 0.37).sin() * 0.2;
        }
        let mut sum = 0.0;
        let mut n = 0.0;
        for i in 0..warp.mask.len() {
            if warp.mask[i] {
                for c in 0..3 {
                    let d = v.rgb.data[i][c] - warp.warped.data[i][c];
                    sum += d * d;
                    n += 1.0;
                }
            }
        }
        assert!((masked_error(&v.rgb, &warp).unwrap() - (sum / n).sqrt()).abs() < 1e-10);
        warp.mask.iter_mut().for_each(|m| *m = false);
        assert!(masked_error(&v.rgb, &warp).is_err());
    }

    fn orbit(n: usize) -> Vec<RenderedView> {
        (0..n)
            .map(|i| {
                let a = i as f64 * 0.05;
                plane_view(camera(Vec3::new(0.5 + 0.4 * a.cos(), 0.5 + 0.4 * a.sin(), 1.9)))
            })
            .collect()
    }

    #[test]
    fn pair_counts_and_static_zero() {
        let still: Vec<RenderedView> = (0..20).map(|_| plane_view(camera(Vec3::new(0.5, 0.4, 2.0)))).collect();
        let r = consistency_score(&still, &DEFAULT_GAPS, &WarpParams::default()).unwrap();
        assert_eq!(r.score(5).unwrap().pairs, 15);
        assert_eq!(r.score(15).unwrap().pairs, 5);
        assert!(r.gaps.iter().all(|g| g.mean < 1e-9));
        assert!(consistency_score(&still[..15], &DEFAULT_GAPS, &WarpParams::default()).is_err());
        assert!(r.to_text().contains("masked RMSE"));
    }

    #[test]
    fn reversed_path_gives_same_scores() {
        let views = orbit(18);
        let mut rev = views.clone();
        rev.reverse();
        let p = WarpParams::default();
        let a = consistency_score(&views, &[3, 7], &p).unwrap();
        let b = consistency_score(&rev, &[3, 7], &p).unwrap();
        for (x, y) in a.gaps.iter().zip(&b.gaps) {
            assert_eq!(x.pairs, y.pairs);
            assert!((x.mean - y.mean).abs() < 1e-12);
        }
    }
}
