//! Stratified ray sampling, emission–absorption compositing (with its exact
//! reverse pass) and full-image rendering.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Ray};
use crate::error::{Error, Result};
use crate::geometry::Aabb;
use crate::imaging::{RgbImage, ScalarMap};
use crate::model::{Branch, RadianceModel};
use crate::sh::{sh_unit, SH_COEFFS};

/// Guard against division by a vanishing opacity in the expected depth.
pub const DEPTH_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Midpoint of each stratum; fully deterministic.
    Midpoint,
    /// One uniform draw per stratum.
    Stratified,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub n_samples: usize,
    pub mode: SamplingMode,
    pub seed: u64,
    pub background: [f64; 3],
    pub bounds: Aabb,
    pub rays_per_chunk: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            n_samples: 128,
            mode: SamplingMode::Midpoint,
            seed: 0,
            background: [1.0; 3],
            bounds: Aabb::unit(),
            rays_per_chunk: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub rgb: RgbImage,
    pub depth: ScalarMap,
    pub opacity: ScalarMap,
}

/// Sorted sample distances along `ray`, one per equal sub-interval of
/// `[t_near, t_far]`.
pub fn sample_points<R: Rng + ?Sized>(
    ray: &Ray,
    n_samples: usize,
    mode: SamplingMode,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if n_samples == 0 {
        return Err(Error::out_of_range("n_samples", 0, ">= 1"));
    }
    if !(ray.t_near.is_finite() && ray.t_far.is_finite() && ray.t_near < ray.t_far) {
        return Err(Error::InvalidArgument(format!(
            "ray interval [{}, {}] cannot be sampled",
            ray.t_near, ray.t_far
        )));
    }
    let mut ts = Vec::with_capacity(n_samples);
    push_samples(ray.t_near, ray.t_far, n_samples, mode, rng, &mut ts);
    Ok(ts)
}

#[inline]
fn push_samples<R: Rng + ?Sized>(
    t_near: f64,
    t_far: f64,
    n: usize,
    mode: SamplingMode,
    rng: &mut R,
    out: &mut Vec<f64>,
) {
    let step = (t_far - t_near) / n as f64;
    for i in 0..n {
        let u: f64 = match mode {
            SamplingMode::Midpoint => 0.5,
            SamplingMode::Stratified => rng.gen(),
        };
        out.push((t_near + (i as f64 + u) * step).min(t_far));
    }
}

/// Composited ray quantities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Composite {
    pub color: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
}

/// Upstream gradients with respect to a [`Composite`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CompositeGrad {
    pub color: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
}

fn check_composite_inputs(sigmas: &[f64], rgbs: &[[f64; 3]], ts: &[f64], t_far: f64) -> Result<()> {
    if sigmas.len() != ts.len() {
        return Err(Error::dims("composite densities", ts.len(), sigmas.len()));
    }
    if rgbs.len() != ts.len() {
        return Err(Error::dims("composite colors", ts.len(), rgbs.len()));
    }
    if ts.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(
            "sample distances must be strictly increasing".into(),
        ));
    }
    if let Some(&last) = ts.last() {
        if !(t_far >= last) {
            return Err(Error::InvalidArgument(format!(
                "t_far {t_far} precedes the last sample {last}"
            )));
        }
    }
    Ok(())
}

#[inline]
fn delta(ts: &[f64], i: usize, t_far: f64) -> f64 {
    if i + 1 < ts.len() {
        ts[i + 1] - ts[i]
    } else {
        t_far - ts[i]
    }
}

/// Emission–absorption quadrature along one ray.
pub fn composite(
    sigmas: &[f64],
    rgbs: &[[f64; 3]],
    ts: &[f64],
    t_far: f64,
    background: [f64; 3],
) -> Result<Composite> {
    check_composite_inputs(sigmas, rgbs, ts, t_far)?;
    Ok(composite_unchecked(sigmas, rgbs, ts, t_far, background))
}

#[inline]
pub(crate) fn composite_unchecked(
    sigmas: &[f64],
    rgbs: &[[f64; 3]],
    ts: &[f64],
    t_far: f64,
    background: [f64; 3],
) -> Composite {
    let mut trans = 1.0;
    let mut color = [0.0; 3];
    let mut depth_sum = 0.0;
    let mut opacity = 0.0;
    for i in 0..ts.len() {
        let alpha = 1.0 - (-sigmas[i] * delta(ts, i, t_far)).exp();
        let w = trans * alpha;
        for c in 0..3 {
            color[c] += w * rgbs[i][c];
        }
        depth_sum += w * ts[i];
        opacity += w;
        trans *= 1.0 - alpha;
    }
    for c in 0..3 {
        color[c] += trans * background[c];
    }
    Composite {
        color,
        depth: depth_sum / opacity.max(DEPTH_EPS),
        opacity,
    }
}

/// Exact reverse pass of [`composite`]. Returns `(d sigma, d rgb)`.
pub fn composite_backward(
    sigmas: &[f64],
    rgbs: &[[f64; 3]],
    ts: &[f64],
    t_far: f64,
    background: [f64; 3],
    upstream: &CompositeGrad,
) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
    check_composite_inputs(sigmas, rgbs, ts, t_far)?;
    let mut d_sigma = vec![0.0; ts.len()];
    let mut d_rgb = vec![[0.0; 3]; ts.len()];
    composite_backward_unchecked(sigmas, rgbs, ts, t_far, background, upstream, &mut d_sigma, &mut d_rgb);
    Ok((d_sigma, d_rgb))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn composite_backward_unchecked(
    sigmas: &[f64],
    rgbs: &[[f64; 3]],
    ts: &[f64],
    t_far: f64,
    background: [f64; 3],
    upstream: &CompositeGrad,
    d_sigma: &mut [f64],
    d_rgb: &mut [[f64; 3]],
) {
    let n = ts.len();
    // forward recomputation: T_{i+1} and weights
    let mut trans_after = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let mut trans = 1.0;
    let mut depth_sum = 0.0;
    let mut opacity = 0.0;
    for i in 0..n {
        let alpha = 1.0 - (-sigmas[i] * delta(ts, i, t_far)).exp();
        weights[i] = trans * alpha;
        depth_sum += weights[i] * ts[i];
        opacity += weights[i];
        trans *= 1.0 - alpha;
        trans_after[i] = trans;
    }
    let t_final = trans;
    let g_num = upstream.depth / opacity.max(DEPTH_EPS);
    let g_op = if opacity > DEPTH_EPS {
        upstream.opacity - upstream.depth * depth_sum / (opacity * opacity)
    } else {
        upstream.opacity
    };
    let gc = upstream.color;
    let value = |i: usize| gc[0] * rgbs[i][0] + gc[1] * rgbs[i][1] + gc[2] * rgbs[i][2] + g_num * ts[i] + g_op;
    let bg_value = gc[0] * background[0] + gc[1] * background[1] + gc[2] * background[2];
    // suffix term: sum_{i>k} w_i v_i + T_final * v_bg
    let mut suffix = t_final * bg_value;
    for k in (0..n).rev() {
        let v = value(k);
        d_sigma[k] = delta(ts, k, t_far) * (trans_after[k] * v - suffix);
        suffix += weights[k] * v;
        for c in 0..3 {
            d_rgb[k][c] = weights[k] * gc[c];
        }
    }
}

/// Samples along a chunk of rays, laid out contiguously.
pub(crate) struct ChunkSamples {
    /// Per input ray: `Some((first sample, t_far))` when it hits the bounds.
    pub spans: Vec<Option<(usize, f64)>>,
    pub n_per_ray: usize,
    pub positions: Vec<[f64; 3]>,
    pub ts: Vec<f64>,
    pub dir_enc: Vec<f64>,
}

impl ChunkSamples {
    pub fn build(
        rays: &[Ray],
        bounds: &Aabb,
        n_samples: usize,
        mode: SamplingMode,
        mut rng_for: impl FnMut(usize) -> ChaCha8Rng,
    ) -> Self {
        let mut spans = Vec::with_capacity(rays.len());
        let mut positions = Vec::new();
        let mut ts = Vec::new();
        let mut dir_enc = Vec::new();
        for (i, ray) in rays.iter().enumerate() {
            let Some(clipped) = ray.clip(bounds) else {
                spans.push(None);
                continue;
            };
            let start = ts.len();
            match mode {
                SamplingMode::Midpoint => {
                    push_samples(clipped.t_near, clipped.t_far, n_samples, mode, &mut NoRng, &mut ts)
                }
                SamplingMode::Stratified => {
                    let mut rng = rng_for(i);
                    push_samples(clipped.t_near, clipped.t_far, n_samples, mode, &mut rng, &mut ts)
                }
            }
            let d = clipped.direction;
            let enc = sh_unit([d.x, d.y, d.z]);
            for &t in &ts[start..] {
                let p = clipped.at(t);
                positions.push([p.x, p.y, p.z]);
                dir_enc.extend_from_slice(&enc);
            }
            spans.push(Some((start, clipped.t_far)));
        }
        debug_assert_eq!(dir_enc.len(), positions.len() * SH_COEFFS);
        ChunkSamples {
            spans,
            n_per_ray: n_samples,
            positions,
            ts,
            dir_enc,
        }
    }

    pub fn len(&self) -> usize {
        self.ts.len()
    }
}

/// Placeholder generator for midpoint sampling, which never draws.
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("midpoint sampling draws no random numbers")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("midpoint sampling draws no random numbers")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("midpoint sampling draws no random numbers")
    }
    fn try_fill_bytes(&mut self, _: &mut [u8]) -> std::result::Result<(), rand::Error> {
        unreachable!("midpoint sampling draws no random numbers")
    }
}

/// Deterministic per-stream seed derivation (SplitMix64 finalizer).
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-sample rewrite of the feature vector fed to the color MLP.
pub type FeatureTransform<'a> = &'a (dyn Fn(&mut [f64]) + Sync);

/// Renders a full image through one branch.
pub fn render_image(
    model: &RadianceModel,
    branch: Branch,
    camera: &Camera,
    config: &RenderConfig,
) -> Result<RenderOutput> {
    render_with(model, branch, camera, config, None)
}

/// Renders a full image, optionally rewriting each sample's feature vector
/// before the color MLP. Densities always come from the unmodified features.
pub fn render_with(
    model: &RadianceModel,
    branch: Branch,
    camera: &Camera,
    config: &RenderConfig,
    transform: Option<FeatureTransform<'_>>,
) -> Result<RenderOutput> {
    camera.validate()?;
    if config.n_samples == 0 {
        return Err(Error::out_of_range("n_samples", 0, ">= 1"));
    }
    let rays = camera.all_rays();
    let chunk = config.rays_per_chunk.max(1);
    let pieces: Vec<Vec<Composite>> = rays
        .par_chunks(chunk)
        .enumerate()
        .map(|(ci, rays)| render_chunk(model, branch, rays, ci * chunk, config, transform))
        .collect::<Result<_>>()?;
    let (w, h) = (camera.width, camera.height);
    let mut rgb = RgbImage::filled(w, h, [0.0; 3]);
    let n = camera.pixel_count();
    let mut depth = vec![0.0; n];
    let mut opacity = vec![0.0; n];
    for (i, c) in pieces.into_iter().flatten().enumerate() {
        rgb.data[i] = c.color;
        depth[i] = c.depth;
        opacity[i] = c.opacity;
    }
    Ok(RenderOutput {
        rgb,
        depth: ScalarMap {
            width: w,
            height: h,
            data: depth,
        },
        opacity: ScalarMap {
            width: w,
            height: h,
            data: opacity,
        },
    })
}

fn render_chunk(
    model: &RadianceModel,
    branch: Branch,
    rays: &[Ray],
    first_ray: usize,
    config: &RenderConfig,
    transform: Option<FeatureTransform<'_>>,
) -> Result<Vec<Composite>> {
    let samples = ChunkSamples::build(rays, &config.bounds, config.n_samples, config.mode, |i| {
        ChaCha8Rng::seed_from_u64(mix_seed(config.seed, (first_ray + i) as u64))
    });
    let miss = Composite {
        color: config.background,
        depth: 0.0,
        opacity: 0.0,
    };
    if samples.len() == 0 {
        return Ok(vec![miss; rays.len()]);
    }
    let pos = model.position_batch(branch, &samples.positions)?;
    let color = match transform {
        None => model.color_batch(pos.geom(), &samples.dir_enc, samples.len())?,
        Some(f) => {
            let mut geom = pos.geom().to_vec();
            geom.chunks_exact_mut(model.geom_dim()).for_each(f);
            model.color_batch(&geom, &samples.dir_enc, samples.len())?
        }
    };
    let rgbs: Vec<[f64; 3]> = color.rgb.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let n = samples.n_per_ray;
    Ok(samples
        .spans
        .iter()
        .map(|span| match *span {
            None => miss,
            Some((s, t_far)) => composite_unchecked(
                &pos.sigma[s..s + n],
                &rgbs[s..s + n],
                &samples.ts[s..s + n],
                t_far,
                config.background,
            ),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::geometry::{look_at, Mat4, Vec3};
    use crate::model::{ModelSpec, TensorId};
    use proptest::prelude::*;

    fn unit_ray() -> Ray {
        Ray::new(Vec3::zeros(), Vec3::new(0.0, 0.0, 1.0), 0.0, 1.0).unwrap()
    }

    #[test]
    fn midpoint_samples() {
        let ts = sample_points(&Ray { t_far: 1.0, ..unit_ray() }, 2, SamplingMode::Midpoint, &mut NoRng).unwrap();
        assert_eq!(ts, vec![0.25, 0.75]);
        assert!(sample_points(&unit_ray(), 0, SamplingMode::Midpoint, &mut NoRng).is_err());
    }

    #[test]
    fn stratified_mean_is_interval_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ray = Ray::new(Vec3::zeros(), Vec3::x(), 2.0, 5.0).unwrap();
        let mut sum = 0.0;
        let draws = 100_000;
        for _ in 0..draws {
            let ts = sample_points(&ray, 1, SamplingMode::Stratified, &mut rng).unwrap();
            sum += ts[0];
        }
        let mean = sum / draws as f64;
        assert!((mean - 3.5).abs() / 3.5 < 0.01);
    }

    proptest! {
        #[test]
        fn stratified_samples_sorted_and_bounded(seed in 0u64..1000, n in 1usize..64, near in 0.0f64..2.0, len in 0.01f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ray = Ray::new(Vec3::zeros(), Vec3::y(), near, near + len).unwrap();
            let ts = sample_points(&ray, n, SamplingMode::Stratified, &mut rng).unwrap();
            prop_assert_eq!(ts.len(), n);
            prop_assert!(ts.iter().all(|&t| t >= near && t <= near + len));
            prop_assert!(ts.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn composite_is_bounded(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..20);
            let mut ts: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 + rng.gen_range(0.0..0.05)).collect();
            ts.sort_by(f64::total_cmp);
            let sigmas: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..30.0)).collect();
            let rgbs: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
            let out = composite(&sigmas, &rgbs, &ts, ts[n - 1] + 0.1, [rng.gen(), rng.gen(), rng.gen()]).unwrap();
            prop_assert!((0.0..=1.0).contains(&out.opacity));
            prop_assert!(out.color.iter().all(|c| (-1e-12..=1.0 + 1e-12).contains(c)));
        }
    }

    #[test]
    fn empty_space_shows_background() {
        let out = composite(&[0.0; 3], &[[0.2; 3]; 3], &[0.1, 0.2, 0.3], 0.4, [0.3, 0.6, 0.9]).unwrap();
        assert_eq!(out.color, [0.3, 0.6, 0.9]);
        assert_eq!(out.opacity, 0.0);
        assert_eq!(out.depth, 0.0);
    }

    #[test]
    fn opaque_single_sample() {
        // sigma * delta = 20
        let out = composite(&[200.0], &[[0.1, 0.5, 0.9]], &[0.4], 0.5, [1.0; 3]).unwrap();
        assert!((out.opacity - 1.0).abs() < 1e-8);
        for c in 0..3 {
            assert!((out.color[c] - [0.1, 0.5, 0.9][c]).abs() < 1e-8);
        }
        assert!((out.depth - 0.4).abs() < 1e-6);
    }

    #[test]
    fn two_sample_quadrature() {
        let ln2 = std::f64::consts::LN_2;
        let (c1, c2) = ([0.8, 0.2, 0.4], [0.1, 0.6, 1.0]);
        // delta = 1 for both samples
        let out = composite(&[ln2, ln2], &[c1, c2], &[0.0, 1.0], 2.0, [0.0; 3]).unwrap();
        for c in 0..3 {
            assert!((out.color[c] - (0.5 * c1[c] + 0.25 * c2[c])).abs() < 1e-12);
        }
        assert!((out.opacity - 0.75).abs() < 1e-12);
    }

    #[test]
    fn appending_empty_sample_changes_nothing() {
        let (s, c, t) = ([1.5, 0.7], [[0.3, 0.2, 0.9], [0.5, 0.5, 0.1]], [0.1, 0.4]);
        let a = composite(&s, &c, &t, 0.6, [1.0; 3]).unwrap();
        let b = composite(&[1.5, 0.7, 0.0], &[c[0], c[1], [0.9; 3]], &[0.1, 0.4, 0.6], 0.6, [1.0; 3]).unwrap();
        for k in 0..3 {
            assert!((a.color[k] - b.color[k]).abs() < 1e-15);
        }
        assert!((a.opacity - b.opacity).abs() < 1e-15);
    }

    #[test]
    fn non_increasing_ts_rejected() {
        assert!(composite(&[1.0, 1.0], &[[0.0; 3]; 2], &[0.5, 0.5], 1.0, [0.0; 3]).is_err());
        assert!(composite_backward(&[1.0, 1.0], &[[0.0; 3]; 2], &[0.6, 0.5], 1.0, [0.0; 3], &CompositeGrad::default()).is_err());
    }

    #[test]
    fn backward_zero_upstream() {
        let (ds, dc) = composite_backward(&[0.5, 2.0], &[[0.2; 3]; 2], &[0.1, 0.3], 0.5, [1.0; 3], &CompositeGrad::default()).unwrap();
        assert!(ds.iter().all(|&v| v == 0.0));
        assert!(dc.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_single_sample_closed_form() {
        let (sigma, delta, c, bg) = (1.3, 0.4, [0.2, 0.7, 0.9], [0.0; 3]);
        let g = CompositeGrad { color: [1.0, 0.0, 0.0], ..Default::default() };
        let (ds, dc) = composite_backward(&[sigma], &[c], &[0.0], delta, bg, &g).unwrap();
        // d/dsigma (1 - exp(-sigma delta)) c = delta exp(-sigma delta) c
        assert!((ds[0] - delta * (-sigma * delta).exp() * c[0]).abs() < 1e-14);
        assert!((dc[0][0] - (1.0 - (-sigma * delta).exp())).abs() < 1e-14);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 6;
        let ts: Vec<f64> = (0..n).map(|i| 0.2 + 0.13 * i as f64).collect();
        let t_far = 1.1;
        let mut sigmas: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..4.0)).collect();
        let mut rgbs: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let bg = [0.9, 0.4, 0.1];
        let g = CompositeGrad { color: [0.3, -0.8, 0.5], depth: 0.7, opacity: -0.4 };
        let loss = |s: &[f64], c: &[[f64; 3]]| {
            let o = composite(s, c, &ts, t_far, bg).unwrap();
            g.color[0] * o.color[0] + g.color[1] * o.color[1] + g.color[2] * o.color[2] + g.depth * o.depth + g.opacity * o.opacity
        };
        let (ds, dc) = composite_backward(&sigmas, &rgbs, &ts, t_far, bg, &g).unwrap();
        let h = 1e-6;
        let check = |fd: f64, an: f64| {
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            assert!(rel < 1e-5 || (fd - an).abs() < 1e-10, "{fd} vs {an}");
        };
        for i in 0..n {
            let o = sigmas[i];
            sigmas[i] = o + h;
            let fp = loss(&sigmas, &rgbs);
            sigmas[i] = o - h;
            let fm = loss(&sigmas, &rgbs);
            sigmas[i] = o;
            check((fp - fm) / (2.0 * h), ds[i]);
            for c in 0..3 {
                let o = rgbs[i][c];
                rgbs[i][c] = o + h;
                let fp = loss(&sigmas, &rgbs);
                rgbs[i][c] = o - h;
                let fm = loss(&sigmas, &rgbs);
                rgbs[i][c] = o;
                check((fp - fm) / (2.0 * h), dc[i][c]);
            }
        }
    }

    fn camera() -> Camera {
        let pose = look_at(Vec3::new(0.5, -1.2, 1.4), Vec3::new(0.5, 0.5, 0.5), Vec3::z());
        Camera::new(12, 10, 0.7, pose).unwrap()
    }

    #[test]
    fn zero_density_model_renders_background() {
        let mut m = RadianceModel::zeros(ModelSpec::default()).unwrap();
        // push the density channel to the clamp floor: sigma = exp(-15)
        m.branch_mut(Branch::Content).density.bias_mut(1)[0] = -1e3;
        let cfg = RenderConfig { n_samples: 16, background: [0.2, 0.4, 0.6], ..Default::default() };
        let out = render_image(&m, Branch::Content, &camera(), &cfg).unwrap();
        for px in &out.rgb.data {
            for c in 0..3 {
                assert!((px[c] - cfg.background[c]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn deterministic_renders_are_bit_identical() {
        let m = RadianceModel::new(ModelSpec::default(), 1).unwrap();
        for mode in [SamplingMode::Midpoint, SamplingMode::Stratified] {
            let cfg = RenderConfig { n_samples: 8, mode, rays_per_chunk: 7, ..Default::default() };
            let a = render_image(&m, Branch::Style, &camera(), &cfg).unwrap();
            let b = render_image(&m, Branch::Style, &camera(), &cfg).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn chunk_size_does_not_change_renders() {
        let mut m = RadianceModel::new(ModelSpec::default(), 2).unwrap();
        m.tensor_mut(TensorId::ContentTables).iter_mut().enumerate().for_each(|(i, v)| *v = (i % 7) as f64 * 0.1);
        let base = RenderConfig { n_samples: 8, ..Default::default() };
        let a = render_image(&m, Branch::Content, &camera(), &RenderConfig { rays_per_chunk: 1, ..base.clone() }).unwrap();
        let b = render_image(&m, Branch::Content, &camera(), &RenderConfig { rays_per_chunk: 1000, ..base }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rays_missing_bounds_render_background() {
        let m = RadianceModel::new(ModelSpec::default(), 1).unwrap();
        let mut pose = Mat4::identity();
        pose[(0, 3)] = 5.0;
        let cam = Camera::new(4, 4, 0.3, pose).unwrap();
        let out = render_image(&m, Branch::Content, &cam, &RenderConfig { n_samples: 4, ..Default::default() }).unwrap();
        assert!(out.rgb.data.iter().all(|p| *p == [1.0; 3]));
        assert!(out.opacity.data.iter().all(|&o| o == 0.0));
    }
}
