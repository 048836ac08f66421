//! Feature-statistics stylization.
//!
//! Position-encoder features are sampled on a voxel lattice for each branch.
//! Their per-channel moments drive an AdaIN re-normalization of the source
//! branch's features before the color MLP, while densities keep using the
//! unadjusted features.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::geometry::Aabb;
use crate::model::{Branch, RadianceModel};
use crate::render::{render_with, RenderConfig, RenderOutput};

/// Lower bound applied to every moment standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

/// Density threshold used when masking is requested without a value.
pub const DEFAULT_DENSITY_MASK: f64 = 0.01;

/// Points evaluated per network batch during extraction.
const EVAL_CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelGridSpec {
    pub resolution: u32,
    #[serde(default)]
    pub bounds: Aabb,
}

impl Default for VoxelGridSpec {
    fn default() -> Self {
        VoxelGridSpec {
            resolution: 128,
            bounds: Aabb::unit(),
        }
    }
}

impl VoxelGridSpec {
    pub fn new(resolution: u32) -> Self {
        VoxelGridSpec {
            resolution,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 2 {
            return Err(Error::out_of_range("voxel resolution", self.resolution, ">= 2"));
        }
        if !self.bounds.is_valid() {
            return Err(Error::InvalidArgument("voxel grid bounds are degenerate".into()));
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        (self.resolution as usize).pow(3)
    }

    /// Center of voxel `(i, j, k)`; `i` indexes x.
    pub fn center(&self, i: u32, j: u32, k: u32) -> [f64; 3] {
        let n = self.resolution as f64;
        let (lo, hi) = (self.bounds.min, self.bounds.max);
        let f = |a: usize, v: u32| lo[a] + (v as f64 + 0.5) / n * (hi[a] - lo[a]);
        [f(0, i), f(1, j), f(2, k)]
    }

    /// Voxel centers of the x-slab `i`, `j` major then `k`.
    fn slab_centers(&self, i: u32) -> Vec<[f64; 3]> {
        let n = self.resolution;
        (0..n)
            .flat_map(|j| (0..n).map(move |k| (j, k)))
            .map(|(j, k)| self.center(i, j, k))
            .collect()
    }
}

/// Position-encoder outputs at every voxel center, x-major.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelFeatureGrid {
    pub spec: VoxelGridSpec,
    pub geom_dim: usize,
    pub features: Vec<f64>,
    pub densities: Vec<f64>,
}

impl VoxelFeatureGrid {
    pub fn len(&self) -> usize {
        self.densities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.densities.is_empty()
    }

    pub fn feature(&self, index: usize) -> &[f64] {
        &self.features[index * self.geom_dim..(index + 1) * self.geom_dim]
    }

    fn slab_len(&self) -> usize {
        (self.spec.resolution as usize).pow(2)
    }
}

fn eval_points(model: &RadianceModel, branch: Branch, points: &[[f64; 3]]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut features = Vec::with_capacity(points.len() * model.geom_dim());
    let mut densities = Vec::with_capacity(points.len());
    for chunk in points.chunks(EVAL_CHUNK) {
        let batch = model.position_batch(branch, chunk)?;
        features.extend_from_slice(batch.geom());
        densities.extend_from_slice(&batch.sigma);
    }
    Ok((features, densities))
}

/// Evaluates the position encoder of `branch` at every voxel center.
pub fn extract_voxel_features(
    model: &RadianceModel,
    branch: Branch,
    spec: &VoxelGridSpec,
) -> Result<VoxelFeatureGrid> {
    spec.validate()?;
    let slabs: Vec<(Vec<f64>, Vec<f64>)> = (0..spec.resolution)
        .into_par_iter()
        .map(|i| eval_points(model, branch, &spec.slab_centers(i)))
        .collect::<Result<_>>()?;
    let mut grid = VoxelFeatureGrid {
        spec: spec.clone(),
        geom_dim: model.geom_dim(),
        features: Vec::with_capacity(spec.voxel_count() * model.geom_dim()),
        densities: Vec::with_capacity(spec.voxel_count()),
    };
    for (f, d) in slabs {
        grid.features.extend(f);
        grid.densities.extend(d);
    }
    Ok(grid)
}

/// Per-channel mean and population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMoments {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl FeatureMoments {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma.len() != self.mu.len() {
            return Err(Error::dims("moment std", self.mu.len(), self.sigma.len()));
        }
        if self.mu.iter().chain(&self.sigma).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature moments"));
        }
        if self.sigma.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidArgument("moment std must be positive".into()));
        }
        Ok(())
    }
}

/// Running count, mean and sum of squared deviations per channel.
#[derive(Clone, Debug)]
struct Accumulator {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Accumulator {
    fn new(dim: usize) -> Self {
        Accumulator {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    /// Two-pass statistics of the selected rows of one block.
    fn from_block(features: &[f64], dim: usize, keep: impl Fn(usize) -> bool) -> Self {
        let mut acc = Accumulator::new(dim);
        let rows = features.len() / dim;
        for r in (0..rows).filter(|&r| keep(r)) {
            acc.count += 1.0;
            for (m, f) in acc.mean.iter_mut().zip(&features[r * dim..(r + 1) * dim]) {
                *m += f;
            }
        }
        if acc.count == 0.0 {
            return acc;
        }
        acc.mean.iter_mut().for_each(|m| *m /= acc.count);
        for r in (0..rows).filter(|&r| keep(r)) {
            for c in 0..dim {
                let d = features[r * dim + c] - acc.mean[c];
                acc.m2[c] += d * d;
            }
        }
        acc
    }

    /// Pairwise merge of two partial results.
    fn merge(&mut self, other: &Accumulator) {
        if other.count == 0.0 {
            return;
        }
        if self.count == 0.0 {
            *self = other.clone();
            return;
        }
        let n = self.count + other.count;
        for c in 0..self.mean.len() {
            let delta = other.mean[c] - self.mean[c];
            self.mean[c] += delta * other.count / n;
            self.m2[c] += other.m2[c] + delta * delta * self.count * other.count / n;
        }
        self.count = n;
    }

    fn finish(self, what: &'static str) -> Result<FeatureMoments> {
        if self.count == 0.0 {
            return Err(Error::Empty(what));
        }
        let sigma = self
            .m2
            .iter()
            .map(|m2| (m2 / self.count).sqrt().max(STD_FLOOR))
            .collect();
        Ok(FeatureMoments { mu: self.mean, sigma })
    }
}

fn check_mask(mask: Option<f64>) -> Result<()> {
    match mask {
        Some(t) if !t.is_finite() => Err(Error::NonFinite("density mask threshold")),
        _ => Ok(()),
    }
}

fn block_stats(features: &[f64], densities: &[f64], dim: usize, mask: Option<f64>) -> Accumulator {
    match mask {
        None => Accumulator::from_block(features, dim, |_| true),
        Some(t) => Accumulator::from_block(features, dim, |r| densities[r] > t),
    }
}

/// Moments over all voxels, or over voxels whose density exceeds `mask`.
pub fn compute_moments(grid: &VoxelFeatureGrid, mask: Option<f64>) -> Result<FeatureMoments> {
    check_mask(mask)?;
    if grid.is_empty() || grid.geom_dim == 0 {
        return Err(Error::Empty("voxel feature grid"));
    }
    if grid.features.len() != grid.len() * grid.geom_dim {
        return Err(Error::dims("voxel features", grid.len() * grid.geom_dim, grid.features.len()));
    }
    let dim = grid.geom_dim;
    let slab = grid.slab_len().min(grid.len());
    let parts: Vec<Accumulator> = grid
        .features
        .par_chunks(slab * dim)
        .zip(grid.densities.par_chunks(slab))
        .map(|(f, d)| block_stats(f, d, dim, mask))
        .collect();
    let mut total = Accumulator::new(dim);
    for p in &parts {
        total.merge(p);
    }
    total.finish("no voxel passes the density mask")
}

/// Same result as extracting the grid and calling [`compute_moments`], but
/// holds only one x-slab per worker in memory.
pub fn stream_moments(
    model: &RadianceModel,
    branch: Branch,
    spec: &VoxelGridSpec,
    mask: Option<f64>,
) -> Result<FeatureMoments> {
    spec.validate()?;
    check_mask(mask)?;
    let dim = model.geom_dim();
    let parts: Vec<Accumulator> = (0..spec.resolution)
        .into_par_iter()
        .map(|i| {
            let (f, d) = eval_points(model, branch, &spec.slab_centers(i))?;
            Ok(block_stats(&f, &d, dim, mask))
        })
        .collect::<Result<_>>()?;
    let mut total = Accumulator::new(dim);
    for p in &parts {
        total.merge(p);
    }
    total.finish("no voxel passes the density mask")
}

/// Re-normalizes `f` in place from `from` statistics to `to` statistics.
pub fn adain_in_place(f: &mut [f64], from: &FeatureMoments, to: &FeatureMoments) {
    for (c, v) in f.iter_mut().enumerate() {
        *v = to.sigma[c] * (*v - from.mu[c]) / from.sigma[c] + to.mu[c];
    }
}

pub fn adain(f: &[f64], from: &FeatureMoments, to: &FeatureMoments) -> Vec<f64> {
    let mut out = f.to_vec();
    adain_in_place(&mut out, from, to);
    out
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::out_of_range("alpha", alpha, "[0, 1]"))
    }
}

/// `(1 - alpha) f + alpha adain(f)`, returning the endpoints exactly.
pub fn adain_blend_in_place(f: &mut [f64], from: &FeatureMoments, to: &FeatureMoments, alpha: f64) {
    if alpha == 0.0 {
        return;
    }
    if alpha == 1.0 {
        adain_in_place(f, from, to);
        return;
    }
    for (c, v) in f.iter_mut().enumerate() {
        let a = to.sigma[c] * (*v - from.mu[c]) / from.sigma[c] + to.mu[c];
        *v = (1.0 - alpha) * *v + alpha * a;
    }
}

pub fn adain_blend(f: &[f64], from: &FeatureMoments, to: &FeatureMoments, alpha: f64) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    let mut out = f.to_vec();
    adain_blend_in_place(&mut out, from, to, alpha);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    ContentToStyle,
    StyleToContent,
}

impl Direction {
    /// Branch whose geometry and features are rendered.
    pub fn source(self) -> Branch {
        match self {
            Direction::ContentToStyle => Branch::Content,
            Direction::StyleToContent => Branch::Style,
        }
    }

    pub fn target(self) -> Branch {
        self.source().other()
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::ContentToStyle => "content-to-style",
            Direction::StyleToContent => "style-to-content",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "content-to-style" => Ok(Direction::ContentToStyle),
            "style-to-content" => Ok(Direction::StyleToContent),
            other => Err(Error::InvalidArgument(format!(
                "unknown direction '{other}' (expected content-to-style or style-to-content)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleBlend {
    pub alpha: f64,
    pub direction: Direction,
}

impl StyleBlend {
    pub fn new(alpha: f64, direction: Direction) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(StyleBlend { alpha, direction })
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)
    }
}

/// Moments of both branches, as cached in the stylization artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentsPair {
    pub voxel_resolution: u32,
    pub density_mask: Option<f64>,
    pub content: FeatureMoments,
    pub style: FeatureMoments,
}

impl MomentsPair {
    pub fn compute(model: &RadianceModel, spec: &VoxelGridSpec, mask: Option<f64>) -> Result<Self> {
        Ok(MomentsPair {
            voxel_resolution: spec.resolution,
            density_mask: mask,
            content: stream_moments(model, Branch::Content, spec, mask)?,
            style: stream_moments(model, Branch::Style, spec, mask)?,
        })
    }

    pub fn get(&self, branch: Branch) -> &FeatureMoments {
        match branch {
            Branch::Content => &self.content,
            Branch::Style => &self.style,
        }
    }

    /// `(from, to)` moments for a direction.
    pub fn roles(&self, direction: Direction) -> (&FeatureMoments, &FeatureMoments) {
        (self.get(direction.source()), self.get(direction.target()))
    }

    pub fn validate(&self, geom_dim: usize) -> Result<()> {
        for m in [&self.content, &self.style] {
            m.validate()?;
            if m.dim() != geom_dim {
                return Err(Error::dims("moment channels", geom_dim, m.dim()));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Renders the source branch with re-normalized color features.
pub fn render_stylized(
    model: &RadianceModel,
    camera: &Camera,
    blend: &StyleBlend,
    moments: &MomentsPair,
    config: &RenderConfig,
) -> Result<RenderOutput> {
    blend.validate()?;
    moments.validate(model.geom_dim())?;
    let (from, to) = moments.roles(blend.direction);
    let alpha = blend.alpha;
    let transform = move |f: &mut [f64]| adain_blend_in_place(f, from, to, alpha);
    render_with(model, blend.direction.source(), camera, config, Some(&transform))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::tiny_spec;
    use proptest::prelude::*;

    fn moments(mu: &[f64], sigma: &[f64]) -> FeatureMoments {
        FeatureMoments {
            mu: mu.to_vec(),
            sigma: sigma.to_vec(),
        }
    }

    fn grid_from(features: Vec<f64>, dim: usize) -> VoxelFeatureGrid {
        let n = features.len() / dim;
        VoxelFeatureGrid {
            spec: VoxelGridSpec::new(2),
            geom_dim: dim,
            densities: vec![1.0; n],
            features,
        }
    }

    #[test]
    fn zero_network_features() {
        let m = RadianceModel::zeros(tiny_spec()).unwrap();
        let g = extract_voxel_features(&m, Branch::Content, &VoxelGridSpec::new(3)).unwrap();
        assert_eq!(g.len(), 27);
        assert!(g.features.iter().all(|&v| v == 0.0));
        assert!(g.densities.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn two_voxel_grid_centers_and_exact_features() {
        let m = RadianceModel::new(tiny_spec(), 9).unwrap();
        let spec = VoxelGridSpec::new(2);
        let g = extract_voxel_features(&m, Branch::Style, &spec).unwrap();
        assert_eq!(g.len(), 8);
        let mut idx = 0;
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let c = spec.center(i, j, k);
                    let expect = [0.25 + 0.5 * i as f64, 0.25 + 0.5 * j as f64, 0.25 + 0.5 * k as f64];
                    assert_eq!(c, expect);
                    let direct = m.position_forward(Branch::Style, c).unwrap();
                    assert_eq!(g.feature(idx), direct.geom.as_slice());
                    assert_eq!(g.densities[idx], direct.sigma);
                    idx += 1;
                }
            }
        }
    }

    #[test]
    fn constant_and_two_point_moments() {
        let g = grid_from(vec![3.0, -1.0, 3.0, -1.0, 3.0, -1.0], 2);
        let m = compute_moments(&g, None).unwrap();
        assert_eq!(m.mu, vec![3.0, -1.0]);
        assert_eq!(m.sigma, vec![STD_FLOOR; 2]);
        let g = grid_from(vec![0.0, 2.0], 1);
        let m = compute_moments(&g, None).unwrap();
        assert_eq!(m.mu, vec![1.0]);
        assert_eq!(m.sigma, vec![1.0]);
    }

    #[test]
    fn mask_selects_dense_voxels() {
        let mut g = grid_from(vec![10.0, 0.0, 2.0, 100.0], 1);
        g.densities = vec![0.001, 1.0, 1.0, 0.0];
        let m = compute_moments(&g, Some(DEFAULT_DENSITY_MASK)).unwrap();
        assert_eq!(m.mu, vec![1.0]);
        assert_eq!(m.sigma, vec![1.0]);
        assert!(matches!(compute_moments(&g, Some(5.0)), Err(Error::Empty(_))));
    }

    #[test]
    fn streaming_matches_stored_grid() {
        let m = RadianceModel::new(tiny_spec(), 10).unwrap();
        let spec = VoxelGridSpec::new(6);
        for mask in [None, Some(1.0)] {
            let g = extract_voxel_features(&m, Branch::Content, &spec).unwrap();
            let a = compute_moments(&g, mask);
            let b = stream_moments(&m, Branch::Content, &spec, mask);
            match (a, b) {
                (Ok(a), Ok(b)) => assert_eq!(a, b),
                (Err(_), Err(_)) => {}
                other => panic!("mismatch {other:?}"),
            }
        }
    }

    #[test]
    fn adain_examples() {
        let c = moments(&[0.0], &[1.0]);
        let s = moments(&[5.0], &[2.0]);
        assert_eq!(adain(&[1.0], &c, &s), vec![7.0]);
        assert_eq!(adain_blend(&[1.0], &c, &s, 0.5).unwrap(), vec![4.0]);
        assert_eq!(adain_blend(&[1.0], &c, &s, 0.0).unwrap(), vec![1.0]);
        assert_eq!(adain_blend(&[1.0], &c, &s, 1.0).unwrap(), vec![7.0]);
        assert!(adain_blend(&[1.0], &c, &s, 1.5).is_err());
        assert!(adain_blend(&[1.0], &c, &s, -0.1).is_err());
    }

    #[test]
    fn direction_roles() {
        assert_eq!(Direction::ContentToStyle.source(), Branch::Content);
        assert_eq!(Direction::StyleToContent.source(), Branch::Style);
        for d in [Direction::ContentToStyle, Direction::StyleToContent] {
            assert_eq!(d.to_string().parse::<Direction>().unwrap(), d);
        }
        assert!("sideways".parse::<Direction>().is_err());
    }

    #[test]
    fn moments_artifact_round_trip() {
        let pair = MomentsPair {
            voxel_resolution: 128,
            density_mask: Some(0.01),
            content: moments(&[0.1, 1.0 / 3.0], &[0.5, 2.0]),
            style: moments(&[-4.0, 1e-7], &[STD_FLOOR, 0.7]),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("moments.json");
        pair.save(&p).unwrap();
        assert_eq!(MomentsPair::load(&p).unwrap(), pair);
    }

    fn oracle(values: &[f64]) -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var.sqrt().max(STD_FLOOR))
    }

    proptest! {
        #[test]
        fn moments_match_two_pass_oracle(
            res in 2u32..5,
            dim in 1usize..4,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = (res as usize).pow(3);
            let features: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-3.0..5.0)).collect();
            let g = VoxelFeatureGrid {
                spec: VoxelGridSpec::new(res),
                geom_dim: dim,
                densities: vec![1.0; n],
                features: features.clone(),
            };
            let m = compute_moments(&g, None).unwrap();
            for c in 0..dim {
                let col: Vec<f64> = (0..n).map(|r| features[r * dim + c]).collect();
                let (mu, sd) = oracle(&col);
                prop_assert!((m.mu[c] - mu).abs() < 1e-10);
                prop_assert!((m.sigma[c] - sd).abs() < 1e-10);
            }
        }

        #[test]
        fn adain_matches_target_moments(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let dim = 3;
            let features: Vec<f64> = (0..27 * dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let g = grid_from(features, dim);
            let from = compute_moments(&g, None).unwrap();
            let to = moments(&[rng.gen_range(-1.0..1.0), 3.0, -2.0], &[0.5, rng.gen_range(0.1..4.0), 1.0]);
            let mut moved = g.clone();
            moved.features.chunks_exact_mut(dim).for_each(|f| adain_in_place(f, &from, &to));
            let after = compute_moments(&moved, None).unwrap();
            for c in 0..dim {
                prop_assert!((after.mu[c] - to.mu[c]).abs() < 1e-6);
                prop_assert!((after.sigma[c] - to.sigma[c]).abs() < 1e-6);
            }
        }

        #[test]
        fn blend_is_affine_in_alpha(f in prop::collection::vec(-5.0f64..5.0, 3), alpha in 0.0f64..=1.0) {
            let c = moments(&[0.3, -1.0, 2.0], &[1.5, 0.2, 1.0]);
            let s = moments(&[1.0, 4.0, -2.0], &[0.5, 3.0, 2.0]);
            let a0 = adain_blend(&f, &c, &s, 0.0).unwrap();
            let a1 = adain_blend(&f, &c, &s, 1.0).unwrap();
            let mid = adain_blend(&f, &c, &s, alpha).unwrap();
            for k in 0..3 {
                let lin = a0[k] + alpha * (a1[k] - a0[k]);
                prop_assert!((mid[k] - lin).abs() < 1e-9);
            }
        }

        #[test]
        fn identical_moments_are_identity(f in prop::collection::vec(-5.0f64..5.0, 2), alpha in 0.0f64..=1.0) {
            let m = moments(&[0.7, -0.2], &[1.3, 0.4]);
            let out = adain_blend(&f, &m, &m, alpha).unwrap();
            for k in 0..2 {
                prop_assert!((out[k] - f[k]).abs() < 1e-12);
            }
        }
    }
}
