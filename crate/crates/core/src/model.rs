//! The two-branch radiance field.
//!
//! Each branch owns a position encoder (hash grid followed by a density
//! MLP). The density MLP output is the geometric feature vector; its first
//! channel drives the density. Both branches feed one shared color MLP that
//! also consumes the spherical-harmonics direction encoding.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash_grid::{HashEncoder, HashGridParams, HashGridSpec};
use crate::mlp::{sigmoid, Activation, MlpCache, MlpParams, MlpShape};
use crate::sh::{sh_encode, DirectionEncoding, SH_COEFFS};

/// Density-MLP outputs are clamped to `[-DENSITY_CLAMP, DENSITY_CLAMP]`
/// before the exponential.
pub const DENSITY_CLAMP: f64 = 15.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Content,
    Style,
}

impl Branch {
    pub const ALL: [Branch; 2] = [Branch::Content, Branch::Style];

    pub fn other(self) -> Branch {
        match self {
            Branch::Content => Branch::Style,
            Branch::Style => Branch::Content,
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Content => "content",
            Branch::Style => "style",
        })
    }
}

impl FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "content" => Ok(Branch::Content),
            "style" => Ok(Branch::Style),
            other => Err(Error::InvalidArgument(format!(
                "unknown branch '{other}' (expected content or style)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub geom_dim: usize,
    pub density_hidden: Vec<usize>,
    pub color_hidden: Vec<usize>,
    pub content_grid: HashGridSpec,
    pub style_grid: HashGridSpec,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            geom_dim: 16,
            density_hidden: vec![64],
            color_hidden: vec![64, 64],
            content_grid: HashGridSpec::default(),
            style_grid: HashGridSpec::default(),
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.geom_dim < 2 {
            return Err(Error::out_of_range("geom_dim", self.geom_dim, ">= 2"));
        }
        self.content_grid.validate()?;
        self.style_grid.validate()?;
        Ok(())
    }

    pub fn grid(&self, branch: Branch) -> &HashGridSpec {
        match branch {
            Branch::Content => &self.content_grid,
            Branch::Style => &self.style_grid,
        }
    }

    pub fn density_shape(&self, branch: Branch) -> MlpShape {
        MlpShape::new(
            self.grid(branch).output_dim(),
            &self.density_hidden,
            self.geom_dim,
            Activation::Identity,
        )
    }

    pub fn color_shape(&self) -> MlpShape {
        MlpShape::new(
            self.geom_dim + SH_COEFFS,
            &self.color_hidden,
            3,
            Activation::Identity,
        )
    }
}

/// Hash grid plus density MLP for one branch.
#[derive(Clone, Debug)]
pub struct PositionEncoder {
    pub encoder: HashEncoder,
    pub tables: HashGridParams,
    pub density: MlpParams,
}

/// Density of a sample from its (unadjusted) geometric feature.
#[inline]
pub fn density_from_geom(g0: f64) -> f64 {
    g0.clamp(-DENSITY_CLAMP, DENSITY_CLAMP).exp()
}

/// Output of the position encoder at a single point.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionOutput {
    pub sigma: f64,
    pub geom: Vec<f64>,
}

/// Batched position-encoder evaluation retaining what backward needs.
#[derive(Debug)]
pub struct PositionBatch {
    pub sigma: Vec<f64>,
    rows: Vec<u32>,
    weights: Vec<f64>,
    density_cache: MlpCache,
}

impl PositionBatch {
    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    /// Geometric features, `len × geom_dim` row-major.
    pub fn geom(&self) -> &[f64] {
        self.density_cache.output()
    }
}

/// Batched color-MLP evaluation.
#[derive(Debug)]
pub struct ColorBatch {
    pub rgb: Vec<f64>,
    cache: MlpCache,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchGrads {
    pub tables: Vec<f64>,
    pub density: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub content: BranchGrads,
    pub style: BranchGrads,
    pub color: Vec<f64>,
}

impl ModelGrads {
    pub fn branch_mut(&mut self, branch: Branch) -> &mut BranchGrads {
        match branch {
            Branch::Content => &mut self.content,
            Branch::Style => &mut self.style,
        }
    }

    pub fn branch(&self, branch: Branch) -> &BranchGrads {
        match branch {
            Branch::Content => &self.content,
            Branch::Style => &self.style,
        }
    }
}

/// The five trainable tensors, in checkpoint order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorId {
    ContentTables,
    ContentDensity,
    StyleTables,
    StyleDensity,
    Color,
}

impl TensorId {
    pub const ALL: [TensorId; 5] = [
        TensorId::ContentTables,
        TensorId::ContentDensity,
        TensorId::StyleTables,
        TensorId::StyleDensity,
        TensorId::Color,
    ];

    pub fn is_hash_table(self) -> bool {
        matches!(self, TensorId::ContentTables | TensorId::StyleTables)
    }

    pub fn branch(self) -> Option<Branch> {
        match self {
            TensorId::ContentTables | TensorId::ContentDensity => Some(Branch::Content),
            TensorId::StyleTables | TensorId::StyleDensity => Some(Branch::Style),
            TensorId::Color => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RadianceModel {
    spec: ModelSpec,
    content: PositionEncoder,
    style: PositionEncoder,
    color: MlpParams,
}

impl RadianceModel {
    /// Randomly initialised model.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let branch = |b: Branch, rng: &mut ChaCha8Rng| -> Result<PositionEncoder> {
            let grid = spec.grid(b).clone();
            let tables = HashGridParams::random(&grid, rng);
            let density = MlpParams::xavier(spec.density_shape(b), rng)?;
            Ok(PositionEncoder {
                encoder: HashEncoder::new(grid)?,
                tables,
                density,
            })
        };
        let content = branch(Branch::Content, &mut rng)?;
        let style = branch(Branch::Style, &mut rng)?;
        let color = MlpParams::xavier(spec.color_shape(), &mut rng)?;
        Ok(RadianceModel {
            spec,
            content,
            style,
            color,
        })
    }

    /// Model with every table and weight set to zero.
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mk = |b: Branch| -> Result<PositionEncoder> {
            Ok(PositionEncoder {
                encoder: HashEncoder::new(spec.grid(b).clone())?,
                tables: HashGridParams::zeros(spec.grid(b)),
                density: MlpParams::zeros(spec.density_shape(b))?,
            })
        };
        Ok(RadianceModel {
            content: mk(Branch::Content)?,
            style: mk(Branch::Style)?,
            color: MlpParams::zeros(spec.color_shape())?,
            spec,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn branch(&self, branch: Branch) -> &PositionEncoder {
        match branch {
            Branch::Content => &self.content,
            Branch::Style => &self.style,
        }
    }

    pub fn branch_mut(&mut self, branch: Branch) -> &mut PositionEncoder {
        match branch {
            Branch::Content => &mut self.content,
            Branch::Style => &mut self.style,
        }
    }

    pub fn color_mlp(&self) -> &MlpParams {
        &self.color
    }

    pub fn color_mlp_mut(&mut self) -> &mut MlpParams {
        &mut self.color
    }

    pub fn geom_dim(&self) -> usize {
        self.spec.geom_dim
    }

    pub fn tensor(&self, id: TensorId) -> &[f64] {
        match id {
            TensorId::ContentTables => &self.content.tables.tables,
            TensorId::ContentDensity => &self.content.density.params,
            TensorId::StyleTables => &self.style.tables.tables,
            TensorId::StyleDensity => &self.style.density.params,
            TensorId::Color => &self.color.params,
        }
    }

    pub fn tensor_mut(&mut self, id: TensorId) -> &mut Vec<f64> {
        match id {
            TensorId::ContentTables => &mut self.content.tables.tables,
            TensorId::ContentDensity => &mut self.content.density.params,
            TensorId::StyleTables => &mut self.style.tables.tables,
            TensorId::StyleDensity => &mut self.style.density.params,
            TensorId::Color => &mut self.color.params,
        }
    }

    pub fn zero_grads(&self) -> ModelGrads {
        let bg = |b: &PositionEncoder| BranchGrads {
            tables: vec![0.0; b.tables.tables.len()],
            density: vec![0.0; b.density.params.len()],
        };
        ModelGrads {
            content: bg(&self.content),
            style: bg(&self.style),
            color: vec![0.0; self.color.params.len()],
        }
    }

    /// Density and geometric feature at one point.
    pub fn position_forward(&self, branch: Branch, position: [f64; 3]) -> Result<PositionOutput> {
        let batch = self.position_batch(branch, &[position])?;
        Ok(PositionOutput {
            sigma: batch.sigma[0],
            geom: batch.geom().to_vec(),
        })
    }

    /// Shared color MLP on one feature vector.
    pub fn color_forward(&self, geom: &[f64], dir_enc: &DirectionEncoding) -> Result<[f64; 3]> {
        if geom.len() != self.spec.geom_dim {
            return Err(Error::dims("color input features", self.spec.geom_dim, geom.len()));
        }
        let batch = self.color_batch(geom, &dir_enc.0, 1)?;
        Ok([batch.rgb[0], batch.rgb[1], batch.rgb[2]])
    }

    /// `(sigma, rgb)` at a point seen along `direction`.
    pub fn full_forward(
        &self,
        branch: Branch,
        position: [f64; 3],
        direction: [f64; 3],
    ) -> Result<(f64, [f64; 3])> {
        let pos = self.position_forward(branch, position)?;
        let dir = sh_encode(direction)?;
        let rgb = self.color_forward(&pos.geom, &dir)?;
        Ok((pos.sigma, rgb))
    }

    /// Position encoder over many points.
    pub fn position_batch(&self, branch: Branch, positions: &[[f64; 3]]) -> Result<PositionBatch> {
        if positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample position"));
        }
        let enc = self.branch(branch);
        let n = positions.len();
        let fl = enc.encoder.footprint_len();
        let width = enc.encoder.output_dim();
        let mut rows = vec![0u32; n * fl];
        let mut weights = vec![0.0; n * fl];
        let mut encoded = vec![0.0; n * width];
        for (i, p) in positions.iter().enumerate() {
            let (r, w) = (&mut rows[i * fl..(i + 1) * fl], &mut weights[i * fl..(i + 1) * fl]);
            enc.encoder.footprint_into(p, r, w);
            enc.encoder
                .gather(&enc.tables, r, w, &mut encoded[i * width..(i + 1) * width]);
        }
        let density_cache = enc.density.forward_batch(encoded, n)?;
        let g = self.spec.geom_dim;
        let sigma = density_cache
            .output()
            .chunks_exact(g)
            .map(|row| density_from_geom(row[0]))
            .collect();
        Ok(PositionBatch {
            sigma,
            rows,
            weights,
            density_cache,
        })
    }

    /// Color MLP over `n` rows of `(geom, dir_enc)`.
    pub fn color_batch(&self, geom: &[f64], dir_enc: &[f64], n: usize) -> Result<ColorBatch> {
        let g = self.spec.geom_dim;
        if geom.len() != n * g {
            return Err(Error::dims("color input features", n * g, geom.len()));
        }
        if dir_enc.len() != n * SH_COEFFS {
            return Err(Error::dims("direction encodings", n * SH_COEFFS, dir_enc.len()));
        }
        let w = g + SH_COEFFS;
        let mut input = vec![0.0; n * w];
        for i in 0..n {
            input[i * w..i * w + g].copy_from_slice(&geom[i * g..(i + 1) * g]);
            input[i * w + g..(i + 1) * w].copy_from_slice(&dir_enc[i * SH_COEFFS..(i + 1) * SH_COEFFS]);
        }
        let cache = self.color.forward_batch(input, n)?;
        let rgb = cache.output().iter().map(|&v| sigmoid(v)).collect();
        Ok(ColorBatch { rgb, cache })
    }

    /// Backpropagates `d_rgb` through the color MLP, accumulating into
    /// `color_grads`. Returns the gradient w.r.t. the geometric features.
    pub fn color_backward(
        &self,
        batch: &ColorBatch,
        d_rgb: &[f64],
        color_grads: &mut [f64],
    ) -> Result<Vec<f64>> {
        if d_rgb.len() != batch.rgb.len() {
            return Err(Error::dims("rgb gradient", batch.rgb.len(), d_rgb.len()));
        }
        let d_logit: Vec<f64> = d_rgb
            .iter()
            .zip(&batch.rgb)
            .map(|(d, s)| d * s * (1.0 - s))
            .collect();
        let d_in = self.color.backward_into(&batch.cache, &d_logit, color_grads)?;
        let g = self.spec.geom_dim;
        let w = g + SH_COEFFS;
        let n = batch.cache.rows();
        let mut d_geom = vec![0.0; n * g];
        for i in 0..n {
            d_geom[i * g..(i + 1) * g].copy_from_slice(&d_in[i * w..i * w + g]);
        }
        Ok(d_geom)
    }

    /// Backpropagates feature and density gradients through one branch's
    /// position encoder into `grads`. `d_geom` may be empty when only the
    /// density carries gradient.
    pub fn position_backward(
        &self,
        branch: Branch,
        batch: &PositionBatch,
        d_geom: &[f64],
        d_sigma: &[f64],
        grads: &mut BranchGrads,
    ) -> Result<()> {
        let enc = self.branch(branch);
        let n = batch.len();
        let g = self.spec.geom_dim;
        if d_sigma.len() != n {
            return Err(Error::dims("density gradient", n, d_sigma.len()));
        }
        let mut up = if d_geom.is_empty() {
            vec![0.0; n * g]
        } else if d_geom.len() == n * g {
            d_geom.to_vec()
        } else {
            return Err(Error::dims("feature gradient", n * g, d_geom.len()));
        };
        let geom = batch.geom();
        for i in 0..n {
            let g0 = geom[i * g];
            if g0 > -DENSITY_CLAMP && g0 < DENSITY_CLAMP {
                up[i * g] += d_sigma[i] * batch.sigma[i];
            }
        }
        let d_enc = enc
            .density
            .backward_into(&batch.density_cache, &up, &mut grads.density)?;
        if grads.tables.len() != enc.tables.tables.len() {
            return Err(Error::dims("table gradient buffer", enc.tables.tables.len(), grads.tables.len()));
        }
        let fl = enc.encoder.footprint_len();
        let width = enc.encoder.output_dim();
        for i in 0..n {
            enc.encoder.scatter(
                &batch.rows[i * fl..(i + 1) * fl],
                &batch.weights[i * fl..(i + 1) * fl],
                &d_enc[i * width..(i + 1) * width],
                &mut grads.tables,
            );
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::geometry::Aabb;

    pub(crate) fn tiny_spec() -> ModelSpec {
        let grid = HashGridSpec {
            levels: 2,
            table_size: 64,
            features_per_level: 2,
            base_resolution: 3,
            growth_factor: 2.0,
            bounds: Aabb::unit(),
        };
        ModelSpec {
            geom_dim: 4,
            density_hidden: vec![8],
            color_hidden: vec![8],
            content_grid: grid.clone(),
            style_grid: grid,
        }
    }

    fn perturbed(seed: u64) -> RadianceModel {
        let mut m = RadianceModel::new(tiny_spec(), seed).unwrap();
        // lift tables off their tiny init so gradients are well scaled
        let mut s = seed;
        for id in TensorId::ALL {
            for v in m.tensor_mut(id).iter_mut() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *v += ((s >> 33) as f64 / (1u64 << 31) as f64 - 0.5) * 0.6;
            }
        }
        m
    }

    #[test]
    fn zero_network_outputs() {
        let m = RadianceModel::zeros(ModelSpec::default()).unwrap();
        let p = m.position_forward(Branch::Content, [0.2, 0.4, 0.9]).unwrap();
        assert_eq!(p.sigma, 1.0);
        assert!(p.geom.iter().all(|&v| v == 0.0));
        let rgb = m.color_forward(&p.geom, &sh_encode([0.0, 1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(rgb, [0.5; 3]);
    }

    #[test]
    fn density_clamp_floor() {
        let s = density_from_geom(-40.0);
        assert_eq!(s, (-15.0f64).exp());
        assert!((s - 3.06e-7).abs() < 1e-9);
    }

    #[test]
    fn full_forward_is_the_composition() {
        let m = perturbed(3);
        let (pos, dir) = ([0.3, 0.6, 0.2], [0.0, 0.6, -0.8]);
        let (sigma, rgb) = m.full_forward(Branch::Style, pos, dir).unwrap();
        let p = m.position_forward(Branch::Style, pos).unwrap();
        let c = m.color_forward(&p.geom, &sh_encode(dir).unwrap()).unwrap();
        assert_eq!(sigma.to_bits(), p.sigma.to_bits());
        assert_eq!(rgb.map(f64::to_bits), c.map(f64::to_bits));
    }

    #[test]
    fn identical_branches_agree() {
        let mut m = perturbed(4);
        let content = m.branch(Branch::Content).clone();
        *m.branch_mut(Branch::Style) = content;
        let a = m.full_forward(Branch::Content, [0.1, 0.2, 0.3], [1.0, 0.0, 0.0]).unwrap();
        let b = m.full_forward(Branch::Style, [0.1, 0.2, 0.3], [1.0, 0.0, 0.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn branch_tables_are_isolated_color_is_shared() {
        let m0 = perturbed(5);
        let probe = |m: &RadianceModel, b| m.full_forward(b, [0.4, 0.5, 0.6], [0.0, 0.0, 1.0]).unwrap();
        let mut m1 = m0.clone();
        m1.tensor_mut(TensorId::ContentTables).iter_mut().for_each(|v| *v += 0.3);
        assert_eq!(probe(&m0, Branch::Style), probe(&m1, Branch::Style));
        assert_ne!(probe(&m0, Branch::Content), probe(&m1, Branch::Content));
        let mut m2 = m0.clone();
        m2.color_mlp_mut().bias_mut(1)[0] += 0.5;
        assert_ne!(probe(&m0, Branch::Style).1, probe(&m2, Branch::Style).1);
        assert_ne!(probe(&m0, Branch::Content).1, probe(&m2, Branch::Content).1);
    }

    #[test]
    fn color_rejects_wrong_width() {
        let m = perturbed(6);
        assert!(m.color_forward(&[0.0; 3], &sh_encode([0.0, 0.0, 1.0]).unwrap()).is_err());
        assert!(m.position_forward(Branch::Content, [f64::INFINITY, 0.0, 0.0]).is_err());
    }

    /// Scalar loss `a·sigma + <b, rgb>` and its gradients.
    fn probe_loss(m: &RadianceModel, pos: [f64; 3], dir: [f64; 3]) -> f64 {
        let (s, rgb) = m.full_forward(Branch::Content, pos, dir).unwrap();
        0.7 * s + 0.3 * rgb[0] - 1.1 * rgb[1] + 0.5 * rgb[2]
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let mut m = perturbed(7);
        let (pos, dir) = ([0.41, 0.27, 0.73], [0.48, -0.6, 0.64]);
        let pb = m.position_batch(Branch::Content, &[pos]).unwrap();
        let enc = sh_encode(dir).unwrap();
        let cb = m.color_batch(pb.geom(), &enc.0, 1).unwrap();
        let mut grads = m.zero_grads();
        let d_geom = m.color_backward(&cb, &[0.3, -1.1, 0.5], &mut grads.color).unwrap();
        m.position_backward(Branch::Content, &pb, &d_geom, &[0.7], &mut grads.content)
            .unwrap();
        let h = 1e-6;
        for id in [TensorId::ContentTables, TensorId::ContentDensity, TensorId::Color] {
            let analytic = match id {
                TensorId::ContentTables => grads.content.tables.clone(),
                TensorId::ContentDensity => grads.content.density.clone(),
                _ => grads.color.clone(),
            };
            for i in 0..analytic.len() {
                let o = m.tensor(id)[i];
                m.tensor_mut(id)[i] = o + h;
                let fp = probe_loss(&m, pos, dir);
                m.tensor_mut(id)[i] = o - h;
                let fm = probe_loss(&m, pos, dir);
                m.tensor_mut(id)[i] = o;
                let fd = (fp - fm) / (2.0 * h);
                let an = analytic[i];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(rel < 1e-4 || (fd - an).abs() < 1e-9, "{id:?}[{i}]: {fd} vs {an}");
            }
        }
        assert!(grads.style.tables.iter().all(|&v| v == 0.0));
    }
}
