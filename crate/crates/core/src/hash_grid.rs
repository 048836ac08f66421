//! Multiresolution hash-grid position encoding.
//!
//! Each level stores up to `T` feature vectors of width `F`. Coarse levels
//! whose full vertex lattice fits in the table are indexed densely; finer
//! levels hash their integer vertex coordinates. A position is encoded by
//! trilinearly interpolating the 8 surrounding vertex features per level and
//! concatenating the per-level results.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Aabb;

pub const PRIME_X: u64 = 1;
pub const PRIME_Y: u64 = 2_654_435_761;
pub const PRIME_Z: u64 = 805_459_861;

/// Magnitude of the uniform table initialisation.
pub const INIT_SCALE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HashGridSpec {
    pub levels: usize,
    pub table_size: usize,
    pub features_per_level: usize,
    pub base_resolution: u32,
    pub growth_factor: f64,
    #[serde(default)]
    pub bounds: Aabb,
}

impl Default for HashGridSpec {
    fn default() -> Self {
        HashGridSpec {
            levels: 8,
            table_size: 1 << 14,
            features_per_level: 2,
            base_resolution: 16,
            growth_factor: 1.5,
            bounds: Aabb::unit(),
        }
    }
}

impl HashGridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 {
            return Err(Error::out_of_range("hash levels", self.levels, ">= 1"));
        }
        if self.table_size < 8 || !self.table_size.is_power_of_two() {
            return Err(Error::out_of_range(
                "hash table size",
                self.table_size,
                "a power of two >= 8",
            ));
        }
        if self.table_size > u32::MAX as usize {
            return Err(Error::out_of_range("hash table size", self.table_size, "< 2^32"));
        }
        if self.features_per_level < 1 {
            return Err(Error::out_of_range(
                "features per level",
                self.features_per_level,
                ">= 1",
            ));
        }
        if self.base_resolution < 2 {
            return Err(Error::out_of_range(
                "base resolution",
                self.base_resolution,
                ">= 2",
            ));
        }
        if !(self.growth_factor > 1.0 && self.growth_factor.is_finite()) {
            return Err(Error::out_of_range("growth factor", self.growth_factor, "> 1"));
        }
        if !self.bounds.is_valid() {
            return Err(Error::InvalidArgument(format!(
                "degenerate hash grid bounds {:?}",
                self.bounds
            )));
        }
        Ok(())
    }

    /// Width of the concatenated encoding, `L * F`.
    pub fn output_dim(&self) -> usize {
        self.levels * self.features_per_level
    }

    /// Number of trainable scalars across all level tables.
    pub fn param_count(&self) -> usize {
        self.levels * self.table_size * self.features_per_level
    }

    /// Grid resolution `floor(N_min * b^l)` of level `l`.
    pub fn level_resolution(&self, level: usize) -> Result<u32> {
        if level >= self.levels {
            return Err(Error::out_of_range("level", level, format!("< {}", self.levels)));
        }
        Ok(self.resolution_unchecked(level))
    }

    fn resolution_unchecked(&self, level: usize) -> u32 {
        (self.base_resolution as f64 * self.growth_factor.powi(level as i32)).floor() as u32
    }

    /// True when the `(N_l + 1)^3` vertex lattice fits in one table.
    pub fn level_is_dense(&self, level: usize) -> Result<bool> {
        let n = self.level_resolution(level)? as u64 + 1;
        Ok(n * n * n <= self.table_size as u64)
    }

    /// Table row holding the feature of vertex `corner` at `level`.
    pub fn grid_index(&self, level: usize, corner: [u32; 3]) -> Result<usize> {
        let res = self.level_resolution(level)?;
        if corner.iter().any(|&c| c > res) {
            return Err(Error::out_of_range(
                "grid corner",
                format!("{corner:?}"),
                format!("coordinates in [0, {res}]"),
            ));
        }
        let layout = LevelLayout::new(self, level);
        Ok(layout.row(corner) as usize)
    }
}

#[derive(Clone, Copy, Debug)]
struct LevelLayout {
    resolution: u32,
    dense: bool,
    table_mask: u64,
}

impl LevelLayout {
    fn new(spec: &HashGridSpec, level: usize) -> Self {
        let resolution = spec.resolution_unchecked(level);
        let side = resolution as u64 + 1;
        LevelLayout {
            resolution,
            dense: side * side * side <= spec.table_size as u64,
            table_mask: spec.table_size as u64 - 1,
        }
    }

    #[inline(always)]
    fn row(&self, c: [u32; 3]) -> u32 {
        let (x, y, z) = (c[0] as u64, c[1] as u64, c[2] as u64);
        if self.dense {
            let side = self.resolution as u64 + 1;
            (x * side * side + y * side + z) as u32
        } else {
            let h = x.wrapping_mul(PRIME_X) ^ y.wrapping_mul(PRIME_Y) ^ z.wrapping_mul(PRIME_Z);
            (h & self.table_mask) as u32
        }
    }
}

/// Trainable feature tables, stored level-major as `[level][row][channel]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HashGridParams {
    pub tables: Vec<f64>,
}

impl HashGridParams {
    pub fn zeros(spec: &HashGridSpec) -> Self {
        HashGridParams {
            tables: vec![0.0; spec.param_count()],
        }
    }

    pub fn random<R: Rng + ?Sized>(spec: &HashGridSpec, rng: &mut R) -> Self {
        let tables = (0..spec.param_count())
            .map(|_| rng.gen_range(-INIT_SCALE..=INIT_SCALE))
            .collect();
        HashGridParams { tables }
    }

    pub fn level_table<'a>(&'a self, spec: &HashGridSpec, level: usize) -> &'a [f64] {
        let n = spec.table_size * spec.features_per_level;
        &self.tables[level * n..(level + 1) * n]
    }

    pub fn check(&self, spec: &HashGridSpec) -> Result<()> {
        if self.tables.len() != spec.param_count() {
            return Err(Error::dims("hash tables", spec.param_count(), self.tables.len()));
        }
        if self.tables.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("hash tables"));
        }
        Ok(())
    }
}

/// One entry of a sparse table gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HashGradEntry {
    pub level: usize,
    pub row: usize,
    pub channel: usize,
    pub value: f64,
}

/// Interpolation footprint of a single position: for every level, the 8
/// flat table offsets (`level * T + row`) and their trilinear weights.
#[derive(Clone, Debug, Default)]
pub struct Footprint {
    pub rows: Vec<u32>,
    pub weights: Vec<f64>,
}

/// A hash-grid spec bundled with its derived per-level layout.
#[derive(Clone, Debug)]
pub struct HashEncoder {
    spec: HashGridSpec,
    layouts: Vec<LevelLayout>,
}

impl HashEncoder {
    pub fn new(spec: HashGridSpec) -> Result<Self> {
        spec.validate()?;
        let layouts = (0..spec.levels).map(|l| LevelLayout::new(&spec, l)).collect();
        Ok(HashEncoder { spec, layouts })
    }

    pub fn spec(&self) -> &HashGridSpec {
        &self.spec
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    /// Entries touched per position: `L * 8`.
    pub fn footprint_len(&self) -> usize {
        self.spec.levels * 8
    }

    fn check_position(position: &[f64; 3]) -> Result<()> {
        if position.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("hash encoder position"))
        }
    }

    /// Writes the `L * 8` corner offsets and weights of `position`.
    #[inline]
    pub fn footprint_into(&self, position: &[f64; 3], rows: &mut [u32], weights: &mut [f64]) {
        let u = self.spec.bounds.normalize_clamped(position);
        let t = self.spec.table_size as u32;
        for (l, layout) in self.layouts.iter().enumerate() {
            let res = layout.resolution;
            let mut cell = [0u32; 3];
            let mut frac = [0.0f64; 3];
            for a in 0..3 {
                let x = u[a] * res as f64;
                let i = (x.floor() as u32).min(res - 1);
                cell[a] = i;
                frac[a] = x - i as f64;
            }
            let base = l as u32 * t;
            for k in 0..8usize {
                let mut corner = cell;
                let mut w = 1.0;
                for a in 0..3 {
                    if k >> a & 1 == 1 {
                        corner[a] += 1;
                        w *= frac[a];
                    } else {
                        w *= 1.0 - frac[a];
                    }
                }
                rows[l * 8 + k] = base + layout.row(corner);
                weights[l * 8 + k] = w;
            }
        }
    }

    pub fn footprint(&self, position: &[f64; 3]) -> Result<Footprint> {
        Self::check_position(position)?;
        let n = self.footprint_len();
        let mut fp = Footprint {
            rows: vec![0; n],
            weights: vec![0.0; n],
        };
        self.footprint_into(position, &mut fp.rows, &mut fp.weights);
        Ok(fp)
    }

    /// Gathers the interpolated features for a precomputed footprint.
    #[inline]
    pub fn gather(&self, params: &HashGridParams, rows: &[u32], weights: &[f64], out: &mut [f64]) {
        let f = self.spec.features_per_level;
        let tab = &params.tables;
        for l in 0..self.spec.levels {
            let dst = &mut out[l * f..(l + 1) * f];
            dst.fill(0.0);
            for k in 0..8 {
                let w = weights[l * 8 + k];
                let off = rows[l * 8 + k] as usize * f;
                for c in 0..f {
                    dst[c] += w * tab[off + c];
                }
            }
        }
    }

    /// Scatters `upstream` (length `L * F`) into a dense table-shaped buffer.
    #[inline]
    pub fn scatter(&self, rows: &[u32], weights: &[f64], upstream: &[f64], grad: &mut [f64]) {
        let f = self.spec.features_per_level;
        for l in 0..self.spec.levels {
            let up = &upstream[l * f..(l + 1) * f];
            if up.iter().all(|&g| g == 0.0) {
                continue;
            }
            for k in 0..8 {
                let w = weights[l * 8 + k];
                let off = rows[l * 8 + k] as usize * f;
                for c in 0..f {
                    grad[off + c] += w * up[c];
                }
            }
        }
    }

    /// Encodes one position into a `L * F` feature vector.
    pub fn encode(&self, params: &HashGridParams, position: &[f64; 3]) -> Result<Vec<f64>> {
        let fp = self.footprint(position)?;
        let mut out = vec![0.0; self.output_dim()];
        self.gather(params, &fp.rows, &fp.weights, &mut out);
        Ok(out)
    }

    /// Sparse gradient of `<upstream, encode(position)>` with respect to the
    /// tables. Colliding rows are summed; zero contributions are dropped.
    pub fn encode_backward(
        &self,
        position: &[f64; 3],
        upstream: &[f64],
    ) -> Result<Vec<HashGradEntry>> {
        if upstream.len() != self.output_dim() {
            return Err(Error::dims("hash upstream gradient", self.output_dim(), upstream.len()));
        }
        let fp = self.footprint(position)?;
        let f = self.spec.features_per_level;
        let t = self.spec.table_size;
        let mut acc: std::collections::BTreeMap<(usize, usize, usize), f64> = Default::default();
        for l in 0..self.spec.levels {
            for k in 0..8 {
                let w = fp.weights[l * 8 + k];
                let row = fp.rows[l * 8 + k] as usize - l * t;
                for c in 0..f {
                    let g = w * upstream[l * f + c];
                    if g != 0.0 {
                        *acc.entry((l, row, c)).or_insert(0.0) += g;
                    }
                }
            }
        }
        Ok(acc
            .into_iter()
            .filter(|&(_, v)| v != 0.0)
            .map(|((level, row, channel), value)| HashGradEntry {
                level,
                row,
                channel,
                value,
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(levels: usize, t: usize, res: u32, b: f64) -> HashGridSpec {
        HashGridSpec {
            levels,
            table_size: t,
            features_per_level: 2,
            base_resolution: res,
            growth_factor: b,
            bounds: Aabb::unit(),
        }
    }

    #[test]
    fn level_resolution_examples() {
        let s = spec(4, 1 << 14, 16, 2.0);
        assert_eq!(s.level_resolution(0).unwrap(), 16);
        assert_eq!(s.level_resolution(2).unwrap(), 64);
        let s = spec(4, 1 << 14, 16, 1.5);
        assert_eq!(s.level_resolution(3).unwrap(), 54);
        assert!(s.level_resolution(4).is_err());
    }

    #[test]
    fn validate_rejects_bad_specs() {
        assert!(spec(0, 64, 16, 1.5).validate().is_err());
        assert!(spec(1, 4, 16, 1.5).validate().is_err());
        assert!(spec(1, 100, 16, 1.5).validate().is_err());
        assert!(spec(1, 64, 1, 1.5).validate().is_err());
        assert!(spec(1, 64, 16, 1.0).validate().is_err());
        assert!(HashGridSpec::default().validate().is_ok());
    }

    #[test]
    fn dense_index_examples() {
        // N_l = 2 -> 27 vertices fit in 64 rows
        let s = spec(1, 64, 2, 1.5);
        assert!(s.level_is_dense(0).unwrap());
        assert_eq!(s.grid_index(0, [1, 0, 1]).unwrap(), 10);
        assert_eq!(s.grid_index(0, [0, 0, 0]).unwrap(), 0);
        assert!(s.grid_index(0, [3, 0, 0]).is_err());
    }

    #[test]
    fn hashed_index_matches_scalar_recomputation() {
        let s = spec(1, 1 << 14, 64, 1.5);
        assert!(!s.level_is_dense(0).unwrap());
        // independent recomputation in u32 arithmetic
        let h = 1u32 ^ 2u32.wrapping_mul(2_654_435_761) ^ 3u32.wrapping_mul(805_459_861);
        let expected = (h % (1 << 14)) as usize;
        assert_eq!(s.grid_index(0, [1, 2, 3]).unwrap(), expected);
    }

    #[test]
    fn dense_index_is_injective() {
        for res in 2..=6u32 {
            let side = res as usize + 1;
            let s = spec(1, side.pow(3).next_power_of_two(), res, 1.5);
            let mut seen = vec![false; s.table_size];
            for x in 0..=res {
                for y in 0..=res {
                    for z in 0..=res {
                        let i = s.grid_index(0, [x, y, z]).unwrap();
                        assert!(!seen[i], "collision at res {res}");
                        seen[i] = true;
                    }
                }
            }
        }
    }

    fn rand_params(s: &HashGridSpec, seed: u64) -> HashGridParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        HashGridParams {
            tables: (0..s.param_count()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn zero_tables_encode_to_zero() {
        let s = HashGridSpec::default();
        let enc = HashEncoder::new(s.clone()).unwrap();
        let out = enc.encode(&HashGridParams::zeros(&s), &[0.3, 0.7, 0.1]).unwrap();
        assert_eq!(out, vec![0.0; 16]);
    }

    #[test]
    fn vertex_positions_reproduce_stored_rows() {
        let s = spec(3, 1 << 12, 4, 2.0); // resolutions 4, 8, 16
        let enc = HashEncoder::new(s.clone()).unwrap();
        let p = rand_params(&s, 1);
        let pos = [0.25, 0.5, 0.75];
        let out = enc.encode(&p, &pos).unwrap();
        for l in 0..3 {
            let res = s.level_resolution(l).unwrap();
            let corner = pos.map(|v| (v * res as f64) as u32);
            let row = s.grid_index(l, corner).unwrap();
            let table = p.level_table(&s, l);
            for c in 0..2 {
                assert!((out[l * 2 + c] - table[row * 2 + c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cell_center_averages_corners() {
        let s = spec(1, 64, 2, 1.5);
        let enc = HashEncoder::new(s.clone()).unwrap();
        let mut p = HashGridParams::zeros(&s);
        for k in 0..8u32 {
            let corner = [k & 1, (k >> 1) & 1, (k >> 2) & 1];
            let row = s.grid_index(0, corner).unwrap();
            p.tables[row * 2] = k as f64;
        }
        let out = enc.encode(&p, &[0.25, 0.25, 0.25]).unwrap();
        assert!((out[0] - 3.5).abs() < 1e-12);
    }

    #[test]
    fn non_finite_position_is_rejected() {
        let enc = HashEncoder::new(HashGridSpec::default()).unwrap();
        let p = HashGridParams::zeros(enc.spec());
        assert!(matches!(
            enc.encode(&p, &[f64::NAN, 0.0, 0.0]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn out_of_bounds_positions_clamp() {
        let s = spec(2, 256, 4, 2.0);
        let enc = HashEncoder::new(s.clone()).unwrap();
        let p = rand_params(&s, 2);
        let a = enc.encode(&p, &[1.7, -0.2, 0.5]).unwrap();
        let b = enc.encode(&p, &[1.0, 0.0, 0.5]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn backward_at_vertex_hits_single_row() {
        let s = spec(2, 1 << 12, 4, 2.0);
        let enc = HashEncoder::new(s.clone()).unwrap();
        let up = vec![1.0, -2.0, 0.5, 3.0];
        let entries = enc.encode_backward(&[0.25, 0.5, 0.75], &up).unwrap();
        // one row per level, two channels each
        assert_eq!(entries.len(), 4);
        for e in &entries {
            assert!((e.value - up[e.level * 2 + e.channel]).abs() < 1e-12);
        }
        assert!(enc.encode_backward(&[0.3, 0.2, 0.9], &[0.0; 4]).unwrap().is_empty());
    }

    #[test]
    fn backward_matches_central_differences() {
        let s = spec(3, 64, 3, 1.7);
        let enc = HashEncoder::new(s.clone()).unwrap();
        let mut p = rand_params(&s, 3);
        let pos = [0.37, 0.81, 0.12];
        let up: Vec<f64> = (0..s.output_dim()).map(|i| 0.3 * i as f64 - 0.7).collect();
        let loss = |p: &HashGridParams| -> f64 {
            enc.encode(p, &pos).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        let mut analytic = vec![0.0; s.param_count()];
        for e in enc.encode_backward(&pos, &up).unwrap() {
            analytic[(e.level * s.table_size + e.row) * 2 + e.channel] += e.value;
        }
        let h = 1e-6;
        for i in 0..s.param_count() {
            let orig = p.tables[i];
            p.tables[i] = orig + h;
            let fp = loss(&p);
            p.tables[i] = orig - h;
            let fm = loss(&p);
            p.tables[i] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let err = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-8);
            assert!(err < 1e-5 || (fd - analytic[i]).abs() < 1e-10, "entry {i}: {fd} vs {}", analytic[i]);
        }
    }

    proptest! {
        #[test]
        fn weights_partition_unity(x in 0.0f64..1.0, y in 0.0f64..1.0, z in 0.0f64..1.0) {
            let enc = HashEncoder::new(HashGridSpec::default()).unwrap();
            let fp = enc.footprint(&[x, y, z]).unwrap();
            for l in 0..8 {
                let s: f64 = fp.weights[l * 8..l * 8 + 8].iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn encode_is_linear_in_params(a in -3.0f64..3.0, x in 0.0f64..1.0, y in 0.0f64..1.0, z in 0.0f64..1.0) {
            let s = spec(3, 256, 3, 2.0);
            let enc = HashEncoder::new(s.clone()).unwrap();
            let p1 = rand_params(&s, 10);
            let p2 = rand_params(&s, 11);
            let combo = HashGridParams {
                tables: p1.tables.iter().zip(&p2.tables).map(|(u, v)| a * u + v).collect(),
            };
            let lhs = enc.encode(&combo, &[x, y, z]).unwrap();
            let e1 = enc.encode(&p1, &[x, y, z]).unwrap();
            let e2 = enc.encode(&p2, &[x, y, z]).unwrap();
            for i in 0..lhs.len() {
                prop_assert!((lhs[i] - (a * e1[i] + e2[i])).abs() < 1e-12);
            }
        }

        #[test]
        fn continuous_across_cell_faces(k in 1u32..16, y in 0.0f64..1.0, z in 0.0f64..1.0) {
            let s = spec(1, 1 << 14, 16, 1.5);
            let enc = HashEncoder::new(s.clone()).unwrap();
            let p = rand_params(&s, 12);
            let x = k as f64 / 16.0;
            let below = enc.encode(&p, &[x - 1e-12, y, z]).unwrap();
            let above = enc.encode(&p, &[x + 1e-12, y, z]).unwrap();
            for i in 0..below.len() {
                prop_assert!((below[i] - above[i]).abs() < 1e-6);
            }
        }
    }
}
