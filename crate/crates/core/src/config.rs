//! Run configuration file.
//!
//! A flat TOML document; every key is optional and unknown keys are
//! rejected. Command-line flags override file values.
//!
//! ```toml
//! seed = 7
//! iterations = 2000
//! rays_per_batch = 1024
//! lr_hash = 0.01
//! lr_mlp = 0.001
//! huber_delta = 0.1
//! n_samples = 64
//! levels = 8
//! table_size = 16384
//! alpha = 0.5
//! direction = "content-to-style"
//! voxel_res = 128
//! density_mask = 0.01
//! gaps = [5, 15]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::consistency::{WarpParams, DEFAULT_GAPS};
use crate::error::{Error, Result};
use crate::geometry::Aabb;
use crate::hash_grid::HashGridSpec;
use crate::model::ModelSpec;
use crate::render::{RenderConfig, SamplingMode};
use crate::scene::ViewSpec;
use crate::stylize::{Direction, VoxelGridSpec};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,

    // training
    pub iterations: usize,
    pub rays_per_batch: usize,
    pub lr_hash: f64,
    pub lr_mlp: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub huber_delta: f64,
    pub rays_per_chunk: usize,
    pub checkpoint_every: usize,
    pub log_every: usize,

    // model
    pub levels: usize,
    pub table_size: usize,
    pub features_per_level: usize,
    pub base_resolution: u32,
    pub growth_factor: f64,
    pub geom_dim: usize,
    pub density_hidden: Vec<usize>,
    pub color_hidden: Vec<usize>,

    // rendering
    pub n_samples: usize,
    pub background: [f64; 3],

    // stylization
    pub alpha: f64,
    pub direction: Direction,
    pub voxel_res: u32,
    pub density_mask: Option<f64>,

    // consistency
    pub gaps: Vec<usize>,
    pub depth_tolerance: f64,
    pub opacity_threshold: f64,

    // generated datasets
    pub views: usize,
    pub width: u32,
    pub height: u32,
    pub camera_angle_x: f64,
    pub radius: f64,
}

impl Default for Config {
    fn default() -> Self {
        let t = TrainConfig::default();
        let m = ModelSpec::default();
        let g = &m.content_grid;
        let w = WarpParams::default();
        let v = ViewSpec::content_default();
        Config {
            seed: t.seed,
            iterations: t.iterations,
            rays_per_batch: t.rays_per_batch,
            lr_hash: t.lr_hash,
            lr_mlp: t.lr_mlp,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            huber_delta: t.huber_delta,
            rays_per_chunk: t.rays_per_chunk,
            checkpoint_every: 1000,
            log_every: 100,
            levels: g.levels,
            table_size: g.table_size,
            features_per_level: g.features_per_level,
            base_resolution: g.base_resolution,
            growth_factor: g.growth_factor,
            geom_dim: m.geom_dim,
            density_hidden: m.density_hidden.clone(),
            color_hidden: m.color_hidden.clone(),
            n_samples: t.n_samples,
            background: [1.0; 3],
            alpha: 1.0,
            direction: Direction::ContentToStyle,
            voxel_res: VoxelGridSpec::default().resolution,
            density_mask: None,
            gaps: DEFAULT_GAPS.to_vec(),
            depth_tolerance: w.depth_tolerance,
            opacity_threshold: w.opacity_threshold,
            views: v.n_views,
            width: v.width,
            height: v.height,
            camera_angle_x: v.camera_angle_x,
            radius: v.radius,
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().replace('\n', " ")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn grid_spec(&self) -> HashGridSpec {
        HashGridSpec {
            levels: self.levels,
            table_size: self.table_size,
            features_per_level: self.features_per_level,
            base_resolution: self.base_resolution,
            growth_factor: self.growth_factor,
            bounds: Aabb::unit(),
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let spec = ModelSpec {
            geom_dim: self.geom_dim,
            density_hidden: self.density_hidden.clone(),
            color_hidden: self.color_hidden.clone(),
            content_grid: self.grid_spec(),
            style_grid: self.grid_spec(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = TrainConfig {
            iterations: self.iterations,
            rays_per_batch: self.rays_per_batch,
            lr_hash: self.lr_hash,
            lr_mlp: self.lr_mlp,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            huber_delta: self.huber_delta,
            seed: self.seed,
            n_samples: self.n_samples,
            sampling: SamplingMode::Stratified,
            rays_per_chunk: self.rays_per_chunk,
            bounds: Aabb::unit(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn render_config(&self) -> Result<RenderConfig> {
        if self.n_samples == 0 {
            return Err(Error::out_of_range("n_samples", 0, ">= 1"));
        }
        Ok(RenderConfig {
            n_samples: self.n_samples,
            mode: SamplingMode::Midpoint,
            seed: self.seed,
            background: self.background,
            bounds: Aabb::unit(),
            rays_per_chunk: RenderConfig::default().rays_per_chunk,
        })
    }

    pub fn voxel_spec(&self) -> Result<VoxelGridSpec> {
        let s = VoxelGridSpec::new(self.voxel_res);
        s.validate()?;
        Ok(s)
    }

    pub fn warp_params(&self) -> Result<WarpParams> {
        if !(self.depth_tolerance > 0.0) {
            return Err(Error::out_of_range("depth_tolerance", self.depth_tolerance, "> 0"));
        }
        if !self.opacity_threshold.is_finite() {
            return Err(Error::NonFinite("opacity_threshold"));
        }
        Ok(WarpParams {
            depth_tolerance: self.depth_tolerance,
            opacity_threshold: self.opacity_threshold,
        })
    }

    pub fn view_spec(&self) -> Result<ViewSpec> {
        if self.views == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("views, width and height must be positive".into()));
        }
        if !(self.camera_angle_x > 0.0 && self.camera_angle_x < std::f64::consts::PI) {
            return Err(Error::out_of_range("camera_angle_x", self.camera_angle_x, "(0, pi)"));
        }
        Ok(ViewSpec {
            n_views: self.views,
            width: self.width,
            height: self.height,
            camera_angle_x: self.camera_angle_x,
            radius: self.radius,
        })
    }
}
