//! Stylization of multi-resolution hash-grid radiance fields.
//!
//! A [`RadianceModel`] holds two position encoders (content and style) and a
//! shared color MLP. Training both branches jointly puts their feature
//! vectors in a common space, so content features can be re-normalized to
//! the style statistics at render time.

pub mod adam;
pub mod camera;
pub mod checkpoint;
pub mod config;
pub mod consistency;
pub mod dataset;
pub mod error;
pub mod frames;
pub mod geometry;
pub mod hash_grid;
pub mod imaging;
pub mod loss;
pub mod mlp;
pub mod model;
pub mod parallel;
pub mod render;
pub mod scene;
pub mod sh;
pub mod stylize;
pub mod train;

pub use camera::{Camera, Ray};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::Config;
pub use consistency::{backward_warp, consistency_score, masked_error, ConsistencyReport, WarpParams};
pub use dataset::{load_dataset, save_dataset, Background, ViewDataset};
pub use error::{Error, Result};
pub use geometry::{look_at, Aabb, Mat4, Vec3};
pub use hash_grid::{HashEncoder, HashGridParams, HashGridSpec};
pub use imaging::{RgbImage, ScalarMap};
pub use loss::{huber, huber_loss, mse, psnr};
pub use mlp::{MlpParams, MlpShape};
pub use model::{Branch, ModelSpec, RadianceModel, TensorId};
pub use render::{render_image, RenderConfig, RenderOutput, SamplingMode};
pub use scene::{
    image_to_voxel_scene, make_style_dataset, make_synthetic_dataset, render_voxel_scene,
    sample_hemisphere_poses, GroundTruth, SyntheticScene, ViewSpec, VoxelPlaneScene,
};
pub use sh::{sh_encode, DirectionEncoding};
pub use stylize::{
    adain, adain_blend, compute_moments, extract_voxel_features, render_stylized, Direction,
    FeatureMoments, MomentsPair, StyleBlend, VoxelFeatureGrid, VoxelGridSpec,
};
pub use train::{train, train_step, Optimizer, RayBatch, TrainConfig, Trainer};
