//! Fixtures shared by the kernel benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxelstyle::scene::procedural_style_image;
use voxelstyle::train::RayPool;
use voxelstyle::{make_style_dataset, make_synthetic_dataset, RayBatch, SyntheticScene, ViewDataset, ViewSpec};

pub fn random_positions(n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()
}

/// Small cube and style-plane datasets (16 views each at 32x32).
pub fn tiny_datasets(seed: u64) -> (ViewDataset, ViewDataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let content_spec = ViewSpec { n_views: 16, width: 32, height: 32, ..ViewSpec::content_default() };
    let style_spec = ViewSpec { n_views: 16, width: 32, height: 32, ..ViewSpec::style_default() };
    let content = make_synthetic_dataset(&SyntheticScene::colored_cube(), &content_spec, &mut rng).unwrap();
    let (_, style) = make_style_dataset(&procedural_style_image(16, 16), &style_spec, &mut rng).unwrap();
    (content, style)
}

pub fn sample_batch(ds: &ViewDataset, n: usize, seed: u64) -> RayBatch {
    let pool = RayPool::from_dataset(ds).unwrap();
    pool.sample(n, &mut ChaCha8Rng::seed_from_u64(seed))
}
