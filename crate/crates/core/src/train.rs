//! Joint optimisation of both branches and the shared color MLP.
//!
//! Every iteration draws one ray batch per scene. Content rays flow through
//! the content branch and style rays through the style branch; the shared
//! color MLP receives the sum of both scenes' gradients. Batches are split
//! into fixed-size ray chunks whose gradients are merged in chunk order, so
//! results do not depend on the number of worker threads.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::{AdamHyper, AdamState};
use crate::camera::Ray;
use crate::dataset::ViewDataset;
use crate::error::{Error, Result};
use crate::geometry::Aabb;
use crate::loss::{huber, huber_derivative};
use crate::model::{Branch, BranchGrads, ModelGrads, RadianceModel, TensorId};
use crate::render::{composite_backward_unchecked, composite_unchecked, mix_seed, ChunkSamples, CompositeGrad, SamplingMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub rays_per_batch: usize,
    pub lr_hash: f64,
    pub lr_mlp: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub huber_delta: f64,
    pub seed: u64,
    pub n_samples: usize,
    pub sampling: SamplingMode,
    pub rays_per_chunk: usize,
    pub bounds: Aabb,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 20_000,
            rays_per_batch: 4096,
            lr_hash: 1e-2,
            lr_mlp: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            adam_eps: 1e-15,
            huber_delta: 0.1,
            seed: 0,
            n_samples: 128,
            sampling: SamplingMode::Stratified,
            rays_per_chunk: 128,
            bounds: Aabb::unit(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::out_of_range("iterations", 0, ">= 1"));
        }
        if self.rays_per_batch == 0 {
            return Err(Error::out_of_range("rays_per_batch", 0, ">= 1"));
        }
        if self.n_samples == 0 {
            return Err(Error::out_of_range("n_samples", 0, ">= 1"));
        }
        if self.rays_per_chunk == 0 {
            return Err(Error::out_of_range("rays_per_chunk", 0, ">= 1"));
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::out_of_range("huber_delta", self.huber_delta, "> 0"));
        }
        self.hyper(self.lr_hash).validate()?;
        self.hyper(self.lr_mlp).validate()
    }

    fn hyper(&self, lr: f64) -> AdamHyper {
        AdamHyper {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    fn lr_for(&self, id: TensorId) -> f64 {
        if id.is_hash_table() {
            self.lr_hash
        } else {
            self.lr_mlp
        }
    }
}

/// Rays and target colors drawn from one scene.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RayBatch {
    pub rays: Vec<Ray>,
    pub targets: Vec<[f64; 3]>,
    pub background: [f64; 3],
}

impl RayBatch {
    pub fn empty(background: [f64; 3]) -> Self {
        RayBatch {
            rays: Vec::new(),
            targets: Vec::new(),
            background,
        }
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }
}

/// Adam state for all five parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    states: Vec<AdamState>,
}

impl Optimizer {
    pub fn new(model: &RadianceModel) -> Self {
        Optimizer {
            states: TensorId::ALL
                .iter()
                .map(|&id| AdamState::new(model.tensor(id).len()))
                .collect(),
        }
    }

    pub fn state(&self, id: TensorId) -> &AdamState {
        &self.states[id as usize]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub content: f64,
    pub style: f64,
}

struct ChunkGrads {
    loss: f64,
    branch: BranchGrads,
    color: Vec<f64>,
}

/// Loss and gradients of one ray chunk. `norm` is the scene batch size.
#[allow(clippy::too_many_arguments)]
fn chunk_gradients(
    model: &RadianceModel,
    branch: Branch,
    rays: &[Ray],
    targets: &[[f64; 3]],
    background: [f64; 3],
    config: &TrainConfig,
    norm: f64,
    seed: u64,
) -> Result<ChunkGrads> {
    let enc = model.branch(branch);
    let mut grads = ChunkGrads {
        loss: 0.0,
        branch: BranchGrads {
            tables: vec![0.0; enc.tables.tables.len()],
            density: vec![0.0; enc.density.params.len()],
        },
        color: vec![0.0; model.color_mlp().params.len()],
    };
    let samples = ChunkSamples::build(rays, &config.bounds, config.n_samples, config.sampling, |i| {
        ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64))
    });
    let delta = config.huber_delta;
    if samples.len() == 0 {
        for t in targets {
            grads.loss += (0..3).map(|c| huber((background[c] - t[c]).abs(), delta)).sum::<f64>() / norm;
        }
        return Ok(grads);
    }
    let pos = model.position_batch(branch, &samples.positions)?;
    let color = model.color_batch(pos.geom(), &samples.dir_enc, samples.len())?;
    let rgbs: Vec<[f64; 3]> = color.rgb.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let n = samples.n_per_ray;
    let mut d_sigma = vec![0.0; samples.len()];
    let mut d_rgb = vec![[0.0; 3]; samples.len()];
    for (r, span) in samples.spans.iter().enumerate() {
        let target = targets[r];
        let Some((s, t_far)) = *span else {
            grads.loss += (0..3).map(|c| huber((background[c] - target[c]).abs(), delta)).sum::<f64>() / norm;
            continue;
        };
        let (sig, col, ts) = (&pos.sigma[s..s + n], &rgbs[s..s + n], &samples.ts[s..s + n]);
        let out = composite_unchecked(sig, col, ts, t_far, background);
        let mut up = CompositeGrad::default();
        for c in 0..3 {
            let diff = out.color[c] - target[c];
            grads.loss += huber(diff.abs(), delta) / norm;
            up.color[c] = huber_derivative(diff, delta) / norm;
        }
        composite_backward_unchecked(
            sig,
            col,
            ts,
            t_far,
            background,
            &up,
            &mut d_sigma[s..s + n],
            &mut d_rgb[s..s + n],
        );
    }
    let d_rgb_flat: Vec<f64> = d_rgb.iter().flatten().copied().collect();
    let d_geom = model.color_backward(&color, &d_rgb_flat, &mut grads.color)?;
    model.position_backward(branch, &pos, &d_geom, &d_sigma, &mut grads.branch)?;
    Ok(grads)
}

/// Sums `parts` into `total` in part order, parallel over disjoint index
/// ranges.
fn ordered_sum(total: &mut [f64], parts: &[&[f64]]) {
    const BLOCK: usize = 4096;
    total
        .par_chunks_mut(BLOCK)
        .enumerate()
        .for_each(|(b, dst)| {
            let (off, len) = (b * BLOCK, dst.len());
            for p in parts {
                for (d, s) in dst.iter_mut().zip(&p[off..off + len]) {
                    *d += s;
                }
            }
        });
}

struct SceneGrads {
    loss: f64,
    branch: BranchGrads,
    color: Vec<f64>,
}

fn scene_gradients(
    model: &RadianceModel,
    branch: Branch,
    batch: &RayBatch,
    config: &TrainConfig,
    seed: u64,
) -> Result<SceneGrads> {
    if batch.targets.len() != batch.rays.len() {
        return Err(Error::dims("batch targets", batch.rays.len(), batch.targets.len()));
    }
    let norm = batch.len() as f64;
    let chunk = config.rays_per_chunk;
    let parts: Vec<ChunkGrads> = batch
        .rays
        .par_chunks(chunk)
        .zip(batch.targets.par_chunks(chunk))
        .enumerate()
        .map(|(ci, (rays, targets))| {
            chunk_gradients(model, branch, rays, targets, batch.background, config, norm, mix_seed(seed, ci as u64))
        })
        .collect::<Result<_>>()?;
    let enc = model.branch(branch);
    let mut out = SceneGrads {
        loss: parts.iter().map(|p| p.loss).sum(),
        branch: BranchGrads {
            tables: vec![0.0; enc.tables.tables.len()],
            density: vec![0.0; enc.density.params.len()],
        },
        color: vec![0.0; model.color_mlp().params.len()],
    };
    let tables: Vec<&[f64]> = parts.iter().map(|p| p.branch.tables.as_slice()).collect();
    ordered_sum(&mut out.branch.tables, &tables);
    for p in &parts {
        out.branch.density.iter_mut().zip(&p.branch.density).for_each(|(a, b)| *a += b);
        out.color.iter_mut().zip(&p.color).for_each(|(a, b)| *a += b);
    }
    Ok(out)
}

/// Loss and gradients of both scenes without touching the parameters.
/// Each scene's loss is the per-ray Huber loss summed over channels and
/// averaged over its batch. An empty batch contributes nothing.
pub fn batch_gradients(
    model: &RadianceModel,
    content: &RayBatch,
    style: &RayBatch,
    config: &TrainConfig,
    step_seed: u64,
) -> Result<(StepLosses, ModelGrads)> {
    let mut losses = StepLosses::default();
    let mut grads = model.zero_grads();
    for (branch, batch) in [(Branch::Content, content), (Branch::Style, style)] {
        if batch.is_empty() {
            continue;
        }
        let g = scene_gradients(model, branch, batch, config, mix_seed(step_seed, branch as u64))?;
        match branch {
            Branch::Content => losses.content = g.loss,
            Branch::Style => losses.style = g.loss,
        }
        grads.color.iter_mut().zip(&g.color).for_each(|(a, b)| *a += b);
        *grads.branch_mut(branch) = g.branch;
    }
    Ok((losses, grads))
}

/// One joint optimisation step. Either batch may be empty (the matching
/// branch is then left untouched), but not both.
pub fn train_step(
    model: &mut RadianceModel,
    content: &RayBatch,
    style: &RayBatch,
    optimizer: &mut Optimizer,
    config: &TrainConfig,
    step_seed: u64,
) -> Result<StepLosses> {
    if content.is_empty() && style.is_empty() {
        return Err(Error::Empty("both training batches are empty"));
    }
    let (losses, grads) = batch_gradients(model, content, style, config, step_seed)?;
    for (branch, batch) in [(Branch::Content, content), (Branch::Style, style)] {
        if batch.is_empty() {
            continue;
        }
        let g = grads.branch(branch);
        let (tables_id, density_id) = match branch {
            Branch::Content => (TensorId::ContentTables, TensorId::ContentDensity),
            Branch::Style => (TensorId::StyleTables, TensorId::StyleDensity),
        };
        apply(model, optimizer, config, tables_id, &g.tables)?;
        apply(model, optimizer, config, density_id, &g.density)?;
    }
    apply(model, optimizer, config, TensorId::Color, &grads.color)?;
    Ok(losses)
}

fn apply(
    model: &mut RadianceModel,
    optimizer: &mut Optimizer,
    config: &TrainConfig,
    id: TensorId,
    grads: &[f64],
) -> Result<()> {
    let hp = config.hyper(config.lr_for(id));
    optimizer.states[id as usize].step(model.tensor_mut(id), grads, &hp)
}

/// Every pixel of one dataset, ready for uniform ray sampling.
#[derive(Clone, Debug)]
pub struct RayPool {
    rays: Vec<Ray>,
    targets: Vec<[f64; 3]>,
    background: [f64; 3],
}

impl RayPool {
    pub fn from_dataset(ds: &ViewDataset) -> Result<Self> {
        ds.validate()?;
        let (rays, targets) = ds.ray_pool()?;
        Ok(RayPool {
            rays,
            targets,
            background: ds.background.rgb(),
        })
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> RayBatch {
        let mut batch = RayBatch {
            rays: Vec::with_capacity(n),
            targets: Vec::with_capacity(n),
            background: self.background,
        };
        for _ in 0..n {
            let i = rng.gen_range(0..self.rays.len());
            batch.rays.push(self.rays[i]);
            batch.targets.push(self.targets[i]);
        }
        batch
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub content: f64,
    pub style: f64,
    pub elapsed_s: f64,
}

/// Stateful training loop over two datasets.
pub struct Trainer {
    pub model: RadianceModel,
    pub optimizer: Optimizer,
    config: TrainConfig,
    content: RayPool,
    style: RayPool,
    rng: ChaCha8Rng,
    iteration: usize,
    started: Instant,
    history: Vec<LossRecord>,
}

impl Trainer {
    pub fn new(
        model: RadianceModel,
        content: &ViewDataset,
        style: &ViewDataset,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        let optimizer = Optimizer::new(&model);
        Ok(Trainer {
            content: RayPool::from_dataset(content)?,
            style: RayPool::from_dataset(style)?,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            model,
            optimizer,
            config,
            iteration: 0,
            started: Instant::now(),
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn history(&self) -> &[LossRecord] {
        &self.history
    }

    pub fn step(&mut self) -> Result<LossRecord> {
        let n = self.config.rays_per_batch;
        let content = self.content.sample(n, &mut self.rng);
        let style = self.style.sample(n, &mut self.rng);
        let seed = mix_seed(self.config.seed, self.iteration as u64 + 1);
        let losses = train_step(&mut self.model, &content, &style, &mut self.optimizer, &self.config, seed)?;
        self.iteration += 1;
        let rec = LossRecord {
            iteration: self.iteration,
            content: losses.content,
            style: losses.style,
            elapsed_s: self.started.elapsed().as_secs_f64(),
        };
        self.history.push(rec);
        Ok(rec)
    }

    pub fn into_parts(self) -> (RadianceModel, Vec<LossRecord>) {
        (self.model, self.history)
    }
}

/// Runs `config.iterations` steps. `on_progress` is called after every
/// step with the latest record and the current model.
pub fn train(
    model: RadianceModel,
    content: &ViewDataset,
    style: &ViewDataset,
    config: &TrainConfig,
    mut on_progress: impl FnMut(&LossRecord, &RadianceModel) -> Result<()>,
) -> Result<(RadianceModel, Vec<LossRecord>)> {
    let mut trainer = Trainer::new(model, content, style, config.clone())?;
    for _ in 0..config.iterations {
        let rec = trainer.step()?;
        if !(rec.content.is_finite() && rec.style.is_finite()) {
            return Err(Error::NonFinite("training loss"));
        }
        on_progress(&rec, &trainer.model)?;
    }
    Ok(trainer.into_parts())
}
