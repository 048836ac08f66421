//! `voxelstyle` command-line tool.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use voxelstyle::checkpoint::{load_checkpoint, save_checkpoint};
use voxelstyle::consistency::{consistency_score, RenderedView};
use voxelstyle::dataset::{load_dataset, load_poses, save_dataset, ViewDataset};
use voxelstyle::frames::{load_rendered_views, save_rendered_views};
use voxelstyle::parallel;
use voxelstyle::render::{mix_seed, render_image, RenderOutput};
use voxelstyle::scene::{make_style_dataset, make_synthetic_dataset, SyntheticScene, ViewSpec};
use voxelstyle::stylize::{check_alpha, render_stylized, Direction, MomentsPair, StyleBlend, DEFAULT_DENSITY_MASK};
use voxelstyle::train::Trainer;
use voxelstyle::{Branch, Camera, Config, Error, RadianceModel, RgbImage};

#[derive(Parser)]
#[command(name = "voxelstyle", version, about = "Train two-branch hash-grid radiance fields and render AdaIN-stylized views")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SceneKind {
    Cube,
    Sphere,
}

#[derive(Subcommand)]
enum Command {
    /// Render a closed-form test scene from random hemisphere views.
    MakeSynthetic {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "cube")]
        scene: SceneKind,
        #[arg(long)]
        views: Option<usize>,
        #[arg(long)]
        width: Option<u32>,
        #[arg(long)]
        height: Option<u32>,
    },
    /// Turn a style image into a voxel-plane scene and render its views.
    MakeStyleScene {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        views: Option<usize>,
    },
    /// Jointly train the content and style branches.
    Train {
        #[command(flatten)]
        common: Common,
        /// Content dataset directory.
        #[arg(long)]
        content: PathBuf,
        /// Style dataset directory or a single style image.
        #[arg(long)]
        style: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        /// Resume from this checkpoint instead of a fresh model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Render one branch without stylization.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Pose file in the transforms manifest layout.
        #[arg(long)]
        poses: PathBuf,
        #[arg(long, default_value = "content")]
        branch: String,
    },
    /// Render stylized views.
    Stylize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        alpha: Option<f64>,
        /// content-to-style or style-to-content.
        #[arg(long)]
        direction: Option<String>,
        #[arg(long)]
        voxel_res: Option<u32>,
        /// Only voxels denser than this enter the moments (default 0.01 when
        /// given without a value).
        #[arg(long, num_args = 0..=1, default_missing_value = "default")]
        density_mask: Option<String>,
        /// Reuse a moments file written by extract-features.
        #[arg(long)]
        moments: Option<PathBuf>,
    },
    /// Compute voxel-grid feature moments of both branches.
    ExtractFeatures {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        voxel_res: Option<u32>,
        #[arg(long, num_args = 0..=1, default_missing_value = "default")]
        density_mask: Option<String>,
    },
    /// Score multi-view consistency of a render sequence.
    EvalConsistency {
        #[command(flatten)]
        common: Common,
        /// Directory written by render or stylize.
        #[arg(long)]
        renders: PathBuf,
        /// Comma-separated frame gaps.
        #[arg(long, value_delimiter = ',')]
        gaps: Option<Vec<usize>>,
    },
}

/// Error with the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_) | Error::OutOfRange { .. } | Error::Config(_) => 2,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    Failure { code: 1, message: format!("i/o error on {}: {e}", path.display()) }
}

fn require(path: &Path, what: &str) -> Outcome {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::usage(format!("{what} '{}' does not exist", path.display())))
    }
}

fn load_config(common: &Common) -> Outcome<Config> {
    let mut cfg = match &common.config {
        Some(p) => {
            require(p, "config file")?;
            Config::load(p)?
        }
        None => Config::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn prepare_out(common: &Common) -> Outcome<PathBuf> {
    fs::create_dir_all(&common.out).map_err(|e| io_fail(&common.out, e))?;
    Ok(common.out.clone())
}

fn parse_mask(arg: &Option<String>, cfg: &Config) -> Outcome<Option<f64>> {
    match arg.as_deref() {
        None => Ok(cfg.density_mask),
        Some("default") => Ok(Some(DEFAULT_DENSITY_MASK)),
        Some(v) => v
            .parse::<f64>()
            .ok()
            .filter(|t| t.is_finite())
            .map(Some)
            .ok_or_else(|| Failure::usage(format!("--density-mask expects a number, got '{v}'"))),
    }
}

fn write_text(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| io_fail(path, e))
}

fn cmd_make_synthetic(common: &Common, scene: SceneKind, views: Option<usize>, width: Option<u32>, height: Option<u32>) -> Outcome {
    let mut cfg = load_config(common)?;
    cfg.views = views.unwrap_or(cfg.views);
    cfg.width = width.unwrap_or(cfg.width);
    cfg.height = height.unwrap_or(cfg.height);
    let spec = cfg.view_spec()?;
    let scene = match scene {
        SceneKind::Cube => SyntheticScene::colored_cube(),
        SceneKind::Sphere => SyntheticScene::Sphere { center: [0.5; 3], radius: 0.3, color: [0.8, 0.4, 0.2] },
    };
    let out = prepare_out(common)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ds = make_synthetic_dataset(&scene, &spec, &mut rng)?;
    save_dataset(&ds, &out)?;
    println!("wrote {} views to {}", ds.views.len(), out.display());
    Ok(())
}

fn style_views(cfg: &Config, views: Option<usize>) -> ViewSpec {
    let mut spec = ViewSpec::style_default();
    spec.n_views = views.unwrap_or(spec.n_views);
    spec.width = cfg.width;
    spec.height = cfg.height;
    spec
}

fn cmd_make_style_scene(common: &Common, image: &Path, views: Option<usize>) -> Outcome {
    let cfg = load_config(common)?;
    require(image, "style image")?;
    let img = RgbImage::load(image, [1.0; 3])?;
    let out = prepare_out(common)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (scene, ds) = make_style_dataset(&img, &style_views(&cfg, views), &mut rng)?;
    save_dataset(&ds, &out)?;
    println!("voxel plane {}x{}; wrote {} views to {}", scene.width, scene.height, ds.views.len(), out.display());
    Ok(())
}

fn load_style(path: &Path, cfg: &Config) -> Outcome<ViewDataset> {
    require(path, "style input")?;
    if path.is_dir() || path.extension().is_some_and(|e| e == "json") {
        return Ok(load_dataset(path, None)?);
    }
    let img = RgbImage::load(path, [1.0; 3])?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x57));
    let (_, ds) = make_style_dataset(&img, &style_views(cfg, None), &mut rng)?;
    Ok(ds)
}

fn cmd_train(common: &Common, content: &Path, style: &Path, iterations: Option<usize>, resume: Option<&Path>) -> Outcome {
    let mut cfg = load_config(common)?;
    cfg.iterations = iterations.unwrap_or(cfg.iterations);
    let train_cfg = cfg.train_config()?;
    let spec = cfg.model_spec()?;
    require(content, "content dataset")?;
    let content_ds = load_dataset(content, None)?;
    let style_ds = load_style(style, &cfg)?;
    let model = match resume {
        Some(p) => {
            require(p, "checkpoint")?;
            load_checkpoint(p)?.model
        }
        None => RadianceModel::new(spec, cfg.seed)?,
    };
    let out = prepare_out(common)?;
    let echo = serde_json::to_value(&cfg).map_err(Error::from)?;
    let ckpt = out.join("model.ckpt");
    let log_path = out.join("loss.tsv");
    let mut log = fs::File::create(&log_path).map_err(|e| io_fail(&log_path, e))?;
    writeln!(log, "iter\tloss_content\tloss_style\telapsed_s").map_err(|e| io_fail(&log_path, e))?;
    let pool = parallel::build_pool(parallel::threads_from_env()?)?;
    pool.install(|| -> Outcome {
        let mut trainer = Trainer::new(model, &content_ds, &style_ds, train_cfg.clone())?;
        for _ in 0..train_cfg.iterations {
            let rec = trainer.step()?;
            if !(rec.content.is_finite() && rec.style.is_finite()) {
                return Err(Error::NonFinite("training loss").into());
            }
            let line = format!("{}, {:.6e}, {:.6e}, {:.2}", rec.iteration, rec.content, rec.style, rec.elapsed_s);
            writeln!(log, "{}\t{:e}\t{:e}\t{:.3}", rec.iteration, rec.content, rec.style, rec.elapsed_s)
                .map_err(|e| io_fail(&log_path, e))?;
            if cfg.log_every > 0 && (rec.iteration % cfg.log_every == 0 || rec.iteration == 1) {
                println!("{line}");
            }
            if cfg.checkpoint_every > 0 && rec.iteration % cfg.checkpoint_every == 0 {
                save_checkpoint(&ckpt, &trainer.model, rec.iteration, &echo)?;
            }
        }
        save_checkpoint(&ckpt, &trainer.model, trainer.iteration(), &echo)?;
        Ok(())
    })?;
    println!("wrote {} and {}", ckpt.display(), log_path.display());
    Ok(())
}

fn load_model(path: &Path) -> Outcome<RadianceModel> {
    require(path, "checkpoint")?;
    Ok(load_checkpoint(path)?.model)
}

fn load_cameras(path: &Path, cfg: &Config) -> Outcome<Vec<Camera>> {
    require(path, "pose file")?;
    let cams = load_poses(path, None).or_else(|_| load_poses(path, Some((cfg.width, cfg.height))))?;
    if cams.is_empty() {
        return Err(Failure::usage(format!("pose file '{}' lists no frames", path.display())));
    }
    Ok(cams)
}

fn to_view(camera: Camera, out: RenderOutput) -> RenderedView {
    RenderedView {
        camera,
        rgb: out.rgb,
        depth: out.depth,
        opacity: out.opacity,
    }
}

fn cmd_render(common: &Common, checkpoint: &Path, poses: &Path, branch: &str) -> Outcome {
    let cfg = load_config(common)?;
    let branch: Branch = branch.parse()?;
    let rcfg = cfg.render_config()?;
    let model = load_model(checkpoint)?;
    let cams = load_cameras(poses, &cfg)?;
    let out = prepare_out(common)?;
    let views = parallel::install(|| -> Outcome<Vec<RenderedView>> {
        cams.into_iter()
            .map(|c| Ok(to_view(c.clone(), render_image(&model, branch, &c, &rcfg)?)))
            .collect()
    })??;
    save_rendered_views(&views, &out)?;
    println!("rendered {} {branch} views to {}", views.len(), out.display());
    Ok(())
}

fn moments_for(model: &RadianceModel, cfg: &Config, mask: Option<f64>) -> Outcome<MomentsPair> {
    let spec = cfg.voxel_spec()?;
    Ok(parallel::install(|| MomentsPair::compute(model, &spec, mask))??)
}

#[allow(clippy::too_many_arguments)]
fn cmd_stylize(
    common: &Common,
    checkpoint: &Path,
    poses: &Path,
    alpha: Option<f64>,
    direction: Option<&str>,
    voxel_res: Option<u32>,
    density_mask: &Option<String>,
    moments: Option<&Path>,
) -> Outcome {
    let mut cfg = load_config(common)?;
    cfg.alpha = alpha.unwrap_or(cfg.alpha);
    check_alpha(cfg.alpha)?;
    if let Some(d) = direction {
        cfg.direction = d.parse::<Direction>()?;
    }
    cfg.voxel_res = voxel_res.unwrap_or(cfg.voxel_res);
    let mask = parse_mask(density_mask, &cfg)?;
    let blend = StyleBlend::new(cfg.alpha, cfg.direction)?;
    let rcfg = cfg.render_config()?;
    let model = load_model(checkpoint)?;
    let cams = load_cameras(poses, &cfg)?;
    let out = prepare_out(common)?;
    let pair = match moments {
        Some(p) => {
            require(p, "moments file")?;
            MomentsPair::load(p)?
        }
        None => moments_for(&model, &cfg, mask)?,
    };
    pair.save(&out.join("moments.json"))?;
    let views = parallel::install(|| -> Outcome<Vec<RenderedView>> {
        cams.into_iter()
            .map(|c| Ok(to_view(c.clone(), render_stylized(&model, &c, &blend, &pair, &rcfg)?)))
            .collect()
    })??;
    save_rendered_views(&views, &out)?;
    println!("rendered {} stylized views ({}, alpha {}) to {}", views.len(), blend.direction, blend.alpha, out.display());
    Ok(())
}

fn cmd_extract(common: &Common, checkpoint: &Path, voxel_res: Option<u32>, density_mask: &Option<String>) -> Outcome {
    let mut cfg = load_config(common)?;
    cfg.voxel_res = voxel_res.unwrap_or(cfg.voxel_res);
    let mask = parse_mask(density_mask, &cfg)?;
    cfg.voxel_spec()?;
    let model = load_model(checkpoint)?;
    let out = prepare_out(common)?;
    let pair = moments_for(&model, &cfg, mask)?;
    let path = out.join("moments.json");
    pair.save(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_eval(common: &Common, renders: &Path, gaps: Option<Vec<usize>>) -> Outcome {
    let mut cfg = load_config(common)?;
    if let Some(g) = gaps {
        cfg.gaps = g;
    }
    let params = cfg.warp_params()?;
    require(renders, "render directory")?;
    let views = load_rendered_views(renders)?;
    let out = prepare_out(common)?;
    let report = parallel::install(|| consistency_score(&views, &cfg.gaps, &params))??;
    let text = report.to_text();
    write_text(&out.join("consistency.txt"), &text)?;
    let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    write_text(&out.join("consistency.json"), &json)?;
    print!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match &cli.command {
        Command::MakeSynthetic { common, scene, views, width, height } => {
            cmd_make_synthetic(common, *scene, *views, *width, *height)
        }
        Command::MakeStyleScene { common, image, views } => cmd_make_style_scene(common, image, *views),
        Command::Train { common, content, style, iterations, checkpoint } => {
            cmd_train(common, content, style, *iterations, checkpoint.as_deref())
        }
        Command::Render { common, checkpoint, poses, branch } => cmd_render(common, checkpoint, poses, branch),
        Command::Stylize { common, checkpoint, poses, alpha, direction, voxel_res, density_mask, moments } => cmd_stylize(
            common,
            checkpoint,
            poses,
            *alpha,
            direction.as_deref(),
            *voxel_res,
            density_mask,
            moments.as_deref(),
        ),
        Command::ExtractFeatures { common, checkpoint, voxel_res, density_mask } => {
            cmd_extract(common, checkpoint, *voxel_res, density_mask)
        }
        Command::EvalConsistency { common, renders, gaps } => cmd_eval(common, renders, gaps.clone()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
