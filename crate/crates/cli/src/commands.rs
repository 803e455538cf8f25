//! Subcommand definitions and their implementations.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use lightslab_core::checkpoint::{load_checkpoint, save_checkpoint};
use lightslab_core::dataset::{
    frontal_poses, load_scene, orbit_poses, save_image, synth_lightfield, synth_orbit_lightfield, write_scene,
    ImageBuffer, SynthSpec,
};
use lightslab_core::geometry::{CameraModel, Pose, RaySpace};
use lightslab_core::metrics::MetricReport;
use lightslab_core::partition::{PartitionConfig, PartitionManifest, DEFAULT_OVERLAP_MARGIN};
use lightslab_core::trainer::{train_scene, SceneConfig};
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(name = "lightslab", version, about = "Train, evaluate and serve light-slab scene models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a scene model from a dataset directory.
    Train {
        #[arg(long)]
        scene: PathBuf,
        /// JSON scene configuration (train, model, partition, parallel).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-step loss history as CSV.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Render one view to PNG.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        /// JSON file holding `{"pose": [16 numbers]}` or a bare 16-number array.
        #[arg(long)]
        pose_file: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score renders of every frame of a scene against its images.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        /// Write the CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split a scene's training poses into sub-scenes.
    Partition {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, value_enum)]
        mode: PartitionMode,
        /// Number of clusters (kmeans).
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_OVERLAP_MARGIN)]
        overlap_margin: f64,
        /// Prism radius; defaults to the median camera distance.
        #[arg(long)]
        radius: Option<f64>,
        /// Multiplier on the prism inequality right-hand side.
        #[arg(long, default_value_t = 1.0)]
        plane_offset: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a checkpoint over HTTP.
    Serve {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
    /// Write the analytic test scene.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SynthKind::Frontal)]
        kind: SynthKind,
        /// Image width and height in pixels.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 16)]
        train: usize,
        #[arg(long, default_value_t = 4)]
        holdout: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PartitionMode {
    Frontal,
    Prism,
    Kmeans,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Forward-facing cameras on a small x/y grid.
    Frontal,
    /// Cameras on the upper hemisphere looking at the origin.
    Orbit,
}

/// Offset range of frontal synthetic poses.
const FRONTAL_EXTENT: f64 = 0.1;
/// Camera distance of orbit synthetic poses.
const ORBIT_RADIUS: f64 = 4.0;

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { scene, config, out, history } => train(&scene, &config, &out, history.as_deref()),
        Command::Render { ckpt, pose_file, out } => render(&ckpt, &pose_file, &out),
        Command::Eval { ckpt, scene, out } => {
            let csv = eval(&ckpt, &scene)?.to_csv();
            match out {
                Some(path) => fs::write(&path, csv).with_context(|| format!("writing {}", path.display())),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
        Command::Partition { scene, mode, k, overlap_margin, radius, plane_offset, seed, out } => {
            let config = match mode {
                PartitionMode::Frontal => PartitionConfig::Frontal,
                PartitionMode::Prism => PartitionConfig::Prism { radius, plane_offset },
                PartitionMode::Kmeans => PartitionConfig::Kmeans { k, overlap_margin, seed },
            };
            let manifest = partition(&scene, &config)?;
            write_json(&out, &manifest)
        }
        Command::Serve { ckpt, bind } => {
            let scene = load_checkpoint(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(crate::service::serve(scene, bind))
        }
        Command::Synth { out, kind, size, train, holdout, seed } => synth(&out, kind, size, train, holdout, seed),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn read_config(path: &Path) -> Result<SceneConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn train(scene_dir: &Path, config: &Path, out: &Path, history: Option<&Path>) -> Result<()> {
    let config = read_config(config)?;
    let scene = load_scene(scene_dir).with_context(|| format!("loading scene {}", scene_dir.display()))?;
    log::info!(
        "training on {} frames ({} held out), {} steps",
        scene.train.len(),
        scene.holdout.len(),
        config.train.max_steps
    );
    let (model, histories) = train_scene(&scene, &config)?;
    save_checkpoint(&model, out).with_context(|| format!("writing {}", out.display()))?;
    if let Some(path) = history {
        let mut csv = String::from("sub_scene,step,loss,lr,psnr_on_holdout\n");
        for (id, h) in histories.iter().enumerate() {
            for line in h.to_csv().lines().skip(1) {
                csv.push_str(&format!("{id},{line}\n"));
            }
        }
        fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    for (id, h) in histories.iter().enumerate() {
        if let Some(last) = h.rows.last() {
            log::info!("sub-scene {id}: final loss {:e}", last.loss);
        }
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PoseFile {
    Wrapped { pose: Vec<f64> },
    Bare(Vec<f64>),
}

/// Reads a pose file: `{"pose": [...]}` or a bare array of 16 row-major numbers.
pub fn read_pose_file(path: &Path) -> Result<Pose> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let values = match serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))? {
        PoseFile::Wrapped { pose } | PoseFile::Bare(pose) => pose,
    };
    Pose::from_row_major(&values).with_context(|| format!("pose in {}", path.display()))
}

pub fn render(ckpt: &Path, pose_file: &Path, out: &Path) -> Result<()> {
    let scene = load_checkpoint(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let pose = read_pose_file(pose_file)?;
    let (id, image) = scene.render_routed(&pose)?;
    log::info!("rendered with sub-scene {id}");
    save_image(&image, out).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

/// The image as it reads back after an 8-bit PNG round trip.
fn quantize(image: &ImageBuffer) -> Result<ImageBuffer> {
    Ok(ImageBuffer::decode_png(&image.encode_png()?)?)
}

/// Renders every training and held-out frame, quantized to 8 bits like the
/// reference images, and scores it.
pub fn eval(ckpt: &Path, scene_dir: &Path) -> Result<MetricReport> {
    let model = load_checkpoint(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let scene = load_scene(scene_dir).with_context(|| format!("loading scene {}", scene_dir.display()))?;
    if model.output_shape() != (scene.camera.height, scene.camera.width) {
        bail!(
            "model renders {:?} but scene images are {}x{}",
            model.output_shape(),
            scene.camera.height,
            scene.camera.width
        );
    }
    let frames: Vec<_> =
        scene.train_names.iter().zip(&scene.train).chain(scene.holdout_names.iter().zip(&scene.holdout)).collect();
    let mut renders = Vec::with_capacity(frames.len());
    for (name, sample) in &frames {
        let image = model.render_view(&sample.pose).with_context(|| format!("rendering {name}"))?;
        renders.push(quantize(&image)?);
    }
    let pairs: Vec<_> = frames.iter().zip(&renders).map(|((name, s), r)| ((*name).clone(), r, &s.target)).collect();
    Ok(MetricReport::evaluate(&pairs)?)
}

pub fn partition(scene_dir: &Path, config: &PartitionConfig) -> Result<PartitionManifest> {
    let scene = load_scene(scene_dir).with_context(|| format!("loading scene {}", scene_dir.display()))?;
    let poses: Vec<_> = scene.train.iter().map(|s| s.pose).collect();
    let partition = config.build(&poses)?;
    Ok(PartitionManifest::build(&partition, &poses, &scene.train_names)?)
}

pub fn synth(out: &Path, kind: SynthKind, size: usize, train: usize, holdout: usize, seed: u64) -> Result<()> {
    if train == 0 {
        bail!("--train must be positive");
    }
    let camera = CameraModel::centered(size, size, size as f64, 1.0)?;
    let spec = SynthSpec::default();
    let samples = match kind {
        SynthKind::Frontal => {
            let poses = frontal_poses(train + holdout, FRONTAL_EXTENT, seed);
            synth_lightfield(&spec, &camera, &poses, &RaySpace::frontal())?
        }
        SynthKind::Orbit => {
            let poses = orbit_poses(train + holdout, ORBIT_RADIUS, seed)?;
            synth_orbit_lightfield(&spec, &camera, &poses)?
        }
    };
    let (train_set, hold_set) = split_holdout(samples, holdout);
    write_scene(out, &camera, &train_set, &hold_set).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

/// Spreads the held-out frames evenly through the pose sequence.
fn split_holdout<T>(samples: Vec<T>, holdout: usize) -> (Vec<T>, Vec<T>) {
    let n = samples.len();
    let mut train = Vec::with_capacity(n - holdout);
    let mut hold = Vec::with_capacity(holdout);
    let held: Vec<usize> = (0..holdout).map(|i| (2 * i + 1) * n / (2 * holdout)).collect();
    for (i, s) in samples.into_iter().enumerate() {
        if held.contains(&i) {
            hold.push(s);
        } else {
            train.push(s);
        }
    }
    (train, hold)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holdout_split_is_spread_and_sized() {
        let (t, h) = split_holdout((0..20).collect(), 4);
        assert_eq!(h, vec![2, 7, 12, 17]);
        assert_eq!(t.len(), 16);
        let (t, h) = split_holdout((0..5).collect::<Vec<_>>(), 0);
        assert_eq!((t.len(), h.len()), (5, 0));
    }

    #[test]
    fn cli_parses_subcommands() {
        let cli = Cli::try_parse_from(["lightslab", "partition", "--scene", "s", "--mode", "prism", "--out", "m.json"])
            .unwrap();
        assert!(matches!(cli.command, Command::Partition { mode: PartitionMode::Prism, .. }));
        assert!(
            Cli::try_parse_from(["lightslab", "partition", "--scene", "s", "--mode", "cube", "--out", "m"]).is_err()
        );
        assert!(Cli::try_parse_from(["lightslab", "frobnicate"]).is_err());
    }
}
