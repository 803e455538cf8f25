//! Scene directories, PNG images, and analytic synthetic light fields.
//!
//! A scene directory holds `transforms.json` (training frames), optionally
//! `transforms_test.json` (held-out frames), and the PNG images they name:
//!
//! ```json
//! {
//!   "camera_angle_x": 0.6911,
//!   "near": 1.0,
//!   "frames": [
//!     { "file_path": "images/frame_000.png",
//!       "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,4],[0,0,0,1]] }
//!   ]
//! }
//! ```
//!
//! `transform_matrix` is camera-to-world with the camera looking down its
//! local −z axis, +x right and +y up. `near` is optional (default 1) and is
//! the depth of the NDC near plane for forward-facing scenes. A `file_path`
//! without an extension gets `.png` appended.

use std::f64::consts::PI;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat, RgbImage};
use nalgebra::{Matrix4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{generate_ray_bundle, CameraModel, Pose, Ray3, Ray4, RaySpace};

/// Rotation orthonormality tolerance for manifest transforms.
pub const POSE_TOLERANCE: f64 = 1e-3;

pub const TRAIN_MANIFEST: &str = "transforms.json";
pub const TEST_MANIFEST: &str = "transforms_test.json";

/// RGB image with values in `[0, 1]`, row-major, channel innermost.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 3 {
            return Err(Error::invalid(format!("images are RGB, got {channels} channels")));
        }
        if data.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("image value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, value: [f32; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| value).collect();
        Self { height, width, channels: 3, data }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// 8-bit RGB with round-to-nearest quantization.
    pub fn to_rgb8(&self) -> RgbImage {
        let bytes = self.data.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, bytes).expect("buffer size matches")
    }

    /// 8-bit RGB PNG bytes.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Cursor::new(Vec::new());
        self.to_rgb8()
            .write_to(&mut out, ImageFormat::Png)
            .map_err(|e| Error::Codec { path: PathBuf::from("<memory>"), message: e.to_string() })?;
        Ok(out.into_inner())
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
            .map_err(|e| Error::Codec { path: PathBuf::from("<memory>"), message: e.to_string() })?;
        from_dynamic(img, Path::new("<memory>"))
    }
}

fn from_dynamic(img: DynamicImage, path: &Path) -> Result<ImageBuffer> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let rgba: Vec<f32> = match img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => img.to_rgba8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => img.to_rgba16().into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
        other => {
            return Err(Error::Codec {
                path: path.to_path_buf(),
                message: format!("unsupported pixel layout {:?}", other.color()),
            })
        }
    };
    let mut data = Vec::with_capacity(w * h * 3);
    for px in rgba.chunks_exact(4) {
        let a = px[3];
        for &c in &px[..3] {
            // over a white background
            data.push(c * a + (1.0 - a));
        }
    }
    ImageBuffer::new(h, w, 3, data)
}

/// Reads an 8- or 16-bit grayscale/RGB(A) PNG.
pub fn load_image(path: &Path) -> Result<ImageBuffer> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| Error::Codec { path: path.to_path_buf(), message: e.to_string() })?;
    from_dynamic(img, path)
}

/// Writes an 8-bit RGB PNG, creating parent directories.
pub fn save_image(image: &ImageBuffer, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let bytes = image.encode_png()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ManifestFile {
    camera_angle_x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    near: Option<f64>,
    frames: Vec<FrameFile>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct FrameFile {
    file_path: String,
    transform_matrix: [[f64; 4]; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub file_path: String,
    pub pose: Pose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneManifest {
    pub camera_angle_x: f64,
    pub near: f64,
    pub frames: Vec<Frame>,
}

impl SceneManifest {
    /// Horizontal focal length in pixels for an image `width` pixels wide.
    pub fn focal(&self, width: usize) -> f64 {
        0.5 * width as f64 / (0.5 * self.camera_angle_x).tan()
    }

    pub fn camera(&self, width: usize, height: usize) -> Result<CameraModel> {
        CameraModel::centered(width, height, self.focal(width), self.near)
    }

    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let raw: ManifestFile = serde_json::from_str(text)
            .map_err(|e| Error::Parse { context: context.to_string(), message: e.to_string() })?;
        let parse_err = |message: String| Error::Parse { context: context.to_string(), message };
        if raw.frames.is_empty() {
            return Err(parse_err("manifest has no frames".into()));
        }
        if !(raw.camera_angle_x > 0.0 && raw.camera_angle_x < PI) {
            return Err(parse_err(format!("camera_angle_x {} is not in (0, π)", raw.camera_angle_x)));
        }
        let near = raw.near.unwrap_or(1.0);
        if !(near > 0.0 && near.is_finite()) {
            return Err(parse_err(format!("near {near} must be positive")));
        }
        let frames = raw
            .frames
            .into_iter()
            .map(|f| {
                let m = Matrix4::from_fn(|r, c| f.transform_matrix[r][c]);
                let pose = Pose::from_matrix(&m, POSE_TOLERANCE)
                    .map_err(|e| parse_err(format!("frame {}: {e}", f.file_path)))?;
                Ok(Frame { file_path: f.file_path, pose })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { camera_angle_x: raw.camera_angle_x, near, frames })
    }

    pub fn to_json(&self) -> String {
        let raw = ManifestFile {
            camera_angle_x: self.camera_angle_x,
            near: Some(self.near),
            frames: self
                .frames
                .iter()
                .map(|f| {
                    let m = f.pose.to_matrix();
                    FrameFile {
                        file_path: f.file_path.clone(),
                        transform_matrix: std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)])),
                    }
                })
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("manifest serializes")
    }
}

pub fn load_manifest(path: &Path) -> Result<SceneManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SceneManifest::parse(&text, &path.display().to_string())
}

/// A posed ground-truth image.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub pose: Pose,
    pub target: ImageBuffer,
}

/// A loaded scene directory.
#[derive(Clone, Debug)]
pub struct Scene {
    pub camera: CameraModel,
    pub train: Vec<TrainSample>,
    pub train_names: Vec<String>,
    pub holdout: Vec<TrainSample>,
    pub holdout_names: Vec<String>,
}

fn resolve_image(dir: &Path, file_path: &str) -> PathBuf {
    let p = dir.join(file_path);
    if p.extension().is_none() {
        p.with_extension("png")
    } else {
        p
    }
}

/// Loads every frame's image, in parallel, preserving manifest order.
fn load_frames(dir: &Path, manifest: &SceneManifest) -> Result<Vec<ImageBuffer>> {
    let paths: Vec<PathBuf> = manifest.frames.iter().map(|f| resolve_image(dir, &f.file_path)).collect();
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(paths.len());
    let chunk = paths.len().div_ceil(workers.max(1));
    std::thread::scope(|s| {
        let handles: Vec<_> = paths
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|p| load_image(p)).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(paths.len());
        for h in handles {
            out.extend(h.join().expect("image loader panicked")?);
        }
        Ok(out)
    })
}

/// Reads `transforms.json` (and `transforms_test.json` if present) from `dir`.
/// All images must share one resolution, which defines the camera.
pub fn load_scene(dir: &Path) -> Result<Scene> {
    let train_manifest = load_manifest(&dir.join(TRAIN_MANIFEST))?;
    let train_images = load_frames(dir, &train_manifest)?;
    let (height, width) = (train_images[0].height, train_images[0].width);
    let camera = train_manifest.camera(width, height)?;
    let check = |images: &[ImageBuffer], manifest: &SceneManifest| -> Result<()> {
        for (img, f) in images.iter().zip(&manifest.frames) {
            if (img.height, img.width) != (height, width) {
                return Err(Error::Parse {
                    context: f.file_path.clone(),
                    message: format!("image is {}x{}, expected {height}x{width}", img.height, img.width),
                });
            }
        }
        Ok(())
    };
    check(&train_images, &train_manifest)?;
    let pair = |m: &SceneManifest, imgs: Vec<ImageBuffer>| -> (Vec<TrainSample>, Vec<String>) {
        let samples = m.frames.iter().zip(imgs).map(|(f, target)| TrainSample { pose: f.pose, target }).collect();
        (samples, m.frames.iter().map(|f| f.file_path.clone()).collect())
    };
    let (train, train_names) = pair(&train_manifest, train_images);
    let test_path = dir.join(TEST_MANIFEST);
    let (holdout, holdout_names) = if test_path.exists() {
        let m = load_manifest(&test_path)?;
        let imgs = load_frames(dir, &m)?;
        check(&imgs, &m)?;
        pair(&m, imgs)
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(Scene { camera, train, train_names, holdout, holdout_names })
}

/// Writes a scene directory in the layout [`load_scene`] reads.
pub fn write_scene(dir: &Path, camera: &CameraModel, train: &[TrainSample], holdout: &[TrainSample]) -> Result<()> {
    let angle = 2.0 * (0.5 * camera.width as f64 / camera.focal_x).atan();
    let write = |samples: &[TrainSample], prefix: &str, manifest: &str| -> Result<()> {
        let mut frames = Vec::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            let file_path = format!("images/{prefix}_{i:03}.png");
            save_image(&s.target, &dir.join(&file_path))?;
            frames.push(Frame { file_path, pose: s.pose });
        }
        let m = SceneManifest { camera_angle_x: angle, near: camera.near, frames };
        let path = dir.join(manifest);
        fs::write(&path, m.to_json()).map_err(|e| Error::io(&path, e))
    };
    write(train, "train", TRAIN_MANIFEST)?;
    if !holdout.is_empty() {
        write(holdout, "test", TEST_MANIFEST)?;
    }
    Ok(())
}

/// Parameters of the analytic light field
/// `c(x, y, u, v) = 0.5 + 0.5·sin(a·x + b·u + φ_c)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub a: f64,
    pub b: f64,
    pub phases: [f64; 3],
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { a: 3.0, b: 2.0, phases: [0.0, 2.0 * PI / 3.0, 4.0 * PI / 3.0] }
    }
}

impl SynthSpec {
    pub fn color(&self, r: &Ray4) -> [f32; 3] {
        self.phases.map(|p| (0.5 + 0.5 * (self.a * r.x + self.b * r.u + p).sin()) as f32)
    }
}

fn render_analytic(
    camera: &CameraModel,
    pose: &Pose,
    color: impl Fn(&Ray3) -> Result<[f32; 3]>,
) -> Result<ImageBuffer> {
    let bundle = generate_ray_bundle(camera, pose, 1)?;
    let mut data = Vec::with_capacity(bundle.len() * 3);
    for ray in &bundle.rays {
        data.extend(color(ray)?);
    }
    ImageBuffer::new(camera.height, camera.width, 3, data)
}

/// Full-resolution images whose pixel colors are the analytic function of
/// each pixel ray's slab coordinates.
pub fn synth_lightfield(
    spec: &SynthSpec,
    camera: &CameraModel,
    poses: &[Pose],
    ray_space: &RaySpace,
) -> Result<Vec<TrainSample>> {
    poses
        .iter()
        .map(|pose| {
            let target = render_analytic(camera, pose, |ray| Ok(spec.color(&ray_space.parameterize(ray, camera)?)))?;
            Ok(TrainSample { pose: *pose, target })
        })
        .collect()
}

/// Analytic light field for cameras all around the origin, a function of each
/// ray's unit direction `d` and moment `o × d` (both constant along the ray).
pub fn synth_orbit_lightfield(spec: &SynthSpec, camera: &CameraModel, poses: &[Pose]) -> Result<Vec<TrainSample>> {
    poses
        .iter()
        .map(|pose| {
            let target = render_analytic(camera, pose, |ray| {
                let d = ray.direction.normalize();
                let m = ray.origin.cross(&d);
                Ok(spec.color(&Ray4::new(d.x, d.y, m.x, m.y)))
            })?;
            Ok(TrainSample { pose: *pose, target })
        })
        .collect()
}

/// Forward-facing poses: identity rotation, distinct small offsets in the
/// `x`/`y` plane, jittered around a regular grid.
pub fn frontal_poses(count: usize, extent: f64, seed: u64) -> Vec<Pose> {
    let side = (count as f64).sqrt().ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cell = 2.0 * extent / side.max(1) as f64;
    (0..count)
        .map(|i| {
            let (gx, gy) = ((i % side) as f64, (i / side) as f64);
            let x = -extent + (gx + rng.random_range(0.2..0.8)) * cell;
            let y = -extent + (gy + rng.random_range(0.2..0.8)) * cell;
            Pose::from_translation(Vector3::new(x, y, 0.0))
        })
        .collect()
}

/// Poses on the upper hemisphere of radius `radius`, looking at the origin
/// with `+z` up. Elevations stay below the pole so `look_at` is defined.
pub fn orbit_poses(count: usize, radius: f64, seed: u64) -> Result<Vec<Pose>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let az = (i as f64 + rng.random_range(0.0..1.0)) * 2.0 * PI / count as f64;
            let el = rng.random_range(0.05..1.4f64);
            let eye = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * radius;
            Pose::look_at(eye, Vector3::zeros(), Vector3::z())
        })
        .collect()
}
