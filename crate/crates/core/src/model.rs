//! Complete light field models: ray geometry, encoder and decoder for one
//! slab, and scenes made of several slabs behind a partition.

use serde::{Deserialize, Serialize};

use crate::dataset::ImageBuffer;
use crate::decoder::{DecoderConfig, DecoderParams};
use crate::encoder::{EncoderConfig, FeatureGridPyramid, RayEncoder};
use crate::error::{Error, Result};
use crate::geometry::{
    bundle_shape, generate_ray_bundle, normalize_ray_coords, CameraModel, CoordBounds, Pose, RayBundle, RaySpace,
};
use crate::partition::Partition;
use crate::real::Real;
use crate::tensor::FeatureMap;

/// Fraction of each axis' extent added on both sides of the training ray bounds.
pub const BOUNDS_MARGIN: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderSpec {
    Grid(EncoderConfig),
    Frequency { num_freqs: usize },
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec::Grid(EncoderConfig::default())
    }
}

/// Architecture of one light field model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder: EncoderSpec,
    pub decoder: DecoderConfig,
    /// Full-resolution pixels per ray-bundle pixel along each axis.
    pub downsample: usize,
}

impl ModelSpec {
    pub fn validate(&self, camera: &CameraModel) -> Result<()> {
        self.decoder.validate()?;
        if let EncoderSpec::Grid(c) = &self.encoder {
            c.validate()?;
        }
        if self.downsample == 0 {
            return Err(Error::config("downsample must be positive"));
        }
        let (h, w) = bundle_shape(camera, self.downsample);
        let up = self.decoder.upsample_factor();
        if (h * up, w * up) != (camera.height, camera.width) {
            return Err(Error::config(format!(
                "a {h}x{w} bundle upsampled x{up} gives {}x{}, not the {}x{} camera",
                h * up,
                w * up,
                camera.height,
                camera.width
            )));
        }
        Ok(())
    }
}

/// One slab's light field: world pose to image.
#[derive(Clone, Debug)]
pub struct LightFieldModel<T = f32> {
    pub ray_space: RaySpace,
    pub bounds: CoordBounds,
    pub encoder: RayEncoder<T>,
    pub decoder: DecoderParams<T>,
    pub camera: CameraModel,
    pub downsample: usize,
}

impl<T: Real> PartialEq for LightFieldModel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.ray_space == other.ray_space
            && self.bounds == other.bounds
            && self.encoder == other.encoder
            && self.decoder == other.decoder
            && self.camera == other.camera
            && self.downsample == other.downsample
    }
}

/// Slab-coordinate bounds covering every bundle ray of the given poses.
pub fn fit_bounds(
    ray_space: &RaySpace,
    camera: &CameraModel,
    downsample: usize,
    poses: &[Pose],
) -> Result<CoordBounds> {
    let mut rays = Vec::new();
    for pose in poses {
        let bundle = generate_ray_bundle(camera, pose, downsample)?;
        rays.extend(ray_space.parameterize_bundle(&bundle, camera)?.rays);
    }
    CoordBounds::from_rays(&rays, BOUNDS_MARGIN)
}

impl<T: Real> LightFieldModel<T> {
    pub fn new(
        spec: &ModelSpec,
        ray_space: RaySpace,
        bounds: CoordBounds,
        camera: CameraModel,
        seed: u64,
    ) -> Result<Self> {
        camera.validate()?;
        spec.validate(&camera)?;
        bounds.validate()?;
        let encoder = match spec.encoder {
            EncoderSpec::Grid(c) => RayEncoder::Grid(FeatureGridPyramid::init(c, seed)?),
            EncoderSpec::Frequency { num_freqs } => RayEncoder::Frequency { num_freqs },
        };
        let decoder = DecoderParams::init(&spec.decoder, encoder.output_channels(), seed.wrapping_add(1))?;
        Ok(Self { ray_space, bounds, encoder, decoder, camera, downsample: spec.downsample })
    }

    /// A new model whose bounds are fitted to the training poses.
    pub fn fit(spec: &ModelSpec, ray_space: RaySpace, camera: CameraModel, poses: &[Pose], seed: u64) -> Result<Self> {
        spec.validate(&camera)?;
        let bounds = fit_bounds(&ray_space, &camera, spec.downsample, poses)?;
        Self::new(spec, ray_space, bounds, camera, seed)
    }

    pub fn spec(&self) -> ModelSpec {
        let encoder = match &self.encoder {
            RayEncoder::Grid(p) => EncoderSpec::Grid(*p.config()),
            RayEncoder::Frequency { num_freqs } => EncoderSpec::Frequency { num_freqs: *num_freqs },
        };
        ModelSpec { encoder, decoder: self.decoder.config.clone(), downsample: self.downsample }
    }

    /// Output image `(height, width)`.
    pub fn output_shape(&self) -> (usize, usize) {
        (self.camera.height, self.camera.width)
    }

    /// Normalized slab coordinates of the pose's ray bundle.
    pub fn ray_bundle(&self, pose: &Pose) -> Result<RayBundle<crate::geometry::Ray4>> {
        let bundle = generate_ray_bundle(&self.camera, pose, self.downsample)?;
        let slab = self.ray_space.parameterize_bundle(&bundle, &self.camera)?;
        let rays = slab.rays.iter().map(|r| normalize_ray_coords(r, &self.bounds)).collect::<Result<Vec<_>>>()?;
        RayBundle::new(slab.rows, slab.cols, rays)
    }

    /// Eval-mode network output for a pose, `1 × H × W × 3`.
    pub fn render_map(&self, pose: &Pose) -> Result<FeatureMap<T>> {
        let features = self.encoder.encode_bundle(&self.ray_bundle(pose)?)?;
        self.decoder.forward_eval(&features)
    }

    pub fn render(&self, pose: &Pose) -> Result<ImageBuffer> {
        let map = self.render_map(pose)?;
        let data = map.data.iter().map(|v| v.as_f64().clamp(0.0, 1.0) as f32).collect();
        ImageBuffer::new(map.height, map.width, 3, data)
    }

    /// Sets every stored tensor, running statistics included, to zero.
    pub fn zero_parameters(&mut self) {
        self.encoder.params_mut().iter_mut().for_each(|v| *v = T::zero());
        self.decoder = self.decoder.zeros_like();
    }

    pub fn parameter_count(&self) -> usize {
        self.encoder.params().len() + self.decoder.parameter_count()
    }
}

/// All sub-scene models of a scene plus the partition that routes queries.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneModel {
    pub partition: Partition,
    pub sub_models: Vec<LightFieldModel<f32>>,
}

impl SceneModel {
    pub fn new(partition: Partition, sub_models: Vec<LightFieldModel<f32>>) -> Result<Self> {
        if sub_models.len() != partition.sub_scene_count() {
            return Err(Error::invalid(format!(
                "{} partition needs {} models, got {}",
                partition.kind(),
                partition.sub_scene_count(),
                sub_models.len()
            )));
        }
        let shape = sub_models[0].output_shape();
        if sub_models.iter().any(|m| m.output_shape() != shape) {
            return Err(Error::invalid("sub-scene models render at different resolutions"));
        }
        Ok(Self { partition, sub_models })
    }

    /// Output image `(height, width)`.
    pub fn output_shape(&self) -> (usize, usize) {
        self.sub_models[0].output_shape()
    }

    /// Renders the pose with the sub-scene model it routes to, returning that
    /// sub-scene's index as well.
    pub fn render_routed(&self, pose: &Pose) -> Result<(usize, ImageBuffer)> {
        let id = self.partition.route(pose);
        Ok((id, self.sub_models[id].render(pose)?))
    }

    pub fn render_view(&self, pose: &Pose) -> Result<ImageBuffer> {
        Ok(self.render_routed(pose)?.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::SrModuleConfig;

    fn spec(sr: Vec<SrModuleConfig>, downsample: usize) -> ModelSpec {
        ModelSpec {
            encoder: EncoderSpec::Grid(EncoderConfig {
                levels: 2,
                feature_dim: 2,
                min_resolution: 4,
                max_resolution: 8,
            }),
            decoder: DecoderConfig { depth: 2, width: 8, sr_modules: sr, out_channels: 3 },
            downsample,
        }
    }

    #[test]
    fn resolution_mismatch_rejected() {
        let cam = CameraModel::centered(16, 16, 16.0, 1.0).unwrap();
        assert!(spec(vec![SrModuleConfig::X2], 2).validate(&cam).is_ok());
        assert!(matches!(spec(vec![SrModuleConfig::X2], 4).validate(&cam), Err(Error::InvalidConfig(_))));
        assert!(spec(vec![], 1).validate(&cam).is_ok());
    }

    #[test]
    fn zero_model_renders_half_grey() {
        let cam = CameraModel::centered(16, 12, 16.0, 1.0).unwrap();
        let mut m = LightFieldModel::<f32>::new(
            &spec(vec![SrModuleConfig::X2], 2),
            RaySpace::frontal(),
            CoordBounds([[-1.0, 1.0]; 4]),
            cam,
            0,
        )
        .unwrap();
        m.zero_parameters();
        let img = m.render(&Pose::identity()).unwrap();
        assert_eq!((img.height, img.width), (12, 16));
        assert!(img.data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn scene_requires_one_model_per_sub_scene() {
        let cam = CameraModel::centered(8, 8, 8.0, 1.0).unwrap();
        let m =
            LightFieldModel::<f32>::new(&spec(vec![], 1), RaySpace::frontal(), CoordBounds([[-1.0, 1.0]; 4]), cam, 0)
                .unwrap();
        assert!(SceneModel::new(Partition::Frontal, vec![m.clone()]).is_ok());
        assert!(SceneModel::new(Partition::Frontal, vec![m.clone(), m]).is_err());
    }
}
