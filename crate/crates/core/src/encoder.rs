//! Factored multi-resolution feature grids over the 4D ray space.
//!
//! The 4D grid is replaced by six 2D grids, one per coordinate pair
//! (xy, xu, xv, yu, yv, uv), each stored at `L` resolutions. A ray's feature
//! is the concatenation, level-major, of the six bilinearly interpolated
//! `F`-vectors at every level: `6·L·F` values in total.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Ray4, RayBundle};
use crate::real::Real;
use crate::tensor::FeatureMap;

/// Coordinate pairs in concatenation order; indices into `(x, y, u, v)`.
pub const AXIS_PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
pub const PAIR_NAMES: [&str; 6] = ["xy", "xu", "xv", "yu", "yv", "uv"];

pub const INIT_SCALE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub levels: usize,
    pub feature_dim: usize,
    pub min_resolution: usize,
    pub max_resolution: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { levels: 16, feature_dim: 4, min_resolution: 16, max_resolution: 256 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.feature_dim == 0 {
            return Err(Error::config("encoder needs at least one level and one feature"));
        }
        if self.min_resolution < 2 || self.min_resolution > self.max_resolution {
            return Err(Error::config(format!(
                "encoder resolutions must satisfy 2 <= min ({}) <= max ({})",
                self.min_resolution, self.max_resolution
            )));
        }
        Ok(())
    }

    /// Channels of the encoded feature map: `6·L·F`.
    pub fn output_channels(&self) -> usize {
        6 * self.levels * self.feature_dim
    }
}

/// Geometric progression from `min_resolution` to `max_resolution`, floored.
pub fn level_resolutions(config: &EncoderConfig) -> Vec<usize> {
    if config.levels == 1 {
        return vec![config.min_resolution];
    }
    let lo = (config.min_resolution as f64).ln();
    let hi = (config.max_resolution as f64).ln();
    let growth = (hi - lo) / (config.levels - 1) as f64;
    (0..config.levels)
        .map(|l| {
            let n = config.min_resolution as f64 * (growth * l as f64).exp();
            // absorb rounding at exact integers, e.g. the top level
            ((n + 1e-9).floor() as usize).clamp(config.min_resolution, config.max_resolution)
        })
        .collect()
}

/// Six 2D grids per level. Within one `(pair, level)` block, node `(i, j)`
/// (index `i` along the pair's first axis, `j` along its second) stores its
/// `F` features at `((i·N + j)·F ..)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGridPyramid<T> {
    config: EncoderConfig,
    resolutions: Vec<usize>,
    offsets: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> FeatureGridPyramid<T> {
    pub fn zeros(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let resolutions = level_resolutions(&config);
        let mut offsets = Vec::with_capacity(6 * config.levels);
        let mut total = 0;
        for _pair in 0..6 {
            for &n in &resolutions {
                offsets.push(total);
                total += n * n * config.feature_dim;
            }
        }
        Ok(Self { config, resolutions, offsets, data: vec![T::zero(); total] })
    }

    /// Features uniform in `[−1e-4, 1e-4]`, reproducible from `seed`.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in p.data.iter_mut() {
            *v = T::of(rng.random_range(-INIT_SCALE..=INIT_SCALE));
        }
        Ok(p)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn resolutions(&self) -> &[usize] {
        &self.resolutions
    }

    pub fn parameter_count(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn replace_data(&mut self, data: Vec<T>) -> Result<()> {
        if data.len() != self.data.len() {
            return Err(Error::invalid("grid data length mismatch"));
        }
        self.data = data;
        Ok(())
    }

    fn block_range(&self, pair: usize, level: usize) -> std::ops::Range<usize> {
        let n = self.resolutions[level];
        let start = self.offsets[pair * self.config.levels + level];
        start..start + n * n * self.config.feature_dim
    }

    /// The `N×N×F` block of one pair at one level.
    pub fn level(&self, pair: usize, level: usize) -> &[T] {
        &self.data[self.block_range(pair, level)]
    }

    pub fn level_mut(&mut self, pair: usize, level: usize) -> &mut [T] {
        let r = self.block_range(pair, level);
        &mut self.data[r]
    }

    /// Same shape, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self { data: vec![T::zero(); self.data.len()], ..self.clone_shape() }
    }

    fn clone_shape(&self) -> Self {
        Self {
            config: self.config,
            resolutions: self.resolutions.clone(),
            offsets: self.offsets.clone(),
            data: Vec::new(),
        }
    }

    /// Corner indices and bilinear weights of every `(pair, level)` lookup.
    fn lookups(&self, r: &Ray4) -> Result<Vec<Corner<T>>> {
        let c = r.to_array();
        for (axis, &v) in c.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfBounds { axis, value: v });
            }
        }
        let f = self.config.feature_dim;
        let mut out = Vec::with_capacity(6 * self.config.levels);
        for (level, &n) in self.resolutions.iter().enumerate() {
            for (pair, &(a, b)) in AXIS_PAIRS.iter().enumerate() {
                let base = self.offsets[pair * self.config.levels + level];
                let (i0, fa) = cell(c[a], n);
                let (j0, fb) = cell(c[b], n);
                let node = |i: usize, j: usize| base + (i * n + j) * f;
                out.push(Corner {
                    index: [node(i0, j0), node(i0, j0 + 1), node(i0 + 1, j0), node(i0 + 1, j0 + 1)],
                    weight: [
                        T::of((1.0 - fa) * (1.0 - fb)),
                        T::of((1.0 - fa) * fb),
                        T::of(fa * (1.0 - fb)),
                        T::of(fa * fb),
                    ],
                });
            }
        }
        Ok(out)
    }

    fn encode_into(&self, r: &Ray4, out: &mut [T]) -> Result<()> {
        let f = self.config.feature_dim;
        for (slot, corner) in self.lookups(r)?.iter().enumerate() {
            let dst = &mut out[slot * f..(slot + 1) * f];
            dst.fill(T::zero());
            for (&idx, &w) in corner.index.iter().zip(&corner.weight) {
                for (d, &s) in dst.iter_mut().zip(&self.data[idx..idx + f]) {
                    *d += w * s;
                }
            }
        }
        Ok(())
    }

    /// `6·L·F` features of a ray with coordinates in `[0, 1]`.
    pub fn encode_ray(&self, r_unit: &Ray4) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.config.output_channels()];
        self.encode_into(r_unit, &mut out)?;
        Ok(out)
    }

    /// Encodes a normalized bundle into a `1 × rows × cols × 6LF` map.
    pub fn encode_bundle(&self, bundle: &RayBundle<Ray4>) -> Result<FeatureMap<T>> {
        let ch = self.config.output_channels();
        let mut map = FeatureMap::zeros(1, bundle.rows, bundle.cols, ch);
        for (ray, dst) in bundle.rays.iter().zip(map.data.chunks_exact_mut(ch)) {
            self.encode_into(ray, dst)?;
        }
        Ok(map)
    }

    /// Adds the adjoint of [`Self::encode_bundle`] applied to `upstream` into
    /// `grad`, a buffer laid out like [`Self::data`].
    pub fn accumulate_backward(
        &self,
        bundle: &RayBundle<Ray4>,
        upstream: &FeatureMap<T>,
        grad: &mut [T],
    ) -> Result<()> {
        let ch = self.config.output_channels();
        if upstream.batch != 1
            || upstream.height != bundle.rows
            || upstream.width != bundle.cols
            || upstream.channels != ch
            || bundle.rays.len() != bundle.rows * bundle.cols
        {
            return Err(Error::invalid(format!(
                "upstream gradient shape {:?} does not match bundle {}x{} with {ch} channels",
                upstream.shape(),
                bundle.rows,
                bundle.cols
            )));
        }
        if grad.len() != self.data.len() {
            return Err(Error::invalid("gradient buffer length mismatch"));
        }
        let f = self.config.feature_dim;
        for (ray, up) in bundle.rays.iter().zip(upstream.data.chunks_exact(ch)) {
            for (slot, corner) in self.lookups(ray)?.iter().enumerate() {
                let g = &up[slot * f..(slot + 1) * f];
                for (&idx, &w) in corner.index.iter().zip(&corner.weight) {
                    for (d, &s) in grad[idx..idx + f].iter_mut().zip(g) {
                        *d += w * s;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Gradient of a scalar loss with respect to every grid entry.
pub fn encoder_backward<T: Real>(
    pyramid: &FeatureGridPyramid<T>,
    bundle: &RayBundle<Ray4>,
    upstream: &FeatureMap<T>,
) -> Result<FeatureGridPyramid<T>> {
    let mut grad = pyramid.zeros_like();
    pyramid.accumulate_backward(bundle, upstream, &mut grad.data)?;
    Ok(grad)
}

struct Corner<T> {
    index: [usize; 4],
    weight: [T; 4],
}

/// Lower node index and fractional offset of a unit coordinate on an
/// `n`-node axis (align-corners mapping `c·(n−1)`).
fn cell(c: f64, n: usize) -> (usize, f64) {
    let pos = c * (n - 1) as f64;
    let i0 = (pos.floor() as usize).min(n - 2);
    (i0, pos - i0 as f64)
}

/// Raw coordinates followed by `(sin, cos)(2^k·π·c)` for `k < num_freqs`
/// and each of the four coordinates: `4 + 8·K` values.
pub fn frequency_encode(r: &Ray4, num_freqs: usize) -> Vec<f64> {
    let c = r.to_array();
    let mut out = Vec::with_capacity(4 + 8 * num_freqs);
    out.extend_from_slice(&c);
    for k in 0..num_freqs {
        let scale = (k as f64).exp2() * std::f64::consts::PI;
        for &v in &c {
            out.push((scale * v).sin());
            out.push((scale * v).cos());
        }
    }
    out
}

/// The ray encoder in front of the decoder: learned grids, or the fixed
/// sinusoidal encoding used as an ablation baseline.
#[derive(Clone, Debug, PartialEq)]
pub enum RayEncoder<T> {
    Grid(FeatureGridPyramid<T>),
    Frequency { num_freqs: usize },
}

impl<T: Real> RayEncoder<T> {
    pub fn output_channels(&self) -> usize {
        match self {
            RayEncoder::Grid(p) => p.config().output_channels(),
            RayEncoder::Frequency { num_freqs } => 4 + 8 * num_freqs,
        }
    }

    pub fn encode_bundle(&self, bundle: &RayBundle<Ray4>) -> Result<FeatureMap<T>> {
        match self {
            RayEncoder::Grid(p) => p.encode_bundle(bundle),
            RayEncoder::Frequency { num_freqs } => {
                let ch = self.output_channels();
                let mut data = Vec::with_capacity(bundle.len() * ch);
                for r in &bundle.rays {
                    data.extend(frequency_encode(r, *num_freqs).into_iter().map(T::of));
                }
                FeatureMap::from_vec(1, bundle.rows, bundle.cols, ch, data)
            }
        }
    }

    /// Trainable parameters (empty for the frequency encoding).
    pub fn params(&self) -> &[T] {
        match self {
            RayEncoder::Grid(p) => p.data(),
            RayEncoder::Frequency { .. } => &[],
        }
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        match self {
            RayEncoder::Grid(p) => p.data_mut(),
            RayEncoder::Frequency { .. } => &mut [],
        }
    }

    pub fn accumulate_backward(
        &self,
        bundle: &RayBundle<Ray4>,
        upstream: &FeatureMap<T>,
        grad: &mut [T],
    ) -> Result<()> {
        match self {
            RayEncoder::Grid(p) => p.accumulate_backward(bundle, upstream, grad),
            RayEncoder::Frequency { .. } => Ok(()),
        }
    }
}
