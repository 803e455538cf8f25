//! Convolutional decoder from the low-resolution ray feature map to an RGB
//! image.
//!
//! Layout: a 1×1 stem, `depth / 2` residual blocks of two 1×1 convolutions,
//! one super-resolution stage per configured `(kernel, factor)` pair, and a
//! 1×1 head followed by a sigmoid.
//!
//! * residual block: `gelu(x + norm(conv(gelu(norm(conv(x))))))`
//! * super-resolution stage: `transposed conv → norm → gelu → block → block`
//!
//! Normalization uses per-channel statistics over every spatial position of
//! the batch in training mode and running statistics in evaluation mode.
//! Convolutions that feed a normalization carry no bias.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::{gemm, MatRef, Real};
use crate::tensor::FeatureMap;

pub const NORM_EPS: f64 = 1e-5;
pub const RUNNING_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SrModuleConfig {
    pub kernel_size: usize,
    pub upsample: usize,
}

impl SrModuleConfig {
    pub const X2: Self = Self { kernel_size: 4, upsample: 2 };
    pub const X3: Self = Self { kernel_size: 3, upsample: 3 };
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    /// Total number of point-wise convolutions in the residual stack.
    pub depth: usize,
    pub width: usize,
    pub sr_modules: Vec<SrModuleConfig>,
    pub out_channels: usize,
}

impl DecoderConfig {
    /// Three ×2 stages: the 360° configuration.
    pub fn object_centric(depth: usize, width: usize) -> Self {
        Self { depth, width, sr_modules: vec![SrModuleConfig::X2; 3], out_channels: 3 }
    }

    /// ×2, ×2, ×3 stages: the forward-facing configuration.
    pub fn forward_facing(depth: usize, width: usize) -> Self {
        Self {
            depth,
            width,
            sr_modules: vec![SrModuleConfig::X2, SrModuleConfig::X2, SrModuleConfig::X3],
            out_channels: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 || !self.depth.is_multiple_of(2) {
            return Err(Error::config(format!("decoder depth must be even and >= 2, got {}", self.depth)));
        }
        if self.width == 0 || self.out_channels == 0 {
            return Err(Error::config("decoder width and output channels must be positive"));
        }
        for m in &self.sr_modules {
            padding_for(m.kernel_size, m.upsample)?;
        }
        Ok(())
    }

    /// Product of all upsampling factors.
    pub fn upsample_factor(&self) -> usize {
        self.sr_modules.iter().map(|m| m.upsample).product()
    }
}

/// Padding that makes a transposed convolution upsample by exactly `stride`.
pub fn padding_for(kernel: usize, stride: usize) -> Result<usize> {
    match (kernel, stride) {
        (4, 2) => Ok(1),
        (3, 3) => Ok(0),
        _ => Err(Error::config(format!("unsupported transposed convolution: kernel {kernel}, stride {stride}"))),
    }
}

pub(crate) struct TensorRef<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
    pub trainable: bool,
}

pub(crate) struct TensorMut<'a, T> {
    pub name: String,
    pub data: &'a mut Vec<T>,
    pub trainable: bool,
}

fn uniform<T: Real>(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<T> {
    let s = (1.0 / fan_in as f64).sqrt();
    (0..n).map(|_| T::of(rng.random_range(-s..=s))).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv1x1<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `in × out`, row-major.
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Real> Conv1x1<T> {
    fn init(rng: &mut ChaCha8Rng, cin: usize, cout: usize, bias: bool) -> Self {
        Self {
            in_channels: cin,
            out_channels: cout,
            weight: uniform(rng, cin * cout, cin),
            bias: bias.then(|| vec![T::zero(); cout]),
        }
    }

    fn forward(&self, x: &FeatureMap<T>) -> FeatureMap<T> {
        let p = x.positions();
        let mut out = FeatureMap::zeros(x.batch, x.height, x.width, self.out_channels);
        if let Some(b) = &self.bias {
            for row in out.data.chunks_exact_mut(self.out_channels) {
                row.copy_from_slice(b);
            }
        }
        let beta = if self.bias.is_some() { T::one() } else { T::zero() };
        gemm(
            MatRef::new(&x.data, p, self.in_channels),
            MatRef::new(&self.weight, self.in_channels, self.out_channels),
            &mut out.data,
            beta,
        );
        out
    }

    /// Returns `dx`; accumulates weight and bias gradients into `grad`.
    fn backward(&self, x: &FeatureMap<T>, dy: &FeatureMap<T>, grad: &mut Self) -> FeatureMap<T> {
        let p = x.positions();
        gemm(
            MatRef::new(&x.data, p, self.in_channels).t(),
            MatRef::new(&dy.data, p, self.out_channels),
            &mut grad.weight,
            T::one(),
        );
        if let Some(gb) = grad.bias.as_mut() {
            for row in dy.data.chunks_exact(self.out_channels) {
                for (g, &d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
        }
        let mut dx = FeatureMap::zeros(x.batch, x.height, x.width, self.in_channels);
        gemm(
            MatRef::new(&dy.data, p, self.out_channels),
            MatRef::new(&self.weight, self.in_channels, self.out_channels).t(),
            &mut dx.data,
            T::zero(),
        );
        dx
    }

    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a, T>>) {
        out.push(TensorRef {
            name: format!("{prefix}.weight"),
            shape: vec![self.in_channels, self.out_channels],
            data: &self.weight,
            trainable: true,
        });
        if let Some(b) = &self.bias {
            out.push(TensorRef {
                name: format!("{prefix}.bias"),
                shape: vec![self.out_channels],
                data: b,
                trainable: true,
            });
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a, T>>) {
        out.push(TensorMut { name: format!("{prefix}.weight"), data: &mut self.weight, trainable: true });
        if let Some(b) = self.bias.as_mut() {
            out.push(TensorMut { name: format!("{prefix}.bias"), data: b, trainable: true });
        }
    }
}

/// Per-channel normalization with learned scale/shift and running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Norm<T> {
    pub scale: Vec<T>,
    pub shift: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

struct NormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

/// Batch statistics of one normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> Norm<T> {
    fn new(c: usize) -> Self {
        Self {
            scale: vec![T::one(); c],
            shift: vec![T::zero(); c],
            running_mean: vec![T::zero(); c],
            running_var: vec![T::one(); c],
        }
    }

    fn channels(&self) -> usize {
        self.scale.len()
    }

    fn forward_train(&self, x: &FeatureMap<T>) -> (FeatureMap<T>, NormCache<T>, BatchStats<T>) {
        let c = self.channels();
        let count = T::of(x.positions() as f64);
        let mut mean = vec![T::zero(); c];
        for row in x.data.chunks_exact(c) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / count);
        let mut var = vec![T::zero(); c];
        for row in x.data.chunks_exact(c) {
            for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s = *s / count);
        let eps = T::of(NORM_EPS);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = x.data.clone();
        let mut y = x.clone();
        for (xh_row, y_row) in xhat.chunks_exact_mut(c).zip(y.data.chunks_exact_mut(c)) {
            for ch in 0..c {
                let h = (xh_row[ch] - mean[ch]) * inv_std[ch];
                xh_row[ch] = h;
                y_row[ch] = self.scale[ch] * h + self.shift[ch];
            }
        }
        (y, NormCache { xhat, inv_std }, BatchStats { mean, var })
    }

    fn forward_eval(&self, x: &FeatureMap<T>) -> FeatureMap<T> {
        let c = self.channels();
        let eps = T::of(NORM_EPS);
        let gain: Vec<T> = (0..c).map(|ch| self.scale[ch] / (self.running_var[ch] + eps).sqrt()).collect();
        let mut y = x.clone();
        for row in y.data.chunks_exact_mut(c) {
            for ch in 0..c {
                row[ch] = (row[ch] - self.running_mean[ch]) * gain[ch] + self.shift[ch];
            }
        }
        y
    }

    fn backward(&self, cache: &NormCache<T>, dy: &FeatureMap<T>, grad: &mut Self) -> FeatureMap<T> {
        let c = self.channels();
        let count = T::of(dy.positions() as f64);
        let mut sum_dxhat = vec![T::zero(); c];
        let mut sum_dxhat_xhat = vec![T::zero(); c];
        for (d_row, h_row) in dy.data.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
            for ch in 0..c {
                let d = d_row[ch];
                let h = h_row[ch];
                grad.scale[ch] += d * h;
                grad.shift[ch] += d;
                let dh = d * self.scale[ch];
                sum_dxhat[ch] += dh;
                sum_dxhat_xhat[ch] += dh * h;
            }
        }
        let mut dx = dy.clone();
        for (d_row, h_row) in dx.data.chunks_exact_mut(c).zip(cache.xhat.chunks_exact(c)) {
            for ch in 0..c {
                let dh = d_row[ch] * self.scale[ch];
                d_row[ch] = cache.inv_std[ch] / count * (count * dh - sum_dxhat[ch] - h_row[ch] * sum_dxhat_xhat[ch]);
            }
        }
        dx
    }

    fn update_running(&mut self, stats: &BatchStats<T>, momentum: T) {
        let keep = momentum;
        let take = T::one() - momentum;
        for (r, &m) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = keep * *r + take * m;
        }
        for (r, &v) in self.running_var.iter_mut().zip(&stats.var) {
            *r = keep * *r + take * v;
        }
    }

    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a, T>>) {
        let c = vec![self.channels()];
        for (name, data, trainable) in [
            ("scale", &self.scale, true),
            ("shift", &self.shift, true),
            ("running_mean", &self.running_mean, false),
            ("running_var", &self.running_var, false),
        ] {
            out.push(TensorRef { name: format!("{prefix}.{name}"), shape: c.clone(), data, trainable });
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a, T>>) {
        out.push(TensorMut { name: format!("{prefix}.scale"), data: &mut self.scale, trainable: true });
        out.push(TensorMut { name: format!("{prefix}.shift"), data: &mut self.shift, trainable: true });
        out.push(TensorMut { name: format!("{prefix}.running_mean"), data: &mut self.running_mean, trainable: false });
        out.push(TensorMut { name: format!("{prefix}.running_var"), data: &mut self.running_var, trainable: false });
    }
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

struct Gelu<T> {
    input: FeatureMap<T>,
    cdf: Vec<T>,
}

fn gelu_forward<T: Real>(x: FeatureMap<T>) -> (FeatureMap<T>, Gelu<T>) {
    let half = T::of(0.5);
    let r2 = T::of(std::f64::consts::FRAC_1_SQRT_2);
    let cdf: Vec<T> = x.data.iter().map(|&v| half * (T::one() + (v * r2).erf())).collect();
    let cache = Gelu { input: x, cdf };
    (cache.input_activation(), cache)
}

fn gelu_eval<T: Real>(mut x: FeatureMap<T>) -> FeatureMap<T> {
    let half = T::of(0.5);
    let r2 = T::of(std::f64::consts::FRAC_1_SQRT_2);
    for v in x.data.iter_mut() {
        *v = *v * half * (T::one() + (*v * r2).erf());
    }
    x
}

fn gelu_backward<T: Real>(cache: &Gelu<T>, mut dy: FeatureMap<T>) -> FeatureMap<T> {
    let k = T::of(FRAC_1_SQRT_2PI);
    let half = T::of(0.5);
    for ((d, &x), &p) in dy.data.iter_mut().zip(&cache.input.data).zip(&cache.cdf) {
        let pdf = k * (-half * x * x).exp();
        *d *= p + x * pdf;
    }
    dy
}

fn add_in_place<T: Real>(a: &mut FeatureMap<T>, b: &FeatureMap<T>) {
    for (x, &y) in a.data.iter_mut().zip(&b.data) {
        *x += y;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock<T> {
    pub conv_a: Conv1x1<T>,
    pub norm_a: Norm<T>,
    pub conv_b: Conv1x1<T>,
    pub norm_b: Norm<T>,
}

struct BlockCache<T> {
    input: FeatureMap<T>,
    norm_a: NormCache<T>,
    gelu_a: Gelu<T>,
    norm_b: NormCache<T>,
    gelu_out: Gelu<T>,
}

impl<T: Real> ResidualBlock<T> {
    fn init(rng: &mut ChaCha8Rng, width: usize) -> Self {
        Self {
            conv_a: Conv1x1::init(rng, width, width, false),
            norm_a: Norm::new(width),
            conv_b: Conv1x1::init(rng, width, width, false),
            norm_b: Norm::new(width),
        }
    }

    fn forward_train(&self, x: FeatureMap<T>, stats: &mut Vec<BatchStats<T>>) -> (FeatureMap<T>, BlockCache<T>) {
        let h = self.conv_a.forward(&x);
        let (n, norm_a, s) = self.norm_a.forward_train(&h);
        stats.push(s);
        let (a, gelu_a) = gelu_forward(n);
        let h = self.conv_b.forward(&a);
        let (mut n, norm_b, s) = self.norm_b.forward_train(&h);
        stats.push(s);
        add_in_place(&mut n, &x);
        let (y, gelu_out) = gelu_forward(n);
        (y, BlockCache { input: x, norm_a, gelu_a, norm_b, gelu_out })
    }

    fn forward_eval(&self, x: FeatureMap<T>) -> FeatureMap<T> {
        let a = gelu_eval(self.norm_a.forward_eval(&self.conv_a.forward(&x)));
        let mut n = self.norm_b.forward_eval(&self.conv_b.forward(&a));
        add_in_place(&mut n, &x);
        gelu_eval(n)
    }

    fn backward(&self, cache: &BlockCache<T>, dy: FeatureMap<T>, grad: &mut Self) -> FeatureMap<T> {
        let ds = gelu_backward(&cache.gelu_out, dy);
        let dh = self.norm_b.backward(&cache.norm_b, &ds, &mut grad.norm_b);
        let da = self.conv_b.backward(&cache.gelu_a.input_activation(), &dh, &mut grad.conv_b);
        let dn = gelu_backward(&cache.gelu_a, da);
        let dh = self.norm_a.backward(&cache.norm_a, &dn, &mut grad.norm_a);
        let mut dx = self.conv_a.backward(&cache.input, &dh, &mut grad.conv_a);
        add_in_place(&mut dx, &ds);
        dx
    }

    fn norms_mut(&mut self) -> [&mut Norm<T>; 2] {
        [&mut self.norm_a, &mut self.norm_b]
    }

    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a, T>>) {
        self.conv_a.collect(&format!("{prefix}.conv_a"), out);
        self.norm_a.collect(&format!("{prefix}.norm_a"), out);
        self.conv_b.collect(&format!("{prefix}.conv_b"), out);
        self.norm_b.collect(&format!("{prefix}.norm_b"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a, T>>) {
        self.conv_a.collect_mut(&format!("{prefix}.conv_a"), out);
        self.norm_a.collect_mut(&format!("{prefix}.norm_a"), out);
        self.conv_b.collect_mut(&format!("{prefix}.conv_b"), out);
        self.norm_b.collect_mut(&format!("{prefix}.norm_b"), out);
    }
}

impl<T: Real> Gelu<T> {
    /// The activation output, recomputed from the cached input and CDF.
    fn input_activation(&self) -> FeatureMap<T> {
        FeatureMap {
            batch: self.input.batch,
            height: self.input.height,
            width: self.input.width,
            channels: self.input.channels,
            data: self.input.data.iter().zip(&self.cdf).map(|(&x, &p)| x * p).collect(),
        }
    }
}

/// Fractionally-strided convolution that upsamples by exactly `stride`.
/// Weights are laid out `kernel × kernel × in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransposedConv<T> {
    pub kernel: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Vec<T>,
}

impl<T: Real> TransposedConv<T> {
    pub fn new(kernel: usize, stride: usize, in_channels: usize, out_channels: usize, weight: Vec<T>) -> Result<Self> {
        padding_for(kernel, stride)?;
        if weight.len() != kernel * kernel * in_channels * out_channels {
            return Err(Error::invalid("transposed convolution weight has the wrong length"));
        }
        Ok(Self { kernel, stride, in_channels, out_channels, weight })
    }

    fn init(rng: &mut ChaCha8Rng, m: SrModuleConfig, cin: usize, cout: usize) -> Self {
        let k = m.kernel_size;
        Self {
            kernel: k,
            stride: m.upsample,
            in_channels: cin,
            out_channels: cout,
            weight: uniform(rng, k * k * cin * cout, cin * k * k),
        }
    }

    fn padding(&self) -> usize {
        padding_for(self.kernel, self.stride).expect("validated at construction")
    }

    fn tap(&self, ki: usize, kj: usize) -> &[T] {
        let len = self.in_channels * self.out_channels;
        let start = (ki * self.kernel + kj) * len;
        &self.weight[start..start + len]
    }

    /// Output index of input index `i` under kernel tap `k`, if in range.
    fn target(&self, i: usize, k: usize, out_len: usize) -> Option<usize> {
        let o = (i * self.stride + k) as isize - self.padding() as isize;
        (o >= 0 && (o as usize) < out_len).then_some(o as usize)
    }

    pub fn forward(&self, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        if x.channels != self.in_channels {
            return Err(Error::invalid(format!(
                "transposed convolution expects {} channels, got {}",
                self.in_channels, x.channels
            )));
        }
        let (oh, ow) = (x.height * self.stride, x.width * self.stride);
        let cout = self.out_channels;
        let mut out = FeatureMap::zeros(x.batch, oh, ow, cout);
        let p = x.positions();
        let mut tmp = vec![T::zero(); p * cout];
        for ki in 0..self.kernel {
            for kj in 0..self.kernel {
                gemm(
                    MatRef::new(&x.data, p, self.in_channels),
                    MatRef::new(self.tap(ki, kj), self.in_channels, cout),
                    &mut tmp,
                    T::zero(),
                );
                for b in 0..x.batch {
                    for i in 0..x.height {
                        let Some(oi) = self.target(i, ki, oh) else { continue };
                        for j in 0..x.width {
                            let Some(oj) = self.target(j, kj, ow) else { continue };
                            let src = ((b * x.height + i) * x.width + j) * cout;
                            let dst = ((b * oh + oi) * ow + oj) * cout;
                            for (d, &s) in out.data[dst..dst + cout].iter_mut().zip(&tmp[src..src + cout]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    fn backward(&self, x: &FeatureMap<T>, dy: &FeatureMap<T>, grad: &mut Self) -> FeatureMap<T> {
        let (oh, ow) = (dy.height, dy.width);
        let cout = self.out_channels;
        let cin = self.in_channels;
        let p = x.positions();
        let mut gathered = vec![T::zero(); p * cout];
        let mut dx = FeatureMap::zeros(x.batch, x.height, x.width, cin);
        let tap_len = cin * cout;
        for ki in 0..self.kernel {
            for kj in 0..self.kernel {
                gathered.fill(T::zero());
                for b in 0..x.batch {
                    for i in 0..x.height {
                        let Some(oi) = self.target(i, ki, oh) else { continue };
                        for j in 0..x.width {
                            let Some(oj) = self.target(j, kj, ow) else { continue };
                            let dst = ((b * x.height + i) * x.width + j) * cout;
                            let src = ((b * oh + oi) * ow + oj) * cout;
                            gathered[dst..dst + cout].copy_from_slice(&dy.data[src..src + cout]);
                        }
                    }
                }
                let start = (ki * self.kernel + kj) * tap_len;
                gemm(
                    MatRef::new(&x.data, p, cin).t(),
                    MatRef::new(&gathered, p, cout),
                    &mut grad.weight[start..start + tap_len],
                    T::one(),
                );
                gemm(
                    MatRef::new(&gathered, p, cout),
                    MatRef::new(self.tap(ki, kj), cin, cout).t(),
                    &mut dx.data,
                    T::one(),
                );
            }
        }
        dx
    }

    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a, T>>) {
        out.push(TensorRef {
            name: format!("{prefix}.weight"),
            shape: vec![self.kernel, self.kernel, self.in_channels, self.out_channels],
            data: &self.weight,
            trainable: true,
        });
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a, T>>) {
        out.push(TensorMut { name: format!("{prefix}.weight"), data: &mut self.weight, trainable: true });
    }
}

/// Standalone transposed convolution (`kernel × kernel × in × out` weights).
pub fn transposed_conv_forward<T: Real>(
    input: &FeatureMap<T>,
    weights: &[T],
    kernel: usize,
    stride: usize,
    out_channels: usize,
) -> Result<FeatureMap<T>> {
    let conv = TransposedConv::new(kernel, stride, input.channels, out_channels, weights.to_vec())?;
    conv.forward(input)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SrStage<T> {
    pub upsample: TransposedConv<T>,
    pub norm: Norm<T>,
    pub blocks: [ResidualBlock<T>; 2],
}

struct SrCache<T> {
    input: FeatureMap<T>,
    norm: NormCache<T>,
    gelu: Gelu<T>,
    blocks: Vec<BlockCache<T>>,
}

impl<T: Real> SrStage<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a, T>>) {
        self.upsample.collect(&format!("{prefix}.upsample"), out);
        self.norm.collect(&format!("{prefix}.norm"), out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect(&format!("{prefix}.blocks.{i}"), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a, T>>) {
        self.upsample.collect_mut(&format!("{prefix}.upsample"), out);
        self.norm.collect_mut(&format!("{prefix}.norm"), out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.collect_mut(&format!("{prefix}.blocks.{i}"), out);
        }
    }
}

/// Cached activations of one training forward pass, consumed by
/// [`DecoderParams::backward`].
pub struct ActivationTape<T> {
    version: u64,
    input_shape: [usize; 4],
    stem_input: FeatureMap<T>,
    blocks: Vec<BlockCache<T>>,
    sr: Vec<SrCache<T>>,
    head_input: FeatureMap<T>,
    output: FeatureMap<T>,
    stats: Vec<BatchStats<T>>,
}

impl<T> ActivationTape<T> {
    /// Batch statistics of every normalization layer, in forward order.
    pub fn batch_stats(&self) -> &[BatchStats<T>] {
        &self.stats
    }

    pub fn output(&self) -> &FeatureMap<T> {
        &self.output
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
pub struct DecoderParams<T> {
    pub config: DecoderConfig,
    pub in_channels: usize,
    pub stem: Conv1x1<T>,
    pub blocks: Vec<ResidualBlock<T>>,
    pub sr_stages: Vec<SrStage<T>>,
    pub head: Conv1x1<T>,
    /// Bumped by every mutable access to trainable tensors; tapes from an
    /// older version are stale.
    version: u64,
}

impl<T: Real> PartialEq for DecoderParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.in_channels == other.in_channels
            && self.stem == other.stem
            && self.blocks == other.blocks
            && self.sr_stages == other.sr_stages
            && self.head == other.head
    }
}

impl<T: Real> DecoderParams<T> {
    pub fn init(config: &DecoderConfig, in_channels: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if in_channels == 0 {
            return Err(Error::config("decoder input must have at least one channel"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = config.width;
        let stem = Conv1x1::init(&mut rng, in_channels, w, true);
        let blocks = (0..config.depth / 2).map(|_| ResidualBlock::init(&mut rng, w)).collect();
        let sr_stages = config
            .sr_modules
            .iter()
            .map(|&m| SrStage {
                upsample: TransposedConv::init(&mut rng, m, w, w),
                norm: Norm::new(w),
                blocks: [ResidualBlock::init(&mut rng, w), ResidualBlock::init(&mut rng, w)],
            })
            .collect();
        let head = Conv1x1::init(&mut rng, w, config.out_channels, true);
        Ok(Self { config: config.clone(), in_channels, stem, blocks, sr_stages, head, version: 0 })
    }

    /// Same structure with every tensor zeroed (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = T::zero());
        }
        z
    }

    pub(crate) fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        let mut out = Vec::new();
        self.stem.collect("stem", &mut out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect(&format!("blocks.{i}"), &mut out);
        }
        for (i, s) in self.sr_stages.iter().enumerate() {
            s.collect(&format!("sr.{i}"), &mut out);
        }
        self.head.collect("head", &mut out);
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<TensorMut<'_, T>> {
        self.version += 1;
        let mut out = Vec::new();
        self.stem.collect_mut("stem", &mut out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.collect_mut(&format!("blocks.{i}"), &mut out);
        }
        for (i, s) in self.sr_stages.iter_mut().enumerate() {
            s.collect_mut(&format!("sr.{i}"), &mut out);
        }
        self.head.collect_mut("head", &mut out);
        out
    }

    /// Trainable tensors in a fixed order.
    pub fn trainable(&self) -> Vec<&[T]> {
        self.tensors().into_iter().filter(|t| t.trainable).map(|t| t.data).collect()
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut [T]> {
        self.tensors_mut().into_iter().filter(|t| t.trainable).map(|t| t.data.as_mut_slice()).collect()
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    /// Trainable plus running-statistic scalars.
    pub fn stored_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn norms_mut(&mut self) -> Vec<&mut Norm<T>> {
        let mut out = Vec::new();
        for b in self.blocks.iter_mut() {
            out.extend(b.norms_mut());
        }
        for s in self.sr_stages.iter_mut() {
            out.push(&mut s.norm);
            for b in s.blocks.iter_mut() {
                out.extend(b.norms_mut());
            }
        }
        out
    }

    /// Blends the tape's batch statistics into the running statistics:
    /// `running ← momentum·running + (1 − momentum)·batch`.
    pub fn update_running_stats(&mut self, tape: &ActivationTape<T>, momentum: f64) -> Result<()> {
        self.update_running_from(&tape.stats, momentum)
    }

    /// As [`Self::update_running_stats`], from statistics taken off a tape.
    pub fn update_running_from(&mut self, stats: &[BatchStats<T>], momentum: f64) -> Result<()> {
        let m = T::of(momentum);
        let norms = self.norms_mut();
        if norms.len() != stats.len() {
            return Err(Error::InvalidState("tape does not match this decoder".into()));
        }
        for (n, s) in norms.into_iter().zip(stats) {
            if n.channels() != s.mean.len() {
                return Err(Error::InvalidState("tape does not match this decoder".into()));
            }
            n.update_running(s, m);
        }
        Ok(())
    }

    fn check_input(&self, x: &FeatureMap<T>) -> Result<()> {
        if x.channels != self.in_channels {
            return Err(Error::invalid(format!(
                "decoder expects {} input channels, got {}",
                self.in_channels, x.channels
            )));
        }
        if x.positions() == 0 {
            return Err(Error::invalid("empty feature map"));
        }
        Ok(())
    }

    pub fn forward(&self, x: &FeatureMap<T>, mode: Mode) -> Result<(FeatureMap<T>, Option<ActivationTape<T>>)> {
        match mode {
            Mode::Eval => Ok((self.forward_eval(x)?, None)),
            Mode::Train => {
                let (y, tape) = self.forward_train(x)?;
                Ok((y, Some(tape)))
            }
        }
    }

    pub fn forward_eval(&self, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        self.check_input(x)?;
        let mut h = self.stem.forward(x);
        for b in &self.blocks {
            h = b.forward_eval(h);
        }
        for s in &self.sr_stages {
            h = gelu_eval(s.norm.forward_eval(&s.upsample.forward(&h)?));
            for b in &s.blocks {
                h = b.forward_eval(h);
            }
        }
        Ok(sigmoid(self.head.forward(&h)))
    }

    pub fn forward_train(&self, x: &FeatureMap<T>) -> Result<(FeatureMap<T>, ActivationTape<T>)> {
        self.check_input(x)?;
        let mut stats = Vec::new();
        let mut h = self.stem.forward(x);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward_train(h, &mut stats);
            blocks.push(c);
            h = y;
        }
        let mut sr = Vec::with_capacity(self.sr_stages.len());
        for s in &self.sr_stages {
            let u = s.upsample.forward(&h)?;
            let (n, norm, st) = s.norm.forward_train(&u);
            stats.push(st);
            let (mut a, gelu) = gelu_forward(n);
            let mut caches = Vec::with_capacity(2);
            for b in &s.blocks {
                let (y, c) = b.forward_train(a, &mut stats);
                caches.push(c);
                a = y;
            }
            sr.push(SrCache { input: h, norm, gelu, blocks: caches });
            h = a;
        }
        let out = sigmoid(self.head.forward(&h));
        let tape = ActivationTape {
            version: self.version,
            input_shape: x.shape(),
            stem_input: x.clone(),
            blocks,
            sr,
            head_input: h,
            output: out.clone(),
            stats,
        };
        Ok((out, tape))
    }

    /// Reverse-mode gradients of a training forward pass: parameter
    /// gradients (running-statistic slots stay zero) and `dLoss/dInput`.
    pub fn backward(
        &self,
        tape: ActivationTape<T>,
        upstream: &FeatureMap<T>,
    ) -> Result<(DecoderParams<T>, FeatureMap<T>)> {
        if tape.version != self.version {
            return Err(Error::InvalidState(
                "activation tape is stale: parameters changed since the forward pass".into(),
            ));
        }
        if tape.input_shape != tape.stem_input.shape() || tape.stats.is_empty() && !self.blocks.is_empty() {
            return Err(Error::InvalidState("activation tape is incomplete".into()));
        }
        if !upstream.same_shape(&tape.output) {
            return Err(Error::invalid(format!(
                "upstream gradient shape {:?} does not match output {:?}",
                upstream.shape(),
                tape.output.shape()
            )));
        }
        let mut grad = self.zeros_like();
        grad.version = 0;

        let mut dz = upstream.clone();
        for (d, &y) in dz.data.iter_mut().zip(&tape.output.data) {
            *d = *d * y * (T::one() - y);
        }
        let mut dh = self.head.backward(&tape.head_input, &dz, &mut grad.head);

        for ((stage, cache), gstage) in self.sr_stages.iter().zip(&tape.sr).zip(grad.sr_stages.iter_mut()).rev() {
            for ((b, c), gb) in stage.blocks.iter().zip(&cache.blocks).zip(gstage.blocks.iter_mut()).rev() {
                dh = b.backward(c, dh, gb);
            }
            let dn = gelu_backward(&cache.gelu, dh);
            let du = stage.norm.backward(&cache.norm, &dn, &mut gstage.norm);
            dh = stage.upsample.backward(&cache.input, &du, &mut gstage.upsample);
        }
        for ((b, c), gb) in self.blocks.iter().zip(&tape.blocks).zip(grad.blocks.iter_mut()).rev() {
            dh = b.backward(c, dh, gb);
        }
        let dx = self.stem.backward(&tape.stem_input, &dh, &mut grad.stem);
        Ok((grad, dx))
    }
}

fn sigmoid<T: Real>(mut x: FeatureMap<T>) -> FeatureMap<T> {
    for v in x.data.iter_mut() {
        *v = T::one() / (T::one() + (-*v).exp());
    }
    x
}
