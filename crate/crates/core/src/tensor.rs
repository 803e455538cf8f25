use crate::error::{Error, Result};
use crate::real::Real;

/// Dense `batch × height × width × channels` activations, channel innermost.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn zeros(batch: usize, height: usize, width: usize, channels: usize) -> Self {
        Self { batch, height, width, channels, data: vec![T::zero(); batch * height * width * channels] }
    }

    pub fn from_vec(batch: usize, height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != batch * height * width * channels {
            return Err(Error::invalid(format!(
                "feature map {batch}x{height}x{width}x{channels} needs {} values, got {}",
                batch * height * width * channels,
                data.len()
            )));
        }
        Ok(Self { batch, height, width, channels, data })
    }

    /// Number of spatial positions over the whole batch.
    pub fn positions(&self) -> usize {
        self.batch * self.height * self.width
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.batch, self.height, self.width, self.channels]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub fn at(&self, n: usize, row: usize, col: usize) -> &[T] {
        let start = ((n * self.height + row) * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Stacks single-item maps along the batch axis.
    pub fn stack(items: &[FeatureMap<T>]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::invalid("cannot stack zero maps"))?;
        let mut data = Vec::with_capacity(first.data.len() * items.len());
        let mut batch = 0;
        for it in items {
            if [it.height, it.width, it.channels] != [first.height, first.width, first.channels] {
                return Err(Error::invalid("stacked maps differ in shape"));
            }
            batch += it.batch;
            data.extend_from_slice(&it.data);
        }
        Self::from_vec(batch, first.height, first.width, first.channels, data)
    }

    /// Item `n` of the batch as its own map.
    pub fn item(&self, n: usize) -> Self {
        let len = self.height * self.width * self.channels;
        Self {
            batch: 1,
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data[n * len..(n + 1) * len].to_vec(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            batch: self.batch,
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}
