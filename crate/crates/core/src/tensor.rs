//! Dense `C x H x W` grids used for latents, trits and entropy parameters.

use crate::error::{Error, Result};

/// Shape of a latent tensor: channels, rows, columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Dims { channels, height, width }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    /// Inverse of [`Dims::index`].
    #[inline]
    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        let plane = self.plane();
        let c = i / plane;
        let r = i % plane;
        (c, r / self.width, r % self.width)
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Row-major `C x H x W` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    dims: Dims,
    data: Vec<T>,
}

/// Continuous latent values (`Y`, partial reconstructions, refined latents).
pub type Latent = Tensor3<f64>;
/// Centered, quantized latent values.
pub type QuantLatent = Tensor3<i32>;

impl<T: Clone> Tensor3<T> {
    pub fn filled(dims: Dims, value: T) -> Self {
        Tensor3 { data: vec![value; dims.len()], dims }
    }
}

impl<T> Tensor3<T> {
    pub fn from_vec(dims: Dims, data: Vec<T>) -> Result<Self> {
        if dims.channels == 0 || dims.height == 0 || dims.width == 0 {
            return Err(Error::DimensionMismatch(format!("empty dims {dims}")));
        }
        if data.len() != dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for dims {dims}",
                data.len()
            )));
        }
        Ok(Tensor3 { dims, data })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> &T {
        &self.data[self.dims.index(c, y, x)]
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Tensor3<U> {
        Tensor3 { dims: self.dims, data: self.data.iter().map(f).collect() }
    }
}

impl Tensor3<f64> {
    /// Sum of squared element differences.
    pub fn squared_error(&self, other: &Self) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch(format!("{} vs {}", self.dims, other.dims)));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum())
    }

    pub fn mse(&self, other: &Self) -> Result<f64> {
        Ok(self.squared_error(other)? / self.len() as f64)
    }
}
