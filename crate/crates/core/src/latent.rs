//! Gaussian prior arithmetic: centering and quantization, discrete bin masses,
//! interval statistics and depth selection.
//!
//! A centered latent `y - mean` is quantized to an integer bin `k` of width one.
//! The discrete prior of a bin is the Gaussian mass of `[k - 1/2, k + 1/2]`,
//! renormalized over the `3^L` bins of the grid so that the grid sums to one.

use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::tensor::{Dims, Latent, QuantLatent, Tensor3};

/// Default cap on the number of trit-planes.
pub const DEFAULT_MAX_DEPTH: u32 = 11;
/// Largest depth the integer arithmetic supports.
pub const MAX_SUPPORTED_DEPTH: u32 = 19;

/// Standardized distance past which the Gaussian mass underflows `f64`.
const SUPPORT_SIGMAS: f64 = 40.0;

/// `3^n` as `i64`.
#[inline]
pub fn pow3(n: u32) -> i64 {
    3i64.pow(n)
}

/// Symmetric grid of `3^L` unit bins centered on zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BinGrid {
    depth: u32,
}

impl BinGrid {
    pub fn new(depth: u32) -> Result<Self> {
        if depth == 0 || depth > MAX_SUPPORTED_DEPTH {
            return Err(Error::param(format!("depth {depth} outside 1..={MAX_SUPPORTED_DEPTH}")));
        }
        Ok(BinGrid { depth })
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// `(3^L - 1) / 2`.
    pub fn half_range(&self) -> i64 {
        (pow3(self.depth) - 1) / 2
    }

    pub fn bins(&self) -> i64 {
        pow3(self.depth)
    }

    pub fn contains(&self, k: i64) -> bool {
        k.abs() <= self.half_range()
    }

    pub fn clamp(&self, k: i64) -> i64 {
        let h = self.half_range();
        k.clamp(-h, h)
    }
}

/// Upper tail of the standard normal, `1 - Phi(x)`.
#[inline]
pub fn normal_upper_tail(x: f64) -> f64 {
    if x == f64::INFINITY {
        0.0
    } else if x == f64::NEG_INFINITY {
        1.0
    } else {
        0.5 * erfc(x / std::f64::consts::SQRT_2)
    }
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    normal_upper_tail(-x)
}

/// Standard normal mass of `[a, b]`, evaluated on the tail that keeps precision.
fn gaussian_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        normal_upper_tail(a) - normal_upper_tail(b)
    } else if b <= 0.0 {
        normal_upper_tail(-b) - normal_upper_tail(-a)
    } else {
        1.0 - normal_upper_tail(-a) - normal_upper_tail(b)
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::param(format!("scale must be positive and finite, got {sigma}")));
    }
    Ok(())
}

/// Unnormalized mass of bin `k` (before dividing by the grid normalizer).
#[inline]
fn raw_bin_mass(k: i64, sigma: f64) -> f64 {
    let k = k as f64;
    gaussian_mass((k - 0.5) / sigma, (k + 0.5) / sigma)
}

/// Gaussian mass covered by the whole grid.
fn grid_normalizer(sigma: f64, grid: BinGrid) -> f64 {
    let edge = (grid.half_range() as f64 + 0.5) / sigma;
    1.0 - 2.0 * normal_upper_tail(edge)
}

/// Probability of bin `k` under a zero-mean Gaussian of scale `sigma`,
/// discretized to unit bins and renormalized over `grid`.
pub fn bin_pmf(k: i64, sigma: f64, grid: BinGrid) -> Result<f64> {
    check_sigma(sigma)?;
    if !grid.contains(k) {
        return Err(Error::param(format!("bin {k} outside grid of depth {}", grid.depth())));
    }
    Ok(raw_bin_mass(k, sigma) / grid_normalizer(sigma, grid))
}

/// Unnormalized zeroth, first and second moments of the prior over a bin range.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub m0: f64,
    pub m1: f64,
    pub m2: f64,
}

impl Moments {
    pub fn add(self, other: Moments) -> Moments {
        Moments { m0: self.m0 + other.m0, m1: self.m1 + other.m1, m2: self.m2 + other.m2 }
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.m0 > 0.0)
    }

    /// `E[k | k in I]`, or the interval midpoint when the mass underflows.
    pub fn conditional_mean(&self, lo: i64, hi: i64) -> f64 {
        if lo == hi {
            lo as f64
        } else if self.is_degenerate() {
            (lo + hi) as f64 / 2.0
        } else {
            self.m1 / self.m0
        }
    }

    /// `E[(k - mean)^2 | k in I]`; uniform-interval variance when degenerate.
    pub fn conditional_variance(&self, lo: i64, hi: i64) -> f64 {
        if lo == hi {
            0.0
        } else if self.is_degenerate() {
            let n = (hi - lo + 1) as f64;
            (n * n - 1.0) / 12.0
        } else {
            let mean = self.m1 / self.m0;
            (self.m2 / self.m0 - mean * mean).max(0.0)
        }
    }
}

/// Moments of `[lo, hi]`, summed bin by bin over the numerically nonzero support.
pub fn interval_moments(lo: i64, hi: i64, sigma: f64) -> Moments {
    let reach = (SUPPORT_SIGMAS * sigma).ceil();
    let reach = if reach > 1e15 { i64::MAX / 4 } else { reach as i64 + 1 };
    let start = lo.max(-reach);
    let end = hi.min(reach);
    let mut acc = Moments::default();
    let mut k = start;
    while k <= end {
        let p = raw_bin_mass(k, sigma);
        let kf = k as f64;
        acc.m0 += p;
        acc.m1 += kf * p;
        acc.m2 += kf * kf * p;
        k += 1;
    }
    acc
}

/// Mass and conditional moments of a bin interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalStats {
    /// Prior probability of the interval.
    pub mass: f64,
    /// `E[k | k in I]`; the optimal constant reconstruction under squared error.
    pub conditional_mean: f64,
    /// `E[k^2 | k in I]`.
    pub conditional_second_moment: f64,
    /// Set when the interval mass underflowed and the midpoint was returned.
    pub degenerate: bool,
}

/// Mass, conditional mean and conditional second moment of `[lo, hi]`.
pub fn interval_stats(lo: i64, hi: i64, sigma: f64, grid: BinGrid) -> Result<IntervalStats> {
    check_sigma(sigma)?;
    if lo > hi || !grid.contains(lo) || !grid.contains(hi) {
        return Err(Error::param(format!("interval [{lo}, {hi}] invalid for depth {}", grid.depth())));
    }
    let m = interval_moments(lo, hi, sigma);
    let z = grid_normalizer(sigma, grid);
    if m.is_degenerate() {
        let mid = (lo + hi) as f64 / 2.0;
        let var = m.conditional_variance(lo, hi);
        return Ok(IntervalStats {
            mass: 0.0,
            conditional_mean: mid,
            conditional_second_moment: var + mid * mid,
            degenerate: true,
        });
    }
    Ok(IntervalStats {
        mass: m.m0 / z,
        conditional_mean: m.conditional_mean(lo, hi),
        conditional_second_moment: m.m2 / m.m0,
        degenerate: false,
    })
}

/// Smallest depth whose grid holds `2 * ceil(max_abs) + 1` bins, within `[1, max_depth]`.
pub fn depth_for_magnitude(max_abs: f64, max_depth: u32) -> u32 {
    let needed = 2.0 * max_abs.ceil() + 1.0;
    let mut depth = 1;
    while depth < max_depth && (pow3(depth) as f64) < needed {
        depth += 1;
    }
    depth
}

/// Depth selection for a centered latent tensor.
pub fn choose_depth(y_centered: &Latent, max_depth: u32) -> u32 {
    let max_abs = y_centered.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    depth_for_magnitude(max_abs, max_depth)
}

/// How entropy parameters are stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamMode {
    PerChannel,
    PerElement,
}

/// Per-element Gaussian prior `N(mean, scale^2)` on the latent.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianField {
    dims: Dims,
    mode: ParamMode,
    means: Vec<f64>,
    scales: Vec<f64>,
}

impl GaussianField {
    pub fn per_channel(dims: Dims, means: Vec<f64>, scales: Vec<f64>) -> Result<Self> {
        if means.len() != dims.channels || scales.len() != dims.channels {
            return Err(Error::DimensionMismatch(format!(
                "per-channel field needs {} pairs, got {}/{}",
                dims.channels,
                means.len(),
                scales.len()
            )));
        }
        Self::validated(dims, ParamMode::PerChannel, means, scales)
    }

    pub fn per_element(dims: Dims, means: Vec<f64>, scales: Vec<f64>) -> Result<Self> {
        if means.len() != dims.len() || scales.len() != dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "per-element field needs {} pairs, got {}/{}",
                dims.len(),
                means.len(),
                scales.len()
            )));
        }
        Self::validated(dims, ParamMode::PerElement, means, scales)
    }

    fn validated(dims: Dims, mode: ParamMode, means: Vec<f64>, scales: Vec<f64>) -> Result<Self> {
        for &s in &scales {
            check_sigma(s)?;
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::param("non-finite mean"));
        }
        Ok(GaussianField { dims, mode, means, scales })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn mode(&self) -> ParamMode {
        self.mode
    }

    #[inline]
    fn slot(&self, i: usize) -> usize {
        match self.mode {
            ParamMode::PerChannel => i / self.dims.plane(),
            ParamMode::PerElement => i,
        }
    }

    #[inline]
    pub fn mean(&self, i: usize) -> f64 {
        self.means[self.slot(i)]
    }

    #[inline]
    pub fn scale(&self, i: usize) -> f64 {
        self.scales[self.slot(i)]
    }

    /// Stored parameters (one pair per channel or per element).
    pub fn params(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.means.iter().copied().zip(self.scales.iter().copied())
    }

    /// Same field with every parameter rounded to `f32`, as carried in the container.
    pub fn rounded_to_f32(&self) -> Result<Self> {
        let round = |v: &f64| *v as f32 as f64;
        Self::validated(
            self.dims,
            self.mode,
            self.means.iter().map(round).collect(),
            self.scales.iter().map(round).collect(),
        )
    }
}

/// Result of [`quantize_center`].
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub values: QuantLatent,
    pub depth: u32,
    /// Elements that fell outside the grid and were clamped to its edge.
    pub clamped: usize,
}

/// Round half away from zero.
#[inline]
pub fn round_half_away(v: f64) -> i64 {
    // f64::round already rounds ties away from zero.
    v.round() as i64
}

/// `q(Y - M)`: center, round, choose the depth and clamp into its grid.
pub fn quantize_center(y: &Latent, field: &GaussianField, max_depth: u32) -> Result<Quantized> {
    if y.dims() != field.dims() {
        return Err(Error::DimensionMismatch(format!("latent {} vs field {}", y.dims(), field.dims())));
    }
    let centered: Vec<f64> =
        y.as_slice().iter().enumerate().map(|(i, v)| v - field.mean(i)).collect();
    let centered = Tensor3::from_vec(y.dims(), centered)?;
    let depth = choose_depth(&centered, max_depth);
    let grid = BinGrid::new(depth)?;
    let mut clamped = 0;
    let values = centered
        .as_slice()
        .iter()
        .map(|&v| {
            let k = round_half_away(v);
            let c = grid.clamp(k);
            if c != k {
                clamped += 1;
            }
            c as i32
        })
        .collect();
    Ok(Quantized { values: Tensor3::from_vec(y.dims(), values)?, depth, clamped })
}
