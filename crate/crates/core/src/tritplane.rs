//! Trit-plane slicing, prefix intervals, per-trit probability and
//! expected-value triples, partial reconstruction and RD-priority ordering.
//!
//! Plane `l = 1` is the most significant. After `l` trits an element is known
//! to lie in an interval of `3^(L-l)` bins; the next trit selects its lower,
//! middle or upper third.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::latent::{interval_moments, pow3, BinGrid, GaussianField, Moments};
use crate::tensor::{Dims, Latent, QuantLatent, Tensor3};

/// Probabilities (or values) for trit outcomes 0, 1, 2.
pub type Triple = [f64; 3];

/// One ternary digit per latent element at a given significance level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TritPlane {
    pub level: u32,
    pub dims: Dims,
    pub trits: Vec<u8>,
}

/// Base-3 digits of `value + (3^L - 1) / 2`, most significant plane first.
pub fn slice(values: &QuantLatent, depth: u32) -> Result<Vec<TritPlane>> {
    let grid = BinGrid::new(depth)?;
    let h = grid.half_range();
    let dims = values.dims();
    let mut planes: Vec<TritPlane> =
        (1..=depth).map(|level| TritPlane { level, dims, trits: vec![0; dims.len()] }).collect();
    for (i, &v) in values.as_slice().iter().enumerate() {
        let v = v as i64;
        if !grid.contains(v) {
            return Err(Error::input(format!("value {v} outside grid of depth {depth}")));
        }
        let mut shifted = v + h;
        for plane in planes.iter_mut().rev() {
            plane.trits[i] = (shifted % 3) as u8;
            shifted /= 3;
        }
    }
    Ok(planes)
}

/// Inverse of [`slice`].
pub fn reconstruct_exact(planes: &[TritPlane], depth: u32) -> Result<QuantLatent> {
    let grid = BinGrid::new(depth)?;
    let first = planes.first().ok_or_else(|| Error::input("no planes"))?;
    if planes.len() != depth as usize {
        return Err(Error::input(format!("{} planes for depth {depth}", planes.len())));
    }
    let dims = first.dims;
    let values = (0..dims.len())
        .map(|i| {
            let shifted = planes.iter().fold(0i64, |acc, p| acc * 3 + p.trits[i] as i64);
            (shifted - grid.half_range()) as i32
        })
        .collect();
    Tensor3::from_vec(dims, values)
}

/// Bins consistent with the first `level` trits of an element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PrefixInterval {
    pub lo: i64,
    pub level: u32,
}

impl PrefixInterval {
    /// The full grid (no trits decoded).
    pub fn root(depth: u32) -> Self {
        PrefixInterval { lo: -(pow3(depth) - 1) / 2, level: 0 }
    }

    pub fn width(&self, depth: u32) -> i64 {
        pow3(depth - self.level)
    }

    pub fn hi(&self, depth: u32) -> i64 {
        self.lo + self.width(depth) - 1
    }

    /// Singleton intervals emit no further trits.
    pub fn is_active(&self, depth: u32) -> bool {
        self.level < depth
    }

    /// The three equal sub-intervals selected by the next trit.
    pub fn thirds(&self, depth: u32) -> [(i64, i64); 3] {
        let w = self.width(depth) / 3;
        std::array::from_fn(|t| {
            let lo = self.lo + t as i64 * w;
            (lo, lo + w - 1)
        })
    }

    pub fn child(&self, trit: u8, depth: u32) -> Self {
        let w = self.width(depth) / 3;
        PrefixInterval { lo: self.lo + trit as i64 * w, level: self.level + 1 }
    }
}

/// Per-element prefix intervals of a partially decoded tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixState {
    dims: Dims,
    depth: u32,
    intervals: Vec<PrefixInterval>,
}

impl PrefixState {
    pub fn new(dims: Dims, depth: u32) -> Self {
        PrefixState { dims, depth, intervals: vec![PrefixInterval::root(depth); dims.len()] }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn interval(&self, i: usize) -> PrefixInterval {
        self.intervals[i]
    }

    pub fn intervals(&self) -> &[PrefixInterval] {
        &self.intervals
    }

    /// Consume the next trit of element `i`.
    pub fn push(&mut self, i: usize, trit: u8) {
        debug_assert!(trit < 3);
        let iv = &mut self.intervals[i];
        debug_assert!(iv.is_active(self.depth));
        *iv = iv.child(trit, self.depth);
    }

    /// Conditional-mean reconstruction of every element, with the prior mean added back.
    pub fn reconstruct(&self, field: &GaussianField) -> Latent {
        let table = MomentTable::build(
            (0..self.intervals.len()).map(|i| {
                let iv = self.intervals[i];
                (field.scale(i), iv.lo, iv.hi(self.depth))
            }),
        );
        let values = self
            .intervals
            .par_iter()
            .enumerate()
            .map(|(i, iv)| {
                let hi = iv.hi(self.depth);
                let m = table.get(field.scale(i), iv.lo, hi);
                m.conditional_mean(iv.lo, hi) + field.mean(i)
            })
            .collect();
        Tensor3::from_vec(self.dims, values).expect("state dims are valid")
    }
}

/// Memoized interval moments keyed by `(scale, lo, hi)`.
///
/// Elements sharing a scale share intervals, so each plane needs only a handful
/// of distinct bin sums per channel.
pub struct MomentTable {
    map: HashMap<(u64, i64, i64), Moments>,
}

impl MomentTable {
    pub fn build(keys: impl Iterator<Item = (f64, i64, i64)>) -> Self {
        let mut keys: Vec<(u64, i64, i64)> = keys.map(|(s, lo, hi)| (s.to_bits(), lo, hi)).collect();
        keys.sort_unstable();
        keys.dedup();
        let map = keys
            .par_iter()
            .map(|&(s, lo, hi)| ((s, lo, hi), interval_moments(lo, hi, f64::from_bits(s))))
            .collect();
        MomentTable { map }
    }

    #[inline]
    pub fn get(&self, sigma: f64, lo: i64, hi: i64) -> Moments {
        self.map[&(sigma.to_bits(), lo, hi)]
    }
}

/// Probability triple of the next trit, plus a flag set when the parent mass
/// underflowed and the uniform triple was substituted.
pub fn triple_from_moments(thirds: &[Moments; 3]) -> (Triple, bool) {
    let total = thirds[0].m0 + thirds[1].m0 + thirds[2].m0;
    if !(total > 0.0) {
        return ([1.0 / 3.0; 3], true);
    }
    (std::array::from_fn(|t| thirds[t].m0 / total), false)
}

fn third_moments(prefix: PrefixInterval, sigma: f64, depth: u32) -> Result<[Moments; 3]> {
    if !prefix.is_active(depth) {
        return Err(Error::input("singleton prefix has no further trits"));
    }
    if !(sigma > 0.0) {
        return Err(Error::param(format!("scale must be positive, got {sigma}")));
    }
    let thirds = prefix.thirds(depth);
    Ok(std::array::from_fn(|t| interval_moments(thirds[t].0, thirds[t].1, sigma)))
}

/// `P(trit = t | prefix)` for the element's next trit.
pub fn trit_probabilities(prefix: PrefixInterval, sigma: f64, depth: u32) -> Result<(Triple, bool)> {
    Ok(triple_from_moments(&third_moments(prefix, sigma, depth)?))
}

/// Conditional means of the three sub-intervals (the value the element would be
/// reconstructed to if its next trit were 0, 1 or 2), centered.
pub fn expected_values(prefix: PrefixInterval, sigma: f64, depth: u32) -> Result<Triple> {
    let m = third_moments(prefix, sigma, depth)?;
    let thirds = prefix.thirds(depth);
    Ok(std::array::from_fn(|t| m[t].conditional_mean(thirds[t].0, thirds[t].1)))
}

/// Everything the decoder can compute about plane `level` before reading it.
#[derive(Debug, Clone)]
pub struct PlaneContext {
    pub level: u32,
    pub depth: u32,
    /// Raw trit probabilities `P_l`.
    pub probs: Vec<Triple>,
    /// Hypothetical reconstructions `E_l` (centered).
    pub expected: Vec<Triple>,
    /// Current reconstruction `Y_{l-1}` (centered).
    pub recon_prev: Vec<f64>,
    /// `E[(y - m_I)^2 | I]` of the current interval.
    pub parent_var: Vec<f64>,
    /// Same quantity for each third.
    pub third_var: Vec<Triple>,
    /// Parent mass underflowed; uniform probabilities were used.
    pub degenerate: Vec<bool>,
}

impl PlaneContext {
    /// Requires every element of `state` to sit at `level - 1`.
    pub fn compute(state: &PrefixState, field: &GaussianField, level: u32) -> Result<Self> {
        let depth = state.depth();
        if level == 0 || level > depth {
            return Err(Error::param(format!("plane {level} outside 1..={depth}")));
        }
        if let Some(i) = state.intervals().iter().position(|iv| iv.level + 1 != level) {
            return Err(Error::input(format!(
                "element {i} is at level {}, expected {}",
                state.interval(i).level,
                level - 1
            )));
        }
        let table = MomentTable::build(state.intervals().iter().enumerate().flat_map(|(i, iv)| {
            let sigma = field.scale(i);
            iv.thirds(depth).into_iter().map(move |(lo, hi)| (sigma, lo, hi))
        }));
        let per: Vec<_> = state
            .intervals()
            .par_iter()
            .enumerate()
            .map(|(i, iv)| {
                let sigma = field.scale(i);
                let thirds = iv.thirds(depth);
                let m: [Moments; 3] = std::array::from_fn(|t| table.get(sigma, thirds[t].0, thirds[t].1));
                let (p, degenerate) = triple_from_moments(&m);
                let parent = m[0].add(m[1]).add(m[2]);
                let hi = iv.hi(depth);
                let e: Triple = std::array::from_fn(|t| m[t].conditional_mean(thirds[t].0, thirds[t].1));
                let tv: Triple = std::array::from_fn(|t| m[t].conditional_variance(thirds[t].0, thirds[t].1));
                (p, e, parent.conditional_mean(iv.lo, hi), parent.conditional_variance(iv.lo, hi), tv, degenerate)
            })
            .collect();
        let n = per.len();
        let mut ctx = PlaneContext {
            level,
            depth,
            probs: Vec::with_capacity(n),
            expected: Vec::with_capacity(n),
            recon_prev: Vec::with_capacity(n),
            parent_var: Vec::with_capacity(n),
            third_var: Vec::with_capacity(n),
            degenerate: Vec::with_capacity(n),
        };
        for (p, e, r, v, tv, d) in per {
            ctx.probs.push(p);
            ctx.expected.push(e);
            ctx.recon_prev.push(r);
            ctx.parent_var.push(v);
            ctx.third_var.push(tv);
            ctx.degenerate.push(d);
        }
        Ok(ctx)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Entropy of a triple in bits.
pub fn entropy_bits(p: &Triple) -> f64 {
    p.iter().filter(|&&q| q > 0.0).map(|&q| -q * q.log2()).sum()
}

/// Expected squared-error reduction per expected bit of one trit.
///
/// Zero-rate trits (an exactly one-hot triple) get `+inf`.
pub fn rd_priority(parent_var: f64, third_var: &Triple, coded: &Triple) -> f64 {
    let rate = entropy_bits(coded);
    if !(rate > 0.0) {
        return f64::INFINITY;
    }
    let residual: f64 = (0..3).map(|t| coded[t] * third_var[t]).sum();
    let gain = parent_var - residual;
    if gain.is_nan() {
        return f64::NEG_INFINITY;
    }
    gain / rate
}

/// Serialization order of the trits within a plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OrderingMode {
    /// Decreasing RD priority, raster index as tie-break.
    #[default]
    RdPriority,
    /// Plain channel-row-column order.
    Raster,
}

/// Order of the plane's trits. `coded` holds the probabilities the coder will use.
pub fn rd_order(ctx: &PlaneContext, coded: &[Triple], mode: OrderingMode) -> Vec<u32> {
    let n = ctx.len();
    let mut order: Vec<u32> = (0..n as u32).collect();
    if mode == OrderingMode::Raster {
        return order;
    }
    let priority: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| rd_priority(ctx.parent_var[i], &ctx.third_var[i], &coded[i]))
        .collect();
    order.par_sort_unstable_by(|&a, &b| {
        priority[b as usize].total_cmp(&priority[a as usize]).then(a.cmp(&b))
    });
    order
}

/// How far into the stream the decoder has progressed: `planes` whole planes
/// plus the first `trits` trits (in serialization order) of the next one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct DecodePosition {
    pub planes: u32,
    pub trits: usize,
}

impl DecodePosition {
    pub fn new(planes: u32, trits: usize) -> Self {
        DecodePosition { planes, trits }
    }

    /// Fractional significance level `l`.
    pub fn level(&self, plane_len: usize) -> f64 {
        if plane_len == 0 {
            return self.planes as f64;
        }
        self.planes as f64 + self.trits as f64 / plane_len as f64
    }

    /// Position for a fractional level: whole planes plus `floor(frac * n)` trits.
    pub fn from_level(level: f64, plane_len: usize, depth: u32) -> Self {
        let level = level.clamp(0.0, depth as f64);
        let planes = level.floor() as u32;
        if planes >= depth {
            return DecodePosition { planes: depth, trits: 0 };
        }
        let trits = ((level - planes as f64) * plane_len as f64).floor() as usize;
        DecodePosition { planes, trits: trits.min(plane_len) }
    }
}

/// Prefix state after decoding up to `pos`, given each plane's trits and serialization order.
pub fn state_at(
    planes: &[TritPlane],
    orders: &[Vec<u32>],
    pos: DecodePosition,
    depth: u32,
) -> Result<PrefixState> {
    let first = planes.first().ok_or_else(|| Error::input("no planes"))?;
    if pos.planes > depth || (pos.planes == depth && pos.trits > 0) {
        return Err(Error::input(format!("position {pos:?} beyond depth {depth}")));
    }
    let mut state = PrefixState::new(first.dims, depth);
    for plane in planes.iter().take(pos.planes as usize) {
        for (i, &t) in plane.trits.iter().enumerate() {
            state.push(i, t);
        }
    }
    if pos.trits > 0 {
        let l = pos.planes as usize;
        let plane = &planes[l];
        let order = orders.get(l).ok_or_else(|| Error::input("missing plane order"))?;
        if pos.trits > order.len() {
            return Err(Error::input("trit count exceeds plane size"));
        }
        for &i in &order[..pos.trits] {
            state.push(i as usize, plane.trits[i as usize]);
        }
    }
    Ok(state)
}

/// Conditional-mean reconstruction at a decode position.
pub fn reconstruct_partial(
    planes: &[TritPlane],
    orders: &[Vec<u32>],
    pos: DecodePosition,
    field: &GaussianField,
    depth: u32,
) -> Result<Latent> {
    Ok(state_at(planes, orders, pos, depth)?.reconstruct(field))
}
