//! Context-based rate reduction.
//!
//! Before a plane is entropy coded, each raw trit triple `p` is refined to
//! `softmax(beta * (p + dP))`, where the additive term `dP` and the raw
//! temperature `S` (mapped to `beta` inside `(s_l, s_h)`) are predicted from
//! already-decoded context: the previous reconstruction, the entropy
//! parameters, the expected-value triples and the raw probabilities of a
//! small spatial window around the trit.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::latent::{pow3, GaussianField};
use crate::nn::{accumulate, Adam, Mlp};
use crate::tensor::Dims;
use crate::tritplane::{entropy_bits, PlaneContext, PrefixState, Triple};

/// Smallest probability admitted inside a logarithm, `2^-32`.
pub const PROB_FLOOR: f64 = 1.0 / 4_294_967_296.0;

/// Per-window-position feature count.
const FEATURES_PER_SITE: usize = 9;
/// Normalized features are clipped to this magnitude.
const FEATURE_CLIP: f64 = 10.0;

/// Range `(s_l, s_h)` of the softmax temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureBounds {
    pub low: f64,
    pub high: f64,
}

impl Default for TemperatureBounds {
    fn default() -> Self {
        TemperatureBounds { low: 0.2, high: 5.0 }
    }
}

impl TemperatureBounds {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low > 0.0 && high > low && high.is_finite()) {
            return Err(Error::param(format!("temperature bounds ({low}, {high}) need 0 < low < high")));
        }
        Ok(TemperatureBounds { low, high })
    }

    /// `beta = s_l + (s_h - s_l) * sigmoid(s)`.
    pub fn beta(&self, s: f64) -> f64 {
        self.low + (self.high - self.low) * sigmoid(s)
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Additive shift and raw temperature predicted for one trit.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Modulation {
    pub delta: Triple,
    pub s: f64,
}

/// `softmax(beta * x)` with max subtraction.
pub fn softmax_scaled(x: &Triple, beta: f64) -> Triple {
    let z: Triple = std::array::from_fn(|i| beta * x[i]);
    let m = z[0].max(z[1]).max(z[2]);
    let e: Triple = std::array::from_fn(|i| (z[i] - m).exp());
    let s = e[0] + e[1] + e[2];
    std::array::from_fn(|i| e[i] / s)
}

/// Refined triple `softmax(beta(S) * (p + dP))`.
pub fn modulate(p: &Triple, m: &Modulation, bounds: &TemperatureBounds) -> Triple {
    let x: Triple = std::array::from_fn(|i| p[i] + m.delta[i]);
    softmax_scaled(&x, bounds.beta(m.s))
}

/// Bits needed to code outcome `trit` under `p`, with `p` floored at `2^-32`.
pub fn cross_entropy(trit: u8, p: &Triple) -> f64 {
    -p[trit as usize].max(PROB_FLOOR).log2()
}

/// An exactly one-hot triple codes its trit for free and is never modulated.
pub fn is_one_hot(p: &Triple) -> bool {
    let ones = p.iter().filter(|&&q| q == 1.0).count();
    let zeros = p.iter().filter(|&&q| q == 0.0).count();
    ones == 1 && zeros == 2
}

/// Whether `H(softmax(beta * x))` is non-increasing along the ascending `betas`,
/// and strictly decreasing when the entries of `x` are distinct.
pub fn entropy_monotonicity_check(x: &Triple, betas: &[f64]) -> bool {
    const TOL: f64 = 1e-12;
    let distinct = (x[0] - x[1]).abs() > 1e-9 && (x[1] - x[2]).abs() > 1e-9 && (x[0] - x[2]).abs() > 1e-9;
    let entropies: Vec<f64> = betas.iter().map(|&b| entropy_bits(&softmax_scaled(x, b))).collect();
    betas.iter().all(|&b| b > 0.0)
        && entropies.windows(2).all(|w| {
            if distinct {
                w[1] < w[0]
            } else {
                w[1] <= w[0] + TOL
            }
        })
}

/// Model slot within the CRR router.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CrrSlot {
    /// Level `L`.
    Last,
    /// Level `L - 1`.
    SecondLast,
    /// Levels `<= L - 2`.
    Coarse,
}

impl CrrSlot {
    pub const ALL: [CrrSlot; 3] = [CrrSlot::Last, CrrSlot::SecondLast, CrrSlot::Coarse];

    pub fn for_level(level: u32, depth: u32) -> Self {
        if level >= depth {
            CrrSlot::Last
        } else if level + 1 == depth {
            CrrSlot::SecondLast
        } else {
            CrrSlot::Coarse
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn contains(self, level: u32, depth: u32) -> bool {
        Self::for_level(level, depth) == self
    }
}

/// Windowed perceptron predicting `(dP_0, dP_1, dP_2, S)` for each trit.
#[derive(Debug, Clone, PartialEq)]
pub struct CrrModel {
    pub radius: usize,
    pub bounds: TemperatureBounds,
    pub mlp: Mlp,
}

impl CrrModel {
    pub fn input_dim(radius: usize) -> usize {
        let side = 2 * radius + 1;
        side * side * FEATURES_PER_SITE + 3
    }

    pub fn seeded(radius: usize, hidden: usize, bounds: TemperatureBounds, seed: u64) -> Self {
        CrrModel { radius, bounds, mlp: Mlp::seeded(Self::input_dim(radius), hidden, 4, seed, 0.1) }
    }

    /// All-zero weights: `dP = 0`, `S = 0`.
    pub fn zeros(radius: usize, hidden: usize, bounds: TemperatureBounds) -> Self {
        CrrModel { radius, bounds, mlp: Mlp::zeros(Self::input_dim(radius), hidden, 4) }
    }

    pub fn from_mlp(radius: usize, bounds: TemperatureBounds, mlp: Mlp) -> Result<Self> {
        if mlp.inputs() != Self::input_dim(radius) || mlp.outputs() != 4 {
            return Err(Error::ModelMismatch(format!(
                "CRR perceptron is {}->{}, expected {}->4",
                mlp.inputs(),
                mlp.outputs(),
                Self::input_dim(radius)
            )));
        }
        Ok(CrrModel { radius, bounds, mlp })
    }

    pub fn modulation(&self, features: &[f64]) -> Modulation {
        let mut h = vec![0.0; self.mlp.hidden()];
        let mut out = [0.0; 4];
        self.mlp.forward(features, &mut h, &mut out);
        Modulation { delta: [out[0], out[1], out[2]], s: out[3] }
    }

    pub fn refine(&self, p: &Triple, features: &[f64]) -> Triple {
        if is_one_hot(p) {
            return *p;
        }
        modulate(p, &self.modulation(features), &self.bounds)
    }
}

/// Decoder-visible inputs for the trits of one plane.
#[derive(Clone, Copy)]
pub struct CrrContext<'a> {
    pub plane: &'a PlaneContext,
    pub state: &'a PrefixState,
    pub field: &'a GaussianField,
}

impl CrrContext<'_> {
    /// Feature vector of element `i`, written into `out`.
    ///
    /// Latent-valued contexts are expressed in the element's own frame: offset by
    /// the midpoint of its current interval and divided by the width of one third.
    pub fn features(&self, i: usize, radius: usize, out: &mut [f64]) {
        let dims: Dims = self.state.dims();
        let depth = self.state.depth();
        let iv = self.state.interval(i);
        let third = (pow3(depth - iv.level) / 3) as f64;
        let center = (iv.lo + iv.hi(depth)) as f64 / 2.0;
        let mean_e = self.field.mean(i);
        let (c, y, x) = dims.coords(i);
        let r = radius as isize;
        let clip = |v: f64| v.clamp(-FEATURE_CLIP, FEATURE_CLIP);
        let mut k = 0;
        for dy in -r..=r {
            for dx in -r..=r {
                let yy = y as isize + dy;
                let xx = x as isize + dx;
                let site = &mut out[k..k + FEATURES_PER_SITE];
                k += FEATURES_PER_SITE;
                if yy < 0 || xx < 0 || yy >= dims.height as isize || xx >= dims.width as isize {
                    site.fill(0.0);
                    continue;
                }
                let j = dims.index(c, yy as usize, xx as usize);
                let shift = self.field.mean(j) - mean_e - center;
                site[0] = clip((self.plane.recon_prev[j] + shift) / third);
                site[1] = clip((self.field.mean(j) - mean_e) / third);
                site[2] = clip((self.field.scale(j) / third).ln());
                let e = &self.plane.expected[j];
                let p = &self.plane.probs[j];
                for t in 0..3 {
                    site[3 + t] = clip((e[t] + shift) / third);
                    site[6 + t] = p[t];
                }
            }
        }
        let p = &self.plane.probs[i];
        for t in 0..3 {
            out[k + t] = p[t].max(PROB_FLOOR).log2() / 32.0;
        }
    }
}

/// Refine every raw triple of a plane; exact one-hot triples pass through.
pub fn refine_plane(ctx: &CrrContext<'_>, model: &CrrModel) -> Vec<Triple> {
    let dim = CrrModel::input_dim(model.radius);
    (0..ctx.plane.len())
        .into_par_iter()
        .map_init(
            || vec![0.0; dim],
            |buf, i| {
                let p = &ctx.plane.probs[i];
                if is_one_hot(p) {
                    return *p;
                }
                ctx.features(i, model.radius, buf);
                model.refine(p, buf)
            },
        )
        .collect()
}

/// Three optional models routed by significance level.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CrrRouter {
    pub slots: [Option<CrrModel>; 3],
}

impl CrrRouter {
    pub fn model_for(&self, level: u32, depth: u32) -> Option<&CrrModel> {
        self.slots[CrrSlot::for_level(level, depth).index()].as_ref()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.iter().all(Option::is_none)
    }
}

/// Training samples for one router slot: features, raw triples and true trits.
#[derive(Debug, Clone, Default)]
pub struct CrrDataset {
    pub dim: usize,
    pub features: Vec<f32>,
    pub probs: Vec<Triple>,
    pub trits: Vec<u8>,
}

impl CrrDataset {
    pub fn new(radius: usize) -> Self {
        CrrDataset { dim: CrrModel::input_dim(radius), ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.trits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trits.is_empty()
    }

    /// Append every non-one-hot trit of a plane.
    pub fn push_plane(&mut self, ctx: &CrrContext<'_>, radius: usize, trits: &[u8]) {
        let dim = self.dim;
        let rows: Vec<(Vec<f32>, Triple, u8)> = (0..ctx.plane.len())
            .into_par_iter()
            .filter(|&i| !is_one_hot(&ctx.plane.probs[i]))
            .map_init(
                || vec![0.0; dim],
                |buf, i| {
                    ctx.features(i, radius, buf);
                    (buf.iter().map(|&v| v as f32).collect(), ctx.plane.probs[i], trits[i])
                },
            )
            .collect();
        for (f, p, t) in rows {
            self.features.extend_from_slice(&f);
            self.probs.push(p);
            self.trits.push(t);
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        self.features[i * self.dim..(i + 1) * self.dim].iter().map(|&v| v as f64)
    }

    /// Mean entropy of the raw triples, in bits.
    pub fn mean_raw_entropy(&self, idx: &[usize]) -> f64 {
        idx.iter().map(|&i| entropy_bits(&self.probs[i])).sum::<f64>() / idx.len().max(1) as f64
    }

    /// Mean cross-entropy of the raw triples against the true trits, in bits.
    pub fn mean_raw_cross_entropy(&self, idx: &[usize]) -> f64 {
        idx.iter().map(|&i| cross_entropy(self.trits[i], &self.probs[i])).sum::<f64>() / idx.len().max(1) as f64
    }
}

/// Cross-entropy (bits) of one sample and, optionally, its parameter gradient.
pub fn sample_loss(model: &CrrModel, x: &[f64], p: &Triple, trit: u8, grads: Option<&mut [f64]>) -> f64 {
    let mut h = vec![0.0; model.mlp.hidden()];
    let mut out = [0.0; 4];
    model.mlp.forward(x, &mut h, &mut out);
    let sig = sigmoid(out[3]);
    let beta = model.bounds.low + (model.bounds.high - model.bounds.low) * sig;
    let xs: Triple = std::array::from_fn(|i| p[i] + out[i]);
    let q = softmax_scaled(&xs, beta);
    let t = trit as usize;
    let loss = -q[t].max(PROB_FLOOR).log2();
    if let Some(g) = grads {
        if q[t] >= PROB_FLOOR {
            let ln2 = std::f64::consts::LN_2;
            let dz: Triple = std::array::from_fn(|i| (q[i] - if i == t { 1.0 } else { 0.0 }) / ln2);
            let dbeta: f64 = (0..3).map(|i| dz[i] * xs[i]).sum();
            let grad_out = [
                beta * dz[0],
                beta * dz[1],
                beta * dz[2],
                dbeta * (model.bounds.high - model.bounds.low) * sig * (1.0 - sig),
            ];
            model.mlp.backward(x, &h, &grad_out, g);
        }
    }
    loss
}

/// Hyperparameters for [`train_crr`].
#[derive(Debug, Clone)]
pub struct CrrTrainConfig {
    pub radius: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub holdout: f64,
    pub bounds: TemperatureBounds,
    pub seed: u64,
}

impl Default for CrrTrainConfig {
    fn default() -> Self {
        CrrTrainConfig {
            radius: 2,
            hidden: 32,
            epochs: 8,
            batch_size: 256,
            learning_rate: 2e-3,
            holdout: 0.1,
            bounds: TemperatureBounds::default(),
            seed: 1,
        }
    }
}

/// Losses after one epoch, in bits per trit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub heldout_loss: f64,
}

#[derive(Debug, Clone)]
pub struct CrrTrainReport {
    pub curve: Vec<EpochStats>,
    pub best_epoch: usize,
    pub heldout_loss: f64,
    /// Held-out mean entropy of the raw triples.
    pub heldout_raw_entropy: f64,
    /// Held-out mean cross-entropy of the raw triples.
    pub heldout_raw_cross_entropy: f64,
}

/// Split sample indices into shuffled training and held-out sets.
pub fn split_indices(n: usize, holdout: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_hold = ((n as f64) * holdout).round() as usize;
    let n_hold = n_hold.min(n.saturating_sub(1));
    let held = idx.split_off(n - n_hold);
    (idx, held)
}

fn mean_loss(model: &CrrModel, data: &CrrDataset, idx: &[usize]) -> f64 {
    let (sum, _) = accumulate(idx, 0, |i, _| {
        let x: Vec<f64> = data.row(i).collect();
        sample_loss(model, &x, &data.probs[i], data.trits[i], None)
    });
    sum / idx.len().max(1) as f64
}

/// Minimize mean cross-entropy with mini-batch Adam; returns the model with the
/// best held-out loss, weights rounded to `f32`.
pub fn train_crr(data: &CrrDataset, cfg: &CrrTrainConfig) -> Result<(CrrModel, CrrTrainReport)> {
    if data.is_empty() {
        return Err(Error::input("empty CRR dataset"));
    }
    if data.dim != CrrModel::input_dim(cfg.radius) {
        return Err(Error::input("dataset feature width does not match radius"));
    }
    let (mut train, held) = split_indices(data.len(), cfg.holdout, cfg.seed);
    let held = if held.is_empty() { train.clone() } else { held };
    let mut model = CrrModel::seeded(cfg.radius, cfg.hidden, cfg.bounds, cfg.seed);
    let n_params = model.mlp.params().len();
    let mut opt = Adam::new(n_params, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);

    let mut best = model.clone();
    let mut best_loss = mean_loss(&model, data, &held);
    let mut best_epoch = 0;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let batch = cfg.batch_size.max(1);
    for epoch in 1..=cfg.epochs {
        train.shuffle(&mut rng);
        // cosine decay within the run
        let progress = (epoch - 1) as f64 / cfg.epochs.max(1) as f64;
        opt.lr = cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()).max(0.05);
        let mut total = 0.0;
        for chunk in train.chunks(batch) {
            let (loss, mut grads) = accumulate(chunk, n_params, |i, g| {
                let x: Vec<f64> = data.row(i).collect();
                sample_loss(&model, &x, &data.probs[i], data.trits[i], Some(g))
            });
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training(format!("CRR loss became non-finite in epoch {epoch}")));
            }
            let scale = 1.0 / chunk.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            opt.step(model.mlp.params_mut(), &grads);
            total += loss;
        }
        let heldout_loss = mean_loss(&model, data, &held);
        if !heldout_loss.is_finite() {
            return Err(Error::Training(format!("CRR held-out loss non-finite in epoch {epoch}")));
        }
        let stats = EpochStats { epoch, train_loss: total / train.len().max(1) as f64, heldout_loss };
        log::info!("crr epoch {epoch}: train {:.5} held-out {:.5} bits", stats.train_loss, heldout_loss);
        curve.push(stats);
        if heldout_loss < best_loss {
            best_loss = heldout_loss;
            best = model.clone();
            best_epoch = epoch;
        }
    }
    best.mlp.round_to_f32();
    let report = CrrTrainReport {
        curve,
        best_epoch,
        heldout_loss: mean_loss(&best, data, &held),
        heldout_raw_entropy: data.mean_raw_entropy(&held),
        heldout_raw_cross_entropy: data.mean_raw_cross_entropy(&held),
    };
    Ok((best, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_difference, max_relative_error};
    use rand::Rng;

    const LOG2_3: f64 = 1.584_962_500_721_156_3;

    #[test]
    fn uniform_input_stays_uniform() {
        let b = TemperatureBounds::default();
        for s in [-3.0, 0.0, 2.5] {
            let q = modulate(&[1.0 / 3.0; 3], &Modulation { delta: [0.0; 3], s }, &b);
            for v in q {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn midpoint_temperature() {
        assert!((TemperatureBounds::default().beta(0.0) - 2.6).abs() < 1e-15);
        assert!(TemperatureBounds::new(1.0, 0.5).is_err());
    }

    #[test]
    fn higher_temperature_lowers_entropy() {
        let p = [0.1, 0.5, 0.4];
        let h1 = entropy_bits(&softmax_scaled(&p, 1.0));
        let h2 = entropy_bits(&softmax_scaled(&p, 2.0));
        // direct evaluation
        let direct = |beta: f64| {
            let e: Vec<f64> = p.iter().map(|v| (beta * v).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).map(|q| -q * q.log2()).sum::<f64>()
        };
        assert!((h1 - direct(1.0)).abs() < 1e-12);
        assert!((h2 - direct(2.0)).abs() < 1e-12);
        assert!(h1 > h2);
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(1, &[0.0, 1.0, 0.0]), 0.0);
        assert!((cross_entropy(2, &[1.0 / 3.0; 3]) - LOG2_3).abs() < 1e-12);
        assert!((cross_entropy(0, &[0.0, 1.0, 0.0]) - 32.0).abs() < 1e-12);
    }

    #[test]
    fn monotonicity_examples() {
        assert!(entropy_monotonicity_check(&[0.4, 0.4, 0.4], &[0.5, 1.0, 2.0, 8.0]));
        for b in [0.5, 3.0, 9.0] {
            assert!((entropy_bits(&softmax_scaled(&[0.4; 3], b)) - LOG2_3).abs() < 1e-12);
        }
        assert!(entropy_monotonicity_check(&[0.0, 1.0, 2.0], &[0.5, 1.0, 2.0, 4.0, 8.0]));
        assert!(!entropy_monotonicity_check(&[0.0, 1.0, 2.0], &[2.0, 1.0]));
    }

    #[test]
    fn modulate_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let b = TemperatureBounds::default();
        for _ in 0..2000 {
            let p: Triple = std::array::from_fn(|_| rng.random::<f64>());
            let m = Modulation {
                delta: std::array::from_fn(|_| rng.random_range(-2.0..2.0)),
                s: rng.random_range(-6.0..6.0),
            };
            let q = modulate(&p, &m, &b);
            assert!(q.iter().all(|&v| v > 0.0 && v < 1.0));
            assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let c = rng.random_range(-5.0..5.0);
            let shifted = Modulation { delta: std::array::from_fn(|i| m.delta[i] + c), s: m.s };
            let q2 = modulate(&p, &shifted, &b);
            for i in 0..3 {
                assert!((q[i] - q2[i]).abs() < 1e-12);
            }
            let x: Triple = std::array::from_fn(|i| p[i] + m.delta[i]);
            let arg = (0..3).max_by(|&a, &b| x[a].total_cmp(&x[b])).unwrap();
            assert!((0..3).all(|i| q[arg] >= q[i]));
        }
    }

    #[test]
    fn one_hot_is_fixed_point() {
        let m = CrrModel::seeded(1, 8, TemperatureBounds::default(), 3);
        let x = vec![0.5; CrrModel::input_dim(1)];
        assert_eq!(m.refine(&[0.0, 1.0, 0.0], &x), [0.0, 1.0, 0.0]);
        assert_eq!(m.refine(&[0.0, 0.0, 1.0], &x), [0.0, 0.0, 1.0]);
        assert!(!is_one_hot(&[0.5, 0.5, 0.0]));
    }

    #[test]
    fn zero_model_is_midpoint_modulation() {
        let m = CrrModel::zeros(1, 4, TemperatureBounds::default());
        let x = vec![0.3; CrrModel::input_dim(1)];
        assert_eq!(m.refine(&[1.0 / 3.0; 3], &x), [1.0 / 3.0; 3]);
        let p = [0.2, 0.5, 0.3];
        let expected = softmax_scaled(&p, 2.6);
        let got = m.refine(&p, &x);
        for i in 0..3 {
            assert!((got[i] - expected[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn slot_routing() {
        assert_eq!(CrrSlot::for_level(5, 5), CrrSlot::Last);
        assert_eq!(CrrSlot::for_level(4, 5), CrrSlot::SecondLast);
        assert_eq!(CrrSlot::for_level(3, 5), CrrSlot::Coarse);
        assert_eq!(CrrSlot::for_level(1, 5), CrrSlot::Coarse);
    }

    #[test]
    fn loss_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for cfg in 0..3 {
            let model = CrrModel::seeded(1, 6, TemperatureBounds::default(), 100 + cfg);
            // scale up so the output layer is not near zero
            let mut model = model;
            for w in model.mlp.params_mut() {
                *w *= 3.0;
            }
            let dim = CrrModel::input_dim(1);
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p: Triple = {
                let a: Triple = std::array::from_fn(|_| rng.random_range(0.05..1.0));
                let s: f64 = a.iter().sum();
                std::array::from_fn(|i| a[i] / s)
            };
            let trit = rng.random_range(0..3u8);
            let mut g = vec![0.0; model.mlp.params().len()];
            sample_loss(&model, &x, &p, trit, Some(&mut g));
            let fd = finite_difference(model.mlp.params(), 1e-5, |params| {
                let m = CrrModel::from_mlp(1, model.bounds, Mlp::from_params(dim, 6, 4, params.to_vec()).unwrap()).unwrap();
                sample_loss(&m, &x, &p, trit, None)
            });
            assert!(max_relative_error(&g, &fd, 1e-6) < 1e-4);
        }
    }

    fn synthetic_dataset(n: usize, dependent: bool, seed: u64) -> CrrDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = CrrDataset::new(0);
        for _ in 0..n {
            let trit = rng.random_range(0..3u8);
            let mut f = vec![0.0f32; d.dim];
            for v in f.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            if dependent {
                f[0] = trit as f32 - 1.0;
            }
            d.features.extend(f);
            d.probs.push([1.0 / 3.0; 3]);
            d.trits.push(if dependent { trit } else { rng.random_range(0..3u8) });
        }
        d
    }

    #[test]
    fn incompressible_source_stays_near_log3() {
        let data = synthetic_dataset(6000, false, 2);
        let cfg = CrrTrainConfig { radius: 0, hidden: 8, epochs: 6, ..Default::default() };
        let (_, report) = train_crr(&data, &cfg).unwrap();
        assert!((report.heldout_loss - LOG2_3).abs() < 0.02, "{}", report.heldout_loss);
    }

    #[test]
    fn separable_source_is_learned() {
        let data = synthetic_dataset(6000, true, 4);
        let cfg = CrrTrainConfig { radius: 0, hidden: 8, epochs: 20, learning_rate: 1e-2, ..Default::default() };
        let (_, report) = train_crr(&data, &cfg).unwrap();
        assert!(report.heldout_loss < 0.1, "{}", report.heldout_loss);
    }
}
