//! Context-based distortion reduction.
//!
//! After entropy decoding stops at a fractional level, each element of the
//! partial reconstruction receives an additive residual predicted from a
//! window of the reconstruction, the prior means and the prior scales.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::latent::{pow3, GaussianField};
use crate::nn::{accumulate, Adam, Mlp};
use crate::tensor::{Latent, Tensor3};
use crate::tritplane::{state_at, DecodePosition, PrefixState, TritPlane};

const FEATURES_PER_SITE: usize = 4;
const CENTER_FEATURES: usize = 4;
const FEATURE_CLIP: f64 = 10.0;

/// `||y - y_tilde||_F`.
pub fn cdr_loss(y: &Latent, y_tilde: &Latent) -> Result<f64> {
    Ok(y.squared_error(y_tilde)?.sqrt())
}

/// Model slot of the CDR router; levels above `L - 1` are left untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CdrSlot {
    /// `(L-2, L-1]`
    Fine,
    /// `(L-3, L-2]`
    Mid,
    /// `<= L-3`
    Coarse,
}

impl CdrSlot {
    pub const ALL: [CdrSlot; 3] = [CdrSlot::Fine, CdrSlot::Mid, CdrSlot::Coarse];

    /// Slot handling fractional level `level`, or `None` in the identity band.
    pub fn for_level(level: f64, depth: u32) -> Option<Self> {
        let d = depth as f64;
        if level > d - 1.0 {
            None
        } else if level > d - 2.0 {
            Some(CdrSlot::Fine)
        } else if level > d - 3.0 {
            Some(CdrSlot::Mid)
        } else {
            Some(CdrSlot::Coarse)
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Training band `(lo, hi]` in levels, clipped at zero.
    pub fn band(self, depth: u32) -> (f64, f64) {
        let d = depth as f64;
        let hi = d - 1.0 - self.index() as f64;
        ((hi - 1.0).max(0.0), hi.max(0.0))
    }
}

/// Windowed perceptron predicting one residual per element.
#[derive(Debug, Clone, PartialEq)]
pub struct CdrModel {
    pub radius: usize,
    /// When false the scale features are zeroed.
    pub use_sigma: bool,
    pub mlp: Mlp,
}

impl CdrModel {
    pub fn input_dim(radius: usize) -> usize {
        let side = 2 * radius + 1;
        side * side * FEATURES_PER_SITE + CENTER_FEATURES
    }

    /// Random hidden layer, zero output layer: starts as the identity.
    pub fn seeded(radius: usize, hidden: usize, use_sigma: bool, seed: u64) -> Self {
        CdrModel { radius, use_sigma, mlp: Mlp::seeded(Self::input_dim(radius), hidden, 1, seed, 0.0) }
    }

    pub fn zeros(radius: usize, hidden: usize) -> Self {
        CdrModel { radius, use_sigma: true, mlp: Mlp::zeros(Self::input_dim(radius), hidden, 1) }
    }

    pub fn from_mlp(radius: usize, use_sigma: bool, mlp: Mlp) -> Result<Self> {
        if mlp.inputs() != Self::input_dim(radius) || mlp.outputs() != 1 {
            return Err(Error::ModelMismatch(format!(
                "CDR perceptron is {}->{}, expected {}->1",
                mlp.inputs(),
                mlp.outputs(),
                Self::input_dim(radius)
            )));
        }
        Ok(CdrModel { radius, use_sigma, mlp })
    }
}

/// A partial reconstruction with the decoder-side geometry needed for features.
#[derive(Debug, Clone)]
pub struct CdrFrame {
    pub yhat: Latent,
    pub field: GaussianField,
    /// Current interval width per element, in bins.
    pub width: Vec<f64>,
    /// Current interval midpoint per element, prior mean included.
    pub mid: Vec<f64>,
    /// 1 for elements that already hold a trit of the partially decoded plane.
    pub advanced: Vec<f64>,
}

impl CdrFrame {
    pub fn from_state(state: &PrefixState, field: &GaussianField) -> Self {
        let depth = state.depth();
        let base = state.intervals().iter().map(|iv| iv.level).min().unwrap_or(0);
        let yhat = state.reconstruct(field);
        let n = state.intervals().len();
        let mut width = Vec::with_capacity(n);
        let mut mid = Vec::with_capacity(n);
        let mut advanced = Vec::with_capacity(n);
        for (i, iv) in state.intervals().iter().enumerate() {
            width.push(pow3(depth - iv.level) as f64);
            mid.push((iv.lo + iv.hi(depth)) as f64 / 2.0 + field.mean(i));
            advanced.push((iv.level - base) as f64);
        }
        CdrFrame { yhat, field: field.clone(), width, mid, advanced }
    }

    pub fn len(&self) -> usize {
        self.width.len()
    }

    pub fn is_empty(&self) -> bool {
        self.width.is_empty()
    }

    pub fn features(&self, i: usize, radius: usize, use_sigma: bool, out: &mut [f64]) {
        let dims = self.yhat.dims();
        let y = self.yhat.as_slice();
        let w = self.width[i];
        let m_e = self.field.mean(i);
        let (c, yy0, xx0) = dims.coords(i);
        let r = radius as isize;
        let clip = |v: f64| v.clamp(-FEATURE_CLIP, FEATURE_CLIP);
        let mut k = 0;
        for dy in -r..=r {
            for dx in -r..=r {
                let yy = yy0 as isize + dy;
                let xx = xx0 as isize + dx;
                let site = &mut out[k..k + FEATURES_PER_SITE];
                k += FEATURES_PER_SITE;
                if yy < 0 || xx < 0 || yy >= dims.height as isize || xx >= dims.width as isize {
                    site.fill(0.0);
                    continue;
                }
                let j = dims.index(c, yy as usize, xx as usize);
                site[0] = clip((y[j] - y[i]) / w);
                site[1] = clip((self.field.mean(j) - m_e) / w);
                site[2] = if use_sigma { clip((self.field.scale(j) / w).ln()) } else { 0.0 };
                site[3] = clip((self.width[j] / w).ln());
            }
        }
        out[k] = clip((y[i] - m_e) / w);
        out[k + 1] = if use_sigma { clip((self.field.scale(i) / w).ln()) } else { 0.0 };
        out[k + 2] = clip((y[i] - self.mid[i]) / w);
        out[k + 3] = self.advanced[i];
    }
}

/// Predicted residual per element.
pub fn residuals(frame: &CdrFrame, model: &CdrModel) -> Vec<f64> {
    let dim = CdrModel::input_dim(model.radius);
    (0..frame.len())
        .into_par_iter()
        .map_init(
            || (vec![0.0; dim], vec![0.0; model.mlp.hidden()]),
            |(x, h), i| {
                frame.features(i, model.radius, model.use_sigma, x);
                let mut out = [0.0];
                model.mlp.forward(x, h, &mut out);
                frame.width[i] * out[0]
            },
        )
        .collect()
}

/// `Y_tilde = Y_hat + dY`.
pub fn refine_frame(frame: &CdrFrame, model: &CdrModel) -> Latent {
    let d = residuals(frame, model);
    let v = frame.yhat.as_slice().iter().zip(&d).map(|(a, b)| a + b).collect();
    Tensor3::from_vec(frame.yhat.dims(), v).expect("frame dims are valid")
}

/// Three optional models routed by decode level.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CdrRouter {
    pub slots: [Option<CdrModel>; 3],
}

impl CdrRouter {
    pub fn model_for(&self, level: f64, depth: u32) -> Option<&CdrModel> {
        CdrSlot::for_level(level, depth).and_then(|s| self.slots[s.index()].as_ref())
    }

    pub fn is_empty(&self) -> bool {
        self.slots.iter().all(Option::is_none)
    }
}

/// Refine the reconstruction of `state` at fractional `level`.
///
/// Returns `yhat` unchanged in the identity band or when the slot is empty.
pub fn refine_latent(
    yhat: &Latent,
    state: &PrefixState,
    field: &GaussianField,
    level: f64,
    router: &CdrRouter,
) -> Latent {
    match router.model_for(level, state.depth()) {
        None => yhat.clone(),
        Some(model) => {
            let mut frame = CdrFrame::from_state(state, field);
            frame.yhat = yhat.clone();
            refine_frame(&frame, model)
        }
    }
}

/// `||target - (yhat + dY)||_F` for one frame, with its gradient accumulated into `grads`.
pub fn frame_loss(model: &CdrModel, frame: &CdrFrame, target: &Latent, grads: Option<&mut [f64]>) -> f64 {
    let dim = CdrModel::input_dim(model.radius);
    let hidden = model.mlp.hidden();
    let n = frame.len();
    let cached: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut x = vec![0.0; dim];
            let mut h = vec![0.0; hidden];
            let mut out = [0.0];
            frame.features(i, model.radius, model.use_sigma, &mut x);
            model.mlp.forward(&x, &mut h, &mut out);
            let r = target.as_slice()[i] - frame.yhat.as_slice()[i] - frame.width[i] * out[0];
            (x, h, r)
        })
        .collect();
    let loss = cached.iter().map(|c| c.2 * c.2).sum::<f64>().sqrt();
    if let Some(g) = grads {
        if loss > 0.0 {
            let idx: Vec<usize> = (0..n).collect();
            let (_, part) = accumulate(&idx, g.len(), |i, gi| {
                let (x, h, r) = &cached[i];
                let go = [-r * frame.width[i] / loss];
                model.mlp.backward(x, h, &go, gi);
                0.0
            });
            for (a, b) in g.iter_mut().zip(&part) {
                *a += b;
            }
        }
    }
    loss
}

/// One training tensor: target latent, prior, trit planes and per-plane order.
#[derive(Debug, Clone)]
pub struct CdrSample {
    pub target: Latent,
    pub field: GaussianField,
    pub planes: Vec<TritPlane>,
    pub orders: Vec<Vec<u32>>,
    pub depth: u32,
}

impl CdrSample {
    pub fn frame_at(&self, level: f64) -> Result<CdrFrame> {
        let n = self.target.len();
        let pos = DecodePosition::from_level(level, n, self.depth);
        let state = state_at(&self.planes, &self.orders, pos, self.depth)?;
        Ok(CdrFrame::from_state(&state, &self.field))
    }
}

/// Uniform fractional offsets inside a band, one per training step.
#[derive(Debug, Clone)]
pub struct AlphaSampler {
    rng: ChaCha8Rng,
}

impl AlphaSampler {
    pub fn new(seed: u64) -> Self {
        AlphaSampler { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn next_alpha(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

#[derive(Debug, Clone)]
pub struct CdrTrainConfig {
    pub radius: usize,
    pub hidden: usize,
    pub steps: usize,
    /// Tensors per step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub holdout: f64,
    pub use_sigma: bool,
    /// Held-out evaluation interval, in steps.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for CdrTrainConfig {
    fn default() -> Self {
        CdrTrainConfig {
            radius: 2,
            hidden: 32,
            steps: 300,
            batch_size: 4,
            learning_rate: 3e-3,
            holdout: 0.2,
            use_sigma: true,
            eval_every: 25,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdrCurvePoint {
    pub step: usize,
    pub train_loss: f64,
    pub heldout_loss: f64,
}

#[derive(Debug, Clone)]
pub struct CdrTrainReport {
    pub curve: Vec<CdrCurvePoint>,
    pub best_step: usize,
    /// Mean held-out `||Y - Y_tilde||_F` of the returned model.
    pub heldout_refined: f64,
    /// Mean held-out `||Y - Y_hat||_F`.
    pub heldout_unrefined: f64,
    /// Fractional offsets drawn during training, in order.
    pub alphas: Vec<f64>,
}

/// Held-out levels for a band: the upper end and three interior points.
pub fn evaluation_levels(slot: CdrSlot, depth: u32) -> Vec<f64> {
    let (lo, hi) = slot.band(depth);
    [0.25, 0.5, 0.75, 1.0].iter().map(|f| lo + f * (hi - lo)).collect()
}

/// Mean refined and unrefined norms over `frames`.
pub fn evaluate_frames(model: &CdrModel, frames: &[(CdrFrame, Latent)]) -> (f64, f64) {
    let n = frames.len().max(1) as f64;
    let mut refined = 0.0;
    let mut plain = 0.0;
    for (f, t) in frames {
        refined += frame_loss(model, f, t, None);
        plain += f.yhat.squared_error(t).map(f64::sqrt).unwrap_or(f64::NAN);
    }
    (refined / n, plain / n)
}

/// Generic optimization loop: each step draws a batch of frames and descends the
/// summed norm; the model with the lowest held-out loss is returned.
pub fn fit_frames<B>(
    mut next_batch: B,
    heldout: &[(CdrFrame, Latent)],
    cfg: &CdrTrainConfig,
) -> Result<(CdrModel, CdrTrainReport)>
where
    B: FnMut(usize) -> Result<Vec<(CdrFrame, Latent)>>,
{
    let mut model = CdrModel::seeded(cfg.radius, cfg.hidden, cfg.use_sigma, cfg.seed);
    let n_params = model.mlp.params().len();
    let mut opt = Adam::new(n_params, cfg.learning_rate);
    let (mut best_loss, unrefined) = evaluate_frames(&model, heldout);
    let mut best = model.clone();
    let mut best_step = 0;
    let mut curve = Vec::new();
    let mut running = 0.0;
    let mut running_n = 0usize;
    let eval_every = cfg.eval_every.max(1);
    for step in 1..=cfg.steps {
        let batch = next_batch(step)?;
        let mut grads = vec![0.0; n_params];
        let mut loss = 0.0;
        for (f, t) in &batch {
            loss += frame_loss(&model, f, t, Some(&mut grads));
        }
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training(format!("CDR loss became non-finite at step {step}")));
        }
        let scale = 1.0 / batch.len().max(1) as f64;
        grads.iter_mut().for_each(|g| *g *= scale);
        opt.step(model.mlp.params_mut(), &grads);
        running += loss * scale;
        running_n += 1;
        if step % eval_every == 0 || step == cfg.steps {
            let (held, _) = evaluate_frames(&model, heldout);
            if !held.is_finite() {
                return Err(Error::Training(format!("CDR held-out loss non-finite at step {step}")));
            }
            let point = CdrCurvePoint { step, train_loss: running / running_n as f64, heldout_loss: held };
            log::info!("cdr step {step}: train {:.4} held-out {:.4}", point.train_loss, held);
            curve.push(point);
            running = 0.0;
            running_n = 0;
            if held < best_loss {
                best_loss = held;
                best = model.clone();
                best_step = step;
            }
        }
    }
    best.mlp.round_to_f32();
    let (heldout_refined, _) = evaluate_frames(&best, heldout);
    Ok((best, CdrTrainReport { curve, best_step, heldout_refined, heldout_unrefined: unrefined, alphas: Vec::new() }))
}

/// Train the model for one router slot.
///
/// Each step picks `batch_size` tensors and, for each, sums the loss at the
/// band's upper end, at `lo + alpha` and at `lo`, with `alpha ~ U(0, 1)` drawn
/// once per step.
pub fn train_cdr(samples: &[CdrSample], slot: CdrSlot, cfg: &CdrTrainConfig) -> Result<(CdrModel, CdrTrainReport)> {
    if samples.len() < 2 {
        return Err(Error::input("CDR training needs at least two tensors"));
    }
    let n_hold = ((samples.len() as f64 * cfg.holdout).round() as usize).clamp(1, samples.len() - 1);
    let (train, held) = samples.split_at(samples.len() - n_hold);
    let mut heldout = Vec::new();
    for s in held {
        for level in evaluation_levels(slot, s.depth) {
            heldout.push((s.frame_at(level)?, s.target.clone()));
        }
    }
    // endpoint frames never change; build them once
    let endpoints: Vec<(CdrFrame, CdrFrame)> = train
        .iter()
        .map(|s| {
            let (lo, hi) = slot.band(s.depth);
            Ok((s.frame_at(hi)?, s.frame_at(lo)?))
        })
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xcd12);
    let mut alpha = AlphaSampler::new(cfg.seed ^ 0xa1fa);
    let mut alphas = Vec::with_capacity(cfg.steps);
    let batch = cfg.batch_size.clamp(1, train.len());
    let (model, mut report) = fit_frames(
        |_| {
            let a = alpha.next_alpha();
            alphas.push(a);
            let mut out = Vec::with_capacity(3 * batch);
            for k in sample(&mut rng, train.len(), batch) {
                let s = &train[k];
                let (lo, _) = slot.band(s.depth);
                let (f_hi, f_lo) = &endpoints[k];
                out.push((f_hi.clone(), s.target.clone()));
                out.push((s.frame_at(lo + a)?, s.target.clone()));
                out.push((f_lo.clone(), s.target.clone()));
            }
            Ok(out)
        },
        &heldout,
        cfg,
    )?;
    report.alphas = alphas;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_difference, max_relative_error};
    use crate::tensor::Dims;
    use crate::tritplane::PrefixInterval;

    #[test]
    fn loss_examples() {
        let dims = Dims::new(2, 3, 4);
        let a = Tensor3::filled(dims, 1.5);
        assert_eq!(cdr_loss(&a, &a).unwrap(), 0.0);
        let b = Tensor3::filled(dims, 0.5);
        assert!((cdr_loss(&a, &b).unwrap() - 24f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn loss_matches_elementwise_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dims = Dims::new(3, 5, 7);
        let a = Tensor3::from_vec(dims, (0..dims.len()).map(|_| rng.random_range(-9.0..9.0)).collect()).unwrap();
        let b = Tensor3::from_vec(dims, (0..dims.len()).map(|_| rng.random_range(-9.0..9.0)).collect()).unwrap();
        let mut s = 0.0;
        for c in 0..3 {
            for y in 0..5 {
                for x in 0..7 {
                    let d = a.get(c, y, x) - b.get(c, y, x);
                    s += d * d;
                }
            }
        }
        assert!((cdr_loss(&a, &b).unwrap() - s.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn band_routing() {
        assert_eq!(CdrSlot::for_level(5.0, 5), None);
        assert_eq!(CdrSlot::for_level(4.2, 5), None);
        assert_eq!(CdrSlot::for_level(4.0, 5), Some(CdrSlot::Fine));
        assert_eq!(CdrSlot::for_level(3.01, 5), Some(CdrSlot::Fine));
        assert_eq!(CdrSlot::for_level(3.0, 5), Some(CdrSlot::Mid));
        assert_eq!(CdrSlot::for_level(2.0, 5), Some(CdrSlot::Coarse));
        assert_eq!(CdrSlot::for_level(0.0, 5), Some(CdrSlot::Coarse));
        assert_eq!(CdrSlot::Fine.band(5), (3.0, 4.0));
        assert_eq!(CdrSlot::Coarse.band(5), (1.0, 2.0));
    }

    fn random_state(dims: Dims, depth: u32, rng: &mut ChaCha8Rng) -> PrefixState {
        let mut s = PrefixState::new(dims, depth);
        let planes = rng.random_range(0..depth);
        for i in 0..dims.len() {
            let extra = rng.random_bool(0.5) as u32;
            for _ in 0..(planes + extra).min(depth) {
                s.push(i, rng.random_range(0..3));
            }
        }
        s
    }

    fn random_field(dims: Dims, rng: &mut ChaCha8Rng) -> GaussianField {
        let n = dims.len();
        GaussianField::per_element(
            dims,
            (0..n).map(|_| rng.random_range(-3.0..3.0)).collect(),
            (0..n).map(|_| rng.random_range(0.5..20.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_model_and_identity_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dims = Dims::new(2, 5, 5);
        let field = random_field(dims, &mut rng);
        let state = random_state(dims, 4, &mut rng);
        let frame = CdrFrame::from_state(&state, &field);
        let zero = CdrModel::zeros(1, 4);
        assert_eq!(refine_frame(&frame, &zero), frame.yhat);
        let mut trained = CdrModel::seeded(1, 4, true, 2);
        trained.mlp.params_mut().iter_mut().for_each(|p| *p += 0.3);
        let router = CdrRouter { slots: [Some(trained.clone()), Some(trained.clone()), Some(trained)] };
        let top = refine_latent(&frame.yhat, &state, &field, 3.5, &router);
        assert!(top.as_slice().iter().zip(frame.yhat.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let low = refine_latent(&frame.yhat, &state, &field, 2.5, &router);
        assert_eq!(low.dims(), frame.yhat.dims());
        assert_ne!(low, frame.yhat);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for k in 0..3 {
            let dims = Dims::new(2, 4, 4);
            let field = random_field(dims, &mut rng);
            let state = random_state(dims, 4, &mut rng);
            let frame = CdrFrame::from_state(&state, &field);
            let noise: Vec<f64> = frame.yhat.as_slice().iter().map(|v| v + rng.random_range(-2.0..2.0)).collect();
            let target = Tensor3::from_vec(dims, noise).unwrap();
            let mut model = CdrModel::seeded(1, 5, k != 1, 40 + k);
            model.mlp.params_mut().iter_mut().for_each(|p| *p += rng.random_range(-0.3..0.3));
            let mut g = vec![0.0; model.mlp.params().len()];
            frame_loss(&model, &frame, &target, Some(&mut g));
            let fd = finite_difference(model.mlp.params(), 1e-6, |p| {
                let m = CdrModel::from_mlp(1, model.use_sigma, Mlp::from_params(model.mlp.inputs(), 5, 1, p.to_vec()).unwrap())
                    .unwrap();
                frame_loss(&m, &frame, &target, None)
            });
            assert!(max_relative_error(&g, &fd, 1e-6) < 1e-4);
        }
    }

    #[test]
    fn alpha_sampler_is_seeded_uniform() {
        let mut a = AlphaSampler::new(3);
        let mut b = AlphaSampler::new(3);
        let xs: Vec<f64> = (0..1000).map(|_| a.next_alpha()).collect();
        assert!(xs.iter().all(|&x| (0.0..1.0).contains(&x)));
        assert!(xs.iter().all(|&x| x.to_bits() == b.next_alpha().to_bits()));
    }

    #[test]
    fn perfect_reconstruction_is_a_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dims = Dims::new(1, 6, 6);
        let field = random_field(dims, &mut rng);
        let state = random_state(dims, 3, &mut rng);
        let frame = CdrFrame::from_state(&state, &field);
        let target = frame.yhat.clone();
        let frames = vec![(frame, target)];
        let cfg = CdrTrainConfig { radius: 1, hidden: 4, steps: 20, eval_every: 5, ..Default::default() };
        let (model, report) = fit_frames(|_| Ok(frames.clone()), &frames, &cfg).unwrap();
        assert_eq!(report.heldout_unrefined, 0.0);
        assert_eq!(report.heldout_refined, 0.0);
        assert_eq!(report.best_step, 0);
        assert_eq!(refine_frame(&frames[0].0, &model), frames[0].1);
    }

    #[test]
    fn linear_residual_is_learned() {
        // target - yhat is a linear function of the scale feature
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let dims = Dims::new(1, 8, 8);
        fn make(dims: Dims, rng: &mut ChaCha8Rng) -> (CdrFrame, Latent) {
            let field = random_field(dims, rng);
            let mut state = PrefixState::new(dims, 4);
            for i in 0..dims.len() {
                state.push(i, rng.random_range(0..3));
            }
            let frame = CdrFrame::from_state(&state, &field);
            let target = Tensor3::from_vec(
                dims,
                (0..dims.len())
                    .map(|i| frame.yhat.as_slice()[i] + frame.width[i] * 0.1 * (field.scale(i) / frame.width[i]).ln())
                    .collect(),
            )
            .unwrap();
            (frame, target)
        }
        let train: Vec<_> = (0..16).map(|_| make(dims, &mut rng)).collect();
        let held: Vec<_> = (0..4).map(|_| make(dims, &mut rng)).collect();
        let cfg = CdrTrainConfig { radius: 0, hidden: 8, steps: 400, learning_rate: 1e-2, eval_every: 20, ..Default::default() };
        let mut pick = ChaCha8Rng::seed_from_u64(1);
        let (_, report) = fit_frames(
            |_| Ok(sample(&mut pick, train.len(), 4).into_iter().map(|k| train[k].clone()).collect()),
            &held,
            &cfg,
        )
        .unwrap();
        assert!(report.heldout_refined < 0.5 * report.heldout_unrefined, "{report:?}");
    }

    #[test]
    fn frame_geometry() {
        let dims = Dims::new(1, 1, 2);
        let field = GaussianField::per_channel(dims, vec![1.0], vec![5.0]).unwrap();
        let mut state = PrefixState::new(dims, 3);
        state.push(0, 2);
        let frame = CdrFrame::from_state(&state, &field);
        assert_eq!(frame.width, vec![9.0, 27.0]);
        let iv = PrefixInterval::root(3).child(2, 3);
        assert_eq!(frame.mid[0], (iv.lo + iv.hi(3)) as f64 / 2.0 + 1.0);
        assert_eq!(frame.mid[1], 1.0);
        assert_eq!(frame.advanced, vec![1.0, 0.0]);
    }
}
