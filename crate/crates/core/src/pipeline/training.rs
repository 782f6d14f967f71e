//! Dataset builders and drivers that train every router slot.

use super::codec::{decode_stream, encode, prepare, reconstruct, Asset, Toggles};
use super::models::Models;
use super::config::CodecConfig;
use super::transform::{retrain_decoder, RefitReport, RefitSample, SynthesisWeights};
use crate::cdr::{train_cdr, CdrRouter, CdrSample, CdrSlot, CdrTrainConfig, CdrTrainReport};
use crate::coder::Container;
use crate::crr::{train_crr, CrrContext, CrrDataset, CrrRouter, CrrSlot, CrrTrainConfig, CrrTrainReport};
use crate::error::{Error, Result};
use crate::latent::quantize_center;
use crate::tritplane::{slice, DecodePosition, PlaneContext, PrefixState};

/// Most frequent quantization depth over `assets`; ties go to the deeper one.
pub fn dominant_depth(assets: &[Asset], cfg: &CodecConfig) -> Result<u32> {
    let mut counts = std::collections::BTreeMap::new();
    for a in assets {
        let p = prepare(a, cfg)?;
        *counts.entry(quantize_center(&p.y, &p.field, cfg.max_depth)?.depth).or_insert(0usize) += 1;
    }
    counts
        .into_iter()
        .max_by_key(|&(d, n)| (n, d))
        .map(|(d, _)| d)
        .ok_or_else(|| Error::input("no training assets"))
}

/// CRR samples of one slot from assets quantized at exactly `depth`.
/// Returns the dataset and the number of assets skipped for another depth.
pub fn crr_dataset(assets: &[Asset], cfg: &CodecConfig, slot: CrrSlot, radius: usize, depth: u32) -> Result<(CrrDataset, usize)> {
    let mut data = CrrDataset::new(radius);
    let mut skipped = 0;
    for a in assets {
        let p = prepare(a, cfg)?;
        let q = quantize_center(&p.y, &p.field, cfg.max_depth)?;
        if q.depth != depth {
            skipped += 1;
            continue;
        }
        let planes = slice(&q.values, depth)?;
        let mut state = PrefixState::new(p.y.dims(), depth);
        for level in 1..=depth {
            let plane = &planes[level as usize - 1];
            if slot.contains(level, depth) {
                let ctx = PlaneContext::compute(&state, &p.field, level)?;
                data.push_plane(&CrrContext { plane: &ctx, state: &state, field: &p.field }, radius, &plane.trits);
            }
            for (i, &t) in plane.trits.iter().enumerate() {
                state.push(i, t);
            }
        }
    }
    Ok((data, skipped))
}

#[derive(Debug, Clone)]
pub struct CrrRouterReport {
    pub depth: u32,
    pub slots: Vec<(CrrSlot, usize, CrrTrainReport)>,
    pub skipped_assets: usize,
}

/// Train all three CRR slots on assets at the dominant depth.
pub fn train_crr_router(assets: &[Asset], cfg: &CodecConfig, tc: &CrrTrainConfig) -> Result<(CrrRouter, CrrRouterReport)> {
    let depth = dominant_depth(assets, cfg)?;
    let mut router = CrrRouter::default();
    let mut slots = Vec::new();
    let mut skipped = 0;
    for slot in CrrSlot::ALL {
        let (data, s) = crr_dataset(assets, cfg, slot, tc.radius, depth)?;
        skipped = s;
        if data.is_empty() {
            log::warn!("no trainable trits for CRR slot {slot:?}");
            continue;
        }
        let tc = CrrTrainConfig { bounds: cfg.bounds, seed: tc.seed.wrapping_add(slot.index() as u64), ..tc.clone() };
        let (model, report) = train_crr(&data, &tc)?;
        slots.push((slot, data.len(), report));
        router.slots[slot.index()] = Some(model);
    }
    Ok((router, CrrRouterReport { depth, slots, skipped_assets: skipped }))
}

/// CDR training tensors: each asset encoded with `crr` so plane orders match deployment.
pub fn cdr_samples(assets: &[Asset], cfg: &CodecConfig, crr: &CrrRouter) -> Result<Vec<CdrSample>> {
    assets
        .iter()
        .map(|a| {
            let e = encode(a, cfg, crr)?;
            Ok(CdrSample { target: e.target, field: e.field, planes: e.planes, orders: e.orders, depth: e.depth })
        })
        .collect()
}

/// Train the three CDR slots.
pub fn train_cdr_router(
    assets: &[Asset],
    cfg: &CodecConfig,
    crr: &CrrRouter,
    tc: &CdrTrainConfig,
) -> Result<(CdrRouter, Vec<(CdrSlot, CdrTrainReport)>)> {
    let samples = cdr_samples(assets, cfg, crr)?;
    let mut router = CdrRouter::default();
    let mut reports = Vec::new();
    for slot in CdrSlot::ALL {
        let tc = CdrTrainConfig { seed: tc.seed.wrapping_add(slot.index() as u64), ..tc.clone() };
        let (model, report) = train_cdr(&samples, slot, &tc)?;
        router.slots[slot.index()] = Some(model);
        reports.push((slot, report));
    }
    Ok((router, reports))
}

/// Refit the synthesis matrix on image assets using reconstructions at levels
/// `L, L-1, ...` (one per weight), refined by the CDR models in `models`.
pub fn refit_synthesis(
    assets: &[Asset],
    cfg: &CodecConfig,
    models: &Models,
    toggles: Toggles,
    level_weights: &[f64],
    ridge: f64,
) -> Result<(SynthesisWeights, RefitReport)> {
    let no_refit = Toggles { refit: false, ..toggles };
    let mut latents = Vec::new();
    let mut targets = Vec::new();
    let mut weights = Vec::new();
    let mut step = None;
    for a in assets {
        let Asset::Image(img) = a else {
            return Err(Error::input("decoder refit needs image assets"));
        };
        let crr = if toggles.crr { models.crr.clone() } else { CrrRouter::default() };
        let e = encode(a, cfg, &crr)?;
        let c = Container::parse(&e.bytes)?;
        let stream = decode_stream(&c, &crr, toggles.crr, c.chunks.len())?;
        step = e.image.map(|i| i.step as f64);
        for (j, &w) in level_weights.iter().enumerate() {
            let Some(level) = e.depth.checked_sub(j as u32) else { break };
            let d = reconstruct(&stream, DecodePosition::new(level, 0), models, no_refit)?;
            latents.push(d.latent);
            targets.push(img.to_f64());
            weights.push(w);
        }
    }
    let step = step.ok_or_else(|| Error::input("no image assets"))?;
    let samples: Vec<RefitSample> = latents
        .iter()
        .zip(&targets)
        .zip(&weights)
        .map(|((l, t), &w)| RefitSample { latent: l, target: t, step, weight: w })
        .collect();
    retrain_decoder(&samples, cfg.block_size, ridge, level_weights)
}
