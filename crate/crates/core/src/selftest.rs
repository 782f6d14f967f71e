//! Fast invariant checks exposed through the command line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coder::rans::{decode_chunks, encode_symbols};
use crate::coder::{quantize_probs, Container};
use crate::crr::{entropy_monotonicity_check, CrrRouter};
use crate::eval::{bd_rate, RdCurve, RdPoint};
use crate::latent::{interval_moments, interval_stats, BinGrid};
use crate::pipeline::codec::{decode_at, encode, Asset, Budget, Toggles};
use crate::pipeline::{generate_latents, CodecConfig, Models, SyntheticSpec};
use crate::tensor::Dims;
use crate::tritplane::Triple;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
}

fn random_triple(rng: &mut ChaCha8Rng) -> Triple {
    let a: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>() + 1e-3);
    let s: f64 = a.iter().sum();
    [a[0] / s, a[1] / s, a[2] / s]
}

fn entropy_monotone(rng: &mut ChaCha8Rng) -> bool {
    (0..2000).all(|_| {
        let x: Triple = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
        let mut b = [rng.random_range(0.05..5.0), rng.random_range(0.05..5.0), rng.random_range(0.05..5.0)];
        b.sort_by(f64::total_cmp);
        entropy_monotonicity_check(&x, &b)
    })
}

fn conditional_mean_optimal(rng: &mut ChaCha8Rng) -> bool {
    let grid = BinGrid::new(6).unwrap();
    (0..200).all(|_| {
        let sigma = rng.random_range(0.5..30.0);
        let width = 3i64.pow(rng.random_range(0..4));
        let lo = rng.random_range(-40..=40 - width);
        let hi = lo + width - 1;
        let Ok(s) = interval_stats(lo, hi, sigma, grid) else { return false };
        let m = interval_moments(lo, hi, sigma);
        if m.is_degenerate() {
            return true;
        }
        let risk = |c: f64| (m.m2 - 2.0 * c * m.m1 + c * c * m.m0) / m.m0;
        let best = risk(s.conditional_mean);
        (0..=20).all(|j| best <= risk(lo as f64 + (hi - lo) as f64 * j as f64 / 20.0) + 1e-9)
    })
}

fn rans_round_trip(rng: &mut ChaCha8Rng) -> bool {
    (0..50).all(|_| {
        let n = rng.random_range(0..4000);
        let probs: Vec<Triple> = (0..n).map(|_| random_triple(rng)).collect();
        let trits: Vec<u8> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let freqs: Vec<_> = probs.iter().map(quantize_probs).collect();
        let chunks = encode_symbols(&trits, &freqs, rng.random_range(1..2000));
        let views: Vec<_> = chunks.iter().map(|c| (c.bytes.as_slice(), c.trits, c.checksum)).collect();
        decode_chunks(&views, &freqs, 0).map(|t| t == trits).unwrap_or(false)
    })
}

fn frequencies_valid(rng: &mut ChaCha8Rng) -> bool {
    (0..5000).all(|_| quantize_probs(&random_triple(rng)).is_valid())
}

fn small_asset(seed: u64) -> Asset {
    let (y, field) = generate_latents(&SyntheticSpec::new(Dims::new(2, 12, 12), 0.8, (5.0, 12.0), seed)).unwrap();
    Asset::Latent { y, field }
}

fn lossless_at_full() -> bool {
    let cfg = CodecConfig { chunk_size: 64, ..CodecConfig::default() };
    (0..3).all(|s| {
        let Ok(e) = encode(&small_asset(s), &cfg, &CrrRouter::default()) else { return false };
        let Ok(d) = decode_at(&e.bytes, Budget::Full, &Models::default(), Toggles::NONE) else { return false };
        d.latent == e.quantized_latent()
    })
}

fn truncation_equivalence() -> bool {
    let cfg = CodecConfig { chunk_size: 64, ..CodecConfig::default() };
    let Ok(e) = encode(&small_asset(9), &cfg, &CrrRouter::default()) else { return false };
    let Ok(c) = Container::parse(&e.bytes) else { return false };
    let offsets = c.offsets();
    (0..=c.chunks.len()).all(|k| {
        let end = c.header_len() + if k == 0 { 0 } else { offsets[k - 1] + c.chunks[k - 1].bytes as usize };
        let a = decode_at(&e.bytes[..end], Budget::Full, &Models::default(), Toggles::NONE);
        let b = decode_at(&e.bytes, Budget::Bytes(end), &Models::default(), Toggles::NONE);
        matches!((a, b), (Ok(a), Ok(b)) if a.latent == b.latent && a.bytes_used == b.bytes_used)
    })
}

fn header_corruption_rejected() -> bool {
    let Ok(e) = encode(&small_asset(4), &CodecConfig::default(), &CrrRouter::default()) else { return false };
    (0..e.header_len * 8).step_by(7).all(|bit| {
        let mut b = e.bytes.clone();
        b[bit / 8] ^= 1 << (bit % 8);
        Container::parse(&b).is_err()
    })
}

fn bd_rate_identities() -> bool {
    let pts: Vec<RdPoint> = (0..6).map(|i| RdPoint { rate: 0.1 * 1.6f64.powi(i), quality: 28.0 + 2.0 * i as f64 }).collect();
    let a = RdCurve::new(pts.clone(), "a").unwrap();
    let b = RdCurve::new(pts.iter().map(|p| RdPoint { rate: p.rate * 0.9, ..*p }).collect(), "b").unwrap();
    matches!(bd_rate(&a, &a), Ok(v) if v.abs() < 1e-9) && matches!(bd_rate(&a, &b), Ok(v) if (v + 10.0).abs() < 1e-6)
}

/// Run every check with a fixed seed.
pub fn run() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f);
    vec![
        Check { name: "entropy_monotone", passed: entropy_monotone(&mut rng) },
        Check { name: "conditional_mean_optimal", passed: conditional_mean_optimal(&mut rng) },
        Check { name: "frequencies_valid", passed: frequencies_valid(&mut rng) },
        Check { name: "rans_round_trip", passed: rans_round_trip(&mut rng) },
        Check { name: "lossless_at_full", passed: lossless_at_full() },
        Check { name: "truncation_equivalence", passed: truncation_equivalence() },
        Check { name: "header_corruption_rejected", passed: header_corruption_rejected() },
        Check { name: "bd_rate_identities", passed: bd_rate_identities() },
    ]
}
