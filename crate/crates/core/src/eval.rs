//! Metrics and experiment drivers: PSNR, BD-rate, rate sweeps and ablations.

use nalgebra::{DMatrix, DVector};

use crate::crr::CrrRouter;
use crate::error::{Error, Result};
use crate::pipeline::codec::{chunks_for_budget, decode_stream, encode, reconstruct, Asset, Budget, Toggles};
use crate::pipeline::config::CodecConfig;
use crate::pipeline::image::Image;
use crate::pipeline::models::Models;
use crate::coder::Container;
use crate::tensor::Latent;

/// `10 log10(255^2 / mse)`; `+inf` when `mse == 0`.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    }
}

pub fn image_mse(a: &Image, b: &Image) -> Result<f64> {
    if (a.width, a.height, a.channels) != (b.width, b.height, b.channels) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    let se: f64 = a.data.iter().zip(&b.data).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    Ok(se / a.data.len() as f64)
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(image_mse(a, b)?))
}

/// PSNR of a latent reconstruction on the same 255 peak.
pub fn latent_psnr(reference: &Latent, test: &Latent) -> Result<f64> {
    Ok(psnr_from_mse(reference.mse(test)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdPoint {
    /// Bits per pixel.
    pub rate: f64,
    /// PSNR in dB.
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RdCurve {
    pub points: Vec<RdPoint>,
    pub tag: String,
}

impl RdCurve {
    /// Requires strictly increasing, positive rates and finite qualities.
    pub fn new(points: Vec<RdPoint>, tag: impl Into<String>) -> Result<Self> {
        if points.iter().any(|p| !(p.rate > 0.0 && p.rate.is_finite() && p.quality.is_finite())) {
            return Err(Error::input("RD points need positive finite rates and finite qualities"));
        }
        if points.windows(2).any(|w| w[1].rate <= w[0].rate) {
            return Err(Error::input("RD curve rates must be strictly increasing"));
        }
        Ok(RdCurve { points, tag: tag.into() })
    }

    /// Keep usable points: finite quality, strictly increasing rate (first wins).
    pub fn from_samples(samples: impl IntoIterator<Item = RdPoint>, tag: impl Into<String>) -> Result<Self> {
        let mut pts: Vec<RdPoint> = Vec::new();
        for p in samples {
            if p.quality.is_finite() && p.rate > 0.0 && pts.last().is_none_or(|q| p.rate > q.rate) {
                pts.push(p);
            }
        }
        RdCurve::new(pts, tag)
    }
}

/// Least-squares polynomial coefficients, lowest order first.
pub fn polyfit(x: &[f64], y: &[f64], degree: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if n <= degree || y.len() != n {
        return Err(Error::input(format!("{n} points cannot fit degree {degree}")));
    }
    // center and scale for conditioning
    let mid = x.iter().sum::<f64>() / n as f64;
    let half = x.iter().map(|v| (v - mid).abs()).fold(0.0, f64::max).max(1e-12);
    let a = DMatrix::from_fn(n, degree + 1, |i, j| ((x[i] - mid) / half).powi(j as i32));
    let b = DVector::from_column_slice(y);
    let svd = a.svd(true, true);
    let c = svd.solve(&b, 1e-14).map_err(|e| Error::input(format!("polynomial fit failed: {e}")))?;
    // expand p((x - mid)/half) back into powers of x
    let mut out = vec![0.0; degree + 1];
    for (j, &cj) in c.iter().enumerate() {
        for k in 0..=j {
            let binom = (0..k).fold(1.0, |acc, t| acc * (j - t) as f64 / (t + 1) as f64);
            out[k] += cj * binom * (-mid).powi((j - k) as i32) / half.powi(j as i32);
        }
    }
    Ok(out)
}

fn poly_integral(c: &[f64], lo: f64, hi: f64) -> f64 {
    c.iter().enumerate().map(|(k, &a)| a * (hi.powi(k as i32 + 1) - lo.powi(k as i32 + 1)) / (k as f64 + 1.0)).sum()
}

/// Bjontegaard rate difference of `test` against `reference`, in percent.
pub fn bd_rate(reference: &RdCurve, test: &RdCurve) -> Result<f64> {
    for c in [reference, test] {
        if c.points.len() < 4 {
            return Err(Error::input(format!("curve '{}' has {} points; BD-rate needs 4", c.tag, c.points.len())));
        }
    }
    let range = |c: &RdCurve| {
        c.points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.quality), b.max(p.quality)))
    };
    let (r0, r1) = range(reference);
    let (t0, t1) = range(test);
    let lo = r0.max(t0);
    let hi = r1.min(t1);
    if !(hi > lo) {
        return Err(Error::NoOverlap);
    }
    let fit = |c: &RdCurve| {
        let q: Vec<f64> = c.points.iter().map(|p| p.quality).collect();
        let r: Vec<f64> = c.points.iter().map(|p| p.rate.ln()).collect();
        polyfit(&q, &r, 3)
    };
    let pr = fit(reference)?;
    let pt = fit(test)?;
    let avg = (poly_integral(&pt, lo, hi) - poly_integral(&pr, lo, hi)) / (hi - lo);
    Ok((avg.exp() - 1.0) * 100.0)
}

/// One decoded point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub budget: Budget,
    pub bytes: usize,
    pub bpp: f64,
    pub psnr: f64,
    pub level: f64,
    /// Latent-domain MSE against the continuous source latent.
    pub latent_mse: f64,
}

#[derive(Debug, Clone)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    pub total_bytes: usize,
    pub header_bytes: usize,
}

impl Sweep {
    pub fn curve(&self, tag: &str) -> Result<RdCurve> {
        RdCurve::from_samples(self.rows.iter().map(|r| RdPoint { rate: r.bpp, quality: r.psnr }), tag)
    }

    /// CSV with header `budget,bytes,bpp,psnr,level`; numbers at fixed precision.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::format(format!("csv: {e}"));
        w.write_record(["budget", "bytes", "bpp", "psnr", "level"]).map_err(io)?;
        for r in &self.rows {
            let psnr = if r.psnr.is_finite() { format!("{:.6}", r.psnr) } else { "inf".to_string() };
            w.write_record([
                r.budget.to_string(),
                r.bytes.to_string(),
                format!("{:.6}", r.bpp),
                psnr,
                format!("{:.6}", r.level),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::format(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

/// `n` byte budgets spaced logarithmically from the header size to the full stream.
pub fn log_spaced_budgets(header: usize, total: usize, n: usize) -> Vec<Budget> {
    let lo = (header.max(1)) as f64;
    let hi = total.max(header + 1) as f64;
    (0..n)
        .map(|k| {
            let t = if n == 1 { 1.0 } else { k as f64 / (n - 1) as f64 };
            Budget::Bytes((lo * (hi / lo).powf(t)).round() as usize)
        })
        .collect()
}

/// Encode once, then reconstruct at every budget.
pub fn sweep(asset: &Asset, cfg: &CodecConfig, models: &Models, toggles: Toggles, budgets: &[Budget]) -> Result<Sweep> {
    let crr = if toggles.crr { models.crr.clone() } else { CrrRouter::default() };
    let enc = encode(asset, cfg, &crr)?;
    let c = Container::parse(&enc.bytes)?;
    let stream = decode_stream(&c, &crr, toggles.crr, c.chunks.len())?;
    let pixels = asset.pixels() as f64;
    let rows = budgets
        .iter()
        .map(|&budget| {
            let k = chunks_for_budget(&c, budget);
            let d = reconstruct(&stream, stream.position_of_chunks(k), models, toggles)?;
            let latent_mse = enc.target.mse(&d.latent)?;
            let quality = match (&d.image, asset) {
                (Some(img), Asset::Image(orig)) => psnr(img, orig)?,
                _ => psnr_from_mse(latent_mse),
            };
            Ok(SweepRow {
                budget,
                bytes: d.bytes_used,
                bpp: 8.0 * d.bytes_used as f64 / pixels,
                psnr: quality,
                level: d.level,
                latent_mse,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Sweep { rows, total_bytes: enc.bytes.len(), header_bytes: enc.header_len })
}

/// A method of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Method {
    pub name: &'static str,
    pub toggles: Toggles,
}

/// Baseline, the single and paired toggles, and the full codec. Refit rows only
/// apply to image assets.
pub fn ablation_methods(image_mode: bool) -> Vec<Method> {
    let t = |crr, cdr, refit| Toggles { crr, cdr, refit };
    let mut m = vec![
        Method { name: "baseline", toggles: t(false, false, false) },
        Method { name: "I:crr", toggles: t(true, false, false) },
        Method { name: "II:cdr", toggles: t(false, true, false) },
        Method { name: "III:crr+cdr", toggles: t(true, true, false) },
    ];
    if image_mode {
        m.push(Method { name: "IV:cdr+refit", toggles: t(false, true, true) });
        m.push(Method { name: "ctc", toggles: t(true, true, true) });
    }
    m
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub method: Method,
    /// Mean BD-rate over assets against the baseline, percent.
    pub bd_rate: f64,
    pub per_asset: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_text(&self) -> String {
        let mut s = format!("{:<14} {:>10}\n", "method", "bd_rate%");
        for r in &self.rows {
            s.push_str(&format!("{:<14} {:>10.3}\n", r.method.name, r.bd_rate));
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,bd_rate\n");
        for r in &self.rows {
            s.push_str(&format!("{},{:.6}\n", r.method.name, r.bd_rate));
        }
        s
    }

    pub fn get(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.method.name == name)
    }
}

/// BD-rate of every method against the all-off baseline, averaged over assets.
pub fn ablation(assets: &[Asset], cfg: &CodecConfig, models: &Models, methods: &[Method], n_budgets: usize) -> Result<AblationTable> {
    let mut per_method: Vec<Vec<f64>> = vec![Vec::new(); methods.len()];
    for asset in assets {
        let base_enc = encode(asset, cfg, &CrrRouter::default())?;
        let curves = methods
            .iter()
            .map(|m| {
                let budgets = log_spaced_budgets(base_enc.header_len, base_enc.bytes.len(), n_budgets);
                sweep(asset, cfg, models, m.toggles, &budgets)?.curve(m.name)
            })
            .collect::<Result<Vec<_>>>()?;
        let base = curves
            .iter()
            .zip(methods)
            .find(|(_, m)| m.toggles == Toggles::NONE)
            .map(|(c, _)| c.clone())
            .ok_or_else(|| Error::input("ablation needs the all-off baseline method"))?;
        for (k, c) in curves.iter().enumerate() {
            per_method[k].push(bd_rate(&base, c)?);
        }
    }
    let rows = methods
        .iter()
        .zip(per_method)
        .map(|(&method, v)| AblationRow { method, bd_rate: v.iter().sum::<f64>() / v.len().max(1) as f64, per_asset: v })
        .collect();
    Ok(AblationTable { rows })
}
