//! Seeded synthetic assets: separable AR(1) latents and smooth test images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::image::Image;
use crate::error::{Error, Result};
use crate::latent::GaussianField;
use crate::tensor::{Dims, Latent, Tensor3};

/// Separable AR(1) Gaussian latent with per-channel scales drawn from `sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub dims: Dims,
    pub rho_h: f64,
    pub rho_w: f64,
    /// Per-channel scales are uniform in `[sigma.0, sigma.1]`.
    pub sigma: (f64, f64),
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(dims: Dims, rho: f64, sigma: (f64, f64), seed: u64) -> Self {
        SyntheticSpec { dims, rho_h: rho, rho_w: rho, sigma, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::param("synthetic dims must be non-empty"));
        }
        if !(self.rho_h.abs() < 1.0 && self.rho_w.abs() < 1.0) {
            return Err(Error::param("AR(1) correlation must satisfy |rho| < 1"));
        }
        if !(self.sigma.0 > 0.0 && self.sigma.1 >= self.sigma.0 && self.sigma.1.is_finite()) {
            return Err(Error::param("sigma range must satisfy 0 < lo <= hi"));
        }
        Ok(())
    }

    /// Parse `seed=1,c=4,h=32,w=32,rho=0.9,sigma=10:20`; `rho_h`/`rho_w` override `rho`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = SyntheticSpec::new(Dims::new(4, 32, 32), 0.9, (10.0, 20.0), 1);
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| Error::param(format!("expected key=value in '{part}'")))?;
            let bad = || Error::param(format!("bad value '{v}' for {k}"));
            match k.trim() {
                "seed" => spec.seed = v.parse().map_err(|_| bad())?,
                "c" => spec.dims.channels = v.parse().map_err(|_| bad())?,
                "h" => spec.dims.height = v.parse().map_err(|_| bad())?,
                "w" => spec.dims.width = v.parse().map_err(|_| bad())?,
                "rho" => {
                    spec.rho_h = v.parse().map_err(|_| bad())?;
                    spec.rho_w = spec.rho_h;
                }
                "rho_h" => spec.rho_h = v.parse().map_err(|_| bad())?,
                "rho_w" => spec.rho_w = v.parse().map_err(|_| bad())?,
                "sigma" => {
                    spec.sigma = match v.split_once(':') {
                        Some((a, b)) => (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?),
                        None => {
                            let s = v.parse().map_err(|_| bad())?;
                            (s, s)
                        }
                    }
                }
                _ => return Err(Error::param(format!("unknown synthetic key '{k}'"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Same spec with a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        SyntheticSpec { seed, ..self.clone() }
    }
}

/// Unit-variance separable AR(1) field over an `h x w` grid.
fn ar1_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, rho_h: f64, rho_w: f64) -> Vec<f64> {
    let mut g: Vec<f64> = (0..h * w).map(|_| rng.sample(StandardNormal)).collect();
    let iw = (1.0 - rho_w * rho_w).sqrt();
    for y in 0..h {
        for x in 1..w {
            g[y * w + x] = rho_w * g[y * w + x - 1] + iw * g[y * w + x];
        }
    }
    let ih = (1.0 - rho_h * rho_h).sqrt();
    for y in 1..h {
        for x in 0..w {
            g[y * w + x] = rho_h * g[(y - 1) * w + x] + ih * g[y * w + x];
        }
    }
    g
}

/// Latent and its true per-channel prior (zero mean).
pub fn generate_latents(spec: &SyntheticSpec) -> Result<(Latent, GaussianField)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dims;
    let mut data = Vec::with_capacity(d.len());
    let mut scales = Vec::with_capacity(d.channels);
    for _ in 0..d.channels {
        let s = if spec.sigma.1 > spec.sigma.0 { rng.random_range(spec.sigma.0..=spec.sigma.1) } else { spec.sigma.0 };
        scales.push(s);
        data.extend(ar1_grid(&mut rng, d.height, d.width, spec.rho_h, spec.rho_w).into_iter().map(|v| v * s));
    }
    let field = GaussianField::per_channel(d, vec![0.0; d.channels], scales)?;
    Ok((Tensor3::from_vec(d, data)?, field))
}

/// Smooth 8-bit test image: `128 + contrast * AR(1)` per colour plane, clipped.
pub fn generate_image(seed: u64, width: usize, height: usize, channels: usize, rho: f64, contrast: f64) -> Result<Image> {
    if !(channels == 1 || channels == 3) || width == 0 || height == 0 || rho.abs() >= 1.0 {
        return Err(Error::param("synthetic image needs 1 or 3 channels, non-empty size, |rho| < 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let planes: Vec<Vec<f64>> = (0..channels).map(|_| ar1_grid(&mut rng, height, width, rho, rho)).collect();
    let mut data = Vec::with_capacity(width * height * channels);
    for i in 0..width * height {
        for p in &planes {
            data.push((128.0 + contrast * p[i]).round().clamp(0.0, 255.0) as u8);
        }
    }
    Image::new(width, height, channels, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lag1(v: &[f64], h: usize, w: usize) -> f64 {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        let mut acc = 0.0;
        let mut n = 0;
        for y in 0..h {
            for x in 1..w {
                acc += (v[y * w + x] - mean) * (v[y * w + x - 1] - mean);
                n += 1;
            }
        }
        acc / n as f64 / var
    }

    #[test]
    fn white_noise_has_no_correlation() {
        let spec = SyntheticSpec::new(Dims::new(1, 1000, 1000), 0.0, (1.0, 1.0), 4);
        let (y, _) = generate_latents(&spec).unwrap();
        assert!(lag1(y.as_slice(), 1000, 1000).abs() < 0.01);
    }

    #[test]
    fn correlated_field_hits_target() {
        let spec = SyntheticSpec::new(Dims::new(1, 1000, 1000), 0.9, (3.0, 3.0), 5);
        let (y, f) = generate_latents(&spec).unwrap();
        assert!((lag1(y.as_slice(), 1000, 1000) - 0.9).abs() < 0.02);
        assert_eq!(f.scale(0), 3.0);
        assert_eq!(f.mean(0), 0.0);
    }

    #[test]
    fn seeded_and_parsed() {
        let spec = SyntheticSpec::parse("seed=7,c=2,h=5,w=6,rho=0.5,sigma=2:4").unwrap();
        assert_eq!(spec.dims, Dims::new(2, 5, 6));
        assert_eq!(generate_latents(&spec).unwrap(), generate_latents(&spec).unwrap());
        assert_ne!(generate_latents(&spec).unwrap().0, generate_latents(&spec.with_seed(8)).unwrap().0);
        assert!(SyntheticSpec::parse("rho=1.0").is_err());
        assert!(SyntheticSpec::parse("sigma=0:1").is_err());
        assert!(SyntheticSpec::parse("q=1").is_err());
    }
}
