//! Block DCT standing in for the analysis/synthesis networks, and the
//! closed-form weighted refit of the synthesis matrix.

use nalgebra::{DMatrix, DVector};

use super::image::Image;
use crate::coder::container::MODEL_CRC;
use crate::error::{Error, Result};
use crate::tensor::{Dims, Latent, Tensor3};

/// Orthonormal 2-D DCT-II on `B x B` blocks, as a `B^2 x B^2` matrix acting on
/// row-major block vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTransform {
    pub block: usize,
    pub analysis: DMatrix<f64>,
}

impl LinearTransform {
    pub fn dct(block: usize) -> Self {
        let b = block;
        let d = DMatrix::from_fn(b, b, |k, n| {
            let a = if k == 0 { (1.0 / b as f64).sqrt() } else { (2.0 / b as f64).sqrt() };
            a * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / (2 * b) as f64).cos()
        });
        LinearTransform { block, analysis: d.kronecker(&d) }
    }

    pub fn synthesis(&self) -> DMatrix<f64> {
        self.analysis.transpose()
    }

    /// Latent dims for an image: `channels * B^2` coefficient channels over the block grid.
    pub fn latent_dims(&self, width: usize, height: usize, channels: usize) -> Result<Dims> {
        let b = self.block;
        if width % b != 0 || height % b != 0 {
            return Err(Error::input(format!("image {width}x{height} is not a multiple of the {b}-pixel block")));
        }
        Ok(Dims::new(channels * b * b, height / b, width / b))
    }

    /// Coefficients divided by `step`; channel `plane * B^2 + k` holds coefficient `k`.
    pub fn image_to_latent(&self, img: &Image, step: f64) -> Result<Latent> {
        let dims = self.latent_dims(img.width, img.height, img.channels)?;
        let b = self.block;
        let bb = b * b;
        let mut data = vec![0.0; dims.len()];
        let mut v = DVector::zeros(bb);
        for p in 0..img.channels {
            for by in 0..dims.height {
                for bx in 0..dims.width {
                    for y in 0..b {
                        for x in 0..b {
                            v[y * b + x] = img.sample(bx * b + x, by * b + y, p) as f64;
                        }
                    }
                    let c = &self.analysis * &v;
                    for k in 0..bb {
                        data[dims.index(p * bb + k, by, bx)] = c[k] / step;
                    }
                }
            }
        }
        Tensor3::from_vec(dims, data)
    }
}

/// Real-valued interleaved samples from a latent through `synthesis`.
pub fn synthesize(latent: &Latent, synthesis: &DMatrix<f64>, block: usize, step: f64) -> Result<(usize, usize, usize, Vec<f64>)> {
    let dims = latent.dims();
    let bb = block * block;
    if synthesis.nrows() != bb || synthesis.ncols() != bb || dims.channels % bb != 0 {
        return Err(Error::DimensionMismatch(format!("synthesis {}x{} for latent {dims}", synthesis.nrows(), synthesis.ncols())));
    }
    let planes = dims.channels / bb;
    let (w, h) = (dims.width * block, dims.height * block);
    let mut out = vec![0.0; w * h * planes];
    let mut v = DVector::zeros(bb);
    for p in 0..planes {
        for by in 0..dims.height {
            for bx in 0..dims.width {
                for k in 0..bb {
                    v[k] = latent.as_slice()[dims.index(p * bb + k, by, bx)] * step;
                }
                let px = synthesis * &v;
                for y in 0..block {
                    for x in 0..block {
                        out[((by * block + y) * w + bx * block + x) * planes + p] = px[y * block + x];
                    }
                }
            }
        }
    }
    Ok((w, h, planes, out))
}

pub fn synthesize_image(latent: &Latent, synthesis: &DMatrix<f64>, block: usize, step: f64) -> Result<Image> {
    let (w, h, p, s) = synthesize(latent, synthesis, block, step)?;
    Image::from_f64(w, h, p, &s)
}

/// A refit synthesis matrix with the level weights it was fitted under.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisWeights {
    pub block: usize,
    pub matrix: DMatrix<f64>,
    /// Weights for levels `L, L-1, ...` used in the fit.
    pub level_weights: Vec<f64>,
}

const SYNTH_MAGIC: [u8; 4] = *b"CTCS";
const SYNTH_VERSION: u8 = 1;

/// Weights for levels `L, L-1, L-2, L-3, L-4`.
pub const DEFAULT_LEVEL_WEIGHTS: [f64; 5] = [100.0, 100.0, 1.0, 1.0, 1.0];

/// Default Tikhonov term added to the normal matrix.
pub const DEFAULT_RIDGE: f64 = 1e-6;

impl SynthesisWeights {
    pub fn identity_dct(block: usize) -> Self {
        SynthesisWeights {
            block,
            matrix: LinearTransform::dct(block).synthesis(),
            level_weights: DEFAULT_LEVEL_WEIGHTS.to_vec(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&SYNTH_MAGIC);
        out.push(SYNTH_VERSION);
        out.push(self.block as u8);
        out.push(self.level_weights.len() as u8);
        for w in &self.level_weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        // row-major
        for r in 0..self.matrix.nrows() {
            for c in 0..self.matrix.ncols() {
                out.extend_from_slice(&self.matrix[(r, c)].to_le_bytes());
            }
        }
        let crc = MODEL_CRC.checksum(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::format(format!("synthesis file: {m}"));
        if bytes.len() < 15 || bytes[..4] != SYNTH_MAGIC {
            return Err(bad("bad magic"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        if MODEL_CRC.checksum(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
            return Err(bad("checksum mismatch"));
        }
        if body[4] != SYNTH_VERSION {
            return Err(bad("unsupported version"));
        }
        let block = body[5] as usize;
        let nw = body[6] as usize;
        let bb = block * block;
        if block == 0 || body.len() != 7 + 8 * (nw + bb * bb) {
            return Err(bad("size does not match block"));
        }
        let f = |o: usize| f64::from_le_bytes(body[o..o + 8].try_into().unwrap());
        let level_weights = (0..nw).map(|k| f(7 + 8 * k)).collect();
        let base = 7 + 8 * nw;
        let matrix = DMatrix::from_fn(bb, bb, |r, c| f(base + 8 * (r * bb + c)));
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite entry"));
        }
        Ok(SynthesisWeights { block, matrix, level_weights })
    }
}

/// One term of the refit objective: `weight * ||synth(latent) - target||^2`.
pub struct RefitSample<'a> {
    pub latent: &'a Latent,
    /// Interleaved target samples, same layout as [`synthesize`] output.
    pub target: &'a [f64],
    pub step: f64,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct RefitReport {
    pub ridge: f64,
    /// The normal matrix needed more than the requested ridge.
    pub ridge_fallback: bool,
    pub blocks: usize,
}

/// Weighted least-squares synthesis matrix `S = (sum w X V^T)(sum w V V^T + ridge I)^-1`.
pub fn retrain_decoder(samples: &[RefitSample<'_>], block: usize, ridge: f64, level_weights: &[f64]) -> Result<(SynthesisWeights, RefitReport)> {
    let bb = block * block;
    let mut gram = DMatrix::<f64>::zeros(bb, bb);
    let mut cross = DMatrix::<f64>::zeros(bb, bb);
    let mut blocks = 0;
    for s in samples {
        let dims = s.latent.dims();
        if dims.channels % bb != 0 {
            return Err(Error::DimensionMismatch(format!("latent {dims} for block {block}")));
        }
        let planes = dims.channels / bb;
        let w = dims.width * block;
        if s.target.len() != w * dims.height * block * planes {
            return Err(Error::DimensionMismatch("refit target size".into()));
        }
        let mut v = DVector::zeros(bb);
        let mut x = DVector::zeros(bb);
        for p in 0..planes {
            for by in 0..dims.height {
                for bx in 0..dims.width {
                    for k in 0..bb {
                        v[k] = s.latent.as_slice()[dims.index(p * bb + k, by, bx)] * s.step;
                    }
                    for yy in 0..block {
                        for xx in 0..block {
                            x[yy * block + xx] = s.target[((by * block + yy) * w + bx * block + xx) * planes + p];
                        }
                    }
                    gram.ger(s.weight, &v, &v, 1.0);
                    cross.ger(s.weight, &x, &v, 1.0);
                    blocks += 1;
                }
            }
        }
    }
    if blocks == 0 {
        return Err(Error::input("refit dataset is empty"));
    }
    let mut r = ridge.max(0.0);
    let mut fallback = false;
    let chol = loop {
        let mut a = gram.clone();
        for i in 0..bb {
            a[(i, i)] += r;
        }
        if let Some(c) = a.cholesky() {
            break c;
        }
        fallback = true;
        r = if r == 0.0 { 1e-9 } else { r * 10.0 };
        if r > 1e6 {
            return Err(Error::Training("normal matrix is not positive definite".into()));
        }
    };
    if fallback {
        log::warn!("synthesis refit needed ridge {r:e}");
    }
    // S^T = (G + rI)^-1 C^T
    let matrix = chol.solve(&cross.transpose()).transpose();
    Ok((
        SynthesisWeights { block, matrix, level_weights: level_weights.to_vec() },
        RefitReport { ridge: r, ridge_fallback: fallback, blocks },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dct_is_orthonormal() {
        for b in [2, 4, 8] {
            let t = LinearTransform::dct(b);
            let id = &t.analysis * t.synthesis();
            assert!((id - DMatrix::identity(b * b, b * b)).amax() < 1e-10);
        }
    }

    #[test]
    fn image_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = Image::new(16, 8, 3, (0..16 * 8 * 3).map(|_| rng.random()).collect()).unwrap();
        let t = LinearTransform::dct(4);
        let lat = t.image_to_latent(&img, 1.7).unwrap();
        assert_eq!(lat.dims(), Dims::new(48, 2, 4));
        assert_eq!(synthesize_image(&lat, &t.synthesis(), 4, 1.7).unwrap(), img);
        assert!(t.latent_dims(10, 8, 1).is_err());
    }

    #[test]
    fn weights_file_round_trip() {
        let mut w = SynthesisWeights::identity_dct(2);
        w.matrix[(1, 2)] = 0.25;
        let bytes = w.to_bytes();
        assert_eq!(SynthesisWeights::from_bytes(&bytes).unwrap(), w);
        let mut bad = bytes.clone();
        bad[20] ^= 4;
        assert!(SynthesisWeights::from_bytes(&bad).is_err());
    }

    fn random_latent(rng: &mut ChaCha8Rng, dims: Dims) -> Latent {
        Tensor3::from_vec(dims, (0..dims.len()).map(|_| rng.random_range(-30.0..30.0)).collect()).unwrap()
    }

    #[test]
    fn noiseless_refit_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = LinearTransform::dct(4);
        let lats: Vec<Latent> = (0..3).map(|_| random_latent(&mut rng, Dims::new(16, 6, 6))).collect();
        let targets: Vec<Vec<f64>> = lats.iter().map(|l| synthesize(l, &t.synthesis(), 4, 2.0).unwrap().3).collect();
        let samples: Vec<RefitSample> = lats
            .iter()
            .zip(&targets)
            .zip([100.0, 1.0, 1.0])
            .map(|((l, x), w)| RefitSample { latent: l, target: x, step: 2.0, weight: w })
            .collect();
        let (sw, rep) = retrain_decoder(&samples, 4, DEFAULT_RIDGE, &DEFAULT_LEVEL_WEIGHTS).unwrap();
        assert!(!rep.ridge_fallback);
        assert!((sw.matrix - t.synthesis()).amax() < 1e-6);
    }

    #[test]
    fn single_level_matches_pseudo_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = 2;
        let lat = random_latent(&mut rng, Dims::new(4, 5, 7));
        let target: Vec<f64> = (0..10 * 14).map(|_| rng.random_range(0.0..255.0)).collect();
        let (sw, _) =
            retrain_decoder(&[RefitSample { latent: &lat, target: &target, step: 1.0, weight: 1.0 }], b, 0.0, &[1.0])
                .unwrap();
        // stack block vectors as columns and solve with an SVD pseudo-inverse
        let n = 35;
        let mut v = DMatrix::zeros(4, n);
        let mut x = DMatrix::zeros(4, n);
        for by in 0..5 {
            for bx in 0..7 {
                let col = by * 7 + bx;
                for k in 0..4 {
                    v[(k, col)] = *lat.get(k, by, bx);
                    x[(k, col)] = target[(by * 2 + k / 2) * 14 + bx * 2 + k % 2];
                }
            }
        }
        let oracle = &x * v.clone().pseudo_inverse(1e-12).unwrap();
        let resid = |s: &DMatrix<f64>| (&x - s * &v).norm();
        assert!((resid(&sw.matrix) - resid(&oracle)).abs() < 1e-8);
        assert!((sw.matrix - oracle).amax() < 1e-8);
    }
}
