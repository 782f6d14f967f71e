//! Encode and progressive decode.

use super::config::{CodecConfig, SourceMode};
use super::image::Image;
use super::models::{crr_checksum, Models};
use super::transform::{synthesize_image, LinearTransform, SynthesisWeights};
use crate::cdr::refine_latent;
use crate::coder::container::{self, ChunkEntry, Container, Header, ImageInfo};
use crate::coder::rans::{decode_chunks, encode_plane};
use crate::coder::{quantize_probs, FrequencyTriple};
use crate::crr::{refine_plane, CrrContext, CrrRouter};
use crate::error::{Error, Result};
use crate::latent::{quantize_center, GaussianField};
use crate::tensor::{Latent, QuantLatent, Tensor3};
use crate::tritplane::{
    rd_order, slice, state_at, DecodePosition, OrderingMode, PlaneContext, PrefixState, TritPlane, Triple,
};

/// What to compress.
#[derive(Debug, Clone)]
pub enum Asset {
    /// A latent with its prior.
    Latent { y: Latent, field: GaussianField },
    /// An 8-bit image, coded through the block transform.
    Image(Image),
}

impl Asset {
    /// Number of source pixels used for bits-per-pixel.
    pub fn pixels(&self) -> usize {
        match self {
            Asset::Latent { y, .. } => y.dims().plane(),
            Asset::Image(img) => img.pixels(),
        }
    }
}

/// Decoder-side switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Toggles {
    pub crr: bool,
    pub cdr: bool,
    pub refit: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles { crr: true, cdr: true, refit: true }
    }
}

impl Toggles {
    pub const NONE: Toggles = Toggles { crr: false, cdr: false, refit: false };
}

/// Latent, prior and transform info as the codec sees an asset.
pub struct Prepared {
    pub y: Latent,
    pub field: GaussianField,
    pub image: Option<ImageInfo>,
}

/// Per-channel mean and floored standard deviation of a latent.
pub fn channel_field(y: &Latent, floor: f64) -> Result<GaussianField> {
    let d = y.dims();
    let plane = d.plane();
    let mut means = Vec::with_capacity(d.channels);
    let mut scales = Vec::with_capacity(d.channels);
    for c in 0..d.channels {
        let v = &y.as_slice()[c * plane..(c + 1) * plane];
        let m = v.iter().sum::<f64>() / plane as f64;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / plane as f64;
        means.push(m);
        scales.push(var.sqrt().max(floor));
    }
    GaussianField::per_channel(d, means, scales)
}

pub fn prepare(asset: &Asset, cfg: &CodecConfig) -> Result<Prepared> {
    match (asset, cfg.source) {
        (Asset::Latent { y, field }, SourceMode::Latent) => {
            if y.dims() != field.dims() {
                return Err(Error::DimensionMismatch(format!("latent {} vs field {}", y.dims(), field.dims())));
            }
            Ok(Prepared { y: y.clone(), field: field.rounded_to_f32()?, image: None })
        }
        (Asset::Image(img), SourceMode::Image) => {
            let step = cfg.image_step as f32;
            let t = LinearTransform::dct(cfg.block_size);
            let y = t.image_to_latent(img, step as f64)?;
            let field = channel_field(&y, cfg.scale_floor)?.rounded_to_f32()?;
            Ok(Prepared { y, field, image: Some(ImageInfo { step, block: cfg.block_size as u8 }) })
        }
        _ => Err(Error::input("asset kind does not match the configured source mode")),
    }
}

/// Probabilities the coder uses for one plane, and the serialization order.
pub struct PlaneCoding {
    pub ctx: PlaneContext,
    pub coded: Vec<Triple>,
    pub order: Vec<u32>,
    pub freqs: Vec<FrequencyTriple>,
}

/// Everything before reading plane `level`, computed identically on both sides.
pub fn plane_coding(
    state: &PrefixState,
    field: &GaussianField,
    level: u32,
    crr: &CrrRouter,
    ordering: OrderingMode,
) -> Result<PlaneCoding> {
    let ctx = PlaneContext::compute(state, field, level)?;
    let coded = match crr.model_for(level, state.depth()) {
        Some(model) => refine_plane(&CrrContext { plane: &ctx, state, field }, model),
        None => ctx.probs.clone(),
    };
    let order = rd_order(&ctx, &coded, ordering);
    let freqs = order.iter().map(|&i| quantize_probs(&coded[i as usize])).collect();
    Ok(PlaneCoding { ctx, coded, order, freqs })
}

/// Result of [`encode`].
#[derive(Debug, Clone)]
pub struct Encoded {
    pub bytes: Vec<u8>,
    pub header_len: usize,
    pub depth: u32,
    /// Prior as carried in the header.
    pub field: GaussianField,
    /// Continuous latent before quantization.
    pub target: Latent,
    pub quantized: QuantLatent,
    pub planes: Vec<TritPlane>,
    pub orders: Vec<Vec<u32>>,
    pub plane_bytes: Vec<usize>,
    /// Sum of ideal code lengths under the quantized frequencies, per plane.
    pub plane_ideal_bits: Vec<f64>,
    pub clamped: usize,
    pub image: Option<ImageInfo>,
}

impl Encoded {
    /// Full-precision reconstruction `k + mean`.
    pub fn quantized_latent(&self) -> Latent {
        let v = self.quantized.as_slice().iter().enumerate().map(|(i, &k)| k as f64 + self.field.mean(i)).collect();
        Tensor3::from_vec(self.quantized.dims(), v).expect("dims valid")
    }
}

/// Encode an asset; `crr` shapes the probabilities and is bound via checksum.
pub fn encode(asset: &Asset, cfg: &CodecConfig, crr: &CrrRouter) -> Result<Encoded> {
    cfg.validate()?;
    let prep = prepare(asset, cfg)?;
    encode_prepared(prep, cfg, crr)
}

pub fn encode_prepared(prep: Prepared, cfg: &CodecConfig, crr: &CrrRouter) -> Result<Encoded> {
    let Prepared { y, field, image } = prep;
    let dims = y.dims();
    if dims.channels > u16::MAX as usize || dims.height > u16::MAX as usize || dims.width > u16::MAX as usize {
        return Err(Error::input(format!("dims {dims} exceed the container limit")));
    }
    let q = quantize_center(&y, &field, cfg.max_depth)?;
    let depth = q.depth;
    let planes = slice(&q.values, depth)?;
    let mut state = PrefixState::new(dims, depth);
    let mut chunks = Vec::new();
    let mut orders = Vec::with_capacity(depth as usize);
    let mut plane_bytes = Vec::with_capacity(depth as usize);
    let mut plane_ideal_bits = Vec::with_capacity(depth as usize);
    for level in 1..=depth {
        let pc = plane_coding(&state, &field, level, crr, cfg.ordering)?;
        let plane = &planes[level as usize - 1];
        let serial: Vec<u8> = pc.order.iter().map(|&i| plane.trits[i as usize]).collect();
        plane_ideal_bits.push(serial.iter().zip(&pc.freqs).map(|(&s, f)| f.bits(s)).sum());
        let encoded = encode_plane(level as u8 - 1, &serial, &pc.freqs, cfg.chunk_size as usize);
        plane_bytes.push(encoded.iter().map(|c| c.bytes.len()).sum());
        chunks.extend(encoded);
        for (i, &t) in plane.trits.iter().enumerate() {
            state.push(i, t);
        }
        orders.push(pc.order);
    }
    let mut header = Header::for_field(&field, depth, cfg.chunk_size);
    if cfg.ordering == OrderingMode::Raster {
        header.mode |= container::MODE_RASTER;
    }
    if let Some(info) = image {
        header.mode |= container::MODE_IMAGE;
        header.image = Some(info);
    }
    header.model_checksum = crr_checksum(crr);
    let table = chunks
        .iter()
        .map(|c| ChunkEntry { plane: c.plane, trits: c.trits, bytes: c.bytes.len() as u32, checksum: c.checksum })
        .collect();
    let payload = chunks.into_iter().flat_map(|c| c.bytes).collect();
    let container = Container { header, chunks: table, payload };
    let header_len = container.header_len();
    Ok(Encoded {
        bytes: container.serialize(),
        header_len,
        depth,
        field,
        target: y,
        quantized: q.values,
        planes,
        orders,
        plane_bytes,
        plane_ideal_bits,
        clamped: q.clamped,
        image,
    })
}

/// How much of a stream to use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    /// Total bytes including the header.
    Bytes(usize),
    /// Fractional significance level.
    Level(f64),
    Full,
}

impl std::str::FromStr for Budget {
    type Err = Error;

    /// `full`, `<n>` / `<n>b` bytes, or `l<level>` / `<x>.<y>` levels.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::param(format!("bad budget '{s}'; use full, <bytes>, or l<level>"));
        if s == "full" {
            return Ok(Budget::Full);
        }
        if let Some(l) = s.strip_prefix('l').or_else(|| s.strip_prefix("level=")) {
            let v: f64 = l.parse().map_err(|_| bad())?;
            return if v.is_finite() && v >= 0.0 { Ok(Budget::Level(v)) } else { Err(bad()) };
        }
        let digits = s.strip_suffix('b').unwrap_or(s);
        if let Ok(n) = digits.parse::<usize>() {
            return Ok(Budget::Bytes(n));
        }
        let v: f64 = s.parse().map_err(|_| bad())?;
        if v.is_finite() && v >= 0.0 {
            Ok(Budget::Level(v))
        } else {
            Err(bad())
        }
    }
}

impl std::fmt::Display for Budget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Budget::Bytes(n) => write!(f, "{n}"),
            Budget::Level(l) => write!(f, "l{l}"),
            Budget::Full => write!(f, "full"),
        }
    }
}

/// Decode position reached after the first `k` chunks of the table.
pub fn position_after(c: &Container, k: usize) -> DecodePosition {
    let n = c.header.dims.len();
    c.chunks[..k].iter().fold(DecodePosition::default(), |p, e| advance(p, e.trits as usize, n))
}

fn advance(mut pos: DecodePosition, trits: usize, plane_len: usize) -> DecodePosition {
    pos.trits += trits;
    if pos.trits == plane_len {
        pos.planes += 1;
        pos.trits = 0;
    }
    pos
}

/// Chunks usable under `budget`, limited to those present in the payload.
pub fn chunks_for_budget(c: &Container, budget: Budget) -> usize {
    let present = c.complete_chunks();
    let k = match budget {
        Budget::Full => c.chunks.len(),
        Budget::Bytes(b) => c.chunks_within(b.saturating_sub(c.header_len())),
        Budget::Level(l) => {
            let n = c.header.dims.len();
            let target = DecodePosition::from_level(l, n, c.header.depth);
            let mut k = 0;
            let mut pos = DecodePosition::default();
            while k < c.chunks.len() {
                pos = advance(pos, c.chunks[k].trits as usize, n);
                if pos > target {
                    break;
                }
                k += 1;
            }
            k
        }
    };
    k.min(present)
}

/// Planes and orders recovered from a stream, up to some position.
#[derive(Debug, Clone)]
pub struct DecodedStream {
    pub header: Header,
    pub field: GaussianField,
    pub depth: u32,
    /// Full-size planes; entries past `reached` are zero.
    pub planes: Vec<TritPlane>,
    pub orders: Vec<Vec<u32>>,
    pub reached: DecodePosition,
    pub chunks: usize,
    /// Header plus the bytes of the decoded chunks.
    pub bytes_used: usize,
    pub header_len: usize,
    /// Position and cumulative payload bytes after each decoded chunk.
    pub chunk_ends: Vec<(DecodePosition, usize)>,
}

impl DecodedStream {
    /// Header plus payload bytes of the chunks wholly inside `pos`.
    pub fn bytes_for(&self, pos: DecodePosition) -> usize {
        let k = self.chunk_ends.partition_point(|&(p, _)| p <= pos);
        self.header_len + if k == 0 { 0 } else { self.chunk_ends[k - 1].1 }
    }

    /// Position after the first `k` decoded chunks.
    pub fn position_of_chunks(&self, k: usize) -> DecodePosition {
        if k == 0 {
            DecodePosition::default()
        } else {
            self.chunk_ends[k.min(self.chunk_ends.len()) - 1].0
        }
    }

    pub fn state_at(&self, pos: DecodePosition) -> Result<PrefixState> {
        if pos > self.reached {
            return Err(Error::input(format!("position {pos:?} beyond decoded {:?}", self.reached)));
        }
        state_at(&self.planes, &self.orders, pos, self.depth)
    }
}

/// Router actually used for a stream: the CRR models must match the checksum.
pub fn crr_for_stream<'a>(header: &Header, crr: &'a CrrRouter, enabled: bool) -> Result<Option<&'a CrrRouter>> {
    if header.model_checksum == 0 {
        return Ok(None);
    }
    if !enabled {
        return Err(Error::ModelMismatch("stream was coded with CRR models; decoding requires them".into()));
    }
    let have = crr_checksum(crr);
    if have != header.model_checksum {
        return Err(Error::ModelMismatch(format!(
            "stream needs CRR models {:016x}, loaded {:016x}",
            header.model_checksum, have
        )));
    }
    Ok(Some(crr))
}

/// Entropy-decode the first `max_chunks` chunks.
pub fn decode_stream(c: &Container, crr: &CrrRouter, crr_enabled: bool, max_chunks: usize) -> Result<DecodedStream> {
    let h = &c.header;
    let field = h.field()?;
    let empty = CrrRouter::default();
    let router = crr_for_stream(h, crr, crr_enabled)?.unwrap_or(&empty);
    let ordering = if h.raster() { OrderingMode::Raster } else { OrderingMode::RdPriority };
    let dims = h.dims;
    let n = dims.len();
    let depth = h.depth;
    let max_chunks = max_chunks.min(c.complete_chunks());
    let offsets = c.offsets();
    let mut planes: Vec<TritPlane> =
        (1..=depth).map(|level| TritPlane { level, dims, trits: vec![0; n] }).collect();
    let mut orders = Vec::new();
    let mut state = PrefixState::new(dims, depth);
    let mut reached = DecodePosition::default();
    let mut next = 0usize;
    for level in 1..=depth {
        if next >= max_chunks {
            break;
        }
        let pc = plane_coding(&state, &field, level, router, ordering)?;
        let first = next;
        let mut count = 0;
        while next < c.chunks.len() && c.chunks[next].plane as u32 == level - 1 {
            next += 1;
        }
        let end = next.min(max_chunks);
        let views: Vec<(&[u8], u32, u16)> = (first..end)
            .map(|k| {
                let e = &c.chunks[k];
                (&c.payload[offsets[k]..offsets[k] + e.bytes as usize], e.trits, e.checksum)
            })
            .collect();
        let trits = decode_chunks(&views, &pc.freqs, first)?;
        let plane = &mut planes[level as usize - 1];
        for (&i, &t) in pc.order.iter().zip(&trits) {
            plane.trits[i as usize] = t;
            state.push(i as usize, t);
            count += 1;
        }
        orders.push(pc.order);
        reached = if count == n { DecodePosition::new(level, 0) } else { DecodePosition::new(level - 1, count) };
        if end < next {
            next = end;
            break;
        }
    }
    let mut chunk_ends = Vec::with_capacity(next);
    let mut acc = 0;
    let mut pos = DecodePosition::default();
    for e in &c.chunks[..next] {
        acc += e.bytes as usize;
        pos = advance(pos, e.trits as usize, n);
        chunk_ends.push((pos, acc));
    }
    let header_len = c.header_len();
    Ok(DecodedStream {
        header: h.clone(),
        field,
        depth,
        planes,
        orders,
        reached,
        chunks: next,
        bytes_used: header_len + acc,
        header_len,
        chunk_ends,
    })
}

/// A reconstruction at some decode position.
#[derive(Debug, Clone)]
pub struct Decoded {
    pub position: DecodePosition,
    pub level: f64,
    pub bytes_used: usize,
    /// Conditional-mean latent before CDR.
    pub latent_plain: Latent,
    /// Latent after CDR (equal to `latent_plain` when CDR is off or idle).
    pub latent: Latent,
    pub image: Option<Image>,
}

/// Reconstruct at `pos` from an already decoded stream.
pub fn reconstruct(stream: &DecodedStream, pos: DecodePosition, models: &Models, toggles: Toggles) -> Result<Decoded> {
    let state = stream.state_at(pos)?;
    let plain = state.reconstruct(&stream.field);
    let level = pos.level(stream.header.dims.len());
    let latent = if toggles.cdr {
        refine_latent(&plain, &state, &stream.field, level, &models.cdr)
    } else {
        plain.clone()
    };
    let image = match stream.header.image {
        None => None,
        Some(info) => {
            let block = info.block as usize;
            let synth = match (&models.synthesis, toggles.refit) {
                (Some(s), true) if s.block == block => s.matrix.clone(),
                _ => SynthesisWeights::identity_dct(block).matrix,
            };
            Some(synthesize_image(&latent, &synth, block, info.step as f64)?)
        }
    };
    let bytes_used = stream.bytes_for(pos);
    Ok(Decoded { position: pos, level, bytes_used, latent_plain: plain, latent, image })
}

/// Parse, decode within `budget` and reconstruct.
pub fn decode_at(bytes: &[u8], budget: Budget, models: &Models, toggles: Toggles) -> Result<Decoded> {
    let c = Container::parse(bytes)?;
    let k = chunks_for_budget(&c, budget);
    let stream = decode_stream(&c, &models.crr, toggles.crr, k)?;
    reconstruct(&stream, stream.reached, models, toggles)
}
