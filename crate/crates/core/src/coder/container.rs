//! Bitstream container: header, chunk table and payload.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CTC1" | version u8 | mode u8 | C u16 | H u16 | W u16 | L u8 | chunk_size u32
//! | params (mean f32, scale f32) per channel, or per element when mode & 0x01
//! | image step f32, block size u8 when mode & 0x02
//! | model checksum u64 | chunk count u32
//! | per chunk: plane u8, trits u32, bytes u32, checksum u16
//! | header crc32
//! | payload
//! ```
//!
//! A stream cut anywhere inside the payload still parses; only chunks that are
//! fully present are decodable.

use crc::{Crc, CRC_32_ISO_HDLC, CRC_64_XZ};

use crate::error::{Error, Result};
use crate::latent::{GaussianField, ParamMode};
use crate::tensor::Dims;

pub const MAGIC: [u8; 4] = *b"CTC1";
pub const VERSION: u8 = 1;

pub const MODE_PER_ELEMENT: u8 = 0x01;
pub const MODE_IMAGE: u8 = 0x02;
pub const MODE_RASTER: u8 = 0x04;
const MODE_KNOWN: u8 = MODE_PER_ELEMENT | MODE_IMAGE | MODE_RASTER;

const CHUNK_ENTRY_BYTES: usize = 11;
const HEADER_CRC: Crc<u32> = Crc::<u32>::new(&CRC_32_ISO_HDLC);
pub const MODEL_CRC: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub mode: u8,
    pub dims: Dims,
    pub depth: u32,
    pub chunk_size: u32,
    /// `(mean, scale)` per channel or per element.
    pub params: Vec<(f32, f32)>,
    pub image: Option<ImageInfo>,
    pub model_checksum: u64,
}

/// Transform parameters of an image-mode stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageInfo {
    pub step: f32,
    pub block: u8,
}

impl Header {
    pub fn per_element(&self) -> bool {
        self.mode & MODE_PER_ELEMENT != 0
    }

    pub fn raster(&self) -> bool {
        self.mode & MODE_RASTER != 0
    }

    pub fn field(&self) -> Result<GaussianField> {
        let means = self.params.iter().map(|p| p.0 as f64).collect();
        let scales = self.params.iter().map(|p| p.1 as f64).collect();
        if self.per_element() {
            GaussianField::per_element(self.dims, means, scales)
        } else {
            GaussianField::per_channel(self.dims, means, scales)
        }
    }

    /// Header for a field; parameters are stored as `f32`.
    pub fn for_field(field: &GaussianField, depth: u32, chunk_size: u32) -> Self {
        let mode = match field.mode() {
            ParamMode::PerElement => MODE_PER_ELEMENT,
            ParamMode::PerChannel => 0,
        };
        Header {
            mode,
            dims: field.dims(),
            depth,
            chunk_size,
            params: field.params().map(|(m, s)| (m as f32, s as f32)).collect(),
            image: None,
            model_checksum: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkEntry {
    pub plane: u8,
    pub trits: u32,
    pub bytes: u32,
    pub checksum: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: Header,
    pub chunks: Vec<ChunkEntry>,
    /// Possibly shorter than the chunk table promises.
    pub payload: Vec<u8>,
}

impl Container {
    /// Size of everything before the payload.
    pub fn header_len(&self) -> usize {
        header_len(&self.header, self.chunks.len())
    }

    pub fn full_payload_len(&self) -> usize {
        self.chunks.iter().map(|c| c.bytes as usize).sum()
    }

    /// Number of leading chunks whose bytes all fit in `payload_bytes`.
    pub fn chunks_within(&self, payload_bytes: usize) -> usize {
        let mut end = 0usize;
        for (k, c) in self.chunks.iter().enumerate() {
            end += c.bytes as usize;
            if end > payload_bytes {
                return k;
            }
        }
        self.chunks.len()
    }

    pub fn complete_chunks(&self) -> usize {
        self.chunks_within(self.payload.len())
    }

    /// Byte offset of each chunk in the payload.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.chunks
            .iter()
            .map(|c| {
                let o = acc;
                acc += c.bytes as usize;
                o
            })
            .collect()
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.header_len() + self.payload.len());
        let h = &self.header;
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(h.mode);
        out.extend_from_slice(&(h.dims.channels as u16).to_le_bytes());
        out.extend_from_slice(&(h.dims.height as u16).to_le_bytes());
        out.extend_from_slice(&(h.dims.width as u16).to_le_bytes());
        out.push(h.depth as u8);
        out.extend_from_slice(&h.chunk_size.to_le_bytes());
        for &(m, s) in &h.params {
            out.extend_from_slice(&m.to_le_bytes());
            out.extend_from_slice(&s.to_le_bytes());
        }
        if let Some(info) = h.image {
            out.extend_from_slice(&info.step.to_le_bytes());
            out.push(info.block);
        }
        out.extend_from_slice(&h.model_checksum.to_le_bytes());
        out.extend_from_slice(&(self.chunks.len() as u32).to_le_bytes());
        for c in &self.chunks {
            out.push(c.plane);
            out.extend_from_slice(&c.trits.to_le_bytes());
            out.extend_from_slice(&c.bytes.to_le_bytes());
            out.extend_from_slice(&c.checksum.to_le_bytes());
        }
        let crc = HEADER_CRC.checksum(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parse a possibly truncated stream. The header and chunk table must be complete.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format("bad magic"));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported version {version}")));
        }
        let mode = r.u8()?;
        if mode & !MODE_KNOWN != 0 {
            return Err(Error::format(format!("unknown mode bits {mode:#04x}")));
        }
        let dims = Dims::new(r.u16()? as usize, r.u16()? as usize, r.u16()? as usize);
        if dims.is_empty() {
            return Err(Error::format(format!("empty dims {dims}")));
        }
        let depth = r.u8()? as u32;
        if depth == 0 || depth > crate::latent::MAX_SUPPORTED_DEPTH {
            return Err(Error::format(format!("depth {depth} out of range")));
        }
        let chunk_size = r.u32()?;
        if chunk_size == 0 {
            return Err(Error::format("zero chunk size"));
        }
        let n_params = if mode & MODE_PER_ELEMENT != 0 { dims.len() } else { dims.channels };
        if n_params.saturating_mul(8) > r.remaining() {
            return Err(Error::format("parameter block exceeds stream"));
        }
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let m = r.f32()?;
            let s = r.f32()?;
            if !m.is_finite() || !(s.is_finite() && s > 0.0) {
                return Err(Error::format("invalid entropy parameter"));
            }
            params.push((m, s));
        }
        let image = if mode & MODE_IMAGE != 0 {
            let step = r.f32()?;
            let block = r.u8()?;
            if !(step.is_finite() && step > 0.0) || block == 0 || dims.channels % (block as usize * block as usize) != 0 {
                return Err(Error::format("invalid image transform parameters"));
            }
            Some(ImageInfo { step, block })
        } else {
            None
        };
        let model_checksum = r.u64()?;
        let count = r.u32()? as usize;
        if count.saturating_mul(CHUNK_ENTRY_BYTES) > r.remaining() {
            return Err(Error::format("chunk table exceeds stream"));
        }
        let mut chunks = Vec::with_capacity(count);
        for _ in 0..count {
            chunks.push(ChunkEntry { plane: r.u8()?, trits: r.u32()?, bytes: r.u32()?, checksum: r.u16()? });
        }
        let covered = r.pos;
        let crc = r.u32()?;
        if crc != HEADER_CRC.checksum(&bytes[..covered]) {
            return Err(Error::format("header checksum mismatch"));
        }
        let header = Header { mode, dims, depth, chunk_size, params, image, model_checksum };
        validate_table(&header, &chunks)?;
        let full: usize = chunks.iter().map(|c| c.bytes as usize).sum();
        let payload = &bytes[r.pos..];
        if payload.len() > full {
            return Err(Error::format("trailing bytes after payload"));
        }
        Ok(Container { header, chunks, payload: payload.to_vec() })
    }
}

/// Chunks must cover every plane in order, each plane exactly once.
fn validate_table(h: &Header, chunks: &[ChunkEntry]) -> Result<()> {
    let n = h.dims.len() as u64;
    let mut plane = 0u32;
    let mut filled = 0u64;
    for c in chunks {
        if c.trits == 0 || c.trits > h.chunk_size || (c.bytes as usize) < super::rans::FLUSH_BYTES {
            return Err(Error::format("malformed chunk entry"));
        }
        if filled == n {
            plane += 1;
            filled = 0;
        }
        if c.plane as u32 != plane || plane >= h.depth {
            return Err(Error::format(format!("chunk for plane {} out of order", c.plane)));
        }
        filled += c.trits as u64;
        if filled > n {
            return Err(Error::format("plane holds more trits than elements"));
        }
    }
    let complete = plane + 1 == h.depth && filled == n;
    if !complete {
        return Err(Error::format("chunk table does not cover every plane"));
    }
    Ok(())
}

pub fn header_len(h: &Header, chunks: usize) -> usize {
    4 + 1 + 1 + 6 + 1 + 4 + 8 * h.params.len() + if h.image.is_some() { 5 } else { 0 } + 8 + 4
        + CHUNK_ENTRY_BYTES * chunks
        + 4
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format("stream ends inside the header"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
