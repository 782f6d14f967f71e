//! Byte-oriented rANS over ternary alphabets with 12-bit frequencies.

use crc::{Crc, CRC_16_IBM_SDLC};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tritplane::Triple;

/// Frequency precision in bits.
pub const PROB_BITS: u32 = 12;
/// Frequencies of a triple sum to this.
pub const PROB_SCALE: u32 = 1 << PROB_BITS;
/// Lower bound of the normalized coder state.
const STATE_LOW: u32 = 1 << 23;
/// Bytes of the final state written at the end of every chunk.
pub const FLUSH_BYTES: usize = 4;

const TRIT_CRC: Crc<u16> = Crc::<u16>::new(&CRC_16_IBM_SDLC);

/// Integer frequencies of the three outcomes, each at least 1, summing to 4096.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrequencyTriple(pub [u16; 3]);

impl FrequencyTriple {
    pub const UNIFORM: FrequencyTriple = FrequencyTriple([1366, 1365, 1365]);

    #[inline]
    pub fn freq(&self, s: u8) -> u32 {
        self.0[s as usize] as u32
    }

    #[inline]
    pub fn start(&self, s: u8) -> u32 {
        self.0[..s as usize].iter().map(|&f| f as u32).sum()
    }

    /// Ideal code length of `s`, in bits.
    pub fn bits(&self, s: u8) -> f64 {
        (PROB_SCALE as f64 / self.freq(s) as f64).log2()
    }

    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|&f| f >= 1) && self.0.iter().map(|&f| f as u32).sum::<u32>() == PROB_SCALE
    }
}

/// Largest-remainder rounding of `p` to 4096ths, ties to the lower index, then a
/// floor of 1 per outcome paid for by the largest entry.
pub fn quantize_probs(p: &Triple) -> FrequencyTriple {
    let clean: Triple = std::array::from_fn(|i| if p[i].is_finite() && p[i] > 0.0 { p[i] } else { 0.0 });
    let total: f64 = clean.iter().sum();
    if !(total > 0.0) {
        return FrequencyTriple::UNIFORM;
    }
    let raw: [f64; 3] = std::array::from_fn(|i| clean[i] / total * PROB_SCALE as f64);
    let mut f: [i64; 3] = std::array::from_fn(|i| raw[i].floor() as i64);
    let mut deficit = PROB_SCALE as i64 - f.iter().sum::<i64>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let mut k = 0;
    while deficit > 0 {
        f[order[k % 3]] += 1;
        deficit -= 1;
        k += 1;
    }
    for v in f.iter_mut() {
        *v = (*v).max(1);
    }
    let mut excess = f.iter().sum::<i64>() - PROB_SCALE as i64;
    while excess > 0 {
        let big = (0..3).fold(0, |b, i| if f[i] > f[b] { i } else { b });
        f[big] -= 1;
        excess -= 1;
    }
    FrequencyTriple(std::array::from_fn(|i| f[i] as u16))
}

/// CRC-16 of a trit sequence.
pub fn trit_checksum(trits: &[u8]) -> u16 {
    TRIT_CRC.checksum(trits)
}

/// Encode one chunk; the returned bytes are decodable on their own.
pub fn encode_chunk(trits: &[u8], freqs: &[FrequencyTriple]) -> Vec<u8> {
    debug_assert_eq!(trits.len(), freqs.len());
    let mut out = Vec::with_capacity(trits.len() / 4 + FLUSH_BYTES);
    let mut x = STATE_LOW;
    for (&s, f) in trits.iter().zip(freqs).rev() {
        let freq = f.freq(s);
        let x_max = ((STATE_LOW >> PROB_BITS) << 8) * freq;
        while x >= x_max {
            out.push(x as u8);
            x >>= 8;
        }
        x = ((x / freq) << PROB_BITS) + (x % freq) + f.start(s);
    }
    out.extend_from_slice(&x.to_le_bytes());
    out.reverse();
    out
}

/// Decode `freqs.len()` trits from a chunk.
///
/// Fails unless the chunk is consumed exactly and the coder returns to its
/// initial state, which catches almost every corruption.
pub fn decode_chunk(bytes: &[u8], freqs: &[FrequencyTriple]) -> std::result::Result<Vec<u8>, String> {
    if bytes.len() < FLUSH_BYTES {
        return Err(format!("chunk of {} bytes is shorter than the state flush", bytes.len()));
    }
    let mut x = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let mut pos = FLUSH_BYTES;
    let mut trits = Vec::with_capacity(freqs.len());
    for f in freqs {
        if x < STATE_LOW {
            return Err("coder state fell below its normalization bound".into());
        }
        let slot = x & (PROB_SCALE - 1);
        let (a, b) = (f.0[0] as u32, f.0[0] as u32 + f.0[1] as u32);
        let s = if slot < a { 0 } else if slot < b { 1 } else { 2 };
        x = f.freq(s) * (x >> PROB_BITS) + slot - f.start(s);
        while x < STATE_LOW {
            let Some(&byte) = bytes.get(pos) else {
                return Err("chunk ended before its last trit".into());
            };
            x = (x << 8) | byte as u32;
            pos += 1;
        }
        trits.push(s);
    }
    if x != STATE_LOW || pos != bytes.len() {
        return Err("coder did not return to its initial state".into());
    }
    Ok(trits)
}

/// An encoded chunk and its table entry fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedChunk {
    pub plane: u8,
    pub trits: u32,
    pub checksum: u16,
    pub bytes: Vec<u8>,
}

/// Split one plane's serialized trits into chunks of `chunk_size` and encode them.
pub fn encode_plane(plane: u8, trits: &[u8], freqs: &[FrequencyTriple], chunk_size: usize) -> Vec<EncodedChunk> {
    assert!(chunk_size > 0, "chunk size must be positive");
    trits
        .par_chunks(chunk_size)
        .zip(freqs.par_chunks(chunk_size))
        .map(|(t, f)| EncodedChunk {
            plane,
            trits: t.len() as u32,
            checksum: trit_checksum(t),
            bytes: encode_chunk(t, f),
        })
        .collect()
}

/// Encode a flat symbol sequence (no plane structure) into chunks tagged plane 0.
pub fn encode_symbols(trits: &[u8], freqs: &[FrequencyTriple], chunk_size: usize) -> Vec<EncodedChunk> {
    encode_plane(0, trits, freqs, chunk_size)
}

/// Decode a run of chunks belonging to one plane and verify their checksums.
/// `first_chunk` is the global chunk index used in error reports.
pub fn decode_chunks(
    chunks: &[(&[u8], u32, u16)],
    freqs: &[FrequencyTriple],
    first_chunk: usize,
) -> Result<Vec<u8>> {
    let mut starts = Vec::with_capacity(chunks.len());
    let mut acc = 0usize;
    for c in chunks {
        starts.push(acc);
        acc += c.1 as usize;
    }
    if acc > freqs.len() {
        return Err(Error::Decode { chunk: first_chunk, reason: "chunks hold more trits than the plane".into() });
    }
    let parts: Vec<Result<Vec<u8>>> = chunks
        .par_iter()
        .zip(starts.par_iter())
        .enumerate()
        .map(|(k, (&(bytes, n, crc), &start))| {
            let chunk = first_chunk + k;
            let t = decode_chunk(bytes, &freqs[start..start + n as usize])
                .map_err(|reason| Error::Decode { chunk, reason })?;
            if trit_checksum(&t) != crc {
                return Err(Error::Decode { chunk, reason: "trit checksum mismatch".into() });
            }
            Ok(t)
        })
        .collect();
    let mut out = Vec::with_capacity(acc);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}
