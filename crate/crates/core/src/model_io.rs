//! Binary model files.
//!
//! ```text
//! "CTCM" | version u8 | kind u8 | slot u8 | radius u8 | flags u8
//! | inputs u32 | hidden u32 | outputs u32 | s_low f32 | s_high f32
//! | n_params u32 | params f32 * n | crc64 of everything before
//! ```

use std::path::Path;

use crate::cdr::{CdrModel, CdrSlot};
use crate::coder::container::MODEL_CRC;
use crate::crr::{CrrModel, CrrSlot, TemperatureBounds};
use crate::error::{Error, Result};
use crate::nn::Mlp;

pub const MODEL_MAGIC: [u8; 4] = *b"CTCM";
pub const MODEL_VERSION: u8 = 1;
const KIND_CRR: u8 = 0;
const KIND_CDR: u8 = 1;
const FLAG_USE_SIGMA: u8 = 0x01;
const MAX_PARAMS: usize = 1 << 24;

struct Raw {
    kind: u8,
    slot: u8,
    radius: usize,
    flags: u8,
    bounds: (f32, f32),
    mlp: Mlp,
}

fn write_raw(r: &Raw) -> Vec<u8> {
    let mut out = Vec::with_capacity(40 + 4 * r.mlp.params().len());
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&[MODEL_VERSION, r.kind, r.slot, r.radius as u8, r.flags]);
    for v in [r.mlp.inputs(), r.mlp.hidden(), r.mlp.outputs()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&r.bounds.0.to_le_bytes());
    out.extend_from_slice(&r.bounds.1.to_le_bytes());
    out.extend_from_slice(&(r.mlp.params().len() as u32).to_le_bytes());
    for &p in r.mlp.params() {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    let crc = MODEL_CRC.checksum(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn read_raw(bytes: &[u8]) -> Result<Raw> {
    let bad = |m: &str| Error::format(format!("model file: {m}"));
    if bytes.len() < 37 || bytes[..4] != MODEL_MAGIC {
        return Err(bad("bad magic"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if MODEL_CRC.checksum(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
        return Err(bad("checksum mismatch"));
    }
    if body[4] != MODEL_VERSION {
        return Err(bad("unsupported version"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(body[o..o + 4].try_into().unwrap()) as usize;
    let f32_at = |o: usize| f32::from_le_bytes(body[o..o + 4].try_into().unwrap());
    let (inputs, hidden, outputs) = (u32_at(9), u32_at(13), u32_at(17));
    let n = u32_at(29);
    if n > MAX_PARAMS || n != Mlp::param_count_for(inputs, hidden, outputs) || body.len() != 33 + 4 * n {
        return Err(bad("parameter count does not match shape"));
    }
    let params: Vec<f64> = (0..n).map(|k| f32_at(33 + 4 * k) as f64).collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(bad("non-finite weight"));
    }
    Ok(Raw {
        kind: body[5],
        slot: body[6],
        radius: body[7] as usize,
        flags: body[8],
        bounds: (f32_at(21), f32_at(25)),
        mlp: Mlp::from_params(inputs, hidden, outputs, params).expect("count checked"),
    })
}

pub fn crr_to_bytes(model: &CrrModel, slot: CrrSlot) -> Vec<u8> {
    write_raw(&Raw {
        kind: KIND_CRR,
        slot: slot.index() as u8,
        radius: model.radius,
        flags: 0,
        bounds: (model.bounds.low as f32, model.bounds.high as f32),
        mlp: model.mlp.clone(),
    })
}

pub fn crr_from_bytes(bytes: &[u8]) -> Result<(CrrModel, CrrSlot)> {
    let r = read_raw(bytes)?;
    if r.kind != KIND_CRR {
        return Err(Error::format("model file is not a CRR model"));
    }
    let slot = CrrSlot::from_index(r.slot as usize).ok_or_else(|| Error::format("bad CRR slot"))?;
    let bounds = TemperatureBounds::new(r.bounds.0 as f64, r.bounds.1 as f64)?;
    Ok((CrrModel::from_mlp(r.radius, bounds, r.mlp)?, slot))
}

pub fn cdr_to_bytes(model: &CdrModel, slot: CdrSlot) -> Vec<u8> {
    write_raw(&Raw {
        kind: KIND_CDR,
        slot: slot.index() as u8,
        radius: model.radius,
        flags: if model.use_sigma { FLAG_USE_SIGMA } else { 0 },
        bounds: (0.0, 0.0),
        mlp: model.mlp.clone(),
    })
}

pub fn cdr_from_bytes(bytes: &[u8]) -> Result<(CdrModel, CdrSlot)> {
    let r = read_raw(bytes)?;
    if r.kind != KIND_CDR {
        return Err(Error::format("model file is not a CDR model"));
    }
    let slot = CdrSlot::from_index(r.slot as usize).ok_or_else(|| Error::format("bad CDR slot"))?;
    Ok((CdrModel::from_mlp(r.radius, r.flags & FLAG_USE_SIGMA != 0, r.mlp)?, slot))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(Error::from)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crr_round_trip() {
        let mut m = CrrModel::seeded(1, 6, TemperatureBounds::new(0.5, 4.0).unwrap(), 3);
        m.mlp.round_to_f32();
        let bytes = crr_to_bytes(&m, CrrSlot::SecondLast);
        let (back, slot) = crr_from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(slot, CrrSlot::SecondLast);
        assert!(cdr_from_bytes(&bytes).is_err());
    }

    #[test]
    fn cdr_round_trip_and_corruption() {
        let mut m = CdrModel::seeded(2, 5, false, 4);
        m.mlp.params_mut().iter_mut().for_each(|p| *p = (*p * 1.5) as f32 as f64);
        let bytes = cdr_to_bytes(&m, CdrSlot::Mid);
        let (back, slot) = cdr_from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(slot, CdrSlot::Mid);
        for pos in 0..bytes.len() {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x10;
            assert!(cdr_from_bytes(&bad).is_err());
        }
        assert!(cdr_from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
