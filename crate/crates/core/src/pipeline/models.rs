//! A directory of trained models: CRR and CDR router slots plus an optional
//! refit synthesis matrix.

use std::path::Path;

use super::transform::SynthesisWeights;
use crate::cdr::{CdrRouter, CdrSlot};
use crate::coder::container::MODEL_CRC;
use crate::crr::{CrrRouter, CrrSlot};
use crate::error::{Error, Result};
use crate::model_io;

pub fn crr_file(slot: CrrSlot) -> &'static str {
    match slot {
        CrrSlot::Last => "crr_last.bin",
        CrrSlot::SecondLast => "crr_second_last.bin",
        CrrSlot::Coarse => "crr_coarse.bin",
    }
}

pub fn cdr_file(slot: CdrSlot) -> &'static str {
    match slot {
        CdrSlot::Fine => "cdr_fine.bin",
        CdrSlot::Mid => "cdr_mid.bin",
        CdrSlot::Coarse => "cdr_coarse.bin",
    }
}

pub const SYNTHESIS_FILE: &str = "synthesis.bin";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Models {
    pub crr: CrrRouter,
    pub cdr: CdrRouter,
    pub synthesis: Option<SynthesisWeights>,
}

impl Models {
    /// Load whichever model files exist in `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::input(format!("models directory {} does not exist", dir.display())));
        }
        let mut m = Models::default();
        for slot in CrrSlot::ALL {
            let p = dir.join(crr_file(slot));
            if p.exists() {
                let (model, s) = model_io::crr_from_bytes(&std::fs::read(&p)?)?;
                if s != slot {
                    return Err(Error::format(format!("{} holds slot {s:?}", p.display())));
                }
                m.crr.slots[slot.index()] = Some(model);
            }
        }
        for slot in CdrSlot::ALL {
            let p = dir.join(cdr_file(slot));
            if p.exists() {
                let (model, s) = model_io::cdr_from_bytes(&std::fs::read(&p)?)?;
                if s != slot {
                    return Err(Error::format(format!("{} holds slot {s:?}", p.display())));
                }
                m.cdr.slots[slot.index()] = Some(model);
            }
        }
        let p = dir.join(SYNTHESIS_FILE);
        if p.exists() {
            m.synthesis = Some(SynthesisWeights::from_bytes(&std::fs::read(&p)?)?);
        }
        Ok(m)
    }

    /// Write every present model into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for slot in CrrSlot::ALL {
            if let Some(m) = &self.crr.slots[slot.index()] {
                std::fs::write(dir.join(crr_file(slot)), model_io::crr_to_bytes(m, slot))?;
            }
        }
        for slot in CdrSlot::ALL {
            if let Some(m) = &self.cdr.slots[slot.index()] {
                std::fs::write(dir.join(cdr_file(slot)), model_io::cdr_to_bytes(m, slot))?;
            }
        }
        if let Some(s) = &self.synthesis {
            std::fs::write(dir.join(SYNTHESIS_FILE), s.to_bytes())?;
        }
        Ok(())
    }
}

/// Checksum binding a stream to the CRR models that shaped its probabilities;
/// 0 when no CRR model is present.
pub fn crr_checksum(router: &CrrRouter) -> u64 {
    if router.is_empty() {
        return 0;
    }
    let mut digest = MODEL_CRC.digest();
    for slot in CrrSlot::ALL {
        match &router.slots[slot.index()] {
            Some(m) => digest.update(&model_io::crr_to_bytes(m, slot)),
            None => digest.update(&[0xff, slot.index() as u8]),
        }
    }
    // 0 is reserved for "no models"
    digest.finalize().max(1)
}
