//! Codec configuration as plain `key=value` text.

use std::fmt::Write as _;
use std::path::Path;

use crate::crr::TemperatureBounds;
use crate::error::{Error, Result};
use crate::latent::{DEFAULT_MAX_DEPTH, MAX_SUPPORTED_DEPTH};
use crate::tritplane::OrderingMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceMode {
    Latent,
    Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecConfig {
    pub max_depth: u32,
    pub chunk_size: u32,
    pub bounds: TemperatureBounds,
    pub ordering: OrderingMode,
    pub source: SourceMode,
    pub block_size: usize,
    /// Quantizer step applied to transform coefficients in image mode.
    pub image_step: f64,
    /// Lower bound on per-channel scales estimated from image data.
    pub scale_floor: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            max_depth: DEFAULT_MAX_DEPTH,
            chunk_size: 1024,
            bounds: TemperatureBounds::default(),
            ordering: OrderingMode::RdPriority,
            source: SourceMode::Latent,
            block_size: 8,
            image_step: 2.0,
            scale_floor: 0.5,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 || self.max_depth > MAX_SUPPORTED_DEPTH {
            return Err(Error::param(format!("max_depth {} outside 1..={MAX_SUPPORTED_DEPTH}", self.max_depth)));
        }
        if self.chunk_size == 0 {
            return Err(Error::param("chunk_size must be positive"));
        }
        TemperatureBounds::new(self.bounds.low, self.bounds.high)?;
        if !(1..=16).contains(&self.block_size) {
            return Err(Error::param("block_size must be in 1..=16"));
        }
        if !(self.image_step.is_finite() && self.image_step > 0.0) {
            return Err(Error::param("image_step must be positive"));
        }
        if !(self.scale_floor.is_finite() && self.scale_floor > 0.0) {
            return Err(Error::param("scale_floor must be positive"));
        }
        Ok(())
    }

    /// Parse `key=value` lines; `#` starts a comment. Unset keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = CodecConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::param(format!("config line {}: expected key=value", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::param(format!("config line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::param(format!("bad value '{v}' for {key}")))
        }
        match key {
            "max_depth" => self.max_depth = num(key, value)?,
            "chunk_size" => self.chunk_size = num(key, value)?,
            "s_low" => self.bounds.low = num(key, value)?,
            "s_high" => self.bounds.high = num(key, value)?,
            "block_size" => self.block_size = num(key, value)?,
            "image_step" => self.image_step = num(key, value)?,
            "scale_floor" => self.scale_floor = num(key, value)?,
            "ordering" => {
                self.ordering = match value {
                    "rd" => OrderingMode::RdPriority,
                    "raster" => OrderingMode::Raster,
                    _ => return Err(Error::param(format!("unknown ordering '{value}'"))),
                }
            }
            "source" => {
                self.source = match value {
                    "latent" => SourceMode::Latent,
                    "image" => SourceMode::Image,
                    _ => return Err(Error::param(format!("unknown source '{value}'"))),
                }
            }
            _ => return Err(Error::param(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "max_depth={}", self.max_depth);
        let _ = writeln!(s, "chunk_size={}", self.chunk_size);
        let _ = writeln!(s, "s_low={}", self.bounds.low);
        let _ = writeln!(s, "s_high={}", self.bounds.high);
        let ordering = match self.ordering {
            OrderingMode::RdPriority => "rd",
            OrderingMode::Raster => "raster",
        };
        let _ = writeln!(s, "ordering={ordering}");
        let source = match self.source {
            SourceMode::Latent => "latent",
            SourceMode::Image => "image",
        };
        let _ = writeln!(s, "source={source}");
        let _ = writeln!(s, "block_size={}", self.block_size);
        let _ = writeln!(s, "image_step={}", self.image_step);
        let _ = writeln!(s, "scale_floor={}", self.scale_floor);
        s
    }
}
