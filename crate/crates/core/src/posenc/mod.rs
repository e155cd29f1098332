//! Positional encodings as attention-logit kernels.
//!
//! Additive variants (sinusoidal, learned absolute, SPI-indexed) add a
//! vector to each input row; relative variants add a per-offset key term;
//! rotary variants rotate queries and keys. The switching-point rotary
//! variant flips the rotation direction at switching points.

mod kernels;
mod sign;
mod streams;
mod tables;

pub use kernels::*;
pub use sign::*;
pub use streams::*;
pub use tables::*;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PosEncError {
    #[error("model width {0} must be even and positive")]
    OddDimension(usize),
    #[error("rotary base must be greater than 1 (got {0})")]
    InvalidBase(f64),
    #[error("relative clip must be positive")]
    InvalidClip,
    #[error("max_len must be positive")]
    InvalidMaxLen,
    #[error("position index {index} outside table of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid switching point {index} for sequence length {len}")]
    InvalidSwitchingPoint { index: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PeVariant {
    Sinusoidal,
    Dynamic,
    Relative,
    Spdrpe,
    Rotary,
    SpRotary,
}

/// Which positional ingredients a variant uses (the report columns of a
/// variant comparison grid).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Capabilities {
    pub sin_cos: bool,
    pub index: bool,
    pub dynamic: bool,
    pub spi: bool,
    pub relative: bool,
    pub rotary: bool,
    pub sp_rotary: bool,
}

impl Capabilities {
    pub const COLUMNS: [&'static str; 7] = ["sin_cos", "index", "dynamic", "spi", "relative", "rm", "sprm"];

    pub fn flags(&self) -> [bool; 7] {
        [self.sin_cos, self.index, self.dynamic, self.spi, self.relative, self.rotary, self.sp_rotary]
    }
}

impl PeVariant {
    pub const ALL: [PeVariant; 6] = [
        PeVariant::Sinusoidal,
        PeVariant::Dynamic,
        PeVariant::Relative,
        PeVariant::Spdrpe,
        PeVariant::Rotary,
        PeVariant::SpRotary,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PeVariant::Sinusoidal => "SINUSOIDAL",
            PeVariant::Dynamic => "DYNAMIC",
            PeVariant::Relative => "RELATIVE",
            PeVariant::Spdrpe => "SPDRPE",
            PeVariant::Rotary => "ROTARY",
            PeVariant::SpRotary => "SP_ROTARY",
        }
    }

    /// Needs switching-point metadata (SPI or sign flags).
    pub fn needs_switching_points(self) -> bool {
        matches!(self, PeVariant::Spdrpe | PeVariant::SpRotary)
    }

    pub fn is_rotary(self) -> bool {
        matches!(self, PeVariant::Rotary | PeVariant::SpRotary)
    }

    pub fn has_relative_term(self) -> bool {
        matches!(self, PeVariant::Relative | PeVariant::Spdrpe)
    }

    pub fn capabilities(self) -> Capabilities {
        let mut c = Capabilities::default();
        match self {
            PeVariant::Sinusoidal => {
                c.sin_cos = true;
                c.index = true;
            }
            PeVariant::Dynamic => {
                c.index = true;
                c.dynamic = true;
            }
            PeVariant::Relative => c.relative = true,
            PeVariant::Spdrpe => {
                c.dynamic = true;
                c.spi = true;
                c.relative = true;
            }
            PeVariant::Rotary => c.rotary = true,
            PeVariant::SpRotary => {
                c.rotary = true;
                c.sp_rotary = true;
            }
        }
        c
    }
}

impl std::fmt::Display for PeVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PeVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PeVariant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown positional-encoding variant {s:?}"))
    }
}

fn default_base() -> f64 {
    10000.0
}

fn default_clip() -> usize {
    8
}

fn default_max_len() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeConfig {
    pub variant: PeVariant,
    pub d_model: usize,
    #[serde(default = "default_base")]
    pub base: f64,
    #[serde(default = "default_clip")]
    pub clip_k: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
}

impl PeConfig {
    pub fn new(variant: PeVariant, d_model: usize) -> Self {
        PeConfig { variant, d_model, base: default_base(), clip_k: default_clip(), max_len: default_max_len() }
    }

    pub fn validate(&self) -> Result<(), PosEncError> {
        if self.d_model == 0 || self.d_model % 2 != 0 {
            return Err(PosEncError::OddDimension(self.d_model));
        }
        if !(self.base > 1.0) || !self.base.is_finite() {
            return Err(PosEncError::InvalidBase(self.base));
        }
        if self.clip_k == 0 {
            return Err(PosEncError::InvalidClip);
        }
        if self.max_len == 0 {
            return Err(PosEncError::InvalidMaxLen);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_keys_and_defaults() {
        let c: PeConfig = serde_json::from_str(r#"{"variant":"SP_ROTARY","d_model":8}"#).unwrap();
        assert_eq!(c, PeConfig::new(PeVariant::SpRotary, 8));
        assert!(serde_json::from_str::<PeConfig>(r#"{"variant":"ROTARY","d_model":8,"bse":2}"#).is_err());
        assert!(PeConfig::new(PeVariant::Rotary, 7).validate().is_err());
        let mut c = PeConfig::new(PeVariant::Rotary, 8);
        c.base = 1.0;
        assert_eq!(c.validate(), Err(PosEncError::InvalidBase(1.0)));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in PeVariant::ALL {
            assert_eq!(v.as_str().parse::<PeVariant>().unwrap(), v);
        }
        assert!("sp_rotary".parse::<PeVariant>().is_ok());
        assert!("ROPE".parse::<PeVariant>().is_err());
    }
}
