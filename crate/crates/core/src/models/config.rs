use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::spectral::SpectralConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    SasRec,
    BsaRec,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::SasRec => "sasrec",
            ModelKind::BsaRec => "bsarec",
        }
    }

    /// Display label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::SasRec => "SASRec",
            ModelKind::BsaRec => "BSARec",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sasrec" => Ok(ModelKind::SasRec),
            "bsarec" => Ok(ModelKind::BsaRec),
            other => Err(Error::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Architecture hyperparameters shared by both encoders.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Catalog size; item ids run 1..=num_items and 0 is padding.
    pub num_items: usize,
    pub dim: usize,
    pub max_len: usize,
    pub blocks: usize,
    pub heads: usize,
    pub dropout: f64,
    /// Weight of the frequency branch in the BSARec blend.
    pub alpha: f64,
    /// Required for BSARec, ignored by SASRec.
    pub spectral: Option<SpectralConfig>,
    pub norm_first: bool,
    pub eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_items: 0,
            dim: 64,
            max_len: 50,
            blocks: 2,
            heads: 2,
            dropout: 0.2,
            alpha: 0.7,
            spectral: Some(SpectralConfig::default()),
            norm_first: false,
            eps: 1e-12,
        }
    }
}

impl ModelConfig {
    pub const INIT_STD: f64 = 0.02;

    pub fn ffn_dim(&self) -> usize {
        4 * self.dim
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_items == 0 {
            return fail("num_items must be at least 1".into());
        }
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return fail(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            ));
        }
        if self.max_len == 0 {
            return fail("max_len must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if self.eps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return fail("eps must be positive".into());
        }
        if kind == ModelKind::BsaRec {
            match &self.spectral {
                Some(s) => s.validate(self.max_len)?,
                None => return fail("bsarec requires a spectral section (cutoff, beta)".into()),
            }
        }
        Ok(())
    }
}
