//! Domain alignment losses on the branch representations: Gaussian-kernel MMD
//! and an adversarial domain discriminator behind a gradient reversal layer.

mod adversarial;
mod mmd;

pub use adversarial::{
    accumulate_disc_grads, adversarial_loss, domain_loss, DiscriminatorParams, DomainLoss, DEFAULT_DISC_HIDDEN,
};
pub use mmd::{
    median_bandwidth, mmd_loss, mmd_squared, Bandwidths, MedianBandwidth, MmdConfig, MmdOutput,
    DEFAULT_MEDIAN_SAMPLE_CAP,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignKind {
    Mmd,
    Adv,
    None,
}

impl AlignKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Mmd => "mmd",
            Self::Adv => "adv",
            Self::None => "none",
        }
    }
}

impl fmt::Display for AlignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlignKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mmd" => Ok(Self::Mmd),
            "adv" => Ok(Self::Adv),
            "none" => Ok(Self::None),
            other => Err(Error::InvalidConfig(format!(
                "unknown alignment `{other}` (expected mmd, adv or none)"
            ))),
        }
    }
}
