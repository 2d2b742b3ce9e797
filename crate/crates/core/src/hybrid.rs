//! Switching between a least-restrictive controller and the safety
//! controller.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchLaw {
    /// Least restrictive iff `V ≤ −δ`.
    #[default]
    ValueOnly,
    /// Additionally requires the predictive standard deviation to pass the
    /// `σ₀` test.
    ValueAndStd,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdComparison {
    /// `σ > σ₀`.
    #[default]
    Greater,
    /// `σ < σ₀`.
    Less,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchConfig {
    pub delta: f64,
    pub sigma0: f64,
    #[serde(default)]
    pub law: SwitchLaw,
    #[serde(default)]
    pub std_comparison: StdComparison,
}

impl Default for SwitchConfig {
    fn default() -> Self {
        Self {
            delta: 0.05,
            sigma0: 0.01,
            law: SwitchLaw::ValueOnly,
            std_comparison: StdComparison::Greater,
        }
    }
}

impl SwitchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("delta = {} must be positive", self.delta)));
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma0 = {} must be positive", self.sigma0)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    UseLeastRestrictive,
    UseSafety,
}

pub fn select(value: f64, std: f64, config: &SwitchConfig) -> Decision {
    let margin = value <= -config.delta;
    let confident = match (config.law, config.std_comparison) {
        (SwitchLaw::ValueOnly, _) => true,
        (SwitchLaw::ValueAndStd, StdComparison::Greater) => std > config.sigma0,
        (SwitchLaw::ValueAndStd, StdComparison::Less) => std < config.sigma0,
    };
    if margin && confident {
        Decision::UseLeastRestrictive
    } else {
        Decision::UseSafety
    }
}
