use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{EstimatorError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Mlp,
    #[serde(rename = "proxlinear")]
    ProxLinear,
    #[serde(rename = "resnetd")]
    ResNetD,
    CnnProx,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [Self::Mlp, Self::ProxLinear, Self::ResNetD, Self::CnnProx];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Mlp => "mlp",
            Self::ProxLinear => "proxlinear",
            Self::ResNetD => "resnetd",
            Self::CnnProx => "cnn_prox",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = EstimatorError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "mlp" => Ok(Self::Mlp),
            "proxlinear" | "prox_linear" => Ok(Self::ProxLinear),
            "resnetd" | "resnet_d" => Ok(Self::ResNetD),
            "cnn_prox" | "cnnprox" => Ok(Self::CnnProx),
            other => Err(EstimatorError::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

/// Layer sizes. `depth` is the number of trunk layers (MLP), re-injecting
/// blocks (ProxLinear, CNN-Prox) or residual blocks (ResNetD).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub architecture: Architecture,
    pub width: usize,
    pub depth: usize,
    pub head_width: usize,
    pub conv_channels: usize,
    pub conv_width: usize,
}

impl EstimatorConfig {
    pub fn new(architecture: Architecture) -> Self {
        Self { architecture, width: 128, depth: 3, head_width: 64, conv_channels: 8, conv_width: 3 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.depth == 0 || self.head_width == 0 {
            return Err(EstimatorError::Config("width, depth and head_width must be positive".into()));
        }
        if self.architecture == Architecture::CnnProx && (self.conv_channels == 0 || self.conv_width % 2 == 0) {
            return Err(EstimatorError::Config("conv_channels must be positive and conv_width odd".into()));
        }
        Ok(())
    }
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self::new(Architecture::CnnProx)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Separate magnitude and angle models.
    Stl,
    /// One model with a single `2n`-wide output.
    Mix,
    UniformScaling,
    Uwa,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Self::Stl, Self::Mix, Self::UniformScaling, Self::Uwa];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Stl => "stl",
            Self::Mix => "mix",
            Self::UniformScaling => "uniform_scaling",
            Self::Uwa => "uwa",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = EstimatorError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stl" => Ok(Self::Stl),
            "mix" => Ok(Self::Mix),
            "us" | "uniform_scaling" => Ok(Self::UniformScaling),
            "uwa" => Ok(Self::Uwa),
            other => Err(EstimatorError::Config(format!("unknown scheme {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskWeighting {
    pub scheme: Scheme,
    /// Fixed weights for uniform scaling.
    pub lambda: [f64; 2],
}

impl TaskWeighting {
    pub fn new(scheme: Scheme) -> Self {
        Self { scheme, lambda: [1.0, 1.0] }
    }

    pub fn uniform(l1: f64, l2: f64) -> Self {
        Self { scheme: Scheme::UniformScaling, lambda: [l1, l2] }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.iter().all(|l| *l > 0.0 && l.is_finite()) {
            return Err(EstimatorError::Config(format!("lambda must be positive, got {:?}", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Magnitude,
    Angle,
}
