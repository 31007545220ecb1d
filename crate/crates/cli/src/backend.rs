//! `--backend synthetic` or `--backend bridge:<cmd>`.

use std::str::FromStr;

use synesthete::bridge::{BridgeClient, BridgeOptions};
use synesthete::estimators::VisualAttributeEstimator;
use synesthete::generator::{GeneratorBackend, SyntheticBackend, SyntheticBackendSpec};
use synesthete::stylizer::StyleBackend;
use synesthete::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendArg {
    Synthetic,
    Bridge(String),
}

impl FromStr for BackendArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "synthetic" => Ok(Self::Synthetic),
            Some(("bridge", cmd)) if !cmd.trim().is_empty() => Ok(Self::Bridge(cmd.to_string())),
            _ => Err(format!("expected `synthetic` or `bridge:<command>`, got `{s}`")),
        }
    }
}

pub enum Backend {
    Synthetic(SyntheticBackend),
    Bridge(BridgeClient),
}

impl Backend {
    pub fn open(arg: &BackendArg, spec: SyntheticBackendSpec) -> Result<Self> {
        match arg {
            BackendArg::Synthetic => SyntheticBackend::new(spec)
                .map(Self::Synthetic)
                .map_err(|e| Error::Config(e.to_string())),
            BackendArg::Bridge(cmd) => BridgeClient::spawn(cmd, BridgeOptions::default()).map(Self::Bridge),
        }
    }

    pub fn generator(&self) -> &dyn GeneratorBackend {
        match self {
            Self::Synthetic(b) => b,
            Self::Bridge(b) => b,
        }
    }

    pub fn estimator(&self) -> &dyn VisualAttributeEstimator {
        match self {
            Self::Synthetic(b) => b,
            Self::Bridge(b) => b,
        }
    }

    /// Pixel-producing backends write frames; the synthetic one does not.
    pub fn has_pixels(&self) -> bool {
        matches!(self, Self::Bridge(_))
    }

    pub fn stylizer(&self) -> Option<&dyn StyleBackend> {
        match self {
            Self::Bridge(b) if b.handshake().supports_stylize => Some(b),
            _ => None,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Self::Synthetic(b) => {
                let s = b.spec();
                format!("synthetic (K={}, d={}, seed {})", s.num_classes, s.latent_dim, s.seed)
            }
            Self::Bridge(b) => {
                let h = b.handshake();
                format!("bridge (K={}, d={}, {} px)", h.num_classes, h.latent_dim, h.image_size)
            }
        }
    }
}
