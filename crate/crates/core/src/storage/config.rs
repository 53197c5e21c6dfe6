//! Run configuration.
//!
//! A TOML file with the sections `descriptors`, `network`, `optimizer`,
//! `selection`, `trainer`, `ensemble` and `reference_energies`. Every
//! section and key is optional; unknown keys are rejected.
//!
//! ```toml
//! [descriptors]
//! cutoff = 6.0
//! radial_channels = ["unity", "n", "m", "n_bar", "m_bar"]
//! eta_rad = [0.0, 0.1, 0.4]
//!
//! [network]
//! hidden = [15, 15]
//!
//! [optimizer]
//! kind = "core"        # or "sgd" with `lr`
//!
//! [trainer]
//! epochs = 500
//!
//! [reference_energies]
//! H = -0.6
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::descriptors::{DescriptorGrid, DescriptorSpec};
use crate::elements::{self, Channel};
use crate::error::{Error, Result};
use crate::network::NetworkLayout;
use crate::optimizer::OptimizerConfig;
use crate::potential::ReferenceEnergies;
use crate::selection::SelectionConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescriptorConfig {
    /// Å
    pub cutoff: f64,
    pub radial_channels: Vec<Channel>,
    /// Å⁻²
    pub eta_rad: Vec<f64>,
    pub angular_channels: Vec<Channel>,
    /// Å⁻²
    pub eta_ang: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub zetas: Vec<f64>,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        let g = DescriptorGrid::reference();
        DescriptorConfig {
            cutoff: g.cutoff,
            radial_channels: g.radial_channels,
            eta_rad: g.eta_rad,
            angular_channels: g.angular_channels,
            eta_ang: g.eta_ang,
            lambdas: g.lambdas,
            zetas: g.zetas,
        }
    }
}

impl DescriptorConfig {
    pub fn grid(&self) -> DescriptorGrid {
        DescriptorGrid {
            cutoff: self.cutoff,
            radial_channels: self.radial_channels.clone(),
            eta_rad: self.eta_rad.clone(),
            angular_channels: self.angular_channels.clone(),
            eta_ang: self.eta_ang.clone(),
            lambdas: self.lambdas.clone(),
            zetas: self.zetas.clone(),
        }
    }

    pub fn spec(&self) -> Result<DescriptorSpec> {
        let spec = self.grid().build();
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig { hidden: vec![102, 61, 44] }
    }
}

impl NetworkConfig {
    pub fn layout(&self, n_g: usize) -> Result<NetworkLayout> {
        NetworkLayout::new(n_g, self.hidden.clone())
    }
}

/// How each epoch's subsample is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Lifelong adaptive data selection.
    #[default]
    Adaptive,
    /// Uniform draws from the whole training set; nothing is excluded.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub epochs: u64,
    /// Fraction of the training set (excluded conformations included) fitted per epoch.
    pub fit_fraction: f64,
    /// Energy weight in the loss.
    pub q: f64,
    pub seed: u64,
    pub test_fraction: f64,
    pub selection: SelectionMode,
    /// Largest number of conformations in each per-epoch RMSE estimate; 0 means all.
    pub eval_cap: usize,
    /// Epochs between log rows; 0 disables per-epoch logging.
    pub log_every: u64,
    /// Epochs between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    /// Frames with a larger force component (eV/Å) are dropped on load.
    pub max_force: Option<f64>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            epochs: 2000,
            fit_fraction: 0.1,
            q: 10.9,
            seed: 0,
            test_fraction: 0.1,
            selection: SelectionMode::Adaptive,
            eval_cap: 200,
            log_every: 1,
            checkpoint_every: 0,
            max_force: Some(15.0),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fit_fraction > 0.0 && self.fit_fraction <= 1.0) {
            return Err(Error::Config(format!("fit_fraction must be in (0, 1], got {}", self.fit_fraction)));
        }
        if !(self.test_fraction >= 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!("test_fraction must be in [0, 1), got {}", self.test_fraction)));
        }
        if !(self.q > 0.0 && self.q.is_finite()) {
            return Err(Error::Config(format!("q must be positive, got {}", self.q)));
        }
        if let Some(m) = self.max_force {
            if !(m > 0.0) {
                return Err(Error::Config(format!("max_force must be positive, got {m}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub members: usize,
    /// Uncertainty scaling factor.
    pub c: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig { members: 10, c: 2.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub descriptors: DescriptorConfig,
    pub network: NetworkConfig,
    pub optimizer: OptimizerConfig,
    pub selection: SelectionConfig,
    pub trainer: TrainerConfig,
    pub ensemble: EnsembleConfig,
    /// Free-atom energies in eV keyed by element symbol; missing elements use 0.
    pub reference_energies: BTreeMap<String, f64>,
}

impl Config {
    pub fn from_toml_str(text: &str, name: &str) -> Result<Self> {
        let config: Config = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            Error::Parse { path: name.to_string(), line, msg: e.message().to_string() }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize configuration: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.descriptors.spec()?;
        self.network.layout(1)?;
        self.optimizer.validate()?;
        self.selection.validate()?;
        self.trainer.validate()?;
        if !(self.ensemble.c > 0.0) || self.ensemble.members == 0 {
            return Err(Error::Config("ensemble needs c > 0 and at least one member".into()));
        }
        self.reference_energies()?;
        Ok(())
    }

    pub fn reference_energies(&self) -> Result<ReferenceEnergies> {
        let mut out = BTreeMap::new();
        for (symbol, &e) in &self.reference_energies {
            if !e.is_finite() {
                return Err(Error::NonFinite(format!("reference energy of {symbol}")));
            }
            out.insert(elements::atomic_number(symbol)?, e);
        }
        Ok(ReferenceEnergies(out))
    }
}
