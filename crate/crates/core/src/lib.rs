//! Training engine for lifelong machine-learning potentials.
//!
//! Atomic environments are described by element-embracing symmetry
//! functions ([`descriptors`]), mapped to atomic energies by per-element
//! feed-forward networks ([`network`]) and summed into total energies and
//! forces ([`potential`]). Weights are fitted with the CoRe optimizer
//! ([`optimizer`]) on subsamples chosen by lifelong adaptive data selection
//! ([`selection`]); [`trainer`] runs the loop, [`ensemble`] combines
//! independently trained models with uncertainties and [`storage`] persists the
//! complete state so training can be continued later.

pub mod conformation;
pub mod descriptors;
pub mod elements;
pub mod ensemble;
pub mod error;
pub mod exec;
pub mod neighbors;
pub mod network;
pub mod optimizer;
pub mod potential;
pub mod selection;
pub mod storage;
pub mod synth;
pub mod trainer;

pub use conformation::{Conformation, ConformationId, Vec3};
pub use error::{Error, Result};
pub use exec::Exec;
