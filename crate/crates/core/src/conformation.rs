//! Atomic structures with optional reference labels.

use crate::elements;
use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Stable identity of a conformation: content hash of its source plus frame index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConformationId {
    pub source: u64,
    pub frame: u64,
}

impl std::fmt::Display for ConformationId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "frame {} of source {:016x}", self.frame, self.source)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conformation {
    pub id: ConformationId,
    pub numbers: Vec<u8>,
    /// Cartesian positions in Å.
    pub positions: Vec<Vec3>,
    /// Reference total energy in eV.
    pub energy: Option<f64>,
    /// Reference forces in eV/Å.
    pub forces: Option<Vec<Vec3>>,
}

impl Conformation {
    pub fn new(numbers: Vec<u8>, positions: Vec<Vec3>) -> Self {
        Conformation {
            id: ConformationId { source: 0, frame: 0 },
            numbers,
            positions,
            energy: None,
            forces: None,
        }
    }

    pub fn with_labels(mut self, energy: f64, forces: Vec<Vec3>) -> Self {
        self.energy = Some(energy);
        self.forces = Some(forces);
        self
    }

    pub fn n_atoms(&self) -> usize {
        self.numbers.len()
    }

    /// Checks element support, finite coordinates and label shapes.
    pub fn validate(&self) -> Result<()> {
        if self.numbers.len() != self.positions.len() {
            return Err(Error::Shape(format!(
                "{} atomic numbers but {} positions",
                self.numbers.len(),
                self.positions.len()
            )));
        }
        for &z in &self.numbers {
            elements::element_descriptors(z as u32)?;
        }
        if self.positions.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("atomic position".into()));
        }
        if let Some(e) = self.energy {
            if !e.is_finite() {
                return Err(Error::NonFinite("reference energy".into()));
            }
        }
        if let Some(f) = &self.forces {
            if f.len() != self.numbers.len() {
                return Err(Error::Shape(format!(
                    "{} force vectors for {} atoms",
                    f.len(),
                    self.numbers.len()
                )));
            }
            if f.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("reference force".into()));
            }
        }
        Ok(())
    }

    pub fn translated(&self, t: Vec3) -> Self {
        let mut c = self.clone();
        for p in &mut c.positions {
            for k in 0..3 {
                p[k] += t[k];
            }
        }
        c
    }

    pub fn max_abs_force(&self) -> Option<f64> {
        self.forces
            .as_ref()
            .map(|f| f.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs())))
    }
}

#[inline]
pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
