//! Total energies, forces, the training loss and its weight gradient.
//!
//! The energy of a conformation is the sum of atomic network outputs plus
//! optional per-element reference energies. Forces follow from the chain rule
//! through the descriptor derivatives. The loss is
//!
//! ```text
//! L = q²/N_conf Σ_r (ΔE_r / N_r)² + 1/(3 Σ_r N_r) Σ_r Σ_{n,α} ΔF²
//! ```
//!
//! and its gradient includes the mixed second derivatives of the force term.

use std::collections::BTreeMap;

use crate::conformation::{Conformation, Vec3};
use crate::descriptors::{compute_block, DescriptorBlock, DescriptorSpec};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::network::{WeightSet, Workspace};

/// Per-element reference (free-atom) energies in eV subtracted from training targets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReferenceEnergies(pub BTreeMap<u8, f64>);

impl ReferenceEnergies {
    /// Sum of the reference energies of all atoms; zero for unlisted elements.
    pub fn offset(&self, numbers: &[u8]) -> f64 {
        numbers.iter().map(|z| self.0.get(z).copied().unwrap_or(0.0)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// eV
    pub energy: f64,
    /// eV/Å
    pub forces: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub energy_term: f64,
    pub force_term: f64,
    /// `(q² ΔE² + ⅓ Σ ΔF²) / N_atom` per conformation, in input order.
    pub per_conformation: Vec<f64>,
}

/// Loss gradient per element network. `None` marks networks whose element
/// does not occur in the subsample; their gradient is exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightGradient {
    pub per_network: Vec<Option<Vec<f64>>>,
}

impl WeightGradient {
    /// Flattened gradient with zeros for absent networks.
    pub fn dense(&self, n_params_per_network: usize) -> Vec<f64> {
        self.per_network
            .iter()
            .flat_map(|g| g.clone().unwrap_or_else(|| vec![0.0; n_params_per_network]))
            .collect()
    }
}

/// A conformation with its precomputed descriptors.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub conf: &'a Conformation,
    pub block: &'a DescriptorBlock,
}

fn check_compat(weights: &WeightSet, spec: &DescriptorSpec) -> Result<()> {
    if weights.layout.n_g != spec.n_g() {
        return Err(Error::Shape(format!(
            "descriptor set has {} functions, networks expect {}",
            spec.n_g(),
            weights.layout.n_g
        )));
    }
    Ok(())
}

fn network_indices(conf: &Conformation, weights: &WeightSet) -> Result<Vec<usize>> {
    conf.numbers
        .iter()
        .map(|&z| {
            weights
                .network_index(z)
                .ok_or_else(|| Error::Mismatch(format!("no network for element Z={z}")))
        })
        .collect()
}

fn check_block(conf: &Conformation, block: &DescriptorBlock, weights: &WeightSet) -> Result<()> {
    if block.n_atoms() != conf.n_atoms() || block.n_g != weights.layout.n_g {
        return Err(Error::Shape(format!(
            "descriptor block ({} atoms x {}) does not match conformation ({} atoms) and networks ({} inputs)",
            block.n_atoms(),
            block.n_g,
            conf.n_atoms(),
            weights.layout.n_g
        )));
    }
    Ok(())
}

/// Network energy (without reference offsets) and forces.
pub fn predict(conf: &Conformation, weights: &WeightSet, spec: &DescriptorSpec) -> Result<Prediction> {
    check_compat(weights, spec)?;
    let block = compute_block(conf, spec)?;
    predict_block(conf, &block, weights)
}

/// [`predict`] with precomputed descriptors.
pub fn predict_block(conf: &Conformation, block: &DescriptorBlock, weights: &WeightSet) -> Result<Prediction> {
    check_block(conf, block, weights)?;
    let nets = network_indices(conf, weights)?;
    let n_g = block.n_g;
    let mut ws = Workspace::new(weights.param_layout());
    let mut grad = vec![0.0; n_g];
    let mut energy = 0.0;
    let mut forces = vec![[0.0; 3]; conf.n_atoms()];
    for (n, &net) in nets.iter().enumerate() {
        energy += weights.mlp(net).energy_with_input_grad(block.row(n), &mut ws, &mut grad)?;
        let d = &block.derivatives[n];
        for (slot, &atom) in d.atoms.iter().enumerate() {
            let dg = &d.grads[slot * n_g..(slot + 1) * n_g];
            let f = &mut forces[atom];
            for (gi, dgi) in grad.iter().zip(dg) {
                for k in 0..3 {
                    f[k] -= gi * dgi[k];
                }
            }
        }
    }
    if !energy.is_finite() || forces.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("predicted energy or forces".into()));
    }
    Ok(Prediction { energy, forces })
}

struct Residuals {
    d_energy: f64,
    d_forces: Vec<Vec3>,
    nets: Vec<usize>,
}

fn residuals(s: &Sample<'_>, weights: &WeightSet, refs: &ReferenceEnergies) -> Result<Residuals> {
    let (e_ref, f_ref) = match (s.conf.energy, &s.conf.forces) {
        (Some(e), Some(f)) => (e, f),
        _ => {
            return Err(Error::MissingReference(format!(
                "{} lacks reference energy or forces", s.conf.id
            )))
        }
    };
    let Prediction { energy, forces } = predict_block(s.conf, s.block, weights)?;
    let nets = network_indices(s.conf, weights)?;
    let d_energy = energy - (e_ref - refs.offset(&s.conf.numbers));
    let d_forces = forces
        .iter()
        .zip(f_ref)
        .map(|(f, r)| [f[0] - r[0], f[1] - r[1], f[2] - r[2]])
        .collect();
    Ok(Residuals { d_energy, d_forces, nets })
}

fn force_sq(d: &[Vec3]) -> f64 {
    d.iter().flatten().map(|x| x * x).sum()
}

fn check_q(q: f64) -> Result<()> {
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::Config(format!("energy weight q must be positive, got {q}")));
    }
    Ok(())
}

/// Training loss over a subsample.
pub fn loss(samples: &[Sample<'_>], weights: &WeightSet, refs: &ReferenceEnergies, q: f64, exec: Exec) -> Result<LossReport> {
    check_q(q)?;
    if samples.is_empty() {
        return Err(Error::Config("empty subsample".into()));
    }
    let parts: Vec<Result<(f64, f64, usize)>> = exec.map(samples, |s| {
        let r = residuals(s, weights, refs)?;
        Ok((r.d_energy, force_sq(&r.d_forces), s.conf.n_atoms()))
    });
    let parts: Vec<(f64, f64, usize)> = parts.into_iter().collect::<Result<_>>()?;
    Ok(assemble_loss(&parts, q))
}

fn assemble_loss(parts: &[(f64, f64, usize)], q: f64) -> LossReport {
    let n_conf = parts.len() as f64;
    let total_atoms: usize = parts.iter().map(|p| p.2).sum();
    let mut energy_term = 0.0;
    let mut force_sum = 0.0;
    let mut per_conformation = Vec::with_capacity(parts.len());
    for &(de, f2, n) in parts {
        let nf = n as f64;
        energy_term += (de / nf).powi(2);
        force_sum += f2;
        per_conformation.push((q * q * de * de + f2 / 3.0) / nf);
    }
    let energy_term = q * q * energy_term / n_conf;
    let force_term = force_sum / (3.0 * total_atoms as f64);
    LossReport { total: energy_term + force_term, energy_term, force_term, per_conformation }
}

/// [`loss`] computing descriptors on the fly.
pub fn loss_conformations(
    confs: &[Conformation],
    weights: &WeightSet,
    spec: &DescriptorSpec,
    refs: &ReferenceEnergies,
    q: f64,
) -> Result<LossReport> {
    check_compat(weights, spec)?;
    let blocks: Vec<DescriptorBlock> = confs.iter().map(|c| compute_block(c, spec)).collect::<Result<_>>()?;
    let samples: Vec<Sample<'_>> = confs.iter().zip(&blocks).map(|(conf, block)| Sample { conf, block }).collect();
    loss(&samples, weights, refs, q, Exec::Sequential)
}

/// Loss report together with its exact weight gradient.
pub fn loss_and_gradient(
    samples: &[Sample<'_>],
    weights: &WeightSet,
    refs: &ReferenceEnergies,
    q: f64,
    exec: Exec,
) -> Result<(LossReport, WeightGradient)> {
    check_q(q)?;
    if samples.is_empty() {
        return Err(Error::Config("empty subsample".into()));
    }
    let n_conf = samples.len() as f64;
    let total_atoms: usize = samples.iter().map(|s| s.conf.n_atoms()).sum();
    let k_force = 1.0 / (3.0 * total_atoms as f64);
    let n_nets = weights.networks.len();
    let len = weights.param_layout().len;

    let per_conf = exec.map(samples, |s| -> Result<((f64, f64, usize), Vec<Option<Vec<f64>>>)> {
        let r = residuals(s, weights, refs)?;
        let n_atoms = s.conf.n_atoms();
        let n_g = s.block.n_g;
        let nf = n_atoms as f64;
        let c = 2.0 * q * q * r.d_energy / (n_conf * nf * nf);
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n_nets];
        let mut ws = Workspace::new(weights.param_layout());
        let mut v = vec![0.0; n_g];
        for n in 0..n_atoms {
            // v_i = -2K Σ_j ΔF_j · ∂G_{n,i}/∂r_j
            v.iter_mut().for_each(|x| *x = 0.0);
            let d = &s.block.derivatives[n];
            for (slot, &atom) in d.atoms.iter().enumerate() {
                let df = r.d_forces[atom];
                let dg = &d.grads[slot * n_g..(slot + 1) * n_g];
                for (vi, g) in v.iter_mut().zip(dg) {
                    *vi += df[0] * g[0] + df[1] * g[1] + df[2] * g[2];
                }
            }
            v.iter_mut().for_each(|x| *x *= -2.0 * k_force);
            let net = r.nets[n];
            let out = grads[net].get_or_insert_with(|| vec![0.0; len]);
            weights.mlp(net).accumulate_weight_gradient(s.block.row(n), Some(&v), c, &mut ws, out)?;
        }
        Ok(((r.d_energy, force_sq(&r.d_forces), n_atoms), grads))
    });

    let mut parts = Vec::with_capacity(samples.len());
    let mut per_network: Vec<Option<Vec<f64>>> = vec![None; n_nets];
    for item in per_conf {
        let (part, grads) = item?;
        parts.push(part);
        for (acc, g) in per_network.iter_mut().zip(grads) {
            if let Some(g) = g {
                match acc {
                    Some(a) => a.iter_mut().zip(&g).for_each(|(x, y)| *x += y),
                    None => *acc = Some(g),
                }
            }
        }
    }
    let report = assemble_loss(&parts, q);
    if !report.total.is_finite() || per_network.iter().flatten().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("loss or gradient".into()));
    }
    Ok((report, WeightGradient { per_network }))
}

/// Gradient only; see [`loss_and_gradient`].
pub fn loss_weight_gradient(
    samples: &[Sample<'_>],
    weights: &WeightSet,
    refs: &ReferenceEnergies,
    q: f64,
    exec: Exec,
) -> Result<WeightGradient> {
    loss_and_gradient(samples, weights, refs, q, exec).map(|(_, g)| g)
}

/// Energy and force errors over a labelled set.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorMetrics {
    /// RMSE of the energy per atom, eV/atom.
    pub energy_rmse: f64,
    /// RMSE over force components, eV/Å.
    pub force_rmse: f64,
    pub n_conf: usize,
}

pub fn error_metrics(samples: &[Sample<'_>], weights: &WeightSet, refs: &ReferenceEnergies, exec: Exec) -> Result<ErrorMetrics> {
    if samples.is_empty() {
        return Ok(ErrorMetrics::default());
    }
    let parts: Vec<Result<(f64, f64, usize)>> = exec.map(samples, |s| {
        let r = residuals(s, weights, refs)?;
        let n = s.conf.n_atoms();
        Ok(((r.d_energy / n as f64).powi(2), force_sq(&r.d_forces), n))
    });
    let (mut se, mut sf, mut na) = (0.0, 0.0, 0usize);
    for p in parts {
        let (e, f, n) = p?;
        se += e;
        sf += f;
        na += n;
    }
    Ok(ErrorMetrics {
        energy_rmse: (se / samples.len() as f64).sqrt(),
        force_rmse: (sf / (3 * na) as f64).sqrt(),
        n_conf: samples.len(),
    })
}
