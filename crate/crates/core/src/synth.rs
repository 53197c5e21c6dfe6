//! Toy reference data: small clusters labelled by an analytic many-body potential.
//!
//! The potential combines Morse pair terms with element-dependent depth,
//! equilibrium distance and width, a three-body angular penalty around the
//! tetrahedral angle, and per-element isolated-atom energies. Both terms are
//! switched off smoothly at [`TOY_CUTOFF`]. Forces are the exact analytic
//! gradient.

use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conformation::{dot, sub, Conformation, ConformationId, Vec3};
use crate::elements::{self, element_descriptors, Channel};
use crate::optimizer::{CoreConfig, OptimizerConfig};
use crate::error::{Error, Result};
use crate::storage::config::{Config, DescriptorConfig};

/// Interaction range of the toy potential, Å.
pub const TOY_CUTOFF: f64 = 5.0;

const COS_TETRAHEDRAL: f64 = -1.0 / 3.0;

/// Elements and cluster size, written as `H,C,Cl:5`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToySpec {
    pub elements: Vec<u8>,
    pub n_atoms: usize,
}

impl FromStr for ToySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (elems, n) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("toy system '{s}' must look like H,C,Cl:5")))?;
        let n_atoms: usize = n
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad atom count '{n}' in toy system")))?;
        let mut elements = Vec::new();
        for sym in elems.split(',') {
            let z = elements::atomic_number(sym.trim())?;
            if elements.contains(&z) {
                return Err(Error::Config(format!("element {sym} listed twice")));
            }
            elements.push(z);
        }
        let spec = ToySpec { elements, n_atoms };
        spec.validate()?;
        Ok(spec)
    }
}

impl ToySpec {
    pub fn validate(&self) -> Result<()> {
        if !(2..=8).contains(&self.n_atoms) {
            return Err(Error::Config(format!("toy clusters need 2 to 8 atoms, got {}", self.n_atoms)));
        }
        if self.elements.is_empty() || self.elements.len() > 4 {
            return Err(Error::Config("toy systems use 1 to 4 elements".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyElement {
    /// Isolated-atom energy, eV.
    pub offset: f64,
    /// Morse depth contribution, eV.
    pub depth: f64,
    /// Half the homonuclear equilibrium distance, Å.
    pub radius: f64,
    /// Morse width parameter, Å⁻¹.
    pub width: f64,
    /// Strength of the angular penalty when this atom is the vertex, eV.
    pub bend: f64,
}

/// Toy parameters derived from the period `n` and main-group number `m`.
pub fn toy_element(z: u8) -> Result<ToyElement> {
    let e = element_descriptors(z as u32)?;
    let (n, m) = (e.n, if e.m > 0.0 { e.m } else { 2.0 + 0.5 * e.d });
    Ok(ToyElement {
        offset: -(0.5 * n + 0.1 * m),
        depth: 0.5 + 0.08 * m,
        radius: 0.35 + 0.25 * n,
        width: 1.5 - 0.1 * n,
        bend: 0.25 + 0.05 * m,
    })
}

#[inline]
fn switch(r2: f64) -> (f64, f64) {
    // (1 - r²/rc²)³ and its derivative with respect to r²
    let rc2 = TOY_CUTOFF * TOY_CUTOFF;
    if r2 >= rc2 {
        return (0.0, 0.0);
    }
    let t = 1.0 - r2 / rc2;
    (t * t * t, -3.0 * t * t / rc2)
}

/// Total energy (eV) and forces (eV/Å) of the toy potential.
pub fn toy_energy_forces(numbers: &[u8], positions: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
    if numbers.len() != positions.len() {
        return Err(Error::Shape("atomic numbers and positions differ in length".into()));
    }
    let params: Vec<ToyElement> = numbers.iter().map(|&z| toy_element(z)).collect::<Result<_>>()?;
    let n = numbers.len();
    let mut energy: f64 = params.iter().map(|p| p.offset).sum();
    let mut grad = vec![[0.0; 3]; n];

    for i in 0..n {
        for j in i + 1..n {
            let d = sub(&positions[j], &positions[i]);
            let r2 = dot(&d, &d);
            let (sw, dsw) = switch(r2);
            if sw == 0.0 {
                continue;
            }
            let r = r2.sqrt();
            let (pi, pj) = (&params[i], &params[j]);
            let depth = (pi.depth * pj.depth).sqrt();
            let r0 = pi.radius + pj.radius;
            let a = 0.5 * (pi.width + pj.width);
            let x = (-a * (r - r0)).exp();
            let morse = depth * (x * x - 2.0 * x);
            let dmorse_dr = depth * (-2.0 * a * x * x + 2.0 * a * x);
            energy += morse * sw;
            // d/dr_j of (morse·sw) along d/r
            let de_dr = dmorse_dr * sw + morse * dsw * 2.0 * r;
            for k in 0..3 {
                let g = de_dr * d[k] / r;
                grad[j][k] += g;
                grad[i][k] -= g;
            }
        }
    }

    for i in 0..n {
        let bend = params[i].bend;
        for j in 0..n {
            if j == i {
                continue;
            }
            let u = sub(&positions[j], &positions[i]);
            let uu = dot(&u, &u);
            let (wu, dwu) = switch(uu);
            if wu == 0.0 {
                continue;
            }
            for k in j + 1..n {
                if k == i {
                    continue;
                }
                let v = sub(&positions[k], &positions[i]);
                let vv = dot(&v, &v);
                let (wv, dwv) = switch(vv);
                if wv == 0.0 {
                    continue;
                }
                let (lu, lv) = (uu.sqrt(), vv.sqrt());
                let cos = dot(&u, &v) / (lu * lv);
                let dc = cos - COS_TETRAHEDRAL;
                energy += bend * dc * dc * wu * wv;
                let de_dcos = 2.0 * bend * dc * wu * wv;
                let de_duu = bend * dc * dc * dwu * wv;
                let de_dvv = bend * dc * dc * wu * dwv;
                for c in 0..3 {
                    let dcos_du = v[c] / (lu * lv) - cos * u[c] / uu;
                    let dcos_dv = u[c] / (lu * lv) - cos * v[c] / vv;
                    let gu = de_dcos * dcos_du + de_duu * 2.0 * u[c];
                    let gv = de_dcos * dcos_dv + de_dvv * 2.0 * v[c];
                    grad[j][c] += gu;
                    grad[k][c] += gv;
                    grad[i][c] -= gu + gv;
                }
            }
        }
    }
    let forces = grad.into_iter().map(|g| [-g[0], -g[1], -g[2]]).collect();
    Ok((energy, forces))
}

/// Sum of isolated-atom energies; the toy energy far from any neighbor.
pub fn toy_offsets(numbers: &[u8]) -> Result<f64> {
    numbers.iter().map(|&z| toy_element(z).map(|p| p.offset)).sum()
}

/// Training configuration sized for toy data: a compact descriptor set for
/// the toy interaction range, small networks and the isolated-atom energies
/// of `spec` as reference energies.
pub fn toy_config(spec: &ToySpec) -> Result<Config> {
    spec.validate()?;
    let mut config = Config::default();
    config.descriptors = DescriptorConfig {
        cutoff: 6.0,
        radial_channels: Channel::MAIN_GROUP.to_vec(),
        eta_rad: vec![0.0, 0.1, 0.3, 0.8, 2.0],
        angular_channels: Channel::MAIN_GROUP.to_vec(),
        eta_ang: vec![0.1],
        lambdas: vec![-1.0, 1.0],
        zetas: vec![1.0, 4.0],
    };
    config.network.hidden = vec![8, 8];
    // Small batches make the default step-size cap too noisy here.
    config.optimizer = OptimizerConfig::Core(CoreConfig { s_max: 0.1, ..CoreConfig::default() });
    config.trainer.fit_fraction = 0.2;
    // Forces carry most of the information in 500 small clusters; a strong
    // energy weight overfits the energies.
    config.trainer.q = 1.0;
    config.trainer.log_every = 10;
    config.trainer.epochs = 2000;
    config.trainer.eval_cap = 50;
    config.ensemble.members = 4;
    for &z in &spec.elements {
        config.reference_energies.insert(elements::symbol(z)?.to_string(), toy_element(z)?.offset);
    }
    Ok(config)
}

fn random_direction(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n2 = dot(&v, &v);
        if n2 > 1e-4 && n2 <= 1.0 {
            let n = n2.sqrt();
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn place_cluster(numbers: &[u8], rng: &mut ChaCha8Rng) -> Result<Vec<Vec3>> {
    let radius: Vec<f64> = numbers.iter().map(|&z| toy_element(z).map(|p| p.radius)).collect::<Result<_>>()?;
    let mut pos: Vec<Vec3> = vec![[0.0; 3]];
    for i in 1..numbers.len() {
        let mut placed = false;
        for _ in 0..1000 {
            let anchor = rng.gen_range(0..i);
            let r0 = radius[i] + radius[anchor];
            let dist = r0 * rng.gen_range(0.85..1.3);
            let dir = random_direction(rng);
            let p = [
                pos[anchor][0] + dist * dir[0],
                pos[anchor][1] + dist * dir[1],
                pos[anchor][2] + dist * dir[2],
            ];
            let clash = (0..i).any(|j| {
                let d = sub(&p, &pos[j]);
                dot(&d, &d).sqrt() < 0.8 * (radius[i] + radius[j])
            });
            if !clash {
                pos.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Config("could not place toy cluster atoms".into()));
        }
    }
    Ok(pos)
}

/// `n_frames` labelled toy clusters. Identical `(spec, n_frames, seed)`
/// yields identical data.
pub fn generate(spec: &ToySpec, n_frames: usize, seed: u64) -> Result<Vec<Conformation>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_frames);
    for frame in 0..n_frames {
        let numbers: Vec<u8> = (0..spec.n_atoms)
            .map(|_| spec.elements[rng.gen_range(0..spec.elements.len())])
            .collect();
        let positions = place_cluster(&numbers, &mut rng)?;
        let (e, f) = toy_energy_forces(&numbers, &positions)?;
        let mut c = Conformation::new(numbers, positions).with_labels(e, f);
        c.id = ConformationId { source: seed, frame: frame as u64 };
        out.push(c);
    }
    Ok(out)
}
