//! Element-embracing atom-centered symmetry functions and their position
//! derivatives, plus a conventional element-resolved baseline.
//!
//! Radial functions sum `H_j exp(-η R²) f_c(R)` over neighbors `j`, angular
//! functions sum `H_jk (1 + λ cos θ)^ζ exp(-η (R_j² + R_k²)) f_c f_c` over
//! ordered neighbor pairs; both are normalized by the largest possible
//! element weight and square-rooted.

use serde::{Deserialize, Serialize};

use crate::conformation::{Conformation, Vec3};
use crate::elements::{self, channel_max, Channel};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::neighbors::{neighbor_lists, Neighbor};

/// Inner sums below this value get a zero square-root derivative.
const SQRT_GUARD: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialParam {
    pub channel: Channel,
    /// Å⁻²
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularParam {
    pub channel: Channel,
    /// +1 or -1
    pub gamma: f64,
    /// Å⁻²
    pub eta: f64,
    /// +1 or -1
    pub lambda: f64,
    pub zeta: f64,
}

impl AngularParam {
    fn h_max(&self) -> f64 {
        if self.gamma > 0.0 {
            2.0 * channel_max(self.channel)
        } else {
            channel_max(self.channel)
        }
    }

    /// Element weight of a neighbor pair.
    pub fn pair_weight(&self, hj: f64, hk: f64) -> f64 {
        let c = if self.gamma > 0.0 || (hj == 0.0 && hk == 0.0) {
            0.0
        } else {
            1.0
        };
        (hj + self.gamma * hk).abs() + c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DescriptorMode {
    /// Element-embracing functions; vector length independent of the elements.
    EeAcsf,
    /// Conventional functions resolved per neighbor element (radial) and per
    /// unordered neighbor element pair (angular). Channel and γ are ignored.
    ElementPair { elements: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorSpec {
    /// Å
    pub cutoff: f64,
    pub radial: Vec<RadialParam>,
    pub angular: Vec<AngularParam>,
    pub mode: DescriptorMode,
}

/// Parameter grid for building a [`DescriptorSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorGrid {
    pub cutoff: f64,
    pub radial_channels: Vec<Channel>,
    pub eta_rad: Vec<f64>,
    pub angular_channels: Vec<Channel>,
    pub eta_ang: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub zetas: Vec<f64>,
}

impl DescriptorGrid {
    /// Radial block channel-major (η minor), then angular block ordered by
    /// channel, γ, η, λ, ζ. Unity and d-block channels only take γ = +1.
    pub fn build(&self) -> DescriptorSpec {
        let mut radial = Vec::new();
        for &channel in &self.radial_channels {
            for &eta in &self.eta_rad {
                radial.push(RadialParam { channel, eta });
            }
        }
        let mut angular = Vec::new();
        for &channel in &self.angular_channels {
            for &gamma in channel.angular_gammas() {
                for &eta in &self.eta_ang {
                    for &lambda in &self.lambdas {
                        for &zeta in &self.zetas {
                            angular.push(AngularParam { channel, gamma, eta, lambda, zeta });
                        }
                    }
                }
            }
        }
        DescriptorSpec {
            cutoff: self.cutoff,
            radial,
            angular,
            mode: DescriptorMode::EeAcsf,
        }
    }

    /// The production parameter set: 45 radial and 108 angular functions, R_c = 12 Å.
    pub fn reference() -> Self {
        DescriptorGrid {
            cutoff: 12.0,
            radial_channels: Channel::MAIN_GROUP.to_vec(),
            eta_rad: vec![
                0.0, 0.010702, 0.023348, 0.044203, 0.066118, 0.104168, 0.180285, 0.370959, 1.115414,
            ],
            angular_channels: Channel::MAIN_GROUP.to_vec(),
            eta_ang: vec![0.011238, 0.090144],
            lambdas: vec![-1.0, 1.0],
            zetas: vec![1.0, 2.409421, 9.996864],
        }
    }
}

impl DescriptorSpec {
    pub fn reference() -> Self {
        DescriptorGrid::reference().build()
    }

    pub fn n_g(&self) -> usize {
        match &self.mode {
            DescriptorMode::EeAcsf => self.radial.len() + self.angular.len(),
            DescriptorMode::ElementPair { elements } => {
                let e = elements.len();
                self.radial.len() * e + self.angular.len() * e * (e + 1) / 2
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
            return Err(Error::Config(format!("cutoff must be positive, got {}", self.cutoff)));
        }
        for p in &self.radial {
            if !(p.eta >= 0.0 && p.eta.is_finite()) {
                return Err(Error::Config(format!("radial eta must be >= 0, got {}", p.eta)));
            }
        }
        for p in &self.angular {
            if !(p.eta >= 0.0 && p.eta.is_finite()) {
                return Err(Error::Config(format!("angular eta must be >= 0, got {}", p.eta)));
            }
            if p.gamma.abs() != 1.0 || p.lambda.abs() != 1.0 {
                return Err(Error::Config("gamma and lambda must be +1 or -1".into()));
            }
            if !(p.zeta >= 1.0) {
                return Err(Error::Config(format!("zeta must be >= 1, got {}", p.zeta)));
            }
            if !p.channel.angular_gammas().contains(&p.gamma) {
                return Err(Error::Config(format!("{} channel requires gamma = +1", p.channel)));
            }
        }
        if let DescriptorMode::ElementPair { elements } = &self.mode {
            if elements.is_empty() {
                return Err(Error::Config("element-pair mode needs an element list".into()));
            }
            for &z in elements {
                elements::element_descriptors(z as u32)?;
            }
        }
        if self.n_g() == 0 {
            return Err(Error::Config("descriptor set is empty".into()));
        }
        Ok(())
    }
}

/// Radial and angular counts for a channel/parameter grid.
pub fn descriptor_count(
    n_channels_rad: usize,
    n_channels_ang: usize,
    n_eta_rad: usize,
    n_eta_ang: usize,
    n_lambda: usize,
    n_zeta: usize,
) -> (usize, usize) {
    // main-group channels beyond unity take both signs of γ
    let n_main = n_channels_ang.min(5);
    let n_d = n_channels_ang - n_main;
    let n_terms = (2 * n_main).saturating_sub(1) + n_d;
    (
        n_channels_rad * n_eta_rad,
        n_terms * n_eta_ang * n_lambda * n_zeta,
    )
}

/// Channel count with or without the d-block channels.
pub fn channel_count(has_d_block: bool) -> usize {
    if has_d_block {
        7
    } else {
        5
    }
}

/// Smooth cutoff `exp(1 - 1/(1 - R²/Rc²))` for `R < Rc`, zero beyond.
pub fn cutoff(r: f64, rc: f64) -> f64 {
    cutoff_r2(r * r, rc * rc).0
}

/// Cutoff value and its derivative with respect to `R²`.
#[inline]
fn cutoff_r2(r2: f64, rc2: f64) -> (f64, f64) {
    let u = r2 / rc2;
    if u >= 1.0 {
        return (0.0, 0.0);
    }
    let inv = 1.0 / (1.0 - u);
    let fc = (1.0 - inv).exp();
    (fc, -fc * inv * inv / rc2)
}

/// Descriptor values and sparse position derivatives of one conformation.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorBlock {
    pub n_g: usize,
    /// Row-major `[atom][descriptor]`.
    pub values: Vec<f64>,
    pub derivatives: Vec<CenterDerivatives>,
}

/// Derivatives of one center's descriptors. Slot 0 is the center itself,
/// the remaining slots are its neighbors within the cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterDerivatives {
    pub atoms: Vec<usize>,
    /// `[slot * n_g + i]` = ∂G_i/∂r_atoms[slot], Å⁻¹
    pub grads: Vec<Vec3>,
}

impl DescriptorBlock {
    pub fn n_atoms(&self) -> usize {
        self.derivatives.len()
    }

    pub fn row(&self, atom: usize) -> &[f64] {
        &self.values[atom * self.n_g..(atom + 1) * self.n_g]
    }

    /// Dense ∂G_{center,i}/∂r_atom (zero when `atom` is outside the cutoff).
    pub fn gradient(&self, center: usize, i: usize, atom: usize) -> Vec3 {
        let d = &self.derivatives[center];
        d.atoms
            .iter()
            .position(|&a| a == atom)
            .map(|slot| d.grads[slot * self.n_g + i])
            .unwrap_or([0.0; 3])
    }
}

struct NeighborTerms {
    fc: f64,
    dfc: f64,
}

/// Per-pair geometry shared by all angular parameters.
struct PairGeometry {
    a: usize,
    b: usize,
    cos: f64,
    dcos_a: Vec3,
    dcos_b: Vec3,
}

fn pair_geometries(nl: &[Neighbor]) -> Vec<PairGeometry> {
    let mut pairs = Vec::with_capacity(nl.len() * nl.len().saturating_sub(1) / 2);
    for a in 0..nl.len() {
        for b in a + 1..nl.len() {
            let (ra, rb) = (&nl[a].rel, &nl[b].rel);
            let la = nl[a].r2.sqrt();
            let lb = nl[b].r2.sqrt();
            let inv = 1.0 / (la * lb);
            let cos = (ra[0] * rb[0] + ra[1] * rb[1] + ra[2] * rb[2]) * inv;
            let ca = cos / nl[a].r2;
            let cb = cos / nl[b].r2;
            let mut dcos_a = [0.0; 3];
            let mut dcos_b = [0.0; 3];
            for k in 0..3 {
                dcos_a[k] = rb[k] * inv - ca * ra[k];
                dcos_b[k] = ra[k] * inv - cb * rb[k];
            }
            pairs.push(PairGeometry { a, b, cos, dcos_a, dcos_b });
        }
    }
    pairs
}

/// Accumulates inner sums and their gradients for one center.
struct Accumulator {
    n_g: usize,
    sums: Vec<f64>,
    grads: Vec<Vec3>,
}

impl Accumulator {
    fn new(n_g: usize, n_slots: usize) -> Self {
        Accumulator {
            n_g,
            sums: vec![0.0; n_g],
            grads: vec![[0.0; 3]; n_g * n_slots],
        }
    }

    /// Adds a neighbor-pair gradient; the center receives the negative sum.
    #[inline]
    fn add_grad(&mut self, i: usize, slot: usize, g: Vec3) {
        let n_g = self.n_g;
        let t = &mut self.grads[slot * n_g + i];
        t[0] += g[0];
        t[1] += g[1];
        t[2] += g[2];
        let c = &mut self.grads[i];
        c[0] -= g[0];
        c[1] -= g[1];
        c[2] -= g[2];
    }

    fn finish(mut self, values: &mut [f64]) -> Vec<Vec3> {
        for i in 0..self.n_g {
            let s = self.sums[i];
            let g = s.sqrt();
            values[i] = g;
            let scale = if s < SQRT_GUARD { 0.0 } else { 0.5 / g };
            for t in self.grads.iter_mut().skip(i).step_by(self.n_g) {
                t[0] *= scale;
                t[1] *= scale;
                t[2] *= scale;
            }
        }
        self.grads
    }
}

fn check_conformation(conf: &Conformation) -> Result<()> {
    if conf.numbers.len() != conf.positions.len() {
        return Err(Error::Shape("atomic numbers and positions differ in length".into()));
    }
    for &z in &conf.numbers {
        elements::element_descriptors(z as u32)?;
    }
    if conf.positions.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("atomic position".into()));
    }
    Ok(())
}

/// Values and analytical position derivatives of every descriptor of every atom.
pub fn compute_block(conf: &Conformation, spec: &DescriptorSpec) -> Result<DescriptorBlock> {
    check_conformation(conf)?;
    match &spec.mode {
        DescriptorMode::EeAcsf => Ok(compute_eeacsf(conf, spec)),
        DescriptorMode::ElementPair { elements } => compute_element_pair(conf, spec, elements),
    }
}

/// Same as [`compute_block`] with element-resolved functions over `elements`.
pub fn compute_block_acsf(conf: &Conformation, spec: &DescriptorSpec) -> Result<DescriptorBlock> {
    match &spec.mode {
        DescriptorMode::ElementPair { .. } => compute_block(conf, spec),
        DescriptorMode::EeAcsf => Err(Error::Config(
            "element-pair descriptors need an element list".into(),
        )),
    }
}

/// Descriptor blocks for a batch of conformations.
pub fn compute_blocks(
    confs: &[Conformation],
    spec: &DescriptorSpec,
    exec: Exec,
) -> Result<Vec<DescriptorBlock>> {
    exec.map(confs, |c| compute_block(c, spec)).into_iter().collect()
}

fn neighbor_terms(nl: &[Neighbor], rc2: f64) -> Vec<NeighborTerms> {
    nl.iter()
        .map(|nb| {
            let (fc, dfc) = cutoff_r2(nb.r2, rc2);
            NeighborTerms { fc, dfc }
        })
        .collect()
}

/// `exp(-η R²) f_c` and its derivative with respect to `R²`.
#[inline]
fn radial_shape(eta: f64, r2: f64, t: &NeighborTerms) -> (f64, f64) {
    let e = (-eta * r2).exp();
    (e * t.fc, e * (t.dfc - eta * t.fc))
}

fn scale3(v: &Vec3, s: f64) -> Vec3 {
    [v[0] * s, v[1] * s, v[2] * s]
}

fn compute_eeacsf(conf: &Conformation, spec: &DescriptorSpec) -> DescriptorBlock {
    let n_atoms = conf.n_atoms();
    let n_g = spec.n_g();
    let n_rad = spec.radial.len();
    let rc2 = spec.cutoff * spec.cutoff;
    let infos: Vec<_> = conf
        .numbers
        .iter()
        .map(|&z| elements::element_descriptors(z as u32).expect("validated"))
        .collect();
    let lists = neighbor_lists(&conf.positions, spec.cutoff);
    let mut values = vec![0.0; n_atoms * n_g];
    let mut derivatives = Vec::with_capacity(n_atoms);

    for (n, nl) in lists.iter().enumerate() {
        let terms = neighbor_terms(nl, rc2);
        let mut acc = Accumulator::new(n_g, nl.len() + 1);

        for (i, p) in spec.radial.iter().enumerate() {
            let inv_max = 1.0 / channel_max(p.channel);
            for (q, nb) in nl.iter().enumerate() {
                let h = infos[nb.index].channel(p.channel) * inv_max;
                if h == 0.0 {
                    continue;
                }
                let (v, dv) = radial_shape(p.eta, nb.r2, &terms[q]);
                acc.sums[i] += h * v;
                acc.add_grad(i, q + 1, scale3(&nb.rel, 2.0 * h * dv));
            }
        }

        if !spec.angular.is_empty() && nl.len() >= 2 {
            let pairs = pair_geometries(nl);
            let mut shape = vec![(0.0, 0.0); nl.len()];
            for (k, p) in spec.angular.iter().enumerate() {
                let i = n_rad + k;
                // each unordered pair stands for both orderings
                let pref = 2.0 * 2f64.powf(-p.zeta) / p.h_max();
                for (q, nb) in nl.iter().enumerate() {
                    shape[q] = radial_shape(p.eta, nb.r2, &terms[q]);
                }
                for pg in &pairs {
                    let (na, nb) = (&nl[pg.a], &nl[pg.b]);
                    let h = p.pair_weight(
                        infos[na.index].channel(p.channel),
                        infos[nb.index].channel(p.channel),
                    );
                    let (ea, dea) = shape[pg.a];
                    let (eb, deb) = shape[pg.b];
                    if h == 0.0 || ea == 0.0 || eb == 0.0 {
                        continue;
                    }
                    let base = (1.0 + p.lambda * pg.cos).max(0.0);
                    let pow = base.powf(p.zeta);
                    let dpow = p.zeta * p.lambda * base.powf(p.zeta - 1.0);
                    let w = pref * h;
                    acc.sums[i] += w * pow * ea * eb;
                    let ca = w * dpow * ea * eb;
                    let ra = 2.0 * w * pow * dea * eb;
                    let rb = 2.0 * w * pow * ea * deb;
                    let mut ga = [0.0; 3];
                    let mut gb = [0.0; 3];
                    for c in 0..3 {
                        ga[c] = ca * pg.dcos_a[c] + ra * na.rel[c];
                        gb[c] = ca * pg.dcos_b[c] + rb * nb.rel[c];
                    }
                    acc.add_grad(i, pg.a + 1, ga);
                    acc.add_grad(i, pg.b + 1, gb);
                }
            }
        }

        let grads = acc.finish(&mut values[n * n_g..(n + 1) * n_g]);
        let mut atoms = Vec::with_capacity(nl.len() + 1);
        atoms.push(n);
        atoms.extend(nl.iter().map(|nb| nb.index));
        derivatives.push(CenterDerivatives { atoms, grads });
    }

    DescriptorBlock { n_g, values, derivatives }
}

fn compute_element_pair(
    conf: &Conformation,
    spec: &DescriptorSpec,
    elements: &[u8],
) -> Result<DescriptorBlock> {
    let n_elem = elements.len();
    let slot_of = conf
        .numbers
        .iter()
        .map(|z| {
            elements
                .iter()
                .position(|e| e == z)
                .ok_or_else(|| Error::Mismatch(format!("element Z={z} not in the descriptor element list")))
        })
        .collect::<Result<Vec<_>>>()?;
    let pair_index = |a: usize, b: usize| -> usize {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        // upper-triangular enumeration (0,0),(0,1),...,(0,E-1),(1,1),...
        lo * n_elem - lo * (lo + 1) / 2 + hi
    };
    let n_atoms = conf.n_atoms();
    let n_g = spec.n_g();
    let n_rad = spec.radial.len();
    let n_ang = spec.angular.len();
    let rad_block = n_rad * n_elem;
    let rc2 = spec.cutoff * spec.cutoff;
    let lists = neighbor_lists(&conf.positions, spec.cutoff);
    let mut values = vec![0.0; n_atoms * n_g];
    let mut derivatives = Vec::with_capacity(n_atoms);

    for (n, nl) in lists.iter().enumerate() {
        let terms = neighbor_terms(nl, rc2);
        let mut acc = Accumulator::new(n_g, nl.len() + 1);

        for (pi, p) in spec.radial.iter().enumerate() {
            for (q, nb) in nl.iter().enumerate() {
                let i = slot_of[nb.index] * n_rad + pi;
                let (v, dv) = radial_shape(p.eta, nb.r2, &terms[q]);
                acc.sums[i] += v;
                acc.add_grad(i, q + 1, scale3(&nb.rel, 2.0 * dv));
            }
        }

        if n_ang > 0 && nl.len() >= 2 {
            let pairs = pair_geometries(nl);
            let mut shape = vec![(0.0, 0.0); nl.len()];
            for (pi, p) in spec.angular.iter().enumerate() {
                let pref = 2.0 * 2f64.powf(-p.zeta);
                for (q, nb) in nl.iter().enumerate() {
                    shape[q] = radial_shape(p.eta, nb.r2, &terms[q]);
                }
                for pg in &pairs {
                    let (na, nb) = (&nl[pg.a], &nl[pg.b]);
                    let i = rad_block + pair_index(slot_of[na.index], slot_of[nb.index]) * n_ang + pi;
                    let (ea, dea) = shape[pg.a];
                    let (eb, deb) = shape[pg.b];
                    if ea == 0.0 || eb == 0.0 {
                        continue;
                    }
                    let base = (1.0 + p.lambda * pg.cos).max(0.0);
                    let pow = base.powf(p.zeta);
                    let dpow = p.zeta * p.lambda * base.powf(p.zeta - 1.0);
                    acc.sums[i] += pref * pow * ea * eb;
                    let ca = pref * dpow * ea * eb;
                    let ra = 2.0 * pref * pow * dea * eb;
                    let rb = 2.0 * pref * pow * ea * deb;
                    let mut ga = [0.0; 3];
                    let mut gb = [0.0; 3];
                    for c in 0..3 {
                        ga[c] = ca * pg.dcos_a[c] + ra * na.rel[c];
                        gb[c] = ca * pg.dcos_b[c] + rb * nb.rel[c];
                    }
                    acc.add_grad(i, pg.a + 1, ga);
                    acc.add_grad(i, pg.b + 1, gb);
                }
            }
        }

        let grads = acc.finish(&mut values[n * n_g..(n + 1) * n_g]);
        let mut atoms = Vec::with_capacity(nl.len() + 1);
        atoms.push(n);
        atoms.extend(nl.iter().map(|nb| nb.index));
        derivatives.push(CenterDerivatives { atoms, grads });
    }

    Ok(DescriptorBlock { n_g, values, derivatives })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn conf(numbers: &[u8], positions: &[Vec3]) -> Conformation {
        Conformation::new(numbers.to_vec(), positions.to_vec())
    }

    fn single(spec_radial: Vec<RadialParam>, spec_angular: Vec<AngularParam>, rc: f64) -> DescriptorSpec {
        DescriptorSpec {
            cutoff: rc,
            radial: spec_radial,
            angular: spec_angular,
            mode: DescriptorMode::EeAcsf,
        }
    }

    /// Literal double sum over ordered neighbor pairs, values only.
    fn literal_eeacsf(c: &Conformation, spec: &DescriptorSpec) -> Vec<f64> {
        let n = c.n_atoms();
        let mut out = Vec::new();
        let dist = |a: usize, b: usize| {
            let d = [
                c.positions[b][0] - c.positions[a][0],
                c.positions[b][1] - c.positions[a][1],
                c.positions[b][2] - c.positions[a][2],
            ];
            (d, (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt())
        };
        let h = |z: u8, ch: Channel| elements::element_descriptors(z as u32).unwrap().channel(ch);
        for a in 0..n {
            for p in &spec.radial {
                let mut s = 0.0;
                for j in 0..n {
                    if j == a {
                        continue;
                    }
                    let (_, r) = dist(a, j);
                    s += h(c.numbers[j], p.channel) * (-p.eta * r * r).exp() * cutoff(r, spec.cutoff);
                }
                out.push((s / channel_max(p.channel)).sqrt());
            }
            for p in &spec.angular {
                let mut s = 0.0;
                for j in 0..n {
                    for k in 0..n {
                        if j == a || k == a || k == j {
                            continue;
                        }
                        let (dj, rj) = dist(a, j);
                        let (dk, rk) = dist(a, k);
                        let cos = (dj[0] * dk[0] + dj[1] * dk[1] + dj[2] * dk[2]) / (rj * rk);
                        let hh = p.pair_weight(h(c.numbers[j], p.channel), h(c.numbers[k], p.channel));
                        s += hh
                            * (1.0 + p.lambda * cos).max(0.0).powf(p.zeta)
                            * (-p.eta * (rj * rj + rk * rk)).exp()
                            * cutoff(rj, spec.cutoff)
                            * cutoff(rk, spec.cutoff);
                    }
                }
                out.push((2f64.powf(-p.zeta) / p.h_max() * s).sqrt());
            }
        }
        out
    }

    fn random_conf(rng: &mut ChaCha8Rng, n: usize) -> Conformation {
        let zs = [1u8, 6, 8, 17, 26, 35];
        let numbers = (0..n).map(|_| zs[rng.gen_range(0..zs.len())]).collect();
        let positions = (0..n)
            .map(|_| [rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..2.5)])
            .collect();
        Conformation::new(numbers, positions)
    }

    fn mixed_spec() -> DescriptorSpec {
        DescriptorGrid {
            cutoff: 6.0,
            radial_channels: Channel::ALL.to_vec(),
            eta_rad: vec![0.0, 0.3],
            angular_channels: Channel::ALL.to_vec(),
            eta_ang: vec![0.05],
            lambdas: vec![-1.0, 1.0],
            zetas: vec![1.0, 2.409421],
        }
        .build()
    }

    #[test]
    fn cutoff_examples() {
        assert_eq!(cutoff(0.0, 12.0), 1.0);
        assert_eq!(cutoff(12.0, 12.0), 0.0);
        assert_eq!(cutoff(13.0, 12.0), 0.0);
        let r = (0.5f64).sqrt() * 12.0;
        assert_abs_diff_eq!(cutoff(r, 12.0), (-1.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn radial_examples() {
        let unity = single(vec![RadialParam { channel: Channel::Unity, eta: 0.0 }], vec![], 12.0);
        let b = compute_block(&conf(&[1, 1], &[[0.0; 3], [1e-9, 0.0, 0.0]]), &unity).unwrap();
        assert_abs_diff_eq!(b.row(0)[0], 1.0, epsilon = 1e-12);

        let b = compute_block(&conf(&[1, 1], &[[0.0; 3], [20.0, 0.0, 0.0]]), &unity).unwrap();
        assert_eq!(b.row(0)[0], 0.0);

        let mbar = single(vec![RadialParam { channel: Channel::MBar, eta: 0.0 }], vec![], 12.0);
        let b = compute_block(&conf(&[6, 1], &[[0.0; 3], [6.0, 0.0, 0.0]]), &mbar).unwrap();
        let expected = ((8.0 / 8.0) * cutoff(6.0, 12.0)).sqrt();
        assert_abs_diff_eq!(b.row(0)[0], expected, epsilon = 1e-15);
    }

    #[test]
    fn angular_examples() {
        let p = AngularParam { channel: Channel::Unity, gamma: 1.0, eta: 0.0, lambda: 1.0, zeta: 1.0 };
        let spec = single(vec![], vec![p], 12.0);
        let b = compute_block(&conf(&[1, 1], &[[0.0; 3], [1.0, 0.0, 0.0]]), &spec).unwrap();
        assert_eq!(b.row(0)[0], 0.0);

        // two neighbors on top of each other, close to the center
        let c = conf(&[1, 1, 1], &[[0.0; 3], [1e-7, 0.0, 0.0], [1e-7, 0.0, 0.0]]);
        let b = compute_block(&c, &spec).unwrap();
        assert_abs_diff_eq!(b.row(0)[0], 2f64.sqrt(), epsilon = 1e-9);
        assert_abs_diff_eq!(b.row(0)[0], literal_eeacsf(&c, &spec)[0], epsilon = 1e-12);

        let q = AngularParam { channel: Channel::M, gamma: -1.0, eta: 0.0, lambda: 1.0, zeta: 1.0 };
        assert_eq!(q.pair_weight(4.0, 4.0), 1.0);
        assert_eq!(q.pair_weight(0.0, 0.0), 0.0);
        assert_eq!(q.pair_weight(0.0, 8.0), 9.0);
        assert_eq!(p.pair_weight(1.0, 1.0), 2.0);
    }

    #[test]
    fn counts() {
        assert_eq!(descriptor_count(5, 5, 5, 2, 2, 3), (25, 108));
        assert_eq!(descriptor_count(7, 7, 5, 2, 2, 3), (35, 132));
        assert_eq!(descriptor_count(channel_count(false), channel_count(false), 9, 2, 2, 3), (45, 108));
        let spec = DescriptorSpec::reference();
        assert_eq!(spec.radial.len(), 45);
        assert_eq!(spec.angular.len(), 108);
        assert_eq!(spec.n_g(), 153);
        spec.validate().unwrap();
        let grid = DescriptorGrid {
            radial_channels: Channel::ALL.to_vec(),
            eta_rad: vec![0.0, 0.01, 0.02, 0.05, 0.1],
            angular_channels: Channel::ALL.to_vec(),
            ..DescriptorGrid::reference()
        };
        let spec = grid.build();
        assert_eq!((spec.radial.len(), spec.angular.len()), (35, 132));
    }

    #[test]
    fn fast_path_matches_literal_double_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = mixed_spec();
        for _ in 0..20 {
            let c = random_conf(&mut rng, 6);
            let b = compute_block(&c, &spec).unwrap();
            let lit = literal_eeacsf(&c, &spec);
            for (x, y) in b.values.iter().zip(&lit) {
                assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = mixed_spec();
        let h = 1e-5;
        for _ in 0..5 {
            let c = random_conf(&mut rng, 5);
            let b = compute_block(&c, &spec).unwrap();
            for atom in 0..c.n_atoms() {
                for k in 0..3 {
                    let mut plus = c.clone();
                    plus.positions[atom][k] += h;
                    let mut minus = c.clone();
                    minus.positions[atom][k] -= h;
                    let bp = compute_block(&plus, &spec).unwrap();
                    let bm = compute_block(&minus, &spec).unwrap();
                    for center in 0..c.n_atoms() {
                        for i in 0..b.n_g {
                            let fd = (bp.row(center)[i] - bm.row(center)[i]) / (2.0 * h);
                            let an = b.gradient(center, i, atom)[k];
                            assert!(
                                (fd - an).abs() <= 1e-6 * (1.0 + an.abs()),
                                "center {center} desc {i} atom {atom}: {an} vs {fd}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn element_pair_counts_and_single_element_degeneracy() {
        let eta_rad: Vec<f64> = (0..9).map(|k| 0.05 * k as f64).collect();
        let radial: Vec<RadialParam> =
            eta_rad.iter().map(|&eta| RadialParam { channel: Channel::Unity, eta }).collect();
        let spec = DescriptorSpec {
            cutoff: 6.0,
            radial: radial.clone(),
            angular: vec![],
            mode: DescriptorMode::ElementPair { elements: vec![1, 6, 8, 17] },
        };
        assert_eq!(spec.n_g(), 36);

        let angular = vec![
            AngularParam { channel: Channel::Unity, gamma: 1.0, eta: 0.01, lambda: 1.0, zeta: 1.0 },
            AngularParam { channel: Channel::Unity, gamma: 1.0, eta: 0.09, lambda: -1.0, zeta: 2.5 },
        ];
        let ee = single(radial.clone(), angular.clone(), 6.0);
        let acsf = DescriptorSpec {
            mode: DescriptorMode::ElementPair { elements: vec![6] },
            ..ee.clone()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = random_conf(&mut rng, 6);
        let c = Conformation::new(vec![6; 6], c.positions);
        assert_eq!(
            compute_block(&c, &ee).unwrap().values,
            compute_block_acsf(&c, &acsf).unwrap().values
        );
    }

    #[test]
    fn isolated_atom_has_zero_values_and_finite_derivatives() {
        let spec = mixed_spec();
        let b = compute_block(&conf(&[6], &[[0.0; 3]]), &spec).unwrap();
        assert!(b.values.iter().all(|&v| v == 0.0));
        assert!(b.derivatives[0].grads.iter().flatten().all(|x| *x == 0.0));
    }

    #[test]
    fn rejects_bad_input() {
        let spec = mixed_spec();
        assert!(matches!(
            compute_block(&conf(&[60], &[[0.0; 3]]), &spec),
            Err(Error::UnsupportedElement(60))
        ));
        assert!(matches!(
            compute_block(&conf(&[1], &[[f64::NAN, 0.0, 0.0]]), &spec),
            Err(Error::NonFinite(_))
        ));
        let mut bad = spec.clone();
        bad.angular[0].gamma = -1.0;
        assert!(bad.validate().is_err());
    }
}
