#![allow(dead_code)]

pub mod optim;

use lmlp::storage::Config;
use lmlp::synth::{generate, toy_config, ToySpec};
use lmlp::Conformation;

pub fn spec(s: &str) -> ToySpec {
    s.parse().unwrap()
}

/// Small, fast configuration for plumbing tests.
pub fn small_config(system: &str, seed: u64) -> Config {
    let mut c = toy_config(&spec(system)).unwrap();
    c.descriptors.eta_rad = vec![0.0, 0.3];
    c.descriptors.zetas = vec![1.0];
    c.network.hidden = vec![6];
    c.trainer.seed = seed;
    c.trainer.eval_cap = 10;
    c.trainer.log_every = 1;
    c
}

pub fn data(system: &str, n: usize, seed: u64) -> Vec<Conformation> {
    generate(&spec(system), n, seed).unwrap()
}

use lmlp::descriptors::{compute_block, DescriptorSpec};
use lmlp::Vec3;
use rand::Rng;

/// `n` atoms in a 4 Å box, at least 0.8 Å apart.
pub fn random_conf(rng: &mut impl Rng, n: usize, elements: &[u8]) -> Conformation {
    let mut positions: Vec<Vec3> = Vec::new();
    while positions.len() < n {
        let p = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        if positions.iter().all(|q| (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>() > 0.64) {
            positions.push(p);
        }
    }
    let numbers = (0..n).map(|_| elements[rng.gen_range(0..elements.len())]).collect();
    Conformation::new(numbers, positions)
}

/// Rotation matrix of a uniformly random unit quaternion.
pub fn random_rotation(rng: &mut impl Rng) -> [[f64; 3]; 3] {
    let q: Vec<f64> = loop {
        let q: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n2: f64 = q.iter().map(|x| x * x).sum();
        if n2 > 1e-3 && n2 <= 1.0 {
            break q.iter().map(|x| x / n2.sqrt()).collect();
        }
    };
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn rotate(c: &Conformation, r: &[[f64; 3]; 3]) -> Conformation {
    let positions = c.positions.iter().map(|p| [0, 1, 2].map(|i| (0..3).map(|k| r[i][k] * p[k]).sum())).collect();
    Conformation { positions, ..c.clone() }
}

/// Largest |G(rotated) - G|.
pub fn rotation_error(c: &Conformation, spec: &DescriptorSpec, r: &[[f64; 3]; 3]) -> f64 {
    let a = compute_block(c, spec).unwrap();
    let b = compute_block(&rotate(c, r), spec).unwrap();
    a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest |Σ_atoms ∂G_center,i/∂r_atom| component.
pub fn sum_rule_error(c: &Conformation, spec: &DescriptorSpec) -> f64 {
    let b = compute_block(c, spec).unwrap();
    let mut worst = 0.0f64;
    for d in &b.derivatives {
        for i in 0..b.n_g {
            for k in 0..3 {
                let s: f64 = (0..d.atoms.len()).map(|slot| d.grads[slot * b.n_g + i][k]).sum();
                worst = worst.max(s.abs());
            }
        }
    }
    worst
}

/// Central-difference check of ∂G/∂r. For every descriptor value G_center,i
/// the largest component error over all atom coordinates is divided by the
/// largest analytic component, and the worst ratio is returned.
pub fn derivative_error(c: &Conformation, spec: &DescriptorSpec, h: f64) -> f64 {
    let b = compute_block(c, spec).unwrap();
    let n = c.n_atoms();
    // [center][i] -> (max |fd - an|, max |an|)
    let mut acc = vec![vec![(0.0f64, 0.0f64); b.n_g]; n];
    for atom in 0..n {
        for k in 0..3 {
            let mut plus = c.clone();
            plus.positions[atom][k] += h;
            let mut minus = c.clone();
            minus.positions[atom][k] -= h;
            let (bp, bm) = (compute_block(&plus, spec).unwrap(), compute_block(&minus, spec).unwrap());
            for center in 0..n {
                for i in 0..b.n_g {
                    let fd = (bp.row(center)[i] - bm.row(center)[i]) / (2.0 * h);
                    let an = b.gradient(center, i, atom)[k];
                    let e = &mut acc[center][i];
                    e.0 = e.0.max((fd - an).abs());
                    e.1 = e.1.max(an.abs());
                }
            }
        }
    }
    acc.iter().flatten().map(|&(err, scale)| if err == 0.0 { 0.0 } else { err / scale }).fold(0.0, f64::max)
}

/// Whether every row of the permuted conformation equals the matching original row bitwise.
pub fn permutation_exact(c: &Conformation, spec: &DescriptorSpec, perm: &[usize]) -> bool {
    let p = Conformation {
        numbers: perm.iter().map(|&i| c.numbers[i]).collect(),
        positions: perm.iter().map(|&i| c.positions[i]).collect(),
        ..c.clone()
    };
    let (a, b) = (compute_block(c, spec).unwrap(), compute_block(&p, spec).unwrap());
    perm.iter().enumerate().all(|(new, &old)| a.row(old) == b.row(new))
}

/// Translation by whole Å of coordinates on a 1/64 Å grid is exact in floating point,
/// so the descriptors must agree bitwise.
pub fn translation_exact(c: &Conformation, spec: &DescriptorSpec, shift: [i32; 3]) -> bool {
    let snap = |x: f64| (x * 64.0).round() / 64.0;
    let base = Conformation { positions: c.positions.iter().map(|p| p.map(snap)).collect(), ..c.clone() };
    let moved = Conformation {
        positions: base.positions.iter().map(|p| [0, 1, 2].map(|k| p[k] + shift[k] as f64)).collect(),
        ..base.clone()
    };
    compute_block(&base, spec).unwrap().values == compute_block(&moved, spec).unwrap().values
}
