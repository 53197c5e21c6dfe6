//! Independent Adam and RPROP on a fixed quadratic, for checking the CoRe presets.

use lmlp::network::{GroupKind, ParamGroup};
use lmlp::optimizer::{CoreConfig, Optimizer, OptimizerConfig};

pub const N: usize = 6;
pub const CURV: [f64; N] = [0.5, 2.0, 1.0, 3.5, 0.1, 1.3];
pub const TARGET: [f64; N] = [1.0, -0.5, 0.25, 2.0, -1.5, 0.3];

pub fn grad(w: &[f64]) -> Vec<f64> {
    w.iter().enumerate().map(|(k, x)| 2.0 * CURV[k] * (x - TARGET[k])).collect()
}

pub fn groups() -> Vec<ParamGroup> {
    vec![
        ParamGroup { network: 0, element: 1, kind: GroupKind::Weights(0), range: 0..3, is_output: false },
        ParamGroup { network: 0, element: 1, kind: GroupKind::Bias(0), range: 3..N, is_output: false },
    ]
}

pub fn core_trajectory(config: CoreConfig, steps: usize, scale: f64) -> Vec<Vec<f64>> {
    let mut opt = Optimizer::with_groups(OptimizerConfig::Core(config), groups(), 1, N).unwrap();
    let mut p = vec![vec![0.0; N]];
    let mut out = Vec::new();
    for _ in 0..steps {
        let g: Vec<f64> = grad(&p[0]).iter().map(|x| x * scale).collect();
        opt.step_params(&mut p, &[Some(g)]).unwrap();
        out.push(p[0].clone());
    }
    out
}

pub fn adam_oracle(lr: f64, steps: usize) -> Vec<Vec<f64>> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut w = vec![0.0; N];
    let mut m = [0.0; N];
    let mut v = [0.0; N];
    let mut out = Vec::new();
    for t in 1..=steps {
        let g = grad(&w);
        for k in 0..N {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let mh = m[k] / (1.0 - b1.powi(t as i32));
            let vh = v[k] / (1.0 - b2.powi(t as i32));
            w[k] -= lr * mh / (vh.sqrt() + eps);
        }
        out.push(w.clone());
    }
    out
}

pub fn rprop_oracle(steps: usize) -> Vec<Vec<f64>> {
    let (inc, dec, dmin, dmax) = (1.2, 0.5, 1e-6, 50.0);
    let mut w = vec![0.0; N];
    let mut delta = [1e-3; N];
    let mut prev = [0.0; N];
    let mut out = Vec::new();
    for _ in 0..steps {
        let g = grad(&w);
        for k in 0..N {
            let p: f64 = prev[k] * g[k];
            if p > 0.0 {
                delta[k] = f64::min(delta[k] * inc, dmax);
            } else if p < 0.0 {
                delta[k] = f64::max(delta[k] * dec, dmin);
            }
            let sign = if g[k] > 0.0 { 1.0 } else if g[k] < 0.0 { -1.0 } else { 0.0 };
            w[k] -= sign * delta[k];
            prev[k] = g[k];
        }
        out.push(w.clone());
    }
    out
}

/// Largest element-wise difference between two trajectories.
pub fn max_difference(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs())).fold(0.0, f64::max)
}

pub fn assert_close(a: &[Vec<f64>], b: &[Vec<f64>], tol: f64) {
    for (step, (x, y)) in a.iter().zip(b).enumerate() {
        for (p, q) in x.iter().zip(y) {
            assert!((p - q).abs() <= tol, "step {step}: {p} vs {q}");
        }
    }
}

