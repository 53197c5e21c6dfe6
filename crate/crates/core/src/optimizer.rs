//! The CoRe optimizer and a plain SGD baseline.
//!
//! CoRe keeps Adam-style moving averages of the gradient and squared
//! gradient, with a first-moment decay rate that drifts from `beta1_a` to
//! `beta1_b` along a Gaussian in the step counter. Each weight additionally
//! carries an RPROP step size, a decay toward zero and an importance score.
//! Once a group has taken more than `t_hist` steps, its highest-scoring
//! weights are frozen for the step.
//!
//! Step counters are per group, so networks of elements that are absent from
//! a subsample do not advance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{GroupKind, ParamGroup, WeightSet};
use crate::potential::WeightGradient;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoreConfig {
    pub beta1_a: f64,
    pub beta1_b: f64,
    pub beta1_c: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub eta_minus: f64,
    pub eta_plus: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub s0: f64,
    pub t_hist: u64,
    /// Use `sgn(g)` as the update factor.
    pub sign_variant: bool,
    pub decay_hidden: f64,
    pub decay_standardization: f64,
    pub decay_output: f64,
    /// Fractions of each group frozen by the plasticity factor.
    pub frozen_hidden: f64,
    pub frozen_standardization: f64,
    pub frozen_output: f64,
}

impl Default for CoreConfig {
    fn default() -> Self {
        CoreConfig {
            beta1_a: 0.45,
            beta1_b: 0.7,
            beta1_c: 500.0,
            beta2: 0.999,
            epsilon: 1e-8,
            eta_minus: 0.5,
            eta_plus: 1.2,
            s_min: 1e-6,
            s_max: 1.0,
            s0: 1e-3,
            t_hist: 500,
            sign_variant: false,
            decay_hidden: 0.1,
            decay_standardization: 0.01,
            decay_output: 0.0,
            frozen_hidden: 0.01,
            frozen_standardization: 0.0,
            frozen_output: 0.0,
        }
    }
}

impl CoreConfig {
    /// Settings under which CoRe performs Adam with learning rate `lr`.
    pub fn adam(lr: f64) -> Self {
        CoreConfig {
            beta1_a: 0.9,
            beta1_b: 0.9,
            eta_minus: 1.0,
            eta_plus: 1.0,
            s0: lr,
            s_min: lr.min(1e-6),
            s_max: lr.max(1.0),
            ..CoreConfig::without_regularization(CoreConfig::default())
        }
    }

    /// Settings under which CoRe performs RPROP without backtracking.
    pub fn rprop() -> Self {
        CoreConfig {
            beta1_a: 0.0,
            beta1_b: 0.0,
            beta2: 0.0,
            sign_variant: true,
            s_max: 50.0,
            ..CoreConfig::without_regularization(CoreConfig::default())
        }
    }

    fn without_regularization(self) -> Self {
        CoreConfig {
            decay_hidden: 0.0,
            decay_standardization: 0.0,
            decay_output: 0.0,
            frozen_hidden: 0.0,
            frozen_standardization: 0.0,
            frozen_output: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        for (name, b) in [("beta1_a", self.beta1_a), ("beta1_b", self.beta1_b), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.beta1_c > 0.0) {
            return bad(format!("beta1_c must be positive, got {}", self.beta1_c));
        }
        if !(self.epsilon >= 0.0) {
            return bad(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        if !(self.eta_minus > 0.0 && self.eta_minus <= 1.0 && self.eta_plus >= 1.0) {
            return bad("step factors need 0 < eta_minus <= 1 <= eta_plus".into());
        }
        if !(self.s_min > 0.0 && self.s_min <= self.s0 && self.s0 <= self.s_max && self.s_max.is_finite()) {
            return bad(format!(
                "step sizes need 0 < s_min <= s0 <= s_max, got {} / {} / {}",
                self.s_min, self.s0, self.s_max
            ));
        }
        if self.t_hist == 0 {
            return bad("t_hist must be positive".into());
        }
        for d in [self.decay_hidden, self.decay_standardization, self.decay_output] {
            if !(d >= 0.0 && d * self.s_max < 1.0) {
                return bad(format!("weight decay {d} must lie in [0, 1/s_max)"));
            }
        }
        for f in [self.frozen_hidden, self.frozen_standardization, self.frozen_output] {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("frozen fraction {f} must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn beta1(&self, tau: u64) -> f64 {
        beta1_schedule(tau, self.beta1_a, self.beta1_b, self.beta1_c)
    }
}

/// β₁ at step `tau`: `b + (a - b) exp(-((tau - 1)/c)²)`.
pub fn beta1_schedule(tau: u64, a: f64, b: f64, c: f64) -> f64 {
    let x = (tau.max(1) - 1) as f64 / c;
    b + (a - b) * (-x * x).exp()
}

/// Optimizer selection for training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Core(CoreConfig),
    Sgd { lr: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Core(CoreConfig::default())
    }
}

impl OptimizerConfig {
    pub const SGD_LR: f64 = 0.00075;

    pub fn validate(&self) -> Result<()> {
        match self {
            OptimizerConfig::Core(c) => c.validate(),
            OptimizerConfig::Sgd { lr } if *lr > 0.0 && lr.is_finite() => Ok(()),
            OptimizerConfig::Sgd { lr } => Err(Error::Config(format!("SGD learning rate must be positive, got {lr}"))),
        }
    }

    /// Parses a preset name: `core`, `adam`, `rprop` or `sgd`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "core" => Ok(OptimizerConfig::Core(CoreConfig::default())),
            "adam" => Ok(OptimizerConfig::Core(CoreConfig::adam(1e-3))),
            "rprop" => Ok(OptimizerConfig::Core(CoreConfig::rprop())),
            "sgd" => Ok(OptimizerConfig::Sgd { lr: Self::SGD_LR }),
            _ => Err(Error::Config(format!("unknown optimizer '{name}'"))),
        }
    }
}

/// Freeze mask of one group: 0 for the `n_frozen` highest scores once
/// `tau > t_hist`, 1 otherwise. Ties go to the lower index.
pub fn plasticity_mask(scores: &[f64], n_frozen: usize, tau: u64, t_hist: u64) -> Result<Vec<u8>> {
    if n_frozen > 0 && n_frozen >= scores.len() {
        return Err(Error::Config(format!(
            "n_frozen = {n_frozen} must be smaller than the group size {}",
            scores.len()
        )));
    }
    let mut mask = vec![1u8; scores.len()];
    if tau > t_hist && n_frozen > 0 {
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("importance score".into()));
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        for &k in &order[..n_frozen] {
            mask[k] = 0;
        }
    }
    Ok(mask)
}

/// Per-group [`plasticity_mask`].
pub fn plasticity_masks(scores: &[&[f64]], n_frozen: &[usize], tau: &[u64], t_hist: u64) -> Result<Vec<Vec<u8>>> {
    scores
        .iter()
        .zip(n_frozen)
        .zip(tau)
        .map(|((s, &n), &t)| plasticity_mask(s, n, t, t_hist))
        .collect()
}

/// Layer role of a parameter group for decay and freezing defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupClass {
    Standardization,
    Hidden,
    Output,
}

impl GroupClass {
    pub fn of(group: &ParamGroup) -> Self {
        match group.kind {
            GroupKind::Alpha | GroupKind::Beta => GroupClass::Standardization,
            _ if group.is_output => GroupClass::Output,
            _ => GroupClass::Hidden,
        }
    }
}

/// Per-weight optimizer memory. Vectors are indexed like the network
/// parameters; `tau` like the group list.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub g: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
    pub score: Vec<Vec<f64>>,
    pub tau: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub groups: Vec<ParamGroup>,
    pub decay: Vec<f64>,
    pub n_frozen: Vec<usize>,
    pub state: OptimizerState,
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, weights: &WeightSet) -> Result<Self> {
        let len = weights.param_layout().len;
        Self::with_groups(config, weights.groups(), weights.networks.len(), len)
    }

    /// Optimizer over `n_networks` flat vectors of length `len` partitioned by `groups`.
    pub fn with_groups(config: OptimizerConfig, groups: Vec<ParamGroup>, n_networks: usize, len: usize) -> Result<Self> {
        config.validate()?;
        let (decay, n_frozen) = match &config {
            OptimizerConfig::Core(c) => groups
                .iter()
                .map(|g| {
                    let (d, f) = match GroupClass::of(g) {
                        GroupClass::Standardization => (c.decay_standardization, c.frozen_standardization),
                        GroupClass::Hidden => (c.decay_hidden, c.frozen_hidden),
                        GroupClass::Output => (c.decay_output, c.frozen_output),
                    };
                    let n = (f * g.len() as f64).floor() as usize;
                    if n > 0 && n >= g.len() {
                        return Err(Error::Config(format!(
                            "n_frozen = {n} must be smaller than the group size {}",
                            g.len()
                        )));
                    }
                    Ok((d, n))
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip(),
            OptimizerConfig::Sgd { .. } => (vec![0.0; groups.len()], vec![0; groups.len()]),
        };
        let s0 = match &config {
            OptimizerConfig::Core(c) => c.s0,
            OptimizerConfig::Sgd { lr } => *lr,
        };
        let state = OptimizerState {
            g: vec![vec![0.0; len]; n_networks],
            h: vec![vec![0.0; len]; n_networks],
            s: vec![vec![s0; len]; n_networks],
            score: vec![vec![0.0; len]; n_networks],
            tau: vec![0; groups.len()],
        };
        Ok(Optimizer { config, groups, decay, n_frozen, state })
    }

    /// One update of every group whose network has a gradient.
    pub fn step(&mut self, weights: &mut WeightSet, grad: &WeightGradient) -> Result<()> {
        let mut params: Vec<Vec<f64>> = weights.networks.iter_mut().map(|n| std::mem::take(&mut n.params)).collect();
        let r = self.step_params(&mut params, &grad.per_network);
        for (n, p) in weights.networks.iter_mut().zip(params) {
            n.params = p;
        }
        r
    }

    /// Same as [`Optimizer::step`] on bare parameter vectors.
    pub fn step_params(&mut self, params: &mut [Vec<f64>], grads: &[Option<Vec<f64>>]) -> Result<()> {
        self.check(params, grads)?;
        let masks = self.masks(grads)?;
        for (gi, group) in self.groups.iter().enumerate() {
            let Some(grad) = &grads[group.network] else { continue };
            self.state.tau[gi] += 1;
            let tau = self.state.tau[gi];
            let net = group.network;
            match &self.config {
                OptimizerConfig::Sgd { lr } => {
                    for k in group.range.clone() {
                        params[net][k] -= lr * grad[k];
                    }
                }
                OptimizerConfig::Core(c) => {
                    let b1 = c.beta1(tau);
                    let ti = tau.min(i32::MAX as u64) as i32;
                    let corr1 = 1.0 - b1.powi(ti);
                    let corr2 = 1.0 - c.beta2.powi(ti);
                    let inv_t = 1.0 / c.t_hist as f64;
                    let d = self.decay[gi];
                    let mask = &masks[gi];
                    for (m, k) in group.range.clone().enumerate() {
                        let gr = grad[k];
                        let g_old = self.state.g[net][k];
                        let g_new = b1 * g_old + (1.0 - b1) * gr;
                        let h = c.beta2 * self.state.h[net][k] + (1.0 - c.beta2) * gr * gr;
                        self.state.g[net][k] = g_new;
                        self.state.h[net][k] = h;
                        let u = if c.sign_variant {
                            sgn(g_new)
                        } else {
                            (g_new / corr1) / ((h / corr2).sqrt() + c.epsilon)
                        };
                        let increment = if mask.as_ref().is_none_or(|mk| mk[m] == 1) {
                            let s = &mut self.state.s[net][k];
                            let p = g_old * g_new;
                            if p > 0.0 {
                                *s = (c.eta_plus * *s).min(c.s_max);
                            } else if p < 0.0 {
                                *s = (c.eta_minus * *s).max(c.s_min);
                            }
                            let w = &mut params[net][k];
                            *w = (1.0 - d * u.abs() * *s) * *w - u * *s;
                            g_new * u * *s
                        } else {
                            0.0
                        };
                        let sc = &mut self.state.score[net][k];
                        *sc = if tau <= c.t_hist {
                            *sc + inv_t * increment
                        } else {
                            (1.0 - inv_t) * *sc + inv_t * increment
                        };
                    }
                }
            }
        }
        Ok(())
    }

    fn check(&self, params: &[Vec<f64>], grads: &[Option<Vec<f64>>]) -> Result<()> {
        if params.len() != self.state.g.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} networks, got {} parameter and {} gradient vectors",
                self.state.g.len(),
                params.len(),
                grads.len()
            )));
        }
        for (p, (g, st)) in params.iter().zip(grads.iter().zip(&self.state.g)) {
            if p.len() != st.len() {
                return Err(Error::Shape("parameter vector length changed".into()));
            }
            if let Some(g) = g {
                if g.len() != p.len() {
                    return Err(Error::Shape(format!("gradient has {} entries, expected {}", g.len(), p.len())));
                }
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite("gradient".into()));
                }
            }
        }
        Ok(())
    }

    fn masks(&self, grads: &[Option<Vec<f64>>]) -> Result<Vec<Option<Vec<u8>>>> {
        let OptimizerConfig::Core(c) = &self.config else {
            return Ok(vec![None; self.groups.len()]);
        };
        self.groups
            .iter()
            .enumerate()
            .map(|(gi, group)| {
                if grads[group.network].is_none() || self.n_frozen[gi] == 0 {
                    return Ok(None);
                }
                let scores = &self.state.score[group.network][group.range.clone()];
                plasticity_mask(scores, self.n_frozen[gi], self.state.tau[gi] + 1, c.t_hist).map(Some)
            })
            .collect()
    }
}
