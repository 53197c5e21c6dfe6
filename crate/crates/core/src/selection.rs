//! Lifelong adaptive data selection.
//!
//! Every training conformation carries an adaptive selection factor
//! `S_hist`, its last loss contribution `L_old` and a strike counter `X`.
//! [`choose_subsample`] splits each epoch's subsample into poorly
//! represented ("bad") conformations, drawn with probability growing with
//! their loss, and well represented ("good") ones kept for rehearsal.
//! [`SelectionState::update`] adapts the factors from the new losses and
//! permanently excludes conformations that are redundant (`S_hist` below
//! `s_min`) or inconsistent (above `s_max`, or too many consecutive strikes).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub s_min: f64,
    pub s_max: f64,
    /// Thresholds are given as square roots and squared on use.
    pub sqrt_t_f1: f64,
    pub sqrt_t_f2: f64,
    pub sqrt_t_f3: f64,
    pub sqrt_t_x: f64,
    pub n_f_minus_minus: u32,
    pub n_f_minus: u32,
    pub n_f_plus: u32,
    pub n_f_plus_plus: u32,
    pub n_x: u32,
    pub p_good_max: f64,
    pub n_p: u32,
    pub epsilon_prime: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            s_min: 0.1,
            s_max: 100.0,
            sqrt_t_f1: 0.9,
            sqrt_t_f2: 1.2,
            sqrt_t_f3: 2.0,
            sqrt_t_x: 7.5,
            n_f_minus_minus: 30,
            n_f_minus: 100,
            n_f_plus: 500,
            n_f_plus_plus: 150,
            n_x: 5,
            p_good_max: 2.0 / 3.0,
            n_p: 20,
            epsilon_prime: 1e-6,
        }
    }
}

/// Factors derived from a [`SelectionConfig`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Factors {
    pub f_minus_minus: f64,
    pub f_minus: f64,
    pub f_plus: f64,
    pub f_plus_plus: f64,
    pub p_step: f64,
    pub t_f1: f64,
    pub t_f2: f64,
    pub t_f3: f64,
    pub t_x: f64,
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.s_min > 0.0 && self.s_min < 1.0) {
            return bad("s_min must lie in (0, 1)");
        }
        if !(self.s_max > 1.0 && self.s_max.is_finite()) {
            return bad("s_max must be greater than 1");
        }
        if [self.n_f_minus_minus, self.n_f_minus, self.n_f_plus, self.n_f_plus_plus, self.n_x, self.n_p].contains(&0) {
            return bad("selection counts must be positive");
        }
        let t = [self.sqrt_t_f1, self.sqrt_t_f2, self.sqrt_t_f3, self.sqrt_t_x];
        if !(t[0] > 0.0 && t[0] < 1.0 && 1.0 < t[1] && t[1] < t[2] && t[2] < t[3] && t[3].is_finite()) {
            return bad("thresholds must satisfy 0 < T_F1 < 1 < T_F2 < T_F3 < T_X");
        }
        if !(self.p_good_max >= 0.0 && self.p_good_max < 1.0) {
            return bad("p_good_max must lie in [0, 1)");
        }
        if !(self.epsilon_prime > 0.0 && self.epsilon_prime.is_finite()) {
            return bad("epsilon_prime must be positive");
        }
        let f = self.factors();
        if !(f.f_minus_minus < f.f_minus && f.f_plus < f.f_plus_plus) {
            return bad("need n_f_minus_minus < n_f_minus and n_f_plus_plus < n_f_plus");
        }
        Ok(())
    }

    pub fn factors(&self) -> Factors {
        Factors {
            f_minus_minus: self.s_min.powf(1.0 / self.n_f_minus_minus as f64),
            f_minus: self.s_min.powf(1.0 / self.n_f_minus as f64),
            f_plus: self.s_max.powf(1.0 / self.n_f_plus as f64),
            f_plus_plus: self.s_max.powf(1.0 / self.n_f_plus_plus as f64),
            p_step: self.p_good_max / self.n_p as f64,
            t_f1: self.sqrt_t_f1 * self.sqrt_t_f1,
            t_f2: self.sqrt_t_f2 * self.sqrt_t_f2,
            t_f3: self.sqrt_t_f3 * self.sqrt_t_f3,
            t_x: self.sqrt_t_x * self.sqrt_t_x,
        }
    }
}

/// (F−−, F−, F+, F++, p_±)
pub fn derive_factors(config: &SelectionConfig) -> Result<(f64, f64, f64, f64, f64)> {
    config.validate()?;
    let f = config.factors();
    Ok((f.f_minus_minus, f.f_minus, f.f_plus, f.f_plus_plus, f.p_step))
}

/// Why a conformation left the training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    /// Selection factor fell below `s_min`.
    Redundant,
    /// Selection factor rose above `s_max`.
    Inconsistent,
    /// `n_x` consecutive strikes.
    Outlier,
}

impl Exclusion {
    pub fn code(self) -> u64 {
        match self {
            Exclusion::Redundant => 1,
            Exclusion::Inconsistent => 2,
            Exclusion::Outlier => 3,
        }
    }

    pub fn from_code(code: u64) -> Result<Option<Self>> {
        match code {
            0 => Ok(None),
            1 => Ok(Some(Exclusion::Redundant)),
            2 => Ok(Some(Exclusion::Inconsistent)),
            3 => Ok(Some(Exclusion::Outlier)),
            _ => Err(Error::Checkpoint(format!("unknown exclusion code {code}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionState {
    pub l_old: Vec<Option<f64>>,
    pub s_hist: Vec<f64>,
    pub strikes: Vec<u32>,
    pub exclusion: Vec<Option<Exclusion>>,
    pub l_bar_old: f64,
    /// `p_good = p_good_level · p_±`
    pub p_good_level: u32,
}

/// Summary of one [`SelectionState::update`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateOutcome {
    pub excluded: Vec<(usize, Exclusion)>,
}

impl SelectionState {
    pub fn new(n: usize) -> Self {
        SelectionState {
            l_old: vec![None; n],
            s_hist: vec![1.0; n],
            strikes: vec![0; n],
            exclusion: vec![None; n],
            l_bar_old: f64::INFINITY,
            p_good_level: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.s_hist.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_hist.is_empty()
    }

    /// Appends fresh entries for newly added conformations.
    pub fn extend(&mut self, n: usize) {
        let m = self.len() + n;
        self.l_old.resize(m, None);
        self.s_hist.resize(m, 1.0);
        self.strikes.resize(m, 0);
        self.exclusion.resize(m, None);
    }

    pub fn p_good(&self, config: &SelectionConfig) -> f64 {
        self.p_good_level as f64 * config.factors().p_step
    }

    pub fn active(&self) -> Vec<usize> {
        (0..self.len()).filter(|&r| self.s_hist[r] > 0.0).collect()
    }

    pub fn n_active(&self) -> usize {
        self.s_hist.iter().filter(|&&s| s > 0.0).count()
    }

    pub fn l_old_max(&self, active: &[usize]) -> Option<f64> {
        active.iter().filter_map(|&r| self.l_old[r]).fold(None, |m, x| Some(m.map_or(x, |m: f64| m.max(x))))
    }

    /// Normalized bad-data probabilities over the active conformations.
    pub fn bad_probabilities(&self, active: &[usize]) -> Vec<f64> {
        let l_max = self.l_old_max(active);
        let s_max = active.iter().map(|&r| self.s_hist[r]).fold(0.0, f64::max);
        let raw: Vec<f64> = active
            .iter()
            .map(|&r| {
                let p = match (self.l_old[r], l_max) {
                    (Some(l), Some(m)) => self.s_hist[r] * l / m,
                    _ => f64::NAN,
                };
                if p.is_nan() {
                    s_max
                } else {
                    p
                }
            })
            .collect();
        normalize(raw)
    }

    /// Normalized good-data probabilities over `candidates` (active and not yet drawn).
    pub fn good_probabilities(&self, candidates: &[usize], l_old_max: Option<f64>, epsilon_prime: f64) -> Vec<f64> {
        let raw: Vec<Option<f64>> = candidates
            .iter()
            .map(|&r| match (self.l_old[r], l_old_max) {
                (Some(l), Some(m)) if l != m => {
                    let p = self.s_hist[r] * (1.0 - l / m);
                    if p.is_nan() {
                        None
                    } else {
                        Some(p)
                    }
                }
                _ => None,
            })
            .collect();
        let min_pos = raw.iter().flatten().filter(|&&p| p > 0.0).fold(f64::INFINITY, |a, &b| a.min(b));
        // an empty minimum leaves min(·, 1) = 1
        let p_min = min_pos.min(1.0) * epsilon_prime;
        normalize(raw.into_iter().map(|p| p.unwrap_or(p_min)).collect())
    }

    /// Adapts factors, strikes and `p_good` from the subsample losses.
    pub fn update(
        &mut self,
        subsample: &[usize],
        l_new: &[f64],
        l_bar_new: f64,
        config: &SelectionConfig,
    ) -> Result<UpdateOutcome> {
        if subsample.len() != l_new.len() {
            return Err(Error::Shape(format!(
                "{} subsample entries but {} losses",
                subsample.len(),
                l_new.len()
            )));
        }
        if let Some(&r) = subsample.iter().find(|&&r| r >= self.len()) {
            return Err(Error::Shape(format!("conformation index {r} outside data set of {}", self.len())));
        }
        if l_new.iter().chain([&l_bar_new]).any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::NonFinite("selection losses must be finite and >= 0".into()));
        }
        let f = config.factors();
        let mut outcome = UpdateOutcome::default();
        for (&r, &l) in subsample.iter().zip(l_new) {
            if self.s_hist[r] == 0.0 {
                continue;
            }
            let l_rel = if l_bar_new == 0.0 { 1.0 } else { l / l_bar_new };
            if l_rel > f.t_x {
                self.strikes[r] += 1;
            } else {
                self.strikes[r] = 0;
            }
            let mut s = self.s_hist[r];
            if l_rel >= f.t_f1 {
                s = s.max(1.0);
            }
            if l_rel <= f.t_f2 {
                s = s.min(1.0);
            }
            if let Some(old) = self.l_old[r] {
                if l_rel < f.t_f1 && l <= old {
                    s *= f.f_minus_minus;
                }
                if l_rel < f.t_f1 && l > old {
                    s *= f.f_minus;
                }
                if f.t_f2 < l_rel && l_rel <= f.t_f3 && l > old {
                    s *= f.f_plus;
                }
                if l_rel > f.t_f3 && l > old {
                    s *= f.f_plus_plus;
                }
            }
            let reason = if self.strikes[r] >= config.n_x {
                Some(Exclusion::Outlier)
            } else if s < config.s_min {
                Some(Exclusion::Redundant)
            } else if s > config.s_max {
                Some(Exclusion::Inconsistent)
            } else {
                None
            };
            if let Some(reason) = reason {
                s = 0.0;
                self.exclusion[r] = Some(reason);
                outcome.excluded.push((r, reason));
            }
            self.s_hist[r] = s;
            self.l_old[r] = Some(l);
        }
        let delta = l_bar_new - self.l_bar_old;
        let max_level = config.n_p;
        if delta > 0.0 {
            self.p_good_level = (self.p_good_level + 1).min(max_level);
        } else if delta < 0.0 {
            self.p_good_level = self.p_good_level.saturating_sub(1);
        }
        self.l_bar_old = l_bar_new;
        Ok(outcome)
    }
}

fn normalize(mut p: Vec<f64>) -> Vec<f64> {
    let sum: f64 = p.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        p.iter_mut().for_each(|x| *x /= sum);
    } else if !p.is_empty() {
        let u = 1.0 / p.len() as f64;
        p.iter_mut().for_each(|x| *x = u);
    }
    p
}

/// Draws `k` distinct positions from `weights` by successive weighted draws
/// with renormalization. Zero total weight falls back to uniform draws.
pub fn weighted_sample_without_replacement<R: Rng + ?Sized>(weights: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let k = k.min(weights.len());
    let mut w = weights.to_vec();
    let mut taken = vec![false; w.len()];
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = w.iter().sum();
        let pick = if total > 0.0 && total.is_finite() {
            let mut x = rng.gen::<f64>() * total;
            let mut chosen = None;
            for (i, &wi) in w.iter().enumerate() {
                if wi <= 0.0 {
                    continue;
                }
                chosen = Some(i);
                if x < wi {
                    break;
                }
                x -= wi;
            }
            chosen.expect("positive total weight")
        } else {
            let free: Vec<usize> = (0..w.len()).filter(|&i| !taken[i]).collect();
            free[rng.gen_range(0..free.len())]
        };
        taken[pick] = true;
        w[pick] = 0.0;
        out.push(pick);
    }
    out
}

/// Chooses the epoch's subsample; returns sorted conformation indices.
pub fn choose_subsample<R: Rng + ?Sized>(
    state: &SelectionState,
    n_fit: usize,
    config: &SelectionConfig,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let active = state.active();
    if active.is_empty() {
        return Err(Error::AllExcluded);
    }
    let n_fit = n_fit.min(active.len());
    let n_good = (state.p_good(config) * n_fit as f64).floor() as usize;
    let n_bad = n_fit - n_good;
    let p_bad = state.bad_probabilities(&active);
    let mut chosen: Vec<usize> = weighted_sample_without_replacement(&p_bad, n_bad, rng)
        .into_iter()
        .map(|i| active[i])
        .collect();
    if n_good > 0 {
        let mut in_fit = vec![false; state.len()];
        chosen.iter().for_each(|&r| in_fit[r] = true);
        let rest: Vec<usize> = active.iter().copied().filter(|&r| !in_fit[r]).collect();
        let l_max = state.l_old_max(&active);
        let p_good = state.good_probabilities(&rest, l_max, config.epsilon_prime);
        chosen.extend(weighted_sample_without_replacement(&p_good, n_good, rng).into_iter().map(|i| rest[i]));
    }
    chosen.sort_unstable();
    Ok(chosen)
}
