//! Complete training state in a [`Container`](super::container::Container).
//!
//! Besides the weights, a checkpoint holds everything needed to continue a
//! run as if it had never stopped: the optimizer memory of every weight, the
//! selection state of every training conformation, the train/test split and
//! the position of the random stream.

use std::collections::BTreeMap;
use std::path::Path;

use super::config::Config;
use super::container::Container;
use crate::conformation::ConformationId;
use crate::descriptors::{AngularParam, DescriptorMode, DescriptorSpec, RadialParam};
use crate::elements::Channel;
use crate::error::{Error, Result};
use crate::network::{Activation, AtomicNetwork, NetworkLayout, WeightSet};
use crate::optimizer::OptimizerState;
use crate::potential::ReferenceEnergies;
use crate::selection::{Exclusion, SelectionState};

/// Run bookkeeping stored next to the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Metadata {
    pub seed: u64,
    /// Completed epochs.
    pub epoch: u64,
    /// Late-data batches added so far.
    pub n_injections: u64,
    /// Word position of the subsampling random stream.
    pub rng_word_pos: u128,
    /// Test-set energy RMSE per atom (eV/atom) of the final weights.
    pub rmse_floor_energy: f64,
    /// Test-set force RMSE (eV/Å).
    pub rmse_floor_force: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: Config,
    pub spec: DescriptorSpec,
    pub weights: WeightSet,
    pub refs: ReferenceEnergies,
    pub optimizer: OptimizerState,
    /// Indexed like `train_ids`.
    pub selection: SelectionState,
    pub train_ids: Vec<ConformationId>,
    pub test_ids: Vec<ConformationId>,
    /// Positions in `train_ids` / `test_ids` used for per-epoch RMSE estimates.
    pub train_eval: Vec<usize>,
    pub test_eval: Vec<usize>,
    pub meta: Metadata,
}

impl Checkpoint {
    pub fn elements(&self) -> Vec<u8> {
        self.weights.elements()
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::default();
        c.push_bytes("config", self.config.to_toml_string()?.into_bytes())?;
        put_spec(&mut c, &self.spec)?;
        put_weights(&mut c, &self.weights)?;

        let (els, refs): (Vec<u64>, Vec<f64>) = self.refs.0.iter().map(|(&z, &e)| (z as u64, e)).unzip();
        c.push_u64("refs.elements", vec![els.len() as u64], els)?;
        c.push_f64("refs.energies", vec![refs.len() as u64], refs)?;

        let o = &self.optimizer;
        c.push_u64("opt.tau", vec![o.tau.len() as u64], o.tau.clone())?;
        for (name, v) in [("opt.g", &o.g), ("opt.h", &o.h), ("opt.s", &o.s), ("opt.score", &o.score)] {
            put_matrix(&mut c, name, v)?;
        }

        let s = &self.selection;
        let n = s.len() as u64;
        if self.train_ids.len() != s.len() {
            return Err(Error::Shape(format!("{} training ids for {} selection entries", self.train_ids.len(), s.len())));
        }
        put_ids(&mut c, "split.train", &self.train_ids)?;
        put_ids(&mut c, "split.test", &self.test_ids)?;
        c.push_u64("split.train_eval", vec![self.train_eval.len() as u64], self.train_eval.iter().map(|&i| i as u64).collect())?;
        c.push_u64("split.test_eval", vec![self.test_eval.len() as u64], self.test_eval.iter().map(|&i| i as u64).collect())?;
        c.push_f64("sel.l_old", vec![n], s.l_old.iter().map(|l| l.unwrap_or(f64::NAN)).collect())?;
        c.push_f64("sel.s_hist", vec![n], s.s_hist.clone())?;
        c.push_u64("sel.strikes", vec![n], s.strikes.iter().map(|&x| x as u64).collect())?;
        c.push_u64("sel.exclusion", vec![n], s.exclusion.iter().map(|e| e.map_or(0, Exclusion::code)).collect())?;
        c.push_f64("sel.l_bar_old", vec![1], vec![s.l_bar_old])?;
        c.push_u64("sel.p_good_level", vec![1], vec![s.p_good_level as u64])?;

        let m = &self.meta;
        c.push_u64("meta.seed", vec![1], vec![m.seed])?;
        c.push_u64("meta.epoch", vec![1], vec![m.epoch])?;
        c.push_u64("meta.n_injections", vec![1], vec![m.n_injections])?;
        c.push_u64("meta.rng_word_pos", vec![2], vec![m.rng_word_pos as u64, (m.rng_word_pos >> 64) as u64])?;
        c.push_f64("meta.rmse_floors", vec![2], vec![m.rmse_floor_energy, m.rmse_floor_force])?;
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let text = std::str::from_utf8(c.bytes("config")?).map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
        let config = Config::from_toml_str(text, "<checkpoint config>")?;
        let spec = get_spec(c)?;
        let weights = get_weights(c)?;
        if weights.layout.n_g != spec.n_g() {
            return Err(Error::Shape(format!("networks expect {} inputs, descriptor set has {}", weights.layout.n_g, spec.n_g())));
        }

        let (shape, els) = c.u64s("refs.elements")?;
        let energies = c.f64s_shaped("refs.energies", shape)?;
        let refs = ReferenceEnergies(els.iter().map(|&z| z as u8).zip(energies.iter().copied()).collect::<BTreeMap<_, _>>());

        let n_net = weights.networks.len();
        let len = weights.param_layout().len;
        let n_groups = weights.groups().len() as u64;
        let optimizer = OptimizerState {
            g: get_matrix(c, "opt.g", n_net, len)?,
            h: get_matrix(c, "opt.h", n_net, len)?,
            s: get_matrix(c, "opt.s", n_net, len)?,
            score: get_matrix(c, "opt.score", n_net, len)?,
            tau: c.u64s_shaped("opt.tau", &[n_groups])?.to_vec(),
        };

        let train_ids = get_ids(c, "split.train")?;
        let test_ids = get_ids(c, "split.test")?;
        let n = train_ids.len() as u64;
        let eval = |name: &str, bound: usize| -> Result<Vec<usize>> {
            let (_, v) = c.u64s(name)?;
            v.iter()
                .map(|&i| {
                    usize::try_from(i)
                        .ok()
                        .filter(|&i| i < bound)
                        .ok_or_else(|| Error::Checkpoint(format!("{name}: index {i} out of range")))
                })
                .collect()
        };
        let train_eval = eval("split.train_eval", train_ids.len())?;
        let test_eval = eval("split.test_eval", test_ids.len())?;
        let selection = SelectionState {
            l_old: c.f64s_shaped("sel.l_old", &[n])?.iter().map(|&l| (!l.is_nan()).then_some(l)).collect(),
            s_hist: c.f64s_shaped("sel.s_hist", &[n])?.to_vec(),
            strikes: c
                .u64s_shaped("sel.strikes", &[n])?
                .iter()
                .map(|&x| u32::try_from(x).map_err(|_| Error::Checkpoint("strike counter out of range".into())))
                .collect::<Result<_>>()?,
            exclusion: c.u64s_shaped("sel.exclusion", &[n])?.iter().map(|&x| Exclusion::from_code(x)).collect::<Result<_>>()?,
            l_bar_old: c.f64_scalar("sel.l_bar_old")?,
            p_good_level: u32::try_from(c.u64_scalar("sel.p_good_level")?)
                .map_err(|_| Error::Checkpoint("p_good level out of range".into()))?,
        };

        let pos = c.u64s_shaped("meta.rng_word_pos", &[2])?;
        let floors = c.f64s_shaped("meta.rmse_floors", &[2])?;
        let meta = Metadata {
            seed: c.u64_scalar("meta.seed")?,
            epoch: c.u64_scalar("meta.epoch")?,
            n_injections: c.u64_scalar("meta.n_injections")?,
            rng_word_pos: pos[0] as u128 | (pos[1] as u128) << 64,
            rmse_floor_energy: floors[0],
            rmse_floor_force: floors[1],
        };
        Ok(Checkpoint { config, spec, weights, refs, optimizer, selection, train_ids, test_ids, train_eval, test_eval, meta })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(self.to_container()?.encode())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_container(&Container::decode(bytes)?)
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    super::write_atomic(path.as_ref(), &checkpoint.to_bytes()?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        e => e,
    })
}

fn put_matrix(c: &mut Container, name: &str, rows: &[Vec<f64>]) -> Result<()> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Shape(format!("{name}: ragged rows")));
    }
    c.push_f64(name, vec![rows.len() as u64, cols as u64], rows.concat())
}

fn get_matrix(c: &Container, name: &str, rows: usize, cols: usize) -> Result<Vec<Vec<f64>>> {
    let v = c.f64s_shaped(name, &[rows as u64, cols as u64])?;
    Ok(if cols == 0 { vec![Vec::new(); rows] } else { v.chunks(cols).map(<[f64]>::to_vec).collect() })
}

fn put_ids(c: &mut Container, name: &str, ids: &[ConformationId]) -> Result<()> {
    c.push_u64(name, vec![ids.len() as u64, 2], ids.iter().flat_map(|i| [i.source, i.frame]).collect())
}

fn get_ids(c: &Container, name: &str) -> Result<Vec<ConformationId>> {
    let (shape, v) = c.u64s(name)?;
    if shape.len() != 2 || shape[1] != 2 {
        return Err(Error::Shape(format!("record '{name}' has shape {shape:?}, expected [n, 2]")));
    }
    Ok(v.chunks(2).map(|p| ConformationId { source: p[0], frame: p[1] }).collect())
}

fn channel(code: u64) -> Result<Channel> {
    u8::try_from(code).map_err(|_| Error::Checkpoint(format!("bad channel code {code}"))).and_then(Channel::from_code)
}

fn put_spec(c: &mut Container, spec: &DescriptorSpec) -> Result<()> {
    c.push_f64("desc.cutoff", vec![1], vec![spec.cutoff])?;
    let pair_elements = match &spec.mode {
        DescriptorMode::EeAcsf => None,
        DescriptorMode::ElementPair { elements } => Some(elements.iter().map(|&z| z as u64).collect::<Vec<_>>()),
    };
    c.push_u64("desc.mode", vec![1], vec![pair_elements.is_some() as u64])?;
    if let Some(els) = pair_elements {
        c.push_u64("desc.pair_elements", vec![els.len() as u64], els)?;
    }
    let nr = spec.radial.len() as u64;
    c.push_u64("desc.radial.channel", vec![nr], spec.radial.iter().map(|p| p.channel.code() as u64).collect())?;
    c.push_f64("desc.radial.eta", vec![nr], spec.radial.iter().map(|p| p.eta).collect())?;
    let na = spec.angular.len() as u64;
    c.push_u64("desc.angular.channel", vec![na], spec.angular.iter().map(|p| p.channel.code() as u64).collect())?;
    c.push_f64(
        "desc.angular.gamma_eta_lambda_zeta",
        vec![na, 4],
        spec.angular.iter().flat_map(|p| [p.gamma, p.eta, p.lambda, p.zeta]).collect(),
    )
}

fn get_spec(c: &Container) -> Result<DescriptorSpec> {
    let mode = match c.u64_scalar("desc.mode")? {
        0 => DescriptorMode::EeAcsf,
        1 => DescriptorMode::ElementPair {
            elements: c.u64s("desc.pair_elements")?.1.iter().map(|&z| z as u8).collect(),
        },
        m => return Err(Error::Checkpoint(format!("unknown descriptor mode {m}"))),
    };
    let (shape, ch) = c.u64s("desc.radial.channel")?;
    let eta = c.f64s_shaped("desc.radial.eta", shape)?;
    let radial = ch.iter().zip(eta).map(|(&k, &eta)| Ok(RadialParam { channel: channel(k)?, eta })).collect::<Result<_>>()?;
    let (shape, ch) = c.u64s("desc.angular.channel")?;
    let p = c.f64s_shaped("desc.angular.gamma_eta_lambda_zeta", &[shape[0], 4])?;
    let angular = ch
        .iter()
        .zip(p.chunks(4))
        .map(|(&k, q)| Ok(AngularParam { channel: channel(k)?, gamma: q[0], eta: q[1], lambda: q[2], zeta: q[3] }))
        .collect::<Result<_>>()?;
    let spec = DescriptorSpec { cutoff: c.f64_scalar("desc.cutoff")?, radial, angular, mode };
    spec.validate()?;
    Ok(spec)
}

fn put_weights(c: &mut Container, w: &WeightSet) -> Result<()> {
    c.push_u64("net.n_g", vec![1], vec![w.layout.n_g as u64])?;
    c.push_u64("net.hidden", vec![w.layout.hidden.len() as u64], w.layout.hidden.iter().map(|&h| h as u64).collect())?;
    let act = match w.activation {
        Activation::ScaledTanh => 0,
        Activation::Identity => 1,
    };
    c.push_u64("net.activation", vec![1], vec![act])?;
    c.push_u64("net.elements", vec![w.networks.len() as u64], w.networks.iter().map(|n| n.element as u64).collect())?;
    let rows: Vec<Vec<f64>> = w.networks.iter().map(|n| n.params.clone()).collect();
    c.push_f64("net.params", vec![rows.len() as u64, w.param_layout().len as u64], rows.concat())
}

fn get_weights(c: &Container) -> Result<WeightSet> {
    let layout = NetworkLayout::new(
        c.u64_scalar("net.n_g")? as usize,
        c.u64s("net.hidden")?.1.iter().map(|&h| h as usize).collect(),
    )?;
    let activation = match c.u64_scalar("net.activation")? {
        0 => Activation::ScaledTanh,
        1 => Activation::Identity,
        a => return Err(Error::Checkpoint(format!("unknown activation {a}"))),
    };
    let els = c.u64s("net.elements")?.1;
    let params = get_matrix(c, "net.params", els.len(), layout.param_layout().len)?;
    let networks = els
        .iter()
        .zip(params)
        .map(|(&z, params)| {
            let element = u8::try_from(z).map_err(|_| Error::Checkpoint(format!("bad element {z}")))?;
            crate::elements::element_descriptors(element as u32)?;
            Ok(AtomicNetwork { element, params })
        })
        .collect::<Result<_>>()?;
    WeightSet::from_networks(layout, activation, networks)
}
