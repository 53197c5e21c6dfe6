//! Committees of independently trained potentials.
//!
//! The committee mean is the prediction. The uncertainty of every output is
//! `max(floor, c · s)` with `s` the sample standard deviation over members.
//! Energy floors are per atom and scale with the atom count.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conformation::{Conformation, Vec3};
use crate::descriptors::{compute_block, DescriptorSpec};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::network::WeightSet;
use crate::potential::{predict_block, ReferenceEnergies};
use crate::storage::checkpoint::{load_checkpoint, Checkpoint};
use crate::storage::config::Config;
use crate::storage::write_atomic;
use crate::trainer::{EpochLog, EpochOutcome, TrainPlan, Trainer};

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub weights: WeightSet,
    pub refs: ReferenceEnergies,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub spec: DescriptorSpec,
    pub members: Vec<Member>,
    pub c: f64,
    /// eV/atom
    pub rmse_floor_energy: f64,
    /// eV/Å
    pub rmse_floor_force: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertainPrediction {
    /// eV, including reference energies.
    pub energy: f64,
    /// eV
    pub energy_uncertainty: f64,
    /// eV/Å
    pub forces: Vec<Vec3>,
    /// eV/Å, per Cartesian component.
    pub force_uncertainty: Vec<Vec3>,
}

/// Mean and sample standard deviation, independent of the order of `v`.
///
/// Values are sorted first. The mean is accumulated as an offset from the
/// smallest value so equal inputs reproduce that value exactly. One value
/// has standard deviation 0.
pub fn mean_std(v: &mut [f64]) -> (f64, f64) {
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let x0 = v[0];
    let mean = x0 + v.iter().map(|x| x - x0).sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let mut sq: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    sq.sort_by(f64::total_cmp);
    (mean, (sq.iter().sum::<f64>() / (n - 1.0)).sqrt())
}

impl EnsembleModel {
    pub fn new(spec: DescriptorSpec, members: Vec<Member>, c: f64, rmse_floor_energy: f64, rmse_floor_force: f64) -> Result<Self> {
        let model = EnsembleModel { spec, members, c, rmse_floor_energy, rmse_floor_force };
        model.validate()?;
        Ok(model)
    }

    /// Committee of trained runs. Floors default to the mean of the members' test RMSEs.
    pub fn from_checkpoints(ckpts: &[Checkpoint], c: f64, floors: Option<(f64, f64)>) -> Result<Self> {
        let first = ckpts.first().ok_or_else(|| Error::Config("an ensemble needs at least one member".into()))?;
        for (k, ck) in ckpts.iter().enumerate() {
            if ck.spec != first.spec {
                return Err(Error::Mismatch(format!("member {k} uses different descriptors than member 0")));
            }
        }
        let mean = |f: fn(&Checkpoint) -> f64| mean_std(&mut ckpts.iter().map(f).collect::<Vec<_>>()).0;
        let (fe, ff) = floors.unwrap_or_else(|| (mean(|c| c.meta.rmse_floor_energy), mean(|c| c.meta.rmse_floor_force)));
        let members = ckpts
            .iter()
            .map(|ck| Member { weights: ck.weights.clone(), refs: ck.refs.clone(), seed: ck.meta.seed })
            .collect();
        Self::new(first.spec.clone(), members, c, fe, ff)
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::Config("an ensemble needs at least one member".into()));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("c must be positive, got {}", self.c)));
        }
        for f in [self.rmse_floor_energy, self.rmse_floor_force] {
            if !(f >= 0.0 && f.is_finite()) {
                return Err(Error::Config(format!("uncertainty floors must be finite and non-negative, got {f}")));
            }
        }
        let n_g = self.spec.n_g();
        let first = &self.members[0].weights;
        for (k, m) in self.members.iter().enumerate() {
            let w = &m.weights;
            if w.param_layout() != first.param_layout() || w.elements() != first.elements() {
                return Err(Error::Mismatch(format!("member {k} has a different network shape than member 0")));
            }
            if w.param_layout().n_g != n_g {
                return Err(Error::Mismatch(format!(
                    "member {k} expects {} descriptors, the descriptor set has {n_g}",
                    w.param_layout().n_g
                )));
            }
        }
        Ok(())
    }

    pub fn elements(&self) -> Vec<u8> {
        self.members[0].weights.elements()
    }

    pub fn predict_with_uncertainty(&self, conf: &Conformation, exec: Exec) -> Result<UncertainPrediction> {
        let block = compute_block(conf, &self.spec)?;
        let preds = exec.map(&self.members, |m| {
            predict_block(conf, &block, &m.weights).map(|p| (p.energy + m.refs.offset(&conf.numbers), p.forces))
        });
        let preds: Vec<(f64, Vec<Vec3>)> = preds.into_iter().collect::<Result<_>>()?;
        let n_atoms = conf.n_atoms();
        let floor_e = self.rmse_floor_energy * n_atoms as f64;
        let mut buf: Vec<f64> = preds.iter().map(|p| p.0).collect();
        let (energy, s) = mean_std(&mut buf);
        let energy_uncertainty = floor_e.max(self.c * s);
        let mut forces = vec![[0.0; 3]; n_atoms];
        let mut force_uncertainty = vec![[0.0; 3]; n_atoms];
        for a in 0..n_atoms {
            for k in 0..3 {
                buf.clear();
                buf.extend(preds.iter().map(|p| p.1[a][k]));
                let (m, s) = mean_std(&mut buf);
                forces[a][k] = m;
                force_uncertainty[a][k] = self.rmse_floor_force.max(self.c * s);
            }
        }
        for x in forces.iter().flatten().chain([&energy]) {
            if !x.is_finite() {
                return Err(Error::NonFinite(format!("ensemble prediction for {}", conf.id)));
            }
        }
        Ok(UncertainPrediction { energy, energy_uncertainty, forces, force_uncertainty })
    }
}

/// Coverage of one uncertainty band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bucket {
    /// Smallest and largest uncertainty in the bucket.
    pub lower: f64,
    pub upper: f64,
    pub n: usize,
    /// Points whose uncertainty is at least the absolute error.
    pub covered: usize,
}

impl Bucket {
    pub fn coverage(&self) -> f64 {
        self.covered as f64 / self.n as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    /// Ordered from low to high uncertainty.
    pub energy: Vec<Bucket>,
    pub force: Vec<Bucket>,
}

impl CalibrationReport {
    pub fn energy_coverage(&self) -> f64 {
        total_coverage(&self.energy)
    }

    pub fn force_coverage(&self) -> f64 {
        total_coverage(&self.force)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("quantity,bucket,lower,upper,n,covered,coverage\n");
        for (name, buckets) in [("energy", &self.energy), ("force", &self.force)] {
            for (i, b) in buckets.iter().enumerate() {
                out += &format!("{name},{i},{:e},{:e},{},{},{:.6}\n", b.lower, b.upper, b.n, b.covered, b.coverage());
            }
        }
        out
    }
}

fn total_coverage(b: &[Bucket]) -> f64 {
    b.iter().map(|b| b.covered).sum::<usize>() as f64 / b.iter().map(|b| b.n).sum::<usize>() as f64
}

/// Splits `(uncertainty, |error|)` pairs into `n_buckets` equally populated
/// bands of increasing uncertainty.
pub fn bucketize(mut points: Vec<(f64, f64)>, n_buckets: usize) -> Vec<Bucket> {
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n = points.len();
    let k = n_buckets.min(n).max(1);
    (0..k)
        .map(|b| {
            let chunk = &points[b * n / k..(b + 1) * n / k];
            Bucket {
                lower: chunk[0].0,
                upper: chunk[chunk.len() - 1].0,
                n: chunk.len(),
                covered: chunk.iter().filter(|(u, e)| u >= e).count(),
            }
        })
        .collect()
}

/// Energies are compared per conformation, forces per Cartesian component.
pub fn calibration_report(model: &EnsembleModel, data: &[Conformation], n_buckets: usize, exec: Exec) -> Result<CalibrationReport> {
    if data.is_empty() {
        return Err(Error::MissingReference("calibration needs at least one labelled conformation".into()));
    }
    if n_buckets == 0 {
        return Err(Error::Config("calibration needs at least one bucket".into()));
    }
    let mut energy = Vec::with_capacity(data.len());
    let mut force = Vec::new();
    for conf in data {
        let (e_ref, f_ref) = match (conf.energy, &conf.forces) {
            (Some(e), Some(f)) => (e, f),
            _ => return Err(Error::MissingReference(format!("{} lacks energy or forces", conf.id))),
        };
        let p = model.predict_with_uncertainty(conf, exec)?;
        energy.push((p.energy_uncertainty, (p.energy - e_ref).abs()));
        for a in 0..conf.n_atoms() {
            for k in 0..3 {
                force.push((p.force_uncertainty[a][k], (p.forces[a][k] - f_ref[a][k]).abs()));
            }
        }
    }
    Ok(CalibrationReport { energy: bucketize(energy, n_buckets), force: bucketize(force, n_buckets) })
}

/// Trains `n` members on the same data. Member `k` uses seed `config.trainer.seed + k`,
/// which also decides its train/test split.
pub fn train_members<F>(config: &Config, data: &[Conformation], n: usize, exec: Exec, mut on_epoch: F) -> Result<Vec<(Checkpoint, Vec<EpochLog>)>>
where
    F: FnMut(usize, &Trainer, &EpochOutcome) -> Result<()>,
{
    (0..n)
        .map(|k| {
            let mut cfg = config.clone();
            cfg.trainer.seed = config.trainer.seed + k as u64;
            let epochs = cfg.trainer.epochs;
            let mut trainer = Trainer::new(cfg, data.to_vec(), exec)?;
            let logs = trainer.run(TrainPlan { epochs, injections: vec![] }, |t, o| on_epoch(k, t, o))?;
            Ok((trainer.checkpoint()?, logs))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestMember {
    /// Relative paths are resolved against the manifest's directory.
    pub checkpoint: PathBuf,
    pub seed: u64,
}

/// TOML file listing the member checkpoints of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub c: f64,
    /// eV/atom
    pub rmse_floor_energy: f64,
    /// eV/Å
    pub rmse_floor_force: f64,
    pub members: Vec<ManifestMember>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            Error::Parse { path: path.display().to_string(), line, msg: e.message().to_string() }
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize manifest: {e}")))?;
        write_atomic(path.as_ref(), text.as_bytes())
    }

    /// Loads every member checkpoint.
    pub fn load_model(&self, manifest_path: impl AsRef<Path>) -> Result<EnsembleModel> {
        let dir = manifest_path.as_ref().parent().unwrap_or(Path::new(""));
        let mut ckpts = Vec::with_capacity(self.members.len());
        for m in &self.members {
            let ck = load_checkpoint(dir.join(&m.checkpoint))?;
            if ck.meta.seed != m.seed {
                return Err(Error::Mismatch(format!(
                    "{}: manifest lists seed {}, checkpoint has seed {}",
                    m.checkpoint.display(),
                    m.seed,
                    ck.meta.seed
                )));
            }
            ckpts.push(ck);
        }
        EnsembleModel::from_checkpoints(&ckpts, self.c, Some((self.rmse_floor_energy, self.rmse_floor_force)))
    }
}

pub fn load_ensemble(manifest_path: impl AsRef<Path>) -> Result<EnsembleModel> {
    let path = manifest_path.as_ref();
    Manifest::load(path)?.load_model(path)
}
