//! The lifelong training loop.
//!
//! Each epoch draws a subsample of the training set, evaluates the loss and
//! its gradient, takes one optimizer step and feeds the per-conformation
//! losses back into the selection state. Data can be added between epochs;
//! new conformations start with `S_hist = 1` and are split into training and
//! test parts like the initial data.
//!
//! All random draws come from one ChaCha8 stream per purpose, and the stream
//! positions are stored in checkpoints, so a resumed run continues exactly
//! where the interrupted one stopped.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conformation::{Conformation, ConformationId};
use crate::descriptors::{compute_blocks, DescriptorBlock, DescriptorSpec};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::network::{init_weights, ColumnStats, DescriptorStats, WeightSet};
use crate::optimizer::Optimizer;
use crate::potential::{error_metrics, loss, loss_and_gradient, ErrorMetrics, ReferenceEnergies, Sample};
use crate::selection::{choose_subsample, Exclusion, SelectionState};
use crate::storage::checkpoint::{Checkpoint, Metadata};
use crate::storage::config::{Config, SelectionMode};

const SUBSAMPLE_STREAM: u64 = 0;
const SPLIT_STREAM: u64 = 1 << 32;
const EVAL_STREAM: u64 = 2 << 32;

/// One row of the training log. RMSEs in meV/atom and meV/Å.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: u64,
    pub rmse_e_train: f64,
    pub rmse_e_test: f64,
    pub rmse_f_train: f64,
    pub rmse_f_test: f64,
    pub n_active: usize,
    pub n_excluded_redundant: usize,
    /// Exclusions above `s_max` and strike-outs.
    pub n_excluded_inconsistent: usize,
    pub p_good: f64,
}

pub const LOG_HEADER: &str =
    "epoch,rmse_e_train,rmse_e_test,rmse_f_train,rmse_f_test,n_active,n_excluded_redundant,n_excluded_inconsistent,p_good";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.rmse_e_train,
            self.rmse_e_test,
            self.rmse_f_train,
            self.rmse_f_test,
            self.n_active,
            self.n_excluded_redundant,
            self.n_excluded_inconsistent,
            self.p_good
        )
    }
}

pub fn write_logs_csv<W: Write>(mut w: W, logs: &[EpochLog]) -> std::io::Result<()> {
    writeln!(w, "{LOG_HEADER}")?;
    for l in logs {
        writeln!(w, "{}", l.csv_row())?;
    }
    Ok(())
}

/// Data added after the given number of completed epochs.
#[derive(Debug, Clone)]
pub struct Injection {
    pub after_epoch: u64,
    pub data: Vec<Conformation>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainPlan {
    pub epochs: u64,
    /// Strictly increasing `after_epoch`, inside the planned epoch range.
    pub injections: Vec<Injection>,
}

/// What happened in one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochOutcome {
    pub epoch: u64,
    /// Training-set positions of the subsample.
    pub subsample: Vec<usize>,
    pub loss: f64,
    pub excluded: Vec<(usize, Exclusion)>,
    pub log: Option<EpochLog>,
}

struct Entry {
    conf: Conformation,
    block: DescriptorBlock,
}

pub struct Trainer {
    pub config: Config,
    pub spec: DescriptorSpec,
    pub refs: ReferenceEnergies,
    pub weights: WeightSet,
    pub optimizer: Optimizer,
    /// Indexed like the training set.
    pub selection: SelectionState,
    pub epoch: u64,
    pub n_injections: u64,
    train: Vec<Entry>,
    test: Vec<Entry>,
    train_eval: Vec<usize>,
    test_eval: Vec<usize>,
    rng: ChaCha8Rng,
    exec: Exec,
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seeded train/test split of `n` items; both parts in input order.
pub fn split_indices(n: usize, test_fraction: f64, rng: &mut impl Rng) -> (Vec<usize>, Vec<usize>) {
    let n_test = (test_fraction * n as f64).round() as usize;
    let test: BTreeSet<usize> = rand::seq::index::sample(rng, n, n_test.min(n)).into_iter().collect();
    let train = (0..n).filter(|i| !test.contains(i)).collect();
    (train, test.into_iter().collect())
}

/// Up to `cap` sorted positions out of `n`; all of them when `cap` is 0 or large enough.
fn eval_subset(n: usize, cap: usize, rng: &mut impl Rng) -> Vec<usize> {
    if cap == 0 || n <= cap {
        return (0..n).collect();
    }
    let mut v = rand::seq::index::sample(rng, n, cap).into_vec();
    v.sort_unstable();
    v
}

fn check_unique(ids: impl IntoIterator<Item = ConformationId>) -> Result<()> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::Mismatch(format!(
                "duplicate conformation: {} (the same file loaded twice?)", id
            )));
        }
    }
    Ok(())
}

fn check_labels(confs: &[Conformation]) -> Result<()> {
    for c in confs {
        c.validate()?;
        if c.energy.is_none() || c.forces.is_none() {
            return Err(Error::MissingReference(format!(
                "{} needs an energy and forces for training", c.id
            )));
        }
    }
    Ok(())
}

fn mev(m: ErrorMetrics) -> (f64, f64) {
    (1000.0 * m.energy_rmse, 1000.0 * m.force_rmse)
}

impl Trainer {
    /// Splits `data`, computes descriptors and initializes networks and optimizer.
    pub fn new(config: Config, data: Vec<Conformation>, exec: Exec) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::Config("training data is empty".into()));
        }
        check_labels(&data)?;
        check_unique(data.iter().map(|c| c.id))?;
        let spec = config.descriptors.spec()?;
        let refs = config.reference_energies()?;
        let tc = &config.trainer;

        let (train_idx, test_idx) = split_indices(data.len(), tc.test_fraction, &mut stream(tc.seed, SPLIT_STREAM));
        if train_idx.is_empty() {
            return Err(Error::Config("the split leaves no training data".into()));
        }
        let blocks = compute_blocks(&data, &spec, exec)?;
        let mut entries: Vec<Option<Entry>> =
            data.into_iter().zip(blocks).map(|(conf, block)| Some(Entry { conf, block })).collect();
        let train: Vec<Entry> = train_idx.iter().map(|&i| entries[i].take().unwrap()).collect();
        let test: Vec<Entry> = test_idx.iter().map(|&i| entries[i].take().unwrap()).collect();

        let elements: BTreeSet<u8> = train.iter().chain(&test).flat_map(|e| e.conf.numbers.iter().copied()).collect();
        let mut rows: HashMap<u8, Vec<&[f64]>> = HashMap::new();
        for e in &train {
            for (a, &z) in e.conf.numbers.iter().enumerate() {
                rows.entry(z).or_default().push(e.block.row(a));
            }
        }
        let stats: DescriptorStats = rows.into_iter().map(|(z, r)| (z, ColumnStats::from_rows(r, spec.n_g()))).collect();
        let layout = config.network.layout(spec.n_g())?;
        let elements: Vec<u8> = elements.into_iter().collect();
        let weights = init_weights(&layout, &elements, tc.seed, &stats)?;
        let optimizer = Optimizer::new(config.optimizer.clone(), &weights)?;
        let selection = SelectionState::new(train.len());
        let mut eval_rng = stream(tc.seed, EVAL_STREAM);
        let train_eval = eval_subset(train.len(), tc.eval_cap, &mut eval_rng);
        let test_eval = eval_subset(test.len(), tc.eval_cap, &mut eval_rng);
        let rng = stream(tc.seed, SUBSAMPLE_STREAM);
        Ok(Trainer {
            config,
            spec,
            refs,
            weights,
            optimizer,
            selection,
            epoch: 0,
            n_injections: 0,
            train,
            test,
            train_eval,
            test_eval,
            rng,
            exec,
        })
    }

    /// Restores a run. `data` must contain every conformation named in the
    /// checkpoint split (it may contain more, which are ignored).
    pub fn from_checkpoint(ckpt: Checkpoint, data: Vec<Conformation>, exec: Exec) -> Result<Self> {
        check_unique(data.iter().map(|c| c.id))?;
        let mut by_id: HashMap<ConformationId, Conformation> = data.into_iter().map(|c| (c.id, c)).collect();
        let mut take = |ids: &[ConformationId]| -> Result<Vec<Conformation>> {
            ids.iter()
                .map(|id| {
                    by_id.remove(id).ok_or_else(|| {
                        Error::Mismatch(format!(
                            "{} from the checkpoint is missing in the supplied data", id
                        ))
                    })
                })
                .collect()
        };
        let train_confs = take(&ckpt.train_ids)?;
        let test_confs = take(&ckpt.test_ids)?;
        check_labels(&train_confs)?;
        check_labels(&test_confs)?;
        let entries = |confs: Vec<Conformation>| -> Result<Vec<Entry>> {
            let blocks = compute_blocks(&confs, &ckpt.spec, exec)?;
            Ok(confs.into_iter().zip(blocks).map(|(conf, block)| Entry { conf, block }).collect())
        };
        let train = entries(train_confs)?;
        let test = entries(test_confs)?;
        for e in train.iter().chain(&test) {
            for &z in &e.conf.numbers {
                if ckpt.weights.network_index(z).is_none() {
                    return Err(Error::Mismatch(format!("element Z={z} has no network in the checkpoint")));
                }
            }
        }
        let mut optimizer = Optimizer::new(ckpt.config.optimizer.clone(), &ckpt.weights)?;
        let o = &ckpt.optimizer;
        if o.tau.len() != optimizer.state.tau.len() || o.g.len() != optimizer.state.g.len() {
            return Err(Error::Shape("optimizer state does not match the networks".into()));
        }
        optimizer.state = ckpt.optimizer;
        let mut rng = stream(ckpt.meta.seed, SUBSAMPLE_STREAM);
        rng.set_word_pos(ckpt.meta.rng_word_pos);
        Ok(Trainer {
            config: ckpt.config,
            spec: ckpt.spec,
            refs: ckpt.refs,
            weights: ckpt.weights,
            optimizer,
            selection: ckpt.selection,
            epoch: ckpt.meta.epoch,
            n_injections: ckpt.meta.n_injections,
            train,
            test,
            train_eval: ckpt.train_eval,
            test_eval: ckpt.test_eval,
            rng,
            exec,
        })
    }

    pub fn set_exec(&mut self, exec: Exec) {
        self.exec = exec;
    }

    pub fn n_train(&self) -> usize {
        self.train.len()
    }

    pub fn n_test(&self) -> usize {
        self.test.len()
    }

    pub fn train_ids(&self) -> Vec<ConformationId> {
        self.train.iter().map(|e| e.conf.id).collect()
    }

    pub fn test_ids(&self) -> Vec<ConformationId> {
        self.test.iter().map(|e| e.conf.id).collect()
    }

    pub fn train_conformation(&self, i: usize) -> &Conformation {
        &self.train[i].conf
    }

    /// Adds labelled data. The new conformations are split with the training
    /// test fraction and join the selection with fresh entries.
    pub fn inject(&mut self, data: Vec<Conformation>) -> Result<()> {
        if data.is_empty() {
            return Ok(());
        }
        check_labels(&data)?;
        for c in &data {
            if let Some(&z) = c.numbers.iter().find(|&&z| self.weights.network_index(z).is_none()) {
                return Err(Error::Mismatch(format!(
                    "{} contains element Z={z}, which has no network; new elements need a new model", c.id
                )));
            }
        }
        check_unique(self.train.iter().chain(&self.test).map(|e| e.conf.id).chain(data.iter().map(|c| c.id)))?;
        self.n_injections += 1;
        let tc = &self.config.trainer;
        let (train_idx, test_idx) =
            split_indices(data.len(), tc.test_fraction, &mut stream(tc.seed, SPLIT_STREAM + self.n_injections));
        let blocks = compute_blocks(&data, &self.spec, self.exec)?;
        let mut entries: Vec<Option<Entry>> =
            data.into_iter().zip(blocks).map(|(conf, block)| Some(Entry { conf, block })).collect();
        self.selection.extend(train_idx.len());
        self.train.extend(train_idx.iter().map(|&i| entries[i].take().unwrap()));
        self.test.extend(test_idx.iter().map(|&i| entries[i].take().unwrap()));
        let mut eval_rng = stream(tc.seed, EVAL_STREAM + self.n_injections);
        self.train_eval = eval_subset(self.train.len(), tc.eval_cap, &mut eval_rng);
        self.test_eval = eval_subset(self.test.len(), tc.eval_cap, &mut eval_rng);
        Ok(())
    }

    fn samples<'a>(entries: &'a [Entry], idx: &[usize]) -> Vec<Sample<'a>> {
        idx.iter().map(|&i| Sample { conf: &entries[i].conf, block: &entries[i].block }).collect()
    }

    /// Energy and force errors of the whole test set.
    pub fn test_metrics(&self) -> Result<ErrorMetrics> {
        let all: Vec<usize> = (0..self.test.len()).collect();
        error_metrics(&Self::samples(&self.test, &all), &self.weights, &self.refs, self.exec)
    }

    pub fn train_metrics(&self) -> Result<ErrorMetrics> {
        let all: Vec<usize> = (0..self.train.len()).collect();
        error_metrics(&Self::samples(&self.train, &all), &self.weights, &self.refs, self.exec)
    }

    /// Log row from the capped evaluation subsets.
    pub fn log_row(&self) -> Result<EpochLog> {
        let (e_train, f_train) = mev(error_metrics(&Self::samples(&self.train, &self.train_eval), &self.weights, &self.refs, self.exec)?);
        let (e_test, f_test) = mev(error_metrics(&Self::samples(&self.test, &self.test_eval), &self.weights, &self.refs, self.exec)?);
        let count = |f: fn(&Exclusion) -> bool| self.selection.exclusion.iter().flatten().filter(|e| f(e)).count();
        Ok(EpochLog {
            epoch: self.epoch,
            rmse_e_train: e_train,
            rmse_e_test: e_test,
            rmse_f_train: f_train,
            rmse_f_test: f_test,
            n_active: self.selection.n_active(),
            n_excluded_redundant: count(|e| *e == Exclusion::Redundant),
            n_excluded_inconsistent: count(|e| *e != Exclusion::Redundant),
            p_good: self.selection.p_good(&self.config.selection),
        })
    }

    fn draw_subsample(&mut self, n_fit: usize) -> Result<Vec<usize>> {
        match self.config.trainer.selection {
            SelectionMode::Adaptive => choose_subsample(&self.selection, n_fit, &self.config.selection, &mut self.rng),
            SelectionMode::Random => {
                let mut v = rand::seq::index::sample(&mut self.rng, self.train.len(), n_fit.min(self.train.len())).into_vec();
                v.sort_unstable();
                Ok(v)
            }
        }
    }

    /// Runs one epoch.
    pub fn run_epoch(&mut self) -> Result<EpochOutcome> {
        let n_fit = ((self.config.trainer.fit_fraction * self.train.len() as f64).ceil() as usize).max(1);
        let subsample = self.draw_subsample(n_fit)?;
        let epoch = self.epoch + 1;
        let samples = Self::samples(&self.train, &subsample);
        let (report, grad) = match loss_and_gradient(&samples, &self.weights, &self.refs, self.config.trainer.q, self.exec) {
            Err(Error::NonFinite(_)) => return Err(self.non_finite(epoch, &subsample)),
            r => r?,
        };
        drop(samples);
        self.optimizer.step(&mut self.weights, &grad)?;
        let excluded = match self.config.trainer.selection {
            SelectionMode::Adaptive => {
                self.selection
                    .update(&subsample, &report.per_conformation, report.total, &self.config.selection)?
                    .excluded
            }
            SelectionMode::Random => Vec::new(),
        };
        self.epoch = epoch;
        let every = self.config.trainer.log_every;
        let log = if every > 0 && epoch.is_multiple_of(every) { Some(self.log_row()?) } else { None };
        Ok(EpochOutcome { epoch, subsample, loss: report.total, excluded, log })
    }

    fn non_finite(&self, epoch: u64, subsample: &[usize]) -> Error {
        let bad: Vec<String> = subsample
            .iter()
            .filter(|&&i| {
                let s = Self::samples(&self.train, &[i]);
                !loss(&s, &self.weights, &self.refs, self.config.trainer.q, Exec::Sequential).is_ok_and(|r| r.total.is_finite())
            })
            .map(|&i| self.train[i].conf.id.to_string())
            .collect();
        Error::NonFinite(format!("epoch {epoch}: loss or gradient is not finite (conformations: {})", bad.join(", ")))
    }

    /// Runs `plan`, calling `on_epoch` after every epoch. Returns the log rows.
    pub fn run<F>(&mut self, plan: TrainPlan, mut on_epoch: F) -> Result<Vec<EpochLog>>
    where
        F: FnMut(&Trainer, &EpochOutcome) -> Result<()>,
    {
        let start = self.epoch;
        let end = start + plan.epochs;
        let mut last = None;
        for inj in &plan.injections {
            if inj.after_epoch < start || inj.after_epoch >= end || last.is_some_and(|l| inj.after_epoch <= l) {
                return Err(Error::Config(format!(
                    "injection after epoch {} must be increasing and within epochs {start}..{end}",
                    inj.after_epoch
                )));
            }
            last = Some(inj.after_epoch);
        }
        let mut injections = plan.injections.into_iter().peekable();
        let mut logs = Vec::new();
        while self.epoch < end {
            while let Some(inj) = injections.next_if(|i| i.after_epoch == self.epoch) {
                self.inject(inj.data)?;
            }
            let outcome = self.run_epoch()?;
            on_epoch(self, &outcome)?;
            logs.extend(outcome.log);
        }
        Ok(logs)
    }

    /// Snapshot of the complete state; RMSE floors come from the full test set.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let floors = if self.test.is_empty() { self.train_metrics()? } else { self.test_metrics()? };
        Ok(Checkpoint {
            config: self.config.clone(),
            spec: self.spec.clone(),
            weights: self.weights.clone(),
            refs: self.refs.clone(),
            optimizer: self.optimizer.state.clone(),
            selection: self.selection.clone(),
            train_ids: self.train_ids(),
            test_ids: self.test_ids(),
            train_eval: self.train_eval.clone(),
            test_eval: self.test_eval.clone(),
            meta: Metadata {
                seed: self.config.trainer.seed,
                epoch: self.epoch,
                n_injections: self.n_injections,
                rng_word_pos: self.rng.get_word_pos(),
                rmse_floor_energy: floors.energy_rmse,
                rmse_floor_force: floors.force_rmse,
            },
        })
    }
}
