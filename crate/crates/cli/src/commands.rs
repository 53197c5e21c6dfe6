use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use lmlp::ensemble::{calibration_report, load_ensemble, EnsembleModel, Manifest, ManifestMember};
use lmlp::descriptors::compute_blocks;
use lmlp::elements::symbol;
use lmlp::optimizer::OptimizerConfig;
use lmlp::storage::{
    load_checkpoint, max_force_filter, parse_dataset, save_checkpoint, write_atomic, write_dataset, Checkpoint, Config,
    Labels,
};
use lmlp::synth::{generate, toy_config, ToySpec};
use lmlp::trainer::{write_logs_csv, EpochLog, EpochOutcome, Injection, TrainPlan, Trainer, LOG_HEADER};
use lmlp::{Conformation, Error, Exec};

use crate::scan::{grid, Axis, Range};
use crate::{
    BenchOptArgs, Cli, Command, DumpDescArgs, EvalArgs, PredictArgs, ResumeArgs, ScanArgs, SynthArgs, TrainArgs,
};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Lib(Error::NonFinite(_) | Error::AllExcluded) => 3,
            CliError::Lib(_) => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Lib(Error::Io { path: path.to_path_buf(), source: e })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    Ok(write_atomic(path, text.as_bytes())?)
}

struct Progress {
    quiet: bool,
    every: u64,
}

impl Progress {
    fn new(quiet: bool, epochs: u64) -> Self {
        Progress { quiet, every: (epochs / 20).max(1) }
    }

    fn report(&self, label: &str, o: &EpochOutcome) {
        if self.quiet || !o.epoch.is_multiple_of(self.every) {
            return;
        }
        match &o.log {
            Some(l) => eprintln!(
                "{label}epoch {:>6}  E test {:>9.3} meV/atom  F test {:>9.3} meV/A  active {}",
                l.epoch, l.rmse_e_test, l.rmse_f_test, l.n_active
            ),
            None => eprintln!("{label}epoch {:>6}  loss {:.6e}", o.epoch, o.loss),
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let exec = match cli.threads {
        Some(0) => return Err(CliError::Usage("--threads must be at least 1".into())),
        Some(1) => Exec::Sequential,
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Usage(format!("cannot start {n} threads: {e}")))?;
            Exec::Parallel
        }
        None => Exec::Parallel,
    };
    match cli.command {
        Command::Train(a) => train(a, exec, cli.quiet),
        Command::Resume(a) => resume(a, exec, cli.quiet),
        Command::Predict(a) => predict(a, exec),
        Command::Eval(a) => eval(a, exec),
        Command::Scan(a) => scan(a, exec),
        Command::Synth(a) => synth(a),
        Command::BenchOpt(a) => bench_opt(a, exec, cli.quiet),
        Command::DumpDesc(a) => dump_desc(a, exec),
    }
}

fn load_config(path: Option<&PathBuf>) -> Result<Config> {
    Ok(match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    })
}

/// Reads datasets in order and drops frames above the force threshold.
fn load_training_data(paths: &[PathBuf], config: &Config, quiet: bool) -> Result<Vec<Conformation>> {
    let mut all = Vec::new();
    for p in paths {
        let confs = parse_dataset(p, Labels::Required)?;
        if confs.is_empty() {
            return Err(Error::MissingReference(format!("{} holds no frames", p.display())).into());
        }
        let confs = match config.trainer.max_force {
            Some(m) => {
                let (kept, removed) = max_force_filter(confs, m)?;
                if removed > 0 && !quiet {
                    eprintln!("{}: dropped {removed} frames with a force component above {m} eV/A", p.display());
                }
                kept
            }
            None => confs,
        };
        all.extend(confs);
    }
    Ok(all)
}

fn parse_injections(specs: &[String], config: &Config, quiet: bool) -> Result<Vec<Injection>> {
    let mut out = Vec::new();
    for s in specs {
        let (epoch, path) = s
            .split_once(':')
            .and_then(|(e, p)| Some((e.parse::<u64>().ok()?, p)))
            .ok_or_else(|| CliError::Usage(format!("--inject expects EPOCH:PATH, got '{s}'")))?;
        let data = load_training_data(&[PathBuf::from(path)], config, quiet)?;
        out.push(Injection { after_epoch: epoch, data });
    }
    out.sort_by_key(|i| i.after_epoch);
    Ok(out)
}

fn write_logs(path: &Path, logs: &[EpochLog], append: bool) -> Result<()> {
    let exists = append && path.exists();
    let file = if exists {
        OpenOptions::new().append(true).open(path)
    } else {
        File::create(path)
    }
    .map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    if exists {
        for l in logs {
            writeln!(w, "{}", l.csv_row()).map_err(io_err(path))?;
        }
    } else {
        write_logs_csv(&mut w, logs).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn train(a: TrainArgs, exec: Exec, quiet: bool) -> Result<()> {
    let mut config = load_config(a.config.as_ref())?;
    if let Some(s) = a.seed {
        config.trainer.seed = s;
    }
    if let Some(e) = a.epochs {
        config.trainer.epochs = e;
    }
    if let Some(m) = a.members {
        config.ensemble.members = m;
    }
    config.validate()?;
    let data = load_training_data(&a.data, &config, quiet)?;
    let injections = parse_injections(&a.inject, &config, quiet)?;
    std::fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    write_text(&a.out.join("config.toml"), &config.to_toml_string()?)?;

    let epochs = config.trainer.epochs;
    let every = config.trainer.checkpoint_every;
    let mut ckpts = Vec::new();
    let mut members = Vec::new();
    for k in 0..config.ensemble.members {
        let mut cfg = config.clone();
        cfg.trainer.seed = config.trainer.seed + k as u64;
        let name = format!("member{k}.ckpt");
        let ckpt_path = a.out.join(&name);
        let progress = Progress::new(quiet, epochs);
        let label = if config.ensemble.members > 1 { format!("member {k}: ") } else { String::new() };
        let mut trainer = Trainer::new(cfg, data.clone(), exec)?;
        let plan = TrainPlan { epochs, injections: injections.clone() };
        let logs = trainer.run(plan, |t, o| {
            progress.report(&label, o);
            if every > 0 && o.epoch % every == 0 {
                save_checkpoint(&t.checkpoint()?, &ckpt_path)?;
            }
            Ok(())
        })?;
        let ck = trainer.checkpoint()?;
        save_checkpoint(&ck, &ckpt_path)?;
        write_logs(&a.out.join(format!("member{k}.log.csv")), &logs, false)?;
        println!(
            "member {k}: seed {}  test RMSE {:.3} meV/atom, {:.3} meV/A",
            ck.meta.seed,
            ck.meta.rmse_floor_energy * 1e3,
            ck.meta.rmse_floor_force * 1e3
        );
        members.push(ManifestMember { checkpoint: name.into(), seed: ck.meta.seed });
        ckpts.push(ck);
    }
    let model = EnsembleModel::from_checkpoints(&ckpts, config.ensemble.c, None)?;
    let manifest = Manifest {
        c: model.c,
        rmse_floor_energy: model.rmse_floor_energy,
        rmse_floor_force: model.rmse_floor_force,
        members,
    };
    manifest.save(a.out.join("ensemble.toml"))?;
    println!("wrote {}", a.out.join("ensemble.toml").display());
    Ok(())
}

fn resume(a: ResumeArgs, exec: Exec, quiet: bool) -> Result<()> {
    let ck: Checkpoint = load_checkpoint(&a.checkpoint)?;
    let data = load_training_data(&a.data, &ck.config, quiet)?;
    let injections: Vec<Injection> = parse_injections(&a.inject, &ck.config, quiet)?
        .into_iter()
        .map(|i| Injection { after_epoch: i.after_epoch + ck.meta.epoch, ..i })
        .collect();
    let mut trainer = Trainer::from_checkpoint(ck, data, exec)?;
    let start = trainer.epoch;
    let progress = Progress::new(quiet, a.epochs);
    let logs = trainer.run(TrainPlan { epochs: a.epochs, injections }, |_, o| {
        progress.report("", o);
        Ok(())
    })?;
    let out = a.out.unwrap_or_else(|| a.checkpoint.clone());
    let ck = trainer.checkpoint()?;
    save_checkpoint(&ck, &out)?;
    let log = a.log.unwrap_or_else(|| out.with_extension("log.csv"));
    write_logs(&log, &logs, true)?;
    println!(
        "epochs {start} -> {}: test RMSE {:.3} meV/atom, {:.3} meV/A; wrote {}",
        trainer.epoch,
        ck.meta.rmse_floor_energy * 1e3,
        ck.meta.rmse_floor_force * 1e3,
        out.display()
    );
    Ok(())
}

fn load_frames(path: &Path, labels: Labels) -> Result<Vec<Conformation>> {
    let confs = parse_dataset(path, labels)?;
    if confs.is_empty() {
        return Err(Error::MissingReference(format!("{} holds no frames", path.display())).into());
    }
    Ok(confs)
}

fn predict(a: PredictArgs, exec: Exec) -> Result<()> {
    let model = load_ensemble(&a.ensemble)?;
    let confs = load_frames(&a.data, Labels::Optional)?;
    let mut frames = String::from("frame,n_atoms,energy,energy_uncertainty,energy_ref\n");
    let mut forces = String::from("frame,atom,element,fx,fy,fz,ux,uy,uz\n");
    for (i, c) in confs.iter().enumerate() {
        let p = model.predict_with_uncertainty(c, exec)?;
        let e_ref = c.energy.map_or(String::new(), |e| format!("{e:.10e}"));
        writeln!(frames, "{i},{},{:.10e},{:.10e},{e_ref}", c.n_atoms(), p.energy, p.energy_uncertainty).unwrap();
        for (k, (f, u)) in p.forces.iter().zip(&p.force_uncertainty).enumerate() {
            writeln!(
                forces,
                "{i},{k},{},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}",
                symbol(c.numbers[k])?,
                f[0],
                f[1],
                f[2],
                u[0],
                u[1],
                u[2]
            )
            .unwrap();
        }
    }
    write_text(&a.out, &frames)?;
    if let Some(p) = &a.forces_out {
        write_text(p, &forces)?;
    }
    Ok(())
}

fn eval(a: EvalArgs, exec: Exec) -> Result<()> {
    if a.buckets == 0 {
        return Err(CliError::Usage("--buckets must be at least 1".into()));
    }
    let model = load_ensemble(&a.ensemble)?;
    let confs = load_frames(&a.data, Labels::Required)?;
    let (mut se, mut sf, mut nf) = (0.0, 0.0, 0usize);
    for c in &confs {
        let p = model.predict_with_uncertainty(c, exec)?;
        let n = c.n_atoms() as f64;
        se += ((p.energy - c.energy.unwrap()) / n).powi(2);
        for (f, r) in p.forces.iter().flatten().zip(c.forces.as_ref().unwrap().iter().flatten()) {
            sf += (f - r).powi(2);
            nf += 1;
        }
    }
    let report = calibration_report(&model, &confs, a.buckets, exec)?;
    println!("frames {}", confs.len());
    println!("energy RMSE {:.4} meV/atom", (se / confs.len() as f64).sqrt() * 1e3);
    println!("force RMSE {:.4} meV/A", (sf / nf as f64).sqrt() * 1e3);
    println!("energy coverage {:.4}", report.energy_coverage());
    println!("force coverage {:.4}", report.force_coverage());
    print!("{}", report.to_csv());
    if let Some(p) = &a.out {
        write_text(p, &report.to_csv())?;
    }
    Ok(())
}

fn scan(a: ScanArgs, exec: Exec) -> Result<()> {
    let model = load_ensemble(&a.ensemble)?;
    let frames = load_frames(&a.template, Labels::Optional)?;
    let template = frames
        .get(a.frame)
        .ok_or_else(|| CliError::Usage(format!("{} has {} frames, no frame {}", a.template.display(), frames.len(), a.frame)))?;
    let mut axes = vec![Axis { fixed: a.atom_a, moved: a.atom_b, range: Range::parse(&a.range).map_err(CliError::Usage)? }];
    if let (Some(c), Some(d)) = (a.atom_c, a.atom_d) {
        axes.push(Axis { fixed: c, moved: d, range: Range::parse(&a.range2).map_err(CliError::Usage)? });
    }
    let points = grid(template, &axes).map_err(CliError::Usage)?;
    let preds = points
        .iter()
        .map(|(_, c)| model.predict_with_uncertainty(c, exec))
        .collect::<lmlp::Result<Vec<_>>>()?;
    let e_min = preds.iter().map(|p| p.energy).fold(f64::INFINITY, f64::min);
    let mut out = String::from("r1,r2,energy,energy_rel,energy_uncertainty\n");
    for ((rs, _), p) in points.iter().zip(&preds) {
        let r2 = rs.get(1).map_or(String::new(), |r| format!("{r:.8}"));
        writeln!(out, "{:.8},{r2},{:.10e},{:.10e},{:.10e}", rs[0], p.energy, p.energy - e_min, p.energy_uncertainty).unwrap();
    }
    write_text(&a.out, &out)
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec: ToySpec = a.system.parse()?;
    let confs = generate(&spec, a.n, a.seed)?;
    write_dataset(&a.out, &confs)?;
    if let Some(p) = &a.config_out {
        write_text(p, &toy_config(&spec)?.to_toml_string()?)?;
    }
    Ok(())
}

/// `core` takes the CoRe settings of the base configuration when it has any.
fn bench_optimizer(name: &str, base: &OptimizerConfig) -> Result<OptimizerConfig> {
    match (name, base) {
        ("core", OptimizerConfig::Core(_)) => Ok(base.clone()),
        _ => Ok(OptimizerConfig::preset(name)?),
    }
}

fn bench_opt(a: BenchOptArgs, exec: Exec, quiet: bool) -> Result<()> {
    let spec: ToySpec = a.system.parse()?;
    let mut base = match &a.config {
        Some(p) => Config::load(p)?,
        None => toy_config(&spec)?,
    };
    if let Some(e) = a.epochs {
        base.trainer.epochs = e;
    }
    let optimizers = a
        .optimizers
        .iter()
        .map(|n| bench_optimizer(n, &base.optimizer).map(|o| (n.clone(), o)))
        .collect::<Result<Vec<_>>>()?;
    let data = generate(&spec, a.frames, a.data_seed)?;
    let mut finals = String::from("optimizer,seed,rmse_e_test,rmse_f_test\n");
    let mut per_epoch = format!("optimizer,seed,{LOG_HEADER}\n");
    for (name, opt) in &optimizers {
        for seed in 0..a.seeds {
            let mut cfg = base.clone();
            cfg.optimizer = opt.clone();
            cfg.trainer.seed = seed;
            let mut t = Trainer::new(cfg, data.clone(), exec)?;
            let logs = t.run(TrainPlan { epochs: base.trainer.epochs, injections: vec![] }, |_, _| Ok(()))?;
            let m = t.test_metrics()?;
            if !quiet {
                eprintln!("{name} seed {seed}: E {:.3} meV/atom, F {:.3} meV/A", m.energy_rmse * 1e3, m.force_rmse * 1e3);
            }
            writeln!(finals, "{name},{seed},{:.6},{:.6}", m.energy_rmse * 1e3, m.force_rmse * 1e3).unwrap();
            for l in &logs {
                writeln!(per_epoch, "{name},{seed},{}", l.csv_row()).unwrap();
            }
        }
    }
    write_text(&a.out, &finals)?;
    if let Some(p) = &a.log_out {
        write_text(p, &per_epoch)?;
    }
    Ok(())
}

fn dump_desc(a: DumpDescArgs, exec: Exec) -> Result<()> {
    let config = load_config(a.config.as_ref())?;
    let spec = config.descriptors.spec()?;
    let confs = load_frames(&a.data, Labels::Optional)?;
    let blocks = compute_blocks(&confs, &spec, exec)?;
    let mut out = String::from("frame,atom,element");
    for r in &spec.radial {
        write!(out, ",rad_{:?}_{}", r.channel, r.eta).unwrap();
    }
    for p in &spec.angular {
        write!(out, ",ang_{:?}_g{}_e{}_l{}_z{}", p.channel, p.gamma, p.eta, p.lambda, p.zeta).unwrap();
    }
    out.push('\n');
    for (i, (c, b)) in confs.iter().zip(&blocks).enumerate() {
        for atom in 0..c.n_atoms() {
            write!(out, "{i},{atom},{}", symbol(c.numbers[atom])?).unwrap();
            for g in b.row(atom) {
                write!(out, ",{g:.10e}").unwrap();
            }
            out.push('\n');
        }
    }
    write_text(&a.out, &out)
}
