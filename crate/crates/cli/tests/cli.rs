use std::path::Path;
use std::process::{Command, Output};

use lmlp::storage::load_checkpoint;
use lmlp::synth::{toy_config, toy_energy_forces, ToySpec};

fn lmlp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lmlp"))
        .args(args)
        .arg("--quiet")
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = lmlp(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Toy configuration shrunk for fast tests.
fn write_config(dir: &Path, system: &str, epochs: u64) {
    let mut c = toy_config(&system.parse::<ToySpec>().unwrap()).unwrap();
    c.descriptors.eta_rad = vec![0.0, 0.3, 1.0];
    c.descriptors.zetas = vec![1.0];
    c.network.hidden = vec![8];
    c.trainer.epochs = epochs;
    c.trainer.eval_cap = 10;
    c.trainer.log_every = 1;
    c.ensemble.members = 1;
    std::fs::write(dir.join("cfg.toml"), c.to_toml_string().unwrap()).unwrap();
}

fn setup(system: &str, frames: usize, epochs: u64) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--system", system, "--n", &frames.to_string(), "--seed", "1", "--out", "d.xyz"]);
    write_config(dir.path(), system, epochs);
    dir
}

fn read(dir: &Path, f: &str) -> String {
    std::fs::read_to_string(dir.join(f)).unwrap()
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let k = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(k).unwrap().parse().unwrap()).collect()
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--system", "H,C,Cl:5", "--n", "20", "--seed", "3", "--out", "a.xyz"]);
    ok(d, &["synth", "--system", "H,C,Cl:5", "--n", "20", "--seed", "3", "--out", "b.xyz", "--config-out", "c.toml"]);
    assert_eq!(read(d, "a.xyz"), read(d, "b.xyz"));
    assert!(read(d, "c.toml").contains("[reference_energies]"));
    assert_eq!(code(&lmlp(d, &["synth", "--system", "H,Xx:5", "--n", "2", "--out", "x.xyz"])), 2);
}

#[test]
fn train_writes_checkpoint_logs_and_manifest() {
    let dir = setup("H,C:4", 50, 10);
    let d = dir.path();
    ok(d, &["train", "--config", "cfg.toml", "--data", "d.xyz", "--out", "run"]);
    for f in ["run/member0.ckpt", "run/member0.log.csv", "run/ensemble.toml", "run/config.toml"] {
        assert!(d.join(f).exists(), "{f}");
    }
    assert_eq!(read(d, "run/member0.log.csv").lines().count(), 11);
}

#[test]
fn same_seed_gives_identical_logs() {
    let dir = setup("H,C:4", 50, 8);
    let d = dir.path();
    ok(d, &["train", "--config", "cfg.toml", "--data", "d.xyz", "--out", "a", "--seed", "7"]);
    ok(d, &["--threads", "1", "train", "--config", "cfg.toml", "--data", "d.xyz", "--out", "b", "--seed", "7"]);
    assert_eq!(read(d, "a/member0.log.csv"), read(d, "b/member0.log.csv"));
    assert_eq!(std::fs::read(d.join("a/member0.ckpt")).unwrap(), std::fs::read(d.join("b/member0.ckpt")).unwrap());
}

#[test]
fn resume_continues_exactly() {
    let dir = setup("H,C:4", 50, 12);
    let d = dir.path();
    ok(d, &["train", "--config", "cfg.toml", "--data", "d.xyz", "--out", "full"]);
    ok(d, &["train", "--config", "cfg.toml", "--data", "d.xyz", "--out", "half", "--epochs", "6"]);
    ok(d, &["resume", "--checkpoint", "half/member0.ckpt", "--data", "d.xyz", "--epochs", "6"]);
    assert_eq!(read(d, "full/member0.log.csv"), read(d, "half/member0.log.csv"));
    let full = load_checkpoint(d.join("full/member0.ckpt")).unwrap();
    let mut half = load_checkpoint(d.join("half/member0.ckpt")).unwrap();
    // The shorter run records its own epoch budget in the embedded configuration.
    assert_eq!(half.config.trainer.epochs, 6);
    half.config.trainer.epochs = 12;
    assert_eq!(half.to_bytes().unwrap(), full.to_bytes().unwrap());
}

#[test]
fn missing_forces_name_the_frame() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("d.xyz"),
        "2\nenergy=-1.2\nH 0 0 0 0 0 0.1\nH 0 0 1.1 0 0 -0.1\n2\nenergy=-1.1\nH 0 0 0\nH 0 0 1.3\n",
    )
    .unwrap();
    write_config(d, "H:2", 2);
    let out = lmlp(d, &["train", "--config", "cfg.toml", "--data", "d.xyz", "--out", "run"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("frame 1"), "{}", stderr(&out));
}

#[test]
fn usage_data_and_numeric_exit_codes() {
    let dir = setup("H,C:4", 30, 3);
    let d = dir.path();
    assert_eq!(code(&lmlp(d, &["train", "--bogus"])), 1);
    assert_eq!(code(&lmlp(d, &["frobnicate"])), 1);
    assert_eq!(code(&lmlp(d, &["train", "--data", "d.xyz", "--out", "x", "--inject", "soon:d.xyz"])), 1);
    assert_eq!(code(&lmlp(d, &["train", "--data", "missing.xyz", "--out", "x"])), 2);
    std::fs::write(d.join("bad.toml"), "[trainer]\nepochs = 3\nnonsense = 1\n").unwrap();
    let out = lmlp(d, &["train", "--config", "bad.toml", "--data", "d.xyz", "--out", "x"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("bad.toml:3"), "{}", stderr(&out));

    let cfg = read(d, "cfg.toml");
    let start = cfg.find("[optimizer]").unwrap();
    let end = cfg[start + 1..].find("\n[").map_or(cfg.len(), |e| start + 1 + e);
    let diverging = format!("{}[optimizer]\nkind = \"sgd\"\nlr = 1e12\n{}", &cfg[..start], &cfg[end..]);
    std::fs::write(d.join("div.toml"), diverging).unwrap();
    let out = lmlp(d, &["train", "--config", "div.toml", "--data", "d.xyz", "--out", "x", "--epochs", "50"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn predict_single_member_and_empty_file() {
    let dir = setup("H,C:4", 40, 5);
    let d = dir.path();
    ok(d, &["train", "--config", "cfg.toml", "--data", "d.xyz", "--out", "run"]);
    ok(d, &["predict", "--ensemble", "run/ensemble.toml", "--data", "d.xyz", "--out", "p.csv", "--forces-out", "f.csv"]);
    let manifest: toml::Value = toml::from_str(&read(d, "run/ensemble.toml")).unwrap();
    let fe = manifest["rmse_floor_energy"].as_float().unwrap();
    let ff = manifest["rmse_floor_force"].as_float().unwrap();
    let p = read(d, "p.csv");
    assert_eq!(p.lines().count(), 41);
    for u in column(&p, "energy_uncertainty") {
        assert!((u - 4.0 * fe).abs() <= 1e-9 * u);
    }
    let f = read(d, "f.csv");
    for k in ["ux", "uy", "uz"] {
        for u in column(&f, k) {
            assert!((u - ff).abs() <= 1e-9 * u);
        }
    }
    std::fs::write(d.join("empty.xyz"), "").unwrap();
    assert_ne!(code(&lmlp(d, &["predict", "--ensemble", "run/ensemble.toml", "--data", "empty.xyz", "--out", "e.csv"])), 0);
    assert_eq!(code(&lmlp(d, &["predict", "--ensemble", "nope.toml", "--data", "d.xyz", "--out", "e.csv"])), 2);
}

#[test]
fn eval_reports_errors_and_coverage() {
    let dir = setup("H,C:4", 40, 5);
    let d = dir.path();
    ok(d, &["train", "--config", "cfg.toml", "--data", "d.xyz", "--out", "run", "--members", "2"]);
    let out = ok(d, &["eval", "--ensemble", "run/ensemble.toml", "--data", "d.xyz", "--buckets", "3", "--out", "cal.csv"]);
    assert!(out.contains("energy RMSE") && out.contains("energy coverage"));
    assert_eq!(read(d, "cal.csv").lines().count(), 1 + 3 + 3);
}

#[test]
fn one_point_scan_equals_predict() {
    let dir = setup("H,C:4", 40, 5);
    let d = dir.path();
    ok(d, &["train", "--config", "cfg.toml", "--data", "d.xyz", "--out", "run", "--members", "2"]);
    ok(d, &["synth", "--system", "H,C:4", "--n", "1", "--seed", "9", "--out", "t.xyz"]);
    ok(d, &["predict", "--ensemble", "run/ensemble.toml", "--data", "t.xyz", "--out", "p.csv"]);
    let conf = lmlp::storage::parse_dataset(d.join("t.xyz"), lmlp::storage::Labels::Required).unwrap().remove(0);
    let v = lmlp::conformation::sub(&conf.positions[2], &conf.positions[0]);
    let r = lmlp::conformation::dot(&v, &v).sqrt();
    let r = format!("{r:e}");
    ok(d, &["scan", "--ensemble", "run/ensemble.toml", "--template", "t.xyz", "--atom-a", "0", "--atom-b", "2", "--range", &r, &r, "1", "--out", "s.csv"]);
    let s = read(d, "s.csv");
    assert_eq!(column(&s, "energy"), column(&read(d, "p.csv"), "energy"));
    assert_eq!(column(&s, "energy_rel"), vec![0.0]);

    ok(d, &["scan", "--ensemble", "run/ensemble.toml", "--template", "t.xyz", "--atom-a", "0", "--atom-b", "1", "--range", "0.9", "1.5", "4", "--atom-c", "0", "--atom-d", "2", "--range2", "1.2", "2.0", "3", "--out", "g.csv"]);
    assert_eq!(read(d, "g.csv").lines().count(), 1 + 12);
    let bad = lmlp(d, &["scan", "--ensemble", "run/ensemble.toml", "--template", "t.xyz", "--atom-a", "0", "--atom-b", "1", "--range", "1.0", "1.0", "3", "--out", "g.csv"]);
    assert_eq!(code(&bad), 1);
}

#[test]
fn diatomic_scan_finds_the_analytic_minimum() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--system", "H:2", "--n", "300", "--seed", "1", "--out", "d.xyz"]);
    let mut c = toy_config(&"H:2".parse::<ToySpec>().unwrap()).unwrap();
    c.trainer.epochs = 400;
    c.ensemble.members = 2;
    std::fs::write(d.join("cfg.toml"), c.to_toml_string().unwrap()).unwrap();
    ok(d, &["train", "--config", "cfg.toml", "--data", "d.xyz", "--out", "run"]);
    std::fs::write(d.join("t.xyz"), "2\n\nH 0 0 0\nH 0 0 1.2\n").unwrap();
    ok(d, &["scan", "--ensemble", "run/ensemble.toml", "--template", "t.xyz", "--atom-a", "0", "--atom-b", "1", "--range", "1.05", "1.5", "10", "--out", "s.csv"]);
    let s = read(d, "s.csv");
    let (r, e) = (column(&s, "r1"), column(&s, "energy"));
    let model_min = r[(0..r.len()).min_by(|&i, &j| e[i].total_cmp(&e[j])).unwrap()];
    let analytic = |x: f64| toy_energy_forces(&[1, 1], &[[0.0; 3], [0.0, 0.0, x]]).unwrap().0;
    let fine: Vec<f64> = (0..=4500).map(|i| 1.05 + 1e-4 * i as f64).collect();
    let exact_min = fine.iter().copied().min_by(|a, b| analytic(*a).total_cmp(&analytic(*b))).unwrap();
    assert!((model_min - exact_min).abs() <= 0.05 + 1e-9, "model {model_min}, analytic {exact_min}");
}

#[test]
fn bench_opt_adam_special_case_matches() {
    let dir = setup("H,C:4", 40, 6);
    let d = dir.path();
    let mut c = toy_config(&"H,C:4".parse::<ToySpec>().unwrap()).unwrap();
    c.network.hidden = vec![6];
    c.trainer.epochs = 6;
    c.trainer.log_every = 1;
    c.optimizer = lmlp::optimizer::OptimizerConfig::preset("adam").unwrap();
    std::fs::write(d.join("adam_as_core.toml"), c.to_toml_string().unwrap()).unwrap();
    ok(d, &["bench-opt", "--config", "adam_as_core.toml", "--system", "H,C:4", "--frames", "40", "--optimizers", "core,adam,sgd", "--seeds", "2", "--out", "b.csv", "--log-out", "l.csv"]);
    let b = read(d, "b.csv");
    let rows: Vec<&str> = b.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    let strip = |r: &str| r.split_once(',').unwrap().1.to_string();
    assert_eq!(strip(rows[0]), strip(rows[2]));
    assert_eq!(strip(rows[1]), strip(rows[3]));
    assert_eq!(read(d, "l.csv").lines().count(), 1 + 3 * 2 * 6);
    assert_eq!(code(&lmlp(d, &["bench-opt", "--optimizers", "nadam", "--seeds", "1", "--out", "x.csv"])), 2);
}

#[test]
fn dump_desc_writes_one_row_per_atom() {
    let dir = setup("H,C:4", 3, 1);
    let d = dir.path();
    ok(d, &["dump-desc", "--config", "cfg.toml", "--data", "d.xyz", "--out", "g.csv"]);
    let g = read(d, "g.csv");
    assert_eq!(g.lines().count(), 1 + 12);
    let n_cols = g.lines().next().unwrap().split(',').count();
    assert!(g.lines().all(|l| l.split(',').count() == n_cols));
}
