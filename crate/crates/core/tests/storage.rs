mod common;

use common::{data, small_config};
use lmlp::storage::xyz::{parse_str, to_xyz_string};
use lmlp::storage::{load_checkpoint, max_force_filter, parse_dataset, save_checkpoint, write_dataset, Checkpoint, Labels};
use lmlp::trainer::{TrainPlan, Trainer};
use lmlp::Exec;

fn trained(epochs: u64) -> Trainer {
    let mut t = Trainer::new(small_config("H,C,Cl:5", 8), data("H,C,Cl:5", 60, 1), Exec::Sequential).unwrap();
    t.run(TrainPlan { epochs, injections: vec![] }, |_, _| Ok(())).unwrap();
    t
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let ck = trained(12).checkpoint().unwrap();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    save_checkpoint(&ck, &a).unwrap();
    let back = load_checkpoint(&a).unwrap();
    assert_eq!(back, ck);
    save_checkpoint(&back, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(back.elements(), vec![1, 6, 17]);
    assert_eq!(back.meta.epoch, 12);
}

#[test]
fn resumed_run_equals_uninterrupted_run() {
    let full = trained(40);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.ckpt");
    save_checkpoint(&trained(20).checkpoint().unwrap(), &path).unwrap();
    let mut resumed = Trainer::from_checkpoint(load_checkpoint(&path).unwrap(), data("H,C,Cl:5", 60, 1), Exec::Sequential).unwrap();
    resumed.run(TrainPlan { epochs: 20, injections: vec![] }, |_, _| Ok(())).unwrap();
    assert_eq!(resumed.epoch, 40);
    assert_eq!(resumed.checkpoint().unwrap().to_bytes().unwrap(), full.checkpoint().unwrap().to_bytes().unwrap());
}

#[test]
fn resume_needs_the_original_data() {
    let ck = trained(3).checkpoint().unwrap();
    let err = Trainer::from_checkpoint(ck, data("H,C,Cl:5", 30, 1), Exec::Sequential).err().unwrap();
    assert!(err.to_string().contains("frame"), "{err}");
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ckpt");
    let bytes = trained(2).checkpoint().unwrap().to_bytes().unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    let err = load_checkpoint(&path).unwrap_err().to_string();
    assert!(err.contains("x.ckpt") && err.contains("truncated"), "{err}");
    assert!(load_checkpoint(dir.path().join("missing.ckpt")).is_err());
    assert!(Checkpoint::from_bytes(b"LMLP").is_err());
}

#[test]
fn xyz_round_trip_preserves_every_bit() {
    let confs = data("H,C,Cl:5", 20, 4);
    let text = to_xyz_string(&confs).unwrap();
    let back = parse_str(&text, "mem", 4, Labels::Required).unwrap();
    assert_eq!(back.len(), confs.len());
    for (a, b) in confs.iter().zip(&back) {
        assert_eq!(a.numbers, b.numbers);
        assert_eq!(a.positions, b.positions);
        assert_eq!(a.energy, b.energy);
        assert_eq!(a.forces, b.forces);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.xyz");
    write_dataset(&path, &confs).unwrap();
    let from_file = parse_dataset(&path, Labels::Required).unwrap();
    assert_eq!(from_file.iter().map(|c| c.energy).collect::<Vec<_>>(), confs.iter().map(|c| c.energy).collect::<Vec<_>>());
    assert_eq!(parse_dataset(&path, Labels::Required).unwrap()[3].id, from_file[3].id);
}

#[test]
fn missing_forces_name_the_frame() {
    let text = "2\nenergy=-1.0\nH 0 0 0 0 0 0\nH 0 0 0.7 0 0 0\n2\nenergy=-1.0\nH 0 0 0\nH 0 0 0.7\n";
    let err = parse_str(text, "d.xyz", 0, Labels::Required).unwrap_err().to_string();
    assert!(err.contains("d.xyz") && err.contains("frame 1"), "{err}");
    assert_eq!(parse_str(text, "d.xyz", 0, Labels::Optional).unwrap().len(), 2);
}

#[test]
fn force_filter_drops_large_forces() {
    let mut confs = data("H,C:3", 10, 1);
    confs[2].forces.as_mut().unwrap()[0][1] = 20.0;
    let (kept, removed) = max_force_filter(confs, 15.0).unwrap();
    assert_eq!((kept.len(), removed), (9, 1));
}
