mod common;

use std::collections::BTreeSet;

use common::{data, small_config};
use lmlp::storage::config::SelectionMode;
use lmlp::trainer::{Injection, TrainPlan, Trainer};
use lmlp::{Error, Exec};

fn plan(epochs: u64) -> TrainPlan {
    TrainPlan { epochs, injections: vec![] }
}

#[test]
fn same_seed_same_run() {
    let run = || {
        let mut t = Trainer::new(small_config("H,C:4", 3), data("H,C:4", 60, 1), Exec::Sequential).unwrap();
        let logs = t.run(plan(15), |_, _| Ok(())).unwrap();
        (logs, t.weights.clone())
    };
    let (a, wa) = run();
    let (b, wb) = run();
    assert_eq!(a.len(), 15);
    assert_eq!(a, b);
    assert_eq!(wa, wb);
}

#[test]
fn zero_epochs_leave_everything_untouched() {
    let mut t = Trainer::new(small_config("H,C:4", 0), data("H,C:4", 40, 1), Exec::Sequential).unwrap();
    let w = t.weights.clone();
    let logs = t.run(plan(0), |_, _| Ok(())).unwrap();
    assert!(logs.is_empty());
    assert_eq!(t.weights, w);
    assert_eq!(t.epoch, 0);
}

#[test]
fn parallel_matches_sequential() {
    let run = |exec| {
        let mut t = Trainer::new(small_config("H,C:4", 5), data("H,C:4", 60, 1), exec).unwrap();
        t.run(plan(8), |_, _| Ok(())).unwrap();
        t.weights.clone()
    };
    assert_eq!(run(Exec::Sequential), run(Exec::Parallel));
}

#[test]
fn test_conformations_never_fitted() {
    let mut t = Trainer::new(small_config("H,C:4", 2), data("H,C:4", 80, 1), Exec::Sequential).unwrap();
    let test: BTreeSet<_> = t.test_ids().into_iter().collect();
    assert_eq!(t.n_test(), 8);
    let train = t.train_ids();
    assert!(train.iter().all(|id| !test.contains(id)));
    t.run(plan(30), |tr, o| {
        for &i in &o.subsample {
            assert!(!test.contains(&tr.train_conformation(i).id));
        }
        Ok(())
    })
    .unwrap();
}

#[test]
fn tau_counts_epochs_with_the_element() {
    let mut cfg = small_config("H,C,Cl:3", 4);
    // one conformation per epoch, so some epochs miss an element
    cfg.trainer.fit_fraction = 0.01;
    let mut t = Trainer::new(cfg, data("H,C,Cl:3", 80, 1), Exec::Sequential).unwrap();
    let elements = t.weights.elements();
    let mut seen = vec![0u64; elements.len()];
    t.run(plan(25), |tr, o| {
        let present: BTreeSet<u8> = o.subsample.iter().flat_map(|&i| tr.train_conformation(i).numbers.clone()).collect();
        for (k, z) in elements.iter().enumerate() {
            seen[k] += present.contains(z) as u64;
        }
        Ok(())
    })
    .unwrap();
    assert!(seen.iter().any(|&s| s < 25), "every element appeared every epoch; the test proves nothing");
    for (g, group) in t.optimizer.groups.iter().enumerate() {
        assert_eq!(t.optimizer.state.tau[g], seen[group.network], "group {g}");
    }
}

#[test]
fn random_mode_never_excludes() {
    let mut cfg = small_config("H,C:4", 1);
    cfg.trainer.selection = SelectionMode::Random;
    let mut t = Trainer::new(cfg, data("H,C:4", 60, 1), Exec::Sequential).unwrap();
    t.run(plan(20), |_, o| {
        assert!(o.excluded.is_empty());
        Ok(())
    })
    .unwrap();
    assert!(t.selection.exclusion.iter().all(Option::is_none));
}

#[test]
fn injected_data_is_used_only_after_injection() {
    let mut t = Trainer::new(small_config("H,C:4", 6), data("H,C:4", 40, 1), Exec::Sequential).unwrap();
    let late = data("H,C:4", 40, 2);
    let late_ids: BTreeSet<_> = late.iter().map(|c| c.id).collect();
    let n0 = t.n_train();
    let mut used_late = false;
    let p = TrainPlan { epochs: 20, injections: vec![Injection { after_epoch: 10, data: late }] };
    t.run(p, |tr, o| {
        let late_in = o.subsample.iter().any(|&i| late_ids.contains(&tr.train_conformation(i).id));
        if o.epoch <= 10 {
            assert!(!late_in, "late data fitted in epoch {}", o.epoch);
        }
        used_late |= late_in;
        Ok(())
    })
    .unwrap();
    assert!(used_late);
    assert_eq!(t.n_train() + t.n_test(), 80);
    assert!(t.n_train() > n0);
    assert_eq!(t.n_injections, 1);
}

#[test]
fn injecting_an_unknown_element_fails() {
    let mut t = Trainer::new(small_config("H,C:4", 0), data("H,C:4", 30, 1), Exec::Sequential).unwrap();
    let err = t.inject(data("H,O:4", 10, 9)).unwrap_err();
    assert!(err.to_string().contains('O') || err.to_string().contains('8'), "{err}");
}

#[test]
fn bad_plans_and_data_are_rejected() {
    let mut t = Trainer::new(small_config("H,C:4", 0), data("H,C:4", 30, 1), Exec::Sequential).unwrap();
    let late = data("H,C:4", 5, 3);
    let p = TrainPlan { epochs: 5, injections: vec![Injection { after_epoch: 9, data: late }] };
    assert!(t.run(p, |_, _| Ok(())).is_err());

    let mut d = data("H,C:4", 30, 1);
    d[3].forces = None;
    assert!(matches!(Trainer::new(small_config("H,C:4", 0), d, Exec::Sequential), Err(Error::MissingReference(_))));

    let mut d = data("H,C:4", 30, 1);
    d[4].id = d[2].id;
    assert!(Trainer::new(small_config("H,C:4", 0), d, Exec::Sequential).is_err());
}

#[test]
fn training_reduces_the_error() {
    let mut t = Trainer::new(small_config("H,C:4", 0), data("H,C:4", 100, 1), Exec::Sequential).unwrap();
    let before = t.test_metrics().unwrap();
    t.run(plan(150), |_, _| Ok(())).unwrap();
    let after = t.test_metrics().unwrap();
    assert!(after.energy_rmse < 0.5 * before.energy_rmse, "{before:?} -> {after:?}");
    assert!(after.force_rmse < before.force_rmse, "{before:?} -> {after:?}");
}
