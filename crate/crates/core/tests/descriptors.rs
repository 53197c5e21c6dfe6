mod common;

use common::{derivative_error, permutation_exact, random_conf, random_rotation, rotation_error, sum_rule_error, translation_exact};
use lmlp::descriptors::{compute_block, DescriptorGrid, DescriptorSpec};
use lmlp::elements::Channel;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const ELEMENTS: [u8; 6] = [1, 6, 8, 17, 26, 35];

fn small_spec() -> DescriptorSpec {
    DescriptorGrid {
        cutoff: 5.0,
        radial_channels: Channel::ALL.to_vec(),
        eta_rad: vec![0.0, 0.5],
        angular_channels: Channel::ALL.to_vec(),
        eta_ang: vec![0.1],
        lambdas: vec![-1.0, 1.0],
        zetas: vec![1.0, 3.0],
    }
    .build()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn translation_invariance_is_exact(seed in any::<u64>(), n in 2usize..7, shift in prop::array::uniform3(-20i32..20)) {
        let c = random_conf(&mut ChaCha8Rng::seed_from_u64(seed), n, &ELEMENTS);
        prop_assert!(translation_exact(&c, &small_spec(), shift));
    }

    #[test]
    fn rotation_invariance(seed in any::<u64>(), n in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_conf(&mut rng, n, &ELEMENTS);
        let r = random_rotation(&mut rng);
        prop_assert!(rotation_error(&c, &small_spec(), &r) <= 1e-10);
    }

    #[test]
    fn permutation_invariance_is_exact(seed in any::<u64>(), n in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_conf(&mut rng, n, &ELEMENTS);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        prop_assert!(permutation_exact(&c, &small_spec(), &perm));
    }

    #[test]
    fn derivatives_sum_to_zero(seed in any::<u64>(), n in 2usize..7) {
        let c = random_conf(&mut ChaCha8Rng::seed_from_u64(seed), n, &ELEMENTS);
        prop_assert!(sum_rule_error(&c, &small_spec()) <= 1e-10);
    }

    #[test]
    fn values_are_finite_and_bounded_by_cutoff(seed in any::<u64>(), n in 1usize..7) {
        let c = random_conf(&mut ChaCha8Rng::seed_from_u64(seed), n, &ELEMENTS);
        let b = compute_block(&c, &small_spec()).unwrap();
        prop_assert!(b.values.iter().all(|g| g.is_finite() && *g >= 0.0));
    }
}

#[test]
fn derivatives_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..8 {
        let c = random_conf(&mut rng, 5, &ELEMENTS);
        let e = derivative_error(&c, &small_spec(), 1e-4);
        assert!(e < 1e-5, "{e}");
    }
}

#[test]
fn atoms_beyond_the_cutoff_do_not_interact() {
    let spec = small_spec();
    let near = lmlp::Conformation::new(vec![1, 6], vec![[0.0; 3], [1.1, 0.0, 0.0]]);
    let mut far = near.clone();
    far.numbers.push(17);
    far.positions.push([0.0, 0.0, 5.0 + 1e-9]);
    far.numbers.push(35);
    far.positions.push([-5.5, 0.3, 0.0]);
    let (a, b) = (compute_block(&near, &spec).unwrap(), compute_block(&far, &spec).unwrap());
    assert_eq!(a.row(0), b.row(0));
    assert_eq!(a.row(1), b.row(1));
}
