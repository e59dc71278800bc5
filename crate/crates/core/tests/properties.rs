use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tfim_core::cavity::{tv, tv_norm, CavityModel, GridKernel, ResamplingOperator};

fn random_measure(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-3).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn random_kernel(rng: &mut ChaCha8Rng, n: usize) -> GridKernel {
    (0..n).map(|_| random_measure(rng, n)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn resampling_preserves_mass_and_contracts(seed in any::<u64>(), lambda in 0.2f64..3.0, h in -1.0f64..1.0, eta in 0usize..8) {
        let model = CavityModel::new(3, 1.0, lambda, h, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ks = [random_kernel(&mut rng, 8), random_kernel(&mut rng, 8)];
        let op = ResamplingOperator::new(&model, &[&ks[0], &ks[1]]).unwrap();
        let a = random_measure(&mut rng, 8);
        let b = random_measure(&mut rng, 8);
        let ra = op.apply(eta, &a);
        let rb = op.apply(eta, &b);
        prop_assert!((ra.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(ra.iter().all(|&x| x >= 0.0));
        prop_assert!(tv(&ra, &rb) <= tv(&a, &b) + 1e-12);
    }

    #[test]
    fn tv_is_a_metric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c) = (random_measure(&mut rng, 16), random_measure(&mut rng, 16), random_measure(&mut rng, 16));
        prop_assert!((tv(&a, &b) - tv(&b, &a)).abs() < 1e-15);
        prop_assert!(tv(&a, &c) <= tv(&a, &b) + tv(&b, &c) + 1e-15);
        prop_assert!(tv(&a, &b) <= 1.0 + 1e-15);
        let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        prop_assert!((tv_norm(&diff) - tv(&a, &b)).abs() < 1e-15);
    }

    #[test]
    fn site_law_is_a_probability(lambda in 0.1f64..4.0, h in -2.0f64..2.0, f in proptest::collection::vec(-1.0f64..1.0, 4)) {
        let model = CavityModel::new(4, 1.0, lambda, h, 2).unwrap();
        let law = model.site_law(&f);
        prop_assert!((law.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(law.iter().all(|&x| x > 0.0));
    }
}
