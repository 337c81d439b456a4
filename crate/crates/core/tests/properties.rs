use diffail::diffusion::DiffusionSchedule;
use diffail::envs::ReplayBuffer;
use diffail::evalx::{pearson, spearman};
use diffail::numerics::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn series() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (3usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-100.0f64..100.0, n),
            prop::collection::vec(-100.0f64..100.0, n),
        )
    })
}

proptest! {
    #[test]
    fn pearson_is_affine_invariant((x, y) in series(), a in 0.1f64..10.0, b in -50.0f64..50.0) {
        let r = pearson(&x, &y);
        prop_assume!(r.is_ok());
        let r = r.unwrap();
        let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        prop_assert!((pearson(&xs, &y).unwrap() - r).abs() < 1e-9);
        let neg: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
        prop_assert!((pearson(&neg, &y).unwrap() + r).abs() < 1e-9);
        prop_assert!((pearson(&y, &x).unwrap() - r).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&r));
    }

    #[test]
    fn spearman_ignores_monotone_maps((x, y) in series()) {
        let r = spearman(&x, &y);
        prop_assume!(r.is_ok());
        let cubed: Vec<f64> = x.iter().map(|v| v.powi(3) + 7.0).collect();
        prop_assert!((spearman(&cubed, &y).unwrap() - r.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn buffer_keeps_the_newest_items(cap in 1usize..50, n in 0usize..200) {
        let mut buf = ReplayBuffer::new(cap);
        for i in 0..n {
            buf.push(i);
        }
        prop_assert_eq!(buf.len(), n.min(cap));
        let mut kept: Vec<usize> = buf.iter().copied().collect();
        kept.sort_unstable();
        let want: Vec<usize> = (n.saturating_sub(cap)..n).collect();
        prop_assert_eq!(kept, want);
        if n > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
            let draws = buf.sample(64, &mut rng).unwrap();
            prop_assert!(draws.iter().all(|&&v| v + cap >= n && v < n));
        }
    }

    #[test]
    fn schedule_alpha_bar_decreases(t in 1usize..50, b0 in 1e-5f64..0.1, span in 0.0f64..0.5) {
        let s = DiffusionSchedule::linear(t, b0, b0 + span).unwrap();
        let mut prev = 1.0;
        for k in 1..=t {
            let ab = s.alpha_bar(k);
            prop_assert!(ab > 0.0 && ab < prev);
            prop_assert!((ab - prev * s.alpha(k)).abs() <= 1e-15);
            prev = ab;
        }
    }

    #[test]
    fn matmul_matches_loops(m in 1usize..9, k in 1usize..9, n in 1usize..9, seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = diffail::diffusion::standard_normal(m, k, &mut rng);
        let b = diffail::diffusion::standard_normal(k, n, &mut rng);
        let c = Tensor::matmul(&a, &b, false, false);
        let at = Tensor::from_vec(k, m, (0..k * m).map(|i| a.get(i % m, i / m)).collect());
        let bt = Tensor::from_vec(n, k, (0..n * k).map(|i| b.get(i % k, i / k)).collect());
        let ct = Tensor::matmul(&at, &bt, true, true);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|l| a.get(i, l) * b.get(l, j)).sum();
                prop_assert!((c.get(i, j) - want).abs() < 1e-12);
                prop_assert!((ct.get(i, j) - want).abs() < 1e-12);
            }
        }
        let t = Tensor::from_vec(m, k, a.data().to_vec());
        prop_assert_eq!(t, a);
    }
}
