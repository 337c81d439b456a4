use diffail::diffusion::standard_normal;
use diffail::envs::{EnvId, Environment, Transition};
use diffail::expert::{train_sac_expert, SacExpertConfig};
use diffail::numerics::Tensor;
use diffail::sac::{squashed_log_prob, SacAgent, SacBatch, SacConfig, SQUASH_EPS};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn gaussian_log_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// log density of `a = tanh(u)`, with the Jacobian taken by central differences.
fn numeric_log_density(u: &[f64], mu: &[f64], log_std: &[f64]) -> f64 {
    let h = 1e-5;
    (0..u.len())
        .map(|j| {
            let jac = ((u[j] + h).tanh() - (u[j] - h).tanh()) / (2.0 * h);
            gaussian_log_pdf(u[j], mu[j], log_std[j].exp()) - jac.ln()
        })
        .sum()
}

#[test]
fn squashed_log_prob_matches_numeric_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mu = standard_normal(50, 2, &mut rng);
    let log_std = standard_normal(50, 2, &mut rng).map(|v| 0.5 * v);
    let z = standard_normal(50, 2, &mut rng);
    let u = Tensor::from_vec(
        50,
        2,
        (0..100).map(|i| mu.data()[i] + log_std.data()[i].exp() * z.data()[i]).collect(),
    );
    let exact = squashed_log_prob(&mu, &log_std, &u, 0.0);
    for r in 0..50 {
        let want = numeric_log_density(u.row_slice(r), mu.row_slice(r), log_std.row_slice(r));
        let err = (exact.data()[r] - want).abs();
        assert!(err <= 1e-8, "row {r}: {} vs {want} ({err:e})", exact.data()[r]);
    }
}

#[test]
fn sampled_log_prob_uses_the_stabilized_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let agent = SacAgent::new(3, 2, SacConfig::default(), &mut rng);
    let s = standard_normal(20, 3, &mut rng);
    let (mu, ls) = agent.policy_distribution(&s).unwrap();
    let z = standard_normal(20, 2, &mut rng);
    let (a, logp) = agent.squash(&mu, &ls, &z);
    let u = Tensor::from_vec(20, 2, (0..40).map(|i| mu.data()[i] + ls.data()[i].exp() * z.data()[i]).collect());
    assert_eq!(logp, squashed_log_prob(&mu, &ls, &u, SQUASH_EPS));
    assert!(a.data().iter().all(|v| v.abs() <= 1.0));
}

#[test]
fn critic_overfits_a_fixed_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut agent = SacAgent::new(
        3,
        2,
        SacConfig {
            gamma: 0.0,
            ..Default::default()
        },
        &mut rng,
    );
    let k = 32;
    let batch = SacBatch {
        s: standard_normal(k, 3, &mut rng),
        a: standard_normal(k, 2, &mut rng).map(f64::tanh),
        s_next: standard_normal(k, 3, &mut rng),
        r: standard_normal(k, 1, &mut rng),
        done: Tensor::zeros(k, 1),
    };
    let mut best = f64::INFINITY;
    for step in 1..=2000 {
        best = best.min(agent.update(&batch, &mut rng).unwrap().critic_loss);
        if best < 1e-3 {
            eprintln!("critic loss {best:e} at update {step}");
            return;
        }
    }
    panic!("critic loss only reached {best:e}");
}

#[test]
fn learner_view_drops_the_true_reward() {
    let base = Transition {
        s: vec![0.1, 0.2, 0.0, 0.0],
        a: vec![0.5, -0.5],
        s_next: vec![0.1, 0.2, 0.025, -0.025],
        true_r: -0.05,
        done: false,
    };
    let other = Transition { true_r: 1e6, ..base.clone() };
    assert_eq!(base.observed(), other.observed());
}

#[test]
fn temperature_stays_positive_under_large_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let mut agent = SacAgent::new(
        3,
        1,
        SacConfig {
            alpha_lr: 0.5,
            ..Default::default()
        },
        &mut rng,
    );
    for _ in 0..50 {
        let b = SacBatch {
            s: standard_normal(8, 3, &mut rng),
            a: standard_normal(8, 1, &mut rng).map(f64::tanh),
            s_next: standard_normal(8, 3, &mut rng),
            r: standard_normal(8, 1, &mut rng),
            done: Tensor::zeros(8, 1),
        };
        let rep = agent.update(&b, &mut rng).unwrap();
        assert!(rep.alpha > 0.0 && agent.alpha() > 0.0);
    }
}

#[test]
fn non_finite_reward_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let mut agent = SacAgent::new(3, 1, SacConfig::default(), &mut rng);
    let mut r = standard_normal(4, 1, &mut rng);
    r.data_mut()[2] = f64::NAN;
    let b = SacBatch {
        s: standard_normal(4, 3, &mut rng),
        a: Tensor::zeros(4, 1),
        s_next: standard_normal(4, 3, &mut rng),
        r,
        done: Tensor::zeros(4, 1),
    };
    let before = agent.clone();
    assert!(agent.update(&b, &mut rng).is_err());
    assert_eq!(agent.policy, before.policy);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn targets_mix_by_tau(seed in 0u64..1000, tau in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut agent = SacAgent::new(2, 1, SacConfig { hidden: 8, tau, ..Default::default() }, &mut rng);
        let old = agent.q2_target.clone();
        let b = SacBatch {
            s: standard_normal(4, 2, &mut rng),
            a: standard_normal(4, 1, &mut rng).map(f64::tanh),
            s_next: standard_normal(4, 2, &mut rng),
            r: standard_normal(4, 1, &mut rng),
            done: Tensor::zeros(4, 1),
        };
        agent.update(&b, &mut rng).unwrap();
        for ((t, o), on) in agent.q2_target.params().iter().zip(old.params()).zip(agent.q2.params()) {
            for i in 0..t.len() {
                prop_assert_eq!(t.data()[i], tau * on.data()[i] + (1.0 - tau) * o.data()[i]);
            }
        }
    }

    #[test]
    fn actions_stay_in_bounds(seed in 0u64..1000, scale in 0.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = SacAgent::new(3, 2, SacConfig { hidden: 8, ..Default::default() }, &mut rng);
        let s = standard_normal(6, 3, &mut rng).map(|v| v * scale);
        let (a, logp) = agent.policy_sample(&s, &mut rng).unwrap();
        prop_assert!(a.data().iter().all(|v| v.abs() <= 1.0));
        prop_assert!(logp.is_finite());
    }
}

/// SAC on the true pendulum reward; slow, run with `--ignored`.
#[test]
#[ignore]
fn sac_learns_pendulum_from_true_reward() {
    let env = Environment::new(EnvId::Pendulum);
    let cfg = SacExpertConfig {
        steps: 150_000,
        eval_interval: 5000,
        eval_episodes: 10,
        ..Default::default()
    };
    let mut passed = 0;
    for seed in 0..3 {
        let (_, best) = train_sac_expert(&env, &cfg, seed).unwrap();
        eprintln!("seed {seed}: best mean return {best:.1}");
        if best >= -300.0 {
            passed += 1;
        }
    }
    assert!(passed >= 2, "{passed} of 3 seeds reached -300");
}
