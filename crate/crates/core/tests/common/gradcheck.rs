//! Finite-difference gradient checks. The reference values come from the
//! gradient-free forward paths (`predict`, `eval`, plain arithmetic), not
//! from the tape.

use diffail::ail::{
    interpolate, record_disc_objective_diffail, record_disc_objective_gail, record_gradient_penalty, Discriminator,
    DiscStepNoise, GailDiscriminator,
};
use diffail::diffusion::{
    diff_loss, standard_normal, DenoiserConfig, DenoiserNet, DiffusionSchedule, NoiseDraw, PairBatch, PairMode, D_CEIL,
    D_FLOOR,
};
use diffail::numerics::{sigmoid, Graph, NodeId, Tensor};
use diffail::sac::{squashed_log_prob, SacAgent, SacBatch, SacConfig, LOG_STD_MAX, LOG_STD_MIN, SQUASH_EPS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::max_rel_err;

const H: f64 = 1e-6;

pub fn tiny() -> DenoiserConfig {
    DenoiserConfig {
        hidden: 8,
        hidden_layers: 2,
        time_embed_dim: 4,
    }
}

pub fn batch(rows: usize, dim: usize, shift: f64, rng: &mut ChaCha8Rng) -> PairBatch {
    PairBatch {
        x0: standard_normal(rows, dim, rng).map(|v| 0.5 * v + shift),
        mode: PairMode::StateAction,
    }
}

/// Central differences of `f` over every entry of every tensor in `params`.
fn numeric_grads<P: Clone>(
    base: &P,
    count: usize,
    get: impl Fn(&mut P) -> Vec<&mut Tensor>,
    f: impl Fn(&P) -> f64,
) -> Vec<Tensor> {
    let mut out = Vec::with_capacity(count);
    let shapes: Vec<[usize; 2]> = get(&mut base.clone()).iter().map(|t| t.shape()).collect();
    for (k, shape) in shapes.into_iter().enumerate() {
        let mut g = Tensor::zeros(shape[0], shape[1]);
        for i in 0..g.len() {
            let mut plus = base.clone();
            get(&mut plus)[k].data_mut()[i] += H;
            let mut minus = base.clone();
            get(&mut minus)[k].data_mut()[i] -= H;
            g.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * H);
        }
        out.push(g);
    }
    out
}

fn tape_grads(g: &mut Graph, loss: NodeId, params: &[NodeId]) -> Vec<Tensor> {
    let grads = g.backward(loss, params).unwrap();
    params.iter().map(|&p| grads.tensor(g, p).unwrap().clone()).collect()
}

fn reference_diffail_objective(
    den: &DenoiserNet,
    e: &PairBatch,
    p: &PairBatch,
    draw: &NoiseDraw,
    sched: &DiffusionSchedule,
) -> f64 {
    let d = |b: &PairBatch| -> Vec<f64> {
        diff_loss(den, b, draw, sched)
            .unwrap()
            .data()
            .iter()
            .map(|l| (-l).exp().clamp(D_FLOOR, D_CEIL))
            .collect()
    };
    let de = d(e);
    let dp = d(p);
    let n = de.len() as f64;
    de.iter().map(|v| v.ln()).sum::<f64>() / n + dp.iter().map(|v| (1.0 - v).ln()).sum::<f64>() / n
}

/// Denoiser adversarial objective.
pub fn denoiser_objective_err() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let den = DenoiserNet::new(3, tiny(), &mut rng);
    let sched = DiffusionSchedule::linear(10, 1e-4, 2e-2).unwrap();
    let e = batch(5, 3, 0.0, &mut rng);
    let p = batch(5, 3, 0.7, &mut rng);
    let draw = NoiseDraw::sample(5, 3, 10, &mut rng);

    let mut g = Graph::new();
    let tr = record_disc_objective_diffail(&mut g, &den, &e, &p, &draw, &sched).unwrap();
    let reference = reference_diffail_objective(&den, &e, &p, &draw, &sched);
    assert!((g.value(tr.objective).item() - reference).abs() < 1e-12);
    let analytic = tape_grads(&mut g, tr.objective, &tr.params);
    let numeric = numeric_grads(&den, analytic.len(), |d| d.params_mut(), |d| {
        reference_diffail_objective(d, &e, &p, &draw, &sched)
    });
    max_rel_err(&analytic, &numeric)
}

fn reference_gail_objective(d: &GailDiscriminator, e: &PairBatch, p: &PairBatch) -> f64 {
    let prob = |b: &PairBatch| -> Vec<f64> {
        d.net.eval(&b.x0).unwrap().data().iter().map(|&l| sigmoid(l).clamp(D_FLOOR, D_CEIL)).collect()
    };
    let (de, dp) = (prob(e), prob(p));
    let n = de.len() as f64;
    de.iter().map(|v| v.ln()).sum::<f64>() / n + dp.iter().map(|v| (1.0 - v).ln()).sum::<f64>() / n
}

/// GAIL objective.
pub fn gail_objective_err() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let disc = GailDiscriminator::new(4, tiny(), &mut rng);
    let e = batch(6, 4, 0.0, &mut rng);
    let p = batch(6, 4, 1.0, &mut rng);
    let mut g = Graph::new();
    let tr = record_disc_objective_gail(&mut g, &disc, &e, &p).unwrap();
    assert!((g.value(tr.objective).item() - reference_gail_objective(&disc, &e, &p)).abs() < 1e-12);
    let analytic = tape_grads(&mut g, tr.objective, &tr.params);
    let numeric = numeric_grads(&disc, analytic.len(), |d| d.net.params_mut(), |d| {
        reference_gail_objective(d, &e, &p)
    });
    max_rel_err(&analytic, &numeric)
}

/// Penalty computed without the tape: input gradients of `log D` by central
/// differences at a coarser step.
fn reference_penalty(disc: &Discriminator, e: &PairBatch, p: &PairBatch, u: &[f64], draw: Option<&NoiseDraw>) -> f64 {
    let x_hat = interpolate(&e.x0, &p.x0, u);
    let log_d = |x: &Tensor| -> Vec<f64> {
        let b = PairBatch {
            x0: x.clone(),
            mode: e.mode,
        };
        match disc {
            Discriminator::Diffusion { denoiser, sched } => diff_loss(denoiser, &b, draw.unwrap(), sched)
                .unwrap()
                .data()
                .iter()
                .map(|l| (-l).exp().clamp(D_FLOOR, D_CEIL).ln())
                .collect(),
            Discriminator::Gail(d) => d.probabilities(x).unwrap().data().iter().map(|v| v.ln()).collect(),
        }
    };
    let hx = 1e-4;
    let (rows, cols) = (x_hat.rows(), x_hat.cols());
    let mut sq = vec![0.0; rows];
    for j in 0..cols {
        let mut plus = x_hat.clone();
        let mut minus = x_hat.clone();
        for i in 0..rows {
            plus.data_mut()[i * cols + j] += hx;
            minus.data_mut()[i * cols + j] -= hx;
        }
        let (a, b) = (log_d(&plus), log_d(&minus));
        for i in 0..rows {
            let gij = (a[i] - b[i]) / (2.0 * hx);
            sq[i] += gij * gij;
        }
    }
    sq.iter().map(|s| (s.sqrt() - 1.0).powi(2)).sum::<f64>() / rows as f64
}

fn check_penalty(disc: Discriminator, rng: &mut ChaCha8Rng) -> f64 {
    let dim = disc.pair_dim();
    let e = batch(4, dim, 0.0, rng);
    let p = batch(4, dim, 0.8, rng);
    let noise = disc.sample_step_noise(4, true, rng);
    let u = noise.mix.clone().unwrap();

    let mut g = Graph::new();
    let tr = disc.record_objective(&mut g, &e, &p, &noise, 1.0).unwrap();
    let pen = tr.penalty.unwrap();
    let reference = reference_penalty(&disc, &e, &p, &u, noise.draw.as_ref());
    assert!(
        (g.value(pen).item() - reference).abs() <= 1e-6 * reference.abs().max(1.0),
        "penalty {} vs {reference}",
        g.value(pen).item()
    );
    let analytic = tape_grads(&mut g, pen, &tr.params);

    // Parameter gradients of the tape's penalty value against central
    // differences of the same value recomputed from scratch.
    let value = |d: &Discriminator| -> f64 {
        let mut g = Graph::new();
        let params = d.register(&mut g);
        let noise = DiscStepNoise {
            draw: noise.draw.clone(),
            mix: None,
        };
        let id = record_gradient_penalty(&mut g, &e.x0, &p.x0, &u, |g, x| {
            let dd = match d {
                Discriminator::Diffusion { denoiser, sched } => {
                    let l = denoiser.record_loss_with(g, x, noise.draw.as_ref().unwrap(), sched, &params)?;
                    diffail::ail::record_d_from_loss(g, l)
                }
                Discriminator::Gail(gd) => {
                    let logit = gd.net.forward_with(g, x, &params)?;
                    diffail::ail::record_d_from_logit(g, logit)
                }
            };
            Ok(g.log(dd))
        })
        .unwrap();
        g.value(id).item()
    };
    let numeric = numeric_grads(&disc, analytic.len(), |d| d.params_mut(), value);
    max_rel_err(&analytic, &numeric)
}

/// Penalty on the diffusion discriminator.
pub fn penalty_diffusion_err() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let disc = Discriminator::Diffusion {
        denoiser: DenoiserNet::new(3, tiny(), &mut rng),
        sched: DiffusionSchedule::linear(10, 1e-4, 2e-2).unwrap(),
    };
    check_penalty(disc, &mut rng)
}

/// Penalty on the GAIL discriminator.
pub fn penalty_gail_err() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let disc = Discriminator::Gail(GailDiscriminator::new(3, tiny(), &mut rng));
    check_penalty(disc, &mut rng)
}

fn sac_fixture(seed: u64) -> (SacAgent, SacBatch, Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SacConfig {
        hidden: 8,
        ..SacConfig::default()
    };
    let mut agent = SacAgent::new(3, 2, cfg, &mut rng);
    agent.log_alpha = -0.7;
    let k = 5;
    let batch = SacBatch {
        s: standard_normal(k, 3, &mut rng),
        a: standard_normal(k, 2, &mut rng).map(|v| v.tanh()),
        s_next: standard_normal(k, 3, &mut rng),
        r: standard_normal(k, 1, &mut rng),
        done: Tensor::zeros(k, 1),
    };
    let targets = standard_normal(k, 1, &mut rng);
    let z = standard_normal(k, 2, &mut rng);
    (agent, batch, targets, z)
}

fn reference_critic(agent: &SacAgent, b: &SacBatch, y: &Tensor) -> f64 {
    let q = agent.q1.eval(&Tensor::concat_cols(&[&b.s, &b.a])).unwrap();
    q.data().iter().zip(y.data()).map(|(q, y)| (q - y).powi(2)).sum::<f64>() / y.len() as f64
}

fn reference_policy(agent: &SacAgent, b: &SacBatch, z: &Tensor) -> f64 {
    let out = agent.policy.eval(&b.s).unwrap();
    let a = agent.act_dim;
    let mu = out.slice_cols(0, a);
    let ls = out.slice_cols(a, 2 * a).map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
    let u = Tensor::from_vec(
        mu.rows(),
        a,
        (0..mu.len()).map(|i| mu.data()[i] + ls.data()[i].exp() * z.data()[i]).collect(),
    );
    let logp = squashed_log_prob(&mu, &ls, &u, SQUASH_EPS);
    let sa = Tensor::concat_cols(&[&b.s, &u.map(f64::tanh)]);
    let q1 = agent.q1.eval(&sa).unwrap();
    let q2 = agent.q2.eval(&sa).unwrap();
    let alpha = agent.alpha();
    (0..b.s.rows())
        .map(|i| alpha * logp.data()[i] - q1.data()[i].min(q2.data()[i]))
        .sum::<f64>()
        / b.s.rows() as f64
}

pub fn sac_critic_err() -> f64 {
    let (agent, b, y, z) = sac_fixture(21);
    let mut g = Graph::new();
    let tr = agent.record_losses_for_check(&mut g, &b, &y, &z).unwrap();
    assert!((g.value(tr.critic).item() - reference_critic(&agent, &b, &y)).abs() < 1e-12);
    let analytic = tape_grads(&mut g, tr.critic, &tr.critic_params);
    let numeric = numeric_grads(&agent, analytic.len(), |a| a.q1.params_mut(), |a| reference_critic(a, &b, &y));
    max_rel_err(&analytic, &numeric)
}

pub fn sac_policy_err() -> f64 {
    let (agent, b, y, z) = sac_fixture(22);
    let mut g = Graph::new();
    let tr = agent.record_losses_for_check(&mut g, &b, &y, &z).unwrap();
    assert!((g.value(tr.policy).item() - reference_policy(&agent, &b, &z)).abs() < 1e-10);
    let analytic = tape_grads(&mut g, tr.policy, &tr.policy_params);
    let numeric = numeric_grads(&agent, analytic.len(), |a| a.policy.params_mut(), |a| {
        reference_policy(a, &b, &z)
    });
    max_rel_err(&analytic, &numeric)
}
