//! Expert demonstrations: an LQR controller for the point mass and a SAC
//! policy trained on the true reward for the pendulum.

mod dataset;
mod lqr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use dataset::{ExpertDataset, ExpertMethod, Subsample, Trajectory, DATASET_MAGIC, DATASET_VERSION};
pub use lqr::{pointmass_system, riccati_step, solve_lqr, spectral_radius, LqrSolution};

use crate::envs::{episode_return, random_action, EnvId, Environment, ReplayBuffer, Transition};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::sac::{SacAgent, SacBatch, SacConfig};

/// `value ≥ reference − (1 − frac)·|reference|`; for a positive reference
/// this is `value ≥ frac·reference`, and it stays meaningful for negative
/// returns.
pub fn within_fraction(value: f64, reference: f64, frac: f64) -> bool {
    value >= reference - (1.0 - frac) * reference.abs()
}

/// Settings for the SAC expert path.
#[derive(Clone, Debug, PartialEq)]
pub struct SacExpertConfig {
    pub steps: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// The final expert must be within this fraction of its best evaluation.
    pub floor_fraction: f64,
    pub sac: SacConfig,
}

impl Default for SacExpertConfig {
    fn default() -> Self {
        SacExpertConfig {
            steps: 200_000,
            eval_interval: 5_000,
            eval_episodes: 10,
            floor_fraction: 0.9,
            sac: SacConfig::default(),
        }
    }
}

/// What `generate_expert` measured alongside the dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertReport {
    pub mean_return: f64,
    /// Mean return of the same number of uniform-random rollouts.
    pub random_mean_return: f64,
    pub margin: f64,
    /// Best evaluation seen while training a SAC expert.
    pub best_training_return: Option<f64>,
}

pub const LQR_ITERS: usize = 100_000;
pub const LQR_TOL: f64 = 1e-10;

/// The point-mass LQR controller.
pub fn pointmass_lqr() -> Result<LqrSolution> {
    let (a, b, q, r) = pointmass_system(Environment::new(EnvId::PointMass).spec().dt);
    solve_lqr(&a, &b, &q, &r, LQR_ITERS, LQR_TOL)
}

/// Mean return of `n` uniform-random episodes.
pub fn random_policy_return(env: &Environment, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let act_dim = env.spec().act_dim;
    let total: f64 = (0..n)
        .map(|_| episode_return(&env.rollout(&mut rng, |_, r| random_action(act_dim, r))))
        .sum();
    total / n as f64
}

/// Mean return of `n` episodes of the deterministic SAC policy.
pub fn evaluate_agent<R: Rng + ?Sized>(env: &Environment, agent: &SacAgent, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    let episodes = env.run_episodes(n, rng, |obs, _| agent.act_deterministic(obs))?;
    Ok(episodes.iter().map(|e| episode_return(e)).collect())
}

/// Trains SAC on the environment's own reward and returns the best
/// evaluated snapshot with its evaluation return.
pub fn train_sac_expert(env: &Environment, cfg: &SacExpertConfig, seed: u64) -> Result<(SacAgent, f64)> {
    if cfg.eval_interval == 0 || cfg.eval_episodes == 0 {
        return Err(Error::Config("eval interval and episode count must be positive".into()));
    }
    let spec = env.spec().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e7a1);
    let mut agent = SacAgent::new(spec.obs_dim, spec.act_dim, cfg.sac.clone(), &mut rng);
    let mut buffer: ReplayBuffer<Transition> = ReplayBuffer::new(ReplayBuffer::<Transition>::DEFAULT_CAPACITY);
    let mut best: Option<(SacAgent, f64)> = None;

    let mut s = env.reset(&mut rng);
    let mut t = 0;
    for step in 1..=cfg.steps {
        let a = if step <= cfg.sac.warmup {
            random_action(spec.act_dim, &mut rng)
        } else {
            let (a, _) = agent.policy_sample(&Tensor::row(s.clone()), &mut rng)?;
            a.into_vec()
        };
        let tr = env.step(&s, &a, t);
        let done = tr.done;
        s = tr.s_next.clone();
        buffer.push(tr);
        t += 1;
        if done {
            s = env.reset(&mut rng);
            t = 0;
        }
        if step > cfg.sac.warmup {
            let sampled = buffer.sample(cfg.sac.batch_size, &mut rng)?;
            let rewards = sampled.iter().map(|tr| tr.true_r).collect();
            agent.update(&SacBatch::from_steps(&sampled, rewards), &mut rng)?;
        }
        if step % cfg.eval_interval == 0 || step == cfg.steps {
            let returns = evaluate_agent(env, &agent, cfg.eval_episodes, &mut eval_rng)?;
            let mean = returns.iter().sum::<f64>() / returns.len() as f64;
            if best.as_ref().is_none_or(|(_, b)| mean > *b) {
                best = Some((agent.clone(), mean));
            }
        }
    }
    best.ok_or_else(|| Error::Config("SAC expert needs at least one training step".into()))
}

/// Rolls out `n_traj` full-horizon expert episodes. The same arguments give
/// byte-identical datasets.
pub fn generate_expert(
    env_id: EnvId,
    method: ExpertMethod,
    n_traj: usize,
    seed: u64,
    sac_cfg: &SacExpertConfig,
) -> Result<(ExpertDataset, ExpertReport)> {
    if n_traj == 0 {
        return Err(Error::Usage("an expert dataset needs at least one trajectory".into()));
    }
    let env = Environment::new(env_id);
    let spec = env.spec().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (episodes, best) = match method {
        ExpertMethod::Lqr => {
            if env_id != EnvId::PointMass {
                return Err(Error::Config(format!("the lqr expert only supports pointmass, not {env_id}")));
            }
            let lqr = pointmass_lqr()?;
            let episodes = (0..n_traj)
                .map(|_| env.rollout(&mut rng, |s, _| lqr.action(s)))
                .collect::<Vec<_>>();
            (episodes, None)
        }
        ExpertMethod::Sac => {
            let (agent, best) = train_sac_expert(&env, sac_cfg, seed)?;
            let episodes = env.run_episodes(n_traj, &mut rng, |obs, _| agent.act_deterministic(obs))?;
            (episodes, Some(best))
        }
    };
    let dataset = ExpertDataset {
        env: env_id,
        obs_dim: spec.obs_dim,
        act_dim: spec.act_dim,
        horizon: spec.horizon,
        method,
        seed,
        trajectories: episodes.into_iter().map(|transitions| Trajectory { transitions }).collect(),
    };
    let mean_return = dataset.mean_return();
    if let Some(best) = best {
        if !within_fraction(mean_return, best, sac_cfg.floor_fraction) {
            return Err(Error::ExpertBelowFloor {
                mean: mean_return,
                floor: best - (1.0 - sac_cfg.floor_fraction) * best.abs(),
            });
        }
    }
    let random_mean_return = random_policy_return(&env, n_traj, seed.wrapping_add(1));
    Ok((
        dataset,
        ExpertReport {
            mean_return,
            random_mean_return,
            margin: mean_return - random_mean_return,
            best_training_return: best,
        },
    ))
}
