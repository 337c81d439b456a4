//! The adversarial imitation loop for DiffAIL and the GAIL baseline.

mod disc;
mod metrics;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use disc::{
    disc_loss_diffail, disc_loss_gail, interpolate, make_pairs, record_d_from_logit, record_d_from_loss,
    record_disc_objective_diffail, record_disc_objective_gail, record_gradient_penalty, sample_mix, DiscStepNoise, DiscTrace, Discriminator,
    GailDiscriminator,
};
pub use metrics::{format_f64, read_metrics, MetricsLog, MetricsRow, METRICS_COLUMNS};

use crate::diffusion::{DenoiserConfig, DenoiserNet, DiffusionSchedule, PairBatch, PairMode};
use crate::envs::{episode_return, random_action, EnvId, Environment, ObservedTransition, ReplayBuffer, Transition};
use crate::error::{Error, Result};
use crate::expert::ExpertDataset;
use crate::numerics::{AdamConfig, AdamState, Checkpoint, Graph, Tensor};
use crate::sac::{SacAgent, SacBatch, SacConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algo {
    DiffAil,
    Gail,
}

impl Algo {
    pub fn as_str(self) -> &'static str {
        match self {
            Algo::DiffAil => "diffail",
            Algo::Gail => "gail",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diffail" => Ok(Algo::DiffAil),
            "gail" => Ok(Algo::Gail),
            other => Err(Error::Config(format!("unknown algo {other:?} (expected diffail or gail)"))),
        }
    }
}

/// Everything one training run depends on.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub algo: Algo,
    pub env: EnvId,
    pub mode: PairMode,
    pub expert: PathBuf,
    /// Number of expert trajectories used for training.
    pub traj: usize,
    pub seed: u64,
    /// Total environment steps `N`.
    pub steps: usize,
    pub batch_size: usize,
    /// Diffusion steps `T`.
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub disc_lr: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    /// `None` picks the per-environment default.
    pub gradient_penalty: Option<bool>,
    pub gp_weight: f64,
    /// Discriminator updates per environment step after warmup.
    pub disc_updates: usize,
    pub warmup: usize,
    pub gamma: f64,
    pub tau: f64,
    pub sac_hidden: usize,
    pub disc_hidden: usize,
    pub disc_layers: usize,
    pub time_embed_dim: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub log: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Writes `wallclock_s` as 0 so reruns give identical files.
    pub deterministic_log: bool,
}

impl TrainConfig {
    pub fn new(env: EnvId, expert: impl Into<PathBuf>) -> Self {
        let sac = SacConfig::default();
        let den = DenoiserConfig::default();
        TrainConfig {
            algo: Algo::DiffAil,
            env,
            mode: PairMode::StateAction,
            expert: expert.into(),
            traj: 1,
            seed: 0,
            steps: 200_000,
            batch_size: sac.batch_size,
            diffusion_steps: 10,
            beta_start: 1e-4,
            beta_end: 2e-2,
            disc_lr: 3e-4,
            actor_lr: sac.actor_lr,
            critic_lr: sac.critic_lr,
            alpha_lr: sac.alpha_lr,
            gradient_penalty: None,
            gp_weight: 0.1,
            disc_updates: 1,
            warmup: sac.warmup,
            gamma: sac.gamma,
            tau: sac.tau,
            sac_hidden: sac.hidden,
            disc_hidden: den.hidden,
            disc_layers: den.hidden_layers,
            time_embed_dim: den.time_embed_dim,
            eval_interval: 2000,
            eval_episodes: 10,
            log: None,
            checkpoint: None,
            deterministic_log: false,
        }
    }

    /// Penalty weight in effect, or `None` when disabled.
    pub fn penalty(&self) -> Option<f64> {
        let on = self.gradient_penalty.unwrap_or(self.env == EnvId::PointMass);
        on.then_some(self.gp_weight)
    }

    pub fn sac_config(&self) -> SacConfig {
        SacConfig {
            hidden: self.sac_hidden,
            gamma: self.gamma,
            tau: self.tau,
            batch_size: self.batch_size,
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            alpha_lr: self.alpha_lr,
            init_log_alpha: 0.0,
            warmup: self.warmup,
        }
    }

    pub fn denoiser_config(&self) -> DenoiserConfig {
        DenoiserConfig {
            hidden: self.disc_hidden,
            hidden_layers: self.disc_layers,
            time_embed_dim: self.time_embed_dim,
        }
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::linear(self.diffusion_steps, self.beta_start, self.beta_end)
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
        }
        let v = value.trim();
        match key.trim() {
            "algo" => self.algo = v.parse()?,
            "env" => self.env = v.parse()?,
            "mode" => self.mode = v.parse()?,
            "expert" => self.expert = v.into(),
            "traj" => self.traj = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "steps" => self.steps = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "diffusion_steps" => self.diffusion_steps = num(key, v)?,
            "beta_start" => self.beta_start = num(key, v)?,
            "beta_end" => self.beta_end = num(key, v)?,
            "disc_lr" => self.disc_lr = num(key, v)?,
            "actor_lr" => self.actor_lr = num(key, v)?,
            "critic_lr" => self.critic_lr = num(key, v)?,
            "alpha_lr" => self.alpha_lr = num(key, v)?,
            "gradient_penalty" => {
                self.gradient_penalty = match v {
                    "auto" => None,
                    other => Some(num(key, other)?),
                }
            }
            "gp_weight" => self.gp_weight = num(key, v)?,
            "disc_updates" => self.disc_updates = num(key, v)?,
            "warmup" => self.warmup = num(key, v)?,
            "gamma" => self.gamma = num(key, v)?,
            "tau" => self.tau = num(key, v)?,
            "sac_hidden" => self.sac_hidden = num(key, v)?,
            "disc_hidden" => self.disc_hidden = num(key, v)?,
            "disc_layers" => self.disc_layers = num(key, v)?,
            "time_embed_dim" => self.time_embed_dim = num(key, v)?,
            "eval_interval" => self.eval_interval = num(key, v)?,
            "eval_episodes" => self.eval_episodes = num(key, v)?,
            "log" => self.log = Some(v.into()),
            "checkpoint" => self.checkpoint = Some(v.into()),
            "deterministic_log" => self.deterministic_log = num(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies newline-delimited `key=value` lines; `#` starts a comment.
    pub fn apply_overrides(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {raw:?}", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Resolved settings in a stable order. Output paths are left out so that
    /// reruns writing elsewhere produce identical logs.
    pub fn resolved(&self) -> Vec<(String, String)> {
        let f = format_f64;
        let penalty = self.penalty();
        vec![
            ("algo".into(), self.algo.to_string()),
            ("env".into(), self.env.to_string()),
            ("mode".into(), self.mode.to_string()),
            ("expert".into(), self.expert.display().to_string()),
            ("traj".into(), self.traj.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("steps".into(), self.steps.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("diffusion_steps".into(), self.diffusion_steps.to_string()),
            ("beta_start".into(), f(self.beta_start)),
            ("beta_end".into(), f(self.beta_end)),
            ("disc_lr".into(), f(self.disc_lr)),
            ("actor_lr".into(), f(self.actor_lr)),
            ("critic_lr".into(), f(self.critic_lr)),
            ("alpha_lr".into(), f(self.alpha_lr)),
            ("gradient_penalty".into(), penalty.is_some().to_string()),
            ("gp_weight".into(), f(self.gp_weight)),
            ("disc_updates".into(), self.disc_updates.to_string()),
            ("warmup".into(), self.warmup.to_string()),
            ("gamma".into(), f(self.gamma)),
            ("tau".into(), f(self.tau)),
            ("sac_hidden".into(), self.sac_hidden.to_string()),
            ("disc_hidden".into(), self.disc_hidden.to_string()),
            ("disc_layers".into(), self.disc_layers.to_string()),
            ("time_embed_dim".into(), self.time_embed_dim.to_string()),
            ("eval_interval".into(), self.eval_interval.to_string()),
            ("eval_episodes".into(), self.eval_episodes.to_string()),
            ("deterministic_log".into(), self.deterministic_log.to_string()),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("traj", self.traj),
            ("batch_size", self.batch_size),
            ("diffusion_steps", self.diffusion_steps),
            ("disc_updates", self.disc_updates),
            ("sac_hidden", self.sac_hidden),
            ("disc_hidden", self.disc_hidden),
            ("disc_layers", self.disc_layers),
            ("time_embed_dim", self.time_embed_dim),
            ("eval_interval", self.eval_interval),
            ("eval_episodes", self.eval_episodes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let rates = [
            ("disc_lr", self.disc_lr),
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("alpha_lr", self.alpha_lr),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config("gamma must be in [0, 1] and tau in (0, 1]".into()));
        }
        if !(self.gp_weight >= 0.0 && self.gp_weight.is_finite()) {
            return Err(Error::Config("gp_weight must be non-negative".into()));
        }
        self.schedule()?;
        Ok(())
    }
}

/// A trained (or freshly initialised) learner and discriminator.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub algo: Algo,
    pub env: EnvId,
    pub mode: PairMode,
    pub agent: SacAgent,
    pub disc: Discriminator,
    pub metadata: Vec<(String, String)>,
}

impl TrainedModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.agent.to_checkpoint();
        match &self.disc {
            Discriminator::Diffusion { denoiser, sched } => {
                ck.networks.push(("denoiser_embed".into(), denoiser.time_embed.clone()));
                ck.networks.push(("denoiser_body".into(), denoiser.body.clone()));
                ck.scalars.push(("diffusion_steps".into(), sched.steps() as f64));
                for t in 1..=sched.steps() {
                    ck.scalars.push((format!("beta_{t}"), sched.beta(t)));
                }
            }
            Discriminator::Gail(d) => ck.networks.push(("gail".into(), d.net.clone())),
        }
        ck.metadata = vec![
            ("algo".into(), self.algo.to_string()),
            ("env".into(), self.env.to_string()),
            ("mode".into(), self.mode.to_string()),
        ];
        for (k, v) in &self.metadata {
            if !matches!(k.as_str(), "algo" | "env" | "mode") {
                ck.metadata.push((k.clone(), v.clone()));
            }
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta = |k: &str| {
            ck.meta(k)
                .ok_or_else(|| Error::Config(format!("checkpoint metadata lacks {k:?}")))
        };
        let algo: Algo = meta("algo")?.parse()?;
        let env: EnvId = meta("env")?.parse()?;
        let mode: PairMode = meta("mode")?.parse()?;
        let agent = SacAgent::from_checkpoint(ck, SacConfig::default())?;
        let spec = Environment::new(env).spec().clone();
        if agent.obs_dim != spec.obs_dim || agent.act_dim != spec.act_dim {
            return Err(Error::Config(format!("checkpoint policy does not fit {env}")));
        }
        let net = |name: &str| {
            ck.network(name)
                .cloned()
                .ok_or_else(|| Error::Config(format!("checkpoint has no network {name:?}")))
        };
        let disc = match algo {
            Algo::DiffAil => {
                let steps = ck
                    .scalar("diffusion_steps")
                    .ok_or_else(|| Error::Config("checkpoint lacks diffusion_steps".into()))?;
                let betas = (1..=steps as usize)
                    .map(|t| {
                        ck.scalar(&format!("beta_{t}"))
                            .ok_or_else(|| Error::Config(format!("checkpoint lacks beta_{t}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Discriminator::Diffusion {
                    denoiser: DenoiserNet::from_parts(net("denoiser_embed")?, net("denoiser_body")?)?,
                    sched: DiffusionSchedule::from_beta_values(betas)?,
                }
            }
            Algo::Gail => Discriminator::Gail(GailDiscriminator { net: net("gail")? }),
        };
        if disc.pair_dim() != mode.pair_dim(spec.obs_dim, spec.act_dim) {
            return Err(Error::Config("checkpoint discriminator does not fit its mode".into()));
        }
        Ok(TrainedModel {
            algo,
            env,
            mode,
            agent,
            disc,
            metadata: ck.metadata.clone(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub rows: Vec<MetricsRow>,
    /// Mean return over every trajectory in the expert file.
    pub expert_mean_return: f64,
    /// Episode return mean of the last evaluation, if any.
    pub final_return: Option<f64>,
}

/// Independent random streams so the learner's data flow does not depend on
/// how much randomness the discriminator consumes.
struct Streams {
    init_agent: ChaCha8Rng,
    init_disc: ChaCha8Rng,
    env: ChaCha8Rng,
    data: ChaCha8Rng,
    disc: ChaCha8Rng,
    sac: ChaCha8Rng,
    eval: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        Streams {
            init_agent: stream(1),
            init_disc: stream(2),
            env: stream(3),
            data: stream(4),
            disc: stream(5),
            sac: stream(6),
            eval: stream(7),
        }
    }
}

/// Builds the initial discriminator for a config.
pub fn init_discriminator<R: Rng + ?Sized>(cfg: &TrainConfig, pair_dim: usize, rng: &mut R) -> Result<Discriminator> {
    Ok(match cfg.algo {
        Algo::DiffAil => Discriminator::Diffusion {
            denoiser: DenoiserNet::new(pair_dim, cfg.denoiser_config(), rng),
            sched: cfg.schedule()?,
        },
        Algo::Gail => Discriminator::Gail(GailDiscriminator::new(pair_dim, cfg.denoiser_config(), rng)),
    })
}

/// All pairs of a dataset in one batch.
pub fn dataset_pairs(data: &ExpertDataset, mode: PairMode) -> Result<PairBatch> {
    let steps: Vec<&Transition> = data.transitions().collect();
    make_pairs(&steps, mode)
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Deterministic-policy evaluation: true and surrogate returns per episode,
/// plus single-draw discriminator statistics on expert and policy pairs.
pub fn evaluate<R: Rng + ?Sized>(
    env: &Environment,
    model: &TrainedModel,
    expert_pairs: &PairBatch,
    episodes: usize,
    rng: &mut R,
) -> Result<MetricsRow> {
    let eps = env.run_episodes(episodes, rng, |obs, _| model.agent.act_deterministic(obs))?;
    let returns: Vec<f64> = eps.iter().map(|e| episode_return(e)).collect();
    let all: Vec<&Transition> = eps.iter().flatten().collect();
    let policy_pairs = make_pairs(&all, model.mode)?;
    let rewards = model.disc.rewards(&policy_pairs, rng)?;
    let h = env.spec().horizon;
    let surrogate: Vec<f64> = rewards.data().chunks(h).map(|c| c.iter().sum()).collect();
    let (d_e, l_e) = model.disc.score(expert_pairs, rng)?;
    let (d_p, l_p) = model.disc.score(&policy_pairs, rng)?;
    let (mean, std) = mean_std(&returns);
    Ok(MetricsRow {
        step: 0,
        episode_return_mean: mean,
        episode_return_std: std,
        surrogate_return_mean: mean_std(&surrogate).0,
        disc_expert_mean: d_e.mean(),
        disc_policy_mean: d_p.mean(),
        diff_loss_expert: l_e.map_or(f64::NAN, |l| l.mean()),
        diff_loss_policy: l_p.map_or(f64::NAN, |l| l.mean()),
        wallclock_s: 0.0,
    })
}

/// Loads the expert file and checks it against the config.
pub fn load_expert(cfg: &TrainConfig) -> Result<ExpertDataset> {
    let data = ExpertDataset::load(&cfg.expert)?;
    if data.env != cfg.env {
        return Err(Error::Config(format!(
            "expert dataset is for {}, config asks for {}",
            data.env, cfg.env
        )));
    }
    Ok(data)
}

/// Runs the adversarial loop: per environment step after warmup, one
/// discriminator ascent step and one SAC update on freshly relabelled
/// rewards.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = load_expert(cfg)?;
    train_with_dataset(cfg, &data)
}

/// [`train`] with an already loaded dataset.
pub fn train_with_dataset(cfg: &TrainConfig, data: &ExpertDataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    let split = data.subsample(cfg.traj, cfg.seed)?;
    let expert_pairs = dataset_pairs(&split.train, cfg.mode)?;
    let env = Environment::new(cfg.env);
    let spec = env.spec().clone();
    let pair_dim = cfg.mode.pair_dim(spec.obs_dim, spec.act_dim);

    let mut rngs = Streams::new(cfg.seed);
    let agent = SacAgent::new(spec.obs_dim, spec.act_dim, cfg.sac_config(), &mut rngs.init_agent);
    let disc = init_discriminator(cfg, pair_dim, &mut rngs.init_disc)?;
    let mut metadata = cfg.resolved();
    metadata.push(("expert_mean_return".into(), format_f64(data.mean_return())));
    metadata.push(("train_trajectory_return".into(), format_f64(split.train.mean_return())));
    metadata.push((
        "chosen_trajectories".into(),
        split.chosen.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" "),
    ));
    let mut model = TrainedModel {
        algo: cfg.algo,
        env: cfg.env,
        mode: cfg.mode,
        agent,
        disc,
        metadata,
    };
    let mut disc_opt = AdamState::new(AdamConfig::with_lr(cfg.disc_lr), &model.disc.params());
    let mut log = match &cfg.log {
        Some(p) => Some(MetricsLog::create(p, &cfg.resolved())?),
        None => None,
    };
    let penalty = cfg.penalty();

    let start = Instant::now();
    let mut rows = Vec::new();
    let mut buffer: ReplayBuffer<ObservedTransition> = ReplayBuffer::new(ReplayBuffer::<ObservedTransition>::DEFAULT_CAPACITY);
    let mut s = env.reset(&mut rngs.env);
    let mut t = 0;
    for step in 1..=cfg.steps {
        let a = if step <= cfg.warmup {
            random_action(spec.act_dim, &mut rngs.env)
        } else {
            model.agent.policy_sample(&Tensor::row(s.clone()), &mut rngs.env)?.0.into_vec()
        };
        let tr = env.step(&s, &a, t);
        let done = tr.done;
        s = tr.s_next.clone();
        buffer.push(tr.observed());
        t += 1;
        if done {
            s = env.reset(&mut rngs.env);
            t = 0;
        }

        if step > cfg.warmup {
            let at_step = |e: Error| match e {
                Error::NonFinite { what, .. } => Error::NonFinite { what, step: step as u64 },
                other => other,
            };
            for _ in 0..cfg.disc_updates {
                let policy_steps = buffer.sample(cfg.batch_size, &mut rngs.data)?;
                let policy = make_pairs(&policy_steps, cfg.mode)?;
                let idx: Vec<usize> = (0..cfg.batch_size)
                    .map(|_| rngs.data.random_range(0..expert_pairs.len()))
                    .collect();
                let expert = expert_pairs.select(&idx);
                let noise = model.disc.sample_step_noise(cfg.batch_size, penalty.is_some(), &mut rngs.disc);
                let mut g = Graph::new();
                let trace = model
                    .disc
                    .record_objective(&mut g, &expert, &policy, &noise, penalty.unwrap_or(0.0))?;
                if !g.value(trace.objective).is_finite() {
                    return Err(Error::NonFinite {
                        what: "discriminator objective".into(),
                        step: step as u64,
                    });
                }
                let grads = model.disc.ascent_gradients(&mut g, &trace)?;
                let grad_refs: Vec<&Tensor> = grads.iter().collect();
                disc_opt.step(&mut model.disc.params_mut(), &grad_refs)?;
                if !model.disc.is_finite() {
                    return Err(Error::NonFinite {
                        what: "discriminator parameters".into(),
                        step: step as u64,
                    });
                }
            }
            let sac_steps = buffer.sample(cfg.batch_size, &mut rngs.data)?;
            let pairs = make_pairs(&sac_steps, cfg.mode)?;
            let rewards = model.disc.rewards(&pairs, &mut rngs.disc)?.into_vec();
            let batch = SacBatch::from_steps(&sac_steps, rewards);
            model.agent.update(&batch, &mut rngs.sac).map_err(at_step)?;
        }

        if step % cfg.eval_interval == 0 || step == cfg.steps {
            let mut row = evaluate(&env, &model, &expert_pairs, cfg.eval_episodes, &mut rngs.eval)?;
            row.step = step as u64;
            row.wallclock_s = if cfg.deterministic_log {
                0.0
            } else {
                start.elapsed().as_secs_f64()
            };
            if let Some(log) = log.as_mut() {
                log.append(&row)?;
            }
            rows.push(row);
        }
    }

    if let Some(p) = &cfg.checkpoint {
        model.save(p)?;
    }
    Ok(TrainOutcome {
        final_return: rows.last().map(|r| r.episode_return_mean),
        expert_mean_return: data.mean_return(),
        model,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expert::{generate_expert, ExpertMethod, SacExpertConfig};

    fn small(dir: &Path) -> TrainConfig {
        let (d, _) = generate_expert(EnvId::PointMass, ExpertMethod::Lqr, 3, 0, &SacExpertConfig::default()).unwrap();
        let path = dir.join("e.dax");
        d.save(&path).unwrap();
        let mut cfg = TrainConfig::new(EnvId::PointMass, path);
        cfg.apply_overrides(
            "steps=300\nwarmup=100\nbatch_size=8\ndisc_hidden=8\ndisc_layers=1\nsac_hidden=8\n\
             eval_interval=150\neval_episodes=2\ndeterministic_log=true # keep files comparable\n",
        )
        .unwrap();
        cfg
    }

    #[test]
    fn overrides_and_validation() {
        let mut cfg = TrainConfig::new(EnvId::Pendulum, "x");
        assert_eq!(cfg.penalty(), None);
        cfg.set("gradient_penalty", "true").unwrap();
        assert_eq!(cfg.penalty(), Some(0.1));
        assert!(cfg.set("nope", "1").is_err());
        assert!(cfg.apply_overrides("steps 5").is_err());
        cfg.set("batch_size", "0").unwrap();
        assert!(cfg.validate().is_err());
        assert_eq!(TrainConfig::new(EnvId::PointMass, "x").penalty(), Some(0.1));
    }

    #[test]
    fn zero_steps_gives_header_and_initial_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.steps = 0;
        cfg.log = Some(dir.path().join("m.csv"));
        cfg.checkpoint = Some(dir.path().join("c.dail"));
        let out = train(&cfg).unwrap();
        assert!(out.rows.is_empty());
        assert!(read_metrics(dir.path().join("m.csv")).unwrap().is_empty());
        let back = TrainedModel::load(dir.path().join("c.dail")).unwrap();
        assert_eq!(back.agent.policy, out.model.agent.policy);
    }

    #[test]
    fn short_runs_are_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        for algo in ["diffail", "gail"] {
            let mut cfg = small(dir.path());
            cfg.set("algo", algo).unwrap();
            cfg.log = Some(dir.path().join("a.csv"));
            let a = train(&cfg).unwrap();
            cfg.log = Some(dir.path().join("b.csv"));
            train(&cfg).unwrap();
            let fa = std::fs::read(dir.path().join("a.csv")).unwrap();
            let fb = std::fs::read(dir.path().join("b.csv")).unwrap();
            assert_eq!(fa, fb);
            assert_eq!(a.rows.len(), 2);
            assert_eq!(a.rows[1].step, 300);
        }
    }

    #[test]
    fn checkpoint_round_trip_keeps_discriminator() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.steps = 120;
        cfg.diffusion_steps = 4;
        let out = train(&cfg).unwrap();
        let ck = out.model.to_checkpoint();
        let back = TrainedModel::from_checkpoint(&Checkpoint::decode(&ck.encode()).unwrap()).unwrap();
        assert_eq!(back.to_checkpoint().encode(), ck.encode());
        match back.disc {
            Discriminator::Diffusion { sched, .. } => assert_eq!(sched.steps(), 4),
            _ => panic!("wrong discriminator"),
        }
    }

    #[test]
    fn oversized_traj_request() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.traj = 99;
        let err = train(&cfg).unwrap_err();
        assert!(err.to_string().contains("requested 99 of 3 trajectories"));
    }
}
