//! Evaluation protocols: held-out discrimination, surrogate/true return
//! correlation, the diffusion-step ablation and a density-ratio check on
//! two Gaussians.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ail::{
    make_pairs, train_with_dataset, Discriminator, MetricsRow, TrainConfig, TrainedModel,
};
use crate::diffusion::{
    diff_loss, discriminate, standard_normal, DenoiserConfig, DenoiserNet, DiffusionSchedule, NoiseDraw, PairBatch,
    PairMode,
};
use crate::envs::{clip_action, episode_return, Environment, Transition};
use crate::error::{Error, Result};
use crate::expert::ExpertDataset;
use crate::numerics::{AdamConfig, AdamState, Graph, Tensor};

pub const SUCCESS_THRESHOLD: f64 = 0.5;
pub const DEFAULT_DRAWS: usize = 16;
pub const NOISE_GRID: [f64; 4] = [0.0, 0.1, 0.3, 0.5];

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminationReport {
    /// Fraction of pairs with `D ≥ threshold`, per held-out trajectory.
    pub per_trajectory: Vec<f64>,
    pub overall: f64,
    pub threshold: f64,
    pub pairs: usize,
}

/// FNV-1a over the bytes of a pair, mixed with `seed`.
fn pair_seed(seed: u64, row: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for v in row {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Per-pair `D`, averaged over `draws` `(t, ε)` samples for the diffusion
/// discriminator. Each pair's draws are seeded from its own contents, so the
/// score of a pair does not depend on where it sits in the batch.
pub fn mean_discrimination(disc: &Discriminator, pairs: &PairBatch, draws: usize, seed: u64) -> Result<Vec<f64>> {
    if pairs.dim() != disc.pair_dim() {
        return Err(Error::Config(format!(
            "discriminator models {}-dimensional pairs, data has {}",
            disc.pair_dim(),
            pairs.dim()
        )));
    }
    match disc {
        Discriminator::Gail(d) => Ok(d.probabilities(&pairs.x0)?.into_vec()),
        Discriminator::Diffusion { denoiser, sched } => {
            if draws == 0 {
                return Err(Error::Usage("at least one draw is needed".into()));
            }
            let (n, dim) = (pairs.len(), pairs.dim());
            let mut rows = Vec::with_capacity(n * draws);
            let mut t = Vec::with_capacity(n * draws);
            let mut eps = Vec::with_capacity(n * draws * dim);
            for i in 0..n {
                let row = pairs.x0.row_slice(i);
                let mut rng = ChaCha8Rng::seed_from_u64(pair_seed(seed, row));
                for _ in 0..draws {
                    rows.push(row.to_vec());
                    let d = NoiseDraw::sample(1, dim, sched.steps(), &mut rng);
                    t.push(d.t[0]);
                    eps.extend_from_slice(d.eps.data());
                }
            }
            let batch = PairBatch {
                x0: Tensor::from_rows(&rows),
                mode: pairs.mode,
            };
            let draw = NoiseDraw {
                t,
                eps: Tensor::from_vec(n * draws, dim, eps),
            };
            let d = discriminate(&diff_loss(denoiser, &batch, &draw, sched)?)?;
            Ok(d.data().chunks(draws).map(|c| c.iter().sum::<f64>() / draws as f64).collect())
        }
    }
}

/// Classifies every held-out expert pair as expert iff its mean `D ≥ 0.5`.
pub fn held_out_discrimination(
    model: &TrainedModel,
    held_out: &ExpertDataset,
    draws: usize,
    seed: u64,
) -> Result<DiscriminationReport> {
    if held_out.is_empty() {
        return Err(Error::Usage("held-out set is empty".into()));
    }
    let mut per_trajectory = Vec::with_capacity(held_out.len());
    let mut hits = 0usize;
    let mut pairs = 0usize;
    for traj in &held_out.trajectories {
        let steps: Vec<&Transition> = traj.transitions.iter().collect();
        let batch = make_pairs(&steps, model.mode)?;
        let d = mean_discrimination(&model.disc, &batch, draws, seed)?;
        let ok = d.iter().filter(|&&v| v >= SUCCESS_THRESHOLD).count();
        per_trajectory.push(ok as f64 / d.len() as f64);
        hits += ok;
        pairs += d.len();
    }
    Ok(DiscriminationReport {
        per_trajectory,
        overall: hits as f64 / pairs as f64,
        threshold: SUCCESS_THRESHOLD,
        pairs,
    })
}

/// Pearson correlation by the covariance formula.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Usage("correlation needs two equal series of length ≥ 2".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 {
        return Err(Error::UndefinedCorrelation("first"));
    }
    if syy == 0.0 {
        return Err(Error::UndefinedCorrelation("second"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation: Pearson on average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationReport {
    pub noise: Vec<f64>,
    pub true_returns: Vec<f64>,
    pub surrogate_returns: Vec<f64>,
    pub pearson: f64,
}

impl CorrelationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("episode,noise,true_return,surrogate_return\n");
        for i in 0..self.noise.len() {
            s.push_str(&format!(
                "{i},{},{},{}\n",
                crate::ail::format_f64(self.noise[i]),
                crate::ail::format_f64(self.true_returns[i]),
                crate::ail::format_f64(self.surrogate_returns[i])
            ));
        }
        s
    }
}

/// Rolls out the deterministic policy with Gaussian action noise cycling
/// through [`NOISE_GRID`], and correlates true with surrogate episode returns.
pub fn return_correlation(model: &TrainedModel, episodes: usize, seed: u64) -> Result<CorrelationReport> {
    if episodes < 10 {
        return Err(Error::Usage(format!("return correlation needs at least 10 episodes, got {episodes}")));
    }
    let env = Environment::new(model.env);
    let spec = env.spec().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..episodes).map(|i| NOISE_GRID[i % NOISE_GRID.len()]).collect();
    let eps = env.run_episodes(episodes, &mut rng, |obs, rng| {
        let mean = model.agent.act_deterministic(obs)?;
        let z = standard_normal(mean.rows(), mean.cols(), rng);
        let rows: Vec<Vec<f64>> = (0..mean.rows())
            .map(|i| {
                let a: Vec<f64> = mean
                    .row_slice(i)
                    .iter()
                    .zip(z.row_slice(i))
                    .map(|(m, e)| m + noise[i] * e)
                    .collect();
                clip_action(&a)
            })
            .collect();
        Ok(Tensor::from_rows(&rows))
    })?;
    let true_returns: Vec<f64> = eps.iter().map(|e| episode_return(e)).collect();
    let all: Vec<&Transition> = eps.iter().flatten().collect();
    let pairs = make_pairs(&all, model.mode)?;
    let rewards = model.disc.rewards(&pairs, &mut rng)?;
    let surrogate_returns: Vec<f64> = rewards
        .data()
        .chunks(spec.horizon)
        .map(|c| c.iter().sum())
        .collect();
    let r = pearson(&true_returns, &surrogate_returns)?;
    Ok(CorrelationReport {
        noise,
        true_returns,
        surrogate_returns,
        pearson: r,
    })
}

/// The checkpoint-history variant: Pearson across the evaluation rows of one
/// training log.
pub fn correlation_from_log(rows: &[MetricsRow]) -> Result<f64> {
    let t: Vec<f64> = rows.iter().map(|r| r.episode_return_mean).collect();
    let s: Vec<f64> = rows.iter().map(|r| r.surrogate_return_mean).collect();
    pearson(&t, &s)
}

#[derive(Clone, Debug)]
pub struct AblationResult {
    pub diffusion_steps: usize,
    pub final_return: f64,
    pub wallclock_s: f64,
    pub rows: Vec<MetricsRow>,
    pub log: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

/// `run.csv` → `run_T5.csv`.
pub fn suffixed(path: &Path, steps: usize) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_T{steps}.{}", ext.to_string_lossy()),
        None => format!("{stem}_T{steps}"),
    };
    path.with_file_name(name)
}

/// Worker cap from `DIFFAIL_THREADS`, else the available parallelism.
pub fn worker_threads() -> usize {
    let avail = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var("DIFFAIL_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(n) if n > 0 => n,
        _ => avail,
    }
}

/// One training run per diffusion-step count, all with the base seed.
pub fn ablate_steps(base: &TrainConfig, data: &ExpertDataset, grid: &[usize], threads: usize) -> Result<Vec<AblationResult>> {
    if grid.is_empty() {
        return Err(Error::Usage("ablation grid is empty".into()));
    }
    let configs: Vec<TrainConfig> = grid
        .iter()
        .map(|&t| {
            let mut cfg = base.clone();
            cfg.diffusion_steps = t;
            cfg.log = base.log.as_deref().map(|p| suffixed(p, t));
            cfg.checkpoint = base.checkpoint.as_deref().map(|p| suffixed(p, t));
            cfg
        })
        .collect();
    let run = |cfg: &TrainConfig| -> Result<AblationResult> {
        let start = Instant::now();
        let out = train_with_dataset(cfg, data)?;
        Ok(AblationResult {
            diffusion_steps: cfg.diffusion_steps,
            final_return: out.final_return.unwrap_or(f64::NAN),
            wallclock_s: start.elapsed().as_secs_f64(),
            rows: out.rows,
            log: cfg.log.clone(),
            checkpoint: cfg.checkpoint.clone(),
        })
    };
    let threads = threads.clamp(1, configs.len());
    if threads == 1 {
        return configs.iter().map(run).collect();
    }
    let mut results: Vec<Option<Result<AblationResult>>> = (0..configs.len()).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots = std::sync::Mutex::new(&mut results);
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= configs.len() {
                    break;
                }
                let r = run(&configs[i]);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    results.into_iter().map(|r| r.expect("every grid point ran")).collect()
}

/// Settings for the two-Gaussian density-ratio check.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOracleConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub diffusion_steps: usize,
    pub draws: usize,
    pub grid: usize,
    pub seed: u64,
    pub denoiser: DenoiserConfig,
    /// Mean of the "policy" Gaussian; the expert is centred at the origin.
    pub policy_mean: [f64; 2],
}

impl Default for DensityOracleConfig {
    fn default() -> Self {
        DensityOracleConfig {
            steps: 5000,
            batch_size: 256,
            lr: 1e-3,
            diffusion_steps: 10,
            draws: 64,
            grid: 21,
            seed: 0,
            denoiser: DenoiserConfig::default(),
            policy_mean: [2.0, 0.0],
        }
    }
}

#[derive(Clone, Debug)]
pub struct DensityOracleReport {
    pub points: Vec<[f64; 2]>,
    pub implied: Vec<f64>,
    pub truth: Vec<f64>,
    pub spearman: f64,
}

/// `log N(x; 0, I) − log N(x; m, I)`.
pub fn true_log_ratio(x: [f64; 2], m: [f64; 2]) -> f64 {
    let q0 = x[0] * x[0] + x[1] * x[1];
    let q1 = (x[0] - m[0]).powi(2) + (x[1] - m[1]).powi(2);
    0.5 * (q1 - q0)
}

/// Trains a denoiser adversarially on `N(0, I)` (expert) vs `N(m, I)`
/// (policy), then compares the implied log-ratio `log D − log(1 − D)` on a
/// grid over `[−3, 5] × [−4, 4]` with the analytic one.
pub fn density_ratio_oracle(cfg: &DensityOracleConfig) -> Result<DensityOracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sched = DiffusionSchedule::linear(cfg.diffusion_steps, 1e-4, 2e-2)?;
    let disc = Discriminator::Diffusion {
        denoiser: DenoiserNet::new(2, cfg.denoiser, &mut rng),
        sched,
    };
    let disc = train_two_gaussians(disc, cfg, &mut rng)?;
    let n = cfg.grid;
    let mut points = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let f = |k: usize, lo: f64, hi: f64| lo + (hi - lo) * k as f64 / (n - 1).max(1) as f64;
            points.push([f(i, -3.0, 5.0), f(j, -4.0, 4.0)]);
        }
    }
    let batch = PairBatch {
        x0: Tensor::from_rows(&points),
        mode: PairMode::StateAction,
    };
    let d = mean_discrimination(&disc, &batch, cfg.draws, cfg.seed)?;
    let implied: Vec<f64> = d.iter().map(|&p| p.ln() - (1.0 - p).ln()).collect();
    let truth: Vec<f64> = points.iter().map(|&x| true_log_ratio(x, cfg.policy_mean)).collect();
    let rho = spearman(&implied, &truth)?;
    Ok(DensityOracleReport {
        points,
        implied,
        truth,
        spearman: rho,
    })
}

fn train_two_gaussians<R: Rng + ?Sized>(mut disc: Discriminator, cfg: &DensityOracleConfig, rng: &mut R) -> Result<Discriminator> {
    let mut opt = AdamState::new(AdamConfig::with_lr(cfg.lr), &disc.params());
    let k = cfg.batch_size;
    for step in 0..cfg.steps {
        let expert = PairBatch {
            x0: standard_normal(k, 2, rng),
            mode: PairMode::StateAction,
        };
        let mut p = standard_normal(k, 2, rng);
        for (i, v) in p.data_mut().iter_mut().enumerate() {
            *v += cfg.policy_mean[i % 2];
        }
        let policy = PairBatch {
            x0: p,
            mode: PairMode::StateAction,
        };
        let noise = disc.sample_step_noise(k, false, rng);
        let mut g = Graph::new();
        let trace = disc.record_objective(&mut g, &expert, &policy, &noise, 0.0)?;
        if !g.value(trace.objective).is_finite() {
            return Err(Error::NonFinite {
                what: "density-oracle objective".into(),
                step: step as u64,
            });
        }
        let grads = disc.ascent_gradients(&mut g, &trace)?;
        let refs: Vec<&Tensor> = grads.iter().collect();
        opt.step(&mut disc.params_mut(), &refs)?;
    }
    Ok(disc)
}
