//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ail::{make_pairs, mean_std, read_metrics, train, TrainConfig, TrainedModel};
use crate::envs::{episode_return, EnvId, Environment, Transition};
use crate::error::{Error, Result};
use crate::evalx::{
    ablate_steps, correlation_from_log, held_out_discrimination, return_correlation, worker_threads, DEFAULT_DRAWS,
};
use crate::expert::{generate_expert, ExpertDataset, ExpertMethod, SacExpertConfig};

#[derive(Parser, Debug)]
#[command(name = "diffail", version, about = "Diffusion adversarial imitation learning on small control tasks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate an expert demonstration file.
    GenExpert(GenExpertArgs),
    /// Train DiffAIL or GAIL from expert demonstrations.
    Train(TrainArgs),
    /// Evaluate a trained policy on the true reward.
    Eval(EvalArgs),
    /// Score held-out expert pairs with a trained discriminator.
    DiscTest(DiscTestArgs),
    /// Correlate surrogate and true returns.
    Correlate(CorrelateArgs),
    /// Sweep the number of diffusion steps.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
pub struct GenExpertArgs {
    #[arg(long)]
    pub env: String,
    /// lqr, sac, or auto (lqr for pointmass, sac otherwise).
    #[arg(long, default_value = "auto")]
    pub method: String,
    #[arg(long, default_value_t = 40)]
    pub n_traj: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "expert.dax")]
    pub out: PathBuf,
    /// Environment steps for the SAC expert.
    #[arg(long, default_value_t = 200_000)]
    pub sac_steps: usize,
    /// SAC expert must reach this fraction of its best evaluation return.
    #[arg(long, default_value_t = 0.9)]
    pub floor: f64,
}

/// Flags shared by `train` and `ablate`.
#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub env: String,
    /// Expert dataset file.
    #[arg(long)]
    pub expert: PathBuf,
    /// state_action or state_only.
    #[arg(long, default_value = "state_action")]
    pub mode: String,
    /// Expert trajectories used for training.
    #[arg(long, default_value_t = 1)]
    pub traj: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Total environment steps.
    #[arg(long, default_value_t = 200_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub beta_start: f64,
    #[arg(long, default_value_t = 2e-2)]
    pub beta_end: f64,
    /// Discriminator learning rate.
    #[arg(long, default_value_t = 3e-4)]
    pub disc_lr: f64,
    /// Policy learning rate.
    #[arg(long, default_value_t = 3e-4)]
    pub actor_lr: f64,
    /// Critic learning rate.
    #[arg(long, default_value_t = 3e-4)]
    pub critic_lr: f64,
    #[arg(long, default_value_t = 3e-4)]
    pub alpha_lr: f64,
    /// auto (on for pointmass, off for pendulum), true or false.
    #[arg(long, default_value = "auto")]
    pub gradient_penalty: String,
    #[arg(long, default_value_t = 0.1)]
    pub gp_weight: f64,
    /// Discriminator updates per environment step.
    #[arg(long, default_value_t = 1)]
    pub disc_updates: usize,
    #[arg(long, default_value_t = 1000)]
    pub warmup: usize,
    #[arg(long, default_value_t = 0.99)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.005)]
    pub tau: f64,
    #[arg(long, default_value_t = 2000)]
    pub eval_interval: usize,
    #[arg(long, default_value_t = 10)]
    pub eval_episodes: usize,
    /// Metrics CSV.
    #[arg(long, default_value = "run.csv")]
    pub log: PathBuf,
    /// Final checkpoint; defaults to the log path with a .dail extension.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Newline-delimited key=value overrides, applied before explicit flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write wallclock_s as 0 so reruns produce identical logs.
    #[arg(long)]
    pub deterministic_log: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// diffail or gail.
    #[arg(long, default_value = "diffail")]
    pub algo: String,
    /// Diffusion steps T.
    #[arg(long, default_value_t = 10)]
    pub diffusion_steps: usize,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Comma-separated diffusion step counts.
    #[arg(long, default_value = "2,5,10,20", value_delimiter = ',')]
    pub steps_grid: Vec<usize>,
    /// Summary CSV of final returns and runtimes.
    #[arg(long, default_value = "ablation.csv")]
    pub summary: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct DiscTestArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// The dataset the checkpoint was trained from; its unused trajectories are scored.
    #[arg(long)]
    pub expert: PathBuf,
    /// (t, ε) draws averaged per pair.
    #[arg(long, default_value_t = DEFAULT_DRAWS)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Optional per-trajectory CSV report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CorrelateArgs {
    #[arg(long, required_unless_present = "from_log", conflicts_with = "from_log")]
    pub checkpoint: Option<PathBuf>,
    /// Correlate across the evaluation rows of a training log instead.
    #[arg(long)]
    pub from_log: Option<PathBuf>,
    #[arg(long, default_value_t = 40)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Optional per-episode CSV report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `argv` (including the program name) and runs the command.
/// Returns 0 on success, 1 on usage errors and 2 on runtime failures.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 1;
        }
    };
    let sub = matches.subcommand().map(|(_, m)| m.clone()).expect("subcommand is required");
    match dispatch(cli.command, &sub) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) => 1,
                _ => 2,
            }
        }
    }
}

fn dispatch(cmd: Command, m: &ArgMatches) -> Result<()> {
    match cmd {
        Command::GenExpert(a) => gen_expert(a),
        Command::Train(a) => {
            let mut cfg = run_config(&a.run, m)?;
            for (key, id, value) in [
                ("algo", "algo", a.algo.clone()),
                ("diffusion_steps", "diffusion_steps", a.diffusion_steps.to_string()),
            ] {
                if explicit(m, id) {
                    cfg.set(key, &value).map_err(as_usage)?;
                }
            }
            run_train(cfg)
        }
        Command::Ablate(a) => {
            let cfg = run_config(&a.run, m)?;
            run_ablate(cfg, &a.steps_grid, &a.summary)
        }
        Command::Eval(a) => eval(a),
        Command::DiscTest(a) => disc_test(a),
        Command::Correlate(a) => correlate(a),
    }
}

fn explicit(m: &ArgMatches, id: &str) -> bool {
    m.value_source(id) == Some(ValueSource::CommandLine)
}

/// Bad flag values are usage errors rather than runtime failures.
fn as_usage(e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Usage(m),
        other => other,
    }
}

/// Defaults, then the `--config` file, then flags given on the command line.
fn run_config(a: &RunArgs, m: &ArgMatches) -> Result<TrainConfig> {
    resolve_run_config(a, m).map_err(as_usage)
}

fn resolve_run_config(a: &RunArgs, m: &ArgMatches) -> Result<TrainConfig> {
    let env: EnvId = a.env.parse()?;
    let mut cfg = TrainConfig::new(env, &a.expert);
    let flags: Vec<(&str, String)> = vec![
        ("mode", a.mode.clone()),
        ("traj", a.traj.to_string()),
        ("seed", a.seed.to_string()),
        ("steps", a.steps.to_string()),
        ("batch_size", a.batch_size.to_string()),
        ("beta_start", a.beta_start.to_string()),
        ("beta_end", a.beta_end.to_string()),
        ("disc_lr", a.disc_lr.to_string()),
        ("actor_lr", a.actor_lr.to_string()),
        ("critic_lr", a.critic_lr.to_string()),
        ("alpha_lr", a.alpha_lr.to_string()),
        ("gradient_penalty", a.gradient_penalty.clone()),
        ("gp_weight", a.gp_weight.to_string()),
        ("disc_updates", a.disc_updates.to_string()),
        ("warmup", a.warmup.to_string()),
        ("gamma", a.gamma.to_string()),
        ("tau", a.tau.to_string()),
        ("eval_interval", a.eval_interval.to_string()),
        ("eval_episodes", a.eval_episodes.to_string()),
        ("log", a.log.display().to_string()),
    ];
    for (k, v) in &flags {
        if !explicit(m, k) {
            cfg.set(k, v)?;
        }
    }
    if let Some(p) = &a.config {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        cfg.apply_overrides(&text)?;
    }
    for (k, v) in &flags {
        if explicit(m, k) {
            cfg.set(k, v)?;
        }
    }
    if a.deterministic_log {
        cfg.deterministic_log = true;
    }
    if let Some(c) = &a.checkpoint {
        cfg.checkpoint = Some(c.clone());
    }
    if cfg.checkpoint.is_none() {
        cfg.checkpoint = cfg.log.as_ref().map(|l| l.with_extension("dail"));
    }
    Ok(cfg)
}

fn echo_config(cfg: &TrainConfig) {
    let mut err = std::io::stderr().lock();
    for (k, v) in cfg.resolved() {
        let _ = writeln!(err, "# {k}={v}");
    }
    if let Some(l) = &cfg.log {
        let _ = writeln!(err, "# log={}", l.display());
    }
    if let Some(c) = &cfg.checkpoint {
        let _ = writeln!(err, "# checkpoint={}", c.display());
    }
}

fn gen_expert(a: GenExpertArgs) -> Result<()> {
    let env: EnvId = a.env.parse().map_err(as_usage)?;
    let method = match a.method.as_str() {
        "auto" => match env {
            EnvId::PointMass => ExpertMethod::Lqr,
            EnvId::Pendulum => ExpertMethod::Sac,
        },
        m => m.parse().map_err(as_usage)?,
    };
    let cfg = SacExpertConfig {
        steps: a.sac_steps,
        floor_fraction: a.floor,
        ..SacExpertConfig::default()
    };
    let (data, report) = generate_expert(env, method, a.n_traj, a.seed, &cfg)?;
    data.save(&a.out)?;
    println!("wrote {} trajectories to {}", data.len(), a.out.display());
    println!("expert mean return: {:.4}", report.mean_return);
    println!(
        "random-policy mean return: {:.4} (margin {:.4})",
        report.random_mean_return, report.margin
    );
    if let Some(best) = report.best_training_return {
        println!("best SAC evaluation during training: {best:.4}");
    }
    Ok(())
}

fn run_train(cfg: TrainConfig) -> Result<()> {
    echo_config(&cfg);
    let out = train(&cfg)?;
    println!("expert mean return: {:.4}", out.expert_mean_return);
    match out.final_return {
        Some(r) => println!("final evaluation mean return: {r:.4}"),
        None => println!("no evaluation was run"),
    }
    if let Some(c) = &cfg.checkpoint {
        println!("checkpoint: {}", c.display());
    }
    Ok(())
}

fn run_ablate(cfg: TrainConfig, grid: &[usize], summary: &Path) -> Result<()> {
    echo_config(&cfg);
    let data = crate::ail::load_expert(&cfg)?;
    let results = ablate_steps(&cfg, &data, grid, worker_threads())?;
    let mut csv = String::from("diffusion_steps,final_return,wallclock_s,log\n");
    println!("{:>6} {:>14} {:>12}", "T", "final return", "seconds");
    for r in &results {
        println!("{:>6} {:>14.4} {:>12.1}", r.diffusion_steps, r.final_return, r.wallclock_s);
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.diffusion_steps,
            crate::ail::format_f64(r.final_return),
            crate::ail::format_f64(r.wallclock_s),
            r.log.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
        ));
    }
    std::fs::write(summary, csv).map_err(|e| Error::io(summary, e))
}

fn eval(a: EvalArgs) -> Result<()> {
    let model = TrainedModel::load(&a.checkpoint)?;
    if a.episodes == 0 {
        return Err(Error::Usage("at least one episode is needed".into()));
    }
    let env = Environment::new(model.env);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let eps = env.run_episodes(a.episodes, &mut rng, |obs, _| model.agent.act_deterministic(obs))?;
    let returns: Vec<f64> = eps.iter().map(|e| episode_return(e)).collect();
    let all: Vec<&Transition> = eps.iter().flatten().collect();
    let rewards = model.disc.rewards(&make_pairs(&all, model.mode)?, &mut rng)?;
    let surrogate: Vec<f64> = rewards.data().chunks(env.spec().horizon).map(|c| c.iter().sum()).collect();
    let (mean, std) = mean_std(&returns);
    println!("algo {} env {} mode {}", model.algo, model.env, model.mode);
    println!("true return over {} episodes: {mean:.4} ± {std:.4}", a.episodes);
    println!("surrogate return: {:.4}", mean_std(&surrogate).0);
    Ok(())
}

fn disc_test(a: DiscTestArgs) -> Result<()> {
    let model = TrainedModel::load(&a.checkpoint)?;
    let data = ExpertDataset::load(&a.expert)?;
    let chosen: Vec<usize> = model
        .meta("chosen_trajectories")
        .ok_or_else(|| Error::Config("checkpoint does not record its training trajectories".into()))?
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| Error::Config(format!("bad trajectory index {s:?}"))))
        .collect::<Result<_>>()?;
    if chosen.iter().any(|&i| i >= data.len()) {
        return Err(Error::Config("checkpoint was trained on a different dataset".into()));
    }
    let held_out = ExpertDataset {
        trajectories: (0..data.len())
            .filter(|i| !chosen.contains(i))
            .map(|i| data.trajectories[i].clone())
            .collect(),
        ..data.clone()
    };
    let report = held_out_discrimination(&model, &held_out, a.draws, a.seed)?;
    println!(
        "{}: {:.4} of {} held-out pairs scored D ≥ {}",
        model.algo, report.overall, report.pairs, report.threshold
    );
    if let Some(out) = &a.out {
        let mut csv = String::from("trajectory,success_fraction\n");
        for (i, f) in report.per_trajectory.iter().enumerate() {
            csv.push_str(&format!("{i},{}\n", crate::ail::format_f64(*f)));
        }
        csv.push_str(&format!("all,{}\n", crate::ail::format_f64(report.overall)));
        std::fs::write(out, csv).map_err(|e| Error::io(out, e))?;
    }
    Ok(())
}

fn correlate(a: CorrelateArgs) -> Result<()> {
    if let Some(log) = &a.from_log {
        let rows = read_metrics(log)?;
        let r = correlation_from_log(&rows)?;
        println!("pearson r over {} evaluation rows: {r:.4}", rows.len());
        return Ok(());
    }
    let path = a.checkpoint.as_ref().expect("clap enforces one source");
    let model = TrainedModel::load(path)?;
    let report = return_correlation(&model, a.episodes, a.seed)?;
    println!("pearson r over {} episodes: {:.4}", a.episodes, report.pearson);
    if let Some(out) = &a.out {
        std::fs::write(out, report.to_csv()).map_err(|e| Error::io(out, e))?;
    }
    Ok(())
}
