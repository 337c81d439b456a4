//! Forward noising, the noise-prediction loss, and the discriminator and
//! reward built from it.
//!
//! The discriminator is `D = exp(−Diff)` where `Diff` is the squared error of
//! the denoiser's noise prediction at a noised input. Low denoising error on
//! a pair means it looks like expert data.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::{Activation, Graph, MlpParams, NodeId, Tensor};

/// Lower clamp applied to discriminator outputs before any logarithm.
pub const D_FLOOR: f64 = 1e-7;
/// Upper clamp applied to discriminator outputs before any logarithm.
pub const D_CEIL: f64 = 1.0 - 1e-7;

/// Linear variance schedule with its cumulative products.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    /// `steps` betas spaced linearly from `beta_start` to `beta_end` inclusive.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("diffusion needs at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "beta range must satisfy 0 < start <= end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let beta: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Ok(Self::from_betas(beta))
    }

    fn from_betas(beta: Vec<f64>) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        DiffusionSchedule {
            beta,
            alpha,
            alpha_bar,
        }
    }

    /// Schedule from explicit betas, each in `(0, 1)`.
    pub fn from_beta_values(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() || beta.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::Config("betas must lie in (0, 1)".into()));
        }
        Ok(Self::from_betas(beta))
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    /// `β_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `ᾱ_t = ∏_{s≤t} (1 − β_s)` for `t` in `1..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    /// Posterior variance of the fixed reverse process, `σ_t² = β_t`.
    pub fn sigma_sq(&self, t: usize) -> f64 {
        self.beta(t)
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Usage(format!(
                "diffusion step {t} outside [1, {}]",
                self.steps()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PairMode {
    /// `x = (s, a)`.
    StateAction,
    /// `x = (s, s′)`.
    StateOnly,
}

impl PairMode {
    pub fn pair_dim(self, obs_dim: usize, act_dim: usize) -> usize {
        match self {
            PairMode::StateAction => obs_dim + act_dim,
            PairMode::StateOnly => 2 * obs_dim,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PairMode::StateAction => "state_action",
            PairMode::StateOnly => "state_only",
        }
    }
}

impl fmt::Display for PairMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PairMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "state_action" => Ok(PairMode::StateAction),
            "state_only" => Ok(PairMode::StateOnly),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (expected state_action or state_only)"
            ))),
        }
    }
}

/// A batch of flattened pairs `x0`, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    pub x0: Tensor,
    pub mode: PairMode,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.x0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x0.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x0.cols()
    }

    pub fn select(&self, idx: &[usize]) -> PairBatch {
        PairBatch {
            x0: self.x0.gather_rows(idx),
            mode: self.mode,
        }
    }
}

/// Per-row diffusion step and Gaussian noise.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    pub t: Vec<usize>,
    pub eps: Tensor,
}

impl NoiseDraw {
    /// One uniform `t ∈ [1, T]` and one standard normal vector per row.
    pub fn sample<R: Rng + ?Sized>(rows: usize, dim: usize, steps: usize, rng: &mut R) -> Self {
        let t = (0..rows).map(|_| rng.random_range(1..=steps)).collect();
        NoiseDraw {
            t,
            eps: standard_normal(rows, dim, rng),
        }
    }
}

pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::from_vec(rows, cols, data)
}

/// `x_t = √ᾱ_t · x0 + √(1−ᾱ_t) · ε`, row by row.
pub fn forward_noise(x0: &Tensor, draw: &NoiseDraw, sched: &DiffusionSchedule) -> Result<Tensor> {
    let (signal, noise) = noise_coefficients(x0, draw, sched)?;
    let c = x0.cols();
    let mut out = x0.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let r = i / c;
        *v = signal[r] * *v + noise[r] * draw.eps.data()[i];
    }
    Ok(out)
}

fn noise_coefficients(
    x0: &Tensor,
    draw: &NoiseDraw,
    sched: &DiffusionSchedule,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if draw.t.len() != x0.rows() || draw.eps.shape() != x0.shape() {
        return Err(Error::Config(format!(
            "noise draw {:?} (t for {} rows) does not match pairs {:?}",
            draw.eps.shape(),
            draw.t.len(),
            x0.shape()
        )));
    }
    let mut signal = Vec::with_capacity(draw.t.len());
    let mut noise = Vec::with_capacity(draw.t.len());
    for &t in &draw.t {
        sched.check_t(t)?;
        let ab = sched.alpha_bar(t);
        signal.push(ab.sqrt());
        noise.push((1.0 - ab).sqrt());
    }
    Ok((signal, noise))
}

/// Architecture of the noise-prediction network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DenoiserConfig {
    pub hidden: usize,
    pub hidden_layers: usize,
    pub time_embed_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            hidden: 128,
            hidden_layers: 3,
            time_embed_dim: 16,
        }
    }
}

/// `ε_φ(x_t, t)`: a Mish MLP over `x_t` concatenated with a learned linear
/// embedding of `t / T`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserNet {
    pub time_embed: MlpParams,
    pub body: MlpParams,
}

/// Node ids from one recorded denoiser pass.
#[derive(Clone, Debug)]
pub struct DenoiserTrace {
    /// Per-row squared error, `[rows, 1]`.
    pub loss: NodeId,
    /// Parameter leaves in [`DenoiserNet::params`] order.
    pub params: Vec<NodeId>,
}

impl DenoiserNet {
    pub fn new<R: Rng + ?Sized>(pair_dim: usize, cfg: DenoiserConfig, rng: &mut R) -> Self {
        let time_embed = MlpParams::new(
            &[1, cfg.time_embed_dim],
            Activation::Identity,
            Activation::Identity,
            rng,
        );
        let mut widths = vec![pair_dim + cfg.time_embed_dim];
        widths.extend(std::iter::repeat_n(cfg.hidden, cfg.hidden_layers));
        widths.push(pair_dim);
        let body = MlpParams::new(&widths, Activation::Mish, Activation::Identity, rng);
        DenoiserNet { time_embed, body }
    }

    pub fn from_parts(time_embed: MlpParams, body: MlpParams) -> Result<Self> {
        let e = time_embed.out_dim();
        if time_embed.in_dim() != 1 || body.in_dim() != body.out_dim() + e {
            return Err(Error::Config(format!(
                "denoiser parts do not fit: embed {}→{e}, body {}→{}",
                time_embed.in_dim(),
                body.in_dim(),
                body.out_dim()
            )));
        }
        Ok(DenoiserNet { time_embed, body })
    }

    pub fn pair_dim(&self) -> usize {
        self.body.out_dim()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.time_embed.params();
        p.extend(self.body.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.time_embed.params_mut();
        p.extend(self.body.params_mut());
        p
    }

    pub fn is_finite(&self) -> bool {
        self.time_embed.is_finite() && self.body.is_finite()
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.pair_dim() {
            return Err(Error::Config(format!(
                "denoiser models {}-dimensional pairs, got {d}",
                self.pair_dim()
            )));
        }
        Ok(())
    }

    /// Noise prediction for already noised rows `x_t` at steps `t`.
    pub fn predict(&self, x_t: &Tensor, t: &[usize], steps: usize) -> Result<Tensor> {
        self.check_dim(x_t.cols())?;
        let tcol = Tensor::column(t.iter().map(|&t| t as f64 / steps as f64).collect());
        let emb = self.time_embed.eval(&tcol)?;
        let input = Tensor::concat_cols(&[x_t, &emb]);
        Ok(self.body.eval(&input)?)
    }

    /// Registers every parameter as a leaf, in [`DenoiserNet::params`] order.
    pub fn register(&self, graph: &mut Graph) -> Vec<NodeId> {
        let mut p = self.time_embed.register(graph);
        p.extend(self.body.register(graph));
        p
    }

    /// Records `Diff_φ(x0, ε, t)` per row on `graph`. `x0` may itself depend on
    /// other nodes (the gradient penalty differentiates through it).
    pub fn record_loss(
        &self,
        graph: &mut Graph,
        x0: NodeId,
        draw: &NoiseDraw,
        sched: &DiffusionSchedule,
    ) -> Result<DenoiserTrace> {
        let params = self.register(graph);
        let loss = self.record_loss_with(graph, x0, draw, sched, &params)?;
        Ok(DenoiserTrace { loss, params })
    }

    /// As [`DenoiserNet::record_loss`], reusing registered parameter leaves.
    pub fn record_loss_with(
        &self,
        graph: &mut Graph,
        x0: NodeId,
        draw: &NoiseDraw,
        sched: &DiffusionSchedule,
        params: &[NodeId],
    ) -> Result<NodeId> {
        let x0v = graph.value(x0);
        self.check_dim(x0v.cols())?;
        let (signal, noise) = noise_coefficients(x0v, draw, sched)?;
        let scaled = graph.mul_rows(x0, Rc::new(Tensor::column(signal)));
        let mut noise_term = draw.eps.clone();
        let c = noise_term.cols();
        for (i, v) in noise_term.data_mut().iter_mut().enumerate() {
            *v *= noise[i / c];
        }
        let noise_node = graph.leaf(noise_term);
        let x_t = graph.add(scaled, noise_node);

        let steps = sched.steps() as f64;
        let tcol = graph.leaf(Tensor::column(
            draw.t.iter().map(|&t| t as f64 / steps).collect(),
        ));
        let n_embed = self.time_embed.layers.len() * 2;
        if params.len() != n_embed + self.body.layers.len() * 2 {
            return Err(Error::Internal("denoiser parameter leaves do not match".into()));
        }
        let emb = self.time_embed.forward_with(graph, tcol, &params[..n_embed])?;
        let input = graph.concat_cols(&[x_t, emb]);
        let out = self.body.forward_with(graph, input, &params[n_embed..])?;
        let eps = graph.leaf(draw.eps.clone());
        let err = graph.sub(eps, out);
        let sq = graph.square(err);
        Ok(graph.sum_cols(sq))
    }
}

/// Per-row `‖ε − ε_φ(x_t, t)‖²` without recording gradients, `[rows, 1]`.
pub fn diff_loss(
    denoiser: &DenoiserNet,
    x0: &PairBatch,
    draw: &NoiseDraw,
    sched: &DiffusionSchedule,
) -> Result<Tensor> {
    let x_t = forward_noise(&x0.x0, draw, sched)?;
    let pred = denoiser.predict(&x_t, &draw.t, sched.steps())?;
    Ok(row_sq_error(&draw.eps, &pred))
}

fn row_sq_error(target: &Tensor, pred: &Tensor) -> Tensor {
    let c = target.cols();
    let mut out = vec![0.0; target.rows()];
    for (i, (a, b)) in target.data().iter().zip(pred.data()).enumerate() {
        out[i / c] += (a - b) * (a - b);
    }
    Tensor::column(out)
}

/// `clamp(exp(−diff))` to `[D_FLOOR, D_CEIL]`.
pub fn discriminate_value(diff: f64) -> f64 {
    (-diff).exp().clamp(D_FLOOR, D_CEIL)
}

/// Elementwise discriminator output for non-negative per-row losses.
pub fn discriminate(diff: &Tensor) -> Result<Tensor> {
    if let Some(bad) = diff.data().iter().find(|v| v.is_nan() || **v < 0.0) {
        return Err(Error::Internal(format!(
            "diffusion loss must be non-negative, got {bad}"
        )));
    }
    Ok(diff.map(discriminate_value))
}

/// Reward `−(1/T) Σ_t log(1 − D(x0, ε, t))` over every schedule step, sharing
/// one noise vector per row across the sweep.
pub fn surrogate_reward(
    denoiser: &DenoiserNet,
    x0: &PairBatch,
    eps: &Tensor,
    sched: &DiffusionSchedule,
) -> Result<Tensor> {
    let per_step = sweep_losses(denoiser, x0, eps, sched)?;
    let steps = sched.steps();
    let rewards = per_step.chunks_exact(steps).map(reward_from_losses).collect();
    Ok(Tensor::column(rewards))
}

/// Reward for one row given its per-step losses.
pub fn reward_from_losses(losses: &[f64]) -> f64 {
    let sum: f64 = losses
        .iter()
        .map(|&l| (1.0 - discriminate_value(l)).ln())
        .sum();
    -sum / losses.len() as f64
}

/// Diffusion losses for every row at every step, row-major `[rows · T]`.
fn sweep_losses(
    denoiser: &DenoiserNet,
    x0: &PairBatch,
    eps: &Tensor,
    sched: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    if eps.shape() != x0.x0.shape() {
        return Err(Error::Config("noise shape does not match pairs".into()));
    }
    let steps = sched.steps();
    let (rows, d) = (x0.len(), x0.dim());
    let mut x_t = Vec::with_capacity(rows * steps * d);
    let mut eps_rep = Vec::with_capacity(rows * steps * d);
    let mut t_all = Vec::with_capacity(rows * steps);
    for r in 0..rows {
        let (xr, er) = (x0.x0.row_slice(r), eps.row_slice(r));
        for t in 1..=steps {
            let ab = sched.alpha_bar(t);
            let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
            x_t.extend(xr.iter().zip(er).map(|(x, e)| s * x + n * e));
            eps_rep.extend_from_slice(er);
            t_all.push(t);
        }
    }
    let x_t = Tensor::from_vec(rows * steps, d, x_t);
    let eps_rep = Tensor::from_vec(rows * steps, d, eps_rep);
    let pred = denoiser.predict(&x_t, &t_all, steps)?;
    Ok(row_sq_error(&eps_rep, &pred).into_vec())
}
