//! Soft actor-critic with twin critics, polyak-averaged targets, a
//! tanh-squashed Gaussian policy and learned entropy temperature.

use std::f64::consts::PI;
use std::rc::Rc;

use rand::Rng;

use crate::diffusion::standard_normal;
use crate::envs::StepPairs;
use crate::error::{Error, Result};
use crate::numerics::{Activation, AdamConfig, AdamState, Checkpoint, Graph, MlpParams, NodeId, Tensor};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Added inside `log(1 − tanh²(u))` to keep the correction finite at the bounds.
pub const SQUASH_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct SacConfig {
    pub hidden: usize,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub init_log_alpha: f64,
    /// Environment steps of uniform random actions before learning starts.
    pub warmup: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            hidden: 64,
            gamma: 0.99,
            tau: 0.005,
            batch_size: 256,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            init_log_alpha: 0.0,
            warmup: 1000,
        }
    }
}

/// A training batch. Rewards come from a discriminator (or, in tests and
/// expert training, from the environment); `done` marks horizon truncation.
#[derive(Clone, Debug)]
pub struct SacBatch {
    pub s: Tensor,
    pub a: Tensor,
    pub s_next: Tensor,
    pub r: Tensor,
    pub done: Tensor,
}

impl SacBatch {
    /// Stacks `steps` with one reward per step.
    pub fn from_steps<T: StepPairs>(steps: &[&T], rewards: Vec<f64>) -> SacBatch {
        debug_assert_eq!(steps.len(), rewards.len());
        let rows = |f: fn(&T) -> &[f64]| Tensor::from_rows(&steps.iter().map(|t| f(t)).collect::<Vec<_>>());
        SacBatch {
            s: rows(T::state),
            a: rows(T::action),
            s_next: rows(T::next_state),
            r: Tensor::column(rewards),
            done: Tensor::column(steps.iter().map(|t| if t.done() { 1.0 } else { 0.0 }).collect()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub critic_loss: f64,
    pub policy_loss: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    /// Mean of `−log π(a|s)` over the batch.
    pub entropy: f64,
}

#[derive(Clone, Debug)]
pub struct SacAgent {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub config: SacConfig,
    pub policy: MlpParams,
    pub q1: MlpParams,
    pub q2: MlpParams,
    pub q1_target: MlpParams,
    pub q2_target: MlpParams,
    pub log_alpha: f64,
    pub target_entropy: f64,
    policy_opt: AdamState,
    critic_opt: AdamState,
    alpha_opt: AdamState,
}

/// Per-dimension squashed-Gaussian log density summed over columns, for
/// pre-squash values `u`. `stabilizer` is added inside `log(1 − tanh²(u))`.
pub fn squashed_log_prob(mu: &Tensor, log_std: &Tensor, u: &Tensor, stabilizer: f64) -> Tensor {
    let c = mu.cols();
    let mut out = vec![0.0; mu.rows()];
    for i in 0..mu.len() {
        let (m, ls, uv) = (mu.data()[i], log_std.data()[i], u.data()[i]);
        let z = (uv - m) / ls.exp();
        let a = uv.tanh();
        out[i / c] += -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln() - (1.0 - a * a + stabilizer).ln();
    }
    Tensor::column(out)
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, config: SacConfig, rng: &mut R) -> Self {
        let h = config.hidden;
        let policy = MlpParams::new(&[obs_dim, h, h, 2 * act_dim], Activation::Relu, Activation::Identity, rng);
        let q1 = MlpParams::new(&[obs_dim + act_dim, h, h, 1], Activation::Relu, Activation::Identity, rng);
        let q2 = MlpParams::new(&[obs_dim + act_dim, h, h, 1], Activation::Relu, Activation::Identity, rng);
        Self::from_networks(obs_dim, act_dim, config, policy, q1.clone(), q2.clone(), q1, q2, None)
    }

    #[allow(clippy::too_many_arguments)]
    fn from_networks(
        obs_dim: usize,
        act_dim: usize,
        config: SacConfig,
        policy: MlpParams,
        q1: MlpParams,
        q2: MlpParams,
        q1_target: MlpParams,
        q2_target: MlpParams,
        log_alpha: Option<f64>,
    ) -> Self {
        let policy_opt = AdamState::new(AdamConfig::with_lr(config.actor_lr), &policy.params());
        let mut critic_params = q1.params();
        critic_params.extend(q2.params());
        let critic_opt = AdamState::new(AdamConfig::with_lr(config.critic_lr), &critic_params);
        let alpha_opt = AdamState::new(AdamConfig::with_lr(config.alpha_lr), &[&Tensor::scalar(0.0)]);
        SacAgent {
            obs_dim,
            act_dim,
            log_alpha: log_alpha.unwrap_or(config.init_log_alpha),
            target_entropy: -(act_dim as f64),
            config,
            policy,
            q1,
            q2,
            q1_target,
            q2_target,
            policy_opt,
            critic_opt,
            alpha_opt,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// Splits the policy head into mean and clamped log-std.
    fn policy_head(&self, s: &Tensor) -> Result<(Tensor, Tensor)> {
        let out = self.policy.eval(s)?;
        let a = self.act_dim;
        let mu = out.slice_cols(0, a);
        let log_std = out.slice_cols(a, 2 * a).map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        Ok((mu, log_std))
    }

    /// Stochastic action `tanh(μ + σ·z)` and its log-probability, one row per state.
    pub fn policy_sample<R: Rng + ?Sized>(&self, s: &Tensor, rng: &mut R) -> Result<(Tensor, Tensor)> {
        let (mu, log_std) = self.policy_head(s)?;
        let z = standard_normal(mu.rows(), mu.cols(), rng);
        Ok(self.squash(&mu, &log_std, &z))
    }

    /// Action and log-probability for a given standard-normal draw `z`.
    pub fn squash(&self, mu: &Tensor, log_std: &Tensor, z: &Tensor) -> (Tensor, Tensor) {
        let u = Tensor::from_vec(
            mu.rows(),
            mu.cols(),
            (0..mu.len())
                .map(|i| mu.data()[i] + log_std.data()[i].exp() * z.data()[i])
                .collect(),
        );
        let logp = squashed_log_prob(mu, log_std, &u, SQUASH_EPS);
        (u.map(f64::tanh), logp)
    }

    /// Deterministic evaluation action `tanh(μ)`.
    pub fn act_deterministic(&self, s: &Tensor) -> Result<Tensor> {
        let (mu, _) = self.policy_head(s)?;
        Ok(mu.map(f64::tanh))
    }

    /// Policy mean and clamped log-std for each state row.
    pub fn policy_distribution(&self, s: &Tensor) -> Result<(Tensor, Tensor)> {
        self.policy_head(s)
    }

    fn check_batch(&self, b: &SacBatch) -> Result<()> {
        let k = b.s.rows();
        let ok = b.s.cols() == self.obs_dim
            && b.s_next.shape() == b.s.shape()
            && b.a.shape() == [k, self.act_dim]
            && b.r.shape() == [k, 1]
            && b.done.shape() == [k, 1];
        if !ok {
            return Err(Error::Config("SAC batch shapes do not match the agent".into()));
        }
        if !b.r.is_finite() {
            return Err(Error::NonFinite {
                what: "reward".into(),
                step: self.critic_opt.step_count(),
            });
        }
        Ok(())
    }

    /// Soft Bellman targets `r + γ·(min Q̄(s′, a′) − α·log π(a′|s′))`.
    /// Horizon truncation is not a terminal state, so targets always bootstrap.
    pub fn critic_targets<R: Rng + ?Sized>(&self, batch: &SacBatch, rng: &mut R) -> Result<Tensor> {
        let (a_next, logp_next) = self.policy_sample(&batch.s_next, rng)?;
        let sa = Tensor::concat_cols(&[&batch.s_next, &a_next]);
        let q1 = self.q1_target.eval(&sa)?;
        let q2 = self.q2_target.eval(&sa)?;
        let alpha = self.alpha();
        let gamma = self.config.gamma;
        Ok(Tensor::column(
            (0..batch.r.rows())
                .map(|i| {
                    let soft = q1.data()[i].min(q2.data()[i]) - alpha * logp_next.data()[i];
                    batch.r.data()[i] + gamma * soft
                })
                .collect(),
        ))
    }

    /// One critic, policy and temperature step followed by the target update.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &SacBatch, rng: &mut R) -> Result<LossReport> {
        self.check_batch(batch)?;
        let step = self.critic_opt.step_count();
        let non_finite = |what: &str| Error::NonFinite {
            what: what.to_string(),
            step,
        };

        // Critics.
        let y = Rc::new(self.critic_targets(batch, rng)?);
        let mut g = Graph::new();
        let sa = g.leaf(Tensor::concat_cols(&[&batch.s, &batch.a]));
        let t1 = self.q1.forward(&mut g, sa)?;
        let t2 = self.q2.forward(&mut g, sa)?;
        let neg_y = g.leaf(y.map(|v| -v));
        let e1 = g.add(t1.output, neg_y);
        let e2 = g.add(t2.output, neg_y);
        let s1 = g.square(e1);
        let s2 = g.square(e2);
        let m1 = g.mean_all(s1);
        let m2 = g.mean_all(s2);
        let critic_loss = g.add(m1, m2);
        let critic_value = g.value(critic_loss).item();
        if !critic_value.is_finite() {
            return Err(non_finite("critic loss"));
        }
        let mut wrt = t1.params.clone();
        wrt.extend(&t2.params);
        let grads = g.backward(critic_loss, &wrt)?;
        let gvals: Vec<&Tensor> = wrt.iter().map(|&p| grads.tensor(&g, p).expect("grad")).collect();
        let mut params = self.q1.params_mut();
        params.extend(self.q2.params_mut());
        self.critic_opt.step(&mut params, &gvals)?;

        // Policy.
        let alpha = self.alpha();
        let mut g = Graph::new();
        let s = g.leaf(batch.s.clone());
        let z = standard_normal(batch.s.rows(), self.act_dim, rng);
        let (trace, action, logp) = self.record_policy(&mut g, s, &z)?;
        let sa = g.concat_cols(&[s, action]);
        let q1 = self.q1.forward(&mut g, sa)?;
        let q2 = self.q2.forward(&mut g, sa)?;
        let qmin = g.min(q1.output, q2.output);
        let scaled = g.scale(logp, alpha);
        let diff = g.sub(scaled, qmin);
        let policy_loss = g.mean_all(diff);
        let policy_value = g.value(policy_loss).item();
        if !policy_value.is_finite() {
            return Err(non_finite("policy loss"));
        }
        let logp_vals = g.value(logp).clone();
        let grads = g.backward(policy_loss, &trace.params)?;
        let gvals: Vec<&Tensor> = trace
            .params
            .iter()
            .map(|&p| grads.tensor(&g, p).expect("grad"))
            .collect();
        self.policy_opt.step(&mut self.policy.params_mut(), &gvals)?;

        // Temperature: loss = −log α · mean(log π + H̄), with log π held fixed.
        let mean_logp = logp_vals.mean();
        let alpha_loss = -self.log_alpha * (mean_logp + self.target_entropy);
        let mut la = Tensor::scalar(self.log_alpha);
        let grad = Tensor::scalar(-(mean_logp + self.target_entropy));
        self.alpha_opt.step(&mut [&mut la], &[&grad])?;
        self.log_alpha = la.item();

        let tau = self.config.tau;
        self.q1_target.polyak_from(&self.q1, tau);
        self.q2_target.polyak_from(&self.q2, tau);

        if !self.policy.is_finite() || !self.q1.is_finite() || !self.q2.is_finite() || !self.log_alpha.is_finite() {
            return Err(non_finite("SAC parameter"));
        }
        Ok(LossReport {
            critic_loss: critic_value,
            policy_loss: policy_value,
            alpha_loss,
            alpha,
            entropy: -mean_logp,
        })
    }

    /// Records `a = tanh(μ + σ·z)` and `log π(a|s)` on the tape.
    fn record_policy(
        &self,
        g: &mut Graph,
        s: NodeId,
        z: &Tensor,
    ) -> Result<(crate::numerics::MlpTrace, NodeId, NodeId)> {
        let trace = self.policy.forward(g, s)?;
        let a = self.act_dim;
        let mu = g.slice_cols(trace.output, 0, a);
        let raw_ls = g.slice_cols(trace.output, a, 2 * a);
        let ls = g.clamp(raw_ls, LOG_STD_MIN, LOG_STD_MAX);
        let std = g.exp(ls);
        let noise = g.mul_const(std, Rc::new(z.clone()));
        let u = g.add(mu, noise);
        let action = g.tanh(u);
        let half_log_2pi = 0.5 * (2.0 * PI).ln();
        let base = Tensor::column(
            (0..z.rows())
                .map(|r| z.row_slice(r).iter().map(|v| -0.5 * v * v - half_log_2pi).sum())
                .collect(),
        );
        let base = g.leaf(base);
        let ls_sum = g.sum_cols(ls);
        let sq = g.square(action);
        let neg = g.neg(sq);
        let inner = g.add_scalar(neg, 1.0 + SQUASH_EPS);
        let log_corr = g.log(inner);
        let corr_sum = g.sum_cols(log_corr);
        let t = g.sub(base, ls_sum);
        let logp = g.sub(t, corr_sum);
        Ok((trace, action, logp))
    }

    /// Loss surfaces for gradient checking: critic MSE against fixed targets
    /// and the policy objective for a fixed noise draw.
    pub fn record_losses_for_check(
        &self,
        g: &mut Graph,
        batch: &SacBatch,
        targets: &Tensor,
        z: &Tensor,
    ) -> Result<SacLossTrace> {
        let sa = g.leaf(Tensor::concat_cols(&[&batch.s, &batch.a]));
        let t1 = self.q1.forward(g, sa)?;
        let neg_y = g.leaf(targets.map(|v| -v));
        let e1 = g.add(t1.output, neg_y);
        let s1 = g.square(e1);
        let critic = g.mean_all(s1);

        let s = g.leaf(batch.s.clone());
        let (trace, action, logp) = self.record_policy(g, s, z)?;
        let sa2 = g.concat_cols(&[s, action]);
        let q1 = self.q1.forward(g, sa2)?;
        let q2 = self.q2.forward(g, sa2)?;
        let qmin = g.min(q1.output, q2.output);
        let scaled = g.scale(logp, self.alpha());
        let diff = g.sub(scaled, qmin);
        let policy = g.mean_all(diff);
        Ok(SacLossTrace {
            critic,
            critic_params: t1.params,
            policy,
            policy_params: trace.params,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            networks: vec![
                ("pi".into(), self.policy.clone()),
                ("q1".into(), self.q1.clone()),
                ("q2".into(), self.q2.clone()),
                ("q1_target".into(), self.q1_target.clone()),
                ("q2_target".into(), self.q2_target.clone()),
            ],
            scalars: vec![("log_alpha".into(), self.log_alpha)],
            metadata: Vec::new(),
        }
    }

    /// Restores networks and temperature; optimizer moments start fresh.
    pub fn from_checkpoint(ck: &Checkpoint, config: SacConfig) -> Result<Self> {
        let net = |name: &str| {
            ck.network(name)
                .cloned()
                .ok_or_else(|| Error::Config(format!("checkpoint has no network {name:?}")))
        };
        let policy = net("pi")?;
        let q1 = net("q1")?;
        let obs_dim = policy.in_dim();
        let act_dim = policy.out_dim() / 2;
        if q1.in_dim() != obs_dim + act_dim {
            return Err(Error::Config("policy and critic dimensions disagree".into()));
        }
        let log_alpha = ck
            .scalar("log_alpha")
            .ok_or_else(|| Error::Config("checkpoint has no log_alpha".into()))?;
        Ok(Self::from_networks(
            obs_dim,
            act_dim,
            config,
            policy,
            q1,
            net("q2")?,
            net("q1_target")?,
            net("q2_target")?,
            Some(log_alpha),
        ))
    }
}

/// Node ids of the SAC losses recorded by [`SacAgent::record_losses_for_check`].
#[derive(Clone, Debug)]
pub struct SacLossTrace {
    pub critic: NodeId,
    pub critic_params: Vec<NodeId>,
    pub policy: NodeId,
    pub policy_params: Vec<NodeId>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn agent(seed: u64, cfg: SacConfig) -> SacAgent {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SacAgent::new(3, 2, cfg, &mut rng)
    }

    fn batch(k: usize, rng: &mut ChaCha8Rng) -> SacBatch {
        SacBatch {
            s: standard_normal(k, 3, rng),
            a: standard_normal(k, 2, rng).map(f64::tanh),
            s_next: standard_normal(k, 3, rng),
            r: standard_normal(k, 1, rng),
            done: Tensor::zeros(k, 1),
        }
    }

    #[test]
    fn zero_noise_gives_tanh_mean() {
        let ag = agent(0, SacConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = standard_normal(4, 3, &mut rng);
        let (mu, log_std) = ag.policy_distribution(&s).unwrap();
        let tiny = log_std.map(|_| LOG_STD_MIN);
        let (a, _) = ag.squash(&mu, &tiny, &standard_normal(4, 2, &mut rng));
        let det = ag.act_deterministic(&s).unwrap();
        assert!(a.zip_map(&det, |x, y| (x - y).abs()).max_abs() < 1e-8);
    }

    #[test]
    fn symmetric_noise_gives_opposite_actions() {
        let ag = agent(0, SacConfig::default());
        let mu = Tensor::zeros(1, 2);
        let ls = Tensor::row(vec![0.3, -0.5]);
        let z = Tensor::row(vec![0.7, -1.2]);
        let (a, lp) = ag.squash(&mu, &ls, &z);
        let (b, lq) = ag.squash(&mu, &ls, &z.map(|v| -v));
        assert_eq!(a.data()[0], -b.data()[0]);
        assert_eq!(a.data()[1], -b.data()[1]);
        assert_eq!(lp, lq);
    }

    #[test]
    fn discount_free_targets_are_rewards() {
        let ag = agent(
            2,
            SacConfig {
                gamma: 0.0,
                ..Default::default()
            },
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = batch(8, &mut rng);
        let y = ag.critic_targets(&b, &mut rng).unwrap();
        assert_eq!(y, b.r);
    }

    #[test]
    fn full_polyak_copies_online_nets() {
        let mut ag = agent(
            4,
            SacConfig {
                tau: 1.0,
                ..Default::default()
            },
        );
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        ag.update(&batch(16, &mut rng), &mut rng).unwrap();
        assert_eq!(ag.q1_target, ag.q1);
        assert_eq!(ag.q2_target, ag.q2);
    }

    #[test]
    fn targets_follow_polyak_exactly() {
        let mut ag = agent(6, SacConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = batch(16, &mut rng);
        ag.update(&b, &mut rng).unwrap();
        let old = ag.q1_target.clone();
        ag.update(&b, &mut rng).unwrap();
        let tau = ag.config.tau;
        for ((t, o), on) in ag.q1_target.params().iter().zip(old.params()).zip(ag.q1.params()) {
            for i in 0..t.len() {
                assert_eq!(t.data()[i], tau * on.data()[i] + (1.0 - tau) * o.data()[i]);
            }
        }
        assert!(ag.alpha() > 0.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let ag = agent(8, SacConfig::default());
        let ck = ag.to_checkpoint();
        let back = SacAgent::from_checkpoint(&Checkpoint::decode(&ck.encode()).unwrap(), SacConfig::default()).unwrap();
        assert_eq!(back.policy, ag.policy);
        assert_eq!(back.q2_target, ag.q2_target);
        assert_eq!(back.log_alpha, ag.log_alpha);
    }
}
