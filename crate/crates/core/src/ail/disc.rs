//! Discriminators, their adversarial objectives and the gradient penalty.

use rand::Rng;

use crate::diffusion::{
    surrogate_reward, DenoiserConfig, DenoiserNet, DiffusionSchedule, NoiseDraw, PairBatch, PairMode, D_CEIL,
    D_FLOOR,
};
use crate::envs::StepPairs;
use crate::error::{Error, Result};
use crate::numerics::{Activation, Graph, MlpParams, NodeId, Tensor};

/// Flattens transitions into pairs: `(s, a)` or `(s, s′)`.
pub fn make_pairs<T: StepPairs>(steps: &[&T], mode: PairMode) -> Result<PairBatch> {
    let first = steps
        .first()
        .ok_or_else(|| Error::Config("cannot build pairs from zero transitions".into()))?;
    let (obs, act) = (first.state().len(), first.action().len());
    let mut rows = Vec::with_capacity(steps.len());
    for t in steps {
        if t.state().len() != obs || t.action().len() != act || t.next_state().len() != obs {
            return Err(Error::Config("transitions have inconsistent dimensions".into()));
        }
        let mut row = t.state().to_vec();
        match mode {
            PairMode::StateAction => row.extend_from_slice(t.action()),
            PairMode::StateOnly => row.extend_from_slice(t.next_state()),
        }
        rows.push(row);
    }
    Ok(PairBatch {
        x0: Tensor::from_rows(&rows),
        mode,
    })
}

/// Records `clamp(exp(−diff))` on `graph`.
pub fn record_d_from_loss(g: &mut Graph, diff: NodeId) -> NodeId {
    let neg = g.neg(diff);
    let e = g.exp(neg);
    g.clamp(e, D_FLOOR, D_CEIL)
}

/// Records `clamp(sigmoid(logit))`.
pub fn record_d_from_logit(g: &mut Graph, logit: NodeId) -> NodeId {
    let s = g.sigmoid(logit);
    g.clamp(s, D_FLOOR, D_CEIL)
}

/// `mean log D_e + mean log(1 − D_p)` from two `[rows, 1]` nodes.
fn record_js_objective(g: &mut Graph, d_expert: NodeId, d_policy: NodeId) -> NodeId {
    let le = g.log(d_expert);
    let le = g.mean_all(le);
    let neg = g.neg(d_policy);
    let one_minus = g.add_scalar(neg, 1.0);
    let lp = g.log(one_minus);
    let lp = g.mean_all(lp);
    g.add(le, lp)
}

/// Baseline discriminator: an MLP producing one logit per pair.
#[derive(Clone, Debug, PartialEq)]
pub struct GailDiscriminator {
    pub net: MlpParams,
}

impl GailDiscriminator {
    /// Mish hidden layers of width `hidden`, linear logit output.
    pub fn new<R: Rng + ?Sized>(pair_dim: usize, cfg: DenoiserConfig, rng: &mut R) -> Self {
        let mut widths = vec![pair_dim];
        widths.extend(std::iter::repeat_n(cfg.hidden, cfg.hidden_layers));
        widths.push(1);
        GailDiscriminator {
            net: MlpParams::new(&widths, Activation::Mish, Activation::Identity, rng),
        }
    }

    pub fn pair_dim(&self) -> usize {
        self.net.in_dim()
    }

    pub fn probabilities(&self, x0: &Tensor) -> Result<Tensor> {
        Ok(self
            .net
            .eval(x0)?
            .map(|l| crate::numerics::sigmoid(l).clamp(D_FLOOR, D_CEIL)))
    }
}

/// Node ids of one recorded discriminator objective.
#[derive(Clone, Debug)]
pub struct DiscTrace {
    /// Scalar objective to maximize, penalty already subtracted.
    pub objective: NodeId,
    /// `mean log D_e + mean log(1 − D_p)` before the penalty.
    pub js: NodeId,
    pub penalty: Option<NodeId>,
    /// Parameter leaves in discriminator parameter order.
    pub params: Vec<NodeId>,
}

fn check_batches(expert: &PairBatch, policy: &PairBatch) -> Result<()> {
    if expert.mode != policy.mode || expert.x0.shape() != policy.x0.shape() {
        return Err(Error::Config(format!(
            "expert batch {:?} ({}) and policy batch {:?} ({}) differ",
            expert.x0.shape(),
            expert.mode,
            policy.x0.shape(),
            policy.mode
        )));
    }
    Ok(())
}

/// Records the DiffAIL objective with one shared draw for both batches.
pub fn record_disc_objective_diffail(
    g: &mut Graph,
    denoiser: &DenoiserNet,
    expert: &PairBatch,
    policy: &PairBatch,
    draw: &NoiseDraw,
    sched: &DiffusionSchedule,
) -> Result<DiscTrace> {
    let disc = Discriminator::Diffusion {
        denoiser: denoiser.clone(),
        sched: sched.clone(),
    };
    let noise = DiscStepNoise {
        draw: Some(draw.clone()),
        mix: None,
    };
    disc.record_objective(g, expert, policy, &noise, 0.0)
}

/// Records the GAIL objective.
pub fn record_disc_objective_gail(
    g: &mut Graph,
    disc: &GailDiscriminator,
    expert: &PairBatch,
    policy: &PairBatch,
) -> Result<DiscTrace> {
    let noise = DiscStepNoise { draw: None, mix: None };
    Discriminator::Gail(disc.clone()).record_objective(g, expert, policy, &noise, 0.0)
}

/// Value of the DiffAIL objective.
pub fn disc_loss_diffail(
    denoiser: &DenoiserNet,
    expert: &PairBatch,
    policy: &PairBatch,
    draw: &NoiseDraw,
    sched: &DiffusionSchedule,
) -> Result<f64> {
    let mut g = Graph::new();
    let tr = record_disc_objective_diffail(&mut g, denoiser, expert, policy, draw, sched)?;
    finite_item(&g, tr.objective, "discriminator objective")
}

/// Value of the GAIL objective.
pub fn disc_loss_gail(disc: &GailDiscriminator, expert: &PairBatch, policy: &PairBatch) -> Result<f64> {
    let mut g = Graph::new();
    let tr = record_disc_objective_gail(&mut g, disc, expert, policy)?;
    finite_item(&g, tr.objective, "discriminator objective")
}

fn finite_item(g: &Graph, id: NodeId, what: &str) -> Result<f64> {
    let v = g.value(id).item();
    if !v.is_finite() {
        return Err(Error::NonFinite {
            what: what.into(),
            step: 0,
        });
    }
    Ok(v)
}

/// Rows `u·x_e + (1 − u)·x_p`.
pub fn interpolate(xe: &Tensor, xp: &Tensor, u: &[f64]) -> Tensor {
    let c = xe.cols();
    Tensor::from_vec(
        xe.rows(),
        c,
        xe.data()
            .iter()
            .zip(xp.data())
            .enumerate()
            .map(|(i, (e, p))| {
                let w = u[i / c];
                w * e + (1.0 - w) * p
            })
            .collect(),
    )
}

/// Keeps `‖g‖` differentiable where the gradient vanishes.
const NORM_EPS: f64 = 1e-16;

/// Records `mean_i (‖∇_x̂ s(x̂_i)‖₂ − 1)²` at `x̂ = u·x_e + (1−u)·x_p`.
/// `disc_scalar` records the per-row scalar `[rows, 1]` whose input gradient
/// is penalized. The result stays differentiable in the parameters.
pub fn record_gradient_penalty<F>(g: &mut Graph, xe: &Tensor, xp: &Tensor, u: &[f64], disc_scalar: F) -> Result<NodeId>
where
    F: FnOnce(&mut Graph, NodeId) -> Result<NodeId>,
{
    if xe.shape() != xp.shape() || u.len() != xe.rows() {
        return Err(Error::Config("gradient penalty batches differ in size".into()));
    }
    let x_hat = g.leaf(interpolate(xe, xp, u));
    let s = disc_scalar(g, x_hat)?;
    let total = g.sum_all(s);
    let grads = g.backward(total, &[x_hat])?;
    let gx = grads
        .node(x_hat)
        .ok_or_else(|| Error::Internal("missing input gradient".into()))?;
    let sq = g.square(gx);
    let ss = g.sum_cols(sq);
    let ss = g.add_scalar(ss, NORM_EPS);
    let norm = g.sqrt(ss);
    let dev = g.add_scalar(norm, -1.0);
    let dev = g.square(dev);
    Ok(g.mean_all(dev))
}

/// Mixing weights `u ~ U[0, 1]`, one per row.
pub fn sample_mix<R: Rng + ?Sized>(rows: usize, rng: &mut R) -> Vec<f64> {
    (0..rows).map(|_| rng.random::<f64>()).collect()
}

/// Either discriminator, with the diffusion schedule where it applies.
#[derive(Clone, Debug)]
pub enum Discriminator {
    Diffusion {
        denoiser: DenoiserNet,
        sched: DiffusionSchedule,
    },
    Gail(GailDiscriminator),
}

/// Randomness one discriminator step consumes.
#[derive(Clone, Debug)]
pub struct DiscStepNoise {
    /// Shared `(t, ε)` draw; unused by GAIL.
    pub draw: Option<NoiseDraw>,
    /// Interpolation weights for the penalty.
    pub mix: Option<Vec<f64>>,
}

impl Discriminator {
    pub fn pair_dim(&self) -> usize {
        match self {
            Discriminator::Diffusion { denoiser, .. } => denoiser.pair_dim(),
            Discriminator::Gail(d) => d.pair_dim(),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Discriminator::Diffusion { denoiser, .. } => denoiser.params(),
            Discriminator::Gail(d) => d.net.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Discriminator::Diffusion { denoiser, .. } => denoiser.params_mut(),
            Discriminator::Gail(d) => d.net.params_mut(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }

    /// Samples the randomness for one step on `rows` paired rows.
    pub fn sample_step_noise<R: Rng + ?Sized>(&self, rows: usize, penalty: bool, rng: &mut R) -> DiscStepNoise {
        let draw = match self {
            Discriminator::Diffusion { sched, .. } => Some(NoiseDraw::sample(rows, self.pair_dim(), sched.steps(), rng)),
            Discriminator::Gail(_) => None,
        };
        let mix = penalty.then(|| sample_mix(rows, rng));
        DiscStepNoise { draw, mix }
    }

    /// Registers every parameter as a graph leaf.
    pub fn register(&self, g: &mut Graph) -> Vec<NodeId> {
        match self {
            Discriminator::Diffusion { denoiser, .. } => denoiser.register(g),
            Discriminator::Gail(d) => d.net.register(g),
        }
    }

    /// Records `D` per row of `x0` with registered `params`.
    fn record_d(&self, g: &mut Graph, x0: NodeId, noise: &DiscStepNoise, params: &[NodeId]) -> Result<NodeId> {
        match self {
            Discriminator::Diffusion { denoiser, sched } => {
                let draw = noise
                    .draw
                    .as_ref()
                    .ok_or_else(|| Error::Internal("diffusion discriminator needs a noise draw".into()))?;
                let loss = denoiser.record_loss_with(g, x0, draw, sched, params)?;
                Ok(record_d_from_loss(g, loss))
            }
            Discriminator::Gail(d) => {
                let logit = d.net.forward_with(g, x0, params)?;
                Ok(record_d_from_logit(g, logit))
            }
        }
    }

    /// Records the objective with an optional penalty of weight `gp_weight`.
    /// For the diffusion discriminator the penalized scalar is `log D` at the
    /// step's shared draw.
    pub fn record_objective(
        &self,
        g: &mut Graph,
        expert: &PairBatch,
        policy: &PairBatch,
        noise: &DiscStepNoise,
        gp_weight: f64,
    ) -> Result<DiscTrace> {
        check_batches(expert, policy)?;
        if expert.dim() != self.pair_dim() {
            return Err(Error::Config(format!(
                "discriminator models {}-dimensional pairs, got {}",
                self.pair_dim(),
                expert.dim()
            )));
        }
        let params = self.register(g);
        let xe = g.leaf(expert.x0.clone());
        let xp = g.leaf(policy.x0.clone());
        let de = self.record_d(g, xe, noise, &params)?;
        let dp = self.record_d(g, xp, noise, &params)?;
        let js = record_js_objective(g, de, dp);
        let mut trace = DiscTrace {
            objective: js,
            js,
            penalty: None,
            params,
        };
        if let Some(u) = &noise.mix {
            let params = trace.params.clone();
            let penalty = record_gradient_penalty(g, &expert.x0, &policy.x0, u, |g, x| {
                let d = self.record_d(g, x, noise, &params)?;
                Ok(g.log(d))
            })?;
            let weighted = g.scale(penalty, gp_weight);
            trace.objective = g.sub(js, weighted);
            trace.penalty = Some(penalty);
        }
        Ok(trace)
    }

    /// Gradient of `−objective` for each parameter, in parameter order.
    pub fn ascent_gradients(&self, g: &mut Graph, trace: &DiscTrace) -> Result<Vec<Tensor>> {
        let loss = g.neg(trace.objective);
        let grads = g.backward(loss, &trace.params)?;
        trace
            .params
            .iter()
            .map(|&p| {
                grads
                    .tensor(g, p)
                    .cloned()
                    .ok_or_else(|| Error::Internal("missing parameter gradient".into()))
            })
            .collect()
    }

    /// Surrogate reward per pair: the all-step sweep for DiffAIL, `−log(1−D)`
    /// for GAIL.
    pub fn rewards<R: Rng + ?Sized>(&self, pairs: &PairBatch, rng: &mut R) -> Result<Tensor> {
        match self {
            Discriminator::Diffusion { denoiser, sched } => {
                let eps = crate::diffusion::standard_normal(pairs.len(), pairs.dim(), rng);
                surrogate_reward(denoiser, pairs, &eps, sched)
            }
            Discriminator::Gail(d) => Ok(d.probabilities(&pairs.x0)?.map(|p| -(1.0 - p).ln())),
        }
    }

    /// Single-draw `D` and, for DiffAIL, the diffusion loss, per pair.
    pub fn score<R: Rng + ?Sized>(&self, pairs: &PairBatch, rng: &mut R) -> Result<(Tensor, Option<Tensor>)> {
        match self {
            Discriminator::Diffusion { denoiser, sched } => {
                let draw = NoiseDraw::sample(pairs.len(), pairs.dim(), sched.steps(), rng);
                let loss = crate::diffusion::diff_loss(denoiser, pairs, &draw, sched)?;
                Ok((crate::diffusion::discriminate(&loss)?, Some(loss)))
            }
            Discriminator::Gail(d) => Ok((d.probabilities(&pairs.x0)?, None)),
        }
    }
}
