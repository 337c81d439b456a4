//! Analytic control tasks and the replay buffer.
//!
//! Both environments are deterministic given the state and action; only the
//! initial state is random. Episodes end at a fixed horizon.

mod buffer;
mod pendulum;
mod pointmass;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

pub use buffer::ReplayBuffer;
pub use pendulum::{pendulum_step, wrap_angle};
pub use pointmass::pointmass_step;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EnvId {
    PointMass,
    Pendulum,
}

impl EnvId {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::PointMass => "pointmass",
            EnvId::Pendulum => "pendulum",
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pointmass" => Ok(EnvId::PointMass),
            "pendulum" => Ok(EnvId::Pendulum),
            other => Err(Error::Config(format!(
                "unknown environment {other:?} (expected pointmass or pendulum)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub id: EnvId,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub horizon: usize,
    pub dt: f64,
}

/// One environment step, including the hidden true reward.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    /// The action actually applied, after clipping to `[−1, 1]`.
    pub a: Vec<f64>,
    pub s_next: Vec<f64>,
    /// Evaluation only; never reaches the learner.
    pub true_r: f64,
    pub done: bool,
}

impl Transition {
    /// The reward-free view stored in the learner's replay buffer.
    pub fn observed(&self) -> ObservedTransition {
        ObservedTransition {
            s: self.s.clone(),
            a: self.a.clone(),
            s_next: self.s_next.clone(),
            done: self.done,
        }
    }
}

/// A transition as the imitation learner sees it: no reward field exists.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedTransition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub s_next: Vec<f64>,
    pub done: bool,
}

/// Access to the `(s, a, s′)` of a transition, shared by expert and learner data.
pub trait StepPairs {
    fn state(&self) -> &[f64];
    fn action(&self) -> &[f64];
    fn next_state(&self) -> &[f64];
    fn done(&self) -> bool;
}

impl StepPairs for Transition {
    fn state(&self) -> &[f64] {
        &self.s
    }
    fn action(&self) -> &[f64] {
        &self.a
    }
    fn next_state(&self) -> &[f64] {
        &self.s_next
    }
    fn done(&self) -> bool {
        self.done
    }
}

impl StepPairs for ObservedTransition {
    fn state(&self) -> &[f64] {
        &self.s
    }
    fn action(&self) -> &[f64] {
        &self.a
    }
    fn next_state(&self) -> &[f64] {
        &self.s_next
    }
    fn done(&self) -> bool {
        self.done
    }
}

pub fn clip_action(a: &[f64]) -> Vec<f64> {
    a.iter().map(|v| v.clamp(-1.0, 1.0)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    spec: EnvSpec,
}

impl Environment {
    pub fn new(id: EnvId) -> Self {
        let spec = match id {
            EnvId::PointMass => EnvSpec {
                id,
                obs_dim: 4,
                act_dim: 2,
                horizon: pointmass::HORIZON,
                dt: pointmass::DT,
            },
            EnvId::Pendulum => EnvSpec {
                id,
                obs_dim: 3,
                act_dim: 1,
                horizon: pendulum::HORIZON,
                dt: pendulum::DT,
            },
        };
        Environment { spec }
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    /// Samples an initial observation.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self.spec.id {
            EnvId::PointMass => vec![
                rng.random_range(-1.0..=1.0),
                rng.random_range(-1.0..=1.0),
                0.0,
                0.0,
            ],
            EnvId::Pendulum => {
                let theta: f64 = rng.random_range(-std::f64::consts::PI..=std::f64::consts::PI);
                vec![theta.cos(), theta.sin(), 0.0]
            }
        }
    }

    /// Steps from observation `s`; `t` is the 0-based index within the episode.
    pub fn step(&self, s: &[f64], a: &[f64], t: usize) -> Transition {
        let mut tr = match self.spec.id {
            EnvId::PointMass => pointmass_step(s, a),
            EnvId::Pendulum => pendulum_step(s, a),
        };
        tr.done = t + 1 >= self.spec.horizon;
        tr
    }

    /// Runs one full-horizon episode.
    pub fn rollout<R, P>(&self, rng: &mut R, mut policy: P) -> Vec<Transition>
    where
        R: Rng + ?Sized,
        P: FnMut(&[f64], &mut R) -> Vec<f64>,
    {
        let mut s = self.reset(rng);
        let mut out = Vec::with_capacity(self.spec.horizon);
        for t in 0..self.spec.horizon {
            let a = policy(&s, rng);
            let tr = self.step(&s, &a, t);
            s = tr.s_next.clone();
            out.push(tr);
        }
        out
    }
}

impl Environment {
    /// Runs `n` full-horizon episodes in lockstep. `policy` maps a batch of
    /// observations `[n, obs_dim]` to actions `[n, act_dim]`.
    pub fn run_episodes<R, P>(&self, n: usize, rng: &mut R, mut policy: P) -> Result<Vec<Vec<Transition>>>
    where
        R: Rng + ?Sized,
        P: FnMut(&Tensor, &mut R) -> Result<Tensor>,
    {
        let mut states: Vec<Vec<f64>> = (0..n).map(|_| self.reset(rng)).collect();
        let mut episodes: Vec<Vec<Transition>> = (0..n).map(|_| Vec::with_capacity(self.spec.horizon)).collect();
        for t in 0..self.spec.horizon {
            let obs = Tensor::from_rows(&states);
            let actions = policy(&obs, rng)?;
            if actions.shape() != [n, self.spec.act_dim] {
                return Err(Error::Internal(format!(
                    "policy returned actions of shape {:?}",
                    actions.shape()
                )));
            }
            for (i, ep) in episodes.iter_mut().enumerate() {
                let tr = self.step(&states[i], actions.row_slice(i), t);
                states[i] = tr.s_next.clone();
                ep.push(tr);
            }
        }
        Ok(episodes)
    }
}

/// Sum of true rewards over an episode.
pub fn episode_return(episode: &[Transition]) -> f64 {
    episode.iter().map(|t| t.true_r).sum()
}

/// Uniform random actions in `[−1, 1]`.
pub fn random_action<R: Rng + ?Sized>(act_dim: usize, rng: &mut R) -> Vec<f64> {
    (0..act_dim).map(|_| rng.random_range(-1.0..=1.0)).collect()
}
