//! Expert demonstration datasets and their binary file format.
//!
//! Layout (little-endian): magic `DAEX`, version `u32 = 1`, env id
//! (`u16` length + bytes), obs_dim `u32`, act_dim `u32`, horizon `u32`,
//! n_traj `u32`, method `u8` (0 = lqr, 1 = sac), seed `u64`, then for each
//! trajectory `horizon` records of `[s, a, s_next, true_r]` as `f64`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bytes::{ByteReader, ByteWriter};
use crate::envs::{EnvId, Transition};
use crate::error::{Error, FormatError, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"DAEX";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExpertMethod {
    Lqr,
    Sac,
}

impl ExpertMethod {
    fn tag(self) -> u8 {
        match self {
            ExpertMethod::Lqr => 0,
            ExpertMethod::Sac => 1,
        }
    }
}

impl fmt::Display for ExpertMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExpertMethod::Lqr => "lqr",
            ExpertMethod::Sac => "sac",
        })
    }
}

impl FromStr for ExpertMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lqr" => Ok(ExpertMethod::Lqr),
            "sac" => Ok(ExpertMethod::Sac),
            other => Err(Error::Config(format!("unknown expert method {other:?} (expected lqr or sac)"))),
        }
    }
}

/// One full-horizon expert episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
}

impl Trajectory {
    pub fn episode_return(&self) -> f64 {
        self.transitions.iter().map(|t| t.true_r).sum()
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpertDataset {
    pub env: EnvId,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub horizon: usize,
    pub method: ExpertMethod,
    pub seed: u64,
    pub trajectories: Vec<Trajectory>,
}

/// A training subset and the trajectories left out of it.
#[derive(Clone, Debug)]
pub struct Subsample {
    pub train: ExpertDataset,
    pub held_out: ExpertDataset,
    /// Indices of the chosen trajectories in the source dataset, in draw order.
    pub chosen: Vec<usize>,
}

impl ExpertDataset {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn mean_return(&self) -> f64 {
        self.trajectories.iter().map(Trajectory::episode_return).sum::<f64>() / self.len() as f64
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.trajectories.iter().flat_map(|t| t.transitions.iter())
    }

    fn with_trajectories(&self, idx: &[usize]) -> ExpertDataset {
        ExpertDataset {
            trajectories: idx.iter().map(|&i| self.trajectories[i].clone()).collect(),
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> ExpertDataset {
        ExpertDataset {
            env: self.env,
            obs_dim: self.obs_dim,
            act_dim: self.act_dim,
            horizon: self.horizon,
            method: self.method,
            seed: self.seed,
            trajectories: Vec::new(),
        }
    }

    /// Draws `n` trajectories uniformly without replacement.
    pub fn subsample(&self, n: usize, seed: u64) -> Result<Subsample> {
        if n == 0 || n > self.len() {
            return Err(Error::Usage(format!(
                "requested {n} of {} trajectories",
                self.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chosen = index::sample(&mut rng, self.len(), n).into_vec();
        let rest: Vec<usize> = (0..self.len()).filter(|i| !chosen.contains(i)).collect();
        Ok(Subsample {
            train: self.with_trajectories(&chosen),
            held_out: self.with_trajectories(&rest),
            chosen,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.trajectories.is_empty() {
            return Err(Error::Config("expert dataset is empty".into()));
        }
        for (i, t) in self.trajectories.iter().enumerate() {
            if t.len() != self.horizon {
                return Err(Error::Config(format!(
                    "trajectory {i} has {} steps, horizon is {}",
                    t.len(),
                    self.horizon
                )));
            }
            for tr in &t.transitions {
                if tr.s.len() != self.obs_dim || tr.s_next.len() != self.obs_dim || tr.a.len() != self.act_dim {
                    return Err(Error::Config(format!("trajectory {i} has mismatched dimensions")));
                }
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(DATASET_MAGIC);
        w.u32(DATASET_VERSION);
        let id = self.env.as_str();
        w.u16(id.len() as u16);
        w.bytes(id.as_bytes());
        w.u32(self.obs_dim as u32);
        w.u32(self.act_dim as u32);
        w.u32(self.horizon as u32);
        w.u32(self.trajectories.len() as u32);
        w.u8(self.method.tag());
        w.u64(self.seed);
        for t in &self.trajectories {
            for tr in &t.transitions {
                w.f64s(&tr.s);
                w.f64s(&tr.a);
                w.f64s(&tr.s_next);
                w.f64(tr.true_r);
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = ByteReader::new(bytes);
        if r.take(4).map_err(|_| FormatError::BadMagic("dataset"))? != DATASET_MAGIC {
            return Err(FormatError::BadMagic("dataset"));
        }
        let version = r.u32()?;
        if version != DATASET_VERSION {
            return Err(FormatError::UnsupportedVersion {
                found: version,
                expected: DATASET_VERSION,
            });
        }
        let id_len = r.u16()? as usize;
        let id = r.str_of_len(id_len)?;
        let env = id
            .parse::<EnvId>()
            .map_err(|_| FormatError::Invalid(format!("unknown environment {id:?}")))?;
        let obs_dim = r.u32()? as usize;
        let act_dim = r.u32()? as usize;
        let horizon = r.u32()? as usize;
        let n_traj = r.u32()? as usize;
        let method = match r.u8()? {
            0 => ExpertMethod::Lqr,
            1 => ExpertMethod::Sac,
            t => return Err(FormatError::Invalid(format!("unknown method tag {t}"))),
        };
        let seed = r.u64()?;
        if n_traj == 0 {
            return Err(FormatError::Invalid("dataset holds no trajectories".into()));
        }
        let record = (2 * obs_dim + act_dim + 1) * 8;
        let need = n_traj
            .checked_mul(horizon)
            .and_then(|n| n.checked_mul(record))
            .ok_or_else(|| FormatError::Invalid("record counts overflow".into()))?;
        if need > r.remaining() {
            return Err(FormatError::Truncated);
        }
        let mut trajectories = Vec::with_capacity(n_traj);
        for _ in 0..n_traj {
            let mut transitions = Vec::with_capacity(horizon);
            for step in 0..horizon {
                let s = r.f64s(obs_dim)?;
                let a = r.f64s(act_dim)?;
                let s_next = r.f64s(obs_dim)?;
                let true_r = r.f64()?;
                transitions.push(Transition {
                    s,
                    a,
                    s_next,
                    true_r,
                    done: step + 1 == horizon,
                });
            }
            trajectories.push(Trajectory { transitions });
        }
        if !r.is_at_end() {
            return Err(FormatError::Invalid("trailing bytes after last trajectory".into()));
        }
        Ok(ExpertDataset {
            env,
            obs_dim,
            act_dim,
            horizon,
            method,
            seed,
            trajectories,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        std::fs::write(&path, self.encode()).map_err(|e| Error::io(&path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self::decode(&bytes)?)
    }
}
