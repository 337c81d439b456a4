//! Versioned binary parameter checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! "DAIL" | version u32 | network count u32
//! per network: name (u32 len + bytes) | layer count u32
//!     per layer: in u32 | out u32 | activation u8 | in·out f64 weights | out f64 biases
//! scalar count u32 | per scalar: name (u32 len + bytes) | f64
//! metadata count u32 | per entry: key (u32 len + bytes) | value (u32 len + bytes)
//! ```

use std::path::Path;

use super::mlp::{Activation, Layer, MlpParams};
use super::tensor::Tensor;
use crate::bytes::{ByteReader, ByteWriter};
use crate::error::{Error, FormatError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DAIL";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub networks: Vec<(String, MlpParams)>,
    pub scalars: Vec<(String, f64)>,
    pub metadata: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn network(&self, name: &str) -> Option<&MlpParams> {
        self.networks.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.scalars.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.u32(self.networks.len() as u32);
        for (name, net) in &self.networks {
            w.str32(name);
            w.u32(net.layers.len() as u32);
            for l in &net.layers {
                w.u32(l.in_dim() as u32);
                w.u32(l.out_dim() as u32);
                w.u8(l.activation.tag());
                w.f64s(l.weight.data());
                w.f64s(l.bias.data());
            }
        }
        w.u32(self.scalars.len() as u32);
        for (name, v) in &self.scalars {
            w.str32(name);
            w.f64(*v);
        }
        w.u32(self.metadata.len() as u32);
        for (k, v) in &self.metadata {
            w.str32(k);
            w.str32(v);
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = ByteReader::new(bytes);
        if r.take(4).map_err(|_| FormatError::BadMagic("checkpoint"))? != CHECKPOINT_MAGIC {
            return Err(FormatError::BadMagic("checkpoint"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(FormatError::UnsupportedVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let n_nets = r.u32()?;
        let mut networks = Vec::new();
        for _ in 0..n_nets {
            let name = r.str32()?;
            let n_layers = r.u32()?;
            let mut layers = Vec::new();
            for _ in 0..n_layers {
                let fan_in = r.u32()? as usize;
                let fan_out = r.u32()? as usize;
                let tag = r.u8()?;
                let activation = Activation::from_tag(tag)
                    .ok_or_else(|| FormatError::Invalid(format!("unknown activation tag {tag}")))?;
                let weight = Tensor::from_vec(fan_in, fan_out, r.f64s(fan_in * fan_out)?);
                let bias = Tensor::from_vec(1, fan_out, r.f64s(fan_out)?);
                layers.push(Layer {
                    weight,
                    bias,
                    activation,
                });
            }
            let net = MlpParams::from_layers(layers)
                .map_err(|e| FormatError::Invalid(format!("network {name}: {e}")))?;
            networks.push((name, net));
        }
        let n_scalars = r.u32()?;
        let mut scalars = Vec::new();
        for _ in 0..n_scalars {
            let name = r.str32()?;
            scalars.push((name, r.f64()?));
        }
        let n_meta = r.u32()?;
        let mut metadata = Vec::new();
        for _ in 0..n_meta {
            let k = r.str32()?;
            let v = r.str32()?;
            metadata.push((k, v));
        }
        if !r.is_at_end() {
            return Err(FormatError::Invalid("trailing bytes".into()));
        }
        Ok(Checkpoint {
            networks,
            scalars,
            metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), Error> {
        std::fs::write(&path, self.encode()).map_err(|e| Error::io(&path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, Error> {
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self::decode(&bytes)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        Checkpoint {
            networks: vec![
                (
                    "pi".into(),
                    MlpParams::new(&[4, 8, 4], Activation::Relu, Activation::Identity, &mut rng),
                ),
                (
                    "denoiser".into(),
                    MlpParams::new(&[7, 5, 5, 6], Activation::Mish, Activation::Identity, &mut rng),
                ),
            ],
            scalars: vec![("log_alpha".into(), -1.5)],
            metadata: vec![("env".into(), "pointmass".into())],
        }
    }

    #[test]
    fn round_trip_is_byte_stable() {
        let ck = sample();
        let bytes = ck.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn corrupt_inputs_have_distinct_errors() {
        let bytes = sample().encode();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bad), Err(FormatError::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[4..8].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
        assert!(matches!(
            Checkpoint::decode(&bad),
            Err(FormatError::UnsupportedVersion { .. })
        ));
        assert!(matches!(
            Checkpoint::decode(&bytes[..bytes.len() - 3]),
            Err(FormatError::Truncated)
        ));
    }
}
