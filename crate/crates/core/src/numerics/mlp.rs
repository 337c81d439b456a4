use rand::Rng;

use super::graph::{Graph, NodeId};
use super::tensor::{mish, sigmoid, Tensor};
use super::NumericsError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Mish,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
            Activation::Mish => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::Tanh,
            3 => Activation::Mish,
            _ => return None,
        })
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Mish => mish(x),
        }
    }
}

/// A dense layer `y = act(x·W + b)` with `W` stored `[in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Parameters of a multilayer perceptron.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

/// Node ids produced by one forward pass.
#[derive(Clone, Debug)]
pub struct MlpTrace {
    pub output: NodeId,
    /// Weight and bias leaves, in [`MlpParams::params`] order.
    pub params: Vec<NodeId>,
}

impl MlpParams {
    /// `widths = [in, h1, ..., out]`; hidden layers use `hidden`, the last
    /// layer uses `output`. Weights are uniform in `±1/√fan_in`, biases zero.
    pub fn new<R: Rng + ?Sized>(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (widths[i], widths[i + 1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let w = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect();
                Layer {
                    weight: Tensor::from_vec(fan_in, fan_out, w),
                    bias: Tensor::zeros(1, fan_out),
                    activation: if i + 1 == n { output } else { hidden },
                }
            })
            .collect();
        MlpParams { layers }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NumericsError> {
        if layers.is_empty() {
            return Err(NumericsError::Shape("MLP has no layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(NumericsError::Shape(format!(
                    "layer widths do not chain: {} then {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        for l in &layers {
            if l.bias.shape() != [1, l.out_dim()] {
                return Err(NumericsError::Shape("bias does not match layer width".into()));
            }
        }
        Ok(MlpParams { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }

    fn check_input(&self, cols: usize) -> Result<(), NumericsError> {
        if cols != self.in_dim() {
            return Err(NumericsError::Shape(format!(
                "MLP expects input width {}, got {cols}",
                self.in_dim()
            )));
        }
        Ok(())
    }

    /// Registers every parameter as a leaf, in [`MlpParams::params`] order.
    pub fn register(&self, graph: &mut Graph) -> Vec<NodeId> {
        self.params().into_iter().map(|p| graph.leaf(p.clone())).collect()
    }

    /// Records the forward pass on `graph`, registering every parameter as a leaf.
    pub fn forward(&self, graph: &mut Graph, input: NodeId) -> Result<MlpTrace, NumericsError> {
        let params = self.register(graph);
        let output = self.forward_with(graph, input, &params)?;
        Ok(MlpTrace { output, params })
    }

    /// Records the forward pass using previously registered parameter leaves.
    pub fn forward_with(&self, graph: &mut Graph, input: NodeId, params: &[NodeId]) -> Result<NodeId, NumericsError> {
        self.check_input(graph.value(input).cols())?;
        if params.len() != self.layers.len() * 2 {
            return Err(NumericsError::Shape(format!(
                "expected {} parameter leaves, got {}",
                self.layers.len() * 2,
                params.len()
            )));
        }
        let mut h = input;
        for (layer, wb) in self.layers.iter().zip(params.chunks(2)) {
            let z = graph.matmul(h, wb[0]);
            let z = graph.add_bias(z, wb[1]);
            h = match layer.activation {
                Activation::Identity => z,
                Activation::Relu => graph.relu(z),
                Activation::Tanh => graph.tanh(z),
                Activation::Mish => graph.mish(z),
            };
        }
        Ok(h)
    }

    /// Forward pass without a tape.
    pub fn eval(&self, input: &Tensor) -> Result<Tensor, NumericsError> {
        self.check_input(input.cols())?;
        let mut h = input.clone();
        for layer in &self.layers {
            let mut z = Tensor::matmul(&h, &layer.weight, false, false);
            let c = z.cols();
            let act = layer.activation;
            let bias = layer.bias.data();
            for row in z.data_mut().chunks_exact_mut(c) {
                for (v, b) in row.iter_mut().zip(bias) {
                    *v = act.apply(*v + b);
                }
            }
            h = z;
        }
        Ok(h)
    }

    /// Overwrites `self` with `tau·online + (1−tau)·self`.
    pub fn polyak_from(&mut self, online: &MlpParams, tau: f64) {
        for (t, o) in self.params_mut().into_iter().zip(online.params()) {
            for (tv, ov) in t.data_mut().iter_mut().zip(o.data()) {
                *tv = tau * ov + (1.0 - tau) * *tv;
            }
        }
    }
}

/// Logistic function applied to a tensor; convenience for tape-free evaluation.
pub fn sigmoid_tensor(t: &Tensor) -> Tensor {
    t.map(sigmoid)
}
