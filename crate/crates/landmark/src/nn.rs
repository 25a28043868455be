//! Small parameterized building blocks shared by the modules.

use crate::rng::SeedStream;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};

/// How a weight matrix starts out.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Gaussian with standard deviation `sqrt(2 / fan_in)`.
    He,
    /// Gaussian with standard deviation `sqrt(1 / fan_in)`.
    Lecun,
    Zeros,
}

pub(crate) fn init_tensor(shape: Vec<usize>, fan_in: usize, init: Init, rng: &mut SeedStream) -> Tensor {
    let n = shape.iter().product();
    let std = match init {
        Init::He => (2.0 / fan_in as f64).sqrt(),
        Init::Lecun => (1.0 / fan_in as f64).sqrt(),
        Init::Zeros => 0.0,
    };
    let data = if std == 0.0 {
        vec![0.0; n]
    } else {
        (0..n).map(|_| std * rng.normal()).collect()
    };
    Tensor::new(shape, data).expect("init shape")
}

/// Affine map `x·W + b` on row-major `[n, in]` inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, init: Init, rng: &mut SeedStream) -> Self {
        let weight = store.add(format!("{name}.weight"), init_tensor(vec![inputs, outputs], inputs, init, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![outputs]));
        Linear {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var, TensorError> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// Stack of [`Linear`] layers with ReLU between them.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    /// Apply ReLU after the last layer as well.
    pub relu_out: bool,
}

impl Mlp {
    /// `widths` lists input, hidden and output sizes; the final layer uses `last`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        relu_out: bool,
        last: Init,
        rng: &mut SeedStream,
    ) -> Self {
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let init = if i + 1 == n { last } else { Init::He };
                Linear::new(store, &format!("{name}.{i}"), widths[i], widths[i + 1], init, rng)
            })
            .collect();
        Mlp { layers, relu_out }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, mut x: Var) -> Result<Var, TensorError> {
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, x)?;
            if i + 1 < self.layers.len() || self.relu_out {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(Linear::params).collect()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }
}
