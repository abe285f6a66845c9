//! Fully connected networks.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    LeakyRelu,
    ExpTanh,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::LeakyRelu => tape.leaky_relu(x),
            Activation::ExpTanh => tape.exptanh(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: &[usize], output_dim: usize, output_activation: Activation) -> Self {
        Self {
            input_dim,
            hidden_dims: hidden_dims.to_vec(),
            output_dim,
            hidden_activation: Activation::LeakyRelu,
            output_activation,
        }
    }

    fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim];
        d.extend(&self.hidden_dims);
        d.push(self.output_dim);
        d
    }
}

/// `y = x·W + b`, `W` of shape in×out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        output_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let bound = 1.0 / (input_dim as f64).sqrt();
        let w = store.add_uniform(&format!("{name}.w"), input_dim, output_dim, bound, rng)?;
        let b = if bias {
            Some(store.add_uniform(&format!("{name}.b"), 1, output_dim, bound, rng)?)
        } else {
            None
        };
        Ok(Self {
            w,
            b,
            input_dim,
            output_dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        let w = tape.param(store, self.w);
        let mut y = tape.matmul(x, w)?;
        if let Some(b) = self.b {
            let b = tape.param(store, b);
            y = tape.add_bias(y, b)?;
        }
        Ok(y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, spec: MlpSpec, rng: &mut R) -> Result<Self, NnError> {
        let dims = spec.dims();
        if dims.iter().any(|&d| d == 0) {
            return Err(NnError::ShapeMismatch(format!("{name}: zero dimension")));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], true, rng))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { spec, layers })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        let (_, cols) = tape.shape(x);
        if cols != self.spec.input_dim {
            return Err(NnError::ShapeMismatch(format!(
                "mlp expects {} inputs, got {cols}",
                self.spec.input_dim
            )));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h)?;
            let act = if i == last {
                self.spec.output_activation
            } else {
                self.spec.hidden_activation
            };
            h = act.apply(tape, h);
        }
        Ok(h)
    }

    /// Sets the weights and bias of the output layer to zero.
    pub fn zero_output_layer(&self, store: &mut ParamStore) {
        let last = self.layers.last().expect("mlp has layers");
        store.value_mut(last.w).fill(0.0);
        if let Some(b) = last.b {
            store.value_mut(b).fill(0.0);
        }
    }
}

/// Forward pass on plain arrays.
pub fn mlp_forward(mlp: &Mlp, store: &ParamStore, input: &Array2<f64>) -> Result<Array2<f64>, NnError> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let y = mlp.forward(&mut tape, store, x)?;
    Ok(tape.value(y).clone())
}
