//! Small layer building blocks shared by the encoder, MoE and heads.

use rand::{Rng, RngCore};

use crate::autodiff::{Graph, ModelParams, NodeId, Real, TensorError};

/// Dropout context for one forward pass. `eval()` disables dropout.
pub struct DropoutCtx<'r> {
    rate: f64,
    rng: Option<&'r mut dyn RngCore>,
}

impl<'r> DropoutCtx<'r> {
    pub fn eval() -> Self {
        Self { rate: 0.0, rng: None }
    }

    pub fn train(rate: f64, rng: &'r mut dyn RngCore) -> Self {
        Self {
            rate,
            rng: Some(rng),
        }
    }

    pub fn training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn apply<T: Real>(&mut self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId, TensorError> {
        match self.rng.as_deref_mut() {
            Some(rng) => g.dropout(x, self.rate, true, rng),
            None => Ok(x),
        }
    }
}

/// Affine map `x·W + b` with parameters `{prefix}.w` and `{prefix}.b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: String,
    pub bias: String,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(prefix: &str, fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: format!("{prefix}.w"),
            bias: format!("{prefix}.b"),
            fan_in,
            fan_out,
        }
    }

    pub fn init<T: Real, R: Rng + ?Sized>(
        &self,
        params: &mut ModelParams<T>,
        rng: &mut R,
    ) -> Result<(), TensorError> {
        params.init_uniform(self.weight.as_str(), self.fan_in, self.fan_out, rng)?;
        params.init_zeros(self.bias.as_str(), 1, self.fan_out)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId, TensorError> {
        let w = g.param(&self.weight)?;
        let b = g.param(&self.bias)?;
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }

    pub fn param_names(&self) -> [&str; 2] {
        [&self.weight, &self.bias]
    }
}

/// Stack of linear layers with ReLU after each hidden layer.
///
/// `relu_output` also applies ReLU to the last layer. Dropout is applied
/// after every hidden activation, never after the output.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    pub layers: Vec<Linear>,
    pub relu_output: bool,
}

impl FeedForward {
    pub fn new(prefix: &str, input: usize, widths: &[usize], relu_output: bool) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = input;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(Linear::new(&format!("{prefix}.l{i}"), fan_in, w));
            fan_in = w;
        }
        Self {
            layers,
            relu_output,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    pub fn init<T: Real, R: Rng + ?Sized>(
        &self,
        params: &mut ModelParams<T>,
        rng: &mut R,
    ) -> Result<(), TensorError> {
        self.layers.iter().try_for_each(|l| l.init(params, rng))
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        x: NodeId,
        dropout: &mut DropoutCtx<'_>,
    ) -> Result<NodeId, TensorError> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h)?;
            if i < last {
                h = g.relu(h)?;
                h = dropout.apply(g, h)?;
            } else if self.relu_output {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }

    pub fn param_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .flat_map(|l| l.param_names().map(str::to_string))
            .collect()
    }
}
