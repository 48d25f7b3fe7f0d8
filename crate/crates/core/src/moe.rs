//! Personalized multi-gate mixture of experts.
//!
//! Experts read the full interaction vector `x`; each gate reads the
//! recruiter role embedding (or `x` itself in the standard-MMoE ablation)
//! and mixes the shared expert outputs into one task-specific `x̂`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{Graph, ModelParams, NodeId, Real, TensorError};
use crate::nn::{DropoutCtx, FeedForward};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MoeError {
    #[error("unknown task key `{0}`")]
    UnknownTask(String),
    #[error("no gate for task `{0}` in this block")]
    MissingGate(GateKey),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GateKey {
    Ctr,
    Cvr,
    Relv,
    Shared,
}

impl GateKey {
    pub const ALL: [GateKey; 4] = [GateKey::Ctr, GateKey::Cvr, GateKey::Relv, GateKey::Shared];

    pub fn as_str(self) -> &'static str {
        match self {
            GateKey::Ctr => "ctr",
            GateKey::Cvr => "cvr",
            GateKey::Relv => "relv",
            GateKey::Shared => "shared",
        }
    }
}

impl fmt::Display for GateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GateKey {
    type Err = MoeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GateKey::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| MoeError::UnknownTask(s.to_string()))
    }
}

/// Feedforward expert with ReLU on every layer, including the output.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertNet {
    pub net: FeedForward,
}

impl ExpertNet {
    pub fn new(prefix: &str, input: usize, widths: &[usize]) -> Self {
        Self {
            net: FeedForward::new(prefix, input, widths, true),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        x: NodeId,
        dropout: &mut DropoutCtx<'_>,
    ) -> Result<NodeId, TensorError> {
        self.net.forward(g, x, dropout)
    }
}

/// Hidden ReLU layers, a linear map to `n` logits, then a row softmax.
/// Gates never use dropout.
#[derive(Clone, Debug, PartialEq)]
pub struct GateNet {
    pub net: FeedForward,
}

impl GateNet {
    pub fn new(prefix: &str, input: usize, hidden: &[usize], n_experts: usize) -> Self {
        let mut widths = hidden.to_vec();
        widths.push(n_experts);
        Self {
            net: FeedForward::new(prefix, input, &widths, false),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, input: NodeId) -> Result<NodeId, TensorError> {
        let logits = self.net.forward(g, input, &mut DropoutCtx::eval())?;
        g.softmax_rows(logits)
    }
}

/// Experts plus one gate per task key.
#[derive(Clone, Debug, PartialEq)]
pub struct MoeBlock {
    pub experts: Vec<ExpertNet>,
    pub gates: BTreeMap<GateKey, GateNet>,
}

/// Result of one block pass: expert outputs and per-task mixtures.
#[derive(Clone, Debug)]
pub struct MoeOutput {
    pub experts: Vec<NodeId>,
    pub gates: BTreeMap<GateKey, NodeId>,
    pub mixed: BTreeMap<GateKey, NodeId>,
}

impl MoeOutput {
    pub fn mixed(&self, key: GateKey) -> Result<NodeId, MoeError> {
        self.mixed.get(&key).copied().ok_or(MoeError::MissingGate(key))
    }
}

#[derive(Clone, Debug)]
pub struct MoeShape<'a> {
    pub input_dim: usize,
    pub gate_input_dim: usize,
    pub expert_hidden: &'a [usize],
    pub gate_hidden: &'a [usize],
    pub n_experts: usize,
}

impl MoeBlock {
    /// Parameters are named `{prefix}.expert{i}.*` and `{prefix}.gate.{key}.*`.
    pub fn new(prefix: &str, shape: &MoeShape<'_>, keys: &[GateKey]) -> Self {
        let experts = (0..shape.n_experts)
            .map(|i| ExpertNet::new(&format!("{prefix}.expert{i}"), shape.input_dim, shape.expert_hidden))
            .collect();
        let gates = keys
            .iter()
            .map(|&k| {
                let gate = GateNet::new(
                    &format!("{prefix}.gate.{k}"),
                    shape.gate_input_dim,
                    shape.gate_hidden,
                    shape.n_experts,
                );
                (k, gate)
            })
            .collect();
        Self { experts, gates }
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn output_dim(&self) -> usize {
        self.experts[0].output_dim()
    }

    pub fn init<T: Real, R: Rng + ?Sized>(
        &self,
        params: &mut ModelParams<T>,
        rng: &mut R,
    ) -> Result<(), TensorError> {
        for e in &self.experts {
            e.net.init(params, rng)?;
        }
        for gate in self.gates.values() {
            gate.net.init(params, rng)?;
        }
        Ok(())
    }

    pub fn gate<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        key: GateKey,
        gate_input: NodeId,
    ) -> Result<NodeId, MoeError> {
        let gate = self.gates.get(&key).ok_or(MoeError::MissingGate(key))?;
        Ok(gate.forward(g, gate_input)?)
    }

    /// Expert outputs are computed once and shared by every gate.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        x: NodeId,
        gate_input: NodeId,
        dropout: &mut DropoutCtx<'_>,
    ) -> Result<MoeOutput, MoeError> {
        let experts = self
            .experts
            .iter()
            .map(|e| e.forward(g, x, dropout))
            .collect::<Result<Vec<_>, _>>()?;
        let mut gates = BTreeMap::new();
        let mut mixed = BTreeMap::new();
        for &key in self.gates.keys() {
            let w = self.gate(g, key, gate_input)?;
            mixed.insert(key, g.mix(w, &experts)?);
            gates.insert(key, w);
        }
        Ok(MoeOutput {
            experts,
            gates,
            mixed,
        })
    }
}
