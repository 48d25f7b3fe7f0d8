//! Task towers, shared expert, softmax heads and the joint loss.

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{Graph, ModelParams, NodeId, Real, TensorError};
use crate::config::LossWeights;
use crate::nn::{DropoutCtx, FeedForward, Linear};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeadsError {
    #[error("record {index}: apply=1 with click=0 violates the funnel")]
    Funnel { index: usize },
    #[error("head `{0}` expects the shared expert output")]
    MissingShared(String),
    #[error("head `{0}` does not take the shared expert output")]
    UnexpectedShared(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Feedforward tower with ReLU on every layer, optionally followed by a
/// linear projection to a residual width.
#[derive(Clone, Debug, PartialEq)]
pub struct TowerNet {
    pub net: FeedForward,
    pub projection: Option<Linear>,
}

impl TowerNet {
    pub fn new(prefix: &str, input: usize, widths: &[usize], project_to: Option<usize>) -> Self {
        let net = FeedForward::new(prefix, input, widths, true);
        let projection = project_to.map(|w| Linear::new(&format!("{prefix}.proj"), net.output_dim(), w));
        Self { net, projection }
    }

    pub fn input_dim(&self) -> usize {
        self.net.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.projection
            .as_ref()
            .map_or(self.net.output_dim(), |p| p.fan_out)
    }

    pub fn init<T: Real, R: Rng + ?Sized>(
        &self,
        params: &mut ModelParams<T>,
        rng: &mut R,
    ) -> Result<(), TensorError> {
        self.net.init(params, rng)?;
        if let Some(p) = &self.projection {
            p.init(params, rng)?;
        }
        Ok(())
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        x: NodeId,
        dropout: &mut DropoutCtx<'_>,
    ) -> Result<NodeId, TensorError> {
        let h = self.net.forward(g, x, dropout)?;
        match &self.projection {
            Some(p) => p.forward(g, h),
            None => Ok(h),
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = self.net.param_names();
        if let Some(p) = &self.projection {
            names.extend(p.param_names().map(str::to_string));
        }
        names
    }
}

/// Residual tower for a primary task.
///
/// With the relevance output available, `o = [x̂; o_relv] + h([x̂; o_relv])`;
/// without it, `o = x̂ + h(x̂)`. The tower's projection maps back onto the
/// residual width.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskTower {
    pub tower: TowerNet,
}

impl TaskTower {
    pub fn new(prefix: &str, task_dim: usize, relv_dim: Option<usize>, widths: &[usize]) -> Self {
        let residual = task_dim + relv_dim.unwrap_or(0);
        Self {
            tower: TowerNet::new(prefix, residual, widths, Some(residual)),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.tower.output_dim()
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        x_task: NodeId,
        o_relv: Option<NodeId>,
        dropout: &mut DropoutCtx<'_>,
    ) -> Result<NodeId, TensorError> {
        let residual = match o_relv {
            Some(r) => g.concat_cols(&[x_task, r])?,
            None => x_task,
        };
        let h = self.tower.forward(g, residual, dropout)?;
        g.add(residual, h)
    }
}

/// Linear map to two logits followed by a softmax; column 1 is the
/// positive class.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub name: String,
    pub linear: Linear,
    pub uses_shared: bool,
}

impl Head {
    pub fn new(task: &str, input: usize, shared: Option<usize>) -> Self {
        Self {
            name: task.to_string(),
            linear: Linear::new(&format!("head.{task}"), input + shared.unwrap_or(0), 2),
            uses_shared: shared.is_some(),
        }
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        o: NodeId,
        o_s: Option<NodeId>,
    ) -> Result<NodeId, HeadsError> {
        let input = match (self.uses_shared, o_s) {
            (true, Some(s)) => g.concat_cols(&[o, s])?,
            (false, None) => o,
            (true, None) => return Err(HeadsError::MissingShared(self.name.clone())),
            (false, Some(_)) => return Err(HeadsError::UnexpectedShared(self.name.clone())),
        };
        let logits = self.linear.forward(g, input)?;
        Ok(g.softmax_rows(logits)?)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Labels {
    pub click: bool,
    pub apply: bool,
    pub relevant: bool,
}

/// Graph nodes of the batch-mean loss and its per-task terms.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: NodeId,
    pub ctr: NodeId,
    pub cvr: NodeId,
    pub relv: Option<NodeId>,
}

/// Batch mean of `λ_ctr·CE_ctr + λ_cvr·CE_cvr·click + λ_relv·CE_relv`.
///
/// The CVR term is masked to clicked records, so unclicked records send no
/// gradient into the CVR head. `y_relv` is absent for single-task models.
pub fn joint_loss<T: Real>(
    g: &mut Graph<'_, T>,
    y_ctr: NodeId,
    y_cvr: NodeId,
    y_relv: Option<NodeId>,
    labels: &[Labels],
    weights: &LossWeights,
) -> Result<LossTerms, HeadsError> {
    if let Some(index) = labels.iter().position(|l| l.apply && !l.click) {
        return Err(HeadsError::Funnel { index });
    }
    let b = labels.len().max(1) as f64;
    let mean = vec![T::lit(1.0 / b); labels.len()];
    let class = |f: fn(&Labels) -> bool| labels.iter().map(|l| usize::from(f(l))).collect::<Vec<_>>();

    let ctr = g.nll(y_ctr, &class(|l| l.click), &mean)?;
    let clicked: Vec<T> = labels
        .iter()
        .map(|l| if l.click { T::lit(1.0 / b) } else { T::zero() })
        .collect();
    let cvr = g.nll(y_cvr, &class(|l| l.apply), &clicked)?;
    let relv = match y_relv {
        Some(y) => Some(g.nll(y, &class(|l| l.relevant), &mean)?),
        None => None,
    };

    let a = g.scale(ctr, T::lit(weights.ctr))?;
    let c = g.scale(cvr, T::lit(weights.cvr))?;
    let mut total = g.add(a, c)?;
    if let Some(r) = relv {
        let r = g.scale(r, T::lit(weights.relv))?;
        total = g.add(total, r)?;
    }
    Ok(LossTerms {
        total,
        ctr,
        cvr,
        relv,
    })
}

/// Ranking score: probability of click times probability of application
/// given click.
pub fn final_score(p_ctr: f64, p_cvr: f64) -> f64 {
    p_ctr * p_cvr
}
