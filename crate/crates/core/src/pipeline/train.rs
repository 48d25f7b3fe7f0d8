use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::features::{FeatureSet, TextProviders, Vocabularies};
use super::model::RankModel;
use super::record::InteractionRecord;
use super::ModelError;
use crate::autodiff::{AdamState, Graph, TensorError};
use crate::config::TrainConfig;
use crate::heads::joint_loss;
use crate::nn::DropoutCtx;

/// Losses of one optimizer step (batch means).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub total: f64,
    pub ctr: f64,
    pub cvr: f64,
    pub relv: Option<f64>,
}

pub enum TrainEvent<'a> {
    Loss(&'a LossRow),
    /// Emitted every `eval_every` steps and after the last step.
    Checkpoint { step: usize, model: &'a RankModel },
}

/// Builds vocabularies and the resume store from `records`, initializes a
/// model from `cfg.seed` and trains it.
pub fn train(
    records: &[InteractionRecord],
    cfg: &TrainConfig,
    providers: TextProviders,
) -> Result<(RankModel, Vec<LossRow>), ModelError> {
    train_with(records, cfg, providers, |_| {})
}

pub fn train_with(
    records: &[InteractionRecord],
    cfg: &TrainConfig,
    providers: TextProviders,
    on_event: impl FnMut(TrainEvent<'_>),
) -> Result<(RankModel, Vec<LossRow>), ModelError> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut vocab = Vocabularies::new(&cfg.model);
    vocab.fit(records);
    let resumes: BTreeMap<String, String> = records
        .iter()
        .map(|r| (r.talent_id.clone(), r.resume_text.clone()))
        .collect();
    let mut model = RankModel::init(&cfg.model, providers, vocab, resumes, cfg.seed)?;
    let features = model.encode(records);
    let log = fit(&mut model, &features, cfg, on_event)?;
    Ok((model, log))
}

/// Runs `cfg.max_steps` Adam steps over shuffled mini-batches of `features`.
///
/// The shuffle order and dropout masks come from separate ChaCha8 streams
/// keyed by `cfg.seed`, so a run is a pure function of its inputs.
pub fn fit(
    model: &mut RankModel,
    features: &FeatureSet,
    cfg: &TrainConfig,
    mut on_event: impl FnMut(TrainEvent<'_>),
) -> Result<Vec<LossRow>, ModelError> {
    cfg.validate()?;
    if features.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(2);

    let mut adam = AdamState::new(cfg.lr);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut cursor = order.len();
    let arch = model.architecture().clone();
    let mut log = Vec::new();

    for step in 1..=cfg.max_steps {
        let mut idx = Vec::with_capacity(cfg.batch_size);
        while idx.len() < cfg.batch_size.min(features.len()) {
            if cursor == order.len() {
                order.shuffle(&mut shuffle_rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let batch = features.batch::<f32>(&idx);

        let nonfinite = |e: ModelError| match e {
            ModelError::Tensor(TensorError::NonFinite { .. }) => ModelError::NonFiniteLoss { step },
            other => other,
        };
        let (row, grads) = {
            let mut g = Graph::with_params(model.params());
            let mut dropout = DropoutCtx::train(cfg.model.dropout, &mut dropout_rng);
            let out = arch.forward(&mut g, &batch, &mut dropout).map_err(nonfinite)?;
            let loss = joint_loss(&mut g, out.y_ctr, out.y_cvr, out.y_relv, &batch.labels, &cfg.loss_weights)
                .map_err(|e| nonfinite(e.into()))?;
            let row = LossRow {
                step,
                total: f64::from(g.scalar(loss.total)),
                ctr: f64::from(g.scalar(loss.ctr)),
                cvr: f64::from(g.scalar(loss.cvr)),
                relv: loss.relv.map(|r| f64::from(g.scalar(r))),
            };
            if !row.total.is_finite() {
                return Err(ModelError::NonFiniteLoss { step });
            }
            (row, g.backward(loss.total).map_err(|e| nonfinite(e.into()))?)
        };
        if !grads.is_finite() {
            return Err(ModelError::NonFiniteLoss { step });
        }
        let params = model.params_mut();
        params.accumulate(&grads);
        adam.apply(params)?;
        if !params.is_finite() {
            return Err(ModelError::NonFiniteLoss { step });
        }

        if step == 1 || step % cfg.log_every == 0 || step == cfg.max_steps {
            log::info!(
                "step {step} loss {:.6} ctr {:.6} cvr {:.6} relv {}",
                row.total,
                row.ctr,
                row.cvr,
                row.relv.map_or("-".to_string(), |r| format!("{r:.6}"))
            );
            on_event(TrainEvent::Loss(&row));
            log.push(row);
        }
        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            on_event(TrainEvent::Checkpoint { step, model });
        }
    }
    Ok(log)
}

pub fn write_loss_csv<W: Write>(mut w: W, rows: &[LossRow]) -> std::io::Result<()> {
    writeln!(w, "step,loss_total,loss_ctr,loss_cvr,loss_relv")?;
    for r in rows {
        let relv = r.relv.map_or(String::new(), |v| format!("{v:.9e}"));
        writeln!(w, "{},{:.9e},{:.9e},{:.9e},{}", r.step, r.total, r.ctr, r.cvr, relv)?;
    }
    w.flush()
}
