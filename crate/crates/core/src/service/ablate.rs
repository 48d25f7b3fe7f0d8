//! Ablation and hyperparameter sweeps over one generated dataset.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;

use super::settings::AblateSettings;
use crate::config::{ModelConfig, TrainConfig};
use crate::metrics::{evaluate, MetricError};
use crate::pipeline::{train, InteractionRecord, ModelError, TextProviders};

#[derive(Debug, thiserror::Error)]
pub enum AblateError {
    #[error("{label} seed {seed}: {source}")]
    Train {
        label: String,
        seed: u64,
        source: ModelError,
    },
    #[error("{label} seed {seed}: {source}")]
    Metric {
        label: String,
        seed: u64,
        source: MetricError,
    },
}

/// One training run of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRun {
    pub label: String,
    pub config: TrainConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub auc_ctr: f64,
    pub auc_cvr: f64,
    pub auc_avg: f64,
}

/// Runs for every variant, expert count and history length, each over
/// `settings.seeds` consecutive seeds starting at `base.seed`.
///
/// Variant rows are labelled by variant name; sweep rows are labelled
/// `experts_{n}` and `history_{n}` and use the base config otherwise.
pub fn plan(base: &TrainConfig, settings: &AblateSettings) -> Vec<AblationRun> {
    let mut configs: Vec<(String, TrainConfig)> = Vec::new();
    for &v in &settings.variants {
        let mut c = base.clone();
        c.model.ablation = v;
        configs.push((v.as_str().to_string(), c));
    }
    for &n in &settings.expert_sweep {
        let mut c = base.clone();
        c.model.n_experts = n;
        configs.push((format!("experts_{n}"), c));
    }
    for &h in &settings.history_sweep {
        let mut c = base.clone();
        c.model.max_history = h;
        configs.push((format!("history_{h}"), c));
    }
    let mut runs = Vec::new();
    for (label, c) in configs {
        for i in 0..settings.seeds as u64 {
            let mut config = c.clone();
            config.seed = base.seed + i;
            runs.push(AblationRun {
                label: label.clone(),
                config,
            });
        }
    }
    runs
}

/// Trains and evaluates every run in parallel. Runs with identical configs
/// are trained once. Rows come back in plan order.
pub fn run(
    runs: &[AblationRun],
    train_set: &[InteractionRecord],
    test_set: &[InteractionRecord],
    providers: impl Fn(&ModelConfig) -> TextProviders + Sync,
) -> Result<Vec<AblationRow>, AblateError> {
    let mut unique: Vec<&AblationRun> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    let keys: Vec<String> = runs.iter().map(|r| format!("{:?}", r.config)).collect();
    for (r, key) in runs.iter().zip(&keys) {
        slot.entry(key.clone()).or_insert_with(|| {
            unique.push(r);
            unique.len() - 1
        });
    }
    let results: Vec<Result<(f64, f64), AblateError>> = unique
        .par_iter()
        .map(|r| {
            let seed = r.config.seed;
            let (model, _) = train(train_set, &r.config, providers(&r.config.model)).map_err(|source| {
                AblateError::Train {
                    label: r.label.clone(),
                    seed,
                    source,
                }
            })?;
            let preds = model.predict(test_set).map_err(|source| AblateError::Train {
                label: r.label.clone(),
                seed,
                source,
            })?;
            let metric = |source| AblateError::Metric {
                label: r.label.clone(),
                seed,
                source,
            };
            let report = evaluate(test_set, &preds).map_err(metric)?;
            let auc_ctr = report.ctr.auc.ok_or(MetricError::Undefined("auc")).map_err(metric)?;
            let auc_cvr = report.cvr.auc.ok_or(MetricError::Undefined("auc")).map_err(metric)?;
            log::info!("{} seed {seed}: auc ctr {auc_ctr:.4} cvr {auc_cvr:.4}", r.label);
            Ok((auc_ctr, auc_cvr))
        })
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(runs
        .iter()
        .zip(&keys)
        .map(|(r, key)| {
            let (auc_ctr, auc_cvr) = results[slot[key]];
            AblationRow {
                variant: r.label.clone(),
                seed: r.config.seed,
                auc_ctr,
                auc_cvr,
                auc_avg: (auc_ctr + auc_cvr) / 2.0,
            }
        })
        .collect())
}

pub fn write_csv<W: Write>(mut w: W, rows: &[AblationRow]) -> std::io::Result<()> {
    writeln!(w, "variant,seed,auc_ctr,auc_cvr,auc_avg")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:.6},{:.6},{:.6}",
            r.variant, r.seed, r.auc_ctr, r.auc_cvr, r.auc_avg
        )?;
    }
    w.flush()
}

/// Median `auc_avg` per label (mean of the two middle values for even counts).
pub fn median_auc_avg(rows: &[AblationRow]) -> BTreeMap<String, f64> {
    let mut by: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rows {
        by.entry(r.variant.clone()).or_default().push(r.auc_avg);
    }
    by.into_iter()
        .map(|(k, mut v)| {
            v.sort_by(f64::total_cmp);
            let m = v.len() / 2;
            let med = if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 };
            (k, med)
        })
        .collect()
}
