//! Model and training configuration.
//!
//! Defaults are the full-size hyperparameters. Desk-scale runs
//! override the architecture widths through a config file; see
//! `configs/desk.conf`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error("unknown ablation variant `{0}`")]
    UnknownAblation(String),
}

/// Architecture variants compared by the ablation harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    /// Job-ID embedding instead of the JD encoder.
    NoJd,
    /// ... and independent CTR/CVR predictors (no relevance task).
    NoJdNoMtl,
    /// ... and gates fed by `x` instead of the role embedding.
    NoJdNoMtlNoPmmoe,
    /// Full model with plain text concatenation instead of the
    /// preference summary.
    NoLlmSummary,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::NoJd,
        Ablation::NoJdNoMtl,
        Ablation::NoJdNoMtlNoPmmoe,
        Ablation::NoLlmSummary,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoJd => "no_jd",
            Ablation::NoJdNoMtl => "no_jd_no_mtl",
            Ablation::NoJdNoMtlNoPmmoe => "no_jd_no_mtl_no_pmmoe",
            Ablation::NoLlmSummary => "no_llm_summary",
        }
    }

    pub fn jd_encoder(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoLlmSummary)
    }

    pub fn multi_task(self) -> bool {
        !matches!(self, Ablation::NoJdNoMtl | Ablation::NoJdNoMtlNoPmmoe)
    }

    pub fn role_gates(self) -> bool {
        self != Ablation::NoJdNoMtlNoPmmoe
    }

    pub fn preference_summary(self) -> bool {
        self != Ablation::NoLlmSummary
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| ConfigError::UnknownAblation(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub ctr: f64,
    pub cvr: f64,
    pub relv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ctr: 1.0,
            cvr: 1.0,
            relv: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let all = [self.ctr, self.cvr, self.relv];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ConfigError::Invalid {
                key: "lambda",
                reason: "loss weights must be finite and nonnegative".into(),
            });
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(ConfigError::Invalid {
                key: "lambda",
                reason: "at least one loss weight must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Everything that determines parameter shapes and inference behaviour.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Width of every ID embedding (recruiter, query, talent, role, job).
    pub id_dim: usize,
    /// Width of each text embedding; `c0` is twice this.
    pub text_dim: usize,
    /// Width of the JD embedding: GCN projection plus attention output.
    pub jd_dim: usize,
    pub expert_hidden: Vec<usize>,
    pub gate_hidden: Vec<usize>,
    /// Tower preset used by the CTR and CVR towers.
    pub tower_a: Vec<usize>,
    /// Tower preset used by the relevance tower and the shared expert.
    pub tower_b: Vec<usize>,
    pub n_experts: usize,
    pub max_history: usize,
    pub top_k_history_for_summary: usize,
    pub dropout: f64,
    pub ablation: Ablation,
    pub relevance_stop_gradient: bool,
    pub vocab_recruiter: usize,
    pub vocab_query: usize,
    pub vocab_talent: usize,
    pub vocab_job: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            id_dim: 32,
            text_dim: 1024,
            jd_dim: 1088,
            expert_hidden: vec![128, 64, 32],
            gate_hidden: vec![32, 16],
            tower_a: vec![512, 256, 128],
            tower_b: vec![256, 128, 64],
            n_experts: 3,
            max_history: 30,
            top_k_history_for_summary: 5,
            dropout: 0.2,
            ablation: Ablation::Full,
            relevance_stop_gradient: false,
            vocab_recruiter: 1024,
            vocab_query: 4096,
            vocab_talent: 32768,
            vocab_job: 1024,
        }
    }
}

impl ModelConfig {
    pub fn expert_out(&self) -> usize {
        *self.expert_hidden.last().expect("validated")
    }

    pub fn tower_b_out(&self) -> usize {
        *self.tower_b.last().expect("validated")
    }

    /// Width of the GCN projection inside the JD embedding.
    pub fn jd_projection_dim(&self) -> usize {
        self.jd_dim - self.id_dim
    }

    /// Width of the JD slot in the expert input (`e^(j)` or a job-ID embedding).
    pub fn jd_slot_dim(&self) -> usize {
        if self.ablation.jd_encoder() {
            self.jd_dim
        } else {
            self.id_dim
        }
    }

    /// Width of `x`, the concatenated expert input.
    pub fn input_dim(&self) -> usize {
        3 * self.id_dim + self.jd_slot_dim()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn positive(key: &'static str, v: usize) -> Result<(), ConfigError> {
            if v == 0 {
                Err(ConfigError::Invalid {
                    key,
                    reason: "must be positive".into(),
                })
            } else {
                Ok(())
            }
        }
        fn layers(key: &'static str, v: &[usize]) -> Result<(), ConfigError> {
            if v.is_empty() || v.contains(&0) {
                Err(ConfigError::Invalid {
                    key,
                    reason: "needs at least one layer, all widths positive".into(),
                })
            } else {
                Ok(())
            }
        }
        positive("id_dim", self.id_dim)?;
        positive("text_dim", self.text_dim)?;
        positive("n_experts", self.n_experts)?;
        positive("max_history", self.max_history)?;
        positive("vocab_recruiter", self.vocab_recruiter)?;
        positive("vocab_query", self.vocab_query)?;
        positive("vocab_talent", self.vocab_talent)?;
        positive("vocab_job", self.vocab_job)?;
        layers("expert_hidden", &self.expert_hidden)?;
        layers("gate_hidden", &self.gate_hidden)?;
        layers("tower_a", &self.tower_a)?;
        layers("tower_b", &self.tower_b)?;
        if self.jd_dim <= self.id_dim {
            return Err(ConfigError::Invalid {
                key: "jd_dim",
                reason: format!("must exceed id_dim ({})", self.id_dim),
            });
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ConfigError::Invalid {
                key: "dropout",
                reason: "must lie in [0, 1)".into(),
            });
        }
        Ok(())
    }

    /// Canonical text of every field that affects parameter shapes or
    /// inference. Training-only knobs are excluded.
    pub fn canonical(&self) -> String {
        let list = |v: &[usize]| {
            v.iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(",")
        };
        format!(
            "ablation={}\nexpert_hidden={}\ngate_hidden={}\nid_dim={}\njd_dim={}\nmax_history={}\n\
             n_experts={}\ntext_dim={}\ntop_k_history_for_summary={}\ntower_a={}\ntower_b={}\n\
             vocab_job={}\nvocab_query={}\nvocab_recruiter={}\nvocab_talent={}\n",
            self.ablation,
            list(&self.expert_hidden),
            list(&self.gate_hidden),
            self.id_dim,
            self.jd_dim,
            self.max_history,
            self.n_experts,
            self.text_dim,
            self.top_k_history_for_summary,
            list(&self.tower_a),
            list(&self.tower_b),
            self.vocab_job,
            self.vocab_query,
            self.vocab_recruiter,
            self.vocab_talent,
        )
    }

    /// SHA-256 of [`ModelConfig::canonical`].
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.canonical().as_bytes()).into()
    }

    pub fn digest_hex(&self) -> String {
        hex(&self.digest())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub lr: f64,
    pub max_steps: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub log_every: usize,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            batch_size: 1024,
            lr: 1e-5,
            max_steps: 20_000,
            seed: 0,
            loss_weights: LossWeights::default(),
            log_every: 100,
            eval_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate()?;
        self.loss_weights.validate()?;
        if self.batch_size == 0 {
            return Err(ConfigError::Invalid {
                key: "batch_size",
                reason: "must be positive".into(),
            });
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ConfigError::Invalid {
                key: "lr",
                reason: "must be positive".into(),
            });
        }
        if self.max_steps == 0 || self.log_every == 0 || self.eval_every == 0 {
            return Err(ConfigError::Invalid {
                key: "max_steps",
                reason: "steps and cadences must be positive".into(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_input_width() {
        let c = ModelConfig::default();
        assert_eq!(c.jd_projection_dim(), 1056);
        assert_eq!(c.input_dim(), 1184);
        c.validate().unwrap();
    }

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(a.as_str().parse::<Ablation>().unwrap(), a);
        }
        assert!("bogus".parse::<Ablation>().is_err());
    }

    #[test]
    fn digest_ignores_training_knobs() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        b.lr = 0.1;
        b.max_steps = 7;
        b.model.dropout = 0.5;
        assert_eq!(a.model.digest(), b.model.digest());
        b.model.n_experts = 5;
        assert_ne!(a.model.digest(), b.model.digest());
    }

    #[test]
    fn loss_weights_need_one_positive() {
        let w = LossWeights {
            ctr: 0.0,
            cvr: 0.0,
            relv: 0.0,
        };
        assert!(w.validate().is_err());
    }
}
