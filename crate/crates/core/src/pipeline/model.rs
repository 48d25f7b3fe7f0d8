use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::features::{Batch, FeatureSet, TextProviders, Vocabularies};
use super::record::{InteractionRecord, Role};
use super::ModelError;
use crate::autodiff::{Graph, ModelParams, NodeId, Real, TensorError};
use crate::config::ModelConfig;
use crate::encoders::JdEncoder;
use crate::heads::{final_score, Head, TaskTower, TowerNet};
use crate::moe::{GateKey, MoeBlock, MoeOutput, MoeShape};
use crate::nn::DropoutCtx;

pub const EMB_RECRUITER: &str = "emb.recruiter";
pub const EMB_QUERY: &str = "emb.query";
pub const EMB_TALENT: &str = "emb.talent";
pub const EMB_ROLE: &str = "emb.role";
pub const EMB_JOB: &str = "emb.job";

/// Shared multi-task body: one MoE block with four gates, the relevance
/// tower, residual CTR/CVR towers, the shared expert and three heads.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiTask {
    pub moe: MoeBlock,
    pub relv_tower: TowerNet,
    pub ctr_tower: TaskTower,
    pub cvr_tower: TaskTower,
    pub shared_expert: TowerNet,
    pub head_ctr: Head,
    pub head_cvr: Head,
    pub head_relv: Head,
}

/// One independent predictor of the single-task variants.
#[derive(Clone, Debug, PartialEq)]
pub struct SingleTask {
    pub moe: MoeBlock,
    pub tower: TaskTower,
    pub head: Head,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Body {
    Multi(Box<MultiTask>),
    Single { ctr: SingleTask, cvr: SingleTask },
}

/// Parameter layout and forward pass for one [`ModelConfig`].
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub config: ModelConfig,
    pub jd: Option<JdEncoder>,
    pub body: Body,
}

/// Graph nodes produced by a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub x: NodeId,
    pub gate_input: NodeId,
    pub moe: Vec<MoeOutput>,
    pub o_relv: Option<NodeId>,
    pub y_ctr: NodeId,
    pub y_cvr: NodeId,
    pub y_relv: Option<NodeId>,
}

impl Architecture {
    pub fn new(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let c = config;
        let jd = c
            .ablation
            .jd_encoder()
            .then(|| JdEncoder::new(c.text_dim, c.jd_dim, c.id_dim));
        let shape = MoeShape {
            input_dim: c.input_dim(),
            gate_input_dim: if c.ablation.role_gates() { c.id_dim } else { c.input_dim() },
            expert_hidden: &c.expert_hidden,
            gate_hidden: &c.gate_hidden,
            n_experts: c.n_experts,
        };
        let e = c.expert_out();
        let body = if c.ablation.multi_task() {
            let relv_tower = TowerNet::new("tower.relv", e, &c.tower_b, None);
            let r = relv_tower.output_dim();
            let shared_expert = TowerNet::new("shared_expert", e, &c.tower_b, None);
            let s = shared_expert.output_dim();
            let ctr_tower = TaskTower::new("tower.ctr", e, Some(r), &c.tower_a);
            let cvr_tower = TaskTower::new("tower.cvr", e, Some(r), &c.tower_a);
            Body::Multi(Box::new(MultiTask {
                moe: MoeBlock::new("moe", &shape, &GateKey::ALL),
                head_ctr: Head::new("ctr", ctr_tower.output_dim(), Some(s)),
                head_cvr: Head::new("cvr", cvr_tower.output_dim(), Some(s)),
                head_relv: Head::new("relv", r, None),
                relv_tower,
                ctr_tower,
                cvr_tower,
                shared_expert,
            }))
        } else {
            let single = |task: &str, key: GateKey| {
                let tower = TaskTower::new(&format!("{task}.tower"), e, None, &c.tower_a);
                SingleTask {
                    moe: MoeBlock::new(&format!("{task}.moe"), &shape, &[key]),
                    head: Head::new(task, tower.output_dim(), None),
                    tower,
                }
            };
            Body::Single {
                ctr: single("ctr", GateKey::Ctr),
                cvr: single("cvr", GateKey::Cvr),
            }
        };
        Ok(Self {
            config: c.clone(),
            jd,
            body,
        })
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ModelParams<T>, TensorError> {
        let c = &self.config;
        let mut p = ModelParams::new();
        p.init_embedding(EMB_RECRUITER, c.vocab_recruiter, c.id_dim, rng)?;
        p.init_embedding(EMB_QUERY, c.vocab_query, c.id_dim, rng)?;
        p.init_embedding(EMB_TALENT, c.vocab_talent, c.id_dim, rng)?;
        if c.ablation.role_gates() {
            p.init_embedding(EMB_ROLE, Role::ALL.len(), c.id_dim, rng)?;
        }
        match &self.jd {
            Some(jd) => jd.init(&mut p, rng)?,
            None => p.init_embedding(EMB_JOB, c.vocab_job, c.id_dim, rng)?,
        }
        match &self.body {
            Body::Multi(m) => {
                m.moe.init(&mut p, rng)?;
                m.relv_tower.init(&mut p, rng)?;
                m.ctr_tower.tower.init(&mut p, rng)?;
                m.cvr_tower.tower.init(&mut p, rng)?;
                m.shared_expert.init(&mut p, rng)?;
                for h in [&m.head_ctr, &m.head_cvr, &m.head_relv] {
                    h.linear.init(&mut p, rng)?;
                }
            }
            Body::Single { ctr, cvr } => {
                for t in [ctr, cvr] {
                    t.moe.init(&mut p, rng)?;
                    t.tower.tower.init(&mut p, rng)?;
                    t.head.linear.init(&mut p, rng)?;
                }
            }
        }
        Ok(p)
    }

    /// Names of the final linear maps feeding the softmax heads.
    pub fn head_params(&self) -> Vec<String> {
        let heads: Vec<&Head> = match &self.body {
            Body::Multi(m) => vec![&m.head_ctr, &m.head_cvr, &m.head_relv],
            Body::Single { ctr, cvr } => vec![&ctr.head, &cvr.head],
        };
        heads
            .iter()
            .flat_map(|h| h.linear.param_names().map(str::to_string))
            .collect()
    }

    /// Builds `x = [e_r; e_q; e_t; e_j]` and runs the body.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        batch: &Batch<T>,
        dropout: &mut DropoutCtx<'_>,
    ) -> Result<ForwardOutput, ModelError> {
        let c = &self.config;
        let table = g.param(EMB_RECRUITER)?;
        let e_r = g.gather_rows(table, &batch.recruiter)?;
        let table = g.param(EMB_QUERY)?;
        let e_q = g.gather_rows(table, &batch.query)?;
        let talents = g.param(EMB_TALENT)?;
        let e_t = g.gather_rows(talents, &batch.talent)?;
        let e_j = match &self.jd {
            Some(jd) => {
                let c0 = batch.c0.clone().ok_or(ModelError::MissingText)?;
                let c0 = g.input(c0)?;
                let hist = g.gather_rows(talents, &batch.history)?;
                jd.forward(g, c0, e_t, hist, &batch.offsets)?
            }
            None => {
                let table = g.param(EMB_JOB)?;
                g.gather_rows(table, &batch.job)?
            }
        };
        let x = g.concat_cols(&[e_r, e_q, e_t, e_j])?;
        let gate_input = if c.ablation.role_gates() {
            let table = g.param(EMB_ROLE)?;
            g.gather_rows(table, &batch.role)?
        } else {
            x
        };

        match &self.body {
            Body::Multi(m) => {
                let out = m.moe.forward(g, x, gate_input, dropout)?;
                let o_relv = m.relv_tower.forward(g, out.mixed(GateKey::Relv)?, dropout)?;
                let injected = if c.relevance_stop_gradient {
                    g.detach(o_relv)?
                } else {
                    o_relv
                };
                let o_ctr = m.ctr_tower.forward(g, out.mixed(GateKey::Ctr)?, Some(injected), dropout)?;
                let o_cvr = m.cvr_tower.forward(g, out.mixed(GateKey::Cvr)?, Some(injected), dropout)?;
                let o_s = m.shared_expert.forward(g, out.mixed(GateKey::Shared)?, dropout)?;
                let y_ctr = m.head_ctr.forward(g, o_ctr, Some(o_s))?;
                let y_cvr = m.head_cvr.forward(g, o_cvr, Some(o_s))?;
                let y_relv = m.head_relv.forward(g, o_relv, None)?;
                Ok(ForwardOutput {
                    x,
                    gate_input,
                    moe: vec![out],
                    o_relv: Some(o_relv),
                    y_ctr,
                    y_cvr,
                    y_relv: Some(y_relv),
                })
            }
            Body::Single { ctr, cvr } => {
                let mut run = |t: &SingleTask, key| -> Result<(MoeOutput, NodeId), ModelError> {
                    let out = t.moe.forward(g, x, gate_input, dropout)?;
                    let o = t.tower.forward(g, out.mixed(key)?, None, dropout)?;
                    Ok((out, t.head.forward(g, o, None)?))
                };
                let (m_ctr, y_ctr) = run(ctr, GateKey::Ctr)?;
                let (m_cvr, y_cvr) = run(cvr, GateKey::Cvr)?;
                Ok(ForwardOutput {
                    x,
                    gate_input,
                    moe: vec![m_ctr, m_cvr],
                    o_relv: None,
                    y_ctr,
                    y_cvr,
                    y_relv: None,
                })
            }
        }
    }
}

/// Scores for one record. `p_relv` is absent for single-task variants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub p_ctr: f64,
    pub p_cvr: f64,
    pub p_relv: Option<f64>,
    pub final_score: f64,
}

/// A trained (or freshly initialized) model with everything needed to
/// score raw records.
#[derive(Clone, Debug)]
pub struct RankModel {
    arch: Architecture,
    params: ModelParams<f32>,
    vocab: Vocabularies,
    resumes: BTreeMap<String, String>,
    providers: TextProviders,
}

const PREDICT_CHUNK: usize = 256;

impl RankModel {
    /// Fresh model with parameters drawn from `seed`.
    pub fn init(
        config: &ModelConfig,
        providers: TextProviders,
        vocab: Vocabularies,
        resumes: BTreeMap<String, String>,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let arch = Architecture::new(config)?;
        let params = arch.init(&mut ChaCha8Rng::seed_from_u64(seed))?;
        Self::from_parts(arch, params, vocab, resumes, providers)
    }

    /// Assembles a model, checking that `params` has exactly the tensors
    /// and shapes the architecture expects.
    pub fn from_parts(
        arch: Architecture,
        params: ModelParams<f32>,
        vocab: Vocabularies,
        resumes: BTreeMap<String, String>,
        providers: TextProviders,
    ) -> Result<Self, ModelError> {
        if providers.embedder.dim() != arch.config.text_dim {
            return Err(ModelError::TextDim {
                expected: arch.config.text_dim,
                found: providers.embedder.dim(),
            });
        }
        if !vocab.matches(&arch.config) {
            return Err(ModelError::Vocabulary);
        }
        let reference: ModelParams<f32> = arch.init(&mut ChaCha8Rng::seed_from_u64(0))?;
        for (name, t) in reference.iter() {
            match params.get(name) {
                None => return Err(ModelError::MissingParam(name.to_string())),
                Some(p) if p.shape() != t.shape() => {
                    return Err(ModelError::ParamShape {
                        name: name.to_string(),
                        expected: t.shape(),
                        found: p.shape(),
                    })
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = params.names().find(|n| !reference.contains(n)) {
            return Err(ModelError::UnexpectedParam(extra.to_string()));
        }
        Ok(Self {
            arch,
            params,
            vocab,
            resumes,
            providers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ModelParams<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<f32> {
        &mut self.params
    }

    pub fn vocab(&self) -> &Vocabularies {
        &self.vocab
    }

    pub fn resumes(&self) -> &BTreeMap<String, String> {
        &self.resumes
    }

    pub fn providers(&self) -> &TextProviders {
        &self.providers
    }

    pub fn encode(&self, records: &[InteractionRecord]) -> FeatureSet {
        FeatureSet::encode(records, &self.vocab, &self.resumes, &self.providers, &self.arch.config)
    }

    pub fn predict(&self, records: &[InteractionRecord]) -> Result<Vec<Prediction>, ModelError> {
        self.predict_features(&self.encode(records))
    }

    /// Inference-mode scores, one per row, in input order. Rows are scored
    /// independently, so results do not depend on batch composition.
    pub fn predict_features(&self, features: &FeatureSet) -> Result<Vec<Prediction>, ModelError> {
        let mut out = Vec::with_capacity(features.len());
        let all: Vec<usize> = (0..features.len()).collect();
        for chunk in all.chunks(PREDICT_CHUNK) {
            let batch = features.batch::<f32>(chunk);
            let mut g = Graph::with_params(&self.params);
            let f = self.arch.forward(&mut g, &batch, &mut DropoutCtx::eval())?;
            let positive = |y: NodeId, r: usize| f64::from(g.value(y)[2 * r + 1]);
            for r in 0..chunk.len() {
                let p_ctr = positive(f.y_ctr, r);
                let p_cvr = positive(f.y_cvr, r);
                out.push(Prediction {
                    p_ctr,
                    p_cvr,
                    p_relv: f.y_relv.map(|y| positive(y, r)),
                    final_score: final_score(p_ctr, p_cvr),
                });
            }
        }
        Ok(out)
    }
}
