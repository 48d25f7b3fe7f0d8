use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::record::InteractionRecord;
use crate::autodiff::{Real, Tensor};
use crate::config::ModelConfig;
use crate::encoders::{ConcatSummary, EntityKind, HashEmbedder, SummaryProvider, TemplateSummary, TextEmbedder, Vocabulary};
use crate::heads::Labels;

/// ID vocabularies for every embedded entity; roles use a fixed index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub recruiter: Vocabulary,
    pub query: Vocabulary,
    pub talent: Vocabulary,
    pub job: Vocabulary,
}

impl Vocabularies {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self {
            recruiter: Vocabulary::new(EntityKind::Recruiter, cfg.vocab_recruiter),
            query: Vocabulary::new(EntityKind::Query, cfg.vocab_query),
            talent: Vocabulary::new(EntityKind::Talent, cfg.vocab_talent),
            job: Vocabulary::new(EntityKind::Job, cfg.vocab_job),
        }
    }

    /// Adds ids in first-seen order.
    pub fn fit(&mut self, records: &[InteractionRecord]) {
        for r in records {
            self.recruiter.insert(&r.recruiter_id);
            self.query.insert(&r.query_id);
            self.talent.insert(&r.talent_id);
            for h in &r.history_talent_ids {
                self.talent.insert(h);
            }
            self.job.insert(&r.job_id);
        }
    }

    pub fn matches(&self, cfg: &ModelConfig) -> bool {
        self.recruiter.capacity() == cfg.vocab_recruiter
            && self.query.capacity() == cfg.vocab_query
            && self.talent.capacity() == cfg.vocab_talent
            && self.job.capacity() == cfg.vocab_job
    }
}

/// Text embedder and preference-summary provider used to build `c0`.
#[derive(Clone)]
pub struct TextProviders {
    pub embedder: Arc<dyn TextEmbedder>,
    pub summary: Arc<dyn SummaryProvider>,
}

impl TextProviders {
    /// Hashing embedder plus the template summary, or plain concatenation
    /// for the variant without preference summaries.
    pub fn for_config(cfg: &ModelConfig) -> Self {
        let summary: Arc<dyn SummaryProvider> = if cfg.ablation.preference_summary() {
            Arc::new(TemplateSummary::new(cfg.top_k_history_for_summary))
        } else {
            Arc::new(ConcatSummary {
                top_k: cfg.top_k_history_for_summary,
            })
        };
        Self {
            embedder: Arc::new(HashEmbedder::new(cfg.text_dim)),
            summary,
        }
    }
}

impl std::fmt::Debug for TextProviders {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TextProviders")
            .field("dim", &self.embedder.dim())
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Encoded {
    recruiter: usize,
    query: usize,
    talent: usize,
    job: usize,
    role: usize,
    history: Vec<usize>,
    summary: usize,
    resume: usize,
    labels: Labels,
}

/// Records mapped to indices, with deduplicated text embeddings.
#[derive(Clone, Debug)]
pub struct FeatureSet {
    rows: Vec<Encoded>,
    summaries: Vec<Vec<f32>>,
    resumes: Vec<Vec<f32>>,
    text_dim: usize,
    with_text: bool,
}

/// Model inputs for one batch.
#[derive(Clone, Debug)]
pub struct Batch<T: Real> {
    pub recruiter: Vec<usize>,
    pub query: Vec<usize>,
    pub talent: Vec<usize>,
    pub job: Vec<usize>,
    pub role: Vec<usize>,
    /// Flattened talent indices of every row's history.
    pub history: Vec<usize>,
    /// Row `b` owns `history[offsets[b]..offsets[b + 1]]`.
    pub offsets: Vec<usize>,
    /// `[embed(summary); embed(resume)]` per row, when text is used.
    pub c0: Option<Tensor<T>>,
    pub labels: Vec<Labels>,
}

impl<T: Real> Batch<T> {
    pub fn len(&self) -> usize {
        self.recruiter.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recruiter.is_empty()
    }
}

impl FeatureSet {
    /// `resume_store` supplies resume text for history talents; the records'
    /// own resumes are consulted first.
    pub fn encode(
        records: &[InteractionRecord],
        vocab: &Vocabularies,
        resume_store: &BTreeMap<String, String>,
        providers: &TextProviders,
        cfg: &ModelConfig,
    ) -> Self {
        let with_text = cfg.ablation.jd_encoder();
        let local: HashMap<&str, &str> = records
            .iter()
            .map(|r| (r.talent_id.as_str(), r.resume_text.as_str()))
            .collect();
        let lookup = |id: &str| -> Option<&str> {
            local
                .get(id)
                .copied()
                .or_else(|| resume_store.get(id).map(String::as_str))
        };

        let mut summary_index: HashMap<String, usize> = HashMap::new();
        let mut resume_index: HashMap<(String, String), usize> = HashMap::new();
        let mut summaries = Vec::new();
        let mut resumes = Vec::new();
        let mut rows = Vec::with_capacity(records.len());

        for r in records {
            let history_ids = &r.history_talent_ids[..r.history_talent_ids.len().min(cfg.max_history)];
            let history = history_ids.iter().map(|h| vocab.talent.index(h)).collect();
            let (mut summary, mut resume) = (0, 0);
            if with_text {
                let texts: Vec<&str> = history_ids.iter().filter_map(|h| lookup(h)).collect();
                let text = providers.summary.summarize(&r.job_id, &r.jd_text, &texts);
                let key = format!("{}\u{1f}{}", r.job_id, text);
                summary = *summary_index.entry(key).or_insert_with(|| {
                    summaries.push(providers.embedder.embed(&r.job_id, &text));
                    summaries.len() - 1
                });
                let key = (r.talent_id.clone(), r.resume_text.clone());
                resume = *resume_index.entry(key).or_insert_with(|| {
                    resumes.push(providers.embedder.embed(&r.talent_id, &r.resume_text));
                    resumes.len() - 1
                });
            }
            rows.push(Encoded {
                recruiter: vocab.recruiter.index(&r.recruiter_id),
                query: vocab.query.index(&r.query_id),
                talent: vocab.talent.index(&r.talent_id),
                job: vocab.job.index(&r.job_id),
                role: r.role.index(),
                history,
                summary,
                resume,
                labels: r.labels(),
            });
        }
        Self {
            rows,
            summaries,
            resumes,
            text_dim: cfg.text_dim,
            with_text,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn labels(&self) -> Vec<Labels> {
        self.rows.iter().map(|r| r.labels).collect()
    }

    pub fn batch<T: Real>(&self, indices: &[usize]) -> Batch<T> {
        let n = indices.len();
        let mut b = Batch {
            recruiter: Vec::with_capacity(n),
            query: Vec::with_capacity(n),
            talent: Vec::with_capacity(n),
            job: Vec::with_capacity(n),
            role: Vec::with_capacity(n),
            history: Vec::new(),
            offsets: vec![0],
            c0: None,
            labels: Vec::with_capacity(n),
        };
        let d = self.text_dim;
        let mut c0 = Vec::with_capacity(if self.with_text { n * 2 * d } else { 0 });
        for &i in indices {
            let r = &self.rows[i];
            b.recruiter.push(r.recruiter);
            b.query.push(r.query);
            b.talent.push(r.talent);
            b.job.push(r.job);
            b.role.push(r.role);
            b.history.extend_from_slice(&r.history);
            b.offsets.push(b.history.len());
            b.labels.push(r.labels);
            if self.with_text {
                c0.extend(self.summaries[r.summary].iter().map(|&x| T::lit(f64::from(x))));
                c0.extend(self.resumes[r.resume].iter().map(|&x| T::lit(f64::from(x))));
            }
        }
        if self.with_text {
            b.c0 = Some(Tensor::new(n, 2 * d, c0).expect("c0 rows have width 2*text_dim"));
        }
        b
    }
}
