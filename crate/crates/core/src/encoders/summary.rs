use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use super::TextFileError;

/// Produces the preference text that is embedded as the JD half of `c0`.
pub trait SummaryProvider: Send + Sync {
    /// `history` holds resume texts of the recruiter's earlier positive
    /// interactions, newest first.
    fn summarize(&self, job_id: &str, jd_text: &str, history: &[&str]) -> String;
}

/// Keyword-extraction stand-in for an LLM preference summary.
///
/// Keeps the JD text and appends the tokens that recur across the newest
/// `top_k` historical resumes. With no JD text it emits a synthesized
/// candidate profile built from those resumes alone.
#[derive(Clone, Debug)]
pub struct TemplateSummary {
    pub top_k: usize,
    pub keywords: usize,
}

impl TemplateSummary {
    pub fn new(top_k: usize) -> Self {
        Self { top_k, keywords: 8 }
    }

    fn recurring_tokens(&self, history: &[&str], limit: usize) -> Vec<String> {
        let recent = &history[..history.len().min(self.top_k)];
        let mut doc_freq: BTreeMap<&str, usize> = BTreeMap::new();
        for resume in recent {
            let unique: HashSet<&str> = resume.split_whitespace().collect();
            for tok in unique {
                *doc_freq.entry(tok).or_default() += 1;
            }
        }
        let min_df = if recent.len() >= 2 { 2 } else { 1 };
        let mut ranked: Vec<(&str, usize)> =
            doc_freq.into_iter().filter(|&(_, df)| df >= min_df).collect();
        // BTreeMap order makes the token the tie-break.
        ranked.sort_by_key(|x| std::cmp::Reverse(x.1));
        ranked
            .into_iter()
            .take(limit)
            .map(|(t, _)| t.to_string())
            .collect()
    }
}

impl SummaryProvider for TemplateSummary {
    fn summarize(&self, _job_id: &str, jd_text: &str, history: &[&str]) -> String {
        let jd = jd_text.trim();
        if jd.is_empty() {
            let profile = self.recurring_tokens(history, 2 * self.keywords);
            return format!("profile: {}", profile.join(" "));
        }
        let prefs = self.recurring_tokens(history, self.keywords);
        format!("requirements: {jd} preferences: {}", prefs.join(" "))
    }
}

/// Plain concatenation of the JD text and the newest `top_k` resumes.
#[derive(Clone, Debug)]
pub struct ConcatSummary {
    pub top_k: usize,
}

impl SummaryProvider for ConcatSummary {
    fn summarize(&self, _job_id: &str, jd_text: &str, history: &[&str]) -> String {
        let mut parts = vec![jd_text.trim()];
        parts.extend(history.iter().take(self.top_k).map(|s| s.trim()));
        parts.retain(|p| !p.is_empty());
        parts.join(" ")
    }
}

/// Summaries produced offline, one per job id. Jobs without an entry fall
/// back to the template summary.
#[derive(Clone, Debug)]
pub struct FileSummaries {
    by_job: HashMap<String, String>,
    fallback: TemplateSummary,
}

impl FileSummaries {
    pub fn new(by_job: HashMap<String, String>, fallback: TemplateSummary) -> Self {
        Self { by_job, fallback }
    }

    /// Reads `job_id<TAB>summary text` lines.
    pub fn load(path: &Path, fallback: TemplateSummary) -> Result<Self, TextFileError> {
        let shown = path.display().to_string();
        let file = std::fs::File::open(path).map_err(|source| TextFileError::Io {
            path: shown.clone(),
            source,
        })?;
        Self::from_reader(std::io::BufReader::new(file), fallback, &shown)
    }

    pub fn from_reader<R: BufRead>(
        reader: R,
        fallback: TemplateSummary,
        name: &str,
    ) -> Result<Self, TextFileError> {
        let mut by_job = HashMap::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|source| TextFileError::Io {
                path: name.to_string(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let (id, text) = line.split_once('\t').ok_or_else(|| TextFileError::Malformed {
                path: name.to_string(),
                line: n + 1,
                reason: "missing tab separator".into(),
            })?;
            by_job.insert(id.to_string(), text.to_string());
        }
        Ok(Self { by_job, fallback })
    }
}

impl SummaryProvider for FileSummaries {
    fn summarize(&self, job_id: &str, jd_text: &str, history: &[&str]) -> String {
        match self.by_job.get(job_id) {
            Some(s) => s.clone(),
            None => self.fallback.summarize(job_id, jd_text, history),
        }
    }
}
