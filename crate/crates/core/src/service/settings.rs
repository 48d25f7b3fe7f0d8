//! Flat `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Lists are comma separated.
//! Every training, model and generator field has a key; unknown keys are
//! rejected so typos surface immediately.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::config::{Ablation, TrainConfig};
use crate::synthgen::GenConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct AblateSettings {
    pub seeds: usize,
    pub variants: Vec<Ablation>,
    pub expert_sweep: Vec<usize>,
    pub history_sweep: Vec<usize>,
}

impl Default for AblateSettings {
    fn default() -> Self {
        Self {
            seeds: 5,
            variants: Ablation::ALL.to_vec(),
            expert_sweep: vec![1, 3, 5, 10],
            history_sweep: vec![1, 5, 10, 30, 50],
        }
    }
}

/// Everything a command can read from a config file.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub train: TrainConfig,
    pub gen: GenConfig,
    pub ablate: AblateSettings,
    pub data_dir: PathBuf,
    pub train_file: Option<PathBuf>,
    pub test_file: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub embeddings_file: Option<PathBuf>,
    pub summaries_file: Option<PathBuf>,
    pub listen: String,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            gen: GenConfig::default(),
            ablate: AblateSettings::default(),
            data_dir: PathBuf::from("data"),
            train_file: None,
            test_file: None,
            checkpoint: None,
            embeddings_file: None,
            summaries_file: None,
            listen: "127.0.0.1:7878".to_string(),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse()
        .map_err(|_| format!("`{key}`: cannot parse `{v}`"))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn triple(key: &str, v: &str) -> Result<[f64; 3], String> {
    let xs: Vec<f64> = list(key, v)?;
    xs.try_into()
        .map_err(|_| format!("`{key}` needs exactly three values (SA, SG, TL)"))
}

fn flag(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("`{key}`: expected true or false, got `{v}`")),
    }
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse_str(&text, base).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Relative paths in the file resolve against `base`.
    pub fn parse_str(text: &str, base: &Path) -> Result<Self, String> {
        let mut s = Settings::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
            s.set(k.trim(), v.trim(), base)
                .map_err(|e| format!("line {}: {e}", n + 1))?;
        }
        s.train.validate().map_err(|e| e.to_string())?;
        s.gen.validate().map_err(|e| e.to_string())?;
        Ok(s)
    }

    pub fn set(&mut self, key: &str, v: &str, base: &Path) -> Result<(), String> {
        let t = &mut self.train;
        let g = &mut self.gen;
        let a = &mut self.ablate;
        let path = || base.join(v);
        match key {
            "id_dim" => t.model.id_dim = parse(key, v)?,
            "text_dim" => t.model.text_dim = parse(key, v)?,
            "jd_dim" => t.model.jd_dim = parse(key, v)?,
            "expert_hidden" => t.model.expert_hidden = list(key, v)?,
            "gate_hidden" => t.model.gate_hidden = list(key, v)?,
            "tower_a" => t.model.tower_a = list(key, v)?,
            "tower_b" => t.model.tower_b = list(key, v)?,
            "n_experts" => t.model.n_experts = parse(key, v)?,
            "max_history" => t.model.max_history = parse(key, v)?,
            "top_k_history_for_summary" => t.model.top_k_history_for_summary = parse(key, v)?,
            "dropout" => t.model.dropout = parse(key, v)?,
            "ablation" => t.model.ablation = v.parse().map_err(|e: crate::config::ConfigError| e.to_string())?,
            "relevance_stop_gradient" => t.model.relevance_stop_gradient = flag(key, v)?,
            "vocab_recruiter" => t.model.vocab_recruiter = parse(key, v)?,
            "vocab_query" => t.model.vocab_query = parse(key, v)?,
            "vocab_talent" => t.model.vocab_talent = parse(key, v)?,
            "vocab_job" => t.model.vocab_job = parse(key, v)?,

            "batch_size" => t.batch_size = parse(key, v)?,
            "lr" => t.lr = parse(key, v)?,
            "max_steps" => t.max_steps = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "lambda_ctr" => t.loss_weights.ctr = parse(key, v)?,
            "lambda_cvr" => t.loss_weights.cvr = parse(key, v)?,
            "lambda_relv" => t.loss_weights.relv = parse(key, v)?,
            "log_every" => t.log_every = parse(key, v)?,
            "eval_every" => t.eval_every = parse(key, v)?,

            "gen_seed" => g.seed = parse(key, v)?,
            "n_recruiters" => g.n_recruiters = parse(key, v)?,
            "role_fractions" => g.role_fractions = triple(key, v)?,
            "n_talents" => g.n_talents = parse(key, v)?,
            "jobs_per_recruiter" => g.jobs_per_recruiter = parse(key, v)?,
            "queries_per_job" => g.queries_per_job = parse(key, v)?,
            "n_sessions" => g.n_sessions = parse(key, v)?,
            "session_size" => g.session_size = parse(key, v)?,
            "latent_dim" => g.latent_dim = parse(key, v)?,
            "skills_per_job" => g.skills_per_job = parse(key, v)?,
            "skills_per_talent" => g.skills_per_talent = parse(key, v)?,
            "relevance_threshold" => g.relevance_threshold = parse(key, v)?,
            "click_flip" => g.click_flip = triple(key, v)?,
            "apply_flip" => g.apply_flip = triple(key, v)?,
            "test_fraction" => g.test_fraction = parse(key, v)?,
            "cold_recruiter_fraction" => g.cold_recruiter_fraction = parse(key, v)?,
            "empty_jd_fraction" => g.empty_jd_fraction = parse(key, v)?,
            "history_cap" => g.history_cap = parse(key, v)?,

            "ablate_seeds" => a.seeds = parse(key, v)?,
            "ablate_variants" => {
                a.variants = v
                    .split(',')
                    .map(|s| s.trim().parse::<Ablation>().map_err(|e| e.to_string()))
                    .collect::<Result<_, _>>()?
            }
            "expert_sweep" => a.expert_sweep = list(key, v)?,
            "history_sweep" => a.history_sweep = list(key, v)?,

            "data_dir" => self.data_dir = path(),
            "train_file" => self.train_file = Some(path()),
            "test_file" => self.test_file = Some(path()),
            "checkpoint" => self.checkpoint = Some(path()),
            "embeddings_file" => self.embeddings_file = Some(path()),
            "summaries_file" => self.summaries_file = Some(path()),
            "listen" => self.listen = v.to_string(),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn train_path(&self) -> PathBuf {
        self.train_file
            .clone()
            .unwrap_or_else(|| self.data_dir.join("train.jsonl"))
    }

    pub fn test_path(&self) -> PathBuf {
        self.test_file
            .clone()
            .unwrap_or_else(|| self.data_dir.join("test.jsonl"))
    }
}
