//! Synthetic recruitment funnel with a known latent ground truth.
//!
//! Jobs and talents carry nonnegative skill vectors over `latent_dim`
//! dimensions; affinity is their cosine. Each skill renders as tokens in
//! resumes, and a job's explicit skills render into its JD text while its
//! implicit skills appear only in the resumes its recruiter clicks.
//!
//! Recruiter roles differ in click bias, in how much they react to
//! explicit (keyword) versus full affinity, and in label-flip noise.
//! All randomness comes from ChaCha8 (`rand_chacha`), a counter-based
//! generator: stream 0 builds the world and session `s` draws from
//! stream `s + 1`, so output bytes depend only on the config. Session roles
//! follow exact quotas from the role fractions, shuffled.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::sigmoid;
use crate::pipeline::{write_jsonl, InteractionRecord, Role};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    Invalid(String),
    #[error("unknown {kind} `{id}`")]
    UnknownId { kind: &'static str, id: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("world file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub n_recruiters: usize,
    /// Share of sessions per role, in `Role::ALL` order.
    pub role_fractions: [f64; 3],
    pub n_talents: usize,
    pub jobs_per_recruiter: usize,
    pub queries_per_job: usize,
    pub n_sessions: usize,
    pub session_size: usize,
    pub latent_dim: usize,
    pub skills_per_job: usize,
    pub skills_per_talent: usize,
    /// Relevant iff affinity exceeds this.
    pub relevance_threshold: f64,
    /// Click label-flip probability per role, in `Role::ALL` order.
    pub click_flip: [f64; 3],
    /// Apply label-flip probability per role.
    pub apply_flip: [f64; 3],
    /// Trailing share of sessions written to the test file.
    pub test_fraction: f64,
    /// Share of recruiters that only appear in test sessions.
    pub cold_recruiter_fraction: f64,
    pub empty_jd_fraction: f64,
    /// Longest history kept per record.
    pub history_cap: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        let pv = [0.4940, 0.1166, 0.3891];
        let total: f64 = pv.iter().sum();
        Self {
            seed: 0,
            n_recruiters: 60,
            role_fractions: pv.map(|x| x / total),
            n_talents: 500,
            jobs_per_recruiter: 2,
            queries_per_job: 3,
            n_sessions: 50,
            session_size: 15,
            latent_dim: 12,
            skills_per_job: 3,
            skills_per_talent: 3,
            relevance_threshold: 0.5,
            click_flip: [0.25, 0.05, 0.05],
            apply_flip: [0.10, 0.02, 0.02],
            test_fraction: 0.2,
            cold_recruiter_fraction: 0.0,
            empty_jd_fraction: 0.1,
            history_cap: 50,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::Invalid(m.to_string()));
        if self.n_recruiters < 3 {
            return bad("n_recruiters must be at least 3 (one per role)");
        }
        for (name, v) in [
            ("n_talents", self.n_talents),
            ("jobs_per_recruiter", self.jobs_per_recruiter),
            ("queries_per_job", self.queries_per_job),
            ("n_sessions", self.n_sessions),
            ("session_size", self.session_size),
            ("skills_per_job", self.skills_per_job),
            ("skills_per_talent", self.skills_per_talent),
        ] {
            if v == 0 {
                return Err(GenError::Invalid(format!("{name} must be positive")));
            }
        }
        if self.skills_per_job > self.latent_dim || self.skills_per_talent > self.latent_dim {
            return bad("skills per entity cannot exceed latent_dim");
        }
        if self.session_size > self.n_talents {
            return bad("session_size cannot exceed n_talents");
        }
        let sum: f64 = self.role_fractions.iter().sum();
        if self.role_fractions.iter().any(|&f| f <= 0.0) || (sum - 1.0).abs() > 1e-9 {
            return bad("role fractions must be positive and sum to 1");
        }
        let prob = |v: f64| (0.0..0.5).contains(&v);
        if !self.click_flip.iter().chain(&self.apply_flip).all(|&v| prob(v)) {
            return bad("flip rates must lie in [0, 0.5)");
        }
        for (name, v) in [
            ("test_fraction", self.test_fraction),
            ("cold_recruiter_fraction", self.cold_recruiter_fraction),
            ("empty_jd_fraction", self.empty_jd_fraction),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(GenError::Invalid(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(0.0..1.0).contains(&self.relevance_threshold) {
            return bad("relevance_threshold must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Fixed behavioural parameters of a role.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleBehavior {
    pub role: Role,
    pub fraction: f64,
    pub click_bias: f64,
    pub click_slope: f64,
    /// Weight on keyword (explicit-skill) affinity versus full affinity.
    pub explicit_weight: f64,
    pub apply_bias: f64,
    pub click_flip: f64,
    pub apply_flip: f64,
}

const CLICK_CENTER: f64 = 0.45;
const APPLY_CENTER: f64 = 0.55;
const APPLY_SLOPE: f64 = 8.0;

fn behaviors(cfg: &GenConfig) -> Vec<RoleBehavior> {
    // (click_bias, click_slope, explicit_weight, apply_bias)
    let table = [(0.6, 4.0, 0.9, -0.3), (0.0, 7.0, 0.5, 0.0), (-0.9, 10.0, 0.0, 0.4)];
    Role::ALL
        .iter()
        .enumerate()
        .map(|(i, &role)| RoleBehavior {
            role,
            fraction: cfg.role_fractions[i],
            click_bias: table[i].0,
            click_slope: table[i].1,
            explicit_weight: table[i].2,
            apply_bias: table[i].3,
            click_flip: cfg.click_flip[i],
            apply_flip: cfg.apply_flip[i],
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recruiter {
    pub id: String,
    pub role: Role,
    pub cold: bool,
    pub jobs: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub recruiter: usize,
    pub skills: Vec<f64>,
    pub explicit: Vec<usize>,
    pub implicit: Vec<usize>,
    pub jd_text: String,
    pub queries: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Talent {
    pub id: String,
    pub skills: Vec<f64>,
    pub resume_text: String,
}

/// Latent quantities behind one emitted record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordTruth {
    pub session_id: String,
    pub talent_id: String,
    pub role: Role,
    pub affinity: f64,
    pub click_prob: f64,
    pub click_clean: bool,
    pub click_flipped: bool,
    pub apply_prob: f64,
    pub apply_clean: bool,
    pub apply_flipped: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct World {
    pub config: GenConfig,
    pub roles: Vec<RoleBehavior>,
    pub recruiters: Vec<Recruiter>,
    pub jobs: Vec<Job>,
    pub talents: Vec<Talent>,
    pub truth: Vec<RecordTruth>,
    #[serde(skip)]
    job_index: HashMap<String, usize>,
    #[serde(skip)]
    talent_index: HashMap<String, usize>,
}

pub struct Dataset {
    pub train: Vec<InteractionRecord>,
    pub test: Vec<InteractionRecord>,
    pub world: World,
}

fn skill_token(dim: usize, variant: usize) -> String {
    const STEMS: [&str; 16] = [
        "search", "ranking", "infra", "mobile", "frontend", "data", "ml", "security", "cloud", "product",
        "design", "sales", "finance", "ops", "research", "embedded",
    ];
    let stem = STEMS[dim % STEMS.len()];
    let round = dim / STEMS.len();
    match (round, variant) {
        (0, 0) => stem.to_string(),
        (0, v) => format!("{stem}_{v}"),
        (r, v) => format!("{stem}{r}_{v}"),
    }
}

const FILLER: [&str; 24] = [
    "team", "experience", "project", "years", "lead", "build", "company", "work", "strong", "skills",
    "develop", "manage", "senior", "junior", "remote", "office", "growth", "impact", "deliver", "quality",
    "agile", "scale", "users", "platform",
];

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn pick_dims<R: Rng>(rng: &mut R, k: usize, n: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, k, n).into_vec()
}

fn render_skills<R: Rng>(rng: &mut R, dims: &[(usize, f64)], filler: usize) -> String {
    let mut tokens = Vec::new();
    for &(d, w) in dims {
        let reps = 1 + (w * 3.0).round() as usize;
        for _ in 0..reps {
            tokens.push(skill_token(d, rng.gen_range(0..2)));
        }
    }
    for _ in 0..filler {
        tokens.push(FILLER[rng.gen_range(0..FILLER.len())].to_string());
    }
    tokens.shuffle(rng);
    tokens.join(" ")
}

impl World {
    fn reindex(&mut self) {
        self.job_index = self.jobs.iter().enumerate().map(|(i, j)| (j.id.clone(), i)).collect();
        self.talent_index = self
            .talents
            .iter()
            .enumerate()
            .map(|(i, t)| (t.id.clone(), i))
            .collect();
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, GenError> {
        let mut w: World = serde_json::from_slice(bytes)?;
        w.reindex();
        Ok(w)
    }

    pub fn role(&self, role: Role) -> &RoleBehavior {
        &self.roles[role.index()]
    }

    fn job(&self, id: &str) -> Result<&Job, GenError> {
        self.job_index
            .get(id)
            .map(|&i| &self.jobs[i])
            .ok_or_else(|| GenError::UnknownId {
                kind: "job",
                id: id.to_string(),
            })
    }

    fn talent(&self, id: &str) -> Result<&Talent, GenError> {
        self.talent_index
            .get(id)
            .map(|&i| &self.talents[i])
            .ok_or_else(|| GenError::UnknownId {
                kind: "talent",
                id: id.to_string(),
            })
    }

    fn explicit_affinity(job: &Job, talent: &Talent) -> f64 {
        let mut v = vec![0.0; job.skills.len()];
        for &d in &job.explicit {
            v[d] = job.skills[d];
        }
        normalize(&mut v);
        dot(&v, &talent.skills)
    }

    fn probabilities(&self, role: Role, job: &Job, talent: &Talent) -> (f64, f64, f64) {
        let b = self.role(role);
        let a = dot(&job.skills, &talent.skills);
        let a_role = b.explicit_weight * Self::explicit_affinity(job, talent) + (1.0 - b.explicit_weight) * a;
        let click = sigmoid(b.click_slope * (a_role - CLICK_CENTER) + b.click_bias);
        let apply = sigmoid(APPLY_SLOPE * (a - APPLY_CENTER) + b.apply_bias);
        (a, click, apply)
    }

    /// True latent affinity between the record's job and talent.
    pub fn oracle_score(&self, r: &InteractionRecord) -> Result<f64, GenError> {
        Ok(dot(&self.job(&r.job_id)?.skills, &self.talent(&r.talent_id)?.skills))
    }

    /// Probability of the emitted click label being 1, flip noise included.
    pub fn click_probability(&self, r: &InteractionRecord) -> Result<f64, GenError> {
        let (_, p, _) = self.probabilities(r.role, self.job(&r.job_id)?, self.talent(&r.talent_id)?);
        let rho = self.role(r.role).click_flip;
        Ok(rho + (1.0 - 2.0 * rho) * p)
    }

    /// Probability of the emitted apply label being 1 given a click.
    pub fn apply_probability(&self, r: &InteractionRecord) -> Result<f64, GenError> {
        let (_, _, p) = self.probabilities(r.role, self.job(&r.job_id)?, self.talent(&r.talent_id)?);
        let rho = self.role(r.role).apply_flip;
        Ok(rho + (1.0 - 2.0 * rho) * p)
    }

    /// Observed click-flip rate per role, recounted from the stored truth.
    pub fn click_flip_rates(&self) -> BTreeMap<Role, f64> {
        let mut counts: BTreeMap<Role, (usize, usize)> = BTreeMap::new();
        for t in &self.truth {
            let c = counts.entry(t.role).or_default();
            c.0 += usize::from(t.click_flipped);
            c.1 += 1;
        }
        counts
            .into_iter()
            .map(|(r, (f, n))| (r, f as f64 / n as f64))
            .collect()
    }
}

/// Builds the world and emits the train/test records.
pub fn generate(cfg: &GenConfig) -> Result<Dataset, GenError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let roles = behaviors(cfg);
    let k = cfg.latent_dim;

    // Recruiters: every role gets at least one warm recruiter; the rest are
    // allotted by role fraction.
    let mut recruiter_roles: Vec<Role> = Role::ALL.to_vec();
    for i in 3..cfg.n_recruiters {
        let u = (i as f64 + 0.5) / cfg.n_recruiters as f64;
        let mut acc = 0.0;
        let mut role = Role::TL;
        for (j, f) in cfg.role_fractions.iter().enumerate() {
            acc += f;
            if u < acc {
                role = Role::ALL[j];
                break;
            }
        }
        recruiter_roles.push(role);
    }
    let n_cold = (cfg.n_recruiters as f64 * cfg.cold_recruiter_fraction).round() as usize;
    let mut cold_flags = vec![false; cfg.n_recruiters];
    let mut eligible: Vec<usize> = (3..cfg.n_recruiters).collect();
    eligible.shuffle(&mut rng);
    for &i in eligible.iter().take(n_cold) {
        cold_flags[i] = true;
    }

    let mut recruiters = Vec::with_capacity(cfg.n_recruiters);
    let mut jobs = Vec::new();
    for (i, &role) in recruiter_roles.iter().enumerate() {
        let mut owned = Vec::new();
        for _ in 0..cfg.jobs_per_recruiter {
            let j = jobs.len();
            let dims = pick_dims(&mut rng, k, cfg.skills_per_job);
            let mut skills = vec![0.0; k];
            for &d in &dims {
                skills[d] = rng.gen_range(0.5..1.0);
            }
            normalize(&mut skills);
            let n_implicit = usize::from(dims.len() >= 2);
            let (explicit, implicit) = dims.split_at(dims.len() - n_implicit);
            let jd_text = if rng.gen::<f64>() < cfg.empty_jd_fraction {
                String::new()
            } else {
                let shown: Vec<(usize, f64)> = explicit.iter().map(|&d| (d, skills[d])).collect();
                render_skills(&mut rng, &shown, 4)
            };
            jobs.push(Job {
                id: format!("j{j:05}"),
                recruiter: i,
                skills,
                explicit: explicit.to_vec(),
                implicit: implicit.to_vec(),
                jd_text,
                queries: (0..cfg.queries_per_job).map(|q| format!("q{j:05}-{q}")).collect(),
            });
            owned.push(j);
        }
        recruiters.push(Recruiter {
            id: format!("r{i:04}"),
            role,
            cold: cold_flags[i],
            jobs: owned,
        });
    }

    let mut talents = Vec::with_capacity(cfg.n_talents);
    let mut by_dim: Vec<Vec<usize>> = vec![Vec::new(); k];
    for t in 0..cfg.n_talents {
        let dims = pick_dims(&mut rng, k, cfg.skills_per_talent);
        let mut skills: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..0.1)).collect();
        let mut shown = Vec::new();
        for &d in &dims {
            let w = rng.gen_range(0.3..1.0);
            skills[d] += w;
            shown.push((d, w));
            by_dim[d].push(t);
        }
        normalize(&mut skills);
        talents.push(Talent {
            id: format!("t{t:06}"),
            resume_text: render_skills(&mut rng, &shown, 6),
            skills,
        });
    }

    let mut world = World {
        config: cfg.clone(),
        roles,
        recruiters,
        jobs,
        talents,
        truth: Vec::new(),
        job_index: HashMap::new(),
        talent_index: HashMap::new(),
    };
    world.reindex();

    let n_test = ((cfg.n_sessions as f64) * cfg.test_fraction).round() as usize;
    let split = cfg.n_sessions - n_test;
    // Exact per-role quotas in shuffled order keep role marginals on target.
    let mut session_roles = Vec::with_capacity(cfg.n_sessions);
    let mut acc = 0.0;
    for (j, f) in cfg.role_fractions.iter().enumerate() {
        acc += f;
        let upto = if j == 2 {
            cfg.n_sessions
        } else {
            (acc * cfg.n_sessions as f64).round() as usize
        };
        session_roles.resize(upto.max(session_roles.len()), Role::ALL[j]);
    }
    session_roles.shuffle(&mut rng);
    let mut history: HashMap<usize, Vec<usize>> = HashMap::new();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for s in 0..cfg.n_sessions {
        let mut srng = ChaCha8Rng::seed_from_u64(cfg.seed);
        srng.set_stream(s as u64 + 1);
        let role = session_roles[s];
        let pool: Vec<usize> = world
            .recruiters
            .iter()
            .enumerate()
            .filter(|(_, r)| r.role == role && (s >= split || !r.cold))
            .map(|(i, _)| i)
            .collect();
        let ri = pool[srng.gen_range(0..pool.len())];
        let rec = &world.recruiters[ri];
        let ji = rec.jobs[srng.gen_range(0..rec.jobs.len())];
        let job = &world.jobs[ji];
        let query = job.queries[srng.gen_range(0..job.queries.len())].clone();

        let mut chosen: Vec<usize> = Vec::with_capacity(cfg.session_size);
        let mut attempts = 0;
        while chosen.len() < cfg.session_size {
            attempts += 1;
            let retrieved = chosen.len().is_multiple_of(2) && attempts < 50 * cfg.session_size;
            let t = if retrieved && !job.explicit.is_empty() {
                let d = job.explicit[srng.gen_range(0..job.explicit.len())];
                match by_dim[d].as_slice() {
                    [] => srng.gen_range(0..cfg.n_talents),
                    list => list[srng.gen_range(0..list.len())],
                }
            } else {
                srng.gen_range(0..cfg.n_talents)
            };
            if !chosen.contains(&t) {
                chosen.push(t);
            }
        }

        let past = history.entry(ji).or_default();
        let hist_ids: Vec<String> = past
            .iter()
            .rev()
            .take(cfg.history_cap)
            .map(|&t| world.talents[t].id.clone())
            .collect();
        let session_id = format!("s{s:06}");
        let mut clicked_now = Vec::new();
        for (pos, &ti) in chosen.iter().enumerate() {
            let talent = &world.talents[ti];
            let (a, p_click, p_apply) = world.probabilities(role, job, talent);
            let b = world.role(role);
            let click_clean = srng.gen::<f64>() < p_click;
            let click_flipped = srng.gen::<f64>() < b.click_flip;
            let click = click_clean != click_flipped;
            let apply_clean = srng.gen::<f64>() < p_apply;
            let apply_flipped = srng.gen::<f64>() < b.apply_flip;
            let apply = click && (apply_clean != apply_flipped);
            if click {
                clicked_now.push(ti);
            }
            let record = InteractionRecord {
                recruiter_id: rec.id.clone(),
                role,
                query_id: query.clone(),
                talent_id: talent.id.clone(),
                job_id: job.id.clone(),
                jd_text: job.jd_text.clone(),
                resume_text: talent.resume_text.clone(),
                history_talent_ids: hist_ids.clone(),
                session_id: session_id.clone(),
                label_click: u8::from(click),
                label_apply: u8::from(apply),
                label_relevant: u8::from(a > cfg.relevance_threshold),
                timestamp: 1_700_000_000 + (s as i64) * 3600 + pos as i64,
            };
            world.truth.push(RecordTruth {
                session_id: session_id.clone(),
                talent_id: talent.id.clone(),
                role,
                affinity: a,
                click_prob: p_click,
                click_clean,
                click_flipped,
                apply_prob: p_apply,
                apply_clean,
                apply_flipped,
            });
            if s < split {
                train.push(record);
            } else {
                test.push(record);
            }
        }
        let past = history.get_mut(&ji).expect("inserted above");
        past.extend(clicked_now);
        let overflow = past.len().saturating_sub(cfg.history_cap);
        past.drain(..overflow);
    }
    Ok(Dataset { train, test, world })
}

impl Dataset {
    /// Writes `train.jsonl`, `test.jsonl` and `world.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), GenError> {
        let io = |p: &Path| {
            let path = p.display().to_string();
            move |source| GenError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        for (name, records) in [("train.jsonl", &self.train), ("test.jsonl", &self.test)] {
            let path = dir.join(name);
            let file = std::fs::File::create(&path).map_err(io(&path))?;
            write_jsonl(std::io::BufWriter::new(file), records).map_err(io(&path))?;
        }
        let path = dir.join("world.json");
        let mut file = std::io::BufWriter::new(std::fs::File::create(&path).map_err(io(&path))?);
        serde_json::to_writer(&mut file, &self.world)?;
        file.flush().map_err(io(&path))
    }
}
