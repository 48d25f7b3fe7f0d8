#![allow(dead_code)]

pub mod gradcheck;

use std::path::PathBuf;

use rank_moe::config::{Ablation, ModelConfig, TrainConfig};
use rank_moe::pipeline::InteractionRecord;
use rank_moe::service::Settings;
use rank_moe::synthgen::{generate, Dataset, GenConfig};

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn load_settings(name: &str) -> Settings {
    Settings::load(&configs_dir().join(name)).expect("shipped config parses")
}

/// A model small enough for finite differences.
pub fn tiny_model(ablation: Ablation) -> ModelConfig {
    ModelConfig {
        id_dim: 3,
        text_dim: 4,
        jd_dim: 6,
        expert_hidden: vec![5, 4],
        gate_hidden: vec![3],
        tower_a: vec![4, 3],
        tower_b: vec![4, 4],
        n_experts: 3,
        max_history: 4,
        top_k_history_for_summary: 3,
        dropout: 0.1,
        ablation,
        relevance_stop_gradient: false,
        vocab_recruiter: 8,
        vocab_query: 16,
        vocab_talent: 32,
        vocab_job: 8,
    }
}

pub fn tiny_train(ablation: Ablation) -> TrainConfig {
    TrainConfig {
        model: tiny_model(ablation),
        batch_size: 16,
        lr: 5e-3,
        max_steps: 40,
        seed: 3,
        log_every: 5,
        eval_every: 20,
        ..TrainConfig::default()
    }
}

pub fn tiny_gen(seed: u64) -> GenConfig {
    GenConfig {
        seed,
        n_recruiters: 6,
        n_talents: 40,
        n_sessions: 20,
        session_size: 8,
        ..GenConfig::default()
    }
}

pub fn tiny_data(seed: u64) -> Dataset {
    generate(&tiny_gen(seed)).expect("tiny generator config is valid")
}

pub fn clicked_and_unclicked(records: &[InteractionRecord]) -> bool {
    records.iter().any(|r| r.label_click == 1) && records.iter().any(|r| r.label_click == 0)
}
