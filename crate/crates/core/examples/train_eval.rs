//! Trains a small model on generated data and prints the evaluation report.

use rank_moe::config::TrainConfig;
use rank_moe::metrics::evaluate;
use rank_moe::pipeline::{train, TextProviders};
use rank_moe::synthgen::{generate, GenConfig};

pub fn small_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    let m = &mut cfg.model;
    m.id_dim = 8;
    m.text_dim = 32;
    m.jd_dim = 24;
    m.expert_hidden = vec![32, 16];
    m.gate_hidden = vec![8];
    m.tower_a = vec![32, 16];
    m.tower_b = vec![16, 8];
    m.vocab_recruiter = 128;
    m.vocab_query = 512;
    m.vocab_talent = 1024;
    m.vocab_job = 256;
    cfg.batch_size = 64;
    cfg.lr = 2e-3;
    cfg.max_steps = 400;
    cfg
}

fn main() {
    let data = generate(&GenConfig {
        seed: 1,
        n_sessions: 300,
        ..GenConfig::default()
    })
    .expect("valid config");
    let cfg = small_config();
    let (model, log) = train(&data.train, &cfg, TextProviders::for_config(&cfg.model)).expect("training");
    for row in &log {
        println!("step {:>4}  loss {:.4}", row.step, row.total);
    }
    let preds = model.predict(&data.test).expect("prediction");
    println!("{}", evaluate(&data.test, &preds).expect("metrics"));
}
