//! Saves a model, loads it back and confirms identical predictions.

use rank_moe::config::TrainConfig;
use rank_moe::pipeline::{checkpoint, train, TextProviders};
use rank_moe::synthgen::{generate, GenConfig};

fn main() {
    let data = generate(&GenConfig {
        n_sessions: 40,
        ..GenConfig::default()
    })
    .expect("valid config");
    let mut cfg = TrainConfig::default();
    cfg.model.text_dim = 16;
    cfg.model.jd_dim = 48;
    cfg.model.vocab_talent = 1024;
    cfg.max_steps = 20;
    cfg.batch_size = 32;
    let (model, _) = train(&data.train, &cfg, TextProviders::for_config(&cfg.model)).expect("training");

    let dir = std::env::temp_dir().join("rank-moe-checkpoint-example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let path = dir.join("model.ckpt");
    checkpoint::save(&model, &path).expect("save");
    let loaded = checkpoint::load(&path, &cfg.model, TextProviders::for_config(&cfg.model)).expect("load");

    let a = model.predict(&data.test).expect("predict");
    let b = loaded.predict(&data.test).expect("predict");
    println!(
        "{} ({} bytes, digest {}), predictions identical: {}",
        path.display(),
        std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0),
        cfg.model.digest_hex(),
        a == b
    );

    let mut other = cfg.model.clone();
    other.n_experts = 4;
    match checkpoint::load(&path, &other, TextProviders::for_config(&other)) {
        Err(e) => println!("loading with a different config fails: {e}"),
        Ok(_) => println!("unexpectedly loaded"),
    }
}
