//! Runs a miniature ablation: every variant over two seeds.

use rank_moe::config::{Ablation, TrainConfig};
use rank_moe::pipeline::TextProviders;
use rank_moe::service::{ablate, AblateSettings};
use rank_moe::synthgen::{generate, GenConfig};

fn main() {
    let data = generate(&GenConfig {
        seed: 3,
        n_sessions: 300,
        ..GenConfig::default()
    })
    .expect("valid config");
    let mut base = TrainConfig::default();
    base.model.id_dim = 8;
    base.model.text_dim = 32;
    base.model.jd_dim = 24;
    base.model.expert_hidden = vec![32, 16];
    base.model.gate_hidden = vec![8];
    base.model.tower_a = vec![32, 16];
    base.model.tower_b = vec![16, 8];
    base.model.vocab_talent = 1024;
    base.batch_size = 64;
    base.lr = 2e-3;
    base.max_steps = 300;
    let settings = AblateSettings {
        seeds: 2,
        variants: Ablation::ALL.to_vec(),
        expert_sweep: vec![1, 3],
        history_sweep: vec![],
    };
    let runs = ablate::plan(&base, &settings);
    let rows = ablate::run(&runs, &data.train, &data.test, TextProviders::for_config).expect("ablation");
    ablate::write_csv(std::io::stdout(), &rows).expect("stdout");
    println!();
    for (label, median) in ablate::median_auc_avg(&rows) {
        println!("{label:<24} {median:.4}");
    }
}
