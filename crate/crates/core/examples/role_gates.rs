//! Trains a model and prints how each role's gates weight the experts.

use rank_moe::autodiff::{Graph, Tensor};
use rank_moe::config::TrainConfig;
use rank_moe::moe::GateKey;
use rank_moe::pipeline::{train, Body, Role, TextProviders, EMB_ROLE};
use rank_moe::synthgen::{generate, GenConfig};

fn main() {
    let data = generate(&GenConfig {
        seed: 5,
        n_sessions: 400,
        ..GenConfig::default()
    })
    .expect("valid config");
    let mut cfg = TrainConfig::default();
    cfg.model.id_dim = 8;
    cfg.model.text_dim = 32;
    cfg.model.jd_dim = 24;
    cfg.model.expert_hidden = vec![32, 16];
    cfg.model.gate_hidden = vec![8];
    cfg.model.tower_a = vec![32, 16];
    cfg.model.tower_b = vec![16, 8];
    cfg.model.vocab_talent = 1024;
    cfg.batch_size = 64;
    cfg.lr = 2e-3;
    cfg.max_steps = 500;
    let (model, _) = train(&data.train, &cfg, TextProviders::for_config(&cfg.model)).expect("training");
    let Body::Multi(body) = &model.architecture().body else {
        unreachable!("the full model is multi-task")
    };

    let mut g = Graph::with_params(model.params());
    let table = g.param(EMB_ROLE).unwrap();
    let roles = g.gather_rows(table, &[0, 1, 2]).unwrap();
    for key in GateKey::ALL {
        let node = body.moe.gate(&mut g, key, roles).unwrap();
        let w: Tensor<f32> = g.tensor(node);
        for role in Role::ALL {
            let row: Vec<String> = w.row(role.index()).iter().map(|x| format!("{x:.3}")).collect();
            println!("{:<6} {:<3} [{}]", key.as_str(), role.as_str(), row.join(", "));
        }
    }
}
