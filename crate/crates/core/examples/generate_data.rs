//! Generates a small synthetic dataset and summarizes its funnel by role.
//!
//! `cargo run --example generate_data -- [OUT_DIR]`

use std::collections::BTreeMap;

use rank_moe::synthgen::{generate, GenConfig};

fn main() {
    let cfg = GenConfig {
        seed: 7,
        n_sessions: 200,
        ..GenConfig::default()
    };
    let data = generate(&cfg).expect("valid config");
    let mut by_role: BTreeMap<&str, [usize; 3]> = BTreeMap::new();
    for r in &data.train {
        let e = by_role.entry(r.role.as_str()).or_default();
        e[0] += 1;
        e[1] += usize::from(r.label_click);
        e[2] += usize::from(r.label_apply);
    }
    println!("{} train / {} test records", data.train.len(), data.test.len());
    println!("role  impressions  ctr    cvr");
    for (role, [n, c, a]) in by_role {
        println!("{role:<5} {n:>11}  {:.3}  {:.3}", c as f64 / n as f64, a as f64 / c.max(1) as f64);
    }
    let flips = data.world.click_flip_rates();
    println!("click noise by role (SA, SG, TL): {flips:?}");
    if let Some(dir) = std::env::args().nth(1) {
        data.write(std::path::Path::new(&dir)).expect("writable directory");
        println!("wrote {dir}/train.jsonl, test.jsonl, world.json");
    }
}
