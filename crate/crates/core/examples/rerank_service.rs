//! Starts the re-ranking service on a local port and sends it requests.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::Arc;

use rank_moe::config::TrainConfig;
use rank_moe::pipeline::{train, TextProviders};
use rank_moe::service::Server;
use rank_moe::synthgen::{generate, GenConfig};

fn main() {
    let data = generate(&GenConfig {
        n_sessions: 100,
        ..GenConfig::default()
    })
    .expect("valid config");
    let mut cfg = TrainConfig::default();
    cfg.model.text_dim = 32;
    cfg.model.jd_dim = 64;
    cfg.model.vocab_talent = 1024;
    cfg.max_steps = 100;
    cfg.batch_size = 64;
    cfg.lr = 1e-3;
    let (model, _) = train(&data.train, &cfg, TextProviders::for_config(&cfg.model)).expect("training");

    let server = Server::bind(Arc::new(model), "127.0.0.1:0").expect("bind");
    let addr = server.local_addr().expect("address");
    server.spawn();
    println!("serving on {addr}");

    let r = &data.test[0];
    let candidates: Vec<_> = data
        .test
        .iter()
        .filter(|c| c.session_id == r.session_id)
        .take(4)
        .map(|c| serde_json::json!({"talent_id": c.talent_id, "resume_text": c.resume_text}))
        .collect();
    let request = serde_json::json!({
        "recruiter_id": r.recruiter_id,
        "role": r.role,
        "query_id": r.query_id,
        "job_id": r.job_id,
        "jd_text": r.jd_text,
        "candidates": candidates,
        "history_talent_ids": r.history_talent_ids,
    });

    let stream = TcpStream::connect(addr).expect("connect");
    let mut writer = stream.try_clone().expect("clone");
    let mut reader = BufReader::new(stream);
    for line in [request.to_string(), "{oops".to_string()] {
        writeln!(writer, "{line}").expect("send");
        let mut response = String::new();
        reader.read_line(&mut response).expect("receive");
        print!("> {}\n< {response}", &line[..line.len().min(60)]);
    }
}
