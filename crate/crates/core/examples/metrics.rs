//! Ranking metrics on a hand-written pair of sessions.

use rank_moe::metrics::{auc, average_precision, funnel_rates, group_sessions, mrr_at_10};

fn main() {
    let sessions = ["s1", "s1", "s1", "s2", "s2", "s2"];
    let talents = ["a", "b", "c", "d", "e", "f"];
    let scores = [0.9, 0.4, 0.4, 0.2, 0.7, 0.1];
    let clicked = [false, true, false, true, false, false];

    println!("auc  {:.4}", auc(&scores, &clicked).unwrap());
    println!("ap   {:.4}", average_precision(&scores, &clicked, &talents).unwrap());
    let groups = group_sessions(&sessions, &talents, &scores, &clicked).unwrap();
    for g in &groups {
        let order: Vec<&str> = g.items.iter().map(|i| i.0.as_str()).collect();
        println!("{} ranked {order:?}", g.session_id);
    }
    let mrr = mrr_at_10(&groups).unwrap();
    println!("mrr@10 {:.4} over {} sessions", mrr.value, mrr.sessions);
    let f = funnel_rates(6, 2, 1).unwrap();
    println!("ctr {:.3} cvr {:.3} ctcvr {:.3}", f.ctr_rate, f.cvr_rate.unwrap(), f.ctcvr_rate);
}
