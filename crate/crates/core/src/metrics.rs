//! Ranking and funnel metrics.
//!
//! Orderings are by descending score with ties broken by ascending
//! talent id, except AUC which averages tied ranks.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use thiserror::Error;

use crate::pipeline::{InteractionRecord, Prediction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("{0} is undefined for this input")]
    Undefined(&'static str),
    #[error("length mismatch: {0} scores vs {1} labels")]
    Length(usize, usize),
    #[error("scores must be finite")]
    NonFinite,
    #[error("no impressions")]
    NoImpressions,
}

fn check(scores: &[f64], labels: &[bool]) -> Result<(), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::Length(scores.len(), labels.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    Ok(())
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half (Mann-Whitney U with averaged ranks).
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::Undefined("auc"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of 1-based ranks of positives, tied runs sharing their mean rank.
    // Doubled to stay in integers until the end.
    let mut rank_sum_x2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let positives = order[i..j].iter().filter(|&&k| labels[k]).count() as u64;
        // mean rank of positions i+1..=j is (i + 1 + j) / 2
        rank_sum_x2 += positives * (i as u64 + 1 + j as u64);
        i = j;
    }
    let p = pos as u64;
    let u_x2 = rank_sum_x2 - p * (p + 1);
    Ok(u_x2 as f64 / (2.0 * pos as f64 * neg as f64))
}

fn ranked<'a>(scores: &[f64], ids: &'a [&'a str]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => ids[a].cmp(ids[b]),
        o => o,
    });
    order
}

/// Mean of precision@k over the ranks k holding a positive.
pub fn average_precision(scores: &[f64], labels: &[bool], ids: &[&str]) -> Result<f64, MetricError> {
    check(scores, labels)?;
    if ids.len() != scores.len() {
        return Err(MetricError::Length(scores.len(), ids.len()));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &i) in ranked(scores, ids).iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(MetricError::Undefined("average precision"));
    }
    Ok(sum / hits as f64)
}

/// One session's scored candidates, best first.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionGroup {
    pub session_id: String,
    /// `(talent_id, score, label)` in ranked order.
    pub items: Vec<(String, f64, bool)>,
}

/// Groups rows by session (sessions in id order) and ranks each group.
pub fn group_sessions(
    session_ids: &[&str],
    talent_ids: &[&str],
    scores: &[f64],
    labels: &[bool],
) -> Result<Vec<SessionGroup>, MetricError> {
    check(scores, labels)?;
    if session_ids.len() != scores.len() || talent_ids.len() != scores.len() {
        return Err(MetricError::Length(scores.len(), session_ids.len().min(talent_ids.len())));
    }
    let mut by_session: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in session_ids.iter().enumerate() {
        by_session.entry(s).or_default().push(i);
    }
    Ok(by_session
        .into_iter()
        .map(|(sid, rows)| {
            let s: Vec<f64> = rows.iter().map(|&i| scores[i]).collect();
            let t: Vec<&str> = rows.iter().map(|&i| talent_ids[i]).collect();
            let items = ranked(&s, &t)
                .into_iter()
                .map(|k| (t[k].to_string(), s[k], labels[rows[k]]))
                .collect();
            SessionGroup {
                session_id: sid.to_string(),
                items,
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mrr {
    pub value: f64,
    pub sessions: usize,
    /// Sessions without any positive, left out of the mean.
    pub excluded: usize,
}

pub const MRR_CUTOFF: usize = 10;

/// Mean over sessions with a positive of `1/rank` of the first positive,
/// counting zero when it falls below rank 10.
pub fn mrr_at_10(groups: &[SessionGroup]) -> Result<Mrr, MetricError> {
    let mut sum = 0.0;
    let mut sessions = 0;
    let mut excluded = 0;
    for g in groups {
        match g.items.iter().position(|it| it.2) {
            None => excluded += 1,
            Some(r) => {
                sessions += 1;
                if r < MRR_CUTOFF {
                    sum += 1.0 / (r + 1) as f64;
                }
            }
        }
    }
    if sessions == 0 {
        return Err(MetricError::Undefined("mrr@10"));
    }
    Ok(Mrr {
        value: sum / sessions as f64,
        sessions,
        excluded,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FunnelRates {
    pub ctr_rate: f64,
    /// Absent when there are no clicks.
    pub cvr_rate: Option<f64>,
    pub ctcvr_rate: f64,
}

pub fn funnel_rates(impressions: usize, clicks: usize, applications: usize) -> Result<FunnelRates, MetricError> {
    if impressions == 0 {
        return Err(MetricError::NoImpressions);
    }
    let n = impressions as f64;
    Ok(FunnelRates {
        ctr_rate: clicks as f64 / n,
        cvr_rate: (clicks > 0).then(|| applications as f64 / clicks as f64),
        ctcvr_rate: applications as f64 / n,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TaskMetrics {
    pub auc: Option<f64>,
    pub mrr_at_10: Option<f64>,
    pub ap: Option<f64>,
    pub excluded_sessions: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub ctr: TaskMetrics,
    /// Computed on clicked impressions only.
    pub cvr: TaskMetrics,
    pub funnel: FunnelRates,
    pub impressions: usize,
    pub clicks: usize,
    pub applications: usize,
}

fn task_metrics(sessions: &[&str], talents: &[&str], scores: &[f64], labels: &[bool]) -> TaskMetrics {
    let groups = group_sessions(sessions, talents, scores, labels).ok();
    let mrr = groups.as_deref().and_then(|g| mrr_at_10(g).ok());
    TaskMetrics {
        auc: auc(scores, labels).ok(),
        mrr_at_10: mrr.map(|m| m.value),
        ap: average_precision(scores, labels, talents).ok(),
        excluded_sessions: mrr.map_or(0, |m| m.excluded),
    }
}

/// CTR metrics rank all impressions by `p_ctr`; CVR metrics rank clicked
/// impressions by `p_cvr`.
pub fn evaluate(records: &[InteractionRecord], preds: &[Prediction]) -> Result<EvalReport, MetricError> {
    if records.len() != preds.len() {
        return Err(MetricError::Length(preds.len(), records.len()));
    }
    let clicks = records.iter().filter(|r| r.label_click == 1).count();
    let applications = records.iter().filter(|r| r.label_apply == 1).count();
    let funnel = funnel_rates(records.len(), clicks, applications)?;

    let sessions: Vec<&str> = records.iter().map(|r| r.session_id.as_str()).collect();
    let talents: Vec<&str> = records.iter().map(|r| r.talent_id.as_str()).collect();
    let p_ctr: Vec<f64> = preds.iter().map(|p| p.p_ctr).collect();
    let click: Vec<bool> = records.iter().map(|r| r.label_click == 1).collect();
    let ctr = task_metrics(&sessions, &talents, &p_ctr, &click);

    let clicked: Vec<usize> = (0..records.len()).filter(|&i| click[i]).collect();
    fn pick<'a>(v: &[&'a str], rows: &[usize]) -> Vec<&'a str> {
        rows.iter().map(|&i| v[i]).collect()
    }
    let p_cvr: Vec<f64> = clicked.iter().map(|&i| preds[i].p_cvr).collect();
    let apply: Vec<bool> = clicked.iter().map(|&i| records[i].label_apply == 1).collect();
    let cvr = task_metrics(&pick(&sessions, &clicked), &pick(&talents, &clicked), &p_cvr, &apply);

    Ok(EvalReport {
        ctr,
        cvr,
        funnel,
        impressions: records.len(),
        clicks,
        applications,
    })
}

impl EvalReport {
    /// Mean of the CTR and CVR AUCs, when both are defined.
    pub fn auc_avg(&self) -> Option<f64> {
        Some((self.ctr.auc? + self.cvr.auc?) / 2.0)
    }

    pub fn is_complete(&self) -> bool {
        [self.ctr, self.cvr]
            .iter()
            .all(|t| t.auc.is_some() && t.mrr_at_10.is_some() && t.ap.is_some())
            && self.funnel.cvr_rate.is_some()
    }

    fn fields(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        vec![
            ("ctr_auc", opt(self.ctr.auc)),
            ("ctr_mrr_at_10", opt(self.ctr.mrr_at_10)),
            ("ctr_ap", opt(self.ctr.ap)),
            ("cvr_auc", opt(self.cvr.auc)),
            ("cvr_mrr_at_10", opt(self.cvr.mrr_at_10)),
            ("cvr_ap", opt(self.cvr.ap)),
            ("auc_avg", opt(self.auc_avg())),
            ("ctr_rate", opt(Some(self.funnel.ctr_rate))),
            ("cvr_rate", opt(self.funnel.cvr_rate)),
            ("ctcvr_rate", opt(Some(self.funnel.ctcvr_rate))),
            ("impressions", self.impressions.to_string()),
            ("clicks", self.clicks.to_string()),
            ("applications", self.applications.to_string()),
            ("ctr_excluded_sessions", self.ctr.excluded_sessions.to_string()),
            ("cvr_excluded_sessions", self.cvr.excluded_sessions.to_string()),
        ]
    }

    /// One header line and one value line. Undefined metrics are empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let f = self.fields();
        let keys: Vec<&str> = f.iter().map(|x| x.0).collect();
        let vals: Vec<&str> = f.iter().map(|x| x.1.as_str()).collect();
        writeln!(w, "{}", keys.join(","))?;
        writeln!(w, "{}", vals.join(","))?;
        w.flush()
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        writeln!(f, "{:<6} {:>8} {:>8} {:>8}", "task", "AUC", "MRR@10", "AP")?;
        for (name, t) in [("ctr", &self.ctr), ("cvr", &self.cvr)] {
            writeln!(
                f,
                "{:<6} {:>8} {:>8} {:>8}",
                name,
                cell(t.auc),
                cell(t.mrr_at_10),
                cell(t.ap)
            )?;
        }
        writeln!(
            f,
            "funnel: ctr {} cvr {} ctcvr {}",
            cell(Some(self.funnel.ctr_rate)),
            cell(self.funnel.cvr_rate),
            cell(Some(self.funnel.ctcvr_rate))
        )?;
        write!(
            f,
            "counts: impressions {} clicks {} applications {}",
            self.impressions, self.clicks, self.applications
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairwise_auc(s: &[f64], l: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if l[i] && !l[j] {
                    den += 1.0;
                    num += match s[i].partial_cmp(&s[j]).unwrap() {
                        Ordering::Greater => 1.0,
                        Ordering::Equal => 0.5,
                        Ordering::Less => 0.0,
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(), 0.75);
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 5], &[true, false, true, false, false]).unwrap(), 0.5);
        assert_eq!(auc(&[0.3, 0.4], &[true, true]), Err(MetricError::Undefined("auc")));
    }

    #[test]
    fn ap_examples() {
        let ids = ["a", "b", "c"];
        // labels by rank [1, 0, 1]
        let ap = average_precision(&[0.9, 0.5, 0.1], &[true, false, true], &ids).unwrap();
        assert_eq!(ap, 0.5 * (1.0 + 2.0 / 3.0));
        assert_eq!(average_precision(&[0.9, 0.5, 0.1], &[true, true, false], &ids).unwrap(), 1.0);
        let reversed = average_precision(&[0.1, 0.5, 0.9], &[true, true, false], &ids).unwrap();
        assert!(reversed < 1.0);
        assert!(average_precision(&[0.1], &[false], &["a"]).is_err());
    }

    #[test]
    fn ap_ties_break_by_talent_id() {
        // Same scores: "a" ranks before "b".
        let ap = average_precision(&[0.5, 0.5], &[false, true], &["b", "a"]).unwrap();
        assert_eq!(ap, 1.0);
    }

    #[test]
    fn mrr_examples() {
        let groups = group_sessions(
            &["s", "s", "s", "s", "t", "t"],
            &["a", "b", "c", "d", "e", "f"],
            &[0.9, 0.8, 0.7, 0.6, 0.5, 0.4],
            &[false, false, false, true, false, false],
        )
        .unwrap();
        let m = mrr_at_10(&groups).unwrap();
        assert_eq!(m.value, 0.25);
        assert_eq!((m.sessions, m.excluded), (1, 1));
        let none = group_sessions(&["s"], &["a"], &[0.1], &[false]).unwrap();
        assert!(mrr_at_10(&none).is_err());
    }

    #[test]
    fn mrr_cutoff_is_ten() {
        let n = 12;
        let ids: Vec<String> = (0..n).map(|i| format!("t{i:02}")).collect();
        let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
        let scores: Vec<f64> = (0..n).map(|i| -(i as f64)).collect();
        let mut labels = vec![false; n];
        labels[10] = true;
        let g = group_sessions(&vec!["s"; n], &ids, &scores, &labels).unwrap();
        assert_eq!(mrr_at_10(&g).unwrap().value, 0.0);
    }

    #[test]
    fn funnel_examples() {
        let f = funnel_rates(100, 10, 2).unwrap();
        assert_eq!((f.ctr_rate, f.cvr_rate, f.ctcvr_rate), (0.10, Some(0.20), 0.02));
        let z = funnel_rates(50, 0, 0).unwrap();
        assert_eq!((z.ctr_rate, z.cvr_rate, z.ctcvr_rate), (0.0, None, 0.0));
        assert_eq!(funnel_rates(0, 0, 0), Err(MetricError::NoImpressions));
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise(data in proptest::collection::vec((0u8..20, any::<bool>()), 2..50)) {
            let s: Vec<f64> = data.iter().map(|d| f64::from(d.0) / 7.0).collect();
            let l: Vec<bool> = data.iter().map(|d| d.1).collect();
            match auc(&s, &l) {
                Ok(v) => prop_assert!((v - pairwise_auc(&s, &l)).abs() <= 1e-12),
                Err(_) => prop_assert!(l.iter().all(|&x| x) || l.iter().all(|&x| !x)),
            }
        }

        #[test]
        fn metrics_are_rank_invariant(data in proptest::collection::vec((-50i32..50, any::<bool>()), 2..40)) {
            let s: Vec<f64> = data.iter().map(|d| f64::from(d.0) / 10.0).collect();
            let l: Vec<bool> = data.iter().map(|d| d.1).collect();
            let ids: Vec<String> = (0..s.len()).map(|i| format!("t{i:03}")).collect();
            let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
            for t in [|x: f64| 2.0 * x + 1.0, |x: f64| x.tanh()] {
                let s2: Vec<f64> = s.iter().map(|&x| t(x)).collect();
                prop_assert_eq!(auc(&s, &l), auc(&s2, &l));
                prop_assert_eq!(average_precision(&s, &l, &ids), average_precision(&s2, &l, &ids));
            }
        }

        #[test]
        fn auc_complement(data in proptest::collection::vec((any::<u32>(), any::<bool>()), 2..40)) {
            let s: Vec<f64> = data.iter().map(|d| f64::from(d.0)).collect();
            let mut uniq = s.clone();
            uniq.sort_by(f64::total_cmp);
            uniq.dedup();
            prop_assume!(uniq.len() == s.len());
            let l: Vec<bool> = data.iter().map(|d| d.1).collect();
            if let (Ok(a), Ok(b)) = (auc(&s, &l), auc(&s.iter().map(|x| -x).collect::<Vec<_>>(), &l)) {
                prop_assert!((a + b - 1.0).abs() < 1e-12);
            }
        }
    }
}
