//! Re-ranking service over newline-delimited JSON.
//!
//! Each request line is a [`RankRequest`]; each response line is either
//! `{"results":[...]}` or `{"code":"...","message":"..."}`. Scores are
//! printed with nine significant digits.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use crate::pipeline::{InteractionRecord, RankModel, Role};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub talent_id: String,
    #[serde(default)]
    pub resume_text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankRequest {
    pub recruiter_id: String,
    pub role: Role,
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job_id: Option<String>,
    #[serde(default)]
    pub jd_text: String,
    pub candidates: Vec<Candidate>,
    #[serde(default)]
    pub history_talent_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ranked {
    pub talent_id: String,
    pub p_ctr: f64,
    pub p_cvr: f64,
    pub p_relv: Option<f64>,
    pub final_score: f64,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum RequestError {
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Internal(String),
}

impl RequestError {
    pub fn code(&self) -> &'static str {
        match self {
            RequestError::Parse(_) => "parse_error",
            RequestError::Invalid(_) => "invalid_request",
            RequestError::Internal(_) => "internal_error",
        }
    }
}

pub fn parse_request(line: &str) -> Result<RankRequest, RequestError> {
    let req: RankRequest = serde_json::from_str(line).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => RequestError::Invalid(e.to_string()),
        _ => RequestError::Parse(e.to_string()),
    })?;
    if req.candidates.is_empty() {
        return Err(RequestError::Invalid("candidates must be nonempty".into()));
    }
    Ok(req)
}

/// Scores every candidate and orders them by descending final score, ties
/// by ascending talent id. Unknown ids score through the unknown slot.
pub fn rank(model: &RankModel, req: &RankRequest) -> Result<Vec<Ranked>, RequestError> {
    let job_id = req.job_id.clone().unwrap_or_default();
    let records: Vec<InteractionRecord> = req
        .candidates
        .iter()
        .map(|c| InteractionRecord {
            recruiter_id: req.recruiter_id.clone(),
            role: req.role,
            query_id: req.query_id.clone(),
            talent_id: c.talent_id.clone(),
            job_id: job_id.clone(),
            jd_text: req.jd_text.clone(),
            resume_text: c.resume_text.clone(),
            history_talent_ids: req.history_talent_ids.clone(),
            session_id: String::new(),
            label_click: 0,
            label_apply: 0,
            label_relevant: 0,
            timestamp: 0,
        })
        .collect();
    let preds = model
        .predict(&records)
        .map_err(|e| RequestError::Internal(e.to_string()))?;
    let mut out: Vec<Ranked> = req
        .candidates
        .iter()
        .zip(preds)
        .map(|(c, p)| Ranked {
            talent_id: c.talent_id.clone(),
            p_ctr: p.p_ctr,
            p_cvr: p.p_cvr,
            p_relv: p.p_relv,
            final_score: p.final_score,
        })
        .collect();
    out.sort_by(|a, b| {
        b.final_score
            .total_cmp(&a.final_score)
            .then_with(|| a.talent_id.cmp(&b.talent_id))
    });
    Ok(out)
}

fn num(x: f64) -> String {
    format!("{x:.8e}")
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

pub fn format_response(results: &[Ranked]) -> String {
    let items: Vec<String> = results
        .iter()
        .map(|r| {
            format!(
                "{{\"talent_id\":{},\"p_ctr\":{},\"p_cvr\":{},\"p_relv\":{},\"final_score\":{}}}",
                json_string(&r.talent_id),
                num(r.p_ctr),
                num(r.p_cvr),
                r.p_relv.map_or("null".to_string(), num),
                num(r.final_score)
            )
        })
        .collect();
    format!("{{\"results\":[{}]}}", items.join(","))
}

pub fn format_error(e: &RequestError) -> String {
    format!(
        "{{\"code\":{},\"message\":{}}}",
        json_string(e.code()),
        json_string(&e.to_string())
    )
}

/// Full request-line to response-line mapping.
pub fn handle_line(model: &RankModel, line: &str) -> String {
    match parse_request(line).and_then(|req| rank(model, &req)) {
        Ok(results) => format_response(&results),
        Err(e) => format_error(&e),
    }
}

fn serve_connection(model: &RankModel, stream: TcpStream) -> std::io::Result<()> {
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            return Ok(());
        }
        let response = match std::str::from_utf8(&buf) {
            Ok(line) if line.trim().is_empty() => continue,
            Ok(line) => handle_line(model, line.trim_end()),
            Err(e) => format_error(&RequestError::Parse(format!("invalid UTF-8: {e}"))),
        };
        writer.write_all(response.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
}

/// Listening socket plus the frozen model shared by all connections.
pub struct Server {
    listener: TcpListener,
    model: Arc<RankModel>,
}

impl Server {
    pub fn bind(model: Arc<RankModel>, addr: impl ToSocketAddrs) -> std::io::Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            model,
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections forever, one thread each.
    pub fn serve(self) -> std::io::Result<()> {
        for stream in self.listener.incoming() {
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let model = Arc::clone(&self.model);
            std::thread::spawn(move || {
                let peer = stream.peer_addr().ok();
                if let Err(e) = serve_connection(&model, stream) {
                    log::debug!("connection {peer:?} closed: {e}");
                }
            });
        }
        Ok(())
    }

    pub fn spawn(self) -> JoinHandle<std::io::Result<()>> {
        std::thread::spawn(move || self.serve())
    }
}
