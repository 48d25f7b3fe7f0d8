use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::heads::Labels;

/// Recruiter role category.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    SA,
    SG,
    TL,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::SA, Role::SG, Role::TL];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::SA => "SA",
            Role::SG => "SG",
            Role::TL => "TL",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| DataError::Invalid(format!("unknown role `{s}`")))
    }
}

/// One exposure of a talent to a recruiter, with its funnel labels.
/// Field order is the serialization order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub recruiter_id: String,
    pub role: Role,
    pub query_id: String,
    pub talent_id: String,
    pub job_id: String,
    pub jd_text: String,
    pub resume_text: String,
    /// Newest first.
    pub history_talent_ids: Vec<String>,
    pub session_id: String,
    pub label_click: u8,
    pub label_apply: u8,
    pub label_relevant: u8,
    pub timestamp: i64,
}

impl InteractionRecord {
    pub fn validate(&self) -> Result<(), DataError> {
        for (name, v) in [
            ("label_click", self.label_click),
            ("label_apply", self.label_apply),
            ("label_relevant", self.label_relevant),
        ] {
            if v > 1 {
                return Err(DataError::Invalid(format!("{name} must be 0 or 1, got {v}")));
            }
        }
        if self.label_apply > self.label_click {
            return Err(DataError::Invalid(format!(
                "session {} talent {}: apply without click",
                self.session_id, self.talent_id
            )));
        }
        Ok(())
    }

    pub fn labels(&self) -> Labels {
        Labels {
            click: self.label_click == 1,
            apply: self.label_apply == 1,
            relevant: self.label_relevant == 1,
        }
    }
}

pub fn read_jsonl<R: BufRead>(reader: R, name: &str) -> Result<Vec<InteractionRecord>, DataError> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| DataError::Io(format!("{name}: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InteractionRecord = serde_json::from_str(&line)
            .map_err(|e| DataError::Invalid(format!("{name}:{}: {e}", n + 1)))?;
        rec.validate()
            .map_err(|e| DataError::Invalid(format!("{name}:{}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_jsonl(path: &Path) -> Result<Vec<InteractionRecord>, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    read_jsonl(std::io::BufReader::new(file), &path.display().to_string())
}

pub fn write_jsonl<W: Write>(mut w: W, records: &[InteractionRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}
