use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Recruiter,
    Query,
    Talent,
    Role,
    Job,
}

/// String id → dense index. Index 0 is reserved for unknown ids, so a
/// vocabulary with `capacity` rows holds at most `capacity - 1` known ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    kind: EntityKind,
    capacity: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    kind: EntityKind,
    capacity: usize,
    ids: Vec<String>,
}

impl From<VocabRepr> for Vocabulary {
    fn from(r: VocabRepr) -> Self {
        let index = r
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i + 1))
            .collect();
        Self {
            kind: r.kind,
            capacity: r.capacity,
            ids: r.ids,
            index,
        }
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        Self {
            kind: v.kind,
            capacity: v.capacity,
            ids: v.ids,
        }
    }
}

impl Vocabulary {
    pub const UNKNOWN: usize = 0;

    pub fn new(kind: EntityKind, capacity: usize) -> Self {
        Self {
            kind,
            capacity,
            ids: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn kind(&self) -> EntityKind {
        self.kind
    }

    /// Number of embedding rows backing this vocabulary.
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Known ids plus the unknown slot.
    pub fn len(&self) -> usize {
        self.ids.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Adds `id` if there is room and returns its index; a full vocabulary
    /// returns [`Vocabulary::UNKNOWN`] for new ids.
    pub fn insert(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        if self.ids.len() + 1 >= self.capacity {
            return Self::UNKNOWN;
        }
        self.ids.push(id.to_string());
        let i = self.ids.len();
        self.index.insert(id.to_string(), i);
        i
    }

    pub fn index(&self, id: &str) -> usize {
        self.index.get(id).copied().unwrap_or(Self::UNKNOWN)
    }

    pub fn id(&self, index: usize) -> Option<&str> {
        index
            .checked_sub(1)
            .and_then(|i| self.ids.get(i))
            .map(String::as_str)
    }
}
