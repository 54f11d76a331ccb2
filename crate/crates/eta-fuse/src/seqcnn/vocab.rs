//! Dictionary encoding of raw id tokens.
//!
//! Index 0 is the reserved padding token and index 1 the out-of-vocabulary
//! row; known ids are assigned in sorted order from index 2, so a vocabulary
//! built from the same id set is always identical.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Reserved raw id whose token is the padding index.
pub const PAD_RAW_ID: u64 = u64::MAX;
pub const PAD: usize = 0;
pub const OOV: usize = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    ids: Vec<u64>,
    lookup: HashMap<u64, usize>,
}

/// Wire form: only the sorted id list; the lookup map is rebuilt on the
/// way in.
#[derive(Serialize, Deserialize)]
struct VocabRepr {
    ids: Vec<u64>,
}

impl From<VocabRepr> for Vocab {
    fn from(repr: VocabRepr) -> Self {
        let mut v = Vocab {
            ids: repr.ids,
            lookup: HashMap::new(),
        };
        v.rebuild_lookup();
        v
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr { ids: v.ids }
    }
}

impl Vocab {
    pub fn build(raw_ids: impl IntoIterator<Item = u64>) -> Self {
        let mut ids: Vec<u64> = raw_ids.into_iter().filter(|&id| id != PAD_RAW_ID).collect();
        ids.sort_unstable();
        ids.dedup();
        let mut v = Vocab {
            ids,
            lookup: HashMap::new(),
        };
        v.rebuild_lookup();
        v
    }

    fn rebuild_lookup(&mut self) {
        self.lookup = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i + 2))
            .collect();
    }

    pub fn encode(&self, raw: u64) -> usize {
        if raw == PAD_RAW_ID {
            return PAD;
        }
        self.lookup.get(&raw).copied().unwrap_or(OOV)
    }

    /// Table size including the PAD and OOV rows.
    pub fn size(&self) -> usize {
        self.ids.len() + 2
    }
}
