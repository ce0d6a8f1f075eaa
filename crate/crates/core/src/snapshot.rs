//! Persistable model state: everything online inference and scoring need
//! from a trained chain.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crf::{CrfState, History, Hyperparameters, TopicId};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// One nonzero l_wk entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordTopicCount {
    pub word: usize,
    pub topic: TopicId,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub format_version: u32,
    pub vocab_size: usize,
    pub hyperparameters: Hyperparameters,
    pub chain: usize,
    pub seed: u64,
    /// Documents folded into the counts so far.
    pub documents_seen: usize,
    /// Active topic ids, ascending.
    pub topics: Vec<TopicId>,
    /// Sparse l_wk.
    pub word_topic: Vec<WordTopicCount>,
    /// m_·k, aligned with `topics`.
    pub tables: Vec<u64>,
    /// m_{1:J,k}, aligned with `topics`.
    pub cumulative_tables: Vec<u64>,
    /// m_{J,k} of the most recent document, aligned with `topics`.
    pub last_doc_tables: Vec<u32>,
}

impl ModelSnapshot {
    /// Freezes a state, relabelling its active topics as `0..K` in id order.
    pub fn from_state(state: &CrfState, hyperparameters: Hyperparameters, chain: usize, seed: u64) -> Self {
        let active: Vec<TopicId> = state.active_topics().collect();
        let last = state.num_docs().checked_sub(1);
        let mut word_topic = Vec::new();
        let mut tables = Vec::with_capacity(active.len());
        let mut cumulative_tables = Vec::with_capacity(active.len());
        let mut last_doc_tables = Vec::with_capacity(active.len());
        for (new_id, &k) in active.iter().enumerate() {
            for w in 0..state.vocab_size() {
                let count = state.word_count(w, k);
                if count > 0 {
                    word_topic.push(WordTopicCount {
                        word: w,
                        topic: new_id,
                        count,
                    });
                }
            }
            tables.push(state.topic_tables(k));
            cumulative_tables.push(match last {
                Some(j) => state.tables_through(j, k),
                None => state.history().tables.get(&k).copied().unwrap_or(0),
            });
            last_doc_tables.push(match last {
                Some(j) => state.tables_in_doc(j, k),
                None => state.history().last_doc_tables.get(&k).copied().unwrap_or(0),
            });
        }
        word_topic.sort_by_key(|e| (e.topic, e.word));
        ModelSnapshot {
            format_version: FORMAT_VERSION,
            vocab_size: state.vocab_size(),
            hyperparameters,
            chain,
            seed,
            documents_seen: state.num_docs(),
            topics: (0..active.len()).collect(),
            word_topic,
            tables,
            cumulative_tables,
            last_doc_tables,
        }
    }

    pub fn num_topics(&self) -> usize {
        self.topics.len()
    }

    pub fn total_tokens(&self) -> u64 {
        self.word_topic.iter().map(|e| u64::from(e.count)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(format!("snapshot: {msg}")));
        if self.format_version != FORMAT_VERSION {
            return bad(format!("unsupported format_version {}", self.format_version));
        }
        self.hyperparameters.validate()?;
        let k = self.topics.len();
        if self.tables.len() != k || self.cumulative_tables.len() != k || self.last_doc_tables.len() != k {
            return bad("per-topic vectors differ in length".into());
        }
        if self.topics.windows(2).any(|w| w[0] >= w[1]) {
            return bad("topic ids must be strictly increasing".into());
        }
        for e in &self.word_topic {
            if e.word >= self.vocab_size {
                return Err(Error::WordOutOfRange {
                    id: e.word,
                    vocab_size: self.vocab_size,
                });
            }
            if self.topics.binary_search(&e.topic).is_err() {
                return bad(format!("word count for unknown topic {}", e.topic));
            }
        }
        Ok(())
    }

    /// Counts as history for a state continuing after the snapshot's
    /// documents.
    pub fn history(&self) -> History {
        let mut word_topic: BTreeMap<TopicId, Vec<u32>> =
            self.topics.iter().map(|&k| (k, vec![0; self.vocab_size])).collect();
        for e in &self.word_topic {
            if let Some(row) = word_topic.get_mut(&e.topic) {
                row[e.word] += e.count;
            }
        }
        let tables = self
            .topics
            .iter()
            .zip(&self.cumulative_tables)
            .map(|(&k, &m)| (k, m))
            .collect();
        let last_doc_tables = self
            .topics
            .iter()
            .zip(&self.last_doc_tables)
            .filter(|(_, &m)| m > 0)
            .map(|(&k, &m)| (k, m))
            .collect();
        History {
            word_topic,
            tables,
            last_doc_tables,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let snap: ModelSnapshot = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?;
        snap.validate()?;
        Ok(snap)
    }
}
