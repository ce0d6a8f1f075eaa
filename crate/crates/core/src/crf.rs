//! Chinese-restaurant-franchise seating state shared by the dynamic and the
//! plain HDP, plus the Dirichlet-multinomial likelihood primitives.
//!
//! A [`CrfState`] owns a run of consecutive documents. It may also carry a
//! [`History`]: counts frozen from documents that came before it and are
//! no longer stored token by token. Batch training uses an empty history;
//! online inference puts a single new document on top of a model snapshot.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::ln_rising;

pub type TopicId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Topic popularity depends on the current and previous document.
    Dynamic,
    /// Baseline HDP: documents are exchangeable.
    Plain,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Dynamic => "dhdp",
            ModelKind::Plain => "hdp",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dhdp" | "dynamic" => Ok(ModelKind::Dynamic),
            "hdp" | "plain" => Ok(ModelKind::Plain),
            other => Err(Error::InvalidArgument(format!(
                "unknown model {other:?}, expected dhdp or hdp"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// New-table concentration.
    pub alpha: f64,
    /// New-topic concentration.
    pub gamma: f64,
    /// Symmetric Dirichlet parameter of the topic-word distributions.
    pub eta: f64,
    /// Weight of the whole-history table counts. Ignored by the plain HDP.
    pub delta: f64,
    pub model: ModelKind,
}

impl Hyperparameters {
    pub fn new(alpha: f64, gamma: f64, eta: f64, delta: f64, model: ModelKind) -> Result<Self> {
        let h = Hyperparameters {
            alpha,
            gamma,
            eta,
            delta,
            model,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("gamma", self.gamma), ("eta", self.eta)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "delta must be >= 0, got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// Either an active topic or a fresh one drawn from the base measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TopicChoice {
    Existing(TopicId),
    New,
}

impl TopicChoice {
    pub fn existing(self) -> Option<TopicId> {
        match self {
            TopicChoice::Existing(k) => Some(k),
            TopicChoice::New => None,
        }
    }
}

/// Counts of documents preceding the state's own documents.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    /// Word counts per topic; every vector has the vocabulary's length.
    pub word_topic: BTreeMap<TopicId, Vec<u32>>,
    /// Tables per topic over all history documents.
    pub tables: BTreeMap<TopicId, u64>,
    /// Tables per topic in the last history document.
    pub last_doc_tables: BTreeMap<TopicId, u32>,
}

impl History {
    fn topics(&self) -> BTreeSet<TopicId> {
        self.word_topic
            .keys()
            .chain(self.tables.keys())
            .chain(self.last_doc_tables.keys())
            .copied()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Fenwick {
    tree: Vec<i64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick { tree: vec![0; n + 1] }
    }

    fn add(&mut self, i: usize, delta: i64) {
        let mut i = i + 1;
        while i < self.tree.len() {
            self.tree[i] += delta;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum over positions `0..=i`.
    fn prefix(&self, i: usize) -> i64 {
        let mut i = (i + 1).min(self.tree.len() - 1);
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
struct TopicCounts {
    /// l_wk, history included.
    words: Vec<u32>,
    /// l_·k, history included.
    tokens: u64,
    /// m_·k, history included.
    tables: u64,
    /// Tables in the history documents.
    history_tables: u64,
    /// Tables per own document.
    per_doc: Fenwick,
}

/// Topic counts indexed directly by id, with the active ids kept sorted.
#[derive(Debug, Clone, Default, PartialEq)]
struct TopicSlab {
    slots: Vec<Option<TopicCounts>>,
    active: Vec<TopicId>,
}

impl TopicSlab {
    fn get(&self, k: &TopicId) -> Option<&TopicCounts> {
        self.slots.get(*k).and_then(Option::as_ref)
    }

    fn get_mut(&mut self, k: &TopicId) -> Option<&mut TopicCounts> {
        self.slots.get_mut(*k).and_then(Option::as_mut)
    }

    fn contains_key(&self, k: &TopicId) -> bool {
        self.get(k).is_some()
    }

    fn keys(&self) -> std::slice::Iter<'_, TopicId> {
        self.active.iter()
    }

    fn values(&self) -> impl Iterator<Item = &TopicCounts> {
        self.active
            .iter()
            .map(|k| self.slots[*k].as_ref().expect("active slot"))
    }

    fn len(&self) -> usize {
        self.active.len()
    }

    /// Smallest id without a topic; ids are recycled so the slab stays as
    /// small as the largest live topic count.
    fn first_free(&self) -> TopicId {
        // sorted distinct ids: active[i] == i exactly on a prefix
        let (mut lo, mut hi) = (0, self.active.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.active[mid] == mid {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo
    }

    fn insert(&mut self, k: TopicId, c: TopicCounts) {
        if self.slots.len() <= k {
            self.slots.resize_with(k + 1, || None);
        }
        if self.slots[k].replace(c).is_none() {
            let pos = self.active.partition_point(|&x| x < k);
            self.active.insert(pos, k);
        }
    }

    fn remove(&mut self, k: &TopicId) {
        if self.slots.get_mut(*k).and_then(Option::take).is_some() {
            let pos = self.active.partition_point(|x| x < k);
            self.active.remove(pos);
        }
    }
}

impl std::ops::Index<&TopicId> for TopicSlab {
    type Output = TopicCounts;

    fn index(&self, k: &TopicId) -> &TopicCounts {
        self.get(k).expect("active topic")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TableSlot {
    Live {
        topic: TopicId,
        count: u32,
    },
    /// Tokens stay seated but the table's topic is being resampled.
    Detached {
        count: u32,
    },
    Retired,
}

#[derive(Debug, Clone, PartialEq)]
struct DocState {
    words: Vec<usize>,
    table_of: Vec<Option<usize>>,
    tables: Vec<TableSlot>,
    /// m_jk for this document.
    topic_tables: BTreeMap<TopicId, u32>,
    seated: usize,
}

impl DocState {
    fn new(words: Vec<usize>) -> Self {
        DocState {
            table_of: vec![None; words.len()],
            words,
            tables: Vec::new(),
            topic_tables: BTreeMap::new(),
            seated: 0,
        }
    }
}

/// What happened when a token left its table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Unseated {
    pub table: usize,
    pub topic: TopicId,
    pub table_removed: bool,
    pub topic_removed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetachedTable {
    pub table: usize,
    pub previous_topic: TopicId,
    pub topic_removed: bool,
    pub words: Vec<usize>,
}

/// Seating state of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfState {
    vocab_size: usize,
    docs: Vec<DocState>,
    topics: TopicSlab,
    total_tables: u64,
    total_tokens: u64,
    history: History,
    detached: Option<(usize, usize)>,
}

impl CrfState {
    /// A state with every token unseated.
    pub fn new(vocab_size: usize, documents: Vec<Vec<usize>>) -> Result<Self> {
        Self::with_history(vocab_size, documents, History::default())
    }

    pub fn with_history(vocab_size: usize, documents: Vec<Vec<usize>>, history: History) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::InvalidArgument("vocabulary size must be >= 1".into()));
        }
        for doc in &documents {
            if let Some(&id) = doc.iter().find(|&&w| w >= vocab_size) {
                return Err(Error::WordOutOfRange { id, vocab_size });
            }
        }
        let n_docs = documents.len();
        let mut topics = TopicSlab::default();
        let mut total_tables = 0;
        let mut total_tokens = 0;
        for k in history.topics() {
            let words = match history.word_topic.get(&k) {
                Some(w) if w.len() == vocab_size => w.clone(),
                Some(w) => {
                    return Err(Error::VocabularyMismatch {
                        model: w.len(),
                        corpus: vocab_size,
                    })
                }
                None => vec![0; vocab_size],
            };
            let tokens: u64 = words.iter().map(|&c| u64::from(c)).sum();
            let tables = history.tables.get(&k).copied().unwrap_or(0);
            let in_last = u64::from(history.last_doc_tables.get(&k).copied().unwrap_or(0));
            if in_last > tables {
                return Err(Error::Contract(format!(
                    "topic {k}: last document has {in_last} tables but history only {tables}"
                )));
            }
            if tables == 0 && tokens == 0 {
                continue;
            }
            total_tables += tables;
            total_tokens += tokens;
            topics.insert(
                k,
                TopicCounts {
                    words,
                    tokens,
                    tables,
                    history_tables: tables,
                    per_doc: Fenwick::new(n_docs),
                },
            );
        }
        Ok(CrfState {
            vocab_size,
            docs: documents.into_iter().map(DocState::new).collect(),
            topics,
            total_tables,
            total_tokens,
            history,
            detached: None,
        })
    }

    /// Builds a fully seated state from raw assignments: `tables[j][i]` is
    /// the table of token `i` in document `j` and `table_topics[j][t]` the
    /// topic of table `t`. Every listed table must receive a token.
    pub fn from_assignments(
        vocab_size: usize,
        documents: Vec<Vec<usize>>,
        tables: &[Vec<usize>],
        table_topics: &[Vec<TopicId>],
    ) -> Result<Self> {
        if tables.len() != documents.len() || table_topics.len() != documents.len() {
            return Err(Error::InvalidArgument(
                "assignment shape does not match documents".into(),
            ));
        }
        let mut state = Self::new(vocab_size, documents)?;
        for j in 0..state.docs.len() {
            if tables[j].len() != state.docs[j].words.len() {
                return Err(Error::InvalidArgument(format!(
                    "document {j}: one table per token required"
                )));
            }
            let n_tables = table_topics[j].len();
            let mut slots = vec![0u32; n_tables];
            for &t in &tables[j] {
                *slots
                    .get_mut(t)
                    .ok_or_else(|| Error::InvalidArgument(format!("document {j}: table {t} has no topic")))? += 1;
            }
            if slots.contains(&0) {
                return Err(Error::InvalidArgument(format!("document {j}: empty table")));
            }
            state.docs[j].tables = vec![TableSlot::Retired; n_tables];
            for (t, &k) in table_topics[j].iter().enumerate() {
                state.ensure_topic(k);
                state.docs[j].tables[t] = TableSlot::Live { topic: k, count: 0 };
                state.add_table_counts(j, k);
            }
            for (i, &t) in tables[j].iter().enumerate() {
                state.seat_token(j, i, t)?;
            }
        }
        Ok(state)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn doc_words(&self, j: usize) -> &[usize] {
        &self.docs[j].words
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn table_of(&self, j: usize, i: usize) -> Option<usize> {
        self.docs[j].table_of[i]
    }

    /// Topic of a live table.
    pub fn table_topic(&self, j: usize, t: usize) -> Option<TopicId> {
        match self.docs[j].tables.get(t) {
            Some(TableSlot::Live { topic, .. }) => Some(*topic),
            _ => None,
        }
    }

    /// n_jt; zero for retired tables.
    pub fn table_count(&self, j: usize, t: usize) -> u32 {
        match self.docs[j].tables.get(t) {
            Some(TableSlot::Live { count, .. } | TableSlot::Detached { count }) => *count,
            _ => 0,
        }
    }

    /// Live (non-retired, attached) tables of document `j` with their topics and sizes.
    pub fn live_tables(&self, j: usize) -> impl Iterator<Item = (usize, TopicId, u32)> + '_ {
        self.docs[j].tables.iter().enumerate().filter_map(|(t, s)| match *s {
            TableSlot::Live { topic, count } => Some((t, topic, count)),
            _ => None,
        })
    }

    pub fn num_live_tables(&self, j: usize) -> usize {
        self.live_tables(j).count()
    }

    /// Words seated at table `t` of document `j`.
    pub fn table_words(&self, j: usize, t: usize) -> Vec<usize> {
        let d = &self.docs[j];
        d.table_of
            .iter()
            .zip(&d.words)
            .filter(|(tab, _)| **tab == Some(t))
            .map(|(_, &w)| w)
            .collect()
    }

    pub fn is_seated(&self, j: usize, i: usize) -> bool {
        self.docs[j].table_of[i].is_some()
    }

    pub fn seated_tokens(&self, j: usize) -> usize {
        self.docs[j].seated
    }

    pub fn active_topics(&self) -> impl Iterator<Item = TopicId> + '_ {
        self.topics.keys().copied()
    }

    pub fn num_active_topics(&self) -> usize {
        self.topics.len()
    }

    pub fn is_active(&self, k: TopicId) -> bool {
        self.topics.contains_key(&k)
    }

    /// One past the largest active id.
    pub fn topic_id_bound(&self) -> TopicId {
        self.topics.active.last().map_or(0, |&k| k + 1)
    }

    /// Id the next fresh topic will receive: the smallest free one.
    pub fn next_topic_id(&self) -> TopicId {
        self.topics.first_free()
    }

    /// l_wk.
    pub fn word_count(&self, w: usize, k: TopicId) -> u32 {
        self.topics.get(&k).map_or(0, |c| c.words[w])
    }

    /// l_·k.
    pub fn topic_tokens(&self, k: TopicId) -> u64 {
        self.topics.get(&k).map_or(0, |c| c.tokens)
    }

    /// m_·k over every document known to the state, history included.
    pub fn topic_tables(&self, k: TopicId) -> u64 {
        self.topics.get(&k).map_or(0, |c| c.tables)
    }

    /// m_··.
    pub fn total_tables(&self) -> u64 {
        self.total_tables
    }

    /// Σ_k l_·k.
    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    /// m_jk.
    pub fn tables_in_doc(&self, j: usize, k: TopicId) -> u32 {
        self.docs[j].topic_tables.get(&k).copied().unwrap_or(0)
    }

    /// Per-topic table counts of document `j`.
    pub fn doc_topic_tables(&self, j: usize) -> &BTreeMap<TopicId, u32> {
        &self.docs[j].topic_tables
    }

    /// m_{j-1,k}; for the first own document this is the history's last document.
    pub fn tables_in_previous(&self, j: usize, k: TopicId) -> u32 {
        if j == 0 {
            self.history.last_doc_tables.get(&k).copied().unwrap_or(0)
        } else {
            self.tables_in_doc(j - 1, k)
        }
    }

    /// m_{1:j,k}: tables serving `k` in the history and in own documents `0..=j`.
    pub fn tables_through(&self, j: usize, k: TopicId) -> u64 {
        self.topics
            .get(&k)
            .map_or(0, |c| c.history_tables + c.per_doc.prefix(j) as u64)
    }

    /// m_{1:j,·}.
    pub fn total_tables_through(&self, j: usize) -> u64 {
        self.topics.keys().map(|&k| self.tables_through(j, k)).sum()
    }

    fn ensure_topic(&mut self, k: TopicId) {
        if self.topics.contains_key(&k) {
            return;
        }
        let (v, n) = (self.vocab_size, self.docs.len());
        self.topics.insert(
            k,
            TopicCounts {
                words: vec![0; v],
                tokens: 0,
                tables: 0,
                history_tables: 0,
                per_doc: Fenwick::new(n),
            },
        );
    }

    fn resolve(&mut self, choice: TopicChoice) -> Result<TopicId> {
        match choice {
            TopicChoice::Existing(k) if self.topics.contains_key(&k) => Ok(k),
            TopicChoice::Existing(k) => Err(Error::Contract(format!("topic {k} is not active"))),
            TopicChoice::New => {
                let k = self.topics.first_free();
                self.ensure_topic(k);
                Ok(k)
            }
        }
    }

    fn add_table_counts(&mut self, j: usize, k: TopicId) {
        let c = self.topics.get_mut(&k).expect("active topic");
        c.tables += 1;
        c.per_doc.add(j, 1);
        self.total_tables += 1;
        *self.docs[j].topic_tables.entry(k).or_insert(0) += 1;
    }

    /// Removes one table of `k` in `j`; returns whether `k` was deactivated.
    fn remove_table_counts(&mut self, j: usize, k: TopicId) -> bool {
        let c = self.topics.get_mut(&k).expect("active topic");
        c.tables -= 1;
        c.per_doc.add(j, -1);
        self.total_tables -= 1;
        let m = self.docs[j].topic_tables.get_mut(&k).expect("table counted");
        *m -= 1;
        if *m == 0 {
            self.docs[j].topic_tables.remove(&k);
        }
        self.maybe_deactivate(k)
    }

    fn maybe_deactivate(&mut self, k: TopicId) -> bool {
        let c = &self.topics[&k];
        if c.tables == 0 && c.tokens == 0 {
            self.topics.remove(&k);
            true
        } else {
            false
        }
    }

    fn add_word(&mut self, w: usize, k: TopicId) {
        let c = self.topics.get_mut(&k).expect("active topic");
        c.words[w] += 1;
        c.tokens += 1;
        self.total_tokens += 1;
    }

    fn remove_word(&mut self, w: usize, k: TopicId) {
        let c = self.topics.get_mut(&k).expect("active topic");
        c.words[w] -= 1;
        c.tokens -= 1;
        self.total_tokens -= 1;
    }

    fn check_token(&self, j: usize, i: usize) -> Result<()> {
        if j >= self.docs.len() || i >= self.docs[j].words.len() {
            return Err(Error::Contract(format!("token ({j}, {i}) does not exist")));
        }
        Ok(())
    }

    /// Seats an unseated token at live table `t`.
    pub fn seat_token(&mut self, j: usize, i: usize, t: usize) -> Result<()> {
        self.check_token(j, i)?;
        if self.docs[j].table_of[i].is_some() {
            return Err(Error::Contract(format!("token ({j}, {i}) is already seated")));
        }
        let (topic, count) = match self.docs[j].tables.get(t) {
            Some(TableSlot::Live { topic, count }) => (*topic, *count),
            _ => return Err(Error::Contract(format!("table {t} of document {j} is not live"))),
        };
        self.docs[j].tables[t] = TableSlot::Live {
            topic,
            count: count + 1,
        };
        self.docs[j].table_of[i] = Some(t);
        self.docs[j].seated += 1;
        let w = self.docs[j].words[i];
        self.add_word(w, topic);
        Ok(())
    }

    /// Opens a table serving `choice`, seats the token there and returns the
    /// table index and its topic.
    pub fn seat_token_new_table(&mut self, j: usize, i: usize, choice: TopicChoice) -> Result<(usize, TopicId)> {
        self.check_token(j, i)?;
        if self.docs[j].table_of[i].is_some() {
            return Err(Error::Contract(format!("token ({j}, {i}) is already seated")));
        }
        let k = self.resolve(choice)?;
        let t = self.docs[j].tables.len();
        self.docs[j].tables.push(TableSlot::Live { topic: k, count: 0 });
        self.add_table_counts(j, k);
        self.seat_token(j, i, t)?;
        Ok((t, k))
    }

    /// Removes a token from its table. A table left empty is retired and a
    /// topic left without tables and tokens is deactivated.
    pub fn unseat_token(&mut self, j: usize, i: usize) -> Result<Unseated> {
        self.check_token(j, i)?;
        let t = self.docs[j].table_of[i].ok_or_else(|| Error::Contract(format!("token ({j}, {i}) is not seated")))?;
        let (topic, count) = match self.docs[j].tables[t] {
            TableSlot::Live { topic, count } => (topic, count),
            _ => return Err(Error::Contract(format!("table {t} of document {j} is detached"))),
        };
        let w = self.docs[j].words[i];
        self.docs[j].table_of[i] = None;
        self.docs[j].seated -= 1;
        self.remove_word(w, topic);
        let table_removed = count == 1;
        let topic_removed = if table_removed {
            self.docs[j].tables[t] = TableSlot::Retired;
            self.remove_table_counts(j, topic)
        } else {
            self.docs[j].tables[t] = TableSlot::Live {
                topic,
                count: count - 1,
            };
            false
        };
        Ok(Unseated {
            table: t,
            topic,
            table_removed,
            topic_removed,
        })
    }

    /// Takes a table's block of words and its table out of all topic counts,
    /// leaving the tokens seated. Only one table may be detached at a time.
    pub fn detach_table(&mut self, j: usize, t: usize) -> Result<DetachedTable> {
        if let Some((dj, dt)) = self.detached {
            return Err(Error::Contract(format!(
                "table {dt} of document {dj} is already detached"
            )));
        }
        let (topic, count) = match self.docs.get(j).and_then(|d| d.tables.get(t)) {
            Some(TableSlot::Live { topic, count }) => (*topic, *count),
            _ => return Err(Error::Contract(format!("table {t} of document {j} is not live"))),
        };
        let words = self.table_words(j, t);
        for &w in &words {
            self.remove_word(w, topic);
        }
        self.docs[j].tables[t] = TableSlot::Detached { count };
        let topic_removed = self.remove_table_counts(j, topic);
        self.detached = Some((j, t));
        Ok(DetachedTable {
            table: t,
            previous_topic: topic,
            topic_removed,
            words,
        })
    }

    /// Gives the detached table a topic and restores its counts.
    pub fn attach_table(&mut self, j: usize, t: usize, choice: TopicChoice) -> Result<TopicId> {
        if self.detached != Some((j, t)) {
            return Err(Error::Contract(format!("table {t} of document {j} is not detached")));
        }
        let count = match self.docs[j].tables[t] {
            TableSlot::Detached { count } => count,
            _ => unreachable!("detached marker out of sync"),
        };
        let k = self.resolve(choice)?;
        self.docs[j].tables[t] = TableSlot::Live { topic: k, count };
        self.add_table_counts(j, k);
        for w in self.table_words(j, t) {
            self.add_word(w, k);
        }
        self.detached = None;
        Ok(k)
    }

    /// Renumbers the live tables of document `j` densely, dropping retired
    /// slots. Table indices change; token assignments follow.
    pub fn compact_doc(&mut self, j: usize) -> Result<()> {
        if self.detached.is_some_and(|(dj, _)| dj == j) {
            return Err(Error::Contract(format!("document {j} has a detached table")));
        }
        let d = &mut self.docs[j];
        let mut remap = vec![None; d.tables.len()];
        let mut kept = Vec::new();
        for (t, slot) in d.tables.iter().enumerate() {
            if let TableSlot::Live { .. } = slot {
                remap[t] = Some(kept.len());
                kept.push(*slot);
            }
        }
        d.tables = kept;
        for tab in d.table_of.iter_mut().flatten() {
            *tab = remap[*tab].expect("seated token on a live table");
        }
        Ok(())
    }

    /// log p(x | t, k) with the topic-word distributions integrated out.
    pub fn log_likelihood(&self, eta: f64) -> f64 {
        let v_eta = self.vocab_size as f64 * eta;
        self.topics
            .values()
            .map(|c| {
                let words: f64 = c.words.iter().filter(|&&n| n > 0).map(|&n| ln_rising(eta, n)).sum();
                words - ln_rising(v_eta, c.tokens as u32)
            })
            .sum()
    }

    /// Recounts everything from raw assignments and compares with the cached
    /// counts. Returns a description of the first mismatch.
    pub fn check_consistency(&self) -> std::result::Result<(), String> {
        let v = self.vocab_size;
        let mut words: BTreeMap<TopicId, Vec<u32>> = BTreeMap::new();
        let mut tables: BTreeMap<TopicId, u64> = BTreeMap::new();
        let mut history_tables: BTreeMap<TopicId, u64> = BTreeMap::new();
        for (&k, w) in &self.history.word_topic {
            words.insert(k, w.clone());
        }
        for (&k, &m) in &self.history.tables {
            *tables.entry(k).or_insert(0) += m;
            history_tables.insert(k, m);
        }
        let mut per_doc: Vec<BTreeMap<TopicId, u32>> = Vec::with_capacity(self.docs.len());
        for (j, d) in self.docs.iter().enumerate() {
            let mut counts = vec![0u32; d.tables.len()];
            let mut seated = 0;
            for (i, tab) in d.table_of.iter().enumerate() {
                let Some(t) = *tab else { continue };
                seated += 1;
                let Some(slot) = d.tables.get(t) else {
                    return Err(format!("doc {j} token {i}: table {t} out of range"));
                };
                counts[t] += 1;
                match *slot {
                    TableSlot::Live { topic, .. } => {
                        words.entry(topic).or_insert_with(|| vec![0; v])[d.words[i]] += 1;
                    }
                    TableSlot::Detached { .. } => {}
                    TableSlot::Retired => return Err(format!("doc {j} token {i} sits at retired table {t}")),
                }
            }
            if seated != d.seated {
                return Err(format!("doc {j}: seated {} cached vs {seated}", d.seated));
            }
            let mut mk = BTreeMap::new();
            for (t, slot) in d.tables.iter().enumerate() {
                match *slot {
                    TableSlot::Live { topic, count } => {
                        if count == 0 || count != counts[t] {
                            return Err(format!("doc {j} table {t}: n {count} vs {}", counts[t]));
                        }
                        *mk.entry(topic).or_insert(0u32) += 1;
                        *tables.entry(topic).or_insert(0) += 1;
                    }
                    TableSlot::Detached { count } => {
                        if self.detached != Some((j, t)) || count != counts[t] {
                            return Err(format!("doc {j} table {t}: stray detached table"));
                        }
                    }
                    TableSlot::Retired => {
                        if counts[t] != 0 {
                            return Err(format!("doc {j} table {t}: retired but occupied"));
                        }
                    }
                }
            }
            if mk != d.topic_tables {
                return Err(format!("doc {j}: m_jk {:?} vs {mk:?}", d.topic_tables));
            }
            per_doc.push(mk);
        }
        words.retain(|k, w| w.iter().any(|&c| c > 0) || tables.get(k).copied().unwrap_or(0) > 0);
        let live: BTreeSet<TopicId> = words
            .keys()
            .chain(tables.iter().filter(|(_, &m)| m > 0).map(|(k, _)| k))
            .copied()
            .collect();
        let cached: BTreeSet<TopicId> = self.topics.keys().copied().collect();
        if live != cached {
            return Err(format!("active topics {cached:?} vs {live:?}"));
        }
        let mut total_tables = 0;
        let mut total_tokens = 0;
        for &k in &live {
            let c = &self.topics[&k];
            let w = words.get(&k).cloned().unwrap_or_else(|| vec![0; v]);
            if c.words != w {
                return Err(format!("topic {k}: l_wk mismatch"));
            }
            let tokens: u64 = w.iter().map(|&x| u64::from(x)).sum();
            if c.tokens != tokens {
                return Err(format!("topic {k}: l_.k {} vs {tokens}", c.tokens));
            }
            let m = tables.get(&k).copied().unwrap_or(0);
            if c.tables != m {
                return Err(format!("topic {k}: m_.k {} vs {m}", c.tables));
            }
            if c.history_tables != history_tables.get(&k).copied().unwrap_or(0) {
                return Err(format!("topic {k}: history tables mismatch"));
            }
            let mut cum = c.history_tables;
            for (j, mk) in per_doc.iter().enumerate() {
                cum += u64::from(mk.get(&k).copied().unwrap_or(0));
                if self.tables_through(j, k) != cum {
                    return Err(format!("topic {k}: m_1:{j},k {} vs {cum}", self.tables_through(j, k)));
                }
            }
            total_tables += m;
            total_tokens += tokens;
        }
        if total_tables != self.total_tables || total_tokens != self.total_tokens {
            return Err(format!(
                "totals: m.. {} vs {total_tables}, l.. {} vs {total_tokens}",
                self.total_tables, self.total_tokens
            ));
        }
        if self.topics.contains_key(&self.next_topic_id()) {
            return Err("fresh topic id collides with an active topic".into());
        }
        Ok(())
    }
}

/// Posterior predictive probability of word `w` under topic `k`
/// (`None` = a fresh topic): `(l_wk + η) / (l_·k + Vη)`.
pub fn word_topic_predictive(state: &CrfState, w: usize, k: Option<TopicId>, eta: f64) -> f64 {
    let (lw, lk) = match k {
        Some(k) => (state.word_count(w, k), state.topic_tokens(k)),
        None => (0, 0),
    };
    (f64::from(lw) + eta) / (lk as f64 + state.vocab_size as f64 * eta)
}

/// Log marginal likelihood of a block of words joining topic `k` given the
/// state's counts, which must not already include the block.
pub fn table_block_log_likelihood(state: &CrfState, words: &[usize], k: Option<TopicId>, eta: f64) -> f64 {
    let counts = k.and_then(|k| state.topics.get(&k));
    let word_count = |w: usize| counts.map_or(0, |c| c.words[w]);
    let tokens = counts.map_or(0, |c| c.tokens);
    block_log_likelihood(words, word_count, tokens, state.vocab_size, eta)
}

/// Dirichlet-multinomial log-probability of `words` given prior counts
/// looked up through `word_count` and their total `tokens`.
pub(crate) fn block_log_likelihood(
    words: &[usize],
    word_count: impl Fn(usize) -> u32,
    tokens: u64,
    vocab_size: usize,
    eta: f64,
) -> f64 {
    grouped_log_likelihood(&group_words(words), word_count, tokens, vocab_size, eta)
}

/// A block's distinct words with multiplicities, ascending by word.
pub fn group_words(words: &[usize]) -> Vec<(usize, u32)> {
    let mut sorted = words.to_vec();
    sorted.sort_unstable();
    let mut groups: Vec<(usize, u32)> = Vec::new();
    for w in sorted {
        match groups.last_mut() {
            Some((last, c)) if *last == w => *c += 1,
            _ => groups.push((w, 1)),
        }
    }
    groups
}

/// [`table_block_log_likelihood`] for a block already passed through
/// [`group_words`].
pub fn grouped_block_log_likelihood(state: &CrfState, groups: &[(usize, u32)], k: Option<TopicId>, eta: f64) -> f64 {
    let counts = k.and_then(|k| state.topics.get(&k));
    let word_count = |w: usize| counts.map_or(0, |c| c.words[w]);
    let tokens = counts.map_or(0, |c| c.tokens);
    grouped_log_likelihood(groups, word_count, tokens, state.vocab_size, eta)
}

/// Product of the chain-rule ratios `(l_w + η + c) / (l + Vη + i)`, one log
/// per 32 factors.
fn grouped_log_likelihood(
    groups: &[(usize, u32)],
    word_count: impl Fn(usize) -> u32,
    tokens: u64,
    vocab_size: usize,
    eta: f64,
) -> f64 {
    let denom0 = tokens as f64 + vocab_size as f64 * eta;
    let mut log = 0.0;
    let mut acc = 1.0;
    let mut i = 0u32;
    for &(w, n) in groups {
        let base = f64::from(word_count(w)) + eta;
        for c in 0..n {
            acc *= (base + f64::from(c)) / (denom0 + f64::from(i));
            i += 1;
            if i % 32 == 0 {
                log += acc.ln();
                acc = 1.0;
            }
        }
    }
    log + acc.ln()
}

/// Posterior-mean word distribution of one topic.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicEstimate {
    pub topic: TopicId,
    pub probabilities: Vec<f64>,
}

pub fn topic_estimates(state: &CrfState, eta: f64) -> Vec<TopicEstimate> {
    state
        .active_topics()
        .map(|k| TopicEstimate {
            topic: k,
            probabilities: (0..state.vocab_size)
                .map(|w| word_topic_predictive(state, w, Some(k), eta))
                .collect(),
        })
        .collect()
}
