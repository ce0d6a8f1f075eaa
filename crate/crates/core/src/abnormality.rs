//! Predictive-likelihood abnormality scores of documents processed online.

use std::collections::BTreeMap;

use crate::corpus::{Corpus, ScoreRow};
use crate::crf::{block_log_likelihood, TopicId};
use crate::error::{Error, Result};
use crate::math::log_sum_exp;
use crate::parallel;
use crate::sampler::{check_vocabulary, online_infer, online_rng, DocumentSample};
use crate::snapshot::ModelSnapshot;

/// Which form of the measure to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreKind {
    /// `log p(x_j | x_{1:j-1}) / N_j`, in nats per word.
    #[default]
    PerWordLog,
    /// `p(x_j | x_{1:j-1}) / N_j`; underflows to 0 for all but tiny documents.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub doc_index: usize,
    /// NaN when the document is empty.
    pub score: f64,
    pub n_tokens: usize,
    /// One log predictive likelihood per chain.
    pub chain_log_likelihoods: Vec<f64>,
}

impl ScoreRecord {
    pub fn is_defined(&self) -> bool {
        !self.score.is_nan()
    }

    pub fn row(&self) -> ScoreRow {
        ScoreRow {
            doc_id: self.doc_index,
            score: self.score,
            n_tokens: self.n_tokens,
        }
    }
}

/// Looks up l_wk in a snapshot's sparse table, sorted by (topic, word).
struct SnapshotCounts<'a> {
    snapshot: &'a ModelSnapshot,
    topic_tokens: BTreeMap<TopicId, u64>,
}

impl<'a> SnapshotCounts<'a> {
    fn new(snapshot: &'a ModelSnapshot) -> Self {
        let mut topic_tokens = BTreeMap::new();
        for e in &snapshot.word_topic {
            *topic_tokens.entry(e.topic).or_insert(0) += u64::from(e.count);
        }
        SnapshotCounts { snapshot, topic_tokens }
    }

    fn word_count(&self, w: usize, k: TopicId) -> u32 {
        self.snapshot
            .word_topic
            .binary_search_by_key(&(k, w), |e| (e.topic, e.word))
            .map_or(0, |i| self.snapshot.word_topic[i].count)
    }
}

/// `log p(x_j | t^s, k^s, x_{1:j-1})`: the Dirichlet-multinomial probability
/// of the document's words given their topics, with counts before the
/// document taken from `before`.
pub fn per_sample_log_predictive(before: &ModelSnapshot, sample: &DocumentSample) -> f64 {
    let counts = SnapshotCounts::new(before);
    let mut by_topic: BTreeMap<TopicId, Vec<usize>> = BTreeMap::new();
    for (&w, &k) in sample.words.iter().zip(&sample.topics) {
        by_topic.entry(k).or_default().push(w);
    }
    by_topic
        .iter()
        .map(|(&k, words)| {
            let tokens = counts.topic_tokens.get(&k).copied().unwrap_or(0);
            block_log_likelihood(
                words,
                |w| counts.word_count(w, k),
                tokens,
                before.vocab_size,
                before.hyperparameters.eta,
            )
        })
        .sum()
}

/// Harmonic mean of likelihoods given in log domain:
/// `log S - logsumexp(-log p_s)`.
pub fn harmonic_mean_log(log_ps: &[f64]) -> Result<f64> {
    if log_ps.is_empty() {
        return Err(Error::InvalidArgument("harmonic mean of no samples".into()));
    }
    if log_ps.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(Error::InvalidArgument("log-likelihoods must be finite or -inf".into()));
    }
    if log_ps.contains(&f64::NEG_INFINITY) {
        return Ok(f64::NEG_INFINITY);
    }
    let neg: Vec<f64> = log_ps.iter().map(|x| -x).collect();
    Ok((log_ps.len() as f64).ln() - log_sum_exp(&neg))
}

/// Combines per-chain log-likelihoods of one document into its score.
/// Lower scores are more abnormal.
pub fn abnormality_score(
    doc_index: usize,
    chain_log_likelihoods: Vec<f64>,
    n_tokens: usize,
    kind: ScoreKind,
) -> Result<ScoreRecord> {
    let score = if n_tokens == 0 {
        f64::NAN
    } else {
        let hm = harmonic_mean_log(&chain_log_likelihoods)?;
        match kind {
            ScoreKind::PerWordLog => hm / n_tokens as f64,
            ScoreKind::Literal => hm.exp() / n_tokens as f64,
        }
    };
    Ok(ScoreRecord {
        doc_index,
        score,
        n_tokens,
        chain_log_likelihoods,
    })
}

/// `true` (abnormal) exactly when the score is below the threshold.
/// Undefined scores are never flagged.
pub fn label(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&s| s < threshold).collect()
}

/// Runs online inference over `corpus` document by document for every
/// chain, scoring each document before moving on. Chains run in parallel;
/// each chain's documents are strictly sequential. Returns the scores and
/// each chain's snapshot after the last document.
pub fn score_corpus(
    snapshots: &[ModelSnapshot],
    corpus: &Corpus,
    online_sweeps: usize,
    kind: ScoreKind,
) -> Result<(Vec<ScoreRecord>, Vec<ModelSnapshot>)> {
    if snapshots.is_empty() {
        return Err(Error::InvalidArgument("no model snapshots to score with".into()));
    }
    for snap in snapshots {
        check_vocabulary(snap, corpus)?;
    }
    let per_chain: Vec<Result<(Vec<f64>, ModelSnapshot)>> =
        parallel::map_slice(snapshots, |snap| score_chain(snap, corpus, online_sweeps));
    let mut chain_lls = Vec::with_capacity(snapshots.len());
    let mut finals = Vec::with_capacity(snapshots.len());
    for r in per_chain {
        let (lls, snap) = r?;
        chain_lls.push(lls);
        finals.push(snap);
    }
    let records = corpus
        .documents()
        .iter()
        .enumerate()
        .map(|(j, doc)| {
            let lls = chain_lls.iter().map(|c| c[j]).collect();
            abnormality_score(j, lls, doc.len(), kind)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((records, finals))
}

fn score_chain(snapshot: &ModelSnapshot, corpus: &Corpus, online_sweeps: usize) -> Result<(Vec<f64>, ModelSnapshot)> {
    let mut rng = online_rng(snapshot.seed);
    let mut current = snapshot.clone();
    let mut lls = Vec::with_capacity(corpus.len());
    for doc in corpus.documents() {
        let (sample, next) = online_infer(&current, &doc.tokens, online_sweeps, &mut rng)?;
        lls.push(per_sample_log_predictive(&current, &sample));
        current = next;
    }
    Ok((lls, current))
}
