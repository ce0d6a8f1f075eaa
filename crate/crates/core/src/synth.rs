//! Synthetic "bar" corpora drawn from the dynamic HDP with ten fixed
//! topics on a 5×5 word grid, with planted abnormal documents.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, Vocabulary};
use crate::error::{Error, Result};
use crate::math::sample_weights;

pub const GRID_SIDE: usize = 5;
pub const BAR_VOCAB: usize = GRID_SIDE * GRID_SIDE;
pub const NUM_BARS: usize = 2 * GRID_SIDE;

/// Word distributions of the ten bars: topics 0–4 are rows, 5–9 columns.
#[derive(Debug, Clone, PartialEq)]
pub struct BarTopics {
    pub noise: f64,
    /// `phi[k][w]`.
    pub phi: Vec<Vec<f64>>,
}

/// Mixes each bar with the uniform distribution: `(1-ε)·bar + ε/V`.
pub fn bar_topics(noise: f64) -> Result<BarTopics> {
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::InvalidArgument(format!("noise must lie in [0, 1], got {noise}")));
    }
    let uniform = noise / BAR_VOCAB as f64;
    let mass = (1.0 - noise) / GRID_SIDE as f64;
    let phi = (0..NUM_BARS)
        .map(|k| {
            (0..BAR_VOCAB)
                .map(|w| {
                    let (row, col) = (w / GRID_SIDE, w % GRID_SIDE);
                    let on_bar = if k < GRID_SIDE { row == k } else { col == k - GRID_SIDE };
                    if on_bar {
                        mass + uniform
                    } else {
                        uniform
                    }
                })
                .collect()
        })
        .collect();
    Ok(BarTopics { noise, phi })
}

impl BarTopics {
    /// Text dump, one topic per block of five rows.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, row) in self.phi.iter().enumerate() {
            out.push_str(&format!("topic {k}\n"));
            for r in 0..GRID_SIDE {
                let cells: Vec<String> = row[r * GRID_SIDE..(r + 1) * GRID_SIDE]
                    .iter()
                    .map(|p| format!("{p:.4}"))
                    .collect();
                out.push_str(&cells.join(" "));
                out.push('\n');
            }
        }
        out
    }
}

/// Parameters of the generating process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub alpha: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            alpha: 1.5,
            gamma: 2.0,
            delta: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentTruth {
    pub abnormal: bool,
    /// True topic of every token.
    pub topics: Vec<usize>,
    /// Table of every token.
    pub tables: Vec<usize>,
    /// True topic of every table.
    pub table_topics: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub params: GeneratorParams,
    pub noise: f64,
    pub documents: Vec<DocumentTruth>,
}

impl GroundTruth {
    pub fn abnormal_flags(&self) -> Vec<bool> {
        self.documents.iter().map(|d| d.abnormal).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })
    }
}

/// Generates `num_docs` documents of `doc_len` tokens from the dynamic HDP
/// restricted to the ten bars. Documents listed in `abnormal` pick the
/// topic of every new table uniformly among the bars absent from the
/// previous document.
pub fn generate_sequence<R: Rng + ?Sized>(
    num_docs: usize,
    doc_len: usize,
    params: &GeneratorParams,
    topics: &BarTopics,
    abnormal: &BTreeSet<usize>,
    seed: u64,
    rng: &mut R,
) -> Result<(Corpus, GroundTruth)> {
    if abnormal.contains(&0) {
        return Err(Error::InvalidArgument("the first document cannot be abnormal".into()));
    }
    if let Some(&j) = abnormal.iter().find(|&&j| j >= num_docs) {
        return Err(Error::InvalidArgument(format!(
            "abnormal index {j} beyond {num_docs} documents"
        )));
    }
    if !(params.alpha > 0.0 && params.gamma > 0.0 && params.delta >= 0.0) {
        return Err(Error::InvalidArgument("alpha, gamma must be > 0 and delta >= 0".into()));
    }
    let mut cumulative = [0u64; NUM_BARS];
    let mut previous = [0u32; NUM_BARS];
    let mut documents = Vec::with_capacity(num_docs);
    let mut truth = Vec::with_capacity(num_docs);

    for j in 0..num_docs {
        let is_abnormal = abnormal.contains(&j);
        let mut current = [0u32; NUM_BARS];
        let mut table_sizes: Vec<u32> = Vec::new();
        let mut table_topics: Vec<usize> = Vec::new();
        let mut doc = DocumentTruth {
            abnormal: is_abnormal,
            topics: Vec::with_capacity(doc_len),
            tables: Vec::with_capacity(doc_len),
            table_topics: Vec::new(),
        };
        let mut words = Vec::with_capacity(doc_len);
        for _ in 0..doc_len {
            let mut weights: Vec<f64> = table_sizes.iter().map(|&n| f64::from(n)).collect();
            weights.push(params.alpha);
            let t = sample_weights(rng, &weights).expect("alpha > 0");
            if t == table_sizes.len() {
                let k = if is_abnormal {
                    let allowed: Vec<usize> = (0..NUM_BARS).filter(|&k| previous[k] == 0).collect();
                    if allowed.is_empty() {
                        return Err(Error::Contract(format!(
                            "document {}: previous document uses every bar",
                            j - 1
                        )));
                    }
                    allowed[rng.random_range(0..allowed.len())]
                } else {
                    draw_normal_topic(&current, &previous, &cumulative, params, rng)
                };
                table_sizes.push(0);
                table_topics.push(k);
                current[k] += 1;
                cumulative[k] += 1;
            }
            table_sizes[t] += 1;
            let k = table_topics[t];
            let w = sample_weights(rng, &topics.phi[k]).expect("topic has mass");
            words.push(w);
            doc.topics.push(k);
            doc.tables.push(t);
        }
        doc.table_topics = table_topics;
        documents.push(Document::new(words));
        truth.push(doc);
        previous = current;
    }
    let corpus = Corpus::new(Vocabulary::new(BAR_VOCAB)?, documents)?;
    Ok((
        corpus,
        GroundTruth {
            seed,
            params: *params,
            noise: topics.noise,
            documents: truth,
        },
    ))
}

/// Topic for a new table of a normal document. Used bars get
/// `m_jk + m_{j-1,k} + δ m_{1:j,k}`; unused bars share `γ` uniformly, and
/// once every bar is used the `γ` mass is dropped.
fn draw_normal_topic<R: Rng + ?Sized>(
    current: &[u32; NUM_BARS],
    previous: &[u32; NUM_BARS],
    cumulative: &[u64; NUM_BARS],
    params: &GeneratorParams,
    rng: &mut R,
) -> usize {
    let unused: Vec<usize> = (0..NUM_BARS).filter(|&k| cumulative[k] == 0).collect();
    let mut weights: Vec<f64> = (0..NUM_BARS)
        .map(|k| {
            if cumulative[k] == 0 {
                0.0
            } else {
                f64::from(current[k]) + f64::from(previous[k]) + params.delta * cumulative[k] as f64
            }
        })
        .collect();
    if !unused.is_empty() {
        weights.push(params.gamma);
    }
    let pick = sample_weights(rng, &weights).expect("gamma > 0 or a used bar exists");
    if pick == NUM_BARS {
        unused[rng.random_range(0..unused.len())]
    } else {
        pick
    }
}

/// Mean log-probability per word of a document under the true bars and
/// true topic assignments.
pub fn true_model_score(words: &[usize], truth: &DocumentTruth, topics: &BarTopics) -> f64 {
    if words.is_empty() {
        return f64::NAN;
    }
    let total: f64 = words
        .iter()
        .zip(&truth.topics)
        .map(|(&w, &k)| topics.phi[k][w].ln())
        .sum();
    total / words.len() as f64
}

/// Per-word joint score of every document in a sequence: true word
/// log-probabilities plus the log-probability of each table's bar under the
/// normal (non-abnormal) topic rule, given the sequence so far. Informational;
/// it shows how much signal the planted anomalies carry at all.
pub fn true_model_joint_scores(documents: &[Vec<usize>], truth: &GroundTruth, topics: &BarTopics) -> Result<Vec<f64>> {
    if documents.len() != truth.documents.len() {
        return Err(Error::InvalidArgument(format!(
            "{} documents but ground truth for {}",
            documents.len(),
            truth.documents.len()
        )));
    }
    let params = &truth.params;
    let mut previous = [0u32; NUM_BARS];
    let mut cumulative = [0u64; NUM_BARS];
    let mut out = Vec::with_capacity(documents.len());
    for (words, doc) in documents.iter().zip(&truth.documents) {
        let mut current = [0u32; NUM_BARS];
        let mut total = 0.0;
        for &k in &doc.table_topics {
            let unused = cumulative.iter().filter(|&&c| c == 0).count();
            let weight = |b: usize| {
                if cumulative[b] == 0 {
                    params.gamma / unused as f64
                } else {
                    f64::from(current[b]) + f64::from(previous[b]) + params.delta * cumulative[b] as f64
                }
            };
            let norm: f64 = (0..NUM_BARS)
                .filter(|&b| cumulative[b] > 0 || unused > 0)
                .map(weight)
                .sum();
            total += (weight(k) / norm).ln();
            current[k] += 1;
            cumulative[k] += 1;
        }
        previous = current;
        out.push(if words.is_empty() {
            f64::NAN
        } else {
            (total + true_model_score(words, doc, topics) * words.len() as f64) / words.len() as f64
        });
    }
    Ok(out)
}

/// Sizes and seeds of a training/testing pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyConfig {
    pub train_docs: usize,
    pub test_docs: usize,
    pub abnormal: usize,
    pub doc_len: usize,
    pub noise: f64,
    pub params: GeneratorParams,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            train_docs: 2000,
            test_docs: 1000,
            abnormal: 300,
            doc_len: 20,
            noise: 0.01,
            params: GeneratorParams::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticStudy {
    pub topics: BarTopics,
    pub train: Corpus,
    pub train_truth: GroundTruth,
    pub test: Corpus,
    pub test_truth: GroundTruth,
}

impl SyntheticStudy {
    pub fn test_labels(&self) -> Vec<bool> {
        self.test_truth.abnormal_flags()
    }

    pub fn true_scores(&self) -> Vec<f64> {
        self.test
            .documents()
            .iter()
            .zip(&self.test_truth.documents)
            .map(|(d, t)| true_model_score(&d.tokens, t, &self.topics))
            .collect()
    }

    /// [`true_model_joint_scores`] of the test sequence.
    pub fn true_joint_scores(&self) -> Vec<f64> {
        let docs: Vec<Vec<usize>> = self.test.documents().iter().map(|d| d.tokens.clone()).collect();
        true_model_joint_scores(&docs, &self.test_truth, &self.topics).expect("test truth matches test corpus")
    }
}

/// Training sequence, then an independent test sequence with abnormal
/// documents at uniformly drawn positions other than the first.
pub fn generate_study(config: &StudyConfig) -> Result<SyntheticStudy> {
    if config.abnormal > config.test_docs.saturating_sub(1) {
        return Err(Error::InvalidArgument(format!(
            "{} abnormal documents requested but only {} test positions after the first",
            config.abnormal,
            config.test_docs.saturating_sub(1)
        )));
    }
    let topics = bar_topics(config.noise)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (train, train_truth) = generate_sequence(
        config.train_docs,
        config.doc_len,
        &config.params,
        &topics,
        &BTreeSet::new(),
        config.seed,
        &mut rng,
    )?;
    let abnormal: BTreeSet<usize> = index::sample(&mut rng, config.test_docs - 1, config.abnormal)
        .into_iter()
        .map(|i| i + 1)
        .collect();
    let (test, test_truth) = generate_sequence(
        config.test_docs,
        config.doc_len,
        &config.params,
        &topics,
        &abnormal,
        config.seed,
        &mut rng,
    )?;
    Ok(SyntheticStudy {
        topics,
        train,
        train_truth,
        test,
        test_truth,
    })
}
