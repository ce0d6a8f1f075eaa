//! Collapsed Gibbs samplers over the CRF state: batch sweeps for training
//! and per-document online inference on top of a frozen snapshot.

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Corpus;
use crate::crf::{
    group_words, grouped_block_log_likelihood, word_topic_predictive, CrfState, Hyperparameters, ModelKind,
    TopicChoice, TopicId,
};
use crate::error::{Error, Result};
use crate::math::{normalize_log_weights, sample_log_weights, sample_weights};
use crate::parallel;
use crate::snapshot::ModelSnapshot;

/// Whether the topic conditional looks at the next document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Prior × next-document factor, born topics excluded, new-table
    /// topic mixture normalised.
    Batch,
    /// Like `Batch`, but document `j+1`'s assignment probability is
    /// evaluated in full: topics first used in `j+1` stay reachable from
    /// `j`, and the next document's normalisers enter the new-table weight.
    /// Exact when `j+1` is the last document.
    BatchExact,
    Online,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub burn_in_sweeps: usize,
    pub chains: usize,
    /// Master seed; chain seeds are derived from it.
    pub seed: u64,
    pub samples_per_chain: usize,
    /// Sweeps between retained samples when `samples_per_chain > 1`.
    pub thinning: usize,
    pub online_sweeps: usize,
    /// Log a progress line every this many sweeps; 0 disables.
    pub log_every: usize,
    /// Training conditional: `Batch` or `BatchExact`.
    pub batch_mode: Mode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            burn_in_sweeps: 1000,
            chains: 5,
            seed: 0,
            samples_per_chain: 1,
            thinning: 1,
            online_sweeps: 1000,
            log_every: 0,
            batch_mode: Mode::Batch,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_mode == Mode::Online {
            return Err(Error::InvalidArgument("training needs a batch mode".into()));
        }
        if self.chains == 0 || self.samples_per_chain == 0 || self.thinning == 0 {
            return Err(Error::InvalidArgument(
                "chains, samples_per_chain and thinning must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Seed of chain `c`; distinct for distinct chains.
    pub fn chain_seed(&self, chain: usize) -> u64 {
        splitmix64(self.seed ^ splitmix64(chain as u64 + 1))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Candidate topics for one table: the active topics in ascending order
/// followed by a fresh topic.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicCandidates {
    pub topics: Vec<TopicId>,
    /// Aligned with `topics`, plus one trailing entry for the fresh topic.
    pub log_weights: Vec<f64>,
}

impl TopicCandidates {
    pub fn choice(&self, idx: usize) -> TopicChoice {
        match self.topics.get(idx) {
            Some(&k) => TopicChoice::Existing(k),
            None => TopicChoice::New,
        }
    }

    pub fn probabilities(&self) -> Option<Vec<f64>> {
        normalize_log_weights(&self.log_weights)
    }
}

/// Unnormalised prior weight of a table in document `j` choosing `k`,
/// given the current counts (the table being resampled must already be
/// detached). Dynamic: `m_jk + m_{j-1,k} + δ m_{1:j,k}`; plain: `m_·k`;
/// a fresh topic always gets `γ`.
pub fn topic_prior(state: &CrfState, j: usize, k: TopicChoice, hyper: &Hyperparameters) -> f64 {
    match k {
        TopicChoice::New => hyper.gamma,
        TopicChoice::Existing(k) => match hyper.model {
            ModelKind::Dynamic => {
                f64::from(state.tables_in_doc(j, k))
                    + f64::from(state.tables_in_previous(j, k))
                    + hyper.delta * state.tables_through(j, k) as f64
            }
            ModelKind::Plain => state.topic_tables(k) as f64,
        },
    }
}

/// Log of one topic's contribution to the next-document factor: the
/// probability mass of document `j+1`'s `m_next` tables of that topic given
/// `m_cur` tables in `j` and `m_cum` in `1..=j`.
fn next_doc_term(m_next: u32, m_cur: u64, m_cum: u64, delta: f64) -> f64 {
    (0..m_next)
        .map(|n| {
            let n = f64::from(n);
            (m_cur as f64 + n + delta * (m_cum as f64 + n)).ln()
        })
        .sum()
}

/// Log next-document factors for each candidate of [`TopicCandidates`]
/// (`topics` then fresh). Identically zero for the plain HDP, in online
/// mode, and for the last document.
pub fn next_doc_log_factors(
    state: &CrfState,
    j: usize,
    topics: &[TopicId],
    hyper: &Hyperparameters,
    mode: Mode,
) -> Vec<f64> {
    let ctx = DocContext::new(state, j, hyper, mode);
    let mut out = Vec::new();
    ctx.next_doc_log_factors(state, topics, hyper, &mut out);
    out
}

/// Counts that stay fixed while document `j` is resampled: the history
/// before it, the previous document and the next document. Only `m_jk`
/// moves, and it is read live from the state.
#[derive(Debug, Clone)]
pub struct DocContext {
    j: usize,
    mode: Mode,
    /// `m_{1:j-1,k}` by topic id; ids born later read as 0.
    before: Vec<u64>,
    /// `m_{j-1,k}` by topic id.
    previous: Vec<u32>,
    /// `(s, m_{j+1,s})` when the next-document factor applies.
    next: Vec<(TopicId, u32)>,
}

impl DocContext {
    pub fn new(state: &CrfState, j: usize, hyper: &Hyperparameters, mode: Mode) -> Self {
        let n = state.topic_id_bound();
        let mut before = vec![0; n];
        let mut previous = vec![0; n];
        if hyper.model == ModelKind::Dynamic {
            for k in state.active_topics() {
                before[k] = state.tables_through(j, k) - u64::from(state.tables_in_doc(j, k));
                previous[k] = state.tables_in_previous(j, k);
            }
        }
        let next = if hyper.model == ModelKind::Dynamic && mode != Mode::Online && j + 1 < state.num_docs() {
            state.doc_topic_tables(j + 1).iter().map(|(&s, &m)| (s, m)).collect()
        } else {
            Vec::new()
        };
        DocContext {
            j,
            mode,
            before,
            previous,
            next,
        }
    }

    /// `m_{1:j,k}` with the current `m_jk`.
    fn through(&self, state: &CrfState, k: TopicId) -> u64 {
        self.before.get(k).copied().unwrap_or(0) + u64::from(state.tables_in_doc(self.j, k))
    }

    fn prior(&self, state: &CrfState, k: TopicId, hyper: &Hyperparameters) -> f64 {
        match hyper.model {
            ModelKind::Dynamic => {
                f64::from(state.tables_in_doc(self.j, k))
                    + f64::from(self.previous.get(k).copied().unwrap_or(0))
                    + hyper.delta * self.through(state, k) as f64
            }
            ModelKind::Plain => state.topic_tables(k) as f64,
        }
    }

    fn next_doc_log_factors(&self, state: &CrfState, topics: &[TopicId], hyper: &Hyperparameters, out: &mut Vec<f64>) {
        out.clear();
        out.resize(topics.len() + 1, 0.0);
        if self.next.is_empty() {
            return;
        }
        let j = self.j;
        if self.mode == Mode::BatchExact {
            let current = next_doc_log_prob(state, j, None, hyper);
            for (idx, &k) in topics.iter().enumerate() {
                out[idx] = next_doc_log_prob(state, j, Some(TopicChoice::Existing(k)), hyper) - current;
            }
            out[topics.len()] = next_doc_log_prob(state, j, Some(TopicChoice::New), hyper) - current;
            return;
        }
        // terms of topics already present up to j; born topics contribute nothing
        let mut base = 0.0;
        let terms: Vec<(TopicId, u32, f64)> = self
            .next
            .iter()
            .map(|&(s, m_next)| {
                let m_cum = self.through(state, s);
                let term = if m_cum > 0 {
                    next_doc_term(m_next, u64::from(state.tables_in_doc(j, s)), m_cum, hyper.delta)
                } else {
                    0.0
                };
                base += term;
                (s, m_next, term)
            })
            .collect();
        out.iter_mut().for_each(|x| *x = base);
        for &(s, m_next, term) in &terms {
            if let Ok(idx) = topics.binary_search(&s) {
                let m_cur = u64::from(state.tables_in_doc(j, s)) + 1;
                let m_cum = self.through(state, s) + 1;
                out[idx] = base - term + next_doc_term(m_next, m_cur, m_cum, hyper.delta);
            }
        }
    }

    /// [`topic_log_weights`] from the cached counts.
    pub fn topic_log_weights(&self, state: &CrfState, hyper: &Hyperparameters) -> TopicCandidates {
        let topics: Vec<TopicId> = state.active_topics().collect();
        let mut log_weights = Vec::new();
        self.next_doc_log_factors(state, &topics, hyper, &mut log_weights);
        let exact = self.mode == Mode::BatchExact && hyper.model == ModelKind::Dynamic;
        for (idx, &k) in topics.iter().enumerate() {
            let mut prior = self.prior(state, k, hyper);
            if exact && self.through(state, k) == 0 && self.next.iter().any(|&(s, _)| s == k) {
                // not yet used by j but used in j+1: a new topic from j's view
                prior = hyper.gamma;
            }
            log_weights[idx] += prior.ln();
        }
        log_weights[topics.len()] += hyper.gamma.ln();
        TopicCandidates { topics, log_weights }
    }
}

/// Full `log p(k_{j+1} | k_{1:j})` in the dynamic model, optionally with one
/// extra table of topic `added` in document `j`. Zero when there is no
/// seated next document.
pub fn next_doc_log_prob(state: &CrfState, j: usize, added: Option<TopicChoice>, hyper: &Hyperparameters) -> f64 {
    if j + 1 >= state.num_docs() {
        return 0.0;
    }
    let next = state.doc_topic_tables(j + 1);
    if next.is_empty() {
        return 0.0;
    }
    let extra = u64::from(added.is_some());
    let delta = hyper.delta;
    let mut log_p = 0.0;
    for (&s, &c) in next {
        let bump = u64::from(added == Some(TopicChoice::Existing(s)));
        let m_cum = state.tables_through(j, s) + bump;
        if m_cum > 0 {
            let m_cur = u64::from(state.tables_in_doc(j, s)) + bump;
            log_p += next_doc_term(c, m_cur, m_cum, delta);
        } else {
            // born in j+1: γ for the first table, then (n-1)(1+δ)
            log_p += hyper.gamma.ln() + (1..c).map(|n| (f64::from(n) * (1.0 + delta)).ln()).sum::<f64>();
        }
    }
    let m_doc = state.doc_topic_tables(j).values().map(|&m| u64::from(m)).sum::<u64>() + extra;
    let m_cum = state.total_tables_through(j) + extra;
    let m_next: u32 = next.values().sum();
    log_p
        - (0..m_next)
            .map(|n| {
                let n = f64::from(n);
                (m_doc as f64 + n + delta * (m_cum as f64 + n) + hyper.gamma).ln()
            })
            .sum::<f64>()
}

/// Unnormalised next-document factor for a single candidate.
pub fn next_doc_factor(state: &CrfState, j: usize, k: TopicChoice, hyper: &Hyperparameters, mode: Mode) -> f64 {
    let topics: Vec<TopicId> = state.active_topics().collect();
    let factors = next_doc_log_factors(state, j, &topics, hyper, mode);
    let idx = match k {
        TopicChoice::Existing(k) => topics.iter().position(|&x| x == k).unwrap_or(topics.len()),
        TopicChoice::New => topics.len(),
    };
    factors[idx].exp()
}

/// Log of prior × next-document factor for every candidate topic of a new
/// or detached table in document `j`.
pub fn topic_log_weights(state: &CrfState, j: usize, hyper: &Hyperparameters, mode: Mode) -> TopicCandidates {
    DocContext::new(state, j, hyper, mode).topic_log_weights(state, hyper)
}

/// Resamples the topic of live table `t` in document `j` and returns it.
pub fn sample_topic_for_table<R: Rng + ?Sized>(
    state: &mut CrfState,
    j: usize,
    t: usize,
    hyper: &Hyperparameters,
    mode: Mode,
    rng: &mut R,
) -> Result<TopicId> {
    let ctx = DocContext::new(state, j, hyper, mode);
    sample_topic_for_table_in(state, &ctx, t, hyper, rng)
}

/// [`sample_topic_for_table`] with the document's fixed counts precomputed.
pub fn sample_topic_for_table_in<R: Rng + ?Sized>(
    state: &mut CrfState,
    ctx: &DocContext,
    t: usize,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<TopicId> {
    let j = ctx.j;
    let detached = state.detach_table(j, t)?;
    let mut cands = ctx.topic_log_weights(state, hyper);
    let groups = group_words(&detached.words);
    for (idx, lw) in cands.log_weights.iter_mut().enumerate() {
        let k = cands.topics.get(idx).copied();
        *lw += grouped_block_log_likelihood(state, &groups, k, hyper.eta);
    }
    let idx = sample_log_weights(rng, &cands.log_weights)
        .ok_or_else(|| Error::Contract(format!("document {j} table {t}: topic weights have no mass")))?;
    state.attach_table(j, t, cands.choice(idx))
}

/// Probability of word `w` at a new table of document `j`, with the new
/// table's topic integrated out under the normalised topic weights.
pub fn new_table_word_likelihood(
    state: &CrfState,
    j: usize,
    w: usize,
    hyper: &Hyperparameters,
    mode: Mode,
) -> Result<f64> {
    let cands = topic_log_weights(state, j, hyper, mode);
    let probs = cands
        .probabilities()
        .ok_or_else(|| Error::Contract(format!("document {j}: topic prior has no mass")))?;
    Ok(probs
        .iter()
        .enumerate()
        .map(|(idx, p)| p * word_topic_predictive(state, w, cands.topics.get(idx).copied(), hyper.eta))
        .sum())
}

/// Sum of the dynamic prior weights over all topics, fresh included:
/// `m_j. + m_{j-1,.} + δ m_{1:j,.} + γ`.
fn prior_normalizer(state: &CrfState, j: usize, hyper: &Hyperparameters) -> f64 {
    let m_doc: u64 = state.doc_topic_tables(j).values().map(|&m| u64::from(m)).sum();
    let m_prev: u64 = state
        .active_topics()
        .map(|k| u64::from(state.tables_in_previous(j, k)))
        .sum();
    m_doc as f64 + m_prev as f64 + hyper.delta * state.total_tables_through(j) as f64 + hyper.gamma
}

/// Linear-domain weights of the fresh-table topic candidates of one
/// document, reusable until the document's tables change.
#[derive(Debug, Clone, Default)]
pub struct NewTableCache {
    valid: bool,
    topics: Vec<TopicId>,
    /// Per candidate (topics, then fresh): normalised topic probability, or
    /// for `BatchExact` the exact weight relative to the current state.
    weights: Vec<f64>,
    scratch: Vec<f64>,
    tables: Vec<(usize, TopicId, u32)>,
    table_weights: Vec<f64>,
    /// Fixed counts of the document the cache belongs to.
    ctx: Option<DocContext>,
}

impl NewTableCache {
    pub fn invalidate(&mut self) {
        self.valid = false;
    }

    fn refresh(&mut self, state: &CrfState, j: usize, hyper: &Hyperparameters, mode: Mode) -> Result<()> {
        if self.valid {
            return Ok(());
        }
        let ctx = match &mut self.ctx {
            Some(c) if c.j == j && c.mode == mode => c,
            slot => slot.insert(DocContext::new(state, j, hyper, mode)),
        };
        let cands = ctx.topic_log_weights(state, hyper);
        let norm = if mode == Mode::BatchExact && hyper.model == ModelKind::Dynamic {
            // the weights are already relative to the current next document;
            // only the prior's own normaliser remains
            prior_normalizer(state, j, hyper).ln()
        } else {
            crate::math::log_sum_exp(&cands.log_weights)
        };
        if !norm.is_finite() {
            return Err(Error::Contract(format!("document {j}: topic prior has no mass")));
        }
        self.weights.clear();
        self.weights
            .extend(cands.log_weights.iter().map(|&lw| (lw - norm).exp()));
        self.topics = cands.topics;
        self.valid = true;
        Ok(())
    }
}

/// Draws a table for unseated token `i` of document `j`, seats it there and
/// returns the table index. A new table immediately gets a topic drawn from
/// the same conditional a resampled table would use.
pub fn sample_table_for_token<R: Rng + ?Sized>(
    state: &mut CrfState,
    j: usize,
    i: usize,
    hyper: &Hyperparameters,
    mode: Mode,
    rng: &mut R,
) -> Result<usize> {
    sample_table_for_token_cached(state, j, i, hyper, mode, rng, &mut NewTableCache::default())
}

/// [`sample_table_for_token`] reusing fresh-table weights across the
/// tokens of one document; the cache is invalidated whenever the
/// document's tables change.
pub fn sample_table_for_token_cached<R: Rng + ?Sized>(
    state: &mut CrfState,
    j: usize,
    i: usize,
    hyper: &Hyperparameters,
    mode: Mode,
    rng: &mut R,
    cache: &mut NewTableCache,
) -> Result<usize> {
    if state.is_seated(j, i) {
        return Err(Error::Contract(format!("token ({j}, {i}) is already seated")));
    }
    let w = state.doc_words(j)[i];
    cache.refresh(state, j, hyper, mode)?;

    // (new table, topic k) jointly, up to the shared factor α
    let uniform = 1.0 / state.vocab_size() as f64;
    cache.scratch.clear();
    let mut r_new = 0.0;
    for (idx, &p) in cache.weights.iter().enumerate() {
        let f = match cache.topics.get(idx) {
            Some(&k) => word_topic_predictive(state, w, Some(k), hyper.eta),
            None => uniform,
        };
        let x = p * f;
        cache.scratch.push(x);
        r_new += x;
    }

    cache.tables.clear();
    cache.tables.extend(state.live_tables(j));
    cache.table_weights.clear();
    cache.table_weights.extend(
        cache
            .tables
            .iter()
            .map(|&(_, k, n)| f64::from(n) * word_topic_predictive(state, w, Some(k), hyper.eta)),
    );
    cache.table_weights.push(hyper.alpha * r_new);
    let pick = sample_weights(rng, &cache.table_weights)
        .ok_or_else(|| Error::Contract(format!("token ({j}, {i}): table weights have no mass")))?;
    if pick < cache.tables.len() {
        let t = cache.tables[pick].0;
        state.seat_token(j, i, t)?;
        Ok(t)
    } else {
        let idx = sample_weights(rng, &cache.scratch)
            .ok_or_else(|| Error::Contract(format!("token ({j}, {i}): topic weights have no mass")))?;
        let choice = match cache.topics.get(idx) {
            Some(&k) => TopicChoice::Existing(k),
            None => TopicChoice::New,
        };
        let (t, _) = state.seat_token_new_table(j, i, choice)?;
        cache.invalidate();
        Ok(t)
    }
}

/// Seats every unseated token, document by document, by drawing from the
/// model's sequential predictive process.
pub fn initialize<R: Rng + ?Sized>(
    state: &mut CrfState,
    hyper: &Hyperparameters,
    mode: Mode,
    rng: &mut R,
) -> Result<()> {
    for j in 0..state.num_docs() {
        let mut cache = NewTableCache::default();
        for i in 0..state.doc_words(j).len() {
            if !state.is_seated(j, i) {
                sample_table_for_token_cached(state, j, i, hyper, mode, rng, &mut cache)?;
            }
        }
    }
    Ok(())
}

/// One Gibbs sweep over document `j`: every token's table, then every live
/// table's topic.
pub fn sweep_document<R: Rng + ?Sized>(
    state: &mut CrfState,
    j: usize,
    hyper: &Hyperparameters,
    mode: Mode,
    rng: &mut R,
) -> Result<()> {
    if state.doc_words(j).is_empty() {
        return Ok(());
    }
    state.compact_doc(j)?;
    let mut cache = NewTableCache::default();
    for i in 0..state.doc_words(j).len() {
        if state.unseat_token(j, i)?.table_removed {
            cache.invalidate();
        }
        sample_table_for_token_cached(state, j, i, hyper, mode, rng, &mut cache)?;
    }
    let ctx = DocContext::new(state, j, hyper, mode);
    let tables: Vec<usize> = state.live_tables(j).map(|(t, _, _)| t).collect();
    for t in tables {
        sample_topic_for_table_in(state, &ctx, t, hyper, rng)?;
    }
    Ok(())
}

/// One full sweep over all documents in order.
pub fn sweep<R: Rng + ?Sized>(state: &mut CrfState, hyper: &Hyperparameters, mode: Mode, rng: &mut R) -> Result<()> {
    for j in 0..state.num_docs() {
        sweep_document(state, j, hyper, mode, rng)?;
    }
    Ok(())
}

/// Frozen state of one chain after burn-in.
#[derive(Debug, Clone)]
pub struct PosteriorSample {
    pub chain: usize,
    pub seed: u64,
    /// Sweeps completed when the sample was taken.
    pub sweeps: usize,
    pub state: CrfState,
}

#[derive(Debug, Clone)]
pub struct ChainFit {
    pub chain: usize,
    pub seed: u64,
    pub samples: Vec<PosteriorSample>,
    /// Snapshot of the final state.
    pub snapshot: ModelSnapshot,
}

pub fn chain_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// RNG for online inference of a chain, on a separate stream from training.
pub fn online_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Runs one training chain: initialisation, burn-in, retained samples.
pub fn fit_chain(corpus: &Corpus, hyper: &Hyperparameters, config: &SamplerConfig, chain: usize) -> Result<ChainFit> {
    let seed = config.chain_seed(chain);
    let mut rng = chain_rng(seed);
    let docs = corpus.documents().iter().map(|d| d.tokens.clone()).collect();
    let mut state = CrfState::new(corpus.vocab_size(), docs)?;
    initialize(&mut state, hyper, config.batch_mode, &mut rng)?;
    let total = config.burn_in_sweeps + (config.samples_per_chain - 1) * config.thinning;
    let mut samples = Vec::with_capacity(config.samples_per_chain);
    for s in 1..=total {
        sweep(&mut state, hyper, config.batch_mode, &mut rng)?;
        if config.log_every > 0 && (s % config.log_every == 0 || s == total) {
            info!(
                "chain={chain} sweep={s} K={} loglik={:.4}",
                state.num_active_topics(),
                state.log_likelihood(hyper.eta)
            );
        }
        if s >= config.burn_in_sweeps && (s - config.burn_in_sweeps) % config.thinning == 0 {
            samples.push(PosteriorSample {
                chain,
                seed,
                sweeps: s,
                state: state.clone(),
            });
        }
    }
    if samples.is_empty() {
        // zero burn-in: the initial seating is the sample
        samples.push(PosteriorSample {
            chain,
            seed,
            sweeps: 0,
            state: state.clone(),
        });
    }
    let snapshot = ModelSnapshot::from_state(&state, *hyper, chain, seed);
    Ok(ChainFit {
        chain,
        seed,
        samples,
        snapshot,
    })
}

/// Trains `config.chains` independent chains, in parallel when the
/// `parallel` feature is on. Results do not depend on scheduling.
pub fn batch_fit(corpus: &Corpus, hyper: &Hyperparameters, config: &SamplerConfig) -> Result<Vec<ChainFit>> {
    validate_fit_inputs(corpus, hyper, config)?;
    parallel::map_indices(config.chains, |c| fit_chain(corpus, hyper, config, c))
        .into_iter()
        .collect()
}

/// [`batch_fit`] with chains run one after another on the calling thread.
pub fn batch_fit_sequential(corpus: &Corpus, hyper: &Hyperparameters, config: &SamplerConfig) -> Result<Vec<ChainFit>> {
    validate_fit_inputs(corpus, hyper, config)?;
    parallel::map_indices_sequential(config.chains, |c| fit_chain(corpus, hyper, config, c))
        .into_iter()
        .collect()
}

fn validate_fit_inputs(corpus: &Corpus, hyper: &Hyperparameters, config: &SamplerConfig) -> Result<()> {
    hyper.validate()?;
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("training corpus has no documents".into()));
    }
    Ok(())
}

/// Assignments of one document after online inference. Topic ids live in
/// the id space of the snapshot the document was inferred against; ids at
/// or above its topic count are topics the document created.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentSample {
    pub words: Vec<usize>,
    pub tables: Vec<usize>,
    pub topics: Vec<TopicId>,
}

/// Online Gibbs inference of one new document against a snapshot. Only the
/// document's own assignments are sampled; the snapshot's counts stay
/// fixed during the sweeps and the document is folded in afterwards.
pub fn online_infer<R: Rng + ?Sized>(
    snapshot: &ModelSnapshot,
    words: &[usize],
    sweeps: usize,
    rng: &mut R,
) -> Result<(DocumentSample, ModelSnapshot)> {
    let hyper = snapshot.hyperparameters;
    let mut state = CrfState::with_history(snapshot.vocab_size, vec![words.to_vec()], snapshot.history())?;
    initialize(&mut state, &hyper, Mode::Online, rng)?;
    for _ in 0..sweeps {
        sweep_document(&mut state, 0, &hyper, Mode::Online, rng)?;
    }
    let tables: Vec<usize> = (0..words.len())
        .map(|i| state.table_of(0, i).expect("all tokens seated"))
        .collect();
    let topics = tables
        .iter()
        .map(|&t| state.table_topic(0, t).expect("live table"))
        .collect();
    let sample = DocumentSample {
        words: words.to_vec(),
        tables,
        topics,
    };
    let mut updated = ModelSnapshot::from_state(&state, hyper, snapshot.chain, snapshot.seed);
    updated.documents_seen = snapshot.documents_seen + 1;
    Ok((sample, updated))
}

/// Checks that a corpus can be scored against a snapshot.
pub fn check_vocabulary(snapshot: &ModelSnapshot, corpus: &Corpus) -> Result<()> {
    if snapshot.vocab_size != corpus.vocab_size() {
        return Err(Error::VocabularyMismatch {
            model: snapshot.vocab_size,
            corpus: corpus.vocab_size(),
        });
    }
    Ok(())
}
