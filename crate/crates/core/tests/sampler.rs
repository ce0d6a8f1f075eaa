mod common;

use common::{assert_frequencies, compare_with_recount, Toy};
use dhdp::crf::{CrfState, Hyperparameters, ModelKind};
use dhdp::sampler::{
    new_table_word_likelihood, online_infer, sample_table_for_token, sample_topic_for_table, sweep, sweep_document,
    topic_log_weights, Mode,
};
use dhdp::snapshot::ModelSnapshot;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DRAWS: usize = 100_000;

fn hyper(model: ModelKind) -> Hyperparameters {
    Hyperparameters::new(1.5, 2.0, 0.5, 0.5, model).unwrap()
}

/// Three documents over four words and three topics; every topic keeps a
/// table when any single table is taken out.
fn toy() -> Toy {
    Toy {
        v: 4,
        words: vec![vec![0, 0, 1, 2], vec![1, 1, 3, 0, 2], vec![2, 3, 3]],
        tables: vec![vec![0, 0, 1, 1], vec![0, 0, 1, 2, 2], vec![0, 1, 1]],
        table_topics: vec![vec![0, 1], vec![0, 2, 1], vec![2, 0]],
    }
}

fn table_topic_frequencies(toy: &Toy, j: usize, t: usize, h: &Hyperparameters, mode: Mode, seed: u64) -> Vec<u64> {
    let base = toy.state();
    let k = toy.num_topics();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // ids freed by detaching the table are recycled for a fresh topic
    let mut detached = base.clone();
    detached.detach_table(j, t).unwrap();
    let mut counts = vec![0u64; k + 1];
    for _ in 0..DRAWS {
        let mut state = base.clone();
        let drawn = sample_topic_for_table(&mut state, j, t, h, mode, &mut rng).unwrap();
        counts[if detached.is_active(drawn) { drawn } else { k }] += 1;
    }
    counts
}

#[test]
fn table_topic_draws_match_dynamic_conditional() {
    let toy = toy();
    let h = hyper(ModelKind::Dynamic);
    let probs = toy.table_topic_probs(1, 1, &h, true);
    assert_frequencies(&table_topic_frequencies(&toy, 1, 1, &h, Mode::Batch, 1), &probs);
}

#[test]
fn table_topic_draws_match_online_conditional() {
    let toy = toy();
    let h = hyper(ModelKind::Dynamic);
    let probs = toy.table_topic_probs(1, 0, &h, false);
    assert_frequencies(&table_topic_frequencies(&toy, 1, 0, &h, Mode::Online, 2), &probs);
}

#[test]
fn table_topic_draws_match_plain_conditional() {
    let toy = toy();
    let h = hyper(ModelKind::Plain);
    let probs = toy.table_topic_probs(0, 1, &h, false);
    assert_frequencies(&table_topic_frequencies(&toy, 0, 1, &h, Mode::Batch, 3), &probs);
}

#[test]
fn symmetric_topics_are_drawn_equally() {
    // two topics with identical history; the table's block is empty of
    // distinguishing words
    let toy = Toy {
        v: 2,
        words: vec![vec![0, 0], vec![1]],
        tables: vec![vec![0, 1], vec![0]],
        table_topics: vec![vec![0, 1], vec![2]],
    };
    let h = hyper(ModelKind::Dynamic);
    let probs = toy.table_topic_probs(1, 0, &h, true);
    assert!((probs[0] - probs[1]).abs() < 1e-15);
    let counts = table_topic_frequencies(&toy, 1, 0, &h, Mode::Batch, 4);
    assert_frequencies(&counts, &probs);
}

fn token_table_frequencies(toy: &Toy, j: usize, i: usize, h: &Hyperparameters, mode: Mode, seed: u64) -> Vec<u64> {
    let mut base = toy.state();
    base.unseat_token(j, i).unwrap();
    let live: Vec<usize> = base.live_tables(j).map(|(t, _, _)| t).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; live.len() + 1];
    for _ in 0..DRAWS {
        let mut state = base.clone();
        let t = sample_table_for_token(&mut state, j, i, h, mode, &mut rng).unwrap();
        counts[live.iter().position(|&x| x == t).unwrap_or(live.len())] += 1;
    }
    counts
}

#[test]
fn token_table_draws_match_dynamic_conditional() {
    let toy = toy();
    let h = hyper(ModelKind::Dynamic);
    let probs = toy.token_table_probs(1, 3, &h, true);
    assert_frequencies(&token_table_frequencies(&toy, 1, 3, &h, Mode::Batch, 5), &probs);
}

#[test]
fn token_table_draws_match_plain_conditional() {
    let toy = toy();
    let h = hyper(ModelKind::Plain);
    let probs = toy.token_table_probs(0, 0, &h, false);
    assert_frequencies(&token_table_frequencies(&toy, 0, 0, &h, Mode::Batch, 6), &probs);
}

#[test]
fn vanishing_alpha_splits_by_table_size() {
    let toy = Toy {
        v: 3,
        words: vec![vec![1, 1, 1, 1]],
        tables: vec![vec![0, 0, 1, 0]],
        table_topics: vec![vec![0, 0]],
    };
    let h = Hyperparameters::new(1e-12, 2.0, 0.5, 0.5, ModelKind::Dynamic).unwrap();
    let counts = token_table_frequencies(&toy, 0, 3, &h, Mode::Batch, 7);
    assert_eq!(counts[2], 0);
    assert_frequencies(&counts, &[2.0 / 3.0, 1.0 / 3.0, 0.0]);
}

#[test]
fn new_table_likelihood_sums_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for model in [ModelKind::Dynamic, ModelKind::Plain] {
        let h = hyper(model);
        for _ in 0..50 {
            let v = rng.random_range(2..8);
            let docs: Vec<Vec<usize>> = (0..rng.random_range(1..5))
                .map(|_| (0..rng.random_range(0..6)).map(|_| rng.random_range(0..v)).collect())
                .collect();
            let mut state = CrfState::new(v, docs).unwrap();
            dhdp::sampler::initialize(&mut state, &h, Mode::Batch, &mut rng).unwrap();
            for j in 0..state.num_docs() {
                for mode in [Mode::Batch, Mode::Online] {
                    let total: f64 = (0..v)
                        .map(|w| new_table_word_likelihood(&state, j, w, &h, mode).unwrap())
                        .sum();
                    assert!((total - 1.0).abs() < 1e-12, "Σ_w r(w) = {total}");
                }
            }
        }
    }
}

/// A trained-looking snapshot with one dominant topic.
fn dominant_snapshot() -> ModelSnapshot {
    let toy = Toy {
        v: 3,
        words: vec![vec![0, 0, 0, 0, 0, 1], vec![0, 0, 0, 2]],
        tables: vec![vec![0, 0, 0, 1, 1, 2], vec![0, 0, 1, 2]],
        table_topics: vec![vec![0, 0, 1], vec![0, 0, 1]],
    };
    ModelSnapshot::from_state(&toy.state(), hyper(ModelKind::Dynamic), 0, 0)
}

#[test]
fn online_single_token_matches_enumeration() {
    let snap = dominant_snapshot();
    let h = snap.hyperparameters;
    let v = snap.vocab_size as f64;
    let w = 0;
    // the token always opens a table; its topic is prior × predictive
    let mut weights: Vec<f64> = (0..snap.num_topics())
        .map(|k| {
            let l_wk = snap
                .word_topic
                .iter()
                .find(|e| e.topic == k && e.word == w)
                .map_or(0, |e| e.count);
            let l_k: u32 = snap.word_topic.iter().filter(|e| e.topic == k).map(|e| e.count).sum();
            let prior = f64::from(snap.last_doc_tables[k]) + h.delta * snap.cumulative_tables[k] as f64;
            prior * (f64::from(l_wk) + h.eta) / (f64::from(l_k) + v * h.eta)
        })
        .collect();
    weights.push(h.gamma / v);
    let probs = common::normalise(&weights);
    let mode = probs.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;

    let runs = 20_000;
    let mut counts = vec![0u64; probs.len()];
    let mut modal_hits = 0;
    for seed in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (sample, after) = online_infer(&snap, &[w], 3, &mut rng).unwrap();
        let k = sample.topics[0].min(snap.num_topics());
        counts[k] += 1;
        if k < snap.num_topics() {
            let before = snap
                .word_topic
                .iter()
                .find(|e| e.topic == k && e.word == w)
                .map_or(0, |e| e.count);
            let now = after
                .word_topic
                .iter()
                .find(|e| e.topic == k && e.word == w)
                .map_or(0, |e| e.count);
            assert_eq!(now, before + 1);
            modal_hits += usize::from(k == mode);
        }
    }
    assert_frequencies(&counts, &probs);
    assert!(modal_hits > runs as usize / 2);
}

#[test]
fn online_fold_in_adds_exactly_the_document() {
    let snap = dominant_snapshot();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (_, a) = online_infer(&snap, &[0, 1, 2], 5, &mut rng).unwrap();
    let (_, b) = online_infer(&a, &[2, 2], 5, &mut rng).unwrap();
    assert_eq!(b.total_tokens(), snap.total_tokens() + 5);
    assert_eq!(b.documents_seen, snap.documents_seen + 2);
}

#[test]
fn plain_prior_ignores_document_order() {
    let toy = toy();
    let h = hyper(ModelKind::Plain);
    let state = toy.state();
    let permuted = Toy {
        v: toy.v,
        words: vec![toy.words[2].clone(), toy.words[0].clone(), toy.words[1].clone()],
        tables: vec![toy.tables[2].clone(), toy.tables[0].clone(), toy.tables[1].clone()],
        table_topics: vec![
            toy.table_topics[2].clone(),
            toy.table_topics[0].clone(),
            toy.table_topics[1].clone(),
        ],
    }
    .state();
    let a = topic_log_weights(&state, 1, &h, Mode::Batch);
    let b = topic_log_weights(&permuted, 2, &h, Mode::Batch);
    assert_eq!(a.topics, b.topics);
    assert_eq!(a.log_weights, b.log_weights);
}

/// Sweeps a document token by token through the uncached public entry
/// points, in the same order as [`sweep_document`].
fn sweep_document_uncached<R: Rng>(state: &mut CrfState, j: usize, h: &Hyperparameters, mode: Mode, rng: &mut R) {
    if state.doc_words(j).is_empty() {
        return;
    }
    state.compact_doc(j).unwrap();
    for i in 0..state.doc_words(j).len() {
        state.unseat_token(j, i).unwrap();
        sample_table_for_token(state, j, i, h, mode, rng).unwrap();
    }
    let tables: Vec<usize> = state.live_tables(j).map(|(t, _, _)| t).collect();
    for t in tables {
        sample_topic_for_table(state, j, t, h, mode, rng).unwrap();
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cached_sweep_is_bitwise_identical(
        seed in any::<u64>(),
        dynamic in any::<bool>(),
        docs in prop::collection::vec(prop::collection::vec(0usize..6, 0..12), 1..6),
    ) {
        let model = if dynamic { ModelKind::Dynamic } else { ModelKind::Plain };
        let h = hyper(model);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = CrfState::new(6, docs).unwrap();
        dhdp::sampler::initialize(&mut state, &h, Mode::Batch, &mut rng).unwrap();
        for mode in [Mode::Batch, Mode::Online] {
            for j in 0..state.num_docs() {
                let mut a = state.clone();
                let mut b = state.clone();
                let mut ra = ChaCha8Rng::seed_from_u64(seed ^ j as u64);
                let mut rb = ra.clone();
                sweep_document(&mut a, j, &h, mode, &mut ra).unwrap();
                sweep_document_uncached(&mut b, j, &h, mode, &mut rb);
                prop_assert_eq!(common::assignments(&a), common::assignments(&b));
                prop_assert_eq!(a.log_likelihood(h.eta).to_bits(), b.log_likelihood(h.eta).to_bits());
            }
        }
    }

    #[test]
    fn sweeps_keep_counts_consistent(
        seed in any::<u64>(),
        docs in prop::collection::vec(prop::collection::vec(0usize..5, 0..10), 1..6),
    ) {
        let h = hyper(ModelKind::Dynamic);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = CrfState::new(5, docs).unwrap();
        dhdp::sampler::initialize(&mut state, &h, Mode::Batch, &mut rng).unwrap();
        for _ in 0..3 {
            sweep(&mut state, &h, Mode::Batch, &mut rng).unwrap();
            prop_assert_eq!(compare_with_recount(&state), Ok(()));
        }
    }
}
