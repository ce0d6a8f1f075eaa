//! Independent oracles and harnesses shared by the integration suites.
//! Nothing here calls the library code it is used to check.

#![allow(dead_code)]

use std::collections::BTreeMap;

use dhdp::crf::{CrfState, Hyperparameters, ModelKind, TopicId};
use dhdp::sampler::{sweep, Mode};
use rand::Rng;

/// log Γ(x) by Lanczos (g = 7, n = 9), independent of the library's.
pub fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Brute-force Mann–Whitney: P(abnormal < normal) + ½ P(tie), with
/// "abnormal" the positive class and lower scores more abnormal.
pub fn mann_whitney(scores: &[f64], labels: &[bool]) -> (u64, u64, u64) {
    let (mut wins, mut ties, mut pairs) = (0u64, 0u64, 0u64);
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1;
            if si < sj {
                wins += 1;
            } else if si == sj {
                ties += 1;
            }
        }
    }
    (wins, ties, pairs)
}

pub fn mann_whitney_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (w, t, p) = mann_whitney(scores, labels);
    (2 * w + t) as f64 / (2 * p) as f64
}

/// Harmonic mean computed directly in the probability domain.
pub fn harmonic_mean_direct(ps: &[f64]) -> f64 {
    ps.len() as f64 / ps.iter().map(|p| 1.0 / p).sum::<f64>()
}

/// Counts rebuilt from raw assignments through the public accessors.
#[derive(Debug, Default, PartialEq)]
pub struct Recount {
    pub word_topic: BTreeMap<(usize, TopicId), u32>,
    pub topic_tokens: BTreeMap<TopicId, u64>,
    pub topic_tables: BTreeMap<TopicId, u64>,
    pub doc_topic_tables: Vec<BTreeMap<TopicId, u32>>,
    pub total_tables: u64,
    pub total_tokens: u64,
}

pub fn recount(state: &CrfState) -> Recount {
    let mut r = Recount::default();
    for j in 0..state.num_docs() {
        let mut tables_seen = BTreeMap::new();
        for (i, &w) in state.doc_words(j).iter().enumerate() {
            let Some(t) = state.table_of(j, i) else { continue };
            let k = state.table_topic(j, t).expect("seated token on a live table");
            *r.word_topic.entry((w, k)).or_insert(0) += 1;
            *r.topic_tokens.entry(k).or_insert(0) += 1;
            r.total_tokens += 1;
            tables_seen.insert(t, k);
        }
        let mut per_doc = BTreeMap::new();
        for (_, k) in tables_seen {
            *per_doc.entry(k).or_insert(0) += 1;
            *r.topic_tables.entry(k).or_insert(0) += 1;
            r.total_tables += 1;
        }
        r.doc_topic_tables.push(per_doc);
    }
    r
}

/// Compares every cached count of `state` with a recount; `Err` names the
/// first difference.
pub fn compare_with_recount(state: &CrfState) -> Result<(), String> {
    let r = recount(state);
    if state.total_tokens() != r.total_tokens {
        return Err(format!("total tokens {} vs {}", state.total_tokens(), r.total_tokens));
    }
    if state.total_tables() != r.total_tables {
        return Err(format!("total tables {} vs {}", state.total_tables(), r.total_tables));
    }
    let active: Vec<TopicId> = state.active_topics().collect();
    let recounted: Vec<TopicId> = r.topic_tokens.keys().copied().collect();
    if active != recounted {
        return Err(format!("active topics {active:?} vs {recounted:?}"));
    }
    for &k in &active {
        if state.topic_tokens(k) != r.topic_tokens[&k] {
            return Err(format!("l_.{k}"));
        }
        if state.topic_tables(k) != r.topic_tables[&k] {
            return Err(format!("m_.{k}"));
        }
        for w in 0..state.vocab_size() {
            let want = r.word_topic.get(&(w, k)).copied().unwrap_or(0);
            if state.word_count(w, k) != want {
                return Err(format!("l_{w},{k}: {} vs {want}", state.word_count(w, k)));
            }
        }
        let mut cumulative = 0u64;
        for j in 0..state.num_docs() {
            let m = r.doc_topic_tables[j].get(&k).copied().unwrap_or(0);
            cumulative += u64::from(m);
            if state.tables_in_doc(j, k) != m {
                return Err(format!("m_{j},{k}"));
            }
            if state.tables_through(j, k) != cumulative {
                return Err(format!("m_1:{j},{k}"));
            }
        }
    }
    Ok(())
}

/// Raw assignments of a seated state with tables renumbered densely.
pub fn assignments(state: &CrfState) -> (Vec<Vec<usize>>, Vec<Vec<TopicId>>) {
    let mut tables = Vec::new();
    let mut topics = Vec::new();
    for j in 0..state.num_docs() {
        let mut remap = BTreeMap::new();
        let mut doc_topics = Vec::new();
        let mut doc_tables = Vec::new();
        for i in 0..state.doc_words(j).len() {
            let t = state.table_of(j, i).expect("seated");
            let next = remap.len();
            let dense = *remap.entry(t).or_insert_with(|| {
                doc_topics.push(state.table_topic(j, t).expect("live"));
                next
            });
            doc_tables.push(dense);
        }
        tables.push(doc_tables);
        topics.push(doc_topics);
    }
    (tables, topics)
}

/// A draw from the joint of assignments and words.
#[derive(Debug, Clone)]
pub struct JointDraw {
    pub words: Vec<Vec<usize>>,
    pub tables: Vec<Vec<usize>>,
    pub table_topics: Vec<Vec<TopicId>>,
}

/// Samples the model's generative process: tokens pick tables ∝ n_jt or α,
/// new tables pick topics from the (dynamic or plain) prior over the
/// counts so far, words come from the collapsed Dirichlet–multinomial.
pub fn forward_sample<R: Rng>(hyper: &Hyperparameters, v: usize, doc_lens: &[usize], rng: &mut R) -> JointDraw {
    let mut topic_tables: Vec<u64> = Vec::new(); // m_.k so far
    let mut word_topic: Vec<Vec<u32>> = Vec::new();
    let mut prev_doc: Vec<u32> = Vec::new();
    let mut draw = JointDraw {
        words: Vec::new(),
        tables: Vec::new(),
        table_topics: Vec::new(),
    };
    for &n in doc_lens {
        let mut table_sizes: Vec<u32> = Vec::new();
        let mut table_topic: Vec<usize> = Vec::new();
        let mut this_doc: Vec<u32> = vec![0; topic_tables.len()];
        let (mut words, mut tables) = (Vec::new(), Vec::new());
        for _ in 0..n {
            let mut w: Vec<f64> = table_sizes.iter().map(|&c| f64::from(c)).collect();
            w.push(hyper.alpha);
            let t = pick(rng, &w);
            if t == table_sizes.len() {
                let mut kw: Vec<f64> = (0..topic_tables.len())
                    .map(|k| match hyper.model {
                        ModelKind::Plain => topic_tables[k] as f64,
                        ModelKind::Dynamic => {
                            f64::from(this_doc[k])
                                + f64::from(prev_doc.get(k).copied().unwrap_or(0))
                                + hyper.delta * topic_tables[k] as f64
                        }
                    })
                    .collect();
                kw.push(hyper.gamma);
                let k = pick(rng, &kw);
                if k == topic_tables.len() {
                    topic_tables.push(0);
                    word_topic.push(vec![0; v]);
                    this_doc.push(0);
                }
                topic_tables[k] += 1;
                this_doc[k] += 1;
                table_sizes.push(0);
                table_topic.push(k);
            }
            table_sizes[t] += 1;
            let k = table_topic[t];
            let total: u32 = word_topic[k].iter().sum();
            let ww: Vec<f64> = word_topic[k]
                .iter()
                .map(|&c| (f64::from(c) + hyper.eta) / (f64::from(total) + v as f64 * hyper.eta))
                .collect();
            let x = pick(rng, &ww);
            word_topic[k][x] += 1;
            words.push(x);
            tables.push(t);
        }
        prev_doc = this_doc;
        draw.words.push(words);
        draw.tables.push(tables);
        draw.table_topics.push(table_topic);
    }
    draw
}

/// Redraws all words given the assignments from the collapsed
/// Dirichlet–multinomial, in token order.
pub fn resample_words<R: Rng>(
    v: usize,
    eta: f64,
    tables: &[Vec<usize>],
    table_topics: &[Vec<TopicId>],
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let mut counts: BTreeMap<TopicId, Vec<u32>> = BTreeMap::new();
    tables
        .iter()
        .zip(table_topics)
        .map(|(doc, tt)| {
            doc.iter()
                .map(|&t| {
                    let c = counts.entry(tt[t]).or_insert_with(|| vec![0; v]);
                    let total: u32 = c.iter().sum();
                    let w: Vec<f64> = c
                        .iter()
                        .map(|&n| (f64::from(n) + eta) / (f64::from(total) + v as f64 * eta))
                        .collect();
                    let x = pick(rng, &w);
                    c[x] += 1;
                    x
                })
                .collect()
        })
        .collect()
}

pub fn pick<R: Rng>(rng: &mut R, w: &[f64]) -> usize {
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &x) in w.iter().enumerate() {
        if u < x {
            return i;
        }
        u -= x;
    }
    w.iter().rposition(|&x| x > 0.0).expect("positive weight")
}

/// Statistics compared by the joint-distribution test.
pub const GEWEKE_STATS: [&str; 3] = ["K", "m_total", "l_topic_of_first_token"];

pub fn geweke_stats(tables: &[Vec<usize>], table_topics: &[Vec<TopicId>]) -> [f64; 3] {
    let mut topics = std::collections::BTreeSet::new();
    let mut m = 0usize;
    for tt in table_topics {
        m += tt.len();
        topics.extend(tt.iter().copied());
    }
    let first = table_topics[0][tables[0][0]];
    let l: usize = tables
        .iter()
        .zip(table_topics)
        .map(|(doc, tt)| doc.iter().filter(|&&t| tt[t] == first).count())
        .sum();
    [topics.len() as f64, m as f64, l as f64]
}

#[derive(Debug, Clone)]
pub struct GewekeRow {
    pub stat: &'static str,
    pub forward_mean: f64,
    pub forward_se: f64,
    pub gibbs_mean: f64,
    pub gibbs_se: f64,
}

impl GewekeRow {
    pub fn z(&self) -> f64 {
        (self.forward_mean - self.gibbs_mean) / (self.forward_se.powi(2) + self.gibbs_se.powi(2)).sqrt()
    }
}

fn mean_se_iid(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean and batch-means standard error of an autocorrelated series.
fn mean_se_batched(xs: &[f64], batches: usize) -> (f64, f64) {
    let size = xs.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let (mean, se) = mean_se_iid(&means);
    (mean, se)
}

/// Marginal-conditional draws against successive-conditional draws that
/// alternate one batch Gibbs sweep with a fresh draw of the words.
pub fn geweke<R: Rng>(
    hyper: &Hyperparameters,
    mode: Mode,
    v: usize,
    doc_lens: &[usize],
    draws: usize,
    rng: &mut R,
) -> Vec<GewekeRow> {
    let mut forward = vec![Vec::with_capacity(draws); 3];
    for _ in 0..draws {
        let d = forward_sample(hyper, v, doc_lens, rng);
        for (s, x) in geweke_stats(&d.tables, &d.table_topics).into_iter().enumerate() {
            forward[s].push(x);
        }
    }
    let mut gibbs = vec![Vec::with_capacity(draws); 3];
    let start = forward_sample(hyper, v, doc_lens, rng);
    let mut state = CrfState::from_assignments(v, start.words, &start.tables, &start.table_topics).unwrap();
    for _ in 0..draws {
        sweep(&mut state, hyper, mode, rng).unwrap();
        let (tables, topics) = assignments(&state);
        for (s, x) in geweke_stats(&tables, &topics).into_iter().enumerate() {
            gibbs[s].push(x);
        }
        let words = resample_words(v, hyper.eta, &tables, &topics, rng);
        state = CrfState::from_assignments(v, words, &tables, &topics).unwrap();
    }
    (0..3)
        .map(|s| {
            let (fm, fse) = mean_se_iid(&forward[s]);
            let (gm, gse) = mean_se_batched(&gibbs[s], 100);
            GewekeRow {
                stat: GEWEKE_STATS[s],
                forward_mean: fm,
                forward_se: fse,
                gibbs_mean: gm,
                gibbs_se: gse,
            }
        })
        .collect()
}

/// Raw assignments of a small state, with the exact conditionals of the
/// sampler written out by direct substitution.
#[derive(Debug, Clone)]
pub struct Toy {
    pub v: usize,
    pub words: Vec<Vec<usize>>,
    pub tables: Vec<Vec<usize>>,
    pub table_topics: Vec<Vec<TopicId>>,
}

impl Toy {
    pub fn state(&self) -> CrfState {
        CrfState::from_assignments(self.v, self.words.clone(), &self.tables, &self.table_topics).unwrap()
    }

    pub fn num_topics(&self) -> usize {
        self.table_topics.iter().flatten().max().map_or(0, |&k| k + 1)
    }

    /// Tables per (doc, topic), skipping `skip` = (doc, table).
    fn m(&self, skip: Option<(usize, usize)>) -> Vec<Vec<u64>> {
        let kk = self.num_topics();
        self.table_topics
            .iter()
            .enumerate()
            .map(|(j, tt)| {
                let mut row = vec![0; kk];
                for (t, &k) in tt.iter().enumerate() {
                    if skip != Some((j, t)) {
                        row[k] += 1;
                    }
                }
                row
            })
            .collect()
    }

    /// l_wk over all tokens except those in `skip_table` and `skip_token`.
    fn l(&self, skip_table: Option<(usize, usize)>, skip_token: Option<(usize, usize)>) -> Vec<Vec<f64>> {
        let mut l = vec![vec![0.0; self.v]; self.num_topics()];
        for j in 0..self.words.len() {
            for (i, &w) in self.words[j].iter().enumerate() {
                let t = self.tables[j][i];
                if skip_table == Some((j, t)) || skip_token == Some((j, i)) {
                    continue;
                }
                l[self.table_topics[j][t]][w] += 1.0;
            }
        }
        l
    }

    /// Prior weights for every topic id then fresh, with `m` already
    /// excluding the table in question.
    fn prior(&self, m: &[Vec<u64>], j: usize, hyper: &Hyperparameters) -> Vec<f64> {
        let kk = self.num_topics();
        let mut out: Vec<f64> = (0..kk)
            .map(|k| match hyper.model {
                ModelKind::Plain => m.iter().map(|row| row[k]).sum::<u64>() as f64,
                ModelKind::Dynamic => {
                    let prev = if j == 0 { 0 } else { m[j - 1][k] };
                    let cum: u64 = m[..=j].iter().map(|row| row[k]).sum();
                    (m[j][k] + prev) as f64 + hyper.delta * cum as f64
                }
            })
            .collect();
        out.push(hyper.gamma);
        out
    }

    /// The next-document factor with born topics skipped, for the
    /// excluded table hypothetically given each candidate.
    fn next_factor(&self, m: &[Vec<u64>], j: usize, hyper: &Hyperparameters) -> Vec<f64> {
        let kk = self.num_topics();
        (0..=kk)
            .map(|cand| {
                if hyper.model == ModelKind::Plain || j + 1 >= self.words.len() {
                    return 1.0;
                }
                let mut g = 1.0;
                for s in 0..kk {
                    let bump = u64::from(cand == s);
                    let cur = m[j][s] + bump;
                    let cum = m[..=j].iter().map(|row| row[s]).sum::<u64>() + bump;
                    if cum == 0 {
                        continue;
                    }
                    for n in 0..m[j + 1][s] {
                        g *= (cur + n) as f64 + hyper.delta * (cum + n) as f64;
                    }
                }
                g
            })
            .collect()
    }

    fn block(&self, l: &[Vec<f64>], k: Option<usize>, words: &[usize], eta: f64) -> f64 {
        let v = self.v as f64;
        let zero = vec![0.0; self.v];
        let row = k.map_or(&zero, |k| &l[k]);
        let mut counts = vec![0.0; self.v];
        for &w in words {
            counts[w] += 1.0;
        }
        let total: f64 = row.iter().sum();
        let mut lp = ln_gamma(total + v * eta) - ln_gamma(total + words.len() as f64 + v * eta);
        for w in 0..self.v {
            lp += ln_gamma(row[w] + counts[w] + eta) - ln_gamma(row[w] + eta);
        }
        lp.exp()
    }

    /// Exact distribution of table (j, t)'s topic: ids `0..K`, then fresh.
    pub fn table_topic_probs(&self, j: usize, t: usize, hyper: &Hyperparameters, next_doc: bool) -> Vec<f64> {
        let m = self.m(Some((j, t)));
        let l = self.l(Some((j, t)), None);
        let words: Vec<usize> = (0..self.words[j].len())
            .filter(|&i| self.tables[j][i] == t)
            .map(|i| self.words[j][i])
            .collect();
        let prior = self.prior(&m, j, hyper);
        let g = if next_doc {
            self.next_factor(&m, j, hyper)
        } else {
            vec![1.0; prior.len()]
        };
        let kk = self.num_topics();
        let w: Vec<f64> = (0..=kk)
            .map(|c| prior[c] * g[c] * self.block(&l, (c < kk).then_some(c), &words, hyper.eta))
            .collect();
        normalise(&w)
    }

    /// Exact distribution of token (j, i)'s table: the document's tables
    /// in index order, then a new table. The token must not be alone at
    /// its table.
    pub fn token_table_probs(&self, j: usize, i: usize, hyper: &Hyperparameters, next_doc: bool) -> Vec<f64> {
        let m = self.m(None);
        let l = self.l(None, Some((j, i)));
        let w = self.words[j][i];
        let f = |k: Option<usize>| self.block(&l, k, &[w], hyper.eta);
        let kk = self.num_topics();
        let prior = self.prior(&m, j, hyper);
        let g = if next_doc {
            self.next_factor(&m, j, hyper)
        } else {
            vec![1.0; prior.len()]
        };
        let pk = normalise(&prior.iter().zip(&g).map(|(a, b)| a * b).collect::<Vec<_>>());
        let r: f64 = (0..=kk).map(|c| pk[c] * f((c < kk).then_some(c))).sum();
        let mut out: Vec<f64> = (0..self.table_topics[j].len())
            .map(|t| {
                let n = (0..self.words[j].len())
                    .filter(|&x| x != i && self.tables[j][x] == t)
                    .count();
                n as f64 * f(Some(self.table_topics[j][t]))
            })
            .collect();
        out.push(hyper.alpha * r);
        normalise(&out)
    }
}

pub fn normalise(w: &[f64]) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

/// Asserts every empirical frequency lies within 3 binomial standard
/// errors of its expected probability.
pub fn assert_frequencies(counts: &[u64], probs: &[f64]) {
    let n: u64 = counts.iter().sum();
    for (c, (&k, &p)) in counts.iter().zip(probs).enumerate() {
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let freq = k as f64 / n as f64;
        assert!(
            (freq - p).abs() <= 3.0 * se + 1e-12,
            "outcome {c}: frequency {freq:.5} vs probability {p:.5} (3σ = {:.5})",
            3.0 * se
        );
    }
}
