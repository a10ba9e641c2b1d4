//! Synthetic fixtures: a planted-signal forum and an LDA-generated corpus.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlnError};
use crate::graph::Snapshot;
use crate::ingest::{filter_corpus, CourseWindow, ForumCorpus, Post, Role, Roster, Thread, ThreadStructure};

pub const SYNTH_START: i64 = 1_577_836_800;
const WEEK: i64 = 7 * 24 * 3600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub learners: usize,
    pub threads: usize,
    pub intervals: usize,
    /// Planted discussion topics; each has its own vocabulary.
    pub topics: usize,
    pub words_per_topic: usize,
    pub words_per_post: usize,
    /// Chance per interval that an open thread gains a newcomer.
    pub join_rate: f64,
    /// Chance per interval that an existing participant replies again.
    pub reply_rate: f64,
    /// Newcomer weight `base + re_weight Σ Re + topic_weight 1{shared topic}`.
    pub base_weight: f64,
    pub re_weight: f64,
    pub topic_weight: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            learners: 100,
            threads: 50,
            intervals: 20,
            topics: 5,
            words_per_topic: 30,
            words_per_post: 12,
            join_rate: 0.35,
            reply_rate: 0.2,
            base_weight: 0.05,
            re_weight: 4.0,
            topic_weight: 1.0,
            seed: 0,
        }
    }
}

const SYLLABLES: [&str; 16] = ["ba", "ko", "di", "mu", "te", "ra", "no", "fi", "lu", "ze", "pa", "go", "vi", "sa", "ny", "ho"];

/// A pronounceable pseudo-word; distinct indices give distinct words.
pub fn pseudo_word(index: usize) -> String {
    let mut word = String::from("q");
    let mut n = index;
    for _ in 0..3 {
        word.push_str(SYLLABLES[n % SYLLABLES.len()]);
        n /= SYLLABLES.len();
    }
    word.push('x');
    word
}

fn resource_allocation(g: &Snapshot, u: usize, v: usize) -> f64 {
    let (a, b) = (g.neighbors(u), g.neighbors(v));
    let (mut i, mut j, mut re) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                re += 1.0 / g.degree(a[i]) as f64;
                i += 1;
                j += 1;
            }
        }
    }
    re
}

struct SynthThread {
    topic: usize,
    opened: usize,
    participants: Vec<usize>,
    posts: Vec<Post>,
}

/// Forum whose link formation probability grows with the resource allocation
/// index on the previous snapshot and with shared topical interest.
pub fn synth_forum(config: &SynthConfig) -> Result<ForumCorpus> {
    let SynthConfig { learners: n, threads: n_threads, intervals: l, topics, .. } = *config;
    if n < 2 || n_threads == 0 || l < 2 || topics == 0 || config.words_per_topic == 0 {
        return Err(SlnError::InvalidArgument("synthetic forum needs ≥2 learners, ≥1 thread, ≥2 intervals and ≥1 topic".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let span = WEEK * l as i64;
    let window = CourseWindow::new(SYNTH_START, SYNTH_START + span)?;
    let interval_start = |i: usize| SYNTH_START + span * (i as i64 - 1) / l as i64;
    let ids: Vec<String> = (0..n).map(|u| format!("u{u:03}")).collect();
    let interest: Vec<usize> = (0..n).map(|_| rng.random_range(0..topics)).collect();
    // Learners still silent at their arrival interval join an open thread of their topic.
    let arrival: Vec<usize> = (0..n).map(|_| 1 + rng.random_range(0..l - 1)).collect();

    let mut threads: Vec<SynthThread> = (0..n_threads)
        .map(|t| SynthThread {
            topic: t % topics,
            opened: 1 + rng.random_range(0..l.div_ceil(2)),
            participants: Vec::new(),
            posts: Vec::new(),
        })
        .collect();

    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut posted = vec![false; n];
    let mut counter = 0usize;
    let body = |rng: &mut ChaCha8Rng, topic: usize| -> String {
        (0..config.words_per_post)
            .map(|_| {
                // one word in six is drawn from another topic
                let t = if rng.random_range(0..6) == 0 { rng.random_range(0..topics) } else { topic };
                pseudo_word(t * config.words_per_topic + rng.random_range(0..config.words_per_topic))
            })
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut post = |rng: &mut ChaCha8Rng, th: &mut SynthThread, t: usize, author: usize, i: usize, text: String| {
        counter += 1;
        let offset = rng.random_range(0..(span / l as i64));
        th.posts.push(Post {
            post_id: format!("s{t:03}-{counter:05}"),
            thread_id: format!("s{t:03}"),
            author_id: ids[author].clone(),
            timestamp: interval_start(i) + offset,
            body: text,
            anonymous: false,
            author_role: Role::Learner,
        });
    };

    for i in 1..=l {
        let prior = Snapshot::from_edges(n, i - 1, edges.iter().copied());
        let mut new_edges = Vec::new();
        for (t, th) in threads.iter_mut().enumerate() {
            if th.opened > i {
                continue;
            }
            if th.participants.is_empty() {
                let fans: Vec<usize> = (0..n).filter(|&u| interest[u] == th.topic).collect();
                let opener = match fans.choose(&mut rng) {
                    Some(&u) => u,
                    None => rng.random_range(0..n),
                };
                let text = body(&mut rng, th.topic);
                post(&mut rng, th, t, opener, i, text);
                th.participants.push(opener);
                posted[opener] = true;
                continue;
            }
            if rng.random::<f64>() < config.join_rate {
                let weights: Vec<f64> = (0..n)
                    .map(|c| {
                        if th.participants.contains(&c) {
                            return 0.0;
                        }
                        let re: f64 = th.participants.iter().map(|&p| resource_allocation(&prior, p, c)).sum();
                        let topical = if interest[c] == th.topic { config.topic_weight } else { 0.0 };
                        config.base_weight + config.re_weight * re + topical
                    })
                    .collect();
                let total: f64 = weights.iter().sum();
                if total > 0.0 {
                    let mut pick = rng.random::<f64>() * total;
                    let mut chosen = n - 1;
                    for (c, w) in weights.iter().enumerate() {
                        if pick < *w {
                            chosen = c;
                            break;
                        }
                        pick -= w;
                    }
                    let text = body(&mut rng, th.topic);
                    post(&mut rng, th, t, chosen, i, text);
                    for &p in &th.participants {
                        new_edges.push((p.min(chosen), p.max(chosen)));
                    }
                    th.participants.push(chosen);
                    posted[chosen] = true;
                }
            }
            for k in 0..th.participants.len() {
                if rng.random::<f64>() < config.reply_rate {
                    let author = th.participants[k];
                    let text = body(&mut rng, th.topic);
                    post(&mut rng, th, t, author, i, text);
                }
            }
        }
        let silent: Vec<usize> = (0..n).filter(|&u| arrival[u] <= i && !posted[u]).collect();
        for u in silent {
            let open: Vec<usize> = (0..n_threads).filter(|&t| !threads[t].participants.is_empty()).collect();
            let fitting: Vec<usize> = open.iter().copied().filter(|&t| threads[t].topic == interest[u]).collect();
            let Some(&t) = fitting.choose(&mut rng).or_else(|| open.choose(&mut rng)) else {
                continue;
            };
            let th = &mut threads[t];
            let text = body(&mut rng, th.topic);
            post(&mut rng, th, t, u, i, text);
            for &p in &th.participants {
                new_edges.push((p.min(u), p.max(u)));
            }
            th.participants.push(u);
            posted[u] = true;
        }
        edges.extend(new_edges);
    }

    let out: Vec<Thread> = threads
        .into_iter()
        .enumerate()
        .map(|(t, th)| Thread {
            thread_id: format!("s{t:03}"),
            structure: ThreadStructure::Mooc,
            posts: th.posts,
        })
        .collect();
    filter_corpus(out, "synth", window, &Roster::default())
}

/// Documents drawn from `phi`, with per-document mixtures from a symmetric Dirichlet.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaCorpus {
    pub vocab: Vec<String>,
    /// `topics × vocab` generating distributions.
    pub phi: Vec<Vec<f64>>,
    pub docs: Vec<Vec<String>>,
}

fn dirichlet<R: Rng>(rng: &mut R, alpha: f64, len: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive shape");
    loop {
        let mut v: Vec<f64> = (0..len).map(|_| gamma.sample(rng)).collect();
        let s: f64 = v.iter().sum();
        if s > 0.0 {
            v.iter_mut().for_each(|x| *x /= s);
            return v;
        }
    }
}

fn draw<R: Rng>(rng: &mut R, p: &[f64]) -> usize {
    let mut u = rng.random::<f64>();
    for (k, &w) in p.iter().enumerate() {
        if u < w {
            return k;
        }
        u -= w;
    }
    p.len() - 1
}

/// `topics` topics over a `vocab`-word vocabulary; each topic concentrates on
/// its own block of words plus a light Dirichlet(0.05) spread.
pub fn synth_lda_corpus(topics: usize, vocab: usize, docs: usize, doc_len: usize, doc_alpha: f64, seed: u64) -> LdaCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<String> = (0..vocab).map(pseudo_word).collect();
    let block = vocab / topics.max(1);
    let phi: Vec<Vec<f64>> = (0..topics)
        .map(|t| {
            let noise = dirichlet(&mut rng, 0.05, vocab);
            let mut row: Vec<f64> = (0..vocab)
                .map(|w| 0.2 * noise[w] + if w / block.max(1) == t { 0.8 / block as f64 } else { 0.0 })
                .collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
            row
        })
        .collect();
    let docs = (0..docs)
        .map(|_| {
            let theta = dirichlet(&mut rng, doc_alpha, topics);
            (0..doc_len)
                .map(|_| {
                    let t = draw(&mut rng, &theta);
                    words[draw(&mut rng, &phi[t])].clone()
                })
                .collect()
        })
        .collect();
    LdaCorpus { vocab: words, phi, docs }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudo_words_are_distinct_letters() {
        let words: BTreeSet<String> = (0..500).map(pseudo_word).collect();
        assert_eq!(words.len(), 500);
        assert!(words.iter().all(|w| w.chars().all(|c| c.is_ascii_lowercase())));
    }

    #[test]
    fn default_forum_has_every_learner() {
        let corpus = synth_forum(&SynthConfig::default()).unwrap();
        assert_eq!(corpus.learners().len(), 100);
        assert_eq!(corpus.threads().len(), 50);
    }
}
