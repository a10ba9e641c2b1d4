//! Post preprocessing, LDA by collapsed Gibbs sampling, and learner topic profiles.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

use crate::error::{IoContext, Result, SlnError};
use crate::graph::{interval_of, Timeline};
use crate::ingest::ForumCorpus;

const STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

pub fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

fn is_url(token: &str) -> bool {
    let t = token.trim_start_matches(|c: char| !c.is_alphanumeric());
    t.starts_with("http://") || t.starts_with("https://") || t.starts_with("www.")
}

/// Lowercases, drops URLs, splits on anything that is not a letter or digit,
/// drops stopwords, single characters and pure numbers, then stems (Snowball English).
pub fn preprocess(text: &str) -> Vec<String> {
    let stemmer = Stemmer::create(Algorithm::English);
    let stop = stopwords();
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        if is_url(raw) {
            continue;
        }
        let lower = raw.to_lowercase();
        for word in lower.split(|c: char| !c.is_alphanumeric()) {
            if word.chars().count() < 2 || word.chars().all(|c| c.is_numeric()) || stop.contains(word) {
                continue;
            }
            let stem = stemmer.stem(word);
            if !stop.contains(stem.as_ref()) {
                out.push(stem.into_owned());
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaParams {
    pub k: usize,
    pub iterations: usize,
    /// Defaults to `50 / k`.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub seed: u64,
}

impl Default for LdaParams {
    fn default() -> Self {
        Self {
            k: 20,
            iterations: 1000,
            alpha: None,
            beta: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocMeta {
    pub post_id: String,
    pub author_id: String,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub format: String,
    pub version: u32,
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Sorted vocabulary of stems.
    pub vocab: Vec<String>,
    pub doc_freq: Vec<usize>,
    /// `k × V` topic-word distributions.
    pub phi: Vec<Vec<f64>>,
    /// `D × k` document-topic distributions.
    pub theta: Vec<Vec<f64>>,
    /// One entry per document when fit from a corpus; empty otherwise.
    pub docs: Vec<DocMeta>,
}

pub const TOPICS_FORMAT: &str = "sln-topics";

fn normalize(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Collapsed Gibbs sampling over tokenized documents.
pub fn fit_lda(docs: &[Vec<String>], params: &LdaParams) -> Result<TopicModel> {
    let k = params.k;
    if k < 2 {
        return Err(SlnError::InvalidArgument(format!("LDA needs at least 2 topics, got {k}")));
    }
    let alpha = params.alpha.unwrap_or(50.0 / k as f64);
    let beta = params.beta;
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(SlnError::InvalidArgument("LDA hyperparameters must be positive".into()));
    }
    let vocab: Vec<String> = docs.iter().flatten().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if vocab.is_empty() {
        return Err(SlnError::InvalidArgument("every document is empty after preprocessing".into()));
    }
    let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
    let v_size = vocab.len();
    let mut doc_freq = vec![0; v_size];
    let words: Vec<Vec<usize>> = docs
        .iter()
        .map(|d| {
            let ids: Vec<usize> = d.iter().map(|w| index[w.as_str()]).collect();
            for w in ids.iter().collect::<BTreeSet<_>>() {
                doc_freq[*w] += 1;
            }
            ids
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut n_dk = vec![vec![0u32; k]; docs.len()];
    let mut n_kw = vec![vec![0u32; v_size]; k];
    let mut n_k = vec![0u32; k];
    let mut z: Vec<Vec<usize>> = words
        .iter()
        .enumerate()
        .map(|(d, ws)| {
            ws.iter()
                .map(|&w| {
                    let t = rng.random_range(0..k);
                    n_dk[d][t] += 1;
                    n_kw[t][w] += 1;
                    n_k[t] += 1;
                    t
                })
                .collect()
        })
        .collect();

    let v_beta = v_size as f64 * beta;
    let mut p = vec![0.0; k];
    for _ in 0..params.iterations {
        for (d, ws) in words.iter().enumerate() {
            for (pos, &w) in ws.iter().enumerate() {
                let old = z[d][pos];
                n_dk[d][old] -= 1;
                n_kw[old][w] -= 1;
                n_k[old] -= 1;
                let mut total = 0.0;
                for t in 0..k {
                    total += (n_dk[d][t] as f64 + alpha) * (n_kw[t][w] as f64 + beta) / (n_k[t] as f64 + v_beta);
                    p[t] = total;
                }
                let u = rng.random::<f64>() * total;
                let new = p.iter().position(|&c| u < c).unwrap_or(k - 1);
                z[d][pos] = new;
                n_dk[d][new] += 1;
                n_kw[new][w] += 1;
                n_k[new] += 1;
            }
        }
    }

    let phi = (0..k)
        .map(|t| {
            let mut row: Vec<f64> = n_kw[t].iter().map(|&c| (c as f64 + beta) / (n_k[t] as f64 + v_beta)).collect();
            normalize(&mut row);
            row
        })
        .collect();
    let theta = n_dk
        .iter()
        .map(|counts| {
            let mut row: Vec<f64> = counts.iter().map(|&c| c as f64 + alpha).collect();
            normalize(&mut row);
            row
        })
        .collect();
    Ok(TopicModel {
        format: TOPICS_FORMAT.into(),
        version: 1,
        k,
        alpha,
        beta,
        iterations: params.iterations,
        seed: params.seed,
        vocab,
        doc_freq,
        phi,
        theta,
        docs: Vec::new(),
    })
}

/// Fits on every post of the corpus, one document per post.
pub fn fit_corpus(corpus: &ForumCorpus, params: &LdaParams) -> Result<TopicModel> {
    let posts: Vec<_> = corpus.posts().collect();
    let docs: Vec<Vec<String>> = posts.iter().map(|p| preprocess(&p.body)).collect();
    let mut model = fit_lda(&docs, params)?;
    model.docs = posts
        .iter()
        .map(|p| DocMeta {
            post_id: p.post_id.clone(),
            author_id: p.author_id.clone(),
            timestamp: p.timestamp,
        })
        .collect();
    Ok(model)
}

const FOLD_IN_SWEEPS: usize = 100;
const FOLD_IN_BURN_IN: usize = 50;

/// Fold-in Gibbs sampling against fixed `phi`; the chain is seeded from the
/// model seed, so equal token lists give equal vectors. Posts with no known
/// tokens get the uniform vector `1/k`.
pub fn infer_post_topics(model: &TopicModel, tokens: &[String]) -> Vec<f64> {
    let k = model.k;
    let ids: Vec<usize> = tokens.iter().filter_map(|t| model.vocab.binary_search(t).ok()).collect();
    if ids.is_empty() {
        return vec![1.0 / k as f64; k];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut counts = vec![0u32; k];
    let mut z: Vec<usize> = ids
        .iter()
        .map(|_| {
            let t = rng.random_range(0..k);
            counts[t] += 1;
            t
        })
        .collect();
    let mut acc = vec![0.0; k];
    let mut p = vec![0.0; k];
    for sweep in 0..FOLD_IN_SWEEPS {
        for (pos, &w) in ids.iter().enumerate() {
            counts[z[pos]] -= 1;
            let mut total = 0.0;
            for t in 0..k {
                total += (counts[t] as f64 + model.alpha) * model.phi[t][w];
                p[t] = total;
            }
            let u = rng.random::<f64>() * total;
            let new = p.iter().position(|&c| u < c).unwrap_or(k - 1);
            z[pos] = new;
            counts[new] += 1;
        }
        if sweep >= FOLD_IN_BURN_IN {
            for t in 0..k {
                acc[t] += counts[t] as f64 + model.alpha;
            }
        }
    }
    normalize(&mut acc);
    acc
}

impl TopicModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: Self = serde_json::from_str(&std::fs::read_to_string(path).at(path)?)?;
        if model.format != TOPICS_FORMAT || model.version != 1 {
            return Err(SlnError::Format(format!("expected {TOPICS_FORMAT} v1, found {} v{}", model.format, model.version)));
        }
        Ok(model)
    }

    /// Mean theta mass per topic.
    pub fn topic_support(&self) -> Vec<f64> {
        let mut support = vec![0.0; self.k];
        for row in &self.theta {
            for (s, v) in support.iter_mut().zip(row) {
                *s += v;
            }
        }
        let d = self.theta.len().max(1) as f64;
        support.iter().map(|s| s / d).collect()
    }

    /// Topic vector of a fitted document, by post id.
    pub fn doc_topics(&self, post_id: &str) -> Option<&[f64]> {
        self.docs.iter().position(|d| d.post_id == post_id).map(|i| self.theta[i].as_slice())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicWords {
    pub topic: usize,
    pub support: f64,
    pub words: Vec<(String, f64)>,
}

/// The `n` most probable stems of topic `k` (ties broken by stem).
pub fn top_words(model: &TopicModel, k: usize, n: usize) -> Result<TopicWords> {
    let row = model
        .phi
        .get(k)
        .ok_or_else(|| SlnError::InvalidArgument(format!("topic {k} out of range 0..{}", model.k)))?;
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then_with(|| model.vocab[a].cmp(&model.vocab[b])));
    Ok(TopicWords {
        topic: k,
        support: model.topic_support()[k],
        words: order.into_iter().take(n).map(|w| (model.vocab[w].clone(), row[w])).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerTopicProfile {
    pub learner: String,
    pub interval: usize,
    pub mean_vector: Vec<f64>,
    /// Topics whose mean mass is at least the threshold, ascending.
    pub active_topics: BTreeSet<usize>,
}

pub fn topic_overlap(a: &LearnerTopicProfile, b: &LearnerTopicProfile) -> usize {
    a.active_topics.intersection(&b.active_topics).count()
}

fn active(mean: &[f64], threshold: f64, has_posts: bool) -> BTreeSet<usize> {
    if !has_posts {
        return BTreeSet::new();
    }
    mean.iter().enumerate().filter(|(_, &m)| m >= threshold).map(|(t, _)| t).collect()
}

/// Mean topic vector of `u`'s fitted posts with interval ≤ `i`, thresholded.
pub fn learner_profile(model: &TopicModel, timeline: &Timeline, u: &str, i: usize, threshold: f64) -> LearnerTopicProfile {
    let docs = model.docs.iter().enumerate().filter(|(_, meta)| {
        meta.author_id == u && interval_of(meta.timestamp, timeline.window(), timeline.intervals()).is_some_and(|n| n <= i)
    });
    let (mean, count) = mean_topics(model, docs.map(|(d, _)| d));
    LearnerTopicProfile {
        learner: u.to_string(),
        interval: i,
        active_topics: active(&mean, threshold, count > 0),
        mean_vector: mean,
    }
}

/// Mean theta row over `docs`, summed in the given order; all-zero when empty.
fn mean_topics(model: &TopicModel, docs: impl Iterator<Item = usize>) -> (Vec<f64>, usize) {
    let mut mean = vec![0.0; model.k];
    let mut count = 0usize;
    for d in docs {
        for (m, v) in mean.iter_mut().zip(&model.theta[d]) {
            *m += v;
        }
        count += 1;
    }
    if count > 0 {
        for m in &mut mean {
            *m /= count as f64;
        }
    }
    (mean, count)
}

/// Active topic sets for every learner and interval, indexed like the timeline.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileTable {
    pub k: usize,
    pub threshold: f64,
    /// `active[u][i]` for `i` in `0..=L`; interval 0 is always empty.
    active: Vec<Vec<Vec<usize>>>,
}

impl ProfileTable {
    pub fn build(model: &TopicModel, timeline: &Timeline, threshold: f64) -> Self {
        let n = timeline.learners().len();
        let l = timeline.intervals();
        // fitted documents per learner, in model order, tagged with their interval
        let mut own: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (d, meta) in model.docs.iter().enumerate() {
            if let (Some(u), Some(i)) = (
                timeline.learner_index(&meta.author_id),
                interval_of(meta.timestamp, timeline.window(), l),
            ) {
                own[u].push((d, i));
            }
        }
        let active = own
            .iter()
            .map(|docs| {
                (0..=l)
                    .map(|i| {
                        let (mean, count) = mean_topics(model, docs.iter().filter(|&&(_, n)| n <= i).map(|&(d, _)| d));
                        active(&mean, threshold, count > 0).into_iter().collect()
                    })
                    .collect()
            })
            .collect();
        Self { k: model.k, threshold, active }
    }

    /// Profiles with no topic data: every active set is empty.
    pub fn empty(learners: usize, intervals: usize, k: usize) -> Self {
        Self {
            k,
            threshold: 1.0 / k as f64,
            active: vec![vec![Vec::new(); intervals + 1]; learners],
        }
    }

    pub fn active(&self, u: usize, i: usize) -> &[usize] {
        &self.active[u][i]
    }

    /// `|K_u(i) ∩ K_v(i)|`.
    pub fn overlap(&self, u: usize, v: usize, i: usize) -> usize {
        let (a, b) = (&self.active[u][i], &self.active[v][i]);
        let (mut x, mut y, mut n) = (0, 0, 0);
        while x < a.len() && y < b.len() {
            match a[x].cmp(&b[y]) {
                std::cmp::Ordering::Less => x += 1,
                std::cmp::Ordering::Greater => y += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    x += 1;
                    y += 1;
                }
            }
        }
        n
    }
}

/// Top words for every topic, ordered by descending support.
pub fn topic_table(model: &TopicModel, n: usize) -> Vec<TopicWords> {
    let mut rows: Vec<TopicWords> = (0..model.k).map(|k| top_words(model, k, n).expect("k in range")).collect();
    rows.sort_by(|a, b| b.support.total_cmp(&a.support).then(a.topic.cmp(&b.topic)));
    rows
}

/// One row per topic: `topic,support,word1,p1,...,wordN,pN`.
pub fn write_top_words<W: std::io::Write>(rows: &[TopicWords], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let n = rows.iter().map(|r| r.words.len()).max().unwrap_or(0);
    let mut header = vec!["topic".to_string(), "support".into()];
    for k in 1..=n {
        header.push(format!("word{k}"));
        header.push(format!("p{k}"));
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.topic.to_string(), r.support.to_string()];
        for (word, p) in &r.words {
            rec.push(word.clone());
            rec.push(p.to_string());
        }
        rec.resize(header.len(), String::new());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| SlnError::Format(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preprocess_examples() {
        assert_eq!(preprocess("Check https://x.y please!!"), vec!["check"]);
        assert!(preprocess("").is_empty());
        let t = preprocess("running runs ran");
        assert_eq!(t[0], t[1]);
        assert_eq!(preprocess("The SVM's kernel (RBF) isn't converging, 42 times."), vec!["svm", "kernel", "rbf", "converg", "time"]);
    }

    #[test]
    fn single_word_corpus_is_degenerate() {
        let docs = vec![vec!["svm".to_string(); 5]; 4];
        let model = fit_lda(&docs, &LdaParams { k: 3, iterations: 20, ..Default::default() }).unwrap();
        for k in 0..3 {
            let top = top_words(&model, k, 1).unwrap();
            assert_eq!(top.words[0].0, "svm");
            assert!((top.words[0].1 - 1.0).abs() < 1e-12);
        }
        assert!(top_words(&model, 3, 1).is_err());
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(fit_lda(&[vec![], vec![]], &LdaParams::default()).is_err());
    }

    #[test]
    fn empty_post_is_uniform() {
        let docs = vec![vec!["a1".to_string(), "b2".to_string()]];
        let model = fit_lda(&docs, &LdaParams { k: 4, iterations: 5, ..Default::default() }).unwrap();
        assert_eq!(infer_post_topics(&model, &[]), vec![0.25; 4]);
        assert_eq!(infer_post_topics(&model, &["zzz".to_string()]), vec![0.25; 4]);
    }
}
