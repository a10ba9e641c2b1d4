#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sln::graph::Snapshot;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Erdős–Rényi graph as a dense adjacency matrix.
pub fn random_adjacency<R: Rng>(rng: &mut R, n: usize, p: f64) -> Vec<Vec<bool>> {
    let mut a = vec![vec![false; n]; n];
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                a[u][v] = true;
                a[v][u] = true;
            }
        }
    }
    a
}

pub fn snapshot_of(a: &[Vec<bool>]) -> Snapshot {
    let n = a.len();
    let edges = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).filter(|&(u, v)| a[u][v]);
    Snapshot::from_edges(n, 1, edges.collect::<Vec<_>>())
}

pub fn neighbor_set(a: &[Vec<bool>], u: usize) -> BTreeSet<usize> {
    (0..a.len()).filter(|&w| a[u][w]).collect()
}

/// `(ja, ad, re, pr)` by set arithmetic.
pub fn brute_neighborhood(a: &[Vec<bool>], u: usize, v: usize) -> [f64; 4] {
    let (nu, nv) = (neighbor_set(a, u), neighbor_set(a, v));
    let common: Vec<usize> = nu.intersection(&nv).copied().collect();
    let union = nu.union(&nv).count();
    let deg = |w: usize| neighbor_set(a, w).len() as f64;
    [
        if union == 0 { 0.0 } else { common.len() as f64 / union as f64 },
        common.iter().map(|&w| 1.0 / deg(w).ln()).sum(),
        common.iter().map(|&w| 1.0 / deg(w)).sum(),
        (nu.len() * nv.len()) as f64,
    ]
}

/// Shortest simple-path length and count by depth-first enumeration, pruned
/// only by the best length found so far.
pub fn enumerate_paths(a: &[Vec<bool>], u: usize, v: usize) -> Option<(usize, u64)> {
    fn walk(a: &[Vec<bool>], at: usize, target: usize, depth: usize, seen: &mut Vec<bool>, best: &mut Option<(usize, u64)>) {
        if at == target {
            match best {
                Some((d, c)) if *d == depth => *c += 1,
                Some((d, _)) if *d < depth => {}
                _ => *best = Some((depth, 1)),
            }
            return;
        }
        if best.is_some_and(|(d, _)| depth >= d) {
            return;
        }
        for w in 0..a.len() {
            if a[at][w] && !seen[w] {
                seen[w] = true;
                walk(a, w, target, depth + 1, seen, best);
                seen[w] = false;
            }
        }
    }
    let mut seen = vec![false; a.len()];
    seen[u] = true;
    let mut best = None;
    walk(a, u, v, 0, &mut seen, &mut best);
    best
}

/// Shortest-path length and count from powers of the adjacency matrix.
pub fn matrix_power_paths(a: &[Vec<bool>], u: usize, v: usize) -> Option<(usize, u64)> {
    let n = a.len();
    let mut walks: Vec<u64> = (0..n).map(|w| u64::from(w == u)).collect();
    for len in 1..n {
        let next: Vec<u64> = (0..n).map(|w| (0..n).filter(|&x| a[x][w]).map(|x| walks[x]).sum()).collect();
        walks = next;
        if walks[v] > 0 {
            return Some((len, walks[v]));
        }
    }
    None
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// For each true topic, the best cosine against any recovered topic, with
/// recovered rows re-indexed onto the generating vocabulary.
pub fn best_match_cosines(model: &sln::topics::TopicModel, truth: &sln::synth::LdaCorpus) -> Vec<f64> {
    let recovered: Vec<Vec<f64>> = model
        .phi
        .iter()
        .map(|row| {
            truth
                .vocab
                .iter()
                .map(|w| model.vocab.binary_search(w).map_or(0.0, |i| row[i]))
                .collect()
        })
        .collect();
    truth
        .phi
        .iter()
        .map(|t| recovered.iter().map(|r| cosine(t, r)).fold(f64::MIN, f64::max))
        .collect()
}

/// Mann–Whitney statistic over all positive/negative pairs, ties counting one half.
pub fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] == 1 {
                continue;
            }
            pairs += 1.0;
            wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
        }
    }
    wins / pairs
}

/// Random scores on a coarse grid (to force ties) with both classes present.
pub fn random_scored_instance<R: Rng>(rng: &mut R) -> (Vec<f64>, Vec<u8>) {
    let n = rng.random_range(2..60);
    let grid = rng.random_range(2..20) as f64;
    let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.3)).collect();
    labels[0] = 1;
    labels[1] = 0;
    let scores = (0..n).map(|_| (rng.random::<f64>() * grid).floor() / grid).collect();
    (scores, labels)
}

/// Pairs with random features where `re` is a per-pair level plus a slow
/// upward drift and the label is `1{re > median}`; labels are monotone by
/// construction and mostly decided by the level rather than by time.
pub fn planted_re_table(pairs: usize, intervals: usize, seed: u64) -> sln::features::FeatureTable {
    use sln::features::{FeatureTable, PairFeatureSeries};
    let mut rng = rng(seed);
    let mut series: Vec<PairFeatureSeries> = (0..pairs)
        .map(|p| {
            let mut re = rng.random::<f64>();
            let vectors = (0..intervals)
                .map(|_| {
                    re += rng.random::<f64>() * 0.04;
                    [rng.random(), rng.random::<f64>() * 3.0, re, rng.random_range(0..30) as f64, rng.random_range(1..8) as f64, rng.random_range(0..5) as f64, rng.random_range(0..4) as f64]
                })
                .collect();
            PairFeatureSeries { u: p, v: p + 1, vectors, labels: Vec::new() }
        })
        .collect();
    let mut all: Vec<f64> = series.iter().flat_map(|s| s.vectors.iter().map(|v| v[2])).collect();
    all.sort_by(f64::total_cmp);
    let median = all[all.len() / 2];
    for s in &mut series {
        s.labels = s.vectors.iter().map(|v| u8::from(v[2] > median)).collect();
    }
    FeatureTable { learners: (0..=pairs).map(|u| format!("l{u}")).collect(), intervals, series }
}

/// Random features with labels drawn independently of them; each pair is
/// either linked from the first interval or never, so time carries no signal.
pub fn null_table(pairs: usize, intervals: usize, seed: u64) -> sln::features::FeatureTable {
    use sln::features::{FeatureTable, PairFeatureSeries};
    let mut rng = rng(seed);
    let series = (0..pairs)
        .map(|p| {
            let vectors = (0..intervals).map(|_| std::array::from_fn(|_| rng.random::<f64>())).collect();
            let linked = u8::from(rng.random::<f64>() < 0.3);
            let labels = vec![linked; intervals];
            PairFeatureSeries { u: p, v: p + 1, vectors, labels }
        })
        .collect();
    FeatureTable { learners: (0..=pairs).map(|u| format!("l{u}")).collect(), intervals, series }
}

pub fn flat<T: Copy>(rows: &[Vec<T>]) -> Vec<T> {
    rows.iter().flatten().copied().collect()
}

pub fn labels_of(table: &sln::features::FeatureTable, pairs: &[usize]) -> Vec<u8> {
    pairs.iter().flat_map(|&p| table.series[p].labels.iter().copied()).collect()
}
