//! Pair features per interval: neighborhood (Ja, Ad, Re, Pr), path (Lp, Np) and topic overlap (To).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IoContext, Result, SlnError};
use crate::graph::{Snapshot, Timeline};
use crate::topics::ProfileTable;

/// Column order of every feature vector; convolutional models rely on it.
pub const FEATURE_COLUMNS: [&str; 7] = ["ja", "ad", "re", "pr", "lp", "np", "to"];
pub const FEATURES: usize = FEATURE_COLUMNS.len();

pub type FeatureVector = [f64; FEATURES];

pub fn column_index(name: &str) -> Option<usize> {
    FEATURE_COLUMNS.iter().position(|c| *c == name)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighborhood {
    pub ja: f64,
    pub ad: f64,
    pub re: f64,
    pub pr: f64,
}

/// Jaccard, Adamic-Adar (natural log), resource allocation and preferential attachment.
pub fn neighborhood_features(g: &Snapshot, u: usize, v: usize) -> Neighborhood {
    let (a, b) = (g.neighbors(u), g.neighbors(v));
    let (mut x, mut y) = (0, 0);
    let (mut common, mut ad, mut re) = (0usize, 0.0, 0.0);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => {
                // a common neighbor touches both u and v, so its degree is at least 2
                let d = g.degree(a[x]) as f64;
                ad += 1.0 / d.ln();
                re += 1.0 / d;
                common += 1;
                x += 1;
                y += 1;
            }
        }
    }
    let union = a.len() + b.len() - common;
    Neighborhood {
        ja: if union == 0 { 0.0 } else { common as f64 / union as f64 },
        ad,
        re,
        pr: (a.len() * b.len()) as f64,
    }
}

/// BFS distances and shortest-path counts from `source`.
fn bfs_counts(g: &Snapshot, source: usize) -> (Vec<usize>, Vec<u64>) {
    let n = g.nodes();
    let mut dist = vec![usize::MAX; n];
    let mut sigma = vec![0u64; n];
    dist[source] = 0;
    sigma[source] = 1;
    let mut queue = std::collections::VecDeque::from([source]);
    while let Some(x) = queue.pop_front() {
        for &w in g.neighbors(x) {
            if dist[w] == usize::MAX {
                dist[w] = dist[x] + 1;
                queue.push_back(w);
            }
            if dist[w] == dist[x] + 1 {
                sigma[w] = sigma[w].saturating_add(sigma[x]);
            }
        }
    }
    (dist, sigma)
}

/// `(Lp, Np)`: shortest-path length and number of shortest paths; `(sentinel, 0)` when disconnected.
pub fn path_features(g: &Snapshot, u: usize, v: usize, sentinel: usize) -> (usize, u64) {
    let (dist, sigma) = bfs_counts(g, u);
    if dist[v] == usize::MAX {
        (sentinel, 0)
    } else {
        (dist[v], sigma[v])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LeakagePolicy {
    /// Features for interval `i` come from `G(i-1)`.
    #[default]
    StrictPrior,
    /// Features for interval `i` come from `G(i)`.
    Concurrent,
}

impl std::str::FromStr for LeakagePolicy {
    type Err = SlnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict-prior" => Ok(Self::StrictPrior),
            "concurrent" => Ok(Self::Concurrent),
            other => Err(SlnError::InvalidArgument(format!("unknown leakage policy `{other}`"))),
        }
    }
}

impl LeakagePolicy {
    pub fn source_interval(self, i: usize) -> usize {
        match self {
            Self::StrictPrior => i - 1,
            Self::Concurrent => i,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFeatureSeries {
    pub u: usize,
    pub v: usize,
    /// `vectors[i - 1] = e_uv(i)`.
    pub vectors: Vec<FeatureVector>,
    /// `labels[i - 1] = y_uv(i)`.
    pub labels: Vec<u8>,
}

impl PairFeatureSeries {
    /// First interval with a positive label.
    pub fn formation_interval(&self) -> Option<usize> {
        self.labels.iter().position(|&y| y == 1).map(|p| p + 1)
    }

    pub fn final_label(&self) -> u8 {
        self.labels.last().copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub learners: Vec<String>,
    pub intervals: usize,
    pub series: Vec<PairFeatureSeries>,
}

impl FeatureTable {
    pub fn columns() -> Vec<String> {
        FEATURE_COLUMNS.iter().map(|c| c.to_string()).collect()
    }

    pub fn final_labels(&self) -> Vec<u8> {
        self.series.iter().map(PairFeatureSeries::final_label).collect()
    }
}

fn features_at(g: &Snapshot, u: usize, v: usize, dist: &[usize], sigma: &[u64], sentinel: usize, to: usize) -> FeatureVector {
    let nb = neighborhood_features(g, u, v);
    let (lp, np) = if dist[v] == usize::MAX { (sentinel, 0) } else { (dist[v], sigma[v]) };
    [nb.ja, nb.ad, nb.re, nb.pr, lp as f64, np as f64, to as f64]
}

/// Default `Lp` sentinel for disconnected pairs: the node count.
pub fn default_sentinel(timeline: &Timeline) -> usize {
    timeline.learners().len()
}

fn check_pair(timeline: &Timeline, u: usize, v: usize) -> Result<()> {
    let n = timeline.learners().len();
    if u == v || u >= n || v >= n {
        return Err(SlnError::UnknownPair(u.to_string(), v.to_string()));
    }
    Ok(())
}

/// The feature and label series of one pair.
pub fn assemble_series(
    timeline: &Timeline,
    profiles: &ProfileTable,
    u: usize,
    v: usize,
    policy: LeakagePolicy,
    sentinel: usize,
) -> Result<PairFeatureSeries> {
    check_pair(timeline, u, v)?;
    let (u, v) = (u.min(v), u.max(v));
    let l = timeline.intervals();
    let mut vectors = Vec::with_capacity(l);
    let mut labels = Vec::with_capacity(l);
    for i in 1..=l {
        let src = policy.source_interval(i);
        let g = timeline.snapshot(src);
        let (dist, sigma) = bfs_counts(&g, u);
        vectors.push(features_at(&g, u, v, &dist, &sigma, sentinel, profiles.overlap(u, v, src)));
        labels.push(u8::from(timeline.label(u, v, i)));
    }
    Ok(PairFeatureSeries { u, v, vectors, labels })
}

/// Series for every unordered learner pair, in `(u, v)` lexicographic order.
///
/// Topic overlap is read at the same interval as the topology.
pub fn assemble_all(timeline: &Timeline, profiles: &ProfileTable, policy: LeakagePolicy, sentinel: usize) -> FeatureTable {
    let n = timeline.learners().len();
    let l = timeline.intervals();
    let mut series: Vec<PairFeatureSeries> = (0..n)
        .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
        .map(|(u, v)| PairFeatureSeries {
            u,
            v,
            vectors: Vec::with_capacity(l),
            labels: Vec::with_capacity(l),
        })
        .collect();
    for i in 1..=l {
        let src = policy.source_interval(i);
        let g = timeline.snapshot(src);
        let mut k = 0;
        for u in 0..n {
            let (dist, sigma) = bfs_counts(&g, u);
            for v in u + 1..n {
                let s = &mut series[k];
                s.vectors.push(features_at(&g, u, v, &dist, &sigma, sentinel, profiles.overlap(u, v, src)));
                s.labels.push(u8::from(timeline.label(u, v, i)));
                k += 1;
            }
        }
    }
    FeatureTable {
        learners: timeline.learners().to_vec(),
        intervals: l,
        series,
    }
}

const HEADER: [&str; 11] = ["u", "v", "interval", "ja", "ad", "re", "pr", "lp", "np", "to", "label"];

/// One CSV row per `(pair, interval)`.
pub fn export_features(table: &FeatureTable, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).at(path)?;
    write_features(table, std::io::BufWriter::new(file))
}

pub fn write_features<W: std::io::Write>(table: &FeatureTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER)?;
    for s in &table.series {
        for (k, (vec, y)) in s.vectors.iter().zip(&s.labels).enumerate() {
            let mut row = vec![table.learners[s.u].clone(), table.learners[s.v].clone(), (k + 1).to_string()];
            row.extend(vec.iter().map(|x| x.to_string()));
            row.push(y.to_string());
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn import_features(path: &Path) -> Result<FeatureTable> {
    let file = std::fs::File::open(path).at(path)?;
    read_features(std::io::BufReader::new(file))
}

/// Rows must be grouped by pair with intervals `1..=L` in order, as written by [`write_features`].
pub fn read_features<R: std::io::Read>(reader: R) -> Result<FeatureTable> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != HEADER {
        return Err(SlnError::FeatureOrder {
            expected: HEADER.iter().map(|s| s.to_string()).collect(),
            found: header,
        });
    }
    let mut raw: Vec<(String, String, Vec<FeatureVector>, Vec<u8>)> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |m: String| SlnError::BadRecord { line: line + 2, message: m };
        let num = |k: usize| rec[k].parse::<f64>().map_err(|e| bad(format!("column {}: {e}", HEADER[k])));
        let interval: usize = rec[2].parse().map_err(|e| bad(format!("interval: {e}")))?;
        let mut vec = [0.0; FEATURES];
        for (c, slot) in vec.iter_mut().enumerate() {
            *slot = num(3 + c)?;
        }
        let label = match &rec[10] {
            "0" => 0,
            "1" => 1,
            other => return Err(bad(format!("label must be 0 or 1, got {other}"))),
        };
        let same = raw.last().is_some_and(|(u, v, _, _)| *u == rec[0] && *v == rec[1]);
        if !same {
            raw.push((rec[0].to_string(), rec[1].to_string(), Vec::new(), Vec::new()));
        }
        let entry = raw.last_mut().expect("just pushed");
        if interval != entry.2.len() + 1 {
            return Err(bad(format!("expected interval {}, got {interval}", entry.2.len() + 1)));
        }
        entry.2.push(vec);
        entry.3.push(label);
    }
    let intervals = raw.first().map_or(0, |e| e.2.len());
    let mut learners: Vec<String> = raw.iter().flat_map(|(u, v, _, _)| [u.clone(), v.clone()]).collect();
    learners.sort();
    learners.dedup();
    let mut series = Vec::with_capacity(raw.len());
    for (u, v, vectors, labels) in raw {
        if vectors.len() != intervals {
            return Err(SlnError::Format(format!("pair ({u}, {v}) has {} intervals, expected {intervals}", vectors.len())));
        }
        let ui = learners.binary_search(&u).expect("collected above");
        let vi = learners.binary_search(&v).expect("collected above");
        series.push(PairFeatureSeries { u: ui, v: vi, vectors, labels });
    }
    Ok(FeatureTable {
        learners,
        intervals,
        series,
    })
}

/// Per-column z-scoring fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    /// Population statistics; zero-variance columns get unit scale.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, width: usize) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; width];
        let mut sq = vec![0.0; width];
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        for r in &rows {
            n += 1;
            for c in 0..width {
                sum[c] += r[c];
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| if n == 0 { 0.0 } else { s / n as f64 }).collect();
        for r in &rows {
            for c in 0..width {
                sq[c] += (r[c] - mean[c]).powi(2);
            }
        }
        let sd = sq
            .iter()
            .map(|s| {
                let sd = if n == 0 { 0.0 } else { (s / n as f64).sqrt() };
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, sd }
    }

    pub fn apply(&self, row: &[f64], out: &mut Vec<f64>) {
        out.extend(row.iter().zip(self.mean.iter().zip(&self.sd)).map(|(x, (m, s))| (x - m) / s));
    }
}

/// Picks `columns` out of a full feature vector.
pub fn select(vector: &FeatureVector, columns: &[usize]) -> Vec<f64> {
    columns.iter().map(|&c| vector[c]).collect()
}
