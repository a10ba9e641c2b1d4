//! Interval binning, the monotone link timeline and topology statistics.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IoContext, Result, SlnError};
use crate::ingest::{CourseWindow, ForumCorpus};

pub const DEFAULT_INTERVALS: usize = 20;

/// `min(L, 1 + floor(L (t - start) / (end - start)))`, with global interval boundaries.
pub fn interval_of(t: i64, window: CourseWindow, intervals: usize) -> Option<usize> {
    if !window.contains(t) {
        return None;
    }
    let offset = (t - window.start) as i128 * intervals as i128;
    let span = (window.end - window.start) as i128;
    Some(((offset / span) as usize + 1).min(intervals))
}

/// Interval of every post, keyed by post id.
pub fn bin_posts(corpus: &ForumCorpus, intervals: usize) -> Result<BTreeMap<String, usize>> {
    if intervals < 2 {
        return Err(SlnError::InvalidArgument(format!("need at least 2 intervals, got {intervals}")));
    }
    let window = corpus.window();
    corpus
        .posts()
        .map(|p| {
            interval_of(p.timestamp, window, intervals)
                .map(|i| (p.post_id.clone(), i))
                .ok_or_else(|| SlnError::OutsideWindow {
                    post_id: p.post_id.clone(),
                    timestamp: p.timestamp,
                    start: window.start,
                    end: window.end,
                })
        })
        .collect()
}

/// All `L` snapshots, stored as the first interval at which each pair links.
///
/// Learners are indexed in sorted id order; pairs are `(u, v)` with `u < v`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Timeline {
    intervals: usize,
    window: CourseWindow,
    learners: Vec<String>,
    index: HashMap<String, usize>,
    formed_at: BTreeMap<(usize, usize), usize>,
}

/// Adjacency of `G(i)` as sorted neighbor lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub interval: usize,
    adjacency: Vec<Vec<usize>>,
}

impl Snapshot {
    pub fn empty(nodes: usize, interval: usize) -> Self {
        Self {
            interval,
            adjacency: vec![Vec::new(); nodes],
        }
    }

    /// Builds from an undirected edge list; duplicate and self edges are ignored.
    pub fn from_edges(nodes: usize, interval: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut adjacency = vec![Vec::new(); nodes];
        for (u, v) in edges {
            if u != v {
                adjacency[u].push(v);
                adjacency[v].push(u);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Self { interval, adjacency }
    }

    pub fn nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.adjacency[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adjacency[u].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency[u].binary_search(&v).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, ns)| ns.iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkSets {
    pub omega: usize,
    pub formed: Vec<(usize, usize)>,
    pub unformed: Vec<(usize, usize)>,
}

impl Timeline {
    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn window(&self) -> CourseWindow {
        self.window
    }

    pub fn learners(&self) -> &[String] {
        &self.learners
    }

    pub fn learner_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// First interval with `y_uv = 1`, if the pair ever links.
    pub fn formed_at(&self, u: usize, v: usize) -> Option<usize> {
        let key = if u < v { (u, v) } else { (v, u) };
        self.formed_at.get(&key).copied()
    }

    /// `y_uv(i)`; interval 0 is the empty graph before the course.
    pub fn label(&self, u: usize, v: usize, i: usize) -> bool {
        self.formed_at(u, v).is_some_and(|n| n <= i)
    }

    /// `G(i)` for `i` in `0..=L`; `G(0)` is empty.
    pub fn snapshot(&self, i: usize) -> Snapshot {
        let edges = self.formed_at.iter().filter(|(_, &n)| n <= i).map(|(&pair, _)| pair);
        Snapshot::from_edges(self.learners.len(), i, edges)
    }

    pub fn links(&self) -> impl Iterator<Item = ((usize, usize), usize)> + '_ {
        self.formed_at.iter().map(|(&p, &n)| (p, n))
    }

    fn from_parts(intervals: usize, window: CourseWindow, learners: Vec<String>, formed_at: BTreeMap<(usize, usize), usize>) -> Self {
        let index = learners.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        Self {
            intervals,
            window,
            learners,
            index,
            formed_at,
        }
    }
}

/// Links each pair of learners at the first interval by which both have posted in a common thread.
pub fn build_timeline(corpus: &ForumCorpus, intervals: usize) -> Result<Timeline> {
    let bins = bin_posts(corpus, intervals)?;
    let learners: Vec<String> = corpus.learners().iter().cloned().collect();
    let index: HashMap<&str, usize> = learners.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut formed_at: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for thread in corpus.threads() {
        // first interval of each author within the thread
        let mut first: BTreeMap<usize, usize> = BTreeMap::new();
        for p in &thread.posts {
            let i = bins[&p.post_id];
            let u = index[p.author_id.as_str()];
            first.entry(u).and_modify(|f| *f = (*f).min(i)).or_insert(i);
        }
        let authors: Vec<(usize, usize)> = first.into_iter().collect();
        for (a, &(u, fu)) in authors.iter().enumerate() {
            for &(v, fv) in &authors[a + 1..] {
                let n = fu.max(fv);
                formed_at.entry((u, v)).and_modify(|m| *m = (*m).min(n)).or_insert(n);
            }
        }
    }
    Ok(Timeline::from_parts(intervals, corpus.window(), learners, formed_at))
}

pub fn link_sets(timeline: &Timeline) -> LinkSets {
    let n = timeline.learners.len();
    let mut formed = Vec::new();
    let mut unformed = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if timeline.formed_at.contains_key(&(u, v)) {
                formed.push((u, v));
            } else {
                unformed.push((u, v));
            }
        }
    }
    if formed.len() > unformed.len() {
        log::warn!("formed links ({}) outnumber unformed pairs ({})", formed.len(), unformed.len());
    }
    LinkSets {
        omega: n * n.saturating_sub(1) / 2,
        formed,
        unformed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMetrics {
    pub nodes: usize,
    pub edges: usize,
    /// degree -> node count
    pub degree_distribution: BTreeMap<usize, usize>,
    /// Local clustering per node; 0 for degree < 2.
    pub clustering: Vec<f64>,
    /// length -> number of connected unordered pairs at that distance
    pub path_lengths: BTreeMap<usize, usize>,
}

impl GraphMetrics {
    pub fn mean_clustering(&self) -> f64 {
        if self.clustering.is_empty() {
            0.0
        } else {
            self.clustering.iter().sum::<f64>() / self.clustering.len() as f64
        }
    }

    pub fn mean_path_length(&self) -> f64 {
        let pairs: usize = self.path_lengths.values().sum();
        if pairs == 0 {
            return 0.0;
        }
        self.path_lengths.iter().map(|(l, c)| (l * c) as f64).sum::<f64>() / pairs as f64
    }

    pub fn diameter(&self) -> usize {
        self.path_lengths.keys().next_back().copied().unwrap_or(0)
    }

    pub fn mean_degree(&self) -> f64 {
        if self.nodes == 0 {
            0.0
        } else {
            2.0 * self.edges as f64 / self.nodes as f64
        }
    }

    pub fn active_nodes(&self) -> usize {
        self.nodes - self.degree_distribution.get(&0).copied().unwrap_or(0)
    }
}

/// BFS distances from `source`; `usize::MAX` marks unreachable nodes.
pub fn bfs_distances(g: &Snapshot, source: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; g.nodes()];
    dist[source] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        for &w in g.neighbors(u) {
            if dist[w] == usize::MAX {
                dist[w] = dist[u] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

pub fn graph_metrics(g: &Snapshot) -> GraphMetrics {
    let n = g.nodes();
    let mut degree_distribution = BTreeMap::new();
    let mut clustering = Vec::with_capacity(n);
    for u in 0..n {
        let ns = g.neighbors(u);
        *degree_distribution.entry(ns.len()).or_insert(0) += 1;
        if ns.len() < 2 {
            clustering.push(0.0);
            continue;
        }
        let mut links = 0usize;
        for (a, &x) in ns.iter().enumerate() {
            for &y in &ns[a + 1..] {
                if g.has_edge(x, y) {
                    links += 1;
                }
            }
        }
        let wedges = ns.len() * (ns.len() - 1) / 2;
        clustering.push(links as f64 / wedges as f64);
    }
    let mut path_lengths = BTreeMap::new();
    for u in 0..n {
        for (v, &d) in bfs_distances(g, u).iter().enumerate() {
            if v > u && d != usize::MAX {
                *path_lengths.entry(d).or_insert(0) += 1;
            }
        }
    }
    GraphMetrics {
        nodes: n,
        edges: g.edge_count(),
        degree_distribution,
        clustering,
        path_lengths,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EgoGraph {
    pub center: String,
    pub interval: usize,
    /// `(learner, hop distance from the center)`, sorted by distance then id.
    pub nodes: Vec<(String, usize)>,
    pub edges: Vec<(String, String)>,
}

/// The induced subgraph on the BFS ball of radius `depth` around `u` in `G(interval)`.
pub fn ego_subgraph(timeline: &Timeline, u: &str, interval: usize, depth: usize) -> Result<EgoGraph> {
    let center = timeline.learner_index(u).ok_or_else(|| SlnError::UnknownLearner(u.to_string()))?;
    if !(1..=2).contains(&depth) {
        return Err(SlnError::InvalidArgument(format!("ego depth must be 1 or 2, got {depth}")));
    }
    if interval > timeline.intervals {
        return Err(SlnError::InvalidArgument(format!("interval {interval} exceeds {}", timeline.intervals)));
    }
    let g = timeline.snapshot(interval);
    let dist = bfs_distances(&g, center);
    let mut members: Vec<usize> = (0..g.nodes()).filter(|&v| dist[v] <= depth).collect();
    members.sort_by(|&a, &b| dist[a].cmp(&dist[b]).then_with(|| timeline.learners[a].cmp(&timeline.learners[b])));
    let name = |v: usize| timeline.learners[v].clone();
    let edges = g
        .edges()
        .filter(|&(a, b)| dist[a] <= depth && dist[b] <= depth)
        .map(|(a, b)| (name(a), name(b)))
        .collect();
    Ok(EgoGraph {
        center: u.to_string(),
        interval,
        nodes: members.iter().map(|&v| (name(v), dist[v])).collect(),
        edges,
    })
}

pub const TIMELINE_FORMAT: &str = "sln-timeline";

#[derive(Serialize, Deserialize)]
struct TimelineFile {
    format: String,
    version: u32,
    intervals: usize,
    start: i64,
    end: i64,
    learners: Vec<String>,
    /// `deltas[i - 1]`: links first formed at interval `i`.
    deltas: Vec<Vec<(usize, usize)>>,
}

impl Timeline {
    pub fn to_json(&self) -> Result<String> {
        let mut deltas = vec![Vec::new(); self.intervals];
        for (&pair, &n) in &self.formed_at {
            deltas[n - 1].push(pair);
        }
        let file = TimelineFile {
            format: TIMELINE_FORMAT.into(),
            version: 1,
            intervals: self.intervals,
            start: self.window.start,
            end: self.window.end,
            learners: self.learners.clone(),
            deltas,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TimelineFile = serde_json::from_str(text)?;
        if file.format != TIMELINE_FORMAT || file.version != 1 {
            return Err(SlnError::Format(format!("expected {TIMELINE_FORMAT} v1, found {} v{}", file.format, file.version)));
        }
        if file.deltas.len() != file.intervals || file.intervals < 2 {
            return Err(SlnError::Format("timeline interval count does not match its deltas".into()));
        }
        let n = file.learners.len();
        let mut formed_at = BTreeMap::new();
        for (k, delta) in file.deltas.iter().enumerate() {
            for &(u, v) in delta {
                if u >= v || v >= n || formed_at.insert((u, v), k + 1).is_some() {
                    return Err(SlnError::Format(format!("bad or repeated link ({u}, {v}) in interval {}", k + 1)));
                }
            }
        }
        let window = CourseWindow::new(file.start, file.end)?;
        Ok(Self::from_parts(file.intervals, window, file.learners, formed_at))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).at(path)?)
    }

    /// Test and synthetic-data constructor from explicit formation intervals.
    pub fn from_links(
        intervals: usize,
        window: CourseWindow,
        learners: Vec<String>,
        links: impl IntoIterator<Item = ((usize, usize), usize)>,
    ) -> Result<Self> {
        let n = learners.len();
        let mut formed_at = BTreeMap::new();
        for ((u, v), i) in links {
            let key = if u < v { (u, v) } else { (v, u) };
            if u == v || key.1 >= n || i == 0 || i > intervals {
                return Err(SlnError::InvalidArgument(format!("bad link ({u}, {v}) at interval {i}")));
            }
            formed_at.entry(key).and_modify(|m: &mut usize| *m = (*m).min(i)).or_insert(i);
        }
        Ok(Self::from_parts(intervals, window, learners, formed_at))
    }
}
