mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use sln::analytics::graph_report;
use sln::graph::*;
use sln::ingest::{filter_corpus, CourseWindow, ForumCorpus, Post, Role, Roster, Thread, ThreadStructure};

fn post(id: usize, thread: usize, author: usize, t: i64) -> Post {
    Post {
        post_id: format!("p{id}"),
        thread_id: format!("t{thread}"),
        author_id: format!("a{author:02}"),
        timestamp: t,
        body: String::new(),
        anonymous: false,
        author_role: Role::Learner,
    }
}

fn corpus_of(posts: Vec<Post>, window: CourseWindow) -> ForumCorpus {
    let mut threads: BTreeMap<String, Vec<Post>> = BTreeMap::new();
    for p in posts {
        threads.entry(p.thread_id.clone()).or_default().push(p);
    }
    let threads = threads
        .into_iter()
        .map(|(thread_id, posts)| Thread { thread_id, structure: ThreadStructure::Mooc, posts })
        .collect();
    filter_corpus(threads, "c", window, &Roster::default()).unwrap()
}

fn random_corpus(seed: u64, learners: usize, threads: usize, posts: usize) -> ForumCorpus {
    let mut rng = rng(seed);
    let posts = (0..posts)
        .map(|k| post(k, rng.random_range(0..threads), rng.random_range(0..learners), rng.random_range(0..=1000)))
        .collect();
    corpus_of(posts, CourseWindow::new(0, 1000).unwrap())
}

#[test]
fn binning_matches_floor_formula() {
    let w = CourseWindow::new(1_000, 11_000).unwrap();
    assert_eq!(interval_of(1_000, w, 20), Some(1));
    assert_eq!(interval_of(11_000, w, 20), Some(20));
    assert_eq!(interval_of(999, w, 20), None);
    let mut rng = rng(4);
    let mut counts = [0usize; 5];
    let mut oracle = [0usize; 5];
    for _ in 0..100 {
        let t = rng.random_range(1_000..=11_000);
        counts[interval_of(t, w, 4).unwrap()] += 1;
        let f = (4.0 * (t - 1_000) as f64 / 10_000.0).floor() as usize + 1;
        oracle[f.min(4)] += 1;
    }
    assert_eq!(counts, oracle);
}

#[test]
fn pair_links_when_both_have_posted() {
    let w = CourseWindow::new(0, 100).unwrap();
    // a0 posts in interval 3, a1 in interval 3; a2 alone in another thread
    let corpus = corpus_of(vec![post(0, 0, 0, 25), post(1, 0, 1, 28), post(2, 1, 2, 5)], w);
    let tl = build_timeline(&corpus, 10).unwrap();
    assert!((0..3).all(|i| !tl.label(0, 1, i)));
    assert!((3..=10).all(|i| tl.label(0, 1, i)));
    assert_eq!(tl.formed_at(0, 2), None);
    let sets = link_sets(&tl);
    assert_eq!((sets.formed.len(), sets.unformed.len(), sets.omega), (1, 2, 3));
}

#[test]
fn cumulative_link_forms_at_later_arrival() {
    let w = CourseWindow::new(0, 100).unwrap();
    let corpus = corpus_of(vec![post(0, 0, 0, 15), post(1, 0, 1, 45), post(2, 0, 0, 95)], w);
    assert_eq!(build_timeline(&corpus, 10).unwrap().formed_at(0, 1), Some(5));
}

#[test]
fn empty_adjacency_leaves_everything_unformed() {
    let w = CourseWindow::new(0, 100).unwrap();
    let corpus = corpus_of(vec![post(0, 0, 0, 1), post(1, 1, 1, 2), post(2, 2, 2, 3)], w);
    let sets = link_sets(&build_timeline(&corpus, 4).unwrap());
    assert!(sets.formed.is_empty());
    assert_eq!(sets.unformed, vec![(0, 1), (0, 2), (1, 2)]);
}

#[test]
fn timeline_matches_co_thread_scan() {
    for seed in 0..10 {
        let corpus = random_corpus(seed, 10, 5, 40);
        let l = 6;
        let tl = build_timeline(&corpus, l).unwrap();
        let bins = bin_posts(&corpus, l).unwrap();
        let idx = |a: &str| tl.learner_index(a).unwrap();
        for i in 0..=l {
            let mut want = BTreeSet::new();
            for t in corpus.threads() {
                let authors: BTreeSet<usize> = t.posts.iter().filter(|p| bins[&p.post_id] <= i).map(|p| idx(&p.author_id)).collect();
                for &u in &authors {
                    for &v in &authors {
                        if u < v {
                            want.insert((u, v));
                        }
                    }
                }
            }
            let got: BTreeSet<(usize, usize)> = tl.snapshot(i).edges().collect();
            assert_eq!(got, want, "seed {seed} interval {i}");
        }
    }
}

#[test]
fn timeline_ignores_thread_and_post_order() {
    let corpus = random_corpus(7, 12, 6, 60);
    let tl = build_timeline(&corpus, 8).unwrap();
    let mut rng = rng(8);
    let mut threads = corpus.threads().to_vec();
    threads.shuffle(&mut rng);
    for t in &mut threads {
        t.posts.reverse();
    }
    let shuffled = filter_corpus(threads, "c", corpus.window(), &Roster::default()).unwrap();
    assert_eq!(build_timeline(&shuffled, 8).unwrap(), tl);
}

fn oracle_metrics(a: &[Vec<bool>]) -> (BTreeMap<usize, usize>, Vec<f64>, BTreeMap<usize, usize>) {
    let n = a.len();
    let deg: Vec<usize> = (0..n).map(|u| a[u].iter().filter(|&&x| x).count()).collect();
    let mut dd = BTreeMap::new();
    for &d in &deg {
        *dd.entry(d).or_insert(0) += 1;
    }
    // triangles through u from the cube of the adjacency matrix
    let m: Vec<Vec<u64>> = a.iter().map(|r| r.iter().map(|&x| u64::from(x)).collect()).collect();
    let mul = |x: &Vec<Vec<u64>>, y: &Vec<Vec<u64>>| -> Vec<Vec<u64>> {
        (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| x[i][k] * y[k][j]).sum()).collect()).collect()
    };
    let cube = mul(&mul(&m, &m), &m);
    let clustering = (0..n)
        .map(|u| if deg[u] < 2 { 0.0 } else { (cube[u][u] / 2) as f64 / (deg[u] * (deg[u] - 1) / 2) as f64 })
        .collect();
    // Floyd–Warshall
    let inf = usize::MAX / 4;
    let mut d: Vec<Vec<usize>> = (0..n).map(|i| (0..n).map(|j| if i == j { 0 } else if a[i][j] { 1 } else { inf }).collect()).collect();
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                d[i][j] = d[i][j].min(d[i][k] + d[k][j]);
            }
        }
    }
    let mut lengths = BTreeMap::new();
    for i in 0..n {
        for j in i + 1..n {
            if d[i][j] < inf {
                *lengths.entry(d[i][j]).or_insert(0) += 1;
            }
        }
    }
    (dd, clustering, lengths)
}

#[test]
fn metrics_match_triangle_and_distance_oracle() {
    let mut rng = rng(25);
    for p in [0.08, 0.15, 0.3] {
        let a = random_adjacency(&mut rng, 25, p);
        let m = graph_metrics(&snapshot_of(&a));
        let (dd, clustering, lengths) = oracle_metrics(&a);
        assert_eq!(m.nodes, 25);
        assert_eq!(m.edges, a.iter().flatten().filter(|&&x| x).count() / 2);
        assert_eq!(m.degree_distribution, dd);
        assert_eq!(m.path_lengths, lengths);
        for (x, y) in m.clustering.iter().zip(&clustering) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn small_metric_examples() {
    let tri = graph_metrics(&Snapshot::from_edges(3, 1, [(0, 1), (1, 2), (0, 2)]));
    assert_eq!(tri.clustering, vec![1.0; 3]);
    assert_eq!(tri.path_lengths, BTreeMap::from([(1, 3)]));
    let path = graph_metrics(&Snapshot::from_edges(3, 1, [(0, 1), (1, 2)]));
    assert_eq!(path.clustering, vec![0.0; 3]);
    assert_eq!(path.path_lengths, BTreeMap::from([(1, 2), (2, 1)]));
}

#[test]
fn ego_ball_matches_brute_force() {
    let mut rng = rng(5);
    let n = 15;
    let a = random_adjacency(&mut rng, n, 0.15);
    let names: Vec<String> = (0..n).map(|u| format!("n{u:02}")).collect();
    let links: Vec<_> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).filter(|&(u, v)| a[u][v]).map(|p| (p, 1)).collect();
    let tl = Timeline::from_links(2, CourseWindow::new(0, 10).unwrap(), names.clone(), links).unwrap();
    for center in 0..n {
        for depth in 1..=2 {
            let ego = ego_subgraph(&tl, &names[center], 1, depth).unwrap();
            let hop1 = neighbor_set(&a, center);
            let mut ball: BTreeSet<usize> = hop1.iter().copied().chain([center]).collect();
            if depth == 2 {
                for &w in &hop1 {
                    ball.extend(neighbor_set(&a, w));
                }
            }
            let got: BTreeSet<usize> = ego.nodes.iter().map(|(s, _)| s[1..].parse().unwrap()).collect();
            assert_eq!(got, ball);
            let edges = ball.iter().flat_map(|&x| ball.iter().map(move |&y| (x, y))).filter(|&(x, y)| x < y && a[x][y]).count();
            assert_eq!(ego.edges.len(), edges);
        }
    }
    assert!(ego_subgraph(&tl, "nobody", 1, 1).is_err());
}

#[test]
fn ego_examples() {
    let names: Vec<String> = ["hub", "l1", "l2", "l3", "solo"].iter().map(|s| s.to_string()).collect();
    let tl = Timeline::from_links(3, CourseWindow::new(0, 10).unwrap(), names, [((0, 1), 1), ((0, 2), 1), ((0, 3), 2)]).unwrap();
    let star = ego_subgraph(&tl, "hub", 3, 1).unwrap();
    assert_eq!(star.nodes.len(), 4);
    assert_eq!(star.nodes[0], ("hub".to_string(), 0));
    assert_eq!(ego_subgraph(&tl, "solo", 3, 2).unwrap().nodes, vec![("solo".to_string(), 0)]);
}

#[test]
fn report_final_interval_equals_final_snapshot() {
    let corpus = random_corpus(9, 15, 6, 50);
    let tl = build_timeline(&corpus, 5).unwrap();
    let report = graph_report(&tl);
    assert_eq!(report.len(), 5);
    assert_eq!(report.last().unwrap().1, graph_metrics(&tl.snapshot(5)));
    let quiet = Timeline::from_links(4, CourseWindow::new(0, 10).unwrap(), vec!["a".into(), "b".into()], [((0, 1), 3)]).unwrap();
    let report = graph_report(&quiet);
    assert_eq!(report[0].1.edges, 0);
    assert_eq!(report[0].1.mean_clustering(), 0.0);
    assert!(report[0].1.path_lengths.is_empty());
}

proptest! {
    #[test]
    fn snapshots_are_monotone_and_symmetric(seed in any::<u64>(), n in 2usize..12, threads in 1usize..6, posts in 1usize..40) {
        let corpus = random_corpus(seed, n, threads, posts);
        let l = 5;
        let tl = build_timeline(&corpus, l).unwrap();
        let mut previous = 0;
        for i in 0..=l {
            let g = tl.snapshot(i);
            for u in 0..g.nodes() {
                prop_assert!(!g.has_edge(u, u));
                for &v in g.neighbors(u) {
                    prop_assert!(g.has_edge(v, u));
                    if i < l {
                        prop_assert!(tl.snapshot(i + 1).has_edge(u, v));
                    }
                }
            }
            prop_assert!(g.edge_count() >= previous);
            previous = g.edge_count();
        }
        let sets = link_sets(&tl);
        prop_assert_eq!(previous, sets.formed.len());
        prop_assert_eq!(sets.formed.len() + sets.unformed.len(), sets.omega);
    }
}
